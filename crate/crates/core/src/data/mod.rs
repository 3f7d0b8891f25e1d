pub mod manifest;
pub mod metadata;
pub mod synth;
pub mod volume;

pub use manifest::{CohortManifest, GeneratorInfo, SampleEntry};
pub use metadata::{
    one_hot_expand, Feature, FeatureKind, FeatureSchema, KnnImputer, MetaMap, MetaValue,
    MetadataRecord, Preprocessor, Standardizer, DEFAULT_KNN_K,
};
pub use synth::{generate_cohort, SynthConfig};
pub use volume::{clip_normalize, read_vol, resample_volume, write_vol, Volume};

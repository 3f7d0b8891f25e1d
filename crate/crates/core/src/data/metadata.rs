use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<Feature>,
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Config("schema has no features".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Config(format!("duplicate feature name '{}'", f.name)));
            }
            match f.kind {
                FeatureKind::Numeric if !f.levels.is_empty() => {
                    return Err(Error::Config(format!(
                        "numeric feature '{}' must not declare levels",
                        f.name
                    )));
                }
                FeatureKind::Categorical if f.levels.len() < 2 => {
                    return Err(Error::Config(format!(
                        "categorical feature '{}' needs at least 2 levels",
                        f.name
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Width of the expanded vector: 1 slot per numeric, one per categorical level.
    pub fn expanded_dim(&self) -> usize {
        self.features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Numeric => 1,
                FeatureKind::Categorical => f.levels.len(),
            })
            .sum()
    }

    /// Expanded column names in schema order, e.g. `age`, `site=a`, `site=b`.
    pub fn expanded_columns(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.expanded_dim());
        for f in &self.features {
            match f.kind {
                FeatureKind::Numeric => out.push(f.name.clone()),
                FeatureKind::Categorical => {
                    for l in &f.levels {
                        out.push(format!("{}={}", f.name, l));
                    }
                }
            }
        }
        out
    }

    /// True for expanded columns that came from numeric features; these are
    /// the columns the standardizer touches (one-hot slots stay 0/1).
    pub fn numeric_column_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.expanded_dim());
        for f in &self.features {
            match f.kind {
                FeatureKind::Numeric => out.push(true),
                FeatureKind::Categorical => out.extend(std::iter::repeat(false).take(f.levels.len())),
            }
        }
        out
    }
}

/// Raw per-sample metadata value as it appears in a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Number(f64),
    Level(String),
}

/// A metadata map as stored per sample: feature name -> value, `null` marking
/// an unobserved field. A sample with no map at all is fully missing.
pub type MetaMap = BTreeMap<String, Option<MetaValue>>;

/// Expanded metadata vector plus per-slot observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MetadataRecord {
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    pub fully_missing: bool,
}

impl MetadataRecord {
    pub fn fully_missing(d: usize) -> Self {
        MetadataRecord { values: vec![0.0; d], observed: vec![false; d], fully_missing: true }
    }
}

/// Expand a raw metadata map against the schema. `None` (no map) produces the
/// fully-missing record; a `null` or absent field leaves its slot(s)
/// unobserved; an unknown feature name or categorical level is rejected.
pub fn one_hot_expand(schema: &FeatureSchema, map: Option<&MetaMap>) -> Result<MetadataRecord> {
    let d = schema.expanded_dim();
    let map = match map {
        None => return Ok(MetadataRecord::fully_missing(d)),
        Some(m) => m,
    };
    for key in map.keys() {
        if !schema.features.iter().any(|f| &f.name == key) {
            return Err(Error::Validation(format!("metadata field '{key}' is not in the schema")));
        }
    }
    let mut values = Vec::with_capacity(d);
    let mut observed = Vec::with_capacity(d);
    for f in &schema.features {
        let raw = map.get(&f.name).and_then(|v| v.as_ref());
        match (&f.kind, raw) {
            (FeatureKind::Numeric, None) => {
                values.push(0.0);
                observed.push(false);
            }
            (FeatureKind::Numeric, Some(MetaValue::Number(x))) => {
                if !x.is_finite() {
                    return Err(Error::Validation(format!(
                        "numeric field '{}' is not finite: {x}",
                        f.name
                    )));
                }
                values.push(*x);
                observed.push(true);
            }
            (FeatureKind::Numeric, Some(MetaValue::Level(s))) => {
                return Err(Error::Validation(format!(
                    "numeric field '{}' got string value '{s}'",
                    f.name
                )));
            }
            (FeatureKind::Categorical, None) => {
                values.extend(std::iter::repeat(0.0).take(f.levels.len()));
                observed.extend(std::iter::repeat(false).take(f.levels.len()));
            }
            (FeatureKind::Categorical, Some(MetaValue::Level(s))) => {
                let idx = f.levels.iter().position(|l| l == s).ok_or_else(|| {
                    Error::Validation(format!("unknown level '{s}' for feature '{}'", f.name))
                })?;
                for i in 0..f.levels.len() {
                    values.push(if i == idx { 1.0 } else { 0.0 });
                    observed.push(true);
                }
            }
            (FeatureKind::Categorical, Some(MetaValue::Number(x))) => {
                return Err(Error::Validation(format!(
                    "categorical field '{}' got number {x}",
                    f.name
                )));
            }
        }
    }
    Ok(MetadataRecord { values, observed, fully_missing: false })
}

/// k-nearest-neighbor imputer over expanded metadata vectors.
///
/// Distances use only coordinates observed in both records, normalized by the
/// overlap count: sqrt(sum (a_i-b_i)^2 / m). Each missing field is filled by
/// the mean of the k nearest donors that observe that field (ties broken by
/// donor index). Fully-missing records are never donors and pass through
/// transform untouched.
pub struct KnnImputer {
    k: usize,
    donor_values: Vec<Vec<f64>>,
    donor_observed: Vec<Vec<bool>>,
    column_means: Vec<f64>,
    dim: usize,
}

impl KnnImputer {
    pub fn fit(records: &[&MetadataRecord], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("imputer k must be positive".into()));
        }
        let dim = match records.first() {
            Some(r) => r.values.len(),
            None => return Err(Error::Validation("imputer fit on empty record set".into())),
        };
        let mut donor_values = Vec::new();
        let mut donor_observed = Vec::new();
        for r in records {
            if r.values.len() != dim {
                return Err(Error::Shape(format!(
                    "metadata width mismatch: {} vs {}",
                    r.values.len(),
                    dim
                )));
            }
            if r.fully_missing {
                continue;
            }
            donor_values.push(r.values.clone());
            donor_observed.push(r.observed.clone());
        }
        let mut column_means = vec![0.0f64; dim];
        for c in 0..dim {
            let mut sum = 0.0;
            let mut n = 0usize;
            for (vals, obs) in donor_values.iter().zip(&donor_observed) {
                if obs[c] {
                    sum += vals[c];
                    n += 1;
                }
            }
            if n > 0 {
                column_means[c] = sum / n as f64;
            } else {
                log::warn!("imputer: column {c} has no observed values in the fit set; fallback fill is 0");
            }
        }
        Ok(KnnImputer { k, donor_values, donor_observed, column_means, dim })
    }

    pub fn transform(&self, rec: &MetadataRecord) -> Result<MetadataRecord> {
        if rec.values.len() != self.dim {
            return Err(Error::Shape(format!(
                "metadata width mismatch: {} vs {}",
                rec.values.len(),
                self.dim
            )));
        }
        if rec.fully_missing || rec.observed.iter().all(|&o| o) {
            return Ok(rec.clone());
        }
        // Rank donors once per record: (distance, donor index), skipping
        // donors with no mutually observed coordinate.
        let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(self.donor_values.len());
        for (di, (vals, obs)) in self.donor_values.iter().zip(&self.donor_observed).enumerate() {
            let mut ss = 0.0f64;
            let mut m = 0usize;
            for c in 0..self.dim {
                if rec.observed[c] && obs[c] {
                    let d = rec.values[c] - vals[c];
                    ss += d * d;
                    m += 1;
                }
            }
            if m > 0 {
                ranked.push(((ss / m as f64).sqrt(), di));
            }
        }
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        let mut out = rec.clone();
        for c in 0..self.dim {
            if rec.observed[c] {
                continue;
            }
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for &(_, di) in &ranked {
                if self.donor_observed[di][c] {
                    sum += self.donor_values[di][c];
                    n += 1;
                    if n == self.k {
                        break;
                    }
                }
            }
            if n > 0 {
                out.values[c] = sum / n as f64;
            } else {
                log::warn!("imputer: no donor observes column {c}; filling with fit-set column mean");
                out.values[c] = self.column_means[c];
            }
            out.observed[c] = true;
        }
        Ok(out)
    }
}

/// Column-wise z-scoring for numeric-source columns, fit on training records.
/// Near-constant columns (sd < 1e-12) are centered but not scaled.
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
    numeric_mask: Vec<bool>,
}

impl Standardizer {
    pub fn fit(records: &[&MetadataRecord], numeric_mask: &[bool]) -> Result<Self> {
        let dim = numeric_mask.len();
        let pool: Vec<&&MetadataRecord> = records.iter().filter(|r| !r.fully_missing).collect();
        if pool.is_empty() {
            return Err(Error::Validation("standardizer fit: every record is fully missing".into()));
        }
        let mut mean = vec![0.0f64; dim];
        let mut scale = vec![1.0f64; dim];
        for c in 0..dim {
            if !numeric_mask[c] {
                continue;
            }
            let xs: Vec<f64> = pool.iter().map(|r| r.values[c]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
            mean[c] = m;
            let sd = var.sqrt();
            scale[c] = if sd < 1e-12 { 1.0 } else { sd };
        }
        Ok(Standardizer { mean, scale, numeric_mask: numeric_mask.to_vec() })
    }

    pub fn transform(&self, rec: &MetadataRecord) -> MetadataRecord {
        if rec.fully_missing {
            return rec.clone();
        }
        let mut out = rec.clone();
        for c in 0..self.numeric_mask.len() {
            if self.numeric_mask[c] {
                out.values[c] = (out.values[c] - self.mean[c]) / self.scale[c];
            }
        }
        out
    }
}

/// Train-fold metadata pipeline: impute missing fields, then z-score numeric
/// columns with statistics estimated after imputation. Fit only on training
/// records; apply to anything.
pub struct Preprocessor {
    imputer: KnnImputer,
    standardizer: Standardizer,
}

pub const DEFAULT_KNN_K: usize = 5;

impl Preprocessor {
    pub fn fit(schema: &FeatureSchema, train: &[&MetadataRecord], k: usize) -> Result<Self> {
        let imputer = KnnImputer::fit(train, k)?;
        let imputed: Vec<MetadataRecord> =
            train.iter().map(|r| imputer.transform(r)).collect::<Result<_>>()?;
        let refs: Vec<&MetadataRecord> = imputed.iter().collect();
        let standardizer = Standardizer::fit(&refs, &schema.numeric_column_mask())?;
        Ok(Preprocessor { imputer, standardizer })
    }

    pub fn transform(&self, rec: &MetadataRecord) -> Result<MetadataRecord> {
        Ok(self.standardizer.transform(&self.imputer.transform(rec)?))
    }
}

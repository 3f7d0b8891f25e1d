use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adamax, Tape};
use crate::data::metadata::MetadataRecord;
use crate::error::{Error, Result};
use crate::eval::metrics::auc;
use crate::io_util::write_atomic;
use crate::model::{Model, Variant};
use crate::seed::stream_rng;

fn default_lr() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    8
}
fn default_max_epochs() -> usize {
    50
}
fn default_patience() -> usize {
    10
}
fn default_pretrain_steps() -> usize {
    100
}
fn default_pretrain_lr() -> f64 {
    2e-2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Number of consecutive non-improving validation epochs tolerated before
    /// stopping; 0 stops at the first non-improvement.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Hold the volume branch (encoder + flatten projection) fixed.
    #[serde(default)]
    pub freeze_encoder: bool,
    #[serde(default = "default_pretrain_steps")]
    pub pretrain_steps: usize,
    #[serde(default = "default_pretrain_lr")]
    pub pretrain_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(self.pretrain_lr.is_finite() && self.pretrain_lr > 0.0) {
            return Err(Error::Config(format!("pretrain_lr {} must be positive", self.pretrain_lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// One prepared sample: patch rows for the encoder (shared, possibly absent
/// for metadata-only work) plus the preprocessed metadata record.
#[derive(Clone)]
pub struct TrainSample {
    pub patient_id: String,
    pub patches: Option<Arc<Vec<f32>>>,
    pub meta: MetadataRecord,
    pub label: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept (highest validation AUC, earliest on ties).
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub stopped_early: bool,
    /// Whether any batch propagated gradient into the missing-metadata token.
    pub em_grad_seen: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_auc\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_auc));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }
}

fn check_samples(variant: Variant, samples: &[TrainSample], role: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Validation(format!("{role} set is empty")));
    }
    if variant.uses_volume() {
        if let Some(s) = samples.iter().find(|s| s.patches.is_none()) {
            return Err(Error::Contract(format!(
                "{role} sample {} has no volume patches but variant {} needs them",
                s.patient_id,
                variant.name()
            )));
        }
    }
    Ok(())
}

struct Snapshot {
    data: Vec<Vec<f32>>,
}

impl Snapshot {
    fn take(model: &Model<f32>) -> Self {
        Snapshot { data: model.store.iter().map(|(_, e)| e.data.clone()).collect() }
    }

    fn restore(&self, model: &mut Model<f32>) {
        for (i, d) in self.data.iter().enumerate() {
            model.store.data_mut(crate::model::ParamId(i)).copy_from_slice(d);
        }
    }
}

/// Score samples with frozen weights; returns (mean bce loss, probabilities).
pub fn evaluate(
    model: &Model<f32>,
    variant: Variant,
    samples: &[TrainSample],
) -> Result<(f64, Vec<f64>)> {
    check_samples(variant, samples, "evaluation")?;
    let frozen = vec![false; model.store.len()];
    let mut probs = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0f64;
    for s in samples {
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, &frozen)?;
        let p = model.forward_prob(
            &mut tape,
            &bound,
            s.patches.as_ref().map(|a| a.as_slice()),
            &s.meta,
            variant,
        )?;
        let prob = (tape.scalar_value(p) as f64).clamp(1e-7, 1.0 - 1e-7);
        probs.push(prob);
        loss_sum -= if s.label == 1 { prob.ln() } else { (1.0 - prob).ln() };
    }
    Ok((loss_sum / samples.len() as f64, probs))
}

/// Mini-batch training with early stopping on validation loss; the returned
/// model carries the weights of the best validation-AUC epoch.
pub fn train(
    model: &mut Model<f32>,
    cfg: &TrainConfig,
    variant: Variant,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    seed: u64,
) -> Result<TrainLog> {
    cfg.validate()?;
    check_samples(variant, train_set, "training")?;
    check_samples(variant, val_set, "validation")?;
    let val_labels: Vec<u8> = val_set.iter().map(|s| s.label).collect();
    if val_labels.iter().all(|&l| l == 1) || val_labels.iter().all(|&l| l == 0) {
        return Err(Error::Validation(
            "validation set has a single class; AUC-based model selection is undefined".into(),
        ));
    }

    let mask = model.trainable_mask(cfg.freeze_encoder);
    let mut opt = Adamax::new(model.store.len(), cfg.lr);
    let zeros = vec![0.0f32; model.store.max_param_len()];
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_auc: f64::NEG_INFINITY,
        stopped_early: false,
        em_grad_seen: false,
    };
    let mut best_snapshot: Option<Snapshot> = None;
    let mut best_val_loss = f64::INFINITY;
    let mut epochs_since_improve = 0usize;
    let em_id = model.meta.e_m;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream_rng(seed, &format!("shuffle/e{epoch}")));

        let mut loss_sum = 0.0f64;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape, &mask)?;
            let mut probs = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &train_set[i];
                let p = model.forward_prob(
                    &mut tape,
                    &bound,
                    s.patches.as_ref().map(|a| a.as_slice()),
                    &s.meta,
                    variant,
                )?;
                probs.push(p);
                labels.push(s.label as f64);
            }
            let probs_cat = tape.concat_rows(&probs)?;
            let loss = tape.bce_loss(probs_cat, &labels)?;
            let loss_val = tape.scalar_value(loss) as f64;
            if !loss_val.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss {loss_val} at epoch {epoch}, batch {batch_no}"
                )));
            }
            loss_sum += loss_val * batch.len() as f64;
            tape.backward(loss).map_err(|e| {
                Error::Numeric(format!("backward failed at epoch {epoch}, batch {batch_no}: {e}"))
            })?;
            if !log.em_grad_seen {
                if let Some(g) = tape.grad(bound.id(em_id)) {
                    log.em_grad_seen = g.iter().any(|&x| x != 0.0);
                }
            }
            let mut updates = model.store.optimizer_updates(&tape, &bound, &zeros);
            opt.step(&mut updates)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let (val_loss, val_probs) = evaluate(model, variant, val_set)?;
        let val_auc = auc(&val_probs, &val_labels)?;
        log.epochs.push(EpochStats { epoch, train_loss, val_loss, val_auc });

        if val_auc > log.best_val_auc {
            log.best_val_auc = val_auc;
            log.best_epoch = epoch;
            best_snapshot = Some(Snapshot::take(model));
        }
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            epochs_since_improve = 0;
        } else {
            epochs_since_improve += 1;
            if epochs_since_improve > cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    if let Some(snap) = &best_snapshot {
        snap.restore(model);
    }
    Ok(log)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainLog {
    pub losses: Vec<f64>,
}

impl PretrainLog {
    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        write_atomic(path, s.as_bytes())
    }
}

/// Self-supervised encoder pretraining: one masked-reconstruction step per
/// volume, volumes visited in seeded shuffled cycles, a fresh mask each step.
pub fn pretrain_encoder(
    model: &mut Model<f32>,
    volumes: &[Arc<Vec<f32>>],
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<PretrainLog> {
    if volumes.is_empty() {
        return Err(Error::Validation("no volumes to pretrain on".into()));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Config(format!("pretrain lr {lr} must be positive")));
    }
    let enc_cfg = model.config.encoder.clone();
    let n = enc_cfg.n_patches();
    let plen = enc_cfg.patch_len();
    // Only the encoder trains here; everything downstream is left untouched.
    let mask: Vec<bool> =
        model.store.iter().map(|(_, e)| e.name.starts_with("enc.")).collect();
    let mut opt = Adamax::new(model.store.len(), lr);
    let zeros = vec![0.0f32; model.store.max_param_len()];
    let mut losses = Vec::with_capacity(steps);

    let mut order: Vec<usize> = Vec::new();
    let mut pass = 0usize;
    for step in 0..steps {
        if order.is_empty() {
            order = (0..volumes.len()).collect();
            order.shuffle(&mut stream_rng(seed, &format!("mae_order/p{pass}")));
            pass += 1;
        }
        let vi = order.pop().unwrap();
        let rows = &volumes[vi];
        if rows.len() != n * plen {
            return Err(Error::Shape(format!(
                "volume {vi}: {} patch values, encoder expects {}",
                rows.len(),
                n * plen
            )));
        }
        let mut mask_rng = stream_rng(seed, &format!("mae_mask/s{step}"));
        let (vis, masked) = crate::model::encoder::choose_mask(n, enc_cfg.mask_ratio, &mut mask_rng)?;

        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, &mask)?;
        let patches = tape.constant(rows.as_slice().to_vec(), &[n, plen])?;
        let loss = crate::model::encoder::mae_loss(&mut tape, &bound, &model.enc, patches, &vis, &masked)?;
        let loss_val = tape.scalar_value(loss) as f64;
        if !loss_val.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite reconstruction loss {loss_val} at pretraining step {step}"
            )));
        }
        losses.push(loss_val);
        tape.backward(loss)
            .map_err(|e| Error::Numeric(format!("backward failed at pretraining step {step}: {e}")))?;
        let mut updates = model.store.optimizer_updates(&tape, &bound, &zeros);
        opt.step(&mut updates)?;
    }
    Ok(PretrainLog { losses })
}

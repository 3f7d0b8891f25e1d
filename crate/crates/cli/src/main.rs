mod config;

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use attnmix_core::data::synth::generate_cohort;
use attnmix_core::error::{Error, Result};
use attnmix_core::eval::cv::{ablation_grid, cross_validate, Cohort, CvRun, FoldArtifacts};
use attnmix_core::eval::importance::permutation_importance;
use attnmix_core::eval::report::{
    write_ablation_csv, write_importance_csv, write_metrics_json, write_run_artifacts,
};
use attnmix_core::model::{Model, Variant};
use attnmix_core::train::{pretrain_encoder, train, TrainSample};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "attnmix",
    version,
    about = "Multimodal volume+metadata classifier: synthetic cohorts, masked-autoencoder pretraining, cross-validated training, and evaluation reports"
)]
struct Cli {
    /// JSON run configuration; every field has a default, so the flag is optional.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the config's seed (and, for eval-style commands, run that single seed).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Model variant: full | no_ca | no_mixer | early_fusion | meta_only | hct_only.
    #[arg(long, global = true, value_name = "NAME")]
    variant: Option<String>,

    /// Worker threads for fold-level parallelism.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic cohort (volumes + manifest) with planted signal.
    Synth,
    /// Self-supervised masked-reconstruction pretraining of the volume encoder.
    Pretrain,
    /// Train one model on a single patient-exclusive split.
    Train,
    /// Cross-validated evaluation: metrics, ROC curves, per-patient scores.
    Eval,
    /// Permutation feature importance over the cross-validation folds.
    Importance,
    /// Cross-validate every fusion variant and tabulate the results.
    Ablate,
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.eval.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(v) = &cli.variant {
        cfg.variant = Some(v.clone());
    }
    if let Some(j) = cli.jobs {
        cfg.eval.jobs = j.max(1);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn variant_of(cfg: &RunConfig) -> Result<Variant> {
    match &cfg.variant {
        Some(name) => name.parse(),
        None => Ok(Variant::Full),
    }
}

/// Load the cohort and resolve the model geometry against its schema,
/// reading volumes only when the variant needs them.
fn prepared_cohort(
    cfg: &RunConfig,
    needs_volumes: bool,
) -> Result<(Cohort, attnmix_core::model::ModelConfig)> {
    let mut cohort = Cohort::load(&cfg.manifest_path())?;
    let model_cfg = cfg.model_config(cohort.manifest.schema.expanded_dim())?;
    if needs_volumes {
        log::info!("loading {} volumes", cohort.manifest.samples.len());
        cohort.ensure_patches(&model_cfg.encoder)?;
    }
    Ok((cohort, model_cfg))
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let manifest = generate_cohort(&cfg.synth, cfg.seed, &cfg.cohort_dir)?;
    let gen = manifest.generator.as_ref().expect("generator always stamps its manifest");
    println!(
        "cohort: {} patients, {} scans, {} fully-missing metadata records -> {}",
        gen.n_patients,
        manifest.samples.len(),
        gen.n_fully_missing,
        cfg.cohort_dir.display()
    );
    Ok(())
}

fn cmd_pretrain(cfg: &RunConfig) -> Result<()> {
    let (cohort, model_cfg) = prepared_cohort(cfg, true)?;
    let vols: Vec<Arc<Vec<f32>>> = (0..cohort.manifest.samples.len())
        .map(|i| cohort.patches(i).expect("volumes loaded above"))
        .collect();
    let mut model: Model<f32> = Model::new(model_cfg, cfg.seed)?;
    let log = pretrain_encoder(
        &mut model,
        &vols,
        cfg.train.pretrain_steps,
        cfg.train.pretrain_lr,
        cfg.seed,
    )?;
    let ckpt = cfg.out_dir.join("encoder.ckpt");
    model.save_encoder(&ckpt)?;
    log.write_csv(&cfg.out_dir.join("pretrain_loss.csv"))?;
    println!(
        "pretrained {} steps: reconstruction loss {:.4} -> {:.4}; encoder saved to {}",
        log.losses.len(),
        log.initial_loss(),
        log.final_loss(),
        ckpt.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let variant = variant_of(cfg)?;
    if cfg.train.freeze_encoder && variant.uses_volume() && cfg.encoder_ckpt.is_none() {
        return Err(Error::Config(
            "freeze_encoder is set but no encoder_ckpt is configured; train would freeze random weights".into(),
        ));
    }
    let (cohort, model_cfg) = prepared_cohort(cfg, variant.uses_volume())?;

    // Single split: fold 0 of the configured k-fold layout validates, the
    // rest trains.
    let patients = cohort.manifest.patient_ids();
    let folds = attnmix_core::eval::folds::make_folds(&patients, cfg.eval.k, cfg.seed)?;
    let val_set: std::collections::BTreeSet<&str> =
        folds[0].iter().map(|p| p.as_str()).collect();
    let split = attnmix_core::eval::cv::split_fold(&cohort.manifest, &val_set);
    let prep = attnmix_core::eval::cv::fit_fold_preprocessor(&cohort, &split.train_idx)?;
    let build = |idx: &[usize]| -> Result<Vec<TrainSample>> {
        idx.iter()
            .map(|&i| {
                let s = &cohort.manifest.samples[i];
                Ok(TrainSample {
                    patient_id: s.patient_id.clone(),
                    patches: if variant.uses_volume() { Some(cohort.patches(i)?) } else { None },
                    meta: prep.transform(&cohort.meta[i])?,
                    label: s.label,
                })
            })
            .collect()
    };
    let train_set = build(&split.train_idx)?;
    let val = build(&split.val_idx)?;

    let mut model: Model<f32> = Model::new(model_cfg, cfg.seed)?;
    if let Some(ckpt) = &cfg.encoder_ckpt {
        if !ckpt.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!(
                    "prerequisite encoder checkpoint {} not found; run `attnmix pretrain` first",
                    ckpt.display()
                ),
            )));
        }
        let n = model.load_encoder_from(ckpt)?;
        log::info!("loaded {n} encoder tensors from {}", ckpt.display());
    }
    let log = train(&mut model, &cfg.train, variant, &train_set, &val, cfg.seed)?;

    let ckpt_path = cfg.out_dir.join("model.ckpt");
    model.save(&ckpt_path)?;
    log.write_csv(&cfg.out_dir.join("train_log.csv"))?;
    log.write_summary(&cfg.out_dir.join("train_log.json"))?;
    println!(
        "trained {} ({} epochs{}): best val AUC {:.4} at epoch {}; model saved to {}",
        variant.name(),
        log.epochs.len(),
        if log.stopped_early { ", stopped early" } else { "" },
        log.best_val_auc,
        log.best_epoch,
        ckpt_path.display()
    );
    Ok(())
}

fn run_cv_per_seed(
    cfg: &RunConfig,
    cohort: &Cohort,
    model_cfg: &attnmix_core::model::ModelConfig,
    variant: Variant,
) -> Result<(Vec<CvRun>, Vec<FoldArtifacts>)> {
    let mut runs = Vec::with_capacity(cfg.eval.seeds.len());
    let mut first_artifacts = Vec::new();
    for (i, &seed) in cfg.eval.seeds.iter().enumerate() {
        log::info!("cross-validating {} with seed {seed}", variant.name());
        let (run, artifacts) = cross_validate(
            cohort,
            model_cfg,
            &cfg.train,
            variant,
            cfg.eval.k,
            cfg.eval.threshold,
            seed,
            cfg.eval.jobs,
        )?;
        if i == 0 {
            first_artifacts = artifacts;
        }
        runs.push(run);
    }
    Ok((runs, first_artifacts))
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let variant = variant_of(cfg)?;
    let (cohort, model_cfg) = prepared_cohort(cfg, variant.uses_volume())?;
    let (runs, _) = run_cv_per_seed(cfg, &cohort, &model_cfg, variant)?;
    write_metrics_json(&cfg.out_dir.join("metrics.json"), &runs)?;
    write_run_artifacts(&cfg.out_dir, &runs[0], cfg.eval.hist_bins)?;
    let mean_auc =
        runs.iter().map(|r| r.mean.auc).sum::<f64>() / runs.len() as f64;
    println!(
        "evaluated {} over {} seed(s) x {} folds: mean AUC {:.4}; reports in {}",
        variant.name(),
        runs.len(),
        cfg.eval.k,
        mean_auc,
        cfg.out_dir.display()
    );
    Ok(())
}

fn cmd_importance(cfg: &RunConfig) -> Result<()> {
    let variant = variant_of(cfg)?;
    let (cohort, model_cfg) = prepared_cohort(cfg, variant.uses_volume())?;
    let seed = cfg.eval.seeds[0];
    let (run, artifacts) = cross_validate(
        &cohort,
        &model_cfg,
        &cfg.train,
        variant,
        cfg.eval.k,
        cfg.eval.threshold,
        seed,
        cfg.eval.jobs,
    )?;
    let columns = cohort.manifest.schema.expanded_columns();
    let report = permutation_importance(
        &artifacts,
        variant,
        &columns,
        cfg.eval.importance_repeats,
        seed,
    )?;
    let path = cfg.out_dir.join("importance.csv");
    write_importance_csv(&path, &report)?;
    let top = report.ranking()[0];
    println!(
        "importance on {} (seed {seed}, baseline mean AUC {:.4}): top feature {} (mean dAUC {:.4}) -> {}",
        variant.name(),
        run.mean.auc,
        report.columns[top],
        report.mean[top],
        path.display()
    );
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let (cohort, model_cfg) = prepared_cohort(cfg, true)?;
    let rows = ablation_grid(
        &cohort,
        &model_cfg,
        &cfg.train,
        cfg.eval.k,
        cfg.eval.threshold,
        &cfg.eval.seeds,
        cfg.eval.jobs,
    )?;
    let path = cfg.out_dir.join("ablation.csv");
    write_ablation_csv(&path, &rows)?;
    for r in &rows {
        println!("{:<13} auc {:.4}  acc {:.4}  f1 {:.4}", r.variant.name(), r.mean.auc, r.mean.accuracy, r.mean.f1);
    }
    println!("ablation table -> {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    match cli.cmd {
        Cmd::Synth => cmd_synth(&cfg),
        Cmd::Pretrain => cmd_pretrain(&cfg),
        Cmd::Train => cmd_train(&cfg),
        Cmd::Eval => cmd_eval(&cfg),
        Cmd::Importance => cmd_importance(&cfg),
        Cmd::Ablate => cmd_ablate(&cfg),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e.category() {
        "config" => 2,
        "validation" => 3,
        "contract" => 4,
        "shape" => 5,
        "format" => 6,
        "numeric" => 7,
        "io" => 8,
        _ => 9, // json
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("AM_LOG")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        let doc = serde_json::json!({ "category": e.category(), "message": e.to_string() });
        eprintln!("{doc}");
        std::process::exit(exit_code(&e));
    }
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::eval::cv::{AblationRow, CvRun, MeanMetrics};
use crate::eval::importance::ImportanceReport;
use crate::eval::metrics::{mean_roc, probability_histogram};
use crate::io_util::write_atomic;

pub const ROC_GRID_POINTS: usize = 101;

#[derive(Serialize)]
struct FoldJson {
    fold: usize,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    auc: f64,
    degenerate: bool,
}

#[derive(Serialize)]
struct RunJson {
    seed: u64,
    folds: Vec<FoldJson>,
    mean: MeanMetrics,
}

#[derive(Serialize)]
struct OverallJson {
    mean: MeanMetrics,
    /// Population standard deviation of the per-seed mean AUCs.
    std_auc: f64,
}

#[derive(Serialize)]
struct MetricsJson {
    threshold: f64,
    runs: Vec<RunJson>,
    overall: OverallJson,
}

fn overall(runs: &[CvRun]) -> OverallJson {
    let n = runs.len() as f64;
    let mut mean = MeanMetrics::default();
    for r in runs {
        mean.accuracy += r.mean.accuracy;
        mean.precision += r.mean.precision;
        mean.recall += r.mean.recall;
        mean.f1 += r.mean.f1;
        mean.auc += r.mean.auc;
    }
    mean.accuracy /= n;
    mean.precision /= n;
    mean.recall /= n;
    mean.f1 /= n;
    mean.auc /= n;
    let var = runs.iter().map(|r| (r.mean.auc - mean.auc).powi(2)).sum::<f64>() / n;
    OverallJson { mean, std_auc: var.sqrt() }
}

pub fn write_metrics_json(path: &Path, runs: &[CvRun]) -> Result<()> {
    let doc = MetricsJson {
        threshold: runs.first().map(|r| r.threshold).unwrap_or(0.5),
        runs: runs
            .iter()
            .map(|r| RunJson {
                seed: r.seed,
                folds: r
                    .folds
                    .iter()
                    .map(|f| FoldJson {
                        fold: f.fold,
                        accuracy: f.metrics.accuracy,
                        precision: f.metrics.precision,
                        recall: f.metrics.recall,
                        f1: f.metrics.f1,
                        auc: f.auc,
                        degenerate: f.metrics.degenerate,
                    })
                    .collect(),
                mean: r.mean,
            })
            .collect(),
        overall: overall(runs),
    };
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

/// Per-fold artifacts of one run: roc_fold{i}.csv, probs_fold{i}.csv, the
/// vertically averaged roc_mean.csv, and the pooled probability histogram.
pub fn write_run_artifacts(dir: &Path, run: &CvRun, hist_bins: usize) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for f in &run.folds {
        let roc_path = dir.join(format!("roc_fold{}.csv", f.fold));
        write_csv(
            &roc_path,
            "fpr,tpr,threshold",
            f.roc.iter().map(|p| format!("{},{},{}", p.fpr, p.tpr, p.threshold)),
        )?;
        written.push(roc_path);

        let probs_path = dir.join(format!("probs_fold{}.csv", f.fold));
        write_csv(
            &probs_path,
            "patient_id,label,score",
            f.scores.iter().map(|s| format!("{},{},{}", s.patient_id, s.label, s.score)),
        )?;
        written.push(probs_path);
    }

    let curves: Vec<Vec<(f64, f64)>> = run
        .folds
        .iter()
        .map(|f| f.roc.iter().map(|p| (p.fpr, p.tpr)).collect())
        .collect();
    let mean = mean_roc(&curves, ROC_GRID_POINTS)?;
    let mean_path = dir.join("roc_mean.csv");
    write_csv(&mean_path, "fpr,tpr", mean.iter().map(|(x, y)| format!("{x},{y}")))?;
    written.push(mean_path);

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for f in &run.folds {
        for s in &f.scores {
            scores.push(s.score);
            labels.push(s.label);
        }
    }
    let hist = probability_histogram(&scores, &labels, hist_bins)?;
    let hist_path = dir.join("prob_hist.csv");
    write_csv(
        &hist_path,
        "bin_lo,bin_hi,count_class0,count_class1",
        hist.iter().map(|b| format!("{},{},{},{}", b.lo, b.hi, b.count[0], b.count[1])),
    )?;
    written.push(hist_path);
    Ok(written)
}

/// importance.csv: columns ordered by mean ΔAUC (largest drop first), with
/// one column per fold after the mean.
pub fn write_importance_csv(path: &Path, report: &ImportanceReport) -> Result<()> {
    let n_folds = report.per_fold.len();
    let mut header = String::from("feature,mean_delta_auc");
    for f in 0..n_folds {
        write!(header, ",fold{f}").unwrap();
    }
    let rows = report.ranking().into_iter().map(|c| {
        let mut row = format!("{},{}", report.columns[c], report.mean[c]);
        for f in 0..n_folds {
            write!(row, ",{}", report.per_fold[f][c]).unwrap();
        }
        row
    });
    write_csv(path, &header, rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    write_csv(
        path,
        "variant,accuracy,precision,f1,auc",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{}",
                r.variant.name(),
                r.mean.accuracy,
                r.mean.precision,
                r.mean.f1,
                r.mean.auc
            )
        }),
    )
}

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when precision or F1 had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Validation("empty score set".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("scores contain non-finite values".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Threshold metrics; a score at or above the threshold predicts positive.
pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<BinaryMetrics> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fnn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fnn += 1,
        }
    }
    let n = scores.len() as f64;
    let mut degenerate = false;
    let accuracy = (tp + tn) as f64 / n;
    let precision = if tp + fp == 0 {
        degenerate = true;
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fnn == 0 {
        degenerate = true;
        0.0
    } else {
        tp as f64 / (tp + fnn) as f64
    };
    let f1 = if precision + recall == 0.0 {
        degenerate = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BinaryMetrics { accuracy, precision, recall, f1, degenerate })
}

/// Probability a random positive outscores a random negative, ties counting
/// half; the direct pairwise definition in f64.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos: Vec<f64> =
        scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(&s, _)| s).collect();
    let neg: Vec<f64> =
        scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Validation(format!(
            "AUC needs both classes; got {} positives and {} negatives",
            pos.len(),
            neg.len()
        )));
    }
    let mut wins = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() as f64 * neg.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Lowest score still classified positive at this point; the (0,0) anchor
    /// carries +inf (nothing classified positive).
    pub threshold: f64,
}

/// ROC sweep: thresholds descend over distinct scores with tied scores grouped
/// into a single step, anchored at (0,0) and ending at (1,1).
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    check_inputs(scores, labels)?;
    let p = labels.iter().filter(|&&l| l == 1).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::Validation(format!(
            "ROC needs both classes; got {p} positives and {n} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut curve = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(RocPoint {
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
            threshold: s,
        });
    }
    Ok(curve)
}

pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    Ok(roc_points(scores, labels)?.into_iter().map(|p| (p.fpr, p.tpr)).collect())
}

pub fn trapezoid_area(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            (x1 - x0) * (y0 + y1) / 2.0
        })
        .sum()
}

/// TPR at an arbitrary FPR by linear interpolation; vertical runs collapse to
/// their highest TPR (the curve's upper envelope).
pub fn interp_tpr(curve: &[(f64, f64)], fpr: f64) -> f64 {
    // Collapse to strictly increasing fpr with max tpr per fpr.
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(curve.len());
    for &(x, y) in curve {
        match pts.last_mut() {
            Some((lx, ly)) if *lx == x => *ly = ly.max(y),
            _ => pts.push((x, y)),
        }
    }
    if fpr <= pts[0].0 {
        return pts[0].1;
    }
    for w in pts.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if fpr <= x1 {
            return y0 + (y1 - y0) * (fpr - x0) / (x1 - x0);
        }
    }
    pts.last().unwrap().1
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    /// Counts for class 0 and class 1.
    pub count: [usize; 2],
}

/// Per-class counts of predicted probabilities over uniform bins on [0, 1];
/// a score of exactly 1.0 lands in the last bin.
pub fn probability_histogram(
    scores: &[f64],
    labels: &[u8],
    bins: usize,
) -> Result<Vec<HistBin>> {
    if bins < 2 {
        return Err(Error::Config(format!("{bins} bins; need at least 2")));
    }
    check_inputs(scores, labels)?;
    if scores.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::Validation("scores must lie in [0, 1]".into()));
    }
    let mut out: Vec<HistBin> = (0..bins)
        .map(|i| HistBin {
            lo: i as f64 / bins as f64,
            hi: (i + 1) as f64 / bins as f64,
            count: [0, 0],
        })
        .collect();
    for (&s, &l) in scores.iter().zip(labels) {
        let b = ((s * bins as f64).floor() as usize).min(bins - 1);
        out[b].count[l as usize] += 1;
    }
    Ok(out)
}

/// Average several ROC curves vertically on a uniform FPR grid.
pub fn mean_roc(curves: &[Vec<(f64, f64)>], n_grid: usize) -> Result<Vec<(f64, f64)>> {
    if curves.is_empty() {
        return Err(Error::Validation("no curves to average".into()));
    }
    if n_grid < 2 {
        return Err(Error::Config("n_grid must be at least 2".into()));
    }
    let mut out = Vec::with_capacity(n_grid);
    for i in 0..n_grid {
        let fpr = i as f64 / (n_grid - 1) as f64;
        let tpr =
            curves.iter().map(|c| interp_tpr(c, fpr)).sum::<f64>() / curves.len() as f64;
        out.push((fpr, tpr));
    }
    Ok(out)
}

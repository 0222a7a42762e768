//! ROC-AUC and Average Precision with tied scores grouped at one threshold.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub score: f64,
    /// `true` for anomalous (positive).
    pub positive: bool,
}

impl ScoredLabel {
    pub fn new(score: f64, positive: bool) -> Self {
        Self { score, positive }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub n_pos: usize,
    pub auc: f64,
    pub ap: f64,
}

fn check(items: &[ScoredLabel]) -> Result<(usize, usize)> {
    if items.iter().any(|i| !i.score.is_finite()) {
        return Err(contract("scores must be finite"));
    }
    let pos = items.iter().filter(|i| i.positive).count();
    Ok((pos, items.len() - pos))
}

/// Groups of equal score, highest first: `(score, positives, negatives)`.
fn threshold_groups(items: &[ScoredLabel]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<&ScoredLabel> = items.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for it in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == it.score => {}
            _ => groups.push((it.score, 0, 0)),
        }
        let g = groups.last_mut().expect("just pushed");
        if it.positive {
            g.1 += 1;
        } else {
            g.2 += 1;
        }
    }
    groups
}

/// Mann-Whitney statistic via midrank sums.
pub fn roc_auc(items: &[ScoredLabel]) -> Result<f64> {
    let (n_pos, n_neg) = check(items)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC-AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut groups = threshold_groups(items);
    groups.reverse();
    let mut rank_sum = 0.0;
    let mut below = 0usize;
    for (_, p, q) in groups {
        let size = p + q;
        // ranks below+1 ..= below+size share the midrank
        let midrank = below as f64 + (size as f64 + 1.0) / 2.0;
        rank_sum += midrank * p as f64;
        below += size;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// `Σ (Rₙ − Rₙ₋₁)·Pₙ` over distinct thresholds.
pub fn average_precision(items: &[ScoredLabel]) -> Result<f64> {
    let (n_pos, _) = check(items)?;
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (_, p, q) in threshold_groups(items) {
        tp += p;
        fp += q;
        if p > 0 {
            ap += (p as f64 / n_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// `(fpr, tpr)` at every distinct threshold, starting from `(0, 0)`.
pub fn roc_points(items: &[ScoredLabel]) -> Result<Vec<(f64, f64)>> {
    let (n_pos, n_neg) = check(items)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC curve needs both classes".into()));
    }
    let mut out = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, p, q) in threshold_groups(items) {
        tp += p;
        fp += q;
        out.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(out)
}

pub fn evaluate(items: &[ScoredLabel]) -> Result<EvalSummary> {
    if items.is_empty() {
        return Err(Error::UndefinedMetric("no scored items".into()));
    }
    Ok(EvalSummary {
        n: items.len(),
        n_pos: items.iter().filter(|i| i.positive).count(),
        auc: roc_auc(items)?,
        ap: average_precision(items)?,
    })
}

pub fn write_roc_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "fpr,tpr")?;
    for (x, y) in points {
        writeln!(f, "{x},{y}")?;
    }
    f.flush()?;
    Ok(())
}

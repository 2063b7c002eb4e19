//! Evaluation metrics over the unmasked cells of one emotion dimension.

use serde::Serialize;

use crate::error::{Error, Result};

/// Below this total spread the concordance is reported as 0.
pub const DEGENERATE_EPS: f64 = 1e-12;

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            op: "metric",
            lhs: vec![pred.len()],
            rhs: vec![target.len()],
        });
    }
    if pred.len() < 2 {
        return Err(Error::contract(format!("metric needs at least 2 samples, got {}", pred.len())));
    }
    Ok(())
}

struct Moments {
    mean_p: f64,
    mean_t: f64,
    var_p: f64,
    var_t: f64,
    cov: f64,
}

/// Population moments (divide by `n`).
fn moments(pred: &[f64], target: &[f64]) -> Moments {
    let n = pred.len() as f64;
    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_t = target.iter().sum::<f64>() / n;
    let (mut var_p, mut var_t, mut cov) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let (dp, dt) = (p - mean_p, t - mean_t);
        var_p += dp * dp;
        var_t += dt * dt;
        cov += dp * dt;
    }
    Moments {
        mean_p,
        mean_t,
        var_p: var_p / n,
        var_t: var_t / n,
        cov: cov / n,
    }
}

/// Lin's concordance correlation coefficient.
pub fn ccc(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let m = moments(pred, target);
    let denom = m.var_p + m.var_t + (m.mean_p - m.mean_t).powi(2);
    if denom < DEGENERATE_EPS {
        return Ok(0.0);
    }
    Ok(2.0 * m.cov / denom)
}

/// Pearson correlation. Returns `(0.0, true)` when either side is constant.
pub fn pcc(pred: &[f64], target: &[f64]) -> Result<(f64, bool)> {
    check(pred, target)?;
    let m = moments(pred, target);
    if m.var_p == 0.0 || m.var_t == 0.0 {
        return Ok((0.0, true));
    }
    Ok((m.cov / (m.var_p.sqrt() * m.var_t.sqrt()), false))
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Accuracy and positive-class F1 of `prob > 0.5` against 0/1 truths.
/// F1 is 0 when there are no true positives.
pub fn acc_f1(prob: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    check(prob, truth)?;
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in prob.iter().zip(truth) {
        let (yhat, y) = (p > 0.5, l > 0.5);
        if yhat == y {
            correct += 1;
        }
        match (yhat, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let acc = correct as f64 / prob.len() as f64;
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    Ok((acc, f1))
}

/// Metrics for one dimension of one split.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionMetrics {
    pub dimension: String,
    pub n: usize,
    pub ccc: f64,
    pub pcc: f64,
    pub pcc_degenerate: bool,
    pub mae: f64,
    /// Present only for binary heads.
    pub acc: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub split: String,
    pub dims: Vec<DimensionMetrics>,
}

impl MetricsReport {
    pub fn mean_ccc(&self) -> f64 {
        self.mean(|d| d.ccc)
    }

    pub fn mean_pcc(&self) -> f64 {
        self.mean(|d| d.pcc)
    }

    pub fn mean_mae(&self) -> f64 {
        self.mean(|d| d.mae)
    }

    fn mean(&self, f: impl Fn(&DimensionMetrics) -> f64) -> f64 {
        let used: Vec<f64> = self.dims.iter().filter(|d| d.n >= 2).map(f).collect();
        if used.is_empty() {
            return f64::NAN;
        }
        used.iter().sum::<f64>() / used.len() as f64
    }
}

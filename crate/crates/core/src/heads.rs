//! Per-dimension prediction heads and the masked emotion loss.

use rand::Rng;

use crate::data::{BINARY_THRESHOLD, RATING_MAX, RATING_MIN};
use crate::error::{Error, Result};
use crate::params::{glorot, Bound, ParamId, ParamSet};
use crate::tensor::{sigmoid, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// `1 + 8 σ(w·e + b)`, trained with squared error.
    Regression,
    /// Raw logit, trained with cross-entropy against `label > 5`.
    Binary,
}

impl HeadMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(HeadMode::Regression),
            "binary" => Ok(HeadMode::Binary),
            other => Err(Error::config(format!("unknown head mode `{other}` (regression|binary)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadMode::Regression => "regression",
            HeadMode::Binary => "binary",
        }
    }
}

pub fn binary_target(label: f64) -> f64 {
    if label > BINARY_THRESHOLD {
        1.0
    } else {
        0.0
    }
}

/// Maps a head output onto the rating scale; binary logits become the
/// probability of the high class.
pub fn to_rating(mode: HeadMode, out: f64) -> f64 {
    match mode {
        HeadMode::Regression => out,
        HeadMode::Binary => sigmoid(out),
    }
}

/// One linear head per emotion dimension, stored column-wise: column `j` of
/// `w` and `b` belongs to dimension `j` alone.
#[derive(Clone, Debug)]
pub struct Heads {
    w: ParamId,
    b: ParamId,
    modes: Vec<HeadMode>,
}

impl Heads {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, d: usize, modes: &[HeadMode], rng: &mut R) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::config("at least one emotion dimension is required"));
        }
        let w = params.add("head.w", glorot(d, modes.len(), rng));
        let b = params.add("head.b", Tensor::zeros(&[1, modes.len()]));
        Ok(Heads {
            w,
            b,
            modes: modes.to_vec(),
        })
    }

    pub fn modes(&self) -> &[HeadMode] {
        &self.modes
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    /// `B x D` head outputs: ratings for regression columns, logits for
    /// binary columns.
    pub fn predict(&self, tape: &mut Tape, p: &Bound, e: Var) -> Result<Var> {
        let logits = tape.affine(e, p[self.w], p[self.b])?;
        if self.modes.iter().all(|&m| m == HeadMode::Binary) {
            return Ok(logits);
        }
        let squashed = tape.sigmoid(logits);
        let span = RATING_MAX - RATING_MIN;
        let rating = tape.scale(squashed, span);
        let rating = tape.add_scalar(rating, RATING_MIN);
        if self.modes.iter().all(|&m| m == HeadMode::Regression) {
            return Ok(rating);
        }
        let rows = tape.value(e).rows();
        let (reg, bin) = self.column_masks(rows, &vec![true; rows * self.modes.len()]);
        let reg = tape.constant(reg);
        let bin = tape.constant(bin);
        let a = tape.mul(rating, reg)?;
        let b = tape.mul(logits, bin)?;
        tape.add(a, b)
    }

    fn column_masks(&self, rows: usize, mask: &[bool]) -> (Tensor, Tensor) {
        let d = self.modes.len();
        let mut reg = Tensor::zeros(&[rows, d]);
        let mut bin = Tensor::zeros(&[rows, d]);
        for r in 0..rows {
            for (j, mode) in self.modes.iter().enumerate() {
                if !mask[r * d + j] {
                    continue;
                }
                match mode {
                    HeadMode::Regression => reg.data_mut()[r * d + j] = 1.0,
                    HeadMode::Binary => bin.data_mut()[r * d + j] = 1.0,
                }
            }
        }
        (reg, bin)
    }

    /// Mean per-cell loss over the unmasked cells: squared error for
    /// regression columns, cross-entropy for binary ones. Zero when every
    /// cell is masked.
    pub fn emo_loss(&self, tape: &mut Tape, preds: Var, labels: &Tensor, mask: &[bool]) -> Result<Var> {
        let shape = tape.value(preds).shape().to_vec();
        if labels.shape() != shape.as_slice() || mask.len() != labels.len() || shape[1] != self.modes.len() {
            return Err(Error::Dimension {
                op: "emo_loss",
                lhs: shape,
                rhs: vec![labels.rows(), labels.cols(), mask.len()],
            });
        }
        let rows = labels.rows();
        let d = self.modes.len();
        let count = mask.iter().filter(|&&b| b).count();
        let inv = 1.0 / count.max(1) as f64;
        let (mut reg_w, mut bin_w) = self.column_masks(rows, mask);
        reg_w.data_mut().iter_mut().for_each(|v| *v *= inv);
        bin_w.data_mut().iter_mut().for_each(|v| *v *= inv);

        let mut targets = labels.clone();
        for (i, t) in targets.data_mut().iter_mut().enumerate() {
            if !mask[i] {
                *t = 0.0;
            } else if self.modes[i % d] == HeadMode::Binary {
                *t = binary_target(*t);
            }
        }

        let mut terms = Vec::new();
        if reg_w.data().iter().any(|&v| v != 0.0) {
            let y = tape.constant(targets.clone());
            let diff = tape.sub(preds, y)?;
            let sq = tape.mul(diff, diff)?;
            let w = tape.constant(reg_w);
            terms.push(tape.mul(sq, w)?);
        }
        if bin_w.data().iter().any(|&v| v != 0.0) {
            let t = tape.constant(targets.clone());
            let one_minus_t = tape.constant(Tensor::new(
                targets.shape().to_vec(),
                targets.data().iter().map(|v| 1.0 - v).collect(),
            )?);
            let p = tape.sigmoid(preds);
            let log_p = tape.log(p);
            let q = tape.scale(p, -1.0);
            let q = tape.add_scalar(q, 1.0);
            let log_q = tape.log(q);
            let a = tape.mul(t, log_p)?;
            let b = tape.mul(one_minus_t, log_q)?;
            let ll = tape.add(a, b)?;
            let nll = tape.scale(ll, -1.0);
            let w = tape.constant(bin_w);
            terms.push(tape.mul(nll, w)?);
        }
        let mut total = match terms.first() {
            Some(&t) => tape.sum(t),
            None => return Ok(tape.constant(Tensor::scalar(0.0))),
        };
        for &t in &terms[1..] {
            let s = tape.sum(t);
            total = tape.add(total, s)?;
        }
        Ok(total)
    }
}

/// `emo + λ · align`; the alignment term is skipped entirely when `λ = 0`.
pub fn total_loss(tape: &mut Tape, emo: Var, align: Option<Var>, lambda: f64) -> Result<Var> {
    match align {
        Some(a) if lambda != 0.0 => {
            let scaled = tape.scale(a, lambda);
            tape.add(emo, scaled)
        }
        _ => Ok(emo),
    }
}

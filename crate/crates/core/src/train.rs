//! Optimisation and evaluation: Adam with cosine annealing, training under
//! random modality masking, early stopping on validation CCC.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{sample_presence, DatasetBundle, PresenceMask, SampleBatch, Split};
use crate::error::{Error, Result};
use crate::heads::{binary_target, to_rating, HeadMode};
use crate::metrics::{acc_f1, ccc, mae, pcc, DimensionMetrics, MetricsReport};
use crate::model::Model;
use crate::params::ParamSet;
use crate::tensor::{Tape, Tensor};

const SHUFFLE_STREAM: u64 = 50;
const TRAIN_MASK_STREAM: u64 = 51;
const EVAL_MASK_STREAM: u64 = 60;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs over which the cosine decays; `None` uses `epochs`.
    pub horizon: Option<usize>,
    pub patience: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            horizon: None,
            patience: 10,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.learning_rate {
            return Err(Error::config(format!(
                "need 0 <= lr_min <= learning_rate and learning_rate > 0 (got {}, {})",
                self.lr_min, self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config("adam betas must lie in [0, 1) and eps must be positive"));
        }
        if self.horizon == Some(0) {
            return Err(Error::config("schedule horizon must be positive"));
        }
        Ok(())
    }
}

/// Learning rate after `step` of `total` steps: cosine from `lr` to `lr_min`,
/// held at `lr_min` past the horizon.
pub fn cosine_lr(step: usize, total: usize, lr: f64, lr_min: f64) -> f64 {
    if total == 0 || step >= total {
        return lr_min;
    }
    let progress = step as f64 / total as f64;
    lr_min + 0.5 * (lr - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |ps: &ParamSet| ps.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            beta1,
            beta2,
            eps,
            m: zeros(params),
            v: zeros(params),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub seed: u64,
    /// Per-(row, modality) masking probability during training and evaluation.
    pub missing_rate: f64,
    /// Draw a fresh training mask each epoch.
    pub train_masking: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optim: OptimConfig::default(),
            seed: 0,
            missing_rate: 0.0,
            train_masking: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_emo: f64,
    pub train_align: f64,
    pub val_loss: f64,
    pub val_ccc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub best_epoch: usize,
    pub best_val_ccc: f64,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Applies `mask` on top of the stored presence; rows that would lose every
/// modality keep their stored presence instead.
pub fn apply_mask(batch: &SampleBatch, mask: &PresenceMask) -> Result<SampleBatch> {
    let mut merged = batch.presence.intersect(mask)?;
    for r in merged.empty_rows() {
        for m in 0..merged.cols() {
            merged.set(r, m, batch.presence.get(r, m));
        }
    }
    batch.masked(&merged)
}

/// Evaluation mask for `split`, fixed by `(seed, rate)`.
pub fn eval_mask(batch: &SampleBatch, split: Split, rate: f64, seed: u64) -> Result<PresenceMask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_MASK_STREAM + split.index());
    sample_presence(batch.len(), batch.n_modalities(), rate, &mut rng)
}

/// `split` with its evaluation mask applied.
pub fn eval_batch(bundle: &DatasetBundle, split: Split, rate: f64, seed: u64) -> Result<SampleBatch> {
    let batch = bundle.split(split);
    apply_mask(batch, &eval_mask(batch, split, rate, seed)?)
}

/// Metrics of `model` on `batch`. Regression columns are scored on the
/// rating scale; binary columns score the high-class probability against
/// the 0/1 target and also report accuracy and F1.
pub fn evaluate(model: &Model, params: &ParamSet, batch: &SampleBatch, dims: &[String], split: &str) -> Result<MetricsReport> {
    let preds = model.predict(params, batch)?;
    report_from_predictions(&preds, batch, model.heads().modes(), dims, split)
}

pub fn report_from_predictions(
    preds: &Tensor,
    batch: &SampleBatch,
    modes: &[HeadMode],
    dims: &[String],
    split: &str,
) -> Result<MetricsReport> {
    let mut out = Vec::with_capacity(modes.len());
    for (j, &mode) in modes.iter().enumerate() {
        let (mut p, mut t) = (Vec::new(), Vec::new());
        for r in 0..batch.len() {
            if batch.label_mask_at(r, j) {
                let label = batch.labels.get(r, j);
                p.push(to_rating(mode, preds.get(r, j)));
                t.push(match mode {
                    HeadMode::Regression => label,
                    HeadMode::Binary => binary_target(label),
                });
            }
        }
        let name = dims.get(j).cloned().unwrap_or_else(|| format!("dim{j}"));
        if p.len() < 2 {
            out.push(DimensionMetrics {
                dimension: name,
                n: p.len(),
                ccc: f64::NAN,
                pcc: f64::NAN,
                pcc_degenerate: true,
                mae: f64::NAN,
                acc: None,
                f1: None,
            });
            continue;
        }
        let (r, degenerate) = pcc(&p, &t)?;
        let (acc, f1) = match mode {
            HeadMode::Binary => {
                let (a, f) = acc_f1(&p, &t)?;
                (Some(a), Some(f))
            }
            HeadMode::Regression => (None, None),
        };
        out.push(DimensionMetrics {
            dimension: name,
            n: p.len(),
            ccc: ccc(&p, &t)?,
            pcc: r,
            pcc_degenerate: degenerate,
            mae: mae(&p, &t)?,
            acc,
            f1,
        });
    }
    Ok(MetricsReport {
        split: split.to_string(),
        dims: out,
    })
}

fn loss_value(model: &Model, params: &ParamSet, batch: &SampleBatch) -> Result<f64> {
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let trace = model.forward(&mut tape, &p, batch)?;
    let terms = model.loss(&mut tape, batch, &trace)?;
    Ok(tape.value(terms.total).item())
}

/// Trains `params` in place of a copy and returns the best-validation copy.
pub fn train(
    model: &Model,
    init: &ParamSet,
    data: &DatasetBundle,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.optim.validate()?;
    if !(0.0..=1.0).contains(&cfg.missing_rate) {
        return Err(Error::config(format!("missing rate must lie in [0, 1], got {}", cfg.missing_rate)));
    }
    let o = &cfg.optim;
    let train_set = &data.train;
    let n = train_set.len();
    if n == 0 {
        return Err(Error::config("training split is empty"));
    }
    let val = eval_batch(data, Split::Val, cfg.missing_rate, cfg.seed)?;
    let dims = data.manifest.dimensions.clone();

    let mut params = init.clone();
    let mut adam = Adam::new(&params, o.beta1, o.beta2, o.eps);
    let steps_per_epoch = n.div_ceil(o.batch_size);
    let total_steps = o.horizon.unwrap_or(o.epochs) * steps_per_epoch;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    mask_rng.set_stream(TRAIN_MASK_STREAM);

    let mut order: Vec<usize> = (0..n).collect();
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut step = 0;

    for epoch in 0..o.epochs {
        let epoch_set = if cfg.train_masking && cfg.missing_rate > 0.0 {
            let mask = sample_presence(n, train_set.n_modalities(), cfg.missing_rate, &mut mask_rng)?;
            apply_mask(train_set, &mask)?
        } else {
            train_set.clone()
        };
        order.shuffle(&mut shuffle_rng);
        let (mut sum_total, mut sum_emo, mut sum_align) = (0.0, 0.0, 0.0);
        let mut lr = o.learning_rate;
        for (b, idx) in order.chunks(o.batch_size).enumerate() {
            let batch = epoch_set.select(idx);
            let mut tape = Tape::new();
            let p = params.bind(&mut tape);
            let trace = model.forward(&mut tape, &p, &batch)?;
            let terms = model.loss(&mut tape, &batch, &trace)?;
            let emo = tape.value(terms.emo).item();
            let align = terms.align.map(|a| tape.value(a).item()).unwrap_or(0.0);
            let total = tape.value(terms.total).item();
            for (term, value) in [("emotion", emo), ("alignment", align), ("total", total)] {
                if !value.is_finite() {
                    return Err(Error::NonFinite { epoch, batch: b, term, value });
                }
            }
            let grads = tape.backward(terms.total)?;
            let grads: Vec<Tensor> = p.vars().iter().map(|&v| grads.wrt(v)).collect();
            if let Some(bad) = grads.iter().flat_map(|g| g.data()).find(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    term: "gradient",
                    value: *bad,
                });
            }
            lr = cosine_lr(step, total_steps, o.learning_rate, o.lr_min);
            adam.step(&mut params, &grads, lr);
            step += 1;
            let w = idx.len() as f64;
            sum_total += total * w;
            sum_emo += emo * w;
            sum_align += align * w;
        }
        let report = evaluate(model, &params, &val, &dims, Split::Val.name())?;
        let val_ccc = report.mean_ccc();
        let log = EpochLog {
            epoch,
            lr,
            train_loss: sum_total / n as f64,
            train_emo: sum_emo / n as f64,
            train_align: sum_align / n as f64,
            val_loss: loss_value(model, &params, &val)?,
            val_ccc,
        };
        on_epoch(&log);
        history.push(log);
        if val_ccc > best.0 {
            best = (val_ccc, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= o.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_val_ccc, best_epoch, params) = best;
    Ok(TrainOutcome {
        params,
        best_epoch,
        best_val_ccc,
        history,
        stopped_early,
    })
}

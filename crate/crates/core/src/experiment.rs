//! Experiment drivers behind the command line tool: single runs, sweeps,
//! ablations, routing reports and the gradient-check suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::alignment::{ntxent_loss, pairwise_alignment_loss, similarity_matrix, AlignmentConfig};
use crate::config::RunConfig;
use crate::data::{generate, read_dataset, DatasetBundle, GeneratorConfig, PresenceMask, SampleBatch, Split};
use crate::emotion_moe::EmotionBank;
use crate::encoders::{EncoderBank, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::{HeadMode, Heads};
use crate::metrics::MetricsReport;
use crate::modality_moe::{ModalityBank, Routing};
use crate::model::{Model, ModelConfig, ModelKind};
use crate::params::{Bound, ParamSet};
use crate::tensor::{analytic_gradients, compare_gradients, Tape, Tensor, Var};
use crate::train::{eval_batch, evaluate, train, EpochLog};

/// Where each run gets its data.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// One dataset shared by every seed.
    Fixed(Box<DatasetBundle>),
    /// A fresh synthetic dataset per seed.
    Synthetic(GeneratorConfig),
}

impl DataSource {
    pub fn from_dir(dir: &Path) -> Result<Self> {
        Ok(DataSource::Fixed(Box::new(read_dataset(dir)?)))
    }

    /// The `data` key's directory, or the default generator when it is empty.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        match &cfg.data {
            Some(dir) => DataSource::from_dir(dir),
            None => Ok(DataSource::Synthetic(GeneratorConfig::default())),
        }
    }

    /// Manifest entry for `run_manifest.json`.
    pub fn describe(&self) -> serde_json::Value {
        match self {
            DataSource::Fixed(b) => serde_json::json!({ "kind": "directory", "manifest": b.manifest }),
            DataSource::Synthetic(g) => serde_json::json!({
                "kind": "synthetic",
                "note": "one dataset per seed, generated with the run seed",
                "generator": g,
            }),
        }
    }

    pub fn bundle(&self, seed: u64) -> Result<DatasetBundle> {
        match self {
            DataSource::Fixed(b) => Ok((**b).clone()),
            DataSource::Synthetic(cfg) => generate(cfg, seed),
        }
    }
}

/// A trained model with its best-validation parameters and scores.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: Model,
    pub params: ParamSet,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

/// Trains one model as configured and scores it on validation and test,
/// both under the configured missing rate.
pub fn run_once(cfg: &RunConfig, data: &DatasetBundle, on_epoch: impl FnMut(&EpochLog)) -> Result<RunResult> {
    let dims = &data.manifest.dimensions;
    let modes = cfg.modes_for(dims)?;
    let (model, init) = Model::new(&cfg.model, &data.input_dims(), &modes, cfg.seed)?;
    let outcome = train(&model, &init, data, &cfg.train_config(), on_epoch)?;
    let val = eval_batch(data, Split::Val, cfg.missing_rate, cfg.seed)?;
    let test = eval_batch(data, Split::Test, cfg.missing_rate, cfg.seed)?;
    let val = evaluate(&model, &outcome.params, &val, dims, Split::Val.name())?;
    let test = evaluate(&model, &outcome.params, &test, dims, Split::Test.name())?;
    Ok(RunResult {
        model,
        params: outcome.params,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        val,
        test,
    })
}

/// Everything needed to reproduce a command's outputs.
pub fn run_manifest(command: &str, cfg: &RunConfig, data: serde_json::Value, outputs: &[&str]) -> String {
    let value = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": cfg.entries(),
        "dataset": data,
        "outputs": outputs,
    });
    serde_json::to_string_pretty(&value).expect("manifest serializes") + "\n"
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `metrics.csv` body for the given reports.
pub fn metrics_csv(reports: &[&MetricsReport], seed: u64, missing_rate: f64) -> String {
    let mut out = String::from("split,dimension,ccc,pcc,mae,acc,f1,seed,missing_rate\n");
    for rep in reports {
        for d in &rep.dims {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{seed},{missing_rate}",
                rep.split,
                d.dimension,
                d.ccc,
                d.pcc,
                d.mae,
                fmt_opt(d.acc),
                fmt_opt(d.f1)
            );
        }
        let _ = writeln!(
            out,
            "{},mean,{},{},{},,,{seed},{missing_rate}",
            rep.split,
            rep.mean_ccc(),
            rep.mean_pcc(),
            rep.mean_mae()
        );
    }
    out
}

pub fn history_csv(history: &[EpochLog]) -> String {
    let mut out = String::from("epoch,lr,train_loss,train_emo,train_align,val_loss,val_ccc\n");
    for h in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            h.epoch, h.lr, h.train_loss, h.train_emo, h.train_align, h.val_loss, h.val_ccc
        );
    }
    out
}

/// Runs `f` over `cells` on `jobs` threads and returns results in cell order.
pub fn run_cells<C, T, F>(cells: &[C], jobs: usize, f: F) -> Result<Vec<T>>
where
    C: Sync,
    T: Send,
    F: Fn(&C) -> Result<T> + Sync,
{
    let jobs = jobs.clamp(1, cells.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let r = f(&cells[i]);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

/// Sample mean and standard deviation (`n - 1`; 0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Square root of the mean of the squared stds.
pub fn pooled_std(stds: &[f64]) -> f64 {
    if stds.is_empty() {
        return f64::NAN;
    }
    (stds.iter().map(|s| s * s).sum::<f64>() / stds.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub model: String,
    pub rate: f64,
    pub seed: u64,
    pub ccc: f64,
    pub pcc: f64,
    pub mae: f64,
    pub val_ccc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveSummary {
    pub model: String,
    pub rate: f64,
    pub n: usize,
    pub ccc: f64,
    pub ccc_std: f64,
    pub pcc: f64,
    pub pcc_std: f64,
    pub mae: f64,
    pub mae_std: f64,
}

#[derive(Clone, Debug)]
pub struct Curve {
    pub rows: Vec<CurveRow>,
    pub summary: Vec<CurveSummary>,
}

impl Curve {
    pub fn summary_for(&self, model: &str, rate: f64) -> Option<&CurveSummary> {
        self.summary
            .iter()
            .find(|s| s.model == model && (s.rate - rate).abs() < 1e-9)
    }

    /// Per-seed rows followed by one `seed=mean` row per (model, rate).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,r,seed,ccc,pcc,mae,ccc_std,pcc_std,mae_std\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{},,,", r.model, r.rate, r.seed, r.ccc, r.pcc, r.mae);
        }
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},mean,{},{},{},{},{},{}",
                s.model, s.rate, s.ccc, s.pcc, s.mae, s.ccc_std, s.pcc_std, s.mae_std
            );
        }
        out
    }
}

pub type Progress<'a> = &'a (dyn Fn(&str) + Sync);

/// Trains the full model and the baseline at every rate of the grid for
/// every seed. Both models of a seed see identical data, shuffles and masks.
pub fn sweep_missing(cfg: &RunConfig, source: &DataSource, jobs: usize, progress: Progress) -> Result<Curve> {
    let mut cells = Vec::new();
    for kind in [ModelKind::Himoe, ModelKind::Baseline] {
        for &rate in &cfg.rate_grid {
            for &seed in &cfg.sweep_seeds {
                cells.push((kind, rate, seed));
            }
        }
    }
    let rows = run_cells(&cells, jobs, |&(kind, rate, seed)| {
        let run_cfg = cfg.with_overrides(&[
            ("model", kind.name().to_string()),
            ("missing.rate", rate.to_string()),
            ("seed", seed.to_string()),
        ])?;
        let data = source.bundle(seed)?;
        let res = run_once(&run_cfg, &data, |_| {})?;
        progress(&format!(
            "{} r={rate:.2} seed={seed}: test ccc {:.4}",
            kind.name(),
            res.test.mean_ccc()
        ));
        Ok(CurveRow {
            model: kind.name().to_string(),
            rate,
            seed,
            ccc: res.test.mean_ccc(),
            pcc: res.test.mean_pcc(),
            mae: res.test.mean_mae(),
            val_ccc: res.val.mean_ccc(),
        })
    })?;
    let mut summary = Vec::new();
    for kind in [ModelKind::Himoe, ModelKind::Baseline] {
        for &rate in &cfg.rate_grid {
            let sel: Vec<&CurveRow> = rows
                .iter()
                .filter(|r| r.model == kind.name() && r.rate == rate)
                .collect();
            let col = |f: fn(&CurveRow) -> f64| mean_std(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (ccc, ccc_std) = col(|r| r.ccc);
            let (pcc, pcc_std) = col(|r| r.pcc);
            let (mae, mae_std) = col(|r| r.mae);
            summary.push(CurveSummary {
                model: kind.name().to_string(),
                rate,
                n: sel.len(),
                ccc,
                ccc_std,
                pcc,
                pcc_std,
                mae,
                mae_std,
            });
        }
    }
    Ok(Curve { rows, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreRow {
    /// Emotion-expert count or ablation variant.
    pub label: String,
    pub seed: u64,
    pub val_ccc: f64,
    pub test_ccc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub label: String,
    pub n: usize,
    pub val_ccc: f64,
    pub val_std: f64,
    pub test_ccc: f64,
    pub test_std: f64,
}

#[derive(Clone, Debug)]
pub struct ScoreTable {
    pub key: &'static str,
    pub rows: Vec<ScoreRow>,
    pub summary: Vec<ScoreSummary>,
}

impl ScoreTable {
    fn build(key: &'static str, labels: &[String], rows: Vec<ScoreRow>) -> Self {
        let summary = labels
            .iter()
            .map(|l| {
                let sel: Vec<&ScoreRow> = rows.iter().filter(|r| &r.label == l).collect();
                let (val_ccc, val_std) = mean_std(&sel.iter().map(|r| r.val_ccc).collect::<Vec<_>>());
                let (test_ccc, test_std) = mean_std(&sel.iter().map(|r| r.test_ccc).collect::<Vec<_>>());
                ScoreSummary {
                    label: l.clone(),
                    n: sel.len(),
                    val_ccc,
                    val_std,
                    test_ccc,
                    test_std,
                }
            })
            .collect();
        ScoreTable { key, rows, summary }
    }

    pub fn summary_for(&self, label: &str) -> Option<&ScoreSummary> {
        self.summary.iter().find(|s| s.label == label)
    }

    pub fn row(&self, label: &str, seed: u64) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.label == label && r.seed == seed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},seed,val_ccc,test_ccc,val_std,test_std\n", self.key);
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},,", r.label, r.seed, r.val_ccc, r.test_ccc);
        }
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},mean,{},{},{},{}",
                s.label, s.val_ccc, s.test_ccc, s.val_std, s.test_std
            );
        }
        out
    }
}

fn score_grid(
    cfg: &RunConfig,
    source: &DataSource,
    jobs: usize,
    progress: Progress,
    key: &'static str,
    variants: &[(String, Vec<(&'static str, String)>)],
) -> Result<ScoreTable> {
    let mut cells = Vec::new();
    for (vi, _) in variants.iter().enumerate() {
        for &seed in &cfg.sweep_seeds {
            cells.push((vi, seed));
        }
    }
    let rows = run_cells(&cells, jobs, |&(vi, seed)| {
        let (label, overrides) = &variants[vi];
        let mut all = overrides.clone();
        all.push(("seed", seed.to_string()));
        let run_cfg = cfg.with_overrides(&all)?;
        let data = source.bundle(seed)?;
        let res = run_once(&run_cfg, &data, |_| {})?;
        progress(&format!("{key}={label} seed={seed}: val ccc {:.4}", res.val.mean_ccc()));
        Ok(ScoreRow {
            label: label.clone(),
            seed,
            val_ccc: res.val.mean_ccc(),
            test_ccc: res.test.mean_ccc(),
        })
    })?;
    let labels: Vec<String> = variants.iter().map(|(l, _)| l.clone()).collect();
    Ok(ScoreTable::build(key, &labels, rows))
}

/// Full model at every emotion-expert count of the grid, for every seed.
pub fn sweep_experts(cfg: &RunConfig, source: &DataSource, jobs: usize, progress: Progress) -> Result<ScoreTable> {
    let variants: Vec<(String, Vec<(&'static str, String)>)> = cfg
        .expert_grid
        .iter()
        .map(|l| {
            (
                l.to_string(),
                vec![("moe.emotion_experts", l.to_string()), ("model", "himoe".to_string())],
            )
        })
        .collect();
    score_grid(cfg, source, jobs, progress, "emotion_experts", &variants)
}

pub const ABLATIONS: [&str; 4] = ["full", "no_emotion_bank", "no_alignment", "uniform_routing"];

/// Full model and its three ablations for every seed.
pub fn ablate(cfg: &RunConfig, source: &DataSource, jobs: usize, progress: Progress) -> Result<ScoreTable> {
    let base = ("model", "himoe".to_string());
    let variants = vec![
        (ABLATIONS[0].to_string(), vec![base.clone()]),
        (ABLATIONS[1].to_string(), vec![base.clone(), ("moe.emotion_bank", "false".to_string())]),
        (ABLATIONS[2].to_string(), vec![base.clone(), ("loss.lambda", "0".to_string())]),
        (ABLATIONS[3].to_string(), vec![base, ("moe.routing", "uniform".to_string())]),
    ];
    score_grid(cfg, source, jobs, progress, "variant", &variants)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoutingRow {
    pub pattern: String,
    /// `gate` (α), `fusion` (attention over modalities) or `emotion` (β).
    pub component: &'static str,
    pub modality: Option<String>,
    pub expert_index: Option<usize>,
    pub mean_weight: f64,
    pub samples: usize,
}

/// Mean routing weights grouped by presence pattern. Patterns that never
/// occur produce no rows.
pub fn report_routing(model: &Model, params: &ParamSet, batch: &SampleBatch, modality_names: &[String]) -> Result<Vec<RoutingRow>> {
    let bank = model
        .modality_bank()
        .ok_or_else(|| Error::config("routing report needs the hierarchical model"))?;
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let trace = model.forward(&mut tape, &p, batch)?;
    let out = trace.bank.expect("hierarchical model has a bank");
    let alphas: Vec<&Tensor> = out.alphas.iter().map(|&a| tape.value(a)).collect();
    let fusion = tape.value(out.fusion_weights);
    let beta = trace.emotion.as_ref().map(|e| tape.value(e.beta));

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in 0..batch.len() {
        groups.entry(batch.presence.pattern(r)).or_default().push(r);
    }
    let name = |m: usize| modality_names.get(m).cloned().unwrap_or_else(|| format!("m{m}"));
    let mut rows = Vec::new();
    for (pattern, idx) in groups.iter().rev() {
        let mean_of = |t: &Tensor, col: usize| idx.iter().map(|&r| t.get(r, col)).sum::<f64>() / idx.len() as f64;
        for (m, a) in alphas.iter().enumerate() {
            for k in 0..bank.experts_per_modality() {
                rows.push(RoutingRow {
                    pattern: pattern.clone(),
                    component: "gate",
                    modality: Some(name(m)),
                    expert_index: Some(k),
                    mean_weight: mean_of(a, k),
                    samples: idx.len(),
                });
            }
        }
        for m in 0..alphas.len() {
            rows.push(RoutingRow {
                pattern: pattern.clone(),
                component: "fusion",
                modality: Some(name(m)),
                expert_index: None,
                mean_weight: mean_of(fusion, m),
                samples: idx.len(),
            });
        }
        if let Some(b) = beta {
            for l in 0..b.cols() {
                rows.push(RoutingRow {
                    pattern: pattern.clone(),
                    component: "emotion",
                    modality: None,
                    expert_index: Some(l),
                    mean_weight: mean_of(b, l),
                    samples: idx.len(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn routing_csv(rows: &[RoutingRow]) -> String {
    let mut out = String::from("presence_pattern,component,modality,expert_index,mean_weight,samples\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.pattern,
            r.component,
            r.modality.as_deref().unwrap_or(""),
            r.expert_index.map(|k| k.to_string()).unwrap_or_default(),
            r.mean_weight,
            r.samples
        );
    }
    out
}

/// Toy dimensions for the gradient-check suite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub modalities: usize,
    pub modality_experts: usize,
    pub emotion_experts: usize,
    pub d: usize,
    pub batch: usize,
    pub h: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            modalities: 2,
            modality_experts: 2,
            emotion_experts: 2,
            d: 4,
            batch: 2,
            h: 1e-5,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    /// Tensor holding the worst element.
    pub worst: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckSuite {
    pub tol: f64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckSuite {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> Vec<&GradcheckEntry> {
        self.entries.iter().filter(|e| !e.passed).collect()
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<28} {:>10.3e}  {}  worst: {}",
                e.name,
                e.max_rel_error,
                if e.passed { "ok" } else { "FAIL" },
                e.worst
            );
        }
        let _ = writeln!(out, "max relative error {:.3e} (tolerance {:.0e})", self.max_error(), self.tol);
        out
    }
}

type CaseFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    name: String,
    names: Vec<String>,
    params: Vec<Tensor>,
    f: CaseFn,
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Wraps a tensor-valued op into a scalar by a fixed random projection.
fn probed(name: &str, shapes: &[&[usize]], seed: u64, op: fn(&mut Tape, &[Var]) -> Result<Var>) -> Case {
    let params: Vec<Tensor> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| rand_tensor(s, seed * 31 + i as u64))
        .collect();
    Case {
        name: format!("op.{name}"),
        names: (0..shapes.len()).map(|i| format!("arg{i}")).collect(),
        params,
        f: Box::new(move |t, v| {
            let y = op(t, v)?;
            let shape = [t.value(y).rows(), t.value(y).cols()];
            let w = t.constant(rand_tensor(&shape, seed * 31 + 17));
            let yw = t.mul(y, w)?;
            Ok(t.sum(yw))
        }),
    }
}

fn op_cases() -> Vec<Case> {
    vec![
        probed("matmul", &[&[3, 4], &[4, 2]], 1, |t, p| t.matmul(p[0], p[1])),
        probed("matmul_t", &[&[3, 4], &[2, 4]], 2, |t, p| t.matmul_t(p[0], p[1])),
        probed("add", &[&[2, 3], &[2, 3]], 3, |t, p| t.add(p[0], p[1])),
        probed("sub", &[&[2, 3], &[2, 3]], 4, |t, p| t.sub(p[0], p[1])),
        probed("mul", &[&[2, 3], &[2, 3]], 5, |t, p| t.mul(p[0], p[1])),
        probed("add_row", &[&[3, 2], &[1, 2]], 6, |t, p| t.add_row(p[0], p[1])),
        probed("affine", &[&[3, 4], &[4, 2], &[1, 2]], 7, |t, p| t.affine(p[0], p[1], p[2])),
        probed("mul_col", &[&[3, 4], &[3, 1]], 8, |t, p| t.mul_col(p[0], p[1])),
        probed("broadcast_rows", &[&[1, 4]], 9, |t, p| t.broadcast_rows(p[0], 3)),
        probed("scale", &[&[2, 3]], 10, |t, p| Ok(t.scale(p[0], -1.7))),
        probed("add_scalar", &[&[2, 3]], 11, |t, p| Ok(t.add_scalar(p[0], 0.4))),
        probed("tanh", &[&[2, 3]], 12, |t, p| Ok(t.tanh(p[0]))),
        probed("sigmoid", &[&[2, 3]], 13, |t, p| Ok(t.sigmoid(p[0]))),
        probed("exp", &[&[2, 3]], 14, |t, p| Ok(t.exp(p[0]))),
        probed("log", &[&[2, 3]], 15, |t, p| {
            let e = t.exp(p[0]);
            Ok(t.log(e))
        }),
        probed("softmax", &[&[3, 4]], 16, |t, p| Ok(t.softmax(p[0]))),
        probed("log_softmax", &[&[3, 4]], 17, |t, p| Ok(t.log_softmax(p[0]))),
        probed("l2_normalize", &[&[3, 4]], 18, |t, p| Ok(t.l2_normalize(p[0]))),
        probed("concat_cols", &[&[2, 3], &[2, 1]], 19, |t, p| t.concat_cols(&[p[0], p[1]])),
        probed("concat_rows", &[&[2, 3], &[1, 3]], 20, |t, p| t.concat_rows(&[p[1], p[0]])),
        probed("select_rows", &[&[4, 3]], 21, |t, p| t.select_rows(p[0], &[3, 0, 0])),
        probed("mask_rows", &[&[3, 3]], 22, |t, p| t.mask_rows(p[0], &[true, false, true])),
        probed("gather_cols", &[&[3, 4]], 23, |t, p| t.gather_cols(p[0], &[1, 3, 0])),
        probed("col", &[&[3, 4]], 24, |t, p| t.col(p[0], 2)),
        probed("row_dot", &[&[3, 4], &[3, 4]], 25, |t, p| t.row_dot(p[0], p[1])),
        probed("mask_diagonal", &[&[3, 3]], 26, |t, p| {
            let m = t.mask_diagonal(p[0])?;
            let l = t.log_softmax(m);
            t.gather_cols(l, &[1, 2, 0])
        }),
        probed("sum", &[&[2, 3]], 27, |t, p| Ok(t.sum(p[0]))),
        probed("mean", &[&[2, 3]], 28, |t, p| Ok(t.mean(p[0]))),
    ]
}

fn module_cases(cfg: &GradcheckConfig) -> Result<Vec<Case>> {
    let (m, d, b) = (cfg.modalities, cfg.d, cfg.batch);
    let raw = 3;
    let mut cases = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x_seed = cfg.seed + 1000;

    // Encoders.
    {
        let mut params = ParamSet::new();
        let enc = EncoderBank::new(&mut params, &vec![raw; m], EncoderConfig { hidden: d + 1, out_dim: d }, &mut rng);
        let x = rand_tensor(&[b, raw], x_seed);
        let n = params.len();
        cases.push(Case {
            name: "encoders".into(),
            names: params.names().to_vec(),
            params: params.tensors().to_vec(),
            f: Box::new(move |t, v| {
                let p = Bound::from_vars(v[..n].to_vec());
                let xv = t.constant(x.clone());
                let mut acc = t.constant(Tensor::scalar(0.0));
                for i in 0..m {
                    let z = enc.encode(t, &p, i, xv)?;
                    let s = t.sum(z);
                    let s = t.scale(s, (i + 1) as f64);
                    acc = t.add(acc, s)?;
                }
                Ok(acc)
            }),
        });
    }

    // Similarity matrix and NT-Xent on a single pair.
    cases.push(Case {
        name: "ntxent".into(),
        names: vec!["z_i".into(), "z_j".into()],
        params: vec![rand_tensor(&[b.max(2), d], x_seed + 1), rand_tensor(&[b.max(2), d], x_seed + 2)],
        f: Box::new(|t, v| {
            let s = similarity_matrix(t, v[0], v[1], 0.1)?;
            ntxent_loss(t, s)
        }),
    });

    // Multi-pair alignment with a missing cell.
    {
        let rows = b.max(2) + 1;
        let mut presence = PresenceMask::all_present(rows, m.max(2));
        presence.set(0, m.max(2) - 1, false);
        let params: Vec<Tensor> = (0..m.max(2)).map(|i| rand_tensor(&[rows, d], x_seed + 10 + i as u64)).collect();
        cases.push(Case {
            name: "pairwise_alignment".into(),
            names: (0..params.len()).map(|i| format!("z_{i}")).collect(),
            params,
            f: Box::new(move |t, v| pairwise_alignment_loss(t, v, &presence, &AlignmentConfig::default())),
        });
    }

    // Modality bank: gates, experts and fusion.
    {
        let mut params = ParamSet::new();
        let bank = ModalityBank::new(&mut params, m, d, cfg.modality_experts, Routing::Soft, &mut rng)?;
        let n = params.len();
        let mut presence = PresenceMask::all_present(b, m);
        if m > 1 {
            presence.set(0, m - 1, false);
        }
        let inputs: Vec<Tensor> = (0..m).map(|i| rand_tensor(&[b, d], x_seed + 20 + i as u64)).collect();
        let probe = rand_tensor(&[b, d], x_seed + 30);
        cases.push(Case {
            name: "modality_bank".into(),
            names: params.names().to_vec(),
            params: params.tensors().to_vec(),
            f: Box::new(move |t, v| {
                let p = Bound::from_vars(v[..n].to_vec());
                let xs = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let xv = t.constant(x.clone());
                        t.mask_rows(xv, &presence.column(i))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let out = bank.forward(t, &p, &xs, &presence)?;
                let w = t.constant(probe.clone());
                let zw = t.mul(out.z, w)?;
                Ok(t.sum(zw))
            }),
        });
    }

    // Emotion bank with its router.
    {
        let mut params = ParamSet::new();
        let emo = EmotionBank::new(&mut params, d, cfg.emotion_experts, &mut rng)?;
        let n = params.len();
        let z = rand_tensor(&[b, d], x_seed + 40);
        let probe = rand_tensor(&[b, d], x_seed + 41);
        cases.push(Case {
            name: "emotion_bank".into(),
            names: params.names().to_vec(),
            params: params.tensors().to_vec(),
            f: Box::new(move |t, v| {
                let p = Bound::from_vars(v[..n].to_vec());
                let zv = t.constant(z.clone());
                let out = emo.forward(t, &p, zv)?;
                let w = t.constant(probe.clone());
                let ew = t.mul(out.e, w)?;
                Ok(t.sum(ew))
            }),
        });
    }

    // Heads with both loss kinds.
    {
        let mut params = ParamSet::new();
        let heads = Heads::new(&mut params, d, &[HeadMode::Regression, HeadMode::Binary], &mut rng)?;
        let n = params.len();
        let e = rand_tensor(&[b, d], x_seed + 50);
        let labels = Tensor::new(vec![b, 2], (0..2 * b).map(|i| 1.0 + (i * 3 % 9) as f64).collect())?;
        cases.push(Case {
            name: "heads_loss".into(),
            names: params.names().to_vec(),
            params: params.tensors().to_vec(),
            f: Box::new(move |t, v| {
                let p = Bound::from_vars(v[..n].to_vec());
                let ev = t.constant(e.clone());
                let y = heads.predict(t, &p, ev)?;
                heads.emo_loss(t, y, &labels, &vec![true; labels.len()])
            }),
        });
    }

    // Composite loss of both model kinds.
    for kind in [ModelKind::Himoe, ModelKind::Baseline] {
        let mcfg = ModelConfig {
            kind,
            encoder: EncoderConfig { hidden: d + 1, out_dim: d },
            modality_experts: cfg.modality_experts,
            emotion_experts: cfg.emotion_experts,
            lambda: 0.1,
            ..ModelConfig::default()
        };
        let modes = [HeadMode::Regression, HeadMode::Binary];
        let (model, params) = Model::new(&mcfg, &vec![raw; m], &modes, cfg.seed)?;
        let rows = b.max(2);
        let features = (0..m).map(|i| rand_tensor(&[rows, raw], x_seed + 60 + i as u64)).collect();
        let labels = Tensor::new(vec![rows, 2], (0..2 * rows).map(|i| 1.0 + (i * 5 % 9) as f64).collect())?;
        let batch = SampleBatch::new(features, PresenceMask::all_present(rows, m), labels, vec![true; 2 * rows], 1)?;
        cases.push(Case {
            name: format!("composite.{}", kind.name()),
            names: params.names().to_vec(),
            params: params.tensors().to_vec(),
            f: Box::new(move |t, v| {
                let p = Bound::from_vars(v.to_vec());
                let trace = model.forward(t, &p, &batch)?;
                Ok(model.loss(t, &batch, &trace)?.total)
            }),
        });
    }
    Ok(cases)
}

/// Runs the suite. `corrupt`, when given, may alter the analytic gradients
/// of a case before comparison (used to prove failures are caught).
pub fn gradcheck(cfg: &GradcheckConfig, corrupt: Option<&dyn Fn(&str, &mut [Tensor])>) -> Result<GradcheckSuite> {
    if cfg.modalities < 2 || cfg.d == 0 || cfg.batch == 0 || !(cfg.h > 0.0) {
        return Err(Error::config("gradcheck needs M >= 2, d >= 1, B >= 1 and h > 0"));
    }
    let mut entries = Vec::new();
    let mut cases = op_cases();
    cases.extend(module_cases(cfg)?);
    for case in cases {
        let f = |t: &mut Tape, v: &[Var]| (case.f)(t, v);
        let (_, mut analytic) = analytic_gradients(&f, &case.params)?;
        if let Some(c) = corrupt {
            c(&case.name, &mut analytic);
        }
        let report = compare_gradients(&f, &case.params, &analytic, cfg.h)?;
        let worst = case
            .names
            .get(report.worst.0)
            .cloned()
            .unwrap_or_else(|| format!("#{}", report.worst.0));
        entries.push(GradcheckEntry {
            name: case.name.clone(),
            max_rel_error: report.max_rel_error,
            worst: format!("{worst}[{}]", report.worst.1),
            passed: report.max_rel_error < cfg.tol,
        });
    }
    Ok(GradcheckSuite { tol: cfg.tol, entries })
}

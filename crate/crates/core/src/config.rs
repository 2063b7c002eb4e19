//! Flat `key = value` run configuration.
//!
//! Every key has a default; a config file and `--set key=value` overrides
//! are applied in that order. Unknown keys are rejected. The resolved text
//! of every key is kept so it can be echoed into `run_manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::alignment::{AlignmentConfig, PairPolicy};
use crate::data::standard_rate_grid;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::HeadMode;
use crate::model::{ModelConfig, ModelKind};
use crate::modality_moe::Routing;
use crate::train::{OptimConfig, TrainConfig};

const HEAD_MODE_PREFIX: &str = "heads.mode.";

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("epochs", "30"),
    ("batch_size", "32"),
    ("learning_rate", "0.001"),
    ("schedule.lr_min", "0.00001"),
    ("schedule.horizon", "auto"),
    ("adam.beta1", "0.9"),
    ("adam.beta2", "0.999"),
    ("adam.eps", "1e-8"),
    ("early_stop.patience", "10"),
    ("model", "himoe"),
    ("encoder.hidden", "64"),
    ("encoder.out_dim", "32"),
    ("moe.modality_experts", "4"),
    ("moe.emotion_experts", "6"),
    ("moe.routing", "soft"),
    ("moe.emotion_bank", "true"),
    ("align.enabled", "true"),
    ("align.tau", "0.1"),
    ("align.pairs", "all"),
    ("loss.lambda", "0.1"),
    ("missing.rate", "0.0"),
    ("missing.train_masking", "true"),
    ("sweep.rates", "0.00,0.05,0.10,0.15,0.20,0.25,0.30,0.35,0.40"),
    ("sweep.seeds", "0,1,2,3,4"),
    ("sweep.emotion_experts", "1,2,4,6,8,12"),
    ("data", ""),
    ("out", "runs"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub missing_rate: f64,
    pub train_masking: bool,
    /// Explicit per-dimension head modes; dimensions not listed regress.
    pub head_modes: BTreeMap<String, HeadMode>,
    pub rate_grid: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
    pub expert_grid: Vec<usize>,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    entries: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_entries(default_entries()).expect("defaults parse")
    }
}

fn default_entries() -> BTreeMap<String, String> {
    DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn known(key: &str) -> bool {
    DEFAULTS.iter().any(|(k, _)| *k == key) || (key.starts_with(HEAD_MODE_PREFIX) && key.len() > HEAD_MODE_PREFIX.len())
}

/// Splits `key=value` (or `key = value`).
pub fn split_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("expected key=value, got `{s}`")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::config(format!("empty key in `{s}`")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn parse<T: std::str::FromStr>(entries: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = &entries[key];
    raw.parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{raw}`")))
}

fn parse_bool(entries: &BTreeMap<String, String>, key: &str) -> Result<bool> {
    match entries[key].as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::config(format!("`{key}`: expected true or false, got `{other}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(entries: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>> {
    let raw = &entries[key];
    let items: Vec<T> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::config(format!("`{key}`: cannot parse `{s}` in `{raw}`")))
        })
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::config(format!("`{key}` must not be empty")));
    }
    Ok(items)
}

impl RunConfig {
    /// Defaults, then the file at `path` (if any), then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut entries = default_entries();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = split_assignment(line)
                    .map_err(|e| Error::config(format!("{}:{}: {e}", path.display(), n + 1)))?;
                if !known(&k) {
                    return Err(Error::config(format!("{}:{}: unknown key `{k}`", path.display(), n + 1)));
                }
                entries.insert(k, v);
            }
        }
        for o in overrides {
            let (k, v) = split_assignment(o)?;
            if !known(&k) {
                return Err(Error::config(format!("unknown key `{k}`")));
            }
            entries.insert(k, v);
        }
        RunConfig::from_entries(entries)
    }

    /// Re-parses the resolved entries with further overrides on top.
    pub fn with_overrides(&self, overrides: &[(&str, String)]) -> Result<Self> {
        let mut entries = self.entries.clone();
        for (k, v) in overrides {
            if !known(k) {
                return Err(Error::config(format!("unknown key `{k}`")));
            }
            entries.insert(k.to_string(), v.clone());
        }
        RunConfig::from_entries(entries)
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = entries.keys().find(|k| !known(k)) {
            return Err(Error::config(format!("unknown key `{k}`")));
        }
        let horizon = match entries["schedule.horizon"].as_str() {
            "auto" => None,
            _ => Some(parse::<usize>(&entries, "schedule.horizon")?),
        };
        let optim = OptimConfig {
            epochs: parse(&entries, "epochs")?,
            batch_size: parse(&entries, "batch_size")?,
            learning_rate: parse(&entries, "learning_rate")?,
            lr_min: parse(&entries, "schedule.lr_min")?,
            beta1: parse(&entries, "adam.beta1")?,
            beta2: parse(&entries, "adam.beta2")?,
            eps: parse(&entries, "adam.eps")?,
            horizon,
            patience: parse(&entries, "early_stop.patience")?,
        };
        optim.validate()?;
        let routing = match entries["moe.routing"].as_str() {
            "soft" => Routing::Soft,
            "uniform" => Routing::Uniform,
            other => return Err(Error::config(format!("`moe.routing`: expected soft or uniform, got `{other}`"))),
        };
        let pair_policy = match entries["align.pairs"].as_str() {
            "all" => PairPolicy::AllPairs,
            other => match other.strip_prefix("anchor:").map(str::parse::<usize>) {
                Some(Ok(m)) => PairPolicy::Anchor(m),
                _ => return Err(Error::config(format!("`align.pairs`: expected all or anchor:<index>, got `{other}`"))),
            },
        };
        let model = ModelConfig {
            kind: ModelKind::parse(&entries["model"])?,
            encoder: EncoderConfig {
                hidden: parse(&entries, "encoder.hidden")?,
                out_dim: parse(&entries, "encoder.out_dim")?,
            },
            modality_experts: parse(&entries, "moe.modality_experts")?,
            emotion_experts: parse(&entries, "moe.emotion_experts")?,
            routing,
            emotion_bank: parse_bool(&entries, "moe.emotion_bank")?,
            align: AlignmentConfig {
                tau: parse(&entries, "align.tau")?,
                pair_policy,
            },
            align_enabled: parse_bool(&entries, "align.enabled")?,
            lambda: parse(&entries, "loss.lambda")?,
        };
        model.validate()?;
        let missing_rate: f64 = parse(&entries, "missing.rate")?;
        if !(0.0..=1.0).contains(&missing_rate) {
            return Err(Error::config(format!("`missing.rate` must lie in [0, 1], got {missing_rate}")));
        }
        let mut head_modes = BTreeMap::new();
        for (k, v) in &entries {
            if let Some(dim) = k.strip_prefix(HEAD_MODE_PREFIX) {
                head_modes.insert(dim.to_string(), HeadMode::parse(v)?);
            }
        }
        let rate_grid: Vec<f64> = parse_list(&entries, "sweep.rates")?;
        if rate_grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config("`sweep.rates` values must lie in [0, 1]"));
        }
        let expert_grid: Vec<usize> = parse_list(&entries, "sweep.emotion_experts")?;
        if expert_grid.contains(&0) {
            return Err(Error::config("`sweep.emotion_experts` values must be positive"));
        }
        let data = match entries["data"].as_str() {
            "" => None,
            p => Some(PathBuf::from(p)),
        };
        Ok(RunConfig {
            seed: parse(&entries, "seed")?,
            model,
            optim,
            missing_rate,
            train_masking: parse_bool(&entries, "missing.train_masking")?,
            head_modes,
            rate_grid,
            sweep_seeds: parse_list(&entries, "sweep.seeds")?,
            expert_grid,
            data,
            out: PathBuf::from(&entries["out"]),
            entries,
        })
    }

    /// Resolved text of every key, defaults included.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optim: self.optim.clone(),
            seed: self.seed,
            missing_rate: self.missing_rate,
            train_masking: self.train_masking,
        }
    }

    /// Head mode per dataset dimension; unknown dimension names are errors.
    pub fn modes_for(&self, dims: &[String]) -> Result<Vec<HeadMode>> {
        if let Some(extra) = self.head_modes.keys().find(|k| !dims.contains(k)) {
            return Err(Error::config(format!(
                "`{HEAD_MODE_PREFIX}{extra}` names no dataset dimension (have {})",
                dims.join(", ")
            )));
        }
        Ok(dims
            .iter()
            .map(|d| self.head_modes.get(d).copied().unwrap_or(HeadMode::Regression))
            .collect())
    }

    /// `key = value` lines, sorted by key.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// `0.00..=0.40` in steps of 0.05, the default `sweep.rates`.
pub fn default_rate_grid() -> Vec<f64> {
    standard_rate_grid()
}

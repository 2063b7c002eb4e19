use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::batch::{DatasetBundle, SampleBatch, Split};
use super::io::{quantize, DatasetManifest, ModalityInfo, SplitSizes, FORMAT_VERSION};
use super::presence::{sample_presence, PresenceMask};
use super::window::{windows, WindowSpec};
use super::{RATING_MAX, RATING_MIN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub d_raw: usize,
    pub lag_steps: usize,
    pub noise_std: f64,
}

impl ModalitySpec {
    pub fn new(name: &str, d_raw: usize, lag_steps: usize, noise_std: f64) -> Self {
        ModalitySpec {
            name: name.to_string(),
            d_raw,
            lag_steps,
            noise_std,
        }
    }
}

/// How the normalised latent reaches each modality's channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    /// Gaussian weights; each modality weighs its two "home" dimensions by
    /// `home_gain` and the rest by `cross_gain`.
    Random {
        home_gain: f64,
        cross_gain: f64,
        offset_std: f64,
    },
    /// `[I; 0]` with zero offset, so channel `j < D` is `tanh(u_j)`.
    IdentityPadded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub modalities: Vec<ModalitySpec>,
    pub dimensions: Vec<String>,
    pub sample_rate: f64,
    pub trial_len_s: f64,
    pub window_len_s: f64,
    pub step_s: f64,
    pub train_trials: usize,
    pub val_trials: usize,
    pub test_trials: usize,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    pub min_components: usize,
    pub max_components: usize,
    pub map: MapKind,
    /// Number of response profiles. Each trial draws one uniformly and every
    /// profile has its own map per modality, standing in for between-subject
    /// differences in how emotion shows up in a signal.
    #[serde(default = "one")]
    pub profiles: usize,
    /// Missing rate baked into the stored presence masks.
    pub missing_rate: f64,
    pub label_missing_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            modalities: vec![
                ModalitySpec::new("eeg", 4, 0, 0.25),
                ModalitySpec::new("pps", 4, 2, 0.3),
                ModalitySpec::new("face", 4, 4, 0.25),
                ModalitySpec::new("eog", 4, 1, 0.35),
            ],
            dimensions: ["valence", "arousal", "dominance", "liking"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            sample_rate: 2.0,
            trial_len_s: 60.0,
            window_len_s: 4.0,
            step_s: 2.0,
            train_trials: 69,
            val_trials: 14,
            test_trials: 14,
            min_freq_hz: 1.0 / 40.0,
            max_freq_hz: 1.0 / 8.0,
            min_components: 3,
            max_components: 6,
            map: MapKind::Random {
                home_gain: 1.5,
                cross_gain: 0.3,
                offset_std: 0.2,
            },
            profiles: 1,
            missing_rate: 0.0,
            label_missing_rate: 0.0,
        }
    }
}

fn one() -> usize {
    1
}

impl GeneratorConfig {
    /// Eight modalities, mirroring the eight-modality overview example.
    pub fn eight_modalities() -> Self {
        let names = ["eeg", "ecg", "gsr", "resp", "face", "eog", "emg", "temp"];
        GeneratorConfig {
            modalities: names
                .iter()
                .enumerate()
                .map(|(i, n)| ModalitySpec::new(n, 4, i % 4, 0.2 + 0.05 * (i % 3) as f64))
                .collect(),
            ..GeneratorConfig::default()
        }
    }

    pub fn d_emo(&self) -> usize {
        self.dimensions.len()
    }

    pub fn trial_samples(&self) -> usize {
        (self.trial_len_s * self.sample_rate).round() as usize
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        WindowSpec::from_seconds(self.window_len_s, self.step_s, self.sample_rate)
    }

    pub fn windows_per_trial(&self) -> Result<usize> {
        self.window_spec()?.count(self.trial_samples())
    }

    /// Upper bound on `|v[t+1] - v[t]|` for the latent trajectory.
    pub fn smoothness_bound(&self) -> f64 {
        0.5 * (RATING_MAX - RATING_MIN) * 2.0 * PI * self.max_freq_hz / self.sample_rate
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.len() < 2 {
            return Err(Error::config(format!(
                "at least two modalities required, got {}",
                self.modalities.len()
            )));
        }
        if self.profiles == 0 {
            return Err(Error::config("profiles must be at least 1"));
        }
        if self.dimensions.is_empty() {
            return Err(Error::config("at least one emotion dimension required"));
        }
        if let Some(m) = self.modalities.iter().find(|m| m.d_raw == 0 || !(m.noise_std >= 0.0)) {
            return Err(Error::config(format!("modality {} needs d_raw > 0 and noise_std >= 0", m.name)));
        }
        let mut names: Vec<&str> = self.modalities.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.iter().any(|n| n.is_empty() || n.contains(['.', '/'])) {
            return Err(Error::config("modality names must be unique, non-empty and free of '.' and '/'"));
        }
        self.window_spec()?.count(self.trial_samples())?;
        if !(self.min_freq_hz > 0.0 && self.max_freq_hz >= self.min_freq_hz) {
            return Err(Error::config("need 0 < min_freq_hz <= max_freq_hz"));
        }
        if self.min_components == 0 || self.max_components < self.min_components {
            return Err(Error::config("need 1 <= min_components <= max_components"));
        }
        if !(0.0..=1.0).contains(&self.missing_rate) || !(0.0..=1.0).contains(&self.label_missing_rate) {
            return Err(Error::config("missing rates must lie in [0, 1]"));
        }
        if self.train_trials == 0 || self.val_trials == 0 || self.test_trials == 0 {
            return Err(Error::config("every split needs at least one trial"));
        }
        if let MapKind::IdentityPadded = self.map {
            if let Some(m) = self.modalities.iter().find(|m| m.d_raw < self.d_emo()) {
                return Err(Error::config(format!(
                    "identity-padded map needs d_raw >= {} for modality {}",
                    self.d_emo(),
                    m.name
                )));
            }
        }
        Ok(())
    }

    /// Draws the fixed per-modality affine maps of the first profile.
    pub fn modality_maps(&self, seed: u64) -> Vec<ModalityMap> {
        self.profile_maps(seed).swap_remove(0)
    }

    /// `maps[profile][modality]`; profile 0 is drawn first from the same
    /// stream, so a one-profile config reproduces [`Self::modality_maps`].
    pub fn profile_maps(&self, seed: u64) -> Vec<Vec<ModalityMap>> {
        let mut rng = stream_rng(seed, STREAM_MAPS);
        (0..self.profiles.max(1)).map(|_| self.draw_maps(&mut rng)).collect()
    }

    fn draw_maps(&self, rng: &mut ChaCha8Rng) -> Vec<ModalityMap> {
        let d = self.d_emo();
        self.modalities
            .iter()
            .enumerate()
            .map(|(m, spec)| match &self.map {
                MapKind::IdentityPadded => {
                    let mut w = Tensor::zeros(&[spec.d_raw, d]);
                    for j in 0..d {
                        w.data_mut()[j * d + j] = 1.0;
                    }
                    ModalityMap {
                        weights: w,
                        offset: vec![0.0; spec.d_raw],
                    }
                }
                MapKind::Random {
                    home_gain,
                    cross_gain,
                    offset_std,
                } => {
                    let home = [m % d, (m + 1) % d];
                    let mut w = Tensor::zeros(&[spec.d_raw, d]);
                    for i in 0..spec.d_raw {
                        for j in 0..d {
                            let z: f64 = StandardNormal.sample(&mut *rng);
                            let gain = if home.contains(&j) { *home_gain } else { *cross_gain };
                            w.data_mut()[i * d + j] = z * gain;
                        }
                    }
                    let offset = (0..spec.d_raw)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut *rng);
                            offset_std * z
                        })
                        .collect();
                    ModalityMap { weights: w, offset }
                }
            })
            .collect()
    }
}

const STREAM_MAPS: u64 = 0;
const STREAM_TRIALS: u64 = 10;
const STREAM_PRESENCE: u64 = 20;
const STREAM_LABEL_MASK: u64 = 30;
const STREAM_PROFILES: u64 = 40;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Channel weights `d_raw x D` and offsets of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityMap {
    pub weights: Tensor,
    pub offset: Vec<f64>,
}

/// `T x D` latent ratings in `[1, 9]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    pub values: Tensor,
    pub sample_rate: f64,
}

impl LatentTrajectory {
    /// Sum of 3–6 random sinusoids per dimension, rescaled by the total
    /// amplitude so the result stays inside the rating range.
    pub fn sample<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Self {
        let (t_len, d) = (cfg.trial_samples(), cfg.d_emo());
        let mut values = Tensor::zeros(&[t_len, d]);
        let mid = 0.5 * (RATING_MIN + RATING_MAX);
        let half = 0.5 * (RATING_MAX - RATING_MIN);
        for j in 0..d {
            let n = rng.random_range(cfg.min_components..=cfg.max_components);
            let comps: Vec<(f64, f64, f64)> = (0..n)
                .map(|_| {
                    let amp = rng.random_range(0.2..1.0);
                    let freq = rng.random_range(cfg.min_freq_hz..=cfg.max_freq_hz);
                    let phase = rng.random_range(0.0..2.0 * PI);
                    (amp, freq, phase)
                })
                .collect();
            let total: f64 = comps.iter().map(|c| c.0).sum();
            for t in 0..t_len {
                let secs = t as f64 / cfg.sample_rate;
                let s: f64 = comps.iter().map(|&(a, f, p)| a * (2.0 * PI * f * secs + p).sin()).sum();
                let v = (mid + half * s / total).clamp(RATING_MIN, RATING_MAX);
                values.data_mut()[t * d + j] = v;
            }
        }
        LatentTrajectory {
            values,
            sample_rate: cfg.sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Latent mapped to `[-1, 1]`.
    pub fn normalized(&self, t: usize) -> Vec<f64> {
        let mid = 0.5 * (RATING_MIN + RATING_MAX);
        let half = 0.5 * (RATING_MAX - RATING_MIN);
        self.values.row(t).iter().map(|v| (v - mid) / half).collect()
    }
}

/// One modality's raw `T x d_raw` signal.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityStream {
    pub name: String,
    pub raw: Tensor,
    pub lag_steps: usize,
    pub noise_std: f64,
}

impl ModalityStream {
    /// `raw[t] = tanh(W u[t - lag] + c) + noise`, where rows before the lag
    /// read the trajectory's first value.
    pub fn observe<R: Rng + ?Sized>(spec: &ModalitySpec, map: &ModalityMap, latent: &LatentTrajectory, rng: &mut R) -> Self {
        let t_len = latent.len();
        let d = map.weights.cols();
        let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite noise");
        let mut raw = Vec::with_capacity(t_len * spec.d_raw);
        for t in 0..t_len {
            let u = latent.normalized(t.saturating_sub(spec.lag_steps));
            for i in 0..spec.d_raw {
                let w = &map.weights.data()[i * d..(i + 1) * d];
                let pre: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() + map.offset[i];
                let eps = if spec.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                raw.push(pre.tanh() + eps);
            }
        }
        ModalityStream {
            name: spec.name.clone(),
            raw: Tensor::matrix(t_len, spec.d_raw, raw).expect("stream shape"),
            lag_steps: spec.lag_steps,
            noise_std: spec.noise_std,
        }
    }
}

fn generate_split(cfg: &GeneratorConfig, maps: &[Vec<ModalityMap>], split: Split, trials: usize, seed: u64) -> Result<SampleBatch> {
    let spec = cfg.window_spec()?;
    let per_trial = cfg.windows_per_trial()?;
    let d = cfg.d_emo();
    let m_count = cfg.modalities.len();
    let mut rng = stream_rng(seed, STREAM_TRIALS + split.index());
    let mut profile_rng = stream_rng(seed, STREAM_PROFILES + split.index());

    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); m_count];
    let mut labels = Vec::with_capacity(trials * per_trial * d);
    for _ in 0..trials {
        let latent = LatentTrajectory::sample(cfg, &mut rng);
        let profile = if maps.len() > 1 {
            profile_rng.random_range(0..maps.len())
        } else {
            0
        };
        for (m, (mspec, map)) in cfg.modalities.iter().zip(&maps[profile]).enumerate() {
            let stream = ModalityStream::observe(mspec, map, &latent, &mut rng);
            let w = windows(&stream.raw, spec)?;
            feats[m].extend(w.data().iter().map(|&v| quantize(v)));
        }
        for w in 0..per_trial {
            labels.extend(latent.values.row(spec.end_index(w)).iter().map(|&v| quantize(v)));
        }
    }
    let rows = trials * per_trial;
    let features = feats
        .into_iter()
        .zip(&cfg.modalities)
        .map(|(data, ms)| Tensor::matrix(rows, ms.d_raw * spec.len, data))
        .collect::<Result<Vec<_>>>()?;

    let mut prng = stream_rng(seed, STREAM_PRESENCE + split.index());
    let presence = if cfg.missing_rate > 0.0 {
        sample_presence(rows, m_count, cfg.missing_rate, &mut prng)?
    } else {
        PresenceMask::all_present(rows, m_count)
    };

    let mut lrng = stream_rng(seed, STREAM_LABEL_MASK + split.index());
    let label_mask: Vec<bool> = (0..rows * d)
        .map(|_| cfg.label_missing_rate == 0.0 || lrng.random::<f64>() >= cfg.label_missing_rate)
        .collect();
    for (v, &keep) in labels.iter_mut().zip(&label_mask) {
        if !keep {
            *v = 0.0;
        }
    }
    SampleBatch::new(
        features,
        presence,
        Tensor::matrix(rows, d, labels)?,
        label_mask,
        per_trial,
    )
}

/// Generates train/val/test splits (split by trial) and their manifest.
pub fn generate(cfg: &GeneratorConfig, seed: u64) -> Result<DatasetBundle> {
    cfg.validate()?;
    let maps = cfg.profile_maps(seed);
    let train = generate_split(cfg, &maps, Split::Train, cfg.train_trials, seed)?;
    let val = generate_split(cfg, &maps, Split::Val, cfg.val_trials, seed)?;
    let test = generate_split(cfg, &maps, Split::Test, cfg.test_trials, seed)?;
    let spec = cfg.window_spec()?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        modalities: cfg
            .modalities
            .iter()
            .map(|m| ModalityInfo {
                name: m.name.clone(),
                d_raw: m.d_raw,
                lag_steps: m.lag_steps,
                noise_std: m.noise_std,
            })
            .collect(),
        dimensions: cfg.dimensions.clone(),
        window_len_s: cfg.window_len_s,
        step_s: cfg.step_s,
        sample_rate: cfg.sample_rate,
        window_samples: spec.len,
        windows_per_trial: cfg.windows_per_trial()?,
        splits: SplitSizes {
            train: train.len(),
            val: val.len(),
            test: test.len(),
        },
        seed,
        generator: Some(cfg.clone()),
    };
    Ok(DatasetBundle {
        manifest,
        train,
        val,
        test,
    })
}

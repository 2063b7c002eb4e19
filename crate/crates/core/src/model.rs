//! The full hierarchical model, its ablations and the baseline, behind one
//! forward/loss interface.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{pairwise_alignment_loss, AlignmentConfig};
use crate::baseline::mean_pool;
use crate::data::SampleBatch;
use crate::emotion_moe::{EmotionBank, EmotionOutput};
use crate::encoders::{EncoderBank, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::{total_loss, HeadMode, Heads};
use crate::modality_moe::{ModalityBank, ModalityBankOutput, Routing};
use crate::params::{Bound, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

const PARAM_STREAM: u64 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Himoe,
    Baseline,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "himoe" => Ok(ModelKind::Himoe),
            "baseline" => Ok(ModelKind::Baseline),
            other => Err(Error::config(format!("unknown model `{other}` (himoe|baseline)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Himoe => "himoe",
            ModelKind::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub modality_experts: usize,
    pub emotion_experts: usize,
    pub routing: Routing,
    /// `false` wires the fused vector straight to the heads.
    pub emotion_bank: bool,
    pub align: AlignmentConfig,
    pub align_enabled: bool,
    pub lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Himoe,
            encoder: EncoderConfig::default(),
            modality_experts: 4,
            emotion_experts: 6,
            routing: Routing::Soft,
            emotion_bank: true,
            align: AlignmentConfig::default(),
            align_enabled: true,
            lambda: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.align.validate()?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("loss.lambda must be >= 0, got {}", self.lambda)));
        }
        if self.encoder.hidden == 0 || self.encoder.out_dim == 0 {
            return Err(Error::config("encoder widths must be positive"));
        }
        if self.modality_experts == 0 || self.emotion_experts == 0 {
            return Err(Error::config("expert counts must be positive"));
        }
        Ok(())
    }

    /// Whether the alignment term is computed at all.
    pub fn uses_alignment(&self) -> bool {
        self.kind == ModelKind::Himoe && self.align_enabled && self.lambda != 0.0
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    encoders: EncoderBank,
    modality: Option<ModalityBank>,
    emotion: Option<EmotionBank>,
    heads: Heads,
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `B x D` head outputs.
    pub preds: Var,
    /// Encoder outputs before presence masking.
    pub encoded: Vec<Var>,
    pub bank: Option<ModalityBankOutput>,
    pub emotion: Option<EmotionOutput>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub emo: Var,
    pub align: Option<Var>,
    pub total: Var,
}

impl Model {
    /// Builds the model and its freshly initialised parameters.
    pub fn new(cfg: &ModelConfig, input_dims: &[usize], head_modes: &[HeadMode], seed: u64) -> Result<(Model, ParamSet)> {
        cfg.validate()?;
        if input_dims.is_empty() {
            return Err(Error::config("at least one modality is required"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(PARAM_STREAM);
        let mut params = ParamSet::new();
        let d = cfg.encoder.out_dim;
        let encoders = EncoderBank::new(&mut params, input_dims, cfg.encoder, &mut rng);
        let (modality, emotion) = match cfg.kind {
            ModelKind::Baseline => (None, None),
            ModelKind::Himoe => {
                let bank = ModalityBank::new(&mut params, input_dims.len(), d, cfg.modality_experts, cfg.routing, &mut rng)?;
                let emo = if cfg.emotion_bank {
                    Some(EmotionBank::new(&mut params, d, cfg.emotion_experts, &mut rng)?)
                } else {
                    None
                };
                (Some(bank), emo)
            }
        };
        let heads = Heads::new(&mut params, d, head_modes, &mut rng)?;
        let model = Model {
            cfg: cfg.clone(),
            encoders,
            modality,
            emotion,
            heads,
        };
        Ok((model, params))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn encoders(&self) -> &EncoderBank {
        &self.encoders
    }

    pub fn modality_bank(&self) -> Option<&ModalityBank> {
        self.modality.as_ref()
    }

    pub fn emotion_bank(&self) -> Option<&EmotionBank> {
        self.emotion.as_ref()
    }

    pub fn heads(&self) -> &Heads {
        &self.heads
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &SampleBatch) -> Result<Trace> {
        if batch.n_modalities() != self.encoders.len() {
            return Err(Error::Dimension {
                op: "model forward",
                lhs: vec![self.encoders.len()],
                rhs: vec![batch.n_modalities()],
            });
        }
        let mut encoded = Vec::with_capacity(batch.n_modalities());
        let mut masked = Vec::with_capacity(batch.n_modalities());
        for (m, feat) in batch.features.iter().enumerate() {
            let keep = batch.presence.column(m);
            // Raw inputs are re-masked here so that whatever sits in an
            // absent row never reaches the network.
            let x = tape.constant(feat.clone());
            let x = tape.mask_rows(x, &keep)?;
            let z = self.encoders.encode(tape, p, m, x)?;
            masked.push(tape.mask_rows(z, &keep)?);
            encoded.push(z);
        }
        match (&self.modality, self.cfg.kind) {
            (Some(bank), ModelKind::Himoe) => {
                let out = bank.forward(tape, p, &masked, &batch.presence)?;
                let (e, emotion) = match &self.emotion {
                    Some(emo) => {
                        let o = emo.forward(tape, p, out.z)?;
                        (o.e, Some(o))
                    }
                    None => (out.z, None),
                };
                let preds = self.heads.predict(tape, p, e)?;
                Ok(Trace {
                    preds,
                    encoded,
                    bank: Some(out),
                    emotion,
                })
            }
            _ => {
                let pooled = mean_pool(tape, &masked, &batch.presence)?;
                let preds = self.heads.predict(tape, p, pooled)?;
                Ok(Trace {
                    preds,
                    encoded,
                    bank: None,
                    emotion: None,
                })
            }
        }
    }

    pub fn loss(&self, tape: &mut Tape, batch: &SampleBatch, trace: &Trace) -> Result<LossTerms> {
        let emo = self.heads.emo_loss(tape, trace.preds, &batch.labels, &batch.label_mask)?;
        let align = if self.cfg.uses_alignment() && trace.encoded.len() >= 2 {
            Some(pairwise_alignment_loss(tape, &trace.encoded, &batch.presence, &self.cfg.align)?)
        } else {
            None
        };
        let total = total_loss(tape, emo, align, self.cfg.lambda)?;
        Ok(LossTerms { emo, align, total })
    }

    /// Head outputs for a whole batch, without gradients.
    pub fn predict(&self, params: &ParamSet, batch: &SampleBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let trace = self.forward(&mut tape, &p, batch)?;
        Ok(tape.value(trace.preds).clone())
    }
}

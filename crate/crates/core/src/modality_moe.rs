//! First hierarchy layer: per-modality expert banks with soft gating and an
//! attention-based fusion of the modality outputs.
//!
//! For modality `m` with input `x` (the zero vector when absent):
//!
//! ```text
//! α   = softmax(x · W_g + b_g)            (K weights)
//! z_m = Σ_k α[k] · E_k(x)
//! u_m = z_m + (present ? p_m⁺ : p_m⁻)
//! w   = softmax_m(q · u_m / √d)
//! z   = Σ_m w[m] · u_m
//! ```
//!
//! `W_g` is stored as `d x K` (the transpose of the usual `K x d` layout) so
//! that batches multiply on the right.

use rand::Rng;

use crate::data::PresenceMask;
use crate::error::{Error, Result};
use crate::params::{glorot, normal, Bound, ParamId, ParamSet, TwoLayer};
use crate::tensor::{softmax, Tape, Tensor, Var};

/// How expert weights are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Routing {
    /// Learned gate `softmax(x · W_g + b_g)`.
    Soft,
    /// Constant `1/K` for every expert (ablation).
    Uniform,
}

#[derive(Clone, Debug)]
pub struct Gate {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    pub query: ParamId,
    pub present: Vec<ParamId>,
    pub absent: Vec<ParamId>,
}

#[derive(Clone, Debug)]
pub struct ModalityBank {
    gates: Vec<Gate>,
    experts: Vec<Vec<TwoLayer>>,
    fusion: FusionParams,
    d: usize,
    k: usize,
    routing: Routing,
}

/// Tape handles produced by [`ModalityBank::forward`].
#[derive(Clone, Debug)]
pub struct ModalityBankOutput {
    /// Fused `B x d` representation.
    pub z: Var,
    /// `B x K` gate weights per modality.
    pub alphas: Vec<Var>,
    /// `B x d` expert mixtures per modality.
    pub mixtures: Vec<Var>,
    /// `B x M` fusion attention weights.
    pub fusion_weights: Var,
}

impl ModalityBank {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        n_modalities: usize,
        d: usize,
        k: usize,
        routing: Routing,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 || d == 0 || n_modalities == 0 {
            return Err(Error::config(format!(
                "modality bank needs K >= 1, d >= 1 and M >= 1 (got K={k}, d={d}, M={n_modalities})"
            )));
        }
        let mut gates = Vec::with_capacity(n_modalities);
        let mut experts = Vec::with_capacity(n_modalities);
        for m in 0..n_modalities {
            gates.push(Gate {
                w: params.add(format!("moe.{m}.gate.w"), glorot(d, k, rng)),
                b: params.add(format!("moe.{m}.gate.b"), Tensor::zeros(&[1, k])),
            });
            experts.push(
                (0..k)
                    .map(|e| TwoLayer::new(params, &format!("moe.{m}.expert.{e}"), (d, d, d), rng))
                    .collect(),
            );
        }
        let query = params.add("fuse.query", glorot(d, 1, rng));
        let mut present = Vec::with_capacity(n_modalities);
        let mut absent = Vec::with_capacity(n_modalities);
        for m in 0..n_modalities {
            present.push(params.add(format!("fuse.{m}.present"), normal(&[1, d], 0.1, rng)));
            absent.push(params.add(format!("fuse.{m}.absent"), normal(&[1, d], 0.1, rng)));
        }
        Ok(ModalityBank {
            gates,
            experts,
            fusion: FusionParams { query, present, absent },
            d,
            k,
            routing,
        })
    }

    pub fn n_modalities(&self) -> usize {
        self.gates.len()
    }

    pub fn experts_per_modality(&self) -> usize {
        self.k
    }

    pub fn routing(&self) -> Routing {
        self.routing
    }

    pub fn gate(&self, m: usize) -> &Gate {
        &self.gates[m]
    }

    pub fn expert(&self, m: usize, k: usize) -> &TwoLayer {
        &self.experts[m][k]
    }

    pub fn fusion(&self) -> &FusionParams {
        &self.fusion
    }

    /// `B x K` routing weights for modality `m`.
    pub fn gate_weights(&self, tape: &mut Tape, p: &Bound, m: usize, x: Var) -> Result<Var> {
        match self.routing {
            Routing::Soft => {
                let g = &self.gates[m];
                let logits = tape.affine(x, p[g.w], p[g.b])?;
                Ok(tape.softmax(logits))
            }
            Routing::Uniform => {
                let rows = tape.value(x).rows();
                Ok(tape.constant(Tensor::full(&[rows, self.k], 1.0 / self.k as f64)))
            }
        }
    }

    /// `Σ_k α[:, k] · E_k(x)`, every expert evaluated.
    pub fn expert_mix(&self, tape: &mut Tape, p: &Bound, m: usize, x: Var, alpha: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (k, expert) in self.experts[m].iter().enumerate() {
            let out = expert.forward(tape, p, x)?;
            let a = tape.col(alpha, k)?;
            let weighted = tape.mul_col(out, a)?;
            acc = Some(match acc {
                None => weighted,
                Some(prev) => tape.add(prev, weighted)?,
            });
        }
        Ok(acc.expect("K >= 1"))
    }

    /// Attention fusion of the per-modality outputs. Returns `(z, weights)`.
    pub fn fuse(&self, tape: &mut Tape, p: &Bound, z_all: &[Var], presence: &PresenceMask) -> Result<(Var, Var)> {
        if z_all.len() != self.n_modalities() || presence.cols() != z_all.len() {
            return Err(Error::Dimension {
                op: "fuse",
                lhs: vec![self.n_modalities()],
                rhs: vec![z_all.len(), presence.cols()],
            });
        }
        if let Some(&r) = presence.empty_rows().first() {
            return Err(Error::contract(format!("row {r} has no present modality to fuse")));
        }
        let rows = presence.rows();
        let scale = 1.0 / (self.d as f64).sqrt();
        let mut tokens = Vec::with_capacity(z_all.len());
        let mut scores = Vec::with_capacity(z_all.len());
        for (m, &z_m) in z_all.iter().enumerate() {
            let here = presence.column(m);
            let gone: Vec<bool> = here.iter().map(|b| !b).collect();
            let pres = tape.broadcast_rows(p[self.fusion.present[m]], rows)?;
            let pres = tape.mask_rows(pres, &here)?;
            let abs = tape.broadcast_rows(p[self.fusion.absent[m]], rows)?;
            let abs = tape.mask_rows(abs, &gone)?;
            let emb = tape.add(pres, abs)?;
            let u = tape.add(z_m, emb)?;
            let s = tape.matmul(u, p[self.fusion.query])?;
            scores.push(tape.scale(s, scale));
            tokens.push(u);
        }
        let scores = tape.concat_cols(&scores)?;
        let weights = tape.softmax(scores);
        let mut z: Option<Var> = None;
        for (m, &u) in tokens.iter().enumerate() {
            let w = tape.col(weights, m)?;
            let wu = tape.mul_col(u, w)?;
            z = Some(match z {
                None => wu,
                Some(prev) => tape.add(prev, wu)?,
            });
        }
        Ok((z.expect("M >= 1"), weights))
    }

    /// Full first-layer pass over `B x d` inputs, one per modality, whose
    /// absent rows are already zero.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, inputs: &[Var], presence: &PresenceMask) -> Result<ModalityBankOutput> {
        let mut alphas = Vec::with_capacity(inputs.len());
        let mut mixtures = Vec::with_capacity(inputs.len());
        for (m, &x) in inputs.iter().enumerate() {
            let alpha = self.gate_weights(tape, p, m, x)?;
            mixtures.push(self.expert_mix(tape, p, m, x, alpha)?);
            alphas.push(alpha);
        }
        let (z, fusion_weights) = self.fuse(tape, p, &mixtures, presence)?;
        Ok(ModalityBankOutput {
            z,
            alphas,
            mixtures,
            fusion_weights,
        })
    }

    /// Gate weights for one input vector, outside any tape.
    pub fn gate_weights_vec(&self, params: &ParamSet, m: usize, x: &[f64]) -> Vec<f64> {
        match self.routing {
            Routing::Soft => {
                let g = &self.gates[m];
                softmax(&crate::params::affine_vec(params.get(g.w), params.get(g.b), x))
            }
            Routing::Uniform => vec![1.0 / self.k as f64; self.k],
        }
    }

    /// The weights an absent modality always receives: `softmax(b_g)`.
    pub fn default_weights(&self, params: &ParamSet, m: usize) -> Vec<f64> {
        match self.routing {
            Routing::Soft => softmax(params.get(self.gates[m].b).data()),
            Routing::Uniform => vec![1.0 / self.k as f64; self.k],
        }
    }
}

//! Per-modality encoders into the shared feature width `d`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet, TwoLayer};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub out_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { hidden: 64, out_dim: 32 }
    }
}

/// One unshared `in -> hidden -> d` encoder per modality.
#[derive(Clone, Debug)]
pub struct EncoderBank {
    nets: Vec<TwoLayer>,
    out_dim: usize,
}

impl EncoderBank {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, input_dims: &[usize], cfg: EncoderConfig, rng: &mut R) -> Self {
        let nets = input_dims
            .iter()
            .enumerate()
            .map(|(m, &n)| TwoLayer::new(params, &format!("enc.{m}"), (n, cfg.hidden, cfg.out_dim), rng))
            .collect();
        EncoderBank {
            nets,
            out_dim: cfg.out_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn net(&self, m: usize) -> &TwoLayer {
        &self.nets[m]
    }

    /// Encodes the `B x n_m` windows of modality `m` into `B x d`.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, m: usize, x: Var) -> Result<Var> {
        let net = &self.nets[m];
        let cols = tape.value(x).cols();
        if cols != net.in_dim() {
            return Err(Error::Dimension {
                op: "encode",
                lhs: vec![net.in_dim()],
                rhs: vec![tape.value(x).rows(), cols],
            });
        }
        net.forward(tape, p, x)
    }

    /// Encodes a single window outside any tape.
    pub fn encode_window(&self, params: &ParamSet, m: usize, window: &[f64]) -> Result<Vec<f64>> {
        let net = &self.nets[m];
        if window.len() != net.in_dim() {
            return Err(Error::Dimension {
                op: "encode",
                lhs: vec![net.in_dim()],
                rhs: vec![window.len()],
            });
        }
        Ok(net.apply(params, window))
    }

    /// `max_i (sum_j |W2[j, i]| + |b2[i]|)`: no output coordinate can exceed
    /// this because the hidden layer is bounded by `tanh`.
    pub fn output_bound(&self, params: &ParamSet, m: usize) -> f64 {
        let l2 = &self.nets[m].l2;
        let (w, b) = (params.get(l2.w), params.get(l2.b));
        (0..w.cols())
            .map(|i| (0..w.rows()).map(|j| w.get(j, i).abs()).sum::<f64>() + b.data()[i].abs())
            .fold(0.0, f64::max)
    }
}

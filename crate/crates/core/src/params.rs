//! Named parameter storage and the small layer building blocks shared by
//! every model component.

use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
///
/// Insertion order is the canonical order for checkpoints, optimiser state
/// and gradient checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor, keeping names. Shapes must match.
    pub fn load(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::contract(format!(
                "expected {} tensors, got {}",
                self.tensors.len(),
                tensors.len()
            )));
        }
        for (i, (old, new)) in self.tensors.iter().zip(&tensors).enumerate() {
            if old.len() != new.len() || old.rows() != new.rows() {
                return Err(Error::Dimension {
                    op: "load",
                    lhs: old.shape().to_vec(),
                    rhs: new.shape().to_vec(),
                })
                .map_err(|e| Error::contract(format!("{}: {e}", self.names[i])));
            }
        }
        self.tensors = tensors;
        Ok(())
    }

    /// Registers every tensor as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.param(t.clone())).collect())
    }

    /// Registers every tensor as a constant leaf (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.constant(t.clone())).collect())
    }
}

/// Tape handles for every tensor of a [`ParamSet`], indexable by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Glorot-uniform matrix of shape `fan_in x fan_out`.
pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    crate::tensor::uniform(&[fan_in, fan_out], -limit, limit, rng)
}

pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

/// `x · W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = params.add(format!("{name}.w"), glorot(fan_in, fan_out, rng));
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.affine(x, p[self.w], p[self.b])
    }
}

/// Two affine layers with `tanh` between them.
#[derive(Clone, Debug)]
pub struct TwoLayer {
    pub l1: Linear,
    pub l2: Linear,
}

impl TwoLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        dims: (usize, usize, usize),
        rng: &mut R,
    ) -> Self {
        TwoLayer {
            l1: Linear::new(params, &format!("{name}.l1"), dims.0, dims.1, rng),
            l2: Linear::new(params, &format!("{name}.l2"), dims.1, dims.2, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.l1.fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.l2.fan_out
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, p, x)?;
        let h = tape.tanh(h);
        self.l2.forward(tape, p, h)
    }

    /// Evaluates the network on a single input vector outside any tape.
    pub fn apply(&self, params: &ParamSet, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = affine_vec(params.get(self.l1.w), params.get(self.l1.b), x)
            .into_iter()
            .map(f64::tanh)
            .collect();
        affine_vec(params.get(self.l2.w), params.get(self.l2.b), &h)
    }
}

/// `x · W + b` for a single row vector.
pub fn affine_vec(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = w.cols();
    let mut out = b.data().to_vec();
    for (i, &xi) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wv;
        }
    }
    debug_assert_eq!(out.len(), cols);
    out
}

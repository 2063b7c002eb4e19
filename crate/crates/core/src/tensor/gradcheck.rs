//! Central finite-difference oracle for tape gradients.

use super::dense::Tensor;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic and numerical gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|)` over every coordinate.
    pub max_rel_error: f64,
    /// Per-parameter maximum of the same quantity.
    pub per_param: Vec<f64>,
    /// `(parameter, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
}

impl GradCheckReport {
    /// Parameters whose error exceeds `tol`.
    pub fn offenders(&self, tol: f64) -> Vec<usize> {
        self.per_param
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > tol || e.is_nan())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Evaluates a scalar objective built on a fresh tape.
pub fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::contract(format!(
            "objective must be scalar, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Value and reverse-mode gradient of the objective.
pub fn analytic_gradients<F>(f: &F, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, vars.iter().map(|&v| grads.wrt(v)).collect()))
}

/// Checks `analytic` against central differences of step `h`.
pub fn compare_gradients<F>(f: &F, params: &[Tensor], analytic: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!("finite-difference step must be positive, got {h}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::contract("one analytic gradient per parameter required"));
    }
    let first = evaluate(f, params)?;
    let second = evaluate(f, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::contract(format!(
            "objective is not deterministic: {first} vs {second}"
        )));
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut worst = (0, 0);
    let mut max_rel_error: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        let mut param_max: f64 = 0.0;
        for idx in 0..work[pi].len() {
            let orig = work[pi].data()[idx];
            work[pi].data_mut()[idx] = orig + h;
            let plus = evaluate(f, &work)?;
            work[pi].data_mut()[idx] = orig - h;
            let minus = evaluate(f, &work)?;
            work[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[idx];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            let err = if err.is_nan() { f64::INFINITY } else { err };
            param_max = param_max.max(err);
            if err > max_rel_error {
                max_rel_error = err;
                worst = (pi, idx);
            }
        }
        per_param.push(param_max);
    }
    Ok(GradCheckReport {
        max_rel_error,
        per_param,
        worst,
    })
}

/// Gradient check of the tape's reverse pass against central differences.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, analytic) = analytic_gradients(&f, params)?;
    compare_gradients(&f, params, &analytic, h)
}

//! Zero-imputation late-fusion reference: per-modality encoders, mean
//! pooling over the present modalities, then the shared heads.

use crate::data::PresenceMask;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Row-wise mean of `encoded[m]` over the modalities present in that row.
/// Absent rows of `encoded` must already be zero.
pub fn mean_pool(tape: &mut Tape, encoded: &[Var], presence: &PresenceMask) -> Result<Var> {
    if encoded.len() != presence.cols() || encoded.is_empty() {
        return Err(Error::Dimension {
            op: "mean_pool",
            lhs: vec![encoded.len()],
            rhs: vec![presence.rows(), presence.cols()],
        });
    }
    if let Some(&r) = presence.empty_rows().first() {
        return Err(Error::contract(format!("row {r} has no present modality to pool")));
    }
    let mut sum = encoded[0];
    for &z in &encoded[1..] {
        sum = tape.add(sum, z)?;
    }
    let inv: Vec<f64> = (0..presence.rows())
        .map(|r| 1.0 / presence.present_count(r) as f64)
        .collect();
    let inv = tape.constant(Tensor::matrix(presence.rows(), 1, inv)?);
    tape.mul_col(sum, inv)
}

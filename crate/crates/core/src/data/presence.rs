use rand::Rng;

use crate::error::{Error, Result};

/// Largest missing rate covered by the robustness sweep; higher rates are
/// accepted but flagged by callers.
pub const STUDIED_MAX_RATE: f64 = 0.4;

/// `B x M` boolean matrix marking which modalities carry data per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PresenceMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl PresenceMask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Dimension {
                op: "presence",
                lhs: vec![rows, cols],
                rhs: vec![bits.len()],
            });
        }
        Ok(PresenceMask { rows, cols, bits })
    }

    pub fn all_present(rows: usize, cols: usize) -> Self {
        PresenceMask {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    /// Every row carries the same pattern.
    pub fn uniform_pattern(rows: usize, pattern: &[bool]) -> Self {
        let bits = (0..rows).flat_map(|_| pattern.iter().copied()).collect();
        PresenceMask {
            rows,
            cols: pattern.len(),
            bits,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, m: usize) -> bool {
        self.bits[row * self.cols + m]
    }

    pub fn set(&mut self, row: usize, m: usize, present: bool) {
        self.bits[row * self.cols + m] = present;
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.bits[row * self.cols..(row + 1) * self.cols]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Presence of modality `m` for every row.
    pub fn column(&self, m: usize) -> Vec<bool> {
        (0..self.rows).map(|r| self.get(r, m)).collect()
    }

    /// Pattern of `row` as a binary string, modality 0 first (`"1011"`).
    pub fn pattern(&self, row: usize) -> String {
        self.row(row).iter().map(|&p| if p { '1' } else { '0' }).collect()
    }

    pub fn absent_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.bits.iter().filter(|&&b| !b).count() as f64 / self.bits.len() as f64
    }

    pub fn present_count(&self, row: usize) -> usize {
        self.row(row).iter().filter(|&&b| b).count()
    }

    /// Rows with no present modality.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.rows).filter(|&r| self.present_count(r) == 0).collect()
    }

    /// Cell-wise AND.
    pub fn intersect(&self, other: &PresenceMask) -> Result<PresenceMask> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Dimension {
                op: "presence intersect",
                lhs: vec![self.rows, self.cols],
                rhs: vec![other.rows, other.cols],
            });
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        Ok(PresenceMask {
            rows: self.rows,
            cols: self.cols,
            bits,
        })
    }

    pub fn select(&self, idx: &[usize]) -> PresenceMask {
        let bits = idx.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        PresenceMask {
            rows: idx.len(),
            cols: self.cols,
            bits,
        }
    }

    /// Forces one uniformly chosen modality present in every all-absent row.
    pub fn repair<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.cols == 0 {
            return;
        }
        for r in 0..self.rows {
            if self.present_count(r) == 0 {
                let m = rng.random_range(0..self.cols);
                self.set(r, m, true);
            }
        }
    }
}

/// Draws a presence mask with every cell independently absent with
/// probability `rate`, then repairs all-absent rows.
pub fn sample_presence<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Result<PresenceMask> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::config(format!("missing rate must lie in [0, 1], got {rate}")));
    }
    let bits = (0..rows * cols).map(|_| rng.random::<f64>() >= rate).collect();
    let mut mask = PresenceMask { rows, cols, bits };
    mask.repair(rng);
    Ok(mask)
}

/// Missing rates `0.00, 0.05, ..., 0.40`.
pub fn standard_rate_grid() -> Vec<f64> {
    (0..=8).map(|i| i as f64 * 0.05).collect()
}

use std::fmt;

use super::io::DatasetManifest;
use super::presence::PresenceMask;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Windowed samples of one split.
///
/// `features[m]` is `B x n_m`; rows whose modality is absent are exactly
/// zero. Label values under a `false` mask cell are stored as `0.0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub features: Vec<Tensor>,
    pub presence: PresenceMask,
    pub labels: Tensor,
    pub label_mask: Vec<bool>,
    pub windows_per_trial: usize,
}

impl SampleBatch {
    pub fn new(
        features: Vec<Tensor>,
        presence: PresenceMask,
        labels: Tensor,
        label_mask: Vec<bool>,
        windows_per_trial: usize,
    ) -> Result<Self> {
        let b = labels.rows();
        for f in &features {
            if f.rows() != b {
                return Err(Error::Dimension {
                    op: "sample batch",
                    lhs: vec![b],
                    rhs: f.shape().to_vec(),
                });
            }
        }
        if presence.rows() != b || presence.cols() != features.len() || label_mask.len() != labels.len() {
            return Err(Error::Dimension {
                op: "sample batch",
                lhs: vec![b, features.len()],
                rhs: vec![presence.rows(), presence.cols(), label_mask.len()],
            });
        }
        let mut batch = SampleBatch {
            features,
            presence,
            labels,
            label_mask,
            windows_per_trial,
        };
        batch.zero_absent();
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.labels.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_modalities(&self) -> usize {
        self.features.len()
    }

    pub fn d_emo(&self) -> usize {
        self.labels.cols()
    }

    pub fn label_mask_at(&self, row: usize, dim: usize) -> bool {
        self.label_mask[row * self.d_emo() + dim]
    }

    /// Enforces the zero-vector protocol on absent modalities.
    pub fn zero_absent(&mut self) {
        for (m, feat) in self.features.iter_mut().enumerate() {
            let cols = feat.cols();
            let data = feat.data_mut();
            for r in 0..self.presence.rows() {
                if !self.presence.get(r, m) {
                    data[r * cols..(r + 1) * cols].iter_mut().for_each(|x| *x = 0.0);
                }
            }
        }
    }

    /// Rows `idx`, in order.
    pub fn select(&self, idx: &[usize]) -> SampleBatch {
        let pick = |t: &Tensor| {
            let c = t.cols();
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                data.extend_from_slice(t.row(i));
            }
            Tensor::matrix(idx.len(), c, data).expect("row gather keeps width")
        };
        let d = self.d_emo();
        let label_mask = idx
            .iter()
            .flat_map(|&i| self.label_mask[i * d..(i + 1) * d].iter().copied())
            .collect();
        SampleBatch {
            features: self.features.iter().map(pick).collect(),
            presence: self.presence.select(idx),
            labels: pick(&self.labels),
            label_mask,
            windows_per_trial: self.windows_per_trial,
        }
    }

    /// Intersects the stored presence with `mask` and zeroes newly absent rows.
    pub fn masked(&self, mask: &PresenceMask) -> Result<SampleBatch> {
        let mut out = self.clone();
        out.presence = self.presence.intersect(mask)?;
        out.zero_absent();
        Ok(out)
    }

    /// Labels as `B x D` rows, for metrics.
    pub fn label_column(&self, dim: usize) -> Vec<f64> {
        (0..self.len()).map(|r| self.labels.get(r, dim)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Train/val/test batches plus the manifest that describes them.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub manifest: DatasetManifest,
    pub train: SampleBatch,
    pub val: SampleBatch,
    pub test: SampleBatch,
}

impl DatasetBundle {
    pub fn split(&self, split: Split) -> &SampleBatch {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.train.features.iter().map(Tensor::cols).collect()
    }

    pub fn num_cells(&self) -> usize {
        Split::ALL
            .iter()
            .map(|&s| {
                let b = self.split(s);
                b.features.iter().map(Tensor::len).sum::<usize>() + b.labels.len() * 2 + b.presence.bits().len()
            })
            .sum()
    }
}

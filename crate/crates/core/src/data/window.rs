use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Window geometry in samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub len: usize,
    pub step: usize,
}

impl WindowSpec {
    pub fn from_seconds(window_len_s: f64, step_s: f64, sample_rate: f64) -> Result<Self> {
        if !(step_s > 0.0) {
            return Err(Error::config(format!("window step must be positive, got {step_s} s")));
        }
        if !(window_len_s > 0.0) || !(sample_rate > 0.0) {
            return Err(Error::config(format!(
                "window length and sample rate must be positive, got {window_len_s} s at {sample_rate} Hz"
            )));
        }
        let len = (window_len_s * sample_rate).round() as usize;
        let step = (step_s * sample_rate).round() as usize;
        if len == 0 || step == 0 {
            return Err(Error::config(format!(
                "window of {window_len_s} s / step {step_s} s is shorter than one sample at {sample_rate} Hz"
            )));
        }
        Ok(WindowSpec { len, step })
    }

    /// `floor((n - len) / step) + 1`, or an error when the trial is too short.
    pub fn count(&self, n_samples: usize) -> Result<usize> {
        if self.len > n_samples {
            return Err(Error::config(format!(
                "window of {} samples is longer than the {n_samples}-sample trial",
                self.len
            )));
        }
        Ok((n_samples - self.len) / self.step + 1)
    }

    /// Index of the last sample of window `w`; the window's label is read there.
    pub fn end_index(&self, w: usize) -> usize {
        w * self.step + self.len - 1
    }
}

/// Cuts a `T x d` stream into overlapping windows, each flattened row-major
/// (time-major) into one row of the result.
pub fn slide_windows(stream: &Tensor, window_len_s: f64, step_s: f64, sample_rate: f64) -> Result<Tensor> {
    let spec = WindowSpec::from_seconds(window_len_s, step_s, sample_rate)?;
    windows(stream, spec)
}

pub fn windows(stream: &Tensor, spec: WindowSpec) -> Result<Tensor> {
    let (t, d) = (stream.rows(), stream.cols());
    let count = spec.count(t)?;
    let width = spec.len * d;
    let mut out = Vec::with_capacity(count * width);
    for w in 0..count {
        let start = w * spec.step * d;
        out.extend_from_slice(&stream.data()[start..start + width]);
    }
    Tensor::matrix(count, width, out)
}

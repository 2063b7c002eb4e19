//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` plus, for each split,
//! `<split>.<modality>.csv` (header `f0..f{n-1}`), `<split>.labels.csv`
//! (header = dimension names, empty cell = masked label) and
//! `<split>.presence.csv` (header = modality names, cells `0`/`1`).
//! Floats carry at most nine significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::batch::{DatasetBundle, SampleBatch, Split};
use super::presence::PresenceMask;
use super::synth::GeneratorConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityInfo {
    pub name: String,
    pub d_raw: usize,
    pub lag_steps: usize,
    pub noise_std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub modalities: Vec<ModalityInfo>,
    pub dimensions: Vec<String>,
    pub window_len_s: f64,
    pub step_s: f64,
    pub sample_rate: f64,
    pub window_samples: usize,
    pub windows_per_trial: usize,
    pub splits: SplitSizes,
    pub seed: u64,
    /// Full generator configuration when the data is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
}

impl DatasetManifest {
    pub fn feature_width(&self, m: usize) -> usize {
        self.modalities[m].d_raw * self.window_samples
    }
}

/// Rounds to nine significant digits.
pub fn quantize(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

/// Shortest decimal text that parses back to `quantize(v)`.
pub fn format_float(v: f64) -> String {
    let q = quantize(v);
    let a = q.abs();
    if q == 0.0 {
        "0".to_string()
    } else if (1e-5..1e15).contains(&a) {
        format!("{q}")
    } else {
        format!("{q:e}")
    }
}

fn csv_path(dir: &Path, split: Split, part: &str) -> PathBuf {
    dir.join(format!("{}.{part}.csv", split.name()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_matrix(path: &Path, header: &[String], t: &Tensor) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|&v| format_float(v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    write_file(path, &s)
}

fn write_split(dir: &Path, manifest: &DatasetManifest, split: Split, batch: &SampleBatch) -> Result<()> {
    for (m, info) in manifest.modalities.iter().enumerate() {
        let header: Vec<String> = (0..batch.features[m].cols()).map(|i| format!("f{i}")).collect();
        write_matrix(&csv_path(dir, split, &info.name), &header, &batch.features[m])?;
    }

    let d = batch.d_emo();
    let mut s = manifest.dimensions.join(",");
    s.push('\n');
    for r in 0..batch.len() {
        let row: Vec<String> = (0..d)
            .map(|j| {
                if batch.label_mask_at(r, j) {
                    format_float(batch.labels.get(r, j))
                } else {
                    String::new()
                }
            })
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    write_file(&csv_path(dir, split, "labels"), &s)?;

    let names: Vec<&str> = manifest.modalities.iter().map(|m| m.name.as_str()).collect();
    let mut s = names.join(",");
    s.push('\n');
    for r in 0..batch.len() {
        let row: Vec<&str> = batch.presence.row(r).iter().map(|&p| if p { "1" } else { "0" }).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    write_file(&csv_path(dir, split, "presence"), &s)
}

/// Writes the bundle into `dir`, creating it if needed.
pub fn write_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(&bundle.manifest).expect("manifest serialises");
    write_file(&dir.join(MANIFEST_FILE), &(json + "\n"))?;
    for split in Split::ALL {
        write_split(dir, &bundle.manifest, split, bundle.split(split))?;
    }
    Ok(())
}

struct Csv {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: PathBuf) -> Result<Csv> {
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(&path, "missing file"),
        _ => Error::io(&path, e),
    })?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(&path, "empty file"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok(Csv { path, header, rows })
}

impl Csv {
    fn expect_header(&self, expected: &[String]) -> Result<()> {
        if self.header != expected {
            return Err(Error::format(
                &self.path,
                format!("header mismatch: expected {:?}, found {:?}", expected, self.header),
            ));
        }
        Ok(())
    }

    fn expect_rows(&self, n: usize) -> Result<()> {
        if self.rows.len() != n {
            return Err(Error::format(
                &self.path,
                format!("row-count mismatch: manifest says {n}, file has {}", self.rows.len()),
            ));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.header.len() {
                return Err(Error::format(
                    &self.path,
                    format!("row {} has {} fields, header has {}", i + 1, r.len(), self.header.len()),
                ));
            }
        }
        Ok(())
    }

    fn parse_f64(&self, row: usize, cell: &str) -> Result<f64> {
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::format(&self.path, format!("row {}: bad number {cell:?}", row + 1)))
    }
}

fn read_split(dir: &Path, manifest: &DatasetManifest, split: Split) -> Result<SampleBatch> {
    let n = manifest.splits.get(split);
    let mut features = Vec::with_capacity(manifest.modalities.len());
    for (m, info) in manifest.modalities.iter().enumerate() {
        let csv = read_csv(csv_path(dir, split, &info.name))?;
        let width = manifest.feature_width(m);
        let header: Vec<String> = (0..width).map(|i| format!("f{i}")).collect();
        csv.expect_header(&header)?;
        csv.expect_rows(n)?;
        let mut data = Vec::with_capacity(n * width);
        for (i, row) in csv.rows.iter().enumerate() {
            for cell in row {
                data.push(csv.parse_f64(i, cell)?);
            }
        }
        features.push(Tensor::matrix(n, width, data)?);
    }

    let csv = read_csv(csv_path(dir, split, "labels"))?;
    csv.expect_header(&manifest.dimensions)?;
    csv.expect_rows(n)?;
    let d = manifest.dimensions.len();
    let mut labels = Vec::with_capacity(n * d);
    let mut label_mask = Vec::with_capacity(n * d);
    for (i, row) in csv.rows.iter().enumerate() {
        for cell in row {
            if cell.is_empty() {
                labels.push(0.0);
                label_mask.push(false);
            } else {
                labels.push(csv.parse_f64(i, cell)?);
                label_mask.push(true);
            }
        }
    }

    let csv = read_csv(csv_path(dir, split, "presence"))?;
    let names: Vec<String> = manifest.modalities.iter().map(|m| m.name.clone()).collect();
    csv.expect_header(&names)?;
    csv.expect_rows(n)?;
    let mut bits = Vec::with_capacity(n * names.len());
    for (i, row) in csv.rows.iter().enumerate() {
        for cell in row {
            bits.push(match cell.as_str() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::format(
                        &csv.path,
                        format!("row {}: presence must be 0 or 1, got {other:?}", i + 1),
                    ))
                }
            });
        }
    }
    let presence = PresenceMask::new(n, names.len(), bits)?;
    if let Some(&r) = presence.empty_rows().first() {
        return Err(Error::format(&csv.path, format!("row {} has no present modality", r + 1)));
    }

    let batch = SampleBatch::new(
        features,
        presence,
        Tensor::matrix(n, d, labels)?,
        label_mask,
        manifest.windows_per_trial,
    )?;
    Ok(batch)
}

/// Reads a dataset directory written by [`write_dataset`] (or exported by
/// hand in the same layout).
pub fn read_dataset(dir: &Path) -> Result<DatasetBundle> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(&path, "missing file"),
        _ => Error::io(&path, e),
    })?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("invalid manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    let train = read_split(dir, &manifest, Split::Train)?;
    let val = read_split(dir, &manifest, Split::Val)?;
    let test = read_split(dir, &manifest, Split::Test)?;
    Ok(DatasetBundle {
        manifest,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn float_text_examples() {
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(1.5), "1.5");
        assert_eq!(format_float(-0.123456789123), "-0.123456789");
        assert_eq!(format_float(5.0), "5");
        assert_eq!(format_float(1.0e-7), "1e-7");
    }

    proptest! {
        #[test]
        fn formatted_floats_round_trip(v in -1e6f64..1e6) {
            let q = quantize(v);
            prop_assert_eq!(format_float(v).parse::<f64>().unwrap(), q);
            prop_assert_eq!(quantize(q), q);
            prop_assert!((q - v).abs() <= v.abs() * 1e-8);
        }
    }
}

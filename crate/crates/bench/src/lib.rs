//! Shared fixtures for the criterion benches.

use himoe_core::data::generate;
use himoe_core::{DatasetBundle, GeneratorConfig, HeadMode, Model, ModelConfig, ModelKind, ParamSet, SampleBatch};

/// The default synthetic benchmark for one seed.
pub fn dataset(seed: u64) -> DatasetBundle {
    generate(&GeneratorConfig::default(), seed).expect("default generator is valid")
}

/// A freshly initialised model of `kind` sized for `data`.
pub fn model(kind: ModelKind, data: &DatasetBundle) -> (Model, ParamSet) {
    let cfg = ModelConfig {
        kind,
        ..ModelConfig::default()
    };
    let modes = vec![HeadMode::Regression; data.manifest.dimensions.len()];
    Model::new(&cfg, &data.input_dims(), &modes, 0).expect("default model config is valid")
}

/// The first `n` training rows.
pub fn minibatch(data: &DatasetBundle, n: usize) -> SampleBatch {
    let idx: Vec<usize> = (0..n.min(data.train.len())).collect();
    data.train.select(&idx)
}

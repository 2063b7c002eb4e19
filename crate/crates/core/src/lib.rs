//! Hierarchical mixture-of-experts for continuous multimodal emotion
//! regression under missing and lagged modalities.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode gradient tape and a
//!   finite-difference gradient oracle.
//! - [`data`]: synthetic multimodal data with known latent emotion
//!   trajectories, sliding windows, presence masks and a CSV dataset format.
//! - [`encoders`], [`alignment`], [`modality_moe`], [`emotion_moe`],
//!   [`heads`]: the model layers.
//! - [`model`] and [`baseline`]: the full hierarchical model and a
//!   zero-imputation late-fusion reference.
//! - [`metrics`], [`train`], [`experiment`]: evaluation, optimisation and the
//!   experiment drivers behind the command line tool.

pub mod alignment;
pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod emotion_moe;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod heads;
pub mod metrics;
pub mod modality_moe;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use config::RunConfig;
pub use data::{DatasetBundle, DatasetManifest, GeneratorConfig, PresenceMask, SampleBatch, Split};
pub use error::{Error, Result};
pub use heads::HeadMode;
pub use metrics::{DimensionMetrics, MetricsReport};
pub use model::{Model, ModelConfig, ModelKind};
pub use params::ParamSet;
pub use tensor::{Tape, Tensor, Var};

//! Synthetic multimodal data laboratory.
//!
//! Every trial draws a smooth latent emotion trajectory on the 1–9 rating
//! scale; each modality observes that trajectory through its own lag, a
//! fixed random affine map, a `tanh` squashing and Gaussian noise. Streams
//! are cut into sliding windows whose label is the latent value at the
//! window's last sample.

mod batch;
pub mod io;
mod presence;
mod synth;
mod window;

pub use batch::{DatasetBundle, SampleBatch, Split};
pub use io::{format_float, quantize, read_dataset, write_dataset, DatasetManifest, ModalityInfo, SplitSizes};
pub use presence::{standard_rate_grid, sample_presence, PresenceMask, STUDIED_MAX_RATE};
pub use synth::{
    generate, GeneratorConfig, LatentTrajectory, MapKind, ModalityMap, ModalitySpec, ModalityStream,
};
pub use window::{slide_windows, windows, WindowSpec};

/// Ratings above this count as "high" when binarising labels.
pub const BINARY_THRESHOLD: f64 = 5.0;

pub const RATING_MIN: f64 = 1.0;
pub const RATING_MAX: f64 = 9.0;

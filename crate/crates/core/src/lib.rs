pub mod autoencoder;
mod container;
pub mod error;
pub mod features;
pub mod metrics;
pub mod ops;
pub mod pipeline;
pub mod rng;
pub mod scoring;
pub mod sparse;
pub mod tensor;

pub use autoencoder::{ArchSpec, Autoencoder, AutoencoderModel, TapName};
pub use error::{Error, Result};
pub use features::{FeatureMatrix, PatchSource};
pub use metrics::{EvalSummary, ScoredLabel};
pub use pipeline::{ImageRecord, Label, NormStats};
pub use scoring::{AnomalyReport, ScoreConfig};
pub use sparse::{Dictionary, SparseCode};
pub use tensor::{Param, Tensor4};

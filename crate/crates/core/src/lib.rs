//! Mean-bias analysis and mean-residual FP4 GeMM emulation.

pub mod activation;
pub mod decomposition;
pub mod error;
pub mod extreme_stats;
pub mod io;
pub mod linalg;
pub mod mean_residual;
pub mod quantizer;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use activation::Activation;
pub use decomposition::{decompose, Decomposition, RNormalization};
pub use error::{Error, Result};
pub use linalg::{Matrix, TruncatedSvd};
pub use quantizer::{QuantConfig, QuantizedTensor};

//! Desk-scale disentangled representation learning.
//!
//! An MLP autoencoder is trained with three cooperating pieces: finite
//! scalar quantization of the latents, a kernel-density estimate of the
//! latent multiinformation, and a normalized Hessian penalty on the
//! decoder. Synthetic labelled image processes, information-theoretic
//! metrics, and a CLI round out the kit so every estimator can be
//! checked against closed forms and brute-force oracles.

pub mod config;
pub mod data;
pub mod density;
pub mod gradcheck;
pub mod hessian;
pub mod image;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod quantize;
pub mod report;
pub mod tensor;

pub use tensor::{backward, Tape, Tensor, TensorError};

/// Build identifier embedded in every output artifact.
pub const VERSION: &str = env!("TRIPOD_BUILD_VERSION");

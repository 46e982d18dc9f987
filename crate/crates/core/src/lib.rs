//! Statistical compressive sensing with Gaussian mixture signal models.
//!
//! Signals are modelled as draws from one of `G` Gaussians. The crate
//! designs sensing matrices for such models (random, per-class PCA, the
//! averaged-basis Procrustes design and information-driven adaptive
//! designs), reconstructs signals by MAP model selection plus Wiener
//! filtering, learns models by MAP-EM, and runs two-step
//! classify-then-reconstruct acquisition protocols.

pub mod adaptive;
pub mod error;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod matrix_io;
pub mod model;
pub mod rng;
pub mod sensing;

pub use adaptive::{AcquisitionState, AscentOptions, PosteriorMatrices};
pub use error::{Result, ScsError};
pub use inference::{Designer, ReconstructionResult, ShtOptions, ShtOutcome};
pub use model::{GaussianComponent, GmmModel, Provenance, SignalBatch};
pub use sensing::SensingMatrix;

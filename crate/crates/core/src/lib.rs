//! Graph-level anomaly detection with a spectrum-enhanced graph transformer
//! and a Beta-wavelet local spectral branch.
//!
//! The crate is organized bottom-up:
//!
//! - [`dataset`]: TUDataset ingestion, anomaly downsampling, stratified
//!   splits, and a planted-anomaly generator.
//! - [`spectral`]: normalized Laplacian, Rayleigh quotients, random-walk
//!   encodings, and polynomial spectral filters, with an eigendecomposition
//!   oracle for verification.
//! - [`autodiff`]: a small reverse-mode tape over dense matrices.
//! - [`transformer`] and [`localspec`]: the two model branches.
//! - [`model`]: parameter layout and the full forward pass.
//! - [`loss`] and [`metrics`]: the variation-optimized cross-entropy and
//!   AUC / macro-F1.
//! - [`harness`]: Adam training, cross-validation, reports, and the CLI.

pub mod autodiff;
pub mod dataset;
pub mod spectral;
pub mod localspec;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod transformer;
pub mod harness;

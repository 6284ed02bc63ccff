//! Approximate Gaussian boson sampling from positive-P phase space, plus the
//! statistical machinery used to check count data against a ground truth.
//!
//! The crate is organised around the pipeline:
//!
//! - [`gaussian_state`]: squeezer banks, transmission matrices, normally
//!   ordered covariances, the classicality criterion and the signature test,
//!   and the `(t, eps)` ground-truth correction fit.
//! - [`sampler`]: positive-P input ensembles, propagation, projection onto the
//!   classical subspace with iterated whitening/coloring, and outcome sampling.
//! - [`gcd`]: grouped count distributions and marginals from ensembles
//!   (Fourier / Poisson-kernel estimators) and from count records.
//! - [`oracle`]: Hafnian and Torontonian evaluation and exact pattern
//!   probabilities for small systems.
//! - [`stats`]: Pearson chi-square, Z-scores, XEB and validation reports.
//! - [`suite`]: the comparison pipeline that ties the above together.

pub mod blocks;
pub mod dataset;
pub mod error;
pub mod gaussian_state;
pub mod gcd;
pub mod linalg;
pub mod matrix_io;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod suite;

pub use num_complex::Complex64;

pub use dataset::{CountDataset, Detector, Provenance};
pub use error::{GbsError, Result};
pub use gaussian_state::{ComplexCovariance, Signature, SqueezerBank, TransmissionMatrix};
pub use gcd::{GcdResult, Partition};
pub use oracle::GaussianOutputState;
pub use sampler::{PhaseSpaceEnsemble, ProjectedVariables};
pub use stats::{ChiSquareResult, ValidationReport, XebResult};

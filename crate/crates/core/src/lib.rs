//! Heat-kernel embeddings, weighted Einstein tensors and short-time parametrix
//! expansions on explicit model weighted manifolds.
//!
//! The crate is organised bottom-up:
//!
//! * [`models`] describes the model spaces (weighted circles, flat tori, round
//!   spheres, the spherical suspension) through chart formulas.
//! * [`spectrum`] builds truncated weighted Laplace eigenbases.
//! * [`heat`] assembles heat kernels and the pullback metric `g_t`.
//! * [`calculus`] provides chart-level covariant calculus on fields.
//! * [`parametrix`] computes the short-time coefficients `u_0`, `u_1`.
//! * [`einstein`] holds the Einstein tensors and the asymptotic experiments.
//!
//! Chart derivatives are exact: every formula is written against
//! [`jet::Scalar`] and differentiated with truncated Taylor jets.

pub mod calculus;
pub mod einstein;
pub mod fit;
pub mod heat;
pub mod jet;
pub mod models;
pub mod parametrix;
pub mod quadrature;
pub mod spectrum;

pub use jet::{Jet, Scalar};
pub use models::{FourierTerm, ModelGeometry, ModelSpec, WeightSpec};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{what} is not available on the {model} model")]
    Unsupported { what: &'static str, model: &'static str },
    #[error("point is outside the admissible region: {0}")]
    OutOfRange(String),
    #[error("spectral basis too small: {0}")]
    BasisTooSmall(String),
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("quadrature grid was built for {grid}, not for {model}")]
    GridMismatch { grid: String, model: String },
}

pub type Result<T> = std::result::Result<T, Error>;

//! Linear random walks on the torus `T^d = R^d / Z^d`.
//!
//! Exact matrix arithmetic, finite measures and their convolutions, Fourier
//! coefficients of walk distributions, Lyapunov statistics, discretized
//! flattening in the generated matrix algebra and mod-`p` spectral gaps.

pub mod algebra;
pub mod diophantine;
pub mod discretized;
pub mod error;
pub mod fixtures;
pub mod linalg;
pub mod lyapunov;
pub mod mc;
pub mod measure;
pub mod specgap;
pub mod torus;

pub use error::{Error, Result};
pub use linalg::{IntMatrix, MatrixPoint, RatMatrix, RealMatrix, SingularProfile};
pub use measure::{FiniteMeasure, StepSampler};

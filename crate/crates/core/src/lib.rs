//! Gaussian integrators generated by operators on a uniform grid, their
//! self-intersection local times, and regularized Fourier–Wiener transform
//! integrands.
//!
//! Numerical routines are generic over [`Real`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below fix the scalar type.

// Negated float comparisons are used on purpose so that NaN lands in the
// failing branch of every tolerance check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod error;
pub mod experiment;
pub mod fwt;
pub mod grid;
pub mod operator;
pub mod process;
pub mod scalar;
pub mod silt;
pub mod simplex;

pub use error::{Error, Result};
pub use grid::{GramDet, GridContext, GridFunction, OrthonormalFrame};
pub use operator::{build_operator, OperatorMatrix, OperatorSpec, Profile, SmoothKernel};
pub use process::{sample_paths, PathSample, RNG_ALGORITHM};
pub use scalar::{CompensatedSum, Real};
pub use silt::MomentTable;
pub use simplex::{SimplexPoint, SimplexRule};

/// Library version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type GridFunction64 = GridFunction<f64>;
pub type GridFunction32 = GridFunction<f32>;
pub type OperatorMatrix64 = OperatorMatrix<f64>;
pub type OperatorMatrix32 = OperatorMatrix<f32>;
pub type PathSample64 = PathSample<f64>;
pub type PathSample32 = PathSample<f32>;
pub type OrthonormalFrame64 = OrthonormalFrame<f64>;
pub type OrthonormalFrame32 = OrthonormalFrame<f32>;

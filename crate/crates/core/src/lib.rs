//! Regularized score matching for structure learning in continuous
//! pairwise graphical models.
//!
//! The empirical (non-negative) score matching loss of a pairwise exponential
//! family is a block-diagonal quadratic in the interaction parameters. This
//! crate builds those quadratics ([`losses`]), minimizes them under an
//! off-diagonal ℓ1 or pairwise group penalty ([`solvers`]), tunes the penalty
//! level by extended BIC ([`tuning`]), and ships the simulators, incoherence
//! diagnostics and recovery experiments used to study the estimator
//! ([`simulate`], [`diagnostics`], [`eval`]).
//!
//! The numerical core is generic over the scalar type through [`Float`];
//! aliases for `f64` (and `f32` where it makes sense) are exported below.
//! Simulation and experiment code works in `f64`.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod layout;
pub mod linalg;
pub mod losses;
pub mod simulate;
pub mod solvers;
pub mod tuning;

use std::fmt;
use std::iter::Sum;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Floating point scalar used throughout the numerical core.
pub trait Float:
    num_traits::Float
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + nalgebra::Scalar
    + Sum
    + Default
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
{
    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Float for f32 {}
impl Float for f64 {}

pub type DataMatrix64 = data::DataMatrix<f64>;
pub type DataMatrix32 = data::DataMatrix<f32>;
pub type QuadraticLoss64 = losses::QuadraticLoss<f64>;
pub type QuadraticLoss32 = losses::QuadraticLoss<f32>;
pub type ParameterVector64 = layout::ParameterVector<f64>;
pub type PenaltySpec64 = solvers::PenaltySpec<f64>;
pub type Estimate64 = solvers::Estimate<f64>;
pub type SolutionPath64 = solvers::SolutionPath<f64>;

//! Frequentist uncertainty tubes for Gaussian process regression.
//!
//! The crate computes a-posteriori tube half-widths around the GPR posterior
//! mean that hold with prescribed probability for any ground truth of bounded
//! RKHS norm, including variants that stay valid under kernel
//! misspecification. It also ships RKHS ground-truth samplers and a
//! Monte-Carlo harness that checks coverage empirically.

pub mod bounds;
pub mod cli;
pub mod control;
pub mod error;
pub mod experiments;
pub mod gpr;
pub mod kernels;
pub mod numerics;
pub mod rkhs;

pub use bounds::{BoundParams, TubeEvaluation, TubeMethod};
pub use error::{Error, Result};
pub use gpr::{Dataset, GprPosterior};
pub use kernels::{Grid, KernelFamily, KernelSpec};
pub use numerics::{CholeskyFactor, Matrix};
pub use rkhs::RkhsFunction;

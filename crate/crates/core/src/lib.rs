//! Sample average approximation for risk-neutral semilinear elliptic
//! PDE-constrained optimization.
//!
//! The crate covers the full pipeline at desk scale:
//!
//! - P1/P0 finite elements on structured triangulations of the unit square
//!   ([`mesh`], [`fem`], [`sparse`]);
//! - the random-field case study and its samplers ([`fields`], [`sobol`]);
//! - per-sample semilinear state and adjoint solves with gradients and
//!   Hessian-vector products ([`pde`]);
//! - the proximity operator of the L1-plus-box regularizer, normal-map
//!   residuals, and the criticality measure ([`prox`]);
//! - a semismooth Newton-CG solver for the SAA problems ([`saa`]);
//! - closed-form constants and nonasymptotic sample-size formulas
//!   ([`planner`]);
//! - Monte Carlo validation of the sub-Gaussian maxima bounds
//!   ([`concentration`]);
//! - replicated convergence studies with CSV persistence ([`experiments`]).

pub mod concentration;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod fields;
pub mod mesh;
pub mod pde;
pub mod planner;
pub mod prox;
pub mod rng;
pub mod saa;
pub mod sobol;
pub mod sparse;

pub use error::{Error, Result};

//! Kernel ergodic search.
//!
//! Trajectory optimization that drives a dynamical system to cover a target
//! probability distribution, in Euclidean spaces of dimension 2-6 and on the
//! matrix Lie groups SO(3) and SE(3).
//!
//! The coverage objective is a kernel ergodic metric: a double time sum of a
//! Gaussian kernel over the trajectory (uniformity pressure) minus twice the
//! trajectory-averaged target density (information pressure) plus the squared
//! integral of the target. It is minimized with an iterative LQR scheme: roll
//! out, assemble the metric gradient, solve an affine LQR subproblem by a
//! backward Riccati recursion for a descent direction, and Armijo-backtrack.
//!
//! Modules:
//! - [`liegroups`]: SO(3)/SE(3) primitives (hat/vee, exp/log, adjoints, the
//!   trivialized tangent of exp, quadratic functions and their derivatives).
//! - [`distributions`]: Gaussian mixtures in R^n and concentrated Gaussians
//!   on SO(3)/SE(3), sampling, EM fitting, benchmark target generation.
//! - [`metric`]: the kernel ergodic metric and its trajectory gradient, plus
//!   kernel bandwidth selection.
//! - [`fourier`]: evaluation-only Fourier ergodic metric for cross-checks.
//! - [`dynamics`]: point-mass integrators and left-trivialized kinematics on
//!   groups, with linearizations.
//! - [`planner`]: the iterative LQR optimizer with TSP-bootstrap warm start.
//! - [`bench`]: seeded benchmark harness with CSV/JSONL emission.
//!
//! All numeric kernels are generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); the `*64` aliases below fix `f64`.

// index loops over parallel structures read better than zipped iterators
// in the numeric kernels
#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod distributions;
pub mod dynamics;
pub mod error;
pub mod fourier;
pub mod liegroups;
pub mod metric;
pub mod planner;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` aliases for the main domain types.
pub type GroupElement64 = liegroups::GroupElement<f64>;
pub type TangentVector64 = liegroups::TangentVector<f64>;
pub type WeightMatrix64 = liegroups::WeightMatrix<f64>;
pub type GaussianMixture64 = distributions::GaussianMixture<f64>;
pub type LieGaussianMixture64 = distributions::LieGaussianMixture<f64>;
pub type KernelParams64 = metric::KernelParams<f64>;
pub type EuclideanTrajectory64 = metric::EuclideanTrajectory<f64>;
pub type LieTrajectory64 = metric::LieTrajectory<f64>;
pub type FourierBasisSet64 = fourier::FourierBasisSet<f64>;
pub type ErgodicProblem64 = planner::ErgodicProblem<f64>;

//! Distributed support-vector-machine training over switching digraphs.
//!
//! Every agent holds a shard of the training data and a local copy
//! `x_i = [omega_i; nu_i]` of the classifier. The agents run a
//! continuous-time gradient-tracking flow
//!
//! ```text
//! dx_i/dt = sum_j w_ij (x_j - x_i) - alpha * y_i
//! dy_i/dt = sum_j a_ij (y_j - y_i) + Hess f_i(x_i) dx_i/dt
//! ```
//!
//! over weight-balanced, strongly connected digraphs `W` and `A` that are
//! re-drawn at fixed instants (a hybrid system: continuous flow, discrete
//! topology jumps).
//!
//! Modules:
//!
//! - [`graph`]: digraphs, Laplacians, balance/connectivity checks, switching schedules.
//! - [`loss`]: smoothed hinge loss, the quadratic feature map, local cost/gradient/Hessian.
//! - [`dynamics`]: the system matrix, right-hand side, Euler/RK4 stepping, simulation and monitors.
//! - [`spectral`]: eigenvalues, zero-eigenvalue verdicts, perturbation and step-size bounds.
//! - [`baseline`]: the centralized oracle solver, dataset generation, sharding and prediction.
//! - [`experiment`]: configuration and the end-to-end experiment pipeline used by the CLI.

// negated comparisons are how NaN parameters get rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod loss;
pub mod spectral;

pub use error::{Error, Result};

//! Lie-Trotter splitting for semilinear stochastic evolution equations
//! `du = [Au + f(u)] dt + g(u) dW` on `L²(0,1)` with the Dirichlet Laplacian,
//! plus a Monte Carlo harness that measures the strong convergence order.
//!
//! Module map:
//! - [`spectral`]: sine eigenbasis, transforms, semigroup, fractional powers.
//! - [`noise`]: Q-Wiener increments, coupled coarsening, regularity index.
//! - [`flows`]: drift and stochastic sub-flows.
//! - [`scheme`]: the splitting step, trajectories, exponential-Euler reference.
//! - [`experiments`]: convergence, consistency, stability, increment and regularity studies.
//! - [`config`] and [`cli`]: TOML runs and CSV/JSON reports.

// `!(x > 0.0)` is used on purpose so NaN is rejected with the other bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod flows;
pub mod noise;
pub mod scheme;
pub mod spectral;

pub use error::{Error, Result};
pub use experiments::{ErrorReport, MonteCarlo};
pub use flows::{DiffusionSpec, DriftSpec, InnerBudget};
pub use noise::{CovarianceSpec, NoisePath, RegularityIndex};
pub use scheme::{SchemeConfig, TimeGrid};
pub use spectral::{FractionalExponent, OperatorSpec, SpectralField};

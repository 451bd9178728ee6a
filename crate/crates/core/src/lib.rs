//! Channel capacity, minimax risk and finite-sample reference priors.
//!
//! The crate computes the prior maximizing the mutual information between a
//! one-dimensional parameter and the data it generates, two ways:
//!
//! * [`ba_det`]: the classical Blahut-Arimoto fixed-point iteration on a
//!   finite grid of parameter values, with capacity bounds.
//! * [`ba_mcmc`]: an MCMC variant that never discretizes the parameter. Each
//!   iterate has an exponential form driven by a running sum of log
//!   marginals over the (finite) outcome space, so Metropolis-Hastings can
//!   sample it directly.
//!
//! [`common_random`] contains the finite-grid stochastic iteration with
//! shared uniforms and the sample-size bound it satisfies.
//!
//! ```
//! use refprior::{ba_det, family::{linspace, ParametricFamily}};
//!
//! let family = ParametricFamily::bernoulli();
//! let result = ba_det::ba_solve(&family, &linspace(0.0, 1.0, 11), &Default::default(), None).unwrap();
//! assert!((result.capacity - 2f64.ln()).abs() < 1e-8);
//! ```

pub mod ba_det;
pub mod ba_mcmc;
pub mod common_random;
pub mod error;
pub mod family;
pub mod infomath;
pub mod rng;

pub use error::{Error, Result};
pub use family::{ConstraintSpec, Expense, Outcome, ParametricFamily, ThetaDomain};
pub use infomath::{Marginal, PriorGrid};

//! Bayesian optimization of risk measures of expensive black-box functions.
//!
//! The problem solved here is `min_x rho[F(x, W)]` where `F` is an expensive
//! simulator depending on a decision vector `x` and an environment vector `w`,
//! `W` is a random variable with known distribution, and `rho` is either
//! value-at-risk (VaR) or conditional value-at-risk (CVaR) at level `alpha`.
//!
//! The surrogate is a Gaussian process over the joint `(x, w)` space. Candidate
//! evaluations are chosen by maximizing a knowledge-gradient acquisition
//! defined on the posterior distribution of the risk objective, estimated by
//! sample average approximation with common random numbers ([`acquisition`]).
//! Classical baselines operating on direct risk observations (expected
//! improvement, confidence bounds, plain knowledge gradient, random search)
//! are included for comparison, together with a reproducible experiment
//! harness and benchmark problems ([`harness`], [`problems`]).
//!
//! All optimization happens on inputs normalized to the unit cube and outcomes
//! standardized to zero mean / unit variance; transforms are stored on the
//! model and inverted on output.

pub mod error;
pub mod gp;
pub mod linalg;
pub mod optimize;
pub mod qmc;
pub mod risk;

pub mod acquisition;
pub mod harness;
pub mod problems;

pub use error::{Error, Result};

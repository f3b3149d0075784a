//! Nonparametric tests of hypotheses on functional moments of mixtures with
//! varying concentrations (MVC).
//!
//! Each observation `x_j` is drawn from a mixture of `M` unknown component
//! distributions with known, observation-specific mixing probabilities
//! `p_j^m`. The crate provides
//!
//! * minimax weights that turn weighted averages into unbiased estimators of
//!   component moments ([`weights`]),
//! * weighted empirical CDFs and their monotone "improved" versions
//!   ([`empirical`]),
//! * plug-in estimates of the asymptotic covariance of the moment estimators
//!   ([`covariance`]),
//! * the χ²-type Mahalanobis test for `H0: T(moments) = 0` ([`testing`]) with
//!   ready-made hypotheses ([`hypotheses`]),
//! * a Monte-Carlo harness for error-rate studies ([`simulation`]).
//!
//! Component indices are zero-based throughout the library.

pub mod covariance;
pub mod empirical;
mod error;
pub mod hypotheses;
pub mod simulation;
pub mod testing;
pub mod weights;

pub use error::{Error, Result};

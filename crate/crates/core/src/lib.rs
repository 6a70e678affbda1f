//! Learning mixtures of continuous-time Markov chains from trails.
//!
//! The pipeline has three stages:
//!
//! 1. **Discretize** continuous trails at a regular interval `tau`
//!    ([`simulate::discretize`]).
//! 2. **Soft-cluster** the discrete trails into `L` groups ([`cluster`]):
//!    posterior assignment under a discrete mixture, discrete-time EM, spectral
//!    clustering of per-trail transition statistics for long trails, or
//!    per-trail chain estimates for very long trails.
//! 3. **Recover** one rate matrix per chain by weighted maximum likelihood on
//!    `exp(K tau)` ([`recover`]).
//!
//! [`metrics`] provides the recovery and clustering errors used for
//! evaluation, and [`estimators`] the closed-form single-chain estimators and
//! the advice for choosing `tau`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chain;
pub mod cluster;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod metrics;
pub mod recover;
pub mod simulate;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    ContinuousTrail, CtMixture, DiscreteChain, DiscreteTrail, DtMixture, Event, RateMatrix, SoftAssignment,
    WeightedCounts,
};

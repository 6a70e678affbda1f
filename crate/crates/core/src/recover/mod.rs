//! Rate recovery from clustered trails.
//!
//! Each chain's rate matrix is fitted by maximizing the likelihood of its
//! soft transition counts, which decouples the mixture problem into `L`
//! independent single-chain problems. [`em_continuous`] is the baseline that
//! works on fully observed paths instead.

mod absorption;
mod amgm;
mod cem;
mod fit;
mod init;
mod mle;

pub use absorption::{absorption_probabilities, predict_absorption, AbsorptionModel, Prefix};
pub use amgm::{amgm_gap, AmGm};
pub use cem::{continuous_log_weight, em_continuous, CemConfig, CemFit, PathStats};
pub use fit::{fit_mixture, fit_mixture_continuous, start_probabilities, weighted_counts, FitMethod, MixtureFit};
pub use init::{initial_ct_mixture, initial_mixture, InitStrategy};
pub use mle::{mle_rate_matrix, InitUsed, MleConfig, MleFit, MleInit, MleObjective};

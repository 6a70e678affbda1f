use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid rate matrix: {0}")]
    InvalidRateMatrix(String),

    #[error("invalid stochastic matrix: {0}")]
    InvalidStochastic(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no unique stationary distribution: chain is not irreducible")]
    NotIrreducible,

    #[error("degenerate holding rate in chain {chain}, state {state}")]
    DegenerateHoldingRate { chain: usize, state: usize },

    #[error("trail too short: needs observations up to t={needed}, horizon is {horizon}")]
    TrailTooShort { needed: f64, horizon: f64 },

    #[error("no state could be estimated")]
    NothingEstimated,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("substochastic absorption: state {state} of chain {chain} reaches neither absorber")]
    SubstochasticAbsorption { chain: usize, state: usize },

    #[error("regime violation: K_max * tau = {0} exceeds 1/2")]
    Regime(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

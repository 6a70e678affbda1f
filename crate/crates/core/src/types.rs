//! Domain types shared across the crate.
//!
//! Matrices are dense `nalgebra::DMatrix<f64>`; states are zero-based indices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row sums of a generator must vanish up to this tolerance (scaled by the
/// magnitude of the diagonal entry).
pub const RATE_ROW_TOL: f64 = 1e-12;
/// Row sums of a stochastic matrix must be one up to this tolerance.
pub const STOCHASTIC_ROW_TOL: f64 = 1e-10;
/// Total start mass of a mixture must be one up to this tolerance.
pub const START_MASS_TOL: f64 = 1e-12;

/// Generator of a continuous-time Markov chain.
///
/// Off-diagonal entries are jump rates (1/time), every row sums to zero, so
/// the diagonal holds the negated exit rate of each state.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    k: DMatrix<f64>,
}

impl RateMatrix {
    /// Validates `k` and wraps it.
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        let n = k.nrows();
        if n == 0 || k.ncols() != n {
            return Err(Error::Dimension(format!(
                "rate matrix must be square and non-empty, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rate matrix entry".into()));
        }
        for y in 0..n {
            let mut off = 0.0;
            for z in 0..n {
                if z != y {
                    if k[(y, z)] < 0.0 {
                        return Err(Error::InvalidRateMatrix(format!("negative rate {} at ({y}, {z})", k[(y, z)])));
                    }
                    off += k[(y, z)];
                }
            }
            let diag = k[(y, y)];
            if (off + diag).abs() > RATE_ROW_TOL * off.max(1.0) {
                return Err(Error::InvalidRateMatrix(format!("row {y} sums to {}", off + diag)));
            }
        }
        Ok(Self { k })
    }

    /// Builds a generator from its off-diagonal rates; the diagonal of `rates`
    /// is ignored and replaced by the negated row sum.
    pub fn from_off_diagonal(mut rates: DMatrix<f64>) -> Result<Self> {
        let n = rates.nrows();
        if rates.ncols() != n {
            return Err(Error::Dimension("rate matrix must be square".into()));
        }
        for y in 0..n {
            rates[(y, y)] = 0.0;
            let s: f64 = rates.row(y).sum();
            rates[(y, y)] = -s;
        }
        Self::new(rates)
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.k
    }

    pub fn rate(&self, y: usize, z: usize) -> f64 {
        self.k[(y, z)]
    }

    /// Exit rate `|K_yy|` of state `y`.
    pub fn exit_rate(&self, y: usize) -> f64 {
        -self.k[(y, y)]
    }

    /// Row `y` as a vector.
    pub fn row(&self, y: usize) -> Vec<f64> {
        self.k.row(y).iter().copied().collect()
    }

    pub fn is_absorbing(&self, y: usize) -> bool {
        self.exit_rate(y) == 0.0
    }

    /// Jump probabilities `K_yz / |K_yy|` out of `y`, or `None` for an
    /// absorbing state.
    pub fn jump_probabilities(&self, y: usize) -> Option<Vec<f64>> {
        let rate = self.exit_rate(y);
        if rate <= 0.0 {
            return None;
        }
        Some((0..self.n()).map(|z| if z == y { 0.0 } else { self.k[(y, z)] / rate }).collect())
    }

    /// Multiplies every rate by `f`.
    pub fn scaled(&self, f: f64) -> Result<Self> {
        if !(f > 0.0) || !f.is_finite() {
            return Err(Error::InvalidArgument(format!("scale factor {f} must be positive")));
        }
        Ok(Self { k: &self.k * f })
    }

    /// Largest exit rate.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n()).map(|y| self.exit_rate(y)).fold(0.0, f64::max)
    }
}

/// A mixture of `L` rate matrices over the same `n` states together with the
/// joint starting distribution `s[l][y]` over (chain, state).
#[derive(Debug, Clone, PartialEq)]
pub struct CtMixture {
    chains: Vec<RateMatrix>,
    start: DMatrix<f64>,
}

impl CtMixture {
    pub fn new(chains: Vec<RateMatrix>, start: DMatrix<f64>) -> Result<Self> {
        check_mixture_shape(chains.iter().map(RateMatrix::n), &start)?;
        Ok(Self { chains, start })
    }

    pub fn l(&self) -> usize {
        self.chains.len()
    }

    pub fn n(&self) -> usize {
        self.chains[0].n()
    }

    pub fn chains(&self) -> &[RateMatrix] {
        &self.chains
    }

    pub fn chain(&self, l: usize) -> &RateMatrix {
        &self.chains[l]
    }

    /// `L x n` starting probabilities.
    pub fn start(&self) -> &DMatrix<f64> {
        &self.start
    }

    /// Mixture with chains reordered: chain `i` of the result is chain
    /// `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let chains = perm.iter().map(|&p| self.chains[p].clone()).collect();
        let start = DMatrix::from_fn(self.l(), self.n(), |i, y| self.start[(perm[i], y)]);
        Self::new(chains, start)
    }

    /// Discretizes every chain at interval `tau`.
    pub fn discretize(&self, tau: f64) -> Result<DtMixture> {
        let chains =
            self.chains.iter().map(|k| crate::chain::matrix_exponential(k, tau)).collect::<Result<Vec<_>>>()?;
        DtMixture::new(chains, self.start.clone())
    }
}

fn check_mixture_shape(ns: impl Iterator<Item = usize>, start: &DMatrix<f64>) -> Result<()> {
    let ns: Vec<usize> = ns.collect();
    if ns.is_empty() {
        return Err(Error::Empty("mixture needs at least one chain".into()));
    }
    let n = ns[0];
    if ns.iter().any(|&m| m != n) {
        return Err(Error::Dimension("chains differ in state count".into()));
    }
    if start.nrows() != ns.len() || start.ncols() != n {
        return Err(Error::Dimension(format!(
            "start matrix is {}x{}, expected {}x{}",
            start.nrows(),
            start.ncols(),
            ns.len(),
            n
        )));
    }
    if start.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("start probabilities must be nonnegative".into()));
    }
    let total: f64 = start.sum();
    if (total - 1.0).abs() > START_MASS_TOL * (start.len() as f64).max(1.0) {
        return Err(Error::InvalidArgument(format!("start probabilities sum to {total}")));
    }
    Ok(())
}

/// A discrete-time chain, typically `T(tau) = exp(K tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteChain {
    t: DMatrix<f64>,
    tau: Option<f64>,
}

impl DiscreteChain {
    pub fn new(t: DMatrix<f64>, tau: Option<f64>) -> Result<Self> {
        let n = t.nrows();
        if n == 0 || t.ncols() != n {
            return Err(Error::Dimension("transition matrix must be square".into()));
        }
        for y in 0..n {
            let mut s = 0.0;
            for z in 0..n {
                let v = t[(y, z)];
                if !v.is_finite() || !(0.0..=1.0 + STOCHASTIC_ROW_TOL).contains(&v) {
                    return Err(Error::InvalidStochastic(format!("entry ({y}, {z}) = {v}")));
                }
                s += v;
            }
            if (s - 1.0).abs() > STOCHASTIC_ROW_TOL {
                return Err(Error::InvalidStochastic(format!("row {y} sums to {s}")));
            }
        }
        Ok(Self { t, tau })
    }

    pub fn n(&self) -> usize {
        self.t.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn prob(&self, y: usize, z: usize) -> f64 {
        self.t[(y, z)]
    }
}

/// A mixture of discrete-time chains with a joint `L x n` start matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DtMixture {
    chains: Vec<DiscreteChain>,
    start: DMatrix<f64>,
}

impl DtMixture {
    pub fn new(chains: Vec<DiscreteChain>, start: DMatrix<f64>) -> Result<Self> {
        check_mixture_shape(chains.iter().map(DiscreteChain::n), &start)?;
        Ok(Self { chains, start })
    }

    pub fn l(&self) -> usize {
        self.chains.len()
    }

    pub fn n(&self) -> usize {
        self.chains[0].n()
    }

    pub fn chains(&self) -> &[DiscreteChain] {
        &self.chains
    }

    pub fn chain(&self, l: usize) -> &DiscreteChain {
        &self.chains[l]
    }

    pub fn start(&self) -> &DMatrix<f64> {
        &self.start
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let chains = perm.iter().map(|&p| self.chains[p].clone()).collect();
        let start = DMatrix::from_fn(self.l(), self.n(), |i, y| self.start[(perm[i], y)]);
        Self::new(chains, start)
    }
}

/// Entry of a continuous trail: the process enters `state` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub state: usize,
    pub time: f64,
}

/// A continuously observed path.
///
/// The process is observed on `[0, horizon]`. When `absorbed` is set, the
/// last state is terminal and the trail may be observed past its horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTrail {
    events: Vec<Event>,
    pub true_chain: Option<usize>,
    horizon: f64,
    absorbed: bool,
}

impl ContinuousTrail {
    pub fn new(events: Vec<Event>, horizon: f64, absorbed: bool) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::Empty("trail has no events".into()));
        }
        if events[0].time != 0.0 {
            return Err(Error::InvalidArgument("first event must be at time 0".into()));
        }
        for w in events.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(Error::InvalidArgument("event times must increase strictly".into()));
            }
            if w[1].state == w[0].state {
                return Err(Error::InvalidArgument("consecutive events repeat a state".into()));
            }
        }
        let last = events.last().unwrap().time;
        if !horizon.is_finite() || horizon < last {
            return Err(Error::InvalidArgument(format!("horizon {horizon} precedes the last event at {last}")));
        }
        Ok(Self { events, true_chain: None, horizon, absorbed })
    }

    pub fn with_label(mut self, chain: Option<usize>) -> Self {
        self.true_chain = chain;
        self
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn absorbed(&self) -> bool {
        self.absorbed
    }

    pub fn initial_state(&self) -> usize {
        self.events[0].state
    }

    pub fn final_state(&self) -> usize {
        self.events.last().unwrap().state
    }

    /// Largest state index plus one.
    pub fn state_bound(&self) -> usize {
        self.events.iter().map(|e| e.state + 1).max().unwrap_or(0)
    }

    /// Index of the event occupying time `t` (latest entry time `<= t`).
    pub fn event_index_at(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.time <= t).saturating_sub(1)
    }

    pub fn state_at(&self, t: f64) -> usize {
        self.events[self.event_index_at(t)].state
    }

    /// Restriction to `[0, span]`.
    pub fn truncated(&self, span: f64) -> Self {
        if span >= self.horizon {
            return self.clone();
        }
        let keep = self.events.partition_point(|e| e.time <= span).max(1);
        Self {
            events: self.events[..keep].to_vec(),
            true_chain: self.true_chain,
            horizon: span.max(0.0),
            absorbed: false,
        }
    }
}

/// A trail observed at `m` regular instants `0, tau, ..., (m-1) tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTrail {
    states: Vec<usize>,
    tau: f64,
}

impl DiscreteTrail {
    pub fn new(states: Vec<usize>, tau: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Empty("discrete trail has no observations".into()));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { states, tau })
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn first(&self) -> usize {
        self.states[0]
    }

    /// Consecutive observation pairs.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn state_bound(&self) -> usize {
        self.states.iter().map(|s| s + 1).max().unwrap_or(0)
    }

    /// Splits into consecutive pieces of `len` observations; a shorter tail
    /// is dropped.
    pub fn segments(&self, len: usize) -> Vec<DiscreteTrail> {
        if len == 0 {
            return Vec::new();
        }
        self.states.chunks_exact(len).map(|c| DiscreteTrail { states: c.to_vec(), tau: self.tau }).collect()
    }
}

/// Per-trail responsibilities: an `r x L` matrix with rows on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    a: DMatrix<f64>,
}

impl SoftAssignment {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.ncols() == 0 {
            return Err(Error::Dimension("assignment needs at least one chain".into()));
        }
        for x in 0..a.nrows() {
            let row = a.row(x);
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument(format!("row {x} has a negative entry")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!("row {x} sums to {s}")));
            }
        }
        Ok(Self { a })
    }

    /// One-hot rows from chain labels.
    pub fn hard(labels: &[usize], l: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&c| c >= l) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for L={l}")));
        }
        Ok(Self { a: DMatrix::from_fn(labels.len(), l, |x, c| if labels[x] == c { 1.0 } else { 0.0 }) })
    }

    pub fn uniform(r: usize, l: usize) -> Self {
        Self { a: DMatrix::from_element(r, l, 1.0 / l as f64) }
    }

    pub fn r(&self) -> usize {
        self.a.nrows()
    }

    pub fn l(&self) -> usize {
        self.a.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn get(&self, x: usize, l: usize) -> f64 {
        self.a[(x, l)]
    }

    /// Most likely chain per trail (ties resolve to the lowest index).
    pub fn labels(&self) -> Vec<usize> {
        (0..self.r())
            .map(|x| {
                let row = self.a.row(x);
                let mut best = 0;
                for c in 1..self.l() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Total responsibility carried by each chain.
    pub fn chain_mass(&self) -> Vec<f64> {
        (0..self.l()).map(|c| self.a.column(c).sum()).collect()
    }

    /// Columns reordered: column `i` of the result is column `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { a: DMatrix::from_fn(self.r(), perm.len(), |x, i| self.a[(x, perm[i])]) }
    }

    /// Shannon entropy (nats) of every row.
    pub fn entropies(&self) -> Vec<f64> {
        (0..self.r()).map(|x| self.a.row(x).iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()).collect()
    }
}

/// Soft transition counts `C[y][z]` of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCounts {
    c: DMatrix<f64>,
}

impl WeightedCounts {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        if c.nrows() != c.ncols() {
            return Err(Error::Dimension("count matrix must be square".into()));
        }
        if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("counts must be finite and nonnegative".into()));
        }
        Ok(Self { c })
    }

    pub fn zeros(n: usize) -> Self {
        Self { c: DMatrix::zeros(n, n) }
    }

    /// Accumulates the transitions of `trail` with weight `w`.
    pub fn add_trail(&mut self, trail: &DiscreteTrail, w: f64) {
        if w == 0.0 {
            return;
        }
        for (y, z) in trail.transitions() {
            self.c[(y, z)] += w;
        }
    }

    /// Counts from trails with per-trail weights.
    pub fn from_trails(trails: &[DiscreteTrail], weights: &[f64], n: usize) -> Result<Self> {
        if trails.len() != weights.len() {
            return Err(Error::Dimension(format!("{} trails but {} weights", trails.len(), weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be nonnegative".into()));
        }
        check_states(trails, n)?;
        let mut c = Self::zeros(n);
        for (t, &w) in trails.iter().zip(weights) {
            c.add_trail(t, w);
        }
        Ok(c)
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn get(&self, y: usize, z: usize) -> f64 {
        self.c[(y, z)]
    }

    /// `c_y`, the number of transitions leaving `y` (self-transitions included).
    pub fn row_total(&self, y: usize) -> f64 {
        self.c.row(y).sum()
    }

    pub fn total(&self) -> f64 {
        self.c.sum()
    }

    pub fn merge(&mut self, other: &WeightedCounts) {
        self.c += &other.c;
    }
}

/// Fails if any trail mentions a state `>= n`.
pub fn check_states(trails: &[DiscreteTrail], n: usize) -> Result<()> {
    for (i, t) in trails.iter().enumerate() {
        if t.state_bound() > n {
            return Err(Error::Dimension(format!("trail {i} visits state {} but n = {n}", t.state_bound() - 1)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn rate_matrix_rejects_bad_rows() {
        assert!(RateMatrix::new(dmatrix![-1.0, 1.0; 1.0, -1.0]).is_ok());
        assert!(RateMatrix::new(dmatrix![-1.0, 0.5; 1.0, -1.0]).is_err());
        assert!(RateMatrix::new(dmatrix![1.0, -1.0; 1.0, -1.0]).is_err());
        assert!(RateMatrix::new(dmatrix![f64::NAN, 1.0; 1.0, -1.0]).is_err());
    }

    #[test]
    fn from_off_diagonal_sets_diagonal() {
        let k = RateMatrix::from_off_diagonal(dmatrix![5.0, 1.0, 2.0; 0.0, 0.0, 3.0; 0.5, 0.5, 9.0]).unwrap();
        assert_eq!(k.exit_rate(0), 3.0);
        assert_eq!(k.exit_rate(2), 1.0);
        assert_eq!(k.jump_probabilities(1).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn mixture_start_must_sum_to_one() {
        let k = RateMatrix::from_off_diagonal(dmatrix![0.0, 1.0; 1.0, 0.0]).unwrap();
        assert!(CtMixture::new(vec![k.clone()], dmatrix![0.5, 0.5]).is_ok());
        assert!(CtMixture::new(vec![k.clone()], dmatrix![0.5, 0.4]).is_err());
        assert!(CtMixture::new(vec![k], dmatrix![0.5, 0.25; 0.25, 0.0]).is_err());
    }

    #[test]
    fn trail_invariants() {
        let ev = |s, t| Event { state: s, time: t };
        assert!(ContinuousTrail::new(vec![ev(0, 0.0), ev(1, 0.5)], 1.0, false).is_ok());
        assert!(ContinuousTrail::new(vec![ev(0, 0.1)], 1.0, false).is_err());
        assert!(ContinuousTrail::new(vec![ev(0, 0.0), ev(0, 0.5)], 1.0, false).is_err());
        assert!(ContinuousTrail::new(vec![ev(0, 0.0), ev(1, 0.5), ev(2, 0.5)], 1.0, false).is_err());
        let t = ContinuousTrail::new(vec![ev(0, 0.0), ev(1, 0.5), ev(2, 0.75)], 1.0, false).unwrap();
        assert_eq!(t.state_at(0.49), 0);
        assert_eq!(t.state_at(0.5), 1);
        assert_eq!(t.state_at(0.9), 2);
        let cut = t.truncated(0.6);
        assert_eq!(cut.events().len(), 2);
        assert_eq!(cut.horizon(), 0.6);
    }

    #[test]
    fn soft_assignment_rows() {
        assert!(SoftAssignment::new(dmatrix![0.3, 0.7; 1.0, 0.0]).is_ok());
        assert!(SoftAssignment::new(dmatrix![0.3, 0.6]).is_err());
        let h = SoftAssignment::hard(&[1, 0, 1], 2).unwrap();
        assert_eq!(h.labels(), vec![1, 0, 1]);
        assert_eq!(h.chain_mass(), vec![1.0, 2.0]);
        assert!(SoftAssignment::hard(&[2], 2).is_err());
    }

    #[test]
    fn counts_accumulate() {
        let t = DiscreteTrail::new(vec![0, 1, 0], 0.1).unwrap();
        let c = WeightedCounts::from_trails(&[t], &[0.5], 2).unwrap();
        assert_eq!(c.get(0, 1), 0.5);
        assert_eq!(c.get(1, 0), 0.5);
        assert_eq!(c.total(), 1.0);
    }

    #[test]
    fn segments_drop_tail() {
        let t = DiscreteTrail::new((0..25).map(|i| i % 3).collect(), 1.0).unwrap();
        let segs = t.segments(10);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].states()[0], 10 % 3);
    }
}

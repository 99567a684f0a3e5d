//! Intracluster moves: two energy-biased self-avoiding walks through
//! neighbouring Hamming shells that return to the starting shell.
//!
//! A walk *toward* the reference flips bits of the disagree set `N(u)` (the
//! distance drops by one per step); a walk *away* from it flips bits of the
//! agree set `P(d)`. Each step picks candidate `i` with probability
//! proportional to `exp(-gamma * ΔE_i)`, which equals the normalized
//! `exp(-gamma * E(F(x, i)))` because the common `exp(-gamma * E(x))` factor
//! cancels.
//!
//! With the default up/down order, a move from `x0` on `S_n` flips `sigma`
//! toward the reference to reach the bridge `y` on `S_{n-k}`, then flips `rho`
//! away from it to reach `x1` back on `S_n`. The reverse move from `x1` flips
//! `R(rho)` then `R(sigma)` and visits the same intermediate states backwards,
//! so its log probability is accumulated during the forward walk.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IsingModel, ShellState};
use crate::weighted_index::WeightedIndexTree;

/// Above this `|gamma * ΔE|` the tree path is not used; the scanner works in
/// log space relative to the per-step maximum.
pub const MAX_PLAIN_EXPONENT: f64 = 500.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Flip a disagreeing bit; distance decreases.
    Toward,
    /// Flip an agreeing bit; distance increases.
    Away,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Toward => Direction::Away,
            Direction::Away => Direction::Toward,
        }
    }

    #[inline]
    fn admits(self, state: &ShellState, i: usize) -> bool {
        state.is_disagreeing(i) == (self == Direction::Toward)
    }

    fn candidates(self, state: &ShellState) -> &[usize] {
        match self {
            Direction::Toward => state.disagree_set().as_slice(),
            Direction::Away => state.agree_set().as_slice(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkOrder {
    /// Toward the reference first (bridge on `S_{n-k}`).
    UpDown,
    /// Away from the reference first (bridge on `S_{n+k}`).
    DownUp,
}

impl WalkOrder {
    pub fn directions(self) -> (Direction, Direction) {
        match self {
            WalkOrder::UpDown => (Direction::Toward, Direction::Away),
            WalkOrder::DownUp => (Direction::Away, Direction::Toward),
        }
    }

    /// Largest walk length available from shell `n` of `m` variables.
    pub fn max_length(self, n: usize, m: usize) -> usize {
        match self {
            WalkOrder::UpDown => n,
            WalkOrder::DownUp => m - n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    UpDownOnly,
    DownUpOnly,
    /// Each order with probability 1/2, independent of the state.
    RandomSymmetric,
}

impl OrderPolicy {
    fn orders(self) -> &'static [WalkOrder] {
        match self {
            OrderPolicy::UpDownOnly => &[WalkOrder::UpDown],
            OrderPolicy::DownUpOnly => &[WalkOrder::DownUp],
            OrderPolicy::RandomSymmetric => &[WalkOrder::UpDown, WalkOrder::DownUp],
        }
    }
}

/// Bias and walk-length settings of the proposal.
///
/// `gamma` is one scalar for every step of both walks. A per-step schedule
/// would slot in where [`Proposer`] computes weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SawParams {
    pub gamma: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub order_policy: OrderPolicy,
}

impl SawParams {
    pub fn new(gamma: f64, k_min: usize, k_max: usize, order_policy: OrderPolicy) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        if k_min > k_max {
            return Err(Error::Config(format!("k_min {k_min} exceeds k_max {k_max}")));
        }
        Ok(Self {
            gamma,
            k_min,
            k_max,
            order_policy,
        })
    }

    /// Fixed walk length, up/down order.
    pub fn fixed(gamma: f64, k: usize) -> Self {
        Self::new(gamma, k, k, OrderPolicy::UpDownOnly).expect("valid fixed-length parameters")
    }

    /// `k` uniform on `[k_min, k_max]`, up/down order.
    pub fn uniform(gamma: f64, k_min: usize, k_max: usize) -> Result<Self> {
        Self::new(gamma, k_min, k_max, OrderPolicy::UpDownOnly)
    }

    /// Fails when `k_min` cannot be realised on shell `n` of `m` variables for
    /// some order the policy may pick.
    pub fn check_feasible(&self, n: usize, m: usize) -> Result<()> {
        for &order in self.order_policy.orders() {
            let cap = order.max_length(n, m);
            if self.k_min > cap {
                return Err(Error::Config(format!(
                    "walk length k_min = {} is infeasible for {order:?} on shell n = {n} of M = {m} (max {cap})",
                    self.k_min
                )));
            }
        }
        Ok(())
    }

    /// Draws `k` (uniform, then clamped to the feasible maximum) and the order,
    /// in that order from the stream. Both depend only on `n` and `m`, which
    /// are invariant along a chain.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, m: usize, rng: &mut R) -> Result<(usize, WalkOrder)> {
        self.check_feasible(n, m)?;
        let k = if self.k_min == self.k_max {
            self.k_min
        } else {
            rng.random_range(self.k_min..=self.k_max)
        };
        let order = match self.order_policy {
            OrderPolicy::UpDownOnly => WalkOrder::UpDown,
            OrderPolicy::DownUpOnly => WalkOrder::DownUp,
            OrderPolicy::RandomSymmetric => {
                if rng.random::<bool>() {
                    WalkOrder::UpDown
                } else {
                    WalkOrder::DownUp
                }
            }
        };
        Ok((k.min(order.max_length(n, m)), order))
    }
}

/// A proposed intracluster move with its forward and reverse log
/// probabilities `log f(x1, sigma, rho | x0)` and `log f(x0, R(rho), R(sigma) | x1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SawMove {
    pub order: WalkOrder,
    pub k: usize,
    pub sigma: Vec<usize>,
    pub rho: Vec<usize>,
    pub bridge: Vec<bool>,
    pub proposed: Vec<bool>,
    pub log_f_fwd: f64,
    pub log_f_rev: f64,
    /// ΔE evaluations spent generating the move.
    pub evaluations: u64,
    /// Primitive operations spent generating the move, see [`Proposer::work`].
    pub work: u64,
}

/// How each walk step draws its candidate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Sum trees unless the model is dense or the exponents are large.
    #[default]
    Auto,
    /// Persistent sum trees over both candidate sets, O(degree · log M) per flip.
    Tree,
    /// Recompute and scan the candidate set, O(M) per step.
    Scan,
}

/// Average degree above which [`SelectionStrategy::Auto`] scans:
/// `M / 4` by default.
pub fn dense_threshold(model: &IsingModel) -> f64 {
    model.num_vars() as f64 / 4.0
}

impl SelectionStrategy {
    pub fn resolve(self, model: &IsingModel, gamma: f64) -> SelectionStrategy {
        let exponent_ok = gamma * model.max_flip_delta_bound() <= MAX_PLAIN_EXPONENT;
        match self {
            SelectionStrategy::Scan => SelectionStrategy::Scan,
            SelectionStrategy::Tree if exponent_ok => SelectionStrategy::Tree,
            SelectionStrategy::Tree => {
                log::warn!("weights may overflow for gamma = {gamma}; scanning instead of sum trees");
                SelectionStrategy::Scan
            }
            SelectionStrategy::Auto => {
                if exponent_ok && model.average_degree() <= dense_threshold(model) {
                    SelectionStrategy::Tree
                } else {
                    SelectionStrategy::Scan
                }
            }
        }
    }
}

enum Engine {
    Scan { scratch: Vec<f64> },
    Tree {
        toward: WeightedIndexTree,
        away: WeightedIndexTree,
    },
}

/// Stateful move generator bound to one chain's [`ShellState`].
///
/// With the tree strategy it keeps two sum trees whose leaves are
/// `exp(-gamma ΔE_i)` for members of `N(x)` and `P(x)` respectively; every
/// state change must go through [`Proposer::flip`] (or be followed by
/// [`Proposer::resync`]).
pub struct Proposer {
    gamma: f64,
    engine: Engine,
    evaluations: u64,
    work: u64,
}

impl Proposer {
    pub fn new(model: &IsingModel, state: &ShellState, gamma: f64, strategy: SelectionStrategy) -> Self {
        let engine = match strategy.resolve(model, gamma) {
            SelectionStrategy::Tree => Engine::Tree {
                toward: WeightedIndexTree::zeros(state.num_vars()),
                away: WeightedIndexTree::zeros(state.num_vars()),
            },
            _ => Engine::Scan {
                scratch: Vec::with_capacity(state.num_vars()),
            },
        };
        let mut p = Self {
            gamma,
            engine,
            evaluations: 0,
            work: 0,
        };
        p.resync(state);
        p
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn strategy(&self) -> SelectionStrategy {
        match self.engine {
            Engine::Scan { .. } => SelectionStrategy::Scan,
            Engine::Tree { .. } => SelectionStrategy::Tree,
        }
    }

    /// Rebuilds the trees from `state`.
    pub fn resync(&mut self, state: &ShellState) {
        if let Engine::Tree { toward, away } = &mut self.engine {
            let m = state.num_vars();
            let mut wt = vec![0.0; m];
            let mut wa = vec![0.0; m];
            for i in 0..m {
                let w = (-self.gamma * state.delta_unchecked(i)).exp();
                if state.is_disagreeing(i) {
                    wt[i] = w;
                } else {
                    wa[i] = w;
                }
            }
            *toward = WeightedIndexTree::build(&wt).expect("finite weights");
            *away = WeightedIndexTree::build(&wa).expect("finite weights");
            self.evaluations += m as u64;
            self.work += 3 * m as u64;
        }
    }

    #[inline]
    fn refresh_leaf(&mut self, state: &ShellState, i: usize, membership_changed: bool) {
        if let Engine::Tree { toward, away } = &mut self.engine {
            let w = (-self.gamma * state.delta_unchecked(i)).exp();
            let (on, off) = if state.is_disagreeing(i) {
                (toward, away)
            } else {
                (away, toward)
            };
            on.set_unchecked(i, w);
            self.work += 1 + on.depth() as u64;
            if membership_changed {
                off.set_unchecked(i, 0.0);
                self.work += off.depth() as u64;
            }
            self.evaluations += 1;
        }
    }

    /// Flips bit `i` and repairs the trees for `i` and its neighbours.
    pub fn flip(&mut self, model: &IsingModel, state: &mut ShellState, i: usize) {
        state.flip_unchecked(model, i);
        self.work += model.degree(i) as u64 + 1;
        if matches!(self.engine, Engine::Tree { .. }) {
            self.refresh_leaf(state, i, true);
            for &(m, _) in model.neighbors(i) {
                self.refresh_leaf(state, m, false);
            }
        }
    }

    /// Log-sum-exp of `-gamma ΔE` over the candidates of `dir`, with the
    /// per-candidate log weights left in the scratch buffer.
    fn scan_lse(&mut self, state: &ShellState, dir: Direction) -> (f64, f64) {
        let gamma = self.gamma;
        let Engine::Scan { scratch } = &mut self.engine else {
            unreachable!("scan_lse on tree engine")
        };
        scratch.clear();
        let mut max = f64::NEG_INFINITY;
        for &i in dir.candidates(state) {
            let lw = -gamma * state.delta_unchecked(i);
            max = max.max(lw);
            scratch.push(lw);
        }
        let sum: f64 = scratch.iter().map(|lw| (lw - max).exp()).sum();
        self.evaluations += scratch.len() as u64;
        self.work += 2 * scratch.len() as u64;
        (max, sum)
    }

    /// Draws the next flip of a `dir` walk and returns it with its log
    /// selection probability.
    fn select<R: Rng + ?Sized>(&mut self, state: &ShellState, dir: Direction, rng: &mut R) -> Result<(usize, f64)> {
        let u: f64 = rng.random();
        match &self.engine {
            Engine::Tree { toward, away } => {
                let tree = match dir {
                    Direction::Toward => toward,
                    Direction::Away => away,
                };
                let i = tree.sample(u)?;
                self.work += tree.depth() as u64;
                Ok((i, tree.log_weight_fraction(i)?))
            }
            Engine::Scan { .. } => {
                let (max, sum) = self.scan_lse(state, dir);
                let Engine::Scan { scratch } = &self.engine else {
                    unreachable!()
                };
                let cands = dir.candidates(state);
                if cands.is_empty() {
                    return Err(Error::EmptySupport(format!("no {dir:?} candidates")));
                }
                self.work += scratch.len() as u64;
                let target = u * sum;
                let mut acc = 0.0;
                let mut pick = cands.len() - 1;
                for (k, lw) in scratch.iter().enumerate() {
                    acc += (lw - max).exp();
                    if target < acc {
                        pick = k;
                        break;
                    }
                }
                Ok((cands[pick], scratch[pick] - max - sum.ln()))
            }
        }
    }

    /// Log probability that a `dir` step from `state` picks `i` (which must be
    /// a candidate).
    fn log_prob(&mut self, state: &ShellState, dir: Direction, i: usize) -> f64 {
        match &self.engine {
            Engine::Tree { toward, away } => {
                let tree = match dir {
                    Direction::Toward => toward,
                    Direction::Away => away,
                };
                self.work += 1;
                tree.weight(i).ln() - tree.total().ln()
            }
            Engine::Scan { .. } => {
                let (max, sum) = self.scan_lse(state, dir);
                -self.gamma * state.delta_unchecked(i) - max - sum.ln()
            }
        }
    }

    /// Generates a move and leaves `state` at the proposed configuration.
    /// Use [`Proposer::undo`] to return to the start on rejection.
    pub fn propose_in_place<R: Rng + ?Sized>(
        &mut self,
        model: &IsingModel,
        state: &mut ShellState,
        params: &SawParams,
        rng: &mut R,
    ) -> Result<SawMove> {
        let (start_evals, start_work) = (self.evaluations, self.work);
        let (k, order) = params.draw(state.distance(), state.num_vars(), rng)?;
        let (first, second) = order.directions();
        let mut log_fwd = 0.0;
        let mut log_rev = 0.0;

        let mut walk = |dir: Direction, this: &mut Self, state: &mut ShellState, rng: &mut R| -> Result<Vec<usize>> {
            let mut seq = Vec::with_capacity(k);
            for _ in 0..k {
                let (i, lp) = this.select(state, dir, rng)?;
                log_fwd += lp;
                this.flip(model, state, i);
                // The reverse move takes the opposite step back from here.
                log_rev += this.log_prob(state, dir.opposite(), i);
                seq.push(i);
            }
            Ok(seq)
        };
        let sigma = walk(first, self, state, rng)?;
        let bridge = state.bits().to_vec();
        let rho = walk(second, self, state, rng)?;

        Ok(SawMove {
            order,
            k,
            sigma,
            rho,
            bridge,
            proposed: state.bits().to_vec(),
            log_f_fwd: log_fwd,
            log_f_rev: log_rev,
            evaluations: self.evaluations - start_evals,
            work: self.work - start_work,
        })
    }

    /// Reverts a move produced by [`Proposer::propose_in_place`].
    pub fn undo(&mut self, model: &IsingModel, state: &mut ShellState, mv: &SawMove) {
        for &i in mv.rho.iter().rev().chain(mv.sigma.iter().rev()) {
            self.flip(model, state, i);
        }
    }

    /// Total ΔE evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Total primitive operations so far: ΔE evaluations, local-field
    /// updates, scanned candidates and sum-tree node visits. This is the
    /// deterministic compute measure used for fair comparisons.
    pub fn work(&self) -> u64 {
        self.work
    }
}

/// Proposes a move from `state` without modifying it.
pub fn propose<R: Rng + ?Sized>(
    model: &IsingModel,
    state: &ShellState,
    params: &SawParams,
    rng: &mut R,
) -> Result<SawMove> {
    let mut scratch = state.clone();
    let mut proposer = Proposer::new(model, &scratch, params.gamma, SelectionStrategy::Auto);
    proposer.propose_in_place(model, &mut scratch, params, rng)
}

/// `(R(rho), R(sigma))`.
pub fn reverse_sequences(sigma: &[usize], rho: &[usize]) -> (Vec<usize>, Vec<usize>) {
    (rho.iter().rev().copied().collect(), sigma.iter().rev().copied().collect())
}

/// Log probability of walking `first_seq` then `second_seq` from `start`,
/// replayed flip by flip. Returns negative infinity when some flip is not an
/// allowable move at its step.
pub fn path_log_prob(
    model: &IsingModel,
    start: &ShellState,
    first_seq: &[usize],
    second_seq: &[usize],
    gamma: f64,
    order: WalkOrder,
) -> Result<f64> {
    if first_seq.len() != second_seq.len() {
        return Err(Error::Argument(format!(
            "walk lengths differ: {} vs {}",
            first_seq.len(),
            second_seq.len()
        )));
    }
    let (first, second) = order.directions();
    let mut state = start.clone();
    let mut total = 0.0;
    for (seq, dir) in [(first_seq, first), (second_seq, second)] {
        for &i in seq {
            if i >= state.num_vars() || !dir.admits(&state, i) {
                return Ok(f64::NEG_INFINITY);
            }
            let lws: Vec<f64> = dir
                .candidates(&state)
                .iter()
                .map(|&j| -gamma * state.delta_unchecked(j))
                .collect();
            let max = lws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lws.iter().map(|lw| (lw - max).exp()).sum::<f64>().ln();
            total += -gamma * state.delta_unchecked(i) - lse;
            state.flip_unchecked(model, i);
        }
    }
    Ok(total)
}

/// Normalized selection probabilities of one `dir` step from `state`, as
/// `(candidate, probability)` pairs sorted by candidate.
pub fn step_distribution(state: &ShellState, gamma: f64, dir: Direction) -> Vec<(usize, f64)> {
    let mut cands = dir.candidates(state).to_vec();
    cands.sort_unstable();
    let lws: Vec<f64> = cands.iter().map(|&i| -gamma * state.delta_unchecked(i)).collect();
    let max = lws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = lws.iter().map(|lw| (lw - max).exp()).sum();
    cands
        .into_iter()
        .zip(lws)
        .map(|(i, lw)| (i, (lw - max).exp() / z))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::grid2d;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bits(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    fn one_based(v: &[usize]) -> Vec<usize> {
        v.iter().map(|i| i - 1).collect()
    }

    fn chain4() -> IsingModel {
        IsingModel::new(4, vec![(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)], vec![0.0; 4]).unwrap()
    }

    #[test]
    fn reverse_examples() {
        let (r, _) = reverse_sequences(&[], &[2, 3, 1, 4]);
        assert_eq!(r, vec![4, 1, 3, 2]);
        let (rr, rs) = reverse_sequences(&[4, 2, 5], &[5, 7, 2]);
        assert_eq!((rr.clone(), rs.clone()), (vec![2, 7, 5], vec![5, 2, 4]));
        let (s2, r2) = reverse_sequences(&rr, &rs);
        assert_eq!((s2, r2), (vec![4, 2, 5], vec![5, 7, 2]));
    }

    #[test]
    fn figure_walks_are_allowable_both_ways() {
        let model = IsingModel::new(7, vec![], vec![0.0; 7]).unwrap();
        let x0 = ShellState::new(&model, bits(&[1, 1, 1, 1, 1, 0, 0]), vec![false; 7]).unwrap();
        let sigma = one_based(&[4, 2, 5]);
        let rho = one_based(&[5, 7, 2]);

        let mut y = x0.clone();
        for &i in &sigma {
            y.flip(&model, i).unwrap();
        }
        assert_eq!(y.bits(), bits(&[1, 0, 1, 0, 0, 0, 0]).as_slice());
        assert_eq!(y.distance(), 2);
        let mut x1 = y.clone();
        for &i in &rho {
            x1.flip(&model, i).unwrap();
        }
        assert_eq!(x1.bits(), bits(&[1, 1, 1, 0, 1, 0, 1]).as_slice());

        let fwd = path_log_prob(&model, &x0, &sigma, &rho, 1.0, WalkOrder::UpDown).unwrap();
        assert!(fwd.is_finite());
        let (rr, rs) = reverse_sequences(&sigma, &rho);
        let rev = path_log_prob(&model, &x1, &rr, &rs, 1.0, WalkOrder::UpDown).unwrap();
        assert!(rev.is_finite());
        // No couplings: every step is uniform over 5,4,3 then 5,4,3 candidates.
        let want = -(5f64 * 4.0 * 3.0 * 5.0 * 4.0 * 3.0).ln();
        assert!((fwd - want).abs() < 1e-12);
    }

    #[test]
    fn disallowed_first_flip_has_zero_probability() {
        let model = chain4();
        let x0 = ShellState::new(&model, bits(&[1, 1, 0, 0]), vec![false; 4]).unwrap();
        // Index 2 agrees with the reference, so it cannot start a toward walk.
        let lp = path_log_prob(&model, &x0, &[2], &[0], 1.0, WalkOrder::UpDown).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
        assert_eq!(
            path_log_prob(&model, &x0, &[9], &[0], 1.0, WalkOrder::UpDown).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(path_log_prob(&model, &x0, &[0], &[], 1.0, WalkOrder::UpDown).is_err());
    }

    #[test]
    fn gamma_zero_forward_probability_is_counting() {
        let model = grid2d(4, 1.0, 0.0).unwrap();
        let m = 16;
        let n = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let constraint = crate::model::ShellConstraint::magnetization(m, n).unwrap();
        let x0 = crate::samplers::random_shell_state(&model, &constraint, &mut rng).unwrap();
        for k in 1..=n {
            let mv = propose(&model, &x0, &SawParams::fixed(0.0, k), &mut rng).unwrap();
            let want: f64 = -(0..k).map(|i| ((n - i) as f64).ln()).sum::<f64>()
                - (0..k).map(|i| ((m - n + k - i) as f64).ln()).sum::<f64>();
            assert!((mv.log_f_fwd - want).abs() < 1e-10, "k={k}");
            assert!((mv.log_f_rev - want).abs() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn chain_forward_probability_matches_explicit_sum() {
        // Brute force over the candidate sets using full-state energies.
        let model = chain4();
        let gamma = 1.0;
        let x0 = ShellState::new(&model, bits(&[1, 0, 1, 0]), vec![false; 4]).unwrap();
        let weight = |s: &ShellState, i: usize| {
            let mut b = s.bits().to_vec();
            b[i] = !b[i];
            (-gamma * model.energy(&b).unwrap()).exp()
        };
        let n_set: Vec<usize> = (0..4).filter(|&i| x0.bits()[i]).collect();
        for &s in &n_set {
            let up_z: f64 = n_set.iter().map(|&j| weight(&x0, j)).sum();
            let p_up = weight(&x0, s) / up_z;
            let y = x0.flipped(&model, s).unwrap();
            let p_set: Vec<usize> = (0..4).filter(|&i| !y.bits()[i]).collect();
            let down_z: f64 = p_set.iter().map(|&j| weight(&y, j)).sum();
            for &r in &p_set {
                let want = (p_up * weight(&y, r) / down_z).ln();
                let got = path_log_prob(&model, &x0, &[s], &[r], gamma, WalkOrder::UpDown).unwrap();
                assert!((got - want).abs() < 1e-12, "sigma={s} rho={r}");
            }
        }
        // And propose() reports the same value for what it samples.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let mv = propose(&model, &x0, &SawParams::fixed(gamma, 1), &mut rng).unwrap();
            let replay = path_log_prob(&model, &x0, &mv.sigma, &mv.rho, gamma, mv.order).unwrap();
            assert!((mv.log_f_fwd - replay).abs() < 1e-10);
        }
    }

    #[test]
    fn step_distribution_normalizes_and_matches_full_energy_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = crate::generators::cube3d_pm_j(2, 3).unwrap();
        let constraint = crate::model::ShellConstraint::magnetization(8, 4).unwrap();
        for _ in 0..20 {
            let st = crate::samplers::random_shell_state(&model, &constraint, &mut rng).unwrap();
            let gamma = rng.random_range(0.0..2.0);
            for dir in [Direction::Toward, Direction::Away] {
                let dist = step_distribution(&st, gamma, dir);
                let total: f64 = dist.iter().map(|(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-10);
                let full: Vec<f64> = dist
                    .iter()
                    .map(|&(i, _)| {
                        let mut b = st.bits().to_vec();
                        b[i] = !b[i];
                        (-gamma * model.energy(&b).unwrap()).exp()
                    })
                    .collect();
                let z: f64 = full.iter().sum();
                for ((_, p), w) in dist.iter().zip(&full) {
                    assert!((p - w / z).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn tree_and_scan_agree() {
        let model = grid2d(6, 1.0, 0.1).unwrap();
        let constraint = crate::model::ShellConstraint::magnetization(36, 18).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = crate::samplers::random_shell_state(&model, &constraint, &mut rng).unwrap();
        let params = SawParams::new(0.7, 1, 6, OrderPolicy::RandomSymmetric).unwrap();
        for seed in 0..30 {
            let mut a = x0.clone();
            let mut b = x0.clone();
            let mut pa = Proposer::new(&model, &a, 0.7, SelectionStrategy::Tree);
            let mut pb = Proposer::new(&model, &b, 0.7, SelectionStrategy::Scan);
            assert_eq!(pa.strategy(), SelectionStrategy::Tree);
            let ma = pa.propose_in_place(&model, &mut a, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mb = pb.propose_in_place(&model, &mut b, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            // Same candidate probabilities; draws may differ only if a uniform
            // lands within rounding of an interval edge.
            let rf = path_log_prob(&model, &x0, &ma.sigma, &ma.rho, 0.7, ma.order).unwrap();
            assert!((ma.log_f_fwd - rf).abs() < 1e-10);
            let rf = path_log_prob(&model, &x0, &mb.sigma, &mb.rho, 0.7, mb.order).unwrap();
            assert!((mb.log_f_fwd - rf).abs() < 1e-10);
            pa.undo(&model, &mut a, &ma);
            assert_eq!(a, x0);
        }
    }

    #[test]
    fn moves_stay_on_shell_and_reverse_is_allowable() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..200 {
            let side = rng.random_range(2..5);
            let model = crate::generators::cube3d_pm_j(side, trial).unwrap();
            let m = model.num_vars();
            let n = rng.random_range(1..m);
            let constraint = crate::model::ShellConstraint::magnetization(m, n).unwrap();
            let x0 = crate::samplers::random_shell_state(&model, &constraint, &mut rng).unwrap();
            let k_max = rng.random_range(1..=n.min(m - n));
            let params = SawParams::new(rng.random_range(0.0..1.5), 1, k_max, OrderPolicy::RandomSymmetric).unwrap();
            let mv = propose(&model, &x0, &params, &mut rng).unwrap();
            let x1 = ShellState::new(&model, mv.proposed.clone(), vec![false; m]).unwrap();
            assert_eq!(x1.distance(), n);
            let bridge_dist = crate::model::hamming(&mv.bridge, &vec![false; m]);
            match mv.order {
                WalkOrder::UpDown => assert_eq!(bridge_dist, n - mv.k),
                WalkOrder::DownUp => assert_eq!(bridge_dist, n + mv.k),
            }
            let mut s = mv.sigma.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), mv.k);
            let mut r = mv.rho.clone();
            r.sort_unstable();
            r.dedup();
            assert_eq!(r.len(), mv.k);
            let (rr, rs) = reverse_sequences(&mv.sigma, &mv.rho);
            let rev = path_log_prob(&model, &x1, &rr, &rs, params.gamma, mv.order).unwrap();
            assert!(rev.is_finite());
            assert!((rev - mv.log_f_rev).abs() < 1e-10);
        }
    }

    #[test]
    fn infeasible_lengths_are_config_errors() {
        let model = chain4();
        let x0 = ShellState::new(&model, bits(&[1, 0, 0, 0]), vec![false; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = propose(&model, &x0, &SawParams::fixed(1.0, 2), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        // Upper bound clamps instead of failing.
        let mv = propose(&model, &x0, &SawParams::uniform(1.0, 1, 3).unwrap(), &mut rng).unwrap();
        assert_eq!(mv.k, 1);
        assert!(SawParams::new(-1.0, 1, 1, OrderPolicy::UpDownOnly).is_err());
        assert!(SawParams::new(1.0, 2, 1, OrderPolicy::UpDownOnly).is_err());
    }
}

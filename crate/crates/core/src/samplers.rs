//! Shell-preserving MCMC samplers and the chain driver.
//!
//! Each chain draws from one explicitly seeded stream, see [`chain_rng`]. Per
//! intracluster move the stream is consumed in a fixed order: walk length,
//! walk order (symmetric policy only), one uniform per walk step, then the
//! accept uniform. A Metropolis swap draws the disagreeing index, the agreeing
//! index and the accept uniform.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IsingModel, ShellConstraint, ShellState};
use crate::saw::{Proposer, SawMove, SawParams, SelectionStrategy};

/// The per-chain stream: ChaCha8 seeded from `master_seed` with
/// `set_stream(chain_index)`.
pub fn chain_rng(master_seed: u64, chain_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(chain_index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImConfig {
    pub beta: f64,
    pub saw: SawParams,
    #[serde(default)]
    pub strategy: SelectionStrategy,
}

impl ImConfig {
    pub fn new(beta: f64, saw: SawParams) -> Self {
        Self {
            beta,
            saw,
            strategy: SelectionStrategy::Auto,
        }
    }

    pub fn with_strategy(mut self, strategy: SelectionStrategy) -> Self {
        self.strategy = strategy;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetropolisConfig {
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    Im(ImConfig),
    Metropolis(MetropolisConfig),
}

impl Sampler {
    pub fn name(&self) -> &'static str {
        match self {
            Sampler::Im(_) => "im",
            Sampler::Metropolis(_) => "metropolis",
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            Sampler::Im(c) => c.beta,
            Sampler::Metropolis(c) => c.beta,
        }
    }

    fn validate(&self) -> Result<()> {
        let beta = self.beta();
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(())
    }
}

/// Outcome of one attempted move.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub log_alpha: f64,
    /// Walk length (0 for Metropolis swaps).
    pub k: usize,
    /// ΔE evaluations spent on the attempt.
    pub evaluations: u64,
    /// Primitive operations spent on the attempt (see [`Proposer::work`]).
    pub work: u64,
}

fn log_accept(beta: f64, e0: f64, e1: f64, log_f_fwd: f64, log_f_rev: f64) -> f64 {
    (-beta * (e1 - e0) + log_f_rev - log_f_fwd).min(0.0)
}

/// Intracluster-move sampler bound to one chain.
pub struct ImSampler {
    config: ImConfig,
    proposer: Proposer,
}

impl ImSampler {
    pub fn new(model: &IsingModel, state: &ShellState, config: ImConfig) -> Result<Self> {
        Sampler::Im(config).validate()?;
        config.saw.check_feasible(state.distance(), state.num_vars())?;
        Ok(Self {
            config,
            proposer: Proposer::new(model, state, config.saw.gamma, config.strategy),
        })
    }

    pub fn proposer(&self) -> &Proposer {
        &self.proposer
    }

    pub fn step<R: Rng + ?Sized>(&mut self, model: &IsingModel, state: &mut ShellState, rng: &mut R) -> Result<StepOutcome> {
        self.step_with_move(model, state, rng).map(|(o, _)| o)
    }

    /// As [`ImSampler::step`], also returning the proposed move.
    pub fn step_with_move<R: Rng + ?Sized>(
        &mut self,
        model: &IsingModel,
        state: &mut ShellState,
        rng: &mut R,
    ) -> Result<(StepOutcome, SawMove)> {
        let e0 = state.energy();
        let (before, work_before) = (self.proposer.evaluations(), self.proposer.work());
        let mv = self.proposer.propose_in_place(model, state, &self.config.saw, rng)?;
        let log_alpha = log_accept(self.config.beta, e0, state.energy(), mv.log_f_fwd, mv.log_f_rev);
        let u: f64 = rng.random();
        let accepted = u < log_alpha.exp();
        if !accepted {
            self.proposer.undo(model, state, &mv);
        }
        Ok((
            StepOutcome {
                accepted,
                log_alpha,
                k: mv.k,
                evaluations: self.proposer.evaluations() - before,
                work: self.proposer.work() - work_before,
            },
            mv,
        ))
    }
}

/// One intracluster move on `state` (accept rule
/// `min(1, pi(x1) f(x0, R(rho), R(sigma) | x1) / (pi(x0) f(x1, sigma, rho | x0)))`).
/// The shell normalizer cancels and is never computed.
pub fn im_step<R: Rng + ?Sized>(
    model: &IsingModel,
    state: &mut ShellState,
    config: &ImConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    ImSampler::new(model, state, *config)?.step(model, state, rng)
}

/// One Metropolis bit swap: flip a uniformly chosen disagreeing bit and a
/// uniformly chosen agreeing bit together.
pub fn metropolis_step<R: Rng + ?Sized>(
    model: &IsingModel,
    state: &mut ShellState,
    config: &MetropolisConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    let n = state.distance();
    if n == 0 || n == state.num_vars() {
        return Err(Error::Config(format!(
            "no bit swap exists on shell n = {n} of M = {}",
            state.num_vars()
        )));
    }
    let i = state.disagree_set().get(rng.random_range(0..n)).expect("index in range");
    let j = state
        .agree_set()
        .get(rng.random_range(0..state.num_vars() - n))
        .expect("index in range");
    let d_i = state.delta_unchecked(i);
    state.flip_unchecked(model, i);
    // Evaluated after flipping i, so adjacent pairs are handled exactly.
    let d_j = state.delta_unchecked(j);
    let log_alpha = (-config.beta * (d_i + d_j)).min(0.0);
    let u: f64 = rng.random();
    let accepted = u < log_alpha.exp();
    let second = if accepted { j } else { i };
    state.flip_unchecked(model, second);
    Ok(StepOutcome {
        accepted,
        log_alpha,
        k: 0,
        evaluations: 2,
        work: 2 + (model.degree(i) + 1 + model.degree(second) + 1) as u64,
    })
}

/// Recorded output of [`run_chain`]. The per-record arrays all have one entry
/// per recorded move.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub sampler: String,
    pub steps: Vec<u64>,
    pub energies: Vec<f64>,
    pub accepted: Vec<bool>,
    pub ks: Vec<u32>,
    pub record_stride: u64,
    pub num_moves: u64,
    pub accepted_moves: u64,
    pub evaluations: u64,
    pub work: u64,
    pub wall_seconds: f64,
}

impl ChainRecord {
    pub fn acceptance_rate(&self) -> f64 {
        if self.num_moves == 0 {
            0.0
        } else {
            self.accepted_moves as f64 / self.num_moves as f64
        }
    }

    /// Mean ΔE evaluations per attempted move.
    pub fn evaluations_per_move(&self) -> f64 {
        self.evaluations as f64 / self.num_moves.max(1) as f64
    }

    /// Mean primitive operations per attempted move.
    pub fn work_per_move(&self) -> f64 {
        self.work as f64 / self.num_moves.max(1) as f64
    }

    pub fn wall_clock_per_move(&self) -> f64 {
        self.wall_seconds / self.num_moves.max(1) as f64
    }
}

/// Runs `num_moves` moves from `state`, recording after move `s` whenever
/// `s % record_stride == 0`. The state is left at the chain's final position.
pub fn run_chain<R: Rng + ?Sized>(
    model: &IsingModel,
    state: &mut ShellState,
    sampler: &Sampler,
    num_moves: u64,
    record_stride: u64,
    rng: &mut R,
) -> Result<ChainRecord> {
    run_chain_observed(model, state, sampler, num_moves, record_stride, rng, |_, _, _| {})
}

/// As [`run_chain`], calling `observe(step, state, outcome)` after every
/// recorded move.
pub fn run_chain_observed<R, F>(
    model: &IsingModel,
    state: &mut ShellState,
    sampler: &Sampler,
    num_moves: u64,
    record_stride: u64,
    rng: &mut R,
    mut observe: F,
) -> Result<ChainRecord>
where
    R: Rng + ?Sized,
    F: FnMut(u64, &ShellState, &StepOutcome),
{
    if num_moves == 0 {
        return Err(Error::Argument("num_moves must be at least 1".into()));
    }
    if record_stride == 0 {
        return Err(Error::Argument("record_stride must be at least 1".into()));
    }
    sampler.validate()?;
    let records = num_moves.div_ceil(record_stride) as usize;
    let mut rec = ChainRecord {
        sampler: sampler.name().to_string(),
        steps: Vec::with_capacity(records),
        energies: Vec::with_capacity(records),
        accepted: Vec::with_capacity(records),
        ks: Vec::with_capacity(records),
        record_stride,
        num_moves,
        ..Default::default()
    };
    let n = state.distance();
    let mut im = match sampler {
        Sampler::Im(cfg) => Some(ImSampler::new(model, state, *cfg)?),
        Sampler::Metropolis(_) => None,
    };
    let started = Instant::now();
    for step in 0..num_moves {
        let outcome = match (sampler, im.as_mut()) {
            (Sampler::Im(_), Some(eng)) => eng.step(model, state, rng)?,
            (Sampler::Metropolis(cfg), _) => metropolis_step(model, state, cfg, rng)?,
            _ => unreachable!(),
        };
        debug_assert_eq!(state.distance(), n, "left the shell");
        rec.accepted_moves += outcome.accepted as u64;
        rec.evaluations += outcome.evaluations;
        rec.work += outcome.work;
        if step % record_stride == 0 {
            rec.steps.push(step);
            rec.energies.push(state.energy());
            rec.accepted.push(outcome.accepted);
            rec.ks.push(outcome.k as u32);
            observe(step, state, &outcome);
        }
    }
    rec.wall_seconds = started.elapsed().as_secs_f64();
    Ok(rec)
}

/// A uniform draw from `S_n(c)` via a partial Fisher–Yates selection of the
/// `n` disagreeing positions.
pub fn random_shell_state<R: Rng + ?Sized>(
    model: &IsingModel,
    constraint: &ShellConstraint,
    rng: &mut R,
) -> Result<ShellState> {
    let m = constraint.num_vars();
    if m != model.num_vars() {
        return Err(Error::Argument(format!(
            "constraint has {m} variables but the model has {}",
            model.num_vars()
        )));
    }
    let n = constraint.distance();
    let mut idx: Vec<usize> = (0..m).collect();
    for t in 0..n {
        let j = rng.random_range(t..m);
        idx.swap(t, j);
    }
    let mut bits = constraint.reference().to_vec();
    for &i in &idx[..n] {
        bits[i] = !bits[i];
    }
    ShellState::new(model, bits, constraint.reference().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{cube3d_pm_j, grid2d};
    use crate::oracle;
    use std::collections::HashMap;

    fn key(bits: &[bool]) -> u64 {
        bits.iter().enumerate().fold(0, |k, (i, &b)| k | ((b as u64) << i))
    }

    #[test]
    fn equal_energy_symmetric_move_is_accepted() {
        // No couplings and gamma = 0: energies equal and path probabilities
        // are both counting terms of the same shell sizes.
        let model = IsingModel::new(6, vec![], vec![0.0; 6]).unwrap();
        let c = ShellConstraint::magnetization(6, 3).unwrap();
        let mut rng = chain_rng(1, 0);
        let mut st = random_shell_state(&model, &c, &mut rng).unwrap();
        let cfg = ImConfig::new(1.0, SawParams::fixed(0.0, 2));
        for _ in 0..100 {
            let out = im_step(&model, &mut st, &cfg, &mut rng).unwrap();
            assert!(out.accepted);
            assert_eq!(out.log_alpha, 0.0);
        }
    }

    #[test]
    fn metropolis_swap_example() {
        // x = [1,1,1,0,0,0,0] can reach [1,1,0,0,1,0,0] by swapping bits 3 and 5.
        let model = IsingModel::new(7, vec![], vec![0.0; 7]).unwrap();
        let x: Vec<bool> = [1, 1, 1, 0, 0, 0, 0].iter().map(|&b| b == 1).collect();
        let target: Vec<bool> = [1, 1, 0, 0, 1, 0, 0].iter().map(|&b| b == 1).collect();
        let mut seen = false;
        for seed in 0..200 {
            let mut st = ShellState::new(&model, x.clone(), vec![false; 7]).unwrap();
            let out = metropolis_step(&model, &mut st, &MetropolisConfig { beta: 1.0 }, &mut chain_rng(seed, 0)).unwrap();
            assert!(out.accepted, "zero-coupling swaps are always accepted");
            assert_eq!(st.distance(), 3);
            seen |= st.bits() == target.as_slice();
        }
        assert!(seen);
    }

    #[test]
    fn metropolis_rejects_degenerate_shells() {
        let model = grid2d(2, 1.0, 0.0).unwrap();
        let mut st = ShellState::new(&model, vec![false; 4], vec![false; 4]).unwrap();
        let err = metropolis_step(&model, &mut st, &MetropolisConfig { beta: 1.0 }, &mut chain_rng(0, 0));
        assert!(matches!(err, Err(Error::Config(_))));
        let mut st = ShellState::new(&model, vec![true; 4], vec![false; 4]).unwrap();
        assert!(metropolis_step(&model, &mut st, &MetropolisConfig { beta: 1.0 }, &mut chain_rng(0, 0)).is_err());
    }

    #[test]
    fn pathwise_balance_on_sampled_grid_moves() {
        let model = grid2d(3, 1.0, 0.0).unwrap();
        let mut rng = chain_rng(5, 0);
        for _ in 0..300 {
            let beta = rng.random_range(0.0..1.0);
            let gamma = rng.random_range(0.0..1.0);
            let n = rng.random_range(1..9);
            let c = ShellConstraint::magnetization(9, n).unwrap();
            let mut st = random_shell_state(&model, &c, &mut rng).unwrap();
            let x0 = st.clone();
            let k = rng.random_range(1..=n.min(9 - n).min(3));
            let mut s = ImSampler::new(&model, &st, ImConfig::new(beta, SawParams::fixed(gamma, k))).unwrap();
            let (_, mv) = s.step_with_move(&model, &mut st, &mut rng).unwrap();
            let check = oracle::check_pathwise_db(&model, beta, gamma, &mv, &x0).unwrap();
            assert!(check.relative_gap <= 1e-10, "{check:?}");
        }
    }

    #[test]
    fn random_shell_state_edges_and_uniformity() {
        let model = IsingModel::new(6, vec![], vec![0.0; 6]).unwrap();
        let reference = vec![true, false, true, false, false, true];
        let mut rng = chain_rng(3, 0);
        let st = random_shell_state(&model, &ShellConstraint::new(reference.clone(), 0).unwrap(), &mut rng).unwrap();
        assert_eq!(st.bits(), reference.as_slice());
        let st = random_shell_state(&model, &ShellConstraint::new(reference.clone(), 6).unwrap(), &mut rng).unwrap();
        assert!(st.bits().iter().zip(&reference).all(|(a, b)| a != b));

        let c = ShellConstraint::magnetization(6, 3).unwrap();
        let mut counts: HashMap<u64, usize> = HashMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            *counts.entry(key(random_shell_state(&model, &c, &mut rng).unwrap().bits())).or_default() += 1;
        }
        assert_eq!(counts.len(), 20);
        for (&k, &n) in &counts {
            let f = n as f64 / draws as f64;
            assert!((f - 0.05).abs() <= 0.005, "state {k:b}: {f}");
        }
        assert!(ShellConstraint::magnetization(6, 7).is_err());
    }

    #[test]
    fn run_chain_shapes_and_determinism() {
        let model = grid2d(4, 1.0, 0.0).unwrap();
        let c = ShellConstraint::magnetization(16, 8).unwrap();
        let im = Sampler::Im(ImConfig::new(0.4, SawParams::uniform(0.4, 1, 4).unwrap()));
        for stride in [1, 3, 7] {
            let mut st = random_shell_state(&model, &c, &mut chain_rng(0, 0)).unwrap();
            let rec = run_chain(&model, &mut st, &im, 1, stride, &mut chain_rng(0, 1)).unwrap();
            assert_eq!(rec.energies.len(), 1);
        }
        let run = || {
            let mut rng = chain_rng(42, 3);
            let mut st = random_shell_state(&model, &c, &mut rng).unwrap();
            let mut rec = run_chain(&model, &mut st, &im, 500, 3, &mut rng).unwrap();
            rec.wall_seconds = 0.0;
            rec
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.energies.len(), 167);
        assert_eq!(a.steps.len(), a.ks.len());
        let mut st = random_shell_state(&model, &c, &mut chain_rng(0, 0)).unwrap();
        assert!(run_chain(&model, &mut st, &im, 0, 1, &mut chain_rng(0, 0)).is_err());
    }

    #[test]
    fn cached_energy_matches_recomputation_at_checkpoints() {
        let model = cube3d_pm_j(5, 17).unwrap();
        let c = ShellConstraint::magnetization(125, 63).unwrap();
        let samplers = [
            Sampler::Im(ImConfig::new(1.0, SawParams::uniform(0.8, 1, 10).unwrap())),
            Sampler::Metropolis(MetropolisConfig { beta: 1.0 }),
        ];
        for sampler in samplers {
            let mut rng = chain_rng(9, 0);
            let mut st = random_shell_state(&model, &c, &mut rng).unwrap();
            for _ in 0..3 {
                run_chain(&model, &mut st, &sampler, 1 << 14, 1 << 14, &mut rng).unwrap();
                let fresh = model.energy(st.bits()).unwrap();
                assert!((st.energy() - fresh).abs() <= 1e-9 * (1.0 + fresh.abs()));
                assert_eq!(st.distance(), 63);
            }
        }
    }

    #[test]
    fn beta_zero_samples_uniformly() {
        let model = grid2d(3, 1.0, 0.0).unwrap();
        let c = ShellConstraint::magnetization(9, 4).unwrap();
        // A strong bias at beta = 0 rejects most moves, so keep gamma small.
        let sampler = Sampler::Im(ImConfig::new(0.0, SawParams::uniform(0.1, 1, 3).unwrap()));
        let mut rng = chain_rng(8, 0);
        let mut st = random_shell_state(&model, &c, &mut rng).unwrap();
        let shell = oracle::enumerate_shell(9, &c, oracle::DEFAULT_SHELL_CAP).unwrap();
        let exact = oracle::exact_distribution(&model, 0.0, &c, shell).unwrap();
        let mut counts = vec![0usize; exact.states.len()];
        run_chain_observed(&model, &mut st, &sampler, 100_000, 1, &mut rng, |_, s, _| {
            counts[exact.index_of(s.bits()).unwrap()] += 1;
        })
        .unwrap();
        let emp: Vec<f64> = counts.iter().map(|&c| c as f64 / 100_000.0).collect();
        let tv = oracle::tv_distance(&emp, &exact.probs).unwrap();
        assert!(tv < 0.03, "tv = {tv}");
    }
}

//! Oracle-backed self-checks behind `shellwalk verify`.
//!
//! * kernel: the enumerated intracluster-move kernel on a 6-variable chain
//!   must leave `pi_n` invariant and satisfy detailed balance.
//! * sampling: both samplers on a 3×3 ferromagnet must match the enumerated
//!   distribution in total variation.
//! * pathwise: sampled moves on random 3×3 instances must satisfy the
//!   pathwise balance identity.
//!
//! With corruption injected, every log acceptance ratio of the kernel suite
//! and every recorded reverse path probability of the pathwise suite is
//! shifted by [`CORRUPTION`]; both suites must then fail. The sampling suite
//! is not corrupted.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::grid2d;
use crate::model::{IsingModel, ShellConstraint};
use crate::oracle::{self, ExactShell};
use crate::samplers::{chain_rng, random_shell_state, run_chain_observed, ImConfig, ImSampler, MetropolisConfig, Sampler};
use crate::saw::{OrderPolicy, SawParams};

pub const STATIONARITY_TOL: f64 = 1e-12;
pub const PATHWISE_TOL: f64 = 1e-10;
pub const TV_TOL: f64 = 0.02;
/// Log-space shift applied by corruption injection.
pub const CORRUPTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub kernel: bool,
    pub sampling: bool,
    pub pathwise: bool,
    pub seed: u64,
    /// Recorded states per sampler after burn-in.
    pub sampling_states: u64,
    /// Moves between recorded states in the sampling suite.
    pub sampling_stride: u64,
    pub pathwise_moves: usize,
    pub inject_corruption: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            kernel: true,
            sampling: true,
            pathwise: true,
            seed: 0,
            sampling_states: 200_000,
            sampling_stride: 5,
            pathwise_moves: 10_000,
            inject_corruption: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub instance: String,
    pub num_states: usize,
    pub paths: u64,
    pub stationarity_gap: f64,
    pub max_db_gap: f64,
    pub max_row_sum_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub instance: String,
    pub num_states: usize,
    pub recorded_states: u64,
    pub record_stride: u64,
    pub burn_in_moves: u64,
    pub tv_im: f64,
    pub tv_metropolis: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathwiseReport {
    pub moves: usize,
    pub max_relative_gap: f64,
    pub failures: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub kernel: Option<KernelReport>,
    pub sampling: Option<SamplingReport>,
    pub pathwise: Option<PathwiseReport>,
    pub corruption_injected: bool,
    pub pass: bool,
}

/// The 6-variable open chain with unit couplings.
pub fn chain6() -> IsingModel {
    IsingModel::new(6, (0..5).map(|i| (i, i + 1, 1.0)).collect(), vec![0.0; 6]).expect("valid chain")
}

fn exact(model: &IsingModel, beta: f64, n: usize) -> Result<(ShellConstraint, ExactShell)> {
    let c = ShellConstraint::magnetization(model.num_vars(), n)?;
    let states = oracle::enumerate_shell(model.num_vars(), &c, oracle::DEFAULT_SHELL_CAP)?;
    let shell = oracle::exact_distribution(model, beta, &c, states)?;
    Ok((c, shell))
}

pub fn kernel_suite(corrupt: bool) -> Result<KernelReport> {
    let model = chain6();
    let (beta, gamma) = (0.7, 0.7);
    let (_, shell) = exact(&model, beta, 3)?;
    let params = SawParams::fixed(gamma, 2);
    let offset = if corrupt { CORRUPTION } else { 0.0 };
    let kernel = oracle::exact_im_kernel_perturbed(&model, beta, &params, &shell, oracle::DEFAULT_PATH_BUDGET, offset)?;
    let stationarity_gap = kernel.stationarity_gap(&shell.probs);
    let max_db_gap = kernel.detailed_balance_gap(&shell.probs);
    Ok(KernelReport {
        instance: "chain M=6, n=3, k=2, beta=gamma=0.7".into(),
        num_states: shell.len(),
        paths: kernel.paths,
        stationarity_gap,
        max_db_gap,
        max_row_sum_error: kernel.max_row_sum_error(),
        pass: stationarity_gap <= STATIONARITY_TOL && max_db_gap <= STATIONARITY_TOL,
    })
}

/// Empirical distribution of a chain over an enumerated shell, after
/// discarding a tenth of the moves.
#[allow(clippy::too_many_arguments)]
pub fn empirical_distribution(
    model: &IsingModel,
    shell: &ExactShell,
    constraint: &ShellConstraint,
    sampler: &Sampler,
    states: u64,
    stride: u64,
    seed: u64,
    chain: u64,
) -> Result<Vec<f64>> {
    let mut rng = chain_rng(seed, chain);
    let mut st = random_shell_state(model, constraint, &mut rng)?;
    let burn_in = states * stride / 9;
    if burn_in > 0 {
        run_chain_observed(model, &mut st, sampler, burn_in, burn_in, &mut rng, |_, _, _| {})?;
    }
    let mut counts = vec![0u64; shell.len()];
    let mut missing = None;
    run_chain_observed(model, &mut st, sampler, states * stride, stride, &mut rng, |_, s, _| {
        match shell.index_of(s.bits()) {
            Some(k) => counts[k] += 1,
            None => missing = Some(s.bits().to_vec()),
        }
    })?;
    if let Some(bits) = missing {
        return Err(Error::Verification(format!("chain left the shell: {bits:?}")));
    }
    Ok(counts.iter().map(|&c| c as f64 / states as f64).collect())
}

pub fn sampling_suite(seed: u64, states: u64, stride: u64) -> Result<SamplingReport> {
    let model = grid2d(3, 1.0, 0.0)?;
    let beta = 0.44;
    let (c, shell) = exact(&model, beta, 4)?;
    let im = Sampler::Im(ImConfig::new(beta, SawParams::uniform(beta, 1, 3)?));
    let met = Sampler::Metropolis(MetropolisConfig { beta });
    let tv_im = oracle::tv_distance(&empirical_distribution(&model, &shell, &c, &im, states, stride, seed, 0)?, &shell.probs)?;
    let tv_met = oracle::tv_distance(&empirical_distribution(&model, &shell, &c, &met, states, stride, seed, 1)?, &shell.probs)?;
    Ok(SamplingReport {
        instance: "3x3 open grid, J=1, beta=0.44, n=4; IM gamma=0.44, k~U[1,3]".into(),
        num_states: shell.len(),
        recorded_states: states,
        record_stride: stride,
        burn_in_moves: states * stride / 9,
        tv_im,
        tv_metropolis: tv_met,
        pass: tv_im <= TV_TOL && tv_met <= TV_TOL,
    })
}

/// A 3×3 grid with couplings uniform on `[-1, 1]` and fields on `[-0.5, 0.5]`.
pub fn random_grid3<R: Rng + ?Sized>(rng: &mut R) -> Result<IsingModel> {
    let base = grid2d(3, 1.0, 0.0)?;
    let edges = base
        .edges()
        .iter()
        .map(|e| (e.i, e.j, rng.random_range(-1.0..=1.0)))
        .collect();
    let fields = (0..9).map(|_| rng.random_range(-0.5..=0.5)).collect();
    IsingModel::new(9, edges, fields)
}

pub fn pathwise_suite(seed: u64, moves: usize, corrupt: bool) -> Result<PathwiseReport> {
    let mut rng = chain_rng(seed, 7);
    let mut max_gap: f64 = 0.0;
    let mut failures = 0;
    let per_instance = 20;
    let mut done = 0;
    while done < moves {
        let model = random_grid3(&mut rng)?;
        let beta = rng.random_range(0.0..=1.0);
        let gamma = rng.random_range(0.0..=1.0);
        let n = rng.random_range(1..=8);
        let policy = [OrderPolicy::UpDownOnly, OrderPolicy::DownUpOnly, OrderPolicy::RandomSymmetric][rng.random_range(0..3)];
        let cap = n.min(9 - n).min(3);
        let k_min = rng.random_range(1..=cap);
        let k_max = rng.random_range(k_min..=3);
        let params = SawParams::new(gamma, k_min, k_max, policy)?;
        let c = ShellConstraint::magnetization(9, n)?;
        let mut st = random_shell_state(&model, &c, &mut rng)?;
        let mut sampler = ImSampler::new(&model, &st, ImConfig::new(beta, params))?;
        for _ in 0..per_instance.min(moves - done) {
            let x0 = st.clone();
            let (_, mut mv) = sampler.step_with_move(&model, &mut st, &mut rng)?;
            if corrupt {
                mv.log_f_rev += CORRUPTION;
            }
            let check = oracle::check_pathwise_db(&model, beta, gamma, &mv, &x0)?;
            max_gap = max_gap.max(check.relative_gap);
            failures += (check.relative_gap > PATHWISE_TOL) as usize;
            done += 1;
        }
    }
    Ok(PathwiseReport {
        moves,
        max_relative_gap: max_gap,
        failures,
        pass: failures == 0,
    })
}

pub fn run(opts: &VerifyOptions) -> Result<VerifyReport> {
    if !(opts.kernel || opts.sampling || opts.pathwise) {
        return Err(Error::Argument("no verification suite selected".into()));
    }
    let kernel = opts.kernel.then(|| kernel_suite(opts.inject_corruption)).transpose()?;
    let sampling = opts
        .sampling
        .then(|| sampling_suite(opts.seed, opts.sampling_states, opts.sampling_stride))
        .transpose()?;
    let pathwise = opts
        .pathwise
        .then(|| pathwise_suite(opts.seed, opts.pathwise_moves, opts.inject_corruption))
        .transpose()?;
    let pass = kernel.as_ref().is_none_or(|r| r.pass)
        && sampling.as_ref().is_none_or(|r| r.pass)
        && pathwise.as_ref().is_none_or(|r| r.pass);
    Ok(VerifyReport {
        kernel,
        sampling,
        pathwise,
        corruption_injected: opts.inject_corruption,
        pass,
    })
}

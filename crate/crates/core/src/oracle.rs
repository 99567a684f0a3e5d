//! Exhaustive ground truth on small instances.
//!
//! Everything here is computed by enumeration: the restricted distribution
//! `pi_n` and its normalizer, and the exact marginal kernel of the
//! intracluster-move sampler obtained by summing `f(x1, sigma, rho | x0) *
//! alpha(x0, x1, sigma, rho)` over every allowable walk pair. Walk
//! probabilities use full-state energies `exp(-gamma E(F(x, i)))`, a second
//! route independent of the ΔE-based proposer.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IsingModel, ShellConstraint, ShellState};
use crate::saw::{path_log_prob, reverse_sequences, Direction, SawMove, SawParams, WalkOrder};

pub const DEFAULT_SHELL_CAP: usize = 1_000_000;
/// Default cap on enumerated walk pairs across all start states.
pub const DEFAULT_PATH_BUDGET: u64 = 20_000_000;

fn binomial(m: usize, n: usize) -> f64 {
    if n > m {
        return 0.0;
    }
    let n = n.min(m - n);
    (0..n).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

fn falling(a: usize, k: usize) -> f64 {
    (0..k).map(|i| a.saturating_sub(i) as f64).product()
}

/// All states of `S_n(c)` in lexicographic order (bit 0 most significant).
pub fn enumerate_shell(m: usize, constraint: &ShellConstraint, cap: usize) -> Result<Vec<Vec<bool>>> {
    if constraint.num_vars() != m {
        return Err(Error::Argument(format!(
            "constraint has {} variables, expected {m}",
            constraint.num_vars()
        )));
    }
    let count = binomial(m, constraint.distance());
    if count > cap as f64 {
        return Err(Error::Budget(format!(
            "shell has C({m}, {}) = {count} states, cap is {cap}",
            constraint.distance()
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut cur = Vec::with_capacity(m);
    fn rec(pos: usize, left: usize, c: &[bool], cur: &mut Vec<bool>, out: &mut Vec<Vec<bool>>) {
        let m = c.len();
        if pos == m {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        if m - pos < left {
            return;
        }
        // Try 0 before 1 at each position.
        for bit in [false, true] {
            let differs = bit != c[pos];
            if differs && left == 0 {
                continue;
            }
            if !differs && m - pos - 1 < left {
                continue;
            }
            cur.push(bit);
            rec(pos + 1, left - differs as usize, c, cur, out);
            cur.pop();
        }
    }
    rec(0, constraint.distance(), constraint.reference(), &mut cur, &mut out);
    Ok(out)
}

/// The restricted distribution on an enumerated shell.
#[derive(Clone, Debug)]
pub struct ExactShell {
    pub states: Vec<Vec<bool>>,
    pub energies: Vec<f64>,
    pub probs: Vec<f64>,
    /// `log Z_n`.
    pub log_z: f64,
    pub reference: Vec<bool>,
    index: HashMap<Vec<bool>, usize>,
}

impl ExactShell {
    pub fn index_of(&self, bits: &[bool]) -> Option<usize> {
        self.index.get(bits).copied()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn mean_energy(&self) -> f64 {
        self.probs.iter().zip(&self.energies).map(|(p, e)| p * e).sum()
    }
}

/// `pi_n(x) = exp(-beta E(x)) / Z_n` with max-subtraction.
pub fn exact_distribution(
    model: &IsingModel,
    beta: f64,
    constraint: &ShellConstraint,
    states: Vec<Vec<bool>>,
) -> Result<ExactShell> {
    let energies = states
        .iter()
        .map(|s| model.energy(s))
        .collect::<Result<Vec<_>>>()?;
    let lw: Vec<f64> = energies.iter().map(|e| -beta * e).collect();
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    let probs = unnorm.iter().map(|u| u / z).collect();
    let index = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    Ok(ExactShell {
        states,
        energies,
        probs,
        log_z: max + z.ln(),
        reference: constraint.reference().to_vec(),
        index,
    })
}

/// Probability of each `(k, order)` pair under `params` on shell `n` of `m`.
pub fn length_order_distribution(params: &SawParams, n: usize, m: usize) -> Result<Vec<(usize, WalkOrder, f64)>> {
    params.check_feasible(n, m)?;
    let orders: Vec<(WalkOrder, f64)> = match params.order_policy {
        crate::saw::OrderPolicy::UpDownOnly => vec![(WalkOrder::UpDown, 1.0)],
        crate::saw::OrderPolicy::DownUpOnly => vec![(WalkOrder::DownUp, 1.0)],
        crate::saw::OrderPolicy::RandomSymmetric => vec![(WalkOrder::UpDown, 0.5), (WalkOrder::DownUp, 0.5)],
    };
    let span = (params.k_max - params.k_min + 1) as f64;
    let mut acc: BTreeMap<(usize, u8), f64> = BTreeMap::new();
    for &(order, p_order) in &orders {
        for k in params.k_min..=params.k_max {
            let k_eff = k.min(order.max_length(n, m));
            *acc.entry((k_eff, order as u8)).or_default() += p_order / span;
        }
    }
    Ok(acc
        .into_iter()
        .map(|((k, o), p)| (k, if o == 0 { WalkOrder::UpDown } else { WalkOrder::DownUp }, p))
        .collect())
}

/// Selection probabilities of one step from full-state energies.
fn step_probs(model: &IsingModel, bits: &[bool], reference: &[bool], gamma: f64, dir: Direction) -> Vec<(usize, f64)> {
    let toward = dir == Direction::Toward;
    let mut e = Vec::new();
    let mut scratch = bits.to_vec();
    for i in 0..bits.len() {
        if (bits[i] != reference[i]) == toward {
            scratch[i] = !scratch[i];
            e.push((i, model.energy_unchecked(&scratch)));
            scratch[i] = !scratch[i];
        }
    }
    let min_e = e.iter().map(|&(_, x)| x).fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = e.iter().map(|&(_, x)| (-gamma * (x - min_e)).exp()).collect();
    let z: f64 = w.iter().sum();
    e.iter().zip(w).map(|(&(i, _), wi)| (i, wi / z)).collect()
}

/// Path probability by full-energy replay (zero if a step is not allowable).
fn oracle_path_prob(
    model: &IsingModel,
    start: &[bool],
    reference: &[bool],
    first: &[usize],
    second: &[usize],
    gamma: f64,
    order: WalkOrder,
) -> f64 {
    let (d1, d2) = order.directions();
    let mut bits = start.to_vec();
    let mut p = 1.0;
    for (seq, dir) in [(first, d1), (second, d2)] {
        for &i in seq {
            let probs = step_probs(model, &bits, reference, gamma, dir);
            match probs.iter().find(|(j, _)| *j == i) {
                Some(&(_, pi)) => p *= pi,
                None => return 0.0,
            }
            bits[i] = !bits[i];
        }
    }
    p
}

/// Exact marginal kernel of the intracluster-move sampler.
#[derive(Clone, Debug)]
pub struct ImKernel {
    /// `matrix[a][b] = K(x_b | x_a)`, rejection mass on the diagonal.
    pub matrix: Vec<Vec<f64>>,
    /// Marginal proposal `f(x_b | x_a)`.
    pub proposal: Vec<Vec<f64>>,
    /// Path-averaged acceptance `K / f` where `f > 0` (NaN elsewhere).
    pub effective_alpha: Vec<Vec<f64>>,
    /// Metropolis–Hastings acceptance of the marginal proposal (NaN where `f = 0`).
    pub marginal_alpha: Vec<Vec<f64>>,
    /// Number of walk pairs enumerated.
    pub paths: u64,
}

impl ImKernel {
    /// `max_b |sum_a pi_a K_ab - pi_b|`.
    pub fn stationarity_gap(&self, pi: &[f64]) -> f64 {
        (0..pi.len())
            .map(|b| {
                let flow: f64 = (0..pi.len()).map(|a| pi[a] * self.matrix[a][b]).sum();
                (flow - pi[b]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `max_{a,b} |pi_a K_ab - pi_b K_ba|`.
    pub fn detailed_balance_gap(&self, pi: &[f64]) -> f64 {
        let mut gap: f64 = 0.0;
        for a in 0..pi.len() {
            for b in 0..pi.len() {
                gap = gap.max((pi[a] * self.matrix[a][b] - pi[b] * self.matrix[b][a]).abs());
            }
        }
        gap
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.matrix
            .iter()
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Enumerates every allowable walk pair from every shell state.
pub fn exact_im_kernel(
    model: &IsingModel,
    beta: f64,
    params: &SawParams,
    shell: &ExactShell,
    budget: u64,
) -> Result<ImKernel> {
    exact_im_kernel_perturbed(model, beta, params, shell, budget, 0.0)
}

/// As [`exact_im_kernel`], with `log_ratio_offset` added to every log
/// acceptance ratio. A nonzero offset breaks stationarity; it exists to show
/// that the checks notice.
pub fn exact_im_kernel_perturbed(
    model: &IsingModel,
    beta: f64,
    params: &SawParams,
    shell: &ExactShell,
    budget: u64,
    log_ratio_offset: f64,
) -> Result<ImKernel> {
    let size = shell.len();
    if size == 0 {
        return Err(Error::Argument("empty shell".into()));
    }
    let m = model.num_vars();
    let n = crate::model::hamming(&shell.states[0], &shell.reference);
    let lko = length_order_distribution(params, n, m)?;
    let per_start: f64 = lko
        .iter()
        .map(|&(k, order, _)| match order {
            WalkOrder::UpDown => falling(n, k) * falling(m - n + k, k),
            WalkOrder::DownUp => falling(m - n, k) * falling(n + k, k),
        })
        .sum();
    let total_paths = per_start * size as f64;
    if total_paths > budget as f64 {
        return Err(Error::Budget(format!(
            "{total_paths} walk pairs exceed the budget of {budget}"
        )));
    }

    let mut matrix = vec![vec![0.0; size]; size];
    let mut proposal = vec![vec![0.0; size]; size];
    let mut paths = 0u64;
    let reference = &shell.reference;

    struct Ctx<'a> {
        model: &'a IsingModel,
        reference: &'a [bool],
        gamma: f64,
        beta: f64,
        k: usize,
        order: WalkOrder,
        weight: f64,
        x0: &'a [bool],
        e0: f64,
        offset: f64,
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(
        ctx: &Ctx,
        shell: &ExactShell,
        bits: &mut Vec<bool>,
        first: &mut Vec<usize>,
        second: &mut Vec<usize>,
        prob: f64,
        row_k: &mut [f64],
        row_f: &mut [f64],
        paths: &mut u64,
    ) {
        let (d1, d2) = ctx.order.directions();
        let in_first = first.len() < ctx.k;
        if !in_first && second.len() == ctx.k {
            *paths += 1;
            let b = shell.index_of(bits).expect("walk pair returns to the shell");
            let e1 = shell.energies[b];
            let (rr, rs) = reverse_sequences(first, second);
            let rev = oracle_path_prob(ctx.model, bits, ctx.reference, &rr, &rs, ctx.gamma, ctx.order);
            let ratio = (-ctx.beta * (e1 - ctx.e0) + ctx.offset).exp() * rev / prob;
            let alpha = ratio.min(1.0);
            let a = shell.index_of(ctx.x0).expect("start on shell");
            row_f[b] += ctx.weight * prob;
            row_k[b] += ctx.weight * prob * alpha;
            row_k[a] += ctx.weight * prob * (1.0 - alpha);
            return;
        }
        let dir = if in_first { d1 } else { d2 };
        for (i, p) in step_probs(ctx.model, bits, ctx.reference, ctx.gamma, dir) {
            bits[i] = !bits[i];
            if in_first {
                first.push(i);
            } else {
                second.push(i);
            }
            walk(ctx, shell, bits, first, second, prob * p, row_k, row_f, paths);
            if in_first {
                first.pop();
            } else {
                second.pop();
            }
            bits[i] = !bits[i];
        }
    }

    for a in 0..size {
        let x0 = &shell.states[a];
        for &(k, order, weight) in &lko {
            let ctx = Ctx {
                model,
                reference,
                gamma: params.gamma,
                beta,
                k,
                order,
                weight,
                x0,
                e0: shell.energies[a],
                offset: log_ratio_offset,
            };
            let mut bits = x0.clone();
            let (mut first, mut second) = (Vec::new(), Vec::new());
            let (row_k, row_f) = (&mut matrix[a], &mut proposal[a]);
            walk(&ctx, shell, &mut bits, &mut first, &mut second, 1.0, row_k, row_f, &mut paths);
        }
    }

    let pi = &shell.probs;
    let mut effective_alpha = vec![vec![f64::NAN; size]; size];
    let mut marginal_alpha = vec![vec![f64::NAN; size]; size];
    for a in 0..size {
        for b in 0..size {
            let f = proposal[a][b];
            if f > 0.0 && a != b {
                effective_alpha[a][b] = matrix[a][b] / f;
                marginal_alpha[a][b] = (pi[b] * proposal[b][a] / (pi[a] * f)).min(1.0);
            }
        }
    }
    Ok(ImKernel {
        matrix,
        proposal,
        effective_alpha,
        marginal_alpha,
        paths,
    })
}

/// `(1/2) sum |p_i - q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Argument(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Two sides of the pathwise balance identity for one sampled move, in log
/// space with unnormalized `pi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathwiseCheck {
    /// `log[pi(x0) f(x1, sigma, rho | x0) alpha(x0, x1, sigma, rho)]` from the
    /// quantities recorded on the move.
    pub log_lhs: f64,
    /// `log[pi(x1) f(x0, R(rho), R(sigma) | x1) alpha(x1, x0, R(rho), R(sigma))]`
    /// with both path probabilities recomputed by replay.
    pub log_rhs: f64,
    /// `|lhs - rhs| / max(lhs, rhs)`.
    pub relative_gap: f64,
}

pub fn check_pathwise_db(
    model: &IsingModel,
    beta: f64,
    gamma: f64,
    mv: &SawMove,
    x0: &ShellState,
) -> Result<PathwiseCheck> {
    let x1 = ShellState::new(model, mv.proposed.clone(), x0.reference().to_vec())?;
    let lp0 = -beta * x0.energy();
    let lp1 = -beta * x1.energy();
    let log_lhs = lp0 + mv.log_f_fwd + (lp1 + mv.log_f_rev - lp0 - mv.log_f_fwd).min(0.0);

    let (rr, rs) = reverse_sequences(&mv.sigma, &mv.rho);
    let rev = path_log_prob(model, &x1, &rr, &rs, gamma, mv.order)?;
    let fwd = path_log_prob(model, x0, &mv.sigma, &mv.rho, gamma, mv.order)?;
    let log_rhs = lp1 + rev + (lp0 + fwd - lp1 - rev).min(0.0);

    let relative_gap = if log_lhs == log_rhs {
        0.0
    } else if log_lhs.is_finite() && log_rhs.is_finite() {
        -(-(log_lhs - log_rhs).abs()).exp_m1()
    } else {
        1.0
    };
    Ok(PathwiseCheck {
        log_lhs,
        log_rhs,
        relative_gap,
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::generators::grid2d;
    use crate::saw::OrderPolicy;

    fn chain(m: usize) -> IsingModel {
        IsingModel::new(m, (0..m - 1).map(|i| (i, i + 1, 1.0)).collect(), vec![0.0; m]).unwrap()
    }

    fn shell_of(model: &IsingModel, beta: f64, n: usize) -> ExactShell {
        let c = ShellConstraint::magnetization(model.num_vars(), n).unwrap();
        let states = enumerate_shell(model.num_vars(), &c, DEFAULT_SHELL_CAP).unwrap();
        exact_distribution(model, beta, &c, states).unwrap()
    }

    #[test]
    fn enumerate_examples() {
        let c = ShellConstraint::new(vec![true; 3], 1).unwrap();
        let s = enumerate_shell(3, &c, 10).unwrap();
        assert_eq!(
            s,
            vec![vec![false, true, true], vec![true, false, true], vec![true, true, false]]
        );
        let c = ShellConstraint::new(vec![true, false, true], 0).unwrap();
        assert_eq!(enumerate_shell(3, &c, 10).unwrap(), vec![vec![true, false, true]]);
        let c = ShellConstraint::magnetization(9, 4).unwrap();
        assert_eq!(enumerate_shell(9, &c, DEFAULT_SHELL_CAP).unwrap().len(), 126);
        assert!(matches!(enumerate_shell(9, &c, 100), Err(Error::Budget(_))));
    }

    #[test]
    fn distribution_basics() {
        let model = grid2d(3, 1.0, 0.0).unwrap();
        let uniform = shell_of(&model, 0.0, 4);
        assert!(uniform.probs.iter().all(|p| (p - 1.0 / 126.0).abs() < 1e-15));

        let shell = shell_of(&model, 0.44, 4);
        assert!((shell.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Second pass: Boltzmann weights summed directly in the state loop.
        let (mut z, mut ez) = (0.0, 0.0);
        for s in &shell.states {
            let e = model.energy(s).unwrap();
            let w = (-0.44 * e).exp();
            z += w;
            ez += w * e;
        }
        assert!((shell.mean_energy() - ez / z).abs() < 1e-10);
        assert!((shell.log_z - z.ln()).abs() < 1e-12);
    }

    #[test]
    fn kernel_rows_balance_and_stationarity() {
        let model = chain(6);
        let shell = shell_of(&model, 0.7, 3);
        let k = exact_im_kernel(&model, 0.7, &SawParams::fixed(0.7, 2), &shell, DEFAULT_PATH_BUDGET).unwrap();
        assert!(k.max_row_sum_error() < 1e-12);
        assert!(k.stationarity_gap(&shell.probs) <= 1e-12);
        assert!(k.detailed_balance_gap(&shell.probs) <= 1e-12);
        // 20 states × (3·2) × (5·4) ordered walk pairs.
        assert_eq!(k.paths, 20 * 6 * 20);
        // Path-averaged and marginal acceptance differ somewhere.
        let mut differs = false;
        for a in 0..shell.len() {
            for b in 0..shell.len() {
                let (e, mm) = (k.effective_alpha[a][b], k.marginal_alpha[a][b]);
                if e.is_finite() && (e - mm).abs() > 1e-6 {
                    differs = true;
                }
            }
        }
        assert!(differs);
    }

    #[test]
    fn symmetric_order_and_length_range_keep_balance() {
        let model = grid2d(3, 1.0, 0.2).unwrap();
        let shell = shell_of(&model, 0.5, 3);
        let params = SawParams::new(0.4, 1, 3, OrderPolicy::RandomSymmetric).unwrap();
        let k = exact_im_kernel(&model, 0.5, &params, &shell, DEFAULT_PATH_BUDGET).unwrap();
        assert!(k.max_row_sum_error() < 1e-12);
        assert!(k.detailed_balance_gap(&shell.probs) <= 1e-12);
    }

    /// Independent count for gamma = 0: every ordered walk pair has the same
    /// probability and the same reverse probability, and the number of pairs
    /// from x0 to x1 differing on 2d bits is C(n-d, k-d) (k!)^2.
    fn counting_kernel(m: usize, n: usize, k: usize, beta: f64, shell: &ExactShell) -> Vec<Vec<f64>> {
        let fact = |a: usize| (1..=a).map(|x| x as f64).product::<f64>();
        let per_path = 1.0 / (falling(n, k) * falling(m - n + k, k));
        let size = shell.len();
        let mut out = vec![vec![0.0; size]; size];
        for a in 0..size {
            for b in 0..size {
                if a == b {
                    continue;
                }
                let d = crate::model::hamming(&shell.states[a], &shell.states[b]) / 2;
                if d > k {
                    continue;
                }
                let count = binomial(n - d, k - d) * fact(k) * fact(k);
                let alpha = (-beta * (shell.energies[b] - shell.energies[a])).exp().min(1.0);
                out[a][b] = count * per_path * alpha;
            }
        }
        out
    }

    #[test]
    fn gamma_zero_matches_counting_kernel() {
        let model = chain(6);
        let shell = shell_of(&model, 0.7, 3);
        let exact = exact_im_kernel(&model, 0.7, &SawParams::fixed(0.0, 2), &shell, DEFAULT_PATH_BUDGET).unwrap();
        let counted = counting_kernel(6, 3, 2, 0.7, &shell);
        for a in 0..shell.len() {
            for b in 0..shell.len() {
                if a != b {
                    assert!((exact.matrix[a][b] - counted[a][b]).abs() < 1e-12, "({a},{b})");
                }
            }
        }
    }

    #[test]
    fn budget_is_enforced() {
        let model = chain(6);
        let shell = shell_of(&model, 0.7, 3);
        let err = exact_im_kernel(&model, 0.7, &SawParams::fixed(0.7, 2), &shell, 100).unwrap_err();
        assert!(matches!(err, Error::Budget(_)));
    }

    #[test]
    fn tv_examples() {
        let p = [0.25, 0.25, 0.25, 0.25];
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv_distance(&p, &[0.4, 0.3, 0.2, 0.1]).unwrap() - 0.2).abs() < 1e-15);
        assert!(tv_distance(&p, &[1.0]).is_err());
    }

    #[test]
    fn pathwise_check_detects_corruption() {
        use crate::samplers::{chain_rng, random_shell_state};
        use crate::saw::propose;
        let model = grid2d(3, 1.0, 0.0).unwrap();
        let c = ShellConstraint::magnetization(9, 4).unwrap();
        let mut rng = chain_rng(2, 0);
        let (beta, gamma) = (0.9, 0.3);
        let mut found = false;
        for _ in 0..500 {
            let x0 = random_shell_state(&model, &c, &mut rng).unwrap();
            let mut mv = propose(&model, &x0, &SawParams::fixed(gamma, 2), &mut rng).unwrap();
            let honest = check_pathwise_db(&model, beta, gamma, &mv, &x0).unwrap();
            assert!(honest.relative_gap <= 1e-10);
            let e1 = model.energy(&mv.proposed).unwrap();
            let log_ratio = -beta * (e1 - x0.energy()) + mv.log_f_rev - mv.log_f_fwd;
            if log_ratio < -0.2 {
                mv.log_f_rev += 0.1;
                let bad = check_pathwise_db(&model, beta, gamma, &mv, &x0).unwrap();
                assert!(bad.relative_gap > 0.09, "{bad:?}");
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn symmetric_equal_move_balances_trivially() {
        let model = IsingModel::new(4, vec![], vec![0.0; 4]).unwrap();
        let x0 = ShellState::new(&model, vec![true, true, false, false], vec![false; 4]).unwrap();
        let mv = crate::saw::propose(&model, &x0, &SawParams::fixed(1.0, 1), &mut crate::samplers::chain_rng(0, 0)).unwrap();
        let chk = check_pathwise_db(&model, 1.0, 1.0, &mv, &x0).unwrap();
        assert_eq!(chk.relative_gap, 0.0);
        assert_eq!(mv.log_f_fwd, mv.log_f_rev);
    }
}

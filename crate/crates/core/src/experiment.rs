//! The three benchmark families run head to head against Metropolis at equal
//! compute.
//!
//! For every trial the intracluster-move chain runs `im_moves` moves and the
//! Metropolis chain runs `ratio * im_moves`, recorded every `ratio` moves, so
//! both traces have one entry per unit of the same compute budget. The ratio
//! comes from a calibration of per-move cost (deterministic work counts by
//! default, or wall-clock) or is fixed by the caller.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, AcfCurve, PlotStyle, Series, TraceFile, TraceMeta};
use crate::error::{Error, Result};
use crate::generators::{cube3d_pm_j, grid2d, rbm_gabor};
use crate::model::{IsingModel, ShellConstraint};
use crate::samplers::{chain_rng, random_shell_state, run_chain, ChainRecord, ImConfig, MetropolisConfig, Sampler};
use crate::saw::{SawParams, SelectionStrategy};

/// Moves per sampler used to calibrate per-move cost.
pub const CALIBRATION_MOVES: u64 = 1_000;
/// Stream index of the calibration chains.
const CALIBRATION_STREAM: u64 = u64::MAX - 1;
/// Offset of the streams that draw each trial's starting state.
const INIT_STREAM: u64 = 1 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Ferro2d,
    Glass3d,
    Rbm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Paper,
    Desk,
}

/// How the Metropolis iteration multiplier is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fairness {
    /// Ratio of calibrated work counts (deterministic).
    Work,
    /// Ratio of calibrated wall-clock times (not reproducible).
    Wall,
    /// Fixed number of Metropolis moves per intracluster move.
    Ratio(f64),
}

/// Model and sampler settings of one preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetSpec {
    pub preset: Preset,
    pub scale: Scale,
    /// Grid or cube side, or `(visible, hidden)` for the RBM.
    pub size: (usize, usize),
    pub model_seed: u64,
    pub beta: f64,
    pub n: usize,
    pub saw: SawParams,
    pub strategy: SelectionStrategy,
    pub im_moves: u64,
    /// Metropolis moves per intracluster move at full scale.
    pub paper_ratio: f64,
}

impl PresetSpec {
    pub fn new(preset: Preset, scale: Scale) -> Self {
        let paper = scale == Scale::Paper;
        match preset {
            Preset::Ferro2d => {
                let side = if paper { 60 } else { 16 };
                let beta = 1.0 / 2.27;
                Self {
                    preset,
                    scale,
                    size: (side, side),
                    model_seed: 1,
                    beta,
                    n: side * side / 2,
                    saw: SawParams::fixed(beta, if paper { 90 } else { 24 }),
                    strategy: SelectionStrategy::Auto,
                    im_moves: if paper { 100_000 } else { 20_000 },
                    paper_ratio: 50.0,
                }
            }
            Preset::Glass3d => {
                let side = if paper { 9 } else { 5 };
                Self {
                    preset,
                    scale,
                    size: (side, side),
                    model_seed: 1,
                    beta: 1.0,
                    n: if paper { 364 } else { 63 },
                    saw: SawParams::uniform(0.8, 1, if paper { 25 } else { 10 }).expect("valid range"),
                    strategy: SelectionStrategy::Auto,
                    im_moves: if paper { 100_000 } else { 20_000 },
                    paper_ratio: 10.0,
                }
            }
            Preset::Rbm => {
                let (v, h) = if paper { (784, 500) } else { (64, 32) };
                Self {
                    preset,
                    scale,
                    size: (v, h),
                    model_seed: 1,
                    beta: 1.0,
                    n: (v + h) / 3,
                    saw: SawParams::uniform(0.8, 1, if paper { 20 } else { 8 }).expect("valid range"),
                    strategy: SelectionStrategy::Scan,
                    im_moves: 10_000,
                    paper_ratio: 10.0,
                }
            }
        }
    }

    pub fn build_model(&self) -> Result<IsingModel> {
        match self.preset {
            Preset::Ferro2d => grid2d(self.size.0, 1.0, 0.0),
            Preset::Glass3d => cube3d_pm_j(self.size.0, self.model_seed),
            Preset::Rbm => rbm_gabor(self.size.0, self.size.1, self.model_seed),
        }
    }

    pub fn im_sampler(&self) -> Sampler {
        Sampler::Im(ImConfig::new(self.beta, self.saw).with_strategy(self.strategy))
    }

    pub fn metropolis_sampler(&self) -> Sampler {
        Sampler::Metropolis(MetropolisConfig { beta: self.beta })
    }

    /// One-line parameter echo.
    pub fn describe(&self, model: &IsingModel) -> String {
        format!(
            "preset={} scale={} M={} edges={} n={} beta={:.4} gamma={:.4} k=[{},{}] im_moves={}",
            preset_name(self.preset),
            if self.scale == Scale::Paper { "paper" } else { "desk" },
            model.num_vars(),
            model.num_edges(),
            self.n,
            self.beta,
            self.saw.gamma,
            self.saw.k_min,
            self.saw.k_max,
            self.im_moves
        )
    }
}

pub fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Ferro2d => "ferro2d",
        Preset::Glass3d => "glass3d",
        Preset::Rbm => "rbm",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: PresetSpec,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    pub fairness: Fairness,
    pub burn_in: f64,
    /// Maximum ACF lag in recorded entries; `None` picks a quarter of the
    /// post-burn-in trace, capped at 2000.
    pub max_lag: Option<usize>,
}

impl ExperimentConfig {
    /// Full scale uses the fixed reference ratio, desk scale calibrates
    /// work counts.
    pub fn new(spec: PresetSpec) -> Self {
        let fairness = match spec.scale {
            Scale::Paper => Fairness::Ratio(spec.paper_ratio),
            Scale::Desk => Fairness::Work,
        };
        Self {
            spec,
            trials: 10,
            seed: 0,
            workers: None,
            fairness,
            burn_in: 0.1,
            max_lag: None,
        }
    }
}

/// Per-move costs and the resulting Metropolis multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub fairness: Fairness,
    /// Cost of one intracluster move in the fairness unit.
    pub cost_im: f64,
    /// Cost of one Metropolis move in the fairness unit.
    pub cost_metropolis: f64,
    pub ratio: u64,
}

pub fn calibrate(model: &IsingModel, spec: &PresetSpec, fairness: Fairness, seed: u64) -> Result<Calibration> {
    let constraint = ShellConstraint::magnetization(model.num_vars(), spec.n)?;
    let measure = |sampler: &Sampler| -> Result<ChainRecord> {
        let mut rng = chain_rng(seed, CALIBRATION_STREAM);
        let mut st = random_shell_state(model, &constraint, &mut rng)?;
        run_chain(model, &mut st, sampler, CALIBRATION_MOVES, CALIBRATION_MOVES, &mut rng)
    };
    let (cost_im, cost_met) = match fairness {
        Fairness::Ratio(r) => {
            if !(r >= 1.0) || !r.is_finite() {
                return Err(Error::Config(format!("fair ratio must be finite and >= 1, got {r}")));
            }
            (r, 1.0)
        }
        Fairness::Work => {
            let a = measure(&spec.im_sampler())?;
            let b = measure(&spec.metropolis_sampler())?;
            (a.work_per_move(), b.work_per_move())
        }
        Fairness::Wall => {
            let t = Instant::now();
            measure(&spec.im_sampler())?;
            let a = t.elapsed().as_secs_f64() / CALIBRATION_MOVES as f64;
            let t = Instant::now();
            measure(&spec.metropolis_sampler())?;
            let b = t.elapsed().as_secs_f64() / CALIBRATION_MOVES as f64;
            (a, b)
        }
    };
    let ratio = analysis::fairness_stride(cost_im, cost_met) as u64;
    Ok(Calibration {
        fairness,
        cost_im,
        cost_metropolis: cost_met,
        ratio,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSummary {
    pub sampler: String,
    pub moves: u64,
    pub record_stride: u64,
    /// Compute per recorded entry, in the fairness unit.
    pub lag_unit: f64,
    pub acceptance_rate: f64,
    pub work_per_move: f64,
    pub evaluations_per_move: f64,
    /// Integrated autocorrelation time per trial in compute units; `None`
    /// for a trace that never moved after burn-in.
    pub tau_trials: Vec<Option<f64>>,
    /// Mean over trials, `None` if any trial is degenerate.
    pub tau_mean: Option<f64>,
    pub degenerate_trials: usize,
    /// First compute lag at which the trial-averaged ACF is below 0.1.
    pub acf_below_0_1: Option<f64>,
    /// Mean energy over the last quarter of each trial.
    pub final_quarter_energy: Vec<f64>,
    pub final_quarter_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub preset: String,
    pub scale: String,
    pub num_vars: usize,
    pub num_edges: usize,
    pub n: usize,
    pub beta: f64,
    pub gamma: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub trials: usize,
    pub seed: u64,
    pub calibration: Calibration,
    pub burn_in: f64,
    pub max_lag: usize,
    pub im: SamplerSummary,
    pub metropolis: SamplerSummary,
    /// `tau_metropolis / tau_im` of the trial means.
    pub tau_ratio: Option<f64>,
    /// Ratio of the compute lags where the averaged ACFs drop below 0.1.
    pub acf_0_1_ratio: Option<f64>,
}

pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub describe: String,
    pub traces: Vec<TraceFile>,
    pub acf: Vec<AcfCurve>,
    pub summary: Summary,
    pub svg: String,
    /// Final state of every chain, in trace order.
    pub final_states: Vec<Vec<bool>>,
}

/// Trial index, sampler slot (0 IM, 1 Metropolis), record and final state.
type TrialOutput = (usize, usize, ChainRecord, Vec<bool>);

fn run_trials(
    model: &IsingModel,
    constraint: &ShellConstraint,
    cfg: &ExperimentConfig,
    cal: &Calibration,
) -> Result<Vec<TrialOutput>> {
    let spec = &cfg.spec;
    let jobs: Vec<(usize, usize)> = (0..cfg.trials).flat_map(|t| [(t, 0), (t, 1)]).collect();
    let run = |&(t, s): &(usize, usize)| -> Result<TrialOutput> {
        let mut init = chain_rng(cfg.seed, INIT_STREAM + t as u64);
        let mut st = random_shell_state(model, constraint, &mut init)?;
        let mut rng = chain_rng(cfg.seed, 2 * t as u64 + s as u64);
        let rec = if s == 0 {
            run_chain(model, &mut st, &spec.im_sampler(), spec.im_moves, 1, &mut rng)?
        } else {
            let moves = spec.im_moves * cal.ratio;
            run_chain(model, &mut st, &spec.metropolis_sampler(), moves, cal.ratio, &mut rng)?
        };
        log::info!("trial {t} {} done: acceptance {:.4}", rec.sampler, rec.acceptance_rate());
        Ok((t, s, rec, st.bits().to_vec()))
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        pool = pool.num_threads(w.max(1));
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(run).collect())
}

fn final_quarter_mean(e: &[f64]) -> f64 {
    let tail = &e[e.len() - (e.len() / 4).max(1)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

struct Group {
    summary: SamplerSummary,
    curve: AcfCurve,
    energy: Series,
}

fn summarize(name: &str, records: &[&ChainRecord], lag_unit: f64, burn_in: f64, max_lag: usize) -> Result<Group> {
    let mut curves = Vec::with_capacity(records.len());
    let mut taus = Vec::with_capacity(records.len());
    for rec in records {
        let skip = (rec.energies.len() as f64 * burn_in).floor() as usize;
        match analysis::acf(&rec.energies[skip..], max_lag) {
            Ok(r) => {
                taus.push(Some(analysis::integrated_time(&r) * lag_unit));
                curves.push(r);
            }
            Err(Error::DegenerateTrace(_)) => {
                // A chain that never moved is perfectly correlated.
                taus.push(None);
                curves.push(vec![1.0; max_lag + 1]);
            }
            Err(e) => return Err(e),
        }
    }
    let curve = analysis::average_acf(name, &curves, lag_unit)?;
    let degenerate = taus.iter().filter(|t| t.is_none()).count();
    let tau_mean = (degenerate == 0).then(|| taus.iter().flatten().sum::<f64>() / taus.len() as f64);
    let fq: Vec<f64> = records.iter().map(|r| final_quarter_mean(&r.energies)).collect();
    let moves: u64 = records[0].num_moves;

    // Trial-mean energy trajectory against compute, thinned for plotting.
    let len = records.iter().map(|r| r.energies.len()).min().unwrap_or(0);
    let every = len.div_ceil(400).max(1);
    let idx: Vec<usize> = (0..len).step_by(every).collect();
    let trials = records.len() as f64;
    let mean: Vec<f64> = idx
        .iter()
        .map(|&i| records.iter().map(|r| r.energies[i]).sum::<f64>() / trials)
        .collect();
    let var: Vec<f64> = idx
        .iter()
        .zip(&mean)
        .map(|(&i, m)| records.iter().map(|r| (r.energies[i] - m).powi(2)).sum::<f64>() / trials)
        .collect();
    let energy = Series {
        label: name.to_string(),
        x: idx.iter().map(|&i| i as f64 * lag_unit).collect(),
        y: mean,
        variance: Some(var),
    };

    let total = |f: fn(&ChainRecord) -> f64| records.iter().map(|r| f(r)).sum::<f64>() / trials;
    Ok(Group {
        summary: SamplerSummary {
            sampler: name.to_string(),
            moves,
            record_stride: records[0].record_stride,
            lag_unit,
            acceptance_rate: total(ChainRecord::acceptance_rate),
            work_per_move: total(ChainRecord::work_per_move),
            evaluations_per_move: total(ChainRecord::evaluations_per_move),
            tau_trials: taus,
            tau_mean,
            degenerate_trials: degenerate,
            acf_below_0_1: curve.first_lag_below(0.1),
            final_quarter_mean: fq.iter().sum::<f64>() / fq.len() as f64,
            final_quarter_energy: fq,
        },
        curve,
        energy,
    })
}

/// Runs a preset end to end without touching the file system.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.trials < 2 {
        return Err(Error::Argument("at least 2 trials are needed to average ACFs".into()));
    }
    if !(0.0..1.0).contains(&cfg.burn_in) {
        return Err(Error::Argument(format!("burn-in fraction {} outside [0, 1)", cfg.burn_in)));
    }
    let spec = &cfg.spec;
    if spec.im_moves == 0 {
        return Err(Error::Argument("moves must be at least 1".into()));
    }
    let model = spec.build_model()?;
    let constraint = ShellConstraint::magnetization(model.num_vars(), spec.n)?;
    spec.saw.check_feasible(spec.n, model.num_vars())?;
    let describe = spec.describe(&model);
    log::info!("{describe}");

    let cal = calibrate(&model, spec, cfg.fairness, cfg.seed)?;
    log::info!(
        "fairness {:?}: cost im {:.4} vs metropolis {:.4}, ratio {}",
        cal.fairness,
        cal.cost_im,
        cal.cost_metropolis,
        cal.ratio
    );
    let results = run_trials(&model, &constraint, cfg, &cal)?;

    let unit_im = cal.cost_im;
    let unit_met = cal.cost_metropolis * cal.ratio as f64;
    if let Err(e) = analysis::check_commensurate(&[("im".into(), unit_im), ("metropolis".into(), unit_met)]) {
        log::warn!("{e}; lags are still shown in compute units");
    }
    let im: Vec<&ChainRecord> = results.iter().filter(|r| r.1 == 0).map(|r| &r.2).collect();
    let met: Vec<&ChainRecord> = results.iter().filter(|r| r.1 == 1).map(|r| &r.2).collect();
    let post = (spec.im_moves as f64 * (1.0 - cfg.burn_in)).floor() as usize;
    let max_lag = cfg.max_lag.unwrap_or((post / 4).min(2000)).max(1);
    if post < max_lag + 2 {
        return Err(Error::Argument(format!(
            "max lag {max_lag} needs more than {post} post-burn-in records"
        )));
    }
    let g_im = summarize("im", &im, unit_im, cfg.burn_in, max_lag)?;
    let g_met = summarize("metropolis", &met, unit_met, cfg.burn_in, max_lag)?;

    let tau_ratio = match (g_im.summary.tau_mean, g_met.summary.tau_mean) {
        (Some(a), Some(b)) => Some(b / a),
        (None, Some(_)) => Some(0.0),
        _ => None,
    };
    let acf_0_1_ratio = match (g_im.summary.acf_below_0_1, g_met.summary.acf_below_0_1) {
        (Some(a), Some(b)) if a > 0.0 => Some(b / a),
        _ => None,
    };
    let summary = Summary {
        preset: preset_name(spec.preset).into(),
        scale: if spec.scale == Scale::Paper { "paper" } else { "desk" }.into(),
        num_vars: model.num_vars(),
        num_edges: model.num_edges(),
        n: spec.n,
        beta: spec.beta,
        gamma: spec.saw.gamma,
        k_min: spec.saw.k_min,
        k_max: spec.saw.k_max,
        trials: cfg.trials,
        seed: cfg.seed,
        calibration: cal,
        burn_in: cfg.burn_in,
        max_lag,
        im: g_im.summary.clone(),
        metropolis: g_met.summary.clone(),
        tau_ratio,
        acf_0_1_ratio,
    };

    let unit_name = match cal.fairness {
        Fairness::Work => "work units",
        Fairness::Wall => "seconds",
        Fairness::Ratio(_) => "Metropolis moves",
    };
    let title = format!("{} ({})", preset_name(spec.preset), summary.scale);
    let svg = analysis::emit_figure(&[
        (
            vec![g_im.energy.clone(), g_met.energy.clone()],
            PlotStyle {
                title: title.clone(),
                x_label: format!("computational time ({unit_name})"),
                y_label: "energy".into(),
                ..PlotStyle::default()
            },
        ),
        (
            vec![Series::from(&g_im.curve), Series::from(&g_met.curve)],
            PlotStyle {
                x_label: format!("computational time lag ({unit_name})"),
                ..PlotStyle::default()
            },
        ),
    ])?;

    let mut traces = Vec::with_capacity(results.len());
    for (t, s, rec, _) in &results {
        let (sampler, unit) = if *s == 0 { (spec.im_sampler(), unit_im) } else { (spec.metropolis_sampler(), unit_met) };
        let mut meta = TraceMeta {
            sampler: rec.sampler.clone(),
            beta: spec.beta,
            gamma: matches!(sampler, Sampler::Im(_)).then_some(spec.saw.gamma),
            seed: cfg.seed,
            trial: *t as u64,
            record_stride: rec.record_stride,
            subsample_stride: 1,
            cost_per_move: unit / rec.record_stride as f64,
            ..TraceMeta::default()
        };
        meta.extra.insert("preset".into(), summary.preset.clone());
        meta.extra.insert("n".into(), spec.n.to_string());
        meta.extra.insert("moves".into(), rec.num_moves.to_string());
        if let Sampler::Im(c) = sampler {
            meta.extra.insert("k_min".into(), c.saw.k_min.to_string());
            meta.extra.insert("k_max".into(), c.saw.k_max.to_string());
        }
        traces.push(TraceFile::from_record(rec, meta));
    }

    Ok(ExperimentResult {
        config: cfg.clone(),
        describe,
        traces,
        acf: vec![g_im.curve, g_met.curve],
        summary,
        svg,
        final_states: results.into_iter().map(|r| r.3).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_parameters() {
        let g = PresetSpec::new(Preset::Glass3d, Scale::Paper);
        assert_eq!((g.n, g.saw.k_min, g.saw.k_max, g.saw.gamma), (364, 1, 25, 0.8));
        let r = PresetSpec::new(Preset::Rbm, Scale::Paper);
        assert_eq!(r.n, 428);
        assert_eq!(r.strategy, SelectionStrategy::Scan);
        let f = PresetSpec::new(Preset::Ferro2d, Scale::Desk);
        assert_eq!((f.n, f.saw.k_min), (128, 24));
        assert_eq!(PresetSpec::new(Preset::Rbm, Scale::Desk).n, 32);
    }

    #[test]
    fn small_run_is_deterministic_across_worker_counts() {
        let mut spec = PresetSpec::new(Preset::Glass3d, Scale::Desk);
        spec.size = (3, 3);
        spec.n = 13;
        spec.saw = SawParams::uniform(0.3, 1, 3).unwrap();
        spec.im_moves = 400;
        let mut cfg = ExperimentConfig::new(spec);
        cfg.trials = 3;
        cfg.workers = Some(1);
        let a = run_experiment(&cfg).unwrap();
        cfg.workers = Some(3);
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.svg, b.svg);
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.traces.len(), 6);
        let met = a.traces.iter().find(|t| t.meta.sampler == "metropolis").unwrap();
        assert_eq!(met.energies.len(), 400);
        assert_eq!(met.meta.record_stride, a.summary.calibration.ratio);
    }
}

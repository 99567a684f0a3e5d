use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use super::*;
use crate::analysis::{self, PlotStyle, Series, TraceFile, TraceMeta};
use crate::experiment::{self as exp, ExperimentConfig, Fairness, Preset, PresetSpec, Scale};
use crate::generators::{self, Boundary};
use crate::model::{load_model, ShellConstraint};
use crate::samplers::{chain_rng, random_shell_state, run_chain, ImConfig, MetropolisConfig, Sampler};
use crate::saw::{OrderPolicy, SawParams, SelectionStrategy};
use crate::verify::{self as verify_mod, VerifyOptions};

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w.max(1));
    }
    b.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let boundary = if a.periodic { Boundary::Periodic } else { Boundary::Open };
    let seed = resolve_seed(a.seed)?;
    let model = match a.kind {
        ModelKind::Grid2d => generators::grid2d_with(a.side, a.coupling, a.field, boundary)?,
        ModelKind::Cube3d => generators::cube3d_pm_j_with(a.side, seed, boundary)?,
        ModelKind::Rbm => match &a.weights {
            Some(path) => generators::rbm_from_weights(&generators::load_weight_csv(path)?)?,
            None => generators::rbm_gabor(a.visible, a.hidden, seed)?,
        },
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    generators::save_model(&model, &a.out)?;
    println!(
        "wrote {}: {} variables, {} edges",
        a.out.display(),
        model.num_vars(),
        model.num_edges()
    );
    Ok(())
}

fn read_reference(path: &Path, m: usize) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bits: Vec<bool> = text
        .chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Parse(format!("{}: unexpected character {other:?}", path.display()))),
        })
        .collect::<Result<_>>()?;
    if bits.len() != m {
        return Err(Error::Parse(format!(
            "{}: reference has {} bits, the model has {m} variables",
            path.display(),
            bits.len()
        )));
    }
    Ok(bits)
}

fn strategy(s: StrategyArg) -> SelectionStrategy {
    match s {
        StrategyArg::Auto => SelectionStrategy::Auto,
        StrategyArg::Tree => SelectionStrategy::Tree,
        StrategyArg::Scan => SelectionStrategy::Scan,
    }
}

pub fn sample(a: &SampleArgs) -> Result<()> {
    if a.moves == 0 {
        return Err(Error::Argument("--moves must be at least 1".into()));
    }
    if a.trials == 0 {
        return Err(Error::Argument("--trials must be at least 1".into()));
    }
    let seed = resolve_seed(a.seed)?;
    let model = load_model(&a.model)?;
    let m = model.num_vars();
    let reference = match &a.reference {
        Some(p) => read_reference(p, m)?,
        None => vec![false; m],
    };
    let n = match (a.n, a.fraction) {
        (Some(n), _) => n,
        (None, Some(f)) if (0.0..=1.0).contains(&f) => (f * m as f64).floor() as usize,
        (None, Some(f)) => return Err(Error::Argument(format!("--fraction {f} outside [0, 1]"))),
        (None, None) => m / 2,
    };
    let constraint = ShellConstraint::new(reference, n)?;
    let sampler = match a.sampler {
        SamplerKind::Metropolis => Sampler::Metropolis(MetropolisConfig { beta: a.beta }),
        SamplerKind::Im => {
            let (k_min, k_max) = match (a.k, a.k_min, a.k_max) {
                (Some(k), _, _) => (k, k),
                (None, Some(lo), Some(hi)) => (lo, hi),
                (None, Some(lo), None) => (lo, lo),
                (None, None, Some(hi)) => (1, hi),
                (None, None, None) => (1, 1),
            };
            let policy = match a.order {
                OrderArg::UpDown => OrderPolicy::UpDownOnly,
                OrderArg::DownUp => OrderPolicy::DownUpOnly,
                OrderArg::Symmetric => OrderPolicy::RandomSymmetric,
            };
            let saw = SawParams::new(a.gamma.unwrap_or(a.beta), k_min, k_max, policy)?;
            saw.check_feasible(n, m)?;
            Sampler::Im(ImConfig::new(a.beta, saw).with_strategy(strategy(a.strategy)))
        }
    };

    let run = |t: usize| -> Result<_> {
        let mut rng = chain_rng(seed, t as u64);
        let mut st = random_shell_state(&model, &constraint, &mut rng)?;
        run_chain(&model, &mut st, &sampler, a.moves, a.stride, &mut rng)
    };
    let records: Vec<_> = pool(a.workers)?.install(|| (0..a.trials).into_par_iter().map(run).collect::<Result<_>>())?;

    let mut out = OutputDir::create(&a.out)?;
    for (t, rec) in records.iter().enumerate() {
        let mut meta = TraceMeta {
            sampler: sampler.name().into(),
            beta: a.beta,
            gamma: None,
            seed,
            trial: t as u64,
            record_stride: a.stride,
            subsample_stride: 1,
            cost_per_move: rec.work_per_move(),
            ..TraceMeta::default()
        };
        meta.extra.insert("model".into(), a.model.display().to_string());
        meta.extra.insert("n".into(), n.to_string());
        meta.extra.insert("moves".into(), a.moves.to_string());
        meta.extra.insert("acceptance_rate".into(), analysis::fmt17(rec.acceptance_rate()));
        if let Sampler::Im(c) = &sampler {
            meta.gamma = Some(c.saw.gamma);
            meta.extra.insert("k_min".into(), c.saw.k_min.to_string());
            meta.extra.insert("k_max".into(), c.saw.k_max.to_string());
        }
        let file = TraceFile::from_record(rec, meta);
        let name = format!("{}_trial{t:02}.csv", sampler.name());
        out.write(&name, &file.to_csv(), json!({ "trial": t, "seed": seed }))?;
        println!(
            "{name}: {} records, acceptance {:.4}, work/move {:.1}",
            rec.energies.len(),
            rec.acceptance_rate(),
            rec.work_per_move()
        );
    }
    out.finish(
        "sample",
        json!({
            "model": a.model.display().to_string(),
            "sampler": sampler,
            "n": n,
            "moves": a.moves,
            "trials": a.trials,
            "seed": seed,
            "stride": a.stride,
        }),
    )
}

fn collect_traces(inputs: &[PathBuf]) -> Result<Vec<(PathBuf, TraceFile)>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut stack = vec![input.clone()];
            let mut found = Vec::new();
            while let Some(dir) = stack.pop() {
                for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                    let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                    if path.is_dir() {
                        stack.push(path);
                    } else if path.extension().is_some_and(|x| x == "csv") {
                        found.push(path);
                    }
                }
            }
            found.sort();
            for path in found {
                match TraceFile::read(&path) {
                    Ok(t) => out.push((path, t)),
                    Err(Error::Parse(msg)) => log::info!("skipping non-trace file: {msg}"),
                    Err(e) => return Err(e),
                }
            }
        } else {
            let t = TraceFile::read(input)?;
            out.push((input.clone(), t));
        }
    }
    if out.is_empty() {
        return Err(Error::Argument("no trace files found".into()));
    }
    Ok(out)
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let traces = collect_traces(&a.traces)?;
    let mut groups: BTreeMap<String, Vec<(PathBuf, TraceFile)>> = BTreeMap::new();
    for (p, t) in traces {
        groups.entry(t.meta.sampler.clone()).or_default().push((p, t));
    }

    // Per-group compute per recorded entry.
    let mut units: BTreeMap<String, f64> = BTreeMap::new();
    for (name, members) in &groups {
        let mut list: Vec<(String, f64)> = Vec::new();
        for (p, t) in members {
            let mut meta = t.meta.clone();
            if let Some(r) = a.fair_ratio {
                meta.cost_per_move = if name == "metropolis" { 1.0 } else { r };
            }
            list.push((p.display().to_string(), meta.lag_unit()));
        }
        analysis::check_commensurate(&list)?;
        units.insert(name.clone(), list.iter().map(|x| x.1).sum::<f64>() / list.len() as f64);
    }
    if let Some(r) = a.fair_ratio {
        if !(r >= 1.0) || !r.is_finite() {
            return Err(Error::Argument(format!("--fair-ratio must be finite and >= 1, got {r}")));
        }
    }
    // Thin every group to the costliest lag unit.
    let widest = units.values().copied().fold(0.0, f64::max);
    let mut strides: BTreeMap<String, usize> = BTreeMap::new();
    for (name, &u) in &units {
        let r = analysis::fairness_stride(widest, u);
        strides.insert(name.clone(), r);
    }
    let thinned_units: Vec<(String, f64)> = units.iter().map(|(n, u)| (n.clone(), u * strides[n] as f64)).collect();
    if a.fair_ratio.is_none() {
        analysis::check_commensurate(&thinned_units)?;
    }

    let mut prepared: BTreeMap<String, Vec<(PathBuf, Vec<f64>)>> = BTreeMap::new();
    for (name, members) in &groups {
        for (p, t) in members {
            let trace = t.trace().discard_burn_in(a.burn_in)?;
            let thin = analysis::subsample(&trace, strides[name])?;
            prepared.entry(name.clone()).or_default().push((p.clone(), thin.energies));
        }
    }
    let shortest = prepared.values().flatten().map(|(_, e)| e.len()).min().unwrap_or(0);
    let max_lag = a.max_lag.unwrap_or((shortest / 4).min(1000)).max(1);

    let mut out = OutputDir::create(&a.out)?;
    let mut curves = Vec::new();
    let mut summary = serde_json::Map::new();
    for (name, members) in &prepared {
        let unit = thinned_units.iter().find(|x| &x.0 == name).map(|x| x.1).unwrap_or(1.0);
        let mut rhos = Vec::new();
        let mut taus = Vec::new();
        for (p, e) in members {
            let r = analysis::acf(e, max_lag).map_err(|err| match err {
                Error::DegenerateTrace(msg) => Error::DegenerateTrace(format!("{}: {msg}", p.display())),
                Error::Argument(msg) => Error::Argument(format!("{}: {msg}", p.display())),
                other => other,
            })?;
            taus.push(analysis::integrated_time(&r) * unit);
            rhos.push(r);
        }
        let curve = analysis::average_acf(name, &rhos, unit)?;
        out.write(
            &format!("acf_{name}.csv"),
            &curve.to_csv(),
            json!({ "sampler": name, "trials": rhos.len(), "lag_unit": unit, "subsample_stride": strides[name] }),
        )?;
        let tau_mean = taus.iter().sum::<f64>() / taus.len() as f64;
        println!(
            "{name}: {} traces, lag unit {unit:.6}, mean tau {tau_mean:.6}",
            members.len()
        );
        summary.insert(
            name.clone(),
            json!({
                "traces": members.iter().map(|(p, _)| p.display().to_string()).collect::<Vec<_>>(),
                "lag_unit": unit,
                "subsample_stride": strides[name],
                "tau_trials": taus,
                "tau_mean": tau_mean,
                "acf_below_0_1": curve.first_lag_below(0.1),
            }),
        );
        curves.push(curve);
    }
    let series: Vec<Series> = curves.iter().map(Series::from).collect();
    let svg = analysis::emit_svg(&series, &PlotStyle::default())?;
    out.write("acf.svg", &svg, json!({ "curves": curves.len() }))?;
    let taus = |k: &str| summary.get(k).and_then(|v| v["tau_mean"].as_f64());
    let ratio = match (taus("metropolis"), taus("im")) {
        (Some(m), Some(i)) if i > 0.0 => Some(m / i),
        _ => None,
    };
    let doc = json!({ "burn_in": a.burn_in, "max_lag": max_lag, "fair_ratio": a.fair_ratio, "samplers": summary, "tau_ratio": ratio });
    out.write("summary.json", &(serde_json::to_string_pretty(&doc).expect("json") + "\n"), json!({}))?;
    out.finish("analyze", json!({ "burn_in": a.burn_in, "max_lag": max_lag, "fair_ratio": a.fair_ratio }))
}

pub fn verify(a: &VerifyArgs) -> Result<()> {
    let all = a.suite == SuiteArg::All;
    let opts = VerifyOptions {
        kernel: all || a.suite == SuiteArg::Kernel,
        sampling: all || a.suite == SuiteArg::Sampling,
        pathwise: all || a.suite == SuiteArg::Pathwise,
        seed: resolve_seed(a.seed)?,
        sampling_states: a.states,
        sampling_stride: a.stride,
        pathwise_moves: a.moves,
        inject_corruption: a.inject_corruption,
    };
    let report = verify_mod::run(&opts)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    print!("{text}");
    if let Some(dir) = &a.out {
        let mut out = OutputDir::create(dir)?;
        out.write("report.json", &text, serde_json::to_value(&opts).expect("json"))?;
        out.finish("verify", serde_json::to_value(&opts).expect("json"))?;
    }
    if report.pass {
        Ok(())
    } else {
        Err(Error::Verification("one or more oracle suites exceeded their thresholds".into()))
    }
}

pub fn experiment(a: &ExperimentArgs) -> Result<()> {
    let preset = match a.preset {
        PresetArg::Ferro2d => Preset::Ferro2d,
        PresetArg::Glass3d => Preset::Glass3d,
        PresetArg::Rbm => Preset::Rbm,
    };
    let scale = match a.scale {
        ScaleArg::Paper => Scale::Paper,
        ScaleArg::Desk => Scale::Desk,
    };
    let mut spec = PresetSpec::new(preset, scale);
    spec.model_seed = a.model_seed;
    if let Some(mv) = a.moves {
        spec.im_moves = mv;
    }
    if let Some(n) = a.n {
        spec.n = n;
    }
    let mut cfg = ExperimentConfig::new(spec);
    cfg.trials = a.trials;
    cfg.seed = resolve_seed(a.seed)?;
    cfg.workers = a.workers;
    cfg.burn_in = a.burn_in;
    cfg.max_lag = a.max_lag;
    if let Some(r) = a.fair_ratio {
        cfg.fairness = Fairness::Ratio(r);
    } else if let Some(f) = a.fairness {
        cfg.fairness = match f {
            FairnessArg::Work => Fairness::Work,
            FairnessArg::Wall => Fairness::Wall,
        };
    }

    let res = exp::run_experiment(&cfg)?;
    println!("{}", res.describe);
    let mut out = OutputDir::create(&a.out)?;
    for t in &res.traces {
        let name = format!("traces/{}_trial{:02}.csv", t.meta.sampler, t.meta.trial);
        out.write(&name, &t.to_csv(), json!({ "sampler": t.meta.sampler, "trial": t.meta.trial }))?;
    }
    for c in &res.acf {
        out.write(&format!("acf_{}.csv", c.label), &c.to_csv(), json!({ "lag_unit": c.lag_unit, "trials": c.trials }))?;
    }
    out.write("figure.svg", &res.svg, json!({ "panels": ["energy", "acf"] }))?;
    let summary = serde_json::to_string_pretty(&res.summary).expect("summary serializes") + "\n";
    out.write("summary.json", &summary, json!({}))?;
    let s = &res.summary;
    println!(
        "fairness ratio {} ({:?}); tau im {:?}, tau metropolis {:?}; final-quarter energy im {:.4}, metropolis {:.4}",
        s.calibration.ratio,
        s.calibration.fairness,
        s.im.tau_mean,
        s.metropolis.tau_mean,
        s.im.final_quarter_mean,
        s.metropolis.final_quarter_mean
    );
    out.finish("experiment", serde_json::to_value(&cfg).expect("config serializes"))
}

//! Full-size presets. Slow; run with `--ignored` in release mode.

use shellwalk::experiment::{run_experiment, ExperimentConfig, Preset, PresetSpec, Scale};
use shellwalk::model::hamming;

fn run(preset: Preset) {
    let mut cfg = ExperimentConfig::new(PresetSpec::new(preset, Scale::Paper));
    cfg.trials = 2;
    cfg.seed = 1;
    let res = run_experiment(&cfg).unwrap();
    let s = &res.summary;
    assert_eq!(res.traces.len(), 2 * cfg.trials);
    assert!(res.svg.contains("</svg>"));
    assert_eq!(s.im.moves, cfg.spec.im_moves);
    for t in &res.traces {
        assert!(t.energies.iter().all(|e| e.is_finite()));
    }
    // Every chain stayed on its shell.
    assert_eq!(res.final_states.len(), 2 * cfg.trials);
    for st in &res.final_states {
        assert_eq!(hamming(st, &vec![false; st.len()]), s.n);
    }
    println!("{}", res.describe);
}

#[test]
#[ignore]
fn ferro2d_paper_scale() {
    run(Preset::Ferro2d);
}

#[test]
#[ignore]
fn glass3d_paper_scale() {
    run(Preset::Glass3d);
}

#[test]
#[ignore]
fn rbm_paper_scale() {
    run(Preset::Rbm);
}

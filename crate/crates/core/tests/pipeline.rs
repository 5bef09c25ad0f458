//! Integration checks of the full pipeline on a reduced sensor head
//! (crystal directly on a small heater plate) that runs in seconds.

use ovs_core::mechanics::{stress_along_path, von_mises};
use ovs_core::scene::{ElectrodeMode, Scene};
use ovs_core::sweep::{
    compare_modes, evaluate_mode, evaluate_mode_detailed, optimize_ratio, EvalOptions, Family,
};

fn small_scene() -> Scene {
    let doc = include_str!("../../cli/tests/data/small.toml");
    Scene::parse(doc).unwrap()
}

#[test]
fn error_curve_starts_at_zero_and_totals_are_consistent() {
    let scene = small_scene();
    let mode = ElectrodeMode::builtin("cu_10_0").unwrap();
    let result = evaluate_mode(&scene, &mode).unwrap();
    assert_eq!(result.curve.len(), 13);
    assert_eq!(result.curve[0].error, 0.0);
    assert_eq!(result.curve[0].crystal_t, 300.0);
    // Totals are the range of the signed curve, normalized by the window.
    let max = result.curve.iter().map(|p| p.error).fold(f64::NEG_INFINITY, f64::max);
    let min = result.curve.iter().map(|p| p.error).fold(f64::INFINITY, f64::min);
    assert_eq!(result.total_error, max - min);
    assert!(result.total_error >= 0.0);
    assert_eq!(result.corrected_total, result.total_error / 60.0);
    // Physical intensity bound.
    for p in &result.curve {
        assert!(p.error.abs() < 1.0);
    }
    // Temperatures rise monotonically.
    for w in result.curve.windows(2) {
        assert!(w[1].crystal_t >= w[0].crystal_t);
    }
}

#[test]
fn zero_heating_gives_flat_zero_curve() {
    let mut scene = small_scene();
    scene.sim.heater_t = scene.sim.ambient_t;
    let mode = ElectrodeMode::builtin("cu_10_0").unwrap();
    let result = evaluate_mode(&scene, &mode).unwrap();
    for p in &result.curve {
        assert_eq!(p.error, 0.0);
        assert_eq!(p.crystal_t, 300.0);
    }
    assert_eq!(result.total_error, 0.0);
}

#[test]
fn evaluation_is_deterministic() {
    let scene = small_scene();
    let mode = ElectrodeMode::builtin("cu_5_2").unwrap();
    let a = evaluate_mode(&scene, &mode).unwrap();
    let b = evaluate_mode(&scene, &mode).unwrap();
    assert_eq!(a, b, "repeated evaluations must be bit-identical");
}

#[test]
fn ranking_invariant_under_input_permutation() {
    let scene = small_scene();
    let names = ["cu_10_0", "cu_5_4", "ito_0_10"];
    let modes: Vec<ElectrodeMode> =
        names.iter().map(|n| ElectrodeMode::builtin(n).unwrap()).collect();
    let forward = compare_modes(&scene, &modes).unwrap();
    let reversed_modes: Vec<ElectrodeMode> = modes.iter().rev().cloned().collect();
    let reversed = compare_modes(&scene, &reversed_modes).unwrap();

    let ranked_names = |report: &ovs_core::sweep::SweepReport, modes: &[ElectrodeMode]| {
        report
            .ranking
            .iter()
            .map(|&i| modes[i].name.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(ranked_names(&forward, &modes), ranked_names(&reversed, &reversed_modes));
    // The ranking is a permutation of the inputs.
    let mut sorted = forward.ranking.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![0, 1, 2]);
}

#[test]
fn dominant_stress_components_along_path() {
    // For transverse plates the path sees the three normal components and
    // the xz shear; the in-plane-antisymmetric shears stay much smaller.
    let scene = small_scene();
    let mode = ElectrodeMode::builtin("cu_10_0").unwrap();
    let eval =
        evaluate_mode_detailed(&scene, &mode, EvalOptions { keep_stress: true }).unwrap();
    let last = eval.stress_snapshots.last().unwrap();
    let path_stress = stress_along_path(last, &eval.samples);
    let mut dominant: f64 = 0.0;
    let mut minor: f64 = 0.0;
    for s in &path_stress {
        dominant = dominant
            .max(s.xx.abs())
            .max(s.yy.abs())
            .max(s.zz.abs())
            .max(s.zx.abs());
        minor = minor.max(s.xy.abs()).max(s.yz.abs());
    }
    assert!(
        minor < 0.5 * dominant,
        "minor shears {minor} should stay below the dominant components {dominant}"
    );
}

#[test]
fn wrapped_electrodes_concentrate_stress_at_path_ends() {
    let scene = small_scene();
    let mode = ElectrodeMode::builtin("cu_5_4").unwrap();
    let eval =
        evaluate_mode_detailed(&scene, &mode, EvalOptions { keep_stress: true }).unwrap();
    let last = eval.stress_snapshots.last().unwrap();
    let path_stress = stress_along_path(last, &eval.samples);
    let n = path_stress.len();
    let vm: Vec<f64> = path_stress.iter().map(von_mises).collect();
    let ends = vm[0].max(vm[n - 1]);
    let center = vm[n / 2 - 1].max(vm[n / 2]).max(vm[n / 2 + 1]);
    assert!(
        ends > center,
        "end sections {ends} should exceed the center {center}"
    );
}

#[test]
fn section_count_matches_path_samples() {
    let scene = small_scene();
    let mode = ElectrodeMode::builtin("cu_10_0").unwrap();
    let eval = evaluate_mode_detailed(&scene, &mode, EvalOptions::default()).unwrap();
    for sections in &eval.sections_snapshots {
        assert_eq!(sections.len(), eval.samples.len());
    }
}

#[test]
fn ratio_search_returns_argmin_with_consistent_trace() {
    let scene = small_scene();
    let (best, report) = optimize_ratio(&scene, Family::Cu, 3).unwrap();
    assert_eq!(report.trace.len(), 3);
    // Trace objectives match a fresh evaluation of the same mode.
    let best_trace = report
        .trace
        .iter()
        .find(|t| t.name == best.name)
        .expect("winner in trace");
    let again = evaluate_mode(&scene, &best).unwrap();
    assert_eq!(again.corrected_total, best_trace.objective);
    // Every other sampled objective is no better.
    for t in &report.trace {
        assert!(t.objective >= best_trace.objective);
    }

    // Grid refinement that nests the coarse points can only improve.
    let (_, fine) = optimize_ratio(&scene, Family::Ito, 3).unwrap();
    let coarse_best = fine.trace.iter().map(|t| t.objective).fold(f64::INFINITY, f64::min);
    let (_, finer) = optimize_ratio(&scene, Family::Ito, 5).unwrap();
    let fine_best = finer.trace.iter().map(|t| t.objective).fold(f64::INFINITY, f64::min);
    assert!(fine_best <= coarse_best + 1e-18);

    // A single-point grid returns that point.
    let (only, single) = optimize_ratio(&scene, Family::Cu, 1).unwrap();
    assert_eq!(single.results.len(), 1);
    assert_eq!(only.ratio_x, 10e-3);
}

//! End-to-end harness behavior: artifact layout, determinism, locking,
//! divergence handling, and plot generation from real outputs.

use std::fs;
use std::path::Path;

use escape_bench_core::harness::csvio::CsvData;
use escape_bench_core::harness::fixtures::{escape_double_well, hetero_quad_k8};
use escape_bench_core::harness::plot::{plot_er_curves, plot_escape, plot_landscape};
use escape_bench_core::harness::{
    run_suite, ExperimentConfig, HarnessError, LandscapeOptions,
};

fn smoke_config() -> ExperimentConfig {
    let mut cfg = hetero_quad_k8();
    cfg.trials = 1;
    cfg.training.horizon = 1;
    cfg.theory = Some(escape_bench_core::harness::TheoryOptions { n_max: 1 });
    cfg.landscape = Some(LandscapeOptions {
        n_dirs: 3,
        alpha_min: -0.5,
        alpha_max: 0.5,
        alpha_steps: 7,
    });
    cfg
}

#[test]
fn smoke_run_produces_all_artifacts_with_correct_headers() {
    let dir = tempfile::tempdir().unwrap();
    let artifacts = run_suite(&smoke_config(), dir.path(), Some(2)).unwrap();

    let trace = CsvData::read(&artifacts.trace_csv).unwrap();
    assert_eq!(
        &trace.header[..5],
        &["n", "strategy", "er_empirical", "consensus_distance", "mean_sq_error"]
    );
    assert_eq!(trace.header.len(), 5 + 8); // er_agent_0..7
    // horizon 1, stride 1: rows n=0,1 per strategy
    assert_eq!(trace.rows.len(), 2 * 3);

    let theory = CsvData::read(artifacts.theory_csv.as_ref().unwrap()).unwrap();
    assert_eq!(
        theory.header,
        vec![
            "n",
            "e_n",
            "f_con",
            "f_dif",
            "er_cen",
            "er_con",
            "er_dif",
            "er_exact_cen",
            "er_exact_con",
            "er_exact_dif"
        ]
    );

    let landscape = CsvData::read(artifacts.landscape_csv.as_ref().unwrap()).unwrap();
    assert_eq!(landscape.header, vec!["dir", "alpha", "j"]);
    assert_eq!(landscape.rows.len(), 3 * 7);

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&artifacts.meta_json).unwrap()).unwrap();
    assert_eq!(meta["agents"], 8);
    assert_eq!(meta["regime"]["large_batch"], true);
    assert_eq!(meta["regime"]["small_eps"], true);
    assert_eq!(meta["config"]["seed"], 7);
    assert!(meta["rho_alpha"].as_f64().unwrap() < 1.0);
    // lock released
    assert!(!dir.path().join(".lock").exists());
}

#[test]
fn reruns_with_equal_seeds_are_byte_identical() {
    let cfg = smoke_config();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run_suite(&cfg, d1.path(), Some(2)).unwrap();
    run_suite(&cfg, d2.path(), Some(1)).unwrap();
    for name in ["trace.csv", "theory.csv", "landscape.csv", "meta.json"] {
        let a = fs::read(d1.path().join(name)).unwrap();
        let b = fs::read(d2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns/thread counts");
    }

    let mut other_seed = cfg;
    other_seed.seed = 8;
    let d3 = tempfile::tempdir().unwrap();
    run_suite(&other_seed, d3.path(), Some(2)).unwrap();
    assert_ne!(
        fs::read(d1.path().join("trace.csv")).unwrap(),
        fs::read(d3.path().join("trace.csv")).unwrap()
    );
}

#[test]
fn locked_directory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(".lock"), b"").unwrap();
    match run_suite(&smoke_config(), dir.path(), Some(1)) {
        Err(HarnessError::Locked(_)) => {}
        other => panic!("expected Locked, got {other:?}"),
    }
}

#[test]
fn diverged_run_flushes_partial_artifacts_and_errors() {
    let mut cfg = smoke_config();
    cfg.theory = None;
    cfg.landscape = None;
    cfg.training.mu = 1e9;
    cfg.training.horizon = 500;
    let dir = tempfile::tempdir().unwrap();
    match run_suite(&cfg, dir.path(), Some(1)) {
        Err(HarnessError::Diverged { .. }) => {}
        other => panic!("expected Diverged, got {other:?}"),
    }
    assert!(dir.path().join("trace.csv").exists());
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert!(!meta["diverged"].as_array().unwrap().is_empty());
}

#[test]
fn bundled_configs_match_fixture_builders() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let quad: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("hetero-quad-k8.json")).unwrap())
            .unwrap();
    assert_eq!(quad, serde_json::to_value(hetero_quad_k8()).unwrap());
    let escape: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("escape-double-well.json")).unwrap())
            .unwrap();
    assert_eq!(escape, serde_json::to_value(escape_double_well(0.15, 8, 512)).unwrap());
    // and they parse through the validating loader
    ExperimentConfig::from_json(&fs::read_to_string(root.join("hetero-quad-k8.json")).unwrap())
        .unwrap();
}

#[test]
fn theory_csv_orders_strategies_on_the_bundled_fixture() {
    let mut cfg = hetero_quad_k8();
    cfg.trials = 2; // theory.csv does not depend on trials
    let dir = tempfile::tempdir().unwrap();
    let artifacts = run_suite(&cfg, dir.path(), Some(2)).unwrap();
    let theory = CsvData::read(artifacts.theory_csv.as_ref().unwrap()).unwrap();
    let cen = theory.floats("er_cen").unwrap();
    let dif = theory.floats("er_dif").unwrap();
    let con = theory.floats("er_con").unwrap();
    for i in 0..cen.len() {
        assert!(cen[i] <= dif[i] && dif[i] <= con[i], "row {i}: {} {} {}", cen[i], dif[i], con[i]);
    }
}

#[test]
fn plots_render_from_real_artifacts() {
    let mut cfg = hetero_quad_k8();
    cfg.trials = 4;
    cfg.training.horizon = 5;
    cfg.theory = Some(escape_bench_core::harness::TheoryOptions { n_max: 5 });
    cfg.landscape = Some(LandscapeOptions {
        n_dirs: 2,
        alpha_min: -1.0,
        alpha_max: 1.0,
        alpha_steps: 9,
    });
    let dir = tempfile::tempdir().unwrap();
    let artifacts = run_suite(&cfg, dir.path(), Some(2)).unwrap();

    let trace = CsvData::read(&artifacts.trace_csv).unwrap();
    let theory = CsvData::read(artifacts.theory_csv.as_ref().unwrap()).unwrap();
    let svg = plot_er_curves(&trace, Some(&theory)).unwrap();
    // legend order: centralized, diffusion, consensus
    let pos_cen = svg.find(">centralized<").unwrap();
    let pos_dif = svg.find(">diffusion<").unwrap();
    let pos_con = svg.find(">consensus<").unwrap();
    assert!(pos_cen < pos_dif && pos_dif < pos_con);
    assert!(svg.matches("<polyline").count() >= 6); // 3 empirical + 3 theory

    let landscape = CsvData::read(artifacts.landscape_csv.as_ref().unwrap()).unwrap();
    let svg = plot_landscape(&landscape).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);

    // escape plot from a synthetic table (escape runs are exercised in the
    // acceptance suite)
    let esc = CsvData::parse("n,strategy,escaped_fraction,trials\n5,consensus,0.25,16\n").unwrap();
    assert!(plot_escape(&esc).unwrap().contains("polyline"));
}

#[test]
fn noise_stats_report_has_expected_scaling() {
    let cfg = hetero_quad_k8();
    let exp = escape_bench_core::harness::resolve(&cfg).unwrap();
    let report =
        escape_bench_core::harness::suite::noise_stats(&exp, &[1, 2, 4, 8], 20_000, 5).unwrap();
    assert!((-1.1..=-0.9).contains(&report.covariance_slope), "{}", report.covariance_slope);
    for gap in &report.scaling_gap {
        assert!(*gap <= 0.1, "scaling gap {gap}");
    }
}

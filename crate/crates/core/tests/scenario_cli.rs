//! Tests for scenario configuration, attack mapping, summary output, and the
//! end-to-end file-writing run.

use std::path::{Path, PathBuf};

use approx::assert_abs_diff_eq;

use dse_core::detect::RunMetrics;
use dse_core::noise_attacks::AttackKind;
use dse_core::scenario::{
    attack_for, mean_err_in_window, rel_err_svg, run_scenario, summary_csv, Estimator,
    ScenarioConfig, ScenarioKind, Seeds,
};

fn minimal_config_json() -> &'static str {
    r#"{
        "schema": 1,
        "case_path": "case3.json",
        "scenario": "nominal",
        "estimators": ["ekf", "ckf"],
        "output_dir": "out"
    }"#
}

#[test]
fn config_parses_with_defaults() {
    let cfg = ScenarioConfig::from_json(minimal_config_json()).unwrap();
    assert_eq!(cfg.scenario, ScenarioKind::Nominal);
    assert_eq!(cfg.estimators, vec![Estimator::Ekf, Estimator::Ckf]);
    assert_eq!(cfg.seeds.process, 1);
    assert_eq!(cfg.seeds.measurement, 2);
    assert_eq!(cfg.seeds.bw, 3);
    assert_eq!(cfg.seeds.sampling, 4);
    assert!(cfg.gain_path.is_none());
}

#[test]
fn config_rejects_wrong_schema() {
    let text = minimal_config_json().replace("\"schema\": 1", "\"schema\": 2");
    assert!(ScenarioConfig::from_json(&text).is_err());
}

#[test]
fn config_rejects_empty_estimator_list() {
    let text = minimal_config_json().replace("[\"ekf\", \"ckf\"]", "[]");
    assert!(ScenarioConfig::from_json(&text).is_err());
}

#[test]
fn config_rejects_unknown_estimator() {
    let text = minimal_config_json().replace("\"ekf\"", "\"pf\"");
    assert!(ScenarioConfig::from_json(&text).is_err());
}

#[test]
fn seed_family_derivation() {
    let s = Seeds::from_base(0);
    assert_eq!((s.process, s.measurement, s.bw, s.sampling), (1, 2, 3, 4));
    let s5 = Seeds::from_base(5);
    assert_eq!((s5.process, s5.measurement, s5.bw, s5.sampling), (21, 22, 23, 24));
}

#[test]
fn config_load_resolves_relative_paths_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, minimal_config_json()).unwrap();

    std::env::remove_var("DSE_SEED");
    let cfg = ScenarioConfig::load(&path).unwrap();
    assert_eq!(cfg.case_path, dir.path().join("case3.json"));
    assert_eq!(cfg.output_dir, dir.path().join("out"));
    assert_eq!(cfg.seeds.process, 1);

    std::env::set_var("DSE_SEED", "7");
    let cfg = ScenarioConfig::load(&path).unwrap();
    assert_eq!(cfg.seeds.process, 29);
    std::env::set_var("DSE_SEED", "x");
    assert!(ScenarioConfig::load(&path).is_err());
    std::env::remove_var("DSE_SEED");
}

#[test]
fn attack_mapping_matches_scenario_kind() {
    let t_end = 10.0;
    let none = attack_for(ScenarioKind::Nominal, 3, t_end);
    assert_eq!(none.kind, AttackKind::None);
    assert!(none.channels.is_empty());

    let integrity = attack_for(ScenarioKind::Integrity, 3, t_end);
    assert_eq!(integrity.kind, AttackKind::Integrity);
    assert_eq!(integrity.channels, vec![0, 2]);
    assert_eq!(integrity.factors.len(), integrity.channels.len());
    assert_eq!(integrity.window, [0.0, t_end]);

    let dos = attack_for(ScenarioKind::Dos, 3, t_end);
    assert_eq!(dos.kind, AttackKind::Dos);
    assert_eq!(dos.window, [3.0, 6.0]);

    let replay = attack_for(ScenarioKind::Replay, 3, t_end);
    assert_eq!(replay.kind, AttackKind::Replay);
    assert_eq!(replay.replay_shift, 3.0);
}

#[test]
fn mean_err_window_examples() {
    let times = vec![0.0, 1.0, 2.0, 3.0, 4.0];
    let errs = vec![10.0, 1.0, 2.0, 3.0, 100.0];
    assert_abs_diff_eq!(
        mean_err_in_window(&times, &errs, [1.0, 3.0]),
        2.0,
        epsilon = 1e-12
    );
    assert!(mean_err_in_window(&times, &errs, [5.0, 6.0]).is_nan());
}

fn dummy_metrics() -> Vec<RunMetrics> {
    vec![RunMetrics {
        estimator: "ekf".into(),
        rel_err: vec![1.0, 0.5],
        final_err: 0.5,
        mean_err: 0.75,
        detection_rate: 0.25,
        false_alarm_rate: 0.0,
        wall_time_s: 0.01,
        diverged: false,
    }]
}

#[test]
fn summary_csv_layout() {
    let csv = summary_csv(&dummy_metrics());
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "estimator,final_rel_err,mean_rel_err,detection_rate,false_alarm_rate,wall_time_s,diverged"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("ekf,0.5,0.75,0.25,0,"));
    assert!(row.ends_with(",false"));
}

#[test]
fn svg_contains_curves_and_labels() {
    let svg = rel_err_svg(&[0.0, 1.0], &dummy_metrics());
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("<polyline"));
    assert!(svg.contains(">ekf</text>"));
    assert!(svg.trim_end().ends_with("</svg>"));
}

fn repo_case_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases/case3.json")
}

#[test]
fn run_scenario_writes_artifacts_and_is_deterministic() {
    let make = |dir: &Path| ScenarioConfig {
        schema: 1,
        case_path: repo_case_path(),
        scenario: ScenarioKind::Nominal,
        noise: dse_core::noise_attacks::NoiseSpec::gaussian_default(),
        estimators: vec![Estimator::Ekf],
        seeds: Seeds::default(),
        output_dir: dir.to_path_buf(),
        gain_path: None,
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let out1 = run_scenario(&make(d1.path())).unwrap();
    let out2 = run_scenario(&make(d2.path())).unwrap();
    assert!(!out1.metrics[0].diverged);

    for name in [
        "truth.csv",
        "ekf_trajectory.csv",
        "ekf_innovation.csv",
        "summary.csv",
        "rel_err.svg",
    ] {
        let a = std::fs::read_to_string(d1.path().join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        if name.ends_with(".csv") && name != "summary.csv" {
            // Wall time differs between runs, so only the deterministic
            // artifacts must match byte for byte.
            let b = std::fs::read_to_string(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }
    let final1 = out1.metrics[0].final_err;
    let final2 = out2.metrics[0].final_err;
    assert_eq!(final1, final2);
}

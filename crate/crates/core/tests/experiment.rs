use std::fs;
use std::path::PathBuf;

use clf_etc::experiment::{self, ExperimentConfig, ModelSpec, PolicyKind, PolicySpec, SweepSpec, EXIT_ANOMALY, EXIT_FAILURE, EXIT_OK};
use clf_etc::sim::export::read_trajectory_csv;

fn preset(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(format!("{name}.json"));
    ExperimentConfig::from_json(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn every_preset_parses_and_round_trips() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        n += 1;
    }
    assert!(n >= 10);
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    let bad = [
        r#"{"model":{"name":"homog2d"},"policy":{"policy":"event","sigma":0.9},"colour":1}"#,
        r#"{"model":{"name":"homog2d","gain":2},"policy":{"policy":"event","sigma":0.9}}"#,
        r#"{"model":{"name":"homog2d"},"policy":{"policy":"event","sigma":1.2}}"#,
        r#"{"model":{"name":"homog2d"},"policy":{"policy":"event","sigma":0.9},"x0":[1,2,3]}"#,
        r#"{"model":{"name":"acc","k":0.5},"policy":{"policy":"event","sigma":0.9}}"#,
        r#"{"model":{"name":"zeno-polar","r_star":1.5},"policy":{"policy":"event","sigma":0.9}}"#,
        r#"{"model":{"name":"homog2d"},"policy":{"policy":"periodic-event","sigma":0.9,"sigma_tilde":0.5}}"#,
        r#"{"model":{"name":"homog2d"},"policy":{"policy":"time","sigma":0.9,"period":-1}}"#,
        r#"{"model":{"name":"pendulum"},"policy":{"policy":"event","sigma":0.9}}"#,
    ];
    for text in bad {
        let e = ExperimentConfig::from_json(text).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_FAILURE, "{text}");
    }
}

#[test]
fn simulate_writes_trajectory_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let out = experiment::simulate(&preset("homog2d"), dir.path(), true).unwrap();
    assert_eq!(out.exit_code, EXIT_OK);
    assert_eq!(out.report["stats"]["n_events"], 2);
    assert_eq!(out.report["rate_check"]["violations"].as_array().map_or(0, Vec::len), 0);
    let table = read_trajectory_csv(fs::File::open(dir.path().join("trajectory.csv")).unwrap()).unwrap();
    assert_eq!(table.event_times().len(), 2);
    let svg = fs::read_to_string(dir.path().join("trajectory.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let stats = experiment::stats(&dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(stats.report["n_events"], 2);
}

#[test]
fn simulate_is_byte_deterministic() {
    for name in ["acc_case1", "homog2d", "relay1d", "acc_periodic"] {
        let cfg = preset(name);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        experiment::simulate(&cfg, a.path(), false).unwrap();
        experiment::simulate(&cfg, b.path(), false).unwrap();
        for f in ["trajectory.csv", "stats.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{name}/{f}");
        }
    }
}

#[test]
fn zeno_preset_is_reported_as_anomaly() {
    let dir = tempfile::tempdir().unwrap();
    let out = experiment::simulate(&preset("zeno_polar"), dir.path(), false).unwrap();
    assert_eq!(out.exit_code, EXIT_ANOMALY);
    assert_eq!(out.report["zeno_bound"]["within_bound"], true);
    assert!(dir.path().join("diagnostics.json").exists());
}

#[test]
fn verify_flags_degenerate_models() {
    let dir = tempfile::tempdir().unwrap();
    let ok = experiment::verify(&preset("homog2d"), dir.path()).unwrap();
    assert_eq!(ok.exit_code, EXIT_OK);
    for name in ["zeno_polar", "relay1d"] {
        let out = experiment::verify(&preset(name), dir.path()).unwrap();
        assert_eq!(out.exit_code, EXIT_FAILURE, "{name}");
    }
}

#[test]
fn dwell_refuses_degenerate_models_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let out = experiment::dwell(&preset("relay1d"), dir.path(), false).unwrap();
    assert_eq!(out.exit_code, EXIT_FAILURE);
}

#[test]
fn sweep_rows_keep_axis_order_independent_of_threads() {
    let mut cfg = ExperimentConfig::new(ModelSpec::Relay1d, PolicySpec::event(0.5));
    cfg.x0 = Some(vec![1.0]);
    cfg.sweep = Some(SweepSpec::Sigma(vec![0.1, 0.3, 0.5, 0.7, 0.9]));
    let one = experiment::commands::sweep_rows(&cfg, Some(1)).unwrap();
    let four = experiment::commands::sweep_rows(&cfg, Some(4)).unwrap();
    assert_eq!(one, four);
    for (i, r) in one.iter().enumerate() {
        assert_eq!(r.index, i);
        assert_eq!(r.status, "ok");
        assert_eq!(r.n_events, Some(2));
        assert!((r.last_event_time.unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn policy_sweep_covers_all_four_policies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("acc_policy_sweep");
    let out = experiment::sweep(&cfg, dir.path()).unwrap();
    assert_eq!(out.exit_code, EXIT_OK);
    let mut rdr = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<experiment::commands::SweepRow> = rdr.deserialize().map(Result::unwrap).collect();
    let kinds: Vec<&str> = rows.iter().map(|r| r.policy.as_str()).collect();
    assert_eq!(kinds, ["event", "self", "time", "periodic-event"]);
    assert!(rows.iter().all(|r| r.status == "ok" && r.rate_certificate_ok == Some(true)), "{rows:?}");
}

#[test]
fn time_policy_derives_its_period() {
    let mut cfg = ExperimentConfig::new(ModelSpec::Homog2d { variant: Default::default() }, PolicySpec::with_kind(PolicyKind::Time, 0.9));
    cfg.horizon = Some(0.01);
    let run = experiment::commands::run_experiment(&cfg).unwrap();
    assert_eq!(run.derivation.clock_source.as_deref(), Some("derived"));
    let tau = run.derivation.tau_min.unwrap();
    assert!((run.derivation.period.unwrap() - tau).abs() <= 1e-15 * tau.max(1.0));
    assert!(run.result.is_ok());
}

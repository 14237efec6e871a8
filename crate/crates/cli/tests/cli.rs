//! End-to-end CLI checks on a small synthetic model.

use std::path::Path;
use std::process::{Command, Output};

fn resgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resgrad"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn print_config_lists_every_default() {
    let out = resgrad(&["--print-config"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let obj = v.as_object().unwrap();
    for key in [
        "gen.scenarios",
        "hm.learning_rate",
        "hm.weight_decay",
        "hm.coarse_factor",
        "train.epochs",
        "fluid.viscosity_oil",
        "sim.cg_tolerance",
    ] {
        assert!(obj.contains_key(key), "missing {key}");
    }
    assert_eq!(obj["hm.learning_rate"], 0.3);
    assert_eq!(obj["hm.weight_decay"], 5e-4);
    assert_eq!(obj["hm.coarse_factor"], 4);
}

#[test]
fn usage_errors_exit_1_with_tag() {
    let out = resgrad(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("E_USAGE:"), "{err}");

    let out = resgrad(&["--set", "bogus.key=1", "--print-config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("E_USAGE:"));
}

#[test]
fn simulate_on_missing_model_exits_2_with_tag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = resgrad(&[
        "simulate",
        "--model",
        path(&tmp.path().join("nope")),
        "--reservoir",
        path(&tmp.path().join("nope2")),
        "--out",
        path(&tmp.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("E_MODEL_MISSING:"), "{err}");
}

/// Full pipeline on the small twin: gen-data, train (briefly),
/// simulate, history-match, report.
#[test]
fn pipeline_runs_end_to_end_on_small_twin() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("dataset");
    let model = tmp.path().join("model");
    let sim_out = tmp.path().join("sim");
    let hm_out = tmp.path().join("hm");
    let report_out = tmp.path().join("report");

    let out = resgrad(&[
        "gen-data",
        "--set",
        "gen.synthetic=twin8",
        "--set",
        "gen.scenarios=3",
        "--set",
        "gen.horizon_days=60",
        "--set",
        "gen.step_days=15",
        "--out",
        path(&dataset),
        "--jobs",
        "2",
    ]);
    assert!(
        out.status.success(),
        "gen-data failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dataset.join("dataset.json").exists());
    assert!(dataset.join("s000/rates.csv").exists());

    let out = resgrad(&[
        "train",
        "--set",
        "train.epochs=2",
        "--dataset",
        path(&dataset),
        "--out",
        path(&model),
    ]);
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(model.join("weights.json").exists());
    assert!(model.join("training_history.csv").exists());

    let reservoir = dataset.join("base");
    let out = resgrad(&[
        "simulate",
        "--model",
        path(&model),
        "--reservoir",
        path(&reservoir),
        "--out",
        path(&sim_out),
    ]);
    assert!(
        out.status.success(),
        "simulate failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(sim_out.join("rates.csv").exists());
    assert!(sim_out.join("states/15.f64").exists());

    // history-match against the first scenario's oracle rates
    let out = resgrad(&[
        "history-match",
        "--set",
        "hm.max_iterations=3",
        "--set",
        "hm.learning_rate=0.05",
        "--model",
        path(&model),
        "--reservoir",
        path(&dataset.join("s000/model")),
        "--history",
        path(&dataset.join("s000/rates.csv")),
        "--out",
        path(&hm_out),
    ]);
    assert!(
        out.status.success(),
        "history-match failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "summary.json",
        "loss_curve.csv",
        "corrected-rates.csv",
        "historical-rates.csv",
        "corrections/rock.f64",
        "corrections/log_conn.f64",
        "corrections/corrections.json",
    ] {
        assert!(hm_out.join(f).exists(), "missing {f}");
    }

    let out = resgrad(&[
        "report",
        "--hm",
        path(&hm_out),
        "--out",
        path(&report_out),
    ]);
    assert!(
        out.status.success(),
        "report failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["loss.svg", "cumulative_rates.svg", "correlation.svg", "metrics.json"] {
        assert!(report_out.join(f).exists(), "missing {f}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_out.join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["schema_version"], 1);
    let rw = metrics["correlation"]["water"].as_f64().unwrap();
    let ro = metrics["correlation"]["oil"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&rw));
    assert!((-1.0..=1.0).contains(&ro));

    // report is a pure function of its input directory
    let report2 = tmp.path().join("report2");
    let out = resgrad(&["report", "--hm", path(&hm_out), "--out", path(&report2)]);
    assert!(out.status.success());
    for f in ["loss.svg", "metrics.json"] {
        let a = std::fs::read(report_out.join(f)).unwrap();
        let b = std::fs::read(report2.join(f)).unwrap();
        assert_eq!(a, b, "{f} not deterministic");
    }
}

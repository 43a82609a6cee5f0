use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_hrpool");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn hrpool")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn aggregates(dir: &Path, trials: &str) -> String {
    let path = dir.join("agg.json");
    let text = format!(
        r#"{{"trials": {trials},
            "covariate_distribution": {{"support": [{{"z": [0.0], "prob": 0.5}}, {{"z": [1.0], "prob": 0.5}}]}}}}"#
    );
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn estimates(report: &Value) -> Vec<(String, f64)> {
    report["effects"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| {
            (
                e["method"].as_str().unwrap().to_string(),
                e["estimate"][0].as_f64().unwrap(),
            )
        })
        .collect()
}

#[test]
fn solve_reports_all_definitions() {
    let v = json(&run(&["solve", "--a", "0.5", "--b", "1.0", "--p", "0.5", "--q", "0.5"]));
    assert!((v["c_l"].as_f64().unwrap() - 0.75).abs() < 1e-15);
    assert!((v["exp_theta_l"].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    assert!((v["c_hm"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((v["c_pl"].as_f64().unwrap() - 0.682).abs() < 0.015);
    assert!(v.get("c_censored").is_none());

    let v = json(&run(&[
        "solve", "--a", "0.5", "--b", "1.0", "--p", "0.5", "--q", "0.5", "--tmax-H", "50",
    ]));
    assert!((v["c_censored"].as_f64().unwrap() - v["c_pl"].as_f64().unwrap()).abs() < 1e-6);

    let v = json(&run(&["solve", "--a", "0.7", "--b", "0.7", "--p", "0.2", "--q", "0.9"]));
    for key in ["c_hm", "c_pl", "exp_theta_l", "c_l"] {
        assert!((v[key].as_f64().unwrap() - 0.7).abs() < 1e-12, "{key}");
    }
}

#[test]
fn invalid_input_exits_2() {
    assert_eq!(
        run(&["solve", "--a", "-1", "--b", "1", "--p", "0.5", "--q", "0.5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["solve", "--a", "1", "--b", "1", "--p", "1.5", "--q", "0.5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["solve", "--a", "1"]).status.code(), Some(2));
    assert_eq!(
        run(&["estimate", "--aggregates", "/nonexistent/agg.json"])
            .status
            .code(),
        Some(2)
    );

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "trial_id,time,event,z1\nA,-1,1,0\n").unwrap();
    let out = run(&["estimate", "--lines", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn degenerate_fit_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let lines = dir.path().join("sep.csv");
    // trial A: every treated subject fails before every control
    std::fs::write(
        &lines,
        "trial_id,time,event,z1\nA,1,1,1\nA,2,1,1\nA,3,1,0\nA,4,1,0\nB,1,1,0\nB,2,1,1\nB,3,1,0\nB,4,1,1\n",
    )
    .unwrap();
    assert_eq!(
        run(&["estimate", "--lines", lines.to_str().unwrap()]).status.code(),
        Some(3)
    );
}

#[test]
fn homogeneous_aggregates_collapse() {
    let dir = tempfile::tempdir().unwrap();
    let agg = aggregates(
        dir.path(),
        r#"[{"label": "A", "n": 300, "beta_hat": [-0.5], "covariance": [[0.02]]},
            {"label": "B", "n": 100, "beta_hat": [-0.5], "covariance": [[0.06]]}]"#,
    );
    let v = json(&run(&["estimate", "--aggregates", &agg]));
    let est = estimates(&v);
    assert_eq!(est.len(), 4);
    for (method, value) in est {
        let target = if method == "linear_hr" { (-0.5f64).exp() } else { -0.5 };
        assert!((value - target).abs() < 1e-10, "{method}: {value}");
    }
    assert!((v["mixing_p"].as_f64().unwrap() - 0.75).abs() < 1e-15);
}

#[test]
fn zero_covariances_give_zero_variances() {
    let dir = tempfile::tempdir().unwrap();
    let agg = aggregates(
        dir.path(),
        r#"[{"label": "A", "n": 300, "beta_hat": [-1.2], "covariance": [[0.0]]},
            {"label": "B", "n": 100, "beta_hat": [-0.2], "covariance": [[0.0]]}]"#,
    );
    let v = json(&run(&["estimate", "--aggregates", &agg, "--weights", "size"]));
    for e in v["effects"].as_array().unwrap() {
        assert_eq!(e["covariance"][0][0].as_f64().unwrap(), 0.0, "{}", e["method"]);
        assert!(e["wald"].is_null());
    }
    // inverse-variance weights are undefined here; the limit-based methods still run
    let v = json(&run(&["estimate", "--aggregates", &agg]));
    assert_eq!(v["skipped"].as_array().unwrap().len(), 2);
    assert_eq!(estimates(&v).len(), 2);
}

#[test]
fn lines_round_trip_through_simulate_and_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    std::fs::write(
        &scenario,
        r#"{"trial_effects": [[-1.2039728043259361], [-0.2231435513142097]], "sizes": [400, 170],
            "covariate_dist": {"support": [{"z": [0.0], "prob": 0.5}, {"z": [1.0], "prob": 0.5}]},
            "allocation": "fixed", "seed": 99}"#,
    )
    .unwrap();
    let lines = dir.path().join("lines.csv");
    let out = run(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        lines.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("lines.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let report_path = dir.path().join("report.json");
    let out = run(&[
        "estimate",
        "--lines",
        lines.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let est = estimates(&v);
    let pooled = est.iter().find(|(m, _)| m == "pooled_mple").unwrap().1;
    assert!((pooled + 0.926).abs() < 0.3, "{pooled}");
    assert_eq!(est.len(), 5);

    // the per-trial summaries are themselves a valid aggregates input
    let agg = dir.path().join("agg.json");
    let text = serde_json::json!({
        "trials": v["trials"],
        "covariate_distribution": {"support": [{"z": [0.0], "prob": 0.5}, {"z": [1.0], "prob": 0.5}]}
    });
    std::fs::write(&agg, text.to_string()).unwrap();
    let again = json(&run(&["estimate", "--aggregates", agg.to_str().unwrap()]));
    let m1 = est.iter().find(|(m, _)| m == "misspecified").unwrap().1;
    let m2 = estimates(&again).iter().find(|(m, _)| m == "misspecified").unwrap().1;
    assert!((m1 - m2).abs() < 1e-12);
}

#[test]
fn seed_flag_overrides_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    std::fs::write(
        &scenario,
        r#"{"trial_effects": [[-0.5], [0.0]], "sizes": [30, 20],
            "covariate_dist": {"support": [{"z": [0.0], "prob": 0.5}, {"z": [1.0], "prob": 0.5}]}, "seed": 1}"#,
    )
    .unwrap();
    let draw = |seed: Option<&str>, name: &str| {
        let out = dir.path().join(name);
        let mut args = vec![
            "simulate",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert!(run(&args).status.success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(draw(None, "a.csv"), draw(Some("1"), "b.csv"));
    assert_ne!(draw(None, "c.csv"), draw(Some("2"), "d.csv"));
}

#[test]
fn grid_and_sweep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.csv");
    let out = run(&[
        "grid",
        "--out",
        grid.to_str().unwrap(),
        "--a-min",
        "0.5",
        "--a-max",
        "1.0",
        "--b-min",
        "0.5",
        "--b-max",
        "1.0",
        "--step",
        "0.25",
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&grid).unwrap().lines().count(), 10);

    let scenario = dir.path().join("s.json");
    std::fs::write(
        &scenario,
        r#"{"trial_effects": [[-1.0], [-0.2]], "sizes": [40, 30],
            "covariate_dist": {"support": [{"z": [0.0], "prob": 0.5}, {"z": [1.0], "prob": 0.5}]},
            "allocation": "fixed", "seed": 7}"#,
    )
    .unwrap();
    let sweep = dir.path().join("sweep.csv");
    let args = [
        "sweep",
        "--scenario",
        scenario.to_str().unwrap(),
        "--tmax-grid",
        "0.5,inf",
        "--replicates",
        "100",
    ];
    let mut full = args.to_vec();
    full.extend(["--out", sweep.to_str().unwrap()]);
    assert!(run(&full).status.success());
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().starts_with("inf,0,0,"));

    let mut few = args.to_vec();
    few[6] = "10";
    few.extend(["--out", sweep.to_str().unwrap()]);
    assert_eq!(run(&few).status.code(), Some(2));
}

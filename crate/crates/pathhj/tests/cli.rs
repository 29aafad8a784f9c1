use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn pathhj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathhj")).args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn counterexample_csv_last_row_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("probe.csv");
    let out = pathhj(&["counterexample", "--l", "2", "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("l,tau,quotient,estimate"));
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert!((last[3] - 1.0).abs() <= 1e-3, "{last:?}");
}

#[test]
fn counterexample_limits_depend_on_direction() {
    let out = pathhj(&["counterexample", "--l", "1.5", "--l", "2", "--l", "4", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json_of(&out);
    assert!(doc["report"]["min_gap"].as_f64().unwrap() > 0.1);
    for (i, l) in [1.5, 2.0, 4.0].into_iter().enumerate() {
        let lim = doc["report"]["probes"][i]["probe"]["limit"].as_f64().unwrap();
        assert!((lim - 2.0 * (l - 1.0) / l).abs() <= 1e-3, "l = {l}: {lim}");
    }
}

#[test]
fn failing_csv_run_leaves_a_report_for_the_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("probe.csv");
    let out = pathhj(&["counterexample", "--l", "2", "--tol", "1e-14", "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("probe.csv.report.json#/report/probes/0/probe/limit"), "{}", stderr(&out));
    let side: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("probe.csv.report.json")).unwrap()).unwrap();
    assert!(side.pointer("/report/probes/0/probe/limit").unwrap().is_f64());
    assert_eq!(side["ok"], Value::Bool(false));
}

#[test]
fn value_at_origin_is_zero() {
    let out = pathhj(&[
        "value",
        "--problem",
        data("integrator.json").to_str().unwrap(),
        "--point",
        data("origin.json").to_str().unwrap(),
        "--mode",
        "exhaustive",
        "--no-timestamp",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json_of(&out);
    assert_eq!(doc["report"]["estimate"].as_f64(), Some(0.0));
    assert_eq!(doc["report"]["result"]["signals"].as_u64(), Some(59049));
    assert_eq!(doc["one_sided"], Value::Bool(false));
    assert!(doc.get("timestamp").is_none());
}

#[test]
fn value_far_from_origin_matches_distance_oracle() {
    // x(t) = 1.3 at t = 0.3: max(0, 1.3 − 0.7) = 0.6.
    let out = pathhj(&[
        "value",
        "--problem",
        data("integrator.json").to_str().unwrap(),
        "--point",
        data("far.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json_of(&out);
    assert!((doc["report"]["estimate"].as_f64().unwrap() - 0.6).abs() <= 1e-9);
    assert!(doc["report"]["oracle"]["lattice_error"].as_f64().unwrap() <= 1e-9);
    assert!(doc["timestamp"].is_u64());
}

#[test]
fn value_csv_is_the_optimal_motion() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("motion.csv");
    let out = pathhj(&[
        "value",
        "--problem",
        data("integrator.json").to_str().unwrap(),
        "--point",
        data("far.json").to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("time,x_1"));
    // Nodes from −h to T.
    assert_eq!(text.lines().count(), 1 + 13);
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert!((last[0] - 1.0).abs() < 1e-12 && (last[1] - 0.6).abs() < 1e-9, "{last:?}");
}

#[test]
fn malformed_grid_points_at_dt() {
    let out = pathhj(&[
        "value",
        "--problem",
        data("bad_grid.json").to_str().unwrap(),
        "--point",
        data("origin.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/grid/dt"), "{}", stderr(&out));
}

#[test]
fn schema_violations_carry_pointers() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"h": 0.2, "T": 1.0, "dt": -0.1, "n": 1, "t": 0.0, "values": [[0.0]]}"#).unwrap();
    let out = pathhj(&["value", "--problem", data("integrator.json").to_str().unwrap(), "--point", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/dt"), "{}", stderr(&out));

    std::fs::write(&bad, r#"{"grid": {"h": 0.2, "T": 1.0, "dt": 0.1, "n": 1}, "U": [[0.0]], "f": {"name": "warp"}}"#).unwrap();
    let out = pathhj(&["value", "--problem", bad.to_str().unwrap(), "--point", data("origin.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/f"), "{}", stderr(&out));

    // Wrong number of nodes for t = 0 on this grid.
    std::fs::write(&bad, r#"{"h": 0.2, "T": 1.0, "dt": 0.1, "n": 1, "t": 0.0, "values": [[0.0], [0.0]]}"#).unwrap();
    let out = pathhj(&["value", "--problem", data("integrator.json").to_str().unwrap(), "--point", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/values"), "{}", stderr(&out));
}

#[test]
fn bad_flags_are_input_errors() {
    let out = pathhj(&["subgrad-search", "--phi", "wobble", "--point", data("origin.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/args/phi"), "{}", stderr(&out));
    let out = pathhj(&["bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pathhj(&["value", "--problem", data("integrator.json").to_str().unwrap(), "--point", data("origin.json").to_str().unwrap(), "--budget", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/args/budget"), "{}", stderr(&out));
}

#[test]
fn dpp_residual_vanishes_on_the_integrator() {
    let out = pathhj(&[
        "dpp",
        "--problem",
        data("integrator.json").to_str().unwrap(),
        "--point",
        data("far.json").to_str().unwrap(),
        "--taus",
        "1s,3s,0.9",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json_of(&out);
    assert_eq!(doc["report"]["rows"].as_array().unwrap().len(), 3);
    assert!(doc["report"]["max_residual"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn perturbed_value_fails_the_upper_side() {
    let args = |phi: &'static str| {
        [
            "check-solution",
            "--problem",
            data("integrator.json").to_str().unwrap().to_owned().leak(),
            "--points",
            data("points.json").to_str().unwrap().to_owned().leak(),
            "--phi",
            phi,
            "--no-timestamp",
        ]
    };
    let out = pathhj(&args("value"));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = pathhj(&args("value_minus:0.5"));
    assert_eq!(out.status.code(), Some(1));
    let doc = json_of(&out);
    let failures = doc["failures"].as_array().unwrap();
    assert!(!failures.is_empty());
    for f in failures {
        let ptr = f.as_str().unwrap();
        let report = doc.pointer(ptr.trim_end_matches("/margin")).unwrap();
        let id = report["id"].as_str().unwrap();
        assert!(id.starts_with('U'), "{id} failed for value − 0.5(T − t)");
    }
}

#[test]
fn subgrad_search_refuses_nonpositive_d0() {
    let dir = tempfile::tempdir().unwrap();
    let pt = dir.path().join("pt.json");
    let rows = vec![vec![0.1]; 161];
    let doc = serde_json::json!({"h": 0.25, "T": 1.0, "dt": 1.0 / 256.0, "n": 1, "t": 0.375, "values": rows});
    std::fs::write(&pt, doc.to_string()).unwrap();
    let out = pathhj(&["subgrad-search", "--phi", "affine:1,0.5", "--point", pt.to_str().unwrap(), "--L", "ball:1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/args/phi"), "{}", stderr(&out));
    let out = pathhj(&["subgrad-search", "--phi", "time", "--point", pt.to_str().unwrap(), "--L", "polytope:[[0]]"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json_of(&out);
    assert!(doc["report"]["estimate"]["p0"].as_f64().unwrap() <= 1.01);
}

#[test]
fn bp_demo_reports_clauses() {
    let out = pathhj(&["bp-demo", "--alpha", "1", "--kappa", "0.25", "--count", "50", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json_of(&out);
    for k in ["psi_range", "derivative_bounds", "minimality", "anchors"] {
        assert_eq!(doc["report"]["clauses"][k], Value::Bool(true), "{k}");
    }
    assert_eq!(doc["report"]["set_size"].as_u64(), Some(50));
}

#[test]
fn bp_demo_reads_a_set_file() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("set.json");
    let mk = |t: f64, x: f64| {
        let nodes = ((0.25 + t) * 16.0).round() as usize + 1;
        serde_json::json!({"h": 0.25, "T": 1.0, "dt": 0.0625, "n": 1, "t": t, "values": vec![vec![x]; nodes]})
    };
    let doc = serde_json::json!({"alpha": 1.0, "points": [mk(0.0, 0.5), mk(0.25, -0.2), mk(0.5, 0.9)]});
    std::fs::write(&set, doc.to_string()).unwrap();
    let out = pathhj(&["bp-demo", "--set", set.to_str().unwrap(), "--phi", "abs", "--kappa", "0.05"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(json_of(&out)["report"]["minimizer_index"].as_u64(), Some(1));

    // A point beyond alpha is refused.
    let doc = serde_json::json!({"alpha": 0.5, "points": [mk(0.0, 0.9)]});
    std::fs::write(&set, doc.to_string()).unwrap();
    let out = pathhj(&["bp-demo", "--set", set.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn regularity_stays_within_growth_bound() {
    let out = pathhj(&["regularity", "--problem", data("integrator.json").to_str().unwrap(), "--budget", "16"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json_of(&out);
    assert_eq!(doc["report"]["regularity"]["within_gronwall"], Value::Bool(true));
}

#[test]
fn gauge_check_on_a_paths_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("paths.json");
    let doc = serde_json::json!([
        {"h": 0.5, "T": 1.0, "dt": 0.25, "n": 2, "t": 0.25, "values": [[1.0, 0.0], [0.5, -0.5], [0.0, 2.0], [0.3, 0.3]]},
        {"h": 0.5, "T": 1.0, "dt": 0.25, "n": 2, "t": 0.0, "values": [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]}
    ]);
    std::fs::write(&f, doc.to_string()).unwrap();
    let csv = dir.path().join("margins.csv");
    let out = pathhj(&["gauge-check", "--paths", f.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);

    let doc = serde_json::json!([
        {"h": 0.5, "T": 1.0, "dt": 0.25, "n": 2, "t": 0.25, "values": [[1.0, 0.0], [0.5, -0.5], [0.0, 2.0], [0.3, 0.3]]},
        {"h": 0.5, "T": 1.0, "dt": 0.125, "n": 2, "t": 0.0, "values": [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]}
    ]);
    std::fs::write(&f, doc.to_string()).unwrap();
    let out = pathhj(&["gauge-check", "--paths", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/1"), "{}", stderr(&out));
}

#[test]
fn dt_override_resamples_inputs() {
    let out = pathhj(&[
        "value",
        "--problem",
        data("integrator.json").to_str().unwrap(),
        "--point",
        data("far.json").to_str().unwrap(),
        "--dt",
        "0.05",
        "--mode",
        "beam:64",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc = json_of(&out);
    assert_eq!(doc["one_sided"], Value::Bool(true));
    assert!((doc["report"]["estimate"].as_f64().unwrap() - 0.6).abs() <= 0.05 + 1e-9);
    let out = pathhj(&["value", "--problem", data("integrator.json").to_str().unwrap(), "--point", data("far.json").to_str().unwrap(), "--dt", "0.3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/args/dt"), "{}", stderr(&out));
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let integrator = data("integrator.json");
    let points = data("points.json");
    let runs: Vec<Vec<&str>> = vec![
        vec!["cross-validate", "--problem", integrator.to_str().unwrap(), "--points", points.to_str().unwrap(), "--seed", "11"],
        vec!["gauge-check", "--count", "500", "--n", "3", "--seed", "11"],
        vec!["bp-demo", "--count", "100", "--seed", "11"],
        vec!["regularity", "--problem", integrator.to_str().unwrap(), "--budget", "16", "--seed", "11"],
    ];
    for args in runs {
        let mut outs = Vec::new();
        for w in ["1", "4"] {
            let mut a = args.clone();
            a.extend(["--no-timestamp", "--workers", w]);
            let out = pathhj(&a);
            assert_eq!(out.status.code(), Some(0), "{args:?}: {}", stderr(&out));
            outs.push(out.stdout);
        }
        assert!(outs[0] == outs[1], "{} differs between 1 and 4 workers", args[0]);
    }
}

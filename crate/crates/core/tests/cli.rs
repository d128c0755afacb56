//! Black-box tests of the command-line binary: output schemas, exit codes,
//! and determinism guarantees.

use std::path::Path;
use std::process::Output;

use pushblock::interlacing::GtPattern;

fn run(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_pushblock"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Rows of a CSV body as parsed f64 columns, skipping the header.
fn csv_rows(body: &str) -> Vec<Vec<f64>> {
    body.lines()
        .skip(1)
        .map(|line| line.split(',').map(|c| c.parse::<f64>().unwrap()).collect())
        .collect()
}

#[test]
fn transition_matches_poisson_at_unit_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [], "tail": 1.0}, "t": 1.0, "points": []}"#,
    );
    let out = run(&["transition", "--config", &cfg]);
    assert!(out.status.success());
    let rows = csv_rows(&stdout_str(&out));
    let row = rows
        .iter()
        .find(|r| r[0] == 0.0 && r[1] == 2.0)
        .expect("row for 0 -> 2 present");
    let expect = (-1.0f64).exp() / 2.0;
    assert!((row[2] - expect).abs() < 1e-9, "density {} vs {}", row[2], expect);
}

#[test]
fn transition_at_time_zero_is_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [1.0, 2.0], "tail": 1.5}, "t": 0.0, "points": []}"#,
    );
    let out = run(&["transition", "--config", &cfg]);
    assert!(out.status.success());
    for row in csv_rows(&stdout_str(&out)) {
        assert_eq!(row[0], row[1], "off-diagonal row {row:?} in a t=0 table");
        assert!((row[2] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn kernel_diagonal_equals_transition_from_origin() {
    let dir = tempfile::tempdir().unwrap();
    let points: Vec<String> =
        (0..=6).map(|x| format!("{{\"level\": 1, \"site\": {x}}}")).collect();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"rates": {{"prefix": [1.0, 2.0], "tail": 1.0}}, "t": 0.7, "points": [{}]}}"#,
            points.join(", ")
        ),
    );
    let kernel = run(&["kernel", "--config", &cfg]);
    assert!(kernel.status.success());
    let transition = run(&["transition", "--config", &cfg]);
    assert!(transition.status.success());
    let trans_rows = csv_rows(&stdout_str(&transition));
    let mut checked = 0;
    for row in csv_rows(&stdout_str(&kernel)) {
        let (n1, x1, n2, x2, v) = (row[0], row[1], row[2], row[3], row[4]);
        if n1 == n2 && x1 == x2 {
            let want = trans_rows
                .iter()
                .find(|r| r[0] == 0.0 && r[1] == x1)
                .map(|r| r[2])
                .unwrap_or(0.0);
            assert!(
                (v - want).abs() < 1e-9,
                "kernel diagonal at site {x1}: {v} vs transition {want}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 7);
}

#[test]
fn correlate_rejects_duplicate_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [], "tail": 1.0}, "t": 0.5, "n_levels": 2,
            "points": [{"level": 1, "site": 0}, {"level": 1, "site": 0}]}"#,
    );
    let out = run(&["correlate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"rates": {"prefix": [], "tail": 1.0"#);
    let out = run(&["transition", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [], "tail": 1.0}, "t": 1.0, "points": [], "speed": 3}"#,
    );
    let out = run(&["transition", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_exits_two() {
    let out = run(&["transition"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn negative_time_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [], "tail": 1.0}, "t": -0.5, "points": []}"#,
    );
    let out = run(&["transition", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exhausted_quadrature_budget_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // Repeated rates force the quadrature fallback, and the node cap is far
    // below what the requested tolerance needs.
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [], "tail": 1.0}, "t": 1.0,
            "points": [{"level": 1, "site": 3}],
            "quadrature": {"nodes": 8, "tol": 1e-15, "cap": 16}}"#,
    );
    let out = run(&["kernel", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn zero_trajectories_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [], "tail": 1.0}, "t": 0.5, "trajectories": 0, "points": []}"#,
    );
    let csv = dir.path().join("out.csv");
    let out = run(&["simulate", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_without_out_path_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [], "tail": 1.0}, "t": 0.5, "points": []}"#,
    );
    let out = run(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_reproduces_simulation_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [1.0, 2.0], "tail": 1.0}, "t": 0.5, "n_levels": 2,
            "seed": 5, "trajectories": 2000, "points": []}"#,
    );
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let ra = run(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]);
    let rb = run(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap()]);
    assert!(ra.status.success() && rb.status.success());
    assert_eq!(ra.stdout, rb.stdout);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    // A different seed gives a different sample.
    let c = dir.path().join("c.csv");
    let rc = run(&[
        "simulate", "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "6",
    ]);
    assert!(rc.status.success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn single_level_summary_histogram_matches_transition_row() {
    let dir = tempfile::tempdir().unwrap();
    let trials = 40_000u64;
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"rates": {{"prefix": [1.0, 2.0], "tail": 1.0}}, "t": 0.6,
                "n_levels": 1, "seed": 17, "trajectories": {trials}, "points": []}}"#
        ),
    );
    let csv = dir.path().join("out.csv");
    let out = run(&["simulate", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    let hist = summary["coordinate_histograms"][0].as_array().unwrap();

    let transition = run(&["transition", "--config", &cfg]);
    let trans_rows = csv_rows(&stdout_str(&transition));
    let n = trials as f64;
    for cell in hist {
        let site = cell[0].as_f64().unwrap();
        let count = cell[1].as_f64().unwrap();
        let p = trans_rows
            .iter()
            .find(|r| r[0] == 0.0 && r[1] == site)
            .map(|r| r[2])
            .unwrap_or(0.0);
        let se = (p * (1.0 - p) / n).sqrt();
        assert!(
            (count / n - p).abs() <= 4.0 * se + 1e-9,
            "site {site}: frequency {} vs density {p}",
            count / n
        );
    }
}

#[test]
fn gibbs_samples_are_valid_patterns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [1.0, 3.0], "tail": 1.0}, "t": 0.4, "n_levels": 3,
            "seed": 2, "trajectories": 200, "points": []}"#,
    );
    let out = run(&["gibbs-sample", "--config", &cfg]);
    assert!(out.status.success());
    let samples: Vec<Vec<Vec<usize>>> = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(samples.len(), 200);
    for levels in samples {
        assert_eq!(levels.len(), 3);
        GtPattern::new(levels).expect("sampled pattern interlaces");
    }
}

#[test]
fn verify_passes_clean_and_flags_injected_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [1.0, 2.0], "tail": 1.0}, "t": 0.5, "n_levels": 2,
            "seed": 3, "points": [],
            "verify": {"mc_trajectories": 20000}}"#,
    );
    let out = run(&["verify", "--config", &cfg]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(report["all_pass"], serde_json::Value::Bool(true));
    let names: Vec<&str> =
        report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        vec![
            "duality",
            "intertwinings",
            "substochasticity",
            "biorthogonality",
            "plancherel_consistency",
            "kernel_vs_bruteforce",
            "mc_vs_kernel"
        ]
    );
    for check in report["checks"].as_array().unwrap() {
        assert_eq!(check["pass"], serde_json::Value::Bool(true), "failed: {check}");
    }

    let corrupted = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [1.0, 2.0], "tail": 1.0}, "t": 0.5, "n_levels": 2,
            "seed": 3, "points": [],
            "verify": {"mc_trajectories": 20000, "inject_rate_perturbation": 0.05}}"#,
    );
    let out = run(&["verify", "--config", &corrupted]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(report["all_pass"], serde_json::Value::Bool(false));
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == serde_json::Value::Bool(false))
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(
        failed.contains(&"kernel_vs_bruteforce"),
        "expected the kernel check to flag the corrupted rates, failed set: {failed:?}"
    );
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"rates": {"prefix": [1.0, 2.0], "tail": 1.0}, "t": 0.5, "n_levels": 3,
            "seed": 9, "trajectories": 3000, "points": []}"#,
    );
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let ra = run(&[
        "simulate", "--config", &cfg, "--out", a.to_str().unwrap(), "--threads", "1",
    ]);
    let rb = run(&[
        "simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--threads", "4",
    ]);
    assert!(ra.status.success() && rb.status.success());
    assert_eq!(ra.stdout, rb.stdout);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

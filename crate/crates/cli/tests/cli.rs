//! End-to-end tests that drive the compiled binary the way a user would:
//! write a config, run the pipeline stages, and inspect exit codes, stderr,
//! and the files left behind.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reachfunnel"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process should exit normally")
}

fn assert_ok(out: &Output) {
    assert_eq!(code(out), 0, "expected success, stderr:\n{}", stderr(out));
}

const BASE_CONFIG: &str = r#"
out_dir = "artifacts"

[plant]
name = "case_study"

[dataset]
n_samples = 50
noise_std = 0.01
seed = 18

[kernel]
fit = false
signal_std = [316.0, 25.3]
lengthscales = [[2.9, 177.0], [1.67, 50.5]]

[bound]
method = "monte_carlo"
trials = 50000
calibration_points = 4000
envelope = 0.04

[funnel]
eps = [1.0, 1.0]
theta = 0.5

[funnel.start]
lower = [-3.0, -3.0]
upper = [-2.0, -2.0]

[funnel.goal]
lower = [1.0, 1.0]
upper = [3.0, 3.0]

[sim]
dt = 0.001
t_max = 10.0
x0 = [-2.5, -2.5]
"#;

fn write_config(dir: &Path, patch: impl Fn(String) -> String) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, patch(BASE_CONFIG.to_string())).unwrap();
    path
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

#[test]
fn missing_dataset_csv_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| {
        c.replace("seed = 18", "seed = 18\ncsv = \"/definitely/not/there.csv\"")
    });
    let out = run(&["learn", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/definitely/not/there.csv"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| c.replace("n_samples", "n_sampels"));
    let out = run(&["learn", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("n_sampels"));
}

#[test]
fn full_pipeline_produces_artifacts_and_clean_audit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| c);
    let cfg = cfg.to_str().unwrap();
    let art = dir.path().join("art");
    let art_s = art.to_str().unwrap();

    assert_ok(&run(&["learn", "--config", cfg, "--out", art_s, "--quiet"]));
    assert_ok(&run(&["calibrate", "--config", cfg, "--out", art_s, "--quiet"]));
    assert_ok(&run(&["synthesize", "--config", cfg, "--out", art_s, "--quiet"]));
    assert_ok(&run(&[
        "simulate", "--config", cfg, "--out", art_s, "--grid", "2", "--quiet",
    ]));

    for f in [
        "dataset.csv",
        "model.toml",
        "fit_report.txt",
        "bound.toml",
        "calibrate_report.txt",
        "coverage.csv",
        "funnel.toml",
        "funnel_table.txt",
        "trajectory_00.csv",
        "trajectory_03.csv",
        "audit.txt",
        "state_space.svg",
        "timeseries.svg",
        "metadata.txt",
    ] {
        assert!(art.join(f).exists(), "missing artifact {f}");
    }
    let audit = read(&art.join("audit.txt"));
    assert!(
        audit.contains("4/4 runs reached the goal") && audit.contains("violations total = 0"),
        "audit not clean:\n{audit}"
    );
    let coverage = read(&art.join("coverage.csv"));
    assert_eq!(coverage.lines().count(), 3, "pointwise + constant rows");

    let out = run(&["simulate", "--config", cfg, "--out", art_s, "--grid", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| c);
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));

    assert_ok(&run(&["learn", "--config", cfg, "--out", a.to_str().unwrap(), "--quiet"]));
    assert_ok(&run(&["learn", "--config", cfg, "--out", b.to_str().unwrap(), "--quiet"]));
    assert_eq!(read(&a.join("dataset.csv")), read(&b.join("dataset.csv")));
    assert_eq!(read(&a.join("model.toml")), read(&b.join("model.toml")));

    // Learning from the recorded measurement file reproduces the model too.
    let csv = a.join("dataset.csv");
    let cfg2 = dir.path().join("run2.toml");
    std::fs::write(
        &cfg2,
        BASE_CONFIG.replace(
            "seed = 18",
            &format!("seed = 18\ncsv = \"{}\"", csv.display()),
        ),
    )
    .unwrap();
    let c = dir.path().join("c");
    assert_ok(&run(&[
        "learn", "--config", cfg2.to_str().unwrap(), "--out", c.to_str().unwrap(), "--quiet",
    ]));
    assert_eq!(read(&a.join("model.toml")), read(&c.join("model.toml")));
}

#[test]
fn infeasible_goal_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| {
        c.replace(
            "[funnel.goal]\nlower = [1.0, 1.0]\nupper = [3.0, 3.0]",
            "[funnel.goal]\nlower = [1.0, 1.0]\nupper = [1.0, 1.0]",
        )
    });
    let out = run(&[
        "synthesize",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("art").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("infeasible goal"));
}

#[test]
fn start_outside_corridor_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| {
        c.replace("method = \"monte_carlo\"", "method = \"deterministic\"")
            .replace("x0 = [-2.5, -2.5]", "x0 = [4.9, 4.9]")
    });
    let cfg = cfg.to_str().unwrap();
    let art = dir.path().join("art");
    let art_s = art.to_str().unwrap();
    assert_ok(&run(&["learn", "--config", cfg, "--out", art_s, "--quiet"]));
    assert_ok(&run(&["calibrate", "--config", cfg, "--out", art_s, "--quiet"]));
    assert_ok(&run(&["synthesize", "--config", cfg, "--out", art_s, "--quiet"]));
    let out = run(&["simulate", "--config", cfg, "--out", art_s, "--quiet"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("run 00"));
}

#[test]
fn attractor_override_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| {
        c.replace("theta = 0.5", "theta = 0.5\neta = [1.8, 2.2]")
    });
    let art = dir.path().join("art");
    assert_ok(&run(&[
        "synthesize",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        art.to_str().unwrap(),
        "--quiet",
    ]));
    let table = read(&art.join("funnel_table.txt"));
    let etas: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().nth(1).unwrap())
        .collect();
    assert_eq!(etas, ["1.8", "2.2"]);
}

#[test]
fn full_horizon_when_stop_on_reach_is_off() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| {
        c.replace("method = \"monte_carlo\"", "method = \"deterministic\"")
            .replace("dt = 0.001", "dt = 0.01")
            .replace("t_max = 10.0", "t_max = 2.0\nstop_on_reach = false")
    });
    let cfg = cfg.to_str().unwrap();
    let art = dir.path().join("art");
    let art_s = art.to_str().unwrap();
    assert_ok(&run(&["learn", "--config", cfg, "--out", art_s, "--quiet"]));
    assert_ok(&run(&["calibrate", "--config", cfg, "--out", art_s, "--quiet"]));
    assert_ok(&run(&["synthesize", "--config", cfg, "--out", art_s, "--quiet"]));
    assert_ok(&run(&["simulate", "--config", cfg, "--out", art_s, "--quiet"]));
    let csv = read(&art.join("trajectory_00.csv"));
    let last_t: f64 = csv
        .lines()
        .last()
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((last_t - 2.0).abs() < 1e-9, "expected full horizon, got t = {last_t}");
}

#[test]
fn calibrate_methods_write_matching_bound_kind() {
    let dir = tempfile::tempdir().unwrap();
    let art = dir.path().join("art");
    let art_s = art.to_str().unwrap();

    let det = write_config(dir.path(), |c| {
        c.replace("method = \"monte_carlo\"", "method = \"deterministic\"")
    });
    assert_ok(&run(&["learn", "--config", det.to_str().unwrap(), "--out", art_s, "--quiet"]));
    assert_ok(&run(&["calibrate", "--config", det.to_str().unwrap(), "--out", art_s, "--quiet"]));
    assert!(read(&art.join("bound.toml")).contains("kind = \"deterministic\""));

    let prob = dir.path().join("prob.toml");
    std::fs::write(
        &prob,
        BASE_CONFIG.replace(
            "method = \"monte_carlo\"",
            "method = \"probabilistic\"\nepsilon = 0.05",
        ),
    )
    .unwrap();
    assert_ok(&run(&["calibrate", "--config", prob.to_str().unwrap(), "--out", art_s, "--quiet"]));
    assert!(read(&art.join("bound.toml")).contains("kind = \"probabilistic\""));
}

#[test]
fn deterministic_scale_reports_infeasibility_with_hint() {
    // Realizations exist whose data quadratic form exceeds what the RKHS
    // norm budget admits; the calibrate stage must surface that as an
    // infeasibility, not a crash or a silent NaN.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| {
        c.replace("method = \"monte_carlo\"", "method = \"deterministic\"")
    });
    let cfg = cfg.to_str().unwrap();
    let art = dir.path().join("art");
    let art_s = art.to_str().unwrap();
    assert_ok(&run(&["learn", "--config", cfg, "--out", art_s, "--seed", "13", "--quiet"]));
    let out = run(&["calibrate", "--config", cfg, "--out", art_s, "--quiet"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("lipschitz_safety"), "stderr: {}", stderr(&out));
}

#[test]
fn hyperparameter_fit_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| {
        c.replace("fit = false", "fit = true")
            .replace("n_samples = 50", "n_samples = 12")
    });
    let cfg = cfg.to_str().unwrap();
    let art = dir.path().join("art");
    let art_s = art.to_str().unwrap();

    assert_ok(&run(&["learn", "--config", cfg, "--out", art_s, "--no-fit", "--quiet"]));
    assert!(read(&art.join("fit_report.txt")).contains("pinned from config"));

    assert_ok(&run(&["learn", "--config", cfg, "--out", art_s, "--quiet"]));
    let report = read(&art.join("fit_report.txt"));
    assert!(report.contains("fitted by evidence maximization"), "{report}");
    assert!(report.contains("evidence"));
}

#[test]
fn trajectory_sampling_collects_requested_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |c| {
        c.replace("n_samples = 50", "n_samples = 12")
            .replace(
                "seed = 18",
                "seed = 18\nsampling = \"trajectory\"\ntraj_dt = 0.01\ntraj_steps = 5",
            )
    });
    let art = dir.path().join("art");
    assert_ok(&run(&[
        "learn",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        art.to_str().unwrap(),
        "--quiet",
    ]));
    let rows = read(&art.join("dataset.csv")).lines().count();
    assert_eq!(rows, 13, "header plus one row per sample");
}

#[test]
fn reproduce_writes_summary_with_all_quantities() {
    let dir = tempfile::tempdir().unwrap();
    let art = dir.path().join("art");
    let out = run(&[
        "reproduce",
        "--out",
        art.to_str().unwrap(),
        "--trials",
        "100000",
        "--grid",
        "2",
        "--quiet",
    ]);
    assert_ok(&out);
    let summary = read(&art.join("summary.csv"));
    for q in [
        "sigma_bar_max",
        "coverage_lower",
        "coverage_upper",
        "beta_tilde_1",
        "beta_tilde_2",
    ] {
        assert!(summary.contains(q), "summary missing {q}:\n{summary}");
    }
    assert!(art.join("config.toml").exists());
    assert!(art.join("state_space.svg").exists());
}

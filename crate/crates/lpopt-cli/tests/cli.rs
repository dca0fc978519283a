//! End-to-end checks of the `lpopt` binary: exit codes, file outputs, and
//! byte-level reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lpopt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpopt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn lpopt")
}

fn write_small_cfg(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.cfg");
    fs::write(
        &path,
        "\
problem.kind = rosenbrock
problem.m = 8
problem.n = 10
optimizer.kind = adam
optimizer.eta = 5e-4
policy.all.mantissa = 8
run.iters = 50
run.seed = 3
",
    )
    .unwrap();
    path
}

#[test]
fn missing_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = lpopt(
        &["run", "--config", "nope.cfg", "--out", "results"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("results").exists());
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "problem.kindd = rosenbrock\n").unwrap();
    let out = lpopt(&["run", "--config", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown key"), "{err}");
}

#[test]
fn run_writes_csv_and_consistent_summary() {
    let dir = tempfile::tempdir().unwrap();
    write_small_cfg(dir.path());
    let out = lpopt(
        &["run", "--config", "small.cfg", "--out", "res"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("res/run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51); // header + 50 rows
    let summary = fs::read_to_string(dir.path().join("res/summary.txt")).unwrap();
    let tail_line = summary
        .lines()
        .find(|l| l.starts_with("tail_grad_norm = "))
        .expect("summary has tail_grad_norm");
    let tail_from_summary = tail_line.trim_start_matches("tail_grad_norm = ");
    // recomputing the tail from the CSV reproduces the summary value exactly
    let records = lpopt::trainloop::records_from_csv(&csv).unwrap();
    let recomputed = lpopt::trainloop::tail_grad_norm_from_records(&records, 50);
    assert_eq!(format!("{recomputed}"), tail_from_summary);
    assert!(summary.contains("problem.kind = rosenbrock"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_small_cfg(dir.path());
    for name in ["a", "b"] {
        let out = lpopt(&["run", "--config", "small.cfg", "--out", name], dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    let a = fs::read(dir.path().join("a/run.csv")).unwrap();
    let b = fs::read(dir.path().join("b/run.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        fs::read(dir.path().join("a/summary.txt")).unwrap(),
        fs::read(dir.path().join("b/summary.txt")).unwrap()
    );
}

#[test]
fn mantissa_52_override_matches_disabled_quantization() {
    let dir = tempfile::tempdir().unwrap();
    write_small_cfg(dir.path());
    let out = lpopt(
        &[
            "run", "--config", "small.cfg", "--out", "m52",
            "--override", "policy.all.mantissa=52",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let out = lpopt(
        &[
            "run", "--config", "small.cfg", "--out", "off",
            "--override", "policy.all.mantissa=off",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let tail = |p: &str| {
        let s = fs::read_to_string(dir.path().join(p).join("summary.txt")).unwrap();
        s.lines()
            .find(|l| l.starts_with("tail_grad_norm = "))
            .unwrap()
            .trim_start_matches("tail_grad_norm = ")
            .parse::<f64>()
            .unwrap()
    };
    let (t52, toff) = (tail("m52"), tail("off"));
    assert!((t52 - toff).abs() <= 1e-10 * toff.abs().max(1.0), "{t52} vs {toff}");
}

#[test]
fn jsonl_format_is_emitted() {
    let dir = tempfile::tempdir().unwrap();
    write_small_cfg(dir.path());
    let out = lpopt(
        &[
            "run", "--config", "small.cfg", "--out", "j",
            "--override", "output.format=jsonl",
            "--override", "run.iters=3",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("j/run.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.starts_with("{\"t\":")), "{text}");
}

#[test]
fn sweep_writes_per_mantissa_files_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    write_small_cfg(dir.path());
    let out = lpopt(
        &[
            "sweep", "--config", "small.cfg", "--out", "sw",
            "--mantissas", "4,8,16",
            "--override", "run.iters=30",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for m in [4, 8, 16] {
        assert!(dir.path().join(format!("sw/run_M{m}.csv")).exists());
    }
    let summary = fs::read_to_string(dir.path().join("sw/sweep_summary.csv")).unwrap();
    assert!(summary.starts_with("M,tail_grad_norm,mean_qerr_W,mean_qerr_G,mean_qerr_M,mean_qerr_V"));
    assert_eq!(summary.lines().count(), 4);
    assert!(dir.path().join("sw/plot_sweep.py").exists());
}

#[test]
fn sweep_empty_mantissa_list_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_small_cfg(dir.path());
    let out = lpopt(
        &["sweep", "--config", "small.cfg", "--mantissas", ""],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bounds_reports_terms_and_precondition_violations() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("ok.cfg");
    fs::write(
        &params,
        "\
theorem = adam
T = 1000
d = 25
eta = 0.001
beta1 = 0.9
beta2 = 0.999
epsilon = 1e-8
R = 1
L = 1
D = 1
F0_minus_Fstar = 1
",
    )
    .unwrap();
    let out = lpopt(&["bounds", "--params", "ok.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"total\":"), "{text}");
    assert!(text.contains("\"Qtilde_over_T\": 0"), "{text}");

    let bad = dir.path().join("bad.cfg");
    fs::write(
        &bad,
        "\
theorem = adam
T = 1000
d = 25
eta = 0.001
beta1 = 0.99
beta2 = 0.9
epsilon = 1e-8
R = 1
L = 1
D = 1
F0_minus_Fstar = 1
",
    )
    .unwrap();
    let out = lpopt(&["bounds", "--params", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("beta1(1+q_M) < beta2(1-q_V)"), "{err}");
}

#[test]
fn bounds_grid_mode_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = lpopt(&["bounds", "--grid", "adam"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("T,total,total*sqrt(T)/ln(T)"), "{text}");
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn lemmas_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = lpopt(&["lemmas", "--seed", "0", "--trials", "200"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("refined_cauchy"));
    assert!(text.contains("no violations"));
}

#[test]
fn bundled_rosenbrock_config_runs_fast_and_writes_full_telemetry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/rosenbrock_adam.cfg");
    let started = std::time::Instant::now();
    let out = lpopt(
        &["run", "--config", cfg.to_str().unwrap(), "--out", "full"],
        dir.path(),
    );
    let elapsed = started.elapsed();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elapsed.as_secs() < 60, "bundled config took {elapsed:?}");
    let csv = fs::read_to_string(dir.path().join("full/run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10_001); // header + 10000 rows
}

#[test]
fn dataset_gen_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mlp.cfg");
    fs::write(
        &cfg,
        "\
problem.kind = mlp
problem.mlp_layers = 5,6,3
problem.num_classes = 3
problem.dataset_seed = 11
problem.dataset_size = 30
problem.batch_size = 4
run.iters = 1
",
    )
    .unwrap();
    let out = lpopt(
        &["dataset", "gen", "--config", "mlp.cfg", "--out", "data.bin"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = fs::read(dir.path().join("data.bin")).unwrap();
    let ds = lpopt::binfmt::dataset_from_bytes(&bytes).unwrap();
    assert_eq!(ds.labels.len(), 30);
    assert_eq!(ds.features.cols(), 5);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use fedrot::Matrix;
use fedrot_cli::verify::{library_procrustes, run_verify};

const TOY: &str = r#"
[federation]
strategy = "fed_rot"
n_clients = 3
rank = 1
rounds = 12
local_steps = 30
learning_rate = 0.01
lambda = 1.0

[federation.task]
kind = "scalar_toy"
"#;

const REGRESSION: &str = r#"
[federation]
strategy = "fed_rot"
n_clients = 3
rank = 2
rounds = 6
local_steps = 5
learning_rate = 0.1
lambda = 0.5
seed = 7

[federation.task]
kind = "low_rank_regression"
d_out = 8
d_in = 6
true_rank = 2
heterogeneity = 0.5
"#;

fn fedrot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedrot"))
        .args(args)
        .env_remove("FEDROT_THREADS")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_one_row_per_round() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", TOY);
    let out = tmp.path().join("out");
    let o = fedrot(&["run", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("rounds.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "round,loss,agg_error,dispersion,alignment_gain,rotation_deviation,tau_diag,wall_ms"
    );
    assert_eq!(lines.len(), 13);
    assert!(csv.ends_with('\n'));
    // Round 1 is never aligned, so its gain is blank.
    assert_eq!(lines[1].split(',').nth(4), Some(""));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["rounds_completed"], 12);
    assert_eq!(summary["config"]["lambda"], 1.0);
    assert_eq!(summary["version"], fedrot::VERSION);
    let last_loss: f64 = lines[12].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(summary["final_loss"].as_f64().unwrap(), last_loss);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "reg.toml", REGRESSION);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(fedrot(&["run", s(&cfg), "--out", s(&a)]).status.code(), Some(0));
    assert_eq!(
        fedrot(&["run", s(&cfg), "--out", s(&b), "--jobs", "2"]).status.code(),
        Some(0)
    );
    for f in ["rounds.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "reg.toml", REGRESSION);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(fedrot(&["run", s(&cfg), "--out", s(&a)]).status.code(), Some(0));
    assert_eq!(
        fedrot(&["run", s(&cfg), "--out", s(&b), "--seed", "8"]).status.code(),
        Some(0)
    );
    assert_ne!(
        fs::read(a.join("rounds.csv")).unwrap(),
        fs::read(b.join("rounds.csv")).unwrap()
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(b.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 8);
}

#[test]
fn invalid_lambda_exits_2_naming_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &TOY.replace("lambda = 1.0", "lambda = 1.5"));
    let o = fedrot(&["run", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambda"), "{}", stderr(&o));
}

#[test]
fn parse_errors_carry_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &TOY.replace("rank = 1", "rank = \"one\""));
    let o = fedrot(&["run", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.toml:5:"), "{err}");

    let cfg = write_config(
        tmp.path(),
        "typo.toml",
        &TOY.replace("rounds = 12", "rounds = 12\nrondus = 3"),
    );
    let o = fedrot(&["run", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("typo.toml:7:"), "{}", stderr(&o));
}

#[test]
fn missing_output_dir_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", TOY);
    assert_eq!(fedrot(&["run", s(&cfg)]).status.code(), Some(2));
    let with_out = format!("{TOY}\n[output]\ndir = \"{}\"\n", s(&tmp.path().join("fromfile")));
    let cfg = write_config(tmp.path(), "toy2.toml", &with_out);
    assert_eq!(fedrot(&["run", s(&cfg)]).status.code(), Some(0));
    assert!(tmp.path().join("fromfile/rounds.csv").exists());
}

#[test]
fn divergence_exits_3_with_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let text = REGRESSION
        .replace(
            "learning_rate = 0.1",
            "learning_rate = 5.0\ninit = { constant = { b = 1.0, a = 1.0 } }",
        )
        .replace("rounds = 6", "rounds = 20");
    let cfg = write_config(tmp.path(), "div.toml", &text);
    let out = tmp.path().join("o");
    let o = fedrot(&["run", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "diverged");
    let rows = fs::read_to_string(out.join("rounds.csv")).unwrap().lines().count() - 1;
    assert_eq!(summary["rounds_completed"], rows);
    assert!(rows < 20);
}

#[test]
fn lambda_grid_gives_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[sweep]\nlambda = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]\nseeds = [0, 1, 2]\n",
        REGRESSION.replace("rounds = 6", "rounds = 3")
    );
    let cfg = write_config(tmp.path(), "sweep.toml", &text);
    let out = tmp.path().join("o");
    let o = fedrot(&["sweep", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,seed,status,final_loss,mean_agg_error,detail");
    assert_eq!(lines.len(), 34);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(2) == Some("ok")));
    assert!(out.join("lambda=0.5_seed=2/rounds.csv").exists());
}

#[test]
fn sweep_outputs_do_not_depend_on_scheduling() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[sweep]\nstrategy = [\"fed_it\", \"ffa_lora\", \"ro_lora\", \"fed_rot\"]\nseeds = [3, 4]\n",
        REGRESSION
    );
    let cfg = write_config(tmp.path(), "sweep.toml", &text);
    let (serial, parallel) = (tmp.path().join("serial"), tmp.path().join("parallel"));
    assert_eq!(
        fedrot(&["sweep", s(&cfg), "--out", s(&serial), "--jobs", "1"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        fedrot(&["sweep", s(&cfg), "--out", s(&parallel), "--jobs", "4"])
            .status
            .code(),
        Some(0)
    );
    let csv = fs::read_to_string(serial.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert_eq!(csv, fs::read_to_string(parallel.join("sweep.csv")).unwrap());
    for strategy in ["fed_it", "ffa_lora", "ro_lora", "fed_rot"] {
        for seed in [3, 4] {
            let cell = format!("strategy={strategy}_seed={seed}");
            for f in ["rounds.csv", "summary.json"] {
                assert_eq!(
                    fs::read(serial.join(&cell).join(f)).unwrap(),
                    fs::read(parallel.join(&cell).join(f)).unwrap(),
                    "{cell}/{f}"
                );
            }
        }
    }
}

#[test]
fn failing_cells_are_recorded_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{}\n[sweep]\nrank = [2, 9]\n", REGRESSION);
    let cfg = write_config(tmp.path(), "sweep.toml", &text);
    let out = tmp.path().join("o");
    let o = fedrot(&["sweep", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let statuses: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(statuses, ["ok", "invalid"]);

    let all_bad = format!("{}\n[sweep]\nrank = [9]\n", REGRESSION);
    let cfg = write_config(tmp.path(), "bad.toml", &all_bad);
    assert_eq!(
        fedrot(&["sweep", s(&cfg), "--out", s(&tmp.path().join("b"))])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn empty_or_missing_grid_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = write_config(
        tmp.path(),
        "empty.toml",
        &format!("{REGRESSION}\n[sweep]\nlambda = []\n"),
    );
    assert_eq!(
        fedrot(&["sweep", s(&empty), "--out", s(&tmp.path().join("a"))])
            .status
            .code(),
        Some(2)
    );
    let none = write_config(tmp.path(), "none.toml", &format!("{REGRESSION}\n[sweep]\n"));
    assert_eq!(
        fedrot(&["sweep", s(&none), "--out", s(&tmp.path().join("b"))])
            .status
            .code(),
        Some(2)
    );
    let plain = write_config(tmp.path(), "plain.toml", REGRESSION);
    assert_eq!(
        fedrot(&["sweep", s(&plain), "--out", s(&tmp.path().join("c"))])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn thread_env_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", TOY);
    let run = |env: &str, extra: &[&str]| {
        let mut args = vec!["run", s(&cfg), "--out"];
        let out = tmp.path().join(format!("o{}", extra.len()));
        let out_s = out.to_str().unwrap().to_string();
        args.push(&out_s);
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_fedrot"))
            .args(&args)
            .env("FEDROT_THREADS", env)
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(run("2", &[]), Some(0));
    assert_eq!(run("zero", &[]), Some(2));
    // --jobs takes precedence, so a bad variable is never consulted.
    assert_eq!(run("zero", &["--jobs", "1"]), Some(0));
}

#[test]
fn verify_passes_quickly() {
    let started = Instant::now();
    let o = fedrot(&["verify"]);
    let secs = started.elapsed().as_secs_f64();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let names = [
        "scalar_toy_ordering",
        "lagrange_identity",
        "procrustes_grid",
        "det_correction",
        "soft_rotation_shrinkage",
    ];
    for n in names {
        assert!(stdout.contains(&format!("PASS {n}")), "{stdout}");
    }
    assert!(secs < 60.0, "{secs}s");
}

/// Procrustes without the determinant fix: `V·Uᵀ`, a reflection whenever
/// `det(UVᵀ) = −1`.
fn no_det_correction(local: &Matrix<f64>, reference: &Matrix<f64>) -> fedrot::Result<Matrix<f64>> {
    let m = reference.matmul_t(local)?;
    let s = fedrot::svd(&m)?;
    s.vt.transpose().matmul(&s.u.transpose())
}

#[test]
fn verify_catches_missing_det_correction() {
    let mut buf = Vec::new();
    assert!(!run_verify(no_det_correction, &mut buf).unwrap());
    let text = String::from_utf8(buf).unwrap();
    assert!(text.contains("FAIL det_correction"), "{text}");
    let mut buf = Vec::new();
    assert!(run_verify(library_procrustes, &mut buf).unwrap());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(fedrot(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(fedrot(&[]).status.code(), Some(2));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let file = fedrot_cli::config::load(&path).unwrap_or_else(|e| panic!("{e}"));
            let grid = file.sweep.expect("example configs carry a sweep");
            assert!(!grid.expand(&file.federation).unwrap().is_empty());
            n += 1;
        }
    }
    assert_eq!(n, 3);
}

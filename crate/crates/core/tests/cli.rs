use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hl-couette");

fn hl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("HL_COUETTE_OUT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 6] = ["--set", "grid.n_y=15", "--set", "grid.n_sigma=128", "--set", "grid.horizon=0.2"];

#[test]
fn validate_standard_prints_eta() {
    let o = hl(&["validate"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let eta: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("eta = "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((eta - 0.31731).abs() < 5e-5, "{eta}");
}

#[test]
fn degenerate_initial_data_is_rejected() {
    let o = hl(&["validate", "--set", "initial.density={kind=\"uniform\",low=-0.5,high=0.5}"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("accepted = false"));
}

#[test]
fn negative_density_file_names_the_entry() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("p0.csv");
    let mut rows = Vec::new();
    for j in 0..3 {
        let mut row = vec!["0.125".to_string(); 8];
        if j == 1 {
            row[2] = "-1e-3".into();
        }
        rows.push(row.join(","));
    }
    fs::write(&table, rows.join("\n")).unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        "[grid]\nn_y = 3\nn_sigma = 8\nsigma_max = 2.0\n[initial]\ndensity_file = \"p0.csv\"\n",
    )
    .unwrap();
    let o = hl(&["validate", "--config", dir_str(&cfg)]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 1") || err.contains("y index 1"), "{err}");
}

#[test]
fn usage_errors_have_their_own_code() {
    assert_eq!(code(&hl(&["frobnicate"])), 2);
    assert_eq!(code(&hl(&["validate", "--no-such-flag"])), 2);
    assert_eq!(code(&hl(&[])), 2);
    assert_eq!(code(&hl(&["--help"])), 0);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let o = hl(&["validate", "--set", "grid.bogus=1"]);
    assert_eq!(code(&o), 1);
    let o = hl(&["validate", "--set", "model.rho=-1"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn nondim_prints_scaled_groups() {
    let o = hl(&["nondim", "--rho", "2", "--L", "3", "--T0", "2", "--sigma-c", "4", "--alpha", "8", "--G0", "2", "--mu", "16"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for line in ["rho' = 1.125", "alpha' = 0.5", "G0' = 0.5", "mu' = 2"] {
        assert!(text.contains(line), "{text}");
    }
}

#[test]
fn standard_run_writes_eleven_snapshots_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&hl(&["run", "--out", dir_str(&a)])), 0);
    assert_eq!(code(&hl(&["run", "--out", dir_str(&b)])), 0);
    let names = |d: &Path| {
        let mut v: Vec<String> = fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    };
    let files = names(&a);
    assert_eq!(files.iter().filter(|f| f.starts_with("snapshot_")).count(), 11);
    assert_eq!(files, names(&b));
    for f in &files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let first = fs::read_to_string(a.join("snapshot_000000.csv")).unwrap();
    assert!(first.starts_with("# hl-couette snapshot v1\n"));
    assert!(first.contains("\ny,U,tau,D,"));

    let o = hl(&["diagnose", dir_str(&a)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("stored report reproduced"));
    assert!(!stdout(&o).contains("differs"));
}

#[test]
fn diagnose_refuses_files_from_another_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut args = vec!["run", "--out", dir_str(&a)];
    args.extend(SMALL);
    assert_eq!(code(&hl(&args)), 0);
    let mut args = vec!["run", "--out", dir_str(&b), "--set", "grid.dt=5e-4"];
    args.extend(SMALL);
    assert_eq!(code(&hl(&args)), 0);
    fs::copy(b.join("density_000000.csv"), a.join("density_000000.csv")).unwrap();
    let o = hl(&["diagnose", dir_str(&a)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("different run"));
}

#[test]
fn resume_continues_and_rejects_other_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let mut args = vec!["run", "--out", dir_str(&a), "--set", "output.checkpoint_cadence=0.1"];
    args.extend(SMALL);
    assert_eq!(code(&hl(&args)), 0);
    let cp = a.join("checkpoint_000100.json");
    let mut args = vec!["run", "--out", dir_str(&b), "--resume", dir_str(&cp)];
    args.extend(SMALL);
    assert_eq!(code(&hl(&args)), 0);
    let body = |p: &Path| {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(body(&a.join("snapshot_000200.csv")), body(&b.join("snapshot_000200.csv")));

    let mut args = vec!["run", "--out", dir_str(&c), "--resume", dir_str(&cp), "--set", "model.alpha=2"];
    args.extend(SMALL);
    let o = hl(&args);
    assert_eq!(code(&o), 1);
}

#[test]
fn numerical_failure_exits_five_and_dumps_state() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--out", dir_str(tmp.path()), "--set", "solver.picard_max=1"];
    args.extend(SMALL);
    let o = hl(&args);
    assert_eq!(code(&o), 5);
    assert!(tmp.path().join("failure.json").exists());
}

#[test]
fn hard_diagnostic_failure_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--out", dir_str(tmp.path()), "--set", "diagnostics.mass_tol=1e-18"];
    args.extend(SMALL);
    let o = hl(&args);
    assert_eq!(code(&o), 4);
    assert!(tmp.path().join("failure.json").exists());
}

#[test]
fn unwritable_output_exits_six() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let mut args = vec!["run", "--out", dir_str(&out)];
    args.extend(SMALL);
    assert_eq!(code(&hl(&args)), 6);
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["run"])
        .args(SMALL)
        .env("HL_COUETTE_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("summary.json").exists());
}

#[test]
fn zero_threshold_run_takes_the_closed_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--out", dir_str(tmp.path()), "--set", "model.sigma_c=0"];
    args.extend(SMALL);
    let o = hl(&args);
    assert_eq!(code(&o), 0);
    let first = fs::read_to_string(tmp.path().join("snapshot_000000.csv")).unwrap();
    assert!(first.starts_with("# hl-couette maxwell v1\n"));
}

#[test]
fn oracle_matches_the_relaxation_law() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hl(&["oracle", "--out", dir_str(tmp.path()), "--set", "model.sigma_c=0", "--set", "grid.sigma_max=12", "--set", "grid.n_sigma=384"]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(tmp.path().join("oracle_tau.csv")).unwrap();
    for line in text.lines().skip(2) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[1] - (1.0 - (-v[0]).exp())).abs() < 1e-12, "{line}");
    }
    assert!(tmp.path().join("oracle_p.csv").exists());
}

#[test]
fn hl_run_writes_series_and_conserves_mass() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hl(&[
        "hl-run",
        "--out",
        dir_str(tmp.path()),
        "--set",
        "hl_run.shear_rate={kind=\"ramp\",ramp_time=0.2,plateau=2}",
    ]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(tmp.path().join("hl_series.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 1001);
    assert!(rows.iter().all(|r| (r[3] - 1.0).abs() < 1e-10));
    assert!(rows.last().unwrap()[1] > 0.5);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_physec-lab"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn sweep_moh_prints_reference_points() {
    let out = run(&["sweep-moh", "--l", "64", "--n-min", "64", "--n-max", "2000", "--step", "8"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# tool=physec-lab"));
    assert_eq!(lines.next(), Some("n_bits,l_bits,moh"));
    let moh = |n: &str| -> f64 {
        text.lines()
            .find(|l| l.starts_with(&format!("{n},")))
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((moh("64") - 2.0).abs() < 1e-12);
    assert!((moh("400") - 0.44).abs() < 1e-12);
    assert!((moh("2000") - 0.056).abs() < 1e-12);
}

#[test]
fn run_is_deterministic_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("skg_sweep.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, par) in [(&a, "1"), (&b, "3")] {
        let o = run(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--trials",
            "5",
            "--seed",
            "99",
            "--parallel",
            par,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["skg_trials.csv", "skg_sweep_summary.csv"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let trials = std::fs::read_to_string(a.join("skg_trials.csv")).unwrap();
    assert!(trials.lines().next().unwrap().contains("seed=99"));
    // Header plus metadata plus 4 SNR points x 5 trials.
    assert_eq!(trials.lines().count(), 2 + 20);
}

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenario": "overhead_sweep", "snrdb": 3,
            "overhead": {"l_bits": 64, "n_min": 64, "n_max": 128, "step": 8}, "trials": 1, "seed": 0}"#,
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("snrdb"));
}

#[test]
fn negative_trials_and_missing_file_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenario": "overhead_sweep",
            "overhead": {"l_bits": 64, "n_min": 64, "n_max": 128, "step": 8}, "trials": -1, "seed": 0}"#,
    );
    let o = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["run", "--config", "/nonexistent/cfg.json", "--out", "/tmp"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["sweep-moh", "--step", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = configs().join("overhead_sweep.json");
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn shipped_configs_validate() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let o = run(&["validate", "--config", path.to_str().unwrap()]);
        assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
    }
}

use std::path::Path;
use std::process::{Command, Output};

use kdcl_cli::commands::{log_file_name, CURVES_FILE, MANIFEST_FILE, MEAN_CURVES_FILE, SUMMARY_FILE, TRIALS_FILE};
use kdcl_cli::emit::CURVE_HEADER;
use kdcl_core::sim::run_trial;
use kdcl_core::FilterKind;

const SMALL: &str = "steps = 120\ntrials = 2\nmaster_seed = 7\n";

fn kdcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdcl"))
        .args(args)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .expect("run kdcl")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kdcl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(kdcl(&["--help"]).status.code(), Some(0));
    assert_eq!(kdcl(&["validate", "--config", "/nonexistent/kdcl.toml"]).status.code(), Some(1));

    let bad = write_config(dir.path(), "trials = 0\n");
    let o = kdcl(&["validate", "--config", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trials"));

    let unknown = write_config(dir.path(), "stepz = 3\n");
    assert_eq!(kdcl(&["validate", "--config", &unknown]).status.code(), Some(1));
}

#[test]
fn validate_reports_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = kdcl(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("n=4"), "{text}");
    assert!(text.contains("steps=3000"), "{text}");
    assert!(text.contains("filters=STD,FEJ,OC,KD,IDEAL"), "{text}");
}

#[test]
fn montecarlo_writes_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("mc");
    let o = kdcl(&["montecarlo", "--config", &cfg, "--out", out.to_str().unwrap(), "--trials", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [SUMMARY_FILE, MEAN_CURVES_FILE, TRIALS_FILE, MANIFEST_FILE] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary = std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap();
    assert_eq!(summary.lines().count(), 6);
    let trials = std::fs::read_to_string(out.join(TRIALS_FILE)).unwrap();
    assert_eq!(trials.lines().count(), 1 + 3 * 5);
    let mean = std::fs::read_to_string(out.join(MEAN_CURVES_FILE)).unwrap();
    assert_eq!(mean.lines().count(), 1 + 120 * 5);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 7);
    assert_eq!(manifest["config"]["trials"], 3);
}

#[test]
fn trial_curves_match_in_memory_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), SMALL);
    let out = dir.path().join("trial");
    let o = kdcl(&["trial", "--config", &cfg_path, "--index", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let config = kdcl_cli::config::load_config(Path::new(&cfg_path)).unwrap();
    let expected = run_trial(&config, 1).unwrap();
    let text = std::fs::read_to_string(out.join(CURVES_FILE)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CURVE_HEADER));
    let mut count = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let step: usize = cols[0].parse().unwrap();
        let kind: FilterKind = cols[2].parse().unwrap();
        let robot: usize = cols[3].parse().unwrap();
        let m = &expected.trace(kind).unwrap().steps[step - 1][robot];
        let want = m.error.iter().chain(m.sigma3.iter()).chain(std::iter::once(&m.nees));
        for (s, w) in cols[4..].iter().zip(want) {
            let v: f64 = s.parse().unwrap();
            assert!((v - w).abs() <= 5e-9 * w.abs(), "{line}: {v} vs {w}");
        }
        count += 1;
    }
    assert_eq!(count, 120 * 4 * 5);
}

#[test]
fn observability_subcommand_separates_std_from_kd() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("trial");
    let o = kdcl(&["trial", "--config", &cfg, "--index", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));

    let dims = |kind| {
        let log = out.join(log_file_name(kind));
        let o = kdcl(&["observability", "--log", log.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        stdout(&o)
            .lines()
            .skip_while(|l| *l != "start_step,nullspace_dim")
            .skip(1)
            .map_while(|l| l.split_once(',').and_then(|(_, d)| d.parse::<usize>().ok()))
            .collect::<Vec<_>>()
    };
    let std_dims = dims(FilterKind::Std);
    let kd_dims = dims(FilterKind::Kd);
    assert!(!std_dims.is_empty() && !kd_dims.is_empty());
    assert!(std_dims.contains(&3), "{std_dims:?}");
    assert!(kd_dims.iter().all(|&d| d == 4), "{kd_dims:?}");
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mhp2p::io::read_results;
use mhp2p::metrics::MetricsRecord;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mhp2p"));
    c.env_remove("MHP2P_SEED");
    c
}

fn manifests() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("manifests")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.conf");
    std::fs::write(&p, "network_size = 300\ncycles = 6\n").unwrap();
    p
}

#[test]
fn validate_accepts_defaults() {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.conf");
    let o = bin().args(["validate", "--config"]).arg(&p).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("beta = 0.25"));
}

#[test]
fn invalid_config_gives_one_line_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.conf");
    std::fs::write(&p, "beta = 0.6\n").unwrap();
    let o = bin().args(["validate", "--config"]).arg(&p).output().unwrap();
    assert!(!o.status.success());
    let err = stderr(&o);
    let first = err.lines().next().unwrap();
    assert!(first.starts_with("error: config: "), "{first}");
    assert!(first.contains("β ∈ [0,0.5)"));
    assert!(err.contains("Usage:"));
}

#[test]
fn missing_file_and_unknown_flag_fail() {
    let o = bin().args(["validate", "--config", "/no/such/file.conf"]).output().unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: io: "));
    let o = bin().args(["run", "--frobnicate"]).output().unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage:"));
    let o = bin().output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn run_is_deterministic_and_seed_flag_beats_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |out: &str, flag: Option<&str>, env: Option<&str>| {
        let mut c = bin();
        c.current_dir(dir.path())
            .args(["run", "--quiet", "--config"])
            .arg(&cfg)
            .args(["--out", out]);
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        if let Some(s) = env {
            c.env("MHP2P_SEED", s);
        }
        let o = c.output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        (stdout(&o), std::fs::read_to_string(dir.path().join(out)).unwrap())
    };
    let (text, a) = run("a.csv", Some("9"), None);
    let (_, b) = run("b.csv", Some("9"), None);
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 7);
    assert!(text.contains("seed 9"));
    assert!(text.contains("max_cluster_load_ratio"));
    let (text, _) = run("c.csv", None, Some("5"));
    assert!(text.contains("seed 5"));
    let (text, c) = run("d.csv", Some("9"), Some("5"));
    assert!(text.contains("seed 9"));
    assert_eq!(c, a);
    let mut made: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    made.sort();
    assert_eq!(made, ["a.csv", "b.csv", "c.csv", "d.csv", "small.conf"]);
}

#[test]
fn run_progress_lines_unless_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = bin()
        .current_dir(dir.path())
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stderr(&o).contains("cycle 6/6"));
    assert!(dir.path().join("run.csv").exists());
}

#[test]
fn cluster_load_manifest_separates_on_and_off() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["experiment", "--quiet", "--jobs", "4", "--manifest"])
        .arg(manifests().join("cluster-load.conf"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let t = read_results(&dir.path().join("cluster-load.csv")).unwrap();
    let f = MetricsRecord::field_index("max_cluster_load_ratio").unwrap();
    let last = |name: &str| {
        t.rows
            .iter()
            .filter(|r| r.experiment == name)
            .max_by_key(|r| r.cycle)
            .unwrap()
            .mean[f]
    };
    assert!(last("inter-on") < last("inter-off"));
    assert_eq!(t.delta_keys, ["inter_balancing"]);

    let s = bin().arg("summarize").arg(dir.path().join("cluster-load.csv")).output().unwrap();
    assert!(s.status.success());
    let text = stdout(&s);
    assert!(text.contains("inter-on (final 10 cycles)"));
    assert!(text.contains(" ± "));
}

#[test]
fn every_shipped_manifest_parses() {
    for e in std::fs::read_dir(manifests()).unwrap() {
        let p = e.unwrap().path();
        let m = mhp2p::io::load_manifest(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(!m.figure.is_empty());
        assert!(m.cells.len() >= 2);
    }
}

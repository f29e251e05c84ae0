use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("wavepack-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavepack")).args(args).env("WAVEPACK_OUT", out).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn without_timing(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn no_arguments_prints_usage() {
    let o = Command::new(env!("CARGO_BIN_EXE_wavepack")).output().unwrap();
    assert_ne!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stderr).to_string() + &stdout(&o);
    assert!(text.contains("Usage") && text.contains("converge"), "{text}");
}

#[test]
fn audit_exit_codes() {
    let dir = scratch("audit");
    let o = run(&dir, &["audit", "--system", "kg", "--k0", "1.732"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("NR1") && stdout(&o).contains("NR3"));
    assert!(dir.join("audit.json").exists());
    let o = run(&dir, &["audit", "--system", "transport", "--threads", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&dir, &["audit", "--system", "no-such-system"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn converge_is_reproducible_and_validates() {
    let dir = scratch("converge");
    let cfg = dir.join("sweep.toml");
    std::fs::write(&cfg, "system = \"example2-cubic\"\neps = [0.3, 0.2]\nt0 = 0.3\nslow_window = 20.0\nsamples = 4\n").unwrap();
    let c = cfg.to_str().unwrap();
    let (a, b) = (dir.join("a"), dir.join("b"));
    for d in [&a, &b] {
        let o = run(d, &["converge", "--config", c, "--eps", "0.2,0.15,0.1"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("slope"));
    }
    let ja = without_timing(&a.join("converge.json"));
    assert_eq!(ja, without_timing(&b.join("converge.json")));
    assert_eq!(ja["config"]["eps"].as_array().unwrap().len(), 3);
    assert_eq!(ja["config"]["system"], "example2-cubic");
    assert!(ja["version"].as_str().unwrap().starts_with("wavepack"));
    assert_eq!(std::fs::read_to_string(a.join("converge.dat")).unwrap().lines().count(), 3);

    let o = run(&dir, &["converge", "--eps", "0.1,0.2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("decreasing"));

    let sys = dir.join("resonant.toml");
    std::fs::write(&sys, "N = 2\nA = [1.0, 0.0, 0.0, 1.0]\nE = [0.0, 0.0, 0.0, 0.0]\ncubic = [[0, 0, 0, 0, 1.0]]\n").unwrap();
    let o = run(&dir, &["converge", "--system", sys.to_str().unwrap(), "--eps", "0.2,0.1"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn simulate_approximate_residual() {
    let dir = scratch("single");
    let common = ["--system", "kg", "--eps", "0.2", "--t0", "0.1", "--samples", "3"];
    let o = run(&dir, &[&["simulate"][..], &common].concat());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(dir.join("trajectory.dat")).unwrap().lines().count() >= 3);
    let o = run(&dir, &[&["approximate"][..], &common].concat());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("nu2"));
    assert!(dir.join("ansatz.json").exists());
    let o = run(&dir, &["residual", "--system", "kg", "--eps", "0.2,0.1", "--t0", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("slope"));
    assert!(dir.join("residual.json").exists());
    let o = run(&dir, &["simulate", "--level", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn interact_reports_shifts() {
    let dir = scratch("interact");
    let o = run(&dir, &["interact", "--eps", "0.1", "--out", dir.join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("predicted"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("x/interaction.json")).unwrap()).unwrap();
    assert_eq!(v["packets"].as_array().unwrap().len(), 2);
    let o = run(&dir, &["interact", "--branches", "0"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).unwrap();
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermoscheme"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn refined_length_is_not_liftable() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["thermo", "liftability", "--preset", "doubling-refined"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("verdict\tnot-liftable"));
    let json = fs::read_to_string(dir.path().join("liftability.json")).unwrap();
    assert!(json.contains("\"config_hash\"") && json.contains("tau_convention"));
}

#[test]
fn t_outside_range_exits_three_naming_p3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["thermo", "equilibrium", "--preset", "unimodal-a2eps", "--t", "2.5"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("(P3)") && err.contains("outside the admissible range"), "{err}");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["scheme", "build", "--preset", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "colour = 1\n").unwrap();
    let o = run(dir.path(), &["scheme", "build", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(dir.path(), &["scheme", "build", "--n-max", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn coboundary_clt_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["stats", "clt", "--observable", "coboundary", "--blocks", "200", "--block-len", "1024"],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("degenerate"));
}

#[test]
fn measure_file_round_trip_and_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["thermo", "equilibrium", "--preset", "doubling-plain"]);
    assert_eq!(o.status.code(), Some(0));
    let measure = dir.path().join("measure.csv");
    let first = fs::read_to_string(&measure).unwrap();
    assert!(first.starts_with("# P_G=") && first.contains("config_hash="));
    run(dir.path(), &["thermo", "equilibrium", "--preset", "doubling-plain"]);
    assert_eq!(fs::read_to_string(&measure).unwrap(), first);

    let other = tempfile::tempdir().unwrap();
    let o = run(other.path(), &["stats", "lyapunov", "--n", "5000", "--measure", measure.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("inside=true"));
}

#[test]
fn file_keys_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "preset = \"doubling-plain\"\nt = 0.0\n").unwrap();
    let o = run(dir.path(), &["thermo", "equilibrium", "--config", cfg.to_str().unwrap()]);
    let p0: f64 = stdout(&o).lines().next().unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!((p0 - 2f64.ln()).abs() < 1e-6);
    let o = run(dir.path(), &["thermo", "equilibrium", "--config", cfg.to_str().unwrap(), "--t", "1"]);
    let p1: f64 = stdout(&o).lines().next().unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!(p1.abs() < 1e-6);
}

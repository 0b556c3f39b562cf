use std::path::Path;
use std::process::{Command, Output};

fn lppm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lppm")).args(args).current_dir(dir).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_run_curves_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&lppm(
        &["synth", "--preset", "ring-route", "--users", "2", "--test-length", "60", "--rich-length", "300",
          "--save-model", "model.json", "--out", "store.json"],
        p,
    ));
    // The saved model reproduces the same store.
    ok(&lppm(
        &["synth", "--model", "model.json", "--users", "2", "--test-length", "60", "--rich-length", "300",
          "--out", "again.json"],
        p,
    ));
    assert_eq!(std::fs::read(p.join("store.json")).unwrap(), std::fs::read(p.join("again.json")).unwrap());

    std::fs::write(
        p.join("exp.toml"),
        "dataset = \"store.json\"\nmodel = \"markov-hw\"\nattack = \"markov\"\nparams = [0.0, 0.5, 1.0]\nrepetitions = 2\n",
    )
    .unwrap();
    ok(&lppm(&["run", "--config", "exp.toml", "--out", "rows.csv"], p));
    let rows = std::fs::read_to_string(p.join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 3 * 2);
    assert!(rows.lines().nth(1).unwrap().contains("lh-markov-hw"));

    // Overrides win over the file.
    let out = lppm(&["run", "--config", "exp.toml", "--params", "1.0", "--repetitions", "1"], p);
    ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1 + 2);

    ok(&lppm(&["curves", "--rows", "rows.csv", "--points", "5", "--out", "curve.csv"], p));
    let curve = std::fs::read_to_string(p.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 5);
}

#[test]
fn oracle_subcommand_reports_every_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = lppm(&["oracle", "--cases", "10", "--seed", "4"], dir.path());
    ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 3);
}

#[test]
fn bad_inputs_exit_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.toml"), "no_such_key = 1\n").unwrap();
    let out = lppm(&["run", "--config", "bad.toml"], p);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = lppm(&["run", "--dataset", "missing.json"], p);
    assert_eq!(out.status.code(), Some(2));

    let out = lppm(&["run", "--params", "1.5", "--dataset", "missing.json"], p);
    assert_eq!(out.status.code(), Some(2));
}

use std::path::Path;
use std::process::{Command, Output};

use loopcert::ir::BENCHMARK_SYS;

fn loopcert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopcert"))
        .args(args)
        .env_remove("LOOPCERT_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_variant(dir: &Path, name: &str, from: &str, to: &str) -> String {
    assert!(BENCHMARK_SYS.contains(from), "{from}");
    let path = dir.join(name);
    std::fs::write(&path, BENCHMARK_SYS.replace(from, to)).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn benchmark_commands_succeed() {
    for cmd in ["check-spec", "analyze", "equivalence", "search-lambda"] {
        let o = loopcert(&[cmd]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stdout(&o));
    }
    let o = loopcert(&["simulate", "--samples", "20", "--steps", "500"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("annotation violations: 0"));
}

#[test]
fn input_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_variant(
        dir.path(),
        "bad.sys",
        "2c: Cc = [564.48, 0];",
        "2c: Cc = [564.48, 0;",
    );
    let o = loopcert(&["analyze", "--spec", &bad]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.sys"));

    let nosector = dir.path().join("nosector.sys");
    std::fs::write(&nosector, BENCHMARK_SYS.split("[sector]").next().unwrap()).unwrap();
    let nosector = nosector.to_str().unwrap();
    let o = loopcert(&["analyze", "--spec", nosector]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("without a [sector]"));

    assert_eq!(
        code(&loopcert(&["check-spec", "--spec", "/does/not/exist.sys"])),
        2
    );
    assert_eq!(code(&loopcert(&["check-spec", "--contain-tol", "0"])), 2);
}

#[test]
fn property_failures_exit_with_one() {
    let o = loopcert(&["check-spec", "--lambda", "0"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL S-procedure"));

    // Halving P^-1 shrinks every set; the initial set no longer fits.
    let dir = tempfile::tempdir().unwrap();
    let shrunk = write_variant(
        dir.path(),
        "shrunk.sys",
        "P = [ 0.2205,  0.0188, -0.0750,  0.0177;\n      0.0188,  0.4736,  0.0535,  0.0015;\n     -0.0750,  0.0535,  0.1012, -0.0049;\n      0.0177,  0.0015, -0.0049,  0.0015]",
        "P = [ 0.4410,  0.0376, -0.1500,  0.0354;\n      0.0376,  0.9472,  0.1070,  0.0030;\n     -0.1500,  0.1070,  0.2024, -0.0098;\n      0.0354,  0.0030, -0.0098,  0.0030]",
    );
    let o = loopcert(&["analyze", "--spec", &shrunk]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.contains("FAIL initial embedding"), "{out}");
    assert!(out.contains("verdict: NOT-INDUCTIVE"), "{out}");

    let o = loopcert(&[
        "simulate",
        "--initial",
        "30,30",
        "--force-initial",
        "--steps",
        "50",
    ]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
}

#[test]
fn equivalence_agrees_on_both_sides() {
    // Far from the feasible multiplier both sides fail and still agree.
    let o = loopcert(&["equivalence", "--lambda", "6.14"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("(fails)"));

    let dir = tempfile::tempdir().unwrap();
    let blind = write_variant(
        dir.path(),
        "blind.sys",
        "2p: Cp = [1, 0];",
        "2p: Cp = [0, 0];",
    );
    let o = loopcert(&["equivalence", "--spec", &blind]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn one_step_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let o = loopcert(&[
        "simulate",
        "--initial",
        "1,-2",
        "--steps",
        "1",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sample,step,line,xc_1,xc_2,xp_1,xp_2,u,y,yc,V");
    assert!(lines[1].starts_with("0,0,init,"));
    let last = lines.last().unwrap();
    assert!(last.starts_with("0,1,9p,"), "{last}");
}

#[test]
fn runs_are_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, extra: &[&str], seed_env: Option<&str>| {
        let path = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_loopcert"));
        cmd.args([
            "simulate",
            "--samples",
            "6",
            "--steps",
            "100",
            "--trace-samples",
            "3",
            "--out",
        ])
        .arg(&path)
        .args(extra)
        .env_remove("LOOPCERT_SEED");
        if let Some(s) = seed_env {
            cmd.env("LOOPCERT_SEED", s);
        }
        let o = cmd.output().unwrap();
        assert_eq!(code(&o), 0);
        (o.stdout, std::fs::read(&path).unwrap())
    };
    let a = run("a.csv", &["--seed", "9"], None);
    let b = run("b.csv", &["--seed", "9"], None);
    let c = run("c.csv", &[], Some("9"));
    let d = run("d.csv", &["--seed", "10"], None);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_ne!(a.1, d.1);

    let j1 = dir.path().join("1.json");
    let j2 = dir.path().join("2.json");
    for j in [&j1, &j2] {
        assert_eq!(
            code(&loopcert(&["analyze", "--out", j.to_str().unwrap()])),
            0
        );
    }
    let report = std::fs::read(&j1).unwrap();
    assert_eq!(report, std::fs::read(&j2).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&report).unwrap();
    assert_eq!(v["verdict"], "INDUCTIVE");
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tsrelay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsrelay"))
        .args(args)
        .output()
        .expect("spawn tsrelay")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_then_solve_every_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("ch.txt");
    let out = tsrelay(&["gen", "--seed", "5", "--antennas", "3", "--out", path(&inst)]);
    assert!(out.status.success(), "{out:?}");
    assert!(fs::read_to_string(&inst).unwrap().starts_with("3 3 3 3\n# seed 5\n"));

    let mut rates = Vec::new();
    for scheme in ["fixed-source", "joint", "naf"] {
        let design = dir.path().join(format!("{scheme}.txt"));
        let out = tsrelay(&[
            "solve", "--instance", path(&inst), "--scheme", scheme, "--p0-dbm", "10",
            "--design-out", path(&design),
        ]);
        assert!(out.status.success(), "{out:?}");
        let text = stdout(&out);
        for key in ["rate_bits", "epsilon", "iterations"] {
            assert!(text.contains(key), "{text}");
        }
        let rate: f64 = text
            .lines()
            .find_map(|l| l.strip_prefix("rate_bits"))
            .unwrap()
            .trim()
            .parse()
            .unwrap();
        rates.push(rate);
        let written = fs::read_to_string(&design).unwrap();
        assert!(written.starts_with(scheme), "{written}");
        assert!(written.contains("\nQ_TILDE\n"));
    }
    assert!(rates[1] >= rates[0] - 1e-9 && rates[0] >= rates[2] - 1e-9, "{rates:?}");
}

#[test]
fn gen_is_deterministic() {
    let a = tsrelay(&["gen", "--seed", "11", "--m", "2", "--l", "3", "--n", "2", "--d", "1"]);
    let b = tsrelay(&["gen", "--seed", "11", "--m", "2", "--l", "3", "--n", "2", "--d", "1"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("2 3 2 1\n"));
}

#[test]
fn sweep_writes_byte_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg");
    fs::write(&cfg, "p0_dbm = 0, 20\nantennas = 2, 3\ntrials = 4\nschemes = fixed,joint,naf\n").unwrap();
    let mut csvs = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let out_path = dir.path().join(format!("r{i}.csv"));
        let summary = dir.path().join(format!("s{i}.csv"));
        let out = tsrelay(&[
            "sweep", "--config", path(&cfg), "--out", path(&out_path), "--seed", "42",
            "--threads", threads, "--summary", path(&summary),
        ]);
        assert!(out.status.success(), "{out:?}");
        csvs.push(fs::read(&out_path).unwrap());
        assert!(fs::read_to_string(&summary).unwrap().starts_with("scheme,p0_dbm"));
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("scheme,trial,seed,p0_dbm,n_antennas,rate_bits,epsilon,iterations,converged,slack")
    );
    assert_eq!(lines.count(), 2 * 2 * 4 * 3);
}

#[test]
fn verify_passes() {
    let out = tsrelay(&["verify", "--trials", "9", "--seed", "7"]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(tsrelay(&["solve"]).status.code(), Some(2));
    assert_eq!(tsrelay(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tsrelay(&["solve", "--instance", "x", "--scheme", "bogus"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg");
    fs::write(&cfg, "antennas = 2\nwhatever = 3\n").unwrap();
    let out = tsrelay(&["sweep", "--config", path(&cfg), "--out", path(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let inst = dir.path().join("bad.txt");
    fs::write(&inst, "1 1 1 1\nH1\n").unwrap();
    assert_eq!(tsrelay(&["solve", "--instance", path(&inst)]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    assert_eq!(tsrelay(&["solve", "--instance", path(&missing)]).status.code(), Some(1));

    let inst = dir.path().join("ch.txt");
    assert!(tsrelay(&["gen", "--antennas", "2", "--out", path(&inst)]).status.success());
    let out = tsrelay(&["solve", "--instance", path(&inst), "--eta", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(tsrelay(&["verify", "--trials", "0"]).status.code(), Some(1));
}

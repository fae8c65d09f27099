//! End-to-end runs of the `qhj` binary.

use std::process::{Command, Output};

use qhj::io::TrajectoryFile;

fn qhj(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qhj"));
    c.args(args).env_remove("QHJ_UNITS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn trap_prints_both_unit_systems() {
    let o = qhj(&["trap", "--state", "2,1,0"], &[]);
    assert!(o.status.success());
    let s = text(&o.stdout);
    assert!(s.contains("r1 = 1.17157287525381 a0"), "{s}");
    assert!(s.contains("r2 = 6.82842712474619 a0"), "{s}");
}

#[test]
fn config_errors_exit_two_with_one_line() {
    let o = qhj(
        &["orbit", "--state", "1,0,0", "--hidden", "0,0,1,0,1,0"],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let e = text(&o.stderr);
    assert_eq!(e.lines().count(), 1, "{e}");
    assert!(e.starts_with("error: kind=config message=\""), "{e}");
}

#[test]
fn purely_quantum_refusal_exits_one() {
    let o = qhj(&["classical", "--state", "2,1,0"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        text(&o.stderr).starts_with("error: kind=purely-quantum"),
        "{}",
        text(&o.stderr)
    );
}

#[test]
fn orbit_file_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.csv");
    let o = qhj(
        &[
            "orbit",
            "--state",
            "2,1,1",
            "--hidden",
            "1,0,1,0,1,0",
            "--t-end",
            "20",
            "-o",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    let f: TrajectoryFile = std::fs::read_to_string(&out).unwrap().parse().unwrap();
    let t = f.column("t").unwrap();
    assert_eq!(t[0], 0.0);
    assert_eq!(*t.last().unwrap(), 20.0);
    assert_eq!(
        f.meta("units").map(|u| u.starts_with("internal")),
        Some(true)
    );
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# override\nstate = (1,0,0)\n").unwrap();
    let o = qhj(
        &[
            "trap",
            "--state",
            "2,1,0",
            "--config",
            cfg.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success());
    assert!(text(&o.stdout).contains("state (1,0,0)"));
}

#[test]
fn units_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("si.csv");
    let o = qhj(
        &[
            "orbit",
            "--state",
            "1,0,0",
            "--hidden",
            "1,0,1,0,1,0",
            "--t-end",
            "1e-16",
            "-o",
            out.to_str().unwrap(),
        ],
        &[("QHJ_UNITS", "si")],
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    let f: TrajectoryFile = std::fs::read_to_string(&out).unwrap().parse().unwrap();
    assert_eq!(f.meta("units").map(|u| u.starts_with("si")), Some(true));
    // the default start is 1 a0, written back in metres
    let r0 = f.column("r").unwrap()[0];
    assert!((r0 - 0.52917e-10).abs() < 1e-22, "{r0}");

    let bad = qhj(&["trap", "--state", "1,0,0"], &[("QHJ_UNITS", "furlongs")]);
    assert_eq!(bad.status.code(), Some(2));
}

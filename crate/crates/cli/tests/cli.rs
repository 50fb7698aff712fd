//! End-to-end command-line tests: artifacts written by one subcommand are
//! re-readable by the next, and exit codes follow the documented contract.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relwidth"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("relwidth-cli-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn gen_is_deterministic_and_solvable_end_to_end() {
    let a = tmp("gen_a.json");
    let b = tmp("gen_b.json");
    for path in [&a, &b] {
        let out = run(&[
            "gen",
            "--atlas",
            "equality",
            "--vars",
            "6",
            "--constraints",
            "5",
            "--seed",
            "11",
            "--relations",
            "eq,neq",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{out:?}");
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let witness = tmp("witness.json");
    let solve = run(&[
        "solve",
        "--atlas",
        "equality",
        "--instance",
        a.to_str().unwrap(),
        "--mode",
        "ts",
        "--emit-witness",
        witness.to_str().unwrap(),
    ]);
    let solve_code = code(&solve);
    assert!(solve_code == 0 || solve_code == 10, "{solve:?}");
    if solve_code == 0 {
        let verify = run(&[
            "verify-witness",
            "--atlas",
            "equality",
            "--instance",
            a.to_str().unwrap(),
            "--witness",
            witness.to_str().unwrap(),
        ]);
        assert_eq!(code(&verify), 0, "{verify:?}");
    }
}

#[test]
fn minimize_reports_triviality_through_the_exit_code() {
    // the four-ary clash: non-trivial at (3,6), trivial at (4,6)
    let inst = tmp("fourary.json");
    fs::write(
        &inst,
        r#"{
  "format": "relwidth.instance/v1",
  "atlas": "random_graph_fourary",
  "variables": ["x1", "x2", "x3", "x4"],
  "constraints": [
    { "relation": "Req", "args": ["x1", "x2", "x3", "x4"] },
    { "relation": "Rneq", "args": ["x1", "x2", "x3", "x4"] }
  ]
}"#,
    )
    .unwrap();
    let m36 = tmp("fourary_36.json");
    let out = run(&[
        "minimize",
        "--atlas",
        "random-graph-fourary",
        "--instance",
        inst.to_str().unwrap(),
        "-k",
        "3",
        "-l",
        "6",
        "--out",
        m36.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    // the minimized artifact is re-readable and passes check-minimal
    let check = run(&[
        "check-minimal",
        "--atlas",
        "random-graph-fourary",
        "--instance",
        m36.to_str().unwrap(),
        "-k",
        "3",
        "-l",
        "6",
    ]);
    assert_eq!(code(&check), 0, "{check:?}");

    let out = run(&[
        "minimize",
        "--atlas",
        "random-graph-fourary",
        "--instance",
        inst.to_str().unwrap(),
        "-k",
        "4",
        "-l",
        "6",
        "--out",
        tmp("fourary_46.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 10, "{out:?}");

    // at the totally-symmetric levels the clash is invisible to
    // minimization and the finite search exhausts: exit 11
    let out = run(&[
        "solve",
        "--atlas",
        "random-graph-fourary",
        "--instance",
        inst.to_str().unwrap(),
        "--mode",
        "ts",
    ]);
    assert_eq!(code(&out), 11, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("UNKNOWN"));
    // the width levels detect it: exit 10
    let out = run(&[
        "solve",
        "--atlas",
        "random-graph-fourary",
        "--instance",
        inst.to_str().unwrap(),
        "--mode",
        "wnu",
    ]);
    assert_eq!(code(&out), 10, "{out:?}");

    // capability bound: exit 2
    let out = run(&[
        "minimize",
        "--atlas",
        "random-graph-fourary",
        "--instance",
        inst.to_str().unwrap(),
        "-k",
        "4",
        "-l",
        "7",
    ]);
    assert_eq!(code(&out), 2, "{out:?}");
}

#[test]
fn reduce_emits_a_readable_finite_instance() {
    let inst = tmp("chain.json");
    fs::write(
        &inst,
        r#"{
  "format": "relwidth.instance/v1",
  "atlas": "equality",
  "variables": ["x", "y", "z"],
  "constraints": [
    { "relation": "eq", "args": ["x", "y"] },
    { "relation": "neq", "args": ["y", "z"] }
  ]
}"#,
    )
    .unwrap();
    let orbit = tmp("orbit.json");
    let out = run(&[
        "reduce",
        "--atlas",
        "equality",
        "--instance",
        inst.to_str().unwrap(),
        "--out",
        orbit.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let text = fs::read_to_string(&orbit).unwrap();
    assert!(text.contains("relwidth.finite/v1"));
    assert!(text.contains("eq"));
}

#[test]
fn atlas_export_round_trips_through_files() {
    let path = tmp("atlas.json");
    let out = run(&[
        "export-atlas",
        "--atlas",
        "henson3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    // the exported file is usable as --atlas
    let gen = tmp("henson_inst.json");
    let out = run(&[
        "gen",
        "--atlas",
        path.to_str().unwrap(),
        "--vars",
        "4",
        "--constraints",
        "3",
        "--seed",
        "3",
        "--out",
        gen.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let out = run(&[
        "solve",
        "--atlas",
        path.to_str().unwrap(),
        "--instance",
        gen.to_str().unwrap(),
    ]);
    assert!(code(&out) == 0 || code(&out) == 10, "{out:?}");
}

#[test]
fn mmsnp_flows_and_exit_codes() {
    let obs = tmp("twocol.obs");
    fs::write(
        &obs,
        "colors R, B;\nrel E/2;\nforbid {v, w : E(v,w), R(v), R(w)};\nforbid {v, w : E(v,w), B(v), B(w)};\n",
    )
    .unwrap();
    // refusal without the assertion flag
    let out = run(&["analyze-mmsnp", "--obstructions", obs.to_str().unwrap()]);
    assert_eq!(code(&out), 1, "{out:?}");
    // verdict with the flag
    let report = tmp("verdict.json");
    let out = run(&[
        "analyze-mmsnp",
        "--obstructions",
        obs.to_str().unwrap(),
        "--assert-normal-form",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("datalog"));
    assert!(fs::read_to_string(&report).unwrap().contains("certificate"));

    // a parse error exits 3 with a located message
    let bad = tmp("bad.obs");
    fs::write(&bad, "colors R;\nrel E/2;\nforbid {v w : E(v,w)};\n").unwrap();
    let out = run(&[
        "analyze-mmsnp",
        "--obstructions",
        bad.to_str().unwrap(),
        "--assert-normal-form",
    ]);
    assert_eq!(code(&out), 3, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("3:"));

    // forbidden-pattern solving: odd cycle not two-colorable
    let c5 = tmp("c5.json");
    let mut vertices = Vec::new();
    let mut atoms = Vec::new();
    for i in 0..5 {
        vertices.push(format!("\"u{i}\""));
        let j = (i + 1) % 5;
        atoms.push(format!("{{ \"rel\": \"E\", \"args\": [\"u{i}\", \"u{j}\"] }}"));
        atoms.push(format!("{{ \"rel\": \"E\", \"args\": [\"u{j}\", \"u{i}\"] }}"));
    }
    fs::write(
        &c5,
        format!(
            "{{ \"format\": \"relwidth.tau/v1\", \"vertices\": [{}], \"atoms\": [{}] }}",
            vertices.join(", "),
            atoms.join(", ")
        ),
    )
    .unwrap();
    let out = run(&[
        "fpp-solve",
        "--obstructions",
        obs.to_str().unwrap(),
        "--input",
        c5.to_str().unwrap(),
        "--assert-normal-form",
    ]);
    assert_eq!(code(&out), 10, "{out:?}");
}

#[test]
fn analyze_structure_and_loop_harness() {
    let out = run(&[
        "analyze-structure",
        "--structure",
        "builtin:z2",
        "--bounded-width",
        "--ts",
        "--core",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("no linked pair"));

    let out = run(&[
        "loop-harness",
        "--structure",
        "builtin:k2",
        "--trials",
        "50",
        "--seed",
        "5",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 counterexamples"));
}

#[test]
fn repro_regenerates_the_table_byte_identically() {
    let first = tmp("table_a.txt");
    let second = tmp("table_b.txt");
    for path in [&first, &second] {
        let out = run(&["repro", "--out", path.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{out:?}");
    }
    let a = fs::read(&first).unwrap();
    assert_eq!(a, fs::read(&second).unwrap());
    // and it matches the checked-in golden copy
    let golden = include_str!("../../core/fixtures/acceptance_table.txt");
    assert_eq!(String::from_utf8_lossy(&a), golden);
}

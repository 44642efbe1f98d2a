// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn oblivion(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oblivion"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_happy_mssp_writes_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = oblivion(
        &[
            "--out",
            out.to_str().unwrap(),
            "run",
            &scenario("mssp_happy.json"),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let transcript = fs::read_to_string(out.join("transcript.jsonl")).unwrap();
    assert!(transcript.lines().count() > 10);
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn run_forgery_passes_by_failing() {
    let dir = tempfile::tempdir().unwrap();
    let o = oblivion(
        &["--out", "x", "run", &scenario("attack_forged_request.json")],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("SignatureRejected (expected)"));
}

#[test]
fn default_out_dir_is_named_after_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = oblivion(
        &["--quiet", "run", &scenario("attack_stolen_eval_sk.json")],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
    assert!(dir
        .path()
        .join("out/attack_stolen_eval_sk/outputs.json")
        .exists());
}

fn keypair(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let base = dir.join(name);
    let o = oblivion(
        &[
            "--backend",
            "toy",
            "--seed",
            seed,
            "--out",
            base.to_str().unwrap(),
            "keygen",
            "eval",
        ],
        dir,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    base
}

#[test]
fn encrypt_decrypt_round_trip_and_wrong_key() {
    let dir = tempfile::tempdir().unwrap();
    let a = keypair(dir.path(), "a", "1");
    assert!(a.with_extension("sk").exists());
    let b = keypair(dir.path(), "b", "2");
    let ct = dir.path().join("ct.txt");
    let o = oblivion(
        &[
            "--seed",
            "9",
            "--out",
            ct.to_str().unwrap(),
            "encrypt",
            "--key",
            "a.pk",
            "--value",
            "11",
            "--width",
            "4",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = oblivion(&["decrypt", "--key", "a.sk", "ct.txt"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "bits 1101\nvalue 11\n");
    let o = oblivion(&["decrypt", "--key", "b.sk", "ct.txt"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("KeyMismatch"), "{}", stderr(&o));
    assert!(b.with_extension("pk").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(oblivion(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(
        oblivion(
            &[
                "--backend",
                "clear",
                "--params",
                "4096,16,32",
                "keygen",
                "eval"
            ],
            dir.path()
        )
        .status
        .code(),
        Some(2)
    );
    let o = oblivion(&["--params", "8,16,32", "keygen", "eval"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

fn write_scenario(dir: &Path, script: &str) -> String {
    let text = fs::read_to_string(scenario("mssp_happy.json")).unwrap();
    let mut spec: serde_json::Value = serde_json::from_str(&text).unwrap();
    spec["script"] = serde_json::from_str(script).unwrap();
    let path = dir.join("s.json");
    fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn scenario_errors_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(
        dir.path(),
        r#"[{"action":"run","user":"zed","func":0,"data":"a2"}]"#,
    );
    let o = oblivion(&["--out", "o", "run", &s], dir.path());
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("action 0"), "{}", stderr(&o));
}

#[test]
fn unexpected_rejection_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(
        dir.path(),
        r#"[{"action":"run","user":"bob","func":9,"data":"a2"}]"#,
    );
    let o = oblivion(&["--out", "o", "run", &s], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("FAIL [0]"));
}

#[test]
fn circuit_check_reports_depth_against_backend() {
    let dir = tempfile::tempdir().unwrap();
    let o = oblivion(
        &["--backend", "toy", "circuit", "check", "adder:2"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("inputs 4 outputs 3"));
    let o = oblivion(
        &["--backend", "toy", "circuit", "check", "and_tree:512"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(
        oblivion(&["circuit", "check", "and_tree:512"], dir.path())
            .status
            .code(),
        Some(0)
    );

    let netlist = dir.path().join("eq.net");
    let o = oblivion(
        &[
            "--out",
            netlist.to_str().unwrap(),
            "circuit",
            "check",
            "equality:3",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let o = oblivion(&["circuit", "check", netlist.to_str().unwrap()], dir.path());
    assert!(stdout(&o).contains("inputs 6 outputs 1"), "{}", stdout(&o));
}

#[test]
fn policy_compile_and_encrypt() {
    let dir = tempfile::tempdir().unwrap();
    let prb = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/policies/partners.prb");
    let prb = prb.to_str().unwrap();
    let o = oblivion(&["policy", "compile", prb], dir.path());
    assert_eq!(
        o.status.code(),
        Some(2),
        "unresolved @refs are a usage error"
    );
    for (who, seed) in [("alice", "3"), ("bob", "4")] {
        let o = oblivion(
            &["--seed", seed, "--out", who, "keygen", "auth", "--id", who],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0));
    }
    let refs = ["--ref", "alice=alice.pub", "--ref", "bob=bob.pub"];
    let o = oblivion(
        &[&["--out", "can.net", "policy", "compile", prb][..], &refs].concat(),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("2 rules"));
    let compiled = fs::read_to_string(dir.path().join("can.net")).unwrap();
    let o = oblivion(&["circuit", "check", "can.net"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(!compiled.is_empty());

    keypair(dir.path(), "ev", "4");
    let o = oblivion(
        &[
            &[
                "--out", "prb.enc", "policy", "encrypt", prb, "--key", "ev.pk",
            ][..],
            &refs,
        ]
        .concat(),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(fs::metadata(dir.path().join("prb.enc")).unwrap().len() > 1000);
}

// SPDX-License-Identifier: Apache-2.0

//! Scenarios loaded from disk, with netlist and policy files beside them.

use std::fs;

use oblivion::circuit::{self, to_bits};
use oblivion::simnet::{run_scenario_file, Entry, RunOptions, Transcript};

const PRB: &str = "\
schema:
  subject.id 8 subject
  resource.id 2 resource
funcs: width=2
identity: subject.id
rule:
  predicate subject.id = @bob
  predicate resource.id = 1
  permit func 3
";

fn scenario(backend: &str) -> String {
    format!(
        r#"{{
  "name": "files",
  "protocol": "mcsp",
  "backend": "{backend}",
  "principals": [
    {{"id": "alice", "role": "administrator", "auth_seed": 5}},
    {{"id": "bob", "auth_seed": 6}}
  ],
  "keys": {{"eval_seed": 7}},
  "functions": [{{"id": 3, "file": "circuits/mux2.net"}}],
  "data": [{{"name": "d", "owner": "alice", "value": 6, "width": 4,
            "attributes": [{{"name": "resource.id", "category": "resource", "value": 1, "width": 2}}]}}],
  "prb": {{"file": "policy.prb"}},
  "script": [
    {{"action": "upload_prb"}},
    {{"action": "run", "user": "bob", "func": 3, "data": "d", "input": 1, "input_width": 1}},
    {{"action": "run", "user": "bob", "func": 3, "data": "d", "input": 0, "input_width": 1}},
    {{"action": "run", "user": "alice", "func": 3, "data": "d", "input": 1, "input_width": 1, "expect": "denied"}}
  ]
}}"#
    )
}

fn setup(backend: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("circuits")).unwrap();
    fs::write(
        dir.path().join("circuits/mux2.net"),
        circuit::mux(2).to_netlist(),
    )
    .unwrap();
    fs::write(dir.path().join("policy.prb"), PRB).unwrap();
    fs::write(dir.path().join("s.json"), scenario(backend)).unwrap();
    dir
}

#[test]
fn netlist_and_policy_files_resolve_relative_to_scenario() {
    for backend in ["clear", "toy"] {
        let dir = setup(backend);
        let report = run_scenario_file(&dir.path().join("s.json"), &RunOptions::default()).unwrap();
        assert!(report.passed(), "{backend}: {:?}", report.summary_lines());
        // mux(2) over s ++ a ++ b with data 6 = a:2, b:1
        let bits = |v: u64| {
            Some(
                to_bits(v, 2)
                    .iter()
                    .map(|&b| if b { '1' } else { '0' })
                    .collect::<String>(),
            )
        };
        assert_eq!(report.results[1].output, bits(2));
        assert_eq!(report.results[2].output, bits(1));
    }
}

#[test]
fn transcript_round_trips_and_marks_phases() {
    let dir = setup("clear");
    let report = run_scenario_file(&dir.path().join("s.json"), &RunOptions::default()).unwrap();
    let text = report.transcript.to_jsonl();
    let back = Transcript::from_jsonl(&text).unwrap();
    assert_eq!(back, report.transcript);
    let results = back
        .entries
        .iter()
        .filter(|e| matches!(e, Entry::Result { .. }))
        .count();
    let states = back
        .entries
        .iter()
        .filter(|e| matches!(e, Entry::State { .. }))
        .count();
    assert_eq!((results, states), (4, 4));
    assert!(back
        .phase("setup")
        .all(|e| !matches!(e, Entry::Result { .. })));
}

#[test]
fn missing_file_is_an_error() {
    let dir = setup("clear");
    fs::remove_file(dir.path().join("policy.prb")).unwrap();
    let err = run_scenario_file(&dir.path().join("s.json"), &RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("policy.prb"), "{err}");
}

// SPDX-License-Identifier: Apache-2.0

//! Deterministic in-memory network, transcript recorder and adversary
//! harness.
//!
//! The bus is FIFO and reliable. Everything that crosses it, and every
//! protocol step the agents report, becomes one transcript entry with a
//! strictly increasing sequence number. Running the same scenario with the
//! same seeds yields byte-identical JSON Lines.

mod scenario;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::authsig::SignedMessage;
use crate::protocol::{unframe, Channel, FieldClass, ServerView, PROTOCOL_VERSION};

pub use scenario::{
    run_scenario, run_scenario_file, Action, AttrSpec, DataSpec, FunctionSpec, PrbSpec,
    PrincipalSpec, RunOptions, ScenarioError, ScenarioReport, ScenarioSpec, StepResult,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryStatus {
    Delivered,
    Dropped,
    Tampered,
    Injected,
    Replayed,
}

/// What Mallory can do in a scenario. Fixed for the whole run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    InjectRequest,
    Replay,
    TamperPayload,
    StealAuthSk(String),
    StealEvalSk,
    ReadServerState,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    #[serde(default)]
    pub capabilities: BTreeSet<Capability>,
}

impl AdversaryConfig {
    pub fn has(&self, c: &Capability) -> bool {
        self.capabilities.contains(c)
    }

    pub fn steals_auth_of(&self, principal: &str) -> bool {
        self.capabilities
            .contains(&Capability::StealAuthSk(principal.to_string()))
    }
}

/// One transcript line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Entry {
    Envelope {
        seq: u64,
        phase: String,
        sender: String,
        receiver: String,
        kind: String,
        signer: Option<String>,
        bytes: usize,
        digest: String,
        status: DeliveryStatus,
    },
    Step {
        seq: u64,
        phase: String,
        actor: String,
        step: String,
        detail: String,
    },
    State {
        seq: u64,
        phase: String,
        action: usize,
        server_digest: String,
    },
    Result {
        seq: u64,
        phase: String,
        action: usize,
        name: String,
        outcome: String,
        expected: String,
        pass: bool,
    },
}

impl Entry {
    pub fn seq(&self) -> u64 {
        match self {
            Entry::Envelope { seq, .. }
            | Entry::Step { seq, .. }
            | Entry::State { seq, .. }
            | Entry::Result { seq, .. } => *seq,
        }
    }

    pub fn phase(&self) -> &str {
        match self {
            Entry::Envelope { phase, .. }
            | Entry::Step { phase, .. }
            | Entry::State { phase, .. }
            | Entry::Result { phase, .. } => phase,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<Entry>,
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("transcript entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }

    pub fn phase(&self, phase: &str) -> impl Iterator<Item = &Entry> {
        let phase = phase.to_string();
        self.entries.iter().filter(move |e| e.phase() == phase)
    }

    /// Names of the protocol steps, in order.
    pub fn steps(&self) -> Vec<(&str, &str)> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                Entry::Step { actor, step, .. } => Some((actor.as_str(), step.as_str())),
                _ => None,
            })
            .collect()
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The scenario's network. Owned by the driver; agents see it as a
/// [`Channel`].
#[derive(Debug, Default)]
pub struct Bus {
    transcript: Transcript,
    seq: u64,
    phase: String,
    captured: Vec<(u64, String, String, Vec<u8>)>,
    tamper_from: Option<String>,
}

impl Bus {
    pub fn new() -> Self {
        Self {
            phase: "setup".into(),
            ..Self::default()
        }
    }

    pub fn set_phase(&mut self, phase: &str) {
        self.phase = phase.to_string();
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Cancels a tamper that never fired.
    pub fn disarm(&mut self) {
        self.tamper_from = None;
    }

    /// Arms a one-shot tamper of the next frame sent by `sender`.
    pub fn tamper_next_from(&mut self, sender: &str) {
        self.tamper_from = Some(sender.to_string());
    }

    /// Bytes of the envelope with sequence number `seq`, if one was captured.
    pub fn captured(&self, seq: u64) -> Option<(&str, &str, &[u8])> {
        self.captured
            .iter()
            .find(|c| c.0 == seq)
            .map(|(_, f, t, b)| (f.as_str(), t.as_str(), b.as_slice()))
    }

    /// Records an envelope and returns what the receiver gets.
    pub fn deliver(
        &mut self,
        from: &str,
        to: &str,
        bytes: Vec<u8>,
        status: DeliveryStatus,
    ) -> Vec<u8> {
        let seq = self.next_seq();
        let parsed = unframe(&bytes).ok();
        let entry = Entry::Envelope {
            seq,
            phase: self.phase.clone(),
            sender: from.to_string(),
            receiver: to.to_string(),
            kind: parsed.as_ref().map_or("Unknown", |f| f.kind()).to_string(),
            signer: parsed.as_ref().and_then(|f| f.signer().map(str::to_string)),
            bytes: bytes.len(),
            digest: digest_hex(&bytes),
            status,
        };
        self.transcript.entries.push(entry);
        self.captured
            .push((seq, from.to_string(), to.to_string(), bytes.clone()));
        bytes
    }

    pub fn record_state(&mut self, action: usize, view: &ServerView) {
        let seq = self.next_seq();
        let digest = digest_hex(view.dump_lines().join("\n").as_bytes());
        self.transcript.entries.push(Entry::State {
            seq,
            phase: self.phase.clone(),
            action,
            server_digest: digest,
        });
    }

    pub fn record_result(&mut self, result: &StepResult) {
        let seq = self.next_seq();
        self.transcript.entries.push(Entry::Result {
            seq,
            phase: self.phase.clone(),
            action: result.index,
            name: result.name.clone(),
            outcome: result.outcome.clone(),
            expected: result.expected.clone(),
            pass: result.pass,
        });
    }
}

/// Flips the last payload byte, keeping the framing parseable so the
/// receiver reaches its signature check.
fn tamper(bytes: &[u8]) -> Vec<u8> {
    match unframe(bytes) {
        Ok(frame) => match frame.signed {
            Some(mut signed) => {
                if let Some(b) = signed.payload.last_mut() {
                    *b ^= 1;
                }
                let mut out = vec![PROTOCOL_VERSION];
                out.extend(SignedMessage::encode(&signed));
                out
            }
            None => {
                let mut out = bytes.to_vec();
                if let Some(b) = out.last_mut() {
                    *b ^= 1;
                }
                out
            }
        },
        Err(_) => bytes.to_vec(),
    }
}

impl Channel for Bus {
    fn transmit(&mut self, from: &str, to: &str, bytes: Vec<u8>) -> Vec<u8> {
        if self.tamper_from.as_deref() == Some(from) {
            self.tamper_from = None;
            return self.deliver(from, to, tamper(&bytes), DeliveryStatus::Tampered);
        }
        self.deliver(from, to, bytes, DeliveryStatus::Delivered)
    }

    fn record_step(&mut self, actor: &str, step: &str, detail: &str) {
        let seq = self.next_seq();
        self.transcript.entries.push(Entry::Step {
            seq,
            phase: self.phase.clone(),
            actor: actor.to_string(),
            step: step.to_string(),
            detail: detail.to_string(),
        });
    }
}

/// What Mallory learns by reading the server's memory.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Count of visible fields per class, every class listed.
    pub classes: Vec<(String, usize)>,
    pub lines: Vec<String>,
}

impl LeakageReport {
    /// Empty unless the adversary may read server state.
    pub fn scan(view: &ServerView, config: &AdversaryConfig) -> Self {
        if !config.has(&Capability::ReadServerState) {
            return Self::default();
        }
        Self {
            classes: FieldClass::ALL
                .iter()
                .map(|c| (c.to_string(), view.count(*c)))
                .collect(),
            lines: view.dump_lines(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn count(&self, class: FieldClass) -> usize {
        let name = class.to_string();
        self.classes
            .iter()
            .find(|(c, _)| *c == name)
            .map_or(0, |(_, n)| *n)
    }

    /// True when nothing beyond ciphertexts, public keys, circuits and
    /// schema metadata is visible.
    pub fn ciphertext_only(&self) -> bool {
        FieldClass::ALL
            .iter()
            .filter(|c| c.is_secret())
            .all(|c| self.count(*c) == 0)
    }
}

impl fmt::Display for LeakageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("(no access to server state)");
        }
        let parts: Vec<String> = self
            .classes
            .iter()
            .map(|(c, n)| format!("{c}={n}"))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Agents and message flows for the three protocols, plus key lifecycle.
//!
//! * Basic: one user outsources computation over data encrypted under the
//!   user's own key pair. Unsigned by default; a flag turns on signatures.
//! * MSSP: partners share one evaluation key pair and sign every request
//!   with a personal signing key; the server verifies before evaluating.
//! * MCSP: MSSP plus an encrypted policy rule base. The server computes the
//!   access decision homomorphically and ANDs it into every output bit, so
//!   an unauthorized caller decrypts an all-zero result with a leading 0.
//!
//! Transport is abstract ([`Channel`]); the flows only decide what is sent
//! and what each side checks. Every check is recorded as a named step, so a
//! transcript shows `verifySig` strictly before `verifyAccess` and
//! `evaluate`.

mod agents;
mod flows;
mod lifecycle;
mod message;

use thiserror::Error;

use crate::abac::AbacError;
use crate::cloudserver::{FuncId, Handle, ServerError};
use crate::fhe::FheError;

pub use agents::{FieldClass, Role, ServerAgent, ServerMode, ServerView, UserAgent, VisibleField};
pub use flows::{
    basic_run, exchange, mcsp_request, mcsp_run, mssp_run, op_request, upload_data, McspOutcome,
};
pub use lifecycle::{reencrypt_data, revoke_user, rotate_auth_key, upload_prb};
pub use message::{
    frame, kind_name, unframe, BlobRecord, Frame, Message, RotationStrategy, PROTOCOL_VERSION,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("signature from `{0}` rejected")]
    SignatureRejected(String),
    #[error("server response signature is invalid")]
    ServerSignatureInvalid,
    #[error("`{0}` is not the administrator")]
    NotAdministrator(String),
    #[error("unknown function id {0}")]
    UnknownFunc(FuncId),
    #[error("unknown resource handle {0}")]
    UnknownHandle(Handle),
    #[error("unknown principal `{0}`")]
    UnknownPrincipal(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("expected {expected}, got {got}")]
    UnexpectedMessage {
        expected: &'static str,
        got: &'static str,
    },
    #[error("storage error: {0}")]
    Storage(String),
    #[error(transparent)]
    Fhe(#[from] FheError),
    #[error(transparent)]
    Abac(AbacError),
}

impl ProtocolError {
    /// Stable outcome name, as used by scenario expectations.
    pub fn outcome(&self) -> &'static str {
        match self {
            ProtocolError::SignatureRejected(_) => "SignatureRejected",
            ProtocolError::ServerSignatureInvalid => "ServerSignatureInvalid",
            ProtocolError::NotAdministrator(_) => "NotAdministrator",
            ProtocolError::UnknownFunc(_) => "UnknownFunc",
            ProtocolError::UnknownHandle(_) => "UnknownHandle",
            ProtocolError::UnknownPrincipal(_) => "UnknownPrincipal",
            ProtocolError::Shape(_) | ProtocolError::Abac(AbacError::Shape(_)) => "ShapeError",
            ProtocolError::Malformed(_) => "Malformed",
            ProtocolError::UnexpectedMessage { .. } => "UnexpectedMessage",
            ProtocolError::Storage(_) => "StorageError",
            ProtocolError::Fhe(FheError::DepthExceeded { .. }) => "DepthExceeded",
            ProtocolError::Fhe(FheError::KeyMismatch { .. }) => "KeyMismatch",
            ProtocolError::Fhe(_) => "CryptoError",
            ProtocolError::Abac(AbacError::Fhe(FheError::DepthExceeded { .. })) => "DepthExceeded",
            ProtocolError::Abac(AbacError::Fhe(FheError::KeyMismatch { .. })) => "KeyMismatch",
            ProtocolError::Abac(_) => "PolicyError",
        }
    }
}

impl From<AbacError> for ProtocolError {
    fn from(e: AbacError) -> Self {
        match e {
            AbacError::Fhe(f) => ProtocolError::Fhe(f),
            other => ProtocolError::Abac(other),
        }
    }
}

impl From<ServerError> for ProtocolError {
    fn from(e: ServerError) -> Self {
        match e {
            ServerError::UnknownHandle(h) => ProtocolError::UnknownHandle(h),
            ServerError::UnknownFunc(f) => ProtocolError::UnknownFunc(f),
            ServerError::NotAdministrator(p) => ProtocolError::NotAdministrator(p),
            ServerError::SignatureRejected(p) => ProtocolError::SignatureRejected(p),
            ServerError::Malformed(m) => ProtocolError::Malformed(m),
            ServerError::DuplicateFuncId(f) => {
                ProtocolError::Storage(format!("function id {f} is already registered"))
            }
            ServerError::Io(e) => ProtocolError::Storage(e.to_string()),
            ServerError::Fhe(e) => ProtocolError::Fhe(e),
            ServerError::Abac(e) => e.into(),
        }
    }
}

/// Message transport between agents.
///
/// `transmit` returns the bytes the receiver actually gets; an honest
/// channel returns its input. `record_step` logs a named protocol step.
pub trait Channel {
    fn transmit(&mut self, from: &str, to: &str, bytes: Vec<u8>) -> Vec<u8>;
    fn record_step(&mut self, actor: &str, step: &str, detail: &str);
}

/// One recorded protocol step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub actor: String,
    pub step: String,
    pub detail: String,
}

/// Honest in-process channel that remembers steps and message kinds.
#[derive(Clone, Debug, Default)]
pub struct Loopback {
    pub steps: Vec<Step>,
    pub messages: Vec<(String, String, &'static str)>,
}

impl Loopback {
    pub fn new() -> Self {
        Self::default()
    }

    /// Step names in order, for order assertions.
    pub fn step_names(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.step.as_str()).collect()
    }

    pub fn position(&self, step: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.step == step)
    }
}

impl Channel for Loopback {
    fn transmit(&mut self, from: &str, to: &str, bytes: Vec<u8>) -> Vec<u8> {
        let kind = unframe(&bytes).map_or("Unknown", |f| f.kind());
        self.messages.push((from.to_string(), to.to_string(), kind));
        bytes
    }

    fn record_step(&mut self, actor: &str, step: &str, detail: &str) {
        self.steps.push(Step {
            actor: actor.to_string(),
            step: step.to_string(),
            detail: detail.to_string(),
        });
    }
}

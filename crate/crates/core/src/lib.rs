// SPDX-License-Identifier: Apache-2.0

//! Multi-user computation over homomorphically encrypted data.
//!
//! The crate layers three protocols on a pluggable bit-level homomorphic
//! backend:
//!
//! * a basic single-user outsourcing flow,
//! * a multi-user flow where every partner shares one evaluation key pair but
//!   authenticates with a personal signing key pair, and
//! * a constrained multi-user flow where the server enforces an encrypted
//!   attribute-based policy it cannot read, by gating results homomorphically.
//!
//! Modules:
//!
//! * [`fhe`]: backends, keys, ciphertexts and circuit evaluation.
//! * [`circuit`]: boolean netlists, builders and the plaintext evaluator.
//! * [`authsig`]: signing keys and the canonical message envelope.
//! * [`abac`]: policy rule bases, their encryption and the access circuit.
//! * [`cloudserver`]: the server's resource store, function registry and PRB store.
//! * [`protocol`]: agents and the protocol flows, including key lifecycle.
//! * [`simnet`]: deterministic message bus, adversary harness and scenarios.

pub mod abac;
pub mod authsig;
pub mod circuit;
pub mod cloudserver;
pub mod fhe;
pub mod protocol;
pub mod simnet;

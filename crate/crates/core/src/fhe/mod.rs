// SPDX-License-Identifier: Apache-2.0

//! Bit-level homomorphic encryption.
//!
//! Two backends sit behind the [`BitBackend`] interface:
//!
//! * [`ClearBackend`] keeps the plaintext bit as the "ciphertext" value. It
//!   has unlimited depth and exists to separate protocol bugs from crypto bugs.
//! * [`ToyBackend`] is a somewhat-homomorphic scheme over the integers. A bit
//!   `m` encrypts to `m + 2r + (random subset-sum of public encryptions of
//!   zero) mod x0` and decrypts as `(c mod p) mod 2`. Noise grows additively
//!   under XOR and multiplicatively under AND, so the scheme supports a bounded
//!   multiplicative depth which is measured when [`SchemeParams`] are built.
//!
//! **The toy backend is not secure.** Its parameters are sized for
//! correctness experiments on a laptop, nothing more.
//!
//! Keys carry the backend they belong to; the free functions in this module
//! dispatch on that and refuse to mix ciphertexts from different keys.

mod clear;
mod codec;
mod params;
mod toy;

pub use clear::ClearBackend;
pub use codec::{parse_ciphertexts, parse_ciphertexts_any, write_ciphertexts, EVALKEY_HEADER};
pub use params::SchemeParams;
pub use toy::ToyBackend;

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::circuit::{Circuit, Gate};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FheError {
    #[error("invalid scheme parameters: {0}")]
    InvalidParams(String),
    #[error("invalid plaintext bit {0} (expected 0 or 1)")]
    InvalidBit(u8),
    #[error("key mismatch: expected key {expected}, found {found}")]
    KeyMismatch {
        expected: KeyFingerprint,
        found: KeyFingerprint,
    },
    #[error("circuit expects {expected} inputs, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("multiplicative depth {depth} exceeds the supported depth {max}")]
    DepthExceeded { depth: u32, max: u32 },
    #[error("malformed encoding: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BackendKind {
    Clear,
    Toy,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Clear => "clear",
            BackendKind::Toy => "toy",
        })
    }
}

impl FromStr for BackendKind {
    type Err = FheError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clear" => Ok(BackendKind::Clear),
            "toy" => Ok(BackendKind::Toy),
            other => Err(FheError::Format(format!("unknown backend `{other}`"))),
        }
    }
}

/// Digest of a public key's serialization.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyFingerprint(pub [u8; 16]);

impl fmt::Display for KeyFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for KeyFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyFingerprint({self})")
    }
}

impl FromStr for KeyFingerprint {
    type Err = FheError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 16];
        hex::decode_to_slice(s.trim(), &mut out)
            .map_err(|e| FheError::Format(format!("fingerprint: {e}")))?;
        Ok(Self(out))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Clear,
    Toy(SchemeParams),
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Clear => f.write_str("clear"),
            Scheme::Toy(p) => write!(
                f,
                "toy({},{},{})",
                p.secret_bits(),
                p.noise_bits(),
                p.pk_elements()
            ),
        }
    }
}

impl Scheme {
    pub fn kind(&self) -> BackendKind {
        match self {
            Scheme::Clear => BackendKind::Clear,
            Scheme::Toy(_) => BackendKind::Toy,
        }
    }

    pub fn max_mult_depth(&self) -> u32 {
        self.backend().max_mult_depth(self)
    }

    pub fn backend(&self) -> &'static dyn BitBackend {
        match self {
            Scheme::Clear => &ClearBackend,
            Scheme::Toy(_) => &ToyBackend,
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct EvalPublicKey {
    scheme: Scheme,
    elements: Vec<BigUint>,
    fingerprint: KeyFingerprint,
}

impl EvalPublicKey {
    pub(crate) fn new(scheme: Scheme, elements: Vec<BigUint>) -> Self {
        let fingerprint = codec::fingerprint_of(&scheme, &elements);
        Self {
            scheme,
            elements,
            fingerprint,
        }
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn backend(&self) -> BackendKind {
        self.scheme.kind()
    }

    pub fn params(&self) -> Option<&SchemeParams> {
        match &self.scheme {
            Scheme::Toy(p) => Some(p),
            Scheme::Clear => None,
        }
    }

    pub fn elements(&self) -> &[BigUint] {
        &self.elements
    }

    pub fn fingerprint(&self) -> KeyFingerprint {
        self.fingerprint
    }

    pub fn max_mult_depth(&self) -> u32 {
        self.scheme.max_mult_depth()
    }
}

impl fmt::Debug for EvalPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EvalPublicKey")
            .field("scheme", &self.scheme)
            .field("elements", &self.elements.len())
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}

/// Evaluation secret. Never held by the server.
#[derive(Clone, PartialEq, Eq)]
pub struct EvalSecretKey {
    scheme: Scheme,
    secret: BigUint,
    fingerprint: KeyFingerprint,
}

impl EvalSecretKey {
    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn fingerprint(&self) -> KeyFingerprint {
        self.fingerprint
    }

    pub(crate) fn secret(&self) -> &BigUint {
        &self.secret
    }

    /// Little-endian bits of the secret integer.
    pub fn secret_bits(&self) -> Vec<bool> {
        let width = match &self.scheme {
            Scheme::Clear => clear::SECRET_BITS,
            Scheme::Toy(p) => p.secret_bits(),
        };
        (0..u64::from(width)).map(|i| self.secret.bit(i)).collect()
    }

    /// Applies this key's decryption formula without the fingerprint guard.
    /// Only useful to show what a holder of the wrong key would recover.
    pub fn decrypt_unchecked(&self, ct: &Ciphertext) -> bool {
        self.scheme.backend().decrypt(self, ct)
    }
}

impl fmt::Debug for EvalSecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EvalSecretKey")
            .field("fingerprint", &self.fingerprint)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalKeyPair {
    pub public: EvalPublicKey,
    pub secret: EvalSecretKey,
}

impl EvalKeyPair {
    pub fn fingerprint(&self) -> KeyFingerprint {
        self.public.fingerprint
    }
}

/// One encrypted bit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    value: BigUint,
    noise_budget: i64,
    key: KeyFingerprint,
    backend: BackendKind,
}

/// Budget reported by ciphertexts that never accumulate noise.
pub const UNLIMITED_BUDGET: i64 = i64::MAX;

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    /// Estimated bits of headroom left before decryption becomes unreliable.
    pub fn noise_budget(&self) -> i64 {
        self.noise_budget
    }

    pub fn key_fingerprint(&self) -> KeyFingerprint {
        self.key
    }

    pub fn backend(&self) -> BackendKind {
        self.backend
    }
}

/// A bit-level homomorphic encryption scheme.
///
/// Implementations receive keys and ciphertexts that have already been
/// checked for matching fingerprints.
pub trait BitBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn max_mult_depth(&self, scheme: &Scheme) -> u32;
    fn keygen(&self, scheme: Scheme, seed: u64) -> EvalKeyPair;
    fn encrypt(&self, pk: &EvalPublicKey, bit: bool, seed: u64) -> Ciphertext;
    /// Noise-free encryption of a public constant.
    fn trivial(&self, pk: &EvalPublicKey, bit: bool) -> Ciphertext;
    fn decrypt(&self, sk: &EvalSecretKey, ct: &Ciphertext) -> bool;
    fn xor(&self, pk: &EvalPublicKey, a: &Ciphertext, b: &Ciphertext) -> Ciphertext;
    fn and(&self, pk: &EvalPublicKey, a: &Ciphertext, b: &Ciphertext) -> Ciphertext;
    fn not(&self, pk: &EvalPublicKey, a: &Ciphertext) -> Ciphertext;
    /// Circuit that recomputes `decrypt(sk, ct)` from the bits of `sk`, or
    /// `DepthExceeded` when this scheme cannot evaluate its own decryption.
    fn decryption_circuit(&self, pk: &EvalPublicKey, ct: &Ciphertext) -> Result<Circuit, FheError>;
}

/// Generates an evaluation key pair. Deterministic in `seed`.
pub fn keygen(scheme: Scheme, seed: u64) -> EvalKeyPair {
    scheme.backend().keygen(scheme, seed)
}

/// Convenience: key pair for the given backend at default parameters.
pub fn keygen_default(kind: BackendKind, seed: u64) -> EvalKeyPair {
    match kind {
        BackendKind::Clear => keygen(Scheme::Clear, seed),
        BackendKind::Toy => keygen(Scheme::Toy(SchemeParams::toy_default()), seed),
    }
}

fn check_key(expected: KeyFingerprint, ct: &Ciphertext) -> Result<(), FheError> {
    if ct.key == expected {
        Ok(())
    } else {
        Err(FheError::KeyMismatch {
            expected,
            found: ct.key,
        })
    }
}

pub fn encrypt_bit(pk: &EvalPublicKey, bit: u8, seed: u64) -> Result<Ciphertext, FheError> {
    match bit {
        0 | 1 => Ok(pk.scheme.backend().encrypt(pk, bit == 1, seed)),
        other => Err(FheError::InvalidBit(other)),
    }
}

/// Encrypts each bit with a per-bit seed drawn from `seed`.
pub fn encrypt_bits(pk: &EvalPublicKey, bits: &[bool], seed: u64) -> Vec<Ciphertext> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let backend = pk.scheme.backend();
    bits.iter()
        .map(|&b| backend.encrypt(pk, b, rng.next_u64()))
        .collect()
}

pub fn trivial_bits(pk: &EvalPublicKey, bits: &[bool]) -> Vec<Ciphertext> {
    let backend = pk.scheme.backend();
    bits.iter().map(|&b| backend.trivial(pk, b)).collect()
}

pub fn decrypt_bit(sk: &EvalSecretKey, ct: &Ciphertext) -> Result<u8, FheError> {
    check_key(sk.fingerprint, ct)?;
    Ok(sk.scheme.backend().decrypt(sk, ct) as u8)
}

pub fn decrypt_bits(sk: &EvalSecretKey, cts: &[Ciphertext]) -> Result<Vec<bool>, FheError> {
    cts.iter()
        .map(|ct| decrypt_bit(sk, ct).map(|b| b == 1))
        .collect()
}

pub fn eval_xor(
    pk: &EvalPublicKey,
    a: &Ciphertext,
    b: &Ciphertext,
) -> Result<Ciphertext, FheError> {
    check_key(pk.fingerprint, a)?;
    check_key(pk.fingerprint, b)?;
    Ok(pk.scheme.backend().xor(pk, a, b))
}

pub fn eval_and(
    pk: &EvalPublicKey,
    a: &Ciphertext,
    b: &Ciphertext,
) -> Result<Ciphertext, FheError> {
    check_key(pk.fingerprint, a)?;
    check_key(pk.fingerprint, b)?;
    Ok(pk.scheme.backend().and(pk, a, b))
}

pub fn eval_not(pk: &EvalPublicKey, a: &Ciphertext) -> Result<Ciphertext, FheError> {
    check_key(pk.fingerprint, a)?;
    Ok(pk.scheme.backend().not(pk, a))
}

/// Homomorphic evaluation of `func` over `inputs`, gate by gate.
///
/// The circuit's static multiplicative depth is checked against the key's
/// supported depth before any gate is evaluated.
pub fn evaluate(
    pk: &EvalPublicKey,
    func: &Circuit,
    inputs: &[Ciphertext],
) -> Result<Vec<Ciphertext>, FheError> {
    if inputs.len() != func.num_inputs() {
        return Err(FheError::ArityMismatch {
            expected: func.num_inputs(),
            got: inputs.len(),
        });
    }
    let depth = func.mult_depth();
    let max = pk.max_mult_depth();
    if depth > max {
        return Err(FheError::DepthExceeded { depth, max });
    }
    for ct in inputs {
        check_key(pk.fingerprint, ct)?;
    }
    let backend = pk.scheme.backend();
    let mut wires: Vec<Ciphertext> = Vec::with_capacity(func.num_wires());
    wires.extend_from_slice(inputs);
    for gate in func.gates() {
        let ct = match *gate {
            Gate::Xor(a, b) => backend.xor(pk, &wires[a], &wires[b]),
            Gate::And(a, b) => backend.and(pk, &wires[a], &wires[b]),
            Gate::Not(a) => backend.not(pk, &wires[a]),
            Gate::Const0 => backend.trivial(pk, false),
            Gate::Const1 => backend.trivial(pk, true),
        };
        wires.push(ct);
    }
    Ok(func.outputs().iter().map(|&w| wires[w].clone()).collect())
}

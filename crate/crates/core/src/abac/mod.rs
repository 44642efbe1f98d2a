// SPDX-License-Identifier: Apache-2.0

//! Server-oblivious attribute-based access control.
//!
//! Policies are OR-of-AND-of-equality rules plus per-rule permitted-function
//! sets. A rule base is encrypted bit by bit under the evaluation key and the
//! access decision is computed by a circuit that depends only on the public
//! schema and the number of rules, never on rule values.
//!
//! Every rule is encoded in a fixed slot layout so that two rule bases with
//! the same schema and rule count are indistinguishable to the server except
//! through ciphertext bytes:
//!
//! ```text
//! per attribute:   enable, value[width]
//! permitted:       one bit per function id, 2^func_id_width bits
//! ```
//!
//! A disabled attribute slot matches any request value. A rule with no
//! listed functions permits all of them, so its bitmap is all ones.

mod compile;
mod encrypted;
mod policy;

use thiserror::Error;

use crate::authsig::AuthPublicKey;
use crate::circuit::{to_bits, CircuitError};
use crate::fhe::{eval_and, Ciphertext, EvalPublicKey, FheError};

pub use compile::{compile_canaccess, decode_rule, encode_rule};
pub use encrypted::{
    encrypt_attributes, encrypt_prb, verify_access, EncryptedAttribute, EncryptedPrb,
    ENCRYPTED_PRB_HEADER,
};
pub use policy::{
    AttributeDef, Category, PolicyRule, PolicyRuleBase, PolicySchema, MAX_FUNC_ID_WIDTH,
};

/// Width of the digest that subject fingerprints are cut from.
pub const DIGEST_BITS: usize = 256;

#[derive(Debug, Error)]
pub enum AbacError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("rule {rule}: {message}")]
    InvalidRule { rule: usize, message: String },
    #[error("fingerprint width {0} exceeds the {DIGEST_BITS}-bit digest")]
    WidthTooLarge(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Fhe(#[from] FheError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AttributeValue {
    pub name: String,
    pub category: Category,
    pub bits: Vec<bool>,
}

impl AttributeValue {
    pub fn new(name: &str, category: Category, bits: Vec<bool>) -> Self {
        Self {
            name: name.to_string(),
            category,
            bits,
        }
    }

    pub fn from_u64(name: &str, category: Category, value: u64, width: usize) -> Self {
        Self::new(name, category, to_bits(value, width))
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }
}

/// Low `width` bits of SHA-256 over the serialized auth public key, as a
/// subject attribute. Used wherever a rule names a principal.
///
/// At width 32 two random keys collide with probability 2^-32.
pub fn fingerprint_subject(
    pk: &AuthPublicKey,
    name: &str,
    width: usize,
) -> Result<AttributeValue, AbacError> {
    if width == 0 || width > DIGEST_BITS {
        return Err(AbacError::WidthTooLarge(width));
    }
    let digest = pk.digest();
    let bits = (0..width)
        .map(|i| (digest[i / 8] >> (i % 8)) & 1 == 1)
        .collect();
    Ok(AttributeValue::new(name, Category::Subject, bits))
}

/// Homomorphic `decision AND output_i` for every output bit.
pub fn gate_output(
    pk: &EvalPublicKey,
    decision: &Ciphertext,
    outputs: &[Ciphertext],
) -> Result<Vec<Ciphertext>, AbacError> {
    outputs
        .iter()
        .map(|o| eval_and(pk, decision, o).map_err(AbacError::from))
        .collect()
}

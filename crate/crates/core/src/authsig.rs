// SPDX-License-Identifier: Apache-2.0

//! Authentication key pairs, signatures and the canonical message envelope.
//!
//! The reference signature scheme is a deterministic Schnorr variant in the
//! multiplicative group modulo the Mersenne prime `2^521 - 1`, with exponents
//! reduced modulo `p - 1`. Nonces are derived from the secret key and the
//! message, so signatures are deterministic. The group order is smooth; the
//! scheme is **insecure** and only preserves the shape of real signatures.
//! Anything implementing [`SignatureScheme`] can stand in for it.

use std::fmt;
use std::sync::OnceLock;

use num_bigint::BigUint;
use num_traits::One;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

const MODULUS_BITS: u32 = 521;
const GENERATOR: u32 = 3;
const SCALAR_BYTES: usize = 66;
const CHALLENGE_BYTES: usize = 32;

/// Signature length: 32-byte challenge followed by a 66-byte response.
pub const SIGNATURE_LEN: usize = CHALLENGE_BYTES + SCALAR_BYTES;

fn modulus() -> &'static BigUint {
    static P: OnceLock<BigUint> = OnceLock::new();
    P.get_or_init(|| (BigUint::one() << MODULUS_BITS) - 1u32)
}

fn group_order() -> BigUint {
    modulus() - 1u32
}

fn fixed_bytes(n: &BigUint, len: usize) -> Vec<u8> {
    let mut bytes = n.to_bytes_be();
    assert!(bytes.len() <= len, "integer wider than {len} bytes");
    let mut out = vec![0u8; len - bytes.len()];
    out.append(&mut bytes);
    out
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AuthPublicKey(BigUint);

impl AuthPublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        fixed_bytes(&self.0, SCALAR_BYTES)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AuthError> {
        if bytes.len() != SCALAR_BYTES {
            return Err(AuthError::Malformed(format!(
                "public key must be {SCALAR_BYTES} bytes"
            )));
        }
        let y = BigUint::from_bytes_be(bytes);
        if y.bits() == 0 || &y >= modulus() {
            return Err(AuthError::Malformed("public key out of range".into()));
        }
        Ok(Self(y))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    /// SHA-256 of the serialized key.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

impl fmt::Debug for AuthPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AuthPublicKey({}..)", &hex::encode(self.digest())[..12])
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct AuthSecretKey(BigUint);

impl AuthSecretKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        fixed_bytes(&self.0, SCALAR_BYTES)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AuthError> {
        if bytes.len() != SCALAR_BYTES {
            return Err(AuthError::Malformed(format!(
                "secret key must be {SCALAR_BYTES} bytes"
            )));
        }
        Ok(Self(BigUint::from_bytes_be(bytes) % group_order()))
    }

    pub fn public_key(&self) -> AuthPublicKey {
        AuthPublicKey(BigUint::from(GENERATOR).modpow(&self.0, modulus()))
    }
}

impl fmt::Debug for AuthSecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AuthSecretKey(..)")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("malformed key or envelope: {0}")]
    Malformed(String),
}

/// A principal's signing key pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthKeyPair {
    pub public: AuthPublicKey,
    pub secret: AuthSecretKey,
    pub principal_id: String,
}

impl AuthKeyPair {
    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        sign(&self.secret, message)
    }

    /// Signs `payload` and wraps it with this principal's identity.
    pub fn seal(&self, payload: Vec<u8>) -> SignedMessage {
        let signature = self.sign(&payload);
        SignedMessage {
            payload,
            signer: self.principal_id.clone(),
            signature,
        }
    }
}

/// A signature scheme usable for principal authentication.
pub trait SignatureScheme {
    fn keygen(&self, principal_id: &str, seed: u64) -> AuthKeyPair;
    fn sign(&self, sk: &AuthSecretKey, message: &[u8]) -> Vec<u8>;
    fn verify(&self, pk: &AuthPublicKey, message: &[u8], signature: &[u8]) -> bool;
}

/// The deterministic toy Schnorr scheme described in the module docs.
#[derive(Clone, Copy, Debug, Default)]
pub struct ToySchnorr;

fn challenge(commitment: &BigUint, pk: &AuthPublicKey, message: &[u8]) -> BigUint {
    let mut h = Sha256::new();
    h.update(b"oblivion-authsig-challenge");
    h.update(fixed_bytes(commitment, SCALAR_BYTES));
    h.update(pk.to_bytes());
    h.update((message.len() as u64).to_be_bytes());
    h.update(message);
    BigUint::from_bytes_be(&h.finalize())
}

fn nonce(sk: &AuthSecretKey, message: &[u8]) -> BigUint {
    let mut bytes = Vec::with_capacity(3 * 32);
    for counter in 0u8..3 {
        let mut h = Sha256::new();
        h.update(b"oblivion-authsig-nonce");
        h.update([counter]);
        h.update(sk.to_bytes());
        h.update(message);
        bytes.extend_from_slice(&h.finalize());
    }
    BigUint::from_bytes_be(&bytes) % group_order()
}

impl SignatureScheme for ToySchnorr {
    fn keygen(&self, principal_id: &str, seed: u64) -> AuthKeyPair {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut bytes = [0u8; SCALAR_BYTES + 8];
        rng.fill_bytes(&mut bytes);
        let x = BigUint::from_bytes_be(&bytes) % (group_order() - 1u32) + 1u32;
        let secret = AuthSecretKey(x);
        AuthKeyPair {
            public: secret.public_key(),
            secret,
            principal_id: principal_id.to_string(),
        }
    }

    fn sign(&self, sk: &AuthSecretKey, message: &[u8]) -> Vec<u8> {
        let order = group_order();
        let k = nonce(sk, message);
        let commitment = BigUint::from(GENERATOR).modpow(&k, modulus());
        let e = challenge(&commitment, &sk.public_key(), message);
        let s = (k + (&e % &order) * &sk.0) % &order;
        let mut sig = fixed_bytes(&e, CHALLENGE_BYTES);
        sig.extend(fixed_bytes(&s, SCALAR_BYTES));
        sig
    }

    fn verify(&self, pk: &AuthPublicKey, message: &[u8], signature: &[u8]) -> bool {
        if signature.len() != SIGNATURE_LEN {
            return false;
        }
        let order = group_order();
        let e = BigUint::from_bytes_be(&signature[..CHALLENGE_BYTES]);
        let s = BigUint::from_bytes_be(&signature[CHALLENGE_BYTES..]);
        if s >= order {
            return false;
        }
        // g^s * y^(-e) recovers the commitment
        let neg_e = &order - (&e % &order);
        let commitment = BigUint::from(GENERATOR).modpow(&s, modulus())
            * pk.0.modpow(&neg_e, modulus())
            % modulus();
        challenge(&commitment, pk, message) == e
    }
}

pub fn auth_keygen(principal_id: &str, seed: u64) -> AuthKeyPair {
    ToySchnorr.keygen(principal_id, seed)
}

pub fn sign(sk: &AuthSecretKey, message: &[u8]) -> Vec<u8> {
    ToySchnorr.sign(sk, message)
}

/// True iff `signature` was produced by the secret matching `pk` over exactly `message`.
pub fn verify(pk: &AuthPublicKey, message: &[u8], signature: &[u8]) -> bool {
    ToySchnorr.verify(pk, message, signature)
}

/// Payload bytes exactly as signed, plus who signed them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedMessage {
    pub payload: Vec<u8>,
    pub signer: String,
    pub signature: Vec<u8>,
}

impl SignedMessage {
    pub fn verify_with(&self, pk: &AuthPublicKey) -> bool {
        verify(pk, &self.payload, &self.signature)
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_envelope(
            SIGNED_TAG,
            &[&self.payload, self.signer.as_bytes(), &self.signature],
        )
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AuthError> {
        let (tag, mut fields) = decode_envelope(bytes)?;
        if tag != SIGNED_TAG || fields.len() != 3 {
            return Err(AuthError::Malformed("not a signed message".into()));
        }
        let signature = fields.pop().unwrap();
        let signer = String::from_utf8(fields.pop().unwrap())
            .map_err(|_| AuthError::Malformed("signer is not utf-8".into()))?;
        let payload = fields.pop().unwrap();
        Ok(Self {
            payload,
            signer,
            signature,
        })
    }
}

/// Envelope tag reserved for [`SignedMessage`].
pub const SIGNED_TAG: u8 = 0xff;

/// `type_tag (1) || count (2) || [len (4) || bytes]*`, big-endian lengths.
pub fn encode_envelope(type_tag: u8, fields: &[&[u8]]) -> Vec<u8> {
    let count = u16::try_from(fields.len()).expect("at most 65535 envelope fields");
    let mut out = Vec::with_capacity(3 + fields.iter().map(|f| 4 + f.len()).sum::<usize>());
    out.push(type_tag);
    out.extend_from_slice(&count.to_be_bytes());
    for f in fields {
        let len = u32::try_from(f.len()).expect("envelope field under 4 GiB");
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(f);
    }
    out
}

pub fn decode_envelope(bytes: &[u8]) -> Result<(u8, Vec<Vec<u8>>), AuthError> {
    let short = || AuthError::Malformed("truncated envelope".into());
    let (&tag, rest) = bytes.split_first().ok_or_else(short)?;
    let (count, mut rest) = rest.split_at_checked(2).ok_or_else(short)?;
    let count = u16::from_be_bytes([count[0], count[1]]) as usize;
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        let (len, tail) = rest.split_at_checked(4).ok_or_else(short)?;
        let len = u32::from_be_bytes(len.try_into().unwrap()) as usize;
        let (field, tail) = tail.split_at_checked(len).ok_or_else(short)?;
        fields.push(field.to_vec());
        rest = tail;
    }
    if !rest.is_empty() {
        return Err(AuthError::Malformed(format!(
            "{} trailing bytes after envelope",
            rest.len()
        )));
    }
    Ok((tag, fields))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn keygen_is_deterministic_and_distinct() {
        assert_eq!(auth_keygen("alice", 1), auth_keygen("alice", 1));
        assert_ne!(
            auth_keygen("alice", 1).public,
            auth_keygen("alice", 2).public
        );
    }

    #[test]
    fn sign_verify_round_trip() {
        let kp = auth_keygen("alice", 7);
        let sig = kp.sign(b"hello");
        assert_eq!(sig.len(), SIGNATURE_LEN);
        assert!(verify(&kp.public, b"hello", &sig));
        assert_eq!(sig, kp.sign(b"hello"));
    }

    #[test]
    fn every_flipped_bit_is_rejected() {
        let kp = auth_keygen("alice", 3);
        let msg: Vec<u8> = (0u8..16).collect();
        let sig = kp.sign(&msg);
        for i in 0..msg.len() {
            for bit in 0..8 {
                let mut m = msg.clone();
                m[i] ^= 1 << bit;
                assert!(!verify(&kp.public, &m, &sig), "byte {i} bit {bit}");
            }
        }
        for i in 0..sig.len() {
            let mut s = sig.clone();
            s[i] ^= 0x01;
            assert!(!verify(&kp.public, &msg, &s), "signature byte {i}");
        }
    }

    #[test]
    fn other_principal_signature_fails() {
        let alice = auth_keygen("alice", 1);
        let mallory = auth_keygen("mallory", 666);
        assert!(!verify(&alice.public, b"op", &mallory.sign(b"op")));
        assert!(!verify(&alice.public, b"op", &[]));
    }

    #[test]
    fn keys_round_trip_through_bytes() {
        let kp = auth_keygen("bob", 5);
        assert_eq!(
            AuthPublicKey::from_bytes(&kp.public.to_bytes()).unwrap(),
            kp.public
        );
        assert_eq!(
            AuthSecretKey::from_bytes(&kp.secret.to_bytes())
                .unwrap()
                .public_key(),
            kp.public
        );
        assert!(AuthPublicKey::from_bytes(&[1, 2]).is_err());
    }

    #[test]
    fn envelope_layout() {
        let bytes = encode_envelope(7, &[b"ab", b""]);
        assert_eq!(bytes, vec![7, 0, 2, 0, 0, 0, 2, b'a', b'b', 0, 0, 0, 0]);
        assert_eq!(
            decode_envelope(&bytes).unwrap(),
            (7, vec![b"ab".to_vec(), vec![]])
        );
        assert!(decode_envelope(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_envelope(&long).is_err());
    }

    #[test]
    fn signed_message_round_trip() {
        let kp = auth_keygen("bob", 2);
        let sealed = kp.seal(b"payload".to_vec());
        let back = SignedMessage::decode(&sealed.encode()).unwrap();
        assert_eq!(back, sealed);
        assert!(back.verify_with(&kp.public));
    }

    proptest! {
        #[test]
        fn envelope_decode_inverts_encode(tag: u8, fields in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..20), 0..6)) {
            let refs: Vec<&[u8]> = fields.iter().map(Vec::as_slice).collect();
            prop_assert_eq!(decode_envelope(&encode_envelope(tag, &refs)).unwrap(), (tag, fields));
        }
    }
}

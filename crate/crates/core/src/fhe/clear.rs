// SPDX-License-Identifier: Apache-2.0

use num_bigint::BigUint;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    BackendKind, BitBackend, Ciphertext, EvalKeyPair, EvalPublicKey, EvalSecretKey, FheError,
    Scheme, UNLIMITED_BUDGET,
};
use crate::circuit::{Circuit, CircuitBuilder};

pub(crate) const SECRET_BITS: u32 = 64;

/// Transparent backend: a ciphertext's value is its plaintext bit.
///
/// Keys still carry distinct fingerprints so key-mismatch handling behaves
/// exactly as with a real scheme.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClearBackend;

fn ct(pk: &EvalPublicKey, bit: bool) -> Ciphertext {
    Ciphertext {
        value: BigUint::from(bit as u8),
        noise_budget: UNLIMITED_BUDGET,
        key: pk.fingerprint(),
        backend: BackendKind::Clear,
    }
}

impl BitBackend for ClearBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Clear
    }

    fn max_mult_depth(&self, _scheme: &Scheme) -> u32 {
        u32::MAX
    }

    fn keygen(&self, scheme: Scheme, seed: u64) -> EvalKeyPair {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let key_id = rng.next_u64() & !1;
        let public = EvalPublicKey::new(scheme, vec![BigUint::from(key_id)]);
        let secret = EvalSecretKey {
            scheme,
            secret: BigUint::from(key_id | 1),
            fingerprint: public.fingerprint(),
        };
        EvalKeyPair { public, secret }
    }

    fn encrypt(&self, pk: &EvalPublicKey, bit: bool, _seed: u64) -> Ciphertext {
        ct(pk, bit)
    }

    fn trivial(&self, pk: &EvalPublicKey, bit: bool) -> Ciphertext {
        ct(pk, bit)
    }

    fn decrypt(&self, _sk: &EvalSecretKey, ct: &Ciphertext) -> bool {
        ct.value().bit(0)
    }

    fn xor(&self, pk: &EvalPublicKey, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
        ct(pk, a.value().bit(0) ^ b.value().bit(0))
    }

    fn and(&self, pk: &EvalPublicKey, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
        ct(pk, a.value().bit(0) & b.value().bit(0))
    }

    fn not(&self, pk: &EvalPublicKey, a: &Ciphertext) -> Ciphertext {
        ct(pk, !a.value().bit(0))
    }

    /// Decryption ignores the key, so the circuit takes the secret bits and
    /// outputs the ciphertext's value as a constant.
    fn decryption_circuit(
        &self,
        _pk: &EvalPublicKey,
        ct: &Ciphertext,
    ) -> Result<Circuit, FheError> {
        let mut b = CircuitBuilder::new(SECRET_BITS as usize);
        let out = b.constant(ct.value().bit(0));
        Ok(b.finish(vec![out]))
    }
}

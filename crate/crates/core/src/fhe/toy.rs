// SPDX-License-Identifier: Apache-2.0

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    BackendKind, BitBackend, Ciphertext, EvalKeyPair, EvalPublicKey, EvalSecretKey, FheError,
    Scheme, SchemeParams,
};
use crate::circuit::{ceil_log2, Circuit};

/// Somewhat-homomorphic encryption over the integers.
///
/// Secret: an odd `secret_bits`-bit integer `p`. Public key: `x0 = p * q0`
/// (noise-free, so reduction modulo `x0` never disturbs `c mod p`) followed by
/// `pk_elements - 1` encryptions of zero `p * q_i + 2 r_i`. All noise terms are
/// non-negative, which keeps `c mod p` equal to the noise itself as long as
/// the noise stays below `p`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ToyBackend;

fn params(scheme: &Scheme) -> &SchemeParams {
    match scheme {
        Scheme::Toy(p) => p,
        Scheme::Clear => unreachable!("toy backend called with a clear key"),
    }
}

pub(crate) fn random_bits(rng: &mut impl RngCore, bits: u32) -> BigUint {
    let mut bytes = vec![0u8; bits.div_ceil(8) as usize];
    rng.fill_bytes(&mut bytes);
    let excess = bytes.len() as u32 * 8 - bits;
    if let Some(top) = bytes.last_mut() {
        *top &= 0xffu8 >> excess;
    }
    BigUint::from_bytes_le(&bytes)
}

/// Uniform `bits`-bit integer with the top bit set.
fn random_exact_bits(rng: &mut impl RngCore, bits: u32) -> BigUint {
    let mut n = random_bits(rng, bits);
    n.set_bit(u64::from(bits - 1), true);
    n
}

fn modulus(pk: &EvalPublicKey) -> &BigUint {
    &pk.elements()[0]
}

fn headroom(pk: &EvalPublicKey) -> i64 {
    params(pk.scheme()).headroom_bits() as i64
}

fn ct(pk: &EvalPublicKey, value: BigUint, noise_budget: i64) -> Ciphertext {
    Ciphertext {
        value,
        noise_budget,
        key: pk.fingerprint(),
        backend: BackendKind::Toy,
    }
}

impl BitBackend for ToyBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Toy
    }

    fn max_mult_depth(&self, scheme: &Scheme) -> u32 {
        params(scheme).max_mult_depth()
    }

    fn keygen(&self, scheme: Scheme, seed: u64) -> EvalKeyPair {
        let params = *params(&scheme);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut p = random_exact_bits(&mut rng, params.secret_bits());
        p.set_bit(0, true);
        let q0 = random_exact_bits(&mut rng, params.secret_bits());
        let mut elements = Vec::with_capacity(params.pk_elements() as usize);
        elements.push(&p * &q0);
        for _ in 1..params.pk_elements() {
            let q = random_bits(&mut rng, params.secret_bits() - 1);
            let r = random_bits(&mut rng, params.noise_bits());
            elements.push(&p * q + (r << 1u32));
        }
        let public = EvalPublicKey::new(scheme, elements);
        let secret = EvalSecretKey {
            scheme,
            secret: p,
            fingerprint: public.fingerprint(),
        };
        EvalKeyPair { public, secret }
    }

    fn encrypt(&self, pk: &EvalPublicKey, bit: bool, seed: u64) -> Ciphertext {
        let params = params(pk.scheme());
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let r = random_bits(&mut rng, params.noise_bits());
        let mut c = BigUint::from(bit as u8) + (r << 1u32);
        for x in &pk.elements()[1..] {
            if rng.gen::<bool>() {
                c += x;
            }
        }
        ct(pk, c % modulus(pk), params.fresh_budget())
    }

    fn trivial(&self, pk: &EvalPublicKey, bit: bool) -> Ciphertext {
        let value = if bit { BigUint::one() } else { BigUint::zero() };
        ct(pk, value, headroom(pk) - bit as i64)
    }

    fn decrypt(&self, sk: &EvalSecretKey, ct: &Ciphertext) -> bool {
        (ct.value() % sk.secret()).bit(0)
    }

    fn xor(&self, pk: &EvalPublicKey, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
        let budget = a.noise_budget.min(b.noise_budget).saturating_sub(1);
        ct(pk, (&a.value + &b.value) % modulus(pk), budget)
    }

    fn and(&self, pk: &EvalPublicKey, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
        // noise bits add: (H - a) + (H - b) = H - (a + b - H)
        let budget = a
            .noise_budget
            .saturating_add(b.noise_budget)
            .saturating_sub(headroom(pk));
        ct(pk, (&a.value * &b.value) % modulus(pk), budget)
    }

    fn not(&self, pk: &EvalPublicKey, a: &Ciphertext) -> Ciphertext {
        ct(
            pk,
            (&a.value + 1u32) % modulus(pk),
            a.noise_budget.saturating_sub(1),
        )
    }

    fn decryption_circuit(
        &self,
        pk: &EvalPublicKey,
        _ct: &Ciphertext,
    ) -> Result<Circuit, FheError> {
        // Reducing a ciphertext modulo the secret needs one trial subtraction
        // per quotient bit, each gated on a comparison of depth at least
        // log2(secret_bits), and the trials are sequential.
        let params = params(pk.scheme());
        let quotient_bits = modulus(pk).bits() as u32 - params.secret_bits() + 1;
        let depth = quotient_bits.saturating_mul(ceil_log2(params.secret_bits() as usize).max(1));
        Err(FheError::DepthExceeded {
            depth,
            max: params.max_mult_depth(),
        })
    }
}

/// Balanced product of `leaves`; the number of leaves must be a power of two.
pub(crate) fn and_tree(pk: &EvalPublicKey, mut leaves: Vec<Ciphertext>) -> Ciphertext {
    assert!(leaves.len().is_power_of_two());
    while leaves.len() > 1 {
        leaves = leaves
            .chunks(2)
            .map(|pair| ToyBackend.and(pk, &pair[0], &pair[1]))
            .collect();
    }
    leaves.pop().expect("non-empty")
}

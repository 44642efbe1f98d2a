// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{toy, BitBackend, Ciphertext, FheError, Scheme, ToyBackend};
use crate::circuit::ceil_log2;

/// Parameters of the toy integer scheme.
///
/// `max_mult_depth` is not chosen by the caller: construction measures it by
/// decrypting balanced AND-trees of fresh ciphertexts of growing depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SchemeParams {
    secret_bits: u32,
    noise_bits: u32,
    pk_elements: u32,
    max_mult_depth: u32,
}

/// Calibrated depth per `(secret_bits, noise_bits, pk_elements)`.
type DepthCache = HashMap<(u32, u32, u32), u32>;

const CALIBRATION_SEED: u64 = 0x0b11_7105;
const CALIBRATION_TRIALS: u64 = 3;
const MAX_PROBED_DEPTH: u32 = 12;
const MAX_SECRET_BITS: u32 = 1 << 16;
const MAX_PK_ELEMENTS: u32 = 4096;

impl SchemeParams {
    pub const DEFAULT_SECRET_BITS: u32 = 4096;
    pub const DEFAULT_NOISE_BITS: u32 = 16;
    pub const DEFAULT_PK_ELEMENTS: u32 = 32;

    pub fn new(secret_bits: u32, noise_bits: u32, pk_elements: u32) -> Result<Self, FheError> {
        let unchecked = Self::unchecked(secret_bits, noise_bits, pk_elements)?;
        static CACHE: OnceLock<Mutex<DepthCache>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let key = (secret_bits, noise_bits, pk_elements);
        if let Some(&depth) = cache.lock().expect("params cache").get(&key) {
            return Ok(Self {
                max_mult_depth: depth,
                ..unchecked
            });
        }
        let depth = calibrate(&unchecked);
        cache.lock().expect("params cache").insert(key, depth);
        Ok(Self {
            max_mult_depth: depth,
            ..unchecked
        })
    }

    /// Default parameters: 4096-bit secret, 16-bit noise, 32 public elements.
    pub fn toy_default() -> Self {
        Self::new(
            Self::DEFAULT_SECRET_BITS,
            Self::DEFAULT_NOISE_BITS,
            Self::DEFAULT_PK_ELEMENTS,
        )
        .expect("default parameters are valid")
    }

    /// Validated parameters with depth 0, used before calibration.
    fn unchecked(secret_bits: u32, noise_bits: u32, pk_elements: u32) -> Result<Self, FheError> {
        let bad = |msg: String| Err(FheError::InvalidParams(msg));
        if noise_bits == 0 || pk_elements == 0 || secret_bits == 0 {
            return bad("all parameters must be positive".into());
        }
        if secret_bits <= noise_bits + 2 {
            return bad(format!(
                "secret_bits ({secret_bits}) must exceed noise_bits + 2 ({})",
                noise_bits + 2
            ));
        }
        if secret_bits > MAX_SECRET_BITS || pk_elements > MAX_PK_ELEMENTS {
            return bad(format!("parameters exceed supported maxima ({MAX_SECRET_BITS} bits, {MAX_PK_ELEMENTS} elements)"));
        }
        let params = Self {
            secret_bits,
            noise_bits,
            pk_elements,
            max_mult_depth: 0,
        };
        if params.fresh_noise_bits() >= params.headroom_bits() {
            return bad(format!(
                "fresh noise estimate ({} bits) leaves no decryption headroom under a {secret_bits}-bit secret",
                params.fresh_noise_bits()
            ));
        }
        Ok(params)
    }

    pub fn secret_bits(&self) -> u32 {
        self.secret_bits
    }

    pub fn noise_bits(&self) -> u32 {
        self.noise_bits
    }

    pub fn pk_elements(&self) -> u32 {
        self.pk_elements
    }

    pub fn max_mult_depth(&self) -> u32 {
        self.max_mult_depth
    }

    /// Noise must stay below `2^headroom` for `(c mod p) mod 2` to be exact.
    pub(crate) fn headroom_bits(&self) -> u32 {
        self.secret_bits - 1
    }

    /// Upper bound on the bit length of a fresh ciphertext's noise
    /// `m + 2r + sum(2 r_i)` over at most `pk_elements - 1` subset terms.
    pub(crate) fn fresh_noise_bits(&self) -> u32 {
        self.noise_bits + 1 + ceil_log2(self.pk_elements as usize) + 1
    }

    pub(crate) fn fresh_budget(&self) -> i64 {
        self.headroom_bits() as i64 - self.fresh_noise_bits() as i64
    }

    /// Budget estimate after a balanced AND-tree of depth `d` over fresh inputs.
    pub(crate) fn tree_budget(&self, depth: u32) -> i64 {
        let noise = (self.fresh_noise_bits() as i64).saturating_mul(1i64 << depth.min(62));
        self.headroom_bits() as i64 - noise
    }
}

/// Parses `secret_bits,noise_bits,pk_elements`.
impl std::str::FromStr for SchemeParams {
    type Err = FheError;

    fn from_str(s: &str) -> Result<Self, FheError> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let nums: Result<Vec<u32>, _> = parts.iter().map(|p| p.parse::<u32>()).collect();
        match nums {
            Ok(n) if n.len() == 3 => Self::new(n[0], n[1], n[2]),
            _ => Err(FheError::InvalidParams(format!(
                "expected `secret_bits,noise_bits,pk_elements`, got `{s}`"
            ))),
        }
    }
}

/// Largest depth whose balanced AND-tree decrypts correctly in every trial
/// and whose static noise estimate stays positive.
fn calibrate(params: &SchemeParams) -> u32 {
    let scheme = Scheme::Toy(*params);
    let kp = ToyBackend.keygen(scheme, CALIBRATION_SEED);
    let mut rng = ChaCha20Rng::seed_from_u64(CALIBRATION_SEED);
    let mut best = 0;
    for depth in 1..=MAX_PROBED_DEPTH {
        if params.tree_budget(depth) <= 0 {
            break;
        }
        let ok = (0..CALIBRATION_TRIALS).all(|trial| {
            let leaves: Vec<bool> = (0..1usize << depth)
                .map(|_| trial == 0 || rng.gen_bool(0.9))
                .collect();
            let expected = leaves.iter().all(|&b| b);
            let cts: Vec<Ciphertext> = leaves
                .iter()
                .map(|&b| ToyBackend.encrypt(&kp.public, b, rng.gen()))
                .collect();
            let root = toy::and_tree(&kp.public, cts);
            ToyBackend.decrypt(&kp.secret, &root) == expected
        });
        if !ok {
            break;
        }
        best = depth;
    }
    best
}

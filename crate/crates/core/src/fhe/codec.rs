// SPDX-License-Identifier: Apache-2.0

//! Text encodings for evaluation keys and ciphertexts.
//!
//! Key files start with `OBLIVION-EVALKEY v1; params=<secret>,<noise>,<elements>`
//! (or `params=clear`) followed by one hex integer per line. A public key file
//! lists the public elements; a secret key file lists the secret first and then
//! the same public elements, so the fingerprint can be recomputed from it.
//!
//! A ciphertext is three lines: hex value, decimal noise budget, fingerprint.
//! Ciphertext lists separate entries with a blank line.

use std::fmt::Write as _;

use num_bigint::BigUint;
use sha2::{Digest, Sha256};

use super::{
    BackendKind, Ciphertext, EvalKeyPair, EvalPublicKey, EvalSecretKey, FheError, KeyFingerprint,
    Scheme, SchemeParams,
};

pub const EVALKEY_HEADER: &str = "OBLIVION-EVALKEY v1";

fn header(scheme: &Scheme) -> String {
    match scheme {
        Scheme::Clear => format!("{EVALKEY_HEADER}; params=clear"),
        Scheme::Toy(p) => {
            format!(
                "{EVALKEY_HEADER}; params={},{},{}",
                p.secret_bits(),
                p.noise_bits(),
                p.pk_elements()
            )
        }
    }
}

fn public_text(scheme: &Scheme, elements: &[BigUint]) -> String {
    let mut out = header(scheme);
    out.push('\n');
    for e in elements {
        let _ = writeln!(out, "{}", e.to_str_radix(16));
    }
    out
}

pub(super) fn fingerprint_of(scheme: &Scheme, elements: &[BigUint]) -> KeyFingerprint {
    let digest = Sha256::digest(public_text(scheme, elements).as_bytes());
    let mut fp = [0u8; 16];
    fp.copy_from_slice(&digest[..16]);
    KeyFingerprint(fp)
}

fn fmt_err(msg: impl Into<String>) -> FheError {
    FheError::Format(msg.into())
}

fn parse_header(line: &str) -> Result<Scheme, FheError> {
    let params = line
        .strip_prefix(EVALKEY_HEADER)
        .and_then(|r| r.strip_prefix("; params="))
        .ok_or_else(|| fmt_err(format!("expected `{EVALKEY_HEADER}; params=...` header")))?;
    if params == "clear" {
        return Ok(Scheme::Clear);
    }
    let nums: Vec<u32> = params
        .split(',')
        .map(|n| {
            n.trim()
                .parse()
                .map_err(|_| fmt_err(format!("bad parameter `{n}`")))
        })
        .collect::<Result<_, _>>()?;
    match nums.as_slice() {
        &[s, n, k] => Ok(Scheme::Toy(SchemeParams::new(s, n, k)?)),
        _ => Err(fmt_err("expected three parameters")),
    }
}

fn parse_hex(line: &str, line_no: usize) -> Result<BigUint, FheError> {
    BigUint::parse_bytes(line.trim().as_bytes(), 16)
        .ok_or_else(|| fmt_err(format!("line {line_no}: bad hex integer")))
}

fn element_count(scheme: &Scheme) -> usize {
    match scheme {
        Scheme::Clear => 1,
        Scheme::Toy(p) => p.pk_elements() as usize,
    }
}

fn parse_key_lines(text: &str) -> Result<(Scheme, Vec<BigUint>), FheError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let scheme = parse_header(
        lines
            .next()
            .ok_or_else(|| fmt_err("empty key file"))?
            .trim(),
    )?;
    let ints = lines
        .enumerate()
        .map(|(i, l)| parse_hex(l, i + 2))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((scheme, ints))
}

impl EvalPublicKey {
    pub fn to_text(&self) -> String {
        public_text(&self.scheme, &self.elements)
    }

    pub fn from_text(text: &str) -> Result<Self, FheError> {
        let (scheme, elements) = parse_key_lines(text)?;
        if elements.len() != element_count(&scheme) {
            return Err(fmt_err(format!(
                "public key needs {} elements, found {}",
                element_count(&scheme),
                elements.len()
            )));
        }
        Ok(Self::new(scheme, elements))
    }
}

impl EvalSecretKey {
    pub fn to_text(&self, public: &EvalPublicKey) -> String {
        let mut out = header(&self.scheme);
        let _ = writeln!(out, "\n{}", self.secret.to_str_radix(16));
        for e in public.elements() {
            let _ = writeln!(out, "{}", e.to_str_radix(16));
        }
        out
    }
}

impl EvalKeyPair {
    /// Secret key file contents.
    pub fn secret_text(&self) -> String {
        self.secret.to_text(&self.public)
    }

    /// Parses a secret key file back into the full pair.
    pub fn from_secret_text(text: &str) -> Result<Self, FheError> {
        let (scheme, mut ints) = parse_key_lines(text)?;
        if ints.len() != element_count(&scheme) + 1 {
            return Err(fmt_err(format!(
                "secret key file needs {} integers, found {}",
                element_count(&scheme) + 1,
                ints.len()
            )));
        }
        let secret = ints.remove(0);
        let public = EvalPublicKey::new(scheme, ints);
        let secret = EvalSecretKey {
            scheme,
            secret,
            fingerprint: public.fingerprint(),
        };
        if !secret.secret.bit(0) {
            return Err(fmt_err("secret must be odd"));
        }
        if let Scheme::Toy(_) = scheme {
            if public
                .elements()
                .iter()
                .any(|e| (e % &secret.secret).bit(0))
            {
                return Err(fmt_err(
                    "public elements do not encrypt zero under this secret",
                ));
            }
        }
        Ok(Self { public, secret })
    }
}

impl Ciphertext {
    pub fn to_text(&self) -> String {
        format!(
            "{}\n{}\n{}\n",
            self.value.to_str_radix(16),
            self.noise_budget,
            self.key
        )
    }
}

/// Serializes a list of ciphertexts.
pub fn write_ciphertexts(cts: &[Ciphertext]) -> String {
    cts.iter()
        .map(Ciphertext::to_text)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses ciphertexts written by [`write_ciphertexts`], rejecting any that
/// were not produced under `key`.
pub fn parse_ciphertexts(
    text: &str,
    key: KeyFingerprint,
    scheme: &Scheme,
) -> Result<Vec<Ciphertext>, FheError> {
    parse_entries(text, Some(key), scheme)
}

/// Like [`parse_ciphertexts`] but keeps whatever fingerprint each entry
/// names. Gate evaluation and decryption still check keys.
pub fn parse_ciphertexts_any(text: &str, scheme: &Scheme) -> Result<Vec<Ciphertext>, FheError> {
    parse_entries(text, None, scheme)
}

fn parse_entries(
    text: &str,
    key: Option<KeyFingerprint>,
    scheme: &Scheme,
) -> Result<Vec<Ciphertext>, FheError> {
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if !lines.len().is_multiple_of(3) {
        return Err(fmt_err("ciphertext list must have three lines per entry"));
    }
    let backend: BackendKind = scheme.kind();
    lines
        .chunks(3)
        .enumerate()
        .map(|(i, chunk)| {
            let value = parse_hex(chunk[0], 3 * i + 1)?;
            let noise_budget: i64 = chunk[1]
                .parse()
                .map_err(|_| fmt_err(format!("entry {i}: bad noise budget `{}`", chunk[1])))?;
            let found: KeyFingerprint = chunk[2].parse()?;
            match key {
                Some(expected) if expected != found => {
                    Err(FheError::KeyMismatch { expected, found })
                }
                _ => Ok(Ciphertext {
                    value,
                    noise_budget,
                    key: found,
                    backend,
                }),
            }
        })
        .collect()
}

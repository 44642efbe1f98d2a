// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::compile::{decode_rule, encode_rule};
use super::policy::{write_schema, SchemaParser};
use super::{AbacError, AttributeValue, Category, PolicyRuleBase, PolicySchema};
use crate::circuit::Circuit;
use crate::fhe::{
    decrypt_bits, encrypt_bits, evaluate, parse_ciphertexts, write_ciphertexts, Ciphertext,
    EvalPublicKey, EvalSecretKey, KeyFingerprint,
};

pub const ENCRYPTED_PRB_HEADER: &str = "OBLIVION-PRB v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedAttribute {
    pub name: String,
    pub category: Category,
    pub ciphertexts: Vec<Ciphertext>,
}

/// A rule base with public schema and bitwise-encrypted rule slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedPrb {
    schema: PolicySchema,
    rules: Vec<Vec<Ciphertext>>,
    key: KeyFingerprint,
}

impl EncryptedPrb {
    pub fn new(
        schema: PolicySchema,
        rules: Vec<Vec<Ciphertext>>,
        key: KeyFingerprint,
    ) -> Result<Self, AbacError> {
        schema.validate()?;
        let width = schema.rule_bits();
        for (i, r) in rules.iter().enumerate() {
            if r.len() != width {
                return Err(AbacError::Shape(format!(
                    "rule {i} has {} ciphertexts, schema needs {width}",
                    r.len()
                )));
            }
            if let Some(ct) = r.iter().find(|ct| ct.key_fingerprint() != key) {
                return Err(crate::fhe::FheError::KeyMismatch {
                    expected: key,
                    found: ct.key_fingerprint(),
                }
                .into());
            }
        }
        Ok(Self { schema, rules, key })
    }

    pub fn schema(&self) -> &PolicySchema {
        &self.schema
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    pub fn rules(&self) -> &[Vec<Ciphertext>] {
        &self.rules
    }

    pub fn key_fingerprint(&self) -> KeyFingerprint {
        self.key
    }

    pub fn decrypt(&self, sk: &EvalSecretKey) -> Result<PolicyRuleBase, AbacError> {
        let rules = self
            .rules
            .iter()
            .map(|r| decode_rule(&self.schema, &decrypt_bits(sk, r)?))
            .collect::<Result<Vec<_>, _>>()?;
        PolicyRuleBase::new(self.schema.clone(), rules)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{ENCRYPTED_PRB_HEADER}\n");
        write_schema(&mut out, &self.schema);
        let _ = writeln!(out, "rules: {}", self.rules.len());
        let _ = writeln!(out, "key: {}", self.key);
        out.push_str("ciphertexts:\n");
        let flat: Vec<Ciphertext> = self.rules.iter().flatten().cloned().collect();
        out.push_str(&write_ciphertexts(&flat));
        out
    }

    /// Parses [`EncryptedPrb::to_text`] output encrypted under `pk`.
    pub fn from_text(text: &str, pk: &EvalPublicKey) -> Result<Self, AbacError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == ENCRYPTED_PRB_HEADER => {}
            _ => {
                return Err(AbacError::Parse {
                    line: 1,
                    message: format!("expected `{ENCRYPTED_PRB_HEADER}`"),
                })
            }
        }
        let mut schema = SchemaParser::new();
        let mut rule_count = None;
        let mut key = None;
        let mut body_start = None;
        for (i, raw) in lines {
            let line_no = i + 1;
            let line = raw.trim();
            let perr = |m: String| AbacError::Parse {
                line: line_no,
                message: m,
            };
            if line.is_empty() || line == "schema:" {
                continue;
            }
            if let Some(n) = line.strip_prefix("rules:") {
                rule_count = Some(
                    n.trim()
                        .parse::<usize>()
                        .map_err(|_| perr(format!("bad rule count `{n}`")))?,
                );
            } else if let Some(k) = line.strip_prefix("key:") {
                key = Some(
                    k.trim()
                        .parse::<KeyFingerprint>()
                        .map_err(|e| perr(e.to_string()))?,
                );
            } else if line == "ciphertexts:" {
                body_start = Some(line_no);
                break;
            } else if !schema.accept(line, line_no, true)? {
                return Err(perr(format!("unexpected `{line}`")));
            }
        }
        let missing = |what: &str| AbacError::Parse {
            line: 0,
            message: format!("missing `{what}`"),
        };
        let schema = schema.finish()?;
        let rule_count = rule_count.ok_or_else(|| missing("rules:"))?;
        let key = key.ok_or_else(|| missing("key:"))?;
        let body_start = body_start.ok_or_else(|| missing("ciphertexts:"))?;
        if key != pk.fingerprint() {
            return Err(crate::fhe::FheError::KeyMismatch {
                expected: pk.fingerprint(),
                found: key,
            }
            .into());
        }
        let body: String = text.lines().skip(body_start).collect::<Vec<_>>().join("\n");
        let flat = parse_ciphertexts(&body, key, pk.scheme())?;
        let width = schema.rule_bits();
        if flat.len() != rule_count * width {
            return Err(AbacError::Shape(format!(
                "{rule_count} rules need {} ciphertexts, found {}",
                rule_count * width,
                flat.len()
            )));
        }
        let rules = if width == 0 {
            vec![Vec::new(); rule_count]
        } else {
            flat.chunks(width).map(<[_]>::to_vec).collect()
        };
        Self::new(schema, rules, key)
    }
}

pub fn encrypt_attributes(
    pk: &EvalPublicKey,
    attrs: &[AttributeValue],
    seed: u64,
) -> Vec<EncryptedAttribute> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    attrs
        .iter()
        .map(|a| EncryptedAttribute {
            name: a.name.clone(),
            category: a.category,
            ciphertexts: encrypt_bits(pk, &a.bits, rng.next_u64()),
        })
        .collect()
}

pub fn encrypt_prb(
    pk: &EvalPublicKey,
    prb: &PolicyRuleBase,
    seed: u64,
) -> Result<EncryptedPrb, AbacError> {
    prb.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rules = prb
        .rules
        .iter()
        .map(|r| encrypt_bits(pk, &encode_rule(&prb.schema, r), rng.next_u64()))
        .collect();
    EncryptedPrb::new(prb.schema.clone(), rules, pk.fingerprint())
}

/// Evaluates the access circuit over encrypted request attributes, an
/// encrypted func id and the encrypted rule base. The result is a single
/// ciphertext the evaluator cannot read.
pub fn verify_access(
    pk: &EvalPublicKey,
    canaccess: &Circuit,
    enc_attrs: &[EncryptedAttribute],
    enc_func_id: &[Ciphertext],
    enc_prb: &EncryptedPrb,
) -> Result<Ciphertext, AbacError> {
    let schema = &enc_prb.schema;
    let expected_inputs =
        schema.request_bits() + schema.func_id_width + enc_prb.rule_count() * schema.rule_bits();
    if canaccess.num_inputs() != expected_inputs || canaccess.num_outputs() != 1 {
        return Err(AbacError::Shape(format!(
            "access circuit takes {} inputs, request and rule base supply {expected_inputs}",
            canaccess.num_inputs()
        )));
    }
    if enc_func_id.len() != schema.func_id_width {
        return Err(AbacError::Shape(format!(
            "func id needs {} bits, got {}",
            schema.func_id_width,
            enc_func_id.len()
        )));
    }
    let mut inputs = Vec::with_capacity(expected_inputs);
    for def in &schema.attributes {
        let found = enc_attrs
            .iter()
            .find(|a| a.name == def.name)
            .ok_or_else(|| {
                AbacError::Shape(format!("request is missing attribute `{}`", def.name))
            })?;
        if found.ciphertexts.len() != def.width || found.category != def.category {
            return Err(AbacError::Shape(format!(
                "attribute `{}` must be a {}-bit {} attribute",
                def.name, def.width, def.category
            )));
        }
        inputs.extend_from_slice(&found.ciphertexts);
    }
    if let Some(extra) = enc_attrs
        .iter()
        .find(|a| schema.attribute(&a.name).is_none())
    {
        return Err(AbacError::UnknownAttribute(extra.name.clone()));
    }
    inputs.extend_from_slice(enc_func_id);
    for rule in &enc_prb.rules {
        inputs.extend_from_slice(rule);
    }
    let mut out = evaluate(pk, canaccess, &inputs)?;
    Ok(out.remove(0))
}

// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use super::{AbacError, PolicyRule, PolicySchema};
use crate::circuit::{Circuit, CircuitBuilder, Wire};
use crate::cloudserver::FuncId;

/// Slot encoding of one rule; see the module docs for the layout.
pub fn encode_rule(schema: &PolicySchema, rule: &PolicyRule) -> Vec<bool> {
    let mut bits = Vec::with_capacity(schema.rule_bits());
    for def in &schema.attributes {
        match rule.predicate(&def.name) {
            Some(value) => {
                bits.push(true);
                bits.extend_from_slice(value);
            }
            None => bits.extend(std::iter::repeat_n(false, 1 + def.width)),
        }
    }
    let any = rule.permitted_funcs.is_empty();
    bits.extend(
        (0..schema.func_space() as u64).map(|f| any || rule.permitted_funcs.contains(&FuncId(f))),
    );
    bits
}

/// Inverse of [`encode_rule`]. Rejects encodings no rule produces, such as
/// a disabled slot with nonzero value bits or an empty bitmap.
pub fn decode_rule(schema: &PolicySchema, bits: &[bool]) -> Result<PolicyRule, AbacError> {
    if bits.len() != schema.rule_bits() {
        return Err(AbacError::Shape(format!(
            "rule encoding needs {} bits, got {}",
            schema.rule_bits(),
            bits.len()
        )));
    }
    let non_canonical = || AbacError::Shape("non-canonical rule encoding".into());
    let mut rule = PolicyRule::new();
    let mut pos = 0;
    for def in &schema.attributes {
        let value = &bits[pos + 1..pos + 1 + def.width];
        if bits[pos] {
            rule.predicates.push((def.name.clone(), value.to_vec()));
        } else if value.iter().any(|&b| b) {
            return Err(non_canonical());
        }
        pos += 1 + def.width;
    }
    let bitmap = &bits[pos..];
    if bitmap.iter().all(|&b| !b) {
        return Err(non_canonical());
    }
    if !bitmap.iter().all(|&b| b) {
        rule.permitted_funcs = bitmap
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(f, _)| FuncId(f as u64))
            .collect::<BTreeSet<_>>();
    }
    Ok(rule)
}

/// The access-decision circuit for `rule_count` rules over `schema`.
///
/// Inputs, in order: request attribute bits in schema order, requested
/// func-id bits, then each rule's slot encoding. Single output: 1 iff some
/// rule grants the request.
pub fn compile_canaccess(schema: &PolicySchema, rule_count: usize) -> Result<Circuit, AbacError> {
    schema.validate()?;
    let request_bits = schema.request_bits();
    let fw = schema.func_id_width;
    let num_inputs = request_bits + fw + rule_count * schema.rule_bits();
    let mut b = CircuitBuilder::new(num_inputs);

    let mut request: Vec<Vec<Wire>> = Vec::new();
    let mut next = 0;
    for def in &schema.attributes {
        request.push(b.inputs(next, def.width));
        next += def.width;
    }
    let func = b.inputs(next, fw);
    next += fw;
    // minterms[j] = 1 iff the requested func id is j; exactly one is set
    let minterms: Vec<Wire> = (0..schema.func_space())
        .map(|j| {
            let lits: Vec<Wire> = func
                .iter()
                .enumerate()
                .map(|(i, &w)| if j >> i & 1 == 1 { w } else { b.not(w) })
                .collect();
            b.and_all(&lits)
        })
        .collect();

    let mut rules = Vec::with_capacity(rule_count);
    for _ in 0..rule_count {
        let mut terms = Vec::new();
        for (def, req) in schema.attributes.iter().zip(&request) {
            let enabled = b.input(next);
            let value = b.inputs(next + 1, def.width);
            next += 1 + def.width;
            // disabled slots match anything: NOT(enabled AND NOT equal)
            let eq = b.equal(req, &value);
            let ne = b.not(eq);
            let miss = b.and(enabled, ne);
            terms.push(b.not(miss));
        }
        // the minterms are mutually exclusive, so XOR acts as OR here
        let mut func_ok = None;
        for &m in &minterms {
            let permitted = b.and(b.input(next), m);
            next += 1;
            func_ok = Some(match func_ok {
                None => permitted,
                Some(acc) => b.xor(acc, permitted),
            });
        }
        terms.push(func_ok.expect("func space is never empty"));
        rules.push(b.and_all(&terms));
    }
    debug_assert_eq!(next, num_inputs);
    let out = b.or_all(&rules);
    Ok(b.finish(vec![out]))
}

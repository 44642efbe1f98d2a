// SPDX-License-Identifier: Apache-2.0

//! Standard circuits. Operands are little-endian and laid out operand after
//! operand in the input vector.

use super::{Circuit, CircuitBuilder, CircuitError};

/// `n` inputs passed straight through.
pub fn identity(n: usize) -> Circuit {
    CircuitBuilder::new(n).finish((0..n).collect())
}

/// Inputs `a[0..width] ++ b[0..width]`; one output, 1 iff `a == b`.
pub fn equality(width: usize) -> Circuit {
    assert!(width > 0, "equality width must be positive");
    let mut b = CircuitBuilder::new(2 * width);
    let x = b.inputs(0, width);
    let y = b.inputs(width, width);
    let eq = b.equal(&x, &y);
    b.finish(vec![eq])
}

/// Inputs `s ++ a[0..width] ++ b[0..width]`; outputs `a` when `s = 1`,
/// `b` otherwise, bitwise `(s AND a) XOR ((NOT s) AND b)`.
pub fn mux(width: usize) -> Circuit {
    assert!(width > 0, "mux width must be positive");
    let mut b = CircuitBuilder::new(1 + 2 * width);
    let s = b.input(0);
    let ns = b.not(s);
    let outputs = (0..width)
        .map(|i| {
            let hi = b.and(s, 1 + i);
            let lo = b.and(ns, 1 + width + i);
            b.xor(hi, lo)
        })
        .collect();
    b.finish(outputs)
}

/// Ripple-carry adder: inputs `a[0..width] ++ b[0..width]`, `width + 1`
/// sum bits out.
pub fn adder(width: usize) -> Circuit {
    assert!(width > 0, "adder width must be positive");
    let mut b = CircuitBuilder::new(2 * width);
    let mut outputs = Vec::with_capacity(width + 1);
    let mut carry = None;
    for i in 0..width {
        let (x, y) = (i, width + i);
        let half = b.xor(x, y);
        let both = b.and(x, y);
        match carry {
            None => {
                outputs.push(half);
                carry = Some(both);
            }
            Some(c) => {
                outputs.push(b.xor(half, c));
                // the two carry terms are never both set, so XOR acts as OR
                let prop = b.and(c, half);
                carry = Some(b.xor(both, prop));
            }
        }
    }
    outputs.push(carry.expect("width > 0"));
    b.finish(outputs)
}

/// `n` inputs, one output: their conjunction (1 for `n = 0`).
pub fn and_tree(n: usize) -> Circuit {
    let mut b = CircuitBuilder::new(n);
    let ins = b.inputs(0, n);
    let out = b.and_all(&ins);
    b.finish(vec![out])
}

/// `n` inputs, one output: their disjunction (0 for `n = 0`).
pub fn or_tree(n: usize) -> Circuit {
    let mut b = CircuitBuilder::new(n);
    let ins = b.inputs(0, n);
    let out = b.or_all(&ins);
    b.finish(vec![out])
}

/// `second` applied to the outputs of `first`.
pub fn compose(first: &Circuit, second: &Circuit) -> Result<Circuit, CircuitError> {
    if first.num_outputs() != second.num_inputs() {
        return Err(CircuitError::ComposeMismatch {
            outputs: first.num_outputs(),
            inputs: second.num_inputs(),
        });
    }
    let mut b = CircuitBuilder::new(first.num_inputs());
    let ins = b.inputs(0, first.num_inputs());
    let mid = b.embed(first, &ins)?;
    let out = b.embed(second, &mid)?;
    Ok(b.finish(out))
}

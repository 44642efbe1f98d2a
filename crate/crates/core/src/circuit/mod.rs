// SPDX-License-Identifier: Apache-2.0

//! Boolean circuits over the gate basis `{XOR, AND, NOT, CONST0, CONST1}`.
//!
//! A [`Circuit`] is a topologically ordered netlist. Wires `0..num_inputs`
//! are the inputs; gate `k` defines wire `num_inputs + k`. Circuits are the
//! single representation for user functions and for the compiled access
//! policy, and they are what the homomorphic backends evaluate.
//!
//! Multi-bit integers are little-endian everywhere in this crate.

mod builder;
mod builders;
mod netlist;

pub use builder::CircuitBuilder;
pub use builders::{adder, and_tree, compose, equality, identity, mux, or_tree};
pub use netlist::NETLIST_HEADER;

use thiserror::Error;

/// Index of a wire inside a circuit.
pub type Wire = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CircuitError {
    #[error("circuit expects {expected} inputs, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("gate {gate} references wire w{wire}, which is not defined before it")]
    Topology { gate: usize, wire: Wire },
    #[error("output references undefined wire w{0}")]
    InvalidOutput(Wire),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: gate references wire w{wire}, which is not defined before it")]
    TopologyAt { line: usize, wire: Wire },
    #[error("cannot compose: first circuit has {outputs} outputs, second expects {inputs} inputs")]
    ComposeMismatch { outputs: usize, inputs: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    Xor(Wire, Wire),
    And(Wire, Wire),
    Not(Wire),
    Const0,
    Const1,
}

impl Gate {
    pub fn operands(&self) -> impl Iterator<Item = Wire> {
        let (a, b) = match *self {
            Gate::Xor(a, b) | Gate::And(a, b) => (Some(a), Some(b)),
            Gate::Not(a) => (Some(a), None),
            Gate::Const0 | Gate::Const1 => (None, None),
        };
        a.into_iter().chain(b)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Gate::Xor(..) => "XOR",
            Gate::And(..) => "AND",
            Gate::Not(_) => "NOT",
            Gate::Const0 => "CONST0",
            Gate::Const1 => "CONST1",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Circuit {
    num_inputs: usize,
    gates: Vec<Gate>,
    outputs: Vec<Wire>,
}

impl Circuit {
    /// Builds a circuit, rejecting gate lists that are not in topological
    /// order and outputs that reference undefined wires.
    pub fn new(
        num_inputs: usize,
        gates: Vec<Gate>,
        outputs: Vec<Wire>,
    ) -> Result<Self, CircuitError> {
        for (k, gate) in gates.iter().enumerate() {
            let defined = num_inputs + k;
            if let Some(wire) = gate.operands().find(|&w| w >= defined) {
                return Err(CircuitError::Topology { gate: k, wire });
            }
        }
        let wires = num_inputs + gates.len();
        if let Some(&w) = outputs.iter().find(|&&w| w >= wires) {
            return Err(CircuitError::InvalidOutput(w));
        }
        Ok(Self {
            num_inputs,
            gates,
            outputs,
        })
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn outputs(&self) -> &[Wire] {
        &self.outputs
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn num_wires(&self) -> usize {
        self.num_inputs + self.gates.len()
    }

    /// Plaintext gate-by-gate evaluation.
    pub fn eval_plain(&self, inputs: &[bool]) -> Result<Vec<bool>, CircuitError> {
        if inputs.len() != self.num_inputs {
            return Err(CircuitError::ArityMismatch {
                expected: self.num_inputs,
                got: inputs.len(),
            });
        }
        let mut wires = Vec::with_capacity(self.num_wires());
        wires.extend_from_slice(inputs);
        for gate in &self.gates {
            let v = match *gate {
                Gate::Xor(a, b) => wires[a] ^ wires[b],
                Gate::And(a, b) => wires[a] & wires[b],
                Gate::Not(a) => !wires[a],
                Gate::Const0 => false,
                Gate::Const1 => true,
            };
            wires.push(v);
        }
        Ok(self.outputs.iter().map(|&w| wires[w]).collect())
    }

    /// Number of AND gates on the deepest path, per wire.
    pub fn wire_depths(&self) -> Vec<u32> {
        let mut depth = vec![0u32; self.num_wires()];
        for (k, gate) in self.gates.iter().enumerate() {
            depth[self.num_inputs + k] = match *gate {
                Gate::And(a, b) => depth[a].max(depth[b]) + 1,
                Gate::Xor(a, b) => depth[a].max(depth[b]),
                Gate::Not(a) => depth[a],
                Gate::Const0 | Gate::Const1 => 0,
            };
        }
        depth
    }

    /// Maximum number of AND gates on any input-to-output path.
    pub fn mult_depth(&self) -> u32 {
        let depth = self.wire_depths();
        self.outputs.iter().map(|&w| depth[w]).max().unwrap_or(0)
    }

    pub fn and_count(&self) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(g, Gate::And(..)))
            .count()
    }
}

pub(crate) fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Little-endian bits of `value`, truncated to `width`.
pub fn to_bits(value: u64, width: usize) -> Vec<bool> {
    (0..width)
        .map(|i| i < 64 && (value >> i) & 1 == 1)
        .collect()
}

/// Inverse of [`to_bits`]; bits beyond 64 are ignored.
pub fn from_bits(bits: &[bool]) -> u64 {
    bits.iter()
        .take(64)
        .enumerate()
        .fold(0, |acc, (i, &b)| acc | ((b as u64) << i))
}

// SPDX-License-Identifier: Apache-2.0

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{Circuit, CircuitError, Gate, Wire};

/// Incremental circuit construction.
///
/// The builder tracks the multiplicative depth of every wire so that the
/// associative folds ([`and_all`](Self::and_all), [`or_all`](Self::or_all))
/// always combine the two shallowest operands first.
#[derive(Debug, Clone)]
pub struct CircuitBuilder {
    num_inputs: usize,
    gates: Vec<Gate>,
    depth: Vec<u32>,
    const0: Option<Wire>,
    const1: Option<Wire>,
}

impl CircuitBuilder {
    pub fn new(num_inputs: usize) -> Self {
        Self {
            num_inputs,
            gates: Vec::new(),
            depth: vec![0; num_inputs],
            const0: None,
            const1: None,
        }
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn input(&self, i: usize) -> Wire {
        assert!(
            i < self.num_inputs,
            "input {i} out of range ({} inputs)",
            self.num_inputs
        );
        i
    }

    /// Wires `start..start + len`.
    pub fn inputs(&self, start: usize, len: usize) -> Vec<Wire> {
        (start..start + len).map(|i| self.input(i)).collect()
    }

    pub fn depth_of(&self, w: Wire) -> u32 {
        self.depth[w]
    }

    fn push(&mut self, gate: Gate, depth: u32) -> Wire {
        let wire = self.num_inputs + self.gates.len();
        debug_assert!(gate.operands().all(|w| w < wire));
        self.gates.push(gate);
        self.depth.push(depth);
        wire
    }

    pub fn xor(&mut self, a: Wire, b: Wire) -> Wire {
        let d = self.depth[a].max(self.depth[b]);
        self.push(Gate::Xor(a, b), d)
    }

    pub fn and(&mut self, a: Wire, b: Wire) -> Wire {
        let d = self.depth[a].max(self.depth[b]) + 1;
        self.push(Gate::And(a, b), d)
    }

    pub fn not(&mut self, a: Wire) -> Wire {
        let d = self.depth[a];
        self.push(Gate::Not(a), d)
    }

    pub fn xnor(&mut self, a: Wire, b: Wire) -> Wire {
        let x = self.xor(a, b);
        self.not(x)
    }

    /// `a OR b` as `(a XOR b) XOR (a AND b)`.
    pub fn or(&mut self, a: Wire, b: Wire) -> Wire {
        let x = self.xor(a, b);
        let y = self.and(a, b);
        self.xor(x, y)
    }

    pub fn constant(&mut self, bit: bool) -> Wire {
        let slot = if bit { self.const1 } else { self.const0 };
        if let Some(w) = slot {
            return w;
        }
        let w = self.push(if bit { Gate::Const1 } else { Gate::Const0 }, 0);
        if bit {
            self.const1 = Some(w);
        } else {
            self.const0 = Some(w);
        }
        w
    }

    fn fold_shallowest(
        &mut self,
        wires: &[Wire],
        empty: bool,
        op: fn(&mut Self, Wire, Wire) -> Wire,
    ) -> Wire {
        if wires.is_empty() {
            return self.constant(empty);
        }
        // (depth, insertion order) keeps ties deterministic.
        let mut heap: BinaryHeap<Reverse<(u32, usize, Wire)>> = wires
            .iter()
            .enumerate()
            .map(|(i, &w)| Reverse((self.depth[w], i, w)))
            .collect();
        let mut order = wires.len();
        while heap.len() > 1 {
            let Reverse((_, _, a)) = heap.pop().unwrap();
            let Reverse((_, _, b)) = heap.pop().unwrap();
            let c = op(self, a, b);
            heap.push(Reverse((self.depth[c], order, c)));
            order += 1;
        }
        heap.pop().unwrap().0 .2
    }

    /// Conjunction of all wires; `1` when empty.
    pub fn and_all(&mut self, wires: &[Wire]) -> Wire {
        self.fold_shallowest(wires, true, Self::and)
    }

    /// Disjunction of all wires; `0` when empty.
    pub fn or_all(&mut self, wires: &[Wire]) -> Wire {
        self.fold_shallowest(wires, false, Self::or)
    }

    /// 1 iff the two little-endian operands are bitwise equal.
    pub fn equal(&mut self, a: &[Wire], b: &[Wire]) -> Wire {
        assert_eq!(
            a.len(),
            b.len(),
            "equality operands must have the same width"
        );
        let bits: Vec<Wire> = a.iter().zip(b).map(|(&x, &y)| self.xnor(x, y)).collect();
        self.and_all(&bits)
    }

    /// Inlines `circuit` with its inputs bound to `inputs`; returns its outputs.
    pub fn embed(&mut self, circuit: &Circuit, inputs: &[Wire]) -> Result<Vec<Wire>, CircuitError> {
        if inputs.len() != circuit.num_inputs() {
            return Err(CircuitError::ArityMismatch {
                expected: circuit.num_inputs(),
                got: inputs.len(),
            });
        }
        let mut map: Vec<Wire> = inputs.to_vec();
        for gate in circuit.gates() {
            let w = match *gate {
                Gate::Xor(a, b) => self.xor(map[a], map[b]),
                Gate::And(a, b) => self.and(map[a], map[b]),
                Gate::Not(a) => self.not(map[a]),
                Gate::Const0 => self.push(Gate::Const0, 0),
                Gate::Const1 => self.push(Gate::Const1, 0),
            };
            map.push(w);
        }
        Ok(circuit.outputs().iter().map(|&o| map[o]).collect())
    }

    pub fn finish(self, outputs: Vec<Wire>) -> Circuit {
        Circuit::new(self.num_inputs, self.gates, outputs)
            .expect("builder only emits topologically ordered gates")
    }
}

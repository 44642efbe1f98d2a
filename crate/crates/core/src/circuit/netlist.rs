// SPDX-License-Identifier: Apache-2.0

//! Line-based netlist text format.
//!
//! ```text
//! OBLIVION-CIRCUIT v1 inputs=2
//! g0 = XOR w0 w1
//! g1 = AND w0 w1
//! outputs = w2 w3
//! ```

use std::fmt::Write as _;
use std::str::FromStr;

use super::{Circuit, CircuitError, Gate, Wire};

pub const NETLIST_HEADER: &str = "OBLIVION-CIRCUIT v1";

impl Circuit {
    pub fn to_netlist(&self) -> String {
        let mut out = format!("{NETLIST_HEADER} inputs={}\n", self.num_inputs);
        for (k, gate) in self.gates.iter().enumerate() {
            let _ = write!(out, "g{k} = {}", gate.name());
            for w in gate.operands() {
                let _ = write!(out, " w{w}");
            }
            out.push('\n');
        }
        out.push_str("outputs =");
        for w in &self.outputs {
            let _ = write!(out, " w{w}");
        }
        out.push('\n');
        out
    }

    pub fn from_netlist(text: &str) -> Result<Self, CircuitError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (line_no, header) = lines.next().ok_or_else(|| parse_err(1, "empty netlist"))?;
        let rest = header.strip_prefix(NETLIST_HEADER).ok_or_else(|| {
            parse_err(
                line_no,
                format!("expected header `{NETLIST_HEADER} inputs=<n>`"),
            )
        })?;
        let num_inputs: usize = rest
            .trim()
            .strip_prefix("inputs=")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| parse_err(line_no, "malformed inputs count"))?;

        let mut gates = Vec::new();
        let mut outputs = None;
        for (line_no, line) in lines {
            if outputs.is_some() {
                return Err(parse_err(line_no, "content after outputs line"));
            }
            let (lhs, rhs) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, "expected `=`"))?;
            let lhs = lhs.trim();
            let mut tokens = rhs.split_whitespace();
            if lhs == "outputs" {
                let wires = tokens
                    .map(|t| wire(t, line_no))
                    .collect::<Result<Vec<_>, _>>()?;
                let defined = num_inputs + gates.len();
                if let Some(&w) = wires.iter().find(|&&w| w >= defined) {
                    return Err(CircuitError::TopologyAt {
                        line: line_no,
                        wire: w,
                    });
                }
                outputs = Some(wires);
                continue;
            }
            let k: usize = lhs
                .strip_prefix('g')
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| parse_err(line_no, format!("bad gate name `{lhs}`")))?;
            if k != gates.len() {
                return Err(parse_err(
                    line_no,
                    format!("expected gate g{}, found g{k}", gates.len()),
                ));
            }
            let kind = tokens
                .next()
                .ok_or_else(|| parse_err(line_no, "missing gate kind"))?;
            let operands = tokens
                .map(|t| wire(t, line_no))
                .collect::<Result<Vec<_>, _>>()?;
            let gate = match (kind, operands.as_slice()) {
                ("XOR", &[a, b]) => Gate::Xor(a, b),
                ("AND", &[a, b]) => Gate::And(a, b),
                ("NOT", &[a]) => Gate::Not(a),
                ("CONST0", &[]) => Gate::Const0,
                ("CONST1", &[]) => Gate::Const1,
                _ => {
                    return Err(parse_err(
                        line_no,
                        format!(
                            "`{kind}` with {} operands is not a valid gate",
                            operands.len()
                        ),
                    ))
                }
            };
            let defined = num_inputs + gates.len();
            if let Some(w) = gate.operands().find(|&w| w >= defined) {
                return Err(CircuitError::TopologyAt {
                    line: line_no,
                    wire: w,
                });
            }
            gates.push(gate);
        }
        let outputs =
            outputs.ok_or_else(|| parse_err(text.lines().count(), "missing outputs line"))?;
        Circuit::new(num_inputs, gates, outputs)
    }
}

impl FromStr for Circuit {
    type Err = CircuitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Circuit::from_netlist(s)
    }
}

fn wire(token: &str, line: usize) -> Result<Wire, CircuitError> {
    token
        .strip_prefix('w')
        .and_then(|w| w.parse().ok())
        .ok_or_else(|| parse_err(line, format!("bad wire `{token}`")))
}

fn parse_err(line: usize, message: impl Into<String>) -> CircuitError {
    CircuitError::Parse {
        line,
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{adder, identity, mux};
    use proptest::prelude::*;

    #[test]
    fn identity_round_trip() {
        let c = identity(1);
        assert_eq!(
            c.to_netlist(),
            "OBLIVION-CIRCUIT v1 inputs=1\noutputs = w0\n"
        );
        assert_eq!(Circuit::from_netlist(&c.to_netlist()).unwrap(), c);
    }

    #[test]
    fn adder_round_trip() {
        let c = adder(4);
        let back: Circuit = c.to_netlist().parse().unwrap();
        assert_eq!(back, c);
        assert_eq!(back.gates().len(), c.gates().len());
        assert_eq!(back.outputs(), c.outputs());
    }

    #[test]
    fn forward_reference_is_a_topology_error() {
        let text = "OBLIVION-CIRCUIT v1 inputs=2\ng0 = XOR w0 w3\ng1 = NOT w0\noutputs = w2\n";
        assert_eq!(
            Circuit::from_netlist(text).unwrap_err(),
            CircuitError::TopologyAt { line: 2, wire: 3 }
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "OBLIVION-CIRCUIT v1 inputs=2\ng0 = XOR w0\noutputs = w2\n";
        assert!(matches!(
            Circuit::from_netlist(text),
            Err(CircuitError::Parse { line: 2, .. })
        ));
        let text = "OBLIVION-CIRCUIT v1 inputs=2\ng0 = AND w0 w1\n";
        assert!(matches!(
            Circuit::from_netlist(text),
            Err(CircuitError::Parse { .. })
        ));
        assert!(matches!(
            Circuit::from_netlist("garbage"),
            Err(CircuitError::Parse { line: 1, .. })
        ));
        let text = "OBLIVION-CIRCUIT v1 inputs=1\ng1 = NOT w0\noutputs = w1\n";
        assert!(matches!(
            Circuit::from_netlist(text),
            Err(CircuitError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn comments_and_constants_parse() {
        let text = "# a constant\nOBLIVION-CIRCUIT v1 inputs=0\ng0 = CONST1\ng1 = CONST0\noutputs = w0 w1\n";
        let c = Circuit::from_netlist(text).unwrap();
        assert_eq!(c.eval_plain(&[]).unwrap(), vec![true, false]);
        assert_eq!(mux(2).to_netlist().parse::<Circuit>().unwrap(), mux(2));
    }

    fn arb_circuit() -> impl Strategy<Value = Circuit> {
        (
            0usize..5,
            prop::collection::vec((0u8..5, any::<u16>(), any::<u16>()), 0..24),
            any::<u16>(),
        )
            .prop_map(|(n, raw, seed)| {
                let mut gates = Vec::new();
                for (k, (kind, a, b)) in raw.into_iter().enumerate() {
                    let defined = n + k;
                    if defined == 0 {
                        gates.push(Gate::Const1);
                        continue;
                    }
                    let (a, b) = (a as usize % defined, b as usize % defined);
                    gates.push(match kind {
                        0 => Gate::Xor(a, b),
                        1 => Gate::And(a, b),
                        2 => Gate::Not(a),
                        3 => Gate::Const0,
                        _ => Gate::Const1,
                    });
                }
                let wires = n + gates.len();
                let outputs = if wires == 0 {
                    vec![]
                } else {
                    vec![seed as usize % wires, 0]
                };
                let outputs = outputs.into_iter().filter(|&w| w < wires).collect();
                Circuit::new(n, gates, outputs).unwrap()
            })
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(c in arb_circuit()) {
            prop_assert_eq!(Circuit::from_netlist(&c.to_netlist()).unwrap(), c);
        }
    }
}

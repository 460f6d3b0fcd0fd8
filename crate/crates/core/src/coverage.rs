// SPDX-License-Identifier: Apache-2.0
//! Brute-force reachability of two-input Boolean functions with CRS cells.
//!
//! A function of (a, b) is represented by its 4-entry truth table packed into
//! a nibble: bit `2a + b` holds f(a, b).

use std::collections::BTreeSet;

use crate::crs::fsm_next;

/// Line signal available to the control unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Operand {
    Zero,
    One,
    A,
    B,
    NotA,
    NotB,
}

impl Operand {
    pub const ALL: [Operand; 6] = [
        Operand::Zero,
        Operand::One,
        Operand::A,
        Operand::B,
        Operand::NotA,
        Operand::NotB,
    ];

    pub fn eval(self, a: bool, b: bool) -> bool {
        match self {
            Operand::Zero => false,
            Operand::One => true,
            Operand::A => a,
            Operand::B => b,
            Operand::NotA => !a,
            Operand::NotB => !b,
        }
    }
}

pub type TruthTable = u8;

pub const XOR: TruthTable = 0b0110;
pub const XNOR: TruthTable = 0b1001;

pub fn truth_table(f: impl Fn(bool, bool) -> bool) -> TruthTable {
    let mut t = 0;
    for idx in 0..4u8 {
        if f(idx & 2 != 0, idx & 1 != 0) {
            t |= 1 << idx;
        }
    }
    t
}

fn bit(t: TruthTable, a: bool, b: bool) -> bool {
    t >> (2 * a as u8 + b as u8) & 1 == 1
}

/// Functions computable by one cell in one step: initial state from {0, 1},
/// wordline and bitline from [`Operand::ALL`].
pub fn single_step_functions() -> BTreeSet<TruthTable> {
    let mut out = BTreeSet::new();
    for z in [false, true] {
        for wl in Operand::ALL {
            for bl in Operand::ALL {
                out.insert(truth_table(|a, b| {
                    fsm_next(z, wl.eval(a, b), bl.eval(a, b))
                }));
            }
        }
    }
    out
}

/// Functions computable in two steps when a second cell's read-out may be
/// used as a line signal.
///
/// Step 1 computes a single-step function in each of two cells (A and B).
/// Step 2 reads cell A and forwards its value onto the wordline or bitline of
/// cell B, the other line carrying any [`Operand`].
pub fn two_step_functions() -> BTreeSet<TruthTable> {
    let singles = single_step_functions();
    let mut out = singles.clone();
    for &fa in &singles {
        for &fb in &singles {
            for other in Operand::ALL {
                let forwarded_on_wl =
                    truth_table(|a, b| fsm_next(bit(fb, a, b), bit(fa, a, b), other.eval(a, b)));
                let forwarded_on_bl =
                    truth_table(|a, b| fsm_next(bit(fb, a, b), other.eval(a, b), bit(fa, a, b)));
                out.insert(forwarded_on_wl);
                out.insert(forwarded_on_bl);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_table_packing() {
        assert_eq!(truth_table(|a, b| a ^ b), XOR);
        assert_eq!(truth_table(|a, b| a == b), XNOR);
        assert_eq!(truth_table(|_, _| false), 0);
        assert_eq!(truth_table(|_, _| true), 0b1111);
    }

    #[test]
    fn one_step_misses_exactly_xor_and_xnor() {
        let reach = single_step_functions();
        assert!(!reach.contains(&XOR));
        assert!(!reach.contains(&XNOR));
        assert_eq!(reach.len(), 14);
    }

    #[test]
    fn two_steps_reach_everything() {
        let reach = two_step_functions();
        assert!(reach.contains(&XOR) && reach.contains(&XNOR));
        assert_eq!(reach.len(), 16);
    }
}

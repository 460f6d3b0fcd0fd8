// SPDX-License-Identifier: Apache-2.0
//! Carry and sum of a full adder expressed as CRS state transitions.
//!
//! The stored state plays the role of the incoming carry. Carry and the first
//! sum step both drive `a` on the wordline, so they can share a cycle on two
//! different cells.

use crate::crs::fsm_next;

/// Wordline / bitline assignment of one FSM transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Drive {
    pub wl: bool,
    pub bl: bool,
}

impl Drive {
    pub fn apply(self, state: bool) -> bool {
        fsm_next(state, self.wl, self.bl)
    }
}

/// Drive that turns a stored `c_i` into `c_{i+1}`.
pub fn carry_drive(a: bool, b: bool) -> Drive {
    Drive { wl: a, bl: !b }
}

/// Drive that turns a stored `c_i` into the intermediate sum `s'_i`.
pub fn sum_intermediate_drive(a: bool, b: bool) -> Drive {
    Drive { wl: a, bl: b }
}

/// Drive that turns a stored `s'_i` into `s_i`, given the next carry.
pub fn sum_final_drive(b: bool, c_next: bool) -> Drive {
    Drive { wl: b, bl: c_next }
}

pub fn carry_next(a: bool, b: bool, c: bool) -> bool {
    carry_drive(a, b).apply(c)
}

/// Majority function, independent of the FSM.
pub fn carry_oracle(a: bool, b: bool, c: bool) -> bool {
    (a && b) || (a && c) || (b && c)
}

pub fn sum_intermediate(a: bool, b: bool, c: bool) -> bool {
    sum_intermediate_drive(a, b).apply(c)
}

pub fn sum_final(s_prime: bool, b: bool, c_next: bool) -> bool {
    sum_final_drive(b, c_next).apply(s_prime)
}

/// Sum bit through the two-cycle pipeline.
pub fn sum_pipeline(a: bool, b: bool, c: bool) -> bool {
    sum_final(sum_intermediate(a, b, c), b, carry_next(a, b, c))
}

// SPDX-License-Identifier: Apache-2.0
//! Logic-in-memory arithmetic on complementary resistive switches: an ECM
//! compact device model, CRS cells, microcode for in-array adders, and
//! behavioral / device-level executors.
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arith;
pub mod cli;
pub mod coverage;
pub mod crs;
pub mod ecm;
pub mod error;
pub mod exec;
pub mod integrate;
pub mod microcode;

pub use error::{Error, Result};

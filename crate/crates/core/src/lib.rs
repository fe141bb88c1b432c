//! Simulated-student dialogue engine for teacher questioning practice.
// Errors carry exact rationals for conflict reports; NaN-rejecting
// comparisons are written negated on purpose.
#![allow(clippy::result_large_err, clippy::large_enum_variant, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod corpus;
pub mod dialogue;
pub mod entity;
pub mod nlu;
pub mod rational;
pub mod scenario;
pub mod shipped;
pub mod supervisor;
pub mod uncertainty;

//! Trace-based soft-error propagation analysis.
//!
//! The pipeline runs a program in the [`mirvm`] interpreter, injects a
//! single bit flip, aligns the faulty trace with the golden one
//! ([`traceio`]), tracks alive corrupted locations ([`acl`]), and looks
//! for computation patterns that mask or shrink the error ([`patterns`]).
//! [`campaign`] measures success rates statistically and [`model`] fits
//! pattern rates to them.

pub mod mirvm;
pub mod traceio;
pub mod acl;
pub mod dddg;
pub mod model;
pub mod campaign;
pub mod patterns;
pub mod analysis;
pub mod synth;

//! The mini-IR: values, locations, programs, a parser and a tracing
//! interpreter with single-bit-flip injection.

mod ast;
mod exec;
mod location;
mod parse;
mod value;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use ast::*;
pub use exec::execute;
pub use location::{Location, ParseLocationError};
pub use parse::{parse_inputs, parse_program, ParseError, ParseErrorKind};
pub use value::{flip_bit, Value, ValueTag};

use crate::traceio::Trace;

pub const DEFAULT_BUDGET: u64 = 10_000_000;
pub const DEFAULT_MEMORY_SIZE: u64 = 65_536;
/// Frames deeper than this trap instead of exhausting the host stack.
pub const MAX_CALL_DEPTH: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    /// Operand slot `k` in trace order.
    Operand(u32),
    Result,
}

impl fmt::Display for FaultTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultTarget::Operand(k) => write!(f, "operand{k}"),
            FaultTarget::Result => f.write_str("result"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub index: u64,
    pub target: FaultTarget,
    pub bit: u8,
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {} bit {}", self.index, self.target, self.bit)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum TrapReason {
    #[error("integer divide by zero")]
    DivideByZero,
    #[error("memory out of bounds (address {addr})")]
    MemoryOutOfBounds { addr: i64 },
    #[error("read of uninitialized memory M[{addr}]")]
    UninitializedMemory { addr: u64 },
    #[error("read of undefined location {location}")]
    UndefinedLocation { location: String },
    #[error("type mismatch in {opcode}")]
    TypeMismatch { opcode: String },
    #[error("shift amount {amount} out of range")]
    ShiftOutOfRange { amount: i64 },
    #[error("call depth exceeded")]
    CallDepthExceeded,
    #[error("unbalanced region {id} at run time")]
    UnbalancedRegion { id: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Trapped { trap: TrapReason, index: u64 },
    Hung,
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Completed => f.write_str("completed"),
            RunStatus::Trapped { trap, index } => write!(f, "trapped at #{index}: {trap}"),
            RunStatus::Hung => f.write_str("hung (instruction budget exhausted)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExecConfig {
    pub budget: u64,
    /// Overrides the program's `.memory` directive.
    pub memory_size: Option<u64>,
    /// Golden values for `verify_check`, in `.verify` order. `None` means
    /// this is the golden run: checks record values and pass.
    pub reference: Option<Vec<Value>>,
    pub record_trace: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            memory_size: None,
            reference: None,
            record_trace: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyRecord {
    pub values: Vec<Value>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// Values of the verify locations at the last `verify_check`.
    pub outputs: std::collections::BTreeMap<Location, Value>,
    /// Values produced by `print`, after formatting loss.
    pub printed: Vec<Value>,
    pub verify: Option<VerifyRecord>,
    pub return_value: Option<Value>,
    pub trace: Trace,
    pub dynamic_instruction_count: u64,
    /// True once the fault was applied.
    pub fault_applied: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VmError {
    #[error("missing input for entry parameter {0}")]
    MissingInput(Location),
    #[error("input location {0} is not an entry parameter or memory cell")]
    UnknownInput(Location),
    #[error("input memory address {0} is outside memory of size {1}")]
    InputOutOfBounds(u64, u64),
    #[error("fault bit {0} out of range [0, 63]")]
    BadBit(u8),
    #[error("fault at #{index}: no {target} slot on `{opcode}`")]
    InvalidFaultTarget {
        index: u64,
        target: FaultTarget,
        opcode: Opcode,
    },
    #[error("fault index {index} never reached (run retired {count} instructions)")]
    FaultNotReached { index: u64, count: u64 },
    #[error("budget must be at least 1")]
    ZeroBudget,
}

/// Relative comparison used by `verify_check` and output comparison.
/// Bit-identical values always match; a zero reference falls back to an
/// absolute check; NaN never matches anything but its own bit pattern.
pub fn within_tolerance(reference: Value, actual: Value, tol: f64) -> bool {
    if reference == actual {
        return true;
    }
    if reference.tag != actual.tag {
        return false;
    }
    let (r, a) = (reference.to_f64(), actual.to_f64());
    let diff = (a - r).abs();
    if r == 0.0 {
        diff <= tol
    } else {
        diff <= tol * r.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance() {
        assert!(within_tolerance(Value::float(1.0), Value::float(1.0 + 1e-12), 1e-10));
        assert!(!within_tolerance(Value::float(1.0), Value::float(1.0 + 1e-8), 1e-10));
        assert!(!within_tolerance(Value::float(1.0), Value::float(f64::NAN), 1e-10));
        assert!(within_tolerance(Value::float(0.0), Value::float(1e-11), 1e-10));
        assert!(!within_tolerance(Value::int(3), Value::int(4), 1e-10));
    }
}

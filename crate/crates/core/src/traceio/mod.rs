//! Dynamic traces: the event type, on-disk codecs, region splitting and
//! golden/faulty alignment.

mod align;
mod codec;
mod split;

use serde::{Deserialize, Serialize};

use crate::mirvm::{Location, Opcode, Value};

pub use align::{align_pair, AlignError, TracePair};
pub use codec::{
    read_trace, read_trace_jsonl, write_trace, write_trace_jsonl, TraceFormat, TraceIoError, MAGIC,
    VERSION,
};
pub use split::{split_regions, split_regions_with, top_level_regions, CodeRegionInstance, SplitError, SplitOptions};

/// One retired dynamic instruction.
///
/// Operand layout per opcode:
/// - binary ops and compares: `[lhs, rhs]`; conversions and `mov`: `[src]`
/// - `load`: `[base, cell]` where `cell` is the memory location read
/// - `store`: `[base, value]`, result is the memory cell written
/// - `br_cond`: `[cond]`; `ret`: `[value]` written to the caller's register
/// - `print`: `[value]`, result value is the printed (rounded) value with no location
/// - `verify_check`: one operand per verify location
///
/// Immediate operands have no location.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub index: u64,
    pub opcode: Opcode,
    pub src_line: u32,
    pub operand_locations: Vec<Option<Location>>,
    pub operand_values: Vec<Value>,
    pub result_location: Option<Location>,
    pub result_value: Option<Value>,
    pub region_id: Option<u32>,
}

impl TraceEvent {
    /// Control signature used for alignment.
    pub fn control_key(&self) -> (Opcode, u32) {
        (self.opcode, self.src_line)
    }

    /// Locations read by this event, with operand slot numbers.
    pub fn reads(&self) -> impl Iterator<Item = (usize, &Location)> {
        self.operand_locations
            .iter()
            .enumerate()
            .filter_map(|(k, l)| l.as_ref().map(|l| (k, l)))
    }

    /// Operand slot carrying a memory address (load/store base).
    pub fn is_address_slot(&self, k: usize) -> bool {
        k == 0 && matches!(self.opcode, Opcode::Load | Opcode::Store)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    #[serde(with = "hash_hex")]
    pub program_hash: [u8; 32],
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(program_hash: [u8; 32]) -> Self {
        Self {
            program_hash,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn hash_hex(&self) -> String {
        hash_hex::encode(&self.program_hash)
    }
}

pub(crate) mod hash_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn encode(h: &[u8; 32]) -> String {
        h.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn decode(s: &str) -> Option<[u8; 32]> {
        if s.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
        }
        Some(out)
    }

    pub fn serialize<S: Serializer>(h: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(h))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        decode(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex digits"))
    }
}

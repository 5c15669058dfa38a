//! Resilience verdicts, ACL drop points, error magnitudes and the six
//! computation patterns that mask or shrink corruption.

mod detect;
mod structural;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acl::{same_shape, AclTable, DeathCause};
use crate::dddg::{AccessIndex, RegionInterface};
use crate::mirvm::{Location, Opcode, Value, ValueTag};
use crate::traceio::{CodeRegionInstance, Trace, TraceEvent, TracePair};

pub use detect::detect_patterns;
pub use structural::{structural_counts, structural_features, StructuralCounts};

/// Relative error of `incorrect` against `correct`: 0 when bit-equal,
/// `+inf` when `correct` is zero (or either side is not finite) and the
/// two differ. Integers are compared exactly.
pub fn error_magnitude(correct: Value, incorrect: Value) -> f64 {
    if correct == incorrect {
        return 0.0;
    }
    match (correct.tag, incorrect.tag) {
        (ValueTag::Int, ValueTag::Int) => {
            let (c, i) = (correct.bits as i64 as i128, incorrect.bits as i64 as i128);
            if c == 0 {
                f64::INFINITY
            } else {
                (c - i).unsigned_abs() as f64 / c.unsigned_abs() as f64
            }
        }
        (ValueTag::Float, ValueTag::Float) => {
            let (c, i) = (correct.to_f64(), incorrect.to_f64());
            if c == 0.0 || !c.is_finite() || !i.is_finite() {
                // -0.0 vs 0.0 is the only finite pair reaching here with c == i.
                if c == i {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (c - i).abs() / c.abs()
            }
        }
        _ => f64::INFINITY,
    }
}

/// `|correct - incorrect|`, for reports that want the unscaled gap.
pub fn absolute_error(correct: Value, incorrect: Value) -> f64 {
    if correct == incorrect {
        0.0
    } else {
        (correct.to_f64() - incorrect.to_f64()).abs()
    }
}

/// Column order of the bundled dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    ConditionalStatement,
    Shifting,
    Truncation,
    /// Dead corrupted locations.
    Dcl,
    RepeatedAdditions,
    Overwriting,
}

impl PatternKind {
    pub const ALL: [PatternKind; 6] = [
        PatternKind::ConditionalStatement,
        PatternKind::Shifting,
        PatternKind::Truncation,
        PatternKind::Dcl,
        PatternKind::RepeatedAdditions,
        PatternKind::Overwriting,
    ];

    /// Position in feature vectors and model rows.
    pub fn column(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::ConditionalStatement => "conditional_statement",
            PatternKind::Shifting => "shifting",
            PatternKind::Truncation => "truncation",
            PatternKind::Dcl => "dcl",
            PatternKind::RepeatedAdditions => "repeated_additions",
            PatternKind::Overwriting => "overwriting",
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PatternKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown pattern kind `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    /// The anchor is an ACL drop point.
    DropPoint,
    /// Error magnitude shrank across the anchors, or fell to zero at a
    /// clean rewrite of a corrupted location.
    MagnitudeDecrease,
    /// A corrupted operand produced a golden-equal result at the anchor:
    /// a decrease to zero magnitude.
    MaskedOperand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternInstance {
    pub kind: PatternKind,
    pub region_id: Option<u32>,
    pub instance_ordinal: u32,
    pub anchor_indices: Vec<u64>,
    pub src_lines: Vec<u32>,
    pub evidence: Evidence,
    pub note: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    NotResilient,
    Case1,
    Case2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeChange {
    pub location: Location,
    pub before: f64,
    pub after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResilienceVerdict {
    pub region_id: Option<u32>,
    pub instance_ordinal: u32,
    pub piece: u32,
    pub first: u64,
    pub last: u64,
    pub case: Case,
    pub corrupted_inputs: Vec<Location>,
    pub corrupted_outputs: Vec<Location>,
    pub clean_outputs: Vec<Location>,
    /// Locations corrupted at entry and at exit, with magnitudes.
    pub magnitudes: Vec<MagnitudeChange>,
    /// A boundary event has no aligned golden counterpart; corruption
    /// there was read from the ACL table and magnitudes are missing.
    pub boundary_unaligned: bool,
}

/// Golden event aligned with faulty index `i`, when both run the same
/// instruction on the same locations.
pub(crate) fn golden_event(pair: &TracePair, i: u64) -> Option<&TraceEvent> {
    let g = pair.golden.events.get(pair.golden_index(i)? as usize)?;
    same_shape(g, &pair.faulty.events[i as usize]).then_some(g)
}

/// Whether operand `slot` of faulty event `i` read a corrupted value.
/// Past the alignment break the table's taint sets are authoritative even
/// where a golden event lines up again: golden values there can differ
/// through control flow the taint rules do not follow.
pub(crate) fn value_regime(table: &AclTable, i: u64) -> bool {
    table.alignment_break.is_none_or(|c| i < c)
}

pub(crate) fn operand_corrupted(pair: &TracePair, table: &AclTable, i: u64, slot: usize) -> bool {
    let e = &pair.faulty.events[i as usize];
    let Some(Some(loc)) = e.operand_locations.get(slot) else {
        return false;
    };
    if value_regime(table, i) {
        if let Some(g) = golden_event(pair, i) {
            return g.operand_values[slot] != e.operand_values[slot];
        }
    }
    let k = table.fault_index;
    if i == k {
        return table.baseline_location.as_ref() == Some(loc);
    }
    i > k && table.corrupted_after(loc, i - 1)
}

/// Classify one region instance of the faulty trace.
///
/// Inputs are compared at their first read inside the instance, outputs
/// at their last write. Inputs that are never written but stay live after
/// the instance count as outputs too: their corruption escapes.
pub fn classify_region(
    instance: &CodeRegionInstance,
    pair: &TracePair,
    interface: &RegionInterface,
    table: &AclTable,
    access: &AccessIndex,
) -> ResilienceVerdict {
    let events = instance.events(&pair.faulty);
    let mut boundary_unaligned = false;

    // (faulty, golden) value at entry, per input.
    let mut entry: BTreeMap<&Location, (bool, Option<(Value, Value)>)> = BTreeMap::new();
    for e in events {
        for (k, l) in e.reads() {
            if !interface.inputs.contains(l) || entry.contains_key(l) {
                continue;
            }
            let corrupted = operand_corrupted(pair, table, e.index, k);
            let values = golden_event(pair, e.index).map(|g| (e.operand_values[k], g.operand_values[k]));
            boundary_unaligned |= values.is_none();
            entry.insert(l, (corrupted, values));
        }
    }
    // Last write per output.
    let mut exit: BTreeMap<&Location, (bool, Option<(Value, Value)>)> = BTreeMap::new();
    for e in events.iter().rev() {
        let Some(l) = &e.result_location else { continue };
        if !interface.outputs.contains(l) || exit.contains_key(l) {
            continue;
        }
        let (corrupted, values) = match golden_event(pair, e.index) {
            Some(g) => {
                let corrupted = if value_regime(table, e.index) {
                    g.result_value != e.result_value
                } else {
                    table.corrupted_after(l, e.index)
                };
                (corrupted, Some((e.result_value.unwrap(), g.result_value.unwrap())))
            }
            None => {
                boundary_unaligned = true;
                (table.corrupted_after(l, e.index), None)
            }
        };
        exit.insert(l, (corrupted, values));
    }
    for (l, v) in &entry {
        if !interface.outputs.contains(*l) && access.live_after(l, instance.last) {
            exit.insert(l, *v);
        }
    }

    let corrupted_inputs: Vec<Location> = entry.iter().filter(|(_, v)| v.0).map(|(l, _)| (*l).clone()).collect();
    let corrupted_outputs: Vec<Location> = exit.iter().filter(|(_, v)| v.0).map(|(l, _)| (*l).clone()).collect();
    let clean_outputs: Vec<Location> = exit.iter().filter(|(_, v)| !v.0).map(|(l, _)| (*l).clone()).collect();

    let mut magnitudes = Vec::new();
    for (l, (c_in, v_in)) in &entry {
        let Some((c_out, v_out)) = exit.get(l) else { continue };
        if let (true, true, Some((fi, gi)), Some((fo, go))) = (c_in, c_out, v_in, v_out) {
            magnitudes.push(MagnitudeChange {
                location: (*l).clone(),
                before: error_magnitude(*gi, *fi),
                after: error_magnitude(*go, *fo),
            });
        }
    }

    let case = if corrupted_inputs.is_empty() {
        Case::NotResilient
    } else if corrupted_outputs.is_empty() {
        Case::Case1
    } else if magnitudes.iter().any(|m| m.after < m.before) {
        Case::Case2
    } else {
        Case::NotResilient
    };
    ResilienceVerdict {
        region_id: instance.region_id,
        instance_ordinal: instance.instance_ordinal,
        piece: instance.piece,
        first: instance.first,
        last: instance.last,
        case,
        corrupted_inputs,
        corrupted_outputs,
        clean_outputs,
        magnitudes,
        boundary_unaligned,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropPoint {
    pub index: u64,
    pub src_line: u32,
    pub opcode: Opcode,
    pub count_before: u32,
    pub count_after: u32,
    pub deaths: Vec<(Location, DeathCause)>,
}

/// Every index where the alive corrupted count strictly falls (the fault
/// index compares against the baseline).
pub fn find_drop_points(table: &AclTable, trace: &Trace) -> Vec<DropPoint> {
    (table.fault_index..table.n)
        .filter(|&i| table.count_at(i) < table.count_before(i))
        .map(|i| {
            let e = &trace.events[i as usize];
            DropPoint {
                index: i,
                src_line: e.src_line,
                opcode: e.opcode,
                count_before: table.count_before(i),
                count_after: table.count_at(i),
                deaths: table.deaths_at(i),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub rates: BTreeMap<PatternKind, f64>,
    pub total_dynamic_instructions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("trace has no dynamic instructions")]
pub struct EmptyTrace;

impl FeatureVector {
    /// Rates in model column order.
    pub fn to_row(&self) -> [f64; 6] {
        PatternKind::ALL.map(|k| self.rates.get(&k).copied().unwrap_or(0.0))
    }

    pub fn csv_header() -> &'static str {
        "program,condition,shift,truncation,dead_location,repeat_addition,overwrite"
    }

    pub fn csv_row(&self, program: &str) -> String {
        let mut s = program.to_string();
        for r in self.to_row() {
            s.push_str(&format!(",{r}"));
        }
        s
    }
}

/// Instance counts per kind over the trace length.
pub fn feature_vector(trace: &Trace, instances: &[PatternInstance]) -> Result<FeatureVector, EmptyTrace> {
    let total = trace.len() as u64;
    if total == 0 {
        return Err(EmptyTrace);
    }
    let mut rates: BTreeMap<PatternKind, f64> = PatternKind::ALL.iter().map(|&k| (k, 0.0)).collect();
    for inst in instances {
        *rates.get_mut(&inst.kind).unwrap() += 1.0;
    }
    for r in rates.values_mut() {
        *r /= total as f64;
    }
    Ok(FeatureVector {
        rates,
        total_dynamic_instructions: total,
    })
}

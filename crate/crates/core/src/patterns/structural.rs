//! Fault-free structural counting of potential pattern sites, used as
//! model features.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{EmptyTrace, FeatureVector, PatternKind};
use crate::mirvm::Opcode;
use crate::traceio::{split_regions_with, top_level_regions, SplitOptions, Trace};

/// Minimum self-accumulating updates before a location counts as a
/// repeated-addition site.
pub const REPEAT_ADD_MIN_UPDATES: usize = 3;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuralCounts {
    /// Compares whose result is next read by `br_cond`.
    pub conditions: u64,
    pub shifts: u64,
    /// Float-to-int conversions and digit-limited prints.
    pub truncations: u64,
    /// Self-accumulating add-type updates, on locations updated at
    /// least [`REPEAT_ADD_MIN_UPDATES`] times.
    pub repeat_additions: u64,
    /// Writes to a location that already held a value.
    pub overwrites: u64,
    /// Mean over main-loop chunks of the fraction of accessed locations
    /// never read after the chunk.
    pub dead_location_rate: f64,
    /// Region whose instances were used as chunks (`None`: whole trace).
    pub chunk_region: Option<u32>,
    pub chunks: usize,
    pub total: u64,
}

pub fn structural_counts(trace: &Trace) -> StructuralCounts {
    let ev = &trace.events;
    let mut c = StructuralCounts {
        total: ev.len() as u64,
        ..Default::default()
    };

    let mut seen: HashSet<&crate::mirvm::Location> = HashSet::new();
    let mut self_adds: HashMap<&crate::mirvm::Location, u64> = HashMap::new();
    for (i, e) in ev.iter().enumerate() {
        match e.opcode {
            op if op.is_compare() => {
                if let Some(r) = &e.result_location {
                    let next = ev[i + 1..]
                        .iter()
                        .find(|x| x.reads().any(|(_, l)| l == r) || x.result_location.as_ref() == Some(r));
                    if next.is_some_and(|x| x.opcode == Opcode::BrCond && x.reads().any(|(_, l)| l == r)) {
                        c.conditions += 1;
                    }
                }
            }
            op if op.is_shift() => c.shifts += 1,
            Opcode::TruncF2I | Opcode::Print { digits: Some(_) } => c.truncations += 1,
            _ => {}
        }
        for (_, l) in e.reads() {
            seen.insert(l);
        }
        if let Some(r) = &e.result_location {
            if e.opcode.is_add_like() && e.reads().any(|(_, l)| l == r) {
                *self_adds.entry(r).or_default() += 1;
            }
            if !seen.insert(r) {
                c.overwrites += 1;
            }
        }
    }
    c.repeat_additions = self_adds
        .values()
        .filter(|&&n| n as usize >= REPEAT_ADD_MIN_UPDATES)
        .sum();

    // Chunks: instances of the top-level region covering the most events.
    let mut last_read: HashMap<&crate::mirvm::Location, usize> = HashMap::new();
    for (i, e) in ev.iter().enumerate() {
        for (_, l) in e.reads() {
            last_read.insert(l, i);
        }
    }
    let tops = top_level_regions(trace);
    let opts = SplitOptions {
        roots: Some(tops.clone()),
        lenient: true,
    };
    let instances = split_regions_with(trace, &opts).unwrap_or_default();
    let mut cover: BTreeMap<u32, usize> = BTreeMap::new();
    for inst in instances.iter() {
        if let Some(r) = inst.region_id {
            *cover.entry(r).or_default() += inst.len();
        }
    }
    let main = cover.iter().max_by_key(|(r, n)| (**n, std::cmp::Reverse(**r))).map(|(r, _)| *r);
    let chunks: Vec<(usize, usize)> = match main {
        Some(r) => instances
            .iter()
            .filter(|i| i.region_id == Some(r))
            .map(|i| (i.first as usize, i.last as usize))
            .collect(),
        None if !ev.is_empty() => vec![(0, ev.len() - 1)],
        None => vec![],
    };
    c.chunk_region = main;
    c.chunks = chunks.len();
    let mut sum = 0.0;
    for &(a, b) in &chunks {
        let mut accessed: BTreeSet<&crate::mirvm::Location> = BTreeSet::new();
        for e in &ev[a..=b] {
            accessed.extend(e.reads().map(|(_, l)| l));
            accessed.extend(e.result_location.iter());
        }
        if accessed.is_empty() {
            continue;
        }
        let dead = accessed.iter().filter(|l| last_read.get(*l).is_none_or(|&r| r <= b)).count();
        sum += dead as f64 / accessed.len() as f64;
    }
    if !chunks.is_empty() {
        c.dead_location_rate = sum / chunks.len() as f64;
    }
    c
}

/// Model features of a fault-free trace.
pub fn structural_features(trace: &Trace) -> Result<FeatureVector, EmptyTrace> {
    let c = structural_counts(trace);
    if c.total == 0 {
        return Err(EmptyTrace);
    }
    let t = c.total as f64;
    let rates = BTreeMap::from([
        (PatternKind::ConditionalStatement, c.conditions as f64 / t),
        (PatternKind::Shifting, c.shifts as f64 / t),
        (PatternKind::Truncation, c.truncations as f64 / t),
        (PatternKind::Dcl, c.dead_location_rate),
        (PatternKind::RepeatedAdditions, c.repeat_additions as f64 / t),
        (PatternKind::Overwriting, c.overwrites as f64 / t),
    ]);
    Ok(FeatureVector {
        rates,
        total_dynamic_instructions: c.total,
    })
}

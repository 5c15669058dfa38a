//! Alive corrupted location tables.
//!
//! A location is *corrupted* after event `i` when its value differs from
//! the golden run at the aligned point. Once the two runs stop executing
//! the same instructions on the same locations, golden comparison is no
//! longer meaningful and corruption switches to taint propagation seeded
//! with the corrupted set at that point. A corrupted location is *alive*
//! after `i` when the next access to it is a read.

mod oracle;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dddg::AccessIndex;
use crate::mirvm::{FaultSpec, FaultTarget, Location, Opcode};
use crate::traceio::{TraceEvent, TracePair};

pub use oracle::brute_force_acl;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeathCause {
    Disuse,
    CleanOverwrite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ValueCompare,
    Taint,
}

/// Indices `start..end` where the location is alive and corrupted.
/// `death` is the cause at `end`, or `None` when still alive at `n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclRun {
    pub start: u64,
    pub end: u64,
    pub death: Option<DeathCause>,
    pub regime: Regime,
}

/// Indices `start..end` where the location holds a corrupted value,
/// alive or not. `end` is the clean overwrite that fixed it, if any.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionRun {
    pub start: u64,
    pub end: Option<u64>,
    pub regime: Regime,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclTable {
    pub fault: FaultSpec,
    pub fault_index: u64,
    /// End of the table: the first `verify_check` at or after the fault,
    /// else the faulty trace length.
    pub n: u64,
    /// Every location corrupted somewhere in `[fault_index, n)`, plus the
    /// flipped location itself.
    pub rows: BTreeMap<Location, Vec<AclRun>>,
    /// `counts[i - fault_index]`.
    pub counts: Vec<u32>,
    /// Alive corrupted count just before the fault event: 1 when the
    /// flipped value sits in a location, else 0.
    pub baseline: u32,
    pub baseline_location: Option<Location>,
    /// Set when the flipped location is not alive after the fault event.
    pub baseline_death: Option<DeathCause>,
    /// First index where the faulty run stops matching the golden run
    /// instruction for instruction (same opcode, line and locations).
    pub alignment_break: Option<u64>,
    /// Part of `[fault_index, n)` was analysed by taint propagation.
    pub value_compare_degraded: bool,
    pub corruption: BTreeMap<Location, Vec<CorruptionRun>>,
}

impl AclTable {
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bit(&self, loc: &Location, i: u64) -> bool {
        self.rows
            .get(loc)
            .is_some_and(|runs| runs.iter().any(|r| (r.start..r.end).contains(&i)))
    }

    /// Row over `[fault_index, n)`.
    pub fn row_bits(&self, loc: &Location) -> Vec<bool> {
        (self.fault_index..self.n).map(|i| self.bit(loc, i)).collect()
    }

    /// Count before index `i` (the baseline for `i == fault_index`).
    pub fn count_before(&self, i: u64) -> u32 {
        if i <= self.fault_index {
            self.baseline
        } else {
            self.counts[(i - 1 - self.fault_index) as usize]
        }
    }

    pub fn count_at(&self, i: u64) -> u32 {
        self.counts[(i - self.fault_index) as usize]
    }

    /// `loc` holds a corrupted value (alive or not) after event `i`.
    pub fn corrupted_after(&self, loc: &Location, i: u64) -> bool {
        self.corruption
            .get(loc)
            .is_some_and(|runs| runs.iter().any(|r| r.start <= i && r.end.is_none_or(|e| i < e)))
    }

    /// Locations dying at `i`, with causes.
    pub fn deaths_at(&self, i: u64) -> Vec<(Location, DeathCause)> {
        let mut out: Vec<(Location, DeathCause)> = self
            .rows
            .iter()
            .flat_map(|(l, runs)| {
                runs.iter()
                    .filter(move |r| r.end == i && r.death.is_some())
                    .map(move |r| (l.clone(), r.death.unwrap()))
            })
            .collect();
        if i == self.fault_index {
            if let (Some(l), Some(c)) = (&self.baseline_location, self.baseline_death) {
                out.push((l.clone(), c));
            }
        }
        out
    }

    /// CSV: header of instruction indices, one 0/1 row per location, then counts.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("location");
        for i in self.fault_index..self.n {
            let _ = write!(s, ",{i}");
        }
        s.push('\n');
        for loc in self.rows.keys() {
            let _ = write!(s, "\"{loc}\"");
            for b in self.row_bits(loc) {
                let _ = write!(s, ",{}", b as u8);
            }
            s.push('\n');
        }
        s.push_str("counts");
        for c in &self.counts {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        s
    }
}

pub fn acl_counts(table: &AclTable) -> Vec<u32> {
    table.counts.clone()
}

/// Same instruction on the same locations.
pub(crate) fn same_shape(a: &TraceEvent, b: &TraceEvent) -> bool {
    a.opcode == b.opcode
        && a.src_line == b.src_line
        && a.operand_locations == b.operand_locations
        && a.result_location == b.result_location
}

pub(crate) fn table_end(pair: &TracePair) -> u64 {
    let k = pair.fault.index as usize;
    let f = &pair.faulty.events;
    f.iter()
        .skip(k)
        .position(|e| e.opcode == Opcode::VerifyCheck)
        .map_or(f.len(), |p| p + k) as u64
}

pub(crate) fn alignment_break(pair: &TracePair) -> Option<u64> {
    let (f, g) = (&pair.faulty.events, &pair.golden.events);
    (pair.fault.index as usize..f.len())
        .find(|&i| i >= g.len() || !same_shape(&f[i], &g[i]))
        .map(|i| i as u64)
}

/// The flipped slot's location, if the flip changed a stored value.
pub(crate) fn fault_location(pair: &TracePair, brk: Option<u64>) -> Option<Location> {
    let k = pair.fault.index as usize;
    let fe = pair.faulty.events.get(k)?;
    let ge = pair.golden.events.get(k);
    let shape_broken = brk == Some(k as u64);
    match pair.fault.target {
        FaultTarget::Operand(j) => {
            let j = j as usize;
            let loc = fe.operand_locations.get(j)?.clone()?;
            let differs = shape_broken || ge.is_none_or(|g| g.operand_values.get(j) != fe.operand_values.get(j));
            differs.then_some(loc)
        }
        FaultTarget::Result => {
            let loc = fe.result_location.clone()?;
            let differs = shape_broken || ge.is_none_or(|g| g.result_value != fe.result_value);
            differs.then_some(loc)
        }
    }
}

/// True when event `i` is the fault event and its flipped slot is a taint source.
pub(crate) fn fault_taints(pair: &TracePair, brk: Option<u64>, i: usize) -> bool {
    if i != pair.fault.index as usize {
        return false;
    }
    let fe = &pair.faulty.events[i];
    match (pair.fault.target, pair.golden.events.get(i)) {
        _ if brk == Some(i as u64) => true,
        (FaultTarget::Operand(j), Some(g)) => g.operand_values.get(j as usize) != fe.operand_values.get(j as usize),
        (FaultTarget::Result, Some(g)) => g.result_value != fe.result_value,
        (_, None) => true,
    }
}

/// Mutable view of the corrupted-location set.
pub(crate) trait CorruptedSet {
    fn contains(&self, l: &Location) -> bool;
    fn set(&mut self, l: &Location, on: bool);
}

/// One event's effect on the corrupted set.
pub(crate) fn corruption_step(pair: &TracePair, brk: Option<u64>, i: usize, set: &mut impl CorruptedSet) {
    let e = &pair.faulty.events[i];
    let aligned = brk.is_none_or(|c| (i as u64) < c);
    if aligned {
        let g = &pair.golden.events[i];
        for (k, l) in e.reads() {
            if e.operand_values[k] != g.operand_values[k] {
                set.set(l, true);
            }
        }
        if let Some(r) = &e.result_location {
            if e.result_value != g.result_value {
                set.set(r, true);
            } else if set.contains(r) {
                set.set(r, false);
            }
        }
    } else {
        let source = fault_taints(pair, brk, i);
        if source {
            if let FaultTarget::Operand(j) = pair.fault.target {
                if let Some(Some(l)) = e.operand_locations.get(j as usize) {
                    set.set(l, true);
                }
            }
        }
        let tainted_in = (source && matches!(pair.fault.target, FaultTarget::Operand(_)))
            || e.reads().any(|(_, l)| set.contains(l));
        if let Some(r) = &e.result_location {
            if tainted_in || (source && pair.fault.target == FaultTarget::Result) {
                set.set(r, true);
            } else if set.contains(r) {
                set.set(r, false);
            }
        }
    }
}

pub fn build_acl(pair: &TracePair) -> AclTable {
    let k = pair.fault.index;
    let f = &pair.faulty.events;
    let brk = alignment_break(pair);
    let fault_loc = fault_location(pair, brk);
    let mut table = AclTable {
        fault: pair.fault,
        fault_index: k,
        n: k,
        rows: BTreeMap::new(),
        counts: Vec::new(),
        baseline: fault_loc.is_some() as u32,
        baseline_location: fault_loc.clone(),
        baseline_death: None,
        alignment_break: brk,
        value_compare_degraded: false,
        corruption: BTreeMap::new(),
    };
    if k as usize >= f.len() {
        return table;
    }
    let n = table_end(pair);
    table.n = n;
    table.value_compare_degraded = brk.is_some_and(|c| c < n);
    let access = AccessIndex::new(&pair.faulty);
    let regime_at = |i: u64| {
        if brk.is_some_and(|c| i >= c) {
            Regime::Taint
        } else {
            Regime::ValueCompare
        }
    };

    // Corrupted locations with the start of their current corruption run.
    let mut corrupted: HashMap<Location, u64> = HashMap::new();
    // Alive corrupted locations with the start of their current ACL run.
    let mut alive: HashMap<Location, u64> = HashMap::new();
    if let Some(l) = &fault_loc {
        table.rows.insert(l.clone(), Vec::new());
    }

    for i in k..n {
        let e = &f[i as usize];
        let mut tracker = Tracker {
            map: &mut corrupted,
            i,
            table: &mut table,
            regime_at: &regime_at,
        };
        corruption_step(pair, brk, i as usize, &mut tracker);

        let mut touched: Vec<&Location> = e.reads().map(|(_, l)| l).collect();
        touched.extend(e.result_location.iter());
        if i == k {
            touched.extend(fault_loc.iter());
        }
        touched.sort();
        touched.dedup();
        for l in touched {
            let now = corrupted.contains_key(l) && access.live_after(l, i);
            let was = alive.contains_key(l);
            if was && !now {
                let start = alive.remove(l).unwrap();
                let cause = death_cause(e, l, corrupted.contains_key(l));
                table.rows.get_mut(l).unwrap().push(AclRun {
                    start,
                    end: i,
                    death: Some(cause),
                    regime: regime_at(start),
                });
            } else if !was && now {
                alive.insert(l.clone(), i);
            }
        }
        if i == k {
            if let Some(l) = &fault_loc {
                if !alive.contains_key(l) {
                    table.baseline_death = Some(death_cause(e, l, corrupted.contains_key(l)));
                }
            }
        }
        table.counts.push(alive.len() as u32);
    }

    for (l, start) in alive {
        table.rows.get_mut(&l).unwrap().push(AclRun {
            start,
            end: n,
            death: None,
            regime: regime_at(start),
        });
    }
    for (l, start) in corrupted {
        table.corruption.entry(l).or_default().push(CorruptionRun {
            start,
            end: None,
            regime: regime_at(start),
        });
    }
    for runs in table.rows.values_mut() {
        runs.sort_by_key(|r| r.start);
    }
    for runs in table.corruption.values_mut() {
        runs.sort_by_key(|r| r.start);
    }
    table
}

struct Tracker<'a, R: Fn(u64) -> Regime> {
    map: &'a mut HashMap<Location, u64>,
    i: u64,
    table: &'a mut AclTable,
    regime_at: &'a R,
}

impl<R: Fn(u64) -> Regime> CorruptedSet for Tracker<'_, R> {
    fn contains(&self, l: &Location) -> bool {
        self.map.contains_key(l)
    }

    fn set(&mut self, l: &Location, on: bool) {
        match (on, self.map.contains_key(l)) {
            (true, false) => {
                self.map.insert(l.clone(), self.i);
                self.table.rows.entry(l.clone()).or_default();
            }
            (false, true) => {
                let start = self.map.remove(l).unwrap();
                // Corrupted and repaired by the same event: no run.
                if start == self.i {
                    return;
                }
                self.table.corruption.entry(l.clone()).or_default().push(CorruptionRun {
                    start,
                    end: Some(self.i),
                    regime: (self.regime_at)(start),
                });
            }
            _ => {}
        }
    }
}

pub(crate) fn death_cause(e: &TraceEvent, l: &Location, still_corrupted: bool) -> DeathCause {
    if e.result_location.as_ref() == Some(l) && !still_corrupted {
        DeathCause::CleanOverwrite
    } else {
        DeathCause::Disuse
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirvm::{execute, parse_program, ExecConfig};
    use crate::traceio::align_pair;
    use std::collections::BTreeMap;

    pub(crate) fn pair_for(src: &str, fault: FaultSpec) -> TracePair {
        let p = parse_program(src).unwrap();
        let cfg = ExecConfig::default();
        let g = execute(&p, &BTreeMap::new(), None, &cfg).unwrap();
        let f = execute(&p, &BTreeMap::new(), Some(&fault), &cfg).unwrap();
        align_pair(g.trace, f.trace, fault).unwrap()
    }

    const FIGURE: &str = include_str!("../../fixtures/acl_figure.mir");

    fn figure_pair() -> TracePair {
        pair_for(
            FIGURE,
            FaultSpec {
                index: 2,
                target: FaultTarget::Operand(0),
                bit: 3,
            },
        )
    }

    #[test]
    fn figure_row() {
        let pair = figure_pair();
        let t = build_acl(&pair);
        let loc1 = Location::reg("loc1");
        let row: Vec<u8> = (1..=5).map(|i| t.bit(&loc1, i) as u8).collect();
        assert_eq!(row, vec![0, 1, 1, 1, 0]);
        assert_eq!(t.rows[&loc1][0].death, Some(DeathCause::CleanOverwrite));
        assert_eq!(t.rows[&loc1][0].end, 5);
        assert_eq!(t, brute_force_acl(&pair));
    }

    #[test]
    fn dead_register_fault_dies_immediately() {
        let src = "@main {\n  %d = mov 5\n  %a = mov 1\n  print %a\n  ret\n}\n";
        let pair = pair_for(
            src,
            FaultSpec {
                index: 0,
                target: FaultTarget::Result,
                bit: 2,
            },
        );
        let t = build_acl(&pair);
        assert!(t.counts.iter().all(|&c| c == 0));
        assert_eq!(t.baseline, 1);
        assert_eq!(t.baseline_death, Some(DeathCause::Disuse));
        assert!(t.row_bits(&Location::reg("d")).iter().all(|b| !b));
        assert_eq!(t, brute_force_acl(&pair));
    }

    #[test]
    fn no_fault_effect_gives_zero_table() {
        let p = parse_program(FIGURE).unwrap();
        let g = execute(&p, &BTreeMap::new(), None, &ExecConfig::default()).unwrap();
        let fault = FaultSpec {
            index: 1,
            target: FaultTarget::Result,
            bit: 0,
        };
        let pair = align_pair(g.trace.clone(), g.trace, fault).unwrap();
        let t = build_acl(&pair);
        assert!(t.rows.is_empty());
        assert!(t.counts.iter().all(|&c| c == 0));
        assert_eq!(t, brute_force_acl(&pair));
    }

    #[test]
    fn immediate_overwrite_gives_single_bit() {
        // The flipped value is read once by the next instruction, which also
        // rewrites the location cleanly.
        let src = "@main {\n  %a = mov 3\n  %a = imul %a, 0\n  print %a\n  ret\n}\n";
        let pair = pair_for(
            src,
            FaultSpec {
                index: 0,
                target: FaultTarget::Result,
                bit: 1,
            },
        );
        let t = build_acl(&pair);
        assert_eq!(t.row_bits(&Location::reg("a"))[..2], [true, false]);
        assert_eq!(t.counts[..2], [1, 0]);
        assert_eq!(t, brute_force_acl(&pair));
    }

    #[test]
    fn csv_shape() {
        let t = build_acl(&figure_pair());
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("location,2,3,4"));
        assert!(lines.last().unwrap().starts_with("counts,1,1,1,0"));
        assert_eq!(lines.len(), t.rows.len() + 2);
    }

    #[test]
    fn address_fault_switches_to_taint() {
        let src = include_str!("../../fixtures/dot_product.mir");
        let p = parse_program(src).unwrap();
        let g = execute(&p, &BTreeMap::new(), None, &ExecConfig::default()).unwrap();
        let load = g.trace.events.iter().find(|e| e.opcode == Opcode::Load).unwrap().index;
        let fault = FaultSpec {
            index: load,
            target: FaultTarget::Operand(0),
            bit: 3,
        };
        let f = execute(&p, &BTreeMap::new(), Some(&fault), &ExecConfig::default()).unwrap();
        let pair = align_pair(g.trace, f.trace, fault).unwrap();
        let t = build_acl(&pair);
        assert_eq!(t.alignment_break, Some(load));
        assert!(t.value_compare_degraded);
        assert_eq!(t, brute_force_acl(&pair));
    }
}

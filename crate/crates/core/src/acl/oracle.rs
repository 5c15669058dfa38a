//! Quadratic reference implementation of [`super::build_acl`].
//!
//! For every index `i` the corrupted set is rebuilt from scratch: while
//! the runs are aligned, by replaying the full golden and faulty stores
//! from index 0 and diffing them; after the alignment break, by plain
//! taint propagation from the diff at the break. Liveness is a forward
//! scan for the next access.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::*;
use crate::mirvm::Value;

/// Store contents after event `upto` (inclusive), including values
/// observed by reads so that persisted operand flips are visible.
fn replay(events: &[TraceEvent], upto: usize) -> HashMap<&Location, Value> {
    let mut state = HashMap::new();
    for e in &events[..=upto] {
        for (k, l) in e.reads() {
            state.insert(l, e.operand_values[k]);
        }
        if let (Some(l), Some(v)) = (&e.result_location, e.result_value) {
            state.insert(l, v);
        }
    }
    state
}

fn diff(pair: &TracePair, upto: usize) -> BTreeSet<Location> {
    let f = replay(&pair.faulty.events, upto);
    let g = replay(&pair.golden.events, upto);
    f.iter()
        .filter(|(l, v)| g.get(*l) != Some(*v))
        .map(|(l, _)| (*l).clone())
        .collect()
}

fn corrupted_after(pair: &TracePair, brk: Option<u64>, i: usize) -> BTreeSet<Location> {
    let k = pair.fault.index as usize;
    let c = match brk {
        Some(c) if (c as usize) <= i => c as usize,
        _ => return diff(pair, i),
    };
    let mut set = if c > k { diff(pair, c - 1) } else { BTreeSet::new() };
    for j in c..=i {
        let e = &pair.faulty.events[j];
        let mut input_tainted = e.reads().any(|(_, l)| set.contains(l));
        if fault_taints(pair, brk, j) {
            match pair.fault.target {
                FaultTarget::Operand(s) => {
                    input_tainted = true;
                    if let Some(Some(l)) = e.operand_locations.get(s as usize) {
                        set.insert(l.clone());
                    }
                }
                FaultTarget::Result => input_tainted = true,
            }
        }
        if let Some(r) = &e.result_location {
            if input_tainted {
                set.insert(r.clone());
            } else {
                set.remove(r);
            }
        }
    }
    set
}

fn live_after(events: &[TraceEvent], loc: &Location, i: usize) -> bool {
    for e in &events[i + 1..] {
        if e.reads().any(|(_, l)| l == loc) {
            return true;
        }
        if e.result_location.as_ref() == Some(loc) {
            return false;
        }
    }
    false
}

pub fn brute_force_acl(pair: &TracePair) -> AclTable {
    let k = pair.fault.index as usize;
    let f = &pair.faulty.events;
    let brk = alignment_break(pair);
    let fault_loc = fault_location(pair, brk);
    let n = if k < f.len() { table_end(pair) as usize } else { k };
    let regime_at = |i: usize| {
        if brk.is_some_and(|c| i as u64 >= c) {
            Regime::Taint
        } else {
            Regime::ValueCompare
        }
    };

    let sets: Vec<BTreeSet<Location>> = (k..n).map(|i| corrupted_after(pair, brk, i)).collect();
    let mut universe: BTreeSet<Location> = sets.iter().flatten().cloned().collect();
    universe.extend(fault_loc.iter().cloned());

    let mut rows = BTreeMap::new();
    let mut corruption: BTreeMap<Location, Vec<CorruptionRun>> = BTreeMap::new();
    let mut counts = vec![0u32; n - k];
    for loc in &universe {
        let bits: Vec<bool> = (k..n)
            .map(|i| sets[i - k].contains(loc) && live_after(f, loc, i))
            .collect();
        let mut runs = Vec::new();
        let mut start = None;
        for (off, &b) in bits.iter().enumerate() {
            let i = k + off;
            if b {
                counts[off] += 1;
            }
            match (b, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push(AclRun {
                        start: s as u64,
                        end: i as u64,
                        death: Some(death_cause(&f[i], loc, sets[off].contains(loc))),
                        regime: regime_at(s),
                    });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push(AclRun {
                start: s as u64,
                end: n as u64,
                death: None,
                regime: regime_at(s),
            });
        }
        rows.insert(loc.clone(), runs);

        let mut cstart = None;
        let mut cruns = Vec::new();
        for (off, set) in sets.iter().enumerate() {
            match (set.contains(loc), cstart) {
                (true, None) => cstart = Some(k + off),
                (false, Some(s)) => {
                    cruns.push(CorruptionRun {
                        start: s as u64,
                        end: Some((k + off) as u64),
                        regime: regime_at(s),
                    });
                    cstart = None;
                }
                _ => {}
            }
        }
        if let Some(s) = cstart {
            cruns.push(CorruptionRun {
                start: s as u64,
                end: None,
                regime: regime_at(s),
            });
        }
        if !cruns.is_empty() {
            corruption.insert(loc.clone(), cruns);
        }
    }

    let baseline_death = match &fault_loc {
        Some(l) if k < n && !(sets[0].contains(l) && live_after(f, l, k)) => {
            Some(death_cause(&f[k], l, sets[0].contains(l)))
        }
        _ => None,
    };

    AclTable {
        fault: pair.fault,
        fault_index: k as u64,
        n: n as u64,
        rows,
        counts,
        baseline: fault_loc.is_some() as u32,
        baseline_location: fault_loc,
        baseline_death,
        alignment_break: brk,
        value_compare_degraded: brk.is_some_and(|c| (c as usize) < n),
        corruption,
    }
}

//! Fault-conditioned pattern detectors over an aligned pair and its ACL table.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::*;


/// Run all six detectors. `regions` should partition the faulty trace
/// (the default split does); anchors are grouped by the instance that
/// contains them.
pub fn detect_patterns(pair: &TracePair, regions: &[CodeRegionInstance], table: &AclTable) -> Vec<PatternInstance> {
    let mut out = Vec::new();
    if table.is_empty() {
        return out;
    }
    let mut emit = |kind, anchors: Vec<u64>, evidence, note: String| {
        attribute(&mut out, pair, regions, kind, anchors, evidence, note);
    };
    let f = &pair.faulty.events;
    let (k, n) = (table.fault_index, table.n);

    for i in k..n {
        let e = &f[i as usize];
        let Some(g) = golden_event(pair, i) else { continue };
        let masked = e.result_value.is_some() && e.result_value == g.result_value;
        match e.opcode {
            op if op.is_compare() => {
                let corrupted: Vec<usize> = (0..e.operand_values.len())
                    .filter(|&s| operand_corrupted(pair, table, i, s))
                    .collect();
                if masked && !corrupted.is_empty() {
                    if let Some(b) = feeds_branch(f, i as usize) {
                        emit(
                            PatternKind::ConditionalStatement,
                            vec![i],
                            Evidence::MaskedOperand,
                            format!("{op} outcome unchanged despite corrupted operand; branch at #{b}"),
                        );
                    }
                }
            }
            op if op.is_shift() => {
                let (a, b) = (e.operand_values[0].bits, g.operand_values[0].bits);
                let amount_same = e.operand_values[1] == g.operand_values[1];
                let s = e.operand_values[1].bits as u32;
                let lost = match op {
                    Opcode::Shr => (a ^ b).checked_shr(s) == Some(0),
                    _ => (a ^ b).checked_shl(s) == Some(0),
                };
                if a != b && amount_same && masked && lost {
                    emit(
                        PatternKind::Shifting,
                        vec![i],
                        Evidence::MaskedOperand,
                        format!("corrupted bits {:#x} shifted out by {s}", a ^ b),
                    );
                }
            }
            Opcode::TruncF2I | Opcode::Print { digits: Some(_) } => {
                if e.operand_values[0] != g.operand_values[0] && masked {
                    emit(
                        PatternKind::Truncation,
                        vec![i],
                        Evidence::MaskedOperand,
                        format!("{} discards every corrupted bit", e.opcode),
                    );
                }
            }
            _ => {}
        }
    }

    // Overwriting: a corrupted location rewritten with a clean value while
    // it still mattered. A location that already died unused is left to
    // the disuse explanation.
    for (loc, runs) in &table.corruption {
        for r in runs {
            if let Some(j) = r.end {
                let died_unused = table.rows.get(loc).is_some_and(|acl| {
                    acl.iter()
                        .any(|a| a.death == Some(DeathCause::Disuse) && r.start <= a.end && a.end <= j)
                });
                if died_unused {
                    continue;
                }
                // The count only falls here if the location was still alive;
                // otherwise the rewrite itself is the evidence.
                let evidence = if j < n && table.count_at(j) < table.count_before(j) {
                    Evidence::DropPoint
                } else {
                    Evidence::MagnitudeDecrease
                };
                emit(
                    PatternKind::Overwriting,
                    vec![j],
                    evidence,
                    format!("{loc} overwritten with a correct value"),
                );
            }
        }
    }

    repeated_additions(pair, table, &mut emit);
    dead_locations(pair, table, &mut emit);
    out.sort_by(|a, b| (a.anchor_indices.first(), a.kind).cmp(&(b.anchor_indices.first(), b.kind)));
    out
}

/// Index of the `br_cond` consuming the result of event `i`, if its
/// next access is that read.
fn feeds_branch(events: &[TraceEvent], i: usize) -> Option<u64> {
    let r = events[i].result_location.as_ref()?;
    for e in &events[i + 1..] {
        if e.reads().any(|(_, l)| l == r) {
            return (e.opcode == Opcode::BrCond).then_some(e.index);
        }
        if e.result_location.as_ref() == Some(r) {
            return None;
        }
    }
    None
}

/// Self-accumulating add-type updates whose error magnitude shrinks over
/// at least three consecutive updates.
fn repeated_additions(pair: &TracePair, table: &AclTable, emit: &mut impl FnMut(PatternKind, Vec<u64>, Evidence, String)) {
    let f = &pair.faulty.events;
    let mut updates: BTreeMap<&Location, Vec<u64>> = BTreeMap::new();
    for i in table.fault_index..table.n {
        let e = &f[i as usize];
        if let Some(r) = &e.result_location {
            if e.opcode.is_add_like() && e.reads().any(|(_, l)| l == r) {
                updates.entry(r).or_default().push(i);
            }
        }
    }
    for (loc, idx) in updates {
        if idx.len() < 3 {
            continue;
        }
        let mags: Vec<Option<f64>> = idx
            .iter()
            .map(|&i| {
                let g = golden_event(pair, i)?;
                Some(error_magnitude(g.result_value?, f[i as usize].result_value?))
            })
            .collect();
        let mut start = 0;
        while start < idx.len() {
            let mut end = start;
            while end + 1 < idx.len()
                && matches!((mags[end], mags[end + 1]), (Some(a), Some(b)) if a > 0.0 && b < a)
            {
                end += 1;
            }
            if end - start >= 2 {
                let seq: Vec<String> = mags[start..=end].iter().map(|m| format!("{:.3e}", m.unwrap())).collect();
                emit(
                    PatternKind::RepeatedAdditions,
                    idx[start..=end].to_vec(),
                    Evidence::MagnitudeDecrease,
                    format!("{loc} error magnitude {}", seq.join(" -> ")),
                );
            }
            start = end + 1;
        }
    }
}

/// Aggregation chains that consume at least two corrupted locations,
/// which die unused, into at most one corrupted result.
fn dead_locations(pair: &TracePair, table: &AclTable, emit: &mut impl FnMut(PatternKind, Vec<u64>, Evidence, String)) {
    let f = &pair.faulty.events;
    let (k, n) = (table.fault_index, table.n);
    // Arithmetic events reading two or more distinct corrupted locations.
    let mut agg: Vec<u64> = Vec::new();
    for i in k..n {
        let e = &f[i as usize];
        if !e.opcode.is_arith() {
            continue;
        }
        let locs: BTreeSet<&Location> = e
            .reads()
            .filter(|&(s, _)| operand_corrupted(pair, table, i, s))
            .map(|(_, l)| l)
            .collect();
        if locs.len() >= 2 {
            agg.push(i);
        }
    }
    if agg.is_empty() {
        return;
    }

    // Union aggregation events linked by dataflow.
    let pos: HashMap<u64, usize> = agg.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let mut parent: Vec<usize> = (0..agg.len()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    let mut last_writer: HashMap<&Location, u64> = HashMap::new();
    for i in k..n {
        let e = &f[i as usize];
        if let Some(&pi) = pos.get(&i) {
            for (_, l) in e.reads() {
                if let Some(pw) = last_writer.get(l).and_then(|w| pos.get(w)) {
                    let (a, b) = (find(&mut parent, pi), find(&mut parent, *pw));
                    parent[a] = b;
                }
            }
        }
        if let Some(r) = &e.result_location {
            last_writer.insert(r, i);
        }
    }
    let mut groups: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for (p, &i) in agg.iter().enumerate() {
        let root = find(&mut parent, p);
        groups.entry(root).or_default().push(i);
    }

    for members in groups.values() {
        let mut dying: BTreeSet<Location> = BTreeSet::new();
        let mut anchors = Vec::new();
        for &i in members {
            let e = &f[i as usize];
            let died: Vec<Location> = table
                .deaths_at(i)
                .into_iter()
                .filter(|(l, c)| *c == DeathCause::Disuse && e.reads().any(|(_, r)| r == l))
                .map(|(l, _)| l)
                .collect();
            if !died.is_empty() && table.count_at(i) < table.count_before(i) {
                anchors.push(i);
            }
            dying.extend(died);
        }
        let last = *members.last().unwrap();
        let results: BTreeSet<&Location> = members.iter().filter_map(|&i| f[i as usize].result_location.as_ref()).collect();
        let corrupted_results = results
            .iter()
            .filter(|l| table.corrupted_after(l, last) && !dying.contains(**l))
            .count();
        if dying.len() >= 2 && corrupted_results <= 1 && !anchors.is_empty() {
            let names: Vec<String> = dying.iter().map(|l| l.to_string()).collect();
            emit(
                PatternKind::Dcl,
                anchors,
                Evidence::DropPoint,
                format!(
                    "{} corrupted locations ({}) aggregated into {corrupted_results} and left dead",
                    dying.len(),
                    names.join(", ")
                ),
            );
        }
    }
}

/// Split anchors by the region instance holding them and push one
/// pattern instance per group.
fn attribute(
    out: &mut Vec<PatternInstance>,
    pair: &TracePair,
    regions: &[CodeRegionInstance],
    kind: PatternKind,
    anchors: Vec<u64>,
    evidence: Evidence,
    note: String,
) {
    let mut groups: BTreeMap<Option<usize>, Vec<u64>> = BTreeMap::new();
    for a in anchors {
        let holder = regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.contains(a))
            .min_by_key(|(_, r)| r.len())
            .map(|(p, _)| p);
        groups.entry(holder).or_default().push(a);
    }
    for (holder, anchors) in groups {
        let (region_id, instance_ordinal) = holder.map_or((None, 0), |p| (regions[p].region_id, regions[p].instance_ordinal));
        let mut src_lines: Vec<u32> = anchors.iter().map(|&a| pair.faulty.events[a as usize].src_line).collect();
        src_lines.sort_unstable();
        src_lines.dedup();
        out.push(PatternInstance {
            kind,
            region_id,
            instance_ordinal,
            anchor_indices: anchors,
            src_lines,
            evidence,
            note: note.clone(),
        });
    }
}


mod common;

use std::collections::BTreeSet;

use common::*;
use fliptrace::patterns::{detect_patterns, find_drop_points, Evidence, PatternKind};
use fliptrace::analysis::{analyze, AnalysisOptions};
use fliptrace::mirvm::FaultTarget;
use fliptrace::patterns::{structural_counts, structural_features};
use fliptrace::traceio::{split_regions_with, SplitOptions};

fn kinds_fired(name: &str) -> (PatternKind, BTreeSet<PatternKind>) {
    let (_, kind, p, f) = pattern_fixtures().into_iter().find(|x| x.0 == name).unwrap();
    let (pair, t) = table_for(&p, f);
    let regions = split_regions_with(&pair.faulty, &SplitOptions { roots: None, lenient: true }).unwrap();
    let found = detect_patterns(&pair, &regions, &t);
    for i in &found {
        eprintln!("{name}: {:?} {:?} {}", i.kind, i.anchor_indices, i.note);
    }
    (kind, found.iter().map(|i| i.kind).collect())
}

#[test]
fn each_fixture_fires_only_its_own_detector() {
    for name in ["dcl.mir", "repeated_add.mir", "conditional.mir", "shift.mir", "truncation.mir", "overwrite.mir"] {
        let (kind, fired) = kinds_fired(name);
        assert_eq!(fired, BTreeSet::from([kind]), "{name}");
    }
}

#[test]
fn lulesh_like_aggregation_is_a_dcl_at_both_drops() {
    let p = fixture("lulesh_like.mir");
    let f = fault_on_line(&p, 10, Nth::Last, FaultTarget::Result, 45);
    let (pair, t) = table_for(&p, f);
    let regions = split_regions_with(&pair.faulty, &SplitOptions { roots: None, lenient: true }).unwrap();
    let drops: Vec<u64> = find_drop_points(&t, &pair.faulty).iter().map(|d| d.index).collect();
    let found = detect_patterns(&pair, &regions, &t);
    let dcl: Vec<u64> = found
        .iter()
        .filter(|i| i.kind == PatternKind::Dcl)
        .flat_map(|i| i.anchor_indices.iter().copied())
        .collect();
    assert_eq!(dcl, drops);
    assert!(found.iter().all(|i| i.region_id == Some(1)));

    let a = analyze(&p, &Default::default(), &f, &AnalysisOptions::default()).unwrap();
    let lines: Vec<u32> = a.report.drop_points.iter().map(|d| d.src_line).collect();
    assert_eq!(lines, [13, 16]);
    assert_eq!(a.report.counts_csv().lines().count(), 2 + a.report.acl_counts.len());
}

#[test]
fn structural_counts_of_lulesh_like() {
    let t = golden(&fixture("lulesh_like.mir")).trace;
    let c = structural_counts(&t);
    // Hand count: 2 setup + 2 steps of 13 + 4 in the epilogue.
    assert_eq!(c.total, 32);
    assert_eq!(c.conditions, 2);
    assert_eq!((c.shifts, c.truncations, c.repeat_additions), (0, 0, 0));
    // %t and %e twice each, then step 2 rewrites the seven temporaries and %c.
    assert_eq!(c.overwrites, 12);
    assert_eq!((c.chunk_region, c.chunks), (Some(1), 2));
    // Step 1 leaves nothing dead; step 2 leaves all but %e.
    assert!((c.dead_location_rate - 7.0 / 16.0).abs() < 1e-12);
    let fv = structural_features(&t).unwrap();
    assert!((fv.rates[&PatternKind::ConditionalStatement] - 2.0 / 32.0).abs() < 1e-12);
    assert_eq!(fv.to_row().len(), 6);
}

#[test]
fn repeated_addition_fixture_counts_its_accumulator() {
    let c = structural_counts(&golden(&fixture("repeated_add.mir")).trace);
    assert!(c.repeat_additions >= 4, "{c:?}");
}

#[test]
fn every_instance_is_anchored_on_evidence() {
    for (name, _, p, f) in pattern_fixtures() {
        let (pair, t) = table_for(&p, f);
        let regions = split_regions_with(&pair.faulty, &SplitOptions { roots: None, lenient: true }).unwrap();
        let drops: BTreeSet<u64> = find_drop_points(&t, &pair.faulty).iter().map(|d| d.index).collect();
        for i in detect_patterns(&pair, &regions, &t) {
            for &a in &i.anchor_indices {
                let (e, g) = (&pair.faulty.events[a as usize], &pair.golden.events[a as usize]);
                let ok = match i.evidence {
                    Evidence::DropPoint => drops.contains(&a),
                    // Some operand or overwritten location was corrupted and the result is clean.
                    Evidence::MaskedOperand | Evidence::MagnitudeDecrease => {
                        let clean = e.result_value == g.result_value;
                        let dirty_in = e.operand_values != g.operand_values || t.corruption.values().flatten().any(|r| r.end == Some(a));
                        clean && dirty_in || i.kind == PatternKind::RepeatedAdditions
                    }
                };
                assert!(ok, "{name}: {:?} at {a} with {:?}", i.kind, i.evidence);
            }
        }
    }
}

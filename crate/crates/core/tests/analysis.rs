mod common;

use std::collections::BTreeMap;

use common::*;
use fliptrace::acl::DeathCause;
use fliptrace::analysis::{analyze, AnalysisOptions};
use fliptrace::campaign::Manifestation;
use fliptrace::mirvm::{parse_program, FaultSpec, FaultTarget, RunStatus};

#[test]
fn dead_register_fault() {
    let p = parse_program("@main {\n  %dead = mov 5\n  %a = mov 1\n  %b = iadd %a, 2\n  print %b\n  ret\n}\n").unwrap();
    let f = FaultSpec {
        index: 0,
        target: FaultTarget::Result,
        bit: 3,
    };
    let a = analyze(&p, &BTreeMap::new(), &f, &AnalysisOptions::default()).unwrap();
    let r = &a.report;
    assert_eq!(r.manifestation, Manifestation::VerificationSuccess);
    assert!(r.verdicts.is_empty());
    assert_eq!(r.drop_points.len(), 1);
    assert_eq!(r.drop_points[0].deaths[0].1, DeathCause::Disuse);
    assert_eq!(r.baseline, 1);
}

#[test]
fn trapping_fault_truncates_the_table() {
    let p = fixture("crashing.mir");
    let g = golden(&p);
    // Find a fault that traps by scanning result flips of the top bit.
    let trap = g
        .trace
        .events
        .iter()
        .filter(|e| e.result_value.is_some())
        .find_map(|e| {
            let f = FaultSpec {
                index: e.index,
                target: FaultTarget::Result,
                bit: 62,
            };
            let a = analyze(&p, &BTreeMap::new(), &f, &AnalysisOptions::default()).unwrap();
            matches!(a.report.status, RunStatus::Trapped { .. }).then_some(a)
        })
        .expect("some flip traps");
    assert_eq!(trap.report.manifestation, Manifestation::Crashed);
    assert!(trap.report.table_end <= trap.report.faulty_instructions);
    assert!(trap.report.faulty_instructions < trap.report.golden_instructions);
}

#[test]
fn reports_are_deterministic() {
    let p = fixture("lulesh_like.mir");
    let f = fault_on_line(&p, 10, Nth::Last, FaultTarget::Result, 45);
    let run = || serde_json::to_string(&analyze(&p, &BTreeMap::new(), &f, &AnalysisOptions::default()).unwrap().report).unwrap();
    assert_eq!(run(), run());
}

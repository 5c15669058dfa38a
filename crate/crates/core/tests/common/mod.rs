#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use fliptrace::acl::{build_acl, AclTable};
use fliptrace::mirvm::{execute, parse_program, ExecConfig, FaultSpec, FaultTarget, Program, RunOutcome};
use fliptrace::traceio::{align_pair, Trace, TracePair};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture(name: &str) -> Program {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap();
    parse_program(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn golden(p: &Program) -> RunOutcome {
    execute(p, &BTreeMap::new(), None, &ExecConfig::default()).unwrap()
}

#[derive(Clone, Copy)]
pub enum Nth {
    First,
    Last,
    At(usize),
}

/// Dynamic index of an occurrence of source line `line`.
pub fn index_of_line(trace: &Trace, line: u32, nth: Nth) -> u64 {
    let hits: Vec<u64> = trace.events.iter().filter(|e| e.src_line == line).map(|e| e.index).collect();
    assert!(!hits.is_empty(), "line {line} never executes");
    match nth {
        Nth::First => hits[0],
        Nth::Last => *hits.last().unwrap(),
        Nth::At(k) => hits[k],
    }
}

pub fn fault_on_line(p: &Program, line: u32, nth: Nth, target: FaultTarget, bit: u8) -> FaultSpec {
    let g = golden(p);
    FaultSpec {
        index: index_of_line(&g.trace, line, nth),
        target,
        bit,
    }
}

pub fn pair_for(p: &Program, fault: FaultSpec) -> TracePair {
    let g = golden(p);
    let cfg = ExecConfig {
        budget: g.dynamic_instruction_count * 10 + 1000,
        reference: g.verify.as_ref().map(|v| v.values.clone()),
        ..Default::default()
    };
    let f = execute(p, &BTreeMap::new(), Some(&fault), &cfg).unwrap();
    align_pair(g.trace, f.trace, fault).unwrap()
}

pub fn table_for(p: &Program, fault: FaultSpec) -> (TracePair, AclTable) {
    let pair = pair_for(p, fault);
    let t = build_acl(&pair);
    (pair, t)
}

/// The six single-pattern fixtures with their documented injection.
pub fn pattern_fixtures() -> Vec<(&'static str, fliptrace::patterns::PatternKind, Program, FaultSpec)> {
    use fliptrace::patterns::PatternKind::*;
    let spec: [(&str, _, u32, Nth, FaultTarget, u8); 6] = [
        ("dcl.mir", Dcl, 4, Nth::First, FaultTarget::Result, 40),
        ("repeated_add.mir", RepeatedAdditions, 12, Nth::First, FaultTarget::Result, 62),
        ("conditional.mir", ConditionalStatement, 11, Nth::Last, FaultTarget::Operand(0), 1),
        ("shift.mir", Shifting, 10, Nth::Last, FaultTarget::Operand(0), 2),
        ("truncation.mir", Truncation, 6, Nth::First, FaultTarget::Operand(0), 3),
        ("overwrite.mir", Overwriting, 5, Nth::First, FaultTarget::Result, 3),
    ];
    spec.into_iter()
        .map(|(name, kind, line, nth, target, bit)| {
            let p = fixture(name);
            let f = fault_on_line(&p, line, nth, target, bit);
            (name, kind, p, f)
        })
        .collect()
}

/// A uniformly chosen injectable slot and bit of a golden trace.
pub fn random_fault(trace: &Trace, seed: u64) -> FaultSpec {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let slots: Vec<(u64, FaultTarget)> = trace
        .events
        .iter()
        .flat_map(|e| {
            let ops = e.reads().map(move |(k, _)| (e.index, FaultTarget::Operand(k as u32)));
            let res = e.result_value.map(|_| (e.index, FaultTarget::Result));
            ops.chain(res)
        })
        .collect();
    let (index, target) = slots[rng.gen_range(0..slots.len())];
    FaultSpec {
        index,
        target,
        bit: rng.gen_range(0..64),
    }
}

/// A generated program and a random fault in its golden run.
pub fn synth_case(seed: u64) -> (Program, FaultSpec, usize) {
    let p = parse_program(&fliptrace::synth::generate_program(seed)).unwrap();
    let g = golden(&p);
    let f = random_fault(&g.trace, seed ^ 0x5eed);
    (p, f, g.trace.len())
}

//! End-to-end analysis of one injected fault: golden and faulty runs,
//! alignment, ACL table, region verdicts, drop points and patterns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::acl::{build_acl, AclTable};
use crate::campaign::{classify, Manifestation, HANG_FACTOR, HANG_SLACK};
use crate::dddg::{classify_interface_with, AccessIndex};
use crate::mirvm::{execute, ExecConfig, FaultSpec, Location, Program, RunStatus, Value, VmError};
use crate::patterns::{
    classify_region, detect_patterns, find_drop_points, Case, DropPoint, PatternInstance, ResilienceVerdict,
};
use crate::traceio::{align_pair, split_regions_with, AlignError, SplitError, SplitOptions, TracePair};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("golden run: {0}")]
    GoldenVm(VmError),
    #[error("golden run trapped or hung: {0}")]
    GoldenFailed(RunStatus),
    #[error("faulty run: {0}")]
    FaultyVm(VmError),
    #[error("alignment: {0}")]
    Align(#[from] AlignError),
    #[error("region split: {0}")]
    Split(#[from] SplitError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub divergence_start: Option<u64>,
    pub control_divergence: Option<u64>,
    pub reconvergence: Option<u64>,
    pub alignment_break: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub program_hash: String,
    pub fault: FaultSpec,
    pub status: RunStatus,
    pub manifestation: Manifestation,
    pub golden_instructions: u64,
    pub faulty_instructions: u64,
    pub alignment: AlignmentSummary,
    pub value_compare_degraded: bool,
    /// Some verdict boundary had no aligned golden event.
    pub degraded: bool,
    pub fault_index: u64,
    pub table_end: u64,
    pub baseline: u32,
    /// Case 1 and Case 2 verdicts only.
    pub verdicts: Vec<ResilienceVerdict>,
    pub drop_points: Vec<DropPoint>,
    pub patterns: Vec<PatternInstance>,
    pub acl_counts: Vec<u32>,
}

impl AnalysisReport {
    /// `index,count` series starting with the baseline just before the fault.
    pub fn counts_csv(&self) -> String {
        let mut s = String::from("index,alive_corrupted\n");
        if self.fault_index > 0 {
            s.push_str(&format!("{},{}\n", self.fault_index - 1, self.baseline));
        }
        for (off, c) in self.acl_counts.iter().enumerate() {
            s.push_str(&format!("{},{c}\n", self.fault_index + off as u64));
        }
        s
    }
}

pub struct Analysis {
    pub report: AnalysisReport,
    pub pair: TracePair,
    pub table: AclTable,
}

#[derive(Clone, Debug)]
pub struct AnalysisOptions {
    pub budget: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            budget: crate::mirvm::DEFAULT_BUDGET,
        }
    }
}

pub fn analyze(
    program: &Program,
    input: &BTreeMap<Location, Value>,
    fault: &FaultSpec,
    opts: &AnalysisOptions,
) -> Result<Analysis, AnalysisError> {
    let golden = execute(
        program,
        input,
        None,
        &ExecConfig {
            budget: opts.budget,
            ..Default::default()
        },
    )
    .map_err(AnalysisError::GoldenVm)?;
    if !golden.status.is_completed() {
        return Err(AnalysisError::GoldenFailed(golden.status));
    }
    let cfg = ExecConfig {
        budget: opts.budget.min(
            golden
                .dynamic_instruction_count
                .saturating_mul(HANG_FACTOR)
                .saturating_add(HANG_SLACK),
        ),
        memory_size: None,
        reference: golden.verify.as_ref().map(|v| v.values.clone()),
        record_trace: true,
    };
    let faulty = execute(program, input, Some(fault), &cfg).map_err(AnalysisError::FaultyVm)?;
    let manifestation = classify(&faulty, &golden);
    let pair = align_pair(golden.trace.clone(), faulty.trace.clone(), *fault)?;
    Ok(analyze_pair(pair, manifestation, faulty.status)?)
}

/// Analysis of an already aligned pair.
pub fn analyze_pair(pair: TracePair, manifestation: Manifestation, status: RunStatus) -> Result<Analysis, SplitError> {
    let table = build_acl(&pair);
    let regions = split_regions_with(
        &pair.faulty,
        &SplitOptions {
            roots: None,
            lenient: true,
        },
    )?;
    let access = AccessIndex::new(&pair.faulty);
    let verdicts: Vec<ResilienceVerdict> = regions
        .iter()
        .filter(|r| r.last >= table.fault_index && r.first < table.n.max(table.fault_index + 1))
        .map(|r| {
            let iface = classify_interface_with(r, &pair.faulty, &access);
            classify_region(r, &pair, &iface, &table, &access)
        })
        .collect();
    let degraded = table.value_compare_degraded || verdicts.iter().any(|v| v.boundary_unaligned && !v.corrupted_inputs.is_empty());
    let verdicts = verdicts.into_iter().filter(|v| v.case != Case::NotResilient).collect();
    let drop_points = find_drop_points(&table, &pair.faulty);
    let patterns = detect_patterns(&pair, &regions, &table);
    let report = AnalysisReport {
        program_hash: pair.faulty.hash_hex(),
        fault: pair.fault,
        status,
        manifestation,
        golden_instructions: pair.golden.len() as u64,
        faulty_instructions: pair.faulty.len() as u64,
        alignment: AlignmentSummary {
            divergence_start: pair.divergence_start,
            control_divergence: pair.control_divergence,
            reconvergence: pair.reconvergence,
            alignment_break: table.alignment_break,
        },
        value_compare_degraded: table.value_compare_degraded,
        degraded,
        fault_index: table.fault_index,
        table_end: table.n,
        baseline: table.baseline,
        verdicts,
        drop_points,
        patterns,
        acl_counts: table.counts.clone(),
    };
    Ok(Analysis { report, pair, table })
}

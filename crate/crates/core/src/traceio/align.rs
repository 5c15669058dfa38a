use serde::{Deserialize, Serialize};

use super::Trace;
use crate::mirvm::FaultSpec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AlignError {
    #[error("traces come from different programs (header hash mismatch)")]
    ProgramMismatch,
}

/// A golden and faulty trace of the same program and input, with the
/// points where they part and rejoin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePair {
    pub golden: Trace,
    pub faulty: Trace,
    pub fault: FaultSpec,
    /// First index where control or any value differs.
    pub divergence_start: Option<u64>,
    /// First index where the `(opcode, src_line)` streams differ, or where
    /// one trace ends before the other.
    pub control_divergence: Option<u64>,
    /// Faulty-trace index where the control streams re-synchronize.
    pub reconvergence: Option<u64>,
    /// Golden-trace index matching `reconvergence`.
    pub reconvergence_golden: Option<u64>,
}

impl TracePair {
    /// Golden index aligned with faulty index `i`, if the two control
    /// streams are synchronized there.
    pub fn golden_index(&self, i: u64) -> Option<u64> {
        match self.control_divergence {
            None => (i < self.golden.len() as u64).then_some(i),
            Some(c) if i < c => Some(i),
            Some(_) => match (self.reconvergence, self.reconvergence_golden) {
                (Some(rf), Some(rg)) if i >= rf => Some(i - rf + rg),
                _ => None,
            },
        }
    }

    pub fn has_control_divergence(&self) -> bool {
        self.control_divergence.is_some()
    }
}

pub fn align_pair(golden: Trace, faulty: Trace, fault: FaultSpec) -> Result<TracePair, AlignError> {
    if golden.program_hash != faulty.program_hash {
        return Err(AlignError::ProgramMismatch);
    }
    let (g, f) = (&golden.events, &faulty.events);
    let common = g.len().min(f.len());

    let control_divergence = (0..common)
        .find(|&i| g[i].control_key() != f[i].control_key())
        .or((g.len() != f.len()).then_some(common))
        .map(|i| i as u64);
    let divergence_start = (0..common)
        .find(|&i| g[i] != f[i])
        .map(|i| i as u64)
        .or(control_divergence);

    let (reconvergence, reconvergence_golden) = match (divergence_start, control_divergence) {
        (None, _) => (None, None),
        (Some(d), None) => {
            let r = d + 1;
            if (r as usize) < f.len() {
                (Some(r), Some(r))
            } else {
                (None, None)
            }
        }
        (Some(_), Some(c)) => {
            // Longest common suffix of the control streams, kept at or after c.
            let c = c as usize;
            let mut s = 0;
            while s < g.len() - c.min(g.len())
                && s < f.len() - c.min(f.len())
                && g[g.len() - 1 - s].control_key() == f[f.len() - 1 - s].control_key()
            {
                s += 1;
            }
            if s == 0 {
                (None, None)
            } else {
                (Some((f.len() - s) as u64), Some((g.len() - s) as u64))
            }
        }
    };

    Ok(TracePair {
        divergence_start,
        control_divergence,
        reconvergence,
        reconvergence_golden,
        fault,
        golden,
        faulty,
    })
}

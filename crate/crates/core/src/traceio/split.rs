use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{Trace, TraceEvent};
use crate::mirvm::Opcode;

/// One contiguous slice of a region's dynamic execution.
///
/// A region instance that contains a nested analysis root is cut into
/// several pieces (same `region_id` and `instance_ordinal`, increasing
/// `piece`). Code outside every root becomes synthetic instances with
/// `region_id == None`, numbered by their own ordinal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeRegionInstance {
    pub region_id: Option<u32>,
    pub instance_ordinal: u32,
    pub piece: u32,
    /// Inclusive trace index range.
    pub first: u64,
    pub last: u64,
}

impl CodeRegionInstance {
    pub fn is_synthetic(&self) -> bool {
        self.region_id.is_none()
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: u64) -> bool {
        (self.first..=self.last).contains(&index)
    }

    pub fn events<'t>(&self, trace: &'t Trace) -> &'t [TraceEvent] {
        &trace.events[self.first as usize..=self.last as usize]
    }

    /// Short label such as `r3#2` or `r3#2.1` (piece 1), `gap#0` for synthetic.
    pub fn label(&self) -> String {
        match (self.region_id, self.piece) {
            (None, _) => format!("gap#{}", self.instance_ordinal),
            (Some(r), 0) => format!("r{r}#{}", self.instance_ordinal),
            (Some(r), p) => format!("r{r}#{}.{p}", self.instance_ordinal),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SplitOptions {
    /// Region ids that delimit instances. `None` uses every region, which
    /// gives innermost attribution.
    pub roots: Option<BTreeSet<u32>>,
    /// Close regions still open at the end of the trace instead of failing
    /// (traces of trapped or hung runs).
    pub lenient: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("unbalanced region marker: region_end {id} at event {index} does not close the open region")]
    UnbalancedEnd { id: u32, index: u64 },
    #[error("unbalanced region markers: region {id} still open at end of trace")]
    Unclosed { id: u32 },
}

pub fn split_regions(trace: &Trace) -> Result<Vec<CodeRegionInstance>, SplitError> {
    split_regions_with(trace, &SplitOptions::default())
}

pub fn split_regions_with(trace: &Trace, opts: &SplitOptions) -> Result<Vec<CodeRegionInstance>, SplitError> {
    let is_root = |id: u32| opts.roots.as_ref().is_none_or(|r| r.contains(&id));
    let mut out: Vec<CodeRegionInstance> = Vec::new();
    let mut stack: Vec<(u32, u32)> = Vec::new();
    let mut next_ordinal: HashMap<u32, u32> = HashMap::new();
    let mut pieces: HashMap<(u32, u32), u32> = HashMap::new();
    let mut gaps = 0u32;

    for e in &trace.events {
        // Markers belong to the region they open or close.
        if let Opcode::RegionBegin(id) = e.opcode {
            if is_root(id) {
                let ord = next_ordinal.entry(id).or_insert(0);
                stack.push((id, *ord));
                *ord += 1;
            }
        }
        let owner = stack.last().copied();
        let extends = out.last().is_some_and(|last| {
            last.last + 1 == e.index
                && match owner {
                    Some((id, ord)) => last.region_id == Some(id) && last.instance_ordinal == ord,
                    None => last.region_id.is_none(),
                }
        });
        if extends {
            out.last_mut().unwrap().last = e.index;
        } else {
            let (region_id, instance_ordinal, piece) = match owner {
                Some((id, ord)) => {
                    let p = pieces.entry((id, ord)).or_insert(0);
                    *p += 1;
                    (Some(id), ord, *p - 1)
                }
                None => {
                    gaps += 1;
                    (None, gaps - 1, 0)
                }
            };
            out.push(CodeRegionInstance {
                region_id,
                instance_ordinal,
                piece,
                first: e.index,
                last: e.index,
            });
        }
        if let Opcode::RegionEnd(id) = e.opcode {
            if is_root(id) {
                match stack.pop() {
                    Some((open, _)) if open == id => {}
                    _ => return Err(SplitError::UnbalancedEnd { id, index: e.index }),
                }
            }
        }
    }
    if let Some(&(id, _)) = stack.last() {
        if !opts.lenient {
            return Err(SplitError::Unclosed { id });
        }
    }
    Ok(out)
}

/// Ids of regions whose `region_begin` is not nested in another region:
/// the first-level regions.
pub fn top_level_regions(trace: &Trace) -> BTreeSet<u32> {
    let mut depth = 0usize;
    let mut out = BTreeSet::new();
    for e in &trace.events {
        match e.opcode {
            Opcode::RegionBegin(id) => {
                if depth == 0 {
                    out.insert(id);
                }
                depth += 1;
            }
            Opcode::RegionEnd(_) => depth = depth.saturating_sub(1),
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirvm::{execute, parse_program, ExecConfig};
    use std::collections::BTreeMap;

    fn trace_of(src: &str) -> Trace {
        let p = parse_program(src).unwrap();
        execute(&p, &BTreeMap::new(), None, &ExecConfig::default())
            .unwrap()
            .trace
    }

    fn assert_partition(trace: &Trace, inst: &[CodeRegionInstance]) {
        let mut next = 0;
        for i in inst {
            assert_eq!(i.first, next);
            assert!(i.last >= i.first);
            next = i.last + 1;
        }
        assert_eq!(next as usize, trace.len());
    }

    const NESTED: &str = "@main {\n  %k = mov 0\nouter:\n  #region 1\n  %i = mov 0\n  #region 2\ninner:\n  %i = iadd %i, 1\n  %c = icmp.lt %i, 2\n  br_cond %c, inner, idone\nidone:\n  #endregion 2\n  %k = iadd %k, 1\n  #endregion 1\n  %d = icmp.lt %k, 4\n  br_cond %d, outer, done\ndone:\n  ret\n}\n";

    #[test]
    fn loop_run_four_times_gives_four_instances() {
        let t = trace_of(NESTED);
        let inst = split_regions(&t).unwrap();
        assert_partition(&t, &inst);
        let r2: Vec<_> = inst.iter().filter(|i| i.region_id == Some(2)).collect();
        assert_eq!(r2.iter().map(|i| i.instance_ordinal).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        // Region 1 is cut around region 2 each time.
        let r1: Vec<_> = inst.iter().filter(|i| i.region_id == Some(1)).collect();
        assert_eq!(r1.len(), 8);
        assert!(r1.iter().all(|i| i.piece < 2));
        for i in &inst {
            for e in i.events(&t) {
                assert_eq!(e.region_id, i.region_id);
            }
        }
    }

    #[test]
    fn roots_merge_nested_regions() {
        let t = trace_of(NESTED);
        let opts = SplitOptions {
            roots: Some(top_level_regions(&t)),
            lenient: false,
        };
        let inst = split_regions_with(&t, &opts).unwrap();
        assert_partition(&t, &inst);
        assert_eq!(inst.iter().filter(|i| i.region_id == Some(1)).count(), 4);
        assert!(inst.iter().all(|i| i.region_id != Some(2)));
    }

    #[test]
    fn straight_line_is_one_synthetic_instance() {
        let t = trace_of("@main {\n  %a = mov 1\n  %b = iadd %a, 2\n  ret\n}\n");
        let inst = split_regions(&t).unwrap();
        assert_eq!(inst.len(), 1);
        assert!(inst[0].is_synthetic());
        assert_eq!((inst[0].first, inst[0].last), (0, 2));
    }

    #[test]
    fn unbalanced_trace_is_rejected() {
        let mut t = trace_of("@main {\n  #region 3\n  %a = mov 1\n  #endregion 3\n  ret\n}\n");
        t.events.remove(2);
        for (i, e) in t.events.iter_mut().enumerate() {
            e.index = i as u64;
        }
        assert_eq!(split_regions(&t), Err(SplitError::Unclosed { id: 3 }));
        let lenient = SplitOptions {
            lenient: true,
            ..Default::default()
        };
        assert!(split_regions_with(&t, &lenient).is_ok());
    }
}

//! Dynamic data dependency graphs over a region instance, and the
//! input/output/internal classification of the locations it touches.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mirvm::{Location, Opcode, Value};
use crate::traceio::{CodeRegionInstance, Trace, TraceEvent};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    /// Version 0 is the value a location held on entry to the span.
    Version { location: Location, version: u32 },
    Const,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    pub value: Value,
    /// Trace index of the defining event; `None` for entry values and constants.
    pub def_index: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub opcode: Opcode,
    pub index: u64,
    pub operand: u32,
    /// The source is an address (load/store base), not data.
    pub address: bool,
}

/// Node ids are assigned in creation order and an edge's source always
/// exists before its destination, so `src < dst` on every edge.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dddg {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub first: u64,
    pub last: u64,
}

impl Dddg {
    pub fn roots(&self) -> impl Iterator<Item = &Node> {
        let has_in: BTreeSet<usize> = self.edges.iter().map(|e| e.dst).collect();
        self.nodes.iter().filter(move |n| !has_in.contains(&n.id))
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        let has_out: BTreeSet<usize> = self.edges.iter().map(|e| e.src).collect();
        self.nodes.iter().filter(move |n| !has_out.contains(&n.id))
    }

    /// Graphviz text.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph dddg {\n  rankdir=TB;\n");
        for n in &self.nodes {
            let label = match &n.kind {
                NodeKind::Version { location, version } => format!("{location}.{version} = {}", n.value),
                NodeKind::Const => format!("{}", n.value),
            };
            let shape = if matches!(n.kind, NodeKind::Const) { "box" } else { "ellipse" };
            let _ = writeln!(s, "  n{} [label=\"{}\", shape={shape}];", n.id, label.replace('"', "\\\""));
        }
        for e in &self.edges {
            let style = if e.address { ", style=dashed" } else { "" };
            let _ = writeln!(s, "  n{} -> n{} [label=\"{} #{}\"{style}];", e.src, e.dst, e.opcode, e.index);
        }
        s.push_str("}\n");
        s
    }
}

pub fn build_dddg(trace: &Trace, instance: &CodeRegionInstance) -> Dddg {
    build_dddg_events(instance.events(trace))
}

/// Build over a contiguous slice of events.
pub fn build_dddg_events(events: &[TraceEvent]) -> Dddg {
    let mut g = Dddg {
        first: events.first().map_or(0, |e| e.index),
        last: events.last().map_or(0, |e| e.index),
        ..Default::default()
    };
    // Current node and version for every location seen so far.
    let mut current: HashMap<&Location, (usize, u32)> = HashMap::new();
    for e in events {
        let mut srcs = Vec::with_capacity(e.operand_values.len());
        for (k, (loc, &value)) in e.operand_locations.iter().zip(&e.operand_values).enumerate() {
            let id = match loc {
                Some(l) => match current.get(l) {
                    Some(&(id, _)) => id,
                    None => {
                        let id = g.nodes.len();
                        g.nodes.push(Node {
                            id,
                            kind: NodeKind::Version {
                                location: l.clone(),
                                version: 0,
                            },
                            value,
                            def_index: None,
                        });
                        current.insert(l, (id, 0));
                        id
                    }
                },
                None => {
                    let id = g.nodes.len();
                    g.nodes.push(Node {
                        id,
                        kind: NodeKind::Const,
                        value,
                        def_index: None,
                    });
                    id
                }
            };
            srcs.push((k, id));
        }
        let (Some(loc), Some(value)) = (&e.result_location, e.result_value) else {
            continue;
        };
        let version = current.get(loc).map_or(1, |&(_, v)| v + 1);
        let dst = g.nodes.len();
        g.nodes.push(Node {
            id: dst,
            kind: NodeKind::Version {
                location: loc.clone(),
                version,
            },
            value,
            def_index: Some(e.index),
        });
        current.insert(loc, (dst, version));
        for (k, src) in srcs {
            g.edges.push(Edge {
                src,
                dst,
                opcode: e.opcode,
                index: e.index,
                operand: k as u32,
                address: e.is_address_slot(k),
            });
        }
    }
    g
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionInterface {
    pub inputs: BTreeSet<Location>,
    pub outputs: BTreeSet<Location>,
    pub internals: BTreeSet<Location>,
}

/// Per-location access positions over a whole trace, for lookahead
/// queries such as "is the next access after index i a read".
#[derive(Clone, Debug, Default)]
pub struct AccessIndex {
    /// (index, reads, writes), sorted by index.
    accesses: HashMap<Location, Vec<(u64, bool, bool)>>,
}

impl AccessIndex {
    pub fn new(trace: &Trace) -> Self {
        let mut accesses: HashMap<Location, Vec<(u64, bool, bool)>> = HashMap::new();
        for e in &trace.events {
            for (_, l) in e.reads() {
                let v = accesses.entry(l.clone()).or_default();
                if v.last().is_none_or(|a| a.0 != e.index) {
                    v.push((e.index, true, false));
                }
            }
            if let Some(l) = &e.result_location {
                let v = accesses.entry(l.clone()).or_default();
                match v.last_mut() {
                    Some(a) if a.0 == e.index => a.2 = true,
                    _ => v.push((e.index, false, true)),
                }
            }
        }
        Self { accesses }
    }

    /// First access to `loc` strictly after `index`: (index, reads).
    pub fn next_access(&self, loc: &Location, index: u64) -> Option<(u64, bool)> {
        let v = self.accesses.get(loc)?;
        let pos = v.partition_point(|a| a.0 <= index);
        v.get(pos).map(|a| (a.0, a.1))
    }

    /// The value in `loc` after event `index` will be read before it is overwritten.
    pub fn live_after(&self, loc: &Location, index: u64) -> bool {
        matches!(self.next_access(loc, index), Some((_, true)))
    }
}

pub fn classify_interface(instance: &CodeRegionInstance, trace: &Trace) -> RegionInterface {
    classify_interface_with(instance, trace, &AccessIndex::new(trace))
}

/// Inputs: first access in the span is a read. Outputs: written in the
/// span and live after it. Internals: everything else accessed.
pub fn classify_interface_with(instance: &CodeRegionInstance, trace: &Trace, index: &AccessIndex) -> RegionInterface {
    let mut seen: BTreeSet<&Location> = BTreeSet::new();
    let mut written: BTreeSet<&Location> = BTreeSet::new();
    let mut iface = RegionInterface::default();
    for e in instance.events(trace) {
        for (_, l) in e.reads() {
            if seen.insert(l) {
                iface.inputs.insert(l.clone());
            }
        }
        if let Some(l) = &e.result_location {
            seen.insert(l);
            written.insert(l);
        }
    }
    for l in written {
        if index.live_after(l, instance.last) {
            iface.outputs.insert(l.clone());
        }
    }
    for l in seen {
        if !iface.inputs.contains(l) && !iface.outputs.contains(l) {
            iface.internals.insert(l.clone());
        }
    }
    iface
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirvm::{execute, parse_program, ExecConfig};
    use crate::traceio::split_regions;
    use std::collections::BTreeMap;

    fn trace_of(src: &str) -> Trace {
        let p = parse_program(src).unwrap();
        execute(&p, &BTreeMap::new(), None, &ExecConfig::default())
            .unwrap()
            .trace
    }

    fn ev(op: Opcode, ops: &[&str], res: &str) -> TraceEvent {
        TraceEvent {
            index: 0,
            opcode: op,
            src_line: 1,
            operand_locations: ops.iter().map(|o| Some(o.parse().unwrap())).collect(),
            operand_values: ops.iter().map(|_| Value::float(1.0)).collect(),
            result_location: Some(res.parse().unwrap()),
            result_value: Some(Value::float(2.0)),
            region_id: None,
        }
    }

    #[test]
    fn single_add() {
        let g = build_dddg_events(&[ev(Opcode::FAdd, &["%r1", "%r2"], "%r3")]);
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.edges.len(), 2);
        assert!(g.edges.iter().all(|e| e.dst == 2));
    }

    #[test]
    fn repeated_operand_gives_parallel_edges() {
        let g = build_dddg_events(&[ev(Opcode::FAdd, &["%r1", "%r1"], "%r2")]);
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges.len(), 2);
        assert_eq!((g.edges[0].src, g.edges[0].dst), (g.edges[1].src, g.edges[1].dst));
    }

    #[test]
    fn dot_product_accumulator_chain() {
        let t = trace_of(include_str!("../fixtures/dot_product.mir"));
        let inst = split_regions(&t).unwrap();
        let region = inst.iter().find(|i| i.region_id == Some(1)).unwrap();
        let g = build_dddg(&t, region);
        let acc = Location::reg("acc");
        // Hand-built oracle: acc.0 -> acc.1 -> acc.2 -> acc.3 -> acc.4 through fadd.
        let versions: Vec<&Node> = g
            .nodes
            .iter()
            .filter(|n| matches!(&n.kind, NodeKind::Version { location, .. } if *location == acc))
            .collect();
        assert_eq!(versions.len(), 5);
        for w in versions.windows(2) {
            let e = g.edges.iter().find(|e| e.src == w[0].id && e.dst == w[1].id).unwrap();
            assert_eq!(e.opcode, Opcode::FAdd);
        }
        assert!(versions[0].def_index.is_none());
        assert_eq!(versions[4].value, Value::float(70.0));
        assert!(g.edges.iter().all(|e| e.src < e.dst));
        // Load bases are address edges.
        assert!(g.edges.iter().any(|e| e.address && e.opcode == Opcode::Load));
        assert!(g.to_dot().starts_with("digraph"));
    }

    #[test]
    fn interface_of_simple_region() {
        let src = "@main {\n  %a = mov 1\n  %b = mov 2\n  #region 1\n  %s = mov 0\n  %out = iadd %a, %b\n  #endregion 1\n  print %out\n  ret\n}\n";
        let t = trace_of(src);
        let inst = split_regions(&t).unwrap();
        let r = inst.iter().find(|i| i.region_id == Some(1)).unwrap();
        let iface = classify_interface(r, &t);
        let set = |xs: &[&str]| xs.iter().map(|x| x.parse().unwrap()).collect::<BTreeSet<Location>>();
        assert_eq!(iface.inputs, set(&["%a", "%b"]));
        assert_eq!(iface.outputs, set(&["%out"]));
        assert_eq!(iface.internals, set(&["%s"]));
    }

    #[test]
    fn dot_product_accumulator_is_input_and_output() {
        let t = trace_of(include_str!("../fixtures/dot_product.mir"));
        let inst = split_regions(&t).unwrap();
        let r = inst.iter().find(|i| i.region_id == Some(1)).unwrap();
        let iface = classify_interface(r, &t);
        let acc = Location::reg("acc");
        assert!(iface.inputs.contains(&acc) && iface.outputs.contains(&acc));
        // %i is read after the loop by nothing: internal-only writes are not outputs.
        assert!(!iface.outputs.contains(&Location::reg("i")));
    }
}

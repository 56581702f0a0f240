//! Reference implementations used only by the test targets.

#![allow(dead_code)]

use std::collections::BTreeMap;

use hetpart_core::cost::{CostTable, Device};
use hetpart_core::graph::{ComputeGraph, NodeId};
use hetpart_core::partition::Assignment;
pub use hetpart_core::train::gradcheck::{grad_check, random_mlp};
use rand::Rng;

/// Start times from the usual recurrence `S_n = max_{i ∈ pred(n)} (S_i + d_i)`,
/// with no device contention and free communication.
pub fn standard_starts(
    graph: &ComputeGraph,
    cost: &CostTable,
    assignment: &Assignment,
) -> BTreeMap<NodeId, f64> {
    let mut start = BTreeMap::new();
    let mut end: BTreeMap<NodeId, f64> = BTreeMap::new();
    for &id in graph.topological_order() {
        let s = graph
            .predecessors(id)
            .iter()
            .map(|p| end[p])
            .fold(0.0, f64::max);
        let d = cost.time(id, assignment.device(id).unwrap()).unwrap();
        start.insert(id, s);
        end.insert(id, s + d);
    }
    start
}

/// Whether, on every device, nodes taken in topological order have
/// non-overlapping intervals that also advance in time.
pub fn contention_free(
    graph: &ComputeGraph,
    cost: &CostTable,
    assignment: &Assignment,
    starts: &BTreeMap<NodeId, f64>,
) -> bool {
    let mut free: BTreeMap<Device, f64> = BTreeMap::new();
    for &id in graph.topological_order() {
        let dev = assignment.device(id).unwrap();
        let s = starts[&id];
        if free.get(&dev).is_some_and(|&f| f > s) {
            return false;
        }
        free.insert(dev, s + cost.time(id, dev).unwrap());
    }
    true
}

/// Random complete assignment of MM nodes; NonMM nodes on PL.
pub fn random_assignment<R: Rng>(graph: &ComputeGraph, rng: &mut R) -> Assignment {
    let mut a = Assignment::mm_on(graph, Device::Pl);
    for n in graph.mm_nodes() {
        if rng.gen_bool(0.5) {
            a.0.insert(n.id, Device::Aie);
        }
    }
    a
}

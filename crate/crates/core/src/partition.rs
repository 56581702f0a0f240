//! Exact PL/AIE partitioning of a training graph.
//!
//! The model minimizes the makespan `T` subject to:
//!
//! * `T >= S_i + Σ_j x_ij·t_ij` for every node,
//! * `Σ_j x_ij = 1` for every MM node (NonMM nodes are pinned to PL),
//! * `S_n >= Σ_j x_ij·t_ij + Σ_{k ∈ pred(i)} Σ_j x_kj·t_kj` for every edge `i -> n`,
//! * `T >= S_i + Σ_j x_ij·t_ij` for every sink,
//! * `Σ_i a_ij·x_ij <= A_j` for every device.
//!
//! The dependency constraint is taken exactly as written: the start of a
//! successor is bounded by the duration of its predecessor plus the summed
//! durations of that predecessor's own predecessors, without chaining start
//! times. [`model_makespan`] evaluates this semantics for a fixed assignment;
//! [`solve_exact`] and [`brute_force_optimum`] both minimize it.
//! [`simulate_schedule`] is the physical counterpart: list scheduling with
//! device exclusivity and link transfer costs.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{
    build_cost_table, estimate_comm, master_sync_time, Capacities, CostEntry, CostError, CostTable,
    Device, LinkProfile, Precision, Profiles,
};
use crate::graph::{
    build_training_graph, Algorithm, ComputeGraph, ComputeNode, GraphError, LayerSpec, NodeId,
    NodeKind, Pass,
};

pub const ASSIGNMENT_SCHEMA_VERSION: u32 = 1;

/// Largest MM-node count the enumeration oracle accepts.
pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("cost table has no {device} entry for node {node}")]
    MissingCost { node: NodeId, device: Device },
    #[error("node {node} fits on no device (resource need exceeds every capacity)")]
    NodeInfeasible { node: NodeId },
    #[error("no assignment satisfies the aggregate resource capacities")]
    CapacityInfeasible,
    #[error("enumeration refused: {count} MM nodes exceeds the limit of {BRUTE_FORCE_LIMIT}")]
    TooLarge { count: usize },
    #[error("assignment does not cover node {0}")]
    Unassigned(NodeId),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl PartitionError {
    /// Node named by an infeasibility report, if any.
    pub fn offending_node(&self) -> Option<NodeId> {
        match self {
            PartitionError::NodeInfeasible { node } => Some(*node),
            _ => None,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            PartitionError::NodeInfeasible { .. } | PartitionError::CapacityInfeasible
        )
    }
}

/// Device per node.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Assignment(pub BTreeMap<NodeId, Device>);

impl Assignment {
    /// Every node on `device`.
    pub fn uniform(graph: &ComputeGraph, device: Device) -> Self {
        Self(graph.nodes().iter().map(|n| (n.id, device)).collect())
    }

    /// MM nodes on `mm_device`, everything else on PL.
    pub fn mm_on(graph: &ComputeGraph, mm_device: Device) -> Self {
        Self(
            graph
                .nodes()
                .iter()
                .map(|n| (n.id, if n.is_mm() { mm_device } else { Device::Pl }))
                .collect(),
        )
    }

    pub fn device(&self, node: NodeId) -> Option<Device> {
        self.0.get(&node).copied()
    }

    pub fn count_on(&self, device: Device) -> usize {
        self.0.values().filter(|&&d| d == device).count()
    }

    pub fn count_mm_on(&self, graph: &ComputeGraph, device: Device) -> usize {
        graph
            .mm_nodes()
            .filter(|n| self.device(n.id) == Some(device))
            .count()
    }

    pub fn covers(&self, graph: &ComputeGraph) -> Result<(), PartitionError> {
        match graph.nodes().iter().find(|n| !self.0.contains_key(&n.id)) {
            Some(n) => Err(PartitionError::Unassigned(n.id)),
            None => Ok(()),
        }
    }

    pub fn to_document(&self) -> AssignmentDocument {
        AssignmentDocument {
            schema_version: ASSIGNMENT_SCHEMA_VERSION,
            assignment: self.0.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDocument {
    #[serde(default = "assignment_schema")]
    pub schema_version: u32,
    pub assignment: BTreeMap<NodeId, Device>,
}

fn assignment_schema() -> u32 {
    ASSIGNMENT_SCHEMA_VERSION
}

impl AssignmentDocument {
    pub fn into_assignment(self) -> Result<Assignment, GraphError> {
        if self.schema_version != ASSIGNMENT_SCHEMA_VERSION {
            return Err(GraphError::Schema(format!(
                "unsupported assignment schema_version {}",
                self.schema_version
            )));
        }
        Ok(Assignment(self.assignment))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledNode {
    pub node: NodeId,
    pub device: Device,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    /// Rows in topological order.
    pub rows: Vec<ScheduledNode>,
    pub makespan_s: f64,
    /// Nodes per device in execution order.
    pub per_device: BTreeMap<Device, Vec<NodeId>>,
}

impl Schedule {
    fn from_rows(mut rows: Vec<ScheduledNode>) -> Self {
        let makespan_s = rows.iter().map(|r| r.end_s).fold(0.0, f64::max);
        let mut per_device: BTreeMap<Device, Vec<(f64, NodeId)>> = BTreeMap::new();
        for r in &rows {
            per_device.entry(r.device).or_default().push((r.start_s, r.node));
        }
        let per_device = per_device
            .into_iter()
            .map(|(d, mut v)| {
                v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                (d, v.into_iter().map(|(_, n)| n).collect())
            })
            .collect();
        rows.shrink_to_fit();
        Self {
            rows,
            makespan_s,
            per_device,
        }
    }

    pub fn start(&self, node: NodeId) -> Option<f64> {
        self.rows.iter().find(|r| r.node == node).map(|r| r.start_s)
    }

    /// Gantt rows: `node_id,device,start_s,end_s`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["node_id", "device", "start_s", "end_s"])?;
        for r in &self.rows {
            w.write_record([
                r.node.to_string(),
                r.device.to_string(),
                r.start_s.to_string(),
                r.end_s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn duration(
    cost: &CostTable,
    node: NodeId,
    device: Device,
) -> Result<f64, PartitionError> {
    cost.time(node, device)
        .ok_or(PartitionError::MissingCost { node, device })
}

/// Start times under the literal dependency semantics, given per-node
/// durations in graph order. Returns `(starts, makespan)`.
fn literal_starts(
    preds: &[Vec<usize>],
    order: &[usize],
    dur: &[f64],
    starts: &mut [f64],
) -> f64 {
    // pred_sum[i] = dur[i] + Σ_{k ∈ pred(i)} dur[k], summed in ascending id order
    let mut makespan = 0.0f64;
    for &n in order {
        let mut s = 0.0f64;
        for &i in &preds[n] {
            let mut acc = dur[i];
            for &k in &preds[i] {
                acc += dur[k];
            }
            s = s.max(acc);
        }
        starts[n] = s;
        makespan = makespan.max(s + dur[n]);
    }
    makespan
}

struct Indexed {
    ids: Vec<NodeId>,
    preds: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl Indexed {
    fn new(graph: &ComputeGraph) -> Self {
        let ids: Vec<NodeId> = graph.nodes().iter().map(|n| n.id).collect();
        let pos: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let preds = ids
            .iter()
            .map(|&id| graph.predecessors(id).iter().map(|p| pos[p]).collect())
            .collect();
        let order = graph.topological_order().iter().map(|id| pos[id]).collect();
        Self { ids, preds, order }
    }
}

/// Makespan and start times of `assignment` under the literal model semantics.
pub fn model_schedule(
    graph: &ComputeGraph,
    cost: &CostTable,
    assignment: &Assignment,
) -> Result<Schedule, PartitionError> {
    assignment.covers(graph)?;
    let idx = Indexed::new(graph);
    let devices: Vec<Device> = idx
        .ids
        .iter()
        .map(|&id| assignment.device(id).expect("covered"))
        .collect();
    let dur = idx
        .ids
        .iter()
        .zip(&devices)
        .map(|(&id, &d)| duration(cost, id, d))
        .collect::<Result<Vec<_>, _>>()?;
    let mut starts = vec![0.0; dur.len()];
    literal_starts(&idx.preds, &idx.order, &dur, &mut starts);
    let rows = idx
        .order
        .iter()
        .map(|&i| ScheduledNode {
            node: idx.ids[i],
            device: devices[i],
            start_s: starts[i],
            end_s: starts[i] + dur[i],
        })
        .collect();
    Ok(Schedule::from_rows(rows))
}

/// Literal-semantics makespan of a complete assignment.
pub fn model_makespan(
    graph: &ComputeGraph,
    cost: &CostTable,
    assignment: &Assignment,
) -> Result<f64, PartitionError> {
    model_schedule(graph, cost, assignment).map(|s| s.makespan_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    /// `None` means unbounded above.
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Choice {
    device: Device,
    time: f64,
    resource: f64,
}

/// Instantiated partitioning model for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<LinearConstraint>,
    x_var: BTreeMap<(NodeId, Device), usize>,
    s_var: BTreeMap<NodeId, usize>,
    t_var: usize,
    ids: Vec<NodeId>,
    preds: Vec<Vec<usize>>,
    order: Vec<usize>,
    /// Candidate devices per node (PL first). NonMM nodes carry only PL.
    choices: Vec<Vec<Choice>>,
    /// Graph indices of MM nodes, ascending by id.
    decisions: Vec<usize>,
    capacity: [f64; 2],
    fixed_load: [f64; 2],
}

fn slot(d: Device) -> usize {
    match d {
        Device::Pl => 0,
        Device::Aie => 1,
        Device::Ps => unreachable!("PS is not a partition candidate"),
    }
}

impl IlpModel {
    pub fn binary_count(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn continuous_count(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Continuous).count()
    }

    pub fn x_index(&self, node: NodeId, device: Device) -> Option<usize> {
        self.x_var.get(&(node, device)).copied()
    }

    pub fn mm_count(&self) -> usize {
        self.decisions.len()
    }

    /// Whether `x_{node,device}` is forced to zero (the node does not fit).
    pub fn is_excluded(&self, node: NodeId, device: Device) -> bool {
        self.x_index(node, device)
            .is_some_and(|i| self.variables[i].upper == Some(0.0))
    }

    /// Variable values for an assignment plus its literal schedule.
    pub fn values(&self, assignment: &Assignment, schedule: &Schedule) -> Vec<f64> {
        let mut v = vec![0.0; self.variables.len()];
        for (&(node, dev), &i) in &self.x_var {
            v[i] = if assignment.device(node) == Some(dev) { 1.0 } else { 0.0 };
        }
        for r in &schedule.rows {
            if let Some(&i) = self.s_var.get(&r.node) {
                v[i] = r.start_s;
            }
        }
        v[self.t_var] = schedule.makespan_s;
        v
    }

    /// Names of constraints violated by `values` beyond a relative tolerance.
    pub fn violations(&self, values: &[f64]) -> Vec<String> {
        let mut bad = Vec::new();
        for (var, &val) in self.variables.iter().zip(values) {
            if val < var.lower || var.upper.is_some_and(|u| val > u) {
                bad.push(format!("bound({})", var.name));
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(i, a)| a * values[i]).sum();
            let scale: f64 = c
                .terms
                .iter()
                .map(|&(i, a)| (a * values[i]).abs())
                .sum::<f64>()
                .max(c.rhs.abs())
                .max(1e-300);
            let tol = 1e-9 * scale;
            let ok = match c.sense {
                Sense::Le => lhs <= c.rhs + tol,
                Sense::Ge => lhs >= c.rhs - tol,
                Sense::Eq => (lhs - c.rhs).abs() <= tol,
            };
            if !ok {
                bad.push(c.name.clone());
            }
        }
        bad
    }

    /// Literal makespan for per-node durations in graph order.
    fn evaluate(&self, dur: &[f64], scratch: &mut [f64]) -> f64 {
        literal_starts(&self.preds, &self.order, dur, scratch)
    }

    /// Lower bound on every completion of a partial assignment: the literal
    /// makespan with each undecided MM node at its fastest admissible device.
    /// Exact for complete assignments, since the makespan is monotone in every
    /// node duration.
    pub fn lower_bound(&self, partial: &BTreeMap<NodeId, Device>) -> f64 {
        let dur: Vec<f64> = self
            .ids
            .iter()
            .zip(&self.choices)
            .map(|(id, ch)| match partial.get(id) {
                Some(d) => ch
                    .iter()
                    .find(|c| c.device == *d)
                    .map_or(f64::INFINITY, |c| c.time),
                None => ch.iter().map(|c| c.time).fold(f64::INFINITY, f64::min),
            })
            .collect();
        let mut scratch = vec![0.0; dur.len()];
        self.evaluate(&dur, &mut scratch)
    }
}

/// Instantiates the model. MM nodes get one binary per device; a binary whose
/// node cannot fit on that device alone is bounded to zero.
pub fn build_ilp(
    graph: &ComputeGraph,
    cost: &CostTable,
    capacities: &Capacities,
) -> Result<IlpModel, PartitionError> {
    let idx = Indexed::new(graph);
    let capacity = [capacities.get(Device::Pl), capacities.get(Device::Aie)];
    let mut variables = Vec::new();
    let mut x_var = BTreeMap::new();
    let mut s_var = BTreeMap::new();
    let mut choices = Vec::with_capacity(graph.len());
    let mut decisions = Vec::new();
    let mut fixed_load = [0.0; 2];

    for (i, node) in graph.nodes().iter().enumerate() {
        let devices: &[Device] = if node.is_mm() {
            &Device::CANDIDATES
        } else {
            &[Device::Pl]
        };
        let mut ch = Vec::with_capacity(devices.len());
        for &d in devices {
            let e: &CostEntry = cost
                .entry(node.id, d)
                .ok_or(PartitionError::MissingCost { node: node.id, device: d })?;
            ch.push(Choice {
                device: d,
                time: e.t_seconds,
                resource: e.a_units,
            });
        }
        if node.is_mm() {
            decisions.push(i);
            for c in &ch {
                let fits = c.resource <= capacity[slot(c.device)];
                x_var.insert((node.id, c.device), variables.len());
                variables.push(Variable {
                    name: format!("x[{},{}]", node.id, c.device),
                    kind: VarKind::Binary,
                    lower: 0.0,
                    upper: Some(if fits { 1.0 } else { 0.0 }),
                });
            }
        } else {
            fixed_load[0] += ch[0].resource;
        }
        choices.push(ch);
    }
    for node in graph.nodes() {
        s_var.insert(node.id, variables.len());
        variables.push(Variable {
            name: format!("S[{}]", node.id),
            kind: VarKind::Continuous,
            lower: 0.0,
            upper: None,
        });
    }
    let t_var = variables.len();
    variables.push(Variable {
        name: "T".into(),
        kind: VarKind::Continuous,
        lower: 0.0,
        upper: None,
    });

    // Σ_j x_ij·t_ij as (terms, constant)
    let dur_terms = |i: usize, sign: f64| -> (Vec<(usize, f64)>, f64) {
        let id = idx.ids[i];
        let ch = &choices[i];
        if graph.nodes()[i].is_mm() {
            (
                ch.iter()
                    .map(|c| (x_var[&(id, c.device)], sign * c.time))
                    .collect(),
                0.0,
            )
        } else {
            (Vec::new(), sign * ch[0].time)
        }
    };

    let mut constraints = Vec::new();
    for (i, &id) in idx.ids.iter().enumerate() {
        let (mut terms, constant) = dur_terms(i, -1.0);
        terms.push((t_var, 1.0));
        terms.push((s_var[&id], -1.0));
        constraints.push(LinearConstraint {
            name: format!("makespan[{id}]"),
            terms,
            sense: Sense::Ge,
            rhs: -constant,
        });
    }
    for &i in &decisions {
        let id = idx.ids[i];
        constraints.push(LinearConstraint {
            name: format!("assign[{id}]"),
            terms: Device::CANDIDATES.iter().map(|&d| (x_var[&(id, d)], 1.0)).collect(),
            sense: Sense::Eq,
            rhs: 1.0,
        });
    }
    for (i, &id) in idx.ids.iter().enumerate() {
        for &succ in graph.successors(id) {
            let (mut terms, mut constant) = dur_terms(i, -1.0);
            for &k in &idx.preds[i] {
                let (t, c) = dur_terms(k, -1.0);
                terms.extend(t);
                constant += c;
            }
            terms.push((s_var[&succ], 1.0));
            constraints.push(LinearConstraint {
                name: format!("order[{id}->{succ}]"),
                terms,
                sense: Sense::Ge,
                rhs: -constant,
            });
        }
    }
    for id in graph.sinks() {
        let i = idx.ids.binary_search(&id).expect("sink is a node");
        let (mut terms, constant) = dur_terms(i, -1.0);
        terms.push((t_var, 1.0));
        terms.push((s_var[&id], -1.0));
        constraints.push(LinearConstraint {
            name: format!("sink[{id}]"),
            terms,
            sense: Sense::Ge,
            rhs: -constant,
        });
    }
    for d in Device::CANDIDATES {
        let cap = capacity[slot(d)];
        if !cap.is_finite() {
            continue;
        }
        let terms = decisions
            .iter()
            .filter_map(|&i| {
                let id = idx.ids[i];
                choices[i]
                    .iter()
                    .find(|c| c.device == d)
                    .map(|c| (x_var[&(id, d)], c.resource))
            })
            .collect();
        constraints.push(LinearConstraint {
            name: format!("resource[{d}]"),
            terms,
            sense: Sense::Le,
            rhs: cap - fixed_load[slot(d)],
        });
    }

    Ok(IlpModel {
        variables,
        constraints,
        x_var,
        s_var,
        t_var,
        ids: idx.ids,
        preds: idx.preds,
        order: idx.order,
        choices,
        decisions,
        capacity,
        fixed_load,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assignment: Assignment,
    pub schedule: Schedule,
    pub makespan_s: f64,
    /// Branch-and-bound nodes visited.
    pub explored: u64,
}

struct Search<'a> {
    model: &'a IlpModel,
    dur: Vec<f64>,
    scratch: Vec<f64>,
    load: [f64; 2],
    current: Vec<Device>,
    best: (f64, f64),
    best_choice: Option<Vec<Device>>,
    explored: u64,
}

/// Sum of all node durations in node order.
fn total_work(dur: &[f64]) -> f64 {
    dur.iter().fold(0.0, |acc, &d| acc + d)
}

impl Search<'_> {
    fn rank(&mut self) -> (f64, f64) {
        (self.model.evaluate(&self.dur, &mut self.scratch), total_work(&self.dur))
    }

    fn dfs(&mut self, depth: usize) {
        self.explored += 1;
        let model = self.model;
        if depth == model.decisions.len() {
            let value = self.rank();
            if value < self.best {
                self.best = value;
                self.best_choice = Some(self.current.clone());
            }
            return;
        }
        let i = model.decisions[depth];
        let optimistic = self.dur[i];
        for c in &model.choices[i] {
            let s = slot(c.device);
            if self.load[s] + c.resource > model.capacity[s] {
                continue;
            }
            self.dur[i] = c.time;
            if self.rank() < self.best {
                self.load[s] += c.resource;
                self.current.push(c.device);
                self.dfs(depth + 1);
                self.current.pop();
                self.load[s] -= c.resource;
            }
        }
        self.dur[i] = optimistic;
    }
}

/// Depth-first branch and bound over the MM binaries in ascending node id,
/// PL before AIE, pruning on the optimistic-duration bound. Optimal
/// assignments are ranked by total node time, and only strict improvements
/// replace the incumbent, so remaining ties prefer PL on the lowest ids.
pub fn solve_exact(model: &IlpModel) -> Result<Solution, PartitionError> {
    for &i in &model.decisions {
        let id = model.ids[i];
        if Device::CANDIDATES.iter().all(|&d| model.is_excluded(id, d)) {
            return Err(PartitionError::NodeInfeasible { node: id });
        }
    }
    if model.fixed_load[0] > model.capacity[0] {
        return Err(PartitionError::CapacityInfeasible);
    }
    let dur: Vec<f64> = model
        .choices
        .iter()
        .map(|ch| ch.iter().map(|c| c.time).fold(f64::INFINITY, f64::min))
        .collect();
    let n = dur.len();
    let mut search = Search {
        model,
        dur,
        scratch: vec![0.0; n],
        load: model.fixed_load,
        current: Vec::with_capacity(model.decisions.len()),
        best: (f64::INFINITY, f64::INFINITY),
        best_choice: None,
        explored: 0,
    };
    search.dfs(0);
    let explored = search.explored;
    let choice = search.best_choice.ok_or(PartitionError::CapacityInfeasible)?;
    let assignment = model.assignment_from(&choice);
    let schedule = model.schedule_for(&assignment);
    Ok(Solution {
        makespan_s: schedule.makespan_s,
        assignment,
        schedule,
        explored,
    })
}

impl IlpModel {
    fn assignment_from(&self, mm_devices: &[Device]) -> Assignment {
        let mut map: BTreeMap<NodeId, Device> =
            self.ids.iter().map(|&id| (id, Device::Pl)).collect();
        for (&i, &d) in self.decisions.iter().zip(mm_devices) {
            map.insert(self.ids[i], d);
        }
        Assignment(map)
    }

    fn schedule_for(&self, assignment: &Assignment) -> Schedule {
        let dur: Vec<f64> = self
            .ids
            .iter()
            .zip(&self.choices)
            .map(|(id, ch)| {
                let d = assignment.device(*id).expect("total");
                ch.iter().find(|c| c.device == d).expect("admissible").time
            })
            .collect();
        let mut starts = vec![0.0; dur.len()];
        self.evaluate(&dur, &mut starts);
        Schedule::from_rows(
            self.order
                .iter()
                .map(|&i| ScheduledNode {
                    node: self.ids[i],
                    device: assignment.device(self.ids[i]).expect("total"),
                    start_s: starts[i],
                    end_s: starts[i] + dur[i],
                })
                .collect(),
        )
    }
}

/// Builds and solves the model in one call.
pub fn partition(
    graph: &ComputeGraph,
    cost: &CostTable,
    capacities: &Capacities,
) -> Result<Solution, PartitionError> {
    solve_exact(&build_ilp(graph, cost, capacities)?)
}

/// Enumerates all `2^|MM|` assignments in lexicographic order (PL before AIE,
/// lowest id most significant) and keeps the first strict minimum of
/// [`model_makespan`], then total node time, among capacity-feasible ones.
pub fn brute_force_optimum(
    graph: &ComputeGraph,
    cost: &CostTable,
    capacities: &Capacities,
) -> Result<(Assignment, f64), PartitionError> {
    let mm: Vec<&ComputeNode> = graph.mm_nodes().collect();
    if mm.len() > BRUTE_FORCE_LIMIT {
        return Err(PartitionError::TooLarge { count: mm.len() });
    }
    let resource = |id: NodeId, d: Device| {
        cost.resource(id, d)
            .ok_or(PartitionError::MissingCost { node: id, device: d })
    };
    let mut base = 0.0;
    for n in graph.nodes().iter().filter(|n| !n.is_mm()) {
        base += resource(n.id, Device::Pl)?;
    }
    for n in &mm {
        let fits_any = Device::CANDIDATES
            .iter()
            .map(|&d| resource(n.id, d).map(|a| a <= capacities.get(d)))
            .collect::<Result<Vec<_>, _>>()?;
        if !fits_any.contains(&true) {
            return Err(PartitionError::NodeInfeasible { node: n.id });
        }
    }
    let m = mm.len();
    let mut best: Option<(Assignment, (f64, f64))> = None;
    for mask in 0u64..(1u64 << m) {
        let mut assignment = Assignment::mm_on(graph, Device::Pl);
        let mut load_pl = base;
        let mut load_aie = 0.0;
        for (k, n) in mm.iter().enumerate() {
            let d = if mask >> (m - 1 - k) & 1 == 1 {
                Device::Aie
            } else {
                Device::Pl
            };
            let a = resource(n.id, d)?;
            match d {
                Device::Pl => load_pl += a,
                _ => load_aie += a,
            }
            assignment.0.insert(n.id, d);
        }
        if load_pl > capacities.get(Device::Pl) || load_aie > capacities.get(Device::Aie) {
            continue;
        }
        let t = model_makespan(graph, cost, &assignment)?;
        let mut work = 0.0;
        for n in graph.nodes() {
            work += duration(cost, n.id, assignment.device(n.id).expect("total"))?;
        }
        if best.as_ref().is_none_or(|(_, b)| (t, work) < *b) {
            best = Some((assignment, (t, work)));
        }
    }
    best.map(|(a, (t, _))| (a, t))
        .ok_or(PartitionError::CapacityInfeasible)
}

/// List scheduling in topological order. Each device runs one node at a time;
/// a node is ready once every predecessor has finished and its output has
/// crossed the link (when the devices differ).
pub fn simulate_schedule(
    assignment: &Assignment,
    graph: &ComputeGraph,
    cost: &CostTable,
    links: &[LinkProfile],
) -> Result<Schedule, PartitionError> {
    assignment.covers(graph)?;
    let mut end: BTreeMap<NodeId, (f64, Device)> = BTreeMap::new();
    let mut free: BTreeMap<Device, f64> = BTreeMap::new();
    let mut rows = Vec::with_capacity(graph.len());
    for &id in graph.topological_order() {
        let dev = assignment.device(id).expect("covered");
        let mut ready = 0.0f64;
        for &p in graph.predecessors(id) {
            let (p_end, p_dev) = end[&p];
            let bytes = graph.node(p).map_or(0, |n| n.bytes_out);
            ready = ready.max(p_end + estimate_comm(bytes, p_dev, dev, links)?);
        }
        let start = ready.max(free.get(&dev).copied().unwrap_or(0.0));
        let finish = start + duration(cost, id, dev)?;
        free.insert(dev, finish);
        end.insert(id, (finish, dev));
        rows.push(ScheduledNode {
            node: id,
            device: dev,
            start_s: start,
            end_s: finish,
        });
    }
    Ok(Schedule::from_rows(rows))
}

/// Cost table placing every node on `device` at `precision`.
pub fn uniform_cost_table(
    graph: &ComputeGraph,
    profiles: &Profiles,
    device: Device,
    precision: Precision,
) -> Result<CostTable, CostError> {
    let dev = profiles.device(device)?;
    let mut table = CostTable::default();
    for n in graph.nodes() {
        table.insert(
            n.id,
            device,
            CostEntry {
                precision,
                t_seconds: crate::cost::estimate_node_time(n, dev, precision)?,
                a_units: (n.param_count * precision.bytes_per_param()) as f64,
            },
        );
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub aie_nodes: usize,
    pub pl_nodes: usize,
    pub makespan_s: f64,
    pub simulated_makespan_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Batch sizes at which the AIE MM-node count dropped versus the previous size.
    pub violations: Vec<usize>,
}

impl SweepReport {
    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_strict_increase(&self) -> bool {
        self.rows.windows(2).any(|w| w[1].aie_nodes > w[0].aie_nodes)
    }

    /// `batch_size,aie_nodes,pl_nodes,makespan_s,simulated_makespan_s`
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Partitions `network` at each batch size. `pl_nodes` counts MM nodes only.
pub fn sweep_batch_sizes(
    network: &[LayerSpec],
    algorithm: Algorithm,
    batch_sizes: &[usize],
    profiles: &Profiles,
    capacities: &Capacities,
) -> Result<SweepReport, PartitionError> {
    let mut rows = Vec::with_capacity(batch_sizes.len());
    for &bs in batch_sizes {
        let graph = build_training_graph(network, algorithm, bs)?;
        let cost = build_cost_table(&graph, profiles)?;
        let sol = partition(&graph, &cost, capacities)?;
        let sim = simulate_schedule(&sol.assignment, &graph, &cost, profiles.links())?;
        rows.push(SweepRow {
            batch_size: bs,
            aie_nodes: sol.assignment.count_mm_on(&graph, Device::Aie),
            pl_nodes: sol.assignment.count_mm_on(&graph, Device::Pl),
            makespan_s: sol.makespan_s,
            simulated_makespan_s: sim.makespan_s,
        });
    }
    let violations = rows
        .windows(2)
        .filter(|w| w[1].aie_nodes < w[0].aie_nodes)
        .map(|w| w[1].batch_size)
        .collect();
    Ok(SweepReport { rows, violations })
}

/// Device settings for a modeled training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionMode {
    /// Every node on the fabric in FP32; the AIE has no FP32 path.
    Fp32,
    /// Partitioned PL(FP16)/AIE(BF16) with master-weight refresh per step.
    Quantized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeledStep {
    pub assignment: Assignment,
    pub simulated_makespan_s: f64,
    pub master_sync_s: f64,
}

impl ModeledStep {
    pub fn total_s(&self) -> f64 {
        self.simulated_makespan_s + self.master_sync_s
    }
}

/// Modeled device time of one training step under `mode`. The quantized step
/// adds, serially, the time to refresh every weight-bearing MM node's
/// low-precision copy from the host master weights.
pub fn modeled_step_time(
    graph: &ComputeGraph,
    profiles: &Profiles,
    capacities: &Capacities,
    mode: PrecisionMode,
) -> Result<ModeledStep, PartitionError> {
    match mode {
        PrecisionMode::Fp32 => {
            let cost = uniform_cost_table(graph, profiles, Device::Pl, Precision::Fp32)?;
            let assignment = Assignment::uniform(graph, Device::Pl);
            let sim = simulate_schedule(&assignment, graph, &cost, profiles.links())?;
            Ok(ModeledStep {
                assignment,
                simulated_makespan_s: sim.makespan_s,
                master_sync_s: 0.0,
            })
        }
        PrecisionMode::Quantized => {
            let cost = build_cost_table(graph, profiles)?;
            let sol = partition(graph, &cost, capacities)?;
            let sim = simulate_schedule(&sol.assignment, graph, &cost, profiles.links())?;
            let mut sync = 0.0;
            for n in graph.mm_nodes() {
                let d = sol.assignment.device(n.id).expect("total");
                sync += master_sync_time(n, d, profiles.links())?;
            }
            Ok(ModeledStep {
                assignment: sol.assignment,
                simulated_makespan_s: sim.makespan_s,
                master_sync_s: sync,
            })
        }
    }
}

/// A random partitioning instance: DAG, affine costs, and capacities that
/// admit at least one feasible assignment.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub graph: ComputeGraph,
    pub cost: CostTable,
    pub capacities: Capacities,
}

impl RandomInstance {
    pub fn generate(seed: u64, max_mm_nodes: usize) -> RandomInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mm = rng.gen_range(1..=max_mm_nodes.max(1));
        let non_mm = rng.gen_range(0..=4usize);
        let total = mm + non_mm;
        let mut kinds: Vec<NodeKind> = (0..total)
            .map(|i| if i < mm { NodeKind::Mm } else { NodeKind::NonMm })
            .collect();
        for i in (1..total).rev() {
            let j = rng.gen_range(0..=i);
            kinds.swap(i, j);
        }
        let nodes: Vec<ComputeNode> = kinds
            .iter()
            .enumerate()
            .map(|(id, &kind)| ComputeNode {
                id,
                kind,
                pass: Pass::Forward,
                flops: 10f64.powf(rng.gen_range(3.0..8.0)) as u64,
                bytes_in: rng.gen_range(0..1 << 16),
                bytes_out: rng.gen_range(0..1 << 16),
                param_count: if kind == NodeKind::Mm {
                    rng.gen_range(1..10_000)
                } else {
                    0
                },
                label: String::new(),
                role: None,
            })
            .collect();
        let density = rng.gen_range(0.1..0.5);
        let mut edges = Vec::new();
        for v in 1..total {
            for u in 0..v {
                if rng.gen_bool(density) {
                    edges.push((u, v));
                }
            }
        }
        let pl_init = rng.gen_range(0.0..5e-6);
        let aie_init = rng.gen_range(5e-6..100e-6);
        let pl_slope = 1.0 / rng.gen_range(1e10..8e10);
        let aie_slope = 1.0 / rng.gen_range(1e11..1e12);
        let mut cost = CostTable::default();
        let mut reference_load = [0.0f64; 2];
        for n in &nodes {
            let f = n.flops as f64;
            let pl = CostEntry {
                precision: Precision::Fp16,
                t_seconds: pl_init + f * pl_slope,
                a_units: (n.param_count * 2) as f64,
            };
            cost.insert(n.id, Device::Pl, pl);
            if n.is_mm() {
                cost.insert(
                    n.id,
                    Device::Aie,
                    CostEntry {
                        precision: Precision::Bf16,
                        t_seconds: aie_init + f * aie_slope,
                        a_units: (n.param_count * 2) as f64,
                    },
                );
                let d = rng.gen_range(0..2usize);
                reference_load[d] += (n.param_count * 2) as f64;
            }
        }
        let capacities = Capacities::of(&[
            (Device::Pl, reference_load[0] * rng.gen_range(1.0..1.6)),
            (Device::Aie, reference_load[1] * rng.gen_range(1.0..1.6)),
        ]);
        let graph = ComputeGraph::new(nodes, edges, 1).expect("forward edges only");
        RandomInstance {
            graph,
            cost,
            capacities,
        }
    }
}

impl fmt::Display for Solution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "makespan {:.6e} s ({} nodes on PL, {} on AIE)",
            self.makespan_s,
            self.assignment.count_on(Device::Pl),
            self.assignment.count_on(Device::Aie)
        )
    }
}

//! Layer-granularity compute graphs for one DRL training timestep.
//!
//! A training step is expanded from a feed-forward network description into a
//! DAG whose nodes are individual layer passes (forward, backward, weight
//! update). Matrix-multiplication nodes (`MM`) are the partition candidates;
//! everything else (`NonMM`) stays on the fabric.
//!
//! FLOPs use 2 FLOPs per multiply-accumulate. A Dense forward node costs
//! `2·bs·in·out`, a Dense backward node `4·bs·in·out` (input-gradient GEMM plus
//! weight-gradient GEMM), an activation `bs·dim`, and a weight update
//! `2·param_count`. Byte counts describe activations and gradients crossing the
//! node boundary at 4 bytes per element; resident weights are not counted.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

const ELEM_BYTES: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("network is empty")]
    EmptyNetwork,
    #[error("layer {index}: expected input dimension {expected}, found {found}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("edge ({0}, {1}) references an unknown node")]
    UnknownEndpoint(NodeId, NodeId),
    #[error("graph contains a cycle through node {0}")]
    Cycle(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Relu,
    Tanh,
    MseLoss,
    WeightUpdate,
}

impl LayerKind {
    pub fn is_activation(self) -> bool {
        matches!(self, LayerKind::Relu | LayerKind::Tanh)
    }
}

/// One entry of a feed-forward network stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind: LayerKind::Dense,
            in_dim,
            out_dim,
        }
    }

    pub fn relu(dim: usize) -> Self {
        Self {
            kind: LayerKind::Relu,
            in_dim: dim,
            out_dim: dim,
        }
    }

    pub fn tanh(dim: usize) -> Self {
        Self {
            kind: LayerKind::Tanh,
            in_dim: dim,
            out_dim: dim,
        }
    }

    pub fn param_count(&self) -> u64 {
        match self.kind {
            LayerKind::Dense => (self.in_dim * self.out_dim + self.out_dim) as u64,
            _ => 0,
        }
    }

    fn validate(&self, index: usize) -> Result<(), GraphError> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(GraphError::Schema(format!(
                "layer {index}: dimensions must be positive"
            )));
        }
        match self.kind {
            LayerKind::Dense => Ok(()),
            LayerKind::Relu | LayerKind::Tanh if self.in_dim != self.out_dim => {
                Err(GraphError::Schema(format!(
                    "layer {index}: activation must preserve its dimension ({} != {})",
                    self.in_dim, self.out_dim
                )))
            }
            LayerKind::Relu | LayerKind::Tanh => Ok(()),
            LayerKind::MseLoss | LayerKind::WeightUpdate => Err(GraphError::Schema(format!(
                "layer {index}: {:?} nodes are generated by the training template and cannot appear in a network",
                self.kind
            ))),
        }
    }
}

/// `input → h1 → h2 → output` with ReLU after each hidden Dense layer.
pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut prev = input;
    for &h in hidden {
        layers.push(LayerSpec::dense(prev, h));
        layers.push(LayerSpec::relu(h));
        prev = h;
    }
    layers.push(LayerSpec::dense(prev, output));
    layers
}

/// The 4→64→64→2 cart-pole Q-network.
pub fn cartpole_network() -> Vec<LayerSpec> {
    mlp(4, &[64, 64], 2)
}

/// 400/300 actor for the continuous lunar-lander task (8-dim state, 2-dim action).
pub fn lunar_continuous_actor() -> Vec<LayerSpec> {
    let mut layers = mlp(8, &[400, 300], 2);
    layers.push(LayerSpec::tanh(2));
    layers
}

/// Checks that `layers` is a non-empty, dimension-chained feed-forward stack.
pub fn validate_network(layers: &[LayerSpec]) -> Result<(), GraphError> {
    if layers.is_empty() {
        return Err(GraphError::EmptyNetwork);
    }
    for (i, layer) in layers.iter().enumerate() {
        layer.validate(i)?;
        if i > 0 && layers[i - 1].out_dim != layer.in_dim {
            return Err(GraphError::DimensionMismatch {
                index: i,
                expected: layers[i - 1].out_dim,
                found: layer.in_dim,
            });
        }
    }
    if !layers.iter().any(|l| l.kind == LayerKind::Dense) {
        return Err(GraphError::Schema(
            "network must contain at least one dense layer".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dqn,
    Ddpg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "MM")]
    Mm,
    #[serde(rename = "NonMM")]
    NonMm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Forward,
    Backward,
    Update,
}

/// Which network instance a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkRole {
    Online,
    Target,
    Actor,
    ActorTarget,
    Critic,
    CriticTarget,
    /// The critic evaluated on the actor's own action (actor loss path).
    CriticOnPolicy,
}

/// Ties a node back to the layer it computes. Template-built graphs always
/// carry a role; imported or synthetic graphs may not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeRole {
    pub network: NetworkRole,
    /// Index into the network's layer list. Loss nodes use `layers.len()`.
    pub layer: usize,
    pub op: LayerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub pass: Pass,
    pub flops: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    #[serde(default)]
    pub param_count: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<NodeRole>,
}

impl ComputeNode {
    pub fn is_mm(&self) -> bool {
        self.kind == NodeKind::Mm
    }
}

/// A validated, acyclic training graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeGraph {
    nodes: Vec<ComputeNode>,
    edges: Vec<(NodeId, NodeId)>,
    batch_size: usize,
    index: BTreeMap<NodeId, usize>,
    preds: Vec<Vec<NodeId>>,
    succs: Vec<Vec<NodeId>>,
    order: Vec<NodeId>,
}

impl ComputeGraph {
    /// Validates ids, edge endpoints and acyclicity. Nodes are stored sorted by
    /// id and edges sorted and deduplicated.
    pub fn new(
        mut nodes: Vec<ComputeNode>,
        edges: Vec<(NodeId, NodeId)>,
        batch_size: usize,
    ) -> Result<Self, GraphError> {
        if batch_size == 0 {
            return Err(GraphError::InvalidBatchSize);
        }
        nodes.sort_by_key(|n| n.id);
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(GraphError::DuplicateNode(n.id));
            }
        }
        let edges: Vec<_> = edges
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut preds = vec![Vec::new(); nodes.len()];
        let mut succs = vec![Vec::new(); nodes.len()];
        for &(u, v) in &edges {
            let (Some(&iu), Some(&iv)) = (index.get(&u), index.get(&v)) else {
                return Err(GraphError::UnknownEndpoint(u, v));
            };
            succs[iu].push(v);
            preds[iv].push(u);
        }
        let ids: Vec<NodeId> = nodes.iter().map(|n| n.id).collect();
        let order = topological_order(&ids, &edges)?;
        Ok(Self {
            nodes,
            edges,
            batch_size,
            index,
            preds,
            succs,
            order,
        })
    }

    pub fn nodes(&self) -> &[ComputeNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&ComputeNode> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    /// Immediate predecessors, ascending by id.
    pub fn predecessors(&self, id: NodeId) -> &[NodeId] {
        self.index.get(&id).map_or(&[], |&i| &self.preds[i])
    }

    /// Immediate successors, ascending by id.
    pub fn successors(&self, id: NodeId) -> &[NodeId] {
        self.index.get(&id).map_or(&[], |&i| &self.succs[i])
    }

    pub fn sources(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .filter(|n| self.predecessors(n.id).is_empty())
            .map(|n| n.id)
    }

    pub fn sinks(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .filter(|n| self.successors(n.id).is_empty())
            .map(|n| n.id)
    }

    /// Deterministic topological order (smallest ready id first).
    pub fn topological_order(&self) -> &[NodeId] {
        &self.order
    }

    pub fn mm_nodes(&self) -> impl Iterator<Item = &ComputeNode> + '_ {
        self.nodes.iter().filter(|n| n.is_mm())
    }

    pub fn mm_count(&self) -> usize {
        self.mm_nodes().count()
    }

    pub fn total_mm_flops(&self) -> u64 {
        self.mm_nodes().map(|n| n.flops).sum()
    }

    /// Node id carrying `role` and `pass`, if the graph was template-built.
    pub fn find(&self, network: NetworkRole, layer: usize, pass: Pass) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|n| {
                n.pass == pass
                    && n.role
                        .is_some_and(|r| r.network == network && r.layer == layer)
            })
            .map(|n| n.id)
    }

    /// Copy of the graph with every node's FLOPs and bytes multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> ComputeGraph {
        let nodes = self
            .nodes
            .iter()
            .map(|n| ComputeNode {
                flops: n.flops * factor,
                bytes_in: n.bytes_in * factor,
                bytes_out: n.bytes_out * factor,
                ..n.clone()
            })
            .collect();
        ComputeGraph::new(nodes, self.edges.clone(), self.batch_size)
            .expect("scaling preserves validity")
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            schema_version: GRAPH_SCHEMA_VERSION,
            batch_size: self.batch_size,
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
    }
}

/// Kahn's algorithm with a min-heap on ids.
pub fn topological_order(
    ids: &[NodeId],
    edges: &[(NodeId, NodeId)],
) -> Result<Vec<NodeId>, GraphError> {
    let mut indegree: BTreeMap<NodeId, usize> = ids.iter().map(|&id| (id, 0)).collect();
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &(u, v) in edges {
        if !indegree.contains_key(&u) || !indegree.contains_key(&v) {
            return Err(GraphError::UnknownEndpoint(u, v));
        }
        *indegree.get_mut(&v).unwrap() += 1;
        adj.entry(u).or_default().push(v);
    }
    let mut ready: BinaryHeap<Reverse<NodeId>> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| Reverse(id))
        .collect();
    let mut order = Vec::with_capacity(ids.len());
    while let Some(Reverse(u)) = ready.pop() {
        order.push(u);
        for &v in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            let d = indegree.get_mut(&v).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(v));
            }
        }
    }
    if order.len() != indegree.len() {
        let stuck = indegree
            .iter()
            .find(|(_, &d)| d > 0)
            .map(|(&id, _)| id)
            .unwrap_or_default();
        return Err(GraphError::Cycle(stuck));
    }
    Ok(order)
}

/// Serialized form of a [`ComputeGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub batch_size: usize,
    pub nodes: Vec<ComputeNode>,
    pub edges: Vec<(NodeId, NodeId)>,
}

impl GraphDocument {
    pub fn into_graph(self) -> Result<ComputeGraph, GraphError> {
        check_schema_version(self.schema_version)?;
        ComputeGraph::new(self.nodes, self.edges, self.batch_size)
    }
}

fn default_schema_version() -> u32 {
    GRAPH_SCHEMA_VERSION
}

fn check_schema_version(v: u32) -> Result<(), GraphError> {
    if v != GRAPH_SCHEMA_VERSION {
        return Err(GraphError::Schema(format!(
            "unsupported schema_version {v} (expected {GRAPH_SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// One layer as written in a network description. Activations may omit
/// their dimensions, which are then taken from the previous layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub kind: LayerKind,
    #[serde(rename = "in", default, skip_serializing_if = "Option::is_none")]
    pub in_dim: Option<usize>,
    #[serde(rename = "out", default, skip_serializing_if = "Option::is_none")]
    pub out_dim: Option<usize>,
}

/// `{"algorithm":"dqn","batch_size":N,"layers":[...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub batch_size: usize,
    pub layers: Vec<LayerEntry>,
}

impl NetworkDocument {
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>, GraphError> {
        check_schema_version(self.schema_version)?;
        layer_specs(&self.layers)
    }

    pub fn build(&self) -> Result<ComputeGraph, GraphError> {
        build_training_graph(&self.layer_specs()?, self.algorithm, self.batch_size)
    }
}

/// Resolves implicit activation dimensions.
pub fn layer_specs(entries: &[LayerEntry]) -> Result<Vec<LayerSpec>, GraphError> {
    let mut specs: Vec<LayerSpec> = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let prev = specs.last().map(|s| s.out_dim);
        let spec = match e.kind {
            LayerKind::Dense => {
                let (Some(i_d), Some(o_d)) = (e.in_dim, e.out_dim) else {
                    return Err(GraphError::Schema(format!(
                        "layer {i}: dense layers need both \"in\" and \"out\""
                    )));
                };
                LayerSpec::dense(i_d, o_d)
            }
            kind => {
                let dim = e.in_dim.or(e.out_dim).or(prev).ok_or_else(|| {
                    GraphError::Schema(format!(
                        "layer {i}: cannot infer the dimension of a leading {kind:?} layer"
                    ))
                })?;
                LayerSpec {
                    kind,
                    in_dim: e.in_dim.unwrap_or(dim),
                    out_dim: e.out_dim.unwrap_or(dim),
                }
            }
        };
        specs.push(spec);
    }
    Ok(specs)
}

struct Builder {
    bs: u64,
    nodes: Vec<ComputeNode>,
    edges: Vec<(NodeId, NodeId)>,
}

impl Builder {
    fn push(&mut self, mut node: ComputeNode, after: &[NodeId]) -> NodeId {
        let id = self.nodes.len();
        node.id = id;
        for &p in after {
            self.edges.push((p, id));
        }
        self.nodes.push(node);
        id
    }

    fn forward_node(&self, network: NetworkRole, index: usize, layer: &LayerSpec) -> ComputeNode {
        let bs = self.bs;
        let (i, o) = (layer.in_dim as u64, layer.out_dim as u64);
        let (kind, flops) = match layer.kind {
            LayerKind::Dense => (NodeKind::Mm, 2 * bs * i * o),
            _ => (NodeKind::NonMm, bs * o),
        };
        ComputeNode {
            id: 0,
            kind,
            pass: Pass::Forward,
            flops,
            bytes_in: bs * i * ELEM_BYTES,
            bytes_out: bs * o * ELEM_BYTES,
            param_count: layer.param_count(),
            label: format!("{}.{}.{}.fwd", role_name(network), index, kind_name(layer.kind)),
            role: Some(NodeRole {
                network,
                layer: index,
                op: layer.kind,
            }),
        }
    }

    fn backward_node(&self, network: NetworkRole, index: usize, layer: &LayerSpec) -> ComputeNode {
        let bs = self.bs;
        let (i, o) = (layer.in_dim as u64, layer.out_dim as u64);
        let (kind, flops, bytes_out) = match layer.kind {
            LayerKind::Dense => (
                NodeKind::Mm,
                4 * bs * i * o,
                (bs * i + layer.param_count()) * ELEM_BYTES,
            ),
            _ => (NodeKind::NonMm, bs * o, bs * i * ELEM_BYTES),
        };
        ComputeNode {
            id: 0,
            kind,
            pass: Pass::Backward,
            flops,
            bytes_in: bs * (i + o) * ELEM_BYTES,
            bytes_out,
            param_count: layer.param_count(),
            label: format!("{}.{}.{}.bwd", role_name(network), index, kind_name(layer.kind)),
            role: Some(NodeRole {
                network,
                layer: index,
                op: layer.kind,
            }),
        }
    }

    fn update_node(&self, network: NetworkRole, index: usize, layer: &LayerSpec) -> ComputeNode {
        let p = layer.param_count();
        ComputeNode {
            id: 0,
            kind: NodeKind::NonMm,
            pass: Pass::Update,
            flops: 2 * p,
            bytes_in: 2 * p * ELEM_BYTES,
            bytes_out: p * ELEM_BYTES,
            param_count: p,
            label: format!("{}.{}.update", role_name(network), index),
            role: Some(NodeRole {
                network,
                layer: index,
                op: LayerKind::WeightUpdate,
            }),
        }
    }

    /// Loss over `width` outputs per sample: residual, square, reduce, plus the
    /// max over next-state values when `width > 1`.
    fn loss_node(&self, network: NetworkRole, layer: usize, width: usize, label: &str) -> ComputeNode {
        let bs = self.bs;
        let w = width as u64;
        ComputeNode {
            id: 0,
            kind: NodeKind::NonMm,
            pass: Pass::Forward,
            flops: 4 * bs * w,
            bytes_in: bs * (2 * w + 3) * ELEM_BYTES,
            bytes_out: bs * w * ELEM_BYTES,
            param_count: 0,
            label: label.to_string(),
            role: Some(NodeRole {
                network,
                layer,
                op: LayerKind::MseLoss,
            }),
        }
    }

    /// Forward chain; returns the node ids in layer order.
    fn forward_chain(
        &mut self,
        network: NetworkRole,
        layers: &[LayerSpec],
        after: &[NodeId],
    ) -> Vec<NodeId> {
        let mut ids = Vec::with_capacity(layers.len());
        let mut prev: Vec<NodeId> = after.to_vec();
        for (i, l) in layers.iter().enumerate() {
            let node = self.forward_node(network, i, l);
            let id = self.push(node, &prev);
            ids.push(id);
            prev = vec![id];
        }
        ids
    }

    /// Backward chain in reverse layer order. With `updates`, every Dense
    /// backward node feeds a weight-update node. Returns the last backward id.
    fn backward_chain(
        &mut self,
        network: NetworkRole,
        layers: &[LayerSpec],
        after: NodeId,
        updates: bool,
    ) -> NodeId {
        let mut prev = after;
        for (i, l) in layers.iter().enumerate().rev() {
            let node = self.backward_node(network, i, l);
            let id = self.push(node, &[prev]);
            if updates && l.kind == LayerKind::Dense {
                let up = self.update_node(network, i, l);
                self.push(up, &[id]);
            }
            prev = id;
        }
        prev
    }
}

fn role_name(r: NetworkRole) -> &'static str {
    match r {
        NetworkRole::Online => "online",
        NetworkRole::Target => "target",
        NetworkRole::Actor => "actor",
        NetworkRole::ActorTarget => "actor_target",
        NetworkRole::Critic => "critic",
        NetworkRole::CriticTarget => "critic_target",
        NetworkRole::CriticOnPolicy => "critic_on_policy",
    }
}

fn kind_name(k: LayerKind) -> &'static str {
    match k {
        LayerKind::Dense => "dense",
        LayerKind::Relu => "relu",
        LayerKind::Tanh => "tanh",
        LayerKind::MseLoss => "loss",
        LayerKind::WeightUpdate => "update",
    }
}

/// Critic network derived from an actor: input is `state ⊕ action`, the same
/// hidden widths with ReLU, and a scalar output.
pub fn ddpg_critic(actor: &[LayerSpec]) -> Vec<LayerSpec> {
    let state_dim = actor[0].in_dim;
    let action_dim = actor.last().map(|l| l.out_dim).unwrap_or(1);
    let dense: Vec<&LayerSpec> = actor.iter().filter(|l| l.kind == LayerKind::Dense).collect();
    let mut critic = Vec::new();
    let mut in_dim = state_dim + action_dim;
    for l in &dense[..dense.len() - 1] {
        critic.push(LayerSpec::dense(in_dim, l.out_dim));
        critic.push(LayerSpec::relu(l.out_dim));
        in_dim = l.out_dim;
    }
    critic.push(LayerSpec::dense(in_dim, 1));
    critic
}

/// Expands one training timestep of `algorithm` over `network` into a DAG.
///
/// DQN: target forward and online forward (independent chains) feed the loss,
/// followed by the online backward chain with one weight update per Dense
/// layer. DDPG treats `network` as the actor and derives the critic with
/// [`ddpg_critic`]; it expands actor-target → critic-target, critic forward,
/// critic loss/backward/update, then actor → critic-on-policy, actor loss, and
/// backward through the critic into the actor with actor updates.
pub fn build_training_graph(
    network: &[LayerSpec],
    algorithm: Algorithm,
    batch_size: usize,
) -> Result<ComputeGraph, GraphError> {
    validate_network(network)?;
    if batch_size == 0 {
        return Err(GraphError::InvalidBatchSize);
    }
    let mut b = Builder {
        bs: batch_size as u64,
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    let n = network.len();
    let out_dim = network[n - 1].out_dim;
    match algorithm {
        Algorithm::Dqn => {
            let target = b.forward_chain(NetworkRole::Target, network, &[]);
            let online = b.forward_chain(NetworkRole::Online, network, &[]);
            let loss = b.loss_node(NetworkRole::Online, n, out_dim, "online.loss");
            let loss = b.push(loss, &[target[n - 1], online[n - 1]]);
            b.backward_chain(NetworkRole::Online, network, loss, true);
        }
        Algorithm::Ddpg => {
            let critic = ddpg_critic(network);
            let c = critic.len();
            let actor_t = b.forward_chain(NetworkRole::ActorTarget, network, &[]);
            let critic_t = b.forward_chain(NetworkRole::CriticTarget, &critic, &[actor_t[n - 1]]);
            let critic_f = b.forward_chain(NetworkRole::Critic, &critic, &[]);
            let closs = b.loss_node(NetworkRole::Critic, c, 1, "critic.loss");
            let closs = b.push(closs, &[critic_t[c - 1], critic_f[c - 1]]);
            b.backward_chain(NetworkRole::Critic, &critic, closs, true);
            let actor_f = b.forward_chain(NetworkRole::Actor, network, &[]);
            let on_policy = b.forward_chain(NetworkRole::CriticOnPolicy, &critic, &[actor_f[n - 1]]);
            let bs = batch_size as u64;
            let aloss = ComputeNode {
                id: 0,
                kind: NodeKind::NonMm,
                pass: Pass::Forward,
                flops: 2 * bs,
                bytes_in: bs * ELEM_BYTES,
                bytes_out: bs * ELEM_BYTES,
                param_count: 0,
                label: "actor.loss".into(),
                role: Some(NodeRole {
                    network: NetworkRole::Actor,
                    layer: n,
                    op: LayerKind::MseLoss,
                }),
            };
            let aloss = b.push(aloss, &[on_policy[c - 1]]);
            let through = b.backward_chain(NetworkRole::CriticOnPolicy, &critic, aloss, false);
            b.backward_chain(NetworkRole::Actor, network, through, true);
        }
    }
    ComputeGraph::new(b.nodes, b.edges, batch_size)
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Mm => "MM",
            NodeKind::NonMm => "NonMM",
        })
    }
}

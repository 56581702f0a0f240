//! Mixed-precision execution of a DQN training graph.
//!
//! Each node runs at the precision of its device: AIE in BF16, PL in FP16,
//! PS in FP32. Node outputs are rounded to that precision and handed on as
//! f32, so every node is its own quantization unit. When the loss node is on
//! PL its gradient is multiplied by the loss scale; update nodes divide it
//! back out and report non-finite values, in which case the whole step is
//! dropped and the scale backs off.
//!
//! Master weights stay in [`Mlp`]. An update on PS keeps them in FP32; an
//! update on AIE, or on PL fed by an AIE backward node, keeps them in BF16.

use std::collections::BTreeMap;

use thiserror::Error;

use super::dqn::{dqn_target, td_loss, DqnConfig, StepExecutor, StepResult, TrainError};
use super::mlp::{
    activation_backward, activation_forward, dense_backward, dense_forward, AdamConfig, DenseGrads,
    Mlp,
};
use super::replay::Batch;
use crate::cost::{Device, Precision};
use crate::graph::{
    build_training_graph, Algorithm, ComputeGraph, LayerKind, LayerSpec, NetworkRole, NodeId, Pass,
};
use crate::numerics::{has_nonfinite, quantize_slice, unscale, LossScaler, Matrix, NumericsError};
use crate::partition::Assignment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("assignment does not cover node {0}")]
    Unassigned(NodeId),
    #[error("node {0} has no role the engine can execute")]
    UnsupportedNode(NodeId),
    #[error("node {node} expected output of node {input}, which has not run")]
    MissingInput { node: NodeId, input: NodeId },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Scaler(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    States,
    NextStates,
    Node(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Plan {
    Forward {
        target: bool,
        layer: usize,
        input: Source,
    },
    Loss {
        target_out: NodeId,
        online_out: NodeId,
    },
    Backward {
        layer: usize,
        upstream: NodeId,
        input: Source,
        output: NodeId,
    },
    Update {
        layer: usize,
        grads_from: NodeId,
    },
}

/// What a node produced.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeOutput {
    Tensor(Matrix),
    Loss {
        loss: f32,
        grad: Matrix,
        scale: f32,
    },
    DenseBackward {
        dx: Matrix,
        grads: DenseGrads,
    },
    Update {
        layer: usize,
        /// Unscaled gradients.
        grads: DenseGrads,
        nonfinite: bool,
        master_precision: Precision,
    },
}

impl NodeOutput {
    fn tensor(&self) -> &Matrix {
        match self {
            NodeOutput::Tensor(m) => m,
            NodeOutput::Loss { grad, .. } => grad,
            NodeOutput::DenseBackward { dx, .. } => dx,
            NodeOutput::Update { .. } => panic!("update nodes have no tensor output"),
        }
    }
}

/// Per-step intermediate values; emptied when the step ends.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workspace {
    outputs: BTreeMap<NodeId, NodeOutput>,
}

impl Workspace {
    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn get(&self, node: NodeId) -> Option<&NodeOutput> {
        self.outputs.get(&node)
    }
}

pub struct MixedEngine {
    graph: ComputeGraph,
    assignment: Assignment,
    plans: BTreeMap<NodeId, Plan>,
    pub scaler: LossScaler,
    scaling: bool,
    gamma: f32,
    adam: AdamConfig,
    workspace: Workspace,
}

impl MixedEngine {
    pub fn new(
        network: &[LayerSpec],
        cfg: &DqnConfig,
        assignment: Assignment,
    ) -> Result<Self, EngineError> {
        let graph = build_training_graph(network, Algorithm::Dqn, cfg.batch_size)?;
        Self::with_graph(graph, network, cfg, assignment)
    }

    pub fn with_graph(
        graph: ComputeGraph,
        network: &[LayerSpec],
        cfg: &DqnConfig,
        assignment: Assignment,
    ) -> Result<Self, EngineError> {
        if let Some(n) = graph.nodes().iter().find(|n| assignment.device(n.id).is_none()) {
            return Err(EngineError::Unassigned(n.id));
        }
        let plans = plan(&graph, network)?;
        let loss = plans
            .iter()
            .find(|(_, p)| matches!(p, Plan::Loss { .. }))
            .map(|(&id, _)| id)
            .ok_or(EngineError::UnsupportedNode(0))?;
        let scaling = assignment.device(loss) == Some(Device::Pl);
        Ok(Self {
            scaler: LossScaler::new(&cfg.loss_scaler)?,
            graph,
            assignment,
            plans,
            scaling,
            gamma: cfg.gamma,
            adam: cfg.adam(),
            workspace: Workspace::default(),
        })
    }

    pub fn graph(&self) -> &ComputeGraph {
        &self.graph
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    /// Whether the loss is scaled (loss node on PL).
    pub fn scaling_active(&self) -> bool {
        self.scaling
    }

    pub fn precision_of(&self, node: NodeId) -> Precision {
        self.assignment
            .device(node)
            .expect("checked at construction")
            .compute_precision()
    }

    /// Runs one node against the current workspace without modifying it.
    pub fn execute_node_mixed(
        &self,
        node: NodeId,
        net: &Mlp,
        batch: &Batch,
    ) -> Result<NodeOutput, EngineError> {
        let p = self.precision_of(node);
        let plan = *self.plans.get(&node).ok_or(EngineError::UnsupportedNode(node))?;
        let ws = &self.workspace;
        let fetch = |input: NodeId| {
            ws.get(input)
                .ok_or(EngineError::MissingInput { node, input })
        };
        let source = |s: Source| -> Result<&Matrix, EngineError> {
            match s {
                Source::States => Ok(&batch.states),
                Source::NextStates => Ok(&batch.next_states),
                Source::Node(id) => fetch(id).map(NodeOutput::tensor),
            }
        };
        Ok(match plan {
            Plan::Forward {
                target,
                layer,
                input,
            } => {
                let x = source(input)?;
                let params = if target { &net.target } else { &net.master };
                NodeOutput::Tensor(match net.specs[layer].kind {
                    LayerKind::Dense => dense_forward(x, params.dense(layer), p),
                    kind => activation_forward(kind, x, p),
                })
            }
            Plan::Loss {
                target_out,
                online_out,
            } => {
                let q_next = fetch(target_out)?.tensor();
                let q = fetch(online_out)?.tensor();
                let mut y = dqn_target(&batch.rewards, &batch.dones, q_next, self.gamma);
                quantize_slice(&mut y, p);
                let scale = if self.scaling { self.scaler.scale } else { 1.0 };
                let (loss, grad) = td_loss(q, &batch.actions, &y, scale, p);
                NodeOutput::Loss { loss, grad, scale }
            }
            Plan::Backward {
                layer,
                upstream,
                input,
                output,
            } => {
                let dy = fetch(upstream)?.tensor();
                let x = source(input)?;
                match net.specs[layer].kind {
                    LayerKind::Dense => {
                        let (dx, grads) = dense_backward(x, net.master.dense(layer), dy, p);
                        NodeOutput::DenseBackward { dx, grads }
                    }
                    kind => {
                        let y = fetch(output)?.tensor();
                        NodeOutput::Tensor(activation_backward(kind, x, y, dy, p))
                    }
                }
            }
            Plan::Update { layer, grads_from } => {
                let NodeOutput::DenseBackward { grads, .. } = fetch(grads_from)? else {
                    return Err(EngineError::UnsupportedNode(node));
                };
                let mut grads = grads.clone();
                let scale = self.step_scale();
                if scale != 1.0 {
                    unscale(grads.w.data_mut(), scale);
                    unscale(&mut grads.b, scale);
                }
                let nonfinite = has_nonfinite(grads.w.data()) || has_nonfinite(&grads.b);
                let device = self.assignment.device(node).expect("checked");
                let fed_by_aie = self.assignment.device(grads_from) == Some(Device::Aie);
                let master_precision = match device {
                    Device::Ps => Precision::Fp32,
                    Device::Aie => Precision::Bf16,
                    Device::Pl if fed_by_aie => Precision::Bf16,
                    Device::Pl => Precision::Fp32,
                };
                NodeOutput::Update {
                    layer,
                    grads,
                    nonfinite,
                    master_precision,
                }
            }
        })
    }

    /// Scale applied by this step's loss node.
    fn step_scale(&self) -> f32 {
        self.workspace
            .outputs
            .values()
            .find_map(|o| match o {
                NodeOutput::Loss { scale, .. } => Some(*scale),
                _ => None,
            })
            .unwrap_or(1.0)
    }

    /// Executes every node in topological order, then commits or skips the
    /// optimizer step. The workspace is empty again on return.
    pub fn step(&mut self, net: &mut Mlp, batch: &Batch) -> Result<StepResult, EngineError> {
        let order = self.graph.topological_order().to_vec();
        let mut run = || -> Result<(), EngineError> {
            for &id in &order {
                let out = self.execute_node_mixed(id, net, batch)?;
                self.workspace.outputs.insert(id, out);
            }
            Ok(())
        };
        let result = run();
        if let Err(e) = result {
            self.workspace.outputs.clear();
            return Err(e);
        }
        let outputs = std::mem::take(&mut self.workspace.outputs);
        let mut loss = f32::NAN;
        let mut updates = Vec::new();
        for out in outputs.into_values() {
            match out {
                NodeOutput::Loss { loss: l, .. } => loss = l,
                NodeOutput::Update {
                    layer,
                    grads,
                    nonfinite,
                    master_precision,
                } => updates.push((layer, grads, nonfinite, master_precision)),
                _ => {}
            }
        }
        let found = updates.iter().any(|u| u.2);
        let skipped = self.scaling && found;
        if self.scaling {
            self.scaler.update(found);
        }
        if !skipped {
            updates.sort_by_key(|u| u.0);
            net.adam.begin_step();
            for (layer, grads, _, master) in &updates {
                let params = net.master.dense_mut(*layer);
                net.adam.apply(&self.adam, *layer, params, grads);
                if *master != Precision::Fp32 {
                    params.round_to(*master);
                }
            }
        }
        Ok(StepResult { loss, skipped })
    }
}

impl StepExecutor for MixedEngine {
    fn train_step(&mut self, net: &mut Mlp, batch: &Batch) -> Result<StepResult, TrainError> {
        Ok(self.step(net, batch)?)
    }

    fn loss_scale(&self) -> Option<f32> {
        self.scaling.then_some(self.scaler.scale)
    }
}

/// Resolves each node's inputs from the template structure.
fn plan(graph: &ComputeGraph, network: &[LayerSpec]) -> Result<BTreeMap<NodeId, Plan>, EngineError> {
    let n = network.len();
    let find = |role: NetworkRole, layer: usize, pass: Pass| graph.find(role, layer, pass);
    let input_of = |role: NetworkRole, layer: usize| -> Option<Source> {
        if layer == 0 {
            Some(if role == NetworkRole::Target {
                Source::NextStates
            } else {
                Source::States
            })
        } else {
            find(role, layer - 1, Pass::Forward).map(Source::Node)
        }
    };
    let mut plans = BTreeMap::new();
    for node in graph.nodes() {
        let id = node.id;
        let role = node.role.ok_or(EngineError::UnsupportedNode(id))?;
        let unsupported = || EngineError::UnsupportedNode(id);
        let plan = match (role.network, node.pass, role.op) {
            (NetworkRole::Online | NetworkRole::Target, Pass::Forward, LayerKind::MseLoss) => {
                Plan::Loss {
                    target_out: find(NetworkRole::Target, n - 1, Pass::Forward).ok_or_else(unsupported)?,
                    online_out: find(NetworkRole::Online, n - 1, Pass::Forward).ok_or_else(unsupported)?,
                }
            }
            (r @ (NetworkRole::Online | NetworkRole::Target), Pass::Forward, _) if role.layer < n => {
                Plan::Forward {
                    target: r == NetworkRole::Target,
                    layer: role.layer,
                    input: input_of(r, role.layer).ok_or_else(unsupported)?,
                }
            }
            (NetworkRole::Online, Pass::Backward, _) if role.layer < n => Plan::Backward {
                layer: role.layer,
                upstream: *graph.predecessors(id).first().ok_or_else(unsupported)?,
                input: input_of(NetworkRole::Online, role.layer).ok_or_else(unsupported)?,
                output: find(NetworkRole::Online, role.layer, Pass::Forward).ok_or_else(unsupported)?,
            },
            (NetworkRole::Online, Pass::Update, _) if role.layer < n => Plan::Update {
                layer: role.layer,
                grads_from: find(NetworkRole::Online, role.layer, Pass::Backward).ok_or_else(unsupported)?,
            },
            _ => return Err(unsupported()),
        };
        plans.insert(id, plan);
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::cartpole_network;
    use crate::train::dqn::{Fp32Trainer, RunRngs};
    use crate::train::replay::Transition;
    use rand::Rng;

    fn batch(rng: &mut impl Rng, n: usize) -> Batch {
        let items: Vec<Transition> = (0..n)
            .map(|i| Transition {
                s: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                a: i % 2,
                r: 1.0,
                s_next: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                done: i % 5 == 0,
            })
            .collect();
        Batch::from_transitions(&items.iter().collect::<Vec<_>>())
    }

    fn setup(bs: usize) -> (DqnConfig, Mlp, Batch) {
        let cfg = DqnConfig {
            batch_size: bs,
            ..Default::default()
        };
        let mut rngs = RunRngs::new(5);
        let net = Mlp::new(&cartpole_network(), &mut rngs.init);
        let b = batch(&mut rngs.replay, bs);
        (cfg, net, b)
    }

    #[test]
    fn ps_pinned_matches_plain_trainer() {
        let (cfg, net, b) = setup(16);
        let graph = build_training_graph(&cartpole_network(), Algorithm::Dqn, 16).unwrap();
        let mut engine =
            MixedEngine::new(&cartpole_network(), &cfg, Assignment::uniform(&graph, Device::Ps)).unwrap();
        let mut plain = Fp32Trainer::new(&cfg);
        let (mut a, mut c) = (net.clone(), net);
        for _ in 0..3 {
            let ra = engine.train_step(&mut a, &b).unwrap();
            let rc = plain.train_step(&mut c, &b).unwrap();
            assert_eq!(ra.loss.to_bits(), rc.loss.to_bits());
        }
        assert_eq!(a, c);
        assert!(engine.workspace().is_empty());
    }

    #[test]
    fn all_aie_runs_bf16_without_scaling() {
        let (cfg, mut net, b) = setup(8);
        let graph = build_training_graph(&cartpole_network(), Algorithm::Dqn, 8).unwrap();
        let mut engine =
            MixedEngine::new(&cartpole_network(), &cfg, Assignment::uniform(&graph, Device::Aie)).unwrap();
        let before = engine.scaler.clone();
        let res = engine.step(&mut net, &b).unwrap();
        assert!(!res.skipped && res.loss.is_finite());
        assert_eq!(engine.scaler, before);
        assert_eq!(engine.loss_scale(), None);
        // masters were rounded to bf16
        assert!(net.master.values().all(|v| v.to_bits() & 0xFFFF == 0));
    }

    #[test]
    fn fp16_overflow_skips_and_backs_off() {
        let (mut cfg, mut net, b) = setup(8);
        cfg.loss_scaler.initial_scale = 16_777_216.0;
        let graph = build_training_graph(&cartpole_network(), Algorithm::Dqn, 8).unwrap();
        let mut engine =
            MixedEngine::new(&cartpole_network(), &cfg, Assignment::uniform(&graph, Device::Pl)).unwrap();
        let before = net.master.bits();
        let adam_before = net.adam.clone();
        let res = engine.step(&mut net, &b).unwrap();
        assert!(res.skipped);
        assert_eq!(net.master.bits(), before);
        assert_eq!(net.adam, adam_before);
        assert_eq!(engine.scaler.scale, 8_388_608.0);
        assert!(engine.workspace().is_empty());
    }

    #[test]
    fn missing_assignment_is_rejected() {
        let (cfg, ..) = setup(8);
        assert_eq!(
            MixedEngine::new(&cartpole_network(), &cfg, Assignment::default()).err(),
            Some(EngineError::Unassigned(0))
        );
    }
}

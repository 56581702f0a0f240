//! DQN on cart-pole: configuration, TD loss, and the episode loop shared by
//! the plain FP32 trainer and the mixed-precision engine.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{EngineError, MixedEngine};
use super::env::{CartPole, EnvError, ACTIONS, STATE_DIM};
use super::mlp::{backward, forward, forward_cached, AdamConfig, Mlp};
use super::replay::{Batch, ReplayBuffer, Transition};
use super::report::{PhaseTimes, ScaleEvent, TrainReport};
use crate::cost::Precision;
use crate::graph::LayerSpec;
use crate::numerics::{quantize, LossScalerConfig, Matrix};
use crate::partition::Assignment;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loss non-finite for {consecutive} consecutive applied steps (train step {step})")]
    Diverged {
        step: u64,
        consecutive: u32,
        report: Box<TrainReport>,
    },
    #[error("reward error undefined: {0}")]
    UndefinedMetric(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub const DIVERGENCE_LIMIT: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f32,
    pub epsilon_start: f32,
    pub epsilon_end: f32,
    pub epsilon_decay_steps: u64,
    /// Environment steps between target-network copies.
    pub target_sync_period: u64,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub episodes: usize,
    pub max_steps_per_episode: u32,
    pub buffer_capacity: usize,
    /// Transitions collected before the first update.
    pub warmup_steps: usize,
    /// Environment steps per update.
    pub train_every: u64,
    pub seed: u64,
    /// Accepted for completeness; quantization starts at step 0 regardless.
    pub quantization_delay: u64,
    pub loss_scaler: LossScalerConfig,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 10_000,
            target_sync_period: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            episodes: 600,
            max_steps_per_episode: 500,
            buffer_capacity: 50_000,
            warmup_steps: 1_000,
            train_every: 1,
            seed: 0,
            quantization_delay: 0,
            loss_scaler: LossScalerConfig::default(),
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon values must lie in [0, 1]");
        }
        if self.epsilon_end > self.epsilon_start {
            return bad("epsilon_end must not exceed epsilon_start");
        }
        if self.target_sync_period == 0 || self.train_every == 0 {
            return bad("target_sync_period and train_every must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch_size <= buffer_capacity");
        }
        if self.max_steps_per_episode == 0 {
            return bad("max_steps_per_episode must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        crate::numerics::LossScaler::new(&self.loss_scaler)
            .map(|_| ())
            .map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    /// Linear decay from start to end over `epsilon_decay_steps`.
    pub fn epsilon(&self, step: u64) -> f32 {
        if step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f32 / self.epsilon_decay_steps as f32;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

/// `y_i = r_i + γ·(1 − done_i)·max_a Q'(s'_i, a)`.
pub fn dqn_target(rewards: &[f32], dones: &[bool], q_next: &Matrix, gamma: f32) -> Vec<f32> {
    rewards
        .iter()
        .zip(dones)
        .enumerate()
        .map(|(i, (&r, &done))| {
            if done {
                r
            } else {
                let best = q_next.row(i).iter().copied().fold(f32::NEG_INFINITY, f32::max);
                r + gamma * best
            }
        })
        .collect()
}

/// Mean squared TD error over the taken actions and its gradient with
/// respect to `q`, multiplied by `scale` and rounded to `precision`.
pub fn td_loss(
    q: &Matrix,
    actions: &[usize],
    targets: &[f32],
    scale: f32,
    precision: Precision,
) -> (f32, Matrix) {
    let n = actions.len() as f32;
    let mut loss = 0.0f32;
    let mut grad = Matrix::zeros(q.rows(), q.cols());
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let r = q.get(i, a) - y;
        loss += r * r;
        grad.set(i, a, quantize(2.0 * r / n * scale, precision));
    }
    (loss / n, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub loss: f32,
    pub skipped: bool,
}

/// One optimizer step from a sampled batch.
pub trait StepExecutor {
    fn train_step(&mut self, net: &mut Mlp, batch: &Batch) -> Result<StepResult, TrainError>;

    /// Current loss scale, when dynamic scaling is active.
    fn loss_scale(&self) -> Option<f32> {
        None
    }
}

/// Plain FP32 trainer.
#[derive(Debug, Clone)]
pub struct Fp32Trainer {
    pub gamma: f32,
    pub adam: AdamConfig,
}

impl Fp32Trainer {
    pub fn new(cfg: &DqnConfig) -> Self {
        Self {
            gamma: cfg.gamma,
            adam: cfg.adam(),
        }
    }
}

impl StepExecutor for Fp32Trainer {
    fn train_step(&mut self, net: &mut Mlp, batch: &Batch) -> Result<StepResult, TrainError> {
        let q_next = forward(&net.specs, &net.target, &batch.next_states);
        let y = dqn_target(&batch.rewards, &batch.dones, &q_next, self.gamma);
        let acts = forward_cached(&net.specs, &net.master, &batch.states);
        let (loss, dq) = td_loss(acts.last().expect("output"), &batch.actions, &y, 1.0, Precision::Fp32);
        let grads = backward(&net.specs, &net.master, &acts, &dq);
        net.adam.begin_step();
        let layers: Vec<usize> = net.dense_layers().collect();
        for l in layers {
            let g = grads.dense(l);
            net.adam.apply(&self.adam, l, net.master.dense_mut(l), g);
        }
        Ok(StepResult {
            loss,
            skipped: false,
        })
    }
}

/// Which trainer drives the run.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainMode {
    Fp32Baseline,
    Mixed(Assignment),
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Fp32Baseline => "fp32",
            TrainMode::Mixed(_) => "mixed",
        }
    }
}

/// Independent random streams of one run.
pub struct RunRngs {
    pub init: ChaCha8Rng,
    pub env: ChaCha8Rng,
    pub policy: ChaCha8Rng,
    pub replay: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            init: stream(0),
            env: stream(1),
            policy: stream(2),
            replay: stream(3),
        }
    }
}

/// Trains a DQN agent on cart-pole. Deterministic given `seed`.
pub fn train_run(
    cfg: &DqnConfig,
    network: &[LayerSpec],
    mode: &TrainMode,
    seed: u64,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    check_network(network)?;
    match mode {
        TrainMode::Fp32Baseline => {
            let mut exec = Fp32Trainer::new(cfg);
            run_episodes(cfg, network, seed, mode.name(), &mut exec)
        }
        TrainMode::Mixed(assignment) => {
            let mut exec = MixedEngine::new(network, cfg, assignment.clone())?;
            run_episodes(cfg, network, seed, mode.name(), &mut exec)
        }
    }
}

fn check_network(network: &[LayerSpec]) -> Result<(), TrainError> {
    crate::graph::validate_network(network).map_err(|e| TrainError::Config(e.to_string()))?;
    let (i, o) = (network[0].in_dim, network[network.len() - 1].out_dim);
    if i != STATE_DIM || o != ACTIONS {
        return Err(TrainError::Config(format!(
            "network maps {i} -> {o}; cart-pole needs {STATE_DIM} -> {ACTIONS}"
        )));
    }
    Ok(())
}

/// The episode loop: ε-greedy action, environment step, replay insert, an
/// update every `train_every` steps once warm, and a target copy every
/// `target_sync_period` environment steps.
pub fn run_episodes<E: StepExecutor>(
    cfg: &DqnConfig,
    network: &[LayerSpec],
    seed: u64,
    mode: &str,
    exec: &mut E,
) -> Result<TrainReport, TrainError> {
    let mut rngs = RunRngs::new(seed);
    let mut net = Mlp::new(network, &mut rngs.init);
    let mut buffer = ReplayBuffer::with_rng(cfg.buffer_capacity, rngs.replay);
    let mut env = CartPole::new();
    let mut report = TrainReport::new(seed, mode);
    let mut timing = PhaseTimes::default();
    let mut env_steps = 0u64;
    let mut bad_losses = 0u32;
    let warm = cfg.warmup_steps.max(cfg.batch_size);
    if let Some(s) = exec.loss_scale() {
        report.loss_scale_history.push(ScaleEvent { step: 0, scale: s });
    }

    for _ in 0..cfg.episodes {
        let mut obs = env.reset(&mut rngs.env);
        let mut total = 0.0f64;
        for t in 0..cfg.max_steps_per_episode {
            let clock = Instant::now();
            let action = if rngs.policy.gen::<f32>() < cfg.epsilon(env_steps) {
                rngs.policy.gen_range(0..ACTIONS)
            } else {
                net.greedy_action(&obs)
            };
            timing.inference_s += clock.elapsed().as_secs_f64();

            let clock = Instant::now();
            let step = env.step(action)?;
            timing.env_s += clock.elapsed().as_secs_f64();
            env_steps += 1;
            let next = step.state.map(|v| v as f32);
            let capped = t + 1 == cfg.max_steps_per_episode;
            buffer.push(Transition {
                s: obs.to_vec(),
                a: action,
                r: step.reward,
                s_next: next.to_vec(),
                done: step.done && !step.truncated,
            });
            total += step.reward as f64;

            if buffer.len() >= warm && env_steps % cfg.train_every == 0 {
                let clock = Instant::now();
                let batch = buffer.sample(cfg.batch_size);
                let res = exec.train_step(&mut net, &batch)?;
                timing.train_s += clock.elapsed().as_secs_f64();
                report.train_steps += 1;
                if res.skipped {
                    report.skipped_steps += 1;
                } else if !res.loss.is_finite() {
                    bad_losses += 1;
                } else {
                    bad_losses = 0;
                }
                if let Some(s) = exec.loss_scale() {
                    if report.loss_scale_history.last().map(|e| e.scale) != Some(s) {
                        report.loss_scale_history.push(ScaleEvent {
                            step: report.train_steps,
                            scale: s,
                        });
                    }
                }
                if bad_losses >= DIVERGENCE_LIMIT {
                    report.env_steps = env_steps;
                    report.timing = timing;
                    return Err(TrainError::Diverged {
                        step: report.train_steps,
                        consecutive: bad_losses,
                        report: Box::new(report),
                    });
                }
            }
            if env_steps % cfg.target_sync_period == 0 {
                net.sync_target();
            }
            obs = next;
            if step.done || capped {
                break;
            }
        }
        report.push_episode(total);
    }
    report.env_steps = env_steps;
    report.timing = timing;
    Ok(report)
}

/// `100·|MA_q − MA_f| / MA_f` over final moving averages, each averaged
/// across seeds first.
pub fn reward_error(quant: &[TrainReport], fp32: &[TrainReport]) -> Result<f64, TrainError> {
    let pooled = |reports: &[TrainReport]| -> Result<f64, TrainError> {
        if reports.is_empty() {
            return Err(TrainError::UndefinedMetric("no reports".into()));
        }
        let mut sum = 0.0;
        for r in reports {
            sum += r
                .final_moving_average()
                .ok_or_else(|| TrainError::UndefinedMetric(format!("seed {} has no episodes", r.seed)))?;
        }
        Ok(sum / reports.len() as f64)
    };
    let episodes = fp32.first().map(|r| r.episode_rewards.len());
    if quant
        .iter()
        .chain(fp32)
        .any(|r| Some(r.episode_rewards.len()) != episodes)
    {
        return Err(TrainError::UndefinedMetric(
            "reports cover different episode counts".into(),
        ));
    }
    reward_error_from_ma(pooled(quant)?, pooled(fp32)?)
}

pub fn reward_error_from_ma(ma_quant: f64, ma_fp32: f64) -> Result<f64, TrainError> {
    if ma_fp32 == 0.0 {
        return Err(TrainError::UndefinedMetric(
            "baseline moving average is zero".into(),
        ));
    }
    Ok(100.0 * (ma_quant - ma_fp32).abs() / ma_fp32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_examples() {
        let q = Matrix::from_rows(&[vec![3.0, 7.0], vec![10.0, -1.0]]).unwrap();
        let y = dqn_target(&[1.0, 0.0], &[true, false], &q, 0.9);
        assert_eq!(y, vec![1.0, 9.0]);
    }

    #[test]
    fn loss_against_scalar_oracle() {
        let q = Matrix::from_rows(&[vec![0.5, 2.0], vec![4.0, 8.5]]).unwrap();
        let y = [1.0f32, 9.0];
        let (loss, g) = td_loss(&q, &[0, 1], &y, 1.0, Precision::Fp32);
        let r0 = 0.5f64 - 1.0;
        let r1 = 8.5f64 - 9.0;
        assert_eq!(loss as f64, (r0 * r0 + r1 * r1) / 2.0);
        assert_eq!(g.data(), &[r0 as f32, 0.0, 0.0, r1 as f32]);
        let (_, scaled) = td_loss(&q, &[0, 1], &y, 1024.0, Precision::Fp16);
        assert_eq!(scaled.get(0, 0), -512.0);
    }

    #[test]
    fn epsilon_schedule() {
        let c = DqnConfig::default();
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(5_000) - 0.525).abs() < 1e-6);
        assert_eq!(c.epsilon(20_000), 0.05);
    }

    #[test]
    fn config_validation() {
        assert!(DqnConfig::default().validate().is_ok());
        let c = DqnConfig {
            gamma: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = DqnConfig {
            epsilon_end: 1.0,
            epsilon_start: 0.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn reward_error_definition() {
        assert_eq!(reward_error_from_ma(500.0, 500.0).unwrap(), 0.0);
        assert!((reward_error_from_ma(492.0, 500.0).unwrap() - 1.6).abs() < 1e-12);
        assert!(matches!(
            reward_error_from_ma(10.0, 0.0),
            Err(TrainError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn zero_episodes_give_empty_report() {
        let cfg = DqnConfig {
            episodes: 0,
            ..Default::default()
        };
        let net = crate::graph::cartpole_network();
        let r = train_run(&cfg, &net, &TrainMode::Fp32Baseline, 1).unwrap();
        assert!(r.episode_rewards.is_empty() && r.moving_average.is_empty());
        assert_eq!(r.train_steps, 0);
    }
}

//! DQN training on cart-pole, in plain FP32 or through the mixed-precision
//! graph engine.

pub mod dqn;
pub mod engine;
pub mod gradcheck;
pub mod env;
pub mod mlp;
pub mod replay;
pub mod report;

pub use dqn::{
    dqn_target, reward_error, td_loss, train_run, DqnConfig, Fp32Trainer, StepExecutor,
    TrainError, TrainMode,
};
pub use engine::{EngineError, MixedEngine, NodeOutput};
pub use env::CartPole;
pub use mlp::Mlp;
pub use replay::{Batch, ReplayBuffer, Transition};
pub use report::{TrainReport, TrainSummary};

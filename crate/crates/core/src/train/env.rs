//! Cart-pole balancing with the classic Euler dynamics.

use rand::Rng;
use thiserror::Error;

pub const STATE_DIM: usize = 4;
pub const ACTIONS: usize = 2;
pub const STEP_CAP: u32 = 500;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE: f64 = 10.0;
const TAU: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("non-finite cart-pole state {0:?}")]
    NonFinite([f64; 4]),
    #[error("invalid action {0}")]
    InvalidAction(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: [f64; 4],
    pub reward: f32,
    /// Episode over, by failure or by the step cap.
    pub done: bool,
    /// Ended by the step cap rather than failure.
    pub truncated: bool,
}

/// `[x, x_dot, theta, theta_dot]` after one step from `state`.
pub fn cartpole_dynamics(state: [f64; 4], action: usize) -> Result<[f64; 4], EnvError> {
    if state.iter().any(|v| !v.is_finite()) {
        return Err(EnvError::NonFinite(state));
    }
    if action >= ACTIONS {
        return Err(EnvError::InvalidAction(action));
    }
    let [x, x_dot, theta, theta_dot] = state;
    let force = if action == 1 { FORCE } else { -FORCE };
    let (sin, cos) = theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    Ok([
        x + TAU * x_dot,
        x_dot + TAU * x_acc,
        theta + TAU * theta_dot,
        theta_dot + TAU * theta_acc,
    ])
}

pub fn is_terminal(state: &[f64; 4]) -> bool {
    state[0].abs() > X_LIMIT || state[2].abs() > THETA_LIMIT
}

/// One step of `state` with an explicit step counter (steps already taken).
pub fn cartpole_step(state: [f64; 4], action: usize, steps_taken: u32) -> Result<Step, EnvError> {
    let next = cartpole_dynamics(state, action)?;
    let failed = is_terminal(&next);
    let truncated = !failed && steps_taken + 1 >= STEP_CAP;
    Ok(Step {
        state: next,
        reward: 1.0,
        done: failed || truncated,
        truncated,
    })
}

#[derive(Debug, Clone)]
pub struct CartPole {
    state: [f64; 4],
    steps: u32,
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            steps: 0,
        }
    }

    pub fn reset<R: Rng>(&mut self, rng: &mut R) -> [f32; 4] {
        for v in &mut self.state {
            *v = rng.gen_range(-0.05..0.05);
        }
        self.steps = 0;
        self.observation()
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps = 0;
    }

    pub fn observation(&self) -> [f32; 4] {
        self.state.map(|v| v as f32)
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        let s = cartpole_step(self.state, action, self.steps)?;
        self.state = s.state;
        self.steps += 1;
        Ok(s)
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_right_from_rest() {
        let s = cartpole_dynamics([0.0; 4], 1).unwrap();
        // at theta = 0: temp = F/M, theta_acc = -temp / (l (4/3 - m/M)), x_acc = temp - ml theta_acc / M
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 0.02 * x_acc).abs() < 1e-12);
        assert_eq!(s[2], 0.0);
        assert!((s[3] - 0.02 * theta_acc).abs() < 1e-12);
        assert!((s[1] - 0.195_121_951).abs() < 1e-8);
        assert!((s[3] + 0.292_682_926).abs() < 1e-8);
        let step = cartpole_step([0.0; 4], 1, 0).unwrap();
        assert!(!step.done);
    }

    #[test]
    fn out_of_bounds_terminates() {
        let step = cartpole_step([3.0, 0.0, 0.0, 0.0], 0, 0).unwrap();
        assert!(step.done && !step.truncated);
    }

    #[test]
    fn step_cap() {
        let mut env = CartPole::new();
        let mut last = None;
        for i in 0..STEP_CAP {
            // hold the pole upright at rest so failure never triggers
            env.state = [0.0; 4];
            let s = env.step(i as usize % 2).unwrap();
            assert_eq!(s.done, i + 1 == STEP_CAP);
            last = Some(s);
        }
        assert!(last.unwrap().truncated);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(
            cartpole_dynamics([f64::NAN, 0.0, 0.0, 0.0], 0),
            Err(EnvError::NonFinite(_))
        ));
        assert_eq!(cartpole_dynamics([0.0; 4], 2), Err(EnvError::InvalidAction(2)));
    }
}

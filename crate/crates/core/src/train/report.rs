//! Per-run training results and their CSV/JSON forms.

use std::io;

use serde::{Deserialize, Serialize};

pub const MOVING_AVERAGE_WINDOW: usize = 100;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleEvent {
    /// Train step after which the scale took this value.
    pub step: u64,
    pub scale: f32,
}

/// Host wall time per phase. Not part of a report's identity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub inference_s: f64,
    pub env_s: f64,
    pub train_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub mode: String,
    pub episode_rewards: Vec<f64>,
    /// Mean of the trailing `min(e, 100)` episode rewards at episode `e`.
    pub moving_average: Vec<f64>,
    pub loss_scale_history: Vec<ScaleEvent>,
    pub skipped_steps: u64,
    pub train_steps: u64,
    pub env_steps: u64,
    #[serde(skip)]
    pub timing: PhaseTimes,
}

impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.mode == other.mode
            && self.episode_rewards == other.episode_rewards
            && self.moving_average == other.moving_average
            && self.loss_scale_history == other.loss_scale_history
            && self.skipped_steps == other.skipped_steps
            && self.train_steps == other.train_steps
            && self.env_steps == other.env_steps
    }
}

impl TrainReport {
    pub fn new(seed: u64, mode: &str) -> Self {
        Self {
            seed,
            mode: mode.to_string(),
            episode_rewards: Vec::new(),
            moving_average: Vec::new(),
            loss_scale_history: Vec::new(),
            skipped_steps: 0,
            train_steps: 0,
            env_steps: 0,
            timing: PhaseTimes::default(),
        }
    }

    pub fn push_episode(&mut self, reward: f64) {
        self.episode_rewards.push(reward);
        let n = self.episode_rewards.len();
        let window = &self.episode_rewards[n.saturating_sub(MOVING_AVERAGE_WINDOW)..];
        self.moving_average
            .push(window.iter().sum::<f64>() / window.len() as f64);
    }

    pub fn final_moving_average(&self) -> Option<f64> {
        self.moving_average.last().copied()
    }

    /// `episode,reward,moving_average`, episodes numbered from 1.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["episode", "reward", "moving_average"])?;
        for (i, (r, ma)) in self.episode_rewards.iter().zip(&self.moving_average).enumerate() {
            w.write_record([(i + 1).to_string(), r.to_string(), ma.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> SeedSummary {
        SeedSummary {
            seed: self.seed,
            mode: self.mode.clone(),
            episodes: self.episode_rewards.len(),
            final_moving_average: self.final_moving_average(),
            skipped_steps: self.skipped_steps,
            train_steps: self.train_steps,
            loss_scale_history: self.loss_scale_history.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub mode: String,
    pub episodes: usize,
    pub final_moving_average: Option<f64>,
    pub skipped_steps: u64,
    pub train_steps: u64,
    pub loss_scale_history: Vec<ScaleEvent>,
}

/// Pooled results over seeds, optionally against a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub runs: Vec<SeedSummary>,
    pub pooled_final_moving_average: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_runs: Option<Vec<SeedSummary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_pooled_final_moving_average: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward_error_percent: Option<f64>,
}

pub fn pooled_final_moving_average(reports: &[TrainReport]) -> Option<f64> {
    let finals: Option<Vec<f64>> = reports.iter().map(TrainReport::final_moving_average).collect();
    let finals = finals?;
    (!finals.is_empty()).then(|| finals.iter().sum::<f64>() / finals.len() as f64)
}

impl TrainSummary {
    pub fn new(runs: &[TrainReport]) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            runs: runs.iter().map(TrainReport::summary).collect(),
            pooled_final_moving_average: pooled_final_moving_average(runs),
            baseline_runs: None,
            baseline_pooled_final_moving_average: None,
            reward_error_percent: None,
        }
    }

    pub fn with_baseline(mut self, baseline: &[TrainReport], reward_error: Option<f64>) -> Self {
        self.baseline_runs = Some(baseline.iter().map(TrainReport::summary).collect());
        self.baseline_pooled_final_moving_average = pooled_final_moving_average(baseline);
        self.reward_error_percent = reward_error;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_window() {
        let mut r = TrainReport::new(0, "fp32");
        for e in 1..=150 {
            r.push_episode(e as f64);
        }
        assert_eq!(r.moving_average[0], 1.0);
        assert_eq!(r.moving_average[9], 5.5);
        assert_eq!(r.moving_average[99], 50.5);
        // episodes 51..=150
        assert_eq!(r.final_moving_average(), Some(100.5));
    }

    #[test]
    fn timing_is_not_identity() {
        let mut a = TrainReport::new(1, "fp32");
        let mut b = a.clone();
        a.timing.train_s = 1.0;
        b.timing.train_s = 2.0;
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        assert!(!json.contains("timing") && !json.contains("inference_s"));
    }

    #[test]
    fn csv_rows() {
        let mut r = TrainReport::new(0, "fp32");
        r.push_episode(10.0);
        r.push_episode(20.0);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "episode,reward,moving_average\n1,10,10\n2,20,15\n"
        );
    }
}

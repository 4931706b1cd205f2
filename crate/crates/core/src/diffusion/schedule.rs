use serde::{Deserialize, Serialize};

use super::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Linear β schedule with cumulative products; `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn make_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    if timesteps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::Schedule(format!(
            "need T ≥ 1 and 0 < β_start ≤ β_end < 1, got T={timesteps} β=({beta_start}, {beta_end})"
        )));
    }
    let betas: Vec<f64> = (0..timesteps)
        .map(|i| {
            if timesteps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(timesteps + 1);
    alpha_bars.push(1.0);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule { betas, alpha_bars })
}

impl NoiseSchedule {
    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self, DiffusionError> {
        make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    /// β_t for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// ᾱ_t for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Variance of q(z_{t−1} | z_t, z_0).
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup from `lr_base` to `lr_peak`, then `n_cycles` half-cosine
/// arcs from `lr_peak` down to `lr_min`, the last ending at `total_steps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub warmup_steps: usize,
    pub lr_base: f64,
    pub lr_peak: f64,
    pub lr_min: f64,
    /// Number of parameter updates. A stage profile may leave this at 0 to
    /// have it derived from its epochs and batch size.
    pub total_steps: usize,
    pub n_cycles: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 3000,
            lr_base: 1e-6,
            lr_peak: 3e-5,
            lr_min: 1e-5,
            total_steps: 30_000,
            n_cycles: 1,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lr_base, self.lr_peak, self.lr_min]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !finite || !(self.lr_base < self.lr_min && self.lr_min < self.lr_peak) {
            return Err(Error::Config(format!(
                "schedule needs 0 < lr_base < lr_min < lr_peak, got {} / {} / {}",
                self.lr_base, self.lr_min, self.lr_peak
            )));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.n_cycles == 0 {
            return Err(Error::Config("n_cycles must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate for the update numbered `step` (0-based).
pub fn lr_at(step: usize, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(Error::Argument(format!("step {step} outside [0, {}]", cfg.total_steps)));
    }
    if step <= cfg.warmup_steps {
        if cfg.warmup_steps == 0 {
            return Ok(cfg.lr_peak);
        }
        let frac = step as f64 / cfg.warmup_steps as f64;
        return Ok(cfg.lr_base + (cfg.lr_peak - cfg.lr_base) * frac);
    }
    let n = cfg.n_cycles as f64;
    let t = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64 * n;
    let cycle = t.floor().min(n - 1.0);
    let local = t - cycle;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * local).cos());
    Ok(cfg.lr_min + (cfg.lr_peak - cfg.lr_min) * cos)
}

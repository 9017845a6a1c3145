use serde::{Deserialize, Serialize};

use super::freeze::FreezePolicy;
use super::schedule::ScheduleConfig;
use crate::datakit::{Direction, DEFAULT_LENGTH_THRESHOLD_CHARS};
use crate::error::{Error, Result};

/// Batch shape, length and schedule of one curriculum stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageProfile {
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub epochs: usize,
    pub schedule: ScheduleConfig,
    /// When set, `warmup_steps` becomes this fraction of the resolved total.
    #[serde(default)]
    pub warmup_fraction: Option<f64>,
}

impl StageProfile {
    /// Examples consumed by one parameter update.
    pub fn examples_per_step(&self) -> usize {
        self.batch_size * self.grad_accum_steps
    }

    pub fn steps_per_epoch(&self, n_examples: usize) -> usize {
        n_examples.div_ceil(self.examples_per_step())
    }

    /// The stage schedule with `total_steps` filled in when left at 0.
    pub fn resolved_schedule(&self, n_examples: usize) -> Result<ScheduleConfig> {
        let mut s = self.schedule.clone();
        if s.total_steps == 0 {
            s.total_steps = self.epochs * self.steps_per_epoch(n_examples);
        }
        if let Some(f) = self.warmup_fraction {
            s.warmup_steps = (s.total_steps as f64 * f).floor() as usize;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.grad_accum_steps == 0 || self.epochs == 0 {
            return Err(Error::Config(format!(
                "batch_size {}, grad_accum_steps {} and epochs {} must all be >= 1",
                self.batch_size, self.grad_accum_steps, self.epochs
            )));
        }
        if self.warmup_fraction.is_some_and(|f| !(0.0..1.0).contains(&f)) {
            return Err(Error::Config("warmup_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainProfile {
    pub direction: Direction,
    pub seed: u64,
    /// With `false`, every record trains in one `single` stage using `short`.
    pub two_stage: bool,
    pub length_threshold_chars: usize,
    pub short: StageProfile,
    pub long: StageProfile,
    pub freeze: FreezePolicy,
    /// Clear Adam moments before the long stage.
    pub reset_optimizer_between_stages: bool,
    /// Train on `Transcription: ... Translation: ...` targets.
    pub cot: bool,
    pub max_new_tokens: usize,
}

impl TrainProfile {
    /// English source: short stage at batch 4, long stage at batch 1.
    pub fn en_to_indic(direction: Direction) -> Self {
        Self {
            direction,
            seed: 0,
            two_stage: true,
            length_threshold_chars: DEFAULT_LENGTH_THRESHOLD_CHARS,
            short: StageProfile {
                batch_size: 4,
                grad_accum_steps: 1,
                epochs: 1,
                schedule: ScheduleConfig::default(),
                warmup_fraction: None,
            },
            long: StageProfile {
                batch_size: 1,
                grad_accum_steps: 1,
                epochs: 1,
                schedule: ScheduleConfig::default(),
                warmup_fraction: None,
            },
            freeze: FreezePolicy::default(),
            reset_optimizer_between_stages: true,
            cot: false,
            max_new_tokens: 64,
        }
    }

    /// Indic source: one stage, batch 1 with 4-way accumulation, speech
    /// encoder trainable in the first epoch.
    pub fn indic_to_en(direction: Direction) -> Self {
        let stage = StageProfile {
            batch_size: 1,
            grad_accum_steps: 4,
            epochs: 1,
            schedule: ScheduleConfig::default(),
            warmup_fraction: None,
        };
        Self {
            two_stage: false,
            short: stage.clone(),
            long: stage,
            freeze: FreezePolicy {
                speech_encoder_trainable_first_epoch: true,
                ..FreezePolicy::default()
            },
            ..Self::en_to_indic(direction)
        }
    }

    /// Small-corpus preset for the synthetic task, shaped like
    /// [`Self::for_direction`]: learning rates scaled up from the full-size
    /// schedule with the same base/peak/min ratios, 10% warmup, and a length
    /// threshold that splits the synthetic transcripts roughly in half.
    pub fn toy(direction: Direction) -> Self {
        let stage = |batch_size, grad_accum_steps, epochs, peak: f64| StageProfile {
            batch_size,
            grad_accum_steps,
            epochs,
            schedule: ScheduleConfig {
                warmup_steps: 0,
                lr_base: peak / 30.0,
                lr_peak: peak,
                lr_min: peak / 3.0,
                total_steps: 0,
                n_cycles: 1,
            },
            warmup_fraction: Some(0.1),
        };
        let base = Self::for_direction(direction);
        let (short, long) = if base.two_stage {
            (stage(4, 1, 16, 4e-3), stage(1, 1, 8, 1e-3))
        } else {
            (stage(1, 4, 12, 4e-3), stage(1, 4, 12, 4e-3))
        };
        Self {
            length_threshold_chars: 26,
            short,
            long,
            max_new_tokens: 24,
            ..base
        }
    }

    /// Preset chosen by source language.
    pub fn for_direction(direction: Direction) -> Self {
        if direction.source == "en" {
            Self::en_to_indic(direction)
        } else {
            Self::indic_to_en(direction)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.short.validate()?;
        self.long.validate()?;
        self.freeze.validate()?;
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_follow_direction() {
        let p = TrainProfile::for_direction("en-ta".parse().unwrap());
        assert!(p.two_stage);
        assert_eq!((p.short.batch_size, p.short.grad_accum_steps), (4, 1));
        let p = TrainProfile::for_direction("bn-en".parse().unwrap());
        assert!(!p.two_stage);
        assert_eq!((p.short.batch_size, p.short.grad_accum_steps), (1, 4));
        assert!(p.freeze.speech_encoder_trainable_first_epoch);
        let t = TrainProfile::toy("bn-en".parse().unwrap());
        assert!(!t.two_stage && t.freeze.speech_encoder_trainable_first_epoch);
        assert_eq!((t.short.batch_size, t.short.grad_accum_steps), (1, 4));
        assert!(TrainProfile::toy("en-ta".parse().unwrap()).two_stage);
    }

    #[test]
    fn derived_total_counts_updates() {
        let s = StageProfile {
            batch_size: 1,
            grad_accum_steps: 4,
            epochs: 3,
            schedule: ScheduleConfig {
                warmup_steps: 2,
                total_steps: 0,
                ..ScheduleConfig::default()
            },
            warmup_fraction: None,
        };
        assert_eq!(s.steps_per_epoch(10), 3);
        assert_eq!(s.resolved_schedule(10).unwrap().total_steps, 9);
        assert!(s.resolved_schedule(0).is_err());
    }
}

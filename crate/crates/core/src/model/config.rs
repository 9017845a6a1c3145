use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datakit::Direction;
use crate::error::{Error, Result};
use crate::Real;

/// Frozen feature extractor stand-in (speech or audio-event stream).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub feature_dim_in: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub seed: u64,
    /// Input frames pooled into each output frame.
    pub hop: usize,
}

impl EncoderConfig {
    pub fn validate(&self, name: &str) -> Result<()> {
        if self.feature_dim_in == 0 || self.d_model == 0 || self.n_layers == 0 || self.hop == 0 {
            return Err(Error::Config(format!("{name}: all encoder sizes must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QFormerConfig {
    pub window_len_frames: usize,
    pub queries_per_window: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub seed: u64,
}

impl Default for QFormerConfig {
    fn default() -> Self {
        Self {
            window_len_frames: 17,
            queries_per_window: 1,
            d_model: 48,
            n_layers: 1,
            n_heads: 1,
            seed: 3,
        }
    }
}

impl QFormerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len_frames == 0 || self.queries_per_window == 0 {
            return Err(Error::Config(
                "qformer: window length and query count must be >= 1".into(),
            ));
        }
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "qformer: d_model {} must be positive and divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Decoder projections that can carry an adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoraTarget {
    Q,
    K,
    V,
    O,
}

impl LoraTarget {
    pub fn name(self) -> &'static str {
        match self {
            LoraTarget::Q => "q",
            LoraTarget::K => "k",
            LoraTarget::V => "v",
            LoraTarget::O => "o",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: Real,
    pub targets: BTreeSet<LoraTarget>,
    pub init_seed: u64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 32.0,
            targets: [LoraTarget::Q, LoraTarget::V].into_iter().collect(),
            init_seed: 4,
        }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> Real {
        self.alpha / self.rank as Real
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || !(self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "lora: rank {} must be >= 1 and alpha {} > 0",
                self.rank, self.alpha
            )));
        }
        Ok(())
    }
}

/// Tiny frozen causal LM standing in for the instruction-tuned decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_layers == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("decoder: all sizes must be positive".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "decoder: d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config(
                "decoder: d_model must be even for sinusoidal positions".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub speech_encoder: EncoderConfig,
    /// Second frozen stream for non-speech audio. Used only when `use_audio_events`.
    pub audio_encoder: EncoderConfig,
    pub use_audio_events: bool,
    pub qformer: QFormerConfig,
    pub decoder: DecoderConfig,
    /// `None` removes every adapter.
    pub lora: Option<LoraConfig>,
    /// Instruction text per direction tag (`"en-hi"`); see [`ModelConfig::prompt_text`].
    #[serde(default)]
    pub prompts: BTreeMap<String, String>,
}

impl ModelConfig {
    /// Sizes used throughout the examples and tests: 16-dim input features,
    /// 48-wide components, windows of 2 frames with one query each.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            speech_encoder: EncoderConfig {
                feature_dim_in: 16,
                d_model: 48,
                n_layers: 1,
                seed: 1,
                hop: 2,
            },
            audio_encoder: EncoderConfig {
                feature_dim_in: 16,
                d_model: 16,
                n_layers: 1,
                seed: 2,
                hop: 2,
            },
            use_audio_events: false,
            qformer: QFormerConfig {
                window_len_frames: 2,
                ..QFormerConfig::default()
            },
            decoder: DecoderConfig {
                vocab_size,
                d_model: 48,
                n_layers: 2,
                n_heads: 1,
                max_seq_len: 96,
                seed: 5,
            },
            lora: Some(LoraConfig::default()),
            prompts: BTreeMap::new(),
        }
    }

    /// Configured prompt for `direction`, else `"translate {src} to {tgt}"`.
    pub fn prompt_text(&self, direction: &Direction) -> String {
        self.prompts
            .get(&direction.tag())
            .cloned()
            .unwrap_or_else(|| format!("translate {} to {}", direction.source, direction.target))
    }

    /// Width of the features entering the Q-Former.
    pub fn fused_dim(&self) -> usize {
        self.speech_encoder.d_model
            + if self.use_audio_events {
                self.audio_encoder.d_model
            } else {
                0
            }
    }

    pub fn validate(&self) -> Result<()> {
        self.speech_encoder.validate("speech_encoder")?;
        self.audio_encoder.validate("audio_encoder")?;
        if self.use_audio_events && self.audio_encoder.feature_dim_in != self.speech_encoder.feature_dim_in {
            return Err(Error::Config(
                "audio_encoder and speech_encoder must read the same features".into(),
            ));
        }
        self.qformer.validate()?;
        self.decoder.validate()?;
        if let Some(l) = &self.lora {
            l.validate()?;
        }
        Ok(())
    }
}

//! Frozen encoders, the window-level Q-Former bridge, LoRA adapters and the
//! frozen causal decoder.
//!
//! Parameter names are dotted paths: `speech_encoder.*`, `audio_encoder.*`,
//! `qformer.*`, `decoder.*`, with adapters at
//! `decoder.layers.{l}.attn.{q,k,v,o}.lora.{a,b}`.

mod bridge;
mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod lora;
mod params;
mod qformer;

pub use bridge::{argmax, BridgeModel};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{DecoderConfig, EncoderConfig, LoraConfig, LoraTarget, ModelConfig, QFormerConfig};
pub use decoder::{sinusoidal_positions, DECODER};
pub use encoder::{encode_speech, fuse_features, mean_pool, AUDIO_ENCODER, SPEECH_ENCODER};
pub(crate) use lora::{adapted_backward, adapted_forward};
pub use lora::{lora_forward, LoraLayer};
pub use qformer::{output_token_count, window_partition, window_ranges, QFormer, QFORMER};

/// Marker that every adapter parameter name contains.
pub const LORA_MARKER: &str = ".lora.";

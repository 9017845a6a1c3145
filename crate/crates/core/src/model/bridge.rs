use super::config::ModelConfig;
use super::decoder::{decoder_backward, decoder_forward_rows, init_decoder, init_lora};
use super::encoder::{
    encoder_backward, encoder_forward, fuse_features, init_encoder, split_fused_grad, EncoderCache, AUDIO_ENCODER,
    SPEECH_ENCODER,
};
use super::qformer::{init_qformer, qformer_backward, qformer_forward, QFormerCache};
use crate::datakit::Direction;
use crate::error::{Error, Result};
use crate::numerics::{cross_entropy, GradBuffer, ParameterStore, Tensor};
use crate::textkit::{Vocab, BOS, EOS};
use crate::Real;

/// Encoders, Q-Former and decoder wired together. Parameters live in a
/// separate [`ParameterStore`] so one model description can drive many
/// parameter sets.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeModel {
    config: ModelConfig,
    vocab: Vocab,
}

struct BridgeCache {
    speech: EncoderCache,
    events: Option<(EncoderCache, usize)>,
    speech_rows: usize,
    qformer: QFormerCache,
}

/// Lowest index among the maxima.
pub fn argmax(row: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl BridgeModel {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if config.decoder.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "decoder vocab_size {} but vocabulary has {} tokens",
                config.decoder.vocab_size,
                vocab.len()
            )));
        }
        Ok(Self { config, vocab })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Fresh parameters: frozen encoders and decoder, trainable Q-Former and
    /// adapters. Each component draws from its own seed.
    pub fn init_params(&self) -> Result<ParameterStore> {
        let c = &self.config;
        let mut store = ParameterStore::new();
        init_encoder(&mut store, SPEECH_ENCODER, &c.speech_encoder)?;
        if c.use_audio_events {
            init_encoder(&mut store, AUDIO_ENCODER, &c.audio_encoder)?;
        }
        init_qformer(&mut store, &c.qformer, c.fused_dim(), c.decoder.d_model)?;
        init_decoder(&mut store, &c.decoder)?;
        if let Some(lora) = &c.lora {
            init_lora(&mut store, &c.decoder, lora)?;
        }
        Ok(store)
    }

    pub fn prompt_ids(&self, direction: &Direction) -> Result<Vec<usize>> {
        self.vocab.encode(&self.config.prompt_text(direction))
    }

    fn bridge_cached(&self, store: &ParameterStore, features: &Tensor) -> Result<(Tensor, BridgeCache)> {
        let c = &self.config;
        let (speech, speech_cache) = encoder_forward(store, SPEECH_ENCODER, &c.speech_encoder, features)?;
        let events = if c.use_audio_events {
            Some(encoder_forward(store, AUDIO_ENCODER, &c.audio_encoder, features)?)
        } else {
            None
        };
        let fused = fuse_features(&speech, events.as_ref().map(|e| &e.0))?;
        let (tokens, qcache) = qformer_forward(store, &c.qformer, &fused)?;
        Ok((
            tokens,
            BridgeCache {
                speech_rows: speech.rows(),
                speech: speech_cache,
                events: events.map(|(t, cache)| (cache, t.rows())),
                qformer: qcache,
            },
        ))
    }

    /// Audio tokens in decoder space: `[ceil(T'/W) * Q, d_model]` where `T'`
    /// is the encoder output length.
    pub fn bridge(&self, store: &ParameterStore, features: &Tensor) -> Result<Tensor> {
        Ok(self.bridge_cached(store, features)?.0)
    }

    fn text_ids(&self, prompt: &[usize], target: &[usize]) -> Result<Vec<usize>> {
        if target.is_empty() {
            return Err(Error::Argument("empty target: nothing to score".into()));
        }
        let mut text = Vec::with_capacity(prompt.len() + target.len() + 1);
        text.extend_from_slice(prompt);
        text.push(BOS);
        text.extend_from_slice(target);
        Ok(text)
    }

    /// Teacher-forced loss for given audio tokens. `target` excludes BOS/EOS;
    /// the scored positions predict `target ++ [EOS]`. Returns the mean
    /// cross-entropy and the scored logits `[|target| + 1, vocab]`.
    pub fn decoder_forward(
        &self,
        store: &ParameterStore,
        audio_tokens: &Tensor,
        prompt: &[usize],
        target: &[usize],
    ) -> Result<(Real, Tensor)> {
        let text = self.text_ids(prompt, target)?;
        let start = audio_tokens.rows() + prompt.len();
        let (logits, _) = decoder_forward_rows(
            store,
            &self.config.decoder,
            self.config.lora.as_ref(),
            audio_tokens,
            &text,
            start,
        )?;
        let labels: Vec<usize> = target.iter().copied().chain([EOS]).collect();
        let (loss, _) = cross_entropy(&logits, &labels, None)?;
        Ok((loss, logits))
    }

    /// Mean token cross-entropy of one utterance. With `grads`, adds
    /// `d loss / d param` for every requested parameter.
    pub fn loss(
        &self,
        store: &ParameterStore,
        features: &Tensor,
        prompt: &[usize],
        target: &[usize],
        grads: Option<&mut GradBuffer>,
    ) -> Result<Real> {
        let c = &self.config;
        let text = self.text_ids(prompt, target)?;
        let (audio, bcache) = self.bridge_cached(store, features)?;
        let start = audio.rows() + prompt.len();
        let (logits, dcache) = decoder_forward_rows(store, &c.decoder, c.lora.as_ref(), &audio, &text, start)?;
        let labels: Vec<usize> = target.iter().copied().chain([EOS]).collect();
        let (loss, dlogits) = cross_entropy(&logits, &labels, None)?;
        let Some(grads) = grads else {
            return Ok(loss);
        };
        let daudio = decoder_backward(store, &c.decoder, c.lora.as_ref(), &dcache, &dlogits, grads)?;
        let dfused = qformer_backward(store, &c.qformer, &bcache.qformer, &daudio, grads)?;
        let want_speech = grads.wants_prefix(SPEECH_ENCODER);
        let want_events = bcache.events.is_some() && grads.wants_prefix(AUDIO_ENCODER);
        if want_speech || want_events {
            let ds_cols = c.speech_encoder.d_model;
            let (dspeech, devents) = match &bcache.events {
                Some((_, rows)) => {
                    let (a, b) = split_fused_grad(&dfused, bcache.speech_rows, ds_cols, *rows);
                    (a, Some(b))
                }
                None => (dfused, None),
            };
            if want_speech {
                encoder_backward(
                    store,
                    SPEECH_ENCODER,
                    &c.speech_encoder,
                    &bcache.speech,
                    &dspeech,
                    grads,
                )?;
            }
            if let (true, Some((cache, _)), Some(de)) = (want_events, &bcache.events, devents) {
                encoder_backward(store, AUDIO_ENCODER, &c.audio_encoder, cache, &de, grads)?;
            }
        }
        Ok(loss)
    }

    /// Greedy decoding from precomputed audio tokens. Stops at EOS, after
    /// `max_new_tokens`, or when the decoder context is full.
    pub fn generate_from_tokens(
        &self,
        store: &ParameterStore,
        audio_tokens: &Tensor,
        prompt: &[usize],
        max_new_tokens: usize,
    ) -> Result<Vec<usize>> {
        if max_new_tokens == 0 {
            return Err(Error::Argument("max_new_tokens must be >= 1".into()));
        }
        let c = &self.config;
        let mut text: Vec<usize> = prompt.iter().copied().chain([BOS]).collect();
        let needed = audio_tokens.rows() + text.len();
        if needed > c.decoder.max_seq_len {
            return Err(Error::Capacity {
                needed,
                max: c.decoder.max_seq_len,
            });
        }
        let mut out = Vec::new();
        while out.len() < max_new_tokens {
            let last = audio_tokens.rows() + text.len() - 1;
            let (logits, _) = decoder_forward_rows(store, &c.decoder, c.lora.as_ref(), audio_tokens, &text, last)?;
            let next = argmax(logits.row(0));
            if next == EOS {
                break;
            }
            out.push(next);
            if audio_tokens.rows() + text.len() + 1 > c.decoder.max_seq_len {
                break;
            }
            text.push(next);
        }
        Ok(out)
    }

    pub fn generate(
        &self,
        store: &ParameterStore,
        features: &Tensor,
        prompt: &[usize],
        max_new_tokens: usize,
    ) -> Result<Vec<usize>> {
        let audio = self.bridge(store, features)?;
        self.generate_from_tokens(store, &audio, prompt, max_new_tokens)
    }

    /// Generates and detokenizes with the direction's prompt.
    pub fn translate(
        &self,
        store: &ParameterStore,
        features: &Tensor,
        direction: &Direction,
        max_new_tokens: usize,
    ) -> Result<String> {
        let prompt = self.prompt_ids(direction)?;
        let ids = self.generate(store, features, &prompt, max_new_tokens)?;
        Ok(self.vocab.decode(&ids))
    }
}

use super::data::{corpus_vocab, prepare_examples, Example};
use super::profile::TrainProfile;
use crate::datakit::{split_by_transcript_length, FeatureResolver, UtteranceRecord};
use crate::error::{Error, Result};
use crate::model::{BridgeModel, ModelConfig};

/// A model sized to its corpus plus the bucketed example sets.
#[derive(Clone, Debug)]
pub struct PreparedRun {
    pub model: BridgeModel,
    pub short: Vec<Example>,
    pub long: Vec<Example>,
    pub dev: Vec<Example>,
}

/// Builds the vocabulary from `train` and `dev`, overrides the decoder's
/// `vocab_size` to match it, and splits `train` by transcript length.
pub fn prepare_run(
    mut config: ModelConfig,
    profile: &TrainProfile,
    train: &[UtteranceRecord],
    dev: &[UtteranceRecord],
    resolver: &mut FeatureResolver,
) -> Result<PreparedRun> {
    profile.validate()?;
    if let Some(r) = train.iter().chain(dev).find(|r| r.direction != profile.direction) {
        return Err(Error::Config(format!(
            "record `{}` is {} but the profile trains {}",
            r.id,
            r.direction.tag(),
            profile.direction.tag()
        )));
    }
    let all: Vec<UtteranceRecord> = train.iter().chain(dev).cloned().collect();
    let vocab = corpus_vocab(&all, &config)?;
    config.decoder.vocab_size = vocab.len();
    let model = BridgeModel::new(config, vocab)?;
    let (short, long) = split_by_transcript_length(train.iter().cloned(), profile.length_threshold_chars);
    Ok(PreparedRun {
        short: prepare_examples(&model, &short.records, resolver, profile.cot)?,
        long: prepare_examples(&model, &long.records, resolver, profile.cot)?,
        dev: prepare_examples(&model, dev, resolver, profile.cot)?,
        model,
    })
}

use std::collections::BTreeSet;

use crate::datakit::{FeatureResolver, UtteranceRecord};
use crate::error::Result;
use crate::model::{BridgeModel, ModelConfig};
use crate::numerics::Tensor;
use crate::textkit::{format_cot_target, tokenize, Vocab, TRANSCRIPTION_MARKER, TRANSLATION_MARKER};

/// One utterance ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Tensor,
    pub prompt: Vec<usize>,
    /// Teacher-forcing target without BOS/EOS.
    pub target: Vec<usize>,
    /// Reference translation text used for BLEU.
    pub reference: String,
}

/// Every token the corpus, the direction prompts and the CoT markers can produce.
pub fn corpus_vocab(records: &[UtteranceRecord], config: &ModelConfig) -> Result<Vocab> {
    let mut tokens = BTreeSet::new();
    tokens.insert(TRANSCRIPTION_MARKER.to_string());
    tokens.insert(TRANSLATION_MARKER.to_string());
    for r in records {
        tokens.extend(tokenize(&r.transcript));
        tokens.extend(tokenize(&r.translation));
        tokens.extend(tokenize(&config.prompt_text(&r.direction)));
    }
    Vocab::build(tokens)
}

/// The decoder's target text: the translation, or the CoT response when `cot`.
pub fn target_text(record: &UtteranceRecord, cot: bool) -> Result<String> {
    if cot {
        format_cot_target(&record.transcript, &record.translation)
    } else {
        Ok(record.translation.clone())
    }
}

pub fn prepare_examples(
    model: &BridgeModel,
    records: &[UtteranceRecord],
    resolver: &mut FeatureResolver,
    cot: bool,
) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            r.validate()?;
            Ok(Example {
                id: r.id.clone(),
                features: resolver.features(r)?,
                prompt: model.prompt_ids(&r.direction)?,
                target: model.vocab().encode(&target_text(r, cot)?)?,
                reference: r.translation.clone(),
            })
        })
        .collect()
}

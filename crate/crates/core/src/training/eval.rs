use serde::{Deserialize, Serialize};

use super::data::Example;
use super::parallel::par_map;
use crate::error::{Error, Result};
use crate::model::BridgeModel;
use crate::numerics::ParameterStore;
use crate::textkit::{bleu_corpus_text, parse_cot_response, Smoothing};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevReport {
    pub bleu: f64,
    /// Mean per-utterance teacher-forced cross-entropy.
    pub cross_entropy: f64,
    /// Raw decoded outputs, in input order.
    pub hypotheses: Vec<String>,
    pub n_utterances: usize,
}

/// Greedy decoding plus corpus BLEU against each example's reference.
///
/// With `cot`, BLEU scores the parsed translation; an unparseable response
/// counts as an empty hypothesis.
pub fn evaluate_dev(
    model: &BridgeModel,
    store: &ParameterStore,
    dev: &[Example],
    max_new_tokens: usize,
    threads: usize,
    cot: bool,
) -> Result<DevReport> {
    if dev.is_empty() {
        return Err(Error::Argument("dev set is empty".into()));
    }
    let rows = par_map(dev, threads, |ex| -> Result<(f64, String)> {
        let loss = model.loss(store, &ex.features, &ex.prompt, &ex.target, None)?;
        let ids = model.generate(store, &ex.features, &ex.prompt, max_new_tokens)?;
        Ok((loss as f64, model.vocab().decode(&ids)))
    });
    let mut total = 0.0;
    let mut hypotheses = Vec::with_capacity(dev.len());
    for r in rows {
        let (loss, hyp) = r?;
        total += loss;
        hypotheses.push(hyp);
    }
    let scored: Vec<String> = if cot {
        hypotheses
            .iter()
            .map(|h| parse_cot_response(h).translation.unwrap_or_default())
            .collect()
    } else {
        hypotheses.clone()
    };
    let refs: Vec<String> = dev.iter().map(|e| e.reference.clone()).collect();
    let bleu = bleu_corpus_text(&scored, &refs, Smoothing::None)?.score as f64;
    Ok(DevReport {
        bleu,
        cross_entropy: total / dev.len() as f64,
        hypotheses,
        n_utterances: dev.len(),
    })
}

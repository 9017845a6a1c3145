use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Any zero n-gram precision yields a score of 0.
    #[default]
    None,
    /// Zero-match orders get `1 / (2^k * total)`, k counting zero orders so far.
    Exp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// In `[0, 100]`.
    pub score: Real,
    pub precisions: [Real; MAX_ORDER],
    pub brevity_penalty: Real,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level 4-gram BLEU with one reference per hypothesis.
///
/// Clipped matches and totals are pooled over the whole corpus before the
/// precisions are formed, so the score does not depend on sentence order.
pub fn bleu_corpus<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], smoothing: Smoothing) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::Argument(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Argument("BLEU over an empty corpus".into()));
    }
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(r, n);
            for (gram, c) in ngram_counts(h, n) {
                matched[n - 1] += c.min(rc.get(gram).copied().unwrap_or(0));
            }
            total[n - 1] += h.len().saturating_sub(n - 1);
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    let mut smooth_denom = 1.0;
    for n in 0..MAX_ORDER {
        precisions[n] = if total[n] == 0 {
            0.0
        } else if matched[n] == 0 && smoothing == Smoothing::Exp {
            smooth_denom *= 2.0;
            1.0 / (smooth_denom * total[n] as Real)
        } else {
            matched[n] as Real / total[n] as Real
        };
    }

    // An empty hypothesis corpus gets BP 0 rather than exp(-inf).
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as Real / hyp_len as Real).exp()
    } else {
        1.0
    };

    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<Real>() / MAX_ORDER as Real;
        brevity_penalty * log_mean.exp() * 100.0
    };

    Ok(BleuReport {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

/// Convenience wrapper over whitespace-tokenized strings.
pub fn bleu_corpus_text<S: AsRef<str>>(hyps: &[S], refs: &[S], smoothing: Smoothing) -> Result<BleuReport> {
    let split = |xs: &[S]| -> Vec<Vec<String>> { xs.iter().map(|s| super::tokenize(s.as_ref())).collect() };
    bleu_corpus(&split(hyps), &split(refs), smoothing)
}

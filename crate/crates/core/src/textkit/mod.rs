//! Tokenization, corpus BLEU, and chain-of-thought response handling.

mod bleu;
mod cot;
mod vocab;

pub use bleu::{bleu_corpus, bleu_corpus_text, BleuReport, Smoothing, MAX_ORDER};
pub use cot::{
    cot_metrics, format_cot_target, parse_cot_response, CoTResponse, CotMetrics, CotReport, DeltaBaseline, ParseStatus,
    TRANSCRIPTION_MARKER, TRANSLATION_MARKER,
};
pub use vocab::{detokenize, tokenize, Vocab, BOS, EOS, PAD, SEP};

//! Chain-of-thought targets: the source transcription first, then the
//! translation, as `Transcription: {src}\nTranslation: {tgt}`.

use serde::{Deserialize, Serialize};

use super::bleu::{bleu_corpus_text, Smoothing};
use crate::error::{Error, Result};
use crate::Real;

pub const TRANSCRIPTION_MARKER: &str = "Transcription:";
pub const TRANSLATION_MARKER: &str = "Translation:";

const TRANSCRIPTION_WORD: &str = "transcription";
const TRANSLATION_WORD: &str = "translation";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Parsed,
    Malformed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTResponse {
    pub raw: String,
    pub status: ParseStatus,
    pub transcription: Option<String>,
    pub translation: Option<String>,
}

impl CoTResponse {
    pub fn is_parsed(&self) -> bool {
        self.status == ParseStatus::Parsed
    }
}

/// Byte spans `(start, end)` of every `word` + optional ASCII whitespace + `:`,
/// matched ASCII-case-insensitively.
fn marker_spans(text: &str, word: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let w = word.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i + w.len() <= bytes.len() {
        if bytes[i..i + w.len()].eq_ignore_ascii_case(w) {
            let mut j = i + w.len();
            while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b':' {
                spans.push((i, j + 1));
            }
        }
        i += 1;
    }
    spans
}

fn contains_marker(s: &str) -> bool {
    !marker_spans(s, TRANSCRIPTION_WORD).is_empty() || !marker_spans(s, TRANSLATION_WORD).is_empty()
}

/// Renders the two-line target. A field that contains either marker anywhere
/// (any case) would be ambiguous to parse and is rejected.
pub fn format_cot_target(transcription: &str, translation: &str) -> Result<String> {
    for (field, value) in [("transcription", transcription), ("translation", translation)] {
        if value.trim().is_empty() {
            return Err(Error::Format(format!("{field} is empty")));
        }
        if contains_marker(value) {
            return Err(Error::Format(format!("{field} contains a CoT marker")));
        }
    }
    Ok(format!(
        "{TRANSCRIPTION_MARKER} {transcription}\n{TRANSLATION_MARKER} {translation}"
    ))
}

/// Tolerant parse of arbitrary model output; never fails.
///
/// The transcription runs from the first transcription marker to the last
/// translation marker, and the translation from there to the end of text.
pub fn parse_cot_response(raw: &str) -> CoTResponse {
    let malformed = || CoTResponse {
        raw: raw.to_string(),
        status: ParseStatus::Malformed,
        transcription: None,
        translation: None,
    };
    let Some(&(_, t_end)) = marker_spans(raw, TRANSCRIPTION_WORD).first() else {
        return malformed();
    };
    let Some(&(r_start, r_end)) = marker_spans(raw, TRANSLATION_WORD).last() else {
        return malformed();
    };
    if r_start < t_end {
        return malformed();
    }
    let transcription = raw[t_end..r_start].trim();
    let translation = raw[r_end..].trim();
    if transcription.is_empty() || translation.is_empty() {
        return malformed();
    }
    CoTResponse {
        raw: raw.to_string(),
        status: ParseStatus::Parsed,
        transcription: Some(transcription.to_string()),
        translation: Some(translation.to_string()),
    }
}

/// Which hypotheses the CoT subset BLEU is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaBaseline {
    /// Baseline BLEU on the same parsed subset.
    #[default]
    ParsedSubset,
    /// Baseline BLEU on the full set.
    FullSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CotMetrics {
    pub total: usize,
    pub parsed: usize,
    pub success_rate_pct: Real,
    pub bleu_parsed: Option<Real>,
    pub bleu_baseline_subset: Option<Real>,
    pub delta: Option<Real>,
}

/// Parse rate, BLEU of parsed translations, and its gain over the baseline.
pub fn cot_metrics<S: AsRef<str>>(
    responses: &[CoTResponse],
    refs: &[S],
    baseline_hyps: &[S],
    baseline: DeltaBaseline,
) -> Result<CotMetrics> {
    if responses.len() != refs.len() || refs.len() != baseline_hyps.len() {
        return Err(Error::Argument(format!(
            "misaligned inputs: {} responses, {} refs, {} baseline hypotheses",
            responses.len(),
            refs.len(),
            baseline_hyps.len()
        )));
    }
    let total = responses.len();
    let idx: Vec<usize> = (0..total).filter(|&i| responses[i].is_parsed()).collect();
    let parsed = idx.len();
    let success_rate_pct = if total == 0 {
        0.0
    } else {
        100.0 * parsed as Real / total as Real
    };
    if parsed == 0 {
        return Ok(CotMetrics {
            total,
            parsed,
            success_rate_pct,
            bleu_parsed: None,
            bleu_baseline_subset: None,
            delta: None,
        });
    }
    let hyps: Vec<&str> = idx
        .iter()
        .map(|&i| responses[i].translation.as_deref().unwrap_or_default())
        .collect();
    let sub_refs: Vec<&str> = idx.iter().map(|&i| refs[i].as_ref()).collect();
    let bleu_parsed = bleu_corpus_text(&hyps, &sub_refs, Smoothing::None)?.score;
    let bleu_base = match baseline {
        DeltaBaseline::ParsedSubset => {
            let sub_base: Vec<&str> = idx.iter().map(|&i| baseline_hyps[i].as_ref()).collect();
            bleu_corpus_text(&sub_base, &sub_refs, Smoothing::None)?.score
        }
        DeltaBaseline::FullSet => {
            let all_base: Vec<&str> = baseline_hyps.iter().map(AsRef::as_ref).collect();
            let all_refs: Vec<&str> = refs.iter().map(AsRef::as_ref).collect();
            bleu_corpus_text(&all_base, &all_refs, Smoothing::None)?.score
        }
    };
    Ok(CotMetrics {
        total,
        parsed,
        success_rate_pct,
        bleu_parsed: Some(bleu_parsed),
        bleu_baseline_subset: Some(bleu_base),
        delta: Some(bleu_parsed - bleu_base),
    })
}

/// One row of the CoT report, mirroring the parse-rate / BLEU / delta table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CotReport {
    pub direction: String,
    pub total: usize,
    pub parsed: usize,
    pub success_rate_pct: Real,
    pub bleu_parsed: Option<Real>,
    pub bleu_baseline_subset: Option<Real>,
    pub delta: Option<Real>,
}

impl CotReport {
    pub fn new(direction: impl Into<String>, m: &CotMetrics) -> Self {
        Self {
            direction: direction.into(),
            total: m.total,
            parsed: m.parsed,
            success_rate_pct: m.success_rate_pct,
            bleu_parsed: m.bleu_parsed,
            bleu_baseline_subset: m.bleu_baseline_subset,
            delta: m.delta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textkit::bleu::bleu_corpus_text;
    use proptest::prelude::*;

    #[test]
    fn formats_two_lines() {
        assert_eq!(
            format_cot_target("नमस्ते दुनिया", "hello world").unwrap(),
            "Transcription: नमस्ते दुनिया\nTranslation: hello world"
        );
    }

    #[test]
    fn rejects_marker_collisions_and_empty_fields() {
        assert!(matches!(
            format_cot_target("x", "a\nTranslation: b"),
            Err(Error::Format(_))
        ));
        assert!(format_cot_target("see TRANSCRIPTION : here", "b").is_err());
        assert!(format_cot_target("  ", "b").is_err());
    }

    #[test]
    fn parses_well_formed_and_rejects_unmarked() {
        let r = parse_cot_response("Transcription: x y\nTranslation: z");
        assert!(r.is_parsed());
        assert_eq!(r.transcription.as_deref(), Some("x y"));
        assert_eq!(r.translation.as_deref(), Some("z"));

        let r = parse_cot_response("hello world");
        assert_eq!(r.status, ParseStatus::Malformed);
        assert!(r.transcription.is_none() && r.translation.is_none());
    }

    #[test]
    fn last_translation_marker_wins() {
        let r = parse_cot_response("transcription: x\nTranslation: y\nTranslation: z");
        assert_eq!(r.translation.as_deref(), Some("z"));
        assert_eq!(r.transcription.as_deref(), Some("x\nTranslation: y"));
    }

    #[test]
    fn last_marker_rule_over_every_marker_position() {
        // Place k translation markers among filler words; the parsed
        // translation must be exactly the text after the final one.
        let words = ["a", "b", "c", "d"];
        for mask in 0u32..(1 << words.len()) {
            let mut raw = String::from("Transcription: src");
            let mut last_tail: Option<Vec<&str>> = None;
            for (i, w) in words.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    raw.push_str(" Translation:");
                    last_tail = Some(Vec::new());
                }
                raw.push(' ');
                raw.push_str(w);
                if let Some(t) = last_tail.as_mut() {
                    t.push(w);
                }
            }
            let r = parse_cot_response(&raw);
            match last_tail {
                Some(t) => assert_eq!(r.translation.unwrap(), t.join(" "), "{raw}"),
                None => assert!(!r.is_parsed(), "{raw}"),
            }
        }
    }

    #[test]
    fn tolerant_spacing_and_case() {
        let r = parse_cot_response("  TRANSCRIPTION :  a  \n\n translation:b ");
        assert_eq!(r.transcription.as_deref(), Some("a"));
        assert_eq!(r.translation.as_deref(), Some("b"));
    }

    #[test]
    fn malformed_when_out_of_order_or_empty() {
        assert!(!parse_cot_response("Translation: y Transcription: x").is_parsed());
        assert!(!parse_cot_response("Transcription: Translation: y").is_parsed());
        assert!(!parse_cot_response("Transcription: x Translation:   ").is_parsed());
    }

    #[test]
    fn metrics_success_rate_and_perfect_subset() {
        let refs = ["a b c d", "e f g h", "i j k l"];
        let responses: Vec<CoTResponse> = [
            "Transcription: s\nTranslation: a b c d",
            "garbage",
            "Transcription: s\nTranslation: i j k l",
        ]
        .iter()
        .map(|r| parse_cot_response(r))
        .collect();
        let m = cot_metrics(&responses, &refs, &refs, DeltaBaseline::ParsedSubset).unwrap();
        assert_eq!((m.total, m.parsed), (3, 2));
        assert!((m.success_rate_pct - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.bleu_parsed, Some(100.0));
        assert_eq!(m.delta, Some(0.0));
    }

    #[test]
    fn no_parsed_responses_leaves_bleu_absent() {
        let m = cot_metrics(
            &[parse_cot_response("nope")],
            &["a"],
            &["a"],
            DeltaBaseline::ParsedSubset,
        )
        .unwrap();
        assert_eq!(m.success_rate_pct, 0.0);
        assert!(m.bleu_parsed.is_none() && m.delta.is_none());
    }

    #[test]
    fn delta_matches_two_pass_recomputation() {
        let refs = ["a b c d e", "f g h i j", "k l m n o", "p q r s t"];
        let cot_out = [
            "Transcription: x\nTranslation: a b c d e",
            "Transcription: x\nTranslation: f g h z j",
            "broken",
            "Transcription: x\nTranslation: p q r s",
        ];
        let base = ["a b c z e", "f g h i j", "k l m n o", "p z r s t"];
        let responses: Vec<_> = cot_out.iter().map(|r| parse_cot_response(r)).collect();
        let m = cot_metrics(&responses, &refs, &base, DeltaBaseline::ParsedSubset).unwrap();

        let keep = [0usize, 1, 3];
        let sub_refs: Vec<&str> = keep.iter().map(|&i| refs[i]).collect();
        let cot_hyps: Vec<&str> = keep
            .iter()
            .map(|&i| cot_out[i].split("Translation: ").nth(1).unwrap())
            .collect();
        let base_hyps: Vec<&str> = keep.iter().map(|&i| base[i]).collect();
        let b1 = bleu_corpus_text(&cot_hyps, &sub_refs, Smoothing::None).unwrap().score;
        let b2 = bleu_corpus_text(&base_hyps, &sub_refs, Smoothing::None).unwrap().score;
        assert_eq!(m.bleu_parsed, Some(b1));
        assert_eq!(m.bleu_baseline_subset, Some(b2));
        assert!((m.delta.unwrap() - (b1 - b2)).abs() < 1e-12);

        let full = cot_metrics(&responses, &refs, &base, DeltaBaseline::FullSet).unwrap();
        let b3 = bleu_corpus_text(&base, &refs, Smoothing::None).unwrap().score;
        assert_eq!(full.bleu_baseline_subset, Some(b3));
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        assert!(cot_metrics::<&str>(&[], &["a"], &[], DeltaBaseline::ParsedSubset).is_err());
    }

    proptest! {
        #[test]
        fn parser_is_total(raw in any::<String>()) {
            let r = parse_cot_response(&raw);
            prop_assert_eq!(r.is_parsed(), r.transcription.is_some() && r.translation.is_some());
        }

        #[test]
        fn format_then_parse_roundtrips(a in "[^\\s]([^:]{0,20}[^\\s])?", b in "[^\\s]([^:]{0,20}[^\\s])?") {
            if let Ok(text) = format_cot_target(&a, &b) {
                let r = parse_cot_response(&text);
                prop_assert_eq!(r.transcription.as_deref(), Some(a.as_str()));
                prop_assert_eq!(r.translation.as_deref(), Some(b.as_str()));
            }
        }
    }
}

use serde::{Deserialize, Serialize};

use super::record::UtteranceRecord;

pub const DEFAULT_LENGTH_THRESHOLD_CHARS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketLabel {
    Short,
    Long,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    pub label: BucketLabel,
    pub records: Vec<UtteranceRecord>,
}

impl Bucket {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Short gets transcripts strictly under `threshold_chars` Unicode scalars;
/// everything else, including the boundary itself, goes to long. Order is
/// preserved within each bucket.
pub fn split_by_transcript_length(
    records: impl IntoIterator<Item = UtteranceRecord>,
    threshold_chars: usize,
) -> (Bucket, Bucket) {
    let (short, long): (Vec<_>, Vec<_>) = records
        .into_iter()
        .partition(|r| r.transcript_chars() < threshold_chars);
    (
        Bucket {
            label: BucketLabel::Short,
            records: short,
        },
        Bucket {
            label: BucketLabel::Long,
            records: long,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{AudioSource, Direction};

    fn rec(id: usize, transcript: String) -> UtteranceRecord {
        UtteranceRecord {
            id: format!("u{id}"),
            audio_source: AudioSource::File("f".into()),
            offset_s: 0.0,
            duration_s: 1.0,
            transcript,
            translation: "t".into(),
            direction: Direction::new("en", "bn"),
        }
    }

    #[test]
    fn boundary_goes_to_long() {
        let (s, l) = split_by_transcript_length(
            vec![rec(0, "a".repeat(399)), rec(1, "a".repeat(400))],
            DEFAULT_LENGTH_THRESHOLD_CHARS,
        );
        assert_eq!(s.records[0].id, "u0");
        assert_eq!(l.records[0].id, "u1");
    }

    #[test]
    fn exhaustive_over_all_lengths() {
        let recs: Vec<_> = (0..=800).map(|n| rec(n, "x".repeat(n.max(1)))).collect();
        let (s, l) = split_by_transcript_length(recs.clone(), 400);
        assert_eq!(s.len() + l.len(), recs.len());
        assert!(s.records.iter().all(|r| r.transcript_chars() < 400));
        assert!(l.records.iter().all(|r| r.transcript_chars() >= 400));
        // order preserved
        let ids: Vec<_> = s.records.iter().chain(&l.records).map(|r| r.id.clone()).collect();
        let expect: Vec<_> = recs.iter().map(|r| r.id.clone()).collect();
        assert_eq!(ids, expect);
    }

    #[test]
    fn counts_scalars_not_bytes() {
        // Devanagari letters are 3 bytes each in UTF-8
        let t = "क".repeat(399);
        assert!(t.len() > 400);
        let (s, _) = split_by_transcript_length(vec![rec(0, t)], 400);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn empty_input_gives_two_empty_buckets() {
        let (s, l) = split_by_transcript_length(Vec::new(), 400);
        assert!(s.is_empty() && l.is_empty());
        assert_eq!((s.label, l.label), (BucketLabel::Short, BucketLabel::Long));
    }
}

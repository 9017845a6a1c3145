use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Ordered language pair, serialized as `"en-hi"`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Direction {
    pub source: String,
    pub target: String,
}

impl Direction {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
        }
    }

    pub fn into_english(&self) -> bool {
        self.target == "en" && self.source != "en"
    }

    /// Tag used in ids and file names, e.g. `en-hi`.
    pub fn tag(&self) -> String {
        format!("{}-{}", self.source, self.target)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}→{}", self.source, self.target)
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (src, tgt) = s
            .split_once('-')
            .or_else(|| s.split_once('→'))
            .ok_or_else(|| Error::Config(format!("direction {s:?} is not of the form src-tgt")))?;
        let valid = |x: &str| !x.is_empty() && x.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid(src) || !valid(tgt) {
            return Err(Error::Config(format!("direction {s:?} has an invalid language code")));
        }
        Ok(Direction::new(src, tgt))
    }
}

impl Serialize for Direction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.tag())
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Row-major `frames x feature_dim` matrix stored inline in a manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub feature_dim: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioSource {
    /// Path to a feature store, relative to the manifest's directory.
    File(String),
    Inline(FeatureMatrix),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio_source: AudioSource,
    pub offset_s: f64,
    pub duration_s: f64,
    pub transcript: String,
    pub translation: String,
    pub direction: Direction,
}

impl UtteranceRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, detail: String| Error::Validation {
            id: self.id.clone(),
            field: field.to_string(),
            detail,
        };
        if self.id.trim().is_empty() {
            return Err(fail("id", "empty id".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(fail("duration_s", format!("must be > 0, got {}", self.duration_s)));
        }
        if !(self.offset_s.is_finite() && self.offset_s >= 0.0) {
            return Err(fail("offset_s", format!("must be >= 0, got {}", self.offset_s)));
        }
        if self.transcript.trim().is_empty() {
            return Err(fail("transcript", "empty after trimming".into()));
        }
        if self.translation.trim().is_empty() {
            return Err(fail("translation", "empty after trimming".into()));
        }
        if let AudioSource::Inline(m) = &self.audio_source {
            if m.frames == 0 || m.feature_dim == 0 || m.data.len() != m.frames * m.feature_dim {
                return Err(fail(
                    "audio_source",
                    format!(
                        "inline matrix {}x{} holds {} values",
                        m.frames,
                        m.feature_dim,
                        m.data.len()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Transcript length in Unicode scalar values.
    pub fn transcript_chars(&self) -> usize {
        self.transcript.chars().count()
    }
}

/// Reads a JSON-lines manifest in file order. Blank lines are skipped.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: UtteranceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            detail: e.to_string(),
        })?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[UtteranceRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: &str, transcript: &str, duration_s: f64) -> UtteranceRecord {
        UtteranceRecord {
            id: id.into(),
            audio_source: AudioSource::File("talk.feat".into()),
            offset_s: 0.0,
            duration_s,
            transcript: transcript.into(),
            translation: "t".into(),
            direction: Direction::new("en", "hi"),
        }
    }

    #[test]
    fn direction_serializes_as_tag() {
        let d = Direction::new("ta", "en");
        assert_eq!(serde_json::to_string(&d).unwrap(), "\"ta-en\"");
        assert_eq!("ta→en".parse::<Direction>().unwrap(), d);
        assert!(d.into_english());
        assert!("taen".parse::<Direction>().is_err());
        assert_eq!(d.to_string(), "ta→en");
    }

    #[test]
    fn manifest_roundtrip_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());

        let recs = vec![record("a", "x y", 1.0), record("b", "z", 2.5)];
        write_manifest(&p, &recs).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), recs);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let good = serde_json::to_string(&record("a", "x", 1.0)).unwrap();
        std::fs::write(&p, format!("{good}\n{{not json\n")).unwrap();
        match load_manifest(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn zero_duration_fails_validation_with_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let bad = serde_json::to_string(&record("utt-7", "x", 0.0)).unwrap();
        std::fs::write(&p, format!("{bad}\n")).unwrap();
        match load_manifest(&p) {
            Err(Error::Validation { id, field, .. }) => {
                assert_eq!(id, "utt-7");
                assert_eq!(field, "duration_s");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = serde_json::to_value(record("a", "x", 1.0)).unwrap();
        v["speaker"] = serde_json::json!("s1");
        assert!(serde_json::from_value::<UtteranceRecord>(v).is_err());
    }

    #[test]
    fn blank_translation_is_invalid() {
        let mut r = record("a", "x", 1.0);
        r.translation = "  ".into();
        assert!(r.validate().is_err());
    }
}

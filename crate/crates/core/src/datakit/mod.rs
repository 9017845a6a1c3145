//! Manifests, segment arithmetic, length bucketing, corpus statistics, and the
//! synthetic corpus generator.

mod bucket;
mod record;
mod segment;
mod stats;
mod synth;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

pub use bucket::{split_by_transcript_length, Bucket, BucketLabel, DEFAULT_LENGTH_THRESHOLD_CHARS};
pub use record::{load_manifest, write_manifest, AudioSource, Direction, FeatureMatrix, UtteranceRecord};
pub use segment::{extract_segment, FeatureStore};
pub use stats::{dataset_stats, dataset_stats_with, Split, StatsRow, StatsTable};
pub use synth::{synth_generate, synth_generate_split, MappingRule, SynthSpec};

use crate::error::Result;
use crate::numerics::Tensor;
use crate::Real;

/// Resolves records' audio into feature matrices, caching feature stores by path.
#[derive(Debug, Default)]
pub struct FeatureResolver {
    base_dir: PathBuf,
    stores: HashMap<PathBuf, FeatureStore>,
}

impl FeatureResolver {
    /// File references are resolved relative to `base_dir`.
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            base_dir: base_dir.into(),
            stores: HashMap::new(),
        }
    }

    pub fn for_manifest(manifest: &Path) -> Self {
        Self::new(manifest.parent().unwrap_or(Path::new(".")))
    }

    pub fn features(&mut self, record: &UtteranceRecord) -> Result<Tensor> {
        match &record.audio_source {
            AudioSource::Inline(m) => Tensor::new(
                vec![m.frames, m.feature_dim],
                m.data.iter().map(|&v| v as Real).collect(),
            ),
            AudioSource::File(rel) => {
                let path = self.base_dir.join(rel);
                if !self.stores.contains_key(&path) {
                    let store = FeatureStore::load(&path)?;
                    self.stores.insert(path.clone(), store);
                }
                self.stores[&path].segment(record.offset_s, record.duration_s)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolver_reads_inline_and_stored_segments_identically() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::default();
        let recs = synth_generate(&spec, 3).unwrap();
        let mut store = FeatureStore::new(spec.feature_dim, spec.frame_rate);
        let mut stored = Vec::new();
        for r in &recs {
            let AudioSource::Inline(m) = &r.audio_source else {
                unreachable!()
            };
            let (off, dur) = store.append(&m.data).unwrap();
            stored.push(UtteranceRecord {
                audio_source: AudioSource::File("features.bin".into()),
                offset_s: off,
                duration_s: dur,
                ..r.clone()
            });
        }
        store.save(dir.path().join("features.bin")).unwrap();
        let mut res = FeatureResolver::new(dir.path());
        for (a, b) in recs.iter().zip(&stored) {
            assert_eq!(res.features(a).unwrap(), res.features(b).unwrap());
        }
    }
}

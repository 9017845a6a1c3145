//! Segment arithmetic and the binary feature store that plays the role of an
//! original long recording.

use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::Real;

/// Half-open sample range `[round(offset * rate), round((offset + duration) * rate))`.
///
/// `source_len`, when known, bounds the end of the range.
pub fn extract_segment(
    offset_s: f64,
    duration_s: f64,
    sample_rate: f64,
    source_len: Option<usize>,
) -> Result<Range<usize>> {
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::Argument(format!("sample_rate must be > 0, got {sample_rate}")));
    }
    if !(offset_s.is_finite() && offset_s >= 0.0) {
        return Err(Error::Argument(format!("offset_s must be >= 0, got {offset_s}")));
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::Argument(format!("duration_s must be > 0, got {duration_s}")));
    }
    let start = (offset_s * sample_rate).round() as usize;
    let end = ((offset_s + duration_s) * sample_rate).round() as usize;
    if end <= start {
        return Err(Error::Range(format!(
            "segment at {offset_s}s lasting {duration_s}s covers no samples at {sample_rate} Hz"
        )));
    }
    if let Some(len) = source_len {
        if end > len {
            return Err(Error::Range(format!(
                "segment [{start}, {end}) exceeds source length {len}"
            )));
        }
    }
    Ok(start..end)
}

const MAGIC: &[u8; 8] = b"BSTFEAT\0";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 8;

/// A long `frames x feature_dim` feature stream at a fixed frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    pub feature_dim: usize,
    pub frame_rate: f64,
    data: Vec<f64>,
}

impl FeatureStore {
    pub fn new(feature_dim: usize, frame_rate: f64) -> Self {
        Self {
            feature_dim,
            frame_rate,
            data: Vec::new(),
        }
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.feature_dim
    }

    /// Appends a matrix and returns its `(offset_s, duration_s)`.
    pub fn append(&mut self, rows: &[f64]) -> Result<(f64, f64)> {
        if rows.is_empty() || rows.len() % self.feature_dim != 0 {
            return Err(Error::dim(
                "features",
                format!(
                    "{} values is not a positive multiple of {}",
                    rows.len(),
                    self.feature_dim
                ),
            ));
        }
        let start = self.frames();
        self.data.extend_from_slice(rows);
        let n = rows.len() / self.feature_dim;
        Ok((start as f64 / self.frame_rate, n as f64 / self.frame_rate))
    }

    pub fn segment(&self, offset_s: f64, duration_s: f64) -> Result<Tensor> {
        let range = extract_segment(offset_s, duration_s, self.frame_rate, Some(self.frames()))?;
        let d = self.feature_dim;
        let slice = &self.data[range.start * d..range.end * d];
        Tensor::new(vec![range.len(), d], slice.iter().map(|&v| v as Real).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(HEADER_LEN + self.data.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
        buf.extend_from_slice(&self.frame_rate.to_le_bytes());
        buf.extend_from_slice(&(self.frames() as u64).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(Error::load(
                "magic",
                format!("{} is not a feature store", path.display()),
            ));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(8);
        if version != VERSION {
            return Err(Error::load(
                "version",
                format!("unsupported feature store version {version}"),
            ));
        }
        let feature_dim = u32_at(12) as usize;
        let frame_rate = f64::from_bits(u64_at(16));
        let frames = u64_at(24) as usize;
        if feature_dim == 0 || !(frame_rate > 0.0) {
            return Err(Error::load("header", "zero feature_dim or frame_rate"));
        }
        let expect = HEADER_LEN + frames * feature_dim * 8;
        if bytes.len() != expect {
            return Err(Error::load(
                "data",
                format!("expected {expect} bytes, found {}", bytes.len()),
            ));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            feature_dim,
            frame_rate,
            data,
        })
    }
}

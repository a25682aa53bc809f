//! Binary per-video feature files.
//!
//! Layout (little-endian): 8 magic bytes `ACRMFEAT`, u32 version (1),
//! u32 frame count `T`, u32 feature width `d_in`, then `T * d_in` f32
//! values, frame-major.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"ACRMFEAT";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Per-frame visual features, `frames × dim`, widened to f64.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Data(format!(
                "feature sequence must be non-empty, got {frames}x{dim}"
            )));
        }
        if data.len() != frames * dim {
            return Err(Error::Data(format!(
                "feature sequence {frames}x{dim} given {} values",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("feature sequence contains non-finite values".into()));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

pub fn feature_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.feat"))
}

pub fn encode_features(seq: &FeatureSequence) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + seq.data.len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(seq.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.dim as u32).to_le_bytes());
    for &x in &seq.data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    buf
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureSequence> {
    let fail = |offset: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != FEATURE_MAGIC {
        return Err(fail(0, "bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != FEATURE_VERSION {
        return Err(fail(8, format!("unsupported version {version}")));
    }
    let frames = u32_at(12) as usize;
    let dim = u32_at(16) as usize;
    if frames == 0 {
        return Err(fail(12, "frame count is 0".into()));
    }
    if dim == 0 {
        return Err(fail(16, "feature width is 0".into()));
    }
    let expected = HEADER_LEN + frames * dim * 4;
    if bytes.len() < expected {
        return Err(fail(
            bytes.len(),
            format!("truncated payload, expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(fail(expected, "trailing bytes after payload".into()));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureSequence::new(frames, dim, data).map_err(|e| fail(HEADER_LEN, e.to_string()))
}

pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<()> {
    std::fs::write(path, encode_features(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

/// Loads `<dir>/<video_id>.feat`, checking the width against the dataset.
pub fn load_features(dir: &Path, video_id: &str, expected_dim: Option<usize>) -> Result<FeatureSequence> {
    let path = feature_path(dir, video_id);
    let seq = read_features(&path)?;
    if let Some(d) = expected_dim {
        if seq.dim() != d {
            return Err(Error::Format {
                path,
                offset: 16,
                msg: format!("feature width {} does not match configured {d}", seq.dim()),
            });
        }
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureSequence {
        let data = (0..12).map(|i| (i as f32 * 0.37 - 1.0) as f64).collect();
        FeatureSequence::new(4, 3, data).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let seq = sample();
        write_features(&feature_path(dir.path(), "v"), &seq).unwrap();
        let back = load_features(dir.path(), "v", Some(3)).unwrap();
        assert_eq!(back, seq);
        let bytes = std::fs::read(feature_path(dir.path(), "v")).unwrap();
        assert_eq!(bytes, encode_features(&back));
    }

    #[test]
    fn header_layout() {
        let bytes = encode_features(&sample());
        assert_eq!(&bytes[..8], b"ACRMFEAT");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[4, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[3, 0, 0, 0]);
        assert_eq!(bytes.len(), 20 + 48);
    }

    #[test]
    fn rejects_bad_files() {
        let p = Path::new("x.feat");
        let good = encode_features(&sample());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_features(&bad, p), Err(Error::Format { offset: 0, .. })));
        let mut bad = good.clone();
        bad[8] = 2;
        assert!(matches!(decode_features(&bad, p), Err(Error::Format { offset: 8, .. })));
        let mut zero = good.clone();
        zero[12..16].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_features(&zero, p),
            Err(Error::Format { offset: 12, .. })
        ));
        let short = &good[..good.len() - 2];
        assert!(matches!(decode_features(short, p), Err(Error::Format { .. })));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_features(&feature_path(dir.path(), "v"), &sample()).unwrap();
        assert!(load_features(dir.path(), "v", Some(5)).is_err());
    }
}

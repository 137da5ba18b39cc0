//! Directory container: `manifest.json` plus one binary file per sample.
//!
//! Sample file layout: magic `VDS1`, extents `T, C, H, W` as little-endian
//! `u32`, then `T*C*H*W` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Split, VideoSample, VideoSet};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"VDS1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    num_classes: usize,
    split: Split,
    seed: u64,
    samples: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    file: String,
    label: usize,
    native_length: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "C")]
    c: usize,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
}

/// Encodes one tensor as a `VDS1` record. Values are narrowed to `f32`.
pub(crate) fn encode_record(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    out.extend_from_slice(MAGIC);
    let mut shape = t.shape().to_vec();
    // records always carry four extents; lower-rank tensors are left-padded
    while shape.len() < 4 {
        shape.insert(0, 1);
    }
    if shape.len() > 4 {
        return Err(Error::InvalidShape { shape, reason: "records hold at most four extents".into() });
    }
    for e in shape {
        let e = u32::try_from(e).map_err(|_| Error::InvalidShape { shape: t.shape().to_vec(), reason: "extent exceeds u32".into() })?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes a `VDS1` record into a `[T][C][H][W]` tensor.
pub(crate) fn decode_record(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload { path: path.into(), expected: HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    let extents: Vec<u32> = bytes[4..HEADER_LEN].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let count = extents
        .iter()
        .try_fold(1u64, |acc, &e| acc.checked_mul(e as u64))
        .filter(|&n| n.checked_mul(4).is_some() && usize::try_from(n).is_ok())
        .ok_or_else(|| Error::DimensionOverflow { path: path.into(), extents: extents.clone() })?;
    if extents.contains(&0) {
        return Err(Error::Format { path: path.into(), reason: format!("zero extent in {extents:?}") });
    }
    let expected = HEADER_LEN as u64 + 4 * count;
    if (bytes.len() as u64) < expected {
        return Err(Error::TruncatedPayload { path: path.into(), expected, found: bytes.len() as u64 });
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::Format { path: path.into(), reason: format!("{} trailing bytes", bytes.len() as u64 - expected) });
    }
    let data = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    Tensor::new(extents.iter().map(|&e| e as usize).collect(), data)
}

fn sample_file(i: usize) -> String {
    format!("sample_{i:06}.vds")
}

/// Writes `set` into directory `dir`, creating it if needed.
pub fn write_set(dir: impl AsRef<Path>, set: &VideoSet) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(set.len());
    for (i, s) in set.samples.iter().enumerate() {
        let sh = s.video.shape();
        if sh.len() != 4 {
            return Err(Error::InvalidShape { shape: sh.to_vec(), reason: "videos must be [T][C][H][W]".into() });
        }
        let file = sample_file(i);
        let path = dir.join(&file);
        fs::write(&path, encode_record(&s.video)?).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry { file, label: s.label, native_length: s.native_length, t: sh[0], c: sh[1], h: sh[2], w: sh[3] });
    }
    let manifest =
        Manifest { format_version: FORMAT_VERSION, num_classes: set.num_classes, split: set.split, seed: set.seed, samples: entries };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_set(dir: impl AsRef<Path>) -> Result<VideoSet> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format { path, reason: format!("unsupported format version {}", manifest.format_version) });
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in manifest.samples {
        let file = dir.join(&entry.file);
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        let video = decode_record(&bytes, &file)?;
        if video.shape() != [entry.t, entry.c, entry.h, entry.w] {
            return Err(Error::Format {
                path: file,
                reason: format!("extents {:?} disagree with manifest {:?}", video.shape(), [entry.t, entry.c, entry.h, entry.w]),
            });
        }
        samples.push(VideoSample { video, label: entry.label, native_length: entry.native_length });
    }
    let set = VideoSet { samples, num_classes: manifest.num_classes, split: manifest.split, seed: manifest.seed };
    set.validate()?;
    Ok(set)
}

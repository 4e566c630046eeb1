//! `MELF` blobs: 16-byte little-endian header (magic, version, T, B)
//! followed by row-major `f32` values. The analysis configuration travels in
//! a JSON sidecar next to the blob.

use std::fs;
use std::path::{Path, PathBuf};

use super::{AnalysisConfig, MelSpectrogram};
use crate::error::{Error, Result};

pub const MELF_MAGIC: &[u8; 4] = b"MELF";
pub const MELF_VERSION: u32 = 1;

pub fn encode_melf(m: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * m.data.len());
    out.extend_from_slice(MELF_MAGIC);
    out.extend_from_slice(&MELF_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.frames as u32).to_le_bytes());
    out.extend_from_slice(&(m.bins as u32).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_melf(bytes: &[u8], cfg: &AnalysisConfig) -> Result<MelSpectrogram> {
    if bytes.len() < 16 || &bytes[..4] != MELF_MAGIC {
        return Err(Error::Invalid("not a MELF blob".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != MELF_VERSION {
        return Err(Error::Invalid(format!("unsupported MELF version {version}")));
    }
    let (t, b) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != 4 * t * b {
        return Err(Error::Invalid(format!(
            "MELF body has {} bytes, header promises {t}x{b}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MelSpectrogram::new(t, b, data, cfg.hop_length, cfg.sample_rate)
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_melf(path: impl AsRef<Path>, m: &MelSpectrogram, cfg: &AnalysisConfig) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_melf(m)).map_err(|e| Error::io(path, e))?;
    let side = sidecar(path);
    fs::write(&side, serde_json::to_vec_pretty(cfg)?).map_err(|e| Error::io(&side, e))
}

pub fn read_melf(path: impl AsRef<Path>) -> Result<(MelSpectrogram, AnalysisConfig)> {
    let path = path.as_ref();
    let side = sidecar(path);
    let cfg: AnalysisConfig =
        serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((decode_melf(&bytes, &cfg)?, cfg))
}

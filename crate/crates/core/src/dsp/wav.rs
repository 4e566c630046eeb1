use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

fn malformed(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::MalformedWav(format!("{}: {e}", path.display()))
}

/// Read a PCM WAV file. Multi-channel files keep only the first channel;
/// 16-bit and 32-bit integer PCM as well as 32-bit float are accepted.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::io(path, io)
        }
        hound::Error::Unsupported => Error::UnsupportedWav(path.display().to_string()),
        other => malformed(path, other),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| malformed(path, e))?,
        (SampleFormat::Int, 32) => reader
            .into_samples::<i32>()
            .step_by(channels)
            .map(|s| s.map(|v| (v as f64 / 2_147_483_648.0) as f32))
            .collect::<Result<_, _>>()
            .map_err(|e| malformed(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<Result<_, _>>()
            .map_err(|e| malformed(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedWav(format!(
                "{}: {bits}-bit {fmt:?}",
                path.display()
            )))
        }
    };
    if raw.is_empty() {
        return Err(malformed(path, "no audio samples"));
    }
    Waveform::new(raw, spec.sample_rate)
}

/// Write 16-bit mono PCM.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Invalid(other.to_string()),
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_i16(path: &Path, samples: &[i16], channels: u16) {
        let spec = WavSpec {
            channels,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn silence_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_i16(&p, &vec![0; 16_000], 1);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.sample_rate, 16_000);
        assert_eq!(w.len(), 16_000);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_square_wave_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sq.wav");
        let sq: Vec<i16> = (0..400).map(|i| if (i / 50) % 2 == 0 { 32767 } else { -32767 }).collect();
        write_i16(&p, &sq, 1);
        let w = load_wav(&p).unwrap();
        let expect = 32767.0f32 / 32768.0;
        assert!(w.samples.iter().all(|&s| s.abs() == expect));
    }

    #[test]
    fn stereo_takes_first_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        write_i16(&p, &[100, -5, 200, -5, 300, -5], 2);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.samples.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn truncated_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_i16(&p, &vec![1000; 1000], 1);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..30]).unwrap();
        let err = load_wav(&p).unwrap_err();
        assert!(err.to_string().contains("malformed WAV"), "{err}");
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        let err = load_wav(&p).unwrap_err();
        assert!(err.to_string().contains("malformed WAV"), "{err}");
    }

    #[test]
    fn write_then_load_is_close() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let w = Waveform::new((0..800).map(|i| (i as f32 * 0.01).sin() * 0.5).collect(), 16_000).unwrap();
        write_wav(&p, &w).unwrap();
        let r = load_wav(&p).unwrap();
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}

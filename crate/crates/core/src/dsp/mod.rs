//! Waveform I/O, STFT, log-mel analysis and Griffin-Lim inversion.

mod griffin_lim;
mod mel;
mod melf;
mod stft;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{lit, Frames, Real};

pub use griffin_lim::{griffin_lim, griffin_lim_traced, GriffinLimTrace};
pub use mel::{hz_to_mel, mel_spectrogram, mel_to_hz, MelFilterbank};
pub use melf::{decode_melf, encode_melf, read_melf, write_melf, MELF_MAGIC, MELF_VERSION};
pub use stft::{power_spectrogram, Stft};
pub use wav::{load_wav, write_wav};

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("empty waveform".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Invalid("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        let e: f64 = self.samples.iter().map(|&s| (s as f64).powi(2)).sum();
        (e / self.samples.len() as f64).sqrt()
    }

    pub fn scaled(&self, gain: f32) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Integer-factor decimation with a boxcar anti-alias average. Only exact
    /// integer ratios are supported.
    pub fn decimate_to(&self, target_rate: u32) -> Result<Waveform> {
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        if target_rate == 0 || self.sample_rate % target_rate != 0 {
            return Err(Error::UnsupportedWav(format!(
                "cannot resample {} Hz to {} Hz (integer decimation only)",
                self.sample_rate, target_rate
            )));
        }
        let factor = (self.sample_rate / target_rate) as usize;
        let samples = self
            .samples
            .chunks(factor)
            .map(|c| c.iter().sum::<f32>() / c.len() as f32)
            .collect();
        Waveform::new(samples, target_rate)
    }
}

/// STFT and mel analysis geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub window_size: usize,
    pub hop_length: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            sample_rate: 16_000,
            fft_size: 1024,
            window_size: 800,
            hop_length: 200,
            mel_bins: 80,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-5,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if self.window_size == 0 || self.window_size > self.fft_size {
            return bad("window_size must be in 1..=fft_size");
        }
        if self.hop_length == 0 || self.hop_length > self.window_size {
            return bad("hop_length must be in 1..=window_size");
        }
        if self.mel_bins == 0 {
            return bad("mel_bins must be >= 1");
        }
        let fmax = self.fmax_hz();
        if !(self.fmin >= 0.0 && self.fmin < fmax && fmax <= self.sample_rate as f64 / 2.0) {
            return bad("need 0 <= fmin < fmax <= sample_rate / 2");
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn n_freqs(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced for a waveform of `num_samples` samples.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.hop_length)
    }

    pub fn floor_value(&self) -> f32 {
        self.log_floor.ln() as f32
    }
}

/// `T x B` natural-log mel magnitudes (power, floored).
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f32>,
    pub hop_length: usize,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn new(
        frames: usize,
        bins: usize,
        data: Vec<f32>,
        hop_length: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if frames == 0 || bins == 0 {
            return Err(Error::Invalid("mel spectrogram must have T >= 1 and B >= 1".into()));
        }
        if data.len() != frames * bins {
            return Err(Error::Shape(format!(
                "mel buffer has {} values, expected {frames}x{bins}",
                data.len()
            )));
        }
        Ok(MelSpectrogram {
            frames,
            bins,
            data,
            hop_length,
            sample_rate,
        })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!(
                "mel frame {} bin {}",
                i / self.bins,
                i % self.bins
            ))),
            None => Ok(()),
        }
    }

    pub fn to_frames<T: Real>(&self) -> Frames<T> {
        Frames::from_vec(
            self.frames,
            self.bins,
            self.data.iter().map(|&v| lit::<T>(v as f64)).collect(),
        )
    }

    pub fn from_frames<T: Real>(f: &Frames<T>, hop_length: usize, sample_rate: u32) -> Result<Self> {
        let data = f
            .data
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN) as f32)
            .collect();
        MelSpectrogram::new(f.rows, f.cols, data, hop_length, sample_rate)
    }

    /// Keep the first `frames` rows, or repeat the last row to reach it.
    pub fn fit_to(&self, frames: usize) -> MelSpectrogram {
        let mut data = Vec::with_capacity(frames * self.bins);
        for t in 0..frames {
            data.extend_from_slice(self.frame(t.min(self.frames - 1)));
        }
        MelSpectrogram {
            frames,
            bins: self.bins,
            data,
            hop_length: self.hop_length,
            sample_rate: self.sample_rate,
        }
    }

    /// Per-bin mean over frames.
    pub fn mean_profile(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.bins];
        for t in 0..self.frames {
            for (a, &v) in acc.iter_mut().zip(self.frame(t)) {
                *a += v as f64;
            }
        }
        acc.iter().map(|a| a / self.frames as f64).collect()
    }

    /// Index of the largest mean bin.
    pub fn dominant_bin(&self) -> usize {
        argmax(&self.mean_profile())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        AnalysisConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let cfg = AnalysisConfig {
            window_size: 2048,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = AnalysisConfig {
            hop_length: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn decimation_by_two() {
        let w = Waveform::new(vec![0.0, 1.0, 0.5, 0.5], 32_000).unwrap();
        let d = w.decimate_to(16_000).unwrap();
        assert_eq!(d.samples, vec![0.5, 0.5]);
        assert!(w.decimate_to(12_000).is_err());
    }

    #[test]
    fn empty_and_nonfinite_waveforms_rejected() {
        assert!(Waveform::new(vec![], 16_000).is_err());
        assert!(Waveform::new(vec![f32::NAN], 16_000).is_err());
    }
}

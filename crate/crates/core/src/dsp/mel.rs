use super::stft::power_spectrogram;
use super::{AnalysisConfig, MelSpectrogram, Waveform};
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filterbank with each row normalized to unit area.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub bins: usize,
    pub n_freqs: usize,
    /// Row-major `bins x n_freqs`.
    pub weights: Vec<f64>,
    /// Center frequency of every filter.
    pub centers_hz: Vec<f64>,
    mel_lo: f64,
    mel_step: f64,
}

impl MelFilterbank {
    pub fn new(cfg: &AnalysisConfig) -> Self {
        let bins = cfg.mel_bins;
        let n_freqs = cfg.n_freqs();
        let mel_lo = hz_to_mel(cfg.fmin);
        let mel_hi = hz_to_mel(cfg.fmax_hz());
        let mel_step = (mel_hi - mel_lo) / (bins + 1) as f64;
        let edges: Vec<f64> = (0..bins + 2)
            .map(|i| mel_to_hz(mel_lo + i as f64 * mel_step))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let mut weights = vec![0.0; bins * n_freqs];
        for b in 0..bins {
            let (lo, c, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let row = &mut weights[b * n_freqs..(b + 1) * n_freqs];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let v = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                *w = v;
            }
            let area: f64 = row.iter().sum();
            if area > 0.0 {
                row.iter_mut().for_each(|w| *w /= area);
            }
        }
        MelFilterbank {
            bins,
            n_freqs,
            weights,
            centers_hz: edges[1..=bins].to_vec(),
            mel_lo,
            mel_step,
        }
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.weights[b * self.n_freqs..(b + 1) * self.n_freqs]
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.bins)
            .map(|b| self.row(b).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }

    /// Fractional filter index whose center sits at `hz` (0 = first filter).
    pub fn fractional_bin(&self, hz: f64) -> f64 {
        (hz_to_mel(hz) - self.mel_lo) / self.mel_step - 1.0
    }
}

/// Natural-log mel power spectrogram: `ln(max(mel_power, log_floor))`.
pub fn mel_spectrogram(w: &Waveform, cfg: &AnalysisConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::Invalid(format!(
            "waveform sample rate {} differs from analysis rate {}",
            w.sample_rate, cfg.sample_rate
        )));
    }
    let fb = MelFilterbank::new(cfg);
    mel_with(&fb, w, cfg)
}

pub(crate) fn mel_with(
    fb: &MelFilterbank,
    w: &Waveform,
    cfg: &AnalysisConfig,
) -> Result<MelSpectrogram> {
    let power = power_spectrogram(w, cfg)?;
    let frames = power.len();
    let mut data = Vec::with_capacity(frames * cfg.mel_bins);
    for p in &power {
        data.extend(
            fb.apply(p)
                .into_iter()
                .map(|m| m.max(cfg.log_floor).ln() as f32),
        );
    }
    MelSpectrogram::new(frames, cfg.mel_bins, data, cfg.hop_length, cfg.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, secs: f64, amp: f64) -> Waveform {
        let n = (16_000.0 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| (amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin()) as f32)
                .collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn one_second_gives_eighty_frames() {
        let m = mel_spectrogram(&sine(440.0, 1.0, 0.5), &AnalysisConfig::default()).unwrap();
        assert_eq!((m.frames, m.bins), (80, 80));
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = AnalysisConfig::default();
        let w = Waveform::new(vec![0.0; 4000], 16_000).unwrap();
        let m = mel_spectrogram(&w, &cfg).unwrap();
        assert!(m.data.iter().all(|&v| v == cfg.floor_value()));
    }

    #[test]
    fn sine_peaks_in_nearest_center_bin() {
        let cfg = AnalysisConfig::default();
        let m = mel_spectrogram(&sine(440.0, 1.0, 0.5), &cfg).unwrap();
        // oracle: filter centers straight from the mel formula
        let lo = hz_to_mel(0.0);
        let step = (hz_to_mel(8000.0) - lo) / 81.0;
        let target = hz_to_mel(440.0);
        let expect = (0..80)
            .min_by(|&a, &b| {
                let da = (lo + (a + 1) as f64 * step - target).abs();
                let db = (lo + (b + 1) as f64 * step - target).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        for t in 2..m.frames - 2 {
            let row: Vec<f64> = m.frame(t).iter().map(|&v| v as f64).collect();
            assert_eq!(crate::dsp::argmax(&row), expect, "frame {t}");
        }
    }

    #[test]
    fn rows_have_unit_area() {
        let fb = MelFilterbank::new(&AnalysisConfig::default());
        for b in 0..fb.bins {
            let s: f64 = fb.row(b).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {b} area {s}");
        }
    }

    #[test]
    fn fractional_bin_hits_centers() {
        let fb = MelFilterbank::new(&AnalysisConfig::default());
        for (b, &c) in fb.centers_hz.iter().enumerate() {
            assert!((fb.fractional_bin(c) - b as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn too_short_input_is_an_error() {
        let w = Waveform::new(vec![0.1; 100], 16_000).unwrap();
        assert!(mel_spectrogram(&w, &AnalysisConfig::default()).is_err());
    }
}

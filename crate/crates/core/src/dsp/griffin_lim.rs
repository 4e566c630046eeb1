use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::mel::MelFilterbank;
use super::stft::Stft;
use super::{AnalysisConfig, MelSpectrogram, Waveform};
use crate::error::{Error, Result};

/// Per-iteration spectral convergence `|| |STFT x_i| - S ||_F / ||S||_F`,
/// measured over the full (two-sided) spectrum.
#[derive(Clone, Debug)]
pub struct GriffinLimTrace {
    pub spectral_convergence: Vec<f64>,
}

/// Linear magnitudes from a log-mel spectrogram through the clipped
/// pseudo-inverse of the filterbank. Entries sitting on the log floor are
/// treated as zero power.
fn mel_to_magnitude(m: &MelSpectrogram, cfg: &AnalysisConfig) -> Result<Vec<Vec<f64>>> {
    let fb = MelFilterbank::new(cfg);
    let basis = DMatrix::from_row_slice(fb.bins, fb.n_freqs, &fb.weights);
    let pinv = basis
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::Invalid(format!("mel basis pseudo-inverse: {e}")))?;
    let floor = cfg.log_floor.ln();
    Ok((0..m.frames)
        .map(|t| {
            let power: Vec<f64> = m
                .frame(t)
                .iter()
                .map(|&v| {
                    let v = v as f64;
                    if v <= floor + 1e-4 {
                        0.0
                    } else {
                        v.exp()
                    }
                })
                .collect();
            (0..fb.n_freqs)
                .map(|k| {
                    let p: f64 = (0..fb.bins).map(|b| pinv[(k, b)] * power[b]).sum();
                    p.max(0.0).sqrt()
                })
                .collect()
        })
        .collect())
}

pub fn griffin_lim(m: &MelSpectrogram, cfg: &AnalysisConfig, iters: usize) -> Result<Waveform> {
    griffin_lim_traced(m, cfg, iters).map(|(w, _)| w)
}

/// Griffin-Lim phase reconstruction. Returns a waveform of exactly
/// `frames * hop` samples together with the convergence trace.
pub fn griffin_lim_traced(
    m: &MelSpectrogram,
    cfg: &AnalysisConfig,
    iters: usize,
) -> Result<(Waveform, GriffinLimTrace)> {
    if iters == 0 {
        return Err(Error::Invalid("griffin_lim needs at least one iteration".into()));
    }
    cfg.validate()?;
    if m.bins != cfg.mel_bins || m.hop_length != cfg.hop_length {
        return Err(Error::Shape(format!(
            "mel geometry ({} bins, hop {}) does not match analysis config ({} bins, hop {})",
            m.bins, m.hop_length, cfg.mel_bins, cfg.hop_length
        )));
    }
    m.check_finite()?;
    let mag = mel_to_magnitude(m, cfg)?;
    let stft = Stft::new(cfg);
    let nf = stft.n_freqs();
    let bin_weight = |k: usize| if k == 0 || k == nf - 1 { 1.0 } else { 2.0 };
    let target_norm: f64 = mag
        .iter()
        .flat_map(|f| f.iter().enumerate().map(|(k, v)| bin_weight(k) * v * v))
        .sum::<f64>()
        .sqrt();

    // fixed-seed random initial phase; DC and Nyquist stay real
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut spec: Vec<Vec<Complex64>> = mag
        .iter()
        .map(|f| {
            f.iter()
                .enumerate()
                .map(|(k, &a)| {
                    if k == 0 || k == nf - 1 {
                        Complex64::new(a, 0.0)
                    } else {
                        Complex64::from_polar(a, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
                    }
                })
                .collect()
        })
        .collect();

    let mut trace = Vec::with_capacity(iters);
    let mut signal = Vec::new();
    for _ in 0..iters {
        signal = stft.synthesize(&spec);
        let rebuilt = stft.analyze(&signal, m.frames);
        let mut err = 0.0;
        for ((target, got), slot) in mag.iter().zip(&rebuilt).zip(spec.iter_mut()) {
            for (k, ((&a, &y), s)) in target.iter().zip(got).zip(slot.iter_mut()).enumerate() {
                let r = y.norm();
                err += bin_weight(k) * (r - a).powi(2);
                *s = if r > 1e-300 {
                    y * (a / r)
                } else {
                    Complex64::new(a, 0.0)
                };
            }
        }
        trace.push(if target_norm > 0.0 {
            err.sqrt() / target_norm
        } else {
            0.0
        });
    }

    let pad = cfg.fft_size / 2;
    let len = m.frames * cfg.hop_length;
    let samples = (0..len)
        .map(|i| signal.get(pad + i).copied().unwrap_or(0.0).clamp(-1.0, 1.0) as f32)
        .collect();
    Ok((
        Waveform::new(samples, cfg.sample_rate)?,
        GriffinLimTrace {
            spectral_convergence: trace,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel_spectrogram;
    use std::f64::consts::PI;

    fn tone(freq: f64) -> Waveform {
        Waveform::new(
            (0..16_000)
                .map(|i| (0.3 * (2.0 * PI * freq * i as f64 / 16_000.0).sin()) as f32)
                .collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = AnalysisConfig::default();
        let m = mel_spectrogram(&tone(440.0), &cfg).unwrap();
        assert!(griffin_lim(&m, &cfg, 0).is_err());
    }

    #[test]
    fn tone_round_trip_keeps_dominant_bin() {
        let cfg = AnalysisConfig::default();
        let m = mel_spectrogram(&tone(440.0), &cfg).unwrap();
        let (w, trace) = griffin_lim_traced(&m, &cfg, 60).unwrap();
        assert_eq!(w.len(), m.frames * cfg.hop_length);
        let again = mel_spectrogram(&w, &cfg).unwrap();
        assert_eq!(again.dominant_bin(), m.dominant_bin());
        for pair in trace.spectral_convergence.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{pair:?}");
        }
    }

    #[test]
    fn floor_mel_is_silent() {
        let cfg = AnalysisConfig::default();
        let m = MelSpectrogram::new(
            40,
            80,
            vec![cfg.floor_value(); 40 * 80],
            cfg.hop_length,
            cfg.sample_rate,
        )
        .unwrap();
        let w = griffin_lim(&m, &cfg, 10).unwrap();
        assert!(w.rms() < 1e-3);
    }

    #[test]
    fn more_iterations_do_not_hurt() {
        let cfg = AnalysisConfig::default();
        let m = mel_spectrogram(&tone(300.0), &cfg).unwrap();
        let (_, one) = griffin_lim_traced(&m, &cfg, 1).unwrap();
        let (_, sixty) = griffin_lim_traced(&m, &cfg, 60).unwrap();
        assert!(sixty.spectral_convergence[59] <= one.spectral_convergence[0]);
    }
}

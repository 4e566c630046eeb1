use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{AnalysisConfig, Waveform};
use crate::error::{Error, Result};

/// Short-time Fourier transform with a periodic Hann window of
/// `window_size` samples centered inside an `fft_size` frame.
pub struct Stft {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: &AnalysisConfig) -> Self {
        let n = cfg.fft_size;
        let mut window = vec![0.0; n];
        let offset = (n - cfg.window_size) / 2;
        for i in 0..cfg.window_size {
            window[offset + i] =
                0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.window_size as f64).cos();
        }
        let mut planner = FftPlanner::new();
        Stft {
            fft_size: n,
            hop: cfg.hop_length,
            window,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn n_freqs(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Reflect-pad by `fft_size / 2` on both sides.
    pub fn center_pad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.fft_size / 2;
        if x.len() <= pad {
            return Err(Error::Invalid(format!(
                "waveform of {} samples is shorter than one analysis window after padding (need > {pad})",
                x.len()
            )));
        }
        let mut out = Vec::with_capacity(x.len() + 2 * pad);
        out.extend((1..=pad).rev().map(|i| x[i]));
        out.extend_from_slice(x);
        let n = x.len();
        out.extend((1..=pad).map(|i| x[n - 1 - i]));
        Ok(out)
    }

    /// Complex frames of an already padded signal; frame `t` starts at
    /// `t * hop`. Samples past the end read as zero.
    pub fn analyze(&self, padded: &[f64], frames: usize) -> Vec<Vec<Complex64>> {
        let n = self.fft_size;
        let nf = self.n_freqs();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        (0..frames)
            .map(|t| {
                let start = t * self.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    let v = padded.get(start + i).copied().unwrap_or(0.0);
                    *b = Complex64::new(v * self.window[i], 0.0);
                }
                self.forward.process(&mut buf);
                buf[..nf].to_vec()
            })
            .collect()
    }

    /// Least-squares overlap-add inverse: the signal of length
    /// `(frames - 1) * hop + fft_size` whose STFT is closest to `spec`.
    pub fn synthesize(&self, spec: &[Vec<Complex64>]) -> Vec<f64> {
        let n = self.fft_size;
        let nf = self.n_freqs();
        let len = (spec.len().saturating_sub(1)) * self.hop + n;
        let mut acc = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (t, frame) in spec.iter().enumerate() {
            buf[..nf].copy_from_slice(frame);
            buf[0].im = 0.0;
            if n % 2 == 0 {
                buf[n / 2].im = 0.0;
            }
            for k in 1..(n - nf + 1) {
                buf[n - k] = frame[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for i in 0..n {
                let w = self.window[i];
                acc[start + i] += w * buf[i].re / n as f64;
                norm[start + i] += w * w;
            }
        }
        acc.iter()
            .zip(&norm)
            .map(|(&a, &z)| if z > 1e-12 { a / z } else { 0.0 })
            .collect()
    }
}

/// `T x (fft_size/2 + 1)` power spectrogram with center reflect padding;
/// `T = ceil(len / hop)`.
pub fn power_spectrogram(w: &Waveform, cfg: &AnalysisConfig) -> Result<Vec<Vec<f64>>> {
    let stft = Stft::new(cfg);
    let x: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();
    let padded = stft.center_pad(&x)?;
    let frames = cfg.num_frames(w.len());
    Ok(stft
        .analyze(&padded, frames)
        .into_iter()
        .map(|f| f.iter().map(|c| c.norm_sqr()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        let cfg = AnalysisConfig {
            fft_size: 4,
            window_size: 4,
            hop_length: 2,
            ..Default::default()
        };
        let s = Stft::new(&cfg);
        assert_eq!(
            s.center_pad(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]
        );
        assert!(s.center_pad(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn analysis_synthesis_round_trip() {
        let cfg = AnalysisConfig::default();
        let s = Stft::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames = 20;
        let len = (frames - 1) * cfg.hop_length + cfg.fft_size;
        let mut x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // samples outside every window's support cannot be recovered
        let covered = s.synthesize(&s.analyze(&vec![1.0; len], frames));
        for (v, c) in x.iter_mut().zip(&covered) {
            if *c == 0.0 {
                *v = 0.0;
            }
        }
        let y = s.synthesize(&s.analyze(&x, frames));
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_ratio_is_stable() {
        // Frame energies track waveform energy by a window-dependent constant.
        let cfg = AnalysisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ratios = Vec::new();
        for _ in 0..8 {
            let amp: f32 = rng.gen_range(0.05..0.9);
            let samples: Vec<f32> = (0..16_000).map(|_| rng.gen_range(-amp..amp)).collect();
            let w = Waveform::new(samples, 16_000).unwrap();
            let p = power_spectrogram(&w, &cfg).unwrap();
            let spec_e: f64 = p
                .iter()
                .map(|f| {
                    f.iter()
                        .enumerate()
                        .map(|(k, v)| if k == 0 || k == f.len() - 1 { *v } else { 2.0 * v })
                        .sum::<f64>()
                })
                .sum();
            let wave_e: f64 = w.samples.iter().map(|&s| (s as f64).powi(2)).sum();
            ratios.push(spec_e / wave_e);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        for r in &ratios {
            assert!((r / mean - 1.0).abs() < 0.1, "{ratios:?}");
        }
        // sum_t sum_n w^2 x^2 * N  ~=  N * sum(w^2)/hop * E
        let s = Stft::new(&cfg);
        let w2: f64 = s.window.iter().map(|w| w * w).sum();
        let expect = cfg.fft_size as f64 * w2 / cfg.hop_length as f64;
        assert!((mean / expect - 1.0).abs() < 0.1);
    }
}

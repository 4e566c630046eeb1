//! f0 tracking, log-f0 conditioning contours and moment renormalization.
//!
//! The tracker is a single-rate RAPT-style design: normalized
//! cross-correlation (NCCF) peaks become per-frame candidates, and a Viterbi
//! pass picks the path that balances correlation strength against log-f0
//! jumps. A frame is voiced exactly when its best NCCF peak exceeds the
//! voicing threshold (0 by default).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{AnalysisConfig, MelFilterbank, MelSpectrogram, Waveform};
use crate::error::{Error, Result};

/// Log-f0 used for unvoiced frames when a contour has no voiced frame at all.
pub const FALLBACK_LOG_F0: f64 = 4.787_491_742_782_046; // ln 120

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    pub hop_length: usize,
    /// Frames whose best NCCF peak is not above this are unvoiced.
    pub voicing_threshold: f64,
    /// Weight favouring short lags in the local cost (RAPT's `LAG_WT`).
    pub lag_weight: f64,
    /// Cost per unit of `|ln f0_t - ln f0_{t-1}|`.
    pub jump_cost: f64,
    /// Cost of a voiced/unvoiced transition.
    pub voicing_switch_cost: f64,
    pub max_candidates: usize,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            f0_min: 70.0,
            f0_max: 500.0,
            hop_length: 200,
            voicing_threshold: 0.0,
            lag_weight: 0.3,
            jump_cost: 0.35,
            voicing_switch_cost: 0.2,
            max_candidates: 8,
        }
    }
}

impl PitchConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyq4 = sample_rate as f64 / 4.0;
        if !(self.f0_min >= 20.0 && self.f0_min < self.f0_max && self.f0_max <= nyq4) {
            return Err(Error::Config(format!(
                "f0 range must satisfy 20 <= f0_min < f0_max <= {nyq4}, got {}..{}",
                self.f0_min, self.f0_max
            )));
        }
        if self.hop_length == 0 || self.max_candidates == 0 {
            return Err(Error::Config("hop_length and max_candidates must be positive".into()));
        }
        Ok(())
    }
}

/// Per-frame f0 in Hz (0 where unvoiced) with the matching voicing mask.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Contour {
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl F0Contour {
    pub fn new(f0_hz: Vec<f64>, voiced: Vec<bool>) -> Result<Self> {
        if f0_hz.len() != voiced.len() {
            return Err(Error::Shape("f0 and voicing mask lengths differ".into()));
        }
        for (t, (&f, &v)) in f0_hz.iter().zip(&voiced).enumerate() {
            if v != (f > 0.0) || !f.is_finite() {
                return Err(Error::Invalid(format!(
                    "frame {t}: f0 {f} inconsistent with voiced={v}"
                )));
            }
        }
        Ok(F0Contour { f0_hz, voiced })
    }

    pub fn unvoiced(frames: usize) -> Self {
        F0Contour {
            f0_hz: vec![0.0; frames],
            voiced: vec![false; frames],
        }
    }

    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    /// Truncate, or repeat the last frame, to exactly `frames`.
    pub fn fit_to(&self, frames: usize) -> F0Contour {
        let idx = |t: usize| t.min(self.len().saturating_sub(1));
        F0Contour {
            f0_hz: (0..frames).map(|t| self.f0_hz[idx(t)]).collect(),
            voiced: (0..frames).map(|t| self.voiced[idx(t)]).collect(),
        }
    }
}

/// Log-f0 conditioning channel: `ln f0` on voiced frames, `fill` elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogF0 {
    pub values: Vec<f64>,
    pub voiced: Vec<bool>,
    pub fill: f64,
}

impl LogF0 {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mask(&self) -> Vec<f64> {
        self.voiced.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }

    pub fn fit_to(&self, frames: usize) -> LogF0 {
        let idx = |t: usize| t.min(self.len().saturating_sub(1));
        LogF0 {
            values: (0..frames).map(|t| self.values[idx(t)]).collect(),
            voiced: (0..frames).map(|t| self.voiced[idx(t)]).collect(),
            fill: self.fill,
        }
    }
}

/// Mean and population standard deviation of voiced log-f0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Stats {
    pub mean: f64,
    pub std: f64,
}

impl F0Stats {
    pub fn from_log_values(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Err(Error::NoVoicedSpeech);
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let s = F0Stats {
            mean,
            std: var.max(0.0).sqrt(),
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if !self.mean.is_finite() || !self.std.is_finite() || self.std < 0.0 {
            return Err(Error::NonFinite(format!("f0 stats {self:?}")));
        }
        Ok(())
    }
}

struct Candidate {
    f0: f64,
    cost: f64,
}

fn nccf_frame(x: &[f64], center: isize, win: usize, kmin: usize, kmax: usize) -> Vec<f64> {
    let at = |i: isize| {
        if i >= 0 && (i as usize) < x.len() {
            x[i as usize]
        } else {
            0.0
        }
    };
    let start = center - (win / 2) as isize;
    let seg: Vec<f64> = (0..win as isize).map(|n| at(start + n)).collect();
    let e0: f64 = seg.iter().map(|v| v * v).sum();
    let lo = kmin.saturating_sub(1);
    let mut out = vec![0.0; kmax + 2];
    if e0 <= 1e-20 {
        return out;
    }
    for (k, slot) in out.iter_mut().enumerate().skip(lo) {
        let mut num = 0.0;
        let mut ek = 0.0;
        for (n, &s) in seg.iter().enumerate() {
            let y = at(start + (n + k) as isize);
            num += s * y;
            ek += y * y;
        }
        *slot = if ek > 1e-20 { num / (e0 * ek).sqrt() } else { 0.0 };
    }
    out
}

/// RAPT-style f0 tracking. Produces one frame per `hop_length` samples,
/// centered at `t * hop`, so the frame count equals the mel frame count for
/// the same hop.
pub fn estimate_f0(w: &Waveform, cfg: &PitchConfig) -> Result<F0Contour> {
    cfg.validate(w.sample_rate)?;
    let sr = w.sample_rate as f64;
    let x: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();
    let frames = w.len().div_ceil(cfg.hop_length);
    let kmin = (sr / cfg.f0_max).floor().max(2.0) as usize;
    let kmax = (sr / cfg.f0_min).ceil() as usize;
    let win = kmax;

    let candidates: Vec<Vec<Candidate>> = (0..frames)
        .map(|t| {
            let r = nccf_frame(&x, (t * cfg.hop_length) as isize, win, kmin, kmax);
            let mut peaks: Vec<(f64, f64)> = Vec::new();
            for k in kmin..=kmax {
                let (a, b, c) = (r[k - 1], r[k], r[k + 1]);
                if b > cfg.voicing_threshold && b >= a && b > c {
                    let denom = a - 2.0 * b + c;
                    let delta = if denom.abs() > 1e-12 {
                        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
                    } else {
                        0.0
                    };
                    let lag = k as f64 + delta;
                    let value = b - 0.25 * (a - c) * delta;
                    peaks.push((lag, value));
                }
            }
            peaks.sort_by(|p, q| q.1.total_cmp(&p.1));
            peaks.truncate(cfg.max_candidates);
            peaks
                .into_iter()
                .map(|(lag, v)| Candidate {
                    f0: (sr / lag).clamp(cfg.f0_min, cfg.f0_max),
                    cost: 1.0 - v * (1.0 - cfg.lag_weight * lag / kmax as f64),
                })
                .collect()
        })
        .collect();

    // Viterbi over {candidates} or the single unvoiced state.
    let mut costs: Vec<Vec<f64>> = Vec::with_capacity(frames);
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(frames);
    for t in 0..frames {
        let cands = &candidates[t];
        let n_states = cands.len().max(1);
        let local = |j: usize| if cands.is_empty() { 0.0 } else { cands[j].cost };
        if t == 0 {
            costs.push((0..n_states).map(local).collect());
            back.push(vec![0; n_states]);
            continue;
        }
        let prev = &candidates[t - 1];
        let prev_cost = &costs[t - 1];
        let mut row = Vec::with_capacity(n_states);
        let mut brow = Vec::with_capacity(n_states);
        for j in 0..n_states {
            let mut best = (f64::INFINITY, 0);
            for (i, &pc) in prev_cost.iter().enumerate() {
                let trans = match (prev.is_empty(), cands.is_empty()) {
                    (true, true) => 0.0,
                    (false, false) => cfg.jump_cost * (cands[j].f0.ln() - prev[i].f0.ln()).abs(),
                    _ => cfg.voicing_switch_cost,
                };
                let c = pc + trans;
                if c < best.0 {
                    best = (c, i);
                }
            }
            row.push(best.0 + local(j));
            brow.push(best.1);
        }
        costs.push(row);
        back.push(brow);
    }
    let mut f0_hz = vec![0.0; frames];
    let mut voiced = vec![false; frames];
    if frames > 0 {
        let last = &costs[frames - 1];
        let mut j = (0..last.len())
            .min_by(|&a, &b| last[a].total_cmp(&last[b]))
            .unwrap_or(0);
        for t in (0..frames).rev() {
            if let Some(c) = candidates[t].get(j) {
                f0_hz[t] = c.f0;
                voiced[t] = true;
            }
            j = back[t][j];
        }
    }
    F0Contour::new(f0_hz, voiced)
}

/// Harmonic-comb f0 estimator operating on log-mel frames, for inputs that
/// have no waveform (synthesizer output).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CombConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    pub grid_points: usize,
    pub max_harmonic_hz: f64,
    /// Minimum comb score (log-power units) for a voiced frame.
    pub voicing_threshold: f64,
}

impl Default for CombConfig {
    fn default() -> Self {
        CombConfig {
            f0_min: 70.0,
            f0_max: 500.0,
            grid_points: 96,
            max_harmonic_hz: 3000.0,
            voicing_threshold: 0.5,
        }
    }
}

fn interp(frame: &[f32], pos: f64) -> Option<f64> {
    if pos < 0.0 || pos > (frame.len() - 1) as f64 {
        return None;
    }
    let i = pos.floor() as usize;
    let j = (i + 1).min(frame.len() - 1);
    let a = pos - i as f64;
    Some((1.0 - a) * frame[i] as f64 + a * frame[j] as f64)
}

/// Score each grid f0 by the log-mel contrast between resolved harmonics
/// and their half-harmonics, summed and divided by the square root of the
/// harmonic count. A frame is voiced when the mean contrast of the winning
/// f0 clears the threshold.
pub fn f0_from_mel(m: &MelSpectrogram, cfg: &AnalysisConfig, comb: &CombConfig) -> F0Contour {
    let fb = MelFilterbank::new(cfg);
    let n = comb.grid_points.max(2);
    let ratio = (comb.f0_max / comb.f0_min).ln();
    let grid: Vec<f64> = (0..n)
        .map(|i| comb.f0_min * (ratio * i as f64 / (n - 1) as f64).exp())
        .collect();
    let top = comb.max_harmonic_hz.min(cfg.fmax_hz());
    let mut f0_hz = vec![0.0; m.frames];
    let mut voiced = vec![false; m.frames];
    for t in 0..m.frames {
        let frame = m.frame(t);
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for &f in &grid {
            // only harmonics whose half-harmonic sits at least one filter away
            let (mut sum, mut count) = (0.0, 0usize);
            let mut h = 1.0;
            while (h + 0.5) * f <= top {
                let (ph, pm) = (fb.fractional_bin(h * f), fb.fractional_bin((h + 0.5) * f));
                if pm - ph < 1.0 {
                    break;
                }
                if let (Some(a), Some(b)) = (interp(frame, ph), interp(frame, pm)) {
                    sum += a - b;
                    count += 1;
                }
                h += 1.0;
            }
            if count > 0 {
                let score = sum / (count as f64).sqrt();
                if score > best.0 {
                    best = (score, f, sum / count as f64);
                }
            }
        }
        if best.2 > comb.voicing_threshold {
            f0_hz[t] = best.1;
            voiced[t] = true;
        }
    }
    F0Contour { f0_hz, voiced }
}

/// Log-f0 with unvoiced frames filled by the mean voiced log-f0 of this
/// contour, or `fallback` when nothing is voiced.
pub fn log_f0_with_fallback(c: &F0Contour, fallback: f64) -> LogF0 {
    let voiced_logs: Vec<f64> = c
        .f0_hz
        .iter()
        .zip(&c.voiced)
        .filter(|(_, &v)| v)
        .map(|(f, _)| f.ln())
        .collect();
    let fill = if voiced_logs.is_empty() {
        fallback
    } else {
        voiced_logs.iter().sum::<f64>() / voiced_logs.len() as f64
    };
    LogF0 {
        values: c
            .f0_hz
            .iter()
            .zip(&c.voiced)
            .map(|(f, &v)| if v { f.ln() } else { fill })
            .collect(),
        voiced: c.voiced.clone(),
        fill,
    }
}

pub fn log_f0(c: &F0Contour) -> LogF0 {
    log_f0_with_fallback(c, FALLBACK_LOG_F0)
}

/// Map voiced frames from source to target log-f0 moments; unvoiced frames
/// (and every frame when the source spread is degenerate) go to the target
/// mean.
pub fn renormalize_f0(src: &LogF0, src_stats: &F0Stats, tgt_stats: &F0Stats) -> Result<LogF0> {
    src_stats.check()?;
    tgt_stats.check()?;
    let degenerate = src_stats.std < 1e-6;
    let values = src
        .values
        .iter()
        .zip(&src.voiced)
        .map(|(&x, &v)| {
            if v && !degenerate {
                (x - src_stats.mean) / src_stats.std * tgt_stats.std + tgt_stats.mean
            } else {
                tgt_stats.mean
            }
        })
        .collect();
    Ok(LogF0 {
        values,
        voiced: src.voiced.clone(),
        fill: tgt_stats.mean,
    })
}

/// Pooled voiced log-f0 statistics over a speaker's contours.
pub fn f0_stats<'a>(contours: impl IntoIterator<Item = &'a F0Contour>) -> Result<F0Stats> {
    F0Stats::from_log_values(contours.into_iter().flat_map(|c| {
        c.f0_hz
            .iter()
            .zip(&c.voiced)
            .filter(|(_, &v)| v)
            .map(|(f, _)| f.ln())
    }))
}

pub fn write_f0_csv(path: impl AsRef<Path>, c: &F0Contour) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    writeln!(buf, "frame_index,f0_hz,voiced").unwrap();
    for (t, (f, v)) in c.f0_hz.iter().zip(&c.voiced).enumerate() {
        writeln!(buf, "{t},{f},{}", u8::from(*v)).unwrap();
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_f0_csv(path: impl AsRef<Path>) -> Result<F0Contour> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut f0 = Vec::new();
    let mut voiced = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(parse_err(i + 1, "expected frame_index,f0_hz,voiced".into()));
        }
        let idx: usize = cols[0]
            .parse()
            .map_err(|_| parse_err(i + 1, "bad frame index".into()))?;
        if idx != f0.len() {
            return Err(parse_err(i + 1, format!("frame index {idx} out of order")));
        }
        f0.push(
            cols[1]
                .parse::<f64>()
                .map_err(|_| parse_err(i + 1, "bad f0".into()))?,
        );
        voiced.push(match cols[2] {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(i + 1, format!("bad voiced flag {other:?}"))),
        });
    }
    F0Contour::new(f0, voiced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    fn tone(freq: f64, secs: f64) -> Waveform {
        let n = (16_000.0 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| (0.5 * (2.0 * PI * freq * i as f64 / 16_000.0).sin()) as f32)
                .collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn tone_440_tracked_within_one_percent() {
        let c = estimate_f0(&tone(440.0, 1.0), &PitchConfig::default()).unwrap();
        assert_eq!(c.len(), 80);
        for t in 2..c.len() - 2 {
            assert!(c.voiced[t], "frame {t} unvoiced");
            assert!((c.f0_hz[t] / 440.0 - 1.0).abs() < 0.01, "frame {t}: {}", c.f0_hz[t]);
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let w = Waveform::new(vec![0.0; 8000], 16_000).unwrap();
        let c = estimate_f0(&w, &PitchConfig::default()).unwrap();
        assert_eq!(c.voiced_count(), 0);
        assert!(c.f0_hz.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn pulse_train_has_no_octave_error() {
        let samples: Vec<f32> = (0..16_000).map(|i| if i % 160 == 0 { 0.9 } else { 0.0 }).collect();
        let w = Waveform::new(samples, 16_000).unwrap();
        let c = estimate_f0(&w, &PitchConfig::default()).unwrap();
        for t in 2..c.len() - 2 {
            assert!(c.voiced[t]);
            assert!((c.f0_hz[t] / 100.0 - 1.0).abs() < 0.01, "frame {t}: {}", c.f0_hz[t]);
        }
    }

    #[test]
    fn invalid_range_rejected() {
        let cfg = PitchConfig {
            f0_min: 300.0,
            f0_max: 200.0,
            ..Default::default()
        };
        assert!(estimate_f0(&tone(220.0, 0.2), &cfg).is_err());
        let cfg = PitchConfig {
            f0_max: 5000.0,
            ..Default::default()
        };
        assert!(estimate_f0(&tone(220.0, 0.2), &cfg).is_err());
    }

    #[test]
    fn log_f0_fill_rules() {
        let c = F0Contour::new(vec![0.0, E * E], vec![false, true]).unwrap();
        let l = log_f0(&c);
        assert!((l.values[1] - 2.0).abs() < 1e-12);
        assert_eq!(l.values[0], l.fill);
        assert!((l.fill - 2.0).abs() < 1e-12);

        let all_unvoiced = log_f0_with_fallback(&F0Contour::unvoiced(3), 4.0);
        assert_eq!(all_unvoiced.values, vec![4.0; 3]);

        let c = F0Contour::new(vec![200.0, 0.0, 200.0], vec![true, false, true]).unwrap();
        assert!((log_f0(&c).values[1] - 200f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn renormalization_examples() {
        let src = F0Stats { mean: 4.8, std: 0.2 };
        let tgt = F0Stats { mean: 5.2, std: 0.3 };
        let l = LogF0 {
            values: vec![5.0, 4.8, 1.0],
            voiced: vec![true, true, false],
            fill: 1.0,
        };
        let r = renormalize_f0(&l, &src, &tgt).unwrap();
        assert!((r.values[0] - 5.5).abs() < 1e-12);
        assert!((r.values[1] - 5.2).abs() < 1e-12);
        assert_eq!(r.values[2], 5.2);

        let flat = F0Stats { mean: 4.8, std: 0.0 };
        let r = renormalize_f0(&l, &flat, &tgt).unwrap();
        assert!(r.values.iter().all(|&v| v == 5.2));

        let bad = F0Stats { mean: f64::NAN, std: 0.1 };
        assert!(renormalize_f0(&l, &bad, &tgt).is_err());
    }

    #[test]
    fn stats_examples() {
        let c = F0Contour::new(vec![5f64.exp(); 4], vec![true; 4]).unwrap();
        let s = f0_stats([&c]).unwrap();
        assert!((s.mean - 5.0).abs() < 1e-12 && s.std.abs() < 1e-12);

        let c = F0Contour::new(vec![4f64.exp(), 6f64.exp()], vec![true, true]).unwrap();
        let s = f0_stats([&c]).unwrap();
        assert!((s.mean - 5.0).abs() < 1e-12 && (s.std - 1.0).abs() < 1e-12);

        let err = f0_stats([&F0Contour::unvoiced(5)]).unwrap_err();
        assert_eq!(err.to_string(), "no voiced speech");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f0.csv");
        let c = F0Contour::new(vec![0.0, 123.5, 0.0], vec![false, true, false]).unwrap();
        write_f0_csv(&p, &c).unwrap();
        assert_eq!(read_f0_csv(&p).unwrap(), c);
    }

    #[test]
    fn mask_and_zero_coupling_enforced() {
        assert!(F0Contour::new(vec![100.0], vec![false]).is_err());
        assert!(F0Contour::new(vec![0.0], vec![true]).is_err());
    }

    #[test]
    fn comb_finds_harmonic_f0_in_mel() {
        let cfg = AnalysisConfig::default();
        let w = Waveform::new(
            (0..16_000)
                .map(|i| {
                    let t = i as f64 / 16_000.0;
                    (1..=15)
                        .map(|h| 0.05 * (2.0 * PI * 150.0 * h as f64 * t).sin())
                        .sum::<f64>() as f32
                })
                .collect(),
            16_000,
        )
        .unwrap();
        let m = crate::dsp::mel_spectrogram(&w, &cfg).unwrap();
        let c = f0_from_mel(&m, &cfg, &CombConfig::default());
        for t in 3..m.frames - 3 {
            assert!(c.voiced[t], "frame {t}");
            assert!((c.f0_hz[t] / 150.0 - 1.0).abs() < 0.05, "frame {t}: {}", c.f0_hz[t]);
        }
    }

    #[test]
    fn comb_floor_mel_is_unvoiced() {
        let cfg = AnalysisConfig::default();
        let m = MelSpectrogram::new(5, 80, vec![cfg.floor_value(); 400], 200, 16_000).unwrap();
        assert_eq!(f0_from_mel(&m, &cfg, &CombConfig::default()).voiced_count(), 0);
    }


    #[test]
    fn comb_finds_pure_tone() {
        let cfg = AnalysisConfig::default();
        let w = Waveform::new(
            (0..16_000)
                .map(|i| (0.5 * (2.0 * PI * 220.0 * i as f64 / 16_000.0).sin()) as f32)
                .collect(),
            16_000,
        )
        .unwrap();
        let m = crate::dsp::mel_spectrogram(&w, &cfg).unwrap();
        let c = f0_from_mel(&m, &cfg, &CombConfig::default());
        assert_eq!(c.len(), m.frames);
        let fb = MelFilterbank::new(&cfg);
        for t in 3..m.frames - 3 {
            assert!(c.voiced[t]);
            // one filter of tolerance
            assert!((fb.fractional_bin(c.f0_hz[t]) - fb.fractional_bin(220.0)).abs() <= 1.0, "{}", c.f0_hz[t]);
        }
    }

}

//! Synthetic multi-speaker world for desk-scale experiments.
//!
//! Each speaker is an additive harmonic source with its own f0 range,
//! formant scaling and spectral tilt. Utterances are random vowel/nasal
//! sequences framed by digital silence, so phone alignments are known
//! exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_alignments, PhoneAlignment};
use crate::dsp::{write_wav, AnalysisConfig, Waveform};
use crate::error::{Error, Result};

/// Phone inventory with (F1, F2, F3) in Hz and a relative level.
pub const PHONES: [(&str, [f64; 3], f64); 10] = [
    ("aa", [730.0, 1090.0, 2440.0], 1.0),
    ("iy", [270.0, 2290.0, 3010.0], 0.9),
    ("uw", [300.0, 870.0, 2240.0], 0.9),
    ("eh", [530.0, 1840.0, 2480.0], 1.0),
    ("ae", [660.0, 1720.0, 2410.0], 1.0),
    ("ah", [520.0, 1190.0, 2390.0], 1.0),
    ("ow", [570.0, 840.0, 2410.0], 0.95),
    ("er", [490.0, 1350.0, 1690.0], 0.9),
    ("m", [280.0, 1300.0, 2500.0], 0.4),
    ("n", [280.0, 1700.0, 2600.0], 0.4),
];

pub const SILENCE: &str = "sil";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpeaker {
    pub id: String,
    pub f0_hz: f64,
    pub formant_scale: f64,
    /// Spectral tilt in dB per kHz.
    pub tilt_db_per_khz: f64,
}

impl ToySpeaker {
    pub fn new(id: &str, f0_hz: f64, formant_scale: f64, tilt_db_per_khz: f64) -> Self {
        ToySpeaker {
            id: id.to_string(),
            f0_hz,
            formant_scale,
            tilt_db_per_khz,
        }
    }

    /// Harmonic amplitude at `hz` for a phone with formants `fmt`.
    fn envelope(&self, hz: f64, fmt: &[f64; 3]) -> f64 {
        let res: f64 = fmt
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let f = f * self.formant_scale;
                let bw = 60.0 + 0.06 * f;
                let gain = [1.0, 0.6, 0.3][i];
                gain / (1.0 + ((hz - f) / bw).powi(2))
            })
            .sum();
        res * 10f64.powf(self.tilt_db_per_khz * hz / 1000.0 / 20.0)
    }
}

pub fn background_speakers() -> Vec<ToySpeaker> {
    vec![
        ToySpeaker::new("spk1", 105.0, 0.92, -2.0),
        ToySpeaker::new("spk2", 135.0, 1.0, -7.0),
        ToySpeaker::new("spk3", 195.0, 1.1, -3.5),
        ToySpeaker::new("spk4", 235.0, 1.2, -9.0),
    ]
}

pub fn target_speaker() -> ToySpeaker {
    ToySpeaker::new("tgt1", 170.0, 1.05, -5.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyWorldConfig {
    pub utterances_per_speaker: usize,
    pub target_utterances: usize,
    pub min_phones: usize,
    pub max_phones: usize,
    pub min_phone_frames: usize,
    pub max_phone_frames: usize,
    pub seed: u64,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        ToyWorldConfig {
            utterances_per_speaker: 30,
            target_utterances: 20,
            min_phones: 4,
            max_phones: 7,
            min_phone_frames: 6,
            max_phone_frames: 14,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyUtterance {
    pub alignment: PhoneAlignment,
    pub audio: Waveform,
}

#[derive(Clone, Debug)]
pub struct ToyWorld {
    pub background: Vec<ToyUtterance>,
    pub target: Vec<ToyUtterance>,
}

fn formants(phone: &str) -> Option<([f64; 3], f64)> {
    PHONES.iter().find(|p| p.0 == phone).map(|p| (p.1, p.2))
}

fn random_alignment(utt: String, spk: &str, cfg: &ToyWorldConfig, rng: &mut ChaCha8Rng) -> Result<PhoneAlignment> {
    let n = rng.gen_range(cfg.min_phones..=cfg.max_phones);
    let mut durs: Vec<(&str, usize)> = vec![(SILENCE, rng.gen_range(3..=5))];
    for _ in 0..n {
        let p = PHONES[rng.gen_range(0..PHONES.len())].0;
        durs.push((p, rng.gen_range(cfg.min_phone_frames..=cfg.max_phone_frames)));
    }
    durs.push((SILENCE, rng.gen_range(3..=5)));
    PhoneAlignment::from_durations(utt, spk, &durs)
}

/// Render the alignment with the speaker's voice. Output has exactly
/// `total_frames * hop` samples.
pub fn render(spk: &ToySpeaker, a: &PhoneAlignment, analysis: &AnalysisConfig, seed: u64) -> Result<Waveform> {
    let hop = analysis.hop_length;
    let sr = analysis.sample_rate as f64;
    let frames = a.total_frames();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per-frame formants (None for silence), smoothed across one frame
    let mut per_frame: Vec<Option<([f64; 3], f64)>> = Vec::with_capacity(frames);
    for p in &a.phones {
        let f = if p.phone == SILENCE {
            None
        } else {
            Some(formants(&p.phone).ok_or_else(|| {
                Error::Invalid(format!("toy world has no phone {:?}", p.phone))
            })?)
        };
        per_frame.extend(std::iter::repeat(f).take(p.frames()));
    }
    let phase0 = rng.gen_range(0.0..1.0);
    let drift = rng.gen_range(-0.06..0.06);
    let vib_rate = rng.gen_range(3.0..5.0);
    let total = frames * hop;
    let mut phase = 0.0f64;
    let mut out = vec![0.0f32; total];
    let nyq = sr / 2.0;
    let top = 4000.0f64.min(nyq - 100.0);
    for (i, s) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let pos = i as f64 / total as f64;
        let f0 = spk.f0_hz * (1.0 + drift * (pos - 0.5) + 0.03 * (2.0 * PI * (vib_rate * t + phase0)).sin());
        phase += 2.0 * PI * f0 / sr;
        if phase > 2.0 * PI * 1e6 {
            phase -= 2.0 * PI * 1e6;
        }
        let fr = i / hop;
        let Some((fmt, level)) = per_frame[fr] else {
            continue;
        };
        // ramp into and out of silence over one frame
        let within = (i % hop) as f64 / hop as f64;
        let mut gain = level;
        if fr == 0 || per_frame[fr - 1].is_none() {
            gain *= within;
        }
        if fr + 1 == frames || per_frame[fr + 1].is_none() {
            gain *= 1.0 - within;
        }
        let mut acc = 0.0;
        let mut h = 1.0;
        while h * f0 < top {
            acc += spk.envelope(h * f0, &fmt) * (h * phase).sin();
            h += 1.0;
        }
        *s = (0.08 * gain * acc) as f32;
    }
    Waveform::new(out, analysis.sample_rate)
}

impl ToyWorld {
    pub fn generate(cfg: &ToyWorldConfig, analysis: &AnalysisConfig) -> Result<ToyWorld> {
        if cfg.min_phones == 0
            || cfg.min_phones > cfg.max_phones
            || cfg.min_phone_frames == 0
            || cfg.min_phone_frames > cfg.max_phone_frames
        {
            return Err(Error::Config("toy world phone ranges are empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut jobs = Vec::new();
        for spk in background_speakers() {
            for u in 0..cfg.utterances_per_speaker {
                let id = format!("{}_{u:03}", spk.id);
                jobs.push((false, spk.clone(), random_alignment(id, &spk.id, cfg, &mut rng)?, rng.gen::<u64>()));
            }
        }
        let tgt = target_speaker();
        for u in 0..cfg.target_utterances {
            let id = format!("{}_{u:03}", tgt.id);
            jobs.push((true, tgt.clone(), random_alignment(id, &tgt.id, cfg, &mut rng)?, rng.gen::<u64>()));
        }
        let rendered: Vec<Result<(bool, ToyUtterance)>> = jobs
            .into_par_iter()
            .map(|(is_target, spk, alignment, seed)| {
                let audio = render(&spk, &alignment, analysis, seed)?;
                Ok((is_target, ToyUtterance { alignment, audio }))
            })
            .collect();
        let mut world = ToyWorld {
            background: Vec::new(),
            target: Vec::new(),
        };
        for r in rendered {
            let (is_target, u) = r?;
            if is_target {
                world.target.push(u);
            } else {
                world.background.push(u);
            }
        }
        Ok(world)
    }

    pub fn audio_map(utts: &[ToyUtterance]) -> BTreeMap<String, Waveform> {
        utts.iter()
            .map(|u| (u.alignment.utterance_id.clone(), u.audio.clone()))
            .collect()
    }

    pub fn alignments(utts: &[ToyUtterance]) -> Vec<PhoneAlignment> {
        utts.iter().map(|u| u.alignment.clone()).collect()
    }

    /// Write `<dir>/{background,target}/{alignments.txt,wav/<utt>.wav}`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, utts) in [("background", &self.background), ("target", &self.target)] {
            let sub = dir.join(name);
            let wav = sub.join("wav");
            fs::create_dir_all(&wav).map_err(|e| Error::io(&wav, e))?;
            write_alignments(sub.join("alignments.txt"), &Self::alignments(utts))?;
            for u in utts {
                write_wav(wav.join(format!("{}.wav", u.alignment.utterance_id)), &u.audio)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel_spectrogram;
    use crate::pitch::{estimate_f0, PitchConfig};

    #[test]
    fn audio_length_matches_alignment() {
        let cfg = AnalysisConfig::default();
        let a = PhoneAlignment::from_durations("u", "spk1", &[("sil", 3), ("aa", 10), ("m", 6), ("sil", 3)]).unwrap();
        let w = render(&background_speakers()[0], &a, &cfg, 1).unwrap();
        assert_eq!(w.len(), 22 * cfg.hop_length);
        assert_eq!(mel_spectrogram(&w, &cfg).unwrap().frames, 22);
        assert!(w.samples.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn tracked_f0_is_near_speaker_f0() {
        let cfg = AnalysisConfig::default();
        let a = PhoneAlignment::from_durations("u", "s", &[("sil", 3), ("aa", 30), ("sil", 3)]).unwrap();
        for spk in background_speakers() {
            let w = render(&spk, &a, &cfg, 2).unwrap();
            let c = estimate_f0(&w, &PitchConfig::default()).unwrap();
            let voiced: Vec<f64> = (8..28).filter(|&t| c.voiced[t]).map(|t| c.f0_hz[t]).collect();
            assert!(voiced.len() >= 18, "{}", spk.id);
            let mean = voiced.iter().sum::<f64>() / voiced.len() as f64;
            assert!((mean / spk.f0_hz - 1.0).abs() < 0.1, "{}: {mean}", spk.id);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ToyWorldConfig {
            utterances_per_speaker: 2,
            target_utterances: 2,
            ..Default::default()
        };
        let a = ToyWorld::generate(&cfg, &AnalysisConfig::default()).unwrap();
        let b = ToyWorld::generate(&cfg, &AnalysisConfig::default()).unwrap();
        assert_eq!(a.background.len(), 8);
        assert_eq!(a.target.len(), 2);
        for (x, y) in a.background.iter().zip(&b.background) {
            assert_eq!(x.alignment, y.alignment);
            assert_eq!(x.audio, y.audio);
        }
    }
}

//! Inference chain: source mel from the synthesizer, f0 estimate and
//! renormalization, conversion, waveform synthesis.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_vf, save_vf, ModelKind, SaveInfo};
use crate::corpus::{ParallelUtterancePair, PhoneAlignment, Synthesizer};
use crate::dsp::{griffin_lim, AnalysisConfig, MelSpectrogram, Waveform};
use crate::embed::{centroid, Embedder};
use crate::error::{Error, Result};
use crate::model::{ConditioningInput, Mode, VoiceFilter};
use crate::pitch::{f0_from_mel, f0_stats, log_f0_with_fallback, renormalize_f0, CombConfig, F0Contour, F0Stats, LogF0};

pub const PROFILE_VERSION: u32 = 1;
pub const DEFAULT_GRIFFIN_LIM_ITERS: usize = 60;

/// Everything needed to convert into one target voice besides the model
/// weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetVoiceProfile {
    pub version: u32,
    pub speaker_id: String,
    pub centroid: Vec<f32>,
    pub target_stats: F0Stats,
    /// Log-f0 moments of the synthetic source voice as seen by the
    /// mel-domain estimator.
    pub source_stats: F0Stats,
    pub analysis: AnalysisConfig,
    pub comb: CombConfig,
    pub griffin_lim_iters: usize,
}

impl TargetVoiceProfile {
    pub fn validate(&self, model: &VoiceFilter<f32>) -> Result<()> {
        if self.version != PROFILE_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.version,
                expected: PROFILE_VERSION,
            });
        }
        if self.centroid.len() != model.cfg.speaker_dim {
            return Err(Error::Shape(format!(
                "profile centroid has {} dims, model expects {}",
                self.centroid.len(),
                model.cfg.speaker_dim
            )));
        }
        let n: f64 = self.centroid.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-4 {
            return Err(Error::Invalid(format!("profile centroid norm {n} is not 1")));
        }
        if self.analysis.mel_bins != model.cfg.n_mels {
            return Err(Error::Shape("profile analysis and model disagree on mel bins".into()));
        }
        if self.griffin_lim_iters == 0 {
            return Err(Error::Config("griffin_lim_iters must be positive".into()));
        }
        self.analysis.validate()
    }
}

/// Write `model.vfck` and `profile.json` into `dir`.
pub fn save_profile(dir: impl AsRef<Path>, model: &VoiceFilter<f32>, profile: &TargetVoiceProfile) -> Result<()> {
    let dir = dir.as_ref();
    profile.validate(model)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_vf(
        dir.join("model.vfck"),
        model,
        ModelKind::SpeakerDependent,
        SaveInfo {
            speaker: Some(profile.speaker_id.clone()),
            ..Default::default()
        },
    )?;
    let p = dir.join("profile.json");
    fs::write(&p, serde_json::to_vec_pretty(profile)?).map_err(|e| Error::io(&p, e))
}

pub fn load_profile(dir: impl AsRef<Path>) -> Result<(VoiceFilter<f32>, TargetVoiceProfile)> {
    let dir = dir.as_ref();
    let (model, kind) = load_vf(dir.join("model.vfck"))?;
    if kind != ModelKind::SpeakerDependent {
        return Err(Error::Invalid("profile model is not speaker-dependent".into()));
    }
    let p = dir.join("profile.json");
    let profile: TargetVoiceProfile =
        serde_json::from_slice(&fs::read(&p).map_err(|e| Error::io(&p, e))?)?;
    profile.validate(&model)?;
    Ok((model, profile))
}

/// Profile for the speaker of `target`: centroid of its utterance
/// embeddings and pooled voiced log-f0 moments.
pub fn build_profile(
    speaker_id: &str,
    embedder: &Embedder<f32>,
    target: &[ParallelUtterancePair],
    source_stats: F0Stats,
    analysis: &AnalysisConfig,
    comb: &CombConfig,
    griffin_lim_iters: usize,
) -> Result<TargetVoiceProfile> {
    if target.is_empty() {
        return Err(Error::Invalid("no target utterances".into()));
    }
    let embeddings = target
        .iter()
        .map(|p| embedder.embed(&p.target_mel))
        .collect::<Result<Vec<_>>>()?;
    Ok(TargetVoiceProfile {
        version: PROFILE_VERSION,
        speaker_id: speaker_id.to_string(),
        centroid: centroid(&embeddings)?,
        target_stats: f0_stats(target.iter().map(|p| &p.target_f0))?,
        source_stats,
        analysis: analysis.clone(),
        comb: comb.clone(),
        griffin_lim_iters,
    })
}

pub fn synthesize_source(a: &PhoneAlignment, synth: &dyn Synthesizer) -> Result<MelSpectrogram> {
    synth.synthesize_alignment(a)
}

pub fn source_f0_from_mel(m: &MelSpectrogram, cfg: &AnalysisConfig, comb: &CombConfig) -> F0Contour {
    f0_from_mel(m, cfg, comb)
}

/// Renormalized log-f0 conditioning for a source mel.
pub fn conditioning_f0(source: &MelSpectrogram, profile: &TargetVoiceProfile) -> Result<LogF0> {
    let contour = source_f0_from_mel(source, &profile.analysis, &profile.comb);
    let logf0 = log_f0_with_fallback(&contour, profile.source_stats.mean);
    renormalize_f0(&logf0, &profile.source_stats, &profile.target_stats)
}

pub fn convert(source: &MelSpectrogram, model: &VoiceFilter<f32>, profile: &TargetVoiceProfile) -> Result<(MelSpectrogram, LogF0)> {
    source.check_finite()?;
    let logf0 = conditioning_f0(source, profile)?;
    let cond = ConditioningInput::new(profile.centroid.clone(), &logf0);
    let out = model.forward(source, &cond, Mode::Eval)?;
    Ok((out, logf0))
}

pub fn vocode(m: &MelSpectrogram, cfg: &AnalysisConfig, iters: usize) -> Result<Waveform> {
    griffin_lim(m, cfg, iters)
}

#[derive(Clone, Debug)]
pub struct InferenceOutput {
    pub source_mel: MelSpectrogram,
    pub converted_mel: MelSpectrogram,
    pub logf0: LogF0,
    pub waveform: Waveform,
}

pub fn infer(a: &PhoneAlignment, synth: &dyn Synthesizer, model: &VoiceFilter<f32>, profile: &TargetVoiceProfile) -> Result<InferenceOutput> {
    profile.validate(model)?;
    let source_mel = synthesize_source(a, synth)?;
    let (converted_mel, logf0) = convert(&source_mel, model, profile)?;
    let waveform = vocode(&converted_mel, &profile.analysis, profile.griffin_lim_iters)?;
    Ok(InferenceOutput {
        source_mel,
        converted_mel,
        logf0,
        waveform,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ToySynthesizer;
    use crate::model::ModelConfig;

    fn setup() -> (VoiceFilter<f32>, TargetVoiceProfile) {
        let cfg = ModelConfig {
            channels: 4,
            speaker_dim: 3,
            lstm_hidden: 4,
            dense: 6,
            ..Default::default()
        };
        let model = VoiceFilter::new(&cfg, 3).unwrap();
        let profile = TargetVoiceProfile {
            version: PROFILE_VERSION,
            speaker_id: "tgt".into(),
            centroid: centroid(&[vec![1.0, 2.0, 2.0]]).unwrap(),
            target_stats: F0Stats { mean: 5.2, std: 0.1 },
            source_stats: F0Stats { mean: 4.8, std: 0.2 },
            analysis: AnalysisConfig::default(),
            comb: CombConfig::default(),
            griffin_lim_iters: 4,
        };
        (model, profile)
    }

    #[test]
    fn chain_preserves_frame_count() {
        let (model, profile) = setup();
        let a = PhoneAlignment::from_durations("u", "s", &[("aa", 8), ("iy", 5)]).unwrap();
        let synth = ToySynthesizer::new(1, &profile.analysis);
        let out = infer(&a, &synth, &model, &profile).unwrap();
        assert_eq!(out.converted_mel.frames, 13);
        assert_eq!(out.logf0.len(), 13);
        assert_eq!(out.waveform.len(), 13 * 200);
    }

    #[test]
    fn profile_round_trip() {
        let (model, profile) = setup();
        let dir = tempfile::tempdir().unwrap();
        save_profile(dir.path(), &model, &profile).unwrap();
        let (m2, p2) = load_profile(dir.path()).unwrap();
        assert_eq!(m2, model);
        assert_eq!(p2, profile);
    }

    #[test]
    fn mismatched_centroid_is_rejected() {
        let (model, mut profile) = setup();
        profile.centroid = vec![1.0, 0.0];
        assert!(profile.validate(&model).is_err());
    }

    #[test]
    fn non_finite_source_is_rejected() {
        let (model, profile) = setup();
        let mut m = MelSpectrogram::new(6, 80, vec![-2.0; 480], 200, 16_000).unwrap();
        m.data[7] = f32::NAN;
        assert!(matches!(convert(&m, &model, &profile), Err(Error::NonFinite(_))));
    }
}

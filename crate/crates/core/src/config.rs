//! Whole-pipeline configuration, loaded from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusOptions;
use crate::dsp::AnalysisConfig;
use crate::embed::{EmbedTrainConfig, EmbedderConfig};
use crate::error::{Error, Result};
use crate::infer::DEFAULT_GRIFFIN_LIM_ITERS;
use crate::model::ModelConfig;
use crate::toy::ToyWorldConfig;
use crate::train::TrainConfig;

/// Default locations; command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub target_corpus: Option<PathBuf>,
    pub embedder: Option<PathBuf>,
    pub background: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub alpha: f64,
    pub pooled: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            alpha: 0.05,
            pooled: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub griffin_lim_iters: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            griffin_lim_iters: DEFAULT_GRIFFIN_LIM_ITERS,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seeds every randomized stage; overrides the per-stage seeds.
    pub seed: u64,
    pub paths: PathsConfig,
    pub analysis: AnalysisConfig,
    pub corpus: CorpusOptions,
    pub toy: ToyWorldConfig,
    pub embedder: EmbedTrainConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Sizes and step counts for the single-core toy experiment.
    pub fn desk() -> Self {
        PipelineConfig {
            embedder: EmbedTrainConfig {
                model: EmbedderConfig {
                    dim: 16,
                    ..Default::default()
                },
                ..Default::default()
            },
            model: ModelConfig::desk(),
            train: TrainConfig {
                steps: 2000,
                finetune_batch_size: Some(8),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let seed = cfg.seed;
        let cfg = cfg.seeded(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Copy with `seed` pushed into every stage.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.toy.seed = seed;
        self.embedder.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.analysis.validate()?;
        self.corpus.pitch.validate(self.analysis.sample_rate)?;
        self.model.validate()?;
        self.train.validate()?;
        self.embedder.adam.validate()?;
        if self.model.n_mels != self.analysis.mel_bins {
            return Err(Error::Config(format!(
                "model.n_mels = {} but analysis.mel_bins = {}",
                self.model.n_mels, self.analysis.mel_bins
            )));
        }
        if self.model.speaker_dim != self.embedder.model.dim {
            return Err(Error::Config(format!(
                "model.speaker_dim = {} but embedder.model.dim = {}",
                self.model.speaker_dim, self.embedder.model.dim
            )));
        }
        if self.embedder.model.n_mels != self.analysis.mel_bins {
            return Err(Error::Config("embedder.model.n_mels must equal analysis.mel_bins".into()));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(Error::Config("eval.alpha must be in (0, 1)".into()));
        }
        if self.infer.griffin_lim_iters == 0 {
            return Err(Error::Config("infer.griffin_lim_iters must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("sed = 3").is_err());
        assert!(PipelineConfig::from_toml("[model]\nchanel = 3").is_err());
    }

    #[test]
    fn round_trip_and_seed_propagation() {
        let cfg = PipelineConfig::desk().seeded(9);
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let c = PipelineConfig::from_toml("seed = 4\n[model]\nchannels = 32\nspeaker_dim = 256").unwrap();
        assert_eq!((c.train.seed, c.embedder.seed, c.toy.seed), (4, 4, 4));
    }

    #[test]
    fn inconsistent_dims_are_rejected() {
        assert!(PipelineConfig::from_toml("[model]\nspeaker_dim = 8").is_err());
        assert!(PipelineConfig::from_toml("[eval]\nalpha = 1.5").is_err());
    }
}

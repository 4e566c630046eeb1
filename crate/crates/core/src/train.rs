//! Background one-to-many training and one-minute fine-tuning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ParallelUtterancePair;
use crate::embed::{centroid, Embedder};
use crate::error::{Error, Result};
use crate::model::{l1_loss_frames, stack, Batch, ConditioningInput, Mode, ModelConfig, VoiceFilter};
use crate::nn::Frames;
use crate::optim::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub finetune_steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Fine-tuning learning rate; the background rate when unset.
    pub finetune_learning_rate: Option<f64>,
    /// Fine-tuning batch size; the background size when unset.
    pub finetune_batch_size: Option<usize>,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            finetune_steps: 1000,
            batch_size: 4,
            adam: AdamConfig::default(),
            finetune_learning_rate: None,
            finetune_batch_size: None,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.finetune_batch_size == Some(0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if matches!(self.finetune_learning_rate, Some(lr) if !(lr > 0.0)) {
            return Err(Error::Config("finetune_learning_rate must be positive".into()));
        }
        self.adam.validate()
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainReport {
    pub losses: Vec<f32>,
    pub grad_norms: Vec<f64>,
}

impl TrainReport {
    /// Mean of the first and last `window` losses.
    pub fn window_means(&self, window: usize) -> Option<(f64, f64)> {
        let w = window.min(self.losses.len());
        if w == 0 {
            return None;
        }
        let mean = |s: &[f32]| s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64;
        Some((mean(&self.losses[..w]), mean(&self.losses[self.losses.len() - w..])))
    }
}

struct Item<'a> {
    source: Frames<f32>,
    target: Frames<f32>,
    cond: Frames<f32>,
    pair: &'a ParallelUtterancePair,
}

fn prepare<'a>(pairs: &'a [ParallelUtterancePair], speaker: impl Fn(&ParallelUtterancePair) -> Result<Vec<f32>>) -> Result<Vec<Item<'a>>> {
    pairs
        .iter()
        .map(|p| {
            let cond = ConditioningInput::new(speaker(p)?, &p.target_logf0);
            Ok(Item {
                source: p.source_mel.to_frames(),
                target: p.target_mel.to_frames(),
                cond: cond.to_frames(),
                pair: p,
            })
        })
        .collect()
}

fn batch_of(items: &[Item<'_>], idx: &[usize]) -> (Batch<f32>, Frames<f32>) {
    let take = |sel: usize| -> Frames<f32> {
        let parts: Vec<Frames<f32>> = idx
            .iter()
            .map(|&i| match sel {
                0 => items[i].source.clone(),
                1 => items[i].cond.clone(),
                _ => items[i].target.clone(),
            })
            .collect();
        stack(&parts)
    };
    let batch = Batch {
        mels: take(0),
        cond: take(1),
        lens: idx.iter().map(|&i| items[i].pair.frames()).collect(),
    };
    (batch, take(2))
}

/// One optimization step; records the pre-update loss.
fn step(
    model: &mut VoiceFilter<f32>,
    adam: &mut Adam<f32>,
    batch: &Batch<f32>,
    target: &Frames<f32>,
    mode: Mode,
    step_no: usize,
    report: &mut TrainReport,
) -> Result<()> {
    let (y, cache) = model.forward_batch(batch, mode)?;
    let (loss, dy) = l1_loss_frames(&y, target)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss at step {step_no}")));
    }
    let mut grads = model
        .backward_batch(batch, &cache, &dy)
        .map_err(|e| Error::NonFinite(format!("step {step_no}: {e}")))?;
    model.update_running(&cache);
    let norm = adam.update(model.params_mut(), &mut grads)?;
    report.losses.push(loss);
    report.grad_norms.push(norm);
    Ok(())
}

fn check_dims(embedder: &Embedder<f32>, cfg: &ModelConfig) -> Result<()> {
    if embedder.cfg.dim != cfg.speaker_dim {
        return Err(Error::Config(format!(
            "embedder produces {}-dim vectors, model expects {}",
            embedder.cfg.dim, cfg.speaker_dim
        )));
    }
    if embedder.cfg.n_mels != cfg.n_mels {
        return Err(Error::Config("embedder and model disagree on mel bins".into()));
    }
    Ok(())
}

/// Train one-to-many on the whole corpus. Each utterance is conditioned on
/// the embedding of its own target mel and its natural log-f0.
pub fn train_background(
    pairs: &[ParallelUtterancePair],
    embedder: &Embedder<f32>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(VoiceFilter<f32>, Adam<f32>, TrainReport)> {
    cfg.validate()?;
    check_dims(embedder, model_cfg)?;
    if pairs.is_empty() {
        return Err(Error::Invalid("empty training corpus".into()));
    }
    let items = prepare(pairs, |p| embedder.embed(&p.target_mel))?;
    let mut model = VoiceFilter::<f32>::new(model_cfg, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam.clone(), &model.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut report = TrainReport::default();
    let bs = cfg.batch_size.min(items.len());
    for s in 0..cfg.steps {
        let idx: Vec<usize> = (0..bs).map(|_| rng.gen_range(0..items.len())).collect();
        let (batch, target) = batch_of(&items, &idx);
        step(&mut model, &mut adam, &batch, &target, Mode::Train, s, &mut report)?;
        if cfg.log_every > 0 && (s + 1) % cfg.log_every == 0 {
            log::info!("background step {}: loss {:.4}", s + 1, report.losses[s]);
        }
    }
    Ok((model, adam, report))
}

#[derive(Clone, Debug, Serialize)]
pub struct FinetuneReport {
    pub centroid: Vec<f32>,
    pub duration_secs: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub train: TrainReport,
}

/// Mean per-utterance L1 of `model` over `pairs` with a fixed speaker
/// vector, in eval mode.
pub fn dataset_l1(model: &VoiceFilter<f32>, pairs: &[ParallelUtterancePair], speaker: &[f32]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no utterances".into()));
    }
    let mut total = 0.0;
    for p in pairs {
        let cond = ConditioningInput::new(speaker.to_vec(), &p.target_logf0);
        let y = model.forward(&p.source_mel, &cond, Mode::Eval)?;
        total += crate::model::l1_loss(&y, &p.target_mel)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Adapt every parameter to one target speaker, conditioning on the
/// centroid of its utterance embeddings. Batch-norm statistics stay frozen.
pub fn finetune(
    background: &VoiceFilter<f32>,
    target: &[ParallelUtterancePair],
    embedder: &Embedder<f32>,
    cfg: &TrainConfig,
) -> Result<(VoiceFilter<f32>, FinetuneReport)> {
    cfg.validate()?;
    check_dims(embedder, &background.cfg)?;
    if target.is_empty() {
        return Err(Error::Invalid("empty target set".into()));
    }
    let embeddings = target
        .iter()
        .map(|p| embedder.embed(&p.target_mel))
        .collect::<Result<Vec<_>>>()?;
    let c = centroid(&embeddings)?;
    let duration_secs = target
        .iter()
        .map(|p| (p.frames() * p.target_mel.hop_length) as f64 / p.target_mel.sample_rate as f64)
        .sum();
    log::info!(
        "fine-tuning on {} utterances ({duration_secs:.1} s)",
        target.len()
    );
    let items = prepare(target, |_| Ok(c.clone()))?;
    let mut model = background.clone();
    let loss_before = dataset_l1(&model, target, &c)?;
    let adam_cfg = AdamConfig {
        learning_rate: cfg.finetune_learning_rate.unwrap_or(cfg.adam.learning_rate),
        ..cfg.adam.clone()
    };
    let mut adam = Adam::new(adam_cfg, &model.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut report = TrainReport::default();
    let bs = cfg.finetune_batch_size.unwrap_or(cfg.batch_size).min(items.len());
    for s in 0..cfg.finetune_steps {
        let idx: Vec<usize> = (0..bs).map(|_| rng.gen_range(0..items.len())).collect();
        let (batch, tgt) = batch_of(&items, &idx);
        step(&mut model, &mut adam, &batch, &tgt, Mode::FineTune, s, &mut report)?;
        if cfg.log_every > 0 && (s + 1) % cfg.log_every == 0 {
            log::info!("fine-tune step {}: loss {:.4}", s + 1, report.losses[s]);
        }
    }
    let loss_after = dataset_l1(&model, target, &c)?;
    Ok((
        model,
        FinetuneReport {
            centroid: c,
            duration_secs,
            loss_before,
            loss_after,
            train: report,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::param_hash;
    use crate::dsp::MelSpectrogram;
    use crate::embed::EmbedderConfig;
    use crate::pitch::{log_f0, F0Contour};

    fn pair(id: &str, t: usize, seed: u64) -> ParallelUtterancePair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mel = || MelSpectrogram::new(t, 80, (0..t * 80).map(|_| rng.gen_range(-4.0..0.0)).collect(), 200, 16_000).unwrap();
        let (s, g) = (mel(), mel());
        let f0 = F0Contour::new(vec![120.0; t], vec![true; t]).unwrap();
        let lf = log_f0(&f0);
        ParallelUtterancePair::new(id.into(), "spk".into(), s, g, f0, lf).unwrap()
    }

    fn setup() -> (Vec<ParallelUtterancePair>, Embedder<f32>, ModelConfig) {
        let pairs = vec![pair("a", 12, 1), pair("b", 9, 2)];
        let emb = Embedder::new(&EmbedderConfig { dim: 4, channels: 8, ..Default::default() }, 0).unwrap();
        let mc = ModelConfig { channels: 6, speaker_dim: 4, lstm_hidden: 6, dense: 8, ..Default::default() };
        (pairs, emb, mc)
    }

    #[test]
    fn background_training_is_deterministic() {
        let (pairs, emb, mc) = setup();
        let cfg = TrainConfig { steps: 5, ..Default::default() };
        let (a, _, ra) = train_background(&pairs, &emb, &mc, &cfg).unwrap();
        let (b, _, rb) = train_background(&pairs, &emb, &mc, &cfg).unwrap();
        assert_eq!(param_hash(&a), param_hash(&b));
        assert_eq!(ra.losses, rb.losses);
    }

    #[test]
    fn zero_step_finetune_is_identity() {
        let (pairs, emb, mc) = setup();
        let (bg, _, _) = train_background(&pairs, &emb, &mc, &TrainConfig { steps: 3, ..Default::default() }).unwrap();
        let (ft, _) = finetune(&bg, &pairs, &emb, &TrainConfig { finetune_steps: 0, ..Default::default() }).unwrap();
        assert_eq!(param_hash(&ft), param_hash(&bg));
    }

    #[test]
    fn finetune_touches_every_tensor() {
        let (pairs, emb, mc) = setup();
        let (bg, _, _) = train_background(&pairs, &emb, &mc, &TrainConfig { steps: 3, ..Default::default() }).unwrap();
        let (ft, rep) = finetune(&bg, &pairs, &emb, &TrainConfig { finetune_steps: 2, ..Default::default() }).unwrap();
        for ((name, a), b) in bg.param_names().iter().zip(bg.params()).zip(ft.params()) {
            assert_ne!(a, b, "{name} unchanged");
        }
        // running statistics are frozen
        for (a, b) in bg.norms.iter().zip(&ft.norms) {
            assert_eq!(a.running_mean, b.running_mean);
            assert_eq!(a.running_var, b.running_var);
        }
        assert_eq!(rep.train.losses.len(), 2);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let (pairs, emb, mc) = setup();
        assert!(train_background(&[], &emb, &mc, &TrainConfig::default()).is_err());
        let (bg, _, _) = train_background(&pairs, &emb, &mc, &TrainConfig { steps: 1, ..Default::default() }).unwrap();
        assert!(finetune(&bg, &[], &emb, &TrainConfig::default()).is_err());
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let (pairs, emb, mut mc) = setup();
        mc.speaker_dim = 5;
        assert!(matches!(
            train_background(&pairs, &emb, &mc, &TrainConfig { steps: 1, ..Default::default() }),
            Err(Error::Config(_))
        ));
    }
}

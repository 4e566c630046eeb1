//! Self-check suite behind `voicefilter verify`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{vf_checkpoint, vf_from_checkpoint, Checkpoint, ModelKind, SaveInfo};
use crate::dsp::MelSpectrogram;
use crate::embed::{ge2e_loss, Embedder, EmbedderConfig};
use crate::error::Result;
use crate::eval::{frechet_distance, holm_bonferroni, paired_ttest, GaussianFit};
use crate::model::{l1_loss_frames, stack, Batch, ConditioningInput, Mode, ModelConfig, VoiceFilter};
use crate::pitch::{renormalize_f0, F0Stats, LogF0};

pub const FD_EPS: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or L1 kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheck {
    fn record(&mut self, name: &str, ana: f64, num: f64) {
        let err = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
        self.checked += 1;
        if err > self.max_rel_err {
            self.max_rel_err = err;
            self.worst = format!("{name}: analytic {ana:e}, numeric {num:e}");
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < FD_TOL && self.skipped * 3 <= self.checked
    }
}

/// Small architecture used by the gradient checks.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        n_mels: 5,
        channels: 4,
        kernel: 3,
        conv_layers: 4,
        cond_after: 2,
        speaker_dim: 3,
        lstm_hidden: 5,
        dense: 6,
        ..Default::default()
    }
}

fn random_mel(t: usize, bins: usize, rng: &mut ChaCha8Rng) -> MelSpectrogram {
    let data = (0..t * bins).map(|_| rng.gen_range(-3.0..1.0)).collect();
    MelSpectrogram::new(t, bins, data, 200, 16_000).expect("valid mel")
}

fn random_cond(t: usize, d: usize, rng: &mut ChaCha8Rng) -> ConditioningInput {
    ConditioningInput {
        speaker: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        logf0: (0..t).map(|_| rng.gen_range(4.5..5.5)).collect(),
        voicing: (0..t).map(|_| rng.gen_bool(0.7)).collect(),
    }
}

/// Central differences of the batch L1 loss against backprop for every
/// parameter of a seeded tiny model, in training and fine-tuning mode.
pub fn vf_gradient_check(seed: u64) -> Result<GradCheck> {
    let cfg = tiny_model_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lens = [rng.gen_range(3..9), rng.gen_range(3..9)];
    let xs: Vec<MelSpectrogram> = lens.iter().map(|&t| random_mel(t, cfg.n_mels, &mut rng)).collect();
    let cs: Vec<ConditioningInput> = lens.iter().map(|&t| random_cond(t, cfg.speaker_dim, &mut rng)).collect();
    let target = stack(&lens.iter().map(|&t| random_mel(t, cfg.n_mels, &mut rng).to_frames::<f64>()).collect::<Vec<_>>());
    let batch = Batch::<f64>::new(&[(&xs[0], &cs[0]), (&xs[1], &cs[1])])?;
    let mut out = GradCheck::default();
    for mode in [Mode::Train, Mode::FineTune] {
        let mut m = VoiceFilter::<f64>::new(&cfg, seed.wrapping_add(1))?;
        let (y, cache) = m.forward_batch(&batch, mode)?;
        let (_, dy) = l1_loss_frames(&y, &target)?;
        let grads = m.backward_batch(&batch, &cache, &dy)?;
        let names = m.param_names();
        let probe = |m: &VoiceFilter<f64>| -> Result<(f64, Vec<bool>)> {
            let (y, cache) = m.forward_batch(&batch, mode)?;
            let mut pattern = cache.relu_pattern();
            pattern.extend(y.data.iter().zip(&target.data).map(|(a, b)| a > b));
            Ok((l1_loss_frames(&y, &target)?.0, pattern))
        };
        for (pi, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let orig = m.params()[pi].data[i];
                m.params_mut()[pi].data[i] = orig + FD_EPS;
                let (lp, pp) = probe(&m)?;
                m.params_mut()[pi].data[i] = orig - FD_EPS;
                let (lm, pm) = probe(&m)?;
                m.params_mut()[pi].data[i] = orig;
                if pp != pm {
                    out.skipped += 1;
                    continue;
                }
                out.record(&format!("{mode:?} {}[{i}]", names[pi]), g.data[i], (lp - lm) / (2.0 * FD_EPS));
            }
        }
    }
    Ok(out)
}

/// Central differences of the GE2E loss through a seeded tiny embedder,
/// covering the network weights and the similarity scale and offset.
pub fn ge2e_gradient_check(seed: u64) -> Result<GradCheck> {
    let cfg = EmbedderConfig {
        n_mels: 5,
        channels: 8,
        dim: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (3, 2);
    let lens: Vec<usize> = (0..n * m).map(|_| rng.gen_range(4..8)).collect();
    let x = stack(&lens.iter().map(|&t| random_mel(t, cfg.n_mels, &mut rng).to_frames::<f64>()).collect::<Vec<_>>());
    let mut model = Embedder::<f64>::new(&cfg, seed.wrapping_add(1))?;
    for b in [&mut model.conv1.bias, &mut model.conv2.bias, &mut model.proj.bias] {
        b.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..0.5));
    }
    model.w.data[0] = rng.gen_range(1.0..5.0);
    model.b.data[0] = rng.gen_range(-2.0..0.0);
    let (e, cache) = model.forward_batch(&x, &lens)?;
    let loss = ge2e_loss(&e, n, m, model.w.data[0], model.b.data[0])?;
    let mut grads = model.backward_batch(&x, &lens, &e, &cache, &loss.d_embeddings);
    grads[6].data[0] = loss.d_w;
    grads[7].data[0] = loss.d_b;
    let names = model.param_names();
    let probe = |model: &Embedder<f64>| -> Result<(f64, Vec<bool>)> {
        let (e, cache) = model.forward_batch(&x, &lens)?;
        Ok((ge2e_loss(&e, n, m, model.w.data[0], model.b.data[0])?.loss, cache.relu_pattern()))
    };
    let mut out = GradCheck::default();
    for (pi, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = model.params()[pi].data[i];
            model.params_mut()[pi].data[i] = orig + FD_EPS;
            let (lp, pp) = probe(&model)?;
            model.params_mut()[pi].data[i] = orig - FD_EPS;
            let (lm, pm) = probe(&model)?;
            model.params_mut()[pi].data[i] = orig;
            if pp != pm {
                out.skipped += 1;
                continue;
            }
            out.record(&format!("{}[{i}]", names[pi]), g.data[i], (lp - lm) / (2.0 * FD_EPS));
        }
    }
    Ok(out)
}

/// Closed testing with Bonferroni local tests: reject `H_i` iff every
/// intersection containing `i` has `min p <= alpha / |S|`.
pub fn holm_by_closed_testing(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    (0..m)
        .map(|i| {
            (1u32..1 << m).filter(|s| s & (1 << i) != 0).all(|s| {
                let size = s.count_ones() as f64;
                (0..m)
                    .filter(|j| s & (1 << j) != 0)
                    .map(|j| p[j])
                    .fold(f64::INFINITY, f64::min)
                    <= alpha / size
            })
        })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn grad_summary(checks: &[GradCheck]) -> (bool, String) {
    let passed = checks.iter().all(GradCheck::passed);
    let worst = checks
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("at least one check");
    let checked: usize = checks.iter().map(|c| c.checked).sum();
    let skipped: usize = checks.iter().map(|c| c.skipped).sum();
    (
        passed,
        format!(
            "{checked} coordinates, {skipped} at kinks, max rel err {:.2e} ({})",
            worst.max_rel_err, worst.worst
        ),
    )
}

/// Run every invariant check with `seeds` random instances each.
pub fn run_suite(seed: u64, seeds: usize) -> Vec<CheckResult> {
    let seeds = seeds.max(1) as u64;
    let mut out = Vec::new();

    out.push(timed("model gradients", || {
        let checks = (0..seeds).map(|s| vf_gradient_check(seed + s)).collect::<Result<Vec<_>>>()?;
        Ok(grad_summary(&checks))
    }));

    out.push(timed("GE2E gradients", || {
        let checks = (0..seeds).map(|s| ge2e_gradient_check(seed + s)).collect::<Result<Vec<_>>>()?;
        Ok(grad_summary(&checks))
    }));

    out.push(timed("output length equals input length", || {
        let cfg = ModelConfig::desk();
        let m = VoiceFilter::<f32>::new(&cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 * seeds {
            let t = rng.gen_range(2..=64);
            let y = m.forward(&random_mel(t, cfg.n_mels, &mut rng), &random_cond(t, cfg.speaker_dim, &mut rng), Mode::Eval)?;
            if y.frames != t {
                return Ok((false, format!("{t} frames in, {} out", y.frames)));
            }
        }
        Ok((true, format!("{} random lengths", 10 * seeds)))
    }));

    out.push(timed("Fréchet distance oracles", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..100 * seeds {
            let (m1, m2) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let (s1, s2): (f64, f64) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
            let d = frechet_distance(&GaussianFit::new(vec![m1], vec![s1 * s1])?, &GaussianFit::new(vec![m2], vec![s2 * s2])?)?;
            worst = worst.max((d - ((m1 - m2).powi(2) + (s1 - s2).powi(2))).abs());
        }
        let mut asym: f64 = 0.0;
        let mut selfd: f64 = 0.0;
        for _ in 0..10 * seeds {
            let dim = rng.gen_range(1..=6);
            let fit = |rng: &mut ChaCha8Rng| {
                let xs: Vec<Vec<f64>> = (0..dim + 4).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
                GaussianFit::fit(&xs)
            };
            let (a, b) = (fit(&mut rng)?, fit(&mut rng)?);
            asym = asym.max((frechet_distance(&a, &b)? - frechet_distance(&b, &a)?).abs());
            selfd = selfd.max(frechet_distance(&a, &a)?);
        }
        Ok((
            worst < 1e-10 && asym < 1e-8 && selfd < 1e-8,
            format!("1-D err {worst:.1e}, asymmetry {asym:.1e}, FD(a,a) {selfd:.1e}"),
        ))
    }));

    out.push(timed("Holm-Bonferroni enumeration", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cases = 0;
        for _ in 0..seeds {
            for m in 1..=5 {
                let p: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..0.08)).collect();
                for perm in permutations(m) {
                    let q: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
                    cases += 1;
                    if holm_bonferroni(&q, 0.05)? != holm_by_closed_testing(&q, 0.05) {
                        return Ok((false, format!("mismatch on {q:?}")));
                    }
                }
            }
        }
        let example = holm_bonferroni(&[0.010, 0.040, 0.030], 0.05)?;
        Ok((example == [true, false, false], format!("{cases} orderings")))
    }));

    out.push(timed("paired t-test conventions", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 * seeds {
            let n = rng.gen_range(2..12);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
            let (a, b) = (paired_ttest(&x, &y)?, paired_ttest(&y, &x)?);
            if (a.t + b.t).abs() > 1e-12 || (a.p - b.p).abs() > 1e-12 || paired_ttest(&x, &x)?.p != 1.0 {
                return Ok((false, format!("failed on {x:?} / {y:?}")));
            }
        }
        Ok((true, "swap antisymmetry and x = y".into()))
    }));

    out.push(timed("f0 renormalization moments", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..10 * seeds {
            let n = rng.gen_range(5..50);
            let voiced: Vec<bool> = (0..n).map(|i| i < 2 || rng.gen_bool(0.7)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(4.0..6.0)).collect();
            let src = F0Stats::from_log_values(values.iter().zip(&voiced).filter(|p| *p.1).map(|p| *p.0))?;
            let tgt = F0Stats { mean: rng.gen_range(4.0..6.0), std: rng.gen_range(0.05..0.5) };
            let out = renormalize_f0(&LogF0 { values, voiced: voiced.clone(), fill: 0.0 }, &src, &tgt)?;
            let got = F0Stats::from_log_values(out.values.iter().zip(&voiced).filter(|p| *p.1).map(|p| *p.0))?;
            worst = worst.max((got.mean - tgt.mean).abs()).max((got.std - tgt.std).abs());
        }
        Ok((worst < 1e-6, format!("max moment error {worst:.1e}")))
    }));

    out.push(timed("checkpoint round trip", || {
        let cfg = tiny_model_config();
        let m = VoiceFilter::<f32>::new(&cfg, seed)?;
        let bytes = vf_checkpoint(&m, ModelKind::Background, SaveInfo::default())?.to_bytes()?;
        let (back, _) = vf_from_checkpoint(&Checkpoint::from_bytes(&bytes)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_mel(9, cfg.n_mels, &mut rng);
        let c = random_cond(9, cfg.speaker_dim, &mut rng);
        let same = m.forward(&x, &c, Mode::Eval)? == back.forward(&x, &c, Mode::Eval)?;
        Ok((same && back == m, format!("{} bytes", bytes.len())))
    }));

    out
}

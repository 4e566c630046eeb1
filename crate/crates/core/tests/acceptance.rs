//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line regardless of output capture.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voicefilter::checkpoint::{vf_checkpoint, vf_from_checkpoint, Checkpoint, ModelKind, SaveInfo};
use voicefilter::config::PipelineConfig;
use voicefilter::corpus::{build_parallel_corpus, write_corpus, CorpusOptions, ToySynthesizer};
use voicefilter::dsp::{AnalysisConfig, MelSpectrogram, Waveform};
use voicefilter::embed::{ge2e_loss, group_by_speaker, train_embedder, Embedder, EmbedderConfig};
use voicefilter::eval::{csed, frechet_distance, holm_bonferroni, mushra_summary, paired_ttest, GaussianFit, MushraRecord};
use voicefilter::infer::{build_profile, convert};
use voicefilter::model::{l1_loss_frames, stack, Batch, ConditioningInput, Mode, ModelConfig, VoiceFilter};
use voicefilter::pitch::{estimate_f0, renormalize_f0, F0Stats, LogF0, PitchConfig};
use voicefilter::toy::{ToyWorld, ToyWorldConfig};
use voicefilter::train::{finetune, train_background, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_mel(t: usize, bins: usize, rng: &mut ChaCha8Rng) -> MelSpectrogram {
    let data = (0..t * bins).map(|_| rng.gen_range(-6.0..1.0)).collect();
    MelSpectrogram::new(t, bins, data, 200, 16_000).unwrap()
}

fn random_cond(t: usize, d: usize, rng: &mut ChaCha8Rng) -> ConditioningInput {
    ConditioningInput {
        speaker: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        logf0: (0..t).map(|_| rng.gen_range(4.3..5.7)).collect(),
        voicing: (0..t).map(|_| rng.gen_bool(0.7)).collect(),
    }
}

// 1 ------------------------------------------------------------------------

fn size_preservation() -> Outcome {
    let cfg = ModelConfig::desk();
    let model = VoiceFilter::<f32>::new(&cfg, 1).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let start = Instant::now();
    let mut total = 0;
    for _ in 0..100 {
        let t = rng.gen_range(1..=200);
        let x = random_mel(t, cfg.n_mels, &mut rng);
        let y = model.forward(&x, &random_cond(t, cfg.speaker_dim, &mut rng), Mode::Eval).map_err(e2s)?;
        ensure(y.frames == t && y.bins == cfg.n_mels, format!("{t} frames in, {}x{} out", y.frames, y.bins))?;
        total += t;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("took {secs:.2}s"))?;
    Ok(format!("100 inputs, {total} frames, {secs:.2}s at C=32"))
}

// 2 ------------------------------------------------------------------------

const EPS: f64 = 1e-4;

#[derive(Default)]
struct Fd {
    checked: usize,
    kinks: usize,
    worst: f64,
    at: String,
}

impl Fd {
    fn compare(&mut self, what: String, analytic: f64, plus: f64, minus: f64) {
        let numeric = (plus - minus) / (2.0 * EPS);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        self.checked += 1;
        if err > self.worst {
            self.worst = err;
            self.at = format!("{what}: {analytic:e} vs {numeric:e}");
        }
    }
}

fn model_fd(seed: u64, fd: &mut Fd) -> Result<(), String> {
    let cfg = ModelConfig {
        n_mels: 6,
        channels: 4,
        kernel: 3,
        conv_layers: 4,
        cond_after: 2,
        speaker_dim: 3,
        lstm_hidden: 4,
        dense: 5,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lens = [rng.gen_range(3..8), rng.gen_range(3..8)];
    let xs: Vec<_> = lens.iter().map(|&t| random_mel(t, cfg.n_mels, &mut rng)).collect();
    let cs: Vec<_> = lens.iter().map(|&t| random_cond(t, cfg.speaker_dim, &mut rng)).collect();
    let target = stack(&lens.iter().map(|&t| random_mel(t, cfg.n_mels, &mut rng).to_frames::<f64>()).collect::<Vec<_>>());
    let batch = Batch::<f64>::new(&[(&xs[0], &cs[0]), (&xs[1], &cs[1])]).map_err(e2s)?;
    for mode in [Mode::Train, Mode::FineTune] {
        let mut m = VoiceFilter::<f64>::new(&cfg, seed ^ 0xabc).map_err(e2s)?;
        let (y, cache) = m.forward_batch(&batch, mode).map_err(e2s)?;
        let (_, dy) = l1_loss_frames(&y, &target).map_err(e2s)?;
        let grads = m.backward_batch(&batch, &cache, &dy).map_err(e2s)?;
        let names = m.param_names();
        let eval = |m: &VoiceFilter<f64>| {
            let (y, cache) = m.forward_batch(&batch, mode).unwrap();
            let mut kinks = cache.relu_pattern();
            kinks.extend(y.data.iter().zip(&target.data).map(|(a, b)| a > b));
            (l1_loss_frames(&y, &target).unwrap().0, kinks)
        };
        for (pi, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let orig = m.params()[pi].data[i];
                m.params_mut()[pi].data[i] = orig + EPS;
                let (lp, kp) = eval(&m);
                m.params_mut()[pi].data[i] = orig - EPS;
                let (lm, km) = eval(&m);
                m.params_mut()[pi].data[i] = orig;
                if kp != km {
                    fd.kinks += 1;
                } else {
                    fd.compare(format!("seed {seed} {mode:?} {}[{i}]", names[pi]), g.data[i], lp, lm);
                }
            }
        }
    }
    Ok(())
}

fn ge2e_fd(seed: u64, fd: &mut Fd) -> Result<(), String> {
    let cfg = EmbedderConfig { n_mels: 6, channels: 8, dim: 4 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (3, 3);
    let lens: Vec<usize> = (0..n * m).map(|_| rng.gen_range(4..9)).collect();
    let x = stack(&lens.iter().map(|&t| random_mel(t, cfg.n_mels, &mut rng).to_frames::<f64>()).collect::<Vec<_>>());
    let mut model = Embedder::<f64>::new(&cfg, seed ^ 0xdef).map_err(e2s)?;
    for b in [&mut model.conv1.bias, &mut model.conv2.bias, &mut model.proj.bias] {
        b.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..0.5));
    }
    model.w.data[0] = rng.gen_range(1.0..8.0);
    model.b.data[0] = rng.gen_range(-4.0..0.0);
    let (e, cache) = model.forward_batch(&x, &lens).map_err(e2s)?;
    let out = ge2e_loss(&e, n, m, model.w.data[0], model.b.data[0]).map_err(e2s)?;
    let mut grads = model.backward_batch(&x, &lens, &e, &cache, &out.d_embeddings);
    grads[6].data[0] = out.d_w;
    grads[7].data[0] = out.d_b;
    let names = model.param_names();
    let eval = |model: &Embedder<f64>| {
        let (e, cache) = model.forward_batch(&x, &lens).unwrap();
        (ge2e_loss(&e, n, m, model.w.data[0], model.b.data[0]).unwrap().loss, cache.relu_pattern())
    };
    for (pi, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = model.params()[pi].data[i];
            model.params_mut()[pi].data[i] = orig + EPS;
            let (lp, kp) = eval(&model);
            model.params_mut()[pi].data[i] = orig - EPS;
            let (lm, km) = eval(&model);
            model.params_mut()[pi].data[i] = orig;
            if kp != km {
                fd.kinks += 1;
            } else {
                fd.compare(format!("seed {seed} {}[{i}]", names[pi]), g.data[i], lp, lm);
            }
        }
    }
    Ok(())
}

fn gradient_correctness() -> Outcome {
    let (mut vf, mut ge) = (Fd::default(), Fd::default());
    for seed in 0..20 {
        model_fd(seed, &mut vf)?;
        ge2e_fd(seed, &mut ge)?;
    }
    for (name, fd) in [("model", &vf), ("GE2E", &ge)] {
        ensure(fd.worst < 1e-3, format!("{name} max rel err {:.2e} at {}", fd.worst, fd.at))?;
        ensure(fd.kinks * 10 <= fd.checked, format!("{name}: {} of {} coordinates sat on kinks", fd.kinks, fd.checked))?;
    }
    Ok(format!(
        "20 seeds; model {} coords (max rel err {:.1e}, {} kinks skipped); GE2E {} coords (max rel err {:.1e}, {} kinks skipped)",
        vf.checked, vf.worst, vf.kinks, ge.checked, ge.worst, ge.kinks
    ))
}

// 3 ------------------------------------------------------------------------

fn sqrtm_oracle(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn frechet_oracle(ma: &[f64], ca: &DMatrix<f64>, mb: &[f64], cb: &DMatrix<f64>) -> f64 {
    let mean: f64 = ma.iter().zip(mb).map(|(x, y)| (x - y).powi(2)).sum();
    let ra = sqrtm_oracle(ca);
    let inner = &ra * cb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    mean + ca.trace() + cb.trace() - 2.0 * sqrtm_oracle(&inner).trace()
}

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * rng.gen_range(0.01..0.5)
}

fn fit(m: &[f64], c: &DMatrix<f64>) -> GaussianFit {
    let d = m.len();
    GaussianFit::new(m.to_vec(), (0..d * d).map(|k| c[(k / d, k % d)]).collect()).unwrap()
}

fn frechet_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut closed: f64 = 0.0;
    for _ in 0..1000 {
        let (m1, m2) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let (s1, s2): (f64, f64) = (rng.gen_range(0.05..4.0), rng.gen_range(0.05..4.0));
        let d = frechet_distance(&GaussianFit::new(vec![m1], vec![s1 * s1]).unwrap(), &GaussianFit::new(vec![m2], vec![s2 * s2]).unwrap())
            .map_err(e2s)?;
        closed = closed.max((d - ((m1 - m2).powi(2) + (s1 - s2).powi(2))).abs());
    }
    ensure(closed < 1e-10, format!("1-D closed form off by {closed:e}"))?;
    let (mut selfd, mut asym, mut oracle): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for trial in 0..400 {
        let d = 1 + trial % 8;
        let ma: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mb: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (ca, cb) = (random_spd(d, &mut rng), random_spd(d, &mut rng));
        let (a, b) = (fit(&ma, &ca), fit(&mb, &cb));
        let ab = frechet_distance(&a, &b).map_err(e2s)?;
        let ba = frechet_distance(&b, &a).map_err(e2s)?;
        selfd = selfd.max(frechet_distance(&a, &a).map_err(e2s)?.abs());
        asym = asym.max((ab - ba).abs());
        let o = frechet_oracle(&ma, &ca, &mb, &cb);
        oracle = oracle.max((ab - o).abs() / o.abs().max(1.0));
    }
    ensure(selfd < 1e-10, format!("FD(a, a) = {selfd:e}"))?;
    ensure(asym < 1e-8, format!("asymmetry {asym:e}"))?;
    ensure(oracle < 1e-8, format!("eigen oracle disagreement {oracle:e}"))?;
    Ok(format!(
        "1-D max err {closed:.1e}; FD(a,a) <= {selfd:.1e}; asymmetry {asym:.1e}; dims 1-8 vs dense eigen oracle {oracle:.1e}"
    ))
}

// 4 ------------------------------------------------------------------------

/// Closed testing: H_i is rejected when every intersection containing it
/// is rejected by a Bonferroni test over that intersection.
fn holm_oracle(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    (0..m)
        .map(|i| {
            (1u32..1 << m).filter(|s| s & (1 << i) != 0).all(|s| {
                let members: Vec<f64> = (0..m).filter(|j| s & (1 << j) != 0).map(|j| p[j]).collect();
                members.iter().cloned().fold(f64::INFINITY, f64::min) <= alpha / members.len() as f64
            })
        })
        .collect()
}

fn all_permutations(v: &[f64]) -> Vec<Vec<f64>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..v.len() {
        let mut rest = v.to_vec();
        let x = rest.remove(i);
        for mut p in all_permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

fn holm_enumeration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let alpha = 0.05;
    let mut cases = 0;
    for m in 1..=5 {
        for trial in 0..40 {
            let base: Vec<f64> = (0..m)
                .map(|k| match trial % 4 {
                    0 => rng.gen_range(0.0..0.1),
                    1 => alpha / (k + 1) as f64,
                    2 => *[0.0, 0.01, 0.0125, 0.05, 1.0].choose(&mut rng).unwrap(),
                    _ => rng.gen_range(0.0..1.0),
                })
                .collect();
            for perm in all_permutations(&base) {
                cases += 1;
                let got = holm_bonferroni(&perm, alpha).map_err(e2s)?;
                ensure(got == holm_oracle(&perm, alpha), format!("mismatch on {perm:?}: {got:?}"))?;
            }
        }
    }
    let example = holm_bonferroni(&[0.010, 0.040, 0.030], 0.05).map_err(e2s)?;
    ensure(example == [true, false, false], format!("worked example gave {example:?}"))?;
    Ok(format!("{cases} permuted p-vectors with m <= 5 match; worked example rejects exactly one"))
}

// 5 ------------------------------------------------------------------------

/// Gamma at half-integers, exactly: Γ(1) = 1, Γ(1/2) = √π, Γ(x+1) = xΓ(x).
fn gamma_half(two_x: usize) -> f64 {
    let (mut x, mut g) = if two_x % 2 == 0 { (1.0, 1.0) } else { (0.5, PI.sqrt()) };
    while 2.0 * x < two_x as f64 {
        g *= x;
        x += 1.0;
    }
    g
}

fn t_density(x: f64, df: usize) -> f64 {
    let v = df as f64;
    gamma_half(df + 1) / ((v * PI).sqrt() * gamma_half(df)) * (1.0 + x * x / v).powf(-(v + 1.0) / 2.0)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Two-sided p by quadrature of the density over [0, |t|].
fn p_oracle(t: f64, df: usize) -> f64 {
    let f = |x: f64| t_density(x, df);
    1.0 - 2.0 * simpson(&f, 0.0, t.abs(), 20_000)
}

fn ttest_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=12);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(20.0..90.0)).collect();
        let shift = rng.gen_range(-10.0..10.0);
        let y: Vec<f64> = x.iter().map(|v| v + shift + rng.gen_range(-8.0..8.0)).collect();
        let r = paired_ttest(&x, &y).map_err(e2s)?;
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let t = mean / (sd / (n as f64).sqrt());
        ensure((r.t - t).abs() <= 1e-9 * t.abs().max(1.0), format!("t {} vs {t}", r.t))?;
        worst = worst.max((r.p - p_oracle(t, n - 1)).abs());
    }
    ensure(worst < 1e-6, format!("p-value error {worst:e}"))?;
    let same = paired_ttest(&[61.0, 72.5, 80.0], &[61.0, 72.5, 80.0]).map_err(e2s)?;
    ensure(same.p == 1.0, format!("x = y gave p = {}", same.p))?;
    Ok(format!("100 samples, max |p - oracle| = {worst:.1e}; x = y gives p = 1"))
}

// 6 ------------------------------------------------------------------------

fn voiced_moments(values: &[f64], voiced: &[bool]) -> (f64, f64) {
    let v: Vec<f64> = values.iter().zip(voiced).filter(|p| *p.1).map(|p| *p.0).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

fn f0_renormalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let t = rng.gen_range(3..300);
        let mut voiced: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.6)).collect();
        voiced[0] = true;
        voiced[1] = true;
        let values: Vec<f64> = (0..t).map(|_| rng.gen_range(4.2..6.0)).collect();
        let (m, s) = voiced_moments(&values, &voiced);
        let own = F0Stats { mean: m, std: s };
        let tgt = F0Stats { mean: rng.gen_range(4.3..5.9), std: rng.gen_range(0.01..0.6) };
        let out = renormalize_f0(&LogF0 { values, voiced: voiced.clone(), fill: 0.0 }, &own, &tgt).map_err(e2s)?;
        let (m2, s2) = voiced_moments(&out.values, &voiced);
        worst = worst.max((m2 - tgt.mean).abs()).max((s2 - tgt.std).abs());
    }
    ensure(worst < 1e-6, format!("moment error {worst:e}"))?;
    let sr = 16_000;
    let tone: Vec<f32> = (0..sr).map(|i| (0.5 * (2.0 * PI * 440.0 * i as f64 / sr as f64).sin()) as f32).collect();
    let c = estimate_f0(&Waveform::new(tone, sr).map_err(e2s)?, &PitchConfig::default()).map_err(e2s)?;
    let interior = &c.f0_hz[5..c.len() - 5];
    let voiced = &c.voiced[5..c.len() - 5];
    ensure(voiced.iter().all(|&v| v), "interior tone frames must be voiced")?;
    let off = interior.iter().map(|f| (f - 440.0).abs() / 440.0).fold(0.0, f64::max);
    ensure(off < 0.01, format!("440 Hz tone tracked {:.2}% off", 100.0 * off))?;
    Ok(format!("200 contours, moment error {worst:.1e}; 440 Hz tone within {:.3}% on all interior frames", 100.0 * off))
}

// 7 ------------------------------------------------------------------------

fn corpus_frame_law() -> Outcome {
    let analysis = AnalysisConfig::default();
    let world = ToyWorld::generate(&ToyWorldConfig { utterances_per_speaker: 8, target_utterances: 6, seed: 7, ..Default::default() }, &analysis)
        .map_err(e2s)?;
    let alignments = ToyWorld::alignments(&world.background);
    let audio = ToyWorld::audio_map(&world.background);
    let mut hashes = Vec::new();
    let mut pairs = 0;
    for _ in 0..2 {
        let build = build_parallel_corpus(&alignments, &ToySynthesizer::new(7, &analysis), &audio, &analysis, &CorpusOptions::default())
            .map_err(e2s)?;
        for p in &build.pairs {
            ensure(
                p.source_mel.frames == p.target_mel.frames && p.target_f0.len() == p.source_mel.frames,
                format!("{}: {} vs {} frames", p.utterance_id, p.source_mel.frames, p.target_mel.frames),
            )?;
        }
        pairs = build.pairs.len();
        let dir = tempfile::tempdir().map_err(e2s)?;
        hashes.push(write_corpus(dir.path(), &build, &analysis).map_err(e2s)?.manifest_hash);
    }
    ensure(pairs == alignments.len(), format!("{pairs} of {} utterances paired", alignments.len()))?;
    ensure(hashes[0] == hashes[1], format!("manifest hashes differ: {} vs {}", hashes[0], hashes[1]))?;
    Ok(format!("{pairs} pairs with equal frame counts; manifest hash {} twice", &hashes[0][..16]))
}

// 8 ------------------------------------------------------------------------

fn toy_end_to_end() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(e2s)?;
    pool.install(|| {
        let start = Instant::now();
        let cfg = PipelineConfig::desk().seeded(0);
        ensure(cfg.model.channels == 32 && cfg.model.speaker_dim == 16, "desk sizes must be C=32, D=16")?;
        ensure(cfg.train.steps == 2000 && cfg.train.finetune_steps == 1000, "desk step counts must be 2000 + 1000")?;
        let analysis = &cfg.analysis;
        let world = ToyWorld::generate(&ToyWorldConfig { target_utterances: 30, ..cfg.toy.clone() }, analysis).map_err(e2s)?;
        let synth = ToySynthesizer::new(cfg.seed, analysis);
        let build = |utts| {
            build_parallel_corpus(&ToyWorld::alignments(utts), &synth, &ToyWorld::audio_map(utts), analysis, &cfg.corpus)
        };
        let bg = build(&world.background).map_err(e2s)?;
        let tg = build(&world.target).map_err(e2s)?;
        let speakers: std::collections::BTreeSet<_> = bg.pairs.iter().map(|p| p.speaker_id.clone()).collect();
        ensure(speakers.len() == 4, format!("{} background speakers", speakers.len()))?;
        let (minute, held_out) = tg.pairs.split_at(20);

        let groups = group_by_speaker(bg.pairs.iter().map(|p| (p.speaker_id.as_str(), &p.target_mel)));
        let (embedder, _) = train_embedder(&groups, &cfg.embedder).map_err(e2s)?;
        let (background, _, _) = train_background(&bg.pairs, &embedder, &cfg.model, &cfg.train).map_err(e2s)?;
        let (tuned, report) = finetune(&background, minute, &embedder, &cfg.train).map_err(e2s)?;

        let profile = build_profile(
            "tgt1",
            &embedder,
            minute,
            bg.source_f0_stats.ok_or("no source f0 statistics")?,
            analysis,
            &cfg.corpus.comb,
            cfg.infer.griffin_lim_iters,
        )
        .map_err(e2s)?;
        let reference: Vec<Vec<f32>> = minute.iter().map(|p| embedder.embed(&p.target_mel)).collect::<Result<_, _>>().map_err(e2s)?;
        let mut src = Vec::new();
        let mut conv = Vec::new();
        for p in held_out {
            let (out, _) = convert(&p.source_mel, &tuned, &profile).map_err(e2s)?;
            src.push(embedder.embed(&p.source_mel).map_err(e2s)?);
            conv.push(embedder.embed(&out).map_err(e2s)?);
        }
        let (csed_src, csed_conv) = (csed(&src, &reference).map_err(e2s)?, csed(&conv, &reference).map_err(e2s)?);
        let ratio = report.loss_after / report.loss_before;
        let secs = start.elapsed().as_secs_f64();
        let summary = format!(
            "CSED source {csed_src:.4} -> converted {csed_conv:.4}; fine-tune L1 {:.4} -> {:.4} (x{ratio:.3}); {secs:.0}s on 1 thread",
            report.loss_before, report.loss_after
        );
        ensure(csed_conv < csed_src, format!("conversion did not reduce CSED: {summary}"))?;
        ensure(ratio <= 0.2, format!("fine-tune ratio too high: {summary}"))?;
        ensure(secs < 15.0 * 60.0, format!("over budget: {summary}"))?;
        Ok(summary)
    })
}

// 9 ------------------------------------------------------------------------

fn determinism() -> Outcome {
    let analysis = AnalysisConfig::default();
    let world = ToyWorld::generate(&ToyWorldConfig { utterances_per_speaker: 6, target_utterances: 2, seed: 9, ..Default::default() }, &analysis)
        .map_err(e2s)?;
    let bg = build_parallel_corpus(
        &ToyWorld::alignments(&world.background),
        &ToySynthesizer::new(9, &analysis),
        &ToyWorld::audio_map(&world.background),
        &analysis,
        &CorpusOptions::default(),
    )
    .map_err(e2s)?;
    let embedder = Embedder::<f32>::new(&EmbedderConfig { dim: 16, ..Default::default() }, 9).map_err(e2s)?;
    let tcfg = TrainConfig { steps: 40, seed: 9, ..Default::default() };
    let mut bytes = Vec::new();
    let mut model = None;
    for _ in 0..2 {
        let (m, adam, _) = train_background(&bg.pairs, &embedder, &ModelConfig::desk(), &tcfg).map_err(e2s)?;
        let ck = vf_checkpoint(&m, ModelKind::Background, SaveInfo { steps: 40, seed: 9, speaker: None, adam: Some(&adam) }).map_err(e2s)?;
        bytes.push(ck.to_bytes().map_err(e2s)?);
        model = Some(m);
    }
    ensure(bytes[0] == bytes[1], "two seeded runs produced different checkpoints")?;
    let model = model.unwrap();
    let (back, adam) = vf_from_checkpoint(&Checkpoint::from_bytes(&bytes[0]).map_err(e2s)?).map_err(e2s)?;
    ensure(adam.is_some(), "optimizer state missing after round trip")?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5 {
        let t = rng.gen_range(5..60);
        let x = random_mel(t, 80, &mut rng);
        let c = random_cond(t, 16, &mut rng);
        let (a, b) = (model.forward(&x, &c, Mode::Eval).map_err(e2s)?, back.forward(&x, &c, Mode::Eval).map_err(e2s)?);
        let same = a.data.iter().zip(&b.data).all(|(p, q)| p.to_bits() == q.to_bits());
        ensure(same, "forward after round trip differs")?;
    }
    Ok(format!("two 40-step runs give identical {}-byte checkpoints; round trip forward is bit-exact", bytes[0].len()))
}

// 10 -----------------------------------------------------------------------

fn rec(l: usize, s: &str, u: usize, score: f64) -> MushraRecord {
    MushraRecord { listener_id: format!("l{l:03}"), system_id: s.into(), utterance_id: format!("u{u}"), score }
}

fn mushra_fixtures() -> Outcome {
    // VF: 50 ratings of 63.60 and 50 of 72.32. Mean 67.96; sample sd
    // 4.36 * sqrt(100/99); half-width 1.96 * sd / 10 = 0.858872...
    // TWO: {40, 60}, mean 50, sd sqrt(200), SE 10, half-width 19.6.
    // FLAT: {50, 50}, half-width 0.
    let mut records = Vec::new();
    for l in 0..100 {
        records.push(rec(l, "VF", 0, if l % 2 == 0 { 63.60 } else { 72.32 }));
    }
    records.push(rec(0, "TWO", 0, 40.0));
    records.push(rec(1, "TWO", 0, 60.0));
    records.push(rec(0, "FLAT", 0, 50.0));
    records.push(rec(1, "FLAT", 0, 50.0));
    let dir = tempfile::tempdir().map_err(e2s)?;
    let path = dir.path().join("scores.csv");
    let mut csv = String::from("listener_id,system_id,utterance_id,score\n");
    for r in &records {
        csv.push_str(&format!("{},{},{},{}\n", r.listener_id, r.system_id, r.utterance_id, r.score));
    }
    std::fs::write(&path, csv).map_err(e2s)?;
    let parsed = voicefilter::eval::read_mushra_csv(&path).map_err(e2s)?;
    ensure(parsed == records, "CSV round trip changed the records")?;
    let by: BTreeMap<String, _> = mushra_summary(&parsed).map_err(e2s)?.into_iter().map(|s| (s.system_id.clone(), s)).collect();
    let expect = [
        ("VF", 67.96, 1.96 * 4.36 * (100.0f64 / 99.0).sqrt() / 10.0, "67.96 ± 0.86"),
        ("TWO", 50.0, 19.6, "50.00 ± 19.60"),
        ("FLAT", 50.0, 0.0, "50.00 ± 0.00"),
    ];
    for (sys, mean, hw, text) in expect {
        let s = &by[sys];
        ensure((s.mean - mean).abs() < 1e-9, format!("{sys} mean {}", s.mean))?;
        ensure((s.half_width - hw).abs() < 1e-9, format!("{sys} half-width {} vs {hw}", s.half_width))?;
        ensure(s.formatted() == text, format!("{sys} formatted {:?}", s.formatted()))?;
    }
    Ok(format!("VF {}, TWO {}, FLAT {}", by["VF"].formatted(), by["TWO"].formatted(), by["FLAT"].formatted()))
}

fn main() {
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("size preservation", size_preservation),
        ("gradient correctness", gradient_correctness),
        ("Fréchet oracle", frechet_oracles),
        ("Holm-Bonferroni enumeration", holm_enumeration),
        ("paired t-test oracle", ttest_oracle),
        ("f0 renormalization and tracking", f0_renormalization),
        ("corpus frame law", corpus_frame_law),
        ("toy end-to-end", toy_end_to_end),
        ("determinism", determinism),
        ("MUSHRA report", mushra_fixtures),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

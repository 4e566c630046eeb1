//! Utterance-level speaker embeddings trained with the softmax GE2E loss.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::model::stack;
use crate::nn::{lit, offsets, relu, relu_backward, Conv1d, Frames, Linear, Real, Tensor};
use crate::optim::{Adam, AdamConfig};

/// Shortest input the two stride-2 layers accept.
pub const MIN_FRAMES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub n_mels: usize,
    pub channels: usize,
    pub dim: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            n_mels: 80,
            channels: 64,
            dim: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedder<T> {
    pub cfg: EmbedderConfig,
    pub conv1: Conv1d<T>,
    pub conv2: Conv1d<T>,
    pub proj: Linear<T>,
    /// GE2E similarity scale, kept positive.
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

pub struct EmbedCache<T> {
    h1: Frames<T>,
    h2: Frames<T>,
    lens2: Vec<usize>,
    pooled: Frames<T>,
    z: Frames<T>,
}

impl<T: Real> EmbedCache<T> {
    /// On/off state of every ReLU unit.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.h1.data.iter().chain(&self.h2.data).map(|&v| v > T::zero()).collect()
    }
}

pub const MIN_SCALE: f64 = 1e-4;

impl<T: Real> Embedder<T> {
    pub fn new(cfg: &EmbedderConfig, seed: u64) -> Result<Self> {
        if cfg.n_mels == 0 || cfg.channels == 0 || cfg.dim == 0 {
            return Err(Error::Config("embedder sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Embedder {
            cfg: cfg.clone(),
            conv1: Conv1d::new(cfg.n_mels, cfg.channels, 3, 2, 1, &mut rng),
            conv2: Conv1d::new(cfg.channels, cfg.channels, 3, 2, 1, &mut rng),
            proj: Linear::new(cfg.channels, cfg.dim, &mut rng),
            w: Tensor::filled(&[1], lit(10.0)),
            b: Tensor::filled(&[1], lit(-5.0)),
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        [
            "conv1.weight",
            "conv1.bias",
            "conv2.weight",
            "conv2.bias",
            "proj.weight",
            "proj.bias",
            "ge2e.w",
            "ge2e.b",
        ]
        .map(String::from)
        .to_vec()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.proj.weight,
            &self.proj.bias,
            &self.w,
            &self.b,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.proj.weight,
            &mut self.proj.bias,
            &mut self.w,
            &mut self.b,
        ]
    }

    fn check_input(&self, frames: usize, bins: usize) -> Result<()> {
        if frames < MIN_FRAMES {
            return Err(Error::Invalid(format!(
                "embedder needs at least {MIN_FRAMES} frames, got {frames}"
            )));
        }
        if bins != self.cfg.n_mels {
            return Err(Error::Shape(format!(
                "embedder expects {} mel bins, got {bins}",
                self.cfg.n_mels
            )));
        }
        Ok(())
    }

    /// Frame-level activations of the second conv layer.
    pub fn frame_features(&self, m: &MelSpectrogram) -> Result<Frames<T>> {
        self.check_input(m.frames, m.bins)?;
        let x = m.to_frames::<T>();
        let lens = [m.frames];
        let h1 = relu(&self.conv1.forward(&x, &lens));
        Ok(relu(&self.conv2.forward(&h1, &self.conv1.out_lens(&lens))))
    }

    /// Unit-norm embeddings for a ragged batch, one row per segment.
    pub fn forward_batch(&self, x: &Frames<T>, lens: &[usize]) -> Result<(Frames<T>, EmbedCache<T>)> {
        for &l in lens {
            self.check_input(l, x.cols)?;
        }
        let h1 = relu(&self.conv1.forward(x, lens));
        let lens1 = self.conv1.out_lens(lens);
        let h2 = relu(&self.conv2.forward(&h1, &lens1));
        let lens2 = self.conv2.out_lens(&lens1);
        let c = self.cfg.channels;
        let mut pooled = Frames::zeros(lens.len(), c);
        for (s, (&o, &l)) in offsets(&lens2).iter().zip(&lens2).enumerate() {
            let inv = lit::<T>(1.0 / l as f64);
            let row = pooled.row_mut(s);
            for t in o..o + l {
                for (p, &v) in row.iter_mut().zip(h2.row(t)) {
                    *p = *p + v * inv;
                }
            }
        }
        let z = self.proj.forward(&pooled);
        let mut e = z.clone();
        for r in 0..e.rows {
            let row = e.row_mut(r);
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(n > T::zero()) || !n.is_finite() {
                return Err(Error::NonFinite(format!("embedding norm of segment {r}")));
            }
            row.iter_mut().for_each(|v| *v = *v / n);
        }
        Ok((
            e,
            EmbedCache {
                h1,
                h2,
                lens2,
                pooled,
                z,
            },
        ))
    }

    /// Gradients for the network parameters given `de`; the GE2E scalars
    /// are left zero.
    pub fn backward_batch(
        &self,
        x: &Frames<T>,
        lens: &[usize],
        e: &Frames<T>,
        cache: &EmbedCache<T>,
        de: &Frames<T>,
    ) -> Vec<Tensor<T>> {
        let mut g: Vec<Tensor<T>> = self.params().iter().map(|p| Tensor::zeros(&p.shape)).collect();
        let mut dz = Frames::zeros(e.rows, e.cols);
        for r in 0..e.rows {
            let n = cache.z.row(r).iter().map(|&v| v * v).sum::<T>().sqrt();
            let (er, dr) = (e.row(r), de.row(r));
            let proj: T = er.iter().zip(dr).map(|(&a, &b)| a * b).sum();
            for ((o, &ev), &dv) in dz.row_mut(r).iter_mut().zip(er).zip(dr) {
                *o = (dv - proj * ev) / n;
            }
        }
        let (g01, rest) = g.split_at_mut(2);
        let (g23, g45) = rest.split_at_mut(2);
        let (gpw, gpb) = g45.split_at_mut(1);
        let dpooled = self.proj.backward(&cache.pooled, &dz, &mut gpw[0], &mut gpb[0]);
        let mut dh2 = Frames::zeros(cache.h2.rows, cache.h2.cols);
        for (s, (&o, &l)) in offsets(&cache.lens2).iter().zip(&cache.lens2).enumerate() {
            let inv = lit::<T>(1.0 / l as f64);
            for t in o..o + l {
                for (d, &p) in dh2.row_mut(t).iter_mut().zip(dpooled.row(s)) {
                    *d = p * inv;
                }
            }
        }
        let dh2 = relu_backward(&cache.h2, &dh2);
        let lens1 = self.conv1.out_lens(lens);
        let (gw, gb) = g23.split_at_mut(1);
        let dh1 = self.conv2.backward(&cache.h1, &lens1, &dh2, &mut gw[0], &mut gb[0]);
        let dh1 = relu_backward(&cache.h1, &dh1);
        let (gw, gb) = g01.split_at_mut(1);
        self.conv1.backward(x, lens, &dh1, &mut gw[0], &mut gb[0]);
        g
    }

    pub fn clamp_scale(&mut self) {
        let floor = lit::<T>(MIN_SCALE);
        if !(self.w.data[0] >= floor) {
            self.w.data[0] = floor;
        }
    }
}

impl Embedder<f32> {
    pub fn embed(&self, m: &MelSpectrogram) -> Result<Vec<f32>> {
        self.check_input(m.frames, m.bins)?;
        let (e, _) = self.forward_batch(&m.to_frames(), &[m.frames])?;
        Ok(e.data)
    }
}

pub fn embed(m: &MelSpectrogram, model: &Embedder<f32>) -> Result<Vec<f32>> {
    model.embed(m)
}

/// L2-normalized arithmetic mean.
pub fn centroid(embeddings: &[Vec<f32>]) -> Result<Vec<f32>> {
    let Some(first) = embeddings.first() else {
        return Err(Error::Invalid("centroid of an empty set".into()));
    };
    let d = first.len();
    let mut acc = vec![0.0f64; d];
    for e in embeddings {
        if e.len() != d {
            return Err(Error::Shape("embeddings of different dimension".into()));
        }
        for (a, &v) in acc.iter_mut().zip(e) {
            *a += v as f64;
        }
    }
    let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < 1e-12 * embeddings.len() as f64 || !n.is_finite() {
        return Err(Error::Invalid("centroid has zero norm".into()));
    }
    Ok(acc.iter().map(|v| (v / n) as f32).collect())
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// GE2E loss value and gradients.
pub struct Ge2eOutput<T> {
    pub loss: T,
    /// Gradient for each embedding row, laid out speaker-major.
    pub d_embeddings: Frames<T>,
    pub d_w: T,
    pub d_b: T,
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Softmax GE2E over `n` speakers with `m` utterances each. Rows of `e` are
/// ordered speaker-major. The own-speaker centroid excludes the utterance
/// being scored.
pub fn ge2e_loss<T: Real>(e: &Frames<T>, n: usize, m: usize, w: T, b: T) -> Result<Ge2eOutput<T>> {
    if n < 2 || m < 2 {
        return Err(Error::Invalid(format!(
            "GE2E needs at least 2 speakers x 2 utterances, got {n} x {m}"
        )));
    }
    if e.rows != n * m {
        return Err(Error::Shape(format!("expected {} embeddings, got {}", n * m, e.rows)));
    }
    let d = e.cols;
    let mf = lit::<T>(m as f64);
    let m1 = lit::<T>((m - 1) as f64);
    let mut sums = vec![vec![T::zero(); d]; n];
    for j in 0..n {
        for i in 0..m {
            for (s, &v) in sums[j].iter_mut().zip(e.row(j * m + i)) {
                *s = *s + v;
            }
        }
    }
    let cents: Vec<Vec<T>> = sums.iter().map(|s| s.iter().map(|&v| v / mf).collect()).collect();
    let scale = lit::<T>(1.0 / (n * m) as f64);
    let mut loss = T::zero();
    let mut de = Frames::zeros(e.rows, d);
    // gradient w.r.t. the full centroids, spread over members at the end
    let mut d_cent = vec![vec![T::zero(); d]; n];
    let (mut d_w, mut d_b) = (T::zero(), T::zero());
    for j in 0..n {
        for i in 0..m {
            let r = j * m + i;
            let a = e.row(r);
            let na = norm(a);
            let excl: Vec<T> = sums[j]
                .iter()
                .zip(a)
                .map(|(&s, &v)| (s - v) / m1)
                .collect();
            let refs: Vec<&[T]> = (0..n)
                .map(|k| if k == j { excl.as_slice() } else { cents[k].as_slice() })
                .collect();
            let cos: Vec<T> = refs
                .iter()
                .map(|c| {
                    let dot: T = a.iter().zip(c.iter()).map(|(&x, &y)| x * y).sum();
                    dot / (na * norm(c))
                })
                .collect();
            let s: Vec<T> = cos.iter().map(|&c| w * c + b).collect();
            let smax = s.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = s.iter().map(|&v| (v - smax).exp()).sum();
            let lse = smax + z.ln();
            loss = loss + lse - s[j];
            for k in 0..n {
                let p = (s[k] - lse).exp();
                let g = (p - if k == j { T::one() } else { T::zero() }) * scale;
                d_w = d_w + g * cos[k];
                d_b = d_b + g;
                let gc = g * w;
                let c = refs[k];
                let nc = norm(c);
                // d cos / d a and d cos / d c
                {
                    let row = de.row_mut(r);
                    for t in 0..d {
                        row[t] = row[t] + gc * (c[t] / (na * nc) - cos[k] * a[t] / (na * na));
                    }
                }
                let dc: Vec<T> = (0..d)
                    .map(|t| gc * (a[t] / (na * nc) - cos[k] * c[t] / (nc * nc)))
                    .collect();
                if k == j {
                    for i2 in (0..m).filter(|&i2| i2 != i) {
                        let row = de.row_mut(j * m + i2);
                        for t in 0..d {
                            row[t] = row[t] + dc[t] / m1;
                        }
                    }
                } else {
                    for t in 0..d {
                        d_cent[k][t] = d_cent[k][t] + dc[t];
                    }
                }
            }
        }
    }
    for k in 0..n {
        for i in 0..m {
            let row = de.row_mut(k * m + i);
            for t in 0..d {
                row[t] = row[t] + d_cent[k][t] / mf;
            }
        }
    }
    Ok(Ge2eOutput {
        loss: loss * scale,
        d_embeddings: de,
        d_w,
        d_b,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedTrainConfig {
    pub model: EmbedderConfig,
    pub steps: usize,
    pub speakers_per_batch: usize,
    pub utterances_per_speaker: usize,
    /// Random crop length in frames; longer utterances are cropped.
    pub crop_frames: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        EmbedTrainConfig {
            model: EmbedderConfig::default(),
            steps: 300,
            speakers_per_batch: 4,
            utterances_per_speaker: 5,
            crop_frames: 48,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Utterances grouped by speaker id.
pub type SpeakerGroups<'a> = BTreeMap<String, Vec<&'a MelSpectrogram>>;

pub fn group_by_speaker<'a>(items: impl IntoIterator<Item = (&'a str, &'a MelSpectrogram)>) -> SpeakerGroups<'a> {
    let mut g: SpeakerGroups<'a> = BTreeMap::new();
    for (s, m) in items {
        g.entry(s.to_string()).or_default().push(m);
    }
    g
}

fn crop(m: &MelSpectrogram, len: usize, rng: &mut ChaCha8Rng) -> Frames<f32> {
    let f = m.to_frames::<f32>();
    if m.frames <= len {
        return f;
    }
    let start = rng.gen_range(0..=m.frames - len);
    Frames::from_vec(len, f.cols, f.data[start * f.cols..(start + len) * f.cols].to_vec())
}

fn batch_loss(model: &Embedder<f32>, parts: &[Frames<f32>], n: usize, m: usize) -> Result<f32> {
    let lens: Vec<usize> = parts.iter().map(|p| p.rows).collect();
    let (e, _) = model.forward_batch(&stack(parts), &lens)?;
    Ok(ge2e_loss(&e, n, m, model.w.data[0], model.b.data[0])?.loss)
}

/// Loss of the full groups (first `m` utterances of every speaker, uncropped).
pub fn ge2e_eval(model: &Embedder<f32>, groups: &SpeakerGroups<'_>, m: usize) -> Result<f32> {
    check_groups(groups, m)?;
    let parts: Vec<Frames<f32>> = groups
        .values()
        .flat_map(|us| us.iter().take(m).map(|u| u.to_frames::<f32>()))
        .collect();
    batch_loss(model, &parts, groups.len(), m)
}

fn check_groups(groups: &SpeakerGroups<'_>, m: usize) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::Invalid(format!(
            "embedder training needs at least 2 speakers, got {}",
            groups.len()
        )));
    }
    if m < 2 {
        return Err(Error::Invalid("need at least 2 utterances per speaker".into()));
    }
    for (s, us) in groups {
        if us.len() < 2 {
            return Err(Error::Invalid(format!("speaker {s} has fewer than 2 utterances")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct EmbedTrainReport {
    pub losses: Vec<f32>,
}

pub fn train_embedder(groups: &SpeakerGroups<'_>, cfg: &EmbedTrainConfig) -> Result<(Embedder<f32>, EmbedTrainReport)> {
    check_groups(groups, 2)?;
    if cfg.crop_frames < MIN_FRAMES {
        return Err(Error::Config(format!("crop_frames must be >= {MIN_FRAMES}")));
    }
    let mut model = Embedder::<f32>::new(&cfg.model, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam.clone(), &model.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let speakers: Vec<&String> = groups.keys().collect();
    let n = cfg.speakers_per_batch.clamp(2, speakers.len());
    let m = cfg
        .utterances_per_speaker
        .max(2)
        .min(groups.values().map(Vec::len).min().unwrap_or(2));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let chosen: Vec<&&String> = speakers.choose_multiple(&mut rng, n).collect();
        let mut parts = Vec::with_capacity(n * m);
        for s in chosen {
            for u in groups[s.as_str()].choose_multiple(&mut rng, m) {
                parts.push(crop(u, cfg.crop_frames, &mut rng));
            }
        }
        let lens: Vec<usize> = parts.iter().map(|p| p.rows).collect();
        let x = stack(&parts);
        let (e, cache) = model.forward_batch(&x, &lens)?;
        let out = ge2e_loss(&e, n, m, model.w.data[0], model.b.data[0])?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("GE2E loss at step {step}")));
        }
        let mut grads = model.backward_batch(&x, &lens, &e, &cache, &out.d_embeddings);
        grads[6].data[0] = out.d_w;
        grads[7].data[0] = out.d_b;
        adam.update(model.params_mut(), &mut grads)?;
        model.clamp_scale();
        losses.push(out.loss);
    }
    Ok((model, EmbedTrainReport { losses }))
}

pub fn write_embeddings_csv(path: impl AsRef<Path>, rows: &[(String, Vec<f32>)]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    let d = rows.first().map_or(0, |r| r.1.len());
    write!(buf, "utterance_id").unwrap();
    for i in 0..d {
        write!(buf, ",e{i}").unwrap();
    }
    writeln!(buf).unwrap();
    for (id, e) in rows {
        write!(buf, "{id}").unwrap();
        for v in e {
            write!(buf, ",{v}").unwrap();
        }
        writeln!(buf).unwrap();
    }
    std::fs::write(path, buf).map_err(|err| Error::io(path, err))
}

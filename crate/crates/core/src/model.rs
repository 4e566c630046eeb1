//! The Voice Filter network.
//!
//! Six same-padded conv layers with batch norm and ReLU, speaker embedding
//! plus log-f0 and voicing mask concatenated onto the third layer's output,
//! then a uni-directional LSTM, a ReLU dense layer and a linear projection
//! back to mel bins. Batches are ragged: frames of all utterances are
//! stacked and `lens` marks the boundaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{
    lit, relu, relu_backward, BatchNorm, BnCache, BnStats, Conv1d, Frames, Linear, Lstm,
    LstmCache, Real, Tensor,
};
use crate::pitch::LogF0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub channels: usize,
    pub kernel: usize,
    pub conv_layers: usize,
    /// Conditioning is concatenated after this many conv layers.
    pub cond_after: usize,
    pub speaker_dim: usize,
    pub lstm_hidden: usize,
    pub dense: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_mels: 80,
            channels: 512,
            kernel: 5,
            conv_layers: 6,
            cond_after: 3,
            speaker_dim: 256,
            lstm_hidden: 512,
            dense: 1024,
            bn_momentum: 0.99,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Desk-scale sizes.
    pub fn desk() -> Self {
        ModelConfig {
            channels: 32,
            speaker_dim: 16,
            lstm_hidden: 32,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_mels", self.n_mels),
            ("channels", self.channels),
            ("kernel", self.kernel),
            ("conv_layers", self.conv_layers),
            ("speaker_dim", self.speaker_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("dense", self.dense),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("model.kernel must be odd for same padding".into()));
        }
        if self.cond_after == 0 || self.cond_after >= self.conv_layers {
            return Err(Error::Config(format!(
                "model.cond_after must lie in 1..{}",
                self.conv_layers
            )));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0 && self.bn_eps > 0.0) {
            return Err(Error::Config("batch-norm momentum must be in (0,1), eps > 0".into()));
        }
        Ok(())
    }

    pub fn cond_width(&self) -> usize {
        self.speaker_dim + 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Batch statistics; running statistics are updated by the trainer.
    Train,
    /// Running statistics, no updates.
    Eval,
    /// Running statistics frozen, gradients flow through them.
    FineTune,
}

impl Mode {
    fn bn_stats(self) -> BnStats {
        match self {
            Mode::Train => BnStats::Batch,
            Mode::Eval | Mode::FineTune => BnStats::Running,
        }
    }
}

/// Fixed affine map applied to log-f0 before it enters the network, so the
/// contour's variation is not swamped by its offset.
pub const LOGF0_CENTER: f64 = 5.0;
pub const LOGF0_SCALE: f64 = 4.0;

/// Per-utterance conditioning: speaker vector broadcast over frames, log-f0
/// and the voicing mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningInput {
    pub speaker: Vec<f32>,
    pub logf0: Vec<f64>,
    pub voicing: Vec<bool>,
}

impl ConditioningInput {
    pub fn new(speaker: Vec<f32>, logf0: &LogF0) -> Self {
        ConditioningInput {
            speaker,
            logf0: logf0.values.clone(),
            voicing: logf0.voiced.clone(),
        }
    }

    pub fn frames(&self) -> usize {
        self.logf0.len()
    }

    /// `T x (D + 2)` rows of `[speaker | log-f0 | mask]`.
    pub fn to_frames<T: Real>(&self) -> Frames<T> {
        let t = self.frames();
        let w = self.speaker.len() + 2;
        let mut data = Vec::with_capacity(t * w);
        for (f, &v) in self.logf0.iter().zip(&self.voicing) {
            data.extend(self.speaker.iter().map(|&s| lit::<T>(s as f64)));
            data.push(lit((*f - LOGF0_CENTER) * LOGF0_SCALE));
            data.push(if v { T::one() } else { T::zero() });
        }
        Frames::from_vec(t, w, data)
    }
}

/// Stacked ragged batch ready for the network.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub mels: Frames<T>,
    pub cond: Frames<T>,
    pub lens: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn new(items: &[(&MelSpectrogram, &ConditioningInput)]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let mut mels = Vec::new();
        let mut cond = Vec::new();
        let mut lens = Vec::with_capacity(items.len());
        let bins = items[0].0.bins;
        let dim = items[0].1.speaker.len();
        for (m, c) in items {
            if c.frames() != m.frames || c.voicing.len() != m.frames {
                return Err(Error::Shape(format!(
                    "mel has {} frames but conditioning has {}",
                    m.frames,
                    c.frames()
                )));
            }
            if m.bins != bins || c.speaker.len() != dim {
                return Err(Error::Shape("inconsistent bins or speaker dim in batch".into()));
            }
            mels.push(m.to_frames::<T>());
            cond.push(c.to_frames::<T>());
            lens.push(m.frames);
        }
        Ok(Batch {
            mels: stack(&mels),
            cond: stack(&cond),
            lens,
        })
    }
}

/// Concatenate frame blocks row-wise.
pub fn stack<T: Real>(parts: &[Frames<T>]) -> Frames<T> {
    let cols = parts[0].cols;
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
    for p in parts {
        data.extend_from_slice(&p.data);
    }
    Frames::from_vec(data.len() / cols, cols, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoiceFilter<T> {
    pub cfg: ModelConfig,
    pub convs: Vec<Conv1d<T>>,
    pub norms: Vec<BatchNorm<T>>,
    pub lstm: Lstm<T>,
    pub dense: Linear<T>,
    pub out: Linear<T>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<T> {
    mode: Mode,
    conv_in: Vec<Frames<T>>,
    bn: Vec<BnCache<T>>,
    act: Vec<Frames<T>>,
    lstm: LstmCache<T>,
    lstm_out: Frames<T>,
    dense_out: Frames<T>,
}

impl<T> ForwardCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl<T: Real> ForwardCache<T> {
    /// On/off state of every ReLU unit, for detecting kinks between two
    /// forward passes.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.act
            .iter()
            .chain(std::iter::once(&self.dense_out))
            .flat_map(|f| f.data.iter().map(|&v| v > T::zero()))
            .collect()
    }
}

impl<T: Real> VoiceFilter<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.channels;
        let mut convs = Vec::with_capacity(cfg.conv_layers);
        let mut norms = Vec::with_capacity(cfg.conv_layers);
        for l in 0..cfg.conv_layers {
            let in_ch = match l {
                0 => cfg.n_mels,
                l if l == cfg.cond_after => c + cfg.cond_width(),
                _ => c,
            };
            convs.push(Conv1d::same(in_ch, c, cfg.kernel, &mut rng));
            norms.push(BatchNorm::new(c, cfg.bn_momentum, cfg.bn_eps));
        }
        Ok(VoiceFilter {
            cfg: cfg.clone(),
            convs,
            norms,
            lstm: Lstm::new(c, cfg.lstm_hidden, &mut rng),
            dense: Linear::new(cfg.lstm_hidden, cfg.dense, &mut rng),
            out: Linear::new(cfg.dense, cfg.n_mels, &mut rng),
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.convs.len() {
            names.push(format!("conv{l}.weight"));
            names.push(format!("conv{l}.bias"));
            names.push(format!("bn{l}.gamma"));
            names.push(format!("bn{l}.beta"));
        }
        for n in [
            "lstm.w_input",
            "lstm.w_hidden",
            "lstm.bias",
            "dense.weight",
            "dense.bias",
            "out.weight",
            "out.bias",
        ] {
            names.push(n.to_string());
        }
        names
    }

    /// Trainable tensors, in [`Self::param_names`] order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = Vec::new();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            p.extend([&c.weight, &c.bias, &n.gamma, &n.beta]);
        }
        p.extend([&self.lstm.w_input, &self.lstm.w_hidden, &self.lstm.bias]);
        p.extend([&self.dense.weight, &self.dense.bias, &self.out.weight, &self.out.bias]);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = Vec::new();
        for (c, n) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            p.extend([&mut c.weight, &mut c.bias, &mut n.gamma, &mut n.beta]);
        }
        p.extend([
            &mut self.lstm.w_input,
            &mut self.lstm.w_hidden,
            &mut self.lstm.bias,
        ]);
        p.extend([
            &mut self.dense.weight,
            &mut self.dense.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ]);
        p
    }

    /// Parameters followed by batch-norm running statistics.
    pub fn state(&self) -> Vec<(String, &Tensor<T>)> {
        let mut s: Vec<(String, &Tensor<T>)> =
            self.param_names().into_iter().zip(self.params()).collect();
        for (l, n) in self.norms.iter().enumerate() {
            s.push((format!("bn{l}.running_mean"), &n.running_mean));
            s.push((format!("bn{l}.running_var"), &n.running_var));
        }
        s
    }

    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let names = self.param_names();
        let mut running = Vec::with_capacity(2 * self.norms.len());
        let mut s: Vec<(String, &mut Tensor<T>)> = Vec::new();
        let (convs, norms) = (&mut self.convs, &mut self.norms);
        let mut idx = 0;
        for (c, n) in convs.iter_mut().zip(norms.iter_mut()) {
            let l = idx / 4;
            for t in [&mut c.weight, &mut c.bias, &mut n.gamma, &mut n.beta] {
                s.push((names[idx].clone(), t));
                idx += 1;
            }
            running.push((format!("bn{l}.running_mean"), &mut n.running_mean));
            running.push((format!("bn{l}.running_var"), &mut n.running_var));
        }
        for t in [
            &mut self.lstm.w_input,
            &mut self.lstm.w_hidden,
            &mut self.lstm.bias,
            &mut self.dense.weight,
            &mut self.dense.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ] {
            s.push((names[idx].clone(), t));
            idx += 1;
        }
        s.extend(running);
        s
    }

    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params().iter().map(|p| Tensor::zeros(&p.shape)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn forward_batch(&self, batch: &Batch<T>, mode: Mode) -> Result<(Frames<T>, ForwardCache<T>)> {
        let cfg = &self.cfg;
        if batch.mels.cols != cfg.n_mels {
            return Err(Error::Shape(format!(
                "model expects {} mel bins, got {}",
                cfg.n_mels, batch.mels.cols
            )));
        }
        if batch.cond.cols != cfg.cond_width() || batch.cond.rows != batch.mels.rows {
            return Err(Error::Shape(format!(
                "conditioning must be {} x {}, got {} x {}",
                batch.mels.rows,
                cfg.cond_width(),
                batch.cond.rows,
                batch.cond.cols
            )));
        }
        if batch.lens.iter().sum::<usize>() != batch.mels.rows || batch.lens.contains(&0) {
            return Err(Error::Shape("segment lengths do not cover the batch".into()));
        }
        if mode == Mode::Train && batch.mels.rows < 2 {
            return Err(Error::Invalid("train mode needs at least 2 frames".into()));
        }
        let stats = mode.bn_stats();
        let lens = &batch.lens;
        let mut conv_in = Vec::with_capacity(self.convs.len());
        let mut bn = Vec::with_capacity(self.convs.len());
        let mut act: Vec<Frames<T>> = Vec::with_capacity(self.convs.len());
        let mut x = batch.mels.clone();
        for (l, (conv, norm)) in self.convs.iter().zip(&self.norms).enumerate() {
            if l == cfg.cond_after {
                x = Frames::hcat(&[&x, &batch.cond]);
            }
            let z = conv.forward(&x, lens);
            let (y, cache) = norm.forward(&z, stats);
            conv_in.push(x);
            bn.push(cache);
            x = relu(&y);
            act.push(x.clone());
        }
        let (h, lstm_cache) = self.lstm.forward(&x, lens);
        let d = relu(&self.dense.forward(&h));
        let y = self.out.forward(&d);
        Ok((
            y,
            ForwardCache {
                mode,
                conv_in,
                bn,
                act,
                lstm: lstm_cache,
                lstm_out: h,
                dense_out: d,
            },
        ))
    }

    /// Gradients of every parameter given `dy = dL/dy`, in
    /// [`Self::params`] order.
    pub fn backward_batch(
        &self,
        batch: &Batch<T>,
        cache: &ForwardCache<T>,
        dy: &Frames<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let mut grads = self.zero_grads();
        let layers = self.convs.len();
        let base = 4 * layers;
        let check = |f: &Frames<T>, name: &str| -> Result<()> {
            if f.all_finite() {
                Ok(())
            } else {
                Err(Error::NonFinite(format!("gradient of {name}")))
            }
        };
        check(dy, "output")?;
        let (g_lstm, rest) = grads[base..].split_at_mut(3);
        let (g_dense, g_out) = rest.split_at_mut(2);
        let (gw, gb) = g_out.split_at_mut(1);
        let dd = self.out.backward(&cache.dense_out, dy, &mut gw[0], &mut gb[0]);
        check(&dd, "out")?;
        let dd = relu_backward(&cache.dense_out, &dd);
        let (gw, gb) = g_dense.split_at_mut(1);
        let dh = self.dense.backward(&cache.lstm_out, &dd, &mut gw[0], &mut gb[0]);
        check(&dh, "dense")?;
        let (gi, gr) = g_lstm.split_at_mut(1);
        let (gh, gbias) = gr.split_at_mut(1);
        let mut dx = self.lstm.backward(
            &cache.act[layers - 1],
            &batch.lens,
            &cache.lstm_out,
            &cache.lstm,
            &dh,
            &mut gi[0],
            &mut gh[0],
            &mut gbias[0],
        );
        check(&dx, "lstm")?;
        for l in (0..layers).rev() {
            let g = &mut grads[4 * l..4 * l + 4];
            let (gc, gn) = g.split_at_mut(2);
            let (gcw, gcb) = gc.split_at_mut(1);
            let (gg, gbeta) = gn.split_at_mut(1);
            let dyl = relu_backward(&cache.act[l], &dx);
            let dz = self.norms[l].backward(&cache.bn[l], &dyl, &mut gg[0], &mut gbeta[0]);
            check(&dz, &format!("bn{l}"))?;
            dx = self.convs[l].backward(
                &cache.conv_in[l],
                &batch.lens,
                &dz,
                &mut gcw[0],
                &mut gcb[0],
            );
            check(&dx, &format!("conv{l}"))?;
            if l == self.cfg.cond_after {
                dx = dx.split_cols(self.cfg.channels).0;
            }
        }
        for (g, name) in grads.iter().zip(self.param_names()) {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        Ok(grads)
    }

    /// Fold batch statistics from a train-mode forward into the running
    /// estimates.
    pub fn update_running(&mut self, cache: &ForwardCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        for (n, c) in self.norms.iter_mut().zip(&cache.bn) {
            n.update_running(c);
        }
    }

    /// Convert one utterance.
    pub fn forward(
        &self,
        mel: &MelSpectrogram,
        cond: &ConditioningInput,
        mode: Mode,
    ) -> Result<MelSpectrogram> {
        if cond.speaker.len() != self.cfg.speaker_dim {
            return Err(Error::Shape(format!(
                "speaker embedding has {} dims, model expects {}",
                cond.speaker.len(),
                self.cfg.speaker_dim
            )));
        }
        let batch = Batch::new(&[(mel, cond)])?;
        let (y, _) = self.forward_batch(&batch, mode)?;
        let out = MelSpectrogram::from_frames(&y, mel.hop_length, mel.sample_rate)?;
        out.check_finite()?;
        Ok(out)
    }
}

/// Mean absolute error over every entry and its gradient (subgradient 0 at
/// 0).
pub fn l1_loss_frames<T: Real>(pred: &Frames<T>, target: &Frames<T>) -> Result<(T, Frames<T>)> {
    if pred.rows != target.rows || pred.cols != target.cols {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.rows, pred.cols, target.rows, target.cols
        )));
    }
    let n = lit::<T>(pred.data.len() as f64);
    let mut loss = T::zero();
    let grad = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| {
            let d = p - t;
            loss = loss + d.abs();
            if d > T::zero() {
                T::one() / n
            } else if d < T::zero() {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((loss / n, Frames::from_vec(pred.rows, pred.cols, grad)))
}

pub fn l1_loss(pred: &MelSpectrogram, target: &MelSpectrogram) -> Result<f64> {
    if pred.frames != target.frames || pred.bins != target.bins {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.frames, pred.bins, target.frames, target.bins
        )));
    }
    let sum: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .sum();
    Ok(sum / pred.data.len() as f64)
}

use super::{lit, Frames, Real, Tensor};

/// Which statistics a batch-norm forward pass normalizes with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnStats {
    /// Statistics of the current batch (all frames of all utterances).
    Batch,
    /// Stored running statistics; used at inference and when fine-tuning.
    Running,
}

/// Per-channel batch normalization over frames.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub stats: BnStats,
    pub xhat: Frames<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            gamma: Tensor::filled(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            momentum,
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Frames<T>, stats: BnStats) -> (Frames<T>, BnCache<T>) {
        let c = self.channels();
        let (mean, var) = match stats {
            BnStats::Batch => {
                let n = lit::<T>(x.rows as f64);
                let mut mean = vec![T::zero(); c];
                for r in 0..x.rows {
                    for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                        *m = *m + v;
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / n);
                let mut var = vec![T::zero(); c];
                for r in 0..x.rows {
                    for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        *s = *s + (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s = *s / n);
                (mean, var)
            }
            BnStats::Running => (self.running_mean.data.clone(), self.running_var.data.clone()),
        };
        let eps = lit::<T>(self.eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Frames::zeros(x.rows, c);
        let mut y = Frames::zeros(x.rows, c);
        for r in 0..x.rows {
            let xr = x.row(r);
            let hr = xhat.row_mut(r);
            for j in 0..c {
                hr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let hr = xhat.row(r).to_vec();
            let yr = y.row_mut(r);
            for j in 0..c {
                yr[j] = hr[j] * self.gamma.data[j] + self.beta.data[j];
            }
        }
        (
            y,
            BnCache {
                stats,
                xhat,
                mean,
                var,
                inv_std,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &BnCache<T>,
        dy: &Frames<T>,
        ggamma: &mut Tensor<T>,
        gbeta: &mut Tensor<T>,
    ) -> Frames<T> {
        let c = self.channels();
        let rows = dy.rows;
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for r in 0..rows {
            let g = dy.row(r);
            let h = cache.xhat.row(r);
            for j in 0..c {
                sum_dy[j] = sum_dy[j] + g[j];
                sum_dy_xhat[j] = sum_dy_xhat[j] + g[j] * h[j];
            }
        }
        for j in 0..c {
            gbeta.data[j] = gbeta.data[j] + sum_dy[j];
            ggamma.data[j] = ggamma.data[j] + sum_dy_xhat[j];
        }
        let mut dx = Frames::zeros(rows, c);
        match cache.stats {
            BnStats::Running => {
                for r in 0..rows {
                    let g = dy.row(r);
                    let d = dx.row_mut(r);
                    for j in 0..c {
                        d[j] = g[j] * self.gamma.data[j] * cache.inv_std[j];
                    }
                }
            }
            BnStats::Batch => {
                let n = lit::<T>(rows as f64);
                for r in 0..rows {
                    let g = dy.row(r);
                    let h = cache.xhat.row(r);
                    let d = dx.row_mut(r);
                    for j in 0..c {
                        let k = self.gamma.data[j] * cache.inv_std[j] / n;
                        d[j] = k * (n * g[j] - sum_dy[j] - h[j] * sum_dy_xhat[j]);
                    }
                }
            }
        }
        dx
    }

    /// Exponential moving average of batch statistics:
    /// `running <- momentum * running + (1 - momentum) * batch`.
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        if cache.stats != BnStats::Batch {
            return;
        }
        let m = lit::<T>(self.momentum);
        let one_m = T::one() - m;
        for j in 0..self.channels() {
            self.running_mean.data[j] = m * self.running_mean.data[j] + one_m * cache.mean[j];
            self.running_var.data[j] = m * self.running_var.data[j] + one_m * cache.var[j];
        }
    }
}

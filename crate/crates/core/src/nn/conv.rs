use rand::Rng;

use super::{axpy, dot, offsets, Frames, Real, Tensor};

/// 1-D convolution over time. Weights are laid out `[kernel, in, out]` so the
/// innermost loops run over contiguous output channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv1d<T> {
    pub fn new<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        Conv1d {
            weight: Tensor::uniform(&[kernel, in_ch, out_ch], bound, rng),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
        }
    }

    /// Size-preserving convolution (odd kernel, stride 1).
    pub fn same<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut R) -> Self {
        Self::new(in_ch, out_ch, kernel, 1, kernel / 2, rng)
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.padding - self.kernel()) / self.stride + 1
    }

    pub fn out_lens(&self, lens: &[usize]) -> Vec<usize> {
        lens.iter().map(|&l| self.out_len(l)).collect()
    }

    #[inline]
    fn source_index(&self, to: usize, k: usize, len: usize) -> Option<usize> {
        let ti = (to * self.stride + k) as isize - self.padding as isize;
        (ti >= 0 && (ti as usize) < len).then_some(ti as usize)
    }

    pub fn forward(&self, x: &Frames<T>, lens: &[usize]) -> Frames<T> {
        let (k_size, in_ch, out_ch) = (self.kernel(), self.in_channels(), self.out_channels());
        debug_assert_eq!(x.cols, in_ch);
        let out_lens = self.out_lens(lens);
        let total: usize = out_lens.iter().sum();
        let mut y = Frames::zeros(total, out_ch);
        let w = &self.weight.data;
        for ((&ix, &ox), (&len, &olen)) in offsets(lens)
            .iter()
            .zip(&offsets(&out_lens))
            .zip(lens.iter().zip(&out_lens))
        {
            for to in 0..olen {
                let yr = y.row_mut(ox + to);
                yr.copy_from_slice(&self.bias.data);
                for k in 0..k_size {
                    let Some(ti) = self.source_index(to, k, len) else {
                        continue;
                    };
                    let xr = x.row(ix + ti);
                    for (i, &xv) in xr.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        let base = (k * in_ch + i) * out_ch;
                        axpy(yr, xv, &w[base..base + out_ch]);
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `gw`/`gb` and returns the input
    /// gradient.
    pub fn backward(
        &self,
        x: &Frames<T>,
        lens: &[usize],
        dy: &Frames<T>,
        gw: &mut Tensor<T>,
        gb: &mut Tensor<T>,
    ) -> Frames<T> {
        let (k_size, in_ch, out_ch) = (self.kernel(), self.in_channels(), self.out_channels());
        let out_lens = self.out_lens(lens);
        let mut dx = Frames::zeros(x.rows, in_ch);
        let w = &self.weight.data;
        for ((&ix, &ox), (&len, &olen)) in offsets(lens)
            .iter()
            .zip(&offsets(&out_lens))
            .zip(lens.iter().zip(&out_lens))
        {
            for to in 0..olen {
                let g = dy.row(ox + to);
                axpy(&mut gb.data, T::one(), g);
                for k in 0..k_size {
                    let Some(ti) = self.source_index(to, k, len) else {
                        continue;
                    };
                    let xr = x.row(ix + ti);
                    let dxr = dx.row_mut(ix + ti);
                    for i in 0..in_ch {
                        let base = (k * in_ch + i) * out_ch;
                        dxr[i] = dxr[i] + dot(g, &w[base..base + out_ch]);
                        let xv = xr[i];
                        if xv != T::zero() {
                            axpy(&mut gw.data[base..base + out_ch], xv, g);
                        }
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_padding_preserves_length_per_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv1d::<f64>::same(3, 4, 5, &mut rng);
        let x = Frames::from_vec(9, 3, (0..27).map(|v| v as f64).collect());
        let y = conv.forward(&x, &[2, 7]);
        assert_eq!((y.rows, y.cols), (9, 4));
    }

    #[test]
    fn strided_output_length_is_ceil_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv1d::<f64>::new(2, 2, 3, 2, 1, &mut rng);
        for t in 1..20 {
            assert_eq!(conv.out_len(t), t.div_ceil(2));
        }
    }

    #[test]
    fn segments_do_not_leak_across_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv1d::<f64>::same(2, 2, 5, &mut rng);
        let a = Frames::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Frames::from_vec(2, 2, vec![-1.0, 0.5, 2.0, 1.0]);
        let joint = Frames::from_vec(5, 2, [a.data.clone(), b.data.clone()].concat());
        let yj = conv.forward(&joint, &[3, 2]);
        let ya = conv.forward(&a, &[3]);
        let yb = conv.forward(&b, &[2]);
        assert_eq!(yj.data, [ya.data, yb.data].concat());
    }
}

use rand::Rng;

use super::{axpy, dot, Frames, Real, Tensor};

/// Frame-wise affine map, weights `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Linear {
            weight: Tensor::uniform(&[in_dim, out_dim], bound, rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn forward(&self, x: &Frames<T>) -> Frames<T> {
        let (in_dim, out_dim) = (self.in_dim(), self.out_dim());
        debug_assert_eq!(x.cols, in_dim);
        let mut y = Frames::zeros(x.rows, out_dim);
        let w = &self.weight.data;
        for r in 0..x.rows {
            let yr = y.row_mut(r);
            yr.copy_from_slice(&self.bias.data);
            for (i, &xv) in x.row(r).iter().enumerate() {
                if xv != T::zero() {
                    axpy(yr, xv, &w[i * out_dim..(i + 1) * out_dim]);
                }
            }
        }
        y
    }

    pub fn backward(
        &self,
        x: &Frames<T>,
        dy: &Frames<T>,
        gw: &mut Tensor<T>,
        gb: &mut Tensor<T>,
    ) -> Frames<T> {
        let (in_dim, out_dim) = (self.in_dim(), self.out_dim());
        let mut dx = Frames::zeros(x.rows, in_dim);
        let w = &self.weight.data;
        for r in 0..x.rows {
            let g = dy.row(r);
            axpy(&mut gb.data, T::one(), g);
            let xr = x.row(r);
            let dxr = dx.row_mut(r);
            for i in 0..in_dim {
                let wi = &w[i * out_dim..(i + 1) * out_dim];
                dxr[i] = dot(g, wi);
                if xr[i] != T::zero() {
                    axpy(&mut gw.data[i * out_dim..(i + 1) * out_dim], xr[i], g);
                }
            }
        }
        dx
    }
}

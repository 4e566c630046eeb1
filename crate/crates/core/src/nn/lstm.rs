use rand::Rng;

use super::{axpy, dot, offsets, sigmoid, Frames, Real, Tensor};

/// Uni-directional LSTM. Gate blocks are ordered input, forget, cell, output
/// inside the `4 * hidden` axis. Each segment of a ragged batch starts from a
/// zero state.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<T> {
    pub w_input: Tensor<T>,
    pub w_hidden: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    /// Activated gates per row: `[i, f, g, o]`, each `hidden` wide.
    gates: Frames<T>,
    cell: Frames<T>,
    cell_tanh: Frames<T>,
}

impl<T: Real> Lstm<T> {
    pub fn new<R: Rng>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Tensor::zeros(&[4 * hidden]);
        // forget-gate bias starts at 1
        for v in &mut bias.data[hidden..2 * hidden] {
            *v = T::one();
        }
        Lstm {
            w_input: Tensor::uniform(&[in_dim, 4 * hidden], bound, rng),
            w_hidden: Tensor::uniform(&[hidden, 4 * hidden], bound, rng),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.w_input.shape[0]
    }

    pub fn forward(&self, x: &Frames<T>, lens: &[usize]) -> (Frames<T>, LstmCache<T>) {
        let h = self.hidden();
        let g4 = 4 * h;
        let rows = x.rows;
        // input projection for every frame at once
        let mut gates = Frames::zeros(rows, g4);
        for r in 0..rows {
            let zr = gates.row_mut(r);
            zr.copy_from_slice(&self.bias.data);
            for (i, &xv) in x.row(r).iter().enumerate() {
                if xv != T::zero() {
                    axpy(zr, xv, &self.w_input.data[i * g4..(i + 1) * g4]);
                }
            }
        }
        let mut out = Frames::zeros(rows, h);
        let mut cell = Frames::zeros(rows, h);
        let mut cell_tanh = Frames::zeros(rows, h);
        for (&start, &len) in offsets(lens).iter().zip(lens) {
            for t in 0..len {
                let r = start + t;
                if t > 0 {
                    let prev = out.row(r - 1).to_vec();
                    let zr = gates.row_mut(r);
                    for (k, &hv) in prev.iter().enumerate() {
                        axpy(zr, hv, &self.w_hidden.data[k * g4..(k + 1) * g4]);
                    }
                }
                let zr = gates.row_mut(r);
                for j in 0..h {
                    zr[j] = sigmoid(zr[j]);
                    zr[h + j] = sigmoid(zr[h + j]);
                    zr[2 * h + j] = zr[2 * h + j].tanh();
                    zr[3 * h + j] = sigmoid(zr[3 * h + j]);
                }
                let zr = gates.row(r).to_vec();
                for j in 0..h {
                    let c_prev = if t > 0 { cell.row(r - 1)[j] } else { T::zero() };
                    let c = zr[h + j] * c_prev + zr[j] * zr[2 * h + j];
                    let ct = c.tanh();
                    cell.row_mut(r)[j] = c;
                    cell_tanh.row_mut(r)[j] = ct;
                    out.row_mut(r)[j] = zr[3 * h + j] * ct;
                }
            }
        }
        (
            out,
            LstmCache {
                gates,
                cell,
                cell_tanh,
            },
        )
    }

    /// Backpropagation through time. `dout` is the gradient w.r.t. every
    /// hidden output.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &Frames<T>,
        lens: &[usize],
        out: &Frames<T>,
        cache: &LstmCache<T>,
        dout: &Frames<T>,
        g_input: &mut Tensor<T>,
        g_hidden: &mut Tensor<T>,
        g_bias: &mut Tensor<T>,
    ) -> Frames<T> {
        let h = self.hidden();
        let g4 = 4 * h;
        let rows = x.rows;
        let mut dz = Frames::zeros(rows, g4);
        for (&start, &len) in offsets(lens).iter().zip(lens) {
            let mut dh_next = vec![T::zero(); h];
            let mut dc_next = vec![T::zero(); h];
            for t in (0..len).rev() {
                let r = start + t;
                let gr = cache.gates.row(r);
                let ct = cache.cell_tanh.row(r);
                let dzr = dz.row_mut(r);
                for j in 0..h {
                    let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let dh = dout.row(r)[j] + dh_next[j];
                    let d_o = dh * ct[j];
                    let dc = dh * o * (T::one() - ct[j] * ct[j]) + dc_next[j];
                    let c_prev = if t > 0 {
                        cache.cell.row(r - 1)[j]
                    } else {
                        T::zero()
                    };
                    dzr[j] = dc * g * i * (T::one() - i);
                    dzr[h + j] = dc * c_prev * f * (T::one() - f);
                    dzr[2 * h + j] = dc * i * (T::one() - g * g);
                    dzr[3 * h + j] = d_o * o * (T::one() - o);
                    dc_next[j] = dc * f;
                }
                let dzr = dz.row(r);
                for k in 0..h {
                    dh_next[k] = dot(dzr, &self.w_hidden.data[k * g4..(k + 1) * g4]);
                }
                if t > 0 {
                    let hp = out.row(r - 1);
                    for k in 0..h {
                        axpy(&mut g_hidden.data[k * g4..(k + 1) * g4], hp[k], dzr);
                    }
                }
            }
        }
        let in_dim = self.in_dim();
        let mut dx = Frames::zeros(rows, in_dim);
        for r in 0..rows {
            let dzr = dz.row(r);
            axpy(&mut g_bias.data, T::one(), dzr);
            let xr = x.row(r);
            let dxr = dx.row_mut(r);
            for i in 0..in_dim {
                let wi = &self.w_input.data[i * g4..(i + 1) * g4];
                dxr[i] = dot(dzr, wi);
                if xr[i] != T::zero() {
                    axpy(&mut g_input.data[i * g4..(i + 1) * g4], xr[i], dzr);
                }
            }
        }
        dx
    }
}

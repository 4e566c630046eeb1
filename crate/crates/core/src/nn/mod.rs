//! Minimal dense building blocks with hand-written backward passes.
//!
//! Everything here is generic over [`Real`] so the same code runs in `f32`
//! for training and in `f64` for finite-difference gradient verification.
//!
//! Sequences are stored time-major: one row per frame, one column per
//! channel. A batch of utterances is a single [`Frames`] matrix holding the
//! rows of every utterance back to back, together with the per-utterance
//! lengths. Layers that look across time (convolution, LSTM) respect the
//! segment boundaries; frame-wise layers simply see more rows.

mod conv;
mod linear;
mod lstm;
mod norm;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use conv::Conv1d;
pub use linear::Linear;
pub use lstm::{Lstm, LstmCache};
pub use norm::{BatchNorm, BnCache, BnStats};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
}

#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable")
}

/// A named n-d array of parameters or optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| lit::<T>(rng.gen_range(-bound..=bound)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| lit::<U>(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let v = v.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum()
    }
}

/// Row-major `rows x cols` matrix of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Frames<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Frames<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Frames {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "frame buffer size");
        Frames { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Frames {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate column blocks row by row.
    pub fn hcat(parts: &[&Frames<T>]) -> Self {
        let rows = parts[0].rows;
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                debug_assert_eq!(p.rows, rows);
                data.extend_from_slice(p.row(r));
            }
        }
        Frames { rows, cols, data }
    }

    /// Inverse of [`Frames::hcat`] for the first `left` columns.
    pub fn split_cols(&self, left: usize) -> (Frames<T>, Frames<T>) {
        let right = self.cols - left;
        let mut a = Vec::with_capacity(self.rows * left);
        let mut b = Vec::with_capacity(self.rows * right);
        for r in 0..self.rows {
            let row = self.row(r);
            a.extend_from_slice(&row[..left]);
            b.extend_from_slice(&row[left..]);
        }
        (
            Frames::from_vec(self.rows, left, a),
            Frames::from_vec(self.rows, right, b),
        )
    }
}

/// Start offsets of each segment in a ragged batch.
pub fn offsets(lens: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    lens.iter()
        .map(|&l| {
            let o = acc;
            acc += l;
            o
        })
        .collect()
}

#[inline]
pub(crate) fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + x * y;
    }
    s
}

pub fn relu<T: Real>(x: &Frames<T>) -> Frames<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Real>(out: &Frames<T>, dy: &Frames<T>) -> Frames<T> {
    let data = out
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Frames::from_vec(out.rows, out.cols, data)
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

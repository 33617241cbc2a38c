//! Dense `f64` tensors and a tape-based reverse-mode autodiff engine.
//!
//! [`Tensor`] is a plain value (shape plus row-major buffer). Differentiable
//! computation happens on a [`Tape`]: tensors are pushed as leaves, every
//! operation appends a node, and [`Tape::backward`] replays the nodes in
//! reverse to accumulate gradients into the leaves that asked for them.

mod conv;
pub mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_piecewise, grad_check_sampled, GradCheckReport};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Row-major dense tensor of rank 1 to 4.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::Dimension(format!(
                "tensor rank must be 1..=4, got {}",
                shape.len()
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {numel} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel]).expect("valid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, (0..numel).map(f).collect()).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(C, H, W)` of a rank-3 image tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Dimension(format!(
                "expected a C×H×W tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Tensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Crop a `C×H×W` tensor to `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor> {
        let (c, hh, ww) = self.chw()?;
        if y0 + h > hh || x0 + w > ww {
            return Err(Error::Dimension(format!(
                "crop {h}×{w} at ({y0},{x0}) exceeds {hh}×{ww}"
            )));
        }
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in y0..y0 + h {
                let row = (ch * hh + y) * ww;
                out.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            }
        }
        Tensor::new(&[c, h, w], out)
    }

    /// Mirror a `C×H×W` tensor left to right.
    pub fn flip_horizontal(&self) -> Result<Tensor> {
        let (c, h, w) = self.chw()?;
        let mut out = self.data.clone();
        for row in 0..c * h {
            out[row * w..(row + 1) * w].reverse();
        }
        Tensor::new(&[c, h, w], out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! All arithmetic runs in f64; tensors tagged [`DType::F32`] have every op
//! result rounded through f32 so single-precision behaviour is deterministic
//! and reproducible bit-for-bit. Any op that produces a NaN or Inf fails with
//! [`TensorError::NonFinite`] instead of propagating the value.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, grad_check_multi};
pub use tape::{Tape, Var};

use serde::{Deserialize, Serialize};

/// Scalar precision of a tensor. Storage is always f64; `F32` rounds every
/// op result to f32 precision.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl DType {
    pub(crate) fn round(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::F64 => v,
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DType::F32 => write!(f, "f32"),
            DType::F64 => write!(f, "f64"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({lhs:?} vs {rhs:?})")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: dtype mismatch ({lhs} vs {rhs})")]
    DTypeMismatch {
        op: &'static str,
        lhs: DType,
        rhs: DType,
    },
    #[error("{op}: expected rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("split: {cols} columns not divisible into {parts} parts")]
    InvalidSplit { cols: usize, parts: usize },
    #[error("backward: seed must be a scalar, got shape {shape:?}")]
    SeedNotScalar { shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("{0}")]
    Invalid(String),
}

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    /// Filled in by the training loop after a backward pass.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(data: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        let data: Vec<f64> = data.into_iter().map(|v| dtype.round(v)).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Tensor {
            dtype,
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        Tensor {
            dtype,
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64, dtype: DType) -> Self {
        Tensor {
            dtype,
            shape: shape.to_vec(),
            data: vec![dtype.round(value); shape.iter().product()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64, dtype: DType) -> Self {
        Tensor::full(&[1], value, dtype)
    }

    pub fn eye(n: usize, dtype: DType) -> Self {
        let mut t = Tensor::zeros(&[n, n], dtype);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set(&mut self, idx: usize, value: f64) {
        self.data[idx] = self.dtype.round(value);
    }

    /// Same data viewed under a different shape. Fails if the element count differs.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::LengthMismatch {
                len: self.data.len(),
                shape: shape.to_vec(),
            });
        }
        let mut t = self.clone();
        t.shape = shape.to_vec();
        Ok(t)
    }

    pub(crate) fn new_unchecked(data: Vec<f64>, shape: Vec<usize>, dtype: DType) -> Self {
        Tensor {
            dtype,
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }
}

/// Row-major matrix product into a caller-provided zeroed buffer.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Standard normal CDF via erf; the exact form used by GELU.
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub(crate) fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

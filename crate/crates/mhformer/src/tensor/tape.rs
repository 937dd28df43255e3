//! Operation tape for reverse-mode differentiation.
//!
//! Every op records its inputs and output value; [`Tape::backward`] replays
//! the records in reverse execution order, visiting each exactly once, and
//! accumulates adjoints additively into every reachable leaf.

use super::{matmul_raw, norm_cdf, norm_pdf, transpose_raw, DType, Tensor, TensorError};

/// Handle to a tensor living on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Transpose { x: usize },
    Reshape { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    AddBias { x: usize, b: usize },
    RowSums { x: usize },
    SumAll { x: usize },
    Sqrt { x: usize },
    Gelu { x: usize },
    SoftmaxRows { x: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: f64 },
    ConcatCols { xs: Vec<usize> },
    SplitCols { x: usize, index: usize, parts: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    /// True when a `requires_grad` leaf is reachable from this node.
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Register an input tensor. Its `requires_grad` flag decides whether a
    /// gradient is accumulated for it.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, t.requires_grad)
    }

    /// Register a non-differentiable input.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let mut t = t.clone();
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Round for the dtype, check finiteness, and record the node.
    fn store(
        &mut self,
        op_name: &'static str,
        mut data: Vec<f64>,
        shape: Vec<usize>,
        dtype: DType,
        op: Op,
        tracked: bool,
    ) -> Result<Var, TensorError> {
        if dtype == DType::F32 {
            for v in data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        Ok(self.push(Tensor::new_unchecked(data, shape, dtype), op, tracked))
    }

    fn check_dtypes(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<DType, TensorError> {
        let (da, db) = (self.value(a).dtype(), self.value(b).dtype());
        if da != db {
            return Err(TensorError::DTypeMismatch { op, lhs: da, rhs: db });
        }
        Ok(da)
    }

    fn rank2<'t>(&'t self, op: &'static str, v: Var) -> Result<&'t Tensor, TensorError> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(TensorError::RankMismatch {
                op,
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    // ── Forward ops ──────────────────────────────────────────────────

    /// `a[p×q] · b[q×r] -> [p×r]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let dtype = self.check_dtypes("matmul", a, b)?;
        let ta = self.rank2("matmul", a)?;
        let (p, q) = (ta.shape()[0], ta.shape()[1]);
        let tb = self.rank2("matmul", b)?;
        if tb.shape()[0] != q {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let r = tb.shape()[1];
        let mut out = vec![0.0; p * r];
        matmul_raw(self.value(a).data(), self.value(b).data(), p, q, r, &mut out);
        let tracked = self.nodes[a.0].tracked || self.nodes[b.0].tracked;
        self.store("matmul", out, vec![p, r], dtype, Op::Matmul { a: a.0, b: b.0 }, tracked)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.rank2("transpose", x)?;
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let out = transpose_raw(t.data(), rows, cols);
        let (dtype, tracked) = (t.dtype(), self.nodes[x.0].tracked);
        self.store("transpose", out, vec![cols, rows], dtype, Op::Transpose { x: x.0 }, tracked)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(TensorError::LengthMismatch {
                len: t.numel(),
                shape: shape.to_vec(),
            });
        }
        let (data, dtype, tracked) = (t.data().to_vec(), t.dtype(), self.nodes[x.0].tracked);
        self.store("reshape", data, shape.to_vec(), dtype, Op::Reshape { x: x.0 }, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_elementwise("add", a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_elementwise("sub", a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_elementwise("mul", a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    fn zip_elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let dtype = self.check_dtypes(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        let tracked = self.nodes[a.0].tracked || self.nodes[b.0].tracked;
        self.store(name, out, shape, dtype, op, tracked)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let t = self.value(x);
        let out: Vec<f64> = t.data().iter().map(|&v| v * c).collect();
        let (shape, dtype, tracked) = (t.shape().to_vec(), t.dtype(), self.nodes[x.0].tracked);
        self.store("scale", out, shape, dtype, Op::Scale { x: x.0, c }, tracked)
    }

    /// `x[n×d] + b[d]`, bias broadcast over rows. The only implicit broadcast.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let dtype = self.check_dtypes("add_bias", x, b)?;
        let tx = self.rank2("add_bias", x)?;
        let (n, d) = (tx.shape()[0], tx.shape()[1]);
        let tb = self.value(b);
        if tb.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.value(x).shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                out.push(self.value(x).data()[i * d + j] + self.value(b).data()[j]);
            }
        }
        let tracked = self.nodes[x.0].tracked || self.nodes[b.0].tracked;
        self.store("add_bias", out, vec![n, d], dtype, Op::AddBias { x: x.0, b: b.0 }, tracked)
    }

    /// `x[n×d] -> [n]`, summing each row.
    pub fn row_sums(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.rank2("row_sums", x)?;
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let out: Vec<f64> = (0..n).map(|i| t.data()[i * d..(i + 1) * d].iter().sum()).collect();
        let (dtype, tracked) = (t.dtype(), self.nodes[x.0].tracked);
        self.store("row_sums", out, vec![n], dtype, Op::RowSums { x: x.0 }, tracked)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let s: f64 = t.data().iter().sum();
        let (dtype, tracked) = (t.dtype(), self.nodes[x.0].tracked);
        self.store("sum_all", vec![s], vec![1], dtype, Op::SumAll { x: x.0 }, tracked)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let out: Vec<f64> = t.data().iter().map(|&v| v.sqrt()).collect();
        let (shape, dtype, tracked) = (t.shape().to_vec(), t.dtype(), self.nodes[x.0].tracked);
        self.store("sqrt", out, shape, dtype, Op::Sqrt { x: x.0 }, tracked)
    }

    /// Elementwise `x · Φ(x)` with the exact Gaussian CDF.
    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let out: Vec<f64> = t.data().iter().map(|&v| v * norm_cdf(v)).collect();
        let (shape, dtype, tracked) = (t.shape().to_vec(), t.dtype(), self.nodes[x.0].tracked);
        self.store("gelu", out, shape, dtype, Op::Gelu { x: x.0 }, tracked)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.rank2("softmax_rows", x)?;
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &t.data()[i * d..(i + 1) * d];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in out[i * d..(i + 1) * d].iter_mut() {
                *o /= sum;
            }
        }
        let (dtype, tracked) = (t.dtype(), self.nodes[x.0].tracked);
        self.store("softmax_rows", out, vec![n, d], dtype, Op::SoftmaxRows { x: x.0 }, tracked)
    }

    /// Per-row mean/variance normalisation over the last axis, then affine.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let dtype = self.check_dtypes("layer_norm", x, gain)?;
        self.check_dtypes("layer_norm", x, bias)?;
        let tx = self.rank2("layer_norm", x)?;
        let (n, d) = (tx.shape()[0], tx.shape()[1]);
        if self.value(gain).shape() != [d] || self.value(bias).shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: vec![n, d],
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &self.value(x).data()[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                let xhat = (row[j] - mean) * inv_std;
                out[i * d + j] = xhat * self.value(gain).data()[j] + self.value(bias).data()[j];
            }
        }
        let tracked = self.nodes[x.0].tracked
            || self.nodes[gain.0].tracked
            || self.nodes[bias.0].tracked;
        self.store(
            "layer_norm",
            out,
            vec![n, d],
            dtype,
            Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, eps },
            tracked,
        )
    }

    /// Concatenate rank-2 tensors along the last axis.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        assert!(!xs.is_empty(), "concat_cols: empty input list");
        let dtype = self.value(xs[0]).dtype();
        let n = self.rank2("concat_cols", xs[0])?.shape()[0];
        let mut total = 0;
        for &v in xs {
            let t = self.rank2("concat_cols", v)?;
            if t.dtype() != dtype {
                return Err(TensorError::DTypeMismatch {
                    op: "concat_cols",
                    lhs: dtype,
                    rhs: t.dtype(),
                });
            }
            if t.shape()[0] != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![n],
                    rhs: t.shape().to_vec(),
                });
            }
            total += t.shape()[1];
        }
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &v in xs {
                let c = self.value(v).shape()[1];
                out.extend_from_slice(&self.value(v).data()[i * c..(i + 1) * c]);
            }
        }
        let tracked = xs.iter().any(|v| self.nodes[v.0].tracked);
        self.store(
            "concat_cols",
            out,
            vec![n, total],
            dtype,
            Op::ConcatCols { xs: xs.iter().map(|v| v.0).collect() },
            tracked,
        )
    }

    /// Split a rank-2 tensor into `parts` equal column chunks.
    pub fn split_cols(&mut self, x: Var, parts: usize) -> Result<Vec<Var>, TensorError> {
        let t = self.rank2("split_cols", x)?;
        let (n, c) = (t.shape()[0], t.shape()[1]);
        if parts == 0 || c % parts != 0 {
            return Err(TensorError::InvalidSplit { cols: c, parts });
        }
        let w = c / parts;
        let tracked = self.nodes[x.0].tracked;
        let dtype = t.dtype();
        let mut outs = Vec::with_capacity(parts);
        for p in 0..parts {
            let mut data = Vec::with_capacity(n * w);
            for i in 0..n {
                let row = &self.value(x).data()[i * c..(i + 1) * c];
                data.extend_from_slice(&row[p * w..(p + 1) * w]);
            }
            outs.push(self.store(
                "split_cols",
                data,
                vec![n, w],
                dtype,
                Op::SplitCols { x: x.0, index: p, parts },
                tracked,
            )?);
        }
        Ok(outs)
    }

    /// `x·w + b` broadcast: the standard affine layer.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar seed. Adjoints accumulate additively; each
    /// recorded op is visited exactly once, in reverse execution order.
    pub fn backward(&mut self, seed: Var) -> Result<(), TensorError> {
        let seed_t = self.value(seed);
        if !seed_t.is_scalar() {
            return Err(TensorError::SeedNotScalar { shape: seed_t.shape().to_vec() });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[seed.0] = Some(vec![1.0]);

        for i in (0..=seed.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            self.apply_vjp(i, &op, &g);
            // Leaves keep their accumulated adjoint for retrieval.
            if matches!(op, Op::Leaf) {
                self.grads[i] = Some(g);
            }
        }
        Ok(())
    }

    /// Gradient of the last backward pass with respect to a leaf. Returns
    /// zeros for a `requires_grad` leaf the seed never reached, `None` for
    /// untracked vars.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.value.requires_grad {
            return None;
        }
        let data = match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; node.value.numel()],
        };
        Some(Tensor::new_unchecked(
            data,
            node.value.shape().to_vec(),
            node.value.dtype(),
        ))
    }

    fn accumulate(&mut self, idx: usize, delta: &[f64]) {
        if !self.nodes[idx].tracked {
            return;
        }
        match &mut self.grads[idx] {
            Some(g) => {
                for (gv, dv) in g.iter_mut().zip(delta) {
                    *gv += dv;
                }
            }
            None => self.grads[idx] = Some(delta.to_vec()),
        }
    }

    fn apply_vjp(&mut self, out: usize, op: &Op, g: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (p, q) = {
                    let s = self.nodes[a].value.shape();
                    (s[0], s[1])
                };
                let r = self.nodes[b].value.shape()[1];
                // dA = g · Bᵀ
                let bt = transpose_raw(self.nodes[b].value.data(), q, r);
                let mut da = vec![0.0; p * q];
                matmul_raw(g, &bt, p, r, q, &mut da);
                self.accumulate(a, &da);
                // dB = Aᵀ · g
                let at = transpose_raw(self.nodes[a].value.data(), p, q);
                let mut db = vec![0.0; q * r];
                matmul_raw(&at, g, q, p, r, &mut db);
                self.accumulate(b, &db);
            }
            Op::Transpose { x } => {
                let s = self.nodes[out].value.shape();
                let dx = transpose_raw(g, s[0], s[1]);
                self.accumulate(x, &dx);
            }
            Op::Reshape { x } => self.accumulate(x, g),
            Op::Add { a, b } => {
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            Op::Sub { a, b } => {
                self.accumulate(a, g);
                let neg: Vec<f64> = g.iter().map(|&v| -v).collect();
                self.accumulate(b, &neg);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> =
                    g.iter().zip(self.nodes[b].value.data()).map(|(&gv, &bv)| gv * bv).collect();
                self.accumulate(a, &da);
                let db: Vec<f64> =
                    g.iter().zip(self.nodes[a].value.data()).map(|(&gv, &av)| gv * av).collect();
                self.accumulate(b, &db);
            }
            Op::Scale { x, c } => {
                let dx: Vec<f64> = g.iter().map(|&v| v * c).collect();
                self.accumulate(x, &dx);
            }
            Op::AddBias { x, b } => {
                self.accumulate(x, g);
                let d = self.nodes[b].value.numel();
                let mut db = vec![0.0; d];
                for (i, &gv) in g.iter().enumerate() {
                    db[i % d] += gv;
                }
                self.accumulate(b, &db);
            }
            Op::RowSums { x } => {
                let s = self.nodes[x].value.shape();
                let (n, d) = (s[0], s[1]);
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    dx[i * d..(i + 1) * d].fill(g[i]);
                }
                self.accumulate(x, &dx);
            }
            Op::SumAll { x } => {
                let dx = vec![g[0]; self.nodes[x].value.numel()];
                self.accumulate(x, &dx);
            }
            Op::Sqrt { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[out].value.data())
                    .map(|(&gv, &y)| gv * 0.5 / y)
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::Gelu { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[x].value.data())
                    .map(|(&gv, &v)| gv * (norm_cdf(v) + v * norm_pdf(v)))
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::SoftmaxRows { x } => {
                let s = self.nodes[out].value.shape();
                let (n, d) = (s[0], s[1]);
                let y = self.nodes[out].value.data();
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    let (ys, gs) = (&y[i * d..(i + 1) * d], &g[i * d..(i + 1) * d]);
                    let dot: f64 = ys.iter().zip(gs).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..d {
                        dx[i * d + j] = ys[j] * (gs[j] - dot);
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let s = self.nodes[x].value.shape();
                let (n, d) = (s[0], s[1]);
                let xd = self.nodes[x].value.data();
                let gd = self.nodes[gain].value.data();
                let mut dx = vec![0.0; n * d];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for i in 0..n {
                    let row = &xd[i * d..(i + 1) * d];
                    let grow = &g[i * d..(i + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var =
                        row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    // dL/dxhat_j = g_j * gain_j; reduce the two row means.
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv_std;
                        let dxh = grow[j] * gd[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat;
                        dgain[j] += grow[j] * xhat;
                        dbias[j] += grow[j];
                    }
                    mean_dxhat /= d as f64;
                    mean_dxhat_xhat /= d as f64;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv_std;
                        let dxh = grow[j] * gd[j];
                        dx[i * d + j] = inv_std * (dxh - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gain, &dgain);
                self.accumulate(bias, &dbias);
            }
            Op::ConcatCols { ref xs } => {
                let n = self.nodes[out].value.shape()[0];
                let total = self.nodes[out].value.shape()[1];
                let mut offset = 0;
                for &xid in xs {
                    let c = self.nodes[xid].value.shape()[1];
                    let mut dx = Vec::with_capacity(n * c);
                    for i in 0..n {
                        dx.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                    }
                    self.accumulate(xid, &dx);
                    offset += c;
                }
            }
            Op::SplitCols { x, index, parts } => {
                let s = self.nodes[x].value.shape();
                let (n, c) = (s[0], s[1]);
                let w = c / parts;
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    dx[i * c + index * w..i * c + (index + 1) * w]
                        .copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.accumulate(x, &dx);
            }
        }
    }
}

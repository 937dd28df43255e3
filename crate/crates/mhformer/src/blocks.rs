//! Transformer building blocks: multi-head self-attention, the three-input
//! multi-head cross-attention, the two-layer GELU MLP, and the pre-norm
//! residual encoder layer.
//!
//! Weight structs are generic over the leaf type so the same shapes serve as
//! plain [`Tensor`] stores and as tape-bound [`Var`] mirrors during a forward
//! pass.

use rand_chacha::ChaCha8Rng;

use crate::tensor::{Tape, TensorError, Var};

#[derive(Clone, Debug)]
pub struct LayerNormParams<T> {
    pub gain: T,
    pub bias: T,
}

impl<T> LayerNormParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LayerNormParams<U> {
        LayerNormParams { gain: f(&self.gain), bias: f(&self.bias) }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'static str, &'a T)) {
        f("gain", &self.gain);
        f("bias", &self.bias);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&'static str, &mut T)) {
        f("gain", &mut self.gain);
        f("bias", &mut self.bias);
    }
}

/// Q/K/V/O projections with biases and the head count `h` (`h | d`).
#[derive(Clone, Debug)]
pub struct AttentionWeights<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
    pub b_q: T,
    pub b_k: T,
    pub b_v: T,
    pub b_o: T,
    pub heads: usize,
}

impl<T> AttentionWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttentionWeights<U> {
        AttentionWeights {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            w_o: f(&self.w_o),
            b_q: f(&self.b_q),
            b_k: f(&self.b_k),
            b_v: f(&self.b_v),
            b_o: f(&self.b_o),
            heads: self.heads,
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'static str, &'a T)) {
        f("w_q", &self.w_q);
        f("b_q", &self.b_q);
        f("w_k", &self.w_k);
        f("b_k", &self.b_k);
        f("w_v", &self.w_v);
        f("b_v", &self.b_v);
        f("w_o", &self.w_o);
        f("b_o", &self.b_o);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&'static str, &mut T)) {
        f("w_q", &mut self.w_q);
        f("b_q", &mut self.b_q);
        f("w_k", &mut self.w_k);
        f("b_k", &mut self.b_k);
        f("w_v", &mut self.w_v);
        f("b_v", &mut self.b_v);
        f("w_o", &mut self.w_o);
        f("b_o", &mut self.b_o);
    }
}

/// Two linear layers around a GELU.
#[derive(Clone, Debug)]
pub struct MlpWeights<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

impl<T> MlpWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> MlpWeights<U> {
        MlpWeights { w1: f(&self.w1), b1: f(&self.b1), w2: f(&self.w2), b2: f(&self.b2) }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'static str, &'a T)) {
        f("w1", &self.w1);
        f("b1", &self.b1);
        f("w2", &self.w2);
        f("b2", &self.b2);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&'static str, &mut T)) {
        f("w1", &mut self.w1);
        f("b1", &mut self.b1);
        f("w2", &mut self.w2);
        f("b2", &mut self.b2);
    }
}

/// One pre-norm residual encoder layer: attention then MLP.
#[derive(Clone, Debug)]
pub struct EncoderLayerWeights<T> {
    pub ln1: LayerNormParams<T>,
    pub attn: AttentionWeights<T>,
    pub ln2: LayerNormParams<T>,
    pub mlp: MlpWeights<T>,
}

impl<T> EncoderLayerWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderLayerWeights<U> {
        EncoderLayerWeights {
            ln1: self.ln1.map(f),
            attn: self.attn.map(f),
            ln2: self.ln2.map(f),
            mlp: self.mlp.map(f),
        }
    }
}

/// Per-call evaluation context: LayerNorm epsilon and (optional) attention
/// probability dropout during training.
pub struct BlockCtx<'r> {
    pub ln_eps: f64,
    pub attn_dropout: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl BlockCtx<'_> {
    /// Inference context: dropout off.
    pub fn eval(ln_eps: f64) -> BlockCtx<'static> {
        BlockCtx { ln_eps, attn_dropout: 0.0, rng: None }
    }
}

fn maybe_dropout(tape: &mut Tape, probs: Var, ctx: &mut BlockCtx) -> Result<Var, TensorError> {
    if ctx.attn_dropout <= 0.0 {
        return Ok(probs);
    }
    let rng = ctx
        .rng
        .as_deref_mut()
        .expect("attention dropout requires an rng in the block context");
    let t = tape.value(probs);
    let (shape, dtype) = (t.shape().to_vec(), t.dtype());
    let keep = 1.0 - ctx.attn_dropout;
    let mask: Vec<f64> = (0..t.numel())
        .map(|_| if rand::Rng::gen::<f64>(rng) < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = crate::tensor::Tensor::from_vec(mask, &shape, dtype)?;
    let mask = tape.constant(&mask);
    tape.mul(probs, mask)
}

/// Scaled dot-product attention over pre-projected q/k/v, one softmax per
/// head, scaling by the per-head dimension. Returns the concatenated head
/// outputs and the per-head attention probability matrices.
fn heads_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    ctx: &mut BlockCtx,
) -> Result<(Var, Vec<Var>), TensorError> {
    let d = tape.value(q).shape()[1];
    if heads == 0 || d % heads != 0 {
        return Err(TensorError::Invalid(format!(
            "attention: {heads} heads do not divide dimension {d}"
        )));
    }
    let d_head = d / heads;
    let qs = tape.split_cols(q, heads)?;
    let ks = tape.split_cols(k, heads)?;
    let vs = tape.split_cols(v, heads)?;
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let kt = tape.transpose(ks[h])?;
        let scores = tape.matmul(qs[h], kt)?;
        let scaled = tape.scale(scores, 1.0 / (d_head as f64).sqrt())?;
        let p = tape.softmax_rows(scaled)?;
        probs.push(p);
        let p = maybe_dropout(tape, p, ctx)?;
        outs.push(tape.matmul(p, vs[h])?);
    }
    let cat = tape.concat_cols(&outs)?;
    Ok((cat, probs))
}

/// Multi-head self-attention: q, k, v all projected from `x`.
pub fn msa(
    tape: &mut Tape,
    x: Var,
    w: &AttentionWeights<Var>,
    ctx: &mut BlockCtx,
) -> Result<Var, TensorError> {
    Ok(msa_with_maps(tape, x, w, ctx)?.0)
}

/// [`msa`] also returning the per-head attention maps.
pub fn msa_with_maps(
    tape: &mut Tape,
    x: Var,
    w: &AttentionWeights<Var>,
    ctx: &mut BlockCtx,
) -> Result<(Var, Vec<Var>), TensorError> {
    let q = tape.linear(x, w.w_q, w.b_q)?;
    let k = tape.linear(x, w.w_k, w.b_k)?;
    let v = tape.linear(x, w.w_v, w.b_v)?;
    let (cat, probs) = heads_attention(tape, q, k, v, w.heads, ctx)?;
    let out = tape.linear(cat, w.w_o, w.b_o)?;
    Ok((out, probs))
}

/// Multi-head cross-attention with three distinct sources: queries from
/// `q_src`, keys from `k_src`, values from `v_src`. With all three equal it
/// reproduces [`msa`] exactly.
pub fn mca(
    tape: &mut Tape,
    q_src: Var,
    k_src: Var,
    v_src: Var,
    w: &AttentionWeights<Var>,
    ctx: &mut BlockCtx,
) -> Result<Var, TensorError> {
    let (n, d) = {
        let t = tape.value(q_src);
        (t.shape()[0], t.shape()[1])
    };
    for src in [k_src, v_src] {
        let s = tape.value(src).shape();
        if s != [n, d] {
            return Err(TensorError::ShapeMismatch {
                op: "mca",
                lhs: vec![n, d],
                rhs: s.to_vec(),
            });
        }
    }
    let q = tape.linear(q_src, w.w_q, w.b_q)?;
    let k = tape.linear(k_src, w.w_k, w.b_k)?;
    let v = tape.linear(v_src, w.w_v, w.b_v)?;
    let (cat, _) = heads_attention(tape, q, k, v, w.heads, ctx)?;
    tape.linear(cat, w.w_o, w.b_o)
}

/// `GELU(x·w1 + b1)·w2 + b2`
pub fn mlp(tape: &mut Tape, x: Var, w: &MlpWeights<Var>) -> Result<Var, TensorError> {
    let h = tape.linear(x, w.w1, w.b1)?;
    let a = tape.gelu(h)?;
    tape.linear(a, w.w2, w.b2)
}

/// Pre-norm residual layer: `y = x + msa(LN(x)); out = y + mlp(LN(y))`.
pub fn encoder_layer(
    tape: &mut Tape,
    x: Var,
    w: &EncoderLayerWeights<Var>,
    ctx: &mut BlockCtx,
) -> Result<Var, TensorError> {
    Ok(encoder_layer_with_maps(tape, x, w, ctx)?.0)
}

/// [`encoder_layer`] also returning the per-head attention maps.
pub fn encoder_layer_with_maps(
    tape: &mut Tape,
    x: Var,
    w: &EncoderLayerWeights<Var>,
    ctx: &mut BlockCtx,
) -> Result<(Var, Vec<Var>), TensorError> {
    let n1 = tape.layer_norm(x, w.ln1.gain, w.ln1.bias, ctx.ln_eps)?;
    let (a, maps) = msa_with_maps(tape, n1, &w.attn, ctx)?;
    let y = tape.add(x, a)?;
    let n2 = tape.layer_norm(y, w.ln2.gain, w.ln2.bias, ctx.ln_eps)?;
    let m = mlp(tape, n2, &w.mlp)?;
    Ok((tape.add(y, m)?, maps))
}

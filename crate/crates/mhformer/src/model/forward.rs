//! The three-stage forward pass: spatial hypothesis generation, temporal
//! embedding, self-hypothesis refinement, cross-hypothesis interaction, and
//! the regression head.

use crate::blocks::{self, BlockCtx};
use crate::tensor::{Tape, Tensor, TensorError, Var};

use super::config::ModelConfig;
use super::params::ModelParams;
use super::ModelError;

/// Intermediate handles produced by a full forward pass.
pub struct ForwardTrace {
    /// Predicted pose sequence, shape `[N, J, 3]`.
    pub seq: Var,
    /// Per-hypothesis streams after the last cross-attention residual, just
    /// before the final aggregation; shape `[N, C]` each.
    pub hyp_taps: Vec<Var>,
    /// First-layer spatial attention maps, `[hypothesis][head]`, each `(J·2)×(J·2)`.
    pub spatial_maps: Vec<Vec<Var>>,
    /// First-layer temporal attention maps from the refinement stage,
    /// `[hypothesis][head]`, each `N×N`.
    pub temporal_maps: Vec<Vec<Var>>,
}

fn check_input(tape: &Tape, x2d: Var, cfg: &ModelConfig) -> Result<(), ModelError> {
    let shape = tape.value(x2d).shape();
    if shape != [cfg.frames, cfg.joints, 2] {
        return Err(ModelError::Input(format!(
            "expected 2D input of shape [{}, {}, 2], got {:?}",
            cfg.frames, cfg.joints, shape
        )));
    }
    Ok(())
}

/// Spatial stage. Returns the M hypothesis matrices of shape `(J·2)×N` plus
/// the first-layer attention maps of every stack.
pub fn mhg_forward(
    tape: &mut Tape,
    x2d: Var,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    ctx: &mut BlockCtx,
) -> Result<(Vec<Var>, Vec<Vec<Var>>), ModelError> {
    check_input(tape, x2d, cfg)?;
    // Per-frame (x, y) coordinates of all joints as one column per frame.
    let flat = tape.reshape(x2d, &[cfg.frames, cfg.input_rows()])?;
    let xbar = tape.transpose(flat)?;

    let mut hyps = Vec::with_capacity(cfg.hypotheses);
    let mut maps = Vec::with_capacity(cfg.hypotheses);
    let mut carry = xbar;
    for stack in &params.mhg {
        let x_m = if cfg.cascade_mhg { carry } else { xbar };
        let normed = tape.layer_norm(x_m, stack.ln_in.gain, stack.ln_in.bias, cfg.ln_eps)?;
        let mut h = tape.add(normed, stack.pos)?;
        let mut first_maps = Vec::new();
        for (l, layer) in stack.layers.iter().enumerate() {
            let (out, layer_maps) = blocks::encoder_layer_with_maps(tape, h, layer, ctx)?;
            h = out;
            if l == 0 {
                first_maps = layer_maps;
            }
        }
        let out_normed = tape.layer_norm(h, stack.ln_out.gain, stack.ln_out.bias, cfg.ln_eps)?;
        let out = tape.add(x_m, out_normed)?;
        hyps.push(out);
        maps.push(first_maps);
        carry = out;
    }
    Ok((hyps, maps))
}

/// Transpose each hypothesis to frame-major order, embed to `C` channels,
/// and add the frame position embedding.
pub fn temporal_embed(
    tape: &mut Tape,
    hyps: &[Var],
    params: &ModelParams<Var>,
    _cfg: &ModelConfig,
) -> Result<Vec<Var>, TensorError> {
    hyps.iter()
        .zip(&params.embed)
        .map(|(&h, e)| {
            let t = tape.transpose(h)?;
            let z = tape.linear(t, e.w, e.b)?;
            tape.add(z, e.pos)
        })
        .collect()
}

/// Self-hypothesis refinement: per-hypothesis self-attention, then the
/// merge/partition mixing MLP. Also returns first-layer attention maps.
pub fn shr_forward(
    tape: &mut Tape,
    mut z: Vec<Var>,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    ctx: &mut BlockCtx,
) -> Result<(Vec<Var>, Vec<Vec<Var>>), TensorError> {
    let mut first_maps: Vec<Vec<Var>> = Vec::new();
    for (l, layer) in params.shr.iter().enumerate() {
        let mut refined = Vec::with_capacity(z.len());
        for (&zm, block) in z.iter().zip(&layer.blocks) {
            let normed = tape.layer_norm(zm, block.ln.gain, block.ln.bias, cfg.ln_eps)?;
            let (a, maps) = blocks::msa_with_maps(tape, normed, &block.attn, ctx)?;
            if l == 0 {
                first_maps.push(maps);
            }
            refined.push(tape.add(zm, a)?);
        }
        let mixed = mix_hypotheses(tape, &refined, layer, cfg)?;
        z = tape.split_cols(mixed, refined.len())?;
    }
    Ok((z, first_maps))
}

/// Cross-hypothesis interaction. Queries come from the cyclically next
/// hypothesis, keys from the one after, values from the hypothesis itself.
/// The last layer skips the partition and returns the aggregated `N×(C·M)`
/// representation together with the pre-aggregation hypothesis streams.
pub fn chi_forward(
    tape: &mut Tape,
    mut z: Vec<Var>,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    ctx: &mut BlockCtx,
) -> Result<(Var, Vec<Var>), ModelError> {
    let m_count = z.len();
    if m_count != 3 && !cfg.cyclic_cross_hypotheses {
        return Err(ModelError::Input(format!(
            "cross-hypothesis interaction needs 3 hypotheses, got {m_count} \
             (set cyclic_cross_hypotheses to generalize)"
        )));
    }
    let last = params.chi.len() - 1;
    for (l, layer) in params.chi.iter().enumerate() {
        let normed: Vec<Var> = z
            .iter()
            .zip(&layer.blocks)
            .map(|(&zm, block)| tape.layer_norm(zm, block.ln.gain, block.ln.bias, cfg.ln_eps))
            .collect::<Result<_, _>>()?;
        let mut crossed = Vec::with_capacity(m_count);
        for m in 0..m_count {
            let q = normed[(m + 1) % m_count];
            let k = normed[(m + 2) % m_count];
            let v = normed[m];
            let a = blocks::mca(tape, q, k, v, &layer.blocks[m].attn, ctx)?;
            crossed.push(tape.add(z[m], a)?);
        }
        let mixed = mix_hypotheses(tape, &crossed, layer, cfg)?;
        if l == last {
            return Ok((mixed, crossed));
        }
        z = tape.split_cols(mixed, m_count)?;
    }
    unreachable!("chi_layers >= 1 is enforced by config validation")
}

/// Concatenate the hypotheses and apply the residual mixing MLP. Callers
/// partition the result back into M chunks except in the final layer.
fn mix_hypotheses(
    tape: &mut Tape,
    hyps: &[Var],
    layer: &super::params::TemporalLayer<Var>,
    cfg: &ModelConfig,
) -> Result<Var, TensorError> {
    let cat = tape.concat_cols(hyps)?;
    let normed = tape.layer_norm(cat, layer.mix.ln.gain, layer.mix.ln.bias, cfg.ln_eps)?;
    let f = blocks::mlp(tape, normed, &layer.mix.mlp)?;
    tape.add(cat, f)
}

/// Per-frame linear regression from the aggregated representation to J
/// joints in 3D, shape `[N, J, 3]`.
pub fn regress(
    tape: &mut Tape,
    zfinal: Var,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
) -> Result<Var, TensorError> {
    let y = tape.linear(zfinal, params.head.w, params.head.b)?;
    tape.reshape(y, &[cfg.frames, cfg.joints, 3])
}

/// Full forward pass returning only the predicted sequence.
pub fn forward(
    tape: &mut Tape,
    x2d: Var,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    ctx: &mut BlockCtx,
) -> Result<Var, ModelError> {
    Ok(forward_trace(tape, x2d, params, cfg, ctx)?.seq)
}

/// Full forward pass keeping intermediate handles (hypothesis taps and
/// attention maps).
pub fn forward_trace(
    tape: &mut Tape,
    x2d: Var,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    ctx: &mut BlockCtx,
) -> Result<ForwardTrace, ModelError> {
    let (hyps, spatial_maps) = mhg_forward(tape, x2d, params, cfg, ctx)?;
    let z = temporal_embed(tape, &hyps, params, cfg)?;
    let (z, temporal_maps) = shr_forward(tape, z, params, cfg, ctx)?;
    let (zfinal, hyp_taps) = chi_forward(tape, z, params, cfg, ctx)?;
    let seq = regress(tape, zfinal, params, cfg)?;
    Ok(ForwardTrace { seq, hyp_taps, spatial_maps, temporal_maps })
}

/// Decode each tapped hypothesis stream with its own linear head,
/// producing M pose sequences of shape `[N, J, 3]`. Only used for
/// visualization; never part of the main regression path.
pub fn hypothesis_decode(
    tape: &mut Tape,
    taps: &[Var],
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
) -> Result<Vec<Var>, ModelError> {
    let heads = params
        .hyp_heads
        .as_ref()
        .ok_or_else(|| ModelError::Input("per-hypothesis heads are absent".into()))?;
    taps.iter()
        .zip(heads)
        .map(|(&t, h)| {
            let y = tape.linear(t, h.w, h.b)?;
            Ok(tape.reshape(y, &[cfg.frames, cfg.joints, 3])?)
        })
        .collect()
}

/// The 3D pose of the center frame, extracted from an `[N, J, 3]` sequence.
pub fn center_pose(seq: &Tensor, cfg: &ModelConfig) -> Tensor {
    let c = cfg.center_frame();
    let stride = cfg.joints * 3;
    let data = seq.data()[c * stride..(c + 1) * stride].to_vec();
    Tensor::new_unchecked(data, vec![cfg.joints, 3], seq.dtype())
}

/// Convenience wrapper: run inference on plain tensors, no gradients.
pub fn predict_sequence(
    x2d: &Tensor,
    params: &ModelParams<Tensor>,
    cfg: &ModelConfig,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let x = tape.constant(x2d);
    let bound = params.bind(&mut tape);
    let mut ctx = BlockCtx::eval(cfg.ln_eps);
    let seq = forward(&mut tape, x, &bound, cfg, &mut ctx)?;
    Ok(tape.value(seq).clone())
}

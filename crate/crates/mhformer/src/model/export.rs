//! Attention-map export for plotting.

use serde::{Deserialize, Serialize};

use crate::blocks::BlockCtx;
use crate::tensor::{Tape, Tensor};

use super::config::ModelConfig;
use super::forward::forward_trace;
use super::params::ModelParams;
use super::ModelError;

/// One softmax attention matrix. `stage` is `"mhg"` (spatial, `(J·2)×(J·2)`)
/// or `"shr"` (temporal, `N×N`); `hypothesis`, `layer`, and `head` are
/// 1-based.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionMap {
    pub stage: String,
    pub hypothesis: usize,
    pub layer: usize,
    pub head: usize,
    pub shape: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = (t.shape()[0], t.shape()[1]);
    (0..n).map(|i| t.data()[i * d..(i + 1) * d].to_vec()).collect()
}

/// First-layer attention maps of the spatial stacks and the refinement
/// stage, per hypothesis and head.
pub fn export_attention(
    x2d: &Tensor,
    params: &ModelParams<Tensor>,
    cfg: &ModelConfig,
) -> Result<Vec<AttentionMap>, ModelError> {
    let mut tape = Tape::new();
    let x = tape.constant(x2d);
    let bound = params.bind(&mut tape);
    let mut ctx = BlockCtx::eval(cfg.ln_eps);
    let trace = forward_trace(&mut tape, x, &bound, cfg, &mut ctx)?;

    let mut out = Vec::new();
    for (stage, maps) in [("mhg", &trace.spatial_maps), ("shr", &trace.temporal_maps)] {
        for (m, heads) in maps.iter().enumerate() {
            for (h, &var) in heads.iter().enumerate() {
                let t = tape.value(var);
                out.push(AttentionMap {
                    stage: stage.into(),
                    hypothesis: m + 1,
                    layer: 1,
                    head: h + 1,
                    shape: t.shape().to_vec(),
                    rows: to_rows(t),
                });
            }
        }
    }
    Ok(out)
}

//! Pose loss: per-joint Euclidean norms summed over frames and batch.
//! Despite being trained "with MSE" in common parlance, the reference loss
//! is the sum of unsquared joint distances; a true-squared mode exists for
//! ablation.

use crate::tensor::{Tape, Tensor, TensorError, Var};

use super::TrainError;

/// Tape-recorded loss for one `[N, J, 3]` window against a constant target.
pub fn pose_loss_window(
    tape: &mut Tape,
    pred: Var,
    gt: &Tensor,
    squared: bool,
) -> Result<Var, TensorError> {
    let shape = tape.value(pred).shape().to_vec();
    if gt.shape() != shape {
        return Err(TensorError::ShapeMismatch {
            op: "pose_loss",
            lhs: shape,
            rhs: gt.shape().to_vec(),
        });
    }
    let joints_total: usize = shape[..shape.len() - 1].iter().product();
    let flat_pred = tape.reshape(pred, &[joints_total, 3])?;
    let gt_flat = gt.reshaped(&[joints_total, 3])?;
    let gt_var = tape.constant(&gt_flat);
    let diff = tape.sub(flat_pred, gt_var)?;
    let sq = tape.mul(diff, diff)?;
    let sums = tape.row_sums(sq)?;
    let per_joint = if squared { sums } else { tape.sqrt(sums)? };
    tape.sum_all(per_joint)
}

/// Plain-value loss over a batch of `[N, J, 3]` windows. `normalize` divides
/// the raw sum by batch x frames x joints.
pub fn pose_loss(
    preds: &[Tensor],
    gts: &[Tensor],
    normalize: bool,
    squared: bool,
) -> Result<f64, TrainError> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(TrainError::Input("loss needs matching non-empty batches".into()));
    }
    let mut total = 0.0;
    let mut joint_count = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        if p.shape() != g.shape() || p.shape().last() != Some(&3) {
            return Err(TrainError::Input(format!(
                "window shape mismatch: {:?} vs {:?}",
                p.shape(),
                g.shape()
            )));
        }
        for (pj, gj) in p.data().chunks_exact(3).zip(g.data().chunks_exact(3)) {
            let sq = (pj[0] - gj[0]).powi(2) + (pj[1] - gj[1]).powi(2) + (pj[2] - gj[2]).powi(2);
            total += if squared { sq } else { sq.sqrt() };
            joint_count += 1;
        }
    }
    if !total.is_finite() {
        return Err(TrainError::Input("loss is not finite".into()));
    }
    Ok(if normalize { total / joint_count as f64 } else { total })
}

//! Evaluation protocols: MPJPE, Procrustes-aligned MPJPE, PCK, and AUC.
//! Distances are millimeters throughout.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("pose shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("expected a [J, 3] pose, got {0:?}")]
    NotAPose(Vec<usize>),
    #[error("ground-truth pose is degenerate (all joints coincident)")]
    DegenerateTarget,
    #[error("empty input: {0}")]
    Empty(&'static str),
}

fn check_pair(pred: &Tensor, gt: &Tensor) -> Result<usize, MetricsError> {
    if pred.shape().len() != 2 || pred.shape()[1] != 3 {
        return Err(MetricsError::NotAPose(pred.shape().to_vec()));
    }
    if pred.shape() != gt.shape() {
        return Err(MetricsError::ShapeMismatch {
            lhs: pred.shape().to_vec(),
            rhs: gt.shape().to_vec(),
        });
    }
    Ok(pred.shape()[0])
}

/// Euclidean distance per joint.
pub fn per_joint_errors(pred: &Tensor, gt: &Tensor) -> Result<Vec<f64>, MetricsError> {
    let j = check_pair(pred, gt)?;
    Ok((0..j)
        .map(|i| {
            let (p, g) = (&pred.data()[i * 3..i * 3 + 3], &gt.data()[i * 3..i * 3 + 3]);
            ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt()
        })
        .collect())
}

/// Protocol 1: mean per-joint position error.
pub fn mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64, MetricsError> {
    let errors = per_joint_errors(pred, gt)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

fn centroid(pose: &Tensor) -> Vector3<f64> {
    let j = pose.shape()[0] as f64;
    let mut c = Vector3::zeros();
    for row in pose.data().chunks_exact(3) {
        c += Vector3::new(row[0], row[1], row[2]);
    }
    c / j
}

/// Optimal similarity alignment of `pred` onto `gt`: translation, proper
/// rotation (reflections corrected), and non-negative scale minimizing the
/// Frobenius error.
pub fn procrustes_align(pred: &Tensor, gt: &Tensor) -> Result<Tensor, MetricsError> {
    let j = check_pair(pred, gt)?;
    let mu_p = centroid(pred);
    let mu_g = centroid(gt);

    let rows = |t: &Tensor, mu: &Vector3<f64>| -> Vec<Vector3<f64>> {
        t.data()
            .chunks_exact(3)
            .map(|r| Vector3::new(r[0], r[1], r[2]) - mu)
            .collect()
    };
    let pc = rows(pred, &mu_p);
    let gc = rows(gt, &mu_g);

    let gt_spread: f64 = gc.iter().map(|v| v.norm_squared()).sum();
    if gt_spread == 0.0 {
        return Err(MetricsError::DegenerateTarget);
    }
    let pred_spread: f64 = pc.iter().map(|v| v.norm_squared()).sum();
    if pred_spread == 0.0 {
        // Every predicted joint coincides; the best alignment collapses onto
        // the target centroid.
        let data = (0..j).flat_map(|_| [mu_g.x, mu_g.y, mu_g.z]).collect();
        return Ok(Tensor::new_unchecked(data, vec![j, 3], pred.dtype()));
    }

    // Cross-covariance H = Pcᵀ·Gc, maximised trace tr(R·H) at R = V·D·Uᵀ.
    let mut h = Matrix3::zeros();
    for (p, g) in pc.iter().zip(&gc) {
        h += p * g.transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let v_t = svd.v_t.expect("svd with v_t requested");
    let det = (v_t.transpose() * u.transpose()).determinant();
    // Flip the weakest direction when the best orthogonal map is a
    // reflection; mirror-image credit would be a false positive.
    let d = Vector3::new(1.0, 1.0, if det < 0.0 { -1.0 } else { 1.0 });
    let rotation = v_t.transpose() * Matrix3::from_diagonal(&d) * u.transpose();
    let trace = svd.singular_values.dot(&d);
    let scale = trace / pred_spread;

    let mut data = Vec::with_capacity(j * 3);
    for p in &pc {
        let aligned = scale * (rotation * p) + mu_g;
        data.extend_from_slice(&[aligned.x, aligned.y, aligned.z]);
    }
    Ok(Tensor::new_unchecked(data, vec![j, 3], pred.dtype()))
}

/// Protocol 2: MPJPE after Procrustes alignment.
pub fn p_mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64, MetricsError> {
    mpjpe(&procrustes_align(pred, gt)?, gt)
}

/// Percentage of joints with error strictly below the threshold, over all
/// pose pairs.
pub fn pck(preds: &[Tensor], gts: &[Tensor], threshold_mm: f64) -> Result<f64, MetricsError> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(MetricsError::Empty("pck needs matching non-empty pose sets"));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        for e in per_joint_errors(p, g)? {
            if e < threshold_mm {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(100.0 * correct as f64 / total as f64)
}

/// Mean PCK over a threshold grid.
pub fn auc(preds: &[Tensor], gts: &[Tensor], thresholds: &[f64]) -> Result<f64, MetricsError> {
    if thresholds.is_empty() {
        return Err(MetricsError::Empty("auc needs a non-empty threshold grid"));
    }
    let mut sum = 0.0;
    for &t in thresholds {
        sum += pck(preds, gts, t)?;
    }
    Ok(sum / thresholds.len() as f64)
}

/// The conventional grid: 5 mm to 150 mm in 5 mm steps.
pub fn default_auc_thresholds() -> Vec<f64> {
    (1..=30).map(|i| i as f64 * 5.0).collect()
}

pub const PCK_THRESHOLD_MM: f64 = 150.0;

/// Aggregate metrics over an evaluation set of center-frame poses.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub count: usize,
    pub mpjpe_mm: f64,
    pub p_mpjpe_mm: f64,
    pub pck150: f64,
    pub auc: f64,
    pub config: serde_json::Value,
}

/// Per-pose metrics averaged over the set, PCK/AUC pooled over all joints.
pub fn evaluate_set(
    preds: &[Tensor],
    gts: &[Tensor],
    config: serde_json::Value,
) -> Result<EvalReport, MetricsError> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(MetricsError::Empty("evaluation needs matching non-empty pose sets"));
    }
    let mut sum_mpjpe = 0.0;
    let mut sum_pmpjpe = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        sum_mpjpe += mpjpe(p, g)?;
        sum_pmpjpe += p_mpjpe(p, g)?;
    }
    Ok(EvalReport {
        count: preds.len(),
        mpjpe_mm: sum_mpjpe / preds.len() as f64,
        p_mpjpe_mm: sum_pmpjpe / preds.len() as f64,
        pck150: pck(preds, gts, PCK_THRESHOLD_MM)?,
        auc: auc(preds, gts, &default_auc_thresholds())?,
        config,
    })
}

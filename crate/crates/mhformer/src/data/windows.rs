//! Sliding-window sampling: one window per stride step, every frame a
//! center once at stride 1, boundaries padded by edge replication.

use crate::tensor::{DType, Tensor};

use super::{DataError, PoseSequence2D, PoseSequence3D};

/// One training/eval sample: an `[N, J, 2]` input window, its `[N, J, 3]`
/// target, and the index of the frame at the window center.
#[derive(Clone, Debug)]
pub struct Window {
    pub x2d: Tensor,
    pub y3d: Option<Tensor>,
    pub center_frame: usize,
}

fn window_tensor(
    seq: &PoseSequence2D,
    center: usize,
    n: usize,
    dims: usize,
    dtype: DType,
) -> Tensor {
    let half = n / 2;
    let j = seq.joints();
    let mut data = Vec::with_capacity(n * j * dims);
    for offset in 0..n {
        // Edge replication: clamp out-of-range frames to the sequence ends.
        let f = (center + offset).saturating_sub(half).min(seq.frames() - 1);
        data.extend_from_slice(seq.frame(f));
    }
    Tensor::from_vec(data, &[n, j, dims], dtype).expect("sequence data validated finite")
}

/// Paired 2D/3D windows for training and evaluation.
pub fn windows(
    seq2d: &PoseSequence2D,
    seq3d: &PoseSequence3D,
    n: usize,
    stride: usize,
    dtype: DType,
) -> Result<Vec<Window>, DataError> {
    if seq3d.frames() != seq2d.frames() || seq3d.joints() != seq2d.joints() {
        return Err(DataError::Validation(
            "2D and 3D sequences must agree in frame and joint counts".into(),
        ));
    }
    if seq3d.dims() != 3 {
        return Err(DataError::Validation("targets must be 3D".into()));
    }
    let mut out = windows_2d(seq2d, n, stride, dtype)?;
    for w in out.iter_mut() {
        w.y3d = Some(window_tensor(seq3d, w.center_frame, n, 3, dtype));
    }
    Ok(out)
}

/// Input-only windows for inference.
pub fn windows_2d(
    seq2d: &PoseSequence2D,
    n: usize,
    stride: usize,
    dtype: DType,
) -> Result<Vec<Window>, DataError> {
    if n % 2 == 0 || n == 0 {
        return Err(DataError::Validation(format!("window length must be odd, got {n}")));
    }
    if stride == 0 {
        return Err(DataError::Validation("stride must be >= 1".into()));
    }
    if seq2d.dims() != 2 {
        return Err(DataError::Validation("inputs must be 2D".into()));
    }
    Ok((0..seq2d.frames())
        .step_by(stride)
        .map(|center| Window {
            x2d: window_tensor(seq2d, center, n, 2, dtype),
            y3d: None,
            center_frame: center,
        })
        .collect())
}

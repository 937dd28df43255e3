//! End-to-end training: seeded shuffling, joint flip augmentation of input
//! and target, batched loss, Amsgrad updates, and per-epoch snapshots.

mod augment;
mod loss;
mod optim;

pub use augment::hflip;
pub use loss::{pose_loss, pose_loss_window};
pub use optim::{amsgrad_step, lr_at, OptimState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::BlockCtx;
use crate::data::{Skeleton, Window};
use crate::model::{
    self, center_pose, forward_trace, hypothesis_decode, ModelConfig, ModelError, ModelParams,
};
use crate::rng::seeded_stream;
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("non-finite gradient for parameter {name}; step rejected")]
    NonFiniteGradient { name: String },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Multiplicative decay applied every epoch.
    pub epoch_decay: f64,
    /// Additional decay applied every five epochs.
    pub five_epoch_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Probability of flipping a sample (input and target together).
    pub flip_prob: f64,
    /// Divide the raw loss sum by batch x frames x joints.
    pub normalize_loss: bool,
    /// Square the per-joint distances instead of summing the norms.
    pub squared_loss: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the auxiliary per-hypothesis decoding loss; 0 disables it.
    pub hyp_head_loss_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            epoch_decay: 0.95,
            five_epoch_decay: 0.5,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            flip_prob: 0.5,
            normalize_loss: true,
            squared_loss: false,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            hyp_head_loss_weight: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.epoch_decay > 0.0 && self.epoch_decay <= 1.0)
            || !(self.five_epoch_decay > 0.0 && self.five_epoch_decay <= 1.0)
        {
            return Err(TrainError::Input("decays must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Input("batch size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(TrainError::Input("flip_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
    pub epoch_means: Vec<(usize, f64)>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,step,lr,loss\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.step, r.lr, r.loss));
        }
        out
    }
}

/// Observed once per epoch; gives checkpointing a hook.
pub struct EpochSnapshot<'a> {
    pub epoch: usize,
    pub mean_loss: f64,
    pub params: &'a ModelParams,
    pub optim: &'a OptimState,
}

/// Train in place from `start_epoch` (0 for a fresh run) up to `tc.epochs`.
/// Deterministic given (seed, dataset, configs): shuffling and flip draws
/// come from per-epoch streams, so a resumed run continues the exact
/// uninterrupted trajectory.
pub fn train(
    params: &mut ModelParams,
    optim: &mut OptimState,
    dataset: &[Window],
    skeleton: &Skeleton,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    start_epoch: usize,
    mut on_epoch: impl FnMut(EpochSnapshot<'_>) -> Result<(), TrainError>,
) -> Result<LossHistory, TrainError> {
    cfg.validate().map_err(ModelError::Config)?;
    tc.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::Input("training needs at least one window".into()));
    }
    for w in dataset {
        if w.y3d.is_none() {
            return Err(TrainError::Input("training windows need 3D targets".into()));
        }
    }
    if tc.hyp_head_loss_weight > 0.0 && params.hyp_heads.is_none() {
        return Err(TrainError::Input(
            "auxiliary hypothesis loss requires per-hypothesis heads".into(),
        ));
    }
    params.set_requires_grad(true);

    let mut history = LossHistory::default();
    let mut global_step = 0usize;
    for epoch in start_epoch..tc.epochs {
        let lr = lr_at(epoch, tc);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut epoch_rng = seeded_stream(tc.seed, 1_000 + epoch as u64);
        // Fisher-Yates with the epoch stream.
        for i in (1..order.len()).rev() {
            let j = epoch_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut dropout_rng = seeded_stream(tc.seed, 500_000 + epoch as u64);

        let mut epoch_losses = Vec::new();
        for (batch_idx, batch) in order.chunks(tc.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut total: Option<crate::tensor::Var> = None;
            let mut joint_count = 0usize;
            for &widx in batch {
                let w = &dataset[widx];
                let flip = epoch_rng.gen_range(0.0..1.0) < tc.flip_prob;
                let (x, y) = if flip {
                    (hflip(&w.x2d, skeleton)?, hflip(w.y3d.as_ref().unwrap(), skeleton)?)
                } else {
                    (w.x2d.clone(), w.y3d.as_ref().unwrap().clone())
                };
                let xv = tape.constant(&x);
                let mut ctx = BlockCtx {
                    ln_eps: cfg.ln_eps,
                    attn_dropout: cfg.dropout,
                    rng: Some(&mut dropout_rng),
                };
                let trace = forward_trace(&mut tape, xv, &bound, cfg, &mut ctx)?;
                let mut sample_loss =
                    pose_loss_window(&mut tape, trace.seq, &y, tc.squared_loss)?;
                if tc.hyp_head_loss_weight > 0.0 {
                    let decoded = hypothesis_decode(&mut tape, &trace.hyp_taps, &bound, cfg)?;
                    for d in decoded {
                        let aux = pose_loss_window(&mut tape, d, &y, tc.squared_loss)?;
                        let weighted = tape.scale(aux, tc.hyp_head_loss_weight)?;
                        sample_loss = tape.add(sample_loss, weighted)?;
                    }
                }
                joint_count += cfg.frames * cfg.joints;
                total = Some(match total {
                    Some(t) => tape.add(t, sample_loss)?,
                    None => sample_loss,
                });
            }
            let mut total = total.expect("non-empty batch");
            if tc.normalize_loss {
                total = tape.scale(total, 1.0 / joint_count as f64)?;
            }
            let loss_value = tape.value(total).item();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step: batch_idx });
            }
            tape.backward(total)?;

            let mut grads = Vec::new();
            let mut grad_err = None;
            params.visit(&mut |name, _| {
                let _ = name;
            });
            // Collect gradients aligned with visit order via the bound mirror.
            let mut named_vars = Vec::new();
            bound.visit(&mut |name, v| named_vars.push((name, *v)));
            for (name, v) in named_vars {
                match tape.grad(v) {
                    Some(g) => grads.push((name, g)),
                    None => grad_err = Some(name),
                }
            }
            if let Some(name) = grad_err {
                return Err(TrainError::Input(format!(
                    "parameter {name} was not registered for gradients"
                )));
            }
            amsgrad_step(params, &grads, optim, lr)?;

            history.records.push(LossRecord { epoch, step: global_step, lr, loss: loss_value });
            epoch_losses.push(loss_value);
            global_step += 1;
        }
        let mean = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        history.epoch_means.push((epoch, mean));
        on_epoch(EpochSnapshot { epoch, mean_loss: mean, params, optim })?;
    }
    Ok(history)
}

/// Flip-averaged center-frame prediction: the mean of `pred(x)` and the
/// flipped prediction on the flipped input.
pub fn test_time_flip(
    x2d: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    skeleton: &Skeleton,
) -> Result<Tensor, TrainError> {
    let direct = model::predict_sequence(x2d, params, cfg)?;
    let flipped_in = hflip(x2d, skeleton)?;
    let mirrored = model::predict_sequence(&flipped_in, params, cfg)?;
    let unflipped = hflip(&mirrored, skeleton)?;
    let data = direct
        .data()
        .iter()
        .zip(unflipped.data())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let avg = Tensor::from_vec(data, direct.shape(), direct.dtype())?;
    Ok(center_pose(&avg, cfg))
}

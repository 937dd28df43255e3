//! Amsgrad: Adam with a running elementwise maximum of the second moment in
//! the denominator, plus the multiplicative learning-rate schedule.

use crate::model::ModelParams;
use crate::tensor::Tensor;

use super::{TrainConfig, TrainError};

#[derive(Clone, Debug)]
pub struct OptimState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First/second moments and the running max, aligned with the parameter
    /// store's visit order.
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub v_max: Vec<Tensor>,
}

impl OptimState {
    pub fn new(params: &ModelParams, tc: &TrainConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .named()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape(), t.dtype()))
            .collect();
        OptimState {
            step: 0,
            beta1: tc.beta1,
            beta2: tc.beta2,
            eps: tc.eps,
            m: zeros.clone(),
            v: zeros.clone(),
            v_max: zeros,
        }
    }
}

/// One in-place update. `grads` must be aligned with the store's visit
/// order; a non-finite gradient rejects the whole step.
pub fn amsgrad_step(
    params: &mut ModelParams,
    grads: &[(String, Tensor)],
    state: &mut OptimState,
    lr: f64,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient { name: name.clone() });
        }
    }
    state.step += 1;
    let t = state.step;
    let bias1 = 1.0 - state.beta1.powi(t as i32);
    let bias2 = 1.0 - state.beta2.powi(t as i32);
    let step_size = lr / bias1;

    let mut idx = 0;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let mut result = Ok(());
    params.visit_mut(&mut |name, p| {
        if result.is_err() {
            return;
        }
        let (gname, g) = &grads[idx];
        if gname != &name || g.shape() != p.shape() {
            result = Err(TrainError::Input(format!(
                "gradient {gname} misaligned with parameter {name}"
            )));
            return;
        }
        // Rounding through the parameter dtype keeps f32 stores exactly
        // f32-representable, so checkpoints round-trip bit-for-bit.
        let dtype = p.dtype();
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        let vm = state.v_max[idx].data_mut();
        for (((pv, &gv), (mv, vv)), vmv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
            .zip(vm.iter_mut())
        {
            *mv = dtype.round(b1 * *mv + (1.0 - b1) * gv);
            *vv = dtype.round(b2 * *vv + (1.0 - b2) * gv * gv);
            *vmv = vmv.max(*vv);
            let denom = (*vmv / bias2).sqrt() + eps;
            *pv = dtype.round(*pv - step_size * *mv / denom);
        }
        idx += 1;
    });
    result
}

/// `lr = base · 0.95^epoch · 0.5^floor(epoch/5)` with the configured decays.
pub fn lr_at(epoch: usize, tc: &TrainConfig) -> f64 {
    tc.base_lr
        * tc.epoch_decay.powi(epoch as i32)
        * tc.five_epoch_decay.powi((epoch / 5) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_setup() -> (ModelParams, TrainConfig, OptimState) {
        let cfg = ModelConfig::tiny(2);
        let params = ModelParams::init(&cfg, 1);
        let tc = TrainConfig::default();
        let state = OptimState::new(&params, &tc);
        (params, tc, state)
    }

    fn zero_grads(params: &ModelParams) -> Vec<(String, Tensor)> {
        params
            .named()
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape(), t.dtype())))
            .collect()
    }

    #[test]
    fn zero_gradient_never_moves_parameters() {
        let (mut params, _, mut state) = tiny_setup();
        let before: Vec<Vec<f64>> =
            params.named().iter().map(|(_, t)| t.data().to_vec()).collect();
        let grads = zero_grads(&params);
        for _ in 0..10 {
            amsgrad_step(&mut params, &grads, &mut state, 1e-3).unwrap();
        }
        for ((_, t), b) in params.named().iter().zip(&before) {
            assert_eq!(t.data(), b.as_slice());
        }
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // Scalar parameter, g = 1, beta1 = 0.9, beta2 = 0.999, lr = 1e-3.
        // Hand evaluation of the update formulas, written out:
        //   m1 = 0.1, v1 = 0.001, v_max = 0.001
        //   bias1 = 0.1, bias2 = 0.001
        //   denom = sqrt(0.001 / 0.001) + 1e-8 = 1 + 1e-8
        //   dtheta = (1e-3 / 0.1) * 0.1 / (1 + 1e-8)
        let expect_delta = (1e-3 / 0.1) * 0.1 / (1.0 + 1e-8);

        let (mut params, tc, mut state) = tiny_setup();
        // Drive a single scalar: the head bias's first element.
        let theta0 = params.head.b.data()[0];
        let mut grads = zero_grads(&params);
        for (name, g) in grads.iter_mut() {
            if name == "head.b" {
                g.data_mut()[0] = 1.0;
            }
        }
        let _ = tc;
        amsgrad_step(&mut params, &grads, &mut state, 1e-3).unwrap();
        let theta1 = params.head.b.data()[0];
        assert!(
            ((theta0 - theta1) - expect_delta).abs() < 1e-15,
            "delta {} vs {expect_delta}",
            theta0 - theta1
        );
    }

    #[test]
    fn v_max_is_monotone_under_shrinking_gradients() {
        let (mut params, _, mut state) = tiny_setup();
        let mut prev: Option<Vec<f64>> = None;
        for k in 0..8 {
            let scale = 1.0 / (1 << k) as f64; // |g| decreasing
            let grads: Vec<(String, Tensor)> = params
                .named()
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::full(t.shape(), scale, t.dtype())))
                .collect();
            amsgrad_step(&mut params, &grads, &mut state, 1e-3).unwrap();
            let flat: Vec<f64> =
                state.v_max.iter().flat_map(|t| t.data().iter().copied()).collect();
            if let Some(p) = prev {
                for (now, before) in flat.iter().zip(&p) {
                    assert!(now >= before, "v_max decreased");
                }
            }
            prev = Some(flat);
        }
    }

    #[test]
    fn constant_gradient_step_magnitude_never_grows_after_first() {
        let (mut params, _, mut state) = tiny_setup();
        let grads: Vec<(String, Tensor)> = params
            .named()
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::full(t.shape(), 0.5, t.dtype())))
            .collect();
        let track = |p: &ModelParams| p.head.b.data()[0];
        let mut last = track(&params);
        let mut last_step = f64::INFINITY;
        for _ in 0..12 {
            amsgrad_step(&mut params, &grads, &mut state, 1e-3).unwrap();
            let now = track(&params);
            let step = (last - now).abs();
            assert!(step <= last_step + 1e-15, "step grew: {step} > {last_step}");
            last_step = step;
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_rejects_the_step() {
        let (mut params, _, mut state) = tiny_setup();
        let before: Vec<Vec<f64>> =
            params.named().iter().map(|(_, t)| t.data().to_vec()).collect();
        let mut grads = zero_grads(&params);
        grads[3].1.data_mut()[0] = f64::NAN;
        assert!(matches!(
            amsgrad_step(&mut params, &grads, &mut state, 1e-3),
            Err(TrainError::NonFiniteGradient { .. })
        ));
        assert_eq!(state.step, 0, "rejected step must not advance the counter");
        for ((_, t), b) in params.named().iter().zip(&before) {
            assert_eq!(t.data(), b.as_slice());
        }
    }

    #[test]
    fn schedule_values() {
        let tc = TrainConfig::default();
        assert_eq!(lr_at(0, &tc), 1e-3);
        assert!((lr_at(1, &tc) - 0.00095).abs() < 1e-18);
        let expect5 = 1e-3 * 0.95f64.powi(5) * 0.5;
        assert!((lr_at(5, &tc) - expect5).abs() < 1e-18);
        assert!((expect5 - 3.869e-4).abs() < 1e-7);
        // Monotone decreasing.
        let mut last = f64::INFINITY;
        for e in 0..30 {
            let lr = lr_at(e, &tc);
            assert!(lr < last);
            last = lr;
        }
    }
}

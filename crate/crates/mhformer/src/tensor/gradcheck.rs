//! Finite-difference verification of tape gradients.

use super::{Tape, Tensor, TensorError, Var};

/// Max relative error between analytic and central-difference gradients of a
/// scalar-valued function, taken over every coordinate of `x`.
///
/// The error measure is `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
/// Use f64 inputs and `eps` in `[1e-6, 1e-4]`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    grad_check_multi(|tape, vars| f(tape, vars[0]), &[x.clone()], eps)
}

/// [`grad_check`] over several independent inputs at once.
pub fn grad_check_multi<F>(f: F, xs: &[Tensor], eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs
        .iter()
        .map(|x| tape.leaf(&x.clone().with_requires_grad()))
        .collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(TensorError::SeedNotScalar {
            shape: tape.value(out).shape().to_vec(),
        });
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v).unwrap()).collect();

    // Value-only evaluation at perturbed inputs.
    let eval = |inputs: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut max_err = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        for c in 0..x.numel() {
            let mut plus = xs.to_vec();
            plus[i].data_mut()[c] += eps;
            let mut minus = xs.to_vec();
            minus[i].data_mut()[c] -= eps;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic[i].data()[c];
            let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

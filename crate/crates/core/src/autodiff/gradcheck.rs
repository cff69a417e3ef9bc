//! Central finite-difference checking of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn evaluate<F>(params: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Contract(format!("objective must be scalar, got {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

/// Loss value and tape gradients of `f` at `params`.
pub fn analytic_gradients<F>(params: &[Tensor], f: &F) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let loss = tape.value(out).data()[0];
    Ok((loss, vars.iter().map(|&v| grads.wrt(v).expect("tracked leaf")).collect()))
}

/// Per-parameter maximum of `|analytic − central| / max(1, |central|)`.
pub fn finite_difference_errors<F>(params: &[Tensor], analytic: &[Tensor], h: f64, f: &F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Parameter(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let base = evaluate(params, f)?;
    if evaluate(params, f)?.to_bits() != base.to_bits() {
        return Err(Error::Contract("objective is not deterministic".into()));
    }
    let mut work = params.to_vec();
    let mut errors = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for ei in 0..work[pi].len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let up = evaluate(&work, f)?;
            work[pi].data_mut()[ei] = orig - h;
            let down = evaluate(&work, f)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (grad.data()[ei] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        errors.push(worst);
    }
    Ok(errors)
}

/// Maximum relative gradient error of `f` over every parameter component.
pub fn grad_check<F>(params: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, analytic) = analytic_gradients(params, &f)?;
    let errs = finite_difference_errors(params, &analytic, h, &f)?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

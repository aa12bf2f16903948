//! Central-difference gradient verification.
//!
//! Relative error of a component is `|a − n| / max(|a|, |n|, floor)` where
//! `a` is the backward-pass gradient and `n` the central difference
//! `(f(x+ε) − f(x−ε)) / 2ε`. The floor keeps components whose true
//! derivative is near zero from turning roundoff into huge ratios.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.numel() != 1 {
        return Err(Error::NotScalar(t.shape().to_vec()));
    }
    Ok(t.data()[0])
}

/// Largest componentwise relative error between backward gradients of a
/// scalar function `f` at `point` and central differences with step `eps`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape.grad(x).unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let x = t.leaf(p, false);
        let y = f(&mut t, x)?;
        scalar_of(&t, y)
    };
    let mut worst: f64 = 0.0;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Outcome of checking all parameters of a model.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst component.
    pub worst: Option<(String, usize)>,
    pub components_checked: usize,
}

/// Gradient check over the parameters of `store` for a loss built by `f`.
///
/// With `max_per_param = Some(k)`, at most `k` randomly chosen components of
/// each tensor are perturbed.
pub fn grad_check_params<F>(
    store: &ParamStore,
    f: F,
    eps: f64,
    max_per_param: Option<usize>,
    rng: &mut impl Rng,
) -> Result<ParamCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &work)?;
    tape.backward(loss)?;
    tape.accumulate_param_grads(&mut work);
    let analytic: Vec<Tensor> = work.ids().map(|id| work.grad(id).clone()).collect();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let y = f(&mut t, s)?;
        scalar_of(&t, y)
    };

    let mut report = ParamCheck {
        max_relative_error: 0.0,
        worst: None,
        components_checked: 0,
    };
    let ids: Vec<ParamId> = work.ids().filter(|&id| work.trainable(id)).collect();
    for id in ids {
        let n = work.value(id).numel();
        let coords: Vec<usize> = match max_per_param {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = work.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(analytic[id.index()].data()[i], numeric);
            report.components_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                if err >= report.max_relative_error {
                    report.worst = Some((work.name(id).to_string(), i));
                }
            }
        }
    }
    Ok(report)
}

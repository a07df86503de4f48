use num_complex::Complex;

use super::{check_domain, ScoreModel, ScoreRequest};
use crate::error::{Error, Result};
use crate::model::Dims;
use crate::scalar::Real;

pub(crate) fn posterior_mean<T: Real>(input: &[Complex<T>], tau: T, score1: &[Complex<T>]) -> Vec<Complex<T>> {
    input.iter().zip(score1).map(|(h, s)| h + s * tau).collect()
}

/// Per-antenna `τ + τ²/(KN) Σ_{k,n} s₂` without clamping.
pub(crate) fn raw_posterior_var<T: Real>(dims: Dims, tau: T, score2: &[T]) -> Vec<T> {
    let mut acc = vec![T::zero(); dims.m];
    for k in 0..dims.k {
        for n in 0..dims.n {
            for (m, a) in acc.iter_mut().enumerate() {
                *a += score2[dims.idx(k, n, m)];
            }
        }
    }
    let count = T::from_usize_lossy((dims.k * dims.n).max(1));
    acc.into_iter()
        .map(|s| tau + tau * tau * s / count)
        .collect()
}

/// [`raw_posterior_var`] clamped to `[floor, tau]`.
pub(crate) fn posterior_var<T: Real>(dims: Dims, tau: T, score2: &[T], floor: T) -> Vec<T> {
    raw_posterior_var(dims, tau, score2)
        .into_iter()
        .map(|v| if v.is_nan() { v } else { v.min(tau).max(floor) })
        .collect()
}

/// First-order Tweedie: `H^post = H^pri + τ s₁(H^pri, τ)`.
pub fn tweedie_mean<T: Real, S: ScoreModel<T> + ?Sized>(
    prior_mean: &[Complex<T>],
    dims: Dims,
    tau: T,
    model: &S,
) -> Result<Vec<Complex<T>>> {
    check_domain(model, tau)?;
    let out = model.evaluate(prior_mean, dims, tau, ScoreRequest::First)?;
    Ok(posterior_mean(prior_mean, tau, &out.first))
}

/// Second-order Tweedie averaged per antenna: `τ + τ²/(KN) Σ_{k,n} s₂`.
pub fn tweedie_var<T: Real, S: ScoreModel<T> + ?Sized>(
    prior_mean: &[Complex<T>],
    dims: Dims,
    tau: T,
    model: &S,
    floor: T,
) -> Result<Vec<T>> {
    if !model.has_second_order() {
        return Err(Error::MissingSecondOrder);
    }
    check_domain(model, tau)?;
    let out = model.evaluate(prior_mean, dims, tau, ScoreRequest::Second)?;
    Ok(posterior_var(dims, tau, &out.second, floor))
}

/// Second-order Tweedie without the `[floor, τ]` clamp. For multimodal
/// priors the posterior variance at a given input can exceed `τ`.
pub fn tweedie_var_unclamped<T: Real, S: ScoreModel<T> + ?Sized>(
    prior_mean: &[Complex<T>],
    dims: Dims,
    tau: T,
    model: &S,
) -> Result<Vec<T>> {
    if !model.has_second_order() {
        return Err(Error::MissingSecondOrder);
    }
    check_domain(model, tau)?;
    let out = model.evaluate(prior_mean, dims, tau, ScoreRequest::Second)?;
    Ok(raw_posterior_var(dims, tau, &out.second))
}

//! Channel denoisers for module B.
//!
//! Every backend is a [`ScoreModel`]: it evaluates the first-order score
//! `∂ log p̃(H̃) / ∂H̃*` (conjugate Wirtinger coordinate) and, optionally, the
//! diagonal of the second-order score `∂² log p̃ / ∂H̃ ∂H̃*` of the
//! noise-perturbed prior. Under this convention Tweedie's formulas for CSCG
//! noise read `E[H | H̃] = H̃ + τ s₁` and `Var[h_i | H̃] = τ + τ² s₂,ᵢ`.
//!
//! [`ScoreDenoiser`] wraps a score model into the MMSE denoiser contract the
//! engine consumes: pool the per-antenna variances, optionally normalize the
//! per-device power, apply Tweedie, and undo the scaling.

mod analytic;
pub mod bridge;
mod normalize;
mod quadrature;
mod tweedie;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::model::Dims;
use crate::scalar::Real;

pub use analytic::{GaussianScore, GmComponent, GmScore};
pub use bridge::{BridgeClient, BridgeOp};
pub use normalize::{normalize_inputs, rescale_outputs, Scaling};
pub use quadrature::{brute_force_mmse, PriorSpec, QuadratureResult};
pub use tweedie::{tweedie_mean, tweedie_var, tweedie_var_unclamped};

/// Which score heads a caller needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreRequest {
    First,
    Second,
    Both,
}

impl ScoreRequest {
    pub fn wants_first(&self) -> bool {
        matches!(self, ScoreRequest::First | ScoreRequest::Both)
    }
    pub fn wants_second(&self) -> bool {
        matches!(self, ScoreRequest::Second | ScoreRequest::Both)
    }
}

/// Score evaluations over a `(B, N, M)` batch; unrequested heads are empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreOutput<T> {
    pub first: Vec<Complex<T>>,
    pub second: Vec<T>,
}

/// First- and second-order score of a noise-perturbed channel prior.
pub trait ScoreModel<T: Real>: Send + Sync {
    fn has_second_order(&self) -> bool;

    /// Closed interval of noise variances the model accepts.
    fn noise_domain(&self) -> (T, T) {
        (T::zero(), T::infinity())
    }

    /// Evaluates the requested heads for each `N × M` block of `batch`.
    fn evaluate(&self, batch: &[Complex<T>], dims: Dims, tau: T, request: ScoreRequest) -> Result<ScoreOutput<T>>;
}

impl<T: Real, S: ScoreModel<T> + ?Sized> ScoreModel<T> for Box<S> {
    fn has_second_order(&self) -> bool {
        (**self).has_second_order()
    }
    fn noise_domain(&self) -> (T, T) {
        (**self).noise_domain()
    }
    fn evaluate(&self, batch: &[Complex<T>], dims: Dims, tau: T, request: ScoreRequest) -> Result<ScoreOutput<T>> {
        (**self).evaluate(batch, dims, tau, request)
    }
}

pub(crate) fn check_domain<T: Real, S: ScoreModel<T> + ?Sized>(model: &S, tau: T) -> Result<()> {
    let (lo, hi) = model.noise_domain();
    if !(tau >= lo && tau <= hi) {
        return Err(Error::OutOfDomain {
            tau: tau.widen(),
            min: lo.widen(),
            max: hi.widen(),
        });
    }
    Ok(())
}

/// Posterior channel message produced by a denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput<T> {
    /// Posterior mean indexed `(k, n, m)`.
    pub mean: Vec<Complex<T>>,
    /// Posterior variance per antenna.
    pub var: Vec<T>,
}

/// MMSE channel denoiser consumed by the engine, invoked once per iteration
/// with the whole `(K, N, M)` batch.
pub trait ChannelDenoiser<T: Real>: Send + Sync {
    fn denoise(&self, prior_mean: &[Complex<T>], dims: Dims, prior_var: &[T]) -> Result<DenoiserOutput<T>>;
}

/// Arithmetic mean of the per-antenna variances.
pub fn pool_variance<T: Real>(var: &[T]) -> T {
    let s = var.iter().fold(T::zero(), |a, &b| a + b);
    s / T::from_usize_lossy(var.len().max(1))
}

/// Tweedie-based MMSE denoiser over any [`ScoreModel`].
#[derive(Debug, Clone)]
pub struct ScoreDenoiser<S> {
    pub model: S,
    /// Apply per-device power normalization around the score evaluation.
    pub normalize: bool,
    pub var_floor: f64,
}

impl<S> ScoreDenoiser<S> {
    pub fn new(model: S, normalize: bool) -> Self {
        ScoreDenoiser {
            model,
            normalize,
            var_floor: 1e-12,
        }
    }

    pub fn with_var_floor(mut self, floor: f64) -> Self {
        self.var_floor = floor;
        self
    }
}

impl<S> ScoreDenoiser<S> {
    fn run<T: Real>(&self, prior_mean: &[Complex<T>], dims: Dims, prior_var: &[T]) -> Result<DenoiserOutput<T>>
    where
        S: ScoreModel<T>,
    {
        if prior_mean.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                got: prior_mean.len(),
            });
        }
        if prior_var.len() != dims.m {
            return Err(Error::DimensionMismatch {
                expected: dims.m,
                got: prior_var.len(),
            });
        }
        let tau = pool_variance(prior_var);
        let floor = T::lit(self.var_floor);
        let (input, tau_in, scaling) = if self.normalize {
            let (h, t, s) = normalize_inputs(prior_mean, dims, tau);
            (h, t, Some(s))
        } else {
            (prior_mean.to_vec(), tau, None)
        };
        check_domain(&self.model, tau_in)?;
        if !self.model.has_second_order() {
            return Err(Error::MissingSecondOrder);
        }
        let scores = self.model.evaluate(&input, dims, tau_in, ScoreRequest::Both)?;
        if scores.first.len() != dims.len() || scores.second.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                got: scores.first.len().min(scores.second.len()),
            });
        }
        let mean = tweedie::posterior_mean(&input, tau_in, &scores.first);
        let var = tweedie::posterior_var(dims, tau_in, &scores.second, floor);
        let mut out = match scaling {
            Some(s) => rescale_outputs(&mean, dims, &var, &s),
            None => DenoiserOutput { mean, var },
        };
        for (v, &vp) in out.var.iter_mut().zip(prior_var) {
            *v = v.min(vp).max(floor);
        }
        Ok(out)
    }
}

impl<T: Real, S: ScoreModel<T>> ChannelDenoiser<T> for ScoreDenoiser<S> {
    fn denoise(&self, prior_mean: &[Complex<T>], dims: Dims, prior_var: &[T]) -> Result<DenoiserOutput<T>> {
        self.run(prior_mean, dims, prior_var).map_err(|e| Error::Denoiser {
            devices: dims.k,
            source: Box::new(e),
        })
    }
}

impl<T: Real, D: ChannelDenoiser<T> + ?Sized> ChannelDenoiser<T> for Box<D> {
    fn denoise(&self, prior_mean: &[Complex<T>], dims: Dims, prior_var: &[T]) -> Result<DenoiserOutput<T>> {
        (**self).denoise(prior_mean, dims, prior_var)
    }
}

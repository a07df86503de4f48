//! Closed-form score models used as oracles and as the BG-TMP baseline prior.

use num_complex::Complex;

use super::{ScoreModel, ScoreOutput, ScoreRequest};
use crate::error::{Error, Result};
use crate::model::Dims;
use crate::scalar::{abs2, log_sum_exp, Real};

#[derive(Debug, Clone, PartialEq)]
enum PriorVariance<T> {
    Shared(T),
    PerDevice(Vec<T>),
}

/// I.i.d. `CN(0, σ²)` channel prior. The perturbed prior is `CN(0, σ² + τ)`,
/// so `s₁ = -H̃ / (σ² + τ)` and every second-order diagonal entry is
/// `-1 / (σ² + τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScore<T> {
    var: PriorVariance<T>,
    domain: (T, T),
}

impl<T: Real> GaussianScore<T> {
    pub fn new(var: T) -> Self {
        GaussianScore {
            var: PriorVariance::Shared(var),
            domain: (T::zero(), T::infinity()),
        }
    }

    /// One prior variance per device of the batch, e.g. known large-scale gains.
    pub fn per_device(var: Vec<T>) -> Self {
        GaussianScore {
            var: PriorVariance::PerDevice(var),
            domain: (T::zero(), T::infinity()),
        }
    }

    pub fn with_domain(mut self, min: T, max: T) -> Self {
        self.domain = (min, max);
        self
    }

    fn variance(&self, b: usize) -> T {
        match &self.var {
            PriorVariance::Shared(v) => *v,
            PriorVariance::PerDevice(v) => v[b],
        }
    }
}

impl<T: Real> ScoreModel<T> for GaussianScore<T> {
    fn has_second_order(&self) -> bool {
        true
    }

    fn noise_domain(&self) -> (T, T) {
        self.domain
    }

    fn evaluate(&self, batch: &[Complex<T>], dims: Dims, tau: T, request: ScoreRequest) -> Result<ScoreOutput<T>> {
        if batch.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                got: batch.len(),
            });
        }
        if let PriorVariance::PerDevice(v) = &self.var {
            if v.len() != dims.k {
                return Err(Error::DimensionMismatch {
                    expected: v.len(),
                    got: dims.k,
                });
            }
        }
        let block = dims.block();
        let mut out = ScoreOutput::default();
        if request.wants_first() {
            out.first = batch
                .iter()
                .enumerate()
                .map(|(i, h)| -h / (self.variance(i / block.max(1)) + tau))
                .collect();
        }
        if request.wants_second() {
            out.second = (0..batch.len())
                .map(|i| -T::one() / (self.variance(i / block.max(1)) + tau))
                .collect();
        }
        Ok(out)
    }
}

/// One isotropic component of a block-level Gaussian mixture; `mean` is
/// broadcast to every entry of the `N × M` block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmComponent<T> {
    pub weight: T,
    pub mean: Complex<T>,
    pub var: T,
}

/// Gaussian-mixture prior over a whole channel block:
/// `p(H) = Σ_c w_c CN(vec H; μ_c 1, s_c I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmScore<T> {
    components: Vec<GmComponent<T>>,
}

impl<T: Real> GmScore<T> {
    pub fn new(components: Vec<GmComponent<T>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::DegenerateMixture("no components".into()));
        }
        let mut total = T::zero();
        for c in &components {
            if !(c.weight >= T::zero()) {
                return Err(Error::DegenerateMixture("negative weight".into()));
            }
            if !(c.var > T::zero()) || !c.var.is_finite() {
                return Err(Error::DegenerateMixture("component variance must be positive".into()));
            }
            total += c.weight;
        }
        if (total - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::DegenerateMixture(format!("weights sum to {total}")));
        }
        Ok(GmScore { components })
    }

    pub fn components(&self) -> &[GmComponent<T>] {
        &self.components
    }

    fn log_terms(&self, block: &[Complex<T>], tau: T) -> Vec<T> {
        let d = T::from_usize_lossy(block.len());
        self.components
            .iter()
            .map(|c| {
                let s = c.var + tau;
                let dist = block.iter().fold(T::zero(), |a, y| a + abs2(y - c.mean));
                c.weight.ln() - d * (T::PI() * s).ln() - dist / s
            })
            .collect()
    }

    /// `log p̃(y)` of one block under noise variance `tau` (`tau = 0` gives the prior).
    pub fn log_density(&self, block: &[Complex<T>], tau: T) -> T {
        log_sum_exp(&self.log_terms(block, tau))
    }

    fn block_scores(&self, block: &[Complex<T>], tau: T, first: &mut [Complex<T>], second: Option<&mut [T]>) {
        let logs = self.log_terms(block, tau);
        let lse = log_sum_exp(&logs);
        let resp: Vec<T> = logs.iter().map(|l| (*l - lse).exp()).collect();
        let zero = Complex::new(T::zero(), T::zero());
        // ḡ_i = Σ_c r_c g_ci with g_ci = -(y_i - μ_c)/(s_c + τ)
        for (i, y) in block.iter().enumerate() {
            let mut g = zero;
            for (c, r) in self.components.iter().zip(&resp) {
                g += -(y - c.mean) / (c.var + tau) * *r;
            }
            first[i] = g;
        }
        if let Some(second) = second {
            // s₂,ᵢ = -Σ r_c/(s_c+τ) + Σ r_c |g_ci|² - |ḡ_i|²
            let curvature = self
                .components
                .iter()
                .zip(&resp)
                .fold(T::zero(), |a, (c, r)| a - *r / (c.var + tau));
            for (i, y) in block.iter().enumerate() {
                let spread = self.components.iter().zip(&resp).fold(T::zero(), |a, (c, r)| {
                    let s = c.var + tau;
                    a + *r * abs2(y - c.mean) / (s * s)
                });
                second[i] = curvature + spread - abs2(first[i]);
            }
        }
    }
}

impl<T: Real> ScoreModel<T> for GmScore<T> {
    fn has_second_order(&self) -> bool {
        true
    }

    fn evaluate(&self, batch: &[Complex<T>], dims: Dims, tau: T, request: ScoreRequest) -> Result<ScoreOutput<T>> {
        if batch.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                got: batch.len(),
            });
        }
        let block = dims.block();
        let zero = Complex::new(T::zero(), T::zero());
        let mut first = vec![zero; batch.len()];
        let mut second = if request.wants_second() {
            vec![T::zero(); batch.len()]
        } else {
            Vec::new()
        };
        for b in 0..dims.k {
            let range = b * block..(b + 1) * block;
            let s2 = if request.wants_second() {
                Some(&mut second[range.clone()])
            } else {
                None
            };
            self.block_scores(&batch[range.clone()], tau, &mut first[range], s2);
        }
        Ok(ScoreOutput {
            first: if request.wants_first() { first } else { Vec::new() },
            second,
        })
    }
}

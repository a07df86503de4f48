//! Brute-force posterior moments under an AWGN observation, by tensor-grid
//! quadrature over the real and imaginary parts. Test oracle for the Tweedie
//! path; supports at most two complex entries.

use num_complex::Complex;

use super::GmScore;
use crate::error::{Error, Result};

/// Prior density handed to [`brute_force_mmse`].
pub enum PriorSpec<'a> {
    /// I.i.d. `CN(0, var)` entries.
    Gaussian { var: f64 },
    Mixture(&'a GmScore<f64>),
    /// Arbitrary log-density (up to a constant).
    Custom(&'a dyn Fn(&[Complex<f64>]) -> f64),
}

impl PriorSpec<'_> {
    fn log_density(&self, h: &[Complex<f64>]) -> f64 {
        match self {
            PriorSpec::Gaussian { var } => -h.iter().map(|z| z.norm_sqr()).sum::<f64>() / var,
            PriorSpec::Mixture(gm) => gm.log_density(h, 0.0),
            PriorSpec::Custom(f) => f(h),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureResult {
    pub mean: Vec<Complex<f64>>,
    /// Posterior variance `E|h_i - E h_i|²` per entry.
    pub var: Vec<f64>,
    /// Largest change between the last two refinement passes.
    pub error_estimate: f64,
    pub passes: usize,
}

const MAX_PASSES: usize = 40;

fn points_per_axis(dim: usize) -> usize {
    if dim == 1 {
        241
    } else {
        33
    }
}

struct Window {
    center: Vec<Complex<f64>>,
    half: Vec<f64>,
}

fn integrate(prior: &PriorSpec, y: &[Complex<f64>], tau: f64, win: &Window) -> (Vec<Complex<f64>>, Vec<f64>) {
    let dim = y.len();
    let g = points_per_axis(dim);
    let axes = 2 * dim;
    let total = g.pow(axes as u32);
    let coord = |axis: usize, i: usize| -> f64 {
        let entry = axis / 2;
        let c = if axis.is_multiple_of(2) { win.center[entry].re } else { win.center[entry].im };
        c - win.half[entry] + 2.0 * win.half[entry] * i as f64 / (g - 1) as f64
    };
    let mut logs = Vec::with_capacity(total);
    let mut point = vec![Complex::new(0.0, 0.0); dim];
    let mut idx = vec![0usize; axes];
    for _ in 0..total {
        for e in 0..dim {
            point[e] = Complex::new(coord(2 * e, idx[2 * e]), coord(2 * e + 1, idx[2 * e + 1]));
        }
        let lik: f64 = point.iter().zip(y).map(|(h, yv)| (yv - h).norm_sqr()).sum::<f64>() / tau;
        logs.push(prior.log_density(&point) - lik);
        for a in (0..axes).rev() {
            idx[a] += 1;
            if idx[a] < g {
                break;
            }
            idx[a] = 0;
        }
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut mean = vec![Complex::new(0.0, 0.0); dim];
    let mut second = vec![0.0; dim];
    idx.fill(0);
    for l in &logs {
        let w = (l - max).exp();
        z += w;
        for e in 0..dim {
            let h = Complex::new(coord(2 * e, idx[2 * e]), coord(2 * e + 1, idx[2 * e + 1]));
            mean[e] += h * w;
            second[e] += h.norm_sqr() * w;
        }
        for a in (0..axes).rev() {
            idx[a] += 1;
            if idx[a] < g {
                break;
            }
            idx[a] = 0;
        }
    }
    let mean: Vec<Complex<f64>> = mean.into_iter().map(|m| m / z).collect();
    let var = second
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / z - m.norm_sqr()).max(0.0))
        .collect();
    (mean, var)
}

/// Posterior mean and per-entry variance of `h` given `y = h + CN(0, τI)`.
pub fn brute_force_mmse(prior: &PriorSpec, y: &[Complex<f64>], tau: f64) -> Result<QuadratureResult> {
    let dim = y.len();
    if dim == 0 || dim > 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: dim });
    }
    if !(tau > 0.0) {
        return Err(Error::NonPositiveVariance(tau));
    }
    let g = points_per_axis(dim) as f64;
    // the likelihood confines the posterior to a few √τ around y
    let outer = 10.0 * tau.sqrt();
    let mut win = Window {
        center: y.to_vec(),
        half: vec![outer; dim],
    };
    let (mut mean, mut var) = integrate(prior, y, tau, &win);
    let mut err = f64::INFINITY;
    for pass in 1..MAX_PASSES {
        let spacing: Vec<f64> = win.half.iter().map(|h| 2.0 * h / (g - 1.0)).collect();
        win = Window {
            center: mean.clone(),
            half: var
                .iter()
                .zip(&spacing)
                .map(|(v, s)| (7.0 * v.sqrt()).max(4.0 * s).min(outer))
                .collect(),
        };
        let (m2, v2) = integrate(prior, y, tau, &win);
        err = mean
            .iter()
            .zip(&m2)
            .map(|(a, b)| (a - b).norm() / (1e-12 + b.norm()).max(1.0))
            .chain(var.iter().zip(&v2).map(|(a, b)| (a - b).abs() / b.max(1e-300)))
            .fold(0.0, f64::max);
        mean = m2;
        var = v2;
        if err < 1e-9 && pass >= 2 {
            return Ok(QuadratureResult {
                mean,
                var,
                error_estimate: err,
                passes: pass + 1,
            });
        }
    }
    Err(Error::GridTooCoarse(err))
}

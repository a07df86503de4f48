//! Turbo message passing between the LMMSE module (A) and the
//! activity/channel denoising module (B).

mod ops;
mod trace;

use std::time::Instant;

use num_complex::Complex;
use rayon::prelude::*;

pub use ops::{
    activity_update, bg_moments, damp, decide_activity, ext_scalar, extrinsic_weights, gaussian_ext,
    lmmse_update, relative_change, x_combine, x_project, Extrinsic,
};
pub use trace::{IterationRecord, IterationTrace, TRACE_HEADER};

use crate::denoise::{pool_variance, ChannelDenoiser};
use crate::error::{Error, Result};
use crate::model::{ActivityPosterior, EngineConfig, GaussianMessageSet, SystemConfig};
use crate::pilot::PilotOperator;
use crate::scalar::{norm2, Real};

/// One JADCE instance: configuration, pilot and observation.
#[derive(Debug, Clone)]
pub struct Problem<'a, T: Real> {
    pub system: &'a SystemConfig,
    pub pilot: &'a PilotOperator<T>,
    /// Observation `NT × M`, row-major (row `t·N + n`).
    pub y: &'a [Complex<T>],
    /// Mean large-scale power per channel entry, `Σ_k g_k / K`.
    pub mean_gain: f64,
    /// Effective channel `αH` for per-iteration NMSE, if known.
    pub truth: Option<&'a [Complex<T>]>,
}

/// Everything [`run`] returns.
#[derive(Debug, Clone)]
pub struct EngineOutput<T> {
    /// Channel posterior mean produced by the denoiser in the last iteration.
    pub h_post: Vec<Complex<T>>,
    /// Effective-channel posterior mean `x^post` of module B.
    pub x_post: Vec<Complex<T>>,
    pub activity: ActivityPosterior<T>,
    pub decisions: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: IterationTrace,
}

/// Options that do not change the numerics.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record wall time per iteration; zero otherwise.
    pub timing: bool,
    /// Process antenna columns of module A on the rayon pool.
    pub parallel_columns: bool,
}

fn nmse_db<T: Real>(truth: &[Complex<T>], est: &[Complex<T>]) -> f64 {
    let den = norm2(truth).widen();
    if den == 0.0 {
        return f64::NAN;
    }
    let num: f64 = truth.iter().zip(est).map(|(a, b)| (a - b).norm_sqr().widen()).sum();
    crate::harness::to_db(num / den)
}

fn check<T: Real>(msg: &GaussianMessageSet<T>, iter: usize, stage: &'static str) -> Result<()> {
    if msg.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { iter, stage })
    }
}

fn module_a<T: Real>(
    problem: &Problem<T>,
    pri: &GaussianMessageSet<T>,
    noise_var: T,
    parallel: bool,
) -> Result<GaussianMessageSet<T>> {
    let d = pri.dims;
    let rows = problem.pilot.n() * problem.pilot.t();
    let column = |m: usize| -> Result<(Vec<Complex<T>>, T)> {
        let y: Vec<Complex<T>> = (0..rows).map(|r| problem.y[r * d.m + m]).collect();
        lmmse_update(&y, problem.pilot, &pri.column(m), pri.var[m], noise_var)
    };
    let cols: Vec<(Vec<Complex<T>>, T)> = if parallel {
        (0..d.m).into_par_iter().map(column).collect::<Result<_>>()?
    } else {
        (0..d.m).map(column).collect::<Result<_>>()?
    };
    let mut post = GaussianMessageSet::constant(d, Complex::new(T::zero(), T::zero()), T::one());
    for (m, (x, v)) in cols.into_iter().enumerate() {
        post.set_column(m, &x);
        post.var[m] = v;
    }
    Ok(post)
}

/// Runs the turbo iteration until the module-B posterior stabilizes or
/// `eng.max_iters` is reached.
pub fn run<T: Real, D: ChannelDenoiser<T> + ?Sized>(
    problem: &Problem<T>,
    eng: &EngineConfig,
    denoiser: &D,
    opts: RunOptions,
) -> Result<EngineOutput<T>> {
    let cfg = problem.system;
    let d = cfg.dims();
    if problem.pilot.k() != d.k || problem.pilot.n() != d.n || problem.pilot.t() != cfg.t {
        return Err(Error::DimensionMismatch {
            expected: d.k * d.n * cfg.t,
            got: problem.pilot.k() * problem.pilot.n() * problem.pilot.t(),
        });
    }
    let rows = d.n * cfg.t;
    if problem.y.len() != rows * d.m {
        return Err(Error::DimensionMismatch {
            expected: rows * d.m,
            got: problem.y.len(),
        });
    }
    let floor = T::lit(eng.var_floor);
    let cap = T::lit(eng.var_cap);
    let gamma = T::lit(eng.damping);
    let lambda = T::lit(cfg.lambda);
    let noise_var = T::lit(cfg.noise_var);
    let zero = Complex::new(T::zero(), T::zero());
    let init_var = T::lit(cfg.lambda * problem.mean_gain).max(floor).min(cap);

    let mut a_pri = GaussianMessageSet::constant(d, zero, init_var);
    let mut b_pri: Option<GaussianMessageSet<T>> = None;
    let mut x_prev = vec![zero; d.len()];
    let mut trace = IterationTrace::default();
    let mut h_post = vec![zero; d.len()];
    let mut lambda_post = vec![lambda; d.k];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=eng.max_iters {
        let start = Instant::now();
        let mut clamps = 0;

        let a_post = module_a(problem, &a_pri, noise_var, opts.parallel_columns)?;
        check(&a_post, iter, "lmmse")?;
        let (a_ext, c) = gaussian_ext(&a_post, &a_pri, floor, cap);
        clamps += c;
        let b_in = match &b_pri {
            Some(prev) => damp(&a_ext, prev, gamma),
            None => a_ext,
        };
        check(&b_in, iter, "module-b prior")?;

        let den = denoiser.denoise(&b_in.mean, d, &b_in.var)?;
        let tau_pri = pool_variance(&b_in.var);
        let h_msg = GaussianMessageSet::new(d, den.mean, den.var)?;
        check(&h_msg, iter, "denoiser")?;
        let (h_ext, c) = gaussian_ext(&h_msg, &b_in, floor, cap);
        clamps += c;

        lambda_post = activity_update(&b_in.mean, &b_in.var, &h_ext.mean, &h_ext.var, lambda, d);
        if lambda_post.iter().any(|p| p.is_nan()) {
            return Err(Error::Diverged { iter, stage: "activity" });
        }
        let combined = x_combine(&b_in, &h_ext);
        let mut b_post = x_project(&lambda_post, &combined);
        for v in b_post.var.iter_mut() {
            *v = v.max(floor);
        }
        check(&b_post, iter, "projection")?;
        let (b_ext, c) = gaussian_ext(&b_post, &b_in, floor, cap);
        clamps += c;
        a_pri = damp(&b_ext, &a_pri, gamma);
        check(&a_pri, iter, "module-a prior")?;

        let residual = relative_change(&b_post.mean, &x_prev);
        let record = IterationRecord {
            iter,
            residual: residual.widen(),
            nmse_db: problem.truth.map_or(f64::NAN, |t| nmse_db(t, &b_post.mean)),
            v_pri_mean: b_in.mean_var().widen(),
            v_post_mean: b_post.mean_var().widen(),
            tau_pri: tau_pri.widen(),
            clamps,
            ms: if opts.timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
        };
        trace.push(record);
        x_prev = b_post.mean;
        h_post = h_msg.mean;
        b_pri = Some(b_in);
        iterations = iter;
        if residual < T::lit(eng.tol) {
            converged = true;
            break;
        }
    }

    let decisions = decide_activity(&lambda_post, T::lit(eng.threshold));
    Ok(EngineOutput {
        h_post,
        x_post: x_prev,
        activity: ActivityPosterior { prob: lambda_post },
        decisions,
        iterations,
        converged,
        trace,
    })
}

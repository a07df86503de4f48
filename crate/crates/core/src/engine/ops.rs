//! Per-stage updates of the turbo iteration. Each function is pure.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::model::{Dims, GaussianMessageSet};
use crate::pilot::PilotOperator;
use crate::scalar::{norm2, sigmoid, Real};

/// LMMSE estimate of one antenna column under the partial-orthogonal pilot.
///
/// `x_post = x_pri + v/(KPv + δ0²) · Qᴴ(y − Q x_pri)`,
/// `v_post = v − TPv² / (KPv + δ0²)`.
pub fn lmmse_update<T: Real>(
    y: &[Complex<T>],
    pilot: &PilotOperator<T>,
    x_pri: &[Complex<T>],
    v_pri: T,
    noise_var: T,
) -> Result<(Vec<Complex<T>>, T)> {
    if !(v_pri > T::zero()) {
        return Err(Error::NonPositiveVariance(v_pri.widen()));
    }
    let kp = T::from_usize_lossy(pilot.k()) * T::lit(pilot.power());
    let tp = T::from_usize_lossy(pilot.t()) * T::lit(pilot.power());
    let denom = kp * v_pri + noise_var;
    let mut r = pilot.apply(x_pri)?;
    if r.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: r.len(),
            got: y.len(),
        });
    }
    for (ri, yi) in r.iter_mut().zip(y) {
        *ri = yi - *ri;
    }
    let back = pilot.adjoint(&r)?;
    let gain = v_pri / denom;
    let x_post = x_pri.iter().zip(&back).map(|(x, b)| x + b * gain).collect();
    // v − TPv²/(KPv + δ0²), rearranged to avoid cancellation when δ0² → 0
    let v_post = v_pri * (noise_var + (kp - tp) * v_pri) / denom;
    Ok((x_post, v_post))
}

/// Outcome of one scalar extrinsic computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsic<T> {
    pub var: T,
    /// Precision weights `(w_post, w_pri)` such that `mean = w_post·post − w_pri·pri`.
    pub w_post: T,
    pub w_pri: T,
    pub clamped: bool,
}

/// Extrinsic variance `1/v_ext = 1/v_post − 1/v_pri` clamped into `[floor, cap]`.
///
/// When the precision difference does not exceed `1/cap` the message is
/// uninformative: its variance is `cap` and its mean falls back to the
/// posterior mean.
pub fn extrinsic_weights<T: Real>(v_post: T, v_pri: T, floor: T, cap: T) -> Extrinsic<T> {
    let prec = v_post.recip() - v_pri.recip();
    if !(prec > cap.recip()) {
        return Extrinsic {
            var: cap,
            w_post: T::one(),
            w_pri: T::zero(),
            clamped: true,
        };
    }
    if prec.is_infinite() {
        return Extrinsic {
            var: floor,
            w_post: T::one(),
            w_pri: T::zero(),
            clamped: true,
        };
    }
    let v = prec.recip();
    let (var, clamped) = if v < floor { (floor, true) } else { (v, false) };
    Extrinsic {
        var,
        w_post: v / v_post,
        w_pri: v / v_pri,
        clamped,
    }
}

/// Scalar form of [`gaussian_ext`].
pub fn ext_scalar<T: Real>(
    post_mean: Complex<T>,
    v_post: T,
    pri_mean: Complex<T>,
    v_pri: T,
    floor: T,
    cap: T,
) -> (Complex<T>, T, bool) {
    let e = extrinsic_weights(v_post, v_pri, floor, cap);
    (post_mean * e.w_post - pri_mean * e.w_pri, e.var, e.clamped)
}

/// Extrinsic message `post ÷ pri` for every antenna column. Returns the
/// message and the number of clamped columns.
pub fn gaussian_ext<T: Real>(
    post: &GaussianMessageSet<T>,
    pri: &GaussianMessageSet<T>,
    floor: T,
    cap: T,
) -> (GaussianMessageSet<T>, usize) {
    let d = post.dims;
    let weights: Vec<Extrinsic<T>> = post
        .var
        .iter()
        .zip(&pri.var)
        .map(|(&vp, &vq)| extrinsic_weights(vp, vq, floor, cap))
        .collect();
    let mut mean = Vec::with_capacity(d.len());
    for (i, (a, b)) in post.mean.iter().zip(&pri.mean).enumerate() {
        let w = &weights[i % d.m];
        mean.push(a * w.w_post - b * w.w_pri);
    }
    let clamps = weights.iter().filter(|w| w.clamped).count();
    let var = weights.into_iter().map(|w| w.var).collect();
    (GaussianMessageSet { dims: d, mean, var }, clamps)
}

/// Posterior activity probability of every device.
///
/// Computed in the log domain as `sigmoid(L₁ − L₀)` with
/// `L₁ − L₀ = logit λ + Σ_m [log CN(x; h, (v+τ)I) − log CN(x; 0, vI)]`.
pub fn activity_update<T: Real>(
    x_pri: &[Complex<T>],
    v_pri: &[T],
    h_ext: &[Complex<T>],
    tau_ext: &[T],
    lambda: T,
    dims: Dims,
) -> Vec<T> {
    let nn = T::from_usize_lossy(dims.n);
    let logit = lambda.ln() - (T::one() - lambda).ln();
    (0..dims.k)
        .map(|k| {
            let mut llr = logit;
            for m in 0..dims.m {
                let v = v_pri[m];
                let vt = v + tau_ext[m];
                let mut dist_on = T::zero();
                let mut dist_off = T::zero();
                for n in 0..dims.n {
                    let i = dims.idx(k, n, m);
                    dist_on += (x_pri[i] - h_ext[i]).norm_sqr();
                    dist_off += x_pri[i].norm_sqr();
                }
                llr += nn * (v.ln() - vt.ln()) - dist_on / vt + dist_off / v;
            }
            sigmoid(llr)
        })
        .collect()
}

/// Product of the module-B prior and the channel extrinsic (active branch).
pub fn x_combine<T: Real>(
    x_pri: &GaussianMessageSet<T>,
    h_ext: &GaussianMessageSet<T>,
) -> GaussianMessageSet<T> {
    let d = x_pri.dims;
    let var: Vec<T> = x_pri
        .var
        .iter()
        .zip(&h_ext.var)
        .map(|(&v, &t)| (v.recip() + t.recip()).recip())
        .collect();
    let mean = x_pri
        .mean
        .iter()
        .zip(&h_ext.mean)
        .enumerate()
        .map(|(i, (x, h))| {
            let m = i % d.m;
            (x / x_pri.var[m] + h / h_ext.var[m]) * var[m]
        })
        .collect();
    GaussianMessageSet { dims: d, mean, var }
}

/// Bernoulli-Gaussian posterior moments per element.
#[inline]
pub fn bg_moments<T: Real>(lambda: T, mean: Complex<T>, var: T) -> (Complex<T>, T) {
    let x = mean * lambda;
    let v = lambda * (T::one() - lambda) * mean.norm_sqr() + lambda * var;
    (x, v)
}

/// Mixes the active branch with the point mass at zero and averages the
/// element variances over `(k, n)` per antenna.
pub fn x_project<T: Real>(lambda_post: &[T], combined: &GaussianMessageSet<T>) -> GaussianMessageSet<T> {
    let d = combined.dims;
    let mut mean = Vec::with_capacity(d.len());
    let mut acc = vec![T::zero(); d.m];
    for k in 0..d.k {
        let lam = lambda_post[k];
        for n in 0..d.n {
            for m in 0..d.m {
                let (x, v) = bg_moments(lam, combined.mean[d.idx(k, n, m)], combined.var[m]);
                mean.push(x);
                acc[m] += v;
            }
        }
    }
    let count = T::from_usize_lossy((d.k * d.n).max(1));
    let var = acc.into_iter().map(|s| s / count).collect();
    GaussianMessageSet { dims: d, mean, var }
}

/// `γ·current + (1−γ)·previous` on means and variances.
pub fn damp<T: Real>(current: &GaussianMessageSet<T>, previous: &GaussianMessageSet<T>, gamma: T) -> GaussianMessageSet<T> {
    let keep = T::one() - gamma;
    GaussianMessageSet {
        dims: current.dims,
        mean: current
            .mean
            .iter()
            .zip(&previous.mean)
            .map(|(c, p)| c * gamma + p * keep)
            .collect(),
        var: current
            .var
            .iter()
            .zip(&previous.var)
            .map(|(&c, &p)| gamma * c + keep * p)
            .collect(),
    }
}

/// `α̂_k = 1` iff `λ_k ≥ threshold`.
pub fn decide_activity<T: Real>(lambda_post: &[T], threshold: T) -> Vec<bool> {
    lambda_post.iter().map(|&l| l >= threshold).collect()
}

/// `‖a − b‖ / ‖a‖`, zero when both vanish.
pub fn relative_change<T: Real>(current: &[Complex<T>], previous: &[Complex<T>]) -> T {
    let num = current
        .iter()
        .zip(previous)
        .fold(T::zero(), |acc, (a, b)| acc + (a - b).norm_sqr());
    let den = norm2(current);
    if num == T::zero() {
        T::zero()
    } else if den == T::zero() {
        T::infinity()
    } else {
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn lmmse_hand_value() {
        let pilot = PilotOperator::<f64>::from_rows(2, 1, 1, 1.0, vec![0]).unwrap();
        let (_, v) = lmmse_update(&[c(0.0, 0.0)], &pilot, &[c(0.0, 0.0); 2], 1.0, 1.0).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lmmse_certain_prior() {
        let pilot = PilotOperator::<f64>::from_rows(4, 1, 2, 1.0, vec![1, 3]).unwrap();
        let x = vec![c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 0.3), c(2.0, -1.0)];
        let y = vec![c(5.0, 5.0), c(-3.0, 1.0)];
        let (xp, v) = lmmse_update(&y, &pilot, &x, 1e-14, 0.1).unwrap();
        for (a, b) in xp.iter().zip(&x) {
            assert!((a - b).norm() < 1e-11);
        }
        assert!(v > 0.0 && v < 1e-14);
        assert!(matches!(lmmse_update(&y, &pilot, &x, 0.0, 0.1), Err(Error::NonPositiveVariance(_))));
    }

    #[test]
    fn ext_examples() {
        let (m, v, cl) = ext_scalar(c(1.0, 2.0), 0.5, c(0.3, -0.1), 1.0, 1e-12, 1e6);
        assert!(!cl);
        assert!((v - 1.0).abs() < 1e-15);
        assert!((m - (c(2.0, 4.0) - c(0.3, -0.1))).norm() < 1e-14);

        let p = c(0.7, 0.7);
        let (m, _, _) = ext_scalar(p, 0.2, p, 0.9, 1e-12, 1e6);
        assert!((m - p).norm() < 1e-14);

        let (_, v, cl) = ext_scalar(c(1.0, 0.0), 2.0, c(0.0, 0.0), 1.0, 1e-12, 1e6);
        assert!(cl);
        assert_eq!(v, 1e6);
        let (_, v, cl) = ext_scalar(c(1.0, 0.0), 1.0, c(0.0, 0.0), 1.0, 1e-12, 1e6);
        assert!(cl && v == 1e6);
    }

    #[test]
    fn ext_floor() {
        let (_, v, cl) = ext_scalar(c(1.0, 0.0), 1e-14, c(0.0, 0.0), 1.0, 1e-12, 1e6);
        assert!(cl);
        assert_eq!(v, 1e-12);
    }

    #[test]
    fn activity_examples() {
        let dims = Dims::new(2, 2, 1);
        let x = vec![c(0.3, 0.1), c(-0.2, 0.5), c(1.0, 1.0), c(0.0, -2.0)];
        let h = vec![c(0.5, 0.0), c(0.1, 0.1), c(0.9, 1.1), c(0.2, -1.5)];
        let ones = activity_update(&x, &[0.4], &h, &[0.7], 1.0, dims);
        assert!(ones.iter().all(|&p| p == 1.0));
        let same = activity_update(&x, &[0.4], &[c(0.0, 0.0); 4], &[0.0], 0.3, dims);
        for p in same {
            assert!((p - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn activity_monotone_in_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = Dims::new(6, 3, 2);
        let x: Vec<_> = (0..dims.len()).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>())).collect();
        let h: Vec<_> = (0..dims.len()).map(|_| c(rng.random::<f64>(), rng.random::<f64>() - 0.5)).collect();
        let mut prev = vec![0.0; dims.k];
        for lam in [0.01, 0.1, 0.3, 0.5, 0.9, 0.999] {
            let p = activity_update(&x, &[0.2, 0.5], &h, &[1.0, 0.3], lam, dims);
            for (a, b) in p.iter().zip(&prev) {
                assert!(a >= b);
            }
            prev = p;
        }
    }

    #[test]
    fn combine_examples() {
        let dims = Dims::new(1, 1, 1);
        let xp = GaussianMessageSet::new(dims, vec![c(1.0, -1.0)], vec![0.4]).unwrap();
        let wide = GaussianMessageSet::new(dims, vec![c(9.0, 9.0)], vec![1e300]).unwrap();
        let out = x_combine(&xp, &wide);
        assert!((out.mean[0] - xp.mean[0]).norm() < 1e-12);
        assert!((out.var[0] - 0.4).abs() < 1e-12);

        let a = GaussianMessageSet::new(dims, vec![c(1.0, 0.0)], vec![2.0]).unwrap();
        let b = GaussianMessageSet::new(dims, vec![c(0.0, 3.0)], vec![2.0]).unwrap();
        let out = x_combine(&a, &b);
        assert!((out.var[0] - 1.0).abs() < 1e-15);
        assert!((out.mean[0] - c(0.5, 1.5)).norm() < 1e-15);
    }

    #[test]
    fn project_examples() {
        let dims = Dims::new(3, 1, 1);
        let comb = GaussianMessageSet::new(dims, vec![c(1.0, 2.0); 3], vec![0.3]).unwrap();
        let one = x_project(&[1.0, 1.0, 1.0], &comb);
        assert_eq!(one.mean, comb.mean);
        assert!((one.var[0] - 0.3).abs() < 1e-15);
        let zero = x_project(&[0.0, 0.0, 0.0], &comb);
        assert!(zero.mean.iter().all(|z| z.norm() == 0.0));
        assert_eq!(zero.var[0], 0.0);
        let (_, v) = bg_moments(0.5, c(1.0, 2.0), 0.3);
        assert!((v - (0.25 * 5.0 + 0.15)).abs() < 1e-15);
    }

    #[test]
    fn project_matches_monte_carlo() {
        // λ = 0.5 draws of z = b·(x̃ + w), b ~ Bern(λ), w ~ CN(0, ṽ)
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (lam, mean, var) = (0.5, c(0.8, -0.6), 0.5);
        let draws = 1_000_000;
        let mut s1 = c(0.0, 0.0);
        let mut s2 = 0.0;
        for _ in 0..draws {
            if rng.random::<f64>() < lam {
                let w: Complex<f64> = crate::channel::sample_cn(&mut rng, var);
                let z = mean + w;
                s1 += z;
                s2 += z.norm_sqr();
            }
        }
        let m = s1 / draws as f64;
        let v = s2 / draws as f64 - m.norm_sqr();
        let (xm, xv) = bg_moments(lam, mean, var);
        assert!((m - xm).norm() < 3e-3);
        assert!((v - xv).abs() < 3e-3);
    }

    #[test]
    fn damping() {
        let dims = Dims::new(1, 1, 1);
        let cur = GaussianMessageSet::new(dims, vec![c(2.0, 0.0)], vec![2.0]).unwrap();
        let prev = GaussianMessageSet::new(dims, vec![c(0.0, 0.0)], vec![0.0]).unwrap();
        assert_eq!(damp(&cur, &prev, 1.0), cur);
        let half = damp(&cur, &prev, 0.5);
        assert_eq!(half.mean[0], c(1.0, 0.0));
        assert_eq!(half.var[0], 1.0);

        // constant input: error after i steps is (1−γ)^i of the initial gap
        let gamma = 0.3;
        let mut state = prev.clone();
        for i in 1..=40 {
            state = damp(&cur, &state, gamma);
            let want = 2.0 * (1.0 - (1.0f64 - gamma).powi(i));
            assert!((state.mean[0].re - want).abs() < 1e-13);
        }
    }

    #[test]
    fn decisions() {
        assert_eq!(decide_activity(&[0.9, 0.1], 0.5), vec![true, false]);
        assert_eq!(decide_activity(&[0.5], 0.5), vec![true]);
        assert_eq!(decide_activity(&[0.1, 0.2, 0.49], 0.5), vec![false; 3]);
    }

    #[test]
    fn residual() {
        assert_eq!(relative_change::<f64>(&[c(0.0, 0.0)], &[c(0.0, 0.0)]), 0.0);
        assert_eq!(relative_change(&[c(1.0, 0.0)], &[c(0.0, 0.0)]), 1.0);
        assert!(relative_change(&[c(0.0, 0.0)], &[c(1.0, 0.0)]).is_infinite());
    }
}

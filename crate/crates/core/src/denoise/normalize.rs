//! Per-device power normalization around a score model trained on unit-power
//! channels, and the matching inverse scaling of its outputs.

use num_complex::Complex;

use super::DenoiserOutput;
use crate::model::Dims;
use crate::scalar::{norm2, Real};

/// Scale factors produced by [`normalize_inputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling<T> {
    /// Per-device amplitude scale `s_k`.
    pub device: Vec<T>,
    /// `KNM / max(Σ_k ‖H_k‖² − KNM τ, ε_p)`, the factor mapping `τ` to `τ̄`.
    pub pooled: T,
    /// Whether any power estimate hit the floor.
    pub floored: bool,
}

fn power_floor<T: Real>(dims: Dims, tau: T) -> T {
    (T::lit(1e-9) * T::from_usize_lossy(dims.block()) * tau).max(T::min_positive_value().sqrt())
}

/// Scales each device block to unit power after removing the noise power
/// `NMτ`, and maps `τ` onto the same pooled scale.
pub fn normalize_inputs<T: Real>(prior_mean: &[Complex<T>], dims: Dims, tau: T) -> (Vec<Complex<T>>, T, Scaling<T>) {
    let block = dims.block();
    let nm = T::from_usize_lossy(block);
    let knm = T::from_usize_lossy(dims.len());
    let floor = power_floor(dims, tau);
    let mut floored = false;
    let mut total = T::zero();
    let mut device = Vec::with_capacity(dims.k);
    let mut out = Vec::with_capacity(prior_mean.len());
    for chunk in prior_mean.chunks(block.max(1)).take(dims.k) {
        let energy = norm2(chunk);
        total += energy;
        let signal = energy - nm * tau;
        if signal < floor {
            floored = true;
        }
        let s = (nm / signal.max(floor)).sqrt();
        device.push(s);
        out.extend(chunk.iter().map(|z| z * s));
    }
    let signal = total - knm * tau;
    if signal < floor {
        floored = true;
    }
    let pooled = knm / signal.max(floor);
    (
        out,
        tau * pooled,
        Scaling {
            device,
            pooled,
            floored,
        },
    )
}

/// Undoes [`normalize_inputs`] on a posterior mean and per-antenna variance.
pub fn rescale_outputs<T: Real>(post_mean: &[Complex<T>], dims: Dims, post_var: &[T], scaling: &Scaling<T>) -> DenoiserOutput<T> {
    let block = dims.block().max(1);
    let mean = post_mean
        .iter()
        .enumerate()
        .map(|(i, z)| z / scaling.device[i / block])
        .collect();
    let var = post_var.iter().map(|v| *v / scaling.pooled).collect();
    DenoiserOutput { mean, var }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_cn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_power_after_noise_removal() {
        // ‖H_k‖² = 2NM with τ = 1 leaves NM of signal power, so s_k = 1.
        let dims = Dims::new(1, 2, 2);
        let h = vec![Complex::new(2f64.sqrt(), 0.0); 4];
        let (hb, tb, s) = normalize_inputs(&h, dims, 1.0);
        assert!((s.device[0] - 1.0).abs() < 1e-15);
        assert!((tb - 1.0).abs() < 1e-15);
        for (a, b) in hb.iter().zip(&h) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn noiseless_matches_training_normalization() {
        let dims = Dims::new(2, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h: Vec<Complex<f64>> = (0..12).map(|_| sample_cn(&mut rng, 4.0)).collect();
        let (hb, _, s) = normalize_inputs(&h, dims, 0.0);
        for k in 0..2 {
            let blk = &h[k * 6..(k + 1) * 6];
            let want = (6.0f64).sqrt() / norm2(blk).sqrt();
            assert!((s.device[k] - want).abs() < 1e-13);
            assert!((norm2(&hb[k * 6..(k + 1) * 6]) - 6.0).abs() < 1e-12);
        }
        let back = rescale_outputs(&hb, dims, &[0.0, 0.0], &s);
        for (a, b) in back.mean.iter().zip(&h) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn pure_noise_device_is_floored() {
        let dims = Dims::new(1, 2, 2);
        let h = vec![Complex::new(0.1f64, 0.0); 4];
        let (hb, tb, s) = normalize_inputs(&h, dims, 1.0);
        assert!(s.floored);
        assert!(s.device[0].is_finite() && s.device[0] > 0.0);
        assert!(hb.iter().all(|z| z.re.is_finite()));
        assert!(tb.is_finite());
        let (_, _, s0) = normalize_inputs(&[Complex::new(0.0f64, 0.0); 4], dims, 0.0);
        assert!(s0.device[0].is_finite());
    }

    #[test]
    fn scale_two_halves_back() {
        let dims = Dims::new(1, 1, 1);
        let s = Scaling { device: vec![2.0f64], pooled: 4.0, floored: false };
        let out = rescale_outputs(&[Complex::new(2.0, 4.0)], dims, &[8.0], &s);
        assert_eq!(out.mean[0], Complex::new(1.0, 2.0));
        assert_eq!(out.var[0], 2.0);
    }

    #[test]
    fn round_trip_without_floor() {
        let dims = Dims::new(4, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h: Vec<Complex<f64>> = (0..dims.len()).map(|_| sample_cn(&mut rng, 3.0)).collect();
        let tau = 0.2;
        let (hb, tb, s) = normalize_inputs(&h, dims, tau);
        assert!(!s.floored);
        let back = rescale_outputs(&hb, dims, &[tb, tb], &s);
        for (a, b) in back.mean.iter().zip(&h) {
            assert!((a - b).norm() < 1e-12);
        }
        for v in back.var {
            assert!((v - tau).abs() < 1e-12);
        }
    }
}

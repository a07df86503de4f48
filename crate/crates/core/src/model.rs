//! Configuration and domain value types shared by the engine, the generators
//! and the Monte Carlo harness.
//!
//! Complex tensors indexed by `(device k, subcarrier n, antenna m)` are stored
//! flat in `k`-major, then `n`, then `m` order; see [`Dims::idx`].

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Physical system dimensions and powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Device count.
    pub k: usize,
    /// Pilot subcarrier count.
    pub n: usize,
    /// Base-station antenna count.
    pub m: usize,
    /// Pilot OFDM symbol count.
    pub t: usize,
    /// Per-device transmit power (linear).
    pub power: f64,
    /// Prior activity probability.
    pub lambda: f64,
    /// AWGN variance per complex entry (linear).
    pub noise_var: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            k: 100,
            n: 8,
            m: 4,
            t: 30,
            power: 1.0,
            lambda: 0.1,
            noise_var: 0.01,
            seed: 1,
        }
    }
}

impl SystemConfig {
    pub fn dims(&self) -> Dims {
        Dims::new(self.k, self.n, self.m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    Gaussian,
    GaussianMixture,
    Bridge,
}

impl DenoiserKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DenoiserKind::Gaussian => "gaussian",
            DenoiserKind::GaussianMixture => "gaussian_mixture",
            DenoiserKind::Bridge => "bridge",
        }
    }
}

impl std::str::FromStr for DenoiserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(DenoiserKind::Gaussian),
            "gaussian_mixture" | "gm" => Ok(DenoiserKind::GaussianMixture),
            "bridge" => Ok(DenoiserKind::Bridge),
            other => Err(Error::config("denoiser.kind", format!("unknown kind `{other}`"))),
        }
    }
}

/// Iteration control for the message-passing engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub max_iters: usize,
    /// Damping factor γ in (0, 1]; 1 disables damping.
    pub damping: f64,
    /// Activity decision threshold on the posterior activity probability.
    pub threshold: f64,
    pub var_floor: f64,
    pub var_cap: f64,
    /// Relative change of the module-B posterior mean that stops iterating.
    pub tol: f64,
    pub denoiser_kind: DenoiserKind,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_iters: 30,
            damping: 0.8,
            threshold: 0.5,
            var_floor: 1e-12,
            var_cap: 1e6,
            tol: 1e-4,
            denoiser_kind: DenoiserKind::Gaussian,
        }
    }
}

/// Checks every invariant of both configs, naming the first violated field.
pub fn validate(cfg: &SystemConfig, eng: &EngineConfig) -> Result<()> {
    if cfg.k < 1 {
        return Err(Error::config("system.k", "K must be at least 1"));
    }
    if cfg.n < 1 {
        return Err(Error::config("system.n", "N must be at least 1"));
    }
    if cfg.m < 1 {
        return Err(Error::config("system.m", "M must be at least 1"));
    }
    if cfg.t < 1 {
        return Err(Error::config("system.t", "T must be at least 1"));
    }
    if cfg.t > cfg.k {
        return Err(Error::config("system.t", "T must not exceed K"));
    }
    if !(cfg.power > 0.0 && cfg.power.is_finite()) {
        return Err(Error::config("system.p", "P must be positive and finite"));
    }
    if !(cfg.lambda > 0.0 && cfg.lambda <= 1.0) {
        return Err(Error::config("system.lambda", "lambda must lie in (0, 1]"));
    }
    if !(cfg.noise_var > 0.0 && cfg.noise_var.is_finite()) {
        return Err(Error::config("system.noise_var", "noise variance must be positive"));
    }
    if !(eng.damping > 0.0 && eng.damping <= 1.0) {
        return Err(Error::config("engine.damping", "damping must lie in (0, 1]"));
    }
    if !(eng.threshold > 0.0 && eng.threshold < 1.0) {
        return Err(Error::config("engine.threshold", "threshold must lie in (0, 1)"));
    }
    if !(eng.var_floor > 0.0) {
        return Err(Error::config("engine.var_floor", "variance floor must be positive"));
    }
    if !(eng.var_cap > eng.var_floor && eng.var_cap.is_finite()) {
        return Err(Error::config("engine.var_cap", "variance cap must exceed the floor"));
    }
    if !(eng.tol > 0.0) {
        return Err(Error::config("engine.tol", "tolerance must be positive"));
    }
    if eng.max_iters < 1 {
        return Err(Error::config("engine.max_iters", "need at least one iteration"));
    }
    Ok(())
}

/// Shape of a `(k, n, m)` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub k: usize,
    pub n: usize,
    pub m: usize,
}

impl Dims {
    pub fn new(k: usize, n: usize, m: usize) -> Self {
        Dims { k, n, m }
    }

    #[inline]
    pub fn idx(&self, k: usize, n: usize, m: usize) -> usize {
        (k * self.n + n) * self.m + m
    }

    pub fn len(&self) -> usize {
        self.k * self.n * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries per device block (`N·M`).
    pub fn block(&self) -> usize {
        self.n * self.m
    }
}

/// One draw of the physical channel: per-device `N×M` matrices, activity
/// indicators and large-scale gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization<T> {
    pub dims: Dims,
    /// Channel coefficients indexed `(k, n, m)`.
    pub h: Vec<Complex<T>>,
    pub active: Vec<bool>,
    /// Large-scale gain per device (linear power scale).
    pub gain: Vec<f64>,
}

impl<T: Real> ChannelRealization<T> {
    /// Effective channel `X_k = α_k H_k`, computed on demand.
    pub fn effective(&self) -> Vec<Complex<T>> {
        let block = self.dims.block();
        let mut x = self.h.clone();
        for (k, &a) in self.active.iter().enumerate() {
            if !a {
                x[k * block..(k + 1) * block].fill(Complex::new(T::zero(), T::zero()));
            }
        }
        x
    }

    pub fn device(&self, k: usize) -> &[Complex<T>] {
        let block = self.dims.block();
        &self.h[k * block..(k + 1) * block]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Gaussian messages over a `(k, n, m)` tensor with one variance per antenna.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMessageSet<T> {
    pub dims: Dims,
    pub mean: Vec<Complex<T>>,
    pub var: Vec<T>,
}

impl<T: Real> GaussianMessageSet<T> {
    pub fn new(dims: Dims, mean: Vec<Complex<T>>, var: Vec<T>) -> Result<Self> {
        if mean.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                got: mean.len(),
            });
        }
        if var.len() != dims.m {
            return Err(Error::DimensionMismatch {
                expected: dims.m,
                got: var.len(),
            });
        }
        Ok(GaussianMessageSet { dims, mean, var })
    }

    pub fn constant(dims: Dims, mean: Complex<T>, var: T) -> Self {
        GaussianMessageSet {
            dims,
            mean: vec![mean; dims.len()],
            var: vec![var; dims.m],
        }
    }

    pub fn mean_var(&self) -> T {
        let s = self.var.iter().fold(T::zero(), |a, &b| a + b);
        s / T::from_usize_lossy(self.var.len().max(1))
    }

    pub fn is_finite(&self) -> bool {
        self.var.iter().all(|v| v.is_finite())
            && self.mean.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Extracts antenna column `m` as a length-`K·N` vector in `(k, n)` order.
    pub fn column(&self, m: usize) -> Vec<Complex<T>> {
        let d = self.dims;
        let mut out = Vec::with_capacity(d.k * d.n);
        for k in 0..d.k {
            for n in 0..d.n {
                out.push(self.mean[d.idx(k, n, m)]);
            }
        }
        out
    }

    pub fn set_column(&mut self, m: usize, col: &[Complex<T>]) {
        let d = self.dims;
        for k in 0..d.k {
            for n in 0..d.n {
                self.mean[d.idx(k, n, m)] = col[k * d.n + n];
            }
        }
    }
}

/// Posterior activity probabilities, one per device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityPosterior<T> {
    pub prob: Vec<T>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pilot_count_cannot_exceed_devices() {
        let cfg = SystemConfig {
            k: 4,
            t: 5,
            ..SystemConfig::default()
        };
        match validate(&cfg, &EngineConfig::default()) {
            Err(Error::InvalidConfig { field, reason }) => {
                assert_eq!(field, "system.t");
                assert_eq!(reason, "T must not exceed K");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn full_scale_operating_point_is_valid() {
        let cfg = SystemConfig {
            k: 800,
            n: 48,
            m: 32,
            t: 30,
            lambda: 0.05,
            ..SystemConfig::default()
        };
        let eng = EngineConfig {
            damping: 0.8,
            ..EngineConfig::default()
        };
        validate(&cfg, &eng).unwrap();
    }

    #[test]
    fn zero_noise_rejected() {
        let cfg = SystemConfig {
            noise_var: 0.0,
            ..SystemConfig::default()
        };
        let err = validate(&cfg, &EngineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { ref field, .. } if field == "system.noise_var"));
    }

    #[test]
    fn effective_channel_zeroes_inactive() {
        let dims = Dims::new(2, 1, 1);
        let real = ChannelRealization {
            dims,
            h: vec![Complex::new(1.0, 2.0), Complex::new(3.0, 4.0)],
            active: vec![false, true],
            gain: vec![1.0, 1.0],
        };
        let x = real.effective();
        assert_eq!(x[0], Complex::new(0.0, 0.0));
        assert_eq!(x[1], Complex::new(3.0, 4.0));
    }

    #[test]
    fn serde_round_trip() {
        let cfg = SystemConfig::default();
        let back: SystemConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
        let eng = EngineConfig::default();
        let back: EngineConfig = serde_json::from_str(&serde_json::to_string(&eng).unwrap()).unwrap();
        assert_eq!(eng, back);
        let msg = GaussianMessageSet::constant(Dims::new(2, 3, 2), Complex::new(0.5, -1.0), 0.25f64);
        let back: GaussianMessageSet<f64> =
            serde_json::from_str(&serde_json::to_string(&msg).unwrap()).unwrap();
        assert_eq!(msg, back);
    }

    proptest! {
        #[test]
        fn validated_configs_satisfy_invariants(
            k in 0usize..50, n in 0usize..5, m in 0usize..5, t in 0usize..60,
            p in -1.0f64..5.0, lambda in -0.2f64..1.2, noise in -0.1f64..1.0,
            damping in -0.2f64..1.2, thr in -0.2f64..1.2, tol in -1e-3f64..1e-2,
        ) {
            let cfg = SystemConfig { k, n, m, t, power: p, lambda, noise_var: noise, seed: 0 };
            let eng = EngineConfig { damping, threshold: thr, tol, ..EngineConfig::default() };
            if validate(&cfg, &eng).is_ok() {
                prop_assert!(k >= 1 && n >= 1 && m >= 1);
                prop_assert!(t >= 1 && t <= k);
                prop_assert!(p > 0.0 && noise > 0.0);
                prop_assert!(lambda > 0.0 && lambda <= 1.0);
                prop_assert!(damping > 0.0 && damping <= 1.0);
                prop_assert!(thr > 0.0 && thr < 1.0);
                prop_assert!(tol > 0.0);
                prop_assert!(eng.var_floor < eng.var_cap);
            }
        }
    }
}

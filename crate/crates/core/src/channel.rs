//! Synthetic multipath channels, device activity, path loss and the noisy
//! pilot observation.

use std::io::{Read, Write};

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChannelRealization, SystemConfig};
use crate::pilot::PilotOperator;
use crate::scalar::Real;

const CHANNEL_MAGIC: &[u8; 4] = b"CHNL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    IidGaussian,
    Multipath,
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid_gaussian" | "iid" => Ok(ChannelKind::IidGaussian),
            "multipath" => Ok(ChannelKind::Multipath),
            other => Err(Error::config("channel.kind", format!("unknown kind `{other}`"))),
        }
    }
}

impl ChannelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelKind::IidGaussian => "iid_gaussian",
            ChannelKind::Multipath => "multipath",
        }
    }
}

/// Relative power assigned to successive paths before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerProfile {
    /// `ρ_l ∝ exp(-decay · l)`; `None` uses `decay = 1/L`.
    Exponential { decay: Option<f64> },
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub kind: ChannelKind,
    pub paths: usize,
    /// Subcarrier spacing Δf in Hz.
    pub subcarrier_spacing: f64,
    /// Range the per-channel delay spread is drawn from, seconds.
    pub delay_spread_range: (f64, f64),
    /// Device-to-BS distance range, km.
    pub distance_range: (f64, f64),
    pub power_profile: PowerProfile,
    /// Replace every large-scale gain by 1 (perfect path-loss compensation).
    pub compensate_path_loss: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            kind: ChannelKind::Multipath,
            paths: 20,
            subcarrier_spacing: 30e3,
            delay_spread_range: (100e-9, 363e-9),
            distance_range: (0.035, 0.2),
            power_profile: PowerProfile::Exponential { decay: None },
            compensate_path_loss: false,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.subcarrier_spacing > 0.0) {
            return Err(Error::config("channel.subcarrier_spacing_hz", "must be positive"));
        }
        let (s0, s1) = self.delay_spread_range;
        if !(0.0 <= s0 && s0 <= s1) {
            return Err(Error::config("channel.delay_spread_ns", "need 0 <= min <= max"));
        }
        let (d0, d1) = self.distance_range;
        if !(d0 > 0.0 && d0 <= d1) {
            return Err(Error::config("channel.distance_km", "need 0 < min <= max"));
        }
        Ok(())
    }
}

/// Parameters of the `L` propagation paths of one channel draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet<T> {
    pub coeff: Vec<Complex<T>>,
    pub power: Vec<T>,
    /// Seconds.
    pub delay: Vec<T>,
    /// Angle of arrival, radians.
    pub angle: Vec<T>,
}

impl<T> PathSet<T> {
    pub fn len(&self) -> usize {
        self.coeff.len()
    }
    pub fn is_empty(&self) -> bool {
        self.coeff.is_empty()
    }
}

/// Temporal steering vector `a_N(τ)`, unit norm.
pub fn steering_time<T: Real>(delay: T, n: usize, spacing: T) -> Vec<Complex<T>> {
    let s = T::one() / T::from_usize_lossy(n).sqrt();
    (0..n)
        .map(|i| {
            let ang = -T::TAU() * spacing * delay * T::from_usize_lossy(i);
            Complex::new(ang.cos(), ang.sin()) * s
        })
        .collect()
}

/// Spatial steering vector `b_M(φ)` of a half-wavelength ULA, unit norm.
pub fn steering_space<T: Real>(angle: T, m: usize) -> Vec<Complex<T>> {
    let s = T::one() / T::from_usize_lossy(m).sqrt();
    let sin = angle.sin();
    (0..m)
        .map(|i| {
            let ang = -T::PI() * sin * T::from_usize_lossy(i);
            Complex::new(ang.cos(), ang.sin()) * s
        })
        .collect()
}

/// Draws `CN(0, var)`.
pub fn sample_cn<T: Real, R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex<T> {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(T::lit(re * s), T::lit(im * s))
}

fn profile_weights(profile: PowerProfile, l: usize) -> Vec<f64> {
    let raw: Vec<f64> = match profile {
        PowerProfile::Uniform => vec![1.0; l],
        PowerProfile::Exponential { decay } => {
            let rate = decay.unwrap_or(1.0 / l.max(1) as f64);
            (0..l).map(|i| (-rate * i as f64).exp()).collect()
        }
    };
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Draws delays, angles and complex gains for `params.paths` paths.
pub fn sample_paths<T: Real, R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> PathSet<T> {
    let l = params.paths;
    let (s0, s1) = params.delay_spread_range;
    let spread = if s1 > s0 { rng.random_range(s0..=s1) } else { s0 };
    let power = profile_weights(params.power_profile, l);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut set = PathSet {
        coeff: Vec::with_capacity(l),
        power: power.iter().map(|&p| T::lit(p)).collect(),
        delay: Vec::with_capacity(l),
        angle: Vec::with_capacity(l),
    };
    for _ in 0..l {
        let delay = if spread > 0.0 { rng.random_range(0.0..=spread) } else { 0.0 };
        let mut angle: f64 = rng.random_range(-half_pi..half_pi);
        if angle <= -half_pi {
            angle = 0.0;
        }
        set.delay.push(T::lit(delay));
        set.angle.push(T::lit(angle));
        set.coeff.push(sample_cn(rng, 1.0));
    }
    set
}

/// `H = Σ_l β_l √ρ_l a_N(τ_l) b_M(φ_l)ᴴ`, returned `n`-major (`N × M`).
pub fn synth_channel<T: Real>(paths: &PathSet<T>, n: usize, m: usize, spacing: T) -> Vec<Complex<T>> {
    let mut h = vec![Complex::new(T::zero(), T::zero()); n * m];
    for l in 0..paths.len() {
        let a = steering_time(paths.delay[l], n, spacing);
        let b = steering_space(paths.angle[l], m);
        let g = paths.coeff[l] * paths.power[l].sqrt();
        for (i, ai) in a.iter().enumerate() {
            let ga = g * ai;
            for (j, bj) in b.iter().enumerate() {
                h[i * m + j] += ga * bj.conj();
            }
        }
    }
    h
}

/// Linear large-scale gain for distance `d` in km: `-128.1 - 36.7 log10(d)` dB.
pub fn path_loss(d_km: f64) -> Result<f64> {
    if !(d_km > 0.0) {
        return Err(Error::NonPositiveDistance(d_km));
    }
    Ok(10f64.powf(path_loss_db(d_km) / 10.0))
}

pub fn path_loss_db(d_km: f64) -> f64 {
    -128.1 - 36.7 * d_km.log10()
}

/// `δ0² = P · mean_k(g_k) / 10^(SNR/10)`.
pub fn noise_var_for_snr(power: f64, gains: &[f64], snr_db: f64) -> f64 {
    let mean = gains.iter().sum::<f64>() / gains.len().max(1) as f64;
    power * mean / 10f64.powf(snr_db / 10.0)
}

/// Draws activity, distances and channels for all `K` devices.
///
/// Draw order is fixed (activity, then distances, then channels device by
/// device) so a given generator state reproduces the realization exactly.
pub fn sample_realization<T: Real, R: Rng + ?Sized>(
    cfg: &SystemConfig,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<ChannelRealization<T>> {
    params.validate()?;
    let dims = cfg.dims();
    let lambda = cfg.lambda.clamp(0.0, 1.0);
    let active: Vec<bool> = (0..cfg.k).map(|_| rng.random::<f64>() < lambda).collect();
    let (d0, d1) = params.distance_range;
    let mut gain = Vec::with_capacity(cfg.k);
    for _ in 0..cfg.k {
        let d = if d1 > d0 { rng.random_range(d0..=d1) } else { d0 };
        gain.push(if params.compensate_path_loss { 1.0 } else { path_loss(d)? });
    }
    let spacing = T::lit(params.subcarrier_spacing);
    let mut h = Vec::with_capacity(dims.len());
    for &g in &gain {
        match params.kind {
            ChannelKind::IidGaussian => {
                for _ in 0..dims.block() {
                    h.push(sample_cn(rng, g));
                }
            }
            ChannelKind::Multipath => {
                let paths = sample_paths::<T, R>(params, rng);
                let s = T::lit(g.sqrt());
                h.extend(synth_channel(&paths, cfg.n, cfg.m, spacing).into_iter().map(|z| z * s));
            }
        }
    }
    Ok(ChannelRealization { dims, h, active, gain })
}

/// `Y = Q X + N`, returned row-major `NT × M` (row `t·N + n`).
pub fn observe<T: Real, R: Rng + ?Sized>(
    real: &ChannelRealization<T>,
    pilot: &PilotOperator<T>,
    noise_var: f64,
    rng: &mut R,
) -> Result<Vec<Complex<T>>> {
    let d = real.dims;
    if pilot.k() != d.k || pilot.n() != d.n {
        return Err(Error::DimensionMismatch {
            expected: pilot.k() * pilot.n(),
            got: d.k * d.n,
        });
    }
    let x = real.effective();
    let rows = pilot.n() * pilot.t();
    let mut y = vec![Complex::new(T::zero(), T::zero()); rows * d.m];
    let mut col = vec![Complex::new(T::zero(), T::zero()); d.k * d.n];
    for m in 0..d.m {
        for k in 0..d.k {
            for n in 0..d.n {
                col[k * d.n + n] = x[d.idx(k, n, m)];
            }
        }
        let qx = pilot.apply(&col)?;
        for (r, v) in qx.into_iter().enumerate() {
            y[r * d.m + m] = v + sample_cn::<T, R>(rng, noise_var);
        }
    }
    Ok(y)
}

/// Writes a `CHNL` dump of `count` channel matrices, each `N × M` `n`-major.
pub fn write_channel_dump<T: Real, W: Write>(mut w: W, n: usize, m: usize, data: &[Complex<T>]) -> Result<()> {
    let block = n * m;
    if block == 0 || !data.len().is_multiple_of(block) {
        return Err(Error::DimensionMismatch {
            expected: block,
            got: data.len(),
        });
    }
    w.write_all(CHANNEL_MAGIC)?;
    w.write_all(&((data.len() / block) as u32).to_le_bytes())?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(m as u32).to_le_bytes())?;
    for z in data {
        w.write_all(&z.re.widen().to_le_bytes())?;
        w.write_all(&z.im.widen().to_le_bytes())?;
    }
    Ok(())
}

/// Reads a `CHNL` dump, returning `(count, N, M, entries)`.
pub fn read_channel_dump<T: Real, R: Read>(mut r: R) -> Result<(usize, usize, usize, Vec<Complex<T>>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHANNEL_MAGIC {
        return Err(Error::Format("bad channel dump magic".into()));
    }
    let mut word = [0u8; 4];
    let mut next_u32 = |r: &mut R| -> Result<usize> {
        r.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word) as usize)
    };
    let count = next_u32(&mut r)?;
    let n = next_u32(&mut r)?;
    let m = next_u32(&mut r)?;
    let total = count * n * m;
    let mut data = Vec::with_capacity(total);
    let mut f = [0u8; 8];
    for _ in 0..total {
        r.read_exact(&mut f)?;
        let re = f64::from_le_bytes(f);
        r.read_exact(&mut f)?;
        let im = f64::from_le_bytes(f);
        data.push(Complex::new(T::lit(re), T::lit(im)));
    }
    Ok((count, n, m, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::norm2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn steering_zero_delay_is_flat() {
        let a = steering_time(0.0f64, 5, 30e3);
        for z in &a {
            assert!((z - Complex::new(1.0 / 5f64.sqrt(), 0.0)).norm() < 1e-15);
        }
        let b = steering_space(0.0f64, 3);
        for z in &b {
            assert!((z - Complex::new(1.0 / 3f64.sqrt(), 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_hand_values() {
        // Δf τ = 1/4 gives a quarter-turn per subcarrier.
        let a = steering_time(0.25f64, 2, 1.0);
        let s = 1.0 / 2f64.sqrt();
        assert!((a[0] - Complex::new(s, 0.0)).norm() < 1e-15);
        assert!((a[1] - Complex::new(0.0, -s)).norm() < 1e-15);
        let b = steering_space(std::f64::consts::FRAC_PI_2, 2);
        assert!((b[1] - Complex::new(-s, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn steering_unit_norm() {
        for &tau in &[0.0, 1.3e-7, 3.63e-7, 5e-6] {
            assert!((norm2(&steering_time(tau, 48, 30e3)) - 1.0f64).abs() < 1e-12);
        }
        for &phi in &[-1.5f64, -0.3, 0.0, 0.9, 1.5] {
            assert!((norm2(&steering_space(phi, 32)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_path_profile_is_normalized() {
        let params = ChannelParams {
            paths: 1,
            ..ChannelParams::default()
        };
        let p = sample_paths::<f64, _>(&params, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p.power, vec![1.0]);
    }

    #[test]
    fn delays_respect_spread() {
        let params = ChannelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let p = sample_paths::<f64, _>(&params, &mut rng);
            assert!(p.delay.iter().all(|&d| (0.0..=363e-9).contains(&d)));
            assert!(p.angle.iter().all(|&a| a > -std::f64::consts::FRAC_PI_2 && a < std::f64::consts::FRAC_PI_2));
            assert!((p.power.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn exponential_profile_closed_form() {
        let params = ChannelParams {
            paths: 3,
            power_profile: PowerProfile::Exponential { decay: Some(1.0) },
            ..ChannelParams::default()
        };
        let p = sample_paths::<f64, _>(&params, &mut ChaCha8Rng::seed_from_u64(3));
        let z = 1.0 + (-1f64).exp() + (-2f64).exp();
        let want = [1.0 / z, (-1f64).exp() / z, (-2f64).exp() / z];
        for (a, b) in p.power.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_flat_path_is_rank_one_constant() {
        let paths = PathSet {
            coeff: vec![Complex::new(1.0, 0.0)],
            power: vec![1.0],
            delay: vec![0.0],
            angle: vec![0.0],
        };
        let h = synth_channel(&paths, 4, 3, 30e3);
        let want = 1.0 / 12f64.sqrt();
        assert!(h.iter().all(|z| (z - Complex::new(want, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn synth_matches_naive_sum() {
        let params = ChannelParams {
            paths: 2,
            ..ChannelParams::default()
        };
        let p = sample_paths::<f64, _>(&params, &mut ChaCha8Rng::seed_from_u64(4));
        let (n, m, df) = (3usize, 2usize, 30e3);
        let h = synth_channel(&p, n, m, df);
        for i in 0..n {
            for j in 0..m {
                let mut acc = Complex::new(0.0, 0.0);
                for l in 0..2 {
                    let at = Complex::from_polar(1.0 / (n as f64).sqrt(), -2.0 * std::f64::consts::PI * df * p.delay[l] * i as f64);
                    let bs = Complex::from_polar(1.0 / (m as f64).sqrt(), -std::f64::consts::PI * p.angle[l].sin() * j as f64);
                    acc += p.coeff[l] * p.power[l].sqrt() * at * bs.conj();
                }
                assert!((h[i * m + j] - acc).norm() < 1e-12);
            }
        }
        let empty = PathSet::<f64> {
            coeff: vec![],
            power: vec![],
            delay: vec![],
            angle: vec![],
        };
        assert!(synth_channel(&empty, 3, 2, df).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn path_loss_values() {
        assert!((path_loss_db(1.0) + 128.1).abs() < 1e-12);
        assert!((path_loss_db(0.1) + 91.4).abs() < 1e-12);
        assert!((path_loss_db(10.0) + 164.8).abs() < 1e-12);
        assert!((10.0 * path_loss(1.0).unwrap().log10() + 128.1).abs() < 1e-9);
        assert!(matches!(path_loss(0.0), Err(Error::NonPositiveDistance(_))));
        assert!(matches!(path_loss(-1.0), Err(Error::NonPositiveDistance(_))));
    }

    #[test]
    fn multipath_power_is_unit_on_average() {
        // E‖H‖² = Σ ρ_l E|β_l|² = 1; 3σ band over many draws.
        let params = ChannelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 4000;
        let vals: Vec<f64> = (0..draws)
            .map(|_| norm2(&synth_channel(&sample_paths::<f64, _>(&params, &mut rng), 8, 4, 30e3)))
            .collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        assert!((mean - 1.0).abs() < 3.0 * (var / draws as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn activity_extremes() {
        let params = ChannelParams {
            kind: ChannelKind::IidGaussian,
            ..ChannelParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let on = SystemConfig { k: 50, lambda: 1.0, ..SystemConfig::default() };
        assert!(sample_realization::<f64, _>(&on, &params, &mut rng).unwrap().active.iter().all(|&a| a));
        let off = SystemConfig { k: 50, lambda: 0.0, ..SystemConfig::default() };
        assert!(sample_realization::<f64, _>(&off, &params, &mut rng).unwrap().active.iter().all(|&a| !a));
    }

    #[test]
    fn activity_rate_concentrates() {
        let params = ChannelParams {
            kind: ChannelKind::IidGaussian,
            ..ChannelParams::default()
        };
        let cfg = SystemConfig { k: 800, n: 1, m: 1, t: 1, lambda: 0.05, ..SystemConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let band = 3.0 * (800.0f64 * 0.05 * 0.95).sqrt();
        let mut total = 0usize;
        let mut inside = 0usize;
        for _ in 0..500 {
            let r = sample_realization::<f64, _>(&cfg, &params, &mut rng).unwrap();
            let c = r.active_count();
            total += c;
            if (c as f64 - 40.0).abs() <= band {
                inside += 1;
            }
            assert!((c as f64 - 40.0).abs() <= 2.0 * band, "{c}");
        }
        // 3σ covers 99.7% of trials
        assert!(inside >= 490, "{inside}");
        let mean = total as f64 / 500.0;
        assert!((mean - 40.0).abs() < 1.0);
    }

    #[test]
    fn observation_superposition() {
        let params = ChannelParams { kind: ChannelKind::IidGaussian, ..ChannelParams::default() };
        let cfg = SystemConfig { k: 6, n: 2, m: 2, t: 3, lambda: 0.5, ..SystemConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut real = sample_realization::<f64, _>(&cfg, &params, &mut rng).unwrap();
        let pilot = PilotOperator::build(&cfg, &mut rng).unwrap();
        real.active = vec![false; 6];
        let y = observe(&real, &pilot, 1e-300, &mut rng).unwrap();
        assert!(y.iter().all(|z| z.norm() < 1e-140));
        real.active[4] = true;
        let y = observe(&real, &pilot, 1e-300, &mut rng).unwrap();
        for m in 0..2 {
            let col: Vec<_> = (0..6).flat_map(|k| (0..2).map(move |n| (k, n)))
                .map(|(k, n)| if k == 4 { real.h[real.dims.idx(k, n, m)] } else { Complex::new(0.0, 0.0) })
                .collect();
            let want = pilot.apply(&col).unwrap();
            for (r, w) in want.iter().enumerate() {
                assert!((y[r * 2 + m] - w).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_only_observation_variance() {
        let params = ChannelParams { kind: ChannelKind::IidGaussian, ..ChannelParams::default() };
        let cfg = SystemConfig { k: 50, n: 50, m: 40, t: 50, lambda: 0.0, ..SystemConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let real = sample_realization::<f64, _>(&cfg, &params, &mut rng).unwrap();
        let pilot = PilotOperator::build(&cfg, &mut rng).unwrap();
        let y = observe(&real, &pilot, 0.37, &mut rng).unwrap();
        assert_eq!(y.len(), 100_000);
        let v = norm2(&y) / y.len() as f64;
        assert!((v / 0.37 - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn snr_definition() {
        let d = noise_var_for_snr(2.0, &[1.0, 3.0], 10.0);
        assert!((d - 0.4).abs() < 1e-15);
    }

    #[test]
    fn dump_round_trip() {
        let data: Vec<Complex<f64>> = (0..12).map(|i| Complex::new(i as f64, -0.5 * i as f64)).collect();
        let mut buf = Vec::new();
        write_channel_dump(&mut buf, 2, 3, &data).unwrap();
        assert_eq!(&buf[..4], b"CHNL");
        assert_eq!(buf.len(), 16 + 12 * 16);
        let (count, n, m, back) = read_channel_dump::<f64, _>(buf.as_slice()).unwrap();
        assert_eq!((count, n, m), (2, 2, 3));
        assert_eq!(back, data);
    }

    #[test]
    fn pipeline_is_reproducible() {
        let params = ChannelParams::default();
        let cfg = SystemConfig { k: 12, n: 4, m: 2, t: 5, lambda: 0.3, ..SystemConfig::default() };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let real = sample_realization::<f64, _>(&cfg, &params, &mut rng).unwrap();
            let pilot = PilotOperator::build(&cfg, &mut rng).unwrap();
            let y = observe(&real, &pilot, 0.1, &mut rng).unwrap();
            (real, y)
        };
        let (a, ya) = run();
        let (b, yb) = run();
        assert_eq!(a, b);
        assert_eq!(ya, yb);
    }
}

//! Monte Carlo runner: trial pipeline, metrics, sweeps and result tables.

use std::io::Write;
use std::time::Instant;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{noise_var_for_snr, observe, sample_realization, ChannelKind};
use crate::config::RunConfig;
use crate::denoise::{BridgeClient, ChannelDenoiser, GaussianScore, GmScore, ScoreDenoiser};
use crate::engine::{self, IterationTrace, Problem, RunOptions};
use crate::error::{Error, Result};
use crate::model::{DenoiserKind, Dims};
use crate::pilot::PilotOperator;
use crate::scalar::Real;

pub const RESULTS_HEADER: &str = "axis,value,trials,nmse_db_mean,nmse_db_stderr,pe_mean,pe_stderr,iters_mean,ms_mean";

/// Reported in place of `−∞` dB.
pub const DB_FLOOR: f64 = -300.0;

pub fn to_db(ratio: f64) -> f64 {
    if ratio > 0.0 {
        (10.0 * ratio.log10()).max(DB_FLOOR)
    } else if ratio == 0.0 {
        DB_FLOOR
    } else {
        f64::NAN
    }
}

/// `Σ‖α_k H_k − X̂_k‖² / Σ‖α_k H_k‖²`.
pub fn nmse<T: Real>(h: &[Complex<T>], active: &[bool], dims: Dims, estimate: &[Complex<T>]) -> Result<f64> {
    if h.len() != dims.len() || estimate.len() != dims.len() || active.len() != dims.k {
        return Err(Error::DimensionMismatch {
            expected: dims.len(),
            got: estimate.len(),
        });
    }
    let block = dims.block();
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &a) in active.iter().enumerate() {
        for i in k * block..(k + 1) * block {
            let truth = if a { h[i] } else { Complex::new(T::zero(), T::zero()) };
            num += (truth - estimate[i]).norm_sqr().widen();
            den += truth.norm_sqr().widen();
        }
    }
    if den == 0.0 {
        return Err(Error::NoActiveDevices);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub missed: usize,
    pub false_alarms: usize,
    pub pe: f64,
}

pub fn detection_error(truth: &[bool], decided: &[bool]) -> Detection {
    let missed = truth.iter().zip(decided).filter(|(&a, &b)| a && !b).count();
    let false_alarms = truth.iter().zip(decided).filter(|(&a, &b)| !a && b).count();
    Detection {
        missed,
        false_alarms,
        pe: (missed + false_alarms) as f64 / truth.len().max(1) as f64,
    }
}

/// SplitMix64 finalizer (Steele, Lea & Flood): increment by the golden-ratio
/// constant `0x9E3779B97F4A7C15`, then xor-shift-multiply by
/// `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` at sweep point `point`; independent of the trial count.
pub fn trial_seed(master: u64, point: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ point) ^ trial)
}

/// Per-entry channel power relative to the large-scale gain.
fn entry_power(cfg: &RunConfig) -> f64 {
    match cfg.channel.kind {
        ChannelKind::IidGaussian => 1.0,
        ChannelKind::Multipath => 1.0 / (cfg.system.n * cfg.system.m) as f64,
    }
}

/// Denoiser selected by `cfg`, acting on unit-power channels.
pub fn build_denoiser<T: Real>(cfg: &RunConfig) -> Result<Box<dyn ChannelDenoiser<T>>> {
    let floor = cfg.engine.var_floor;
    let normalize = cfg.denoiser.normalize;
    Ok(match cfg.engine.denoiser_kind {
        DenoiserKind::Gaussian => Box::new(
            ScoreDenoiser::new(GaussianScore::new(T::one()), normalize.unwrap_or(false)).with_var_floor(floor),
        ),
        DenoiserKind::GaussianMixture => {
            let comps = cfg
                .denoiser
                .components()
                .into_iter()
                .map(|c| crate::denoise::GmComponent {
                    weight: T::lit(c.weight),
                    mean: Complex::new(T::lit(c.mean.re), T::lit(c.mean.im)),
                    var: T::lit(c.var),
                })
                .collect();
            Box::new(ScoreDenoiser::new(GmScore::new(comps)?, normalize.unwrap_or(false)).with_var_floor(floor))
        }
        DenoiserKind::Bridge => {
            let client = match (&cfg.denoiser.addr, &cfg.denoiser.cmd) {
                (Some(addr), _) => BridgeClient::connect(addr.as_str())?,
                (None, Some(cmd)) => {
                    let mut parts = cmd.split_whitespace();
                    let prog = parts.next().ok_or_else(|| Error::config("denoiser.cmd", "empty command"))?;
                    let args: Vec<String> = parts.map(String::from).collect();
                    BridgeClient::spawn(prog, &args)?
                }
                (None, None) => return Err(Error::config("denoiser.addr", "bridge backend needs an address or a command")),
            };
            Box::new(ScoreDenoiser::new(client, normalize.unwrap_or(true)).with_var_floor(floor))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// Linear NMSE; `None` when no device was active.
    pub nmse: Option<f64>,
    pub missed: usize,
    pub false_alarms: usize,
    pub pe: f64,
    pub iterations: usize,
    pub converged: bool,
    pub ms: f64,
    pub trace: IterationTrace,
}

/// Runs one trial: sample → pilot → observe → engine → metrics.
///
/// The engine works on channels rescaled to unit mean entry power; metrics
/// are computed in the original units.
pub fn run_trial<T: Real, D: ChannelDenoiser<T> + ?Sized>(
    cfg: &RunConfig,
    denoiser: &D,
    seed: u64,
    timing: bool,
) -> Result<TrialResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = sample_realization::<T, _>(&cfg.system, &cfg.channel, &mut rng)?;
    let pilot = PilotOperator::<T>::build(&cfg.system, &mut rng)?;
    let noise_var = match cfg.snr_db {
        Some(snr) => noise_var_for_snr(cfg.system.power, &real.gain, snr),
        None => cfg.system.noise_var,
    };
    let y = observe(&real, &pilot, noise_var, &mut rng)?;

    let mean_gain = real.gain.iter().sum::<f64>() / real.gain.len().max(1) as f64;
    let unit = 1.0 / (mean_gain * entry_power(cfg));
    let amp = T::lit(unit.sqrt());
    let y_unit: Vec<Complex<T>> = y.iter().map(|z| z * amp).collect();
    let truth: Vec<Complex<T>> = real.effective().iter().map(|z| z * amp).collect();
    let mut system = cfg.system.clone();
    system.noise_var = noise_var * unit;
    let problem = Problem {
        system: &system,
        pilot: &pilot,
        y: &y_unit,
        mean_gain: 1.0,
        truth: Some(&truth),
    };
    let out = engine::run(
        &problem,
        &cfg.engine,
        denoiser,
        RunOptions {
            timing,
            parallel_columns: false,
        },
    )?;
    let inv = T::one() / amp;
    let x_hat: Vec<Complex<T>> = out.x_post.iter().map(|z| z * inv).collect();
    let nmse = match nmse(&real.h, &real.active, real.dims, &x_hat) {
        Ok(v) => Some(v),
        Err(Error::NoActiveDevices) => None,
        Err(e) => return Err(e),
    };
    let det = detection_error(&real.active, &out.decisions);
    Ok(TrialResult {
        nmse,
        missed: det.missed,
        false_alarms: det.false_alarms,
        pe: det.pe,
        iterations: out.iterations,
        converged: out.converged,
        ms: if timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
        trace: out.trace,
    })
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    None,
    SnrDb,
    K,
    Lambda,
    T,
}

impl Axis {
    pub fn key(&self) -> &'static str {
        match self {
            Axis::None => "none",
            Axis::SnrDb => "snr.db",
            Axis::K => "system.k",
            Axis::Lambda => "system.lambda",
            Axis::T => "system.t",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        match key {
            "none" => Ok(Axis::None),
            "snr.db" | "snr_db" | "snr" => Ok(Axis::SnrDb),
            "system.k" | "k" | "K" => Ok(Axis::K),
            "system.lambda" | "lambda" => Ok(Axis::Lambda),
            "system.t" | "t" | "T" => Ok(Axis::T),
            other => Err(Error::config("sweep", format!("cannot sweep `{other}`"))),
        }
    }

    /// Applies one sweep value to a copy of `base`.
    pub fn apply(&self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match self {
            Axis::None => {}
            Axis::SnrDb => cfg.snr_db = Some(value),
            Axis::Lambda => cfg.system.lambda = value,
            Axis::K | Axis::T => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::config(self.key(), format!("`{value}` is not a positive integer")));
                }
                if *self == Axis::K {
                    cfg.system.k = value as usize;
                } else {
                    cfg.system.t = value as usize;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub base: RunConfig,
    pub axis: Axis,
    pub values: Vec<f64>,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
    /// Fill the `ms` columns with wall time; zero keeps the output reproducible.
    pub timing: bool,
}

impl ExperimentSpec {
    pub fn single(base: RunConfig) -> Self {
        ExperimentSpec {
            base,
            axis: Axis::None,
            values: vec![0.0],
            workers: None,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub axis: Axis,
    pub value: f64,
    /// Successful trials.
    pub trials: usize,
    pub failed: usize,
    pub nmse_db_mean: f64,
    pub nmse_db_stderr: f64,
    pub pe_mean: f64,
    pub pe_stderr: f64,
    pub iters_mean: f64,
    pub ms_mean: f64,
    pub converged_frac: f64,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub summary: PointSummary,
    /// Per-trial outcome in trial order; failures keep their message.
    pub trials: Vec<std::result::Result<TrialResult, String>>,
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

pub fn summarize(axis: Axis, value: f64, trials: &[std::result::Result<TrialResult, String>]) -> PointSummary {
    let ok: Vec<&TrialResult> = trials.iter().filter_map(|t| t.as_ref().ok()).collect();
    let nmse_db: Vec<f64> = ok.iter().filter_map(|t| t.nmse.map(to_db)).collect();
    let pe: Vec<f64> = ok.iter().map(|t| t.pe).collect();
    let iters: Vec<f64> = ok.iter().map(|t| t.iterations as f64).collect();
    let ms: Vec<f64> = ok.iter().map(|t| t.ms).collect();
    let (nmse_db_mean, nmse_db_stderr) = mean_stderr(&nmse_db);
    let (pe_mean, pe_stderr) = mean_stderr(&pe);
    let n = ok.len().max(1) as f64;
    PointSummary {
        axis,
        value,
        trials: ok.len(),
        failed: trials.len() - ok.len(),
        nmse_db_mean,
        nmse_db_stderr,
        pe_mean,
        pe_stderr,
        iters_mean: iters.iter().sum::<f64>() / n,
        ms_mean: ms.iter().sum::<f64>() / n,
        converged_frac: ok.iter().filter(|t| t.converged).count() as f64 / n,
    }
}

fn run_point<T: Real>(cfg: &RunConfig, denoiser: &dyn ChannelDenoiser<T>, point: usize, timing: bool) -> Vec<Result<TrialResult>> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = trial_seed(cfg.system.seed, point as u64, trial as u64);
            run_trial(cfg, denoiser, seed, timing)
        })
        .collect()
}

/// Runs every sweep point. Trials run on a dedicated pool of `spec.workers`
/// threads; results are reduced in trial order, so the table does not depend
/// on the worker count.
pub fn run_experiment<T: Real>(spec: &ExperimentSpec) -> Result<Vec<PointResult>> {
    if spec.values.is_empty() {
        return Err(Error::config("sweep", "no sweep values"));
    }
    let configs: Vec<RunConfig> = spec
        .values
        .iter()
        .map(|&v| spec.axis.apply(&spec.base, v))
        .collect::<Result<_>>()?;
    let denoiser = build_denoiser::<T>(&spec.base)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = spec.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let mut out = Vec::with_capacity(configs.len());
    for (point, (cfg, &value)) in configs.iter().zip(&spec.values).enumerate() {
        let raw = pool.install(|| run_point::<T>(cfg, denoiser.as_ref(), point, spec.timing));
        let mut first = None;
        let trials: Vec<_> = raw
            .into_iter()
            .map(|r| {
                r.map_err(|e| {
                    let msg = e.to_string();
                    first.get_or_insert(e);
                    msg
                })
            })
            .collect();
        let summary = summarize(spec.axis, value, &trials);
        if summary.failed * 10 > trials.len() {
            return Err(Error::TooManyFailures {
                failed: summary.failed,
                trials: trials.len(),
                source: Box::new(first.expect("at least one failure")),
            });
        }
        out.push(PointResult { summary, trials });
    }
    Ok(out)
}

pub fn write_results_csv<W: Write>(mut w: W, points: &[PointResult]) -> Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for p in points {
        let s = &p.summary;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            s.axis.key(),
            s.value,
            s.trials,
            s.nmse_db_mean,
            s.nmse_db_stderr,
            s.pe_mean,
            s.pe_stderr,
            s.iters_mean,
            s.ms_mean
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::desk_config;

    #[test]
    fn nmse_examples() {
        let dims = Dims::new(2, 1, 1);
        let h = vec![Complex::new(1.0, 0.0), Complex::new(0.0, 1.0)];
        let both = [true, true];
        assert_eq!(nmse(&h, &both, dims, &h).unwrap(), 0.0);
        assert_eq!(to_db(0.0), DB_FLOOR);
        let zero = vec![Complex::new(0.0, 0.0); 2];
        assert_eq!(nmse(&h, &both, dims, &zero).unwrap(), 1.0);
        let half = vec![h[0], Complex::new(0.0, 0.0)];
        let r = nmse(&h, &both, dims, &half).unwrap();
        assert_eq!(r, 0.5);
        assert!((to_db(r) + 3.0103).abs() < 1e-4);
        assert!(matches!(nmse(&h, &[false, false], dims, &zero), Err(Error::NoActiveDevices)));
    }

    #[test]
    fn detection_examples() {
        let d = detection_error(&[true, false, true], &[true, false, true]);
        assert_eq!((d.missed, d.false_alarms, d.pe), (0, 0, 0.0));
        let d = detection_error(&[true, false], &[false, true]);
        assert_eq!((d.missed, d.false_alarms, d.pe), (1, 1, 1.0));
    }

    #[test]
    fn detection_matches_set_difference() {
        use rand::Rng;
        use std::collections::BTreeSet;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a: Vec<bool> = (0..40).map(|_| rng.random::<f64>() < 0.3).collect();
            let b: Vec<bool> = (0..40).map(|_| rng.random::<f64>() < 0.3).collect();
            let sa: BTreeSet<usize> = (0..40).filter(|&i| a[i]).collect();
            let sb: BTreeSet<usize> = (0..40).filter(|&i| b[i]).collect();
            let d = detection_error(&a, &b);
            assert_eq!(d.missed, sa.difference(&sb).count());
            assert_eq!(d.false_alarms, sb.difference(&sa).count());
        }
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        let a = trial_seed(1, 0, 0);
        assert_eq!(a, trial_seed(1, 0, 0));
        assert_ne!(a, trial_seed(1, 0, 1));
        assert_ne!(a, trial_seed(1, 1, 0));
        assert_ne!(a, trial_seed(2, 0, 0));
    }

    #[test]
    fn stats() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s - sd / 2.0).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn trial_is_deterministic() {
        let mut cfg = desk_config();
        cfg.system.k = 32;
        cfg.system.t = 12;
        cfg.system.n = 4;
        cfg.system.m = 2;
        cfg.system.lambda = 0.2;
        let den = build_denoiser::<f64>(&cfg).unwrap();
        let a = run_trial(&cfg, den.as_ref(), 11, false).unwrap();
        let b = run_trial(&cfg, den.as_ref(), 11, false).unwrap();
        assert_eq!(a, b);
        assert!(a.iterations <= cfg.engine.max_iters);
    }

    #[test]
    fn noiseless_square_trial() {
        let mut cfg = desk_config();
        cfg.system.k = 16;
        cfg.system.t = 16;
        cfg.system.n = 2;
        cfg.system.m = 2;
        cfg.system.lambda = 1.0;
        cfg.snr_db = Some(200.0);
        let den = build_denoiser::<f64>(&cfg).unwrap();
        let r = run_trial(&cfg, den.as_ref(), 3, false).unwrap();
        assert!(r.nmse.unwrap() < 1e-10, "{:?}", r.nmse);
    }

    #[test]
    fn axis_application() {
        let base = desk_config();
        assert_eq!(Axis::SnrDb.apply(&base, 5.0).unwrap().snr_db, Some(5.0));
        assert_eq!(Axis::K.apply(&base, 64.0).unwrap().system.k, 64);
        assert!(Axis::T.apply(&base, 1000.0).is_err());
        assert!(Axis::K.apply(&base, 2.5).is_err());
        assert!(Axis::from_key("system.m").is_err());
    }
}

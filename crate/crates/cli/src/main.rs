//! `stmp`: run STMP-JADCE experiments from the command line.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error,
//! 3 score-bridge failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stmp_core::channel::sample_cn;
use stmp_core::config::RunConfig;
use stmp_core::denoise::bridge::{BridgeClient, BridgeOp, Request, STATUS_OK};
use stmp_core::denoise::{brute_force_mmse, PriorSpec};
use stmp_core::harness::{self, run_experiment, to_db, write_results_csv, Axis, ExperimentSpec, PointResult};
use stmp_core::{ChannelDenoiser, DenoiserKind, Dims, Error, GmScore, Real};

#[derive(Parser, Debug)]
#[command(name = "stmp", version, about = "Turbo message passing for grant-free activity detection and channel estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte Carlo experiment and write the results table.
    Simulate {
        config: PathBuf,
        /// Sweep one parameter, e.g. `snr.db=0,10,20`. The last flag wins.
        #[arg(long, value_name = "AXIS=V1,V2,...")]
        sweep: Vec<String>,
        /// Results CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `experiment.trials`.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, env = "STMP_WORKERS")]
        workers: Option<usize>,
        /// Record wall time in the `ms` columns (makes output non-reproducible).
        #[arg(long)]
        timing: bool,
        /// Write one iteration trace CSV per trial into this directory.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
    },
    /// Parse and check a config file.
    Validate { config: PathBuf },
    /// Denoise sampled channels in AWGN and print NMSE against SNR.
    DenoiseTest {
        #[arg(long, value_enum, default_value_t = Backend::Gaussian)]
        backend: Backend,
        /// Comma-separated SNR grid in dB (`inf` allowed).
        #[arg(long, default_value = "-10,-5,0,5,10,15,20,25,30")]
        snr: String,
        /// Channel entries per SNR point.
        #[arg(long, default_value_t = 4096)]
        samples: usize,
        /// Entries checked against the quadrature oracle (mixture backend).
        #[arg(long, default_value_t = 64)]
        oracle_samples: usize,
        /// Takes mixture parameters and bridge settings from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Send one request to a score server and check the reply.
    BridgeCheck {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Backend {
    Gaussian,
    Gm,
    Bridge,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn config(msg: impl Into<String>) -> Self {
        Failure { code: 1, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Bridge(_) | Error::MissingSecondOrder | Error::OutOfDomain { .. } => 3,
            Error::InvalidConfig { .. } => 1,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 2, msg: e.to_string() }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate {
            config,
            sweep,
            out,
            trials,
            workers,
            timing,
            trace_dir,
            precision,
        } => simulate(&config, sweep.last().map(String::as_str), out, trials, workers, timing, trace_dir, precision),
        Command::Validate { config } => validate(&config),
        Command::DenoiseTest {
            backend,
            snr,
            samples,
            oracle_samples,
            config,
            addr,
            seed,
            out,
        } => denoise_test(backend, &snr, (samples, oracle_samples), config.as_deref(), addr, seed, out),
        Command::BridgeCheck { addr, tau } => bridge_check(&addr, tau),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path)
        .and_then(|c| c.validate().map(|()| c))
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn parse_sweep(arg: &str) -> Result<(Axis, Vec<f64>), Failure> {
    let (key, values) = arg
        .split_once('=')
        .ok_or_else(|| Failure::config(format!("--sweep expects axis=v1,v2,..., got `{arg}`")))?;
    let axis = Axis::from_key(key.trim()).map_err(|e| Failure::config(e.to_string()))?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Failure::config(format!("--sweep: cannot parse `{v}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(Failure::config("--sweep: no values"));
    }
    Ok((axis, values))
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    config: &Path,
    sweep: Option<&str>,
    out: Option<PathBuf>,
    trials: Option<usize>,
    workers: Option<usize>,
    timing: bool,
    trace_dir: Option<PathBuf>,
    precision: Precision,
) -> CliResult {
    let mut cfg = load_config(config)?;
    if let Some(t) = trials {
        if t == 0 {
            return Err(Failure::config("--trials must be positive"));
        }
        cfg.trials = t;
    }
    let mut spec = ExperimentSpec::single(cfg);
    if let Some(arg) = sweep {
        let (axis, values) = parse_sweep(arg)?;
        for &v in &values {
            axis.apply(&spec.base, v).map_err(|e| Failure::config(e.to_string()))?;
        }
        spec.axis = axis;
        spec.values = values;
    }
    spec.workers = workers;
    spec.timing = timing;

    eprintln!(
        "simulating {} point(s) x {} trial(s), {} workers",
        spec.values.len(),
        spec.base.trials,
        workers.map_or_else(|| "all".to_string(), |w| w.to_string())
    );
    let start = Instant::now();
    let points = match precision {
        Precision::F64 => run_experiment::<f64>(&spec)?,
        Precision::F32 => run_experiment::<f32>(&spec)?,
    };
    for p in &points {
        let s = &p.summary;
        eprintln!(
            "  {}={:<8} NMSE {:>8.2} dB  Pe {:.3e}  iters {:.1}  converged {:.0}%  failed {}",
            s.axis.key(),
            s.value,
            s.nmse_db_mean,
            s.pe_mean,
            s.iters_mean,
            s.converged_frac * 100.0,
            s.failed
        );
    }
    eprintln!("done in {:.2} s", start.elapsed().as_secs_f64());

    if let Some(path) = out {
        let mut w = BufWriter::new(File::create(&path)?);
        write_results_csv(&mut w, &points)?;
        w.flush()?;
        eprintln!("wrote {}", path.display());
    }
    if let Some(dir) = trace_dir {
        write_traces(&dir, &points)?;
    }
    Ok(())
}

fn write_traces(dir: &Path, points: &[PointResult]) -> CliResult {
    fs::create_dir_all(dir)?;
    for (pi, p) in points.iter().enumerate() {
        for (ti, t) in p.trials.iter().enumerate() {
            if let Ok(t) = t {
                let f = File::create(dir.join(format!("trace_p{pi}_t{ti}.csv")))?;
                t.trace.write_csv(BufWriter::new(f))?;
            }
        }
    }
    eprintln!("wrote traces to {}", dir.display());
    Ok(())
}

fn validate(config: &Path) -> CliResult {
    let cfg = load_config(config)?;
    eprintln!(
        "{}: ok (K={} N={} M={} T={} lambda={} denoiser={:?}, {} trials)",
        config.display(),
        cfg.system.k,
        cfg.system.n,
        cfg.system.m,
        cfg.system.t,
        cfg.system.lambda,
        cfg.engine.denoiser_kind,
        cfg.trials
    );
    Ok(())
}

struct DenoiseRow {
    snr_db: f64,
    tau: f64,
    nmse_db: f64,
    /// Closed form (Gaussian) or quadrature oracle (mixture).
    reference_db: Option<f64>,
    /// Gaussian: |nmse − closed form|. Mixture: |denoiser − oracle| on the
    /// oracle subset.
    gap_db: Option<f64>,
}

fn denoise_test(
    backend: Backend,
    snr: &str,
    (samples, oracle_samples): (usize, usize),
    config: Option<&Path>,
    addr: Option<String>,
    seed: u64,
    out: Option<PathBuf>,
) -> CliResult {
    let mut cfg = match config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    cfg.engine.denoiser_kind = match backend {
        Backend::Gaussian => DenoiserKind::Gaussian,
        Backend::Gm => DenoiserKind::GaussianMixture,
        Backend::Bridge => DenoiserKind::Bridge,
    };
    if let Some(a) = addr {
        cfg.denoiser.addr = Some(a);
        cfg.denoiser.cmd = None;
    }
    if backend != Backend::Bridge {
        cfg.denoiser.normalize = Some(false);
    }
    cfg.engine.var_floor = cfg.engine.var_floor.min(1e-30);
    if samples == 0 {
        return Err(Failure::config("--samples must be positive"));
    }
    let grid = snr
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Failure::config(format!("--snr: cannot parse `{s}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let denoiser = harness::build_denoiser::<f64>(&cfg)?;
    let gm = GmScore::new(cfg.denoiser.components()).map_err(|e| Failure::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(samples, 1, 1);
    let mut rows = Vec::with_capacity(grid.len());
    for &snr_db in &grid {
        let tau = 10f64.powf(-snr_db / 10.0);
        let h: Vec<Complex<f64>> = match backend {
            Backend::Gm => (0..samples).map(|_| sample_gm(&gm, &mut rng)).collect(),
            _ => (0..samples).map(|_| sample_cn::<f64, _>(&mut rng, 1.0)).collect(),
        };
        let r: Vec<Complex<f64>> = h.iter().map(|z| z + sample_cn::<f64, _>(&mut rng, tau)).collect();
        let est = denoiser.denoise(&r, dims, &[tau])?;
        let nmse_db = to_db(sq_err(&est.mean, &h) / energy(&h));
        let (reference_db, gap_db) = match backend {
            Backend::Gaussian => {
                let closed = to_db(tau / (1.0 + tau));
                (Some(closed), Some((nmse_db - closed).abs()))
            }
            Backend::Gm if tau > 0.0 && oracle_samples > 0 => {
                let n = samples.min(oracle_samples);
                let mut q = Vec::with_capacity(n);
                for y in &r[..n] {
                    q.push(brute_force_mmse(&PriorSpec::Mixture(&gm), std::slice::from_ref(y), tau)?.mean[0]);
                }
                let oracle = to_db(sq_err(&q, &h[..n]) / energy(&h[..n]));
                let sub = to_db(sq_err(&est.mean[..n], &h[..n]) / energy(&h[..n]));
                (Some(oracle), Some((sub - oracle).abs()))
            }
            _ => (None, None),
        };
        rows.push(DenoiseRow {
            snr_db,
            tau,
            nmse_db,
            reference_db,
            gap_db,
        });
    }

    println!("{:>8} {:>12} {:>10} {:>12} {:>10}", "snr_db", "tau", "nmse_db", "reference_db", "gap_db");
    for r in &rows {
        let reference = r.reference_db.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let gap = r.gap_db.map_or_else(|| "-".to_string(), |v| format!("{v:.2e}"));
        println!("{:>8} {:>12.4e} {:>10.3} {:>12} {:>10}", r.snr_db, r.tau, r.nmse_db, reference, gap);
    }
    if let Some(path) = out {
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "snr_db,tau,nmse_db,reference_db,gap_db")?;
        for r in &rows {
            let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
            writeln!(w, "{},{},{},{},{}", r.snr_db, r.tau, r.nmse_db, opt(r.reference_db), opt(r.gap_db))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn sample_gm<R: rand::Rng>(gm: &GmScore<f64>, rng: &mut R) -> Complex<f64> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let comps = gm.components();
    let mut pick = &comps[comps.len() - 1];
    for c in comps {
        acc += c.weight;
        if u < acc {
            pick = c;
            break;
        }
    }
    pick.mean + sample_cn::<f64, _>(rng, pick.var)
}

fn sq_err<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr().widen()).sum()
}

fn energy<T: Real>(a: &[Complex<T>]) -> f64 {
    a.iter().map(|x| x.norm_sqr().widen()).sum()
}

fn bridge_check(addr: &str, tau: f64) -> CliResult {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Failure::config("--tau must be positive"));
    }
    let client = BridgeClient::connect(addr)?;
    let dims = Dims::new(2, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let req = Request {
        op: BridgeOp::Both,
        dims,
        tau,
        data: (0..dims.len()).map(|_| sample_cn::<f64, _>(&mut rng, 1.0 + tau)).collect(),
    };
    let start = Instant::now();
    let resp = client.call(&req)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let bridge = |m: String| Failure { code: 3, msg: m };
    if resp.status != STATUS_OK {
        return Err(bridge(format!("{addr}: server returned status {}", resp.status)));
    }
    if resp.op != BridgeOp::Both as u8 {
        return Err(bridge(format!("{addr}: op echo {} for request 3", resp.op)));
    }
    let finite = resp.first.iter().all(|z| z.re.is_finite() && z.im.is_finite())
        && resp.second.iter().all(|v| v.is_finite());
    if !finite {
        return Err(bridge(format!("{addr}: non-finite scores")));
    }
    eprintln!(
        "{addr}: ok, protocol v{}, {} entries, round trip {ms:.2} ms",
        resp.version,
        dims.len()
    );
    Ok(())
}

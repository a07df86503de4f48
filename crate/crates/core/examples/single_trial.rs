//! Runs one desk-scale trial and prints its per-iteration trace.

use stmp_core::config::desk_config;
use stmp_core::harness::{build_denoiser, run_trial, to_db, trial_seed};

fn main() -> stmp_core::Result<()> {
    let mut cfg = desk_config();
    cfg.snr_db = Some(15.0);
    let denoiser = build_denoiser::<f64>(&cfg)?;
    let result = run_trial(&cfg, denoiser.as_ref(), trial_seed(cfg.system.seed, 0, 0), false)?;

    result.trace.write_csv(std::io::stdout())?;
    eprintln!(
        "NMSE {:.2} dB, {} missed, {} false alarms, {} iterations",
        result.nmse.map_or(f64::NAN, to_db),
        result.missed,
        result.false_alarms,
        result.iterations
    );
    Ok(())
}

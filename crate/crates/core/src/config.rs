//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! system.k = 100
//! channel.delay_spread_ns = 100,363
//! snr.db = 20
//! ```
//!
//! Unknown keys are rejected. When the file sets `system.noise_var` but not
//! `snr.db`, the noise variance is used as given; otherwise `snr.db` defines
//! it relative to the mean large-scale gain.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelKind, ChannelParams, PowerProfile};
use crate::denoise::GmComponent;
use crate::error::{Error, Result};
use crate::model::{validate, DenoiserKind, EngineConfig, SystemConfig};

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "system.k",
    "system.n",
    "system.m",
    "system.t",
    "system.p",
    "system.lambda",
    "system.noise_var",
    "system.seed",
    "engine.max_iters",
    "engine.damping",
    "engine.threshold",
    "engine.tol",
    "engine.var_floor",
    "engine.var_cap",
    "denoiser.kind",
    "denoiser.normalize",
    "denoiser.addr",
    "denoiser.cmd",
    "denoiser.gm_weights",
    "denoiser.gm_vars",
    "channel.kind",
    "channel.paths",
    "channel.delay_spread_ns",
    "channel.subcarrier_spacing_hz",
    "channel.distance_km",
    "channel.power_profile",
    "channel.compensate",
    "snr.db",
    "experiment.trials",
];

/// Backend-specific denoiser settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserSettings {
    /// Power normalization around the score model; `None` picks the backend
    /// default (off for analytic scores, on for the bridge).
    pub normalize: Option<bool>,
    /// `host:port` of a bridge server.
    pub addr: Option<String>,
    /// Command line of a bridge server speaking over stdio.
    pub cmd: Option<String>,
    /// Zero-mean mixture on the unit-power scale.
    pub gm_weights: Vec<f64>,
    pub gm_vars: Vec<f64>,
}

impl Default for DenoiserSettings {
    fn default() -> Self {
        DenoiserSettings {
            normalize: None,
            addr: None,
            cmd: None,
            gm_weights: vec![0.5, 0.5],
            gm_vars: vec![0.5, 1.5],
        }
    }
}

impl DenoiserSettings {
    pub fn components(&self) -> Vec<GmComponent<f64>> {
        self.gm_weights
            .iter()
            .zip(&self.gm_vars)
            .map(|(&weight, &var)| GmComponent {
                weight,
                mean: Complex::new(0.0, 0.0),
                var,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub engine: EngineConfig,
    pub channel: ChannelParams,
    /// When set, overrides `system.noise_var` per trial.
    pub snr_db: Option<f64>,
    pub denoiser: DenoiserSettings,
    pub trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemConfig::default(),
            engine: EngineConfig::default(),
            channel: ChannelParams::default(),
            snr_db: Some(20.0),
            denoiser: DenoiserSettings::default(),
            trials: 100,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn range(key: &str, value: &str, scale: f64) -> Result<(f64, f64)> {
    match list(key, value)?.as_slice() {
        [v] => Ok((v * scale, v * scale)),
        [a, b] => Ok((a * scale, b * scale)),
        _ => Err(Error::config(key, "expected `value` or `min,max`")),
    }
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got `{value}`"))),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key. Values are parsed but not cross-validated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "system.k" => self.system.k = num(key, v)?,
            "system.n" => self.system.n = num(key, v)?,
            "system.m" => self.system.m = num(key, v)?,
            "system.t" => self.system.t = num(key, v)?,
            "system.p" => self.system.power = num(key, v)?,
            "system.lambda" => self.system.lambda = num(key, v)?,
            "system.noise_var" => self.system.noise_var = num(key, v)?,
            "system.seed" => self.system.seed = num(key, v)?,
            "engine.max_iters" => self.engine.max_iters = num(key, v)?,
            "engine.damping" => self.engine.damping = num(key, v)?,
            "engine.threshold" => self.engine.threshold = num(key, v)?,
            "engine.tol" => self.engine.tol = num(key, v)?,
            "engine.var_floor" => self.engine.var_floor = num(key, v)?,
            "engine.var_cap" => self.engine.var_cap = num(key, v)?,
            "denoiser.kind" => self.engine.denoiser_kind = v.parse()?,
            "denoiser.normalize" => self.denoiser.normalize = Some(boolean(key, v)?),
            "denoiser.addr" => self.denoiser.addr = Some(v.to_string()),
            "denoiser.cmd" => self.denoiser.cmd = Some(v.to_string()),
            "denoiser.gm_weights" => self.denoiser.gm_weights = list(key, v)?,
            "denoiser.gm_vars" => self.denoiser.gm_vars = list(key, v)?,
            "channel.kind" => self.channel.kind = v.parse()?,
            "channel.paths" => self.channel.paths = num(key, v)?,
            "channel.delay_spread_ns" => self.channel.delay_spread_range = range(key, v, 1e-9)?,
            "channel.subcarrier_spacing_hz" => self.channel.subcarrier_spacing = num(key, v)?,
            "channel.distance_km" => self.channel.distance_range = range(key, v, 1.0)?,
            "channel.power_profile" => {
                self.channel.power_profile = match v {
                    "exponential" => PowerProfile::Exponential { decay: None },
                    "uniform" => PowerProfile::Uniform,
                    _ => match v.strip_prefix("exponential:") {
                        Some(rate) => PowerProfile::Exponential {
                            decay: Some(num(key, rate)?),
                        },
                        None => return Err(Error::config(key, format!("unknown profile `{v}`"))),
                    },
                }
            }
            "channel.compensate" => self.channel.compensate_path_loss = boolean(key, v)?,
            "snr.db" => {
                self.snr_db = match v {
                    "none" | "" => None,
                    _ => Some(num(key, v)?),
                }
            }
            "experiment.trials" => self.trials = num(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut saw_noise = false;
        let mut saw_snr = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(&format!("line {}", lineno + 1), "expected `key = value`"))?;
            let key = key.trim();
            cfg.set(key, value)?;
            saw_noise |= key == "system.noise_var";
            saw_snr |= key == "snr.db";
        }
        if saw_noise && !saw_snr {
            cfg.snr_db = None;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Checks every field, including backend prerequisites.
    pub fn validate(&self) -> Result<()> {
        validate(&self.system, &self.engine)?;
        self.channel.validate()?;
        if self.trials < 1 {
            return Err(Error::config("experiment.trials", "need at least one trial"));
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(Error::config("snr.db", "must be finite"));
            }
        }
        match self.engine.denoiser_kind {
            DenoiserKind::GaussianMixture => {
                if self.denoiser.gm_weights.len() != self.denoiser.gm_vars.len() {
                    return Err(Error::config("denoiser.gm_vars", "need one variance per weight"));
                }
                crate::denoise::GmScore::new(self.denoiser.components())
                    .map_err(|e| Error::config("denoiser.gm_weights", e.to_string()))?;
            }
            DenoiserKind::Bridge => {
                if self.denoiser.addr.is_none() && self.denoiser.cmd.is_none() {
                    return Err(Error::config("denoiser.addr", "bridge backend needs an address or a command"));
                }
            }
            DenoiserKind::Gaussian => {}
        }
        Ok(())
    }

    /// Renders the config in the file format; `parse` of the output is identity.
    pub fn to_config_string(&self) -> String {
        let s = &self.system;
        let e = &self.engine;
        let c = &self.channel;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("system.k", s.k.to_string());
        kv("system.n", s.n.to_string());
        kv("system.m", s.m.to_string());
        kv("system.t", s.t.to_string());
        kv("system.p", s.power.to_string());
        kv("system.lambda", s.lambda.to_string());
        kv("system.noise_var", s.noise_var.to_string());
        kv("system.seed", s.seed.to_string());
        kv("engine.max_iters", e.max_iters.to_string());
        kv("engine.damping", e.damping.to_string());
        kv("engine.threshold", e.threshold.to_string());
        kv("engine.tol", e.tol.to_string());
        kv("engine.var_floor", e.var_floor.to_string());
        kv("engine.var_cap", e.var_cap.to_string());
        kv("denoiser.kind", e.denoiser_kind.as_str().to_string());
        if let Some(n) = self.denoiser.normalize {
            kv("denoiser.normalize", n.to_string());
        }
        if let Some(a) = &self.denoiser.addr {
            kv("denoiser.addr", a.clone());
        }
        if let Some(a) = &self.denoiser.cmd {
            kv("denoiser.cmd", a.clone());
        }
        kv("denoiser.gm_weights", join(&self.denoiser.gm_weights));
        kv("denoiser.gm_vars", join(&self.denoiser.gm_vars));
        kv("channel.kind", c.kind.as_str().to_string());
        kv("channel.paths", c.paths.to_string());
        kv(
            "channel.delay_spread_ns",
            join(&[c.delay_spread_range.0 * 1e9, c.delay_spread_range.1 * 1e9]),
        );
        kv("channel.subcarrier_spacing_hz", c.subcarrier_spacing.to_string());
        kv("channel.distance_km", join(&[c.distance_range.0, c.distance_range.1]));
        kv(
            "channel.power_profile",
            match c.power_profile {
                PowerProfile::Uniform => "uniform".to_string(),
                PowerProfile::Exponential { decay: None } => "exponential".to_string(),
                PowerProfile::Exponential { decay: Some(r) } => format!("exponential:{r}"),
            },
        );
        kv("channel.compensate", c.compensate_path_loss.to_string());
        kv(
            "snr.db",
            self.snr_db.map_or_else(|| "none".to_string(), |v| v.to_string()),
        );
        kv("experiment.trials", self.trials.to_string());
        out
    }
}

impl FromStr for RunConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Convenience for tests and examples: iid Gaussian channels with the
/// desk-scale system defaults.
pub fn desk_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.channel.kind = ChannelKind::IidGaussian;
    cfg
}

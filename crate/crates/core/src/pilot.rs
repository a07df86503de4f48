//! Partial-orthogonal pilot operator built from randomly selected rows of the
//! unitary DFT matrix, with FFT-based forward and adjoint application.
//!
//! The pilot symbol of device `k` on OFDM symbol `t` and subcarrier `n` is
//! `q_ktn = sqrt(K P) U[rows(n, t), k]` where `U[i, k] = exp(-j 2π i k / K) / sqrt(K)`.
//! Observations are stacked `t`-outer, `n`-inner (row `t·N + n` of `Y`), and the
//! unknown column `x_m` is stacked `k`-outer, `n`-inner.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::scalar::Real;

const PILOT_MAGIC: &[u8; 4] = b"PILT";
const DENSE_LIMIT: usize = 1 << 22;

/// Unitary family the pilot rows are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotKind {
    Dft,
}

#[derive(Clone)]
pub struct PilotOperator<T: Real> {
    pub kind: PilotKind,
    k: usize,
    n: usize,
    t: usize,
    power: f64,
    /// Selected DFT row per `(n, t)`, stored `n`-outer.
    rows: Vec<u32>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    /// `sqrt(P)`: the `sqrt(KP)` pilot scale times the `1/sqrt(K)` of `U`.
    amp: T,
}

impl<T: Real> std::fmt::Debug for PilotOperator<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PilotOperator")
            .field("kind", &self.kind)
            .field("k", &self.k)
            .field("n", &self.n)
            .field("t", &self.t)
            .field("power", &self.power)
            .finish_non_exhaustive()
    }
}

impl<T: Real> PartialEq for PilotOperator<T> {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.k == other.k
            && self.n == other.n
            && self.t == other.t
            && self.power == other.power
            && self.rows == other.rows
    }
}

impl<T: Real> PilotOperator<T> {
    /// Draws `T` distinct DFT rows per subcarrier, independently across subcarriers.
    pub fn build<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Self> {
        if cfg.t > cfg.k {
            return Err(Error::config("system.t", "T must not exceed K"));
        }
        if cfg.t == 0 || cfg.n == 0 {
            return Err(Error::config("system.t", "T and N must be at least 1"));
        }
        let mut rows = Vec::with_capacity(cfg.n * cfg.t);
        for _ in 0..cfg.n {
            let picked = rand::seq::index::sample(rng, cfg.k, cfg.t);
            rows.extend(picked.iter().map(|i| i as u32));
        }
        Self::from_rows(cfg.k, cfg.n, cfg.t, cfg.power, rows)
    }

    /// Wraps an explicit row table (`n`-outer, `t`-inner).
    pub fn from_rows(k: usize, n: usize, t: usize, power: f64, rows: Vec<u32>) -> Result<Self> {
        if rows.len() != n * t {
            return Err(Error::DimensionMismatch {
                expected: n * t,
                got: rows.len(),
            });
        }
        if !(power > 0.0) {
            return Err(Error::config("system.p", "P must be positive"));
        }
        for sub in rows.chunks(t.max(1)) {
            let mut seen = vec![false; k];
            for &r in sub {
                let r = r as usize;
                if r >= k {
                    return Err(Error::Format(format!("pilot row {r} out of range for K={k}")));
                }
                if seen[r] {
                    return Err(Error::Format(format!("pilot row {r} repeated on one subcarrier")));
                }
                seen[r] = true;
            }
        }
        let mut planner = FftPlanner::<T>::new();
        Ok(PilotOperator {
            kind: PilotKind::Dft,
            k,
            n,
            t,
            power,
            rows,
            forward: planner.plan_fft_forward(k),
            inverse: planner.plan_fft_inverse(k),
            amp: T::lit(power).sqrt(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn power(&self) -> f64 {
        self.power
    }

    /// Row index selected for subcarrier `n`, symbol `t`.
    pub fn row(&self, n: usize, t: usize) -> usize {
        self.rows[n * self.t + t] as usize
    }

    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    /// `√(KP)`.
    pub fn scale(&self) -> T {
        T::lit(self.k as f64 * self.power).sqrt()
    }

    /// Complex multiplications spent on the `2M` FFTs of one module-A update.
    pub fn fft_mults_per_iteration(&self, m: usize) -> f64 {
        2.0 * (m * self.n * self.k) as f64 * (self.k as f64).log2()
    }

    /// `Q x` for one antenna column `x` (length `K·N`, `k`-outer).
    pub fn apply(&self, x: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        let (k, n, t) = (self.k, self.n, self.t);
        if x.len() != k * n {
            return Err(Error::DimensionMismatch {
                expected: k * n,
                got: x.len(),
            });
        }
        let zero = Complex::new(T::zero(), T::zero());
        let mut buf = vec![zero; k];
        let mut scratch = vec![zero; self.forward.get_inplace_scratch_len()];
        let mut y = vec![zero; n * t];
        for sub in 0..n {
            for (dev, b) in buf.iter_mut().enumerate() {
                *b = x[dev * n + sub];
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for sym in 0..t {
                y[sym * n + sub] = buf[self.row(sub, sym)] * self.amp;
            }
        }
        Ok(y)
    }

    /// `Qᴴ y` for one antenna column `y` (length `N·T`, `t`-outer).
    pub fn adjoint(&self, y: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        let (k, n, t) = (self.k, self.n, self.t);
        if y.len() != n * t {
            return Err(Error::DimensionMismatch {
                expected: n * t,
                got: y.len(),
            });
        }
        let zero = Complex::new(T::zero(), T::zero());
        let mut buf = vec![zero; k];
        let mut scratch = vec![zero; self.inverse.get_inplace_scratch_len()];
        let mut x = vec![zero; k * n];
        for sub in 0..n {
            buf.fill(zero);
            for sym in 0..t {
                buf[self.row(sub, sym)] = y[sym * n + sub];
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            for (dev, b) in buf.iter().enumerate() {
                x[dev * n + sub] = *b * self.amp;
            }
        }
        Ok(x)
    }

    /// Explicit `NT × NK` matrix, row-major. Test oracle only.
    pub fn dense(&self) -> Result<Vec<Vec<Complex<T>>>> {
        let (k, n, t) = (self.k, self.n, self.t);
        let (rows, cols) = (n * t, n * k);
        if rows.saturating_mul(cols) > DENSE_LIMIT {
            return Err(Error::TooLarge { rows, cols });
        }
        let zero = Complex::new(T::zero(), T::zero());
        let kk = T::from_usize_lossy(k);
        let mut q = vec![vec![zero; cols]; rows];
        for sym in 0..t {
            for sub in 0..n {
                let r = self.row(sub, sym);
                for dev in 0..k {
                    // keep the phase argument reduced to avoid precision loss for large K
                    let ph = T::lit(((r * dev) % k) as f64) / kk;
                    let ang = -T::TAU() * ph;
                    q[sym * n + sub][dev * n + sub] =
                        Complex::new(ang.cos(), ang.sin()) * self.amp;
                }
            }
        }
        Ok(q)
    }

    /// Writes the `PILT` export (little-endian).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PILOT_MAGIC)?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.t as u32).to_le_bytes())?;
        w.write_all(&self.power.to_le_bytes())?;
        for &r in &self.rows {
            w.write_all(&r.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PILOT_MAGIC {
            return Err(Error::Format("bad pilot magic".into()));
        }
        let k = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let t = read_u32(&mut r)? as usize;
        let mut p = [0u8; 8];
        r.read_exact(&mut p)?;
        let power = f64::from_le_bytes(p);
        let mut rows = Vec::with_capacity(n * t);
        for _ in 0..n * t {
            rows.push(read_u32(&mut r)?);
        }
        Self::from_rows(k, n, t, power, rows)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

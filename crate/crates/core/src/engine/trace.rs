use std::io::Write;

use crate::error::Result;

pub const TRACE_HEADER: &str = "iter,residual,nmse_db,v_pri_mean,v_post_mean,tau_pri,clamps,ms";

/// Diagnostics of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// `‖Δx^post‖ / ‖x^post‖` of module B.
    pub residual: f64,
    /// NaN when no ground truth was supplied.
    pub nmse_db: f64,
    /// Mean module-B prior variance.
    pub v_pri_mean: f64,
    /// Mean module-B posterior variance.
    pub v_post_mean: f64,
    /// Pooled variance handed to the channel denoiser.
    pub tau_pri: f64,
    /// Extrinsic variances clamped during the iteration.
    pub clamps: usize,
    pub ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn push(&mut self, r: IterationRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_clamps(&self) -> usize {
        self.records.iter().map(|r| r.clamps).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{},{:e},{:e},{:e},{},{:.3}",
                r.iter, r.residual, r.nmse_db, r.v_pri_mean, r.v_post_mean, r.tau_pri, r.clamps, r.ms
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape() {
        let mut t = IterationTrace::default();
        for i in 1..=3 {
            t.push(IterationRecord {
                iter: i,
                residual: 0.5,
                nmse_db: -10.0,
                v_pri_mean: 1.0,
                v_post_mean: 0.5,
                tau_pri: 1.0,
                clamps: 0,
                ms: 0.0,
            });
        }
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.split(',').count() == 8));
    }
}

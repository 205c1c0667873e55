use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::stats;

/// Worst invariant residuals observed during a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Residuals {
    /// max |Tr ρ − 1| (density) or max |⟨ψ|ψ⟩ − 1| (pure / per-site norms).
    pub max_norm_error: f64,
    /// max |ρ − ρ†|, density runs only.
    pub max_hermiticity_error: f64,
    /// Smallest eigenvalue of the final density matrix, when computed.
    pub min_eigenvalue: Option<f64>,
    /// Largest excursion of any population outside `[0, 1]`.
    pub population_excursion: f64,
}

impl Residuals {
    pub fn merge(&mut self, other: &Residuals) {
        self.max_norm_error = self.max_norm_error.max(other.max_norm_error);
        self.max_hermiticity_error = self.max_hermiticity_error.max(other.max_hermiticity_error);
        self.population_excursion = self.population_excursion.max(other.population_excursion);
        self.min_eigenvalue = match (self.min_eigenvalue, other.min_eigenvalue) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }
}

/// Quantum jump recorded by a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpRecord {
    pub trajectory: usize,
    pub t_us: f64,
    pub site: usize,
}

/// Site-resolved populations on an output grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub n_sites: usize,
    pub times_us: Vec<f64>,
    /// `populations[k][j] = ⟨n_j⟩(times_us[k])`.
    pub populations: Vec<Vec<f64>>,
    /// Standard error of each entry of `populations` for averaged runs.
    pub stderr: Option<Vec<Vec<f64>>>,
    pub residuals: Residuals,
    pub jumps: Vec<JumpRecord>,
}

impl RunResult {
    pub fn new(n_sites: usize) -> Self {
        RunResult {
            n_sites,
            times_us: Vec::new(),
            populations: Vec::new(),
            stderr: None,
            residuals: Residuals::default(),
            jumps: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, t: f64, pops: Vec<f64>) {
        for &p in &pops {
            let excursion = (-p).max(p - 1.0).max(0.0);
            self.residuals.population_excursion = self.residuals.population_excursion.max(excursion);
        }
        self.times_us.push(t);
        self.populations.push(pops);
    }

    pub fn final_populations(&self) -> &[f64] {
        self.populations.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Index of the sample closest to `t`, if one lies within `tol`.
    pub fn sample_at(&self, t: f64, tol: f64) -> Option<usize> {
        let (k, dist) = self
            .times_us
            .iter()
            .enumerate()
            .map(|(k, &s)| (k, libm::fabs(s - t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        (dist <= tol).then_some(k)
    }

    pub fn populations_at(&self, t: f64, tol: f64) -> Option<&[f64]> {
        self.sample_at(t, tol).map(|k| self.populations[k].as_slice())
    }
}

/// Mean and standard error over runs that share a time grid. The reduction
/// order is the slice order, so the result does not depend on how the runs
/// were scheduled.
pub fn average_runs(runs: &[RunResult]) -> Result<RunResult> {
    let first = runs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no runs to average".into()))?;
    for r in runs {
        if r.times_us != first.times_us || r.n_sites != first.n_sites {
            return Err(Error::InvalidArgument("runs do not share a time grid".into()));
        }
    }
    let mut out = RunResult::new(first.n_sites);
    let mut errs = Vec::with_capacity(first.times_us.len());
    let mut column = Vec::with_capacity(runs.len());
    for (k, &t) in first.times_us.iter().enumerate() {
        let mut mean = Vec::with_capacity(first.n_sites);
        let mut se = Vec::with_capacity(first.n_sites);
        for j in 0..first.n_sites {
            column.clear();
            column.extend(runs.iter().map(|r| r.populations[k][j]));
            let (m, s) = stats::mean_and_stderr(&column);
            mean.push(m);
            se.push(s);
        }
        out.push(t, mean);
        errs.push(se);
    }
    out.stderr = Some(errs);
    for r in runs {
        out.residuals.merge(&r.residuals);
        out.jumps.extend_from_slice(&r.jumps);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn average_of_identical_runs_has_zero_spread() {
        let mut r = RunResult::new(2);
        r.push(0.0, vec![1.0, 0.0]);
        r.push(1.0, vec![0.25, 0.75]);
        let avg = average_runs(&[r.clone(), r.clone(), r.clone()]).unwrap();
        assert_eq!(avg.populations, r.populations);
        assert!(avg.stderr.unwrap().iter().flatten().all(|&s| s == 0.0));
    }

    #[test]
    fn average_rejects_grid_mismatch() {
        let mut a = RunResult::new(1);
        a.push(0.0, vec![1.0]);
        let mut b = RunResult::new(1);
        b.push(0.5, vec![1.0]);
        assert!(average_runs(&[a, b]).is_err());
        assert!(average_runs(&[]).is_err());
    }

    #[test]
    fn sample_lookup() {
        let mut a = RunResult::new(1);
        a.push(0.0, vec![0.0]);
        a.push(1.5, vec![1.0]);
        assert_eq!(a.sample_at(1.5 + 1e-12, 1e-9), Some(1));
        assert_eq!(a.sample_at(0.7, 1e-9), None);
        assert_eq!(a.populations_at(0.0, 1e-9), Some(&[0.0][..]));
    }
}

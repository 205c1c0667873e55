//! Executing a resolved config: solver dispatch, parallel ensembles and the
//! derived tables.
//!
//! Realizations, trajectories and scan points are independent, so they are
//! spread over the current rayon pool. Every parallel map collects into a
//! vector in index order before anything is reduced, and each unit draws from
//! its own keyed random stream, so results do not depend on the number of
//! threads.

use rapfac_core::analysis::{label_pattern, scan_point, symmetric_grid, GainSeries, PatternLabeling, ScanSurface, Variant};
use rapfac_core::drive::Drive;
use rapfac_core::fullme::{combine_realizations, disorder_realization, evolve, EvolveSpec, ManyBodyState};
use rapfac_core::lattice::Geometry;
use rapfac_core::mfqmc::{run_mfme, run_trajectory, TrajectorySpec};
use rapfac_core::result::average_runs;
use rapfac_core::RunResult;
use rayon::prelude::*;

use crate::config::{LatticeKind, Method, RunConfig};
use crate::error::AppError;

/// Stored trajectory samples above this many bytes are refused.
const MAX_SAMPLE_BYTES: f64 = 8.0 * (1u64 << 30) as f64;

/// Everything a run produced, ready to be written.
#[derive(Clone, Debug)]
pub struct Outcome {
    /// The resolved config that was executed.
    pub config: RunConfig,
    pub geometry: Geometry,
    pub drive: Drive,
    /// Populations; the mean over realizations or trajectories if there are
    /// several, with standard errors.
    pub result: RunResult,
    pub gain: Vec<GainSeries>,
    pub pattern: Option<PatternLabeling>,
    pub scan: Option<ScanSurface>,
    pub warnings: Vec<String>,
}

/// Validated pieces of a resolved config.
pub struct Plan {
    pub config: RunConfig,
    pub geometry: Geometry,
    pub drive: Drive,
    pub dt: f64,
    pub stride: usize,
}

impl Plan {
    pub fn new(config: &RunConfig) -> Result<Plan, AppError> {
        let config = config.resolve()?;
        config.check_resources()?;
        let geometry = config.build_geometry()?;
        let drive = config.build_drive()?;
        let dt = config.dt()?;
        let stride = config.stride()?;
        let per_step = drive.step_duration() / dt;
        if (per_step - per_step.round()).abs() > 1e-6 {
            return Err(AppError::Config {
                field: "solver.dt_us".into(),
                reason: format!("dt must divide the step duration {} us", drive.step_duration()),
            });
        }
        if per_step.round() as usize % stride != 0 {
            return Err(AppError::Config {
                field: "outputs.stride".into(),
                reason: format!(
                    "must divide the {} integrator steps per drive step so that every step is sampled",
                    per_step.round()
                ),
            });
        }
        if config.disorder.is_some() && config.solver.method != Method::FullMe {
            return Err(AppError::Config {
                field: "disorder".into(),
                reason: "position disorder is only supported with solver.method = \"full_me\"".into(),
            });
        }
        if config.solver.method == Method::MfQmc {
            let samples = (drive.duration() / (dt * stride as f64)).ceil() + 1.0;
            let bytes = samples * config.solver.trajectories as f64 * geometry.n_sites() as f64 * 8.0;
            if bytes > MAX_SAMPLE_BYTES {
                return Err(AppError::Resource(format!(
                    "storing {} trajectories would need {:.1} GiB of samples; raise outputs.stride",
                    config.solver.trajectories,
                    bytes / (1u64 << 30) as f64
                )));
            }
        }
        Ok(Plan {
            config,
            geometry,
            drive,
            dt,
            stride,
        })
    }

    fn evolve_spec(&self) -> Result<EvolveSpec, AppError> {
        Ok(EvolveSpec::new(self.drive.duration(), self.dt, self.stride, self.config.gamma_mhz)?)
    }

    fn variant(&self) -> Variant {
        match self.config.solver.method {
            Method::FullMe => Variant::FullMe,
            Method::MfQmc => Variant::MfQmc,
            Method::MfMe => Variant::MfMe,
        }
    }

    fn populations(&self) -> Result<RunResult, AppError> {
        let c = &self.config;
        let t_final = self.drive.duration();
        match c.solver.method {
            Method::FullMe => {
                let spec = self.evolve_spec()?;
                let initial = ManyBodyState::from_bitstring(&c.initial, c.representation()?)?;
                match c.disorder_spec()? {
                    None => Ok(evolve(&self.geometry, &self.drive, &spec, &initial)?.result),
                    Some(d) => {
                        let runs = (0..d.n_realizations)
                            .into_par_iter()
                            .map(|k| disorder_realization(&self.geometry, &d, k, &self.drive, &spec, &initial))
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok(combine_realizations(runs)?.mean)
                    }
                }
            }
            Method::MfQmc => {
                let spec = TrajectorySpec::new(c.solver.trajectories, c.seed, self.dt, self.stride)?
                    .with_jump_record(c.solver.record_jumps);
                let runs = (0..spec.n_trajectories)
                    .into_par_iter()
                    .map(|k| run_trajectory(&self.geometry, &self.drive, c.gamma_mhz, &spec, &c.initial, t_final, k))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(average_runs(&runs)?)
            }
            Method::MfMe => Ok(run_mfme(
                &self.geometry,
                &self.drive,
                c.gamma_mhz,
                &c.initial,
                t_final,
                self.dt,
                self.stride,
            )?),
        }
    }

    /// Run the configured solver and derive gain and pattern tables.
    pub fn execute(&self) -> Result<Outcome, AppError> {
        let result = self.populations()?;
        let c = &self.config;
        let step = self.drive.step_duration();
        let mut gain = vec![GainSeries::from_run(&result, step, self.variant())?];
        if c.outputs.gain_laws {
            let n = self.drive.n_steps();
            let t0 = self.drive.cycle();
            gain.push(GainSeries::eq12(n, c.gamma_mhz, t0));
            gain.push(GainSeries::eqs2(n, c.gamma_mhz, t0)?);
        }
        let pattern = match (c.geometry.kind, c.outputs.pattern_threshold) {
            (LatticeKind::Square, threshold) => Some(label_pattern(
                &result,
                step,
                self.drive.n_steps(),
                threshold.unwrap_or(0.5),
            )?),
            (LatticeKind::Chain, _) => None,
        };
        Ok(Outcome {
            config: c.clone(),
            geometry: self.geometry.clone(),
            drive: self.drive.clone(),
            result,
            gain,
            pattern,
            scan: None,
            warnings: c.notes.clone(),
        })
    }

    /// Final population of the scanned site over the `(δΔ0, δΩ0)` grid.
    /// Scans are always decay- and disorder-free.
    pub fn scan(&self) -> Result<Outcome, AppError> {
        let c = &self.config;
        let sc = c.scan.as_ref().ok_or_else(|| AppError::Config {
            field: "scan".into(),
            reason: "the scan verb needs a [scan] block".into(),
        })?;
        if sc.site >= self.geometry.n_sites() {
            return Err(AppError::Config {
                field: "scan.site".into(),
                reason: format!("site {} is not in the geometry", sc.site),
            });
        }
        if sc.points == 0 || !(sc.half_width >= 0.0) {
            return Err(AppError::Config {
                field: "scan.points".into(),
                reason: "need at least one point and a non-negative half_width".into(),
            });
        }
        let mut warnings = c.notes.clone();
        if c.gamma_mhz > 0.0 {
            warnings.push("scan ignores gamma_mhz: error surfaces are computed without decay".into());
        }
        if c.disorder.is_some() {
            warnings.push("scan ignores the disorder block".into());
        }
        let spec = EvolveSpec::new(self.drive.duration(), self.dt, self.stride, 0.0)?;
        let repr = match c.solver.method {
            Method::FullMe => c.representation()?,
            _ => {
                return Err(AppError::Config {
                    field: "solver.method".into(),
                    reason: "scans use the full_me solver".into(),
                })
            }
        };
        let initial = ManyBodyState::from_bitstring(&c.initial, repr)?;
        let grid = symmetric_grid(sc.points, sc.half_width);
        let cells: Vec<(f64, f64)> = grid
            .iter()
            .flat_map(|&dd| grid.iter().map(move |&dom| (dd, dom)))
            .collect();
        let points = cells
            .par_iter()
            .map(|&(dd, dom)| scan_point(&self.geometry, &self.drive, &spec, &initial, sc.site, dd, dom))
            .collect::<Result<Vec<_>, _>>()?;
        let nominal = evolve(&self.geometry, &self.drive, &spec, &initial)?.result;
        Ok(Outcome {
            config: c.clone(),
            geometry: self.geometry.clone(),
            drive: self.drive.clone(),
            gain: vec![GainSeries::from_run(&nominal, self.drive.step_duration(), self.variant())?],
            result: nominal,
            pattern: None,
            scan: Some(ScanSurface { points }),
            warnings,
        })
    }
}

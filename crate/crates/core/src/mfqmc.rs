//! Gutzwiller mean-field dynamics.
//!
//! Each site carries its own two-level state and sees its neighbours only
//! through the populations-weighted interaction shift
//!
//! ```text
//! Δ̃_j(t) = Δ(t) − Σ_k V_jk ⟨n_k⟩(t).
//! ```
//!
//! Two unravelings are provided: quantum-jump trajectories of the
//! non-Hermitian single-site Hamiltonian ([`run_ensemble`]) and the
//! deterministic single-site master equation ([`run_mfme`]).
//!
//! Integration uses the same interaction-picture RK4 as the exact solver:
//! the diagonal part (Δ̃ and the decay) is propagated exactly over each
//! half-step, so sites outside the driven group pick up only exact phases.
//! The neighbour populations entering Δ̃ are frozen at the start of a step.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::drive::{Drive, Group};
use crate::error::{Error, Result};
use crate::lattice::Geometry;
use crate::result::{average_runs, JumpRecord, RunResult};
use crate::rng::{self, Domain};
use crate::units::angular;
use crate::C64;

const PI: f64 = core::f64::consts::PI;

/// Largest tolerated total jump probability per step, `Σ_j Γ⟨n_j⟩ dt`.
pub const MAX_STEP_JUMP_PROBABILITY: f64 = 0.01;

/// Product state: one normalized `(c0, c1)` pair per site.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteEnsemble {
    pub amplitudes: Vec<[C64; 2]>,
    pub t_us: f64,
}

impl SiteEnsemble {
    pub fn from_bitstring(bits: &str) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::config("initial", "empty bitstring"));
        }
        let amplitudes = bits
            .chars()
            .map(|c| match c {
                '0' => Ok([C64::new(1.0, 0.0), C64::new(0.0, 0.0)]),
                '1' => Ok([C64::new(0.0, 0.0), C64::new(1.0, 0.0)]),
                other => Err(Error::config(
                    "initial",
                    format!("bitstring may contain only 0 and 1, found {other:?}"),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SiteEnsemble { amplitudes, t_us: 0.0 })
    }

    pub fn n_sites(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c[1].norm_sqr()).collect()
    }

    /// Largest `|‖ψ_j‖² − 1|` over sites.
    pub fn norm_error(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|c| libm::fabs(c[0].norm_sqr() + c[1].norm_sqr() - 1.0))
            .fold(0.0, f64::max)
    }
}

/// Settings for an ensemble of trajectories.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub n_trajectories: usize,
    pub base_seed: u64,
    pub dt_us: f64,
    /// Keep a `(trajectory, t, site)` log of every jump.
    pub jump_record: bool,
    /// Integrator steps between recorded samples.
    pub output_stride: usize,
}

impl TrajectorySpec {
    pub fn new(n_trajectories: usize, base_seed: u64, dt_us: f64, output_stride: usize) -> Result<Self> {
        if n_trajectories == 0 {
            return Err(Error::config("solver.trajectories", "must be at least 1"));
        }
        if !(dt_us > 0.0) || !dt_us.is_finite() {
            return Err(Error::config("solver.dt_us", "must be positive"));
        }
        if output_stride == 0 {
            return Err(Error::config("outputs.stride", "must be at least 1"));
        }
        Ok(TrajectorySpec {
            n_trajectories,
            base_seed,
            dt_us,
            jump_record: false,
            output_stride,
        })
    }

    pub fn with_jump_record(mut self, on: bool) -> Self {
        self.jump_record = on;
        self
    }

    /// Default step: `T0/20000` for RAP, `step/5000` for square pulses.
    pub fn default_dt(drive: &Drive) -> f64 {
        match drive {
            Drive::Rap(s) => s.t0_us / 20_000.0,
            Drive::Rabi(s) => s.step_duration_us / 5_000.0,
        }
    }

    fn check(&self, n_sites: usize, gamma_mhz: f64) -> Result<()> {
        let worst = n_sites as f64 * angular(gamma_mhz) * self.dt_us;
        if worst >= MAX_STEP_JUMP_PROBABILITY {
            return Err(Error::config(
                "solver.dt_us",
                format!("total jump probability per step may reach {worst:.3e}, must stay below 0.01"),
            ));
        }
        Ok(())
    }
}

/// `Σ_k V_jk n_k` over the pair list of `site`, MHz.
fn mean_field_shift(g: &Geometry, site: usize, pops: &[f64]) -> f64 {
    g.neighbors(site).iter().map(|&(k, v)| v * pops[k]).sum()
}

/// `Δ̃_j(t)` in MHz.
pub fn effective_detuning(g: &Geometry, site: usize, ensemble: &SiteEnsemble, drive: &Drive, t: f64) -> Result<f64> {
    if site >= g.n_sites() || ensemble.n_sites() != g.n_sites() {
        return Err(Error::InvalidArgument(format!("site {site} is not in the geometry")));
    }
    Ok(drive.delta(t) - mean_field_shift(g, site, &ensemble.populations()))
}

/// Drive data shared by all sites over one step `[t, t + h]`.
struct StepDrive {
    /// `(group, Ω/2 in rad/μs)` at `t`, `t + h/2`, `t + h`.
    stages: [(Group, f64); 3],
    /// `∫Δ` over the two half-steps, MHz·μs.
    delta_integrals: [f64; 2],
}

impl StepDrive {
    fn new(drive: &Drive, t: f64, h: f64) -> Self {
        let at = |s: f64| {
            let (group, omega) = drive.group_omega_in(s, t + 0.5 * h);
            (group, 0.5 * angular(omega))
        };
        StepDrive {
            stages: [at(t), at(t + 0.5 * h), at(t + h)],
            delta_integrals: [
                drive.delta_integral(t, t + 0.5 * h),
                drive.delta_integral(t + 0.5 * h, t + h),
            ],
        }
    }

    fn weights(&self, group: Group) -> [f64; 3] {
        self.stages.map(|(g, w)| if g == group { w } else { 0.0 })
    }
}

/// `−i w σ^x c`.
#[inline]
fn flip(c: [C64; 2], w: f64) -> [C64; 2] {
    [C64::new(w * c[1].im, -w * c[1].re), C64::new(w * c[0].im, -w * c[0].re)]
}

#[inline]
fn scale(f: [C64; 2], c: [C64; 2]) -> [C64; 2] {
    [f[0] * c[0], f[1] * c[1]]
}

#[inline]
fn add(a: [C64; 2], b: [C64; 2], s: f64) -> [C64; 2] {
    [a[0] + b[0] * s, a[1] + b[1] * s]
}

/// One interaction-picture RK4 step of a single site.
fn propagate_site(c: [C64; 2], f1: [C64; 2], f2: [C64; 2], w: [f64; 3], h: f64) -> [C64; 2] {
    if w == [0.0; 3] {
        return scale(f2, scale(f1, c));
    }
    let k = flip(c, w[0]);
    let mut u = scale(f1, add(c, k, 0.5 * h));
    let mut acc = scale(f1, add(c, k, h / 6.0));
    let y = scale(f1, c);
    let k = flip(u, w[1]);
    acc = add(acc, k, h / 3.0);
    u = add(y, k, 0.5 * h);
    let k = flip(u, w[1]);
    acc = add(acc, k, h / 3.0);
    u = scale(f2, add(y, k, h));
    let k = flip(u, w[2]);
    add(scale(f2, acc), k, h / 6.0)
}

/// Diagonal propagators of `(c0, c1)` over a half-step of length `h/2`.
fn site_factors(delta_integral: f64, shift: f64, gamma: f64, h: f64) -> [C64; 2] {
    // angular Δ̃/2 integrated over the half-step
    let phi = PI * (delta_integral - shift * 0.5 * h);
    [
        C64::from_polar(1.0, -phi),
        C64::from_polar(libm::exp(-0.25 * gamma * h), phi),
    ]
}

/// What happened during one trajectory step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    /// Sites that jumped to the ground state.
    pub jumped: Vec<usize>,
    /// Largest `|‖ψ_j‖² − 1|` before renormalization. With `Γ = 0` this is
    /// pure integration error.
    pub norm_loss: f64,
}

/// Advance every site by `dt`: non-Hermitian evolution, one Bernoulli jump
/// draw per site with probability `Γ|c1|² dt` (start-of-step population),
/// then renormalization.
pub fn step_trajectory(
    g: &Geometry,
    ensemble: &mut SiteEnsemble,
    drive: &Drive,
    gamma_mhz: f64,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport> {
    let n = g.n_sites();
    drive.check_sites(n)?;
    if ensemble.n_sites() != n {
        return Err(Error::InvalidArgument(format!(
            "ensemble has {} sites, geometry has {n}",
            ensemble.n_sites()
        )));
    }
    let t = ensemble.t_us;
    let gamma = angular(gamma_mhz);
    let pops = ensemble.populations();
    let step = StepDrive::new(drive, t, dt);
    let groups = drive.groups();
    let mut report = StepReport::default();
    for j in 0..n {
        let shift = mean_field_shift(g, j, &pops);
        let f1 = site_factors(step.delta_integrals[0], shift, gamma, dt);
        let f2 = site_factors(step.delta_integrals[1], shift, gamma, dt);
        let mut c = propagate_site(ensemble.amplitudes[j], f1, f2, step.weights(groups[j]), dt);
        let p_jump = gamma * pops[j] * dt;
        let u = rng::uniform(rng);
        if u < p_jump {
            c = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
            report.jumped.push(j);
        }
        let norm2 = c[0].norm_sqr() + c[1].norm_sqr();
        if !norm2.is_finite() || norm2 <= 0.0 {
            return Err(Error::NumericalInstability {
                time_us: t + dt,
                what: format!("site {j} amplitude collapsed"),
            });
        }
        report.norm_loss = report.norm_loss.max(libm::fabs(norm2 - 1.0));
        let inv = 1.0 / libm::sqrt(norm2);
        ensemble.amplitudes[j] = [c[0] * inv, c[1] * inv];
    }
    ensemble.t_us = t + dt;
    Ok(report)
}

fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    let n = libm::round(t_final / dt);
    if !(t_final >= 0.0) || libm::fabs(n * dt - t_final) > 1e-9 * t_final.max(dt) {
        return Err(Error::config(
            "solver.dt_us",
            format!("t_final = {t_final} is not a multiple of dt = {dt}"),
        ));
    }
    Ok(n as usize)
}

/// A single trajectory. Deterministic in `(spec.base_seed, index)`.
pub fn run_trajectory(
    g: &Geometry,
    drive: &Drive,
    gamma_mhz: f64,
    spec: &TrajectorySpec,
    initial: &str,
    t_final: f64,
    index: usize,
) -> Result<RunResult> {
    let tag = |e: Error| Error::Trajectory {
        index,
        source: Box::new(e),
    };
    let n = g.n_sites();
    spec.check(n, gamma_mhz)?;
    let n_steps = step_count(t_final, spec.dt_us)?;
    let mut ensemble = SiteEnsemble::from_bitstring(initial)?;
    if ensemble.n_sites() != n {
        return Err(Error::InvalidArgument(format!(
            "initial bitstring has {} sites, geometry has {n}",
            ensemble.n_sites()
        )));
    }
    let mut rng = rng::stream(spec.base_seed, Domain::Trajectory, index as u64);
    let mut result = RunResult::new(n);
    result.push(0.0, ensemble.populations());
    for s in 0..n_steps {
        let report = step_trajectory(g, &mut ensemble, drive, gamma_mhz, spec.dt_us, &mut rng).map_err(tag)?;
        // keep the clock free of accumulated round-off
        ensemble.t_us = (s + 1) as f64 * spec.dt_us;
        if spec.jump_record {
            result.jumps.extend(report.jumped.iter().map(|&site| JumpRecord {
                trajectory: index,
                t_us: ensemble.t_us,
                site,
            }));
        }
        if (s + 1) % spec.output_stride == 0 || s + 1 == n_steps {
            result.residuals.max_norm_error = result.residuals.max_norm_error.max(ensemble.norm_error());
            result.push(ensemble.t_us, ensemble.populations());
        }
    }
    Ok(result)
}

/// Ensemble mean and standard error over `spec.n_trajectories` trajectories,
/// reduced in trajectory order.
pub fn run_ensemble(
    g: &Geometry,
    drive: &Drive,
    gamma_mhz: f64,
    spec: &TrajectorySpec,
    initial: &str,
    t_final: f64,
) -> Result<RunResult> {
    let runs = (0..spec.n_trajectories)
        .map(|k| run_trajectory(g, drive, gamma_mhz, spec, initial, t_final, k))
        .collect::<Result<Vec<_>>>()?;
    average_runs(&runs)
}

/// Per-site density matrix, stored as `(ρ11, ρ01)`; `ρ00 = 1 − ρ11`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct SiteRho {
    r11: f64,
    r01: C64,
}

impl SiteRho {
    fn min_eigenvalue(&self) -> f64 {
        let d = self.r11 - 0.5;
        0.5 - libm::sqrt(d * d + self.r01.norm_sqr())
    }

    fn axpy(self, k: SiteRho, s: f64) -> SiteRho {
        SiteRho {
            r11: self.r11 + s * k.r11,
            r01: self.r01 + k.r01 * s,
        }
    }

    fn scale(self, f: (f64, C64)) -> SiteRho {
        SiteRho {
            r11: f.0 * self.r11,
            r01: f.1 * self.r01,
        }
    }

    /// Drive part of `dρ/dt` with `w = Ω/2` (angular).
    fn drive_rhs(self, w: f64) -> SiteRho {
        SiteRho {
            r11: 2.0 * w * self.r01.im,
            r01: C64::new(0.0, -w * (2.0 * self.r11 - 1.0)),
        }
    }
}

fn rho_factors(delta_integral: f64, shift: f64, gamma: f64, h: f64) -> (f64, C64) {
    let phi = 2.0 * PI * (delta_integral - shift * 0.5 * h);
    (
        libm::exp(-0.5 * gamma * h),
        C64::from_polar(libm::exp(-0.25 * gamma * h), -phi),
    )
}

fn propagate_rho(r: SiteRho, f1: (f64, C64), f2: (f64, C64), w: [f64; 3], h: f64) -> SiteRho {
    if w == [0.0; 3] {
        return r.scale(f1).scale(f2);
    }
    let k = r.drive_rhs(w[0]);
    let mut u = r.axpy(k, 0.5 * h).scale(f1);
    let mut acc = r.axpy(k, h / 6.0).scale(f1);
    let y = r.scale(f1);
    let k = u.drive_rhs(w[1]);
    acc = acc.axpy(k, h / 3.0);
    u = y.axpy(k, 0.5 * h);
    let k = u.drive_rhs(w[1]);
    acc = acc.axpy(k, h / 3.0);
    u = y.axpy(k, h).scale(f2);
    let k = u.drive_rhs(w[2]);
    acc.scale(f2).axpy(k, h / 6.0)
}

/// Deterministic mean-field master equation, one 2×2 density matrix per site.
pub fn run_mfme(
    g: &Geometry,
    drive: &Drive,
    gamma_mhz: f64,
    initial: &str,
    t_final: f64,
    dt: f64,
    output_stride: usize,
) -> Result<RunResult> {
    let n = g.n_sites();
    drive.check_sites(n)?;
    if output_stride == 0 {
        return Err(Error::config("outputs.stride", "must be at least 1"));
    }
    if !(dt > 0.0) {
        return Err(Error::config("solver.dt_us", "must be positive"));
    }
    let start = SiteEnsemble::from_bitstring(initial)?;
    if start.n_sites() != n {
        return Err(Error::InvalidArgument(format!(
            "initial bitstring has {} sites, geometry has {n}",
            start.n_sites()
        )));
    }
    let n_steps = step_count(t_final, dt)?;
    let gamma = angular(gamma_mhz);
    let groups = drive.groups();
    let mut rho: Vec<SiteRho> = start
        .populations()
        .into_iter()
        .map(|p| SiteRho {
            r11: p,
            r01: C64::new(0.0, 0.0),
        })
        .collect();
    let mut result = RunResult::new(n);
    let mut min_eig = f64::INFINITY;
    result.push(0.0, rho.iter().map(|r| r.r11).collect());
    let mut pops = vec![0.0; n];
    for s in 0..n_steps {
        let t = s as f64 * dt;
        let step = StepDrive::new(drive, t, dt);
        for (p, r) in pops.iter_mut().zip(&rho) {
            *p = r.r11;
        }
        for j in 0..n {
            let shift = mean_field_shift(g, j, &pops);
            let f1 = rho_factors(step.delta_integrals[0], shift, gamma, dt);
            let f2 = rho_factors(step.delta_integrals[1], shift, gamma, dt);
            rho[j] = propagate_rho(rho[j], f1, f2, step.weights(groups[j]), dt);
        }
        if (s + 1) % output_stride == 0 || s + 1 == n_steps {
            let t_out = (s + 1) as f64 * dt;
            for r in &rho {
                if !r.r11.is_finite() || !r.r01.re.is_finite() || !r.r01.im.is_finite() {
                    return Err(Error::NumericalInstability {
                        time_us: t_out,
                        what: "non-finite single-site density matrix".into(),
                    });
                }
                min_eig = min_eig.min(r.min_eigenvalue());
            }
            result.push(t_out, rho.iter().map(|r| r.r11).collect());
        }
    }
    result.residuals.min_eigenvalue = min_eig.is_finite().then_some(min_eig);
    Ok(result)
}

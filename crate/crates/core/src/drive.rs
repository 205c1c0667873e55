//! Time-dependent laser drive.
//!
//! Sites are split into two groups that are driven alternately, one group per
//! half-cycle ("step"). The detuning is global; the Rabi frequency is
//! site-resolved through the group assignment. All values are cyclic MHz.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lattice::{Geometry, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    A,
    B,
}

impl Group {
    pub fn other(self) -> Group {
        match self {
            Group::A => Group::B,
            Group::B => Group::A,
        }
    }
}

/// Even/odd assignment in a chain (odd index → `A`), checkerboard by
/// `(row + col)` parity on a square lattice (odd → `A`).
///
/// With the default `first_driven = A`, site 1 of a chain is driven in the
/// first half-cycle and a seed on site 0 (or any even site) is transferred
/// outward in the very first step.
pub fn assign_groups(g: &Geometry) -> Vec<Group> {
    (0..g.n_sites())
        .map(|site| {
            let parity = match g.shape() {
                Shape::Chain { .. } => site % 2,
                Shape::Square { .. } => {
                    let (row, col) = g.row_col(site);
                    (row + col) % 2
                }
            };
            if parity == 1 {
                Group::A
            } else {
                Group::B
            }
        })
        .collect()
}

/// Direction of the detuning ramp in each half of a cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepOrder {
    /// Upward in the first half-cycle, downward in the second.
    UpThenDown,
    DownThenUp,
}

/// Allen–Eberly schedule: `Ω(t) = Ω0 sech[π(t'−c)/(T0/8)]` and
/// `Δ(t) = Δ0 ± A tanh[π(t'−c)/(T0/8)]`, with `c = T0/4` in the first
/// half-cycle and `3T0/4` in the second.
#[derive(Clone, Debug, PartialEq)]
pub struct RapSchedule {
    pub omega0_mhz: f64,
    pub t0_us: f64,
    pub delta0_mhz: f64,
    pub amplitude_mhz: f64,
    /// Sweep-rate parameter the amplitude was derived from, if any.
    pub beta_mhz: Option<f64>,
    pub n_steps: usize,
    pub groups: Vec<Group>,
    pub delta_error_mhz: f64,
    pub omega_error_mhz: f64,
    pub first_driven: Group,
    pub sweep: SweepOrder,
}

impl RapSchedule {
    pub fn new(
        omega0_mhz: f64,
        t0_us: f64,
        delta0_mhz: f64,
        amplitude_mhz: f64,
        n_steps: usize,
        groups: Vec<Group>,
    ) -> Result<Self> {
        let s = RapSchedule {
            omega0_mhz,
            t0_us,
            delta0_mhz,
            amplitude_mhz,
            beta_mhz: None,
            n_steps,
            groups,
            delta_error_mhz: 0.0,
            omega_error_mhz: 0.0,
            first_driven: Group::A,
            sweep: SweepOrder::UpThenDown,
        };
        s.validate()?;
        Ok(s)
    }

    /// Ramp half-range `β² T0 / (8π)`, with `β` taken as the cyclic value.
    pub fn amplitude_from_beta(beta_mhz: f64, t0_us: f64) -> f64 {
        beta_mhz * beta_mhz * t0_us / (8.0 * core::f64::consts::PI)
    }

    pub fn with_beta(mut self, beta_mhz: f64) -> Self {
        self.beta_mhz = Some(beta_mhz);
        self
    }

    pub fn with_errors(mut self, delta_error_mhz: f64, omega_error_mhz: f64) -> Result<Self> {
        self.delta_error_mhz = delta_error_mhz;
        self.omega_error_mhz = omega_error_mhz;
        self.validate()?;
        Ok(self)
    }

    pub fn with_first_driven(mut self, group: Group) -> Self {
        self.first_driven = group;
        self
    }

    pub fn with_sweep(mut self, sweep: SweepOrder) -> Self {
        self.sweep = sweep;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t0_us > 0.0) {
            return Err(Error::config("drive.t0_us", "cycle time must be positive"));
        }
        if !(self.amplitude_mhz >= 0.0) {
            return Err(Error::config("drive.amplitude_mhz", "must be >= 0"));
        }
        if !(self.delta0_mhz + self.delta_error_mhz - self.amplitude_mhz > 0.0) {
            return Err(Error::config(
                "drive.amplitude_mhz",
                format!(
                    "sweep reaches Δ = {} MHz; the ramp must stay above zero detuning",
                    self.delta0_mhz + self.delta_error_mhz - self.amplitude_mhz
                ),
            ));
        }
        if self.n_steps == 0 {
            return Err(Error::config("drive.n_steps", "must be at least 1"));
        }
        if !self.omega0_mhz.is_finite() {
            return Err(Error::config("drive.omega0_mhz", "must be finite"));
        }
        Ok(())
    }

    fn half(&self, t: f64) -> (bool, f64) {
        let tp = t - libm::floor(t / self.t0_us) * self.t0_us;
        if tp < 0.5 * self.t0_us {
            (true, tp - 0.25 * self.t0_us)
        } else {
            (false, tp - 0.75 * self.t0_us)
        }
    }

    fn scaled(&self, offset: f64) -> f64 {
        core::f64::consts::PI * offset / (self.t0_us / 8.0)
    }

    fn sweep_sign(&self, first_half: bool) -> f64 {
        match (self.sweep, first_half) {
            (SweepOrder::UpThenDown, true) | (SweepOrder::DownThenUp, false) => 1.0,
            _ => -1.0,
        }
    }

    /// Group driven at time `t` and its Rabi frequency.
    pub fn group_omega(&self, t: f64) -> (Group, f64) {
        self.group_omega_in(t, t)
    }

    /// Like [`group_omega`](Self::group_omega), but the half-cycle is the one
    /// containing `t_ref`; `t` may sit on (or just past) its boundary. Lets an
    /// integrator step that ends on a boundary see the outgoing pulse.
    pub fn group_omega_in(&self, t: f64, t_ref: f64) -> (Group, f64) {
        let (first, _) = self.half(t_ref);
        let cycle_start = libm::floor(t_ref / self.t0_us) * self.t0_us;
        let centre = cycle_start + if first { 0.25 } else { 0.75 } * self.t0_us;
        let group = if first {
            self.first_driven
        } else {
            self.first_driven.other()
        };
        let omega = (self.omega0_mhz + self.omega_error_mhz) / libm::cosh(self.scaled(t - centre));
        (group, omega)
    }

    /// Rabi frequency of `site` at time `t`.
    pub fn omega(&self, site: usize, t: f64) -> Result<f64> {
        let group = *self
            .groups
            .get(site)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown site {site}")))?;
        let (driven, omega) = self.group_omega(t);
        Ok(if group == driven { omega } else { 0.0 })
    }

    pub fn delta(&self, t: f64) -> f64 {
        let (first, offset) = self.half(t);
        self.delta0_mhz
            + self.delta_error_mhz
            + self.sweep_sign(first) * self.amplitude_mhz * libm::tanh(self.scaled(offset))
    }

    /// `∫_{t_a}^{t_b} Δ(t) dt` in MHz·μs, exact.
    pub fn delta_integral(&self, t_a: f64, t_b: f64) -> f64 {
        let half = 0.5 * self.t0_us;
        let mut total = 0.0;
        let mut a = t_a;
        while a < t_b {
            let k = libm::floor(a / half);
            let end = ((k + 1.0) * half).min(t_b);
            let end = if end <= a { t_b } else { end };
            total += self.delta_integral_within(a, end);
            a = end;
        }
        total
    }

    fn delta_integral_within(&self, a: f64, b: f64) -> f64 {
        let mid = 0.5 * (a + b);
        let (first, _) = self.half(mid);
        let center_shift = if first { 0.25 } else { 0.75 } * self.t0_us;
        let cycle_start = libm::floor(mid / self.t0_us) * self.t0_us;
        let xa = self.scaled(a - cycle_start - center_shift);
        let xb = self.scaled(b - cycle_start - center_shift);
        let tau = self.t0_us / (8.0 * core::f64::consts::PI);
        (self.delta0_mhz + self.delta_error_mhz) * (b - a)
            + self.sweep_sign(first) * self.amplitude_mhz * tau * (ln_cosh(xb) - ln_cosh(xa))
    }
}

fn ln_cosh(x: f64) -> f64 {
    let ax = libm::fabs(x);
    ax + libm::log1p(libm::exp(-2.0 * ax)) - core::f64::consts::LN_2
}

/// Square π pulses at fixed detuning, alternating groups every
/// `1 / (2 Ω0)` μs.
#[derive(Clone, Debug, PartialEq)]
pub struct RabiSchedule {
    pub omega0_mhz: f64,
    pub delta0_mhz: f64,
    pub step_duration_us: f64,
    pub n_steps: usize,
    pub groups: Vec<Group>,
    pub delta_error_mhz: f64,
    pub omega_error_mhz: f64,
    pub first_driven: Group,
}

impl RabiSchedule {
    pub fn new(omega0_mhz: f64, delta0_mhz: f64, n_steps: usize, groups: Vec<Group>) -> Result<Self> {
        if !(omega0_mhz > 0.0) {
            return Err(Error::config("drive.omega0_mhz", "must be positive for a π pulse"));
        }
        if n_steps == 0 {
            return Err(Error::config("drive.n_steps", "must be at least 1"));
        }
        Ok(RabiSchedule {
            omega0_mhz,
            delta0_mhz,
            step_duration_us: 1.0 / (2.0 * omega0_mhz),
            n_steps,
            groups,
            delta_error_mhz: 0.0,
            omega_error_mhz: 0.0,
            first_driven: Group::A,
        })
    }

    pub fn with_errors(mut self, delta_error_mhz: f64, omega_error_mhz: f64) -> Self {
        self.delta_error_mhz = delta_error_mhz;
        self.omega_error_mhz = omega_error_mhz;
        self
    }

    pub fn with_first_driven(mut self, group: Group) -> Self {
        self.first_driven = group;
        self
    }

    pub fn group_omega(&self, t: f64) -> (Group, f64) {
        self.group_omega_in(t, t)
    }

    /// The pulse is constant within a step, so only `t_ref` matters.
    pub fn group_omega_in(&self, _t: f64, t_ref: f64) -> (Group, f64) {
        let step = libm::floor(t_ref / self.step_duration_us) as i64;
        let group = if step.rem_euclid(2) == 0 {
            self.first_driven
        } else {
            self.first_driven.other()
        };
        (group, self.omega0_mhz + self.omega_error_mhz)
    }

    /// `(Ω, Δ)` seen by `site` at time `t`.
    pub fn drive(&self, site: usize, t: f64) -> Result<(f64, f64)> {
        let group = *self
            .groups
            .get(site)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown site {site}")))?;
        let (driven, omega) = self.group_omega(t);
        let omega = if group == driven { omega } else { 0.0 };
        Ok((omega, self.delta0_mhz + self.delta_error_mhz))
    }
}

/// Either drive protocol, evaluated by the solvers.
#[derive(Clone, Debug, PartialEq)]
pub enum Drive {
    Rap(RapSchedule),
    Rabi(RabiSchedule),
}

impl Drive {
    pub fn groups(&self) -> &[Group] {
        match self {
            Drive::Rap(s) => &s.groups,
            Drive::Rabi(s) => &s.groups,
        }
    }

    pub fn group_of(&self, site: usize) -> Group {
        self.groups()[site]
    }

    /// Duration of one step (half-cycle), μs.
    pub fn step_duration(&self) -> f64 {
        match self {
            Drive::Rap(s) => 0.5 * s.t0_us,
            Drive::Rabi(s) => s.step_duration_us,
        }
    }

    /// Full cycle (two steps), μs.
    pub fn cycle(&self) -> f64 {
        2.0 * self.step_duration()
    }

    pub fn n_steps(&self) -> usize {
        match self {
            Drive::Rap(s) => s.n_steps,
            Drive::Rabi(s) => s.n_steps,
        }
    }

    /// End of the last scheduled step.
    pub fn duration(&self) -> f64 {
        self.n_steps() as f64 * self.step_duration()
    }

    pub fn group_omega(&self, t: f64) -> (Group, f64) {
        match self {
            Drive::Rap(s) => s.group_omega(t),
            Drive::Rabi(s) => s.group_omega(t),
        }
    }

    /// Drive at `t` continued from the step that contains `t_ref`.
    pub fn group_omega_in(&self, t: f64, t_ref: f64) -> (Group, f64) {
        match self {
            Drive::Rap(s) => s.group_omega_in(t, t_ref),
            Drive::Rabi(s) => s.group_omega_in(t, t_ref),
        }
    }

    pub fn omega(&self, site: usize, t: f64) -> Result<f64> {
        match self {
            Drive::Rap(s) => s.omega(site, t),
            Drive::Rabi(s) => s.drive(site, t).map(|(o, _)| o),
        }
    }

    pub fn delta(&self, t: f64) -> f64 {
        match self {
            Drive::Rap(s) => s.delta(t),
            Drive::Rabi(s) => s.delta0_mhz + s.delta_error_mhz,
        }
    }

    pub fn delta_integral(&self, t_a: f64, t_b: f64) -> f64 {
        match self {
            Drive::Rap(s) => s.delta_integral(t_a, t_b),
            Drive::Rabi(s) => (s.delta0_mhz + s.delta_error_mhz) * (t_b - t_a),
        }
    }

    /// Nominal `(Δ0, Ω0)` without injected errors.
    pub fn nominal(&self) -> (f64, f64) {
        match self {
            Drive::Rap(s) => (s.delta0_mhz, s.omega0_mhz),
            Drive::Rabi(s) => (s.delta0_mhz, s.omega0_mhz),
        }
    }

    /// Copy with additive errors `δΔ0`, `δΩ0`.
    pub fn with_errors(&self, delta_error_mhz: f64, omega_error_mhz: f64) -> Result<Drive> {
        Ok(match self {
            Drive::Rap(s) => Drive::Rap(s.clone().with_errors(delta_error_mhz, omega_error_mhz)?),
            Drive::Rabi(s) => Drive::Rabi(s.clone().with_errors(delta_error_mhz, omega_error_mhz)),
        })
    }

    pub(crate) fn check_sites(&self, n_sites: usize) -> Result<()> {
        if self.groups().len() != n_sites {
            return Err(Error::InvalidArgument(format!(
                "drive covers {} sites, geometry has {n_sites}",
                self.groups().len()
            )));
        }
        Ok(())
    }
}

//! Run configuration: the TOML schema, `AUTO` resolution and translation into
//! core types.
//!
//! A config file has a few top-level scalars and one table per block:
//!
//! ```toml
//! name = "fig4_chain9"
//! seed = 1
//! initial = "000010000"
//! gamma_mhz = 0.000839
//!
//! [geometry]
//! kind = "chain"          # or "square" (then width/height)
//! n = 9
//! spacing_um = 6.4
//! v_nn_mhz = 20.0         # or c6 = ... (MHz μm^6)
//! cutoff = "nearest"      # "next_nearest" or "radius" + cutoff_radius_um
//!
//! [drive]
//! kind = "rap"            # or "rabi"
//! omega0_mhz = 10.7
//! t0_us = 3.0             # AUTO for rabi: derived from the π-pulse time
//! delta0_mhz = "AUTO"     # V_nn in a chain, 1.125 V_nn on a square lattice
//! amplitude_mhz = "AUTO"  # β² T0 / (8π) from beta_mhz
//! beta_mhz = 7.6
//! n_steps = 4
//!
//! [solver]
//! method = "full_me"      # or "mf_qmc" / "mf_me"
//! dt_us = "AUTO"
//!
//! [outputs]
//! directory = "out/fig4_chain9"
//! stride = "AUTO"         # one sample per step
//! ```
//!
//! All frequencies are cyclic MHz, times μs and distances μm.

use std::fmt;
use std::path::PathBuf;

use rapfac_core::drive::{assign_groups, Drive, Group, RabiSchedule, RapSchedule};
use rapfac_core::fullme::{EvolveSpec, Representation, MAX_DENSITY_SITES, MAX_PURE_SITES};
use rapfac_core::lattice::{build_chain, build_square_with, c6_from_pair, Cutoff, DisorderSpec, Geometry};
use rapfac_core::mfqmc::TrajectorySpec;
use serde::{Deserialize, Serialize};

use crate::error::AppError;

/// Literal `"AUTO"` in a config file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoWord {
    #[serde(rename = "AUTO")]
    Auto,
}

/// A value that may be left to the resolver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Auto<T> {
    Value(T),
    Auto(AutoWord),
}

impl<T> Default for Auto<T> {
    fn default() -> Self {
        Auto::Auto(AutoWord::Auto)
    }
}

impl<T: Copy> Auto<T> {
    pub fn value(&self) -> Option<T> {
        match self {
            Auto::Value(v) => Some(*v),
            Auto::Auto(_) => None,
        }
    }

    pub fn is_auto(&self) -> bool {
        matches!(self, Auto::Auto(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeKind {
    Chain,
    Square,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    #[default]
    Nearest,
    NextNearest,
    Radius,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub kind: LatticeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    pub spacing_um: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_nn_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c6: Option<f64>,
    /// Chains default to `nearest`, square lattices to `next_nearest`
    /// (axial plus diagonal neighbours).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<CutoffKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_radius_um: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveKind {
    Rap,
    Rabi,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupName {
    #[default]
    A,
    B,
}

impl From<GroupName> for Group {
    fn from(g: GroupName) -> Group {
        match g {
            GroupName::A => Group::A,
            GroupName::B => Group::B,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub kind: DriveKind,
    pub omega0_mhz: f64,
    #[serde(default)]
    pub t0_us: Auto<f64>,
    #[serde(default)]
    pub delta0_mhz: Auto<f64>,
    #[serde(default)]
    pub amplitude_mhz: Auto<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_mhz: Option<f64>,
    pub n_steps: usize,
    #[serde(default)]
    pub first_driven_group: GroupName,
    #[serde(default)]
    pub d_delta0_mhz: f64,
    #[serde(default)]
    pub d_omega0_mhz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderConfig {
    pub sigma_um: f64,
    pub realizations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FullMe,
    MfQmc,
    MfMe,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::FullMe => "full_me",
            Method::MfQmc => "mf_qmc",
            Method::MfMe => "mf_me",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprName {
    Pure,
    Density,
}

impl From<ReprName> for Representation {
    fn from(r: ReprName) -> Representation {
        match r {
            ReprName::Pure => Representation::Pure,
            ReprName::Density => Representation::Density,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    #[serde(default)]
    pub dt_us: Auto<f64>,
    /// Trajectories for `mf_qmc`; ignored otherwise.
    #[serde(default = "one")]
    pub trajectories: usize,
    /// State representation for `full_me`. `AUTO` picks a state vector when
    /// there is no decay and a density matrix otherwise.
    #[serde(default)]
    pub representation: Auto<ReprName>,
    #[serde(default)]
    pub record_jumps: bool,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    /// Integrator steps between samples; `AUTO` samples once per step.
    #[serde(default)]
    pub stride: Auto<usize>,
    /// Also write the analytic gain laws to the gain table.
    #[serde(default)]
    pub gain_laws: bool,
    /// Excitation threshold for the pattern table (square lattices).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_threshold: Option<f64>,
}

/// Fractional `(δΔ0/Δ0, δΩ0/Ω0)` grid for the `scan` verb.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub points: usize,
    pub half_width: f64,
    pub site: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// Base seed for every random stream of the run.
    #[serde(default)]
    pub seed: u64,
    /// Initial product state; character `j` is site `j`, `1` = Rydberg.
    pub initial: String,
    #[serde(default)]
    pub gamma_mhz: f64,
    /// Caveats carried into the manifest.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub geometry: GeometryConfig,
    pub drive: DriveConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disorder: Option<DisorderConfig>,
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
}

fn bad(field: &str, reason: impl fmt::Display) -> AppError {
    AppError::Config {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn positive(field: &str, x: f64) -> Result<f64, AppError> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(bad(field, format!("must be a positive number, got {x}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, AppError> {
        toml::from_str(text).map_err(|e| AppError::Parse(e.to_string()))
    }

    /// The resolved config recorded in a run manifest.
    pub fn from_manifest(text: &str) -> Result<RunConfig, AppError> {
        let mut manifest: serde_json::Value = serde_json::from_str(text).map_err(|e| AppError::Parse(e.to_string()))?;
        let config = manifest
            .get_mut("config")
            .map(serde_json::Value::take)
            .ok_or_else(|| bad("config", "the manifest has no config entry"))?;
        serde_json::from_value(config).map_err(|e| AppError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn n_sites(&self) -> Result<usize, AppError> {
        let g = &self.geometry;
        match g.kind {
            LatticeKind::Chain => g.n.ok_or_else(|| bad("geometry.n", "required for a chain")),
            LatticeKind::Square => {
                let w = g.width.ok_or_else(|| bad("geometry.width", "required for a square lattice"))?;
                let h = g.height.ok_or_else(|| bad("geometry.height", "required for a square lattice"))?;
                Ok(w * h)
            }
        }
    }

    fn v_nn(&self) -> Result<f64, AppError> {
        let g = &self.geometry;
        match (g.v_nn_mhz, g.c6) {
            (Some(v), None) => positive("geometry.v_nn_mhz", v),
            (None, Some(c6)) => Ok(positive("geometry.c6", c6)? / g.spacing_um.powi(6)),
            _ => Err(bad("geometry.v_nn_mhz", "give exactly one of v_nn_mhz and c6")),
        }
    }

    /// Copy with every `AUTO` field replaced by its value. Resolving a
    /// resolved config is the identity.
    pub fn resolve(&self) -> Result<RunConfig, AppError> {
        let mut c = self.clone();
        let n = c.n_sites()?;
        positive("geometry.spacing_um", c.geometry.spacing_um)?;
        let v_nn = self.v_nn()?;
        if c.geometry.cutoff.is_none() {
            c.geometry.cutoff = Some(match c.geometry.kind {
                LatticeKind::Chain => CutoffKind::Nearest,
                LatticeKind::Square => CutoffKind::NextNearest,
            });
        }

        let d = &mut c.drive;
        if d.delta0_mhz.is_auto() {
            let factor = match c.geometry.kind {
                LatticeKind::Chain => 1.0,
                LatticeKind::Square => 1.125,
            };
            d.delta0_mhz = Auto::Value(factor * v_nn);
        }
        positive("drive.omega0_mhz", d.omega0_mhz)?;
        match d.kind {
            DriveKind::Rap => {
                let t0 = d
                    .t0_us
                    .value()
                    .ok_or_else(|| bad("drive.t0_us", "required for a rap drive"))?;
                positive("drive.t0_us", t0)?;
                if d.amplitude_mhz.is_auto() {
                    let beta = d
                        .beta_mhz
                        .ok_or_else(|| bad("drive.amplitude_mhz", "AUTO needs drive.beta_mhz"))?;
                    d.amplitude_mhz = Auto::Value(RapSchedule::amplitude_from_beta(beta, t0));
                }
            }
            DriveKind::Rabi => {
                let cycle = 1.0 / d.omega0_mhz;
                if let Some(t0) = d.t0_us.value() {
                    if (t0 - cycle).abs() > 1e-12 * cycle {
                        return Err(bad(
                            "drive.t0_us",
                            format!("a rabi cycle is two π pulses, 1/omega0 = {cycle} us; use AUTO"),
                        ));
                    }
                }
                d.t0_us = Auto::Value(cycle);
                if let Some(a) = d.amplitude_mhz.value() {
                    if a != 0.0 {
                        return Err(bad("drive.amplitude_mhz", "a rabi drive has no ramp"));
                    }
                }
                d.amplitude_mhz = Auto::Value(0.0);
            }
        }

        if c.initial.len() != n || !c.initial.chars().all(|ch| ch == '0' || ch == '1') {
            return Err(bad("initial", format!("must be a string of {n} characters 0/1")));
        }
        if !(c.gamma_mhz >= 0.0 && c.gamma_mhz.is_finite()) {
            return Err(bad("gamma_mhz", "must be finite and >= 0"));
        }

        if c.solver.method == Method::FullMe && c.solver.representation.is_auto() {
            c.solver.representation = Auto::Value(if c.gamma_mhz > 0.0 {
                ReprName::Density
            } else {
                ReprName::Pure
            });
        }
        if c.solver.dt_us.is_auto() {
            let drive = c.build_drive()?;
            c.solver.dt_us = Auto::Value(match c.solver.method {
                Method::FullMe => EvolveSpec::default_dt(&drive, c.representation()?),
                Method::MfQmc | Method::MfMe => TrajectorySpec::default_dt(&drive),
            });
        }
        if c.outputs.stride.is_auto() {
            let drive = c.build_drive()?;
            c.outputs.stride = Auto::Value(EvolveSpec::stride_per_step(&drive, c.dt()?));
        }
        if c.outputs.directory.is_none() {
            c.outputs.directory = Some(PathBuf::from("out").join(&c.name));
        }
        Ok(c)
    }

    pub fn representation(&self) -> Result<Representation, AppError> {
        match self.solver.representation {
            Auto::Value(r) => Ok(r.into()),
            Auto::Auto(_) => Err(bad("solver.representation", "unresolved AUTO")),
        }
    }

    pub fn dt(&self) -> Result<f64, AppError> {
        let dt = self
            .solver
            .dt_us
            .value()
            .ok_or_else(|| bad("solver.dt_us", "unresolved AUTO"))?;
        positive("solver.dt_us", dt)
    }

    pub fn stride(&self) -> Result<usize, AppError> {
        match self.outputs.stride.value() {
            Some(0) => Err(bad("outputs.stride", "must be at least 1")),
            Some(s) => Ok(s),
            None => Err(bad("outputs.stride", "unresolved AUTO")),
        }
    }

    pub fn directory(&self) -> PathBuf {
        self.outputs
            .directory
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(&self.name))
    }

    pub fn cutoff(&self) -> Result<Cutoff, AppError> {
        let g = &self.geometry;
        let kind = g.cutoff.unwrap_or(match g.kind {
            LatticeKind::Chain => CutoffKind::Nearest,
            LatticeKind::Square => CutoffKind::NextNearest,
        });
        Ok(match kind {
            CutoffKind::Nearest => Cutoff::NearestOnly,
            CutoffKind::NextNearest => Cutoff::WithNextNearest,
            CutoffKind::Radius => Cutoff::Radius(positive(
                "geometry.cutoff_radius_um",
                g.cutoff_radius_um
                    .ok_or_else(|| bad("geometry.cutoff_radius_um", "required with cutoff = \"radius\""))?,
            )?),
        })
    }

    pub fn build_geometry(&self) -> Result<Geometry, AppError> {
        let g = &self.geometry;
        let c6 = c6_from_pair(self.v_nn()?, g.spacing_um);
        let cutoff = self.cutoff()?;
        let geometry = match g.kind {
            LatticeKind::Chain => build_chain(self.n_sites()?, g.spacing_um, c6, cutoff),
            LatticeKind::Square => build_square_with(
                g.width.unwrap_or(0),
                g.height.unwrap_or(0),
                g.spacing_um,
                c6,
                cutoff,
            ),
        };
        Ok(geometry?)
    }

    /// The drive for this config. AUTO amplitudes and detunings must be
    /// resolved for RAP; anything left AUTO is resolved on the fly.
    pub fn build_drive(&self) -> Result<Drive, AppError> {
        let d = &self.drive;
        let g = self.build_geometry()?;
        let groups = assign_groups(&g);
        let delta0 = match d.delta0_mhz.value() {
            Some(x) => x,
            None => {
                let factor = if self.geometry.kind == LatticeKind::Square { 1.125 } else { 1.0 };
                factor * self.v_nn()?
            }
        };
        if !delta0.is_finite() {
            return Err(bad("drive.delta0_mhz", "must be finite"));
        }
        if d.n_steps == 0 {
            return Err(bad("drive.n_steps", "must be at least 1"));
        }
        let first: Group = d.first_driven_group.into();
        let drive = match d.kind {
            DriveKind::Rap => {
                let t0 = d
                    .t0_us
                    .value()
                    .ok_or_else(|| bad("drive.t0_us", "required for a rap drive"))?;
                let amplitude = match (d.amplitude_mhz.value(), d.beta_mhz) {
                    (Some(a), _) => a,
                    (None, Some(beta)) => RapSchedule::amplitude_from_beta(beta, t0),
                    (None, None) => return Err(bad("drive.amplitude_mhz", "AUTO needs drive.beta_mhz")),
                };
                let mut s = RapSchedule::new(d.omega0_mhz, t0, delta0, amplitude, d.n_steps, groups)?
                    .with_first_driven(first)
                    .with_errors(d.d_delta0_mhz, d.d_omega0_mhz)?;
                if let Some(beta) = d.beta_mhz {
                    s = s.with_beta(beta);
                }
                Drive::Rap(s)
            }
            DriveKind::Rabi => Drive::Rabi(
                RabiSchedule::new(d.omega0_mhz, delta0, d.n_steps, groups)?
                    .with_first_driven(first)
                    .with_errors(d.d_delta0_mhz, d.d_omega0_mhz),
            ),
        };
        Ok(drive)
    }

    pub fn disorder_spec(&self) -> Result<Option<DisorderSpec>, AppError> {
        self.disorder
            .as_ref()
            .map(|d| DisorderSpec::new(d.sigma_um, d.realizations, self.seed).map_err(AppError::from))
            .transpose()
    }

    /// Refuse runs whose state would not fit the solver before anything is
    /// allocated.
    pub fn check_resources(&self) -> Result<(), AppError> {
        let n = self.n_sites()?;
        if self.solver.method == Method::FullMe {
            let (limit, what) = match self.representation()? {
                Representation::Pure => (MAX_PURE_SITES, "state-vector"),
                Representation::Density => (MAX_DENSITY_SITES, "density-matrix"),
            };
            if n > limit {
                return Err(AppError::Resource(format!(
                    "full_me {what} runs are limited to {limit} sites, this config has {n}"
                )));
            }
        }
        if self.solver.method == Method::FullMe && self.gamma_mhz > 0.0 && self.representation()? == Representation::Pure {
            return Err(bad("solver.representation", "decay needs a density matrix"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "pair"
initial = "10"

[geometry]
kind = "chain"
n = 2
spacing_um = 6.4
v_nn_mhz = 20.0

[drive]
kind = "rap"
omega0_mhz = 10.7
t0_us = 3.0
beta_mhz = 7.6
n_steps = 8

[solver]
method = "full_me"
"#;

    #[test]
    fn auto_fields_resolve() {
        let c = RunConfig::from_toml(MINIMAL).unwrap().resolve().unwrap();
        assert_eq!(c.drive.delta0_mhz, Auto::Value(20.0));
        let a = c.drive.amplitude_mhz.value().unwrap();
        assert!((a - 6.8946).abs() < 1e-4, "{a}");
        assert_eq!(c.solver.representation, Auto::Value(ReprName::Pure));
        assert_eq!(c.solver.dt_us, Auto::Value(3.0 / 32_000.0));
        assert_eq!(c.outputs.stride, Auto::Value(16_000));
        assert_eq!(c.geometry.cutoff, Some(CutoffKind::Nearest));
    }

    #[test]
    fn resolution_is_idempotent_and_round_trips() {
        let c = RunConfig::from_toml(MINIMAL).unwrap().resolve().unwrap();
        assert_eq!(c.resolve().unwrap(), c);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn square_detuning_is_shifted() {
        let text = MINIMAL
            .replace("kind = \"chain\"\nn = 2", "kind = \"square\"\nwidth = 2\nheight = 1");
        let c = RunConfig::from_toml(&text).unwrap().resolve().unwrap();
        assert_eq!(c.drive.delta0_mhz, Auto::Value(22.5));
        assert_eq!(c.geometry.cutoff, Some(CutoffKind::NextNearest));
    }

    #[test]
    fn rabi_cycle_is_derived() {
        let text = MINIMAL
            .replace("kind = \"rap\"", "kind = \"rabi\"")
            .replace("t0_us = 3.0\n", "")
            .replace("omega0_mhz = 10.7", "omega0_mhz = 0.5");
        let c = RunConfig::from_toml(&text).unwrap().resolve().unwrap();
        assert_eq!(c.drive.t0_us, Auto::Value(2.0));
        assert_eq!(c.build_drive().unwrap().step_duration(), 1.0);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            (MINIMAL.replace("initial = \"10\"", "initial = \"1\""), "initial"),
            (MINIMAL.replace("beta_mhz = 7.6\n", ""), "drive.amplitude_mhz"),
            (MINIMAL.replace("v_nn_mhz = 20.0", "v_nn_mhz = 20.0\nc6 = 3.0"), "geometry.v_nn_mhz"),
            (MINIMAL.replace("n_steps = 8", "n_steps = 0"), "drive.n_steps"),
        ];
        for (text, field) in cases {
            let err = RunConfig::from_toml(&text).unwrap().resolve().unwrap_err();
            assert_eq!(err.exit_code(), 2);
            assert!(err.to_string().contains(field), "{err} should mention {field}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml(&MINIMAL.replace("n_steps = 8", "n_steps = 8\nsteps = 3")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("steps"));
    }

    #[test]
    fn explicit_c6_matches_v_nn() {
        let c6 = c6_from_pair(20.0, 6.4);
        let text = MINIMAL.replace("v_nn_mhz = 20.0", &format!("c6 = {c6}"));
        let g = RunConfig::from_toml(&text).unwrap().build_geometry().unwrap();
        assert!((g.pairs()[0].v_mhz - 20.0).abs() < 1e-9);
    }

    #[test]
    fn full_me_refuses_large_registers() {
        let text = MINIMAL
            .replace("n = 2", "n = 33")
            .replace("initial = \"10\"", &format!("initial = \"{}\"", "0".repeat(33)));
        let c = RunConfig::from_toml(&text).unwrap().resolve().unwrap();
        assert_eq!(c.check_resources().unwrap_err().exit_code(), 4);
    }
}

//! Exact many-body dynamics over the 2^N product basis.
//!
//! Basis convention: site `j` is bit `j` of the basis index and a set bit is
//! the Rydberg state |1⟩. The Hamiltonian is
//!
//! ```text
//! H(t) = Σ_j Ω_j(t)/2 σ^x_j − Δ(t)/2 Σ_j σ^z_j + Σ_{i<j} V_ij n_i n_j
//! ```
//!
//! and the density matrix obeys `dρ/dt = i[ρ, H] + Γ Σ_j D[σ^-_j] ρ`.
//!
//! Both the state-vector and the density-matrix paths use a fixed-step RK4
//! scheme in the interaction picture of the diagonal part of the generator
//! (detuning, interactions and the decay anticommutator). That diagonal part
//! is integrated exactly, since `∫Δ dt` is known in closed form, and RK4 only
//! has to resolve the drive and the jump term. Without this the fastest bare
//! phases of a 9-site register, several GHz·rad, force step sizes far below
//! what the drive needs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix4};

use crate::drive::{Drive, Group};
use crate::error::{Error, Result};
use crate::lattice::{sample_disorder, DisorderSpec, Geometry};
use crate::result::{average_runs, Residuals, RunResult};
use crate::units::{angular, cyclic};
use crate::C64;

/// Largest register the density-matrix path accepts.
pub const MAX_DENSITY_SITES: usize = 12;
/// Largest register the state-vector path accepts.
pub const MAX_PURE_SITES: usize = 24;
/// Registers up to this size get a full eigenvalue check of the final ρ.
const EIGEN_CHECK_MAX_SITES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    Pure,
    Density,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ManyBodyState {
    Pure { n_sites: usize, amplitudes: Vec<C64> },
    /// Row-major `dim × dim` matrix.
    Density { n_sites: usize, matrix: Vec<C64> },
}

fn check_size(n_sites: usize, repr: Representation) -> Result<()> {
    let limit = match repr {
        Representation::Pure => MAX_PURE_SITES,
        Representation::Density => MAX_DENSITY_SITES,
    };
    if n_sites > limit {
        return Err(Error::ResourceLimit(format!(
            "{n_sites} sites exceed the {repr:?} limit of {limit}; use the mean-field solver"
        )));
    }
    Ok(())
}

/// Basis index of a bitstring; character `j` is site `j`.
pub fn basis_index(bits: &str) -> Result<usize> {
    let mut index = 0usize;
    for (j, c) in bits.chars().enumerate() {
        match c {
            '0' => {}
            '1' => index |= 1 << j,
            other => {
                return Err(Error::config(
                    "initial",
                    format!("bitstring may contain only 0 and 1, found {other:?}"),
                ))
            }
        }
    }
    Ok(index)
}

impl ManyBodyState {
    /// Computational-basis product state from a bitstring such as `"000010000"`.
    pub fn from_bitstring(bits: &str, repr: Representation) -> Result<Self> {
        let n_sites = bits.chars().count();
        if n_sites == 0 {
            return Err(Error::config("initial", "empty bitstring"));
        }
        check_size(n_sites, repr)?;
        let index = basis_index(bits)?;
        let dim = 1usize << n_sites;
        Ok(match repr {
            Representation::Pure => {
                let mut amplitudes = vec![C64::new(0.0, 0.0); dim];
                amplitudes[index] = C64::new(1.0, 0.0);
                ManyBodyState::Pure { n_sites, amplitudes }
            }
            Representation::Density => {
                let mut matrix = vec![C64::new(0.0, 0.0); dim * dim];
                matrix[index * dim + index] = C64::new(1.0, 0.0);
                ManyBodyState::Density { n_sites, matrix }
            }
        })
    }

    pub fn n_sites(&self) -> usize {
        match self {
            ManyBodyState::Pure { n_sites, .. } | ManyBodyState::Density { n_sites, .. } => *n_sites,
        }
    }

    pub fn dim(&self) -> usize {
        1 << self.n_sites()
    }

    pub fn representation(&self) -> Representation {
        match self {
            ManyBodyState::Pure { .. } => Representation::Pure,
            ManyBodyState::Density { .. } => Representation::Density,
        }
    }

    /// Probability of each basis state.
    pub fn basis_probabilities(&self) -> Vec<f64> {
        match self {
            ManyBodyState::Pure { amplitudes, .. } => amplitudes.iter().map(|a| a.norm_sqr()).collect(),
            ManyBodyState::Density { matrix, .. } => {
                let dim = self.dim();
                (0..dim).map(|x| matrix[x * dim + x].re).collect()
            }
        }
    }

    /// `⟨n_j⟩` for every site.
    pub fn populations(&self) -> Vec<f64> {
        populations_from_probabilities(self.n_sites(), &self.basis_probabilities())
    }

    /// |⟨ψ|ψ⟩ − 1| or |Tr ρ − 1|.
    pub fn norm_error(&self) -> f64 {
        let total: f64 = self.basis_probabilities().iter().sum();
        libm::fabs(total - 1.0)
    }

    /// max |ρ_ab − conj(ρ_ba)|; zero for a state vector.
    pub fn hermiticity_error(&self) -> f64 {
        match self {
            ManyBodyState::Pure { .. } => 0.0,
            ManyBodyState::Density { matrix, .. } => {
                let dim = self.dim();
                let mut worst = 0.0f64;
                for a in 0..dim {
                    for b in a..dim {
                        let d = matrix[a * dim + b] - matrix[b * dim + a].conj();
                        worst = worst.max(d.norm());
                    }
                }
                worst
            }
        }
    }

    /// Tr ρ².
    pub fn purity(&self) -> f64 {
        match self {
            ManyBodyState::Pure { amplitudes, .. } => {
                let n: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
                n * n
            }
            ManyBodyState::Density { matrix, .. } => matrix.iter().map(|z| z.norm_sqr()).sum(),
        }
    }

    pub fn to_density(&self) -> Result<ManyBodyState> {
        match self {
            ManyBodyState::Density { .. } => Ok(self.clone()),
            ManyBodyState::Pure { n_sites, amplitudes } => {
                check_size(*n_sites, Representation::Density)?;
                let dim = amplitudes.len();
                let mut matrix = vec![C64::new(0.0, 0.0); dim * dim];
                for a in 0..dim {
                    for b in 0..dim {
                        matrix[a * dim + b] = amplitudes[a] * amplitudes[b].conj();
                    }
                }
                Ok(ManyBodyState::Density {
                    n_sites: *n_sites,
                    matrix,
                })
            }
        }
    }

    /// Smallest eigenvalue of ρ (of |ψ⟩⟨ψ| for a state vector).
    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            ManyBodyState::Pure { .. } => 0.0f64.min(1.0 - self.norm_error()),
            ManyBodyState::Density { matrix, .. } => {
                let dim = self.dim();
                let m = DMatrix::from_fn(dim, dim, |a, b| {
                    // symmetrize to remove round-off asymmetry before the solver
                    0.5 * (matrix[a * dim + b] + matrix[b * dim + a].conj())
                });
                m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
            }
        }
    }
}

fn populations_from_probabilities(n_sites: usize, probs: &[f64]) -> Vec<f64> {
    let mut pops = vec![0.0; n_sites];
    for (x, &p) in probs.iter().enumerate() {
        let mut bits = x;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            pops[j] += p;
            bits &= bits - 1;
        }
    }
    pops
}

/// Drive-independent diagonal data of `H`.
#[derive(Clone, Debug)]
struct Diagonal {
    n_sites: usize,
    /// Number of excited sites in each basis state.
    excitations: Vec<u32>,
    /// Interaction energy of each basis state, rad/μs.
    interaction: Vec<f64>,
}

impl Diagonal {
    fn new(g: &Geometry) -> Self {
        let n = g.n_sites();
        let dim = 1usize << n;
        let excitations = (0..dim).map(|x: usize| x.count_ones()).collect();
        let mut interaction = vec![0.0; dim];
        for p in g.pairs() {
            let mask = (1usize << p.i) | (1usize << p.j);
            let v = angular(p.v_mhz);
            for (x, e) in interaction.iter_mut().enumerate() {
                if x & mask == mask {
                    *e += v;
                }
            }
        }
        Diagonal {
            n_sites: n,
            excitations,
            interaction,
        }
    }

    /// Coefficient of Δ in `−Δ/2 Σ σ^z` for a state with `k` excitations.
    fn z(&self, k: u32) -> f64 {
        0.5 * self.n_sites as f64 - k as f64
    }
}

fn sites_of(drive: &Drive, group: Group) -> Vec<usize> {
    drive
        .groups()
        .iter()
        .enumerate()
        .filter_map(|(j, &g)| (g == group).then_some(j))
        .collect()
}

/// `H(t) v`, matrix-free. Angular units: the result is in rad/μs times `v`.
pub fn apply_hamiltonian(g: &Geometry, drive: &Drive, t: f64, v: &[C64]) -> Result<Vec<C64>> {
    let n = g.n_sites();
    drive.check_sites(n)?;
    if n > MAX_PURE_SITES || v.len() != 1usize << n {
        return Err(Error::InvalidArgument(format!(
            "state has length {}, expected 2^{n}",
            v.len()
        )));
    }
    let diag = Diagonal::new(g);
    let delta = angular(drive.delta(t));
    let mut out: Vec<C64> = v
        .iter()
        .enumerate()
        .map(|(x, &a)| a * (diag.z(diag.excitations[x]) * delta + diag.interaction[x]))
        .collect();
    for j in 0..n {
        let w = 0.5 * angular(drive.omega(j, t)?);
        if w == 0.0 {
            continue;
        }
        let m = 1usize << j;
        for (x, o) in out.iter_mut().enumerate() {
            *o += v[x ^ m] * w;
        }
    }
    Ok(out)
}

/// Integration settings for [`evolve`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveSpec {
    pub t_final_us: f64,
    pub dt_us: f64,
    /// Integrator steps between recorded samples.
    pub output_stride: usize,
    /// Decay rate Γ as a cyclic frequency (MHz).
    pub gamma_mhz: f64,
}

impl EvolveSpec {
    pub fn new(t_final_us: f64, dt_us: f64, output_stride: usize, gamma_mhz: f64) -> Result<Self> {
        let spec = EvolveSpec {
            t_final_us,
            dt_us,
            output_stride,
            gamma_mhz,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default step for a run in the given representation.
    ///
    /// RAP: `T0/32000` for state vectors, which keeps the norm within 1e-9.
    /// Density matrices use `T0/9000`, which keeps the smallest eigenvalue of
    /// ρ above −1e-7 for a 9-site register, refined to at most
    /// `1/(70 Δ_max)` so that the far-detuned admixtures behind a dark count
    /// are resolved when the ramp sits high; the step is then rounded to a
    /// whole number per half-cycle. Square pulses use `step/5000` for both.
    pub fn default_dt(drive: &Drive, repr: Representation) -> f64 {
        match (drive, repr) {
            (Drive::Rap(s), Representation::Pure) => s.t0_us / 32_000.0,
            (Drive::Rap(s), Representation::Density) => {
                let delta_max = libm::fabs(s.delta0_mhz) + libm::fabs(s.amplitude_mhz);
                let dt = (s.t0_us / 9_000.0).min(1.0 / (70.0 * delta_max));
                let half = 0.5 * s.t0_us;
                half / libm::ceil(half / dt - 1e-9)
            }
            (Drive::Rabi(s), _) => s.step_duration_us / 5_000.0,
        }
    }

    /// Stride that records exactly once per step (half-cycle).
    pub fn stride_per_step(drive: &Drive, dt_us: f64) -> usize {
        libm::round(drive.step_duration() / dt_us).max(1.0) as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt_us > 0.0) || !self.dt_us.is_finite() {
            return Err(Error::config("solver.dt_us", "must be positive"));
        }
        if !(self.t_final_us >= 0.0) {
            return Err(Error::config("solver.t_final_us", "must be >= 0"));
        }
        if self.output_stride == 0 {
            return Err(Error::config("outputs.stride", "must be at least 1"));
        }
        if !(self.gamma_mhz >= 0.0) {
            return Err(Error::config("gamma_mhz", "must be >= 0"));
        }
        self.n_steps().map(|_| ())
    }

    /// Number of integrator steps; `t_final` must be a multiple of `dt`.
    pub fn n_steps(&self) -> Result<usize> {
        let n = libm::round(self.t_final_us / self.dt_us);
        if libm::fabs(n * self.dt_us - self.t_final_us) > 1e-9 * self.t_final_us.max(self.dt_us) {
            return Err(Error::config(
                "solver.dt_us",
                format!("t_final = {} is not a multiple of dt = {}", self.t_final_us, self.dt_us),
            ));
        }
        Ok(n as usize)
    }

    pub(crate) fn check_for(&self, drive: &Drive) -> Result<()> {
        self.validate()?;
        if let Drive::Rap(s) = drive {
            if self.dt_us > s.t0_us / 2000.0 * (1.0 + 1e-12) {
                return Err(Error::config(
                    "solver.dt_us",
                    format!("dt must resolve the ramp: at most T0/2000 = {}", s.t0_us / 2000.0),
                ));
            }
        }
        Ok(())
    }
}

/// Instability thresholds applied at every recorded sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub norm: f64,
    pub hermiticity: f64,
    pub population: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            norm: 1e-6,
            hermiticity: 1e-8,
            population: 1e-6,
        }
    }
}

/// Result of [`evolve`] together with the final state.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub result: RunResult,
    pub final_state: ManyBodyState,
}

pub fn evolve(g: &Geometry, drive: &Drive, spec: &EvolveSpec, initial: &ManyBodyState) -> Result<Evolution> {
    evolve_with(g, drive, spec, initial, Tolerances::default())
}

pub fn evolve_with(
    g: &Geometry,
    drive: &Drive,
    spec: &EvolveSpec,
    initial: &ManyBodyState,
    tol: Tolerances,
) -> Result<Evolution> {
    let n = g.n_sites();
    drive.check_sites(n)?;
    spec.check_for(drive)?;
    if initial.n_sites() != n {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} sites, geometry has {n}",
            initial.n_sites()
        )));
    }
    check_size(n, initial.representation())?;
    let start_error = initial.norm_error().max(initial.hermiticity_error());
    if start_error > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "initial state violates normalization/hermiticity by {start_error:e}"
        )));
    }
    let state = if spec.gamma_mhz > 0.0 {
        initial.to_density()?
    } else {
        initial.clone()
    };
    let mut integrator = Integrator::new(g, drive, spec, state);
    integrator.run(tol)
}

/// Per-basis-state phase/damping factors over an interval of length `h/2`.
struct HalfStepFactors {
    /// `exp(−i W_x h/2)`, fixed for the run.
    interaction: Vec<C64>,
}

impl HalfStepFactors {
    fn new(diag: &Diagonal, h: f64) -> Self {
        let interaction = diag
            .interaction
            .iter()
            .map(|&w| C64::from_polar(1.0, -w * 0.5 * h))
            .collect();
        HalfStepFactors { interaction }
    }

    /// Factors `f_x = exp(−i ∫E_x − Γ/2 k_x (t_b − t_a))` for `[t_a, t_b]`
    /// of length `h/2`.
    fn fill(&self, diag: &Diagonal, drive: &Drive, gamma: f64, t_a: f64, t_b: f64, out: &mut [C64]) {
        let phase = angular(drive.delta_integral(t_a, t_b));
        let span = t_b - t_a;
        let per_k: Vec<C64> = (0..=diag.n_sites as u32)
            .map(|k| C64::from_polar(libm::exp(-0.5 * gamma * k as f64 * span), -diag.z(k) * phase))
            .collect();
        for ((o, &k), &w) in out.iter_mut().zip(&diag.excitations).zip(&self.interaction) {
            *o = per_k[k as usize] * w;
        }
    }
}

enum Buffers {
    Pure {
        y: Vec<C64>,
        k: Vec<C64>,
        u: Vec<C64>,
        acc: Vec<C64>,
    },
    Density {
        y: Planes,
        k: Planes,
        u: Planes,
        acc: Planes,
        /// Split copies of the two half-step factor arrays.
        factors: [Planes; 2],
    },
}

/// Row-major complex matrix stored as separate real and imaginary planes, so
/// that the stage updates are plain real axpys.
#[derive(Clone)]
struct Planes {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Planes {
    fn zeros(len: usize) -> Self {
        Planes {
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }

    fn from_complex(values: &[C64]) -> Self {
        Planes {
            re: values.iter().map(|z| z.re).collect(),
            im: values.iter().map(|z| z.im).collect(),
        }
    }

    fn set_from(&mut self, values: &[C64]) {
        for ((r, i), z) in self.re.iter_mut().zip(self.im.iter_mut()).zip(values) {
            *r = z.re;
            *i = z.im;
        }
    }

    fn to_complex(&self) -> Vec<C64> {
        self.re.iter().zip(&self.im).map(|(&r, &i)| C64::new(r, i)).collect()
    }

    /// Fill the strictly lower triangle with the conjugate of the upper one.
    fn mirror(&mut self, dim: usize) {
        const TILE: usize = 32;
        for a0 in (0..dim).step_by(TILE) {
            for b0 in (0..=a0).step_by(TILE) {
                for a in a0..(a0 + TILE).min(dim) {
                    for b in b0..(b0 + TILE).min(a) {
                        self.re[a * dim + b] = self.re[b * dim + a];
                        self.im[a * dim + b] = -self.im[b * dim + a];
                    }
                }
            }
        }
    }
}

struct Integrator<'a> {
    drive: &'a Drive,
    spec: &'a EvolveSpec,
    diag: Diagonal,
    groups: [Vec<usize>; 2],
    gamma: f64,
    buffers: Buffers,
}

impl<'a> Integrator<'a> {
    fn new(g: &Geometry, drive: &'a Drive, spec: &'a EvolveSpec, state: ManyBodyState) -> Self {
        let diag = Diagonal::new(g);
        let groups = [sites_of(drive, Group::A), sites_of(drive, Group::B)];
        let buffers = match state {
            ManyBodyState::Pure { amplitudes, .. } => {
                let dim = amplitudes.len();
                Buffers::Pure {
                    y: amplitudes,
                    k: vec![C64::new(0.0, 0.0); dim],
                    u: vec![C64::new(0.0, 0.0); dim],
                    acc: vec![C64::new(0.0, 0.0); dim],
                }
            }
            ManyBodyState::Density { matrix, .. } => {
                let len = matrix.len();
                let dim = 1usize << g.n_sites();
                Buffers::Density {
                    y: Planes::from_complex(&matrix),
                    k: Planes::zeros(len),
                    u: Planes::zeros(len),
                    acc: Planes::zeros(len),
                    factors: [Planes::zeros(dim), Planes::zeros(dim)],
                }
            }
        };
        Integrator {
            drive,
            spec,
            diag,
            groups,
            gamma: angular(spec.gamma_mhz),
            buffers,
        }
    }

    fn driven(&self, t: f64, t_ref: f64) -> (&[usize], f64) {
        let (group, omega) = self.drive.group_omega_in(t, t_ref);
        let sites = match group {
            Group::A => &self.groups[0],
            Group::B => &self.groups[1],
        };
        // Ω/2 in angular units
        (sites.as_slice(), 0.5 * angular(omega))
    }

    fn state(&self) -> ManyBodyState {
        let n_sites = self.diag.n_sites;
        match &self.buffers {
            Buffers::Pure { y, .. } => ManyBodyState::Pure {
                n_sites,
                amplitudes: y.clone(),
            },
            Buffers::Density { y, .. } => ManyBodyState::Density {
                n_sites,
                matrix: y.to_complex(),
            },
        }
    }

    fn record(&self, t: f64, result: &mut RunResult, tol: &Tolerances) -> Result<()> {
        let state = self.state();
        let probs = state.basis_probabilities();
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NumericalInstability {
                time_us: t,
                what: "non-finite amplitudes".into(),
            });
        }
        let norm_error = state.norm_error();
        let herm = state.hermiticity_error();
        let pops = populations_from_probabilities(self.diag.n_sites, &probs);
        result.residuals.max_norm_error = result.residuals.max_norm_error.max(norm_error);
        result.residuals.max_hermiticity_error = result.residuals.max_hermiticity_error.max(herm);
        result.push(t, pops);
        if norm_error > tol.norm {
            return Err(Error::NumericalInstability {
                time_us: t,
                what: format!("normalization drifted by {norm_error:e}"),
            });
        }
        if herm > tol.hermiticity {
            return Err(Error::NumericalInstability {
                time_us: t,
                what: format!("density matrix lost hermiticity ({herm:e})"),
            });
        }
        if result.residuals.population_excursion > tol.population {
            return Err(Error::NumericalInstability {
                time_us: t,
                what: format!(
                    "population left [0, 1] by {:e}",
                    result.residuals.population_excursion
                ),
            });
        }
        Ok(())
    }

    fn run(&mut self, tol: Tolerances) -> Result<Evolution> {
        let h = self.spec.dt_us;
        let n_steps = self.spec.n_steps()?;
        let stride = self.spec.output_stride;
        let factors = HalfStepFactors::new(&self.diag, h);
        let dim = 1usize << self.diag.n_sites;
        let mut f1 = vec![C64::new(0.0, 0.0); dim];
        let mut f2 = vec![C64::new(0.0, 0.0); dim];
        let mut result = RunResult::new(self.diag.n_sites);
        self.record(0.0, &mut result, &tol)?;
        for step in 0..n_steps {
            let t = step as f64 * h;
            let t_mid = t + 0.5 * h;
            let t_end = (step + 1) as f64 * h;
            factors.fill(&self.diag, self.drive, self.gamma, t, t_mid, &mut f1);
            factors.fill(&self.diag, self.drive, self.gamma, t_mid, t_end, &mut f2);
            self.step(t, h, &f1, &f2);
            if (step + 1) % stride == 0 || step + 1 == n_steps {
                self.record(t_end, &mut result, &tol)?;
            }
        }
        let final_state = self.state();
        if let ManyBodyState::Density { n_sites, .. } = &final_state {
            if *n_sites <= EIGEN_CHECK_MAX_SITES {
                result.residuals.min_eigenvalue = Some(final_state.min_eigenvalue());
            }
        }
        Ok(Evolution { result, final_state })
    }

    /// One integrating-factor RK4 step. `f1`/`f2` propagate the diagonal part
    /// over the first/second half of the step.
    fn step(&mut self, t: f64, h: f64, f1: &[C64], f2: &[C64]) {
        let t_mid = t + 0.5 * h;
        let t_end = t + h;
        let (s0, w0) = self.driven(t, t_mid);
        let (s1, w1) = self.driven(t_mid, t_mid);
        let (s2, w2) = self.driven(t_end, t_mid);
        let (s0, s1, s2) = (s0.to_vec(), s1.to_vec(), s2.to_vec());
        let gamma = self.gamma;
        let n_sites = self.diag.n_sites;
        match &mut self.buffers {
            Buffers::Pure { y, k, u, acc } => {
                pure_rhs(y, k, &s0, w0);
                for x in 0..y.len() {
                    let f = f1[x];
                    u[x] = f * (y[x] + k[x] * (0.5 * h));
                    acc[x] = f * (y[x] + k[x] * (h / 6.0));
                    y[x] *= f;
                }
                pure_rhs(u, k, &s1, w1);
                for x in 0..y.len() {
                    acc[x] += k[x] * (h / 3.0);
                    u[x] = y[x] + k[x] * (0.5 * h);
                }
                pure_rhs(u, k, &s1, w1);
                for x in 0..y.len() {
                    acc[x] += k[x] * (h / 3.0);
                    u[x] = f2[x] * (y[x] + k[x] * h);
                }
                pure_rhs(u, k, &s2, w2);
                for x in 0..y.len() {
                    y[x] = f2[x] * acc[x] + k[x] * (h / 6.0);
                }
            }
            Buffers::Density { y, k, u, acc, factors } => {
                // Every stage maps Hermitian matrices to Hermitian matrices, so
                // only the upper triangle (b >= a) is computed and the lower
                // one is mirrored before it is read.
                let dim = f1.len();
                factors[0].set_from(f1);
                factors[1].set_from(f2);
                let [g1, g2] = &*factors;
                density_rhs(y, k, dim, n_sites, &s0, w0, gamma);
                for a in 0..dim {
                    let r = a * dim + a..(a + 1) * dim;
                    let n = r.len();
                    let (far, fai) = (g1.re[a], g1.im[a]);
                    let (fbr, fbi) = (&g1.re[a..], &g1.im[a..]);
                    let (yr, yi) = (&mut y.re[r.clone()], &mut y.im[r.clone()]);
                    let (kr, ki) = (&k.re[r.clone()], &k.im[r.clone()]);
                    let (ur, ui) = (&mut u.re[r.clone()], &mut u.im[r.clone()]);
                    let (ar, ai) = (&mut acc.re[r.clone()], &mut acc.im[r]);
                    for i in 0..n {
                        let cr = far * fbr[i] + fai * fbi[i];
                        let ci = fai * fbr[i] - far * fbi[i];
                        let (vr, vi) = (yr[i] + 0.5 * h * kr[i], yi[i] + 0.5 * h * ki[i]);
                        ur[i] = cr * vr - ci * vi;
                        ui[i] = cr * vi + ci * vr;
                        let (vr, vi) = (yr[i] + h / 6.0 * kr[i], yi[i] + h / 6.0 * ki[i]);
                        ar[i] = cr * vr - ci * vi;
                        ai[i] = cr * vi + ci * vr;
                        let (vr, vi) = (yr[i], yi[i]);
                        yr[i] = cr * vr - ci * vi;
                        yi[i] = cr * vi + ci * vr;
                    }
                }
                u.mirror(dim);
                density_rhs(u, k, dim, n_sites, &s1, w1, gamma);
                for a in 0..dim {
                    let r = a * dim + a..(a + 1) * dim;
                    for (plane_acc, plane_u, plane_y, plane_k) in [
                        (&mut acc.re, &mut u.re, &y.re, &k.re),
                        (&mut acc.im, &mut u.im, &y.im, &k.im),
                    ] {
                        let (ac, uu, yy, kk) = (
                            &mut plane_acc[r.clone()],
                            &mut plane_u[r.clone()],
                            &plane_y[r.clone()],
                            &plane_k[r.clone()],
                        );
                        for i in 0..kk.len() {
                            ac[i] += h / 3.0 * kk[i];
                            uu[i] = yy[i] + 0.5 * h * kk[i];
                        }
                    }
                }
                u.mirror(dim);
                density_rhs(u, k, dim, n_sites, &s1, w1, gamma);
                for a in 0..dim {
                    let r = a * dim + a..(a + 1) * dim;
                    let n = r.len();
                    let (far, fai) = (g2.re[a], g2.im[a]);
                    let (fbr, fbi) = (&g2.re[a..], &g2.im[a..]);
                    let (yr, yi) = (&y.re[r.clone()], &y.im[r.clone()]);
                    let (kr, ki) = (&k.re[r.clone()], &k.im[r.clone()]);
                    let (ur, ui) = (&mut u.re[r.clone()], &mut u.im[r.clone()]);
                    let (ar, ai) = (&mut acc.re[r.clone()], &mut acc.im[r]);
                    for i in 0..n {
                        let cr = far * fbr[i] + fai * fbi[i];
                        let ci = fai * fbr[i] - far * fbi[i];
                        ar[i] += h / 3.0 * kr[i];
                        ai[i] += h / 3.0 * ki[i];
                        let (vr, vi) = (yr[i] + h * kr[i], yi[i] + h * ki[i]);
                        ur[i] = cr * vr - ci * vi;
                        ui[i] = cr * vi + ci * vr;
                    }
                }
                u.mirror(dim);
                density_rhs(u, k, dim, n_sites, &s2, w2, gamma);
                for a in 0..dim {
                    let r = a * dim + a..(a + 1) * dim;
                    let n = r.len();
                    let (far, fai) = (g2.re[a], g2.im[a]);
                    let (fbr, fbi) = (&g2.re[a..], &g2.im[a..]);
                    let (yr, yi) = (&mut y.re[r.clone()], &mut y.im[r.clone()]);
                    let (kr, ki) = (&k.re[r.clone()], &k.im[r.clone()]);
                    let (ar, ai) = (&acc.re[r.clone()], &acc.im[r]);
                    for i in 0..n {
                        let cr = far * fbr[i] + fai * fbi[i];
                        let ci = fai * fbr[i] - far * fbi[i];
                        yr[i] = cr * ar[i] - ci * ai[i] + h / 6.0 * kr[i];
                        yi[i] = cr * ai[i] + ci * ar[i] + h / 6.0 * ki[i];
                    }
                }
                y.mirror(dim);
            }
        }
    }
}

/// `out = −i X ψ` with `X = w Σ_{j∈driven} σ^x_j`.
fn pure_rhs(src: &[C64], out: &mut [C64], driven: &[usize], w: f64) {
    out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
    if w == 0.0 {
        return;
    }
    for &j in driven {
        let m = 1usize << j;
        for (x, o) in out.iter_mut().enumerate() {
            let s = src[x ^ m];
            // −i w s
            o.re += w * s.im;
            o.im -= w * s.re;
        }
    }
}

/// `dst += c · src`.
#[inline]
fn axpy(dst: &mut [f64], c: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// `dst[b] += c · src[b ^ m]`.
#[inline]
fn axpy_flipped(dst: &mut [f64], c: f64, src: &[f64], m: usize) {
    match m {
        1 => flipped_fixed::<1>(dst, c, src),
        2 => flipped_fixed::<2>(dst, c, src),
        4 => flipped_fixed::<4>(dst, c, src),
        _ => {
            for (d, s) in dst.chunks_exact_mut(2 * m).zip(src.chunks_exact(2 * m)) {
                let (dlo, dhi) = d.split_at_mut(m);
                let (slo, shi) = s.split_at(m);
                axpy(dlo, c, shi);
                axpy(dhi, c, slo);
            }
        }
    }
}

#[inline]
fn flipped_fixed<const M: usize>(dst: &mut [f64], c: f64, src: &[f64]) {
    for (d, s) in dst.chunks_exact_mut(2 * M).zip(src.chunks_exact(2 * M)) {
        for i in 0..M {
            d[i] += c * s[i + M];
            d[i + M] += c * s[i];
        }
    }
}

/// `dst[b] += c · src[b | m]` for every `b` with bit `m` clear.
#[inline]
fn axpy_lowered(dst: &mut [f64], c: f64, src: &[f64], m: usize) {
    match m {
        1 => lowered_fixed::<1>(dst, c, src),
        2 => lowered_fixed::<2>(dst, c, src),
        4 => lowered_fixed::<4>(dst, c, src),
        _ => {
            for (d, s) in dst.chunks_exact_mut(2 * m).zip(src.chunks_exact(2 * m)) {
                axpy(&mut d[..m], c, &s[m..]);
            }
        }
    }
}

#[inline]
fn lowered_fixed<const M: usize>(dst: &mut [f64], c: f64, src: &[f64]) {
    for (d, s) in dst.chunks_exact_mut(2 * M).zip(src.chunks_exact(2 * M)) {
        for i in 0..M {
            d[i] += c * s[i + M];
        }
    }
}

/// Upper triangle (`b >= a`, within full-length rows) of
/// `−i[X, ρ] + Γ Σ_j σ^-_j ρ σ^+_j` with `X = w Σ_{j∈driven} σ^x_j`.
/// The anticommutator part of the dissipator lives in the integrating factor.
/// Entries below the diagonal are left in an unspecified state.
fn density_rhs(src: &Planes, dst: &mut Planes, dim: usize, n_sites: usize, driven: &[usize], w: f64, gamma: f64) {
    // first column of the aligned block of width 2m that contains column a
    let block_start = |a: usize, m: usize| a & !(2 * m - 1);
    for a in 0..dim {
        let row = a * dim..(a + 1) * dim;
        let dre = &mut dst.re[row.clone()];
        let dim_ = &mut dst.im[row.clone()];
        dre[a..].fill(0.0);
        dim_[a..].fill(0.0);
        if w != 0.0 {
            let (own_re, own_im) = (&src.re[row.clone()], &src.im[row.clone()]);
            for &j in driven {
                let m = 1usize << j;
                let other = (a ^ m) * dim;
                // [X, ρ]_ab = w Σ_j (ρ_{a^m, b} − ρ_{a, b^m}); multiply by −i
                axpy(&mut dre[a..], w, &src.im[other + a..other + dim]);
                axpy(&mut dim_[a..], -w, &src.re[other + a..other + dim]);
                let o = block_start(a, m);
                axpy_flipped(&mut dre[o..], -w, &own_im[o..], m);
                axpy_flipped(&mut dim_[o..], w, &own_re[o..], m);
            }
        }
        if gamma > 0.0 {
            for j in 0..n_sites {
                let m = 1usize << j;
                if a & m == 0 {
                    let raised = (a | m) * dim;
                    let o = block_start(a, m);
                    axpy_lowered(&mut dre[o..], gamma, &src.re[raised + o..raised + dim], m);
                    axpy_lowered(&mut dim_[o..], gamma, &src.im[raised + o..raised + dim], m);
                }
            }
        }
    }
}

/// Eigenvalues of the two-atom Hamiltonian on a grid of detunings, sorted
/// ascending, in MHz. `omega_pair` holds the Rabi frequencies of sites 0 and 1.
pub fn dressed_spectrum(g: &Geometry, omega_pair: (f64, f64), delta_grid: &[f64]) -> Result<Vec<[f64; 4]>> {
    if g.n_sites() != 2 {
        return Err(Error::InvalidArgument(format!(
            "dressed spectrum needs exactly 2 sites, got {}",
            g.n_sites()
        )));
    }
    let diag = Diagonal::new(g);
    let w0 = 0.5 * angular(omega_pair.0);
    let w1 = 0.5 * angular(omega_pair.1);
    Ok(delta_grid
        .iter()
        .map(|&delta| {
            let d = angular(delta);
            let mut h = Matrix4::<f64>::zeros();
            for x in 0..4 {
                h[(x, x)] = diag.z(diag.excitations[x]) * d + diag.interaction[x];
                h[(x, x ^ 1)] = w0;
                h[(x, x ^ 2)] = w1;
            }
            let mut ev: [f64; 4] = core::array::from_fn(|i| cyclic(h.symmetric_eigenvalues()[i]));
            ev.sort_by(f64::total_cmp);
            ev
        })
        .collect())
}

/// Mean over disorder realizations with per-entry standard errors, plus the
/// individual runs.
#[derive(Clone, Debug)]
pub struct DisorderAverage {
    pub mean: RunResult,
    pub realizations: Vec<RunResult>,
}

/// Evolution of disorder realization `k`.
pub fn disorder_realization(
    g: &Geometry,
    disorder: &DisorderSpec,
    k: usize,
    drive: &Drive,
    spec: &EvolveSpec,
    initial: &ManyBodyState,
) -> Result<RunResult> {
    let tag = |e: Error| Error::Realization {
        index: k,
        source: alloc::boxed::Box::new(e),
    };
    let gk = sample_disorder(g, disorder, k).map_err(tag)?;
    evolve(&gk, drive, spec, initial).map(|e| e.result).map_err(tag)
}

pub fn combine_realizations(realizations: Vec<RunResult>) -> Result<DisorderAverage> {
    let mean = average_runs(&realizations)?;
    Ok(DisorderAverage { mean, realizations })
}

pub fn disorder_average(
    g: &Geometry,
    disorder: &DisorderSpec,
    drive: &Drive,
    spec: &EvolveSpec,
    initial: &ManyBodyState,
) -> Result<DisorderAverage> {
    let runs = (0..disorder.n_realizations)
        .map(|k| disorder_realization(g, disorder, k, drive, spec, initial))
        .collect::<Result<Vec<_>>>()?;
    combine_realizations(runs)
}

/// Residual bookkeeping shared with callers that assemble their own runs.
pub fn residuals_of(state: &ManyBodyState) -> Residuals {
    Residuals {
        max_norm_error: state.norm_error(),
        max_hermiticity_error: state.hermiticity_error(),
        min_eigenvalue: None,
        population_excursion: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drive::{assign_groups, RabiSchedule, RapSchedule};
    use crate::lattice::{build_chain, c6_from_pair, Cutoff};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn chain(n: usize, v: f64, cutoff: Cutoff) -> Geometry {
        build_chain(n, 6.4, c6_from_pair(v, 6.4), cutoff).unwrap()
    }

    /// Square pulses with Ω switched off entirely.
    fn idle(g: &Geometry, delta: f64) -> Drive {
        Drive::Rabi(
            RabiSchedule::new(1.0, delta, 2, assign_groups(g))
                .unwrap()
                .with_errors(0.0, -1.0),
        )
    }

    #[test]
    fn density_step_shrinks_with_the_ramp_height() {
        let rap = |v: f64| {
            let g = chain(2, v, Cutoff::NearestOnly);
            let a = RapSchedule::amplitude_from_beta(7.6, 3.0);
            Drive::Rap(RapSchedule::new(10.7, 3.0, v, a, 2, assign_groups(&g)).unwrap())
        };
        let low = rap(20.0);
        assert_relative_eq!(EvolveSpec::default_dt(&low, Representation::Density), 3.0 / 9000.0, max_relative = 1e-12);
        let high = rap(80.0);
        let dt = EvolveSpec::default_dt(&high, Representation::Density);
        assert!(dt * 70.0 * (80.0 + 6.8946) <= 1.0 + 1e-9);
        let per_step = 1.5 / dt;
        assert!((per_step - per_step.round()).abs() < 1e-6, "{per_step}");
        assert_eq!(EvolveSpec::default_dt(&high, Representation::Pure), 3.0 / 32000.0);
    }

    fn basis(n: usize, x: usize) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); 1 << n];
        v[x] = C64::new(1.0, 0.0);
        v
    }

    #[test]
    fn single_site_detuning_sign() {
        let g = chain(1, 20.0, Cutoff::NearestOnly);
        let d = idle(&g, 3.0);
        let h0 = apply_hamiltonian(&g, &d, 0.1, &basis(1, 0)).unwrap();
        let h1 = apply_hamiltonian(&g, &d, 0.1, &basis(1, 1)).unwrap();
        assert_relative_eq!(h0[0].re, 0.5 * angular(3.0), max_relative = 1e-14);
        assert_relative_eq!(h1[1].re, -0.5 * angular(3.0), max_relative = 1e-14);
    }

    #[test]
    fn pair_energy_and_nnn_tail() {
        let g = chain(2, 20.0, Cutoff::NearestOnly);
        let d = idle(&g, 7.0);
        let h = apply_hamiltonian(&g, &d, 0.0, &basis(2, 0b11)).unwrap();
        assert_relative_eq!(h[3].re, -angular(7.0) + angular(20.0), max_relative = 1e-14);

        let g = chain(3, 20.0, Cutoff::WithNextNearest);
        let d = idle(&g, 0.0);
        let h = apply_hamiltonian(&g, &d, 0.0, &basis(3, 0b101)).unwrap();
        assert_relative_eq!(h[0b101].re, angular(20.0 / 64.0), max_relative = 1e-12);
        assert!(apply_hamiltonian(&g, &d, 0.0, &basis(2, 0)).is_err());
    }

    #[test]
    fn drive_couples_flipped_states() {
        let g = chain(2, 20.0, Cutoff::NearestOnly);
        let d = Drive::Rabi(RabiSchedule::new(2.0, 0.0, 2, assign_groups(&g)).unwrap());
        // first step drives group A = site 1
        let h = apply_hamiltonian(&g, &d, 0.0, &basis(2, 0)).unwrap();
        assert_relative_eq!(h[0b10].re, 0.5 * angular(2.0), max_relative = 1e-14);
        assert_eq!(h[0b01], C64::new(0.0, 0.0));
    }

    #[test]
    fn bitstring_states() {
        let s = ManyBodyState::from_bitstring("0100", Representation::Pure).unwrap();
        assert_eq!(s.populations(), vec![0.0, 1.0, 0.0, 0.0]);
        let d = ManyBodyState::from_bitstring("0100", Representation::Density).unwrap();
        assert_eq!(d.populations(), s.populations());
        assert_relative_eq!(d.purity(), 1.0);
        assert_eq!(s.to_density().unwrap(), d);
        assert!(ManyBodyState::from_bitstring("01x", Representation::Pure).is_err());
        let big = "0".repeat(13);
        assert!(matches!(
            ManyBodyState::from_bitstring(&big, Representation::Density),
            Err(Error::ResourceLimit(_))
        ));
        assert!(ManyBodyState::from_bitstring(&big, Representation::Pure).is_ok());
    }

    #[test]
    fn idle_drive_keeps_populations() {
        let g = chain(2, 20.0, Cutoff::NearestOnly);
        let d = idle(&g, 20.0);
        let spec = EvolveSpec::new(d.duration(), d.step_duration() / 500.0, 100, 0.0).unwrap();
        let init = ManyBodyState::from_bitstring("10", Representation::Pure).unwrap();
        let run = evolve(&g, &d, &spec, &init).unwrap();
        for p in &run.result.populations {
            assert_eq!(p, &vec![1.0, 0.0]);
        }
    }

    #[test]
    fn decay_without_drive_is_exponential() {
        let g = chain(2, 20.0, Cutoff::NearestOnly);
        let d = idle(&g, 20.0);
        let gamma = 0.05;
        let spec = EvolveSpec::new(d.duration(), d.step_duration() / 200.0, 50, gamma).unwrap();
        let init = ManyBodyState::from_bitstring("11", Representation::Density).unwrap();
        let run = evolve(&g, &d, &spec, &init).unwrap();
        for (t, p) in run.result.times_us.iter().zip(&run.result.populations) {
            let expect = libm::exp(-angular(gamma) * t);
            assert_relative_eq!(p[0], expect, max_relative = 1e-12);
            assert_relative_eq!(p[1], expect, max_relative = 1e-12);
        }
        assert!(run.result.residuals.min_eigenvalue.unwrap() > -1e-12);
    }

    #[test]
    fn rap_dt_limit_is_enforced() {
        let g = chain(2, 20.0, Cutoff::NearestOnly);
        let a = RapSchedule::amplitude_from_beta(7.6, 3.0);
        let d = Drive::Rap(RapSchedule::new(10.7, 3.0, 20.0, a, 2, assign_groups(&g)).unwrap());
        let init = ManyBodyState::from_bitstring("10", Representation::Pure).unwrap();
        let coarse = EvolveSpec::new(3.0, 3.0 / 1000.0, 1, 0.0).unwrap();
        assert!(matches!(evolve(&g, &d, &coarse, &init), Err(Error::InvalidConfig { .. })));
        assert!(EvolveSpec::new(3.0, 0.7, 1, 0.0).is_err());
        assert!(EvolveSpec::new(3.0, 0.01, 1, -1.0).is_err());
    }

    #[test]
    fn tight_tolerance_reports_instability_time() {
        let g = chain(2, 20.0, Cutoff::NearestOnly);
        let a = RapSchedule::amplitude_from_beta(7.6, 3.0);
        let d = Drive::Rap(RapSchedule::new(10.7, 3.0, 20.0, a, 2, assign_groups(&g)).unwrap());
        let init = ManyBodyState::from_bitstring("10", Representation::Pure).unwrap();
        let spec = EvolveSpec::new(3.0, 3.0 / 2000.0, 100, 0.0).unwrap();
        let tol = Tolerances {
            norm: 1e-300,
            ..Tolerances::default()
        };
        match evolve_with(&g, &d, &spec, &init, tol) {
            Err(Error::NumericalInstability { time_us, .. }) => assert!(time_us > 0.0 && time_us <= 3.0),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn spectrum_without_drive_is_bare() {
        let g = chain(2, 20.0, Cutoff::NearestOnly);
        let grid = [0.0, 10.0, 20.0, 30.0];
        let spec = dressed_spectrum(&g, (0.0, 0.0), &grid).unwrap();
        for (&delta, ev) in grid.iter().zip(&spec) {
            let mut bare = [delta, 0.0, 0.0, -delta + 20.0];
            bare.sort_by(f64::total_cmp);
            for (a, b) in ev.iter().zip(&bare) {
                assert_relative_eq!(a, b, epsilon = 1e-9);
            }
        }
        // |01⟩ (energy 0) and |11⟩ (20 − Δ) cross at Δ = V
        let at = dressed_spectrum(&g, (0.0, 0.0), &[20.0]).unwrap()[0];
        assert_relative_eq!(at[1], at[2], epsilon = 1e-9);
        assert!(dressed_spectrum(&chain(3, 20.0, Cutoff::NearestOnly), (1.0, 1.0), &grid).is_err());
    }

    #[test]
    fn avoided_crossing_splitting_is_omega() {
        // site 0 excited and frozen; site 1 driven on the facilitated resonance
        let g = chain(2, 20.0, Cutoff::NearestOnly);
        let omega = 0.5;
        let ev = dressed_spectrum(&g, (0.0, omega), &[20.0]).unwrap()[0];
        // |10⟩ and |11⟩ are degenerate at Δ = V, so the dressed pair built
        // from them is split by exactly Ω
        let split = (0..4)
            .flat_map(|a| (a + 1..4).map(move |b| (a, b)))
            .any(|(a, b)| (ev[b] - ev[a] - omega).abs() < 1e-9);
        assert!(split, "{ev:?}");
    }

    proptest! {
        #[test]
        fn spectrum_trace_invariant(delta in -40.0f64..40.0, o0 in 0.0f64..15.0, o1 in 0.0f64..15.0) {
            let g = chain(2, 20.0, Cutoff::NearestOnly);
            let ev = dressed_spectrum(&g, (o0, o1), &[delta]).unwrap()[0];
            // the σ^z terms are traceless, so only the interaction survives
            prop_assert!((ev.iter().sum::<f64>() - 20.0).abs() < 1e-9);
            prop_assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn populations_stay_physical(bits in "[01]{3}", omega in 0.5f64..3.0, delta in -2.0f64..2.0) {
            let g = chain(3, 1.1, Cutoff::NearestOnly);
            let d = Drive::Rabi(RabiSchedule::new(omega, delta, 2, assign_groups(&g)).unwrap());
            let spec = EvolveSpec::new(d.duration(), d.step_duration() / 400.0, 50, 0.01).unwrap();
            let init = ManyBodyState::from_bitstring(&bits, Representation::Density).unwrap();
            let run = evolve(&g, &d, &spec, &init).unwrap();
            prop_assert!(run.result.residuals.population_excursion < 1e-9);
            prop_assert!(run.result.residuals.max_norm_error < 1e-9);
            prop_assert!(run.final_state.hermiticity_error() < 1e-12);
        }
    }
}

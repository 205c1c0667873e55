//! Atom arrays: open 1D chains and 2D square lattices with van der Waals
//! pair interactions, plus static Gaussian position disorder.

use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Which pairs of sites interact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cutoff {
    /// Distance `r` only.
    NearestOnly,
    /// Distance `r` plus the next shell: `2r` in a chain, `√2 r` on a square
    /// lattice.
    WithNextNearest,
    /// Every pair whose ideal separation is at most this radius (μm).
    Radius(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Chain { n: usize },
    Square { width: usize, height: usize },
}

impl Shape {
    pub fn dimension(&self) -> usize {
        match self {
            Shape::Chain { .. } => 1,
            Shape::Square { .. } => 2,
        }
    }

    pub fn n_sites(&self) -> usize {
        match *self {
            Shape::Chain { n } => n,
            Shape::Square { width, height } => width * height,
        }
    }
}

/// One interacting pair, `i < j`, with `v_mhz = c6 / |r_i - r_j|^6`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub v_mhz: f64,
}

/// Site positions and the pair list derived from them.
///
/// Sites are numbered from 0; on a square lattice the numbering is row-major,
/// `site = row * width + col`. The set of interacting pairs is fixed by the
/// ideal lattice and the cutoff; displacing atoms only changes the strengths.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    shape: Shape,
    spacing_um: f64,
    c6: f64,
    cutoff: Cutoff,
    positions: Vec<[f64; 2]>,
    pairs: Vec<Pair>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

fn validate(n_sites: usize, spacing: f64, c6: f64) -> Result<()> {
    if n_sites == 0 {
        return Err(Error::config("geometry.n", "at least one site is required"));
    }
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::config(
            "geometry.spacing_um",
            format!("spacing must be positive, got {spacing}"),
        ));
    }
    if c6 == 0.0 || !c6.is_finite() {
        return Err(Error::config("geometry.c6", "c6 must be finite and non-zero"));
    }
    Ok(())
}

/// `c6` that gives interaction `v_mhz` at distance `spacing_um`.
pub fn c6_from_pair(v_mhz: f64, spacing_um: f64) -> f64 {
    v_mhz * libm::pow(spacing_um, 6.0)
}

/// Van der Waals shift between two positions.
pub fn vdw(c6: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let d2 = dx * dx + dy * dy;
    c6 / (d2 * d2 * d2)
}

/// Open chain with `x_j = j * spacing`.
pub fn build_chain(n_sites: usize, spacing_um: f64, c6: f64, cutoff: Cutoff) -> Result<Geometry> {
    validate(n_sites, spacing_um, c6)?;
    let positions = (0..n_sites)
        .map(|j| [j as f64 * spacing_um, 0.0])
        .collect();
    Geometry::from_parts(Shape::Chain { n: n_sites }, spacing_um, c6, cutoff, positions)
}

/// Open `width × height` square lattice with sites at `(col·r, row·r)`.
/// The default neighbourhood is the 4 axial plus 4 diagonal neighbours.
pub fn build_square(width: usize, height: usize, spacing_um: f64, c6: f64) -> Result<Geometry> {
    build_square_with(width, height, spacing_um, c6, Cutoff::WithNextNearest)
}

pub fn build_square_with(
    width: usize,
    height: usize,
    spacing_um: f64,
    c6: f64,
    cutoff: Cutoff,
) -> Result<Geometry> {
    if width == 0 || height == 0 {
        return Err(Error::config("geometry.width", "width and height must be at least 1"));
    }
    validate(width * height, spacing_um, c6)?;
    let mut positions = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            positions.push([col as f64 * spacing_um, row as f64 * spacing_um]);
        }
    }
    Geometry::from_parts(Shape::Square { width, height }, spacing_um, c6, cutoff, positions)
}

impl Geometry {
    fn from_parts(
        shape: Shape,
        spacing_um: f64,
        c6: f64,
        cutoff: Cutoff,
        positions: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let limit = match cutoff {
            Cutoff::NearestOnly => 1.0,
            Cutoff::WithNextNearest => match shape {
                Shape::Chain { .. } => 2.0,
                Shape::Square { .. } => core::f64::consts::SQRT_2,
            },
            Cutoff::Radius(r) => {
                if !(r > 0.0) {
                    return Err(Error::config("geometry.cutoff", "radius must be positive"));
                }
                r / spacing_um
            }
        };
        let n = positions.len();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                // Topology from ideal lattice coordinates, in units of r.
                let (di, dj) = ideal_offset(shape, i, j);
                let d = libm::sqrt(di * di + dj * dj);
                if d <= limit * (1.0 + 1e-9) {
                    pairs.push(Pair {
                        i,
                        j,
                        v_mhz: vdw(c6, positions[i], positions[j]),
                    });
                }
            }
        }
        let mut geometry = Geometry {
            shape,
            spacing_um,
            c6,
            cutoff,
            positions,
            pairs,
            neighbors: Vec::new(),
        };
        geometry.rebuild_neighbors();
        Ok(geometry)
    }

    fn rebuild_neighbors(&mut self) {
        let mut neighbors = alloc::vec![Vec::new(); self.positions.len()];
        for p in &self.pairs {
            neighbors[p.i].push((p.j, p.v_mhz));
            neighbors[p.j].push((p.i, p.v_mhz));
        }
        self.neighbors = neighbors;
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dimension(&self) -> usize {
        self.shape.dimension()
    }

    pub fn n_sites(&self) -> usize {
        self.positions.len()
    }

    pub fn spacing_um(&self) -> f64 {
        self.spacing_um
    }

    pub fn c6(&self) -> f64 {
        self.c6
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    /// Interacting partners of `site` with their shifts in MHz.
    pub fn neighbors(&self, site: usize) -> &[(usize, f64)] {
        &self.neighbors[site]
    }

    /// `(row, col)` of a site; a chain is a single row.
    pub fn row_col(&self, site: usize) -> (usize, usize) {
        match self.shape {
            Shape::Chain { .. } => (0, site),
            Shape::Square { width, .. } => (site / width, site % width),
        }
    }

    pub fn site_at(&self, row: usize, col: usize) -> Option<usize> {
        match self.shape {
            Shape::Chain { n } => (row == 0 && col < n).then_some(col),
            Shape::Square { width, height } => {
                (row < height && col < width).then_some(row * width + col)
            }
        }
    }

    /// Nearest-neighbour shift of the ideal lattice, `c6 / r^6`.
    pub fn nearest_neighbor_mhz(&self) -> f64 {
        self.c6 / libm::pow(self.spacing_um, 6.0)
    }

    /// Largest deviation between the stored pair strengths and `c6/d^6`
    /// recomputed from the stored positions.
    pub fn pair_residual(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| {
                let v = vdw(self.c6, self.positions[p.i], self.positions[p.j]);
                libm::fabs(v - p.v_mhz) / libm::fabs(v)
            })
            .fold(0.0, f64::max)
    }

    /// Copy of this geometry with atoms moved to `positions`; pair strengths
    /// are recomputed.
    pub fn with_positions(&self, positions: Vec<[f64; 2]>) -> Result<Geometry> {
        if positions.len() != self.positions.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} positions, got {}",
                self.positions.len(),
                positions.len()
            )));
        }
        let mut g = self.clone();
        for p in &mut g.pairs {
            p.v_mhz = vdw(g.c6, positions[p.i], positions[p.j]);
        }
        g.positions = positions;
        g.rebuild_neighbors();
        Ok(g)
    }
}

fn ideal_offset(shape: Shape, i: usize, j: usize) -> (f64, f64) {
    match shape {
        Shape::Chain { .. } => (j as f64 - i as f64, 0.0),
        Shape::Square { width, .. } => {
            let (ri, ci) = (i / width, i % width);
            let (rj, cj) = (j / width, j % width);
            (cj as f64 - ci as f64, rj as f64 - ri as f64)
        }
    }
}

/// Static Gaussian displacement of every atom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisorderSpec {
    /// rms displacement per sampled axis (μm).
    pub sigma_um: f64,
    pub n_realizations: usize,
    pub base_seed: u64,
}

impl DisorderSpec {
    pub fn new(sigma_um: f64, n_realizations: usize, base_seed: u64) -> Result<Self> {
        if !(sigma_um >= 0.0) || !sigma_um.is_finite() {
            return Err(Error::config("disorder.sigma_um", "must be finite and >= 0"));
        }
        if n_realizations == 0 {
            return Err(Error::config("disorder.realizations", "must be at least 1"));
        }
        Ok(DisorderSpec {
            sigma_um,
            n_realizations,
            base_seed,
        })
    }
}

/// Realization `k` of the disordered geometry.
///
/// Chains are displaced along the chain axis only; square lattices along
/// both in-plane axes. The displacements depend only on
/// `(base_seed, k)`, and the input geometry is left untouched.
pub fn sample_disorder(g: &Geometry, d: &DisorderSpec, k: usize) -> Result<Geometry> {
    if k >= d.n_realizations {
        return Err(Error::InvalidArgument(format!(
            "realization {k} out of range (n_realizations = {})",
            d.n_realizations
        )));
    }
    if d.sigma_um == 0.0 {
        return Ok(g.clone());
    }
    let normal = Normal::new(0.0, d.sigma_um)
        .map_err(|e| Error::config("disorder.sigma_um", format!("{e}")))?;
    let mut stream = rng::stream(d.base_seed, Domain::Disorder, k as u64);
    let two_axes = g.dimension() == 2;
    let positions = g
        .positions
        .iter()
        .map(|p| {
            let dx = normal.sample(&mut stream);
            let dy = if two_axes { normal.sample(&mut stream) } else { 0.0 };
            [p[0] + dx, p[1] + dy]
        })
        .collect();
    g.with_positions(positions)
}

/// Scale of interaction fluctuations caused by position spread `sigma_um`,
/// `6 |V|^{7/6} √2 σ / |C6|^{1/6}`, evaluated as written.
pub fn disorder_scale_estimate(v_r_mhz: f64, sigma_um: f64, c6: f64) -> f64 {
    6.0 * libm::pow(libm::fabs(v_r_mhz), 7.0 / 6.0) * core::f64::consts::SQRT_2 * sigma_um
        / libm::pow(libm::fabs(c6), 1.0 / 6.0)
}

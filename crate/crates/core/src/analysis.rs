//! Derived observables: gain, dark count, the analytic gain laws, step
//! labels of 2D excitation patterns, and error-scan surfaces.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use crate::drive::Drive;
use crate::error::{Error, Result};
use crate::fullme::{evolve, EvolveSpec, ManyBodyState};
use crate::lattice::Geometry;
use crate::result::RunResult;
use crate::stats::pairwise_sum;
use crate::units::angular;

/// Total number of excitations, `Σ_j ⟨n_j⟩`.
pub fn gain(populations: &[f64]) -> f64 {
    pairwise_sum(populations)
}

/// Gain at the end of a vacuum-initialized run.
pub fn dark_count(run: &RunResult) -> Result<f64> {
    match run.populations.first() {
        None => Err(Error::InvalidArgument("empty run".into())),
        Some(p0) if p0.iter().any(|&p| p != 0.0) => Err(Error::InvalidArgument(
            "dark count needs a vacuum-initialized run".into(),
        )),
        Some(_) => Ok(gain(run.final_populations())),
    }
}

/// Probability that an excited atom decays during one step, `p = Γ T0 / 2`
/// with `Γ` in angular units.
pub fn decay_probability_per_step(gamma_mhz: f64, t0_us: f64) -> f64 {
    0.5 * angular(gamma_mhz) * t0_us
}

/// Approximate gain after `s` steps of a 1D avalanche with decay:
/// `2S + 1 − p (S² + 2S³/3 − 2S/3 − 1)`.
pub fn gain_approx(s: u32, gamma_mhz: f64, t0_us: f64) -> f64 {
    let p = decay_probability_per_step(gamma_mhz, t0_us);
    let s = s as f64;
    2.0 * s + 1.0 - p * (s * s + 2.0 / 3.0 * s * s * s - 2.0 / 3.0 * s - 1.0)
}

/// Hole count bracket of the single-decay sum for a decay in step `i`.
pub fn single_decay_bracket(s: u32, i: u32) -> f64 {
    let (s, i) = (s as f64, i as f64);
    3.0 * (i + 1.0) + i + 2.0 * (2.0 * i + 1.0) * (s - i - 1.0)
}

/// Gain after `s` steps allowing at most one decay, each with probability `p`
/// per excited atom and step:
///
/// ```text
/// (2S+1)[1 − (1−p)^{S−1} p] − p Σ_{i=1}^{S−1} [3(i+1) + i + 2(2i+1)(S−i−1)] (1−p)^{i−1}
/// ```
pub fn gain_exact_single_decay(s: u32, p: f64) -> Result<f64> {
    if s == 0 {
        return Err(Error::InvalidArgument("step count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    let q = 1.0 - p;
    let lead = (2.0 * s as f64 + 1.0) * (1.0 - libm::pow(q, (s - 1) as f64) * p);
    let terms: Vec<f64> = (1..s)
        .map(|i| single_decay_bracket(s, i) * libm::pow(q, (i - 1) as f64))
        .collect();
    Ok(lead - p * pairwise_sum(&terms))
}

/// Origin of a gain value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    FullMe,
    MfQmc,
    MfMe,
    Eq12,
    EqS2,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::FullMe => "FULL_ME",
            Variant::MfQmc => "MF_QMC",
            Variant::MfMe => "MF_ME",
            Variant::Eq12 => "EQ12",
            Variant::EqS2 => "EQS2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainPoint {
    pub step: usize,
    pub t_us: f64,
    pub gain: f64,
}

/// Gain at every step boundary `t = S · step_duration`.
#[derive(Clone, Debug, PartialEq)]
pub struct GainSeries {
    pub variant: Variant,
    pub points: Vec<GainPoint>,
}

impl GainSeries {
    /// Sample `run` at every step boundary it covers.
    pub fn from_run(run: &RunResult, step_duration_us: f64, variant: Variant) -> Result<Self> {
        let t_end = run
            .times_us
            .last()
            .copied()
            .ok_or_else(|| Error::InvalidArgument("empty run".into()))?;
        let n_steps = libm::floor(t_end / step_duration_us + 1e-9) as usize;
        let tol = 1e-9 * step_duration_us.max(1.0);
        let points = (0..=n_steps)
            .map(|s| {
                let t = s as f64 * step_duration_us;
                let pops = run
                    .populations_at(t, tol)
                    .ok_or_else(|| Error::InvalidArgument(format!("run has no sample at step {s} (t = {t} μs)")))?;
                Ok(GainPoint {
                    step: s,
                    t_us: t,
                    gain: gain(pops),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GainSeries { variant, points })
    }

    /// [`gain_approx`] for `S = 0..=n_steps`.
    pub fn eq12(n_steps: usize, gamma_mhz: f64, t0_us: f64) -> Self {
        GainSeries {
            variant: Variant::Eq12,
            points: (0..=n_steps)
                .map(|s| GainPoint {
                    step: s,
                    t_us: s as f64 * 0.5 * t0_us,
                    gain: gain_approx(s as u32, gamma_mhz, t0_us),
                })
                .collect(),
        }
    }

    /// [`gain_exact_single_decay`] for `S = 1..=n_steps`.
    pub fn eqs2(n_steps: usize, gamma_mhz: f64, t0_us: f64) -> Result<Self> {
        let p = decay_probability_per_step(gamma_mhz, t0_us);
        let points = (1..=n_steps)
            .map(|s| {
                Ok(GainPoint {
                    step: s,
                    t_us: s as f64 * 0.5 * t0_us,
                    gain: gain_exact_single_decay(s as u32, p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GainSeries {
            variant: Variant::EqS2,
            points,
        })
    }

    pub fn at_step(&self, step: usize) -> Option<f64> {
        self.points.iter().find(|p| p.step == step).map(|p| p.gain)
    }
}

/// Hysteresis half-width around the excitation threshold.
pub const LABEL_HYSTERESIS: f64 = 0.1;

/// Step history of one site.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SiteLabels {
    pub first_step: Option<usize>,
    pub deexcite_steps: Vec<usize>,
    pub reexcite_steps: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternLabeling {
    pub threshold: f64,
    pub sites: Vec<SiteLabels>,
}

/// Label every site with the steps at which it becomes excited, de-excited
/// and re-excited. A site counts as excited once its population reaches
/// `θ + 0.1` and as de-excited once it drops to `θ − 0.1`; populations are
/// read at the end of each step `1..=n_steps`.
pub fn label_pattern(run: &RunResult, step_duration_us: f64, n_steps: usize, threshold: f64) -> Result<PatternLabeling> {
    if !(threshold > LABEL_HYSTERESIS && threshold < 1.0 - LABEL_HYSTERESIS) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} leaves no room for the ±{LABEL_HYSTERESIS} hysteresis band"
        )));
    }
    let tol = 1e-9 * step_duration_us.max(1.0);
    let snapshots = (0..=n_steps)
        .map(|s| {
            run.populations_at(s as f64 * step_duration_us, tol)
                .ok_or_else(|| Error::InvalidArgument(format!("run too short or not sampled at step {s}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let sites = (0..run.n_sites)
        .map(|j| {
            let mut labels = SiteLabels::default();
            let mut excited = snapshots[0][j] >= threshold;
            if excited {
                labels.first_step = Some(0);
            }
            for (s, pops) in snapshots.iter().enumerate().skip(1) {
                let p = pops[j];
                if !excited && p >= threshold + LABEL_HYSTERESIS {
                    excited = true;
                    if labels.first_step.is_none() {
                        labels.first_step = Some(s);
                    } else {
                        labels.reexcite_steps.push(s);
                    }
                } else if excited && p <= threshold - LABEL_HYSTERESIS {
                    excited = false;
                    labels.deexcite_steps.push(s);
                }
            }
            labels
        })
        .collect();
    Ok(PatternLabeling { threshold, sites })
}

/// One point of an error scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPoint {
    pub d_delta_frac: f64,
    pub d_omega_frac: f64,
    pub final_pop: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSurface {
    pub points: Vec<ScanPoint>,
}

impl ScanSurface {
    /// `max − min` of the final population over the grid.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.final_pop), hi.max(p.final_pop)));
        hi - lo
    }

    pub fn at(&self, d_delta_frac: f64, d_omega_frac: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| libm::fabs(p.d_delta_frac - d_delta_frac) < 1e-12 && libm::fabs(p.d_omega_frac - d_omega_frac) < 1e-12)
            .map(|p| p.final_pop)
    }

    /// The four grid corners as `(δΔ/Δ0, δΩ/Ω0, population)`.
    pub fn corners(&self) -> Vec<ScanPoint> {
        let bound = |f: fn(&ScanPoint) -> f64, max: bool| {
            self.points.iter().map(f).fold(if max { f64::NEG_INFINITY } else { f64::INFINITY }, |a, b| {
                if max {
                    a.max(b)
                } else {
                    a.min(b)
                }
            })
        };
        let (d_lo, d_hi) = (bound(|p| p.d_delta_frac, false), bound(|p| p.d_delta_frac, true));
        let (o_lo, o_hi) = (bound(|p| p.d_omega_frac, false), bound(|p| p.d_omega_frac, true));
        [(d_lo, o_lo), (d_hi, o_lo), (d_lo, o_hi), (d_hi, o_hi)]
            .into_iter()
            .filter_map(|(d, o)| {
                self.at(d, o).map(|final_pop| ScanPoint {
                    d_delta_frac: d,
                    d_omega_frac: o,
                    final_pop,
                })
            })
            .collect()
    }

    /// Lowest corner population on the `δΩ > 0` and on the `δΩ < 0` side.
    pub fn corner_extremes(&self) -> (f64, f64) {
        let corners = self.corners();
        let side = |positive: bool| {
            corners
                .iter()
                .filter(|c| (c.d_omega_frac > 0.0) == positive && c.d_omega_frac != 0.0)
                .map(|c| c.final_pop)
                .fold(f64::INFINITY, f64::min)
        };
        (side(true), side(false))
    }
}

/// `n` evenly spaced values from `−half_width` to `+half_width`.
pub fn symmetric_grid(n: usize, half_width: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![0.0],
        _ => (0..n)
            .map(|k| -half_width + 2.0 * half_width * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Final population of `site` with fractional errors `δΔ0/Δ0` and `δΩ0/Ω0`
/// applied to `drive`.
pub fn scan_point(
    g: &Geometry,
    drive: &Drive,
    spec: &EvolveSpec,
    initial: &ManyBodyState,
    site: usize,
    d_delta_frac: f64,
    d_omega_frac: f64,
) -> Result<ScanPoint> {
    let tag = |e: Error| Error::ScanPoint {
        d_delta_frac,
        d_omega_frac,
        source: Box::new(e),
    };
    if site >= g.n_sites() {
        return Err(Error::InvalidArgument(format!("site {site} is not in the geometry")));
    }
    let (delta0, omega0) = drive.nominal();
    let perturbed = drive
        .with_errors(d_delta_frac * delta0, d_omega_frac * omega0)
        .map_err(tag)?;
    let run = evolve(g, &perturbed, spec, initial).map_err(tag)?;
    Ok(ScanPoint {
        d_delta_frac,
        d_omega_frac,
        final_pop: run.result.final_populations()[site],
    })
}

/// Final population of `site` over the grid, in row-major `(δΔ, δΩ)` order.
pub fn scan_parameters(
    g: &Geometry,
    drive: &Drive,
    spec: &EvolveSpec,
    initial: &ManyBodyState,
    site: usize,
    d_delta_fracs: &[f64],
    d_omega_fracs: &[f64],
) -> Result<ScanSurface> {
    let mut points = Vec::with_capacity(d_delta_fracs.len() * d_omega_fracs.len());
    for &dd in d_delta_fracs {
        for &dom in d_omega_fracs {
            points.push(scan_point(g, drive, spec, initial, site, dd, dom)?);
        }
    }
    Ok(ScanSurface { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const GAMMA: f64 = 0.839e-3;

    #[test]
    fn gain_law_values() {
        assert_relative_eq!(gain_approx(4, 0.0, 3.0), 9.0);
        assert!((gain_approx(4, GAMMA, 3.0) - 8.57).abs() < 0.005);
        let (best, g) = (1..=40)
            .map(|s| (s, gain_approx(s, GAMMA, 3.0)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best, 11);
        assert!((g - 15.1).abs() < 0.1);
    }

    #[test]
    fn single_decay_brackets() {
        let b: Vec<f64> = (1..4).map(|i| single_decay_bracket(4, i)).collect();
        assert_eq!(b, vec![19.0, 21.0, 15.0]);
        let s = 4.0f64;
        assert_relative_eq!(b.iter().sum::<f64>(), (s * s + 2.0 / 3.0 * s * s * s - 2.0 / 3.0 * s - 1.0));
        assert_relative_eq!(gain_exact_single_decay(4, 0.0).unwrap(), 9.0);
        assert!(gain_exact_single_decay(0, 0.1).is_err());
        assert!(gain_exact_single_decay(3, 1.5).is_err());
    }

    #[test]
    fn dark_count_requires_vacuum() {
        let mut r = RunResult::new(2);
        r.push(0.0, vec![0.0, 0.0]);
        r.push(1.0, vec![1e-4, 2e-4]);
        assert_relative_eq!(dark_count(&r).unwrap(), 3e-4);
        let mut seeded = RunResult::new(2);
        seeded.push(0.0, vec![1.0, 0.0]);
        assert!(dark_count(&seeded).is_err());
    }

    #[test]
    fn labels_follow_crossings_with_hysteresis() {
        let mut r = RunResult::new(3);
        let pops = [
            [1.0, 0.0, 0.0],
            [1.0, 0.98, 0.55],
            [1.0, 0.98, 0.65],
            [1.0, 0.45, 0.9],
            [1.0, 0.35, 0.9],
            [1.0, 0.7, 0.9],
        ];
        for (s, p) in pops.iter().enumerate() {
            r.push(s as f64 * 1.5, p.to_vec());
        }
        let l = label_pattern(&r, 1.5, 5, 0.5).unwrap();
        assert_eq!(l.sites[0].first_step, Some(0));
        assert_eq!(l.sites[1].first_step, Some(1));
        assert_eq!(l.sites[1].deexcite_steps, vec![4]);
        assert_eq!(l.sites[1].reexcite_steps, vec![5]);
        // 0.55 is inside the band, 0.65 is not
        assert_eq!(l.sites[2].first_step, Some(2));
        assert!(label_pattern(&r, 1.5, 6, 0.5).is_err());
    }

    #[test]
    fn gain_series_samples_step_boundaries() {
        let mut r = RunResult::new(1);
        for k in 0..=8 {
            r.push(k as f64 * 0.75, vec![k as f64 / 8.0]);
        }
        let s = GainSeries::from_run(&r, 1.5, Variant::FullMe).unwrap();
        assert_eq!(s.points.len(), 5);
        assert_relative_eq!(s.at_step(2).unwrap(), 0.5);
        assert_relative_eq!(s.points[3].t_us, 4.5);
    }

    #[test]
    fn scan_surface_summaries() {
        let grid = symmetric_grid(3, 0.05);
        assert_eq!(grid, vec![-0.05, 0.0, 0.05]);
        let mut points = Vec::new();
        for &d in &grid {
            for &o in &grid {
                points.push(ScanPoint {
                    d_delta_frac: d,
                    d_omega_frac: o,
                    final_pop: 1.0 - (d + o).abs(),
                });
            }
        }
        let s = ScanSurface { points };
        assert_relative_eq!(s.spread(), 0.1);
        assert_eq!(s.corners().len(), 4);
        let (pos, neg) = s.corner_extremes();
        assert_relative_eq!(pos, 0.9);
        assert_relative_eq!(neg, 0.9);
    }

    proptest! {
        #[test]
        fn both_laws_agree_without_decay(s in 1u32..60) {
            prop_assert_eq!(gain_approx(s, 0.0, 3.0), gain_exact_single_decay(s, 0.0).unwrap());
        }

        #[test]
        fn gain_law_is_concave(s in 2u32..60, gamma in 1e-5f64..1e-2) {
            let d2 = gain_approx(s + 1, gamma, 3.0) - 2.0 * gain_approx(s, gamma, 3.0) + gain_approx(s - 1, gamma, 3.0);
            prop_assert!(d2 <= 1e-12);
        }

        #[test]
        fn adding_an_excited_site_adds_one(pops in proptest::collection::vec(0.0f64..1.0, 0..40)) {
            let mut more = pops.clone();
            more.push(1.0);
            prop_assert!((gain(&more) - gain(&pops) - 1.0).abs() < 1e-12);
        }
    }
}

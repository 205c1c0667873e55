//! Cross-check of the matrix-free solver against a dense reference built from
//! scratch: the full Hamiltonian and Liouvillian as matrices, propagated with
//! the fourth-order commutator-free Magnus exponential integrator.

use nalgebra::DMatrix;
use rapfac_core::drive::{assign_groups, Drive, RabiSchedule, RapSchedule};
use rapfac_core::fullme::{evolve, EvolveSpec, ManyBodyState, Representation};
use rapfac_core::lattice::{build_chain, c6_from_pair, Cutoff, Geometry};
use rapfac_core::units::angular;
use rapfac_core::C64;

fn hamiltonian(g: &Geometry, d: &Drive, t: f64) -> DMatrix<C64> {
    let n = g.n_sites();
    let dim = 1 << n;
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    let delta = angular(d.delta(t));
    for x in 0..dim {
        let k = (x as u32).count_ones() as f64;
        let mut e = (0.5 * n as f64 - k) * delta;
        for p in g.pairs() {
            if x >> p.i & 1 == 1 && x >> p.j & 1 == 1 {
                e += angular(p.v_mhz);
            }
        }
        h[(x, x)] = C64::new(e, 0.0);
        for j in 0..n {
            let w = 0.5 * angular(d.omega(j, t).unwrap());
            h[(x ^ (1 << j), x)] += C64::new(w, 0.0);
        }
    }
    h
}

fn lowering(n: usize, j: usize) -> DMatrix<C64> {
    let dim = 1 << n;
    DMatrix::from_fn(dim, dim, |a, b| {
        if b >> j & 1 == 1 && a == b ^ (1 << j) {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Generator of `vec(ρ)` (column stacking): `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`.
fn liouvillian(h: &DMatrix<C64>, n: usize, gamma: f64) -> DMatrix<C64> {
    let dim = h.nrows();
    let id = DMatrix::<C64>::identity(dim, dim);
    let mi = C64::new(0.0, -1.0);
    let mut l = (id.kronecker(h) - h.transpose().kronecker(&id)) * mi;
    for j in 0..n {
        let s = lowering(n, j);
        let sd = s.adjoint();
        let sds = &sd * &s;
        l += (s.conjugate().kronecker(&s) - id.kronecker(&sds) * C64::new(0.5, 0.0) - sds.transpose().kronecker(&id) * C64::new(0.5, 0.0))
            * C64::new(gamma, 0.0);
    }
    l
}

/// Populations on the step grid from the dense reference.
fn reference(g: &Geometry, d: &Drive, gamma_mhz: f64, bits: &str, substeps: usize) -> Vec<Vec<f64>> {
    let n = g.n_sites();
    let dim = 1 << n;
    let x0 = bits
        .chars()
        .enumerate()
        .fold(0usize, |x, (j, c)| if c == '1' { x | 1 << j } else { x });
    let mut rho = DMatrix::<C64>::zeros(dim * dim, 1);
    rho[(x0 * dim + x0, 0)] = C64::new(1.0, 0.0);
    let gamma = angular(gamma_mhz);
    let h = d.step_duration() / substeps as f64;
    let s3 = 3.0f64.sqrt();
    let (c1, c2) = (0.5 - s3 / 6.0, 0.5 + s3 / 6.0);
    let (a1, a2) = ((3.0 - 2.0 * s3) / 12.0, (3.0 + 2.0 * s3) / 12.0);
    let pops = |rho: &DMatrix<C64>| -> Vec<f64> {
        (0..n)
            .map(|j| (0..dim).filter(|x| x >> j & 1 == 1).map(|x| rho[(x * dim + x, 0)].re).sum())
            .collect()
    };
    let mut out = vec![pops(&rho)];
    for step in 0..d.n_steps() {
        for k in 0..substeps {
            let t = step as f64 * d.step_duration() + k as f64 * h;
            let l1 = liouvillian(&hamiltonian(g, d, t + c1 * h), n, gamma);
            let l2 = liouvillian(&hamiltonian(g, d, t + c2 * h), n, gamma);
            let first = ((&l1 * C64::new(a2, 0.0) + &l2 * C64::new(a1, 0.0)) * C64::new(h, 0.0)).exp();
            let second = ((&l1 * C64::new(a1, 0.0) + &l2 * C64::new(a2, 0.0)) * C64::new(h, 0.0)).exp();
            rho = second * (first * rho);
        }
        out.push(pops(&rho));
    }
    out
}

fn solver(g: &Geometry, d: &Drive, gamma: f64, bits: &str, repr: Representation) -> Vec<Vec<f64>> {
    let dt = EvolveSpec::default_dt(d, repr);
    let spec = EvolveSpec::new(d.duration(), dt, EvolveSpec::stride_per_step(d, dt), gamma).unwrap();
    let init = ManyBodyState::from_bitstring(bits, repr).unwrap();
    evolve(g, d, &spec, &init).unwrap().result.populations
}

fn assert_close(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) {
    assert_eq!(a.len(), b.len());
    let worst = a
        .iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    assert!(worst < tol, "max deviation {worst:e}");
}

fn rap(g: &Geometry, steps: usize) -> Drive {
    let a = RapSchedule::amplitude_from_beta(7.6, 3.0);
    Drive::Rap(RapSchedule::new(10.7, 3.0, 20.0, a, steps, assign_groups(g)).unwrap())
}

#[test]
fn two_atom_rap_with_decay() {
    let g = build_chain(2, 6.4, c6_from_pair(20.0, 6.4), Cutoff::NearestOnly).unwrap();
    let d = rap(&g, 4);
    // a decay rate well above the paper's, so that the dissipator matters
    let gamma = 0.02;
    let reference = reference(&g, &d, gamma, "10", 1500);
    assert_close(&solver(&g, &d, gamma, "10", Representation::Density), &reference, 1e-6);
}

#[test]
fn three_atom_rap_with_next_nearest_tail() {
    let g = build_chain(3, 6.4, c6_from_pair(20.0, 6.4), Cutoff::WithNextNearest).unwrap();
    let d = rap(&g, 3);
    let reference = reference(&g, &d, 0.0, "100", 1500);
    assert_close(&solver(&g, &d, 0.0, "100", Representation::Pure), &reference, 1e-6);
}

#[test]
fn two_atom_square_pulses_with_errors() {
    let g = build_chain(2, 10.4, c6_from_pair(1.1, 10.4), Cutoff::NearestOnly).unwrap();
    let d = Drive::Rabi(
        RabiSchedule::new(0.34, 1.1, 4, assign_groups(&g))
            .unwrap()
            .with_errors(0.03 * 1.1, -0.04 * 0.34),
    );
    let closed = reference(&g, &d, 0.0, "10", 500);
    assert_close(&solver(&g, &d, 0.0, "10", Representation::Pure), &closed, 1e-6);
    let open = reference(&g, &d, 0.001, "10", 500);
    assert_close(&solver(&g, &d, 0.001, "10", Representation::Density), &open, 1e-6);
}

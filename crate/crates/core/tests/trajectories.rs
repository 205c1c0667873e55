//! Statistical and structural properties of the mean-field trajectories.

use rapfac_core::drive::{assign_groups, Drive, RapSchedule};
use rapfac_core::fullme::{evolve, EvolveSpec, ManyBodyState, Representation};
use rapfac_core::lattice::{build_chain, c6_from_pair, Cutoff, Geometry};
use rapfac_core::mfqmc::{run_ensemble, run_trajectory, TrajectorySpec};

fn chain(n: usize) -> Geometry {
    build_chain(n, 6.4, c6_from_pair(20.0, 6.4), Cutoff::NearestOnly).unwrap()
}

fn rap(g: &Geometry, steps: usize) -> Drive {
    let a = RapSchedule::amplitude_from_beta(7.6, 3.0);
    Drive::Rap(RapSchedule::new(10.7, 3.0, 20.0, a, steps, assign_groups(g)).unwrap())
}

fn spec(d: &Drive, n: usize, seed: u64) -> TrajectorySpec {
    let dt = TrajectorySpec::default_dt(d);
    TrajectorySpec::new(n, seed, dt, EvolveSpec::stride_per_step(d, dt)).unwrap()
}

#[test]
fn product_states_are_exact_for_the_two_atom_sequence() {
    let g = chain(2);
    let d = rap(&g, 8);
    let mf = run_trajectory(&g, &d, 0.0, &spec(&d, 1, 0), "10", d.duration(), 0).unwrap();
    let dt = EvolveSpec::default_dt(&d, Representation::Pure);
    let es = EvolveSpec::new(d.duration(), dt, EvolveSpec::stride_per_step(&d, dt), 0.0).unwrap();
    let exact = evolve(&g, &d, &es, &ManyBodyState::from_bitstring("10", Representation::Pure).unwrap())
        .unwrap()
        .result;
    for (a, b) in mf.final_populations().iter().zip(exact.final_populations()) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn ensemble_mean_is_seed_invariant() {
    // a rate well above the paper's so that a short run has many jumps
    let gamma = 0.02;
    let g = chain(5);
    let d = rap(&g, 2);
    let a = run_ensemble(&g, &d, gamma, &spec(&d, 500, 1), "00100", d.duration()).unwrap();
    let b = run_ensemble(&g, &d, gamma, &spec(&d, 500, 2), "00100", d.duration()).unwrap();
    assert_ne!(a.populations, b.populations);
    let (sa, sb) = (a.stderr.unwrap(), b.stderr.unwrap());
    for k in 0..a.times_us.len() {
        for j in 0..5 {
            let se = (sa[k][j].powi(2) + sb[k][j].powi(2)).sqrt();
            let diff = (a.populations[k][j] - b.populations[k][j]).abs();
            assert!(diff <= 3.0 * se + 1e-12, "sample {k} site {j}: {diff} > 3 x {se}");
        }
    }
}

#[test]
fn same_seed_same_ensemble() {
    let g = chain(5);
    let d = rap(&g, 2);
    let s = spec(&d, 20, 9);
    let a = run_ensemble(&g, &d, 0.05, &s, "00100", d.duration()).unwrap();
    let b = run_ensemble(&g, &d, 0.05, &s, "00100", d.duration()).unwrap();
    assert_eq!(a, b);
}

/// Trajectories with exactly one jump, at a bulk site, lose more than the
/// decayed excitation: the hole grows.
#[test]
fn a_bulk_decay_grows_a_hole() {
    let n = 13;
    let g = chain(n);
    let steps = 6;
    let d = rap(&g, steps);
    let step = d.step_duration();
    let s = spec(&d, 1, 0).with_jump_record(true);
    let seed = "0".repeat(n / 2) + "1" + &"0".repeat(n / 2);
    // about one jump per trajectory on average
    let gamma = 0.003;
    let mut seen = 0;
    for index in 0..400 {
        let r = run_trajectory(&g, &d, gamma, &s, &seed, d.duration(), index).unwrap();
        if r.jumps.len() != 1 {
            continue;
        }
        let jump = r.jumps[0];
        let jump_step = (jump.t_us / step).ceil() as usize;
        let centre = n / 2;
        let in_bulk = jump.site.abs_diff(centre) + 1 < jump_step;
        if !in_bulk || jump_step + 1 > steps {
            continue;
        }
        seen += 1;
        let total: f64 = r.final_populations().iter().sum();
        assert!(
            total < (2 * steps + 1) as f64 - 1.0 - 0.5,
            "trajectory {index}: jump at site {} in step {jump_step}, final count {total}",
            jump.site
        );
        if seen == 3 {
            break;
        }
    }
    assert!(seen > 0, "no qualifying single-jump trajectory found");
}

/// In the decay-averaged profile the weakest sites inside the cluster
/// alternate parity from step to step.
#[test]
fn weakest_sites_switch_parity() {
    let g = chain(9);
    let d = rap(&g, 4);
    let r = run_ensemble(&g, &d, 20.0 * 0.839e-3, &spec(&d, 400, 3), "000010000", d.duration()).unwrap();
    let weakest_parity = |step: usize| {
        let pops = &r.populations[step];
        // interior of the cluster grown over `step` steps from site 4
        let inner = 4 - step + 1..4 + step;
        let mean = |parity: usize| {
            let sites: Vec<usize> = inner.clone().filter(|j| j % 2 == parity).collect();
            sites.iter().map(|&j| pops[j]).sum::<f64>() / sites.len() as f64
        };
        println!("step {step}: even {:.4}, odd {:.4}", mean(0), mean(1));
        if mean(0) < mean(1) {
            0
        } else {
            1
        }
    };
    assert_ne!(weakest_parity(3), weakest_parity(4));
}

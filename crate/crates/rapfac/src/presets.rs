//! Named parameter sets for the standard runs.

use crate::config::{
    Auto, AutoWord, DisorderConfig, DriveConfig, DriveKind, GeometryConfig, GroupName, LatticeKind, Method,
    OutputConfig, RunConfig, ScanConfig, SolverConfig,
};
use crate::error::AppError;

pub const PRESETS: [&str; 10] = [
    "fig2_rap",
    "fig2_rabi",
    "fig2f_scan",
    "fig3_chain5",
    "fig4_chain9",
    "fig4_dark",
    "fig5_compare",
    "fig6_chain33",
    "fig7_square2d",
    "si_two_photon",
];

/// Blackbody-limited Rydberg decay rate, cyclic MHz (0.839 kHz).
pub const GAMMA_MHZ: f64 = 0.000839;

const AUTO: AutoWord = AutoWord::Auto;

fn chain(n: usize, spacing_um: f64, v_nn_mhz: f64) -> GeometryConfig {
    GeometryConfig {
        kind: LatticeKind::Chain,
        n: Some(n),
        width: None,
        height: None,
        spacing_um,
        v_nn_mhz: Some(v_nn_mhz),
        c6: None,
        cutoff: None,
        cutoff_radius_um: None,
    }
}

fn rap(omega0_mhz: f64, n_steps: usize) -> DriveConfig {
    DriveConfig {
        kind: DriveKind::Rap,
        omega0_mhz,
        t0_us: Auto::Value(3.0),
        delta0_mhz: Auto::Auto(AUTO),
        amplitude_mhz: Auto::Auto(AUTO),
        beta_mhz: Some(7.6),
        n_steps,
        first_driven_group: GroupName::A,
        d_delta0_mhz: 0.0,
        d_omega0_mhz: 0.0,
    }
}

fn rabi(omega0_mhz: f64, n_steps: usize) -> DriveConfig {
    DriveConfig {
        kind: DriveKind::Rabi,
        omega0_mhz,
        t0_us: Auto::Auto(AUTO),
        delta0_mhz: Auto::Auto(AUTO),
        amplitude_mhz: Auto::Auto(AUTO),
        beta_mhz: None,
        n_steps,
        first_driven_group: GroupName::A,
        d_delta0_mhz: 0.0,
        d_omega0_mhz: 0.0,
    }
}

fn solver(method: Method, trajectories: usize) -> SolverConfig {
    SolverConfig {
        method,
        dt_us: Auto::Auto(AUTO),
        trajectories,
        representation: Auto::Auto(AUTO),
        record_jumps: false,
    }
}

/// Single excitation in the middle of an `n`-site register.
pub fn centre_seed(n: usize) -> String {
    (0..n).map(|j| if j == n / 2 { '1' } else { '0' }).collect()
}

fn base(name: &str, initial: String, geometry: GeometryConfig, drive: DriveConfig, solver: SolverConfig) -> RunConfig {
    RunConfig {
        name: name.to_string(),
        seed: 1,
        initial,
        gamma_mhz: GAMMA_MHZ,
        notes: Vec::new(),
        geometry,
        drive,
        disorder: None,
        solver,
        outputs: OutputConfig::default(),
        scan: None,
    }
}

fn unresolved(name: &str) -> Result<RunConfig, AppError> {
    let c = match name {
        // Two atoms, RAP: the six-step transfer cycle run for 4 T0, with
        // position disorder and decay.
        "fig2_rap" => RunConfig {
            disorder: Some(DisorderConfig {
                sigma_um: 0.076,
                realizations: 50,
            }),
            ..base(
                name,
                "10".into(),
                chain(2, 6.4, 20.0),
                rap(10.7, 8),
                solver(Method::FullMe, 1),
            )
        },
        "fig2_rabi" => RunConfig {
            disorder: Some(DisorderConfig {
                sigma_um: 0.034,
                realizations: 50,
            }),
            ..base(
                name,
                "10".into(),
                chain(2, 10.4, 1.1),
                rabi(0.34, 8),
                solver(Method::FullMe, 1),
            )
        },
        // Rabi error surface at 4 T0, without disorder or decay.
        "fig2f_scan" => RunConfig {
            gamma_mhz: 0.0,
            scan: Some(ScanConfig {
                points: 21,
                half_width: 0.05,
                site: 1,
            }),
            ..base(
                name,
                "10".into(),
                chain(2, 10.4, 1.1),
                rabi(0.34, 8),
                solver(Method::FullMe, 1),
            )
        },
        "fig3_chain5" => RunConfig {
            gamma_mhz: 0.0,
            ..base(
                name,
                centre_seed(5),
                chain(5, 6.4, 20.0),
                rap(10.7, 2),
                solver(Method::FullMe, 1),
            )
        },
        "fig4_chain9" => base(
            name,
            centre_seed(9),
            chain(9, 6.4, 20.0),
            rap(10.7, 4),
            solver(Method::FullMe, 1),
        ),
        "fig4_dark" => base(
            name,
            "0".repeat(9),
            chain(9, 6.4, 20.0),
            rap(10.7, 4),
            solver(Method::FullMe, 1),
        ),
        "fig5_compare" => base(
            name,
            centre_seed(9),
            chain(9, 6.4, 20.0),
            rap(10.7, 4),
            solver(Method::MfQmc, 700),
        ),
        "fig6_chain33" => {
            let mut c = base(
                name,
                centre_seed(33),
                chain(33, 6.4, 20.0),
                rap(10.7, 15),
                solver(Method::MfQmc, 500),
            );
            c.outputs.gain_laws = true;
            c
        }
        "fig7_square2d" => {
            let mut geometry = chain(0, 6.4, 20.0);
            geometry.kind = LatticeKind::Square;
            geometry.n = None;
            geometry.width = Some(15);
            geometry.height = Some(15);
            let mut c = base(
                name,
                centre_seed(225),
                geometry,
                rap(10.7, 7),
                solver(Method::MfQmc, 100),
            );
            c.outputs.pattern_threshold = Some(0.5);
            c
        }
        "si_two_photon" => RunConfig {
            gamma_mhz: 6.0,
            notes: vec![
                "gamma_mhz = 6 is the value printed for this parameter set, but the accompanying text \
                 motivates Gamma/Omega = 0.2% (about 6 kHz at Omega = 3 MHz); treat the decay results as unreliable"
                    .into(),
                "T0 and beta are not given for this set; the one-photon values (3 us, 7.6 MHz) are used".into(),
            ],
            disorder: Some(DisorderConfig {
                sigma_um: 0.054,
                realizations: 50,
            }),
            ..base(
                name,
                "10".into(),
                chain(2, 5.1, 50.0),
                rap(32.0, 8),
                solver(Method::FullMe, 1),
            )
        },
        other => {
            return Err(AppError::Config {
                field: "preset".into(),
                reason: format!("unknown preset {other:?}; known: {}", PRESETS.join(", ")),
            })
        }
    };
    Ok(c)
}

/// Fully resolved config of a named preset.
pub fn preset(name: &str) -> Result<RunConfig, AppError> {
    unresolved(name)?.resolve()
}

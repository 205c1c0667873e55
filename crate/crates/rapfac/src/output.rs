//! CSV tables and the JSON manifest of a run directory.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so the
//! same run produces the same bytes. Only the manifest carries wall-clock
//! data.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rapfac_core::drive::Group;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::AppError;
use crate::run::Outcome;

pub const MANIFEST: &str = "manifest.json";
pub const POPULATIONS: &str = "populations.csv";
pub const CONFIG: &str = "config.toml";

/// A table built in memory and written in one go.
struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new<I: IntoIterator<Item = S>, S: AsRef<[u8]>>(header: I) -> Table {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Table { w }
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        self.w.write_record(fields.into_iter()).expect("in-memory write");
    }

    fn into_bytes(self) -> Vec<u8> {
        self.w.into_inner().expect("in-memory flush")
    }
}

fn population_table(times: &[f64], rows: &[Vec<f64>], n_sites: usize) -> Vec<u8> {
    let header = std::iter::once("t_us".to_string()).chain((0..n_sites).map(|j| format!("n_{j}")));
    let mut t = Table::new(header);
    for (time, pops) in times.iter().zip(rows) {
        t.row(std::iter::once(time.to_string()).chain(pops.iter().map(|p| p.to_string())));
    }
    t.into_bytes()
}

fn join(steps: &[usize]) -> String {
    steps.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";")
}

/// Every table of `outcome`, as `(file name, contents)` in a fixed order.
pub fn tables(outcome: &Outcome) -> Vec<(&'static str, Vec<u8>)> {
    let r = &outcome.result;
    let g = &outcome.geometry;
    let mut files = vec![(POPULATIONS, population_table(&r.times_us, &r.populations, r.n_sites))];
    if let Some(se) = r.stderr.as_ref() {
        files.push(("stderr.csv", population_table(&r.times_us, se, r.n_sites)));
    }

    let mut gain = Table::new(["step", "t_us", "gain", "variant"]);
    for series in &outcome.gain {
        for p in &series.points {
            gain.row([
                p.step.to_string(),
                p.t_us.to_string(),
                p.gain.to_string(),
                series.variant.as_str().to_string(),
            ]);
        }
    }
    files.push(("gain.csv", gain.into_bytes()));

    let mut geometry = Table::new(["site_index", "x_um", "y_um"]);
    for (j, p) in g.positions().iter().enumerate() {
        geometry.row([j.to_string(), p[0].to_string(), p[1].to_string()]);
    }
    files.push(("geometry.csv", geometry.into_bytes()));

    let mut pairs = Table::new(["i", "j", "distance_um", "v_mhz"]);
    for p in g.pairs() {
        let (a, b) = (g.positions()[p.i], g.positions()[p.j]);
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        pairs.row([p.i.to_string(), p.j.to_string(), d.to_string(), p.v_mhz.to_string()]);
    }
    files.push(("pairs.csv", pairs.into_bytes()));

    let mut drive = Table::new(["t_us", "delta_mhz", "omega_groupA_mhz", "omega_groupB_mhz"]);
    for &t in &r.times_us {
        let (group, omega) = outcome.drive.group_omega(t);
        let (a, b) = match group {
            Group::A => (omega, 0.0),
            Group::B => (0.0, omega),
        };
        drive.row([t.to_string(), outcome.drive.delta(t).to_string(), a.to_string(), b.to_string()]);
    }
    files.push(("drive.csv", drive.into_bytes()));

    if outcome.config.solver.record_jumps {
        let mut jumps = Table::new(["trajectory", "t_us", "site"]);
        for j in &r.jumps {
            jumps.row([j.trajectory.to_string(), j.t_us.to_string(), j.site.to_string()]);
        }
        files.push(("jumps.csv", jumps.into_bytes()));
    }

    if let Some(p) = outcome.pattern.as_ref() {
        let mut t = Table::new(["site", "row", "col", "first_step", "deexcite_steps", "reexcite_steps"]);
        for (j, s) in p.sites.iter().enumerate() {
            let (row, col) = g.row_col(j);
            t.row([
                j.to_string(),
                row.to_string(),
                col.to_string(),
                s.first_step.map(|x| x.to_string()).unwrap_or_default(),
                join(&s.deexcite_steps),
                join(&s.reexcite_steps),
            ]);
        }
        files.push(("pattern.csv", t.into_bytes()));
    }

    if let Some(s) = outcome.scan.as_ref() {
        let mut t = Table::new(["d_delta_frac", "d_omega_frac", "final_pop"]);
        for p in &s.points {
            t.row([p.d_delta_frac.to_string(), p.d_omega_frac.to_string(), p.final_pop.to_string()]);
        }
        files.push(("scan.csv", t.into_bytes()));
    }

    files.push((CONFIG, outcome.config.to_toml().into_bytes()));
    files
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Run-level facts that are not part of the outcome itself.
pub struct RunInfo<'a> {
    pub verb: &'a str,
    pub wall_time: Duration,
    pub threads: usize,
}

pub fn manifest(outcome: &Outcome, files: &[(&str, Vec<u8>)], info: &RunInfo) -> Value {
    let c = &outcome.config;
    let res = &outcome.result.residuals;
    let summary = {
        let last = outcome.result.final_populations();
        let mut s = json!({
            "n_sites": outcome.result.n_sites,
            "n_samples": outcome.result.times_us.len(),
            "final_t_us": outcome.result.times_us.last(),
            "final_gain": last.iter().sum::<f64>(),
            "final_populations": last,
        });
        if let Some(scan) = outcome.scan.as_ref() {
            let (pos, neg) = scan.corner_extremes();
            s["scan_spread"] = json!(scan.spread());
            s["scan_corner_min_d_omega_pos"] = json!(pos);
            s["scan_corner_min_d_omega_neg"] = json!(neg);
        }
        s
    };
    json!({
        "software": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "verb": info.verb,
        "name": c.name,
        "method": c.solver.method.as_str(),
        "config": c,
        "seeds": {
            "base_seed": c.seed,
            "derivation": "ChaCha8 keyed by base_seed; stream id (domain << 56) | index, \
                           domain 1 = disorder realization, 2 = trajectory",
        },
        "dt_us": c.solver.dt_us.value(),
        "output_stride": c.outputs.stride.value(),
        "t_final_us": outcome.drive.duration(),
        "residuals": {
            "max_norm_error": res.max_norm_error,
            "max_hermiticity_error": res.max_hermiticity_error,
            "min_eigenvalue": res.min_eigenvalue,
            "population_excursion": res.population_excursion,
        },
        "summary": summary,
        "threads": info.threads,
        "wall_time_s": info.wall_time.as_secs_f64(),
        "warnings": outcome.warnings,
        "files": files
            .iter()
            .map(|(name, bytes)| json!({ "name": name, "sha256": sha256_hex(bytes), "bytes": bytes.len() }))
            .collect::<Vec<_>>(),
    })
}

/// Write every table plus the manifest into `dir`, creating it if needed.
pub fn write_run(dir: &Path, outcome: &Outcome, info: &RunInfo) -> Result<Vec<PathBuf>, AppError> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir.display(), e))?;
    let files = tables(outcome);
    let mut written = Vec::with_capacity(files.len() + 1);
    for (name, bytes) in &files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| AppError::io(path.display(), e))?;
        written.push(path);
    }
    let m = manifest(outcome, &files, info);
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| AppError::io(path.display(), e))?;
    written.push(path);
    Ok(written)
}

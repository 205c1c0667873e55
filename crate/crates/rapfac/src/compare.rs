//! Side-by-side comparison of finished run directories.

use std::path::Path;

use crate::error::AppError;
use crate::output::{MANIFEST, POPULATIONS};

/// Populations of one run directory.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedRun {
    pub label: String,
    pub n_sites: usize,
    pub times_us: Vec<f64>,
    pub populations: Vec<Vec<f64>>,
}

pub fn load(dir: &Path) -> Result<LoadedRun, AppError> {
    let manifest_path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| AppError::io(manifest_path.display(), e))?;
    let manifest: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| AppError::io(manifest_path.display(), e))?;
    let label = format!(
        "{}:{}",
        manifest["name"].as_str().unwrap_or("run"),
        manifest["method"].as_str().unwrap_or("?")
    );

    let path = dir.join(POPULATIONS);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| AppError::io(path.display(), e))?;
    let header = reader.headers().map_err(|e| AppError::io(path.display(), e))?.clone();
    let n_sites = header.len().saturating_sub(1);
    if header.get(0) != Some("t_us") {
        return Err(AppError::Mismatch(format!("{}: first column must be t_us", path.display())));
    }
    let mut times_us = Vec::new();
    let mut populations = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| AppError::io(path.display(), e))?;
        let parsed = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| AppError::io(path.display(), e))?;
        times_us.push(parsed[0]);
        populations.push(parsed[1..].to_vec());
    }
    Ok(LoadedRun {
        label,
        n_sites,
        times_us,
        populations,
    })
}

/// Merged table and pairwise maximum absolute differences.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    /// `(label_a, label_b, max |n_a − n_b|)` over every site and sample.
    pub max_abs_diff: Vec<(String, String, f64)>,
    pub merged_csv: Vec<u8>,
    pub summary_csv: Vec<u8>,
}

pub fn compare(runs: &[LoadedRun]) -> Result<Comparison, AppError> {
    let first = runs
        .first()
        .ok_or_else(|| AppError::Mismatch("nothing to compare".into()))?;
    for r in runs {
        if r.n_sites != first.n_sites {
            return Err(AppError::Mismatch(format!(
                "{} has {} sites, {} has {}",
                r.label, r.n_sites, first.label, first.n_sites
            )));
        }
        let same_grid = r.times_us.len() == first.times_us.len()
            && r.times_us
                .iter()
                .zip(&first.times_us)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0));
        if !same_grid {
            return Err(AppError::Mismatch(format!(
                "{} and {} are sampled on different time grids",
                r.label, first.label
            )));
        }
    }

    // Disambiguate repeated labels by their position on the command line.
    let labels: Vec<String> = runs
        .iter()
        .enumerate()
        .map(|(k, r)| {
            if runs.iter().filter(|o| o.label == r.label).count() > 1 {
                format!("{}#{k}", r.label)
            } else {
                r.label.clone()
            }
        })
        .collect();

    let mut merged = csv::Writer::from_writer(Vec::new());
    let header = ["t_us".to_string(), "site".to_string()].into_iter().chain(labels.iter().cloned());
    merged.write_record(header).expect("in-memory write");
    for (k, &t) in first.times_us.iter().enumerate() {
        for j in 0..first.n_sites {
            let row = [t.to_string(), j.to_string()]
                .into_iter()
                .chain(runs.iter().map(|r| r.populations[k][j].to_string()));
            merged.write_record(row).expect("in-memory write");
        }
    }

    let mut max_abs_diff = Vec::new();
    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record(["variant_a", "variant_b", "max_abs_diff"]).expect("in-memory write");
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            let d = runs[a]
                .populations
                .iter()
                .zip(&runs[b].populations)
                .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
                .fold(0.0, f64::max);
            summary
                .write_record([labels[a].clone(), labels[b].clone(), d.to_string()])
                .expect("in-memory write");
            max_abs_diff.push((labels[a].clone(), labels[b].clone(), d));
        }
    }
    Ok(Comparison {
        labels,
        max_abs_diff,
        merged_csv: merged.into_inner().expect("in-memory flush"),
        summary_csv: summary.into_inner().expect("in-memory flush"),
    })
}

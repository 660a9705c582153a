//! CSV emission and run manifests.

use std::fs;
use std::path::Path;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::dimscan::DimScanResult;
use crate::error::Result;
use crate::harness::experiments::{DimExperiment, ErrorGrid};

pub const MISMATCH_HEADER: [&str; 6] = ["delta_bar", "delta", "mean_error", "relative_error", "wc_bound", "alpha"];
pub const DIM_HEADER: [&str; 4] = ["basis", "M", "delta", "mean_error"];
pub const WC_CURVE_HEADER: [&str; 2] = ["alpha", "bound"];

/// Rows in `(δ̄, δ)` index order.
pub fn write_mismatch_csv(path: impl AsRef<Path>, grid: &ErrorGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MISMATCH_HEADER)?;
    for (b, db) in grid.delta_bar.iter().enumerate() {
        for (d, delta) in grid.delta.iter().enumerate() {
            w.write_record([
                db.to_string(),
                delta.to_string(),
                grid.mean_error(b, d).to_string(),
                grid.relative[b][d].to_string(),
                grid.wc_overlay[b][d].to_string(),
                grid.alpha[b].to_field(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_dim_rows<W: std::io::Write>(w: &mut csv::Writer<W>, basis: &str, res: &DimScanResult) -> Result<()> {
    for (k, m) in res.m_grid.iter().enumerate() {
        for (d, delta) in res.deltas.iter().enumerate() {
            w.write_record([
                basis.to_string(),
                m.to_string(),
                delta.to_string(),
                res.mean_errors[d][k].to_string(),
            ])?;
        }
    }
    Ok(())
}

/// Rows in `(basis, M, δ)` order.
pub fn write_dim_csv(path: impl AsRef<Path>, exp: &DimExperiment) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(DIM_HEADER)?;
    for (kind, res) in exp.bases.iter().zip(&exp.results) {
        write_dim_rows(&mut w, kind.name(), res)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_wc_curve<W: std::io::Write>(out: W, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WC_CURVE_HEADER)?;
    for (a, b) in curve {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub operator_checksum: String,
    pub version: String,
    pub wall_time: Duration,
    /// Extra `key=value` facts, e.g. the source constant used.
    pub extra: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_text: &str, operator_checksum: String) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            config_hash: sha256_hex(config_text.as_bytes()),
            operator_checksum,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time: Duration::ZERO,
            extra: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "command={}\nseed={}\nconfig_sha256={}\noperator_sha256={}\nversion={}\nwall_time_s={:.3}\n",
            self.command,
            self.seed,
            self.config_hash,
            self.operator_checksum,
            self.version,
            self.wall_time.as_secs_f64()
        );
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    /// Writes `manifest.txt` and `config.used.toml` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, config_text: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::write(dir.join("manifest.txt"), self.render())?;
        fs::write(dir.join("config.used.toml"), config_text)?;
        Ok(())
    }
}

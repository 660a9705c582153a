//! Experiment configuration: a TOML file with `[operator]`, `[data]`,
//! `[grid]`, `[method]` and `[scan]` sections. Every key has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::BasisKind;
use crate::dimscan::{DEFAULT_ALPHA_REF, DEFAULT_DELTA_MIN, DEFAULT_DELTA_REF};
use crate::error::{Error, Result};

pub const DEFAULT_DELTAS: [f64; 6] = [0.001, 0.01, 0.1, 0.2, 0.5, 1.0];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub operator: OperatorSpec,
    pub data: DataSpec,
    pub grid: GridSpec,
    pub method: MethodSpec,
    pub scan: ScanSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Integration,
    Radon,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    /// Size of the integration operator.
    pub n: usize,
    pub side: usize,
    pub angles: usize,
    pub offsets: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for OperatorSpec {
    fn default() -> Self {
        OperatorSpec {
            kind: OperatorKind::Integration,
            n: 50,
            side: 28,
            angles: 30,
            offsets: 41,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    /// `x = A* z` with `z` uniform on all left singular vectors.
    Source,
    /// Source data restricted to `dim` singular modes.
    Subspace,
    /// Uniform coefficients on the first `dim` vectors of a basis.
    Basis,
    /// Images from an IDX3 file.
    Idx,
    /// Synthetic piecewise-constant images.
    Phantom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub kind: DataKind,
    pub samples: usize,
    pub dim: usize,
    /// Explicit 0-based mode indices for subspace data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
    pub random_indices: bool,
    pub basis: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Relative cutoff for the pseudoinverse in source-constant estimation.
    pub pinv_tol: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            kind: DataKind::Source,
            samples: 50,
            dim: 8,
            indices: None,
            random_indices: false,
            basis: "svd".into(),
            path: None,
            pinv_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub delta_bar: Vec<f64>,
    pub delta: Vec<f64>,
    pub realizations: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            delta_bar: DEFAULT_DELTAS.to_vec(),
            delta: DEFAULT_DELTAS.to_vec(),
            realizations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Tikhonov,
    Lasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoRule {
    /// Mean of the estimated per-sample constants.
    Estimated,
    /// Each sample's own constant.
    PerSample,
    /// The configured `rho` value.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub rho_rule: RhoRule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// `identity`, `diff1d`, `grad2d`, or a path to a matrix container.
    pub transform: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_rule: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub alpha_grid: Vec<f64>,
    pub tune_samples: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MethodSpec {
    fn default() -> Self {
        MethodSpec {
            kind: MethodKind::Tikhonov,
            rho_rule: RhoRule::Estimated,
            rho: None,
            transform: "diff1d".into(),
            alpha_rule: None,
            alpha: None,
            alpha_grid: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0],
            tune_samples: 5,
            tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Truth,
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSpec {
    pub bases: Vec<String>,
    /// Largest `M`; the grid is `0..=m_max` unless `m_grid` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_grid: Option<Vec<usize>>,
    /// Fixed α; when absent it is derived from the threshold if the truth's
    /// coefficients are known, else `alpha_fallback`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub alpha_fallback: f64,
    pub deltas: Vec<f64>,
    pub realizations: usize,
    pub reference: ReferenceKind,
    pub alpha_ref: f64,
    pub delta_ref: f64,
    pub delta_min: f64,
    /// Index of the sample that is scanned.
    pub sample: usize,
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec {
            bases: vec!["svd".into()],
            m_max: None,
            m_grid: None,
            alpha: None,
            alpha_fallback: 0.5,
            deltas: vec![0.1],
            realizations: 100,
            reference: ReferenceKind::Truth,
            alpha_ref: DEFAULT_ALPHA_REF,
            delta_ref: DEFAULT_DELTA_REF,
            delta_min: DEFAULT_DELTA_MIN,
            sample: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::parse(&text)
    }

    /// Canonical text of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let o = &self.operator;
        match o.kind {
            OperatorKind::Integration if o.n == 0 => return bad("operator.n must be >= 1".into()),
            OperatorKind::Radon if o.side < 2 || o.angles == 0 || o.offsets == 0 => {
                return bad("radon needs side >= 2, angles >= 1, offsets >= 1".into())
            }
            OperatorKind::File if o.path.is_none() => return bad("operator.path is required".into()),
            _ => {}
        }
        let d = &self.data;
        if d.samples == 0 {
            return bad("data.samples must be >= 1".into());
        }
        if matches!(d.kind, DataKind::Subspace | DataKind::Basis) && d.dim == 0 && d.indices.is_none() {
            return bad("data.dim must be >= 1".into());
        }
        if d.kind == DataKind::Idx && d.path.is_none() {
            return bad("data.path is required for idx data".into());
        }
        d.basis.parse::<BasisKind>()?;
        let g = &self.grid;
        if g.delta_bar.is_empty() || g.delta.is_empty() {
            return bad("grid.delta_bar and grid.delta must be nonempty".into());
        }
        if g.delta_bar.iter().chain(&g.delta).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("noise levels must be finite and >= 0".into());
        }
        if g.realizations == 0 {
            return bad("grid.realizations must be >= 1".into());
        }
        let m = &self.method;
        if m.rho_rule == RhoRule::Fixed && !m.rho.is_some_and(|r| r > 0.0) {
            return bad("method.rho must be positive for rho_rule = \"fixed\"".into());
        }
        if m.alpha.is_some_and(|a| !(a > 0.0)) {
            return bad("method.alpha must be positive".into());
        }
        if !(m.tol > 0.0) || m.max_iter == 0 {
            return bad("method.tol and method.max_iter must be positive".into());
        }
        let s = &self.scan;
        if s.bases.is_empty() {
            return bad("scan.bases must be nonempty".into());
        }
        for b in &s.bases {
            b.parse::<BasisKind>()?;
        }
        if s.realizations == 0 || s.deltas.is_empty() {
            return bad("scan needs realizations >= 1 and nonempty deltas".into());
        }
        if s.alpha.is_some_and(|a| !(a > 0.0)) || !(s.alpha_fallback > 0.0) {
            return bad("scan alphas must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_use_standard_noise_grid() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg.grid.delta_bar, DEFAULT_DELTAS.to_vec());
        assert_eq!(cfg.grid.realizations, 100);
        assert_eq!(cfg.data.samples, 50);
        assert_eq!(cfg.operator.kind, OperatorKind::Integration);
    }

    #[test]
    fn parses_sections() {
        let text = r#"
seed = 7

[operator]
kind = "radon"
side = 8
angles = 5
offsets = 9

[data]
kind = "subspace"
dim = 4

[grid]
delta = [0.1, 0.2]
realizations = 3

[method]
rho_rule = "per-sample"

[scan]
bases = ["svd", "coordinate"]
m_max = 12
"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.operator.kind, OperatorKind::Radon);
        assert_eq!(cfg.data.kind, DataKind::Subspace);
        assert_eq!(cfg.grid.delta, vec![0.1, 0.2]);
        assert_eq!(cfg.method.rho_rule, RhoRule::PerSample);
        assert_eq!(cfg.scan.m_max, Some(12));
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "[operator]\nkind = \"hexagon\"",
            "[grid]\ndelta = []",
            "[grid]\nrealizations = 0",
            "[data]\nsamples = 0",
            "[method]\nrho_rule = \"fixed\"",
            "[scan]\nbases = [\"wavelet\"]",
            "unknown = 1",
            "[grid\n",
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}: {err}");
        }
    }
}

//! Intrinsic-dimension estimation: scan the subspace dimension `M` of a
//! restricted Tikhonov reconstruction and locate the error minimizer.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::datagen::gaussian_vector;
use crate::error::{check_dim, Error, Result};
use crate::linop::{weighted_norm, DenseOperator};
use crate::rng::domain;
use crate::tikhonov;
use crate::truncated::{argmin_first, ExpectedErrorModel};

pub const DEFAULT_ALPHA_REF: f64 = 0.03;
pub const DEFAULT_DELTA_REF: f64 = 0.01;
pub const DEFAULT_DELTA_MIN: f64 = 0.05;
/// Multiple of the threshold used when the coefficients of the truth are known.
pub const THRESHOLD_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    Truth,
    Reconstruction { alpha_ref: f64, delta_ref: f64 },
}

impl Default for Reference {
    fn default() -> Self {
        Reference::Reconstruction {
            alpha_ref: DEFAULT_ALPHA_REF,
            delta_ref: DEFAULT_DELTA_REF,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimScanConfig {
    pub m_grid: Vec<usize>,
    pub alpha: f64,
    pub deltas: Vec<f64>,
    pub realizations: usize,
    pub reference: Reference,
    pub delta_min: f64,
    pub seed: u64,
}

impl DimScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_grid.is_empty() || self.m_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("M grid must be nonempty and strictly increasing"));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::invalid("noise levels must be nonempty, finite and >= 0"));
        }
        if self.realizations == 0 {
            return Err(Error::invalid("need at least one realization"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let Reference::Reconstruction { alpha_ref, delta_ref } = self.reference {
            if !(alpha_ref > 0.0) || !(delta_ref >= 0.0) {
                return Err(Error::invalid("reference needs alpha_ref > 0 and delta_ref >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimScanResult {
    pub m_grid: Vec<usize>,
    pub deltas: Vec<f64>,
    /// `mean_errors[d][k]` is the mean error at `deltas[d]`, `m_grid[k]`.
    pub mean_errors: Vec<Vec<f64>>,
    pub argmin: Vec<usize>,
    pub estimated_n: usize,
}

/// `T_{α_ref}(A x + η_ref)` with full Tikhonov.
pub fn reference_reconstruction(
    op: &DenseOperator,
    x_true: &DVector<f64>,
    alpha_ref: f64,
    delta_ref: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    if !(delta_ref >= 0.0) {
        return Err(Error::invalid("reference noise level must be >= 0"));
    }
    let y = op.apply(x_true)? + gaussian_vector(op.rows(), delta_ref, &[seed, domain::REFERENCE]);
    tikhonov::reconstruct(op, &y, alpha_ref)
}

struct Restricted {
    basis: DMatrix<f64>,
    composed: DMatrix<f64>,
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
}

impl Restricted {
    fn new(op: &DenseOperator, basis: &DMatrix<f64>, m: usize, alpha: f64) -> Result<Self> {
        let b = basis.columns(0, m).into_owned();
        let composed = op.matrix() * &b;
        let chol = if m == 0 {
            None
        } else {
            let normal = composed.tr_mul(&composed) + b.tr_mul(&b) * alpha;
            Some(Cholesky::new(normal).ok_or(Error::Singular)?)
        };
        Ok(Restricted { basis: b, composed, chol })
    }

    fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            None => DVector::zeros(self.basis.nrows()),
            Some(c) => &self.basis * c.solve(&self.composed.tr_mul(y)),
        }
    }
}

/// Mean `‖x_M − x_ref‖_X` over realizations for every `(δ, M)`, with the
/// same noise draws shared across `M`.
pub fn scan(
    op: &DenseOperator,
    basis: &DMatrix<f64>,
    x_true: &DVector<f64>,
    config: &DimScanConfig,
) -> Result<DimScanResult> {
    config.validate()?;
    check_dim(op.cols(), basis.nrows())?;
    check_dim(op.cols(), x_true.len())?;
    if let Some(&m) = config.m_grid.last() {
        if m > basis.ncols() {
            return Err(Error::invalid(format!(
                "M={m} exceeds basis size {}",
                basis.ncols()
            )));
        }
    }
    let reference = match config.reference {
        Reference::Truth => x_true.clone(),
        Reference::Reconstruction { alpha_ref, delta_ref } => {
            reference_reconstruction(op, x_true, alpha_ref, delta_ref, config.seed)?
        }
    };
    let restricted = config
        .m_grid
        .par_iter()
        .map(|&m| Restricted::new(op, basis, m, config.alpha))
        .collect::<Result<Vec<_>>>()?;
    let y_true = op.apply(x_true)?;
    let rows = op.rows();
    let r_count = config.realizations;

    let cells: Vec<Vec<f64>> = (0..config.deltas.len() * r_count)
        .into_par_iter()
        .map(|cell| {
            let (d, r) = (cell / r_count, cell % r_count);
            let noise = gaussian_vector(rows, config.deltas[d], &[config.seed, d as u64, r as u64]);
            let y = &y_true + noise;
            restricted
                .iter()
                .map(|p| weighted_norm(&(p.solve(&y) - &reference)))
                .collect()
        })
        .collect();

    let mut mean_errors = Vec::with_capacity(config.deltas.len());
    for d in 0..config.deltas.len() {
        let mut sums = vec![0.0; config.m_grid.len()];
        for errs in &cells[d * r_count..(d + 1) * r_count] {
            for (s, e) in sums.iter_mut().zip(errs) {
                *s += e;
            }
        }
        mean_errors.push(sums.into_iter().map(|s| s / r_count as f64).collect::<Vec<_>>());
    }
    let argmin: Vec<usize> = mean_errors
        .iter()
        .map(|row| config.m_grid[argmin_first(row, 1e-12).expect("finite errors")])
        .collect();
    let estimated_n = consensus(&config.deltas, &argmin, config.delta_min);
    Ok(DimScanResult {
        m_grid: config.m_grid.clone(),
        deltas: config.deltas.clone(),
        mean_errors,
        argmin,
        estimated_n,
    })
}

/// Most frequent argmin over noise levels `δ ≥ δ_min` (all levels if none
/// qualify), smallest `M` on ties.
pub fn consensus(deltas: &[f64], argmin: &[usize], delta_min: f64) -> usize {
    let mut picked: Vec<usize> = deltas
        .iter()
        .zip(argmin)
        .filter(|(d, _)| **d >= delta_min)
        .map(|(_, m)| *m)
        .collect();
    if picked.is_empty() {
        picked = argmin.to_vec();
    }
    picked.sort_unstable();
    let mut best = (0usize, 0usize);
    let mut i = 0;
    while i < picked.len() {
        let j = picked[i..].iter().take_while(|&&m| m == picked[i]).count();
        if j > best.1 {
            best = (picked[i], j);
        }
        i += j;
    }
    best.0
}

/// `10 ×` the threshold of the expected-error model for a truth with SVD
/// coefficients `c`, isotropic noise at the largest level, falling back to
/// `fallback` when the threshold vanishes.
pub fn default_alpha(c: &[f64], sigma: &[f64], deltas: &[f64], fallback: f64) -> Result<f64> {
    let dmax = deltas.iter().copied().fold(0.0, f64::max);
    let model = ExpectedErrorModel::new(
        c.to_vec(),
        vec![dmax * dmax; sigma.len()],
        sigma.to_vec(),
        1.0,
    )?;
    let thr = model.alpha_threshold()?;
    Ok(if thr > 0.0 { THRESHOLD_FACTOR * thr } else { fallback })
}

impl DimScanResult {
    /// Rows `M,delta,mean_error` ordered by `(M, δ)`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["M", "delta", "mean_error"])?;
        for (k, m) in self.m_grid.iter().enumerate() {
            for (d, delta) in self.deltas.iter().enumerate() {
                w.write_record([m.to_string(), delta.to_string(), self.mean_errors[d][k].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::svd_basis;
    use crate::linop::build_integration_operator;

    fn config(m_grid: Vec<usize>, alpha: f64, deltas: Vec<f64>, reference: Reference) -> DimScanConfig {
        DimScanConfig {
            m_grid,
            alpha,
            deltas,
            realizations: 20,
            reference,
            delta_min: DEFAULT_DELTA_MIN,
            seed: 11,
        }
    }

    fn truth(op: &DenseOperator, c: &[f64]) -> DVector<f64> {
        let v = &op.svd().unwrap().v;
        let mut x = DVector::zeros(op.cols());
        for (j, cj) in c.iter().enumerate() {
            x.axpy(*cj, &v.column(j), 1.0);
        }
        x
    }

    #[test]
    fn noiseless_argmin_is_n() {
        let op = build_integration_operator(30).unwrap();
        let basis = svd_basis(&op).unwrap();
        let c = [0.9, -0.6, 0.7, 0.5, -0.8];
        let x = truth(&op, &c);
        let cfg = config((0..=30).collect(), 1e-6, vec![0.0], Reference::Truth);
        let res = scan(&op, &basis.vectors, &x, &cfg).unwrap();
        assert_eq!(res.argmin, vec![5]);
        assert_eq!(res.estimated_n, 5);
    }

    #[test]
    fn singleton_grid() {
        let op = build_integration_operator(10).unwrap();
        let basis = svd_basis(&op).unwrap();
        let x = truth(&op, &[0.5, 0.5, 0.5]);
        let cfg = config(vec![3], 0.1, vec![0.1, 0.2], Reference::Truth);
        assert_eq!(scan(&op, &basis.vectors, &x, &cfg).unwrap().estimated_n, 3);
    }

    #[test]
    fn reference_reconstruction_cases() {
        let op = build_integration_operator(12).unwrap();
        let x = truth(&op, &[0.4, -0.2, 0.3]);
        let a = reference_reconstruction(&op, &x, 1e-10, 0.0, 1).unwrap();
        assert!((a - &x).amax() < 1e-6);
        let b1 = reference_reconstruction(&op, &x, 0.03, 0.01, 9).unwrap();
        let b2 = reference_reconstruction(&op, &x, 0.03, 0.01, 9).unwrap();
        assert_eq!(b1, b2);
        assert!(reference_reconstruction(&op, &x, 0.03, -1.0, 9).is_err());
        assert_eq!(
            Reference::default(),
            Reference::Reconstruction { alpha_ref: 0.03, delta_ref: 0.01 }
        );
    }

    #[test]
    fn reference_shift_is_bounded_by_its_distance() {
        let op = build_integration_operator(20).unwrap();
        let basis = svd_basis(&op).unwrap();
        let x = truth(&op, &[0.7, -0.5, 0.6, 0.3]);
        let grid: Vec<usize> = (0..=10).collect();
        let truth_res = scan(&op, &basis.vectors, &x, &config(grid.clone(), 0.05, vec![0.1], Reference::Truth)).unwrap();
        let reference = Reference::default();
        let ref_res = scan(&op, &basis.vectors, &x, &config(grid, 0.05, vec![0.1], reference)).unwrap();
        let x_ref = reference_reconstruction(&op, &x, DEFAULT_ALPHA_REF, DEFAULT_DELTA_REF, 11).unwrap();
        let dist = weighted_norm(&(x_ref - &x));
        for (a, b) in truth_res.mean_errors[0].iter().zip(&ref_res.mean_errors[0]) {
            assert!((a - b).abs() <= dist + 1e-12);
        }
    }

    #[test]
    fn scan_is_thread_count_independent() {
        let op = build_integration_operator(20).unwrap();
        let basis = svd_basis(&op).unwrap();
        let x = truth(&op, &[0.7, -0.5, 0.6]);
        let cfg = config((0..=8).collect(), 0.02, vec![0.05, 0.1], Reference::Truth);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| scan(&op, &basis.vectors, &x, &cfg).unwrap());
        let b = four.install(|| scan(&op, &basis.vectors, &x, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn consensus_rule() {
        assert_eq!(consensus(&[0.01, 0.1, 0.2, 0.5], &[3, 8, 8, 7], 0.05), 8);
        assert_eq!(consensus(&[0.1, 0.2], &[9, 7], 0.05), 7);
        assert_eq!(consensus(&[0.01, 0.02], &[4, 4], 0.05), 4);
    }

    #[test]
    fn default_alpha_uses_threshold() {
        let sigma = [1.0, 0.5, 0.25];
        let a = default_alpha(&[0.1, 0.2], &sigma, &[0.05, 0.2], 0.5).unwrap();
        let thr = ((0.04f64 / 0.01 - 1.0).max(0.04 / 0.04 - 0.25)) / 2.0;
        assert!((a - 10.0 * thr).abs() < 1e-12);
        assert_eq!(default_alpha(&[1.0], &sigma, &[0.0], 0.5).unwrap(), 0.5);
    }

    #[test]
    fn invalid_configs() {
        let op = build_integration_operator(5).unwrap();
        let basis = svd_basis(&op).unwrap();
        let x = DVector::zeros(5);
        for cfg in [
            config(vec![], 0.1, vec![0.1], Reference::Truth),
            config(vec![2, 1], 0.1, vec![0.1], Reference::Truth),
            config(vec![1], 0.0, vec![0.1], Reference::Truth),
            config(vec![1], 0.1, vec![], Reference::Truth),
            config(vec![6], 0.1, vec![0.1], Reference::Truth),
        ] {
            assert!(scan(&op, &basis.vectors, &x, &cfg).is_err());
        }
    }
}

//! Experiment drivers: mismatch grids, dimension scans and LASSO tuning.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::datagen::{
    coordinate_basis, estimate_source_constant, gaussian_vector, load_idx_images, pca_basis,
    phantom_images, sample_basis_coefficient_data, sample_source_data, sample_subspace_data, svd_basis,
    Basis, BasisKind, SubspaceSpec,
};
use crate::dimscan::{self, DimScanConfig, DimScanResult, Reference};
use crate::error::{Error, Result};
use crate::harness::config::{
    DataKind, ExperimentConfig, MethodKind, OperatorKind, OperatorSpec, ReferenceKind, RhoRule,
};
use crate::lasso::{self, AlphaRule, LassoProblem, SolverOptions, SparsifyingTransform};
use crate::linop::{build_integration_operator, build_radon_operator, weighted_norm, DenseOperator};
use crate::tikhonov::{optimal_alpha, wc_bound, RegChoice};

/// Domain tag separating tuning noise from grid noise.
const TUNE_TAG: u64 = 0x7475_6e65;

pub fn build_operator(spec: &OperatorSpec) -> Result<DenseOperator> {
    match spec.kind {
        OperatorKind::Integration => build_integration_operator(spec.n),
        OperatorKind::Radon => build_radon_operator(spec.side, spec.angles, spec.offsets),
        OperatorKind::File => {
            let path = spec.path.as_ref().ok_or_else(|| Error::Config("operator.path missing".into()))?;
            DenseOperator::load(path)
        }
    }
}

/// Ground truths, with their exact source elements when the protocol
/// provides them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<DVector<f64>>,
    pub sources: Option<Vec<DVector<f64>>>,
    /// Coefficients on the first `dim` right singular vectors, when the truth
    /// is known to lie in their span.
    pub svd_coefficients: Option<Vec<Vec<f64>>>,
    /// Basis used to generate basis-coefficient data.
    pub basis: Option<Basis>,
}

fn image_side(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::Config(format!("image data needs a square domain, n={n}")));
    }
    Ok(side)
}

fn make_basis(kind: BasisKind, op: &DenseOperator, data: &[DVector<f64>], seed: u64) -> Result<Basis> {
    match kind {
        BasisKind::Svd => svd_basis(op),
        BasisKind::Coordinate => Ok(coordinate_basis(op.cols(), seed)),
        BasisKind::Pca => pca_basis(data, op.cols().min(data.len())),
    }
}

pub fn load_dataset(cfg: &ExperimentConfig, op: &DenseOperator) -> Result<Dataset> {
    let d = &cfg.data;
    let n = op.cols();
    let svd_coeffs = |xs: &[DVector<f64>], dim: usize| -> Result<Vec<Vec<f64>>> {
        let v = &op.svd()?.v;
        Ok(xs.iter().map(|x| (0..dim).map(|j| v.column(j).dot(x)).collect()).collect())
    };
    match d.kind {
        DataKind::Source => {
            let s = sample_source_data(op, d.samples, cfg.seed)?;
            Ok(Dataset {
                x: s.iter().map(|s| s.x_true.clone()).collect(),
                sources: Some(s.into_iter().map(|s| s.z).collect()),
                svd_coefficients: None,
                basis: None,
            })
        }
        DataKind::Subspace => {
            let modes = op.svd()?.rank_count();
            let spec = match (&d.indices, d.random_indices) {
                (Some(idx), _) => SubspaceSpec::new(idx.clone(), modes)?,
                (None, true) => SubspaceSpec::random(d.dim, modes, cfg.seed)?,
                (None, false) => SubspaceSpec::leading(d.dim, modes)?,
            };
            let leading = spec.indices().iter().enumerate().all(|(i, &k)| i == k);
            let s = sample_subspace_data(op, &spec, d.samples, cfg.seed)?;
            let x: Vec<DVector<f64>> = s.iter().map(|s| s.x_true.clone()).collect();
            let svd_coefficients = if leading { Some(svd_coeffs(&x, spec.dim())?) } else { None };
            Ok(Dataset {
                x,
                sources: Some(s.into_iter().map(|s| s.z).collect()),
                svd_coefficients,
                basis: None,
            })
        }
        DataKind::Basis => {
            let kind: BasisKind = d.basis.parse()?;
            if kind == BasisKind::Pca {
                return Err(Error::Config("basis-coefficient data needs an svd or coordinate basis".into()));
            }
            let basis = make_basis(kind, op, &[], cfg.seed)?;
            let x = sample_basis_coefficient_data(&basis, d.dim, d.samples, cfg.seed)?;
            let svd_coefficients = if kind == BasisKind::Svd { Some(svd_coeffs(&x, d.dim)?) } else { None };
            Ok(Dataset {
                x,
                sources: None,
                svd_coefficients,
                basis: Some(basis),
            })
        }
        DataKind::Idx => {
            let path = d.path.as_ref().ok_or_else(|| Error::Config("data.path missing".into()))?;
            let mut x = load_idx_images(path)?;
            if let Some(bad) = x.iter().find(|img| img.len() != n) {
                return Err(Error::Config(format!(
                    "images have {} pixels, operator expects {n}",
                    bad.len()
                )));
            }
            x.truncate(d.samples);
            Ok(Dataset { x, sources: None, svd_coefficients: None, basis: None })
        }
        DataKind::Phantom => {
            let x = phantom_images(image_side(n)?, d.samples, cfg.seed);
            Ok(Dataset { x, sources: None, svd_coefficients: None, basis: None })
        }
    }
}

/// Per-cell statistics of the mismatch grid.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellStats {
    pub mean_error: f64,
    pub mean_realized_delta: f64,
    pub checks: usize,
    pub violations: usize,
    /// Largest `error / bound` seen in the cell.
    pub max_bound_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGrid {
    pub delta_bar: Vec<f64>,
    pub delta: Vec<f64>,
    /// `cells[b][d]` for `delta_bar[b]`, `delta[d]`.
    pub cells: Vec<Vec<CellStats>>,
    /// `E(δ̄, δ) / E(δ, δ)`, NaN where `δ` is not on the `δ̄` grid.
    pub relative: Vec<Vec<f64>>,
    /// `wc(α(δ̄), δ, ρ)`; NaN for LASSO.
    pub wc_overlay: Vec<Vec<f64>>,
    /// Logged parameter per `δ̄`.
    pub alpha: Vec<RegChoice>,
    /// The `ρ` used in the logged parameter and the overlay.
    pub rho: f64,
    pub method: MethodKind,
}

impl ErrorGrid {
    pub fn mean_error(&self, b: usize, d: usize) -> f64 {
        self.cells[b][d].mean_error
    }

    pub fn bound_checks(&self) -> usize {
        self.cells.iter().flatten().map(|c| c.checks).sum()
    }

    pub fn bound_violations(&self) -> usize {
        self.cells.iter().flatten().map(|c| c.violations).sum()
    }

    /// For each `δ`, the `δ̄` index with the smallest mean error.
    pub fn column_argmin(&self) -> Vec<usize> {
        (0..self.delta.len())
            .map(|d| {
                let col: Vec<f64> = (0..self.delta_bar.len()).map(|b| self.mean_error(b, d)).collect();
                crate::truncated::argmin_first(&col, 0.0).unwrap_or(0)
            })
            .collect()
    }

    pub fn zero_reconstruction_rows(&self) -> Vec<f64> {
        self.delta_bar
            .iter()
            .zip(&self.alpha)
            .filter(|(_, a)| **a == RegChoice::ZeroReconstruction)
            .map(|(d, _)| *d)
            .collect()
    }
}

struct GridInputs {
    rho_logged: f64,
    rho_rule: Vec<f64>,
    rho_true: Option<Vec<f64>>,
}

fn rho_inputs(cfg: &ExperimentConfig, op: &DenseOperator, data: &Dataset) -> Result<GridInputs> {
    let est = estimate_source_constant(op, &data.x, cfg.data.pinv_tol)?;
    // Euclidean ‖z‖₂ keeps the bound check exact for m ≠ n
    let rho_true = data
        .sources
        .as_ref()
        .map(|zs| zs.iter().map(|z| z.norm()).collect::<Vec<f64>>());
    let scale = (op.rows() as f64).sqrt();
    let (rho_logged, rho_rule) = match cfg.method.rho_rule {
        RhoRule::Estimated => (est.rho_mean, vec![est.rho_mean; data.x.len()]),
        RhoRule::Fixed => {
            let r = cfg.method.rho.expect("validated");
            (r, vec![r; data.x.len()])
        }
        RhoRule::PerSample => {
            let per: Vec<f64> = match &rho_true {
                Some(t) => t.iter().map(|r| r / scale).collect(),
                None => est.rho.clone(),
            };
            (per.iter().sum::<f64>() / per.len() as f64, per)
        }
    };
    Ok(GridInputs { rho_logged, rho_rule, rho_true })
}

/// Mean reconstruction errors over samples and noise realizations for every
/// pair of tuning level `δ̄` and data level `δ`.
pub fn run_mismatch_grid(cfg: &ExperimentConfig, op: &DenseOperator, data: &Dataset) -> Result<ErrorGrid> {
    cfg.validate()?;
    let g = &cfg.grid;
    let (nb, nd, nl, nr) = (g.delta_bar.len(), g.delta.len(), data.x.len(), g.realizations);
    let inputs = rho_inputs(cfg, op, data)?;
    let check_bounds = inputs.rho_true.is_some()
        && cfg.method.kind == MethodKind::Tikhonov
        && op.spectral_norm()? <= 1.0 + 1e-10;
    let y_true: Vec<DVector<f64>> = data.x.iter().map(|x| op.apply(x)).collect::<Result<_>>()?;

    let mut alpha = Vec::with_capacity(nb);
    let mut choices: Vec<Vec<RegChoice>> = Vec::with_capacity(nb);
    let transform = match cfg.method.kind {
        MethodKind::Tikhonov => None,
        MethodKind::Lasso => Some(build_transform(cfg, op.cols())?),
    };
    match cfg.method.kind {
        MethodKind::Tikhonov => {
            for &db in &g.delta_bar {
                alpha.push(optimal_alpha(db, inputs.rho_logged)?);
                choices.push(
                    inputs.rho_rule.iter().map(|&r| optimal_alpha(db, r)).collect::<Result<_>>()?,
                );
            }
        }
        MethodKind::Lasso => {
            let r = lasso_rule(cfg)?;
            for &db in &g.delta_bar {
                let a = r.alpha_for_delta(db);
                alpha.push(RegChoice::Alpha(a));
                choices.push(vec![RegChoice::Alpha(a); nl]);
            }
        }
    }
    let options = SolverOptions { tol: cfg.method.tol, max_iter: cfg.method.max_iter };
    let svd = op.svd()?;
    let rows = op.rows();

    let partial: Vec<CellStats> = (0..nb * nd * nl)
        .into_par_iter()
        .map(|flat| -> Result<CellStats> {
            let (b, rem) = (flat / (nd * nl), flat % (nd * nl));
            let (d, i) = (rem / nl, rem % nl);
            let choice = choices[b][i];
            let x = &data.x[i];
            let mut s = CellStats::default();
            for r in 0..nr {
                let eta = gaussian_vector(rows, g.delta[d], &[cfg.seed, b as u64, d as u64, i as u64, r as u64]);
                let y = &y_true[i] + &eta;
                let rec = match (&transform, choice) {
                    (None, RegChoice::ZeroReconstruction) => DVector::zeros(op.cols()),
                    (None, RegChoice::Alpha(a)) => {
                        let coef = DVector::from_fn(svd.rank_count(), |j, _| {
                            let sj = svd.sigma[j];
                            sj / (sj * sj + a) * svd.u.column(j).dot(&y)
                        });
                        &svd.v * coef
                    }
                    (Some(w), RegChoice::Alpha(a)) => {
                        let p = LassoProblem::new(op, w, y, a)?;
                        lasso::solve(&p, options, None)?.x
                    }
                    (Some(_), RegChoice::ZeroReconstruction) => unreachable!("lasso parameters are finite"),
                };
                let err = &rec - x;
                s.mean_error += weighted_norm(&err);
                s.mean_realized_delta += weighted_norm(&eta);
                if check_bounds {
                    let rho_i = inputs.rho_true.as_ref().expect("checked")[i];
                    let bound = choice.wc_bound(eta.norm(), rho_i);
                    let e = err.norm();
                    s.checks += 1;
                    if e > bound + 1e-9 * bound.max(1.0) {
                        s.violations += 1;
                    }
                    if bound > 0.0 {
                        s.max_bound_ratio = s.max_bound_ratio.max(e / bound);
                    }
                }
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = vec![vec![CellStats::default(); nd]; nb];
    for b in 0..nb {
        for d in 0..nd {
            let mut c = CellStats::default();
            for i in 0..nl {
                let p = &partial[(b * nd + d) * nl + i];
                c.mean_error += p.mean_error;
                c.mean_realized_delta += p.mean_realized_delta;
                c.checks += p.checks;
                c.violations += p.violations;
                c.max_bound_ratio = c.max_bound_ratio.max(p.max_bound_ratio);
            }
            let count = (nl * nr) as f64;
            c.mean_error /= count;
            c.mean_realized_delta /= count;
            cells[b][d] = c;
        }
    }

    let mut relative = vec![vec![f64::NAN; nd]; nb];
    for d in 0..nd {
        if let Some(diag) = g.delta_bar.iter().position(|&db| db == g.delta[d]) {
            let base = cells[diag][d].mean_error;
            for b in 0..nb {
                relative[b][d] = if b == diag { 1.0 } else { cells[b][d].mean_error / base };
            }
        }
    }
    let wc_overlay = (0..nb)
        .map(|b| {
            (0..nd)
                .map(|d| match cfg.method.kind {
                    MethodKind::Tikhonov => alpha[b].wc_bound(g.delta[d], inputs.rho_logged),
                    MethodKind::Lasso => f64::NAN,
                })
                .collect()
        })
        .collect();
    Ok(ErrorGrid {
        delta_bar: g.delta_bar.clone(),
        delta: g.delta.clone(),
        cells,
        relative,
        wc_overlay,
        alpha,
        rho: inputs.rho_logged,
        method: cfg.method.kind,
    })
}

/// Scan results for every configured basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DimExperiment {
    pub bases: Vec<BasisKind>,
    pub alphas: Vec<f64>,
    pub results: Vec<DimScanResult>,
}

pub fn run_dim_experiment(cfg: &ExperimentConfig, op: &DenseOperator, data: &Dataset) -> Result<DimExperiment> {
    cfg.validate()?;
    let s = &cfg.scan;
    let x = data
        .x
        .get(s.sample)
        .ok_or_else(|| Error::Config(format!("scan.sample {} out of range", s.sample)))?;
    let reference = match s.reference {
        ReferenceKind::Truth => Reference::Truth,
        ReferenceKind::Reconstruction => Reference::Reconstruction {
            alpha_ref: s.alpha_ref,
            delta_ref: s.delta_ref,
        },
    };
    let mut out = DimExperiment { bases: Vec::new(), alphas: Vec::new(), results: Vec::new() };
    for name in &s.bases {
        let kind: BasisKind = name.parse()?;
        let basis = match (&data.basis, kind) {
            (Some(b), k) if b.kind == k => b.clone(),
            _ => make_basis(kind, op, &data.x, cfg.seed)?,
        };
        let m_grid = match &s.m_grid {
            Some(g) => g.clone(),
            None => (0..=s.m_max.unwrap_or(basis.size()).min(basis.size())).collect(),
        };
        let alpha = match (s.alpha, kind, &data.svd_coefficients) {
            (Some(a), _, _) => a,
            (None, BasisKind::Svd, Some(c)) => {
                let sigma: Vec<f64> = op.svd()?.sigma.iter().copied().collect();
                dimscan::default_alpha(&c[s.sample], &sigma, &s.deltas, s.alpha_fallback)?
            }
            _ => s.alpha_fallback,
        };
        let config = DimScanConfig {
            m_grid,
            alpha,
            deltas: s.deltas.clone(),
            realizations: s.realizations,
            reference,
            delta_min: s.delta_min,
            seed: cfg.seed,
        };
        let res = dimscan::scan(op, &basis.vectors, x, &config)?;
        out.bases.push(kind);
        out.alphas.push(alpha);
        out.results.push(res);
    }
    Ok(out)
}

pub fn build_transform(cfg: &ExperimentConfig, n: usize) -> Result<SparsifyingTransform> {
    let name = cfg.method.transform.as_str();
    match name {
        "identity" | "diff1d" | "grad2d" => SparsifyingTransform::by_name(name, n),
        path => {
            let w = SparsifyingTransform::load(path)?;
            if w.cols() != n {
                return Err(Error::Config(format!("transform has {} columns, expected {n}", w.cols())));
            }
            Ok(w)
        }
    }
}

fn lasso_rule(cfg: &ExperimentConfig) -> Result<AlphaRule> {
    match (&cfg.method.alpha_rule, cfg.method.alpha) {
        (Some(path), _) => AlphaRule::load(path),
        (None, Some(a)) => AlphaRule::new(vec![(0.0, a)]),
        (None, None) => Err(Error::Config("lasso needs method.alpha_rule or method.alpha".into())),
    }
}

/// LASSO reconstruction of one sample at the first data noise level.
#[derive(Debug, Clone)]
pub struct LassoRun {
    pub x_true: DVector<f64>,
    pub delta: f64,
    pub solution: lasso::PdSolution,
    pub alpha: f64,
    pub subgradient_ok: bool,
}

pub fn run_lasso_solve(cfg: &ExperimentConfig, op: &DenseOperator, data: &Dataset) -> Result<LassoRun> {
    let w = build_transform(cfg, op.cols())?;
    let i = cfg.scan.sample;
    let x = data
        .x
        .get(i)
        .ok_or_else(|| Error::Config(format!("sample {i} out of range")))?;
    let delta = cfg.grid.delta[0];
    let alpha = lasso_rule(cfg)?.alpha_for_delta(delta);
    let y = op.apply(x)? + gaussian_vector(op.rows(), delta, &[cfg.seed, i as u64]);
    let p = LassoProblem::new(op, &w, y, alpha)?;
    let opts = SolverOptions { tol: cfg.method.tol, max_iter: cfg.method.max_iter };
    let solution = lasso::solve(&p, opts, None)?;
    let subgradient_ok = lasso::subgradient_bound_check(&p, &solution)?;
    Ok(LassoRun { x_true: x.clone(), delta, solution, alpha, subgradient_ok })
}

/// Grid-searched α for every data noise level; knots of an [`AlphaRule`].
pub fn run_alpha_tune(cfg: &ExperimentConfig, op: &DenseOperator, data: &Dataset) -> Result<AlphaRule> {
    let w = build_transform(cfg, op.cols())?;
    let count = cfg.method.tune_samples.min(data.x.len()).max(1);
    let opts = SolverOptions { tol: cfg.method.tol, max_iter: cfg.method.max_iter };
    let mut deltas = cfg.grid.delta.clone();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    let mut knots = Vec::with_capacity(deltas.len());
    for (d, &delta) in deltas.iter().enumerate() {
        let tuples = data.x[..count]
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let eta = gaussian_vector(op.rows(), delta, &[cfg.seed, TUNE_TAG, d as u64, i as u64]);
                Ok((x.clone(), op.apply(x)? + eta))
            })
            .collect::<Result<Vec<_>>>()?;
        let res = lasso::grid_search_alpha(op, &w, &tuples, &cfg.method.alpha_grid, opts)?;
        knots.push((delta, res.alpha));
    }
    AlphaRule::new(knots)
}

/// `(α, wc(α, δ, ρ))` on a decade grid `{1, 1.25, …, 8}·10^e` for
/// `e = −4..0`, plus `α = 10` and the optimal `δ/ρ` when finite.
pub fn wc_curve(delta: f64, rho: f64) -> Result<Vec<(f64, f64)>> {
    const MANTISSAS: [f64; 10] = [1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0];
    let mut grid: Vec<f64> = (-4..=0)
        .flat_map(|e| MANTISSAS.iter().map(move |m| format!("{m}e{e}").parse::<f64>().expect("decimal literal")))
        .collect();
    grid.push(10.0);
    if let RegChoice::Alpha(a) = optimal_alpha(delta, rho)? {
        grid.push(a);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid.into_iter().map(|a| (a, wc_bound(a, delta, rho))).collect())
}

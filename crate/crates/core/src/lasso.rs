//! Generalized LASSO `min ‖Ax − y‖² + α‖Wx‖₁` with a fixed sparsifying
//! transform, solved by a Condat–Vũ primal-dual iteration.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::linop::{power_iteration_norm, read_matrix, weighted_norm, DenseOperator};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Identity,
    Diff1d,
    Grad2d,
    Custom,
}

#[derive(Debug, Clone)]
pub struct SparsifyingTransform {
    pub kind: TransformKind,
    pub matrix: DMatrix<f64>,
}

impl SparsifyingTransform {
    pub fn identity(n: usize) -> Self {
        SparsifyingTransform {
            kind: TransformKind::Identity,
            matrix: DMatrix::identity(n, n),
        }
    }

    /// `(n−1)×n` forward differences `x_{i+1} − x_i`.
    pub fn diff1d(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("diff1d needs n >= 2"));
        }
        let mut w = DMatrix::zeros(n - 1, n);
        for i in 0..n - 1 {
            w[(i, i)] = -1.0;
            w[(i, i + 1)] = 1.0;
        }
        Ok(SparsifyingTransform {
            kind: TransformKind::Diff1d,
            matrix: w,
        })
    }

    /// Horizontal then vertical forward differences of a `side×side` image
    /// stored row-major.
    pub fn grad2d(side: usize) -> Result<Self> {
        if side < 2 {
            return Err(Error::invalid("grad2d needs side >= 2"));
        }
        let n = side * side;
        let per = side * (side - 1);
        let mut w = DMatrix::zeros(2 * per, n);
        let mut row = 0;
        for r in 0..side {
            for c in 0..side - 1 {
                w[(row, r * side + c)] = -1.0;
                w[(row, r * side + c + 1)] = 1.0;
                row += 1;
            }
        }
        for r in 0..side - 1 {
            for c in 0..side {
                w[(row, r * side + c)] = -1.0;
                w[(row, (r + 1) * side + c)] = 1.0;
                row += 1;
            }
        }
        Ok(SparsifyingTransform {
            kind: TransformKind::Grad2d,
            matrix: w,
        })
    }

    pub fn custom(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::invalid("transform matrix is empty"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(SparsifyingTransform {
            kind: TransformKind::Custom,
            matrix,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        SparsifyingTransform::custom(read_matrix(path)?)
    }

    /// Build by name: `identity`, `diff1d`, `grad2d` (n must be a square).
    pub fn by_name(name: &str, n: usize) -> Result<Self> {
        match name {
            "identity" => Ok(SparsifyingTransform::identity(n)),
            "diff1d" => SparsifyingTransform::diff1d(n),
            "grad2d" => {
                let side = (n as f64).sqrt().round() as usize;
                if side * side != n {
                    return Err(Error::invalid(format!("grad2d needs a square image, n={n}")));
                }
                SparsifyingTransform::grad2d(side)
            }
            other => Err(Error::invalid(format!("unknown transform '{other}'"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    pub fn apply_adjoint(&self, v: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(v)
    }

    /// Upper estimate of `‖W‖₂`.
    pub fn norm_estimate(&self) -> f64 {
        match self.kind {
            TransformKind::Identity => 1.0,
            // ‖D‖ < 2 for first differences, ‖∇‖ < √8 for the stacked gradient
            TransformKind::Diff1d => 2.0,
            TransformKind::Grad2d => 8f64.sqrt(),
            TransformKind::Custom => 1.01 * power_iteration_norm(&self.matrix, 500, 1e-10, 0),
        }
    }
}

pub struct LassoProblem<'a> {
    pub operator: &'a DenseOperator,
    pub transform: &'a SparsifyingTransform,
    pub y: DVector<f64>,
    pub alpha: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(
        operator: &'a DenseOperator,
        transform: &'a SparsifyingTransform,
        y: DVector<f64>,
        alpha: f64,
    ) -> Result<Self> {
        check_dim(operator.rows(), y.len())?;
        check_dim(operator.cols(), transform.cols())?;
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        Ok(LassoProblem {
            operator,
            transform,
            y,
            alpha,
        })
    }

    pub fn with_data(&self, y: DVector<f64>) -> Result<LassoProblem<'a>> {
        LassoProblem::new(self.operator, self.transform, y, self.alpha)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let r = self.operator.matrix() * x - &self.y;
        r.norm_squared() + self.alpha * self.transform.apply(x).lp_norm(1)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let a = self.operator.matrix();
        (a.tr_mul(&(a * x - &self.y))) * 2.0
    }

    fn zero_tol(&self, wx: &DVector<f64>) -> f64 {
        1e-6 * wx.amax().max(1.0)
    }

    /// `γ_i = sign((Wx)_i)` where `(Wx)_i` is nonzero, clipped to `[−1, 1]`
    /// elsewhere.
    pub fn project_gamma(&self, x: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
        let wx = self.transform.apply(x);
        let tol = self.zero_tol(&wx);
        DVector::from_fn(gamma.len(), |i, _| {
            if wx[i].abs() > tol {
                wx[i].signum()
            } else {
                gamma[i].clamp(-1.0, 1.0)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PdSolution {
    pub x: DVector<f64>,
    /// Scaled dual variable in `∂‖·‖₁(Wx)`.
    pub gamma: DVector<f64>,
    pub iterations: usize,
    /// Relative fixed-point residual at the last iterate.
    pub residual: f64,
    pub kkt_residual: f64,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    /// Indices with `(Wx)_i` numerically nonzero.
    pub active_set: Vec<usize>,
}

/// `‖2Aᵀ(Ax − y) + αWᵀγ‖₂` with `γ` projected onto the subdifferential face.
pub fn kkt_residual(problem: &LassoProblem, x: &DVector<f64>, gamma: &DVector<f64>) -> Result<f64> {
    check_dim(problem.operator.cols(), x.len())?;
    check_dim(problem.transform.rows(), gamma.len())?;
    let g = problem.project_gamma(x, gamma);
    let r = problem.gradient(x) + problem.transform.apply_adjoint(&g) * problem.alpha;
    Ok(r.norm())
}

/// Condat–Vũ iteration
/// `x⁺ = x − τ(2Aᵀ(Ax−y) + Wᵀv)`, `v⁺ = clip(v + sW(2x⁺−x), ±α)`
/// with `τ(L/2 + s‖W‖²) < 1`, `L = 2‖A‖²`.
pub fn solve(
    problem: &LassoProblem,
    options: SolverOptions,
    x0: Option<&DVector<f64>>,
) -> Result<PdSolution> {
    if !(options.tol > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let n = problem.operator.cols();
    let p = problem.transform.rows();
    let mut x = match x0 {
        Some(x0) => {
            check_dim(n, x0.len())?;
            x0.clone()
        }
        None => DVector::zeros(n),
    };
    let a = problem.operator.matrix();
    let a_norm = if problem.operator.is_spectral_normalized() {
        1.0
    } else {
        problem.operator.spectral_norm()?
    };
    let lip = 2.0 * a_norm * a_norm;
    let w_norm2 = problem.transform.norm_estimate().powi(2);
    let s = if w_norm2 > 0.0 && lip > 0.0 { lip / (2.0 * w_norm2) } else { 1.0 };
    let tau = 0.99 / (lip / 2.0 + s * w_norm2);
    let alpha = problem.alpha;
    let aty = a.tr_mul(&problem.y);
    let ata = a.tr_mul(a);

    let mut v = DVector::zeros(p);
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let grad = (&ata * &x - &aty) * 2.0;
        let x_new = &x - (grad + problem.transform.apply_adjoint(&v)) * tau;
        let extrap = &x_new * 2.0 - &x;
        let mut v_new = &v + problem.transform.apply(&extrap) * s;
        v_new.apply(|t| *t = t.clamp(-alpha, alpha));

        let dx2 = (&x_new - &x).norm_squared() / tau;
        let dv2 = (&v_new - &v).norm_squared() / s;
        let scale = (x_new.norm_squared() / tau + v_new.norm_squared() / s).sqrt();
        residual = (dx2 + dv2).sqrt() / scale.max(1e-12);
        x = x_new;
        v = v_new;
        trace.push(problem.objective(&x));
        if residual <= options.tol {
            break;
        }
    }

    let gamma_raw = &v / alpha;
    let gamma = problem.project_gamma(&x, &gamma_raw);
    let kkt = kkt_residual(problem, &x, &gamma)?;
    let wx = problem.transform.apply(&x);
    let tol = problem.zero_tol(&wx);
    let active_set = (0..p).filter(|&i| wx[i].abs() > tol).collect();
    let solution = PdSolution {
        objective: problem.objective(&x),
        x,
        gamma,
        iterations,
        residual,
        kkt_residual: kkt,
        objective_trace: trace,
        active_set,
    };
    if residual > options.tol {
        return Err(Error::NotConverged(Box::new(solution)));
    }
    Ok(solution)
}

/// `‖Wᵀγ̂‖₂ ≤ (2/α)‖A‖₂‖y‖₂` up to `1e-8`.
pub fn subgradient_bound_check(problem: &LassoProblem, solution: &PdSolution) -> Result<bool> {
    let lhs = problem.transform.apply_adjoint(&solution.gamma).norm();
    let rhs = 2.0 / problem.alpha * problem.operator.spectral_norm()? * problem.y.norm();
    Ok(lhs <= rhs + 1e-8)
}

#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub restarts: usize,
    /// Max pairwise `‖Ax̂_i − Ax̂_j‖₂`.
    pub max_ax_deviation: f64,
    /// Max pairwise `|‖Wx̂_i‖₁ − ‖Wx̂_j‖₁|`.
    pub max_l1_deviation: f64,
    /// Max pairwise `‖x̂_i − x̂_j‖₂`, informational.
    pub max_x_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub solutions: Vec<DVector<f64>>,
}

/// Solve from `restarts` seeded Gaussian initializations and compare `Ax̂`
/// and `‖Wx̂‖₁` across them.
pub fn solution_invariance_check(
    problem: &LassoProblem,
    restarts: usize,
    seed: u64,
    options: SolverOptions,
) -> Result<InvarianceReport> {
    if restarts < 2 {
        return Err(Error::invalid("invariance check needs at least 2 restarts"));
    }
    let n = problem.operator.cols();
    let solutions = (0..restarts)
        .map(|r| {
            let mut s = rng::stream(seed, &[domain::RESTART, r as u64]);
            let x0 = DVector::from_fn(n, |_, _| s.sample::<f64, _>(StandardNormal));
            solve(problem, options, Some(&x0)).map(|sol| sol.x)
        })
        .collect::<Result<Vec<_>>>()?;
    let ax: Vec<DVector<f64>> = solutions.iter().map(|x| problem.operator.matrix() * x).collect();
    let l1: Vec<f64> = solutions.iter().map(|x| problem.transform.apply(x).lp_norm(1)).collect();
    let (mut dax, mut dl1, mut dx) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..restarts {
        for j in i + 1..restarts {
            dax = dax.max((&ax[i] - &ax[j]).norm());
            dl1 = dl1.max((l1[i] - l1[j]).abs());
            dx = dx.max((&solutions[i] - &solutions[j]).norm());
        }
    }
    let tolerance = 1e-6 * (1.0 + problem.y.norm());
    Ok(InvarianceReport {
        restarts,
        max_ax_deviation: dax,
        max_l1_deviation: dl1,
        max_x_deviation: dx,
        tolerance,
        passed: dax <= tolerance && dl1 <= tolerance,
        solutions,
    })
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub alpha: f64,
    /// Mean `‖x̂ − x‖_X` per grid entry, `None` where a solve failed.
    pub mean_errors: Vec<Option<f64>>,
    pub failures: Vec<(usize, String)>,
}

/// Grid entry minimizing the mean reconstruction error over the tuples,
/// earliest entry on ties.
pub fn grid_search_alpha(
    op: &DenseOperator,
    transform: &SparsifyingTransform,
    tuples: &[(DVector<f64>, DVector<f64>)],
    grid: &[f64],
    options: SolverOptions,
) -> Result<GridSearchResult> {
    if grid.is_empty() || tuples.is_empty() {
        return Err(Error::invalid("grid search needs a nonempty grid and samples"));
    }
    let cells: Vec<std::result::Result<f64, String>> = grid
        .par_iter()
        .map(|&alpha| {
            let mut total = 0.0;
            for (x, y) in tuples {
                let problem = LassoProblem::new(op, transform, y.clone(), alpha).map_err(|e| e.to_string())?;
                let sol = solve(&problem, options, None).map_err(|e| e.to_string())?;
                total += weighted_norm(&(sol.x - x));
            }
            Ok(total / tuples.len() as f64)
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    let mut failures = Vec::new();
    let mut mean_errors = Vec::with_capacity(grid.len());
    for (i, cell) in cells.into_iter().enumerate() {
        match cell {
            Ok(e) => {
                if best.is_none_or(|(_, b)| e < b) {
                    best = Some((i, e));
                }
                mean_errors.push(Some(e));
            }
            Err(msg) => {
                failures.push((i, msg));
                mean_errors.push(None);
            }
        }
    }
    let (idx, _) = best.ok_or_else(|| Error::invalid("every grid cell failed to solve"))?;
    Ok(GridSearchResult {
        alpha: grid[idx],
        mean_errors,
        failures,
    })
}

/// Piecewise-linear map `δ ↦ α` through tuned knots, constant outside.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaRule {
    knots: Vec<(f64, f64)>,
}

impl AlphaRule {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::invalid("alpha rule has no knots"));
        }
        if knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::invalid("alpha rule knots must be strictly increasing in delta"));
        }
        if knots.iter().any(|&(d, a)| !d.is_finite() || !(a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid("alpha rule needs finite deltas and positive alphas"));
        }
        Ok(AlphaRule { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn alpha_for_delta(&self, delta: f64) -> f64 {
        let k = &self.knots;
        if delta <= k[0].0 {
            return k[0].1;
        }
        if delta >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let j = k.partition_point(|&(d, _)| d <= delta);
        let (d0, a0) = k[j - 1];
        let (d1, a1) = k[j];
        let t = (delta - d0) / (d1 - d0);
        a0 + t * (a1 - a0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["delta", "alpha"])?;
        for (d, a) in &self.knots {
            w.write_record([d.to_string(), a.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["delta", "alpha"] {
            return Err(Error::format(path, "expected header delta,alpha"));
        }
        let mut knots = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::format(path, format!("bad number in row {knots_len}", knots_len = knots.len() + 1)))
            };
            knots.push((parse(0)?, parse(1)?));
        }
        AlphaRule::new(knots)
    }
}

pub fn alpha_for_delta(rule: &AlphaRule, delta: f64) -> f64 {
    rule.alpha_for_delta(delta)
}

/// `max ‖x̂(ỹ) − x̂(y)‖₂ / ‖ỹ − y‖₂` over probes `ỹ = y + r·d` with random
/// unit directions `d` and `0 < r ≤ radius`. An empirical lower estimate.
pub fn empirical_lipschitz(
    problem: &LassoProblem,
    n_probes: usize,
    radius: f64,
    seed: u64,
    options: SolverOptions,
) -> Result<f64> {
    if n_probes == 0 || !(radius > 0.0) {
        return Err(Error::invalid("need at least one probe and a positive radius"));
    }
    let base = solve(problem, options, None)?;
    let m = problem.y.len();
    let ratios = (0..n_probes)
        .into_par_iter()
        .map(|k| {
            let mut s = rng::stream(seed, &[domain::PROBE, k as u64]);
            let mut d = DVector::from_fn(m, |_, _| s.sample::<f64, _>(StandardNormal));
            d /= d.norm();
            let r = radius * (1.0 - s.random::<f64>());
            let perturbed = problem.with_data(&problem.y + &d * r)?;
            let sol = solve(&perturbed, options, Some(&base.x))?;
            Ok((sol.x - &base.x).norm() / r)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

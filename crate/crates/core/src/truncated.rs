//! Truncated Tikhonov regularization, its error bound for `σ_j = 1/j`, the
//! expected squared error model for truths spanned by leading singular
//! vectors, and Tikhonov restricted to a subspace spanned by a basis.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linop::DenseOperator;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedScheme {
    pub m: usize,
    pub alpha: f64,
}

impl TruncatedScheme {
    pub fn new(m: usize, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        Ok(TruncatedScheme { m, alpha })
    }
}

/// `Σ_{i≤M} σ_i/(σ_i²+α) ⟨y,u_i⟩ v_i`.
pub fn truncated_reconstruct(
    op: &DenseOperator,
    y: &DVector<f64>,
    scheme: TruncatedScheme,
) -> Result<DVector<f64>> {
    check_dim(op.rows(), y.len())?;
    let svd = op.svd()?;
    let rank = svd.numerical_rank(1e-12);
    let limit = if scheme.alpha > 0.0 { svd.rank_count() } else { rank };
    if scheme.m > limit {
        return Err(Error::invalid(format!(
            "truncation level {} exceeds the number of usable singular values {limit}",
            scheme.m
        )));
    }
    let mut x = DVector::zeros(op.cols());
    for i in 0..scheme.m {
        let s = svd.sigma[i];
        let coeff = s / (s * s + scheme.alpha) * svd.u.column(i).dot(y);
        x.axpy(coeff, &svd.v.column(i), 1.0);
    }
    Ok(x)
}

/// Error bound of truncated Tikhonov for `σ_j = 1/j` and truths in `X_N`.
///
/// Data term: `Mδ/(1+αM²)` if `√α ≤ 1/M`, else `δ/(2√α)`.
/// Approximation term: `Nαρ` if `√α ≤ 1/(2N)`, else `√α ρ/2`.
pub fn truncated_wc_bound(m: usize, n: usize, alpha: f64, delta: f64, rho: f64) -> Result<f64> {
    if n == 0 || m < n {
        return Err(Error::invalid(format!("bound needs M >= N >= 1, got M={m}, N={n}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let sa = alpha.sqrt();
    let (mf, nf) = (m as f64, n as f64);
    let data = if sa <= 1.0 / mf {
        mf * delta / (1.0 + alpha * mf * mf)
    } else {
        delta / (2.0 * sa)
    };
    let approx = if sa <= 1.0 / (2.0 * nf) {
        nf * alpha * rho
    } else {
        0.5 * sa * rho
    };
    Ok(data + approx)
}

/// Expected squared error of `T_α^(M) y^δ − x†` for `x† = Σ_{i≤N} c_i v_i`
/// and noise with mode variances `β_i²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedErrorModel {
    pub c: Vec<f64>,
    pub beta2: Vec<f64>,
    pub sigma: Vec<f64>,
    pub alpha: f64,
}

impl ExpectedErrorModel {
    pub fn new(c: Vec<f64>, beta2: Vec<f64>, sigma: Vec<f64>, alpha: f64) -> Result<Self> {
        if c.len() > sigma.len() {
            return Err(Error::invalid(format!(
                "{} coefficients but only {} singular values",
                c.len(),
                sigma.len()
            )));
        }
        check_dim(sigma.len(), beta2.len())?;
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        if beta2.iter().any(|b| !(*b >= 0.0)) || sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("noise variances and singular values must be >= 0"));
        }
        Ok(ExpectedErrorModel { c, beta2, sigma, alpha })
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn modes(&self) -> usize {
        self.sigma.len()
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        ExpectedErrorModel::new(self.c.clone(), self.beta2.clone(), self.sigma.clone(), alpha)
    }

    /// `a_i = α/(σ_i²+α)` (0-based index).
    pub fn a(&self, i: usize) -> f64 {
        self.alpha / (self.sigma[i] * self.sigma[i] + self.alpha)
    }

    /// `b_i = σ_i/(σ_i²+α)` (0-based index).
    pub fn b(&self, i: usize) -> f64 {
        self.sigma[i] / (self.sigma[i] * self.sigma[i] + self.alpha)
    }

    pub fn expected_sq_error(&self, m: usize) -> Result<f64> {
        if m > self.modes() {
            return Err(Error::invalid(format!(
                "truncation level {m} exceeds {} modes",
                self.modes()
            )));
        }
        let n = self.n();
        let mut total = 0.0;
        for i in 0..m.min(n) {
            let (a, b) = (self.a(i), self.b(i));
            total += a * a * self.c[i] * self.c[i] + b * b * self.beta2[i];
        }
        for i in n..m {
            let b = self.b(i);
            total += b * b * self.beta2[i];
        }
        for i in m..n {
            total += self.c[i] * self.c[i];
        }
        Ok(total)
    }

    /// Expected errors for `M = 0..=modes`.
    pub fn curve(&self) -> Vec<f64> {
        (0..=self.modes())
            .map(|m| self.expected_sq_error(m).expect("m within range"))
            .collect()
    }

    /// Smallest α with `2α ≥ max{0, max_{m<N} β²_{m+1}/c²_{m+1} − σ²_{m+1}}`.
    pub fn alpha_threshold(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            if self.c[i] == 0.0 {
                return Err(Error::invalid(format!("coefficient c_{} is zero", i + 1)));
            }
            let v = self.beta2[i] / (self.c[i] * self.c[i]) - self.sigma[i] * self.sigma[i];
            worst = worst.max(v);
        }
        Ok(worst / 2.0)
    }
}

pub fn alpha_threshold(model: &ExpectedErrorModel) -> Result<f64> {
    model.alpha_threshold()
}

/// Index of the smallest value, preferring the earliest entry within `tol`.
pub fn argmin_first(values: &[f64], tol: f64) -> Option<usize> {
    let min = values.iter().copied().filter(|v| !v.is_nan()).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    values.iter().position(|&v| v <= min + tol)
}

/// Write `M,expected_sq_error,alpha` rows for `M = 0..=modes`.
pub fn write_expected_error_table(path: impl AsRef<Path>, model: &ExpectedErrorModel) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["M", "expected_sq_error", "alpha"])?;
    for (m, e) in model.curve().into_iter().enumerate() {
        w.write_record([m.to_string(), e.to_string(), model.alpha.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Tikhonov restricted to the span of the leading basis vectors.
#[derive(Debug, Clone)]
pub struct SubspaceProblem {
    pub basis: DMatrix<f64>,
    pub composed: DMatrix<f64>,
}

impl SubspaceProblem {
    /// `B_M` and `A_M = A B_M` for the first `m` columns of `basis`.
    pub fn new(op: &DenseOperator, basis: &DMatrix<f64>, m: usize) -> Result<Self> {
        check_dim(op.cols(), basis.nrows())?;
        if m > basis.ncols() {
            return Err(Error::invalid(format!(
                "subspace dimension {m} exceeds basis size {}",
                basis.ncols()
            )));
        }
        let b = basis.columns(0, m).into_owned();
        let composed = op.matrix() * &b;
        Ok(SubspaceProblem { basis: b, composed })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Minimizer of `½‖y − A_M w‖² + (α/2)‖B_M w‖²`, returned as `B_M w`.
    pub fn solve(&self, y: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
        check_dim(self.composed.nrows(), y.len())?;
        if !(alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
        }
        if self.dim() == 0 {
            return Ok(DVector::zeros(self.basis.nrows()));
        }
        let mut normal = self.composed.tr_mul(&self.composed);
        if alpha > 0.0 {
            normal += self.basis.tr_mul(&self.basis) * alpha;
        }
        let rhs = self.composed.tr_mul(y);
        let chol = Cholesky::new(normal).ok_or(Error::Singular)?;
        Ok(&self.basis * chol.solve(&rhs))
    }
}

pub fn subspace_reconstruct(
    op: &DenseOperator,
    basis: &DMatrix<f64>,
    m: usize,
    y: &DVector<f64>,
    alpha: f64,
) -> Result<DVector<f64>> {
    SubspaceProblem::new(op, basis, m)?.solve(y, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::svd_basis;
    use crate::linop::build_integration_operator;
    use crate::rng;
    use crate::tikhonov;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn sample_y(n: usize) -> DVector<f64> {
        DVector::from_fn(n, |i, _| ((i as f64) * 0.61).cos() + 0.1 * i as f64)
    }

    #[test]
    fn truncated_reconstruct_cases() {
        let op = build_integration_operator(12).unwrap();
        let y = sample_y(12);
        let zero = truncated_reconstruct(&op, &y, TruncatedScheme::new(0, 0.1).unwrap()).unwrap();
        assert_eq!(zero, DVector::zeros(12));

        let full = truncated_reconstruct(&op, &y, TruncatedScheme::new(12, 0.02).unwrap()).unwrap();
        let tik = tikhonov::reconstruct(&op, &y, 0.02).unwrap();
        assert!((full - tik).amax() < 1e-10);

        let tsvd = truncated_reconstruct(&op, &y, TruncatedScheme::new(12, 0.0).unwrap()).unwrap();
        let pinv = op.matrix().clone().pseudo_inverse(1e-14).unwrap() * &y;
        assert!((tsvd - pinv).amax() < 1e-8);

        assert!(truncated_reconstruct(&op, &y, TruncatedScheme { m: 13, alpha: 0.1 }).is_err());
        assert!(TruncatedScheme::new(2, -1.0).is_err());
    }

    #[test]
    fn truncated_bound_examples() {
        assert_abs_diff_eq!(
            truncated_wc_bound(4, 2, 1.0 / 64.0, 1.0, 1.0).unwrap(),
            3.23125,
            epsilon = 1e-14
        );
        // √α = 1/M = 1/(2N): the branches meet
        let (m, n) = (6, 3);
        let alpha = 1.0 / 36.0;
        let at = truncated_wc_bound(m, n, alpha, 0.3, 0.7).unwrap();
        let above = truncated_wc_bound(m, n, alpha * (1.0 + 1e-12), 0.3, 0.7).unwrap();
        assert!((at - above).abs() < 1e-10);
        assert_abs_diff_eq!(at, 0.5 * (0.3 / alpha.sqrt() + alpha.sqrt() * 0.7), epsilon = 1e-12);
        // fourth branch is the classical bound
        assert_abs_diff_eq!(
            truncated_wc_bound(10, 3, 0.2, 0.1, 1.0).unwrap(),
            tikhonov::wc_bound(0.2, 0.1, 1.0),
            epsilon = 1e-15
        );
        assert!(truncated_wc_bound(2, 3, 0.1, 0.1, 1.0).is_err());
        assert!(truncated_wc_bound(3, 3, 0.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn truncated_bound_dominates_brute_force_sup() {
        for m in 1..=30 {
            for k in 1..=60 {
                let alpha = (k as f64 / 60.0).powi(3);
                let sup = (1..=m)
                    .map(|j| j as f64 / (1.0 + alpha * (j * j) as f64))
                    .fold(0.0, f64::max);
                let data = truncated_wc_bound(m, 1, alpha, 1.0, 0.0).unwrap();
                assert!(sup <= data * (1.0 + 1e-12), "m={m} alpha={alpha}");
            }
        }
    }

    #[test]
    fn expected_error_examples() {
        let model = ExpectedErrorModel::new(vec![1.0], vec![0.01], vec![1.0], 0.1).unwrap();
        assert_abs_diff_eq!(model.expected_sq_error(1).unwrap(), 0.02 / 1.21, epsilon = 1e-15);

        let sigma: Vec<f64> = (1..=6).map(|j| 1.0 / j as f64).collect();
        let c = vec![0.5, -0.3, 0.2];
        let model = ExpectedErrorModel::new(c.clone(), vec![0.01; 6], sigma.clone(), 0.2).unwrap();
        assert_abs_diff_eq!(
            model.expected_sq_error(0).unwrap(),
            c.iter().map(|v| v * v).sum::<f64>(),
            epsilon = 1e-15
        );
        assert!(model.expected_sq_error(7).is_err());

        let noiseless = ExpectedErrorModel::new(c, vec![0.0; 6], sigma, 1e-12).unwrap();
        assert!(noiseless.expected_sq_error(4).unwrap() < 1e-18);
    }

    #[test]
    fn increments_above_n_are_exact() {
        let sigma: Vec<f64> = (1..=10).map(|j| 1.0 / j as f64).collect();
        let model =
            ExpectedErrorModel::new(vec![0.4, -0.7, 0.3, 0.9], vec![0.01; 10], sigma, 0.05).unwrap();
        let curve = model.curve();
        for m in 4..10 {
            let b = model.b(m);
            assert!((curve[m + 1] - curve[m] - b * b * 0.01).abs() <= 1e-14);
        }
    }

    #[test]
    fn threshold_examples() {
        let sigma = vec![1.0, 0.5];
        let c = vec![0.3, 0.1];
        let beta2 = vec![0.09, 0.04];
        let model = ExpectedErrorModel::new(c.clone(), beta2, sigma.clone(), 1.0).unwrap();
        assert_abs_diff_eq!(model.alpha_threshold().unwrap(), 1.875, epsilon = 1e-14);

        let matched: Vec<f64> = c.iter().zip(&sigma).map(|(c, s)| (c * s).powi(2)).collect();
        let model = ExpectedErrorModel::new(c.clone(), matched, sigma.clone(), 1.0).unwrap();
        assert!(model.alpha_threshold().unwrap().abs() < 1e-15);

        let model = ExpectedErrorModel::new(c, vec![0.0; 2], sigma.clone(), 1.0).unwrap();
        assert_eq!(alpha_threshold(&model).unwrap(), 0.0);

        let model = ExpectedErrorModel::new(vec![0.2, 0.0], vec![0.01; 2], sigma, 1.0).unwrap();
        assert!(model.alpha_threshold().is_err());
    }

    #[test]
    fn argmin_equals_n_above_threshold() {
        let sigma: Vec<f64> = (1..=12).map(|j| 1.0 / j as f64).collect();
        let c = vec![0.8, -0.5, 0.6, 0.4, -0.9];
        let base = ExpectedErrorModel::new(c, vec![0.01; 12], sigma, 1.0).unwrap();
        let thr = base.alpha_threshold().unwrap();
        for factor in [1.0, 1.5, 4.0] {
            let model = base.with_alpha((thr * factor).max(1e-3)).unwrap();
            assert_eq!(argmin_first(&model.curve(), 1e-12), Some(5));
        }
    }

    #[test]
    fn argmin_tie_break() {
        assert_eq!(argmin_first(&[3.0, 1.0, 1.0, 2.0], 1e-12), Some(1));
        assert_eq!(argmin_first(&[1.0 + 1e-13, 1.0], 1e-12), Some(0));
        assert_eq!(argmin_first(&[], 1e-12), None);
    }

    #[test]
    fn monte_carlo_matches_model() {
        let sigma = vec![1.0, 0.5, 1.0 / 3.0];
        let c = vec![0.7, -0.4];
        let delta = 0.1;
        let alpha = 0.05;
        let model = ExpectedErrorModel::new(c.clone(), vec![delta * delta; 3], sigma.clone(), alpha).unwrap();
        let draws = 100_000;
        for m in 0..=3 {
            let mut s = rng::stream(17, &[m as u64]);
            let mut acc = 0.0;
            for _ in 0..draws {
                let mut err = 0.0;
                for i in 0..3 {
                    let z: f64 = StandardNormal.sample(&mut s);
                    let eta = delta * z;
                    let ci = c.get(i).copied().unwrap_or(0.0);
                    let rec = if i < m {
                        sigma[i] / (sigma[i] * sigma[i] + alpha) * (sigma[i] * ci + eta)
                    } else {
                        0.0
                    };
                    err += (rec - ci) * (rec - ci);
                }
                acc += err;
            }
            let mc = acc / draws as f64;
            let exact = model.expected_sq_error(m).unwrap();
            assert!((mc - exact).abs() <= 0.02 * exact, "m={m}: {mc} vs {exact}");
        }
    }

    #[test]
    fn subspace_matches_truncated_for_svd_basis() {
        let op = build_integration_operator(20).unwrap();
        let basis = svd_basis(&op).unwrap();
        let y = sample_y(20);
        for m in [0, 1, 5, 20] {
            let a = subspace_reconstruct(&op, &basis.vectors, m, &y, 0.03).unwrap();
            let b = truncated_reconstruct(&op, &y, TruncatedScheme { m, alpha: 0.03 }).unwrap();
            assert!((a - b).amax() < 1e-8, "m={m}");
        }
        let eye = DMatrix::identity(20, 20);
        let full = subspace_reconstruct(&op, &eye, 20, &y, 0.03).unwrap();
        assert!((full - tikhonov::reconstruct(&op, &y, 0.03).unwrap()).amax() < 1e-8);
        let zero = subspace_reconstruct(&op, &eye, 7, &DVector::zeros(20), 0.03).unwrap();
        assert_eq!(zero.amax(), 0.0);
        assert!(subspace_reconstruct(&op, &eye, 21, &y, 0.03).is_err());
    }

    #[test]
    fn composed_columns_match_operator() {
        let op = build_integration_operator(9).unwrap();
        let basis = DMatrix::from_fn(9, 4, |i, j| ((i * 3 + j) as f64 * 0.4).sin());
        let p = SubspaceProblem::new(&op, &basis, 4).unwrap();
        for j in 0..4 {
            let col = op.apply(&basis.column(j).into_owned()).unwrap();
            assert!((p.composed.column(j) - col).amax() <= 1e-12);
        }
    }

    #[test]
    fn restricted_operator_norm_estimate() {
        // On X_N spanned by the first N singular vectors, the Tikhonov
        // operator is bounded by sup_{j≤N} σ_j/(σ_j²+α) ≤ 1/σ_N.
        let op = build_integration_operator(50).unwrap();
        let svd = op.svd().unwrap();
        let n = 8;
        let sigma_n = svd.sigma[n - 1];
        for k in 1..=200 {
            let alpha = k as f64 / 200.0;
            let norm = (0..n)
                .map(|j| svd.sigma[j] / (svd.sigma[j].powi(2) + alpha))
                .fold(0.0, f64::max);
            assert!(norm <= 1.0 / sigma_n * (1.0 + 1e-12));
        }
        // σ_j ≈ 1/(2j−1) after normalization, so 1/σ_N ≤ C·N with C = 2
        assert!(1.0 / sigma_n <= 2.0 * n as f64);
    }
}

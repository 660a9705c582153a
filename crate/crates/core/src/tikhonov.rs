//! Tikhonov reconstruction through filter functions, worst-case error bounds
//! and the a-priori parameter choice `α(δ) = δ/ρ`.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linop::DenseOperator;

/// Tikhonov filter `F_α(σ) = σ² / (σ² + α)`.
pub fn filter_value(sigma: f64, alpha: f64) -> f64 {
    let s2 = sigma * sigma;
    s2 / (s2 + alpha)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "regularization parameter must be positive and finite, got {alpha}"
        )))
    }
}

/// `(A*A + αI)^{-1} A* y` as the filtered SVD sum
/// `Σ_j F_α(σ_j) σ_j^{-1} ⟨y, u_j⟩ v_j`.
pub fn reconstruct(op: &DenseOperator, y: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    check_dim(op.rows(), y.len())?;
    let svd = op.svd()?;
    // F_α(σ)/σ = σ/(σ²+α) avoids the 0/0 at σ = 0
    let coeff = DVector::from_fn(svd.rank_count(), |j, _| {
        let s = svd.sigma[j];
        s / (s * s + alpha) * svd.u.column(j).dot(y)
    });
    Ok(&svd.v * coeff)
}

/// Same estimator through a Cholesky solve of the normal equations.
pub fn reconstruct_direct(op: &DenseOperator, y: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    let rhs = op.apply_adjoint(y)?;
    let a = op.matrix();
    let mut normal = a.tr_mul(a);
    for i in 0..normal.nrows() {
        normal[(i, i)] += alpha;
    }
    let chol = Cholesky::new(normal).ok_or(Error::Singular)?;
    Ok(chol.solve(&rhs))
}

/// Worst-case error functional for Tikhonov regularization with `‖A‖ = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WcBound {
    pub alpha: f64,
    pub delta: f64,
    pub rho: f64,
}

impl WcBound {
    /// `½(δ/√α + √α ρ)` for `α ≤ 1`, `(δ + αρ)/(1 + α)` for `α > 1`.
    pub fn eval(&self) -> f64 {
        wc_bound(self.alpha, self.delta, self.rho)
    }
}

pub fn wc_bound(alpha: f64, delta: f64, rho: f64) -> f64 {
    if alpha <= 1.0 {
        let sa = alpha.sqrt();
        0.5 * (delta / sa + sa * rho)
    } else {
        (delta + alpha * rho) / (1.0 + alpha)
    }
}

/// Outcome of the a-priori rule: either a finite parameter or the choice
/// `α = ∞`, whose reconstruction is identically zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegChoice {
    Alpha(f64),
    ZeroReconstruction,
}

impl RegChoice {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            RegChoice::Alpha(a) => Some(*a),
            RegChoice::ZeroReconstruction => None,
        }
    }

    /// Worst-case bound of this choice. The zero reconstruction has error
    /// `‖x†‖ ≤ ‖A‖‖z‖ ≤ ρ`, the `α → ∞` limit of the second branch.
    pub fn wc_bound(&self, delta: f64, rho: f64) -> f64 {
        match self {
            RegChoice::Alpha(a) => wc_bound(*a, delta, rho),
            RegChoice::ZeroReconstruction => rho,
        }
    }

    pub fn reconstruct(&self, op: &DenseOperator, y: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            RegChoice::Alpha(a) => reconstruct(op, y, *a),
            RegChoice::ZeroReconstruction => {
                check_dim(op.rows(), y.len())?;
                Ok(DVector::zeros(op.cols()))
            }
        }
    }

    /// CSV representation; the zero reconstruction is written as `inf`.
    pub fn to_field(&self) -> String {
        match self {
            RegChoice::Alpha(a) => a.to_string(),
            RegChoice::ZeroReconstruction => "inf".to_string(),
        }
    }
}

/// `α(δ) = δ/ρ` for `δ ≤ ρ`, zero reconstruction otherwise.
pub fn optimal_alpha(delta: f64, rho: f64) -> Result<RegChoice> {
    if !(delta >= 0.0) || !(rho > 0.0) {
        return Err(Error::invalid(format!(
            "parameter rule needs delta >= 0 and rho > 0, got delta={delta}, rho={rho}"
        )));
    }
    if delta <= rho {
        Ok(RegChoice::Alpha(delta / rho))
    } else {
        Ok(RegChoice::ZeroReconstruction)
    }
}

/// The a-priori rule for a fixed source constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRule {
    pub rho: f64,
}

impl ParamRule {
    pub fn choose(&self, delta: f64) -> Result<RegChoice> {
        optimal_alpha(delta, self.rho)
    }
}

/// `wc(α(δ̄), δ) / wc(α(δ), δ)`, defined when both parameters lie in the
/// first branch `0 < α ≤ 1`. Equals `½(√(δ/δ̄) + √(δ̄/δ))`.
pub fn relative_wc(delta_bar: f64, delta: f64, rho: f64) -> Result<f64> {
    let in_branch = |d: f64| d > 0.0 && d <= rho;
    if !(rho > 0.0) || !in_branch(delta_bar) || !in_branch(delta) {
        return Err(Error::invalid(format!(
            "relative worst-case error needs 0 < delta, delta_bar <= rho \
             (got delta_bar={delta_bar}, delta={delta}, rho={rho})"
        )));
    }
    Ok(wc_bound(delta_bar / rho, delta, rho) / wc_bound(delta / rho, delta, rho))
}

/// Refined bound for truths in a subspace `X_N` whose restricted Tikhonov
/// operator is bounded by `C·N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceWcBound {
    pub alpha: f64,
    pub delta: f64,
    pub rho: f64,
    pub c: f64,
    pub n: usize,
}

impl SubspaceWcBound {
    /// `δ/(2√α) + √α ρ/2` if `√α > 1/(2CN)`, else `δ/(2√α) + αCNρ`.
    pub fn eval(&self) -> Result<f64> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "subspace bound needs 0 < alpha <= 1, got {}",
                self.alpha
            )));
        }
        if !(self.c > 0.0) || self.n == 0 {
            return Err(Error::invalid("subspace bound needs C > 0 and N >= 1"));
        }
        let sa = self.alpha.sqrt();
        let cn = self.c * self.n as f64;
        let approx = if sa > 1.0 / (2.0 * cn) {
            0.5 * sa * self.rho
        } else {
            self.alpha * cn * self.rho
        };
        Ok(self.delta / (2.0 * sa) + approx)
    }
}

pub fn subspace_wc_bound(alpha: f64, delta: f64, rho: f64, c: f64, n: usize) -> Result<f64> {
    SubspaceWcBound {
        alpha,
        delta,
        rho,
        c,
        n,
    }
    .eval()
}

/// Write `alpha,delta,rho,bound` rows.
pub fn write_bound_curve(path: impl AsRef<Path>, rows: &[WcBound]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["alpha", "delta", "rho", "bound"])?;
    for b in rows {
        w.write_record([
            b.alpha.to_string(),
            b.delta.to_string(),
            b.rho.to_string(),
            b.eval().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write `delta_bar,delta,ratio` rows for the mismatch ratio.
pub fn write_ratio_curve(path: impl AsRef<Path>, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["delta_bar", "delta", "ratio"])?;
    for (db, d, r) in rows {
        w.write_record([db.to_string(), d.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `max_j σ_j/(σ_j²+α)` and `max_j ασ_j/(σ_j²+α)` over a given spectrum:
/// the data- and approximation-error amplification factors.
pub fn filter_amplification(sigma: &[f64], alpha: f64) -> (f64, f64) {
    sigma.iter().fold((0.0, 0.0), |(d, a), &s| {
        let data = s / (s * s + alpha);
        let approx = (1.0 - filter_value(s, alpha)) * s;
        (f64::max(d, data), f64::max(a, approx))
    })
}

/// Dense Tikhonov reconstruction operator `(AᵀA + αI)^{-1} Aᵀ`.
pub fn reconstruction_matrix(op: &DenseOperator, alpha: f64) -> Result<DMatrix<f64>> {
    check_alpha(alpha)?;
    let svd = op.svd()?;
    let mut vs = svd.v.clone();
    for (j, mut col) in vs.column_iter_mut().enumerate() {
        let s = svd.sigma[j];
        col *= s / (s * s + alpha);
    }
    Ok(vs * svd.u.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::build_integration_operator;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn filter_examples() {
        assert_eq!(filter_value(1.0, 1.0), 0.5);
        assert_eq!(filter_value(0.0, 0.3), 0.0);
    }

    #[test]
    fn filter_sup_over_grid() {
        // grid oracle for sup_σ F_α(σ)/σ = 1/(2√α), attained at σ = √α
        for alpha in [0.01, 0.09, 0.25, 1.0] {
            let (best_s, best) = (1..=100_000)
                .map(|i| i as f64 / 100_000.0)
                .map(|s| (s, filter_value(s, alpha) / s))
                .fold((0.0, 0.0), |acc, p| if p.1 > acc.1 { p } else { acc });
            assert!((best - 1.0 / (2.0 * alpha.sqrt())).abs() < 1e-8);
            assert!((best_s - alpha.sqrt()).abs() < 1e-4);
        }
    }

    #[test]
    fn reconstruct_basic_cases() {
        let op = DenseOperator::identity(3);
        let y = DVector::from_vec(vec![2.0, -4.0, 1.0]);
        assert_eq!(reconstruct(&op, &y, 1.0).unwrap(), &y / 2.0);
        let zero = reconstruct(&op, &DVector::zeros(3), 0.5).unwrap();
        assert_eq!(zero.amax(), 0.0);
        assert!(reconstruct(&op, &y, 0.0).is_err());
        assert!(reconstruct(&op, &y, -1.0).is_err());
        assert!(reconstruct(&op, &DVector::zeros(2), 1.0).is_err());
    }

    #[test]
    fn svd_and_direct_solve_agree() {
        let op = build_integration_operator(50).unwrap();
        let y = DVector::from_fn(50, |i, _| ((i * i) as f64 * 0.37).sin());
        for alpha in [1e-4, 1e-2, 0.3, 5.0] {
            let a = reconstruct(&op, &y, alpha).unwrap();
            let b = reconstruct_direct(&op, &y, alpha).unwrap();
            assert!((a - b).amax() < 1e-8, "alpha={alpha}");
        }
    }

    #[test]
    fn wc_bound_examples() {
        assert_abs_diff_eq!(wc_bound(1.0, 1.0, 1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(wc_bound(4.0, 1.0, 1.0), 1.0, epsilon = 1e-15);
        let (delta, rho) = (0.02, 0.7);
        assert_abs_diff_eq!(wc_bound(delta / rho, delta, rho), (rho * delta).sqrt(), epsilon = 1e-15);
        // continuity at α = 1
        let (d, r) = (0.3, 2.0);
        let left = wc_bound(1.0, d, r);
        let right = (d + (1.0 + 1e-13) * r) / (2.0 + 1e-13);
        assert!((left - right).abs() < 1e-12);
        assert_eq!(WcBound { alpha: 0.25, delta: 0.1, rho: 1.0 }.eval(), wc_bound(0.25, 0.1, 1.0));
    }

    #[test]
    fn optimal_alpha_examples() {
        assert_eq!(optimal_alpha(0.1, 1.0).unwrap(), RegChoice::Alpha(0.1));
        assert_eq!(optimal_alpha(0.5, 0.5).unwrap(), RegChoice::Alpha(1.0));
        let big = optimal_alpha(2.0, 1.0).unwrap();
        assert_eq!(big, RegChoice::ZeroReconstruction);
        let op = build_integration_operator(4).unwrap();
        let x = big.reconstruct(&op, &DVector::from_element(4, 1.0)).unwrap();
        assert_eq!(x, DVector::zeros(4));
        assert_eq!(big.to_field(), "inf");
        assert!(optimal_alpha(-0.1, 1.0).is_err());
        assert!(optimal_alpha(0.1, 0.0).is_err());
    }

    #[test]
    fn optimal_alpha_minimizes_bound_on_grid() {
        let (delta, rho) = (0.03, 0.6);
        let star = delta / rho;
        let mut grid: Vec<f64> = (1..400).map(|i| i as f64 / 200.0).collect();
        grid.push(star);
        let best = grid
            .iter()
            .copied()
            .min_by(|a, b| wc_bound(*a, delta, rho).partial_cmp(&wc_bound(*b, delta, rho)).unwrap())
            .unwrap();
        assert_eq!(best, star);
    }

    #[test]
    fn relative_wc_examples() {
        assert_abs_diff_eq!(relative_wc(0.01, 0.01, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(relative_wc(0.001, 0.004, 1.0).unwrap(), 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(relative_wc(0.001, 0.1, 1.0).unwrap(), 5.05, epsilon = 1e-12);
        assert!(relative_wc(0.1, 2.0, 1.0).is_err());
        assert!(relative_wc(0.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn subspace_bound_examples() {
        // C = N = 1, α = 1 → δ/2 + ρ/2
        assert_abs_diff_eq!(subspace_wc_bound(1.0, 0.4, 0.6, 1.0, 1).unwrap(), 0.5, epsilon = 1e-15);
        // kink at √α = 1/(2CN)
        let (c, n, rho) = (1.5, 4, 0.8);
        let sa = 1.0 / (2.0 * c * n as f64);
        let at = subspace_wc_bound(sa * sa, 0.0, rho, c, n).unwrap();
        assert!((at - 0.5 * sa * rho).abs() < 1e-12);
        let just_above = subspace_wc_bound((sa * (1.0 + 1e-12)).powi(2), 0.0, rho, c, n).unwrap();
        assert!((at - just_above).abs() < 1e-12);
        // noiseless limit α → 0 decays like αCNρ
        for alpha in [1e-4, 1e-6] {
            let b = subspace_wc_bound(alpha, 0.0, rho, c, n).unwrap();
            assert_abs_diff_eq!(b, alpha * c * n as f64 * rho, epsilon = 1e-15);
        }
        assert!(subspace_wc_bound(1.5, 0.1, 1.0, 1.0, 1).is_err());
        assert!(subspace_wc_bound(0.0, 0.1, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn filter_estimates_hold_on_actual_spectrum() {
        let op = build_integration_operator(50).unwrap();
        let sigma: Vec<f64> = op.svd().unwrap().sigma.iter().copied().collect();
        for i in 1..=100 {
            let alpha = i as f64 / 100.0;
            let (data, approx) = filter_amplification(&sigma, alpha);
            assert!(data <= 1.0 / (2.0 * alpha.sqrt()) + 1e-12);
            assert!(approx <= 0.5 * alpha.sqrt() + 1e-12);
        }
    }

    #[test]
    fn reconstruction_matrix_matches_apply() {
        let op = build_integration_operator(10).unwrap();
        let t = reconstruction_matrix(&op, 0.05).unwrap();
        let y = DVector::from_fn(10, |i, _| i as f64 - 4.5);
        assert!((t * &y - reconstruct(&op, &y, 0.05).unwrap()).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn relative_wc_is_symmetric_and_at_least_one(a in 1e-4f64..1.0, b in 1e-4f64..1.0) {
            let r1 = relative_wc(a, b, 1.0).unwrap();
            let r2 = relative_wc(b, a, 1.0).unwrap();
            prop_assert!((r1 - r2).abs() <= 1e-12 * r1);
            prop_assert!(r1 >= 1.0 - 1e-15);
            let lambda = b / a;
            prop_assert!((r1 - 0.5 * (lambda.sqrt() + 1.0 / lambda.sqrt())).abs() <= 1e-12 * r1);
        }

        #[test]
        fn subspace_bound_never_exceeds_classical(alpha in 1e-6f64..=1.0, delta in 0.0f64..2.0,
                                                  rho in 0.01f64..5.0, c in 0.1f64..3.0, n in 1usize..50) {
            let refined = subspace_wc_bound(alpha, delta, rho, c, n).unwrap();
            prop_assert!(refined <= wc_bound(alpha, delta, rho) * (1.0 + 1e-14));
        }
    }
}

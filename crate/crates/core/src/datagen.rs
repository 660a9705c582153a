//! Synthetic data protocols, noise, bases and source-constant estimation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::linop::{weighted_norm, DenseOperator, SIGN_EPS};
use crate::rng::{self, domain};

/// A ground truth satisfying the source condition `x† = A* z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSample {
    pub x_true: DVector<f64>,
    pub z: DVector<f64>,
    /// `‖z‖_Y` in the discretized L² norm of the data space.
    pub rho_i: f64,
}

impl SourceSample {
    fn from_source(op: &DenseOperator, z: DVector<f64>) -> Result<Self> {
        let x_true = op.apply_adjoint(&z)?;
        let rho_i = weighted_norm(&z);
        Ok(SourceSample { x_true, z, rho_i })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyMeasurement {
    pub y_true: DVector<f64>,
    pub y_noisy: DVector<f64>,
    pub delta: f64,
    pub seed_path: Vec<u64>,
}

impl NoisyMeasurement {
    pub fn noise(&self) -> DVector<f64> {
        &self.y_noisy - &self.y_true
    }

    /// `‖y^δ − y†‖_Y` of this realization.
    pub fn realized_delta(&self) -> f64 {
        weighted_norm(&self.noise())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Svd,
    Coordinate,
    Pca,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Svd => "svd",
            BasisKind::Coordinate => "coordinate",
            BasisKind::Pca => "pca",
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd" => Ok(BasisKind::Svd),
            "coordinate" => Ok(BasisKind::Coordinate),
            "pca" => Ok(BasisKind::Pca),
            other => Err(Error::Config(format!("unknown basis '{other}'"))),
        }
    }
}

/// Orthonormal vectors `b_1..b_K` stored as the columns of an `n × K` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub kind: BasisKind,
    pub vectors: DMatrix<f64>,
    /// `b_j = e_{permutation[j]}` for the coordinate basis.
    pub permutation: Option<Vec<usize>>,
}

impl Basis {
    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn size(&self) -> usize {
        self.vectors.ncols()
    }

    /// `B_M = [b_1, …, b_M]`.
    pub fn leading(&self, m: usize) -> Result<DMatrix<f64>> {
        if m > self.size() {
            return Err(Error::invalid(format!(
                "requested {m} basis vectors, basis has {}",
                self.size()
            )));
        }
        Ok(self.vectors.columns(0, m).into_owned())
    }
}

/// Right singular vectors of the operator, ordered by decreasing σ.
pub fn svd_basis(op: &DenseOperator) -> Result<Basis> {
    Ok(Basis {
        kind: BasisKind::Svd,
        vectors: op.svd()?.v.clone(),
        permutation: None,
    })
}

/// Unit vectors in a seeded random order. The permutation is kept so the
/// nested subspaces `span{b_1..b_M}` are reproducible.
pub fn coordinate_basis(n: usize, seed: u64) -> Basis {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, &[domain::PERMUTATION, n as u64]));
    let mut vectors = DMatrix::zeros(n, n);
    for (j, &k) in perm.iter().enumerate() {
        vectors[(k, j)] = 1.0;
    }
    Basis {
        kind: BasisKind::Coordinate,
        vectors,
        permutation: Some(perm),
    }
}

/// Top-`k` principal directions of the mean-centered sample covariance.
pub fn pca_basis(data: &[DVector<f64>], k: usize) -> Result<Basis> {
    let Some(first) = data.first() else {
        return Err(Error::invalid("PCA needs at least one sample"));
    };
    let n = first.len();
    if k > n {
        return Err(Error::invalid(format!("PCA rank {k} exceeds dimension {n}")));
    }
    if data.len() < k {
        return Err(Error::invalid(format!(
            "PCA with {k} components needs at least {k} samples, got {}",
            data.len()
        )));
    }
    if k == 0 {
        return Ok(Basis {
            kind: BasisKind::Pca,
            vectors: DMatrix::zeros(n, 0),
            permutation: None,
        });
    }
    let mut mean = DVector::zeros(n);
    for x in data {
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        mean += x;
    }
    mean /= data.len() as f64;
    let mut cov = DMatrix::zeros(n, n);
    for x in data {
        let c = x - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= data.len().max(2) as f64 - 1.0;

    let eig = SymmetricEigen::try_new(cov, f64::EPSILON, 0).ok_or(Error::Singular)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut vectors = DMatrix::zeros(n, k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        let col = eig.eigenvectors.column(src);
        let flip = col
            .iter()
            .find(|x| x.abs() > SIGN_EPS)
            .is_some_and(|x| *x < 0.0);
        vectors.set_column(dst, &(if flip { -col } else { col.into_owned() }));
    }
    Ok(Basis {
        kind: BasisKind::Pca,
        vectors,
        permutation: None,
    })
}

/// Selected singular-mode indices (0-based) spanning `X_N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubspaceSpec {
    indices: Vec<usize>,
}

impl SubspaceSpec {
    pub fn new(indices: Vec<usize>, n_modes: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("subspace needs at least one index"));
        }
        let mut seen = vec![false; n_modes];
        for &k in &indices {
            if k >= n_modes {
                return Err(Error::invalid(format!(
                    "subspace index {k} out of range for {n_modes} modes"
                )));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::invalid(format!("duplicate subspace index {k}")));
            }
        }
        Ok(SubspaceSpec { indices })
    }

    /// The first `n` modes.
    pub fn leading(n: usize, n_modes: usize) -> Result<Self> {
        SubspaceSpec::new((0..n).collect(), n_modes)
    }

    /// `n` distinct modes drawn uniformly without replacement.
    pub fn random(n: usize, n_modes: usize, seed: u64) -> Result<Self> {
        if n > n_modes {
            return Err(Error::invalid(format!(
                "cannot pick {n} of {n_modes} modes"
            )));
        }
        let mut r = rng::stream(seed, &[domain::SUBSPACE_INDICES]);
        SubspaceSpec::new(index::sample(&mut r, n_modes, n).into_vec(), n_modes)
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

fn uniform_pm1() -> Uniform<f64> {
    Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds")
}

/// `z_i = Σ_j d_j u_j` over all left singular vectors, `d_j ~ U[-1, 1]`,
/// and `x_i = A* z_i`.
pub fn sample_source_data(op: &DenseOperator, count: usize, seed: u64) -> Result<Vec<SourceSample>> {
    let all: Vec<usize> = (0..op.svd()?.rank_count()).collect();
    sample_modes(op, &all, count, seed, domain::SOURCE)
}

/// Restriction of [`sample_source_data`] to the modes selected by `spec`.
pub fn sample_subspace_data(
    op: &DenseOperator,
    spec: &SubspaceSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<SourceSample>> {
    let n_modes = op.svd()?.rank_count();
    if let Some(&bad) = spec.indices().iter().find(|&&k| k >= n_modes) {
        return Err(Error::invalid(format!("subspace index {bad} out of range")));
    }
    let tag = if spec.dim() == n_modes && spec.indices().iter().enumerate().all(|(i, &k)| i == k) {
        domain::SOURCE
    } else {
        domain::SUBSPACE
    };
    sample_modes(op, spec.indices(), count, seed, tag)
}

fn sample_modes(
    op: &DenseOperator,
    modes: &[usize],
    count: usize,
    seed: u64,
    tag: u64,
) -> Result<Vec<SourceSample>> {
    let svd = op.svd()?;
    let dist = uniform_pm1();
    (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, &[tag, i as u64]);
            let mut z = DVector::zeros(op.rows());
            for &k in modes {
                let d: f64 = dist.sample(&mut r);
                z.axpy(d, &svd.u.column(k), 1.0);
            }
            SourceSample::from_source(op, z)
        })
        .collect()
}

/// `x_i = Σ_{j ≤ N} c_i^j b_j` with `c_i^j ~ U[-1, 1]`.
pub fn sample_basis_coefficient_data(
    basis: &Basis,
    n: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let b = basis.leading(n)?;
    let dist = uniform_pm1();
    Ok((0..count)
        .map(|i| {
            let mut r = rng::stream(seed, &[domain::BASIS_COEFF, i as u64]);
            let c = DVector::from_fn(n, |_, _| dist.sample(&mut r));
            &b * c
        })
        .collect())
}

/// Add i.i.d. `N(0, δ²)` noise to every component. Deterministic in
/// `seed_path = [master, coordinates...]`.
pub fn add_noise(y_true: &DVector<f64>, delta: f64, seed_path: &[u64]) -> Result<NoisyMeasurement> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!(
            "noise level must be finite and nonnegative, got {delta}"
        )));
    }
    let noise = gaussian_vector(y_true.len(), delta, seed_path);
    Ok(NoisyMeasurement {
        y_true: y_true.clone(),
        y_noisy: y_true + noise,
        delta,
        seed_path: seed_path.to_vec(),
    })
}

/// The noise vector [`add_noise`] would add, without copying the data.
pub fn gaussian_vector(len: usize, delta: f64, seed_path: &[u64]) -> DVector<f64> {
    if delta == 0.0 {
        return DVector::zeros(len);
    }
    let (master, rest) = seed_path.split_first().unwrap_or((&0, &[]));
    let mut path = Vec::with_capacity(rest.len() + 1);
    path.push(domain::NOISE);
    path.extend_from_slice(rest);
    let mut r = rng::stream(*master, &path);
    let normal = Normal::new(0.0, delta).expect("valid standard deviation");
    DVector::from_fn(len, |_, _| normal.sample(&mut r))
}

/// Per-mode noise second moments `β_{η,i}² = E⟨η, u_i⟩²`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub beta2: Vec<f64>,
}

impl NoiseModel {
    pub fn new(beta2: Vec<f64>) -> Result<Self> {
        if beta2.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::invalid("noise moments must be finite and nonnegative"));
        }
        Ok(NoiseModel { beta2 })
    }

    /// White Gaussian noise of componentwise standard deviation `delta`.
    pub fn isotropic(delta: f64, modes: usize) -> Self {
        NoiseModel {
            beta2: vec![delta * delta; modes],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConstantEstimate {
    /// Mean of the per-sample constants; the representative ρ.
    pub rho_mean: f64,
    /// Maximum of the per-sample constants; the strict (pessimistic) ρ.
    pub rho_max: f64,
    pub rho: Vec<f64>,
    /// `‖A* z_i − x_i‖_X` of the minimum-norm source element.
    pub residuals: Vec<f64>,
}

/// `ρ_i = ‖(A*)† x_i‖_Y` for every sample.
pub fn estimate_source_constant(
    op: &DenseOperator,
    samples: &[DVector<f64>],
    rel_tol: f64,
) -> Result<SourceConstantEstimate> {
    if samples.is_empty() {
        return Err(Error::invalid("source constant estimation needs samples"));
    }
    let mut rho = Vec::with_capacity(samples.len());
    let mut residuals = Vec::with_capacity(samples.len());
    for x in samples {
        let z = op.pinv_adjoint_apply(x, rel_tol)?;
        residuals.push(weighted_norm(&(op.apply_adjoint(&z)? - x)));
        rho.push(weighted_norm(&z));
    }
    let rho_mean = rho.iter().sum::<f64>() / rho.len() as f64;
    let rho_max = rho.iter().copied().fold(0.0, f64::max);
    Ok(SourceConstantEstimate {
        rho_mean,
        rho_max,
        rho,
        residuals,
    })
}

const IDX3_MAGIC: u32 = 0x0000_0803;

/// Read an IDX3 unsigned-byte image file; images are flattened row-major and
/// scaled to `[0, 1]`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<DVector<f64>>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or_else(|| Error::format(path, "truncated IDX header"))
    };
    if word(0)? != IDX3_MAGIC as usize {
        return Err(Error::format(path, "bad IDX3 magic"));
    }
    let (count, rows, cols) = (word(1)?, word(2)?, word(3)?);
    let size = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != count * size {
        return Err(Error::format(
            path,
            format!(
                "expected {} pixel bytes, found {}",
                count * size,
                payload.len()
            ),
        ));
    }
    Ok(payload
        .chunks_exact(size.max(1))
        .take(count)
        .map(|img| DVector::from_iterator(size, img.iter().map(|&p| p as f64 / 255.0)))
        .collect())
}

/// Write images (row-major bytes of `rows × cols`) as an IDX3 file.
pub fn write_idx_images(
    path: impl AsRef<Path>,
    images: &[Vec<u8>],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for word in [IDX3_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        w.write_all(&word.to_be_bytes())?;
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: img.len(),
            });
        }
        w.write_all(img)?;
    }
    w.flush()?;
    Ok(())
}

/// Piecewise-constant test images: a few overlapping rectangles and discs
/// of random intensity on a zero background, clipped to `[0, 1]`.
pub fn phantom_images(side: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, &[domain::PHANTOM, side as u64, i as u64]);
            let mut img = DVector::zeros(side * side);
            let shapes = r.random_range(2..=5);
            let s = side as f64;
            for _ in 0..shapes {
                let value: f64 = r.random_range(0.2..1.0);
                let cx = r.random_range(0.2 * s..0.8 * s);
                let cy = r.random_range(0.2 * s..0.8 * s);
                let a = r.random_range(0.1 * s..0.35 * s);
                let b = r.random_range(0.1 * s..0.35 * s);
                let disc = r.random_bool(0.5);
                for row in 0..side {
                    for col in 0..side {
                        let px = col as f64 + 0.5 - cx;
                        let py = row as f64 + 0.5 - cy;
                        let inside = if disc {
                            (px / a).powi(2) + (py / b).powi(2) <= 1.0
                        } else {
                            px.abs() <= a && py.abs() <= b
                        };
                        if inside {
                            img[row * side + col] = value;
                        }
                    }
                }
            }
            img
        })
        .collect()
}

/// Export samples as long-format CSV `sample_id,component,value`.
pub fn write_dataset_csv(path: impl AsRef<Path>, samples: &[DVector<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "component", "value"])?;
    for (i, x) in samples.iter().enumerate() {
        for (j, v) in x.iter().enumerate() {
            w.write_record([i.to_string(), j.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::build_integration_operator;
    use approx::assert_abs_diff_eq;

    fn orthonormal(q: &DMatrix<f64>) -> bool {
        (q.tr_mul(q) - DMatrix::identity(q.ncols(), q.ncols())).amax() < 1e-8
    }

    #[test]
    fn source_samples_satisfy_source_condition() {
        let op = build_integration_operator(20).unwrap();
        let samples = sample_source_data(&op, 10, 5).unwrap();
        for s in &samples {
            assert!((op.apply_adjoint(&s.z).unwrap() - &s.x_true).norm() <= 1e-10);
            assert_abs_diff_eq!(s.rho_i, weighted_norm(&s.z), epsilon = 1e-12);
        }
        // ‖z‖_Y² = mean of d_j² since the u_j are orthonormal and m = n_modes
        let svd = op.svd().unwrap();
        let d = svd.u.tr_mul(&samples[0].z);
        let rms = (d.iter().map(|x| x * x).sum::<f64>() / 20.0).sqrt();
        assert_abs_diff_eq!(samples[0].rho_i, rms, epsilon = 1e-12);
    }

    #[test]
    fn zero_source_gives_zero_sample() {
        let op = build_integration_operator(4).unwrap();
        let s = SourceSample::from_source(&op, DVector::zeros(4)).unwrap();
        assert_eq!(s.x_true.amax(), 0.0);
        assert_eq!(s.rho_i, 0.0);
    }

    #[test]
    fn full_subspace_matches_source_protocol() {
        let op = build_integration_operator(12).unwrap();
        let spec = SubspaceSpec::leading(12, 12).unwrap();
        assert_eq!(
            sample_subspace_data(&op, &spec, 4, 9).unwrap(),
            sample_source_data(&op, 4, 9).unwrap()
        );
    }

    #[test]
    fn subspace_samples_stay_in_subspace() {
        let op = build_integration_operator(30).unwrap();
        let spec = SubspaceSpec::random(6, 30, 2).unwrap();
        let svd = op.svd().unwrap();
        for s in sample_subspace_data(&op, &spec, 20, 3).unwrap() {
            let mut inside = DVector::zeros(30);
            for &k in spec.indices() {
                inside.axpy(svd.v.column(k).dot(&s.x_true), &svd.v.column(k), 1.0);
            }
            assert!((&s.x_true - inside).norm() <= 1e-10);
            for k in (0..30).filter(|k| !spec.indices().contains(k)) {
                assert!(svd.v.column(k).dot(&s.x_true).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn subspace_spec_validation() {
        assert!(SubspaceSpec::new(vec![0, 0], 3).is_err());
        assert!(SubspaceSpec::new(vec![3], 3).is_err());
        assert!(SubspaceSpec::new(vec![], 3).is_err());
        assert!(SubspaceSpec::random(4, 3, 0).is_err());
        let s = SubspaceSpec::random(5, 50, 11).unwrap();
        assert_eq!(s, SubspaceSpec::random(5, 50, 11).unwrap());
    }

    #[test]
    fn basis_coefficients_span_and_moment() {
        let basis = coordinate_basis(10, 4);
        let xs = sample_basis_coefficient_data(&basis, 3, 1, 0).unwrap();
        let perm = basis.permutation.as_ref().unwrap();
        for &k in &perm[3..] {
            assert_eq!(xs[0][k], 0.0);
        }
        let many = sample_basis_coefficient_data(&basis, 1, 100_000, 1).unwrap();
        let k = perm[0];
        let var = many.iter().map(|x| x[k] * x[k]).sum::<f64>() / many.len() as f64;
        assert!((var - 1.0 / 3.0).abs() < 0.05 / 3.0, "{var}");
        assert!(sample_basis_coefficient_data(&basis, 11, 1, 0).is_err());
    }

    #[test]
    fn noise_is_deterministic_and_scaled() {
        let y = DVector::from_element(50, 1.0);
        let clean = add_noise(&y, 0.0, &[1, 2]).unwrap();
        assert_eq!(clean.y_noisy, y);
        let a = add_noise(&y, 0.3, &[7, 1, 2]).unwrap();
        let b = add_noise(&y, 0.3, &[7, 1, 2]).unwrap();
        assert_eq!(a.y_noisy, b.y_noisy);
        assert_ne!(a.y_noisy, add_noise(&y, 0.3, &[7, 1, 3]).unwrap().y_noisy);
        assert!(add_noise(&y, -0.1, &[0]).is_err());
    }

    #[test]
    fn noise_second_moment() {
        let delta = 0.2;
        let y = DVector::zeros(50);
        let reps = 10_000;
        let mean = (0..reps)
            .map(|r| add_noise(&y, delta, &[3, r]).unwrap().realized_delta().powi(2))
            .sum::<f64>()
            / reps as f64;
        assert!((mean - delta * delta).abs() <= 0.03 * delta * delta, "{mean}");
    }

    #[test]
    fn source_constant_recovers_generator_norm() {
        let op = build_integration_operator(25).unwrap();
        let samples = sample_source_data(&op, 5, 8).unwrap();
        let xs: Vec<_> = samples.iter().map(|s| s.x_true.clone()).collect();
        let est = estimate_source_constant(&op, &xs, 1e-10).unwrap();
        for (s, r) in samples.iter().zip(&est.rho) {
            assert!((s.rho_i - r).abs() <= 1e-8);
        }
        assert!(est.residuals.iter().all(|&r| r < 1e-10));
        assert!(est.rho_max >= est.rho_mean);
        let zero = estimate_source_constant(&op, &[DVector::zeros(25)], 1e-10).unwrap();
        assert_eq!(zero.rho_mean, 0.0);
        assert!(estimate_source_constant(&op, &[], 1e-10).is_err());
    }

    #[test]
    fn pca_recovers_a_plane() {
        let n = 6;
        let p1 = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0]).normalize();
        let mut p2 = DVector::from_vec(vec![0.0, 1.0, -1.0, 2.0, 0.0, 0.5]);
        p2 -= &p1 * p1.dot(&p2);
        let p2 = p2.normalize();
        let data: Vec<_> = (0..40)
            .map(|i| {
                let t = i as f64;
                &p1 * (3.0 * (0.37 * t).sin()) + &p2 * (1.5 * (1.3 * t).cos())
            })
            .collect();
        let basis = pca_basis(&data, 2).unwrap();
        assert!(orthonormal(&basis.vectors));
        // principal angles: projections of p1, p2 onto the fitted plane are unit length
        for p in [&p1, &p2] {
            let proj = basis.vectors.tr_mul(p);
            assert!((proj.norm() - 1.0).abs() < 1e-6);
        }
        assert_eq!(pca_basis(&data, 0).unwrap().size(), 0);
        assert!(pca_basis(&data, n + 1).is_err());
    }

    #[test]
    fn pca_on_isotropic_data_is_orthonormal() {
        let basis = coordinate_basis(5, 0);
        let data = sample_basis_coefficient_data(&basis, 5, 200, 3).unwrap();
        let pca = pca_basis(&data, 5).unwrap();
        assert!(orthonormal(&pca.vectors));
    }

    #[test]
    fn coordinate_basis_is_a_permutation() {
        for seed in 0..3 {
            let b = coordinate_basis(7, seed);
            assert!(orthonormal(&b.vectors));
            let mut perm = b.permutation.clone().unwrap();
            for (j, &k) in perm.iter().enumerate() {
                assert_eq!(b.vectors[(k, j)], 1.0);
            }
            perm.sort_unstable();
            assert_eq!(perm, (0..7).collect::<Vec<_>>());
            assert_eq!(b, coordinate_basis(7, seed));
        }
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs.idx3");
        let a: Vec<u8> = (0..6).map(|i| (i * 40) as u8).collect();
        let mut b = vec![0u8; 6];
        b[5] = 255;
        write_idx_images(&path, &[a.clone(), b], 2, 3).unwrap();
        let imgs = load_idx_images(&path).unwrap();
        assert_eq!(imgs.len(), 2);
        for (v, p) in imgs[0].iter().zip(&a) {
            assert_eq!(*v, *p as f64 / 255.0);
        }
        assert_eq!(imgs[1][5], 1.0);
        assert!(imgs[1].rows(0, 5).iter().all(|&v| v == 0.0));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_idx_images(&path), Err(Error::Format { .. })));
        bytes[3] = 0x01;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_idx_images(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn phantoms_are_deterministic_and_bounded() {
        let a = phantom_images(16, 3, 1);
        assert_eq!(a, phantom_images(16, 3, 1));
        assert!(a.iter().all(|x| x.iter().all(|&v| (0.0..=1.0).contains(&v))));
        assert!(a.iter().all(|x| x.amax() > 0.0));
    }
}

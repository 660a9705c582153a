//! Dense linear operators, their singular systems and the two benchmark
//! operators (discrete integration and a parallel-beam Radon transform).
//!
//! All operator algebra uses the Euclidean inner product. The discretized
//! L²-norms ([`weighted_norm`]) are only used for reporting errors, noise
//! levels and source constants.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::rng;

/// Magic bytes of the binary matrix container.
pub const CONTAINER_MAGIC: &[u8; 4] = b"RGB1";

/// Singular system `A v_j = σ_j u_j`, thin form with `k = min(m, n)` triplets.
///
/// Singular values are nonincreasing. Each `v_j` has its first entry of
/// magnitude above [`SIGN_EPS`] positive, and `u_j` is flipped together with
/// it.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdSystem {
    pub sigma: DVector<f64>,
    /// Left singular vectors as columns, `m × k`.
    pub u: DMatrix<f64>,
    /// Right singular vectors as columns, `n × k`.
    pub v: DMatrix<f64>,
}

/// Entries of a singular vector below this magnitude are skipped when
/// fixing the sign.
pub const SIGN_EPS: f64 = 1e-10;

impl SvdSystem {
    pub fn rank_count(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.iter().copied().fold(0.0, f64::max)
    }

    /// `U · diag(σ) · Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.sigma[j];
        }
        us * self.v.transpose()
    }

    /// Scale all singular values by `factor > 0`; the vectors are unchanged.
    pub fn scaled(&self, factor: f64) -> SvdSystem {
        SvdSystem {
            sigma: &self.sigma * factor,
            u: self.u.clone(),
            v: self.v.clone(),
        }
    }

    /// Number of singular values strictly above `rel_tol · σ_1`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let cutoff = rel_tol * self.sigma_max();
        self.sigma.iter().filter(|&&s| s > cutoff).count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let m = self.u.nrows();
        let n = self.v.nrows();
        let mut w = BufWriter::new(File::create(path)?);
        write_header(&mut w, m, n)?;
        for s in self.sigma.iter() {
            w.write_all(&s.to_le_bytes())?;
        }
        write_row_major(&mut w, &self.u)?;
        write_row_major(&mut w, &self.v)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SvdSystem> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        let (m, n) = read_header(&mut r, path)?;
        let k = m.min(n);
        let sigma = DVector::from_vec(read_floats(&mut r, k, path)?);
        let u = DMatrix::from_row_slice(m, k, &read_floats(&mut r, m * k, path)?);
        let v = DMatrix::from_row_slice(n, k, &read_floats(&mut r, n * k, path)?);
        expect_eof(&mut r, path)?;
        Ok(SvdSystem { sigma, u, v })
    }
}

/// Deterministic thin SVD.
///
/// Singular values are sorted nonincreasing with a stable sort. Within a
/// group of numerically equal singular values the pairs are ordered by the
/// position of the dominant entry of `v_j`, which restores input column order
/// for (permuted) diagonal matrices. Signs follow [`SvdSystem`].
pub fn compute_svd(matrix: &DMatrix<f64>) -> Result<SvdSystem> {
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (m, n) = matrix.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(SvdSystem {
            sigma: DVector::zeros(0),
            u: DMatrix::zeros(m, 0),
            v: DMatrix::zeros(n, 0),
        });
    }
    let svd = matrix
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(Error::Singular)?;
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let s = svd.singular_values;

    let sigma_max = s.iter().copied().fold(0.0, f64::max);
    let tie = 1e-13 * sigma_max.max(f64::MIN_POSITIVE);
    let dominant = |j: usize| -> usize {
        v.column(j)
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, x)| {
                if x.abs() > best.1 + 1e-12 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0
    };

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).expect("finite singular values"));
    // reorder exact ties by dominant coordinate
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && (s[order[start]] - s[order[end]]).abs() <= tie {
            end += 1;
        }
        if end - start > 1 {
            order[start..end].sort_by_key(|&j| dominant(j));
        }
        start = end;
    }

    let mut sigma = DVector::zeros(k);
    let mut uu = DMatrix::zeros(m, k);
    let mut vv = DMatrix::zeros(n, k);
    for (dst, &src) in order.iter().enumerate() {
        let flip = v
            .column(src)
            .iter()
            .find(|x| x.abs() > SIGN_EPS)
            .is_some_and(|x| *x < 0.0);
        let sgn = if flip { -1.0 } else { 1.0 };
        sigma[dst] = s[src];
        uu.set_column(dst, &(u.column(src) * sgn));
        vv.set_column(dst, &(v.column(src) * sgn));
    }
    Ok(SvdSystem {
        sigma,
        u: uu,
        v: vv,
    })
}

/// Discretized L² norm `dim^{-1/2} ‖w‖₂` on `ℝ^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightedNorm {
    pub dimension: usize,
}

impl WeightedNorm {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "weighted norm needs a positive dimension");
        WeightedNorm { dimension }
    }

    pub fn norm(&self, w: &DVector<f64>) -> f64 {
        w.norm() / (self.dimension as f64).sqrt()
    }
}

/// `‖w‖ = len^{-1/2} ‖w‖₂`, i.e. the root mean square of the entries.
pub fn weighted_norm(w: &DVector<f64>) -> f64 {
    if w.is_empty() {
        0.0
    } else {
        WeightedNorm::new(w.len()).norm(w)
    }
}

/// An `m × n` real operator with a lazily computed, cached singular system.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
    spectral_normalized: bool,
    svd: OnceLock<SvdSystem>,
}

impl DenseOperator {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::invalid("operator must have positive dimensions"));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(DenseOperator {
            matrix,
            spectral_normalized: false,
            svd: OnceLock::new(),
        })
    }

    pub fn identity(n: usize) -> Self {
        DenseOperator::from_matrix(DMatrix::identity(n, n)).expect("identity is valid")
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_spectral_normalized(&self) -> bool {
        self.spectral_normalized
    }

    /// Cached singular system, computed on first use.
    pub fn svd(&self) -> Result<&SvdSystem> {
        if let Some(s) = self.svd.get() {
            return Ok(s);
        }
        let s = compute_svd(&self.matrix)?;
        Ok(self.svd.get_or_init(|| s))
    }

    /// Attach a previously computed singular system (e.g. loaded from disk).
    /// Rejects systems that do not reconstruct the matrix.
    pub fn with_svd(self, svd: SvdSystem) -> Result<Self> {
        check_dim(self.rows(), svd.u.nrows())?;
        check_dim(self.cols(), svd.v.nrows())?;
        let dev = (svd.reconstruct() - &self.matrix).amax();
        if dev > 1e-8 * svd.sigma_max().max(1.0) {
            return Err(Error::invalid(format!(
                "cached SVD does not reconstruct the operator (deviation {dev:.3e})"
            )));
        }
        let cell = OnceLock::new();
        let _ = cell.set(svd);
        Ok(DenseOperator { svd: cell, ..self })
    }

    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(self.svd()?.sigma_max())
    }

    /// Divide by the spectral norm. The cached singular system is rescaled
    /// rather than recomputed.
    pub fn normalized(self) -> Result<Self> {
        let svd = self.svd()?.clone();
        let norm = svd.sigma_max();
        if norm == 0.0 {
            return Err(Error::invalid("cannot normalize the zero operator"));
        }
        let matrix = self.matrix / norm;
        let cell = OnceLock::new();
        let _ = cell.set(svd.scaled(1.0 / norm));
        Ok(DenseOperator {
            matrix,
            spectral_normalized: true,
            svd: cell,
        })
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.cols(), x.len())?;
        Ok(&self.matrix * x)
    }

    pub fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.rows(), y.len())?;
        Ok(self.matrix.tr_mul(y))
    }

    /// `(A*)† x = Σ_{σ_j > rel_tol·σ_1} σ_j^{-1} ⟨x, v_j⟩ u_j`.
    pub fn pinv_adjoint_apply(&self, x: &DVector<f64>, rel_tol: f64) -> Result<DVector<f64>> {
        check_dim(self.cols(), x.len())?;
        let svd = self.svd()?;
        let cutoff = rel_tol * svd.sigma_max();
        let mut z = DVector::zeros(self.rows());
        for j in 0..svd.rank_count() {
            let s = svd.sigma[j];
            if s > cutoff {
                z.axpy(svd.v.column(j).dot(x) / s, &svd.u.column(j), 1.0);
            }
        }
        Ok(z)
    }

    /// SHA-256 of the binary container encoding, as lowercase hex.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        let mut buf = Vec::with_capacity(20 + 8 * self.matrix.len());
        write_header(&mut buf, self.rows(), self.cols()).expect("write to Vec");
        write_row_major(&mut buf, &self.matrix).expect("write to Vec");
        h.update(&buf);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix(path, &self.matrix)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        DenseOperator::from_matrix(read_matrix(path)?)
    }
}

/// Largest singular value by power iteration on `AᵀA`, started from a seeded
/// Gaussian vector. Independent of the SVD path.
pub fn power_iteration_norm(matrix: &DMatrix<f64>, max_iter: usize, tol: f64, seed: u64) -> f64 {
    let n = matrix.ncols();
    let mut rng = rng::stream(seed, &[rng::domain::POWER_ITERATION]);
    let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let nv = v.norm();
    if nv == 0.0 {
        return 0.0;
    }
    v /= nv;
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = matrix.tr_mul(&(matrix * &v));
        let lambda = v.dot(&w);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        v = w / nw;
        let next = lambda.max(0.0).sqrt();
        if (next - estimate).abs() <= tol * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Lower-triangular all-ones matrix, unnormalized.
pub fn integration_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 })
}

/// Discrete integration operator divided by its spectral norm.
pub fn build_integration_operator(n: usize) -> Result<DenseOperator> {
    if n == 0 {
        return Err(Error::invalid("integration operator needs n >= 1"));
    }
    DenseOperator::from_matrix(integration_matrix(n))?.normalized()
}

/// Parallel-beam acquisition geometry for a square image of `side × side`
/// unit pixels centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadonGeometry {
    pub side: usize,
    pub n_angles: usize,
    pub n_offsets: usize,
}

impl RadonGeometry {
    pub fn new(side: usize, n_angles: usize, n_offsets: usize) -> Result<Self> {
        if side < 2 || n_angles == 0 || n_offsets == 0 {
            return Err(Error::invalid(
                "radon geometry needs side >= 2 and at least one angle and offset",
            ));
        }
        Ok(RadonGeometry {
            side,
            n_angles,
            n_offsets,
        })
    }

    pub fn n_rays(&self) -> usize {
        self.n_angles * self.n_offsets
    }

    /// Equispaced angles in `[0, π)`.
    pub fn angle(&self, k: usize) -> f64 {
        k as f64 * std::f64::consts::PI / self.n_angles as f64
    }

    /// Equispaced signed detector offsets covering `[-diag/2, diag/2]`.
    pub fn offset(&self, j: usize) -> f64 {
        if self.n_offsets == 1 {
            return 0.0;
        }
        let diag = self.side as f64 * std::f64::consts::SQRT_2;
        -0.5 * diag + j as f64 * diag / (self.n_offsets - 1) as f64
    }

    /// Ray with normal `(cos θ, sin θ)` at signed distance `t`, as
    /// `(point on ray, unit direction)`.
    fn ray(&self, k: usize, j: usize) -> ([f64; 2], [f64; 2]) {
        let theta = self.angle(k);
        let t = self.offset(j);
        let (s, c) = theta.sin_cos();
        ([t * c, t * s], [-s, c])
    }

    /// Parameter interval where the ray lies inside the image square, if any.
    /// Lines running exactly along the upper/right boundary count as outside.
    fn clip(&self, p: [f64; 2], d: [f64; 2]) -> Option<(f64, f64)> {
        let h = 0.5 * self.side as f64;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for axis in 0..2 {
            if d[axis].abs() <= AXIS_EPS {
                if p[axis] < -h || p[axis] >= h {
                    return None;
                }
            } else {
                let a = (-h - p[axis]) / d[axis];
                let b = (h - p[axis]) / d[axis];
                lo = lo.max(a.min(b));
                hi = hi.min(a.max(b));
            }
        }
        (hi - lo > SEGMENT_EPS).then_some((lo, hi))
    }

    /// Length of the chord of ray `(k, j)` through the image square.
    pub fn chord_length(&self, k: usize, j: usize) -> f64 {
        let (p, d) = self.ray(k, j);
        self.clip(p, d).map_or(0.0, |(lo, hi)| hi - lo)
    }

    /// Pixel intersection lengths of ray `(k, j)` as `(pixel index, length)`.
    /// Pixel `(row, col)` has index `row * side + col`, row 0 at the top
    /// (largest y), col 0 at the left (smallest x).
    pub fn trace(&self, k: usize, j: usize) -> Vec<(usize, f64)> {
        let (p, d) = self.ray(k, j);
        let Some((lo, hi)) = self.clip(p, d) else {
            return Vec::new();
        };
        let side = self.side;
        let h = 0.5 * side as f64;
        let mut cuts = vec![lo, hi];
        for axis in 0..2 {
            if d[axis].abs() <= AXIS_EPS {
                continue;
            }
            for i in 0..=side {
                let lam = (-h + i as f64 - p[axis]) / d[axis];
                if lam > lo && lam < hi {
                    cuts.push(lam);
                }
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite crossing"));
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(2 * side);
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= SEGMENT_EPS {
                continue;
            }
            let mid = 0.5 * (w[0] + w[1]);
            let x = p[0] + mid * d[0];
            let y = p[1] + mid * d[1];
            let col = ((x + h).floor().max(0.0) as usize).min(side - 1);
            let row = ((h - y).floor().max(0.0) as usize).min(side - 1);
            let idx = row * side + col;
            match out.last_mut() {
                Some(last) if last.0 == idx => last.1 += len,
                _ => out.push((idx, len)),
            }
        }
        out
    }

    /// Unnormalized system matrix; row `k * n_offsets + j` is ray `(k, j)`.
    pub fn system_matrix(&self) -> DMatrix<f64> {
        let n = self.side * self.side;
        let mut a = DMatrix::zeros(self.n_rays(), n);
        for k in 0..self.n_angles {
            for j in 0..self.n_offsets {
                let row = k * self.n_offsets + j;
                for (idx, len) in self.trace(k, j) {
                    a[(row, idx)] += len;
                }
            }
        }
        a
    }
}

const AXIS_EPS: f64 = 1e-12;
const SEGMENT_EPS: f64 = 1e-12;

/// Parallel-beam Radon operator with exact ray–pixel intersection lengths,
/// divided by its spectral norm.
pub fn build_radon_operator(
    img_side: usize,
    n_angles: usize,
    n_offsets: usize,
) -> Result<DenseOperator> {
    let geom = RadonGeometry::new(img_side, n_angles, n_offsets)?;
    DenseOperator::from_matrix(geom.system_matrix())?.normalized()
}

fn write_header<W: Write>(w: &mut W, m: usize, n: usize) -> std::io::Result<()> {
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&(m as u64).to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())
}

fn write_row_major<W: Write>(w: &mut W, a: &DMatrix<f64>) -> std::io::Result<()> {
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            w.write_all(&a[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<(usize, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(path, "truncated header"))?;
    let m = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(path, "truncated header"))?;
    let n = u64::from_le_bytes(buf) as usize;
    Ok((m, n))
}

fn read_floats<R: Read>(r: &mut R, count: usize, path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(path, "truncated payload"))?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

fn expect_eof<R: Read>(r: &mut R, path: &Path) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::format(path, "trailing bytes after payload")),
    }
}

/// Write a matrix to the binary container (`RGB1`, m, n, row-major f64, LE).
pub fn write_matrix(path: impl AsRef<Path>, a: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, a.nrows(), a.ncols())?;
    write_row_major(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let (m, n) = read_header(&mut r, path)?;
    let data = read_floats(&mut r, m * n, path)?;
    expect_eof(&mut r, path)?;
    Ok(DMatrix::from_row_slice(m, n, &data))
}

//! Dense linear-algebra kernels: full SVD with deterministic signs, extreme eigenpairs of
//! symmetric matrices, orthonormal nullspace bases and a cutoff pseudoinverse.
//!
//! Everything here is a pure function of its inputs. Factor signs are fixed so that the first
//! significant component of every singular or eigen vector is positive, which makes results
//! reproducible across runs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TiltError};

/// Singular values below `DEFAULT_RANK_TOL * σ₁` count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Full singular value decomposition `A = R [Diag(σ) 0] Sᵀ` of a `p × q` matrix with `p ≤ q`.
#[derive(Debug, Clone)]
pub struct SvdFactorization {
    /// `p × p` orthogonal.
    pub left: DMatrix<f64>,
    /// Nonincreasing, nonnegative, length `p`.
    pub singulars: DVector<f64>,
    /// `q × q` orthogonal.
    pub right: DMatrix<f64>,
    pub rank_tol: f64,
}

impl SvdFactorization {
    pub fn rows(&self) -> usize {
        self.left.nrows()
    }

    pub fn cols(&self) -> usize {
        self.right.nrows()
    }

    /// Number of singular values above `rank_tol · σ₁`.
    pub fn rank(&self) -> usize {
        let top = self.singulars.get(0).copied().unwrap_or(0.0);
        if top <= 0.0 {
            return 0;
        }
        self.singulars
            .iter()
            .filter(|&&s| s > self.rank_tol * top)
            .count()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.compose(&self.singulars)
    }

    /// `R [Diag(values) 0] Sᵀ` for a replacement vector of singular values.
    pub fn compose(&self, values: &DVector<f64>) -> DMatrix<f64> {
        let p = self.rows();
        let right_thin = self.right.columns(0, p);
        let mut scaled = self.left.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= values[j];
        }
        scaled * right_thin.transpose()
    }

    /// `Rᵀ Y S`: coordinates of `Y` in the singular frames.
    pub fn to_frame(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.left.transpose() * y * &self.right
    }

    /// Inverse of [`SvdFactorization::to_frame`].
    pub fn from_frame(&self, y_tilde: &DMatrix<f64>) -> DMatrix<f64> {
        &self.left * y_tilde * self.right.transpose()
    }
}

pub fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TiltError::input(format!("{what}: non-finite entry")))
    }
}

/// Flip `v` so that its first significant component is positive. Returns true if flipped.
fn normalize_sign(v: &mut [f64]) -> bool {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return false;
    }
    let lead = v.iter().copied().find(|x| x.abs() > 1e-10 * max);
    if matches!(lead, Some(x) if x < 0.0) {
        for x in v.iter_mut() {
            *x = -*x;
        }
        true
    } else {
        false
    }
}

fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(a: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn numerical(what: &str) -> TiltError {
    TiltError::Numerical(format!("{what} did not converge"))
}

/// Full SVD of a `p × q` matrix with `1 ≤ p ≤ q`.
pub fn svd(a: &DMatrix<f64>) -> Result<SvdFactorization> {
    svd_with_tol(a, DEFAULT_RANK_TOL)
}

pub fn svd_with_tol(a: &DMatrix<f64>, rank_tol: f64) -> Result<SvdFactorization> {
    let (p, q) = a.shape();
    if p == 0 || q < p {
        return Err(TiltError::input(format!(
            "svd expects 1 <= p <= q, got {p}x{q}"
        )));
    }
    check_finite(a, "svd")?;

    // nalgebra's bidiagonal SVD loses accuracy on nearly repeated singular values
    let decomposition = to_faer(a).svd().map_err(|_| numerical("svd"))?;
    let u = from_faer(decomposition.U());
    let v = from_faer(decomposition.V());
    let sv: Vec<f64> = (0..p).map(|i| decomposition.S()[i]).collect();

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));

    let mut left = DMatrix::zeros(p, p);
    let mut right = DMatrix::zeros(q, q);
    let mut singulars = DVector::zeros(p);
    for (dst, &src) in order.iter().enumerate() {
        singulars[dst] = sv[src].max(0.0);
        let mut l: Vec<f64> = u.column(src).iter().copied().collect();
        let mut r: Vec<f64> = v.column(src).iter().copied().collect();
        if normalize_sign(&mut l) {
            r.iter_mut().for_each(|x| *x = -*x);
        }
        left.set_column(dst, &DVector::from_vec(l));
        right.set_column(dst, &DVector::from_vec(r));
    }
    for j in p..q {
        let mut col: Vec<f64> = v.column(j).iter().copied().collect();
        normalize_sign(&mut col);
        right.set_column(j, &DVector::from_vec(col));
    }

    Ok(SvdFactorization {
        left,
        singulars,
        right,
        rank_tol,
    })
}

/// Singular values (nonincreasing) of an arbitrary matrix.
pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    if a.is_empty() {
        return DVector::zeros(0);
    }
    let mut sv: Vec<f64> = to_faer(a)
        .singular_values()
        .expect("singular value iteration converges")
        .into_iter()
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    DVector::from_vec(sv)
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    singular_values(a)[0]
}

pub fn nuclear_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    singular_values(a).sum()
}

pub fn symmetrized(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(TiltError::input(format!(
            "symmetric eigensolver expects a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(m, "symmetric eigensolver")?;
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-10 * (1.0 + m.norm()) {
        return Err(TiltError::input(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok((m + m.transpose()) * 0.5)
}

/// All eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors as columns.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sym = symmetrized(m)?;
    let n = sym.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = to_faer(&sym)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| numerical("symmetric eigensolver"))?;
    let eigenvalues: Vec<f64> = (0..n).map(|i| eig.S()[i]).collect();
    let eigenvectors = from_faer(eig.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eigenvalues[i].total_cmp(&eigenvalues[j]).then(i.cmp(&j)));
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eigenvalues[src];
        let mut v: Vec<f64> = eigenvectors.column(src).iter().copied().collect();
        normalize_sign(&mut v);
        vectors.set_column(dst, &DVector::from_vec(v));
    }
    Ok((values, vectors))
}

/// Smallest eigenvalue of a symmetric matrix with a unit eigenvector.
pub fn sym_eig_min(m: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    if m.nrows() == 0 {
        return Err(TiltError::input("sym_eig_min of an empty matrix"));
    }
    let (values, vectors) = sym_eig(m)?;
    Ok((values[0], vectors.column(0).into_owned()))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_eig_max(m: &DMatrix<f64>) -> Result<f64> {
    let (values, _) = sym_eig(m)?;
    values
        .iter()
        .copied()
        .next_back()
        .ok_or_else(|| TiltError::input("sym_eig_max of an empty matrix"))
}

/// Orthonormal columns spanning `{v : C v = 0}`.
///
/// Singular directions with `σ ≤ tol · (1 + ‖C‖_F)` count as null, so `‖C B‖_max` stays within
/// the same bound.
pub fn nullspace_basis(c: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if !(tol > 0.0) {
        return Err(TiltError::input("nullspace tolerance must be positive"));
    }
    check_finite(c, "nullspace_basis")?;
    let (m, n) = c.shape();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if m == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    let threshold = tol * (1.0 + c.norm());
    let mut null_cols: Vec<DVector<f64>> = Vec::new();
    if m <= n {
        let f = svd(c)?;
        for j in 0..n {
            let s = if j < m { f.singulars[j] } else { 0.0 };
            if s <= threshold {
                null_cols.push(f.right.column(j).into_owned());
            }
        }
    } else {
        // C = S [Σ 0]ᵀ Rᵀ when Cᵀ = R [Σ 0] Sᵀ.
        let f = svd(&c.transpose())?;
        for j in 0..n {
            if f.singulars[j] <= threshold {
                null_cols.push(f.left.column(j).into_owned());
            }
        }
    }
    if null_cols.is_empty() {
        Ok(DMatrix::zeros(n, 0))
    } else {
        Ok(DMatrix::from_columns(&null_cols))
    }
}

/// Moore-Penrose pseudoinverse; singular values below `rel_cutoff · σ₁` are treated as zero.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_cutoff: f64) -> Result<DMatrix<f64>> {
    check_finite(a, "pseudo_inverse")?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(DMatrix::zeros(n, m));
    }
    let transposed = m > n;
    let work = if transposed { a.transpose() } else { a.clone() };
    let f = svd(&work)?;
    let top = f.singulars[0];
    let p = work.nrows();
    let mut inv = DMatrix::zeros(work.ncols(), p);
    if top > 0.0 {
        for i in 0..p {
            let s = f.singulars[i];
            if s > rel_cutoff * top {
                let r = f.left.column(i);
                let v = f.right.column(i);
                inv += (v * r.transpose()) / s;
            }
        }
    }
    Ok(if transposed { inv.transpose() } else { inv })
}

/// Largest absolute entry of `QᵀQ − I`.
pub fn orthogonality_defect(q: &DMatrix<f64>) -> f64 {
    let n = q.ncols();
    (q.transpose() * q - DMatrix::identity(n, n)).abs().max()
}

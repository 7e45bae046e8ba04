//! The second-order variational function `Γ_g(x, u)`.
//!
//! A [`SovfForm`] stores `dom Γ` as the common kernel of a list of linear functionals and
//! `Γ` itself as a weighted sum of squares of linear functionals. Functionals act on points of
//! the term's space (flat vectors, row-major for matrices).
//!
//! For the spectral norm the closed form is expressed in the singular frames of `A = X + U`:
//! with `Ỹ = RᵀYS`, every functional is an entry, or the symmetric or antisymmetric part of a
//! pair of entries, of `Ỹ`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, TiltError};
use crate::numkernel::{self, SvdFactorization};
use crate::proxcore::{
    self, check_subgradient, compute_threshold_indexes, mat_to_vec, vec_to_mat, NonsmoothTerm,
    TermKind, ThresholdIndexes, ACTIVE_TOL,
};
use crate::rng::{self, Purpose};

pub const DEFAULT_TOL_CASE: f64 = 1e-7;
pub const DEFAULT_TOL_DOM: f64 = 1e-7;
/// `|u_i|` within this of 1 counts as a saturated ℓ1 subgradient component.
const SATURATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SovfCase {
    /// `‖X + U‖_* < 1`.
    Interior,
    /// `‖X + U‖_* = 1`.
    Boundary,
    /// `‖X + U‖_* > 1`.
    Exterior,
    PolyhedralSubspace,
}

/// `weight · ⟨functional, y⟩²`.
#[derive(Debug, Clone)]
pub struct QuadTerm {
    pub weight: f64,
    pub functional: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct SovfForm {
    pub case_tag: SovfCase,
    pub dim: usize,
    /// SVD of `X + U` in its wide orientation (spectral forms only).
    pub svd: Option<SvdFactorization>,
    /// Whether the spectral data was transposed to make it wide.
    pub transposed: bool,
    pub indexes: Option<ThresholdIndexes>,
    pub rank: usize,
    pub nuclear_norm: Option<f64>,
    /// Unit-norm functionals whose common kernel is `dom Γ`.
    pub domain_constraints: Vec<DVector<f64>>,
    pub quad_coeffs: Vec<QuadTerm>,
    /// `‖X + U‖_*` fell inside the boundary band without being numerically equal to 1.
    pub ambiguous: bool,
    /// Symmetric pair functionals forced to zero because their weight denominator vanished.
    pub tie_constraints: usize,
    pub tol_dom: f64,
}

impl SovfForm {
    fn new(case_tag: SovfCase, dim: usize) -> Self {
        Self {
            case_tag,
            dim,
            svd: None,
            transposed: false,
            indexes: None,
            rank: 0,
            nuclear_norm: None,
            domain_constraints: Vec::new(),
            quad_coeffs: Vec::new(),
            ambiguous: false,
            tie_constraints: 0,
            tol_dom: DEFAULT_TOL_DOM,
        }
    }

    fn constrain(&mut self, c: DVector<f64>) {
        let norm = c.norm();
        if norm > 0.0 {
            self.domain_constraints.push(c / norm);
        }
    }

    fn add_square(&mut self, weight: f64, functional: DVector<f64>) {
        if weight != 0.0 {
            self.quad_coeffs.push(QuadTerm { weight, functional });
        }
    }

    fn check_dim(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.dim {
            return Err(TiltError::input(format!(
                "SOVF direction has dimension {}, form expects {}",
                y.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Largest constraint violation `max |⟨c, y⟩|`.
    pub fn constraint_violation(&self, y: &DVector<f64>) -> Result<f64> {
        self.check_dim(y)?;
        Ok(self
            .domain_constraints
            .iter()
            .map(|c| c.dot(y).abs())
            .fold(0.0, f64::max))
    }

    pub fn in_domain(&self, y: &DVector<f64>) -> Result<bool> {
        Ok(self.constraint_violation(y)? <= self.tol_dom * (1.0 + y.norm()))
    }

    /// Stacked constraints as the rows of a matrix (`0 × dim` when unconstrained).
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.domain_constraints.len(), self.dim);
        for (i, row) in self.domain_constraints.iter().enumerate() {
            c.set_row(i, &row.transpose());
        }
        c
    }

    /// Symmetric matrix `G` with `Γ(y) = yᵀ G y` on the domain.
    pub fn quadratic_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.dim, self.dim);
        for t in &self.quad_coeffs {
            g += &t.functional * t.functional.transpose() * t.weight;
        }
        g
    }

    /// Weighted sum of squares, ignoring the domain.
    pub fn quadratic_value(&self, y: &DVector<f64>) -> f64 {
        self.quad_coeffs
            .iter()
            .map(|t| t.weight * t.functional.dot(y).powi(2))
            .sum()
    }
}

/// `Γ(y)`, or `+∞` outside the domain.
pub fn sovf_eval(form: &SovfForm, y: &DVector<f64>) -> Result<f64> {
    if !form.in_domain(y)? {
        return Ok(f64::INFINITY);
    }
    Ok(form.quadratic_value(y))
}

pub fn sovf_eval_matrix(form: &SovfForm, y: &DMatrix<f64>) -> Result<f64> {
    sovf_eval(form, &mat_to_vec(y))
}

/// Linear functionals for entries of `Ỹ = RᵀYS`, in the original (possibly tall) orientation.
struct FrameFunctionals<'a> {
    svd: &'a SvdFactorization,
    transposed: bool,
    /// Original shape.
    p: usize,
    q: usize,
}

impl FrameFunctionals<'_> {
    /// Functional `Y ↦ ỹ_ij` (0-based, wide-orientation indexes).
    fn entry(&self, i: usize, j: usize) -> DVector<f64> {
        let r = self.svd.left.column(i);
        let s = self.svd.right.column(j);
        let mut out = DVector::zeros(self.p * self.q);
        for a in 0..r.len() {
            for b in 0..s.len() {
                let idx = if self.transposed {
                    b * self.q + a
                } else {
                    a * self.q + b
                };
                out[idx] = r[a] * s[b];
            }
        }
        out
    }

    fn sym(&self, i: usize, j: usize) -> DVector<f64> {
        (self.entry(i, j) + self.entry(j, i)) * 0.5
    }

    fn skew(&self, i: usize, j: usize) -> DVector<f64> {
        (self.entry(i, j) - self.entry(j, i)) * 0.5
    }
}

/// Closed-form `Γ_{‖·‖₂}(X, U)` from the three-case analysis on `ν = ‖X + U‖_*`.
pub fn build_sovf_spectral(x: &DMatrix<f64>, u: &DMatrix<f64>, tol_case: f64) -> Result<SovfForm> {
    if x.shape() != u.shape() {
        return Err(TiltError::input("X and U must have the same shape"));
    }
    if !(tol_case > 0.0) {
        return Err(TiltError::input("tol_case must be positive"));
    }
    let (p, q) = x.shape();
    let g = NonsmoothTerm::spectral(p, q);
    let (xv, uv) = (mat_to_vec(x), mat_to_vec(u));
    g.check_dim(&xv, "SOVF point")?;
    g.check_dim(&uv, "SOVF subgradient")?;
    check_subgradient(&g, &xv, &uv)?;

    let a = x + u;
    let transposed = p > q;
    let wide = if transposed { a.transpose() } else { a };
    let f = numkernel::svd(&wide)?;
    let (pw, qw) = (f.rows(), f.cols());
    let nu = f.singulars.sum();
    let rank = f.rank();

    let case = if nu < 1.0 - tol_case {
        SovfCase::Interior
    } else if nu <= 1.0 + tol_case {
        SovfCase::Boundary
    } else {
        SovfCase::Exterior
    };
    let mut form = SovfForm::new(case, p * q);
    form.rank = rank;
    form.nuclear_norm = Some(nu);
    form.transposed = transposed;
    let fr = FrameFunctionals {
        svd: &f,
        transposed,
        p,
        q,
    };

    match case {
        SovfCase::Interior => {
            for k in 0..p * q {
                let mut e = DVector::zeros(p * q);
                e[k] = 1.0;
                form.constrain(e);
            }
        }
        SovfCase::Boundary => {
            form.ambiguous = (nu - 1.0).abs() > 1e-10;
            for i in 1..rank {
                form.constrain(fr.entry(i, i) - fr.entry(0, 0));
            }
            for i in 0..rank {
                for j in 0..qw {
                    if j != i {
                        form.constrain(fr.entry(i, j));
                    }
                }
                for j in rank..pw {
                    form.constrain(fr.entry(j, i));
                }
            }
        }
        SovfCase::Exterior => {
            let idx = compute_threshold_indexes(&f.singulars)?;
            let (k, theta) = (idx.k1, idx.theta);
            let sigma = |j: usize| if j < rank { f.singulars[j] } else { 0.0 };
            let pv: Vec<f64> = (0..pw).map(|i| (sigma(i) - theta).max(0.0)).collect();
            for i in 1..k {
                form.constrain(fr.entry(i, i) - fr.entry(0, 0));
            }
            for i in 0..k {
                for j in (i + 1)..k {
                    form.constrain(fr.sym(i, j));
                    form.add_square((pv[i] + pv[j]) / theta, fr.skew(i, j));
                }
                for j in k..pw {
                    let sym_den = theta - sigma(j);
                    if j < idx.k2 || sym_den <= 1e-12 * (1.0 + f.singulars[0]) {
                        form.constrain(fr.sym(i, j));
                        form.tie_constraints += 1;
                    } else {
                        form.add_square(2.0 * pv[i] / sym_den, fr.sym(i, j));
                    }
                    form.add_square(2.0 * pv[i] / (theta + sigma(j)), fr.skew(i, j));
                }
                for j in pw..qw {
                    form.add_square(pv[i] / theta, fr.entry(i, j));
                }
            }
            form.indexes = Some(idx);
        }
        SovfCase::PolyhedralSubspace => unreachable!(),
    }
    form.svd = Some(f);
    Ok(form)
}

/// `Γ_g(x, u)` for polyhedral `g`: zero on the span of the critical directions.
pub fn build_sovf_polyhedral(
    g: &NonsmoothTerm,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<SovfForm> {
    g.check_dim(x, "SOVF point")?;
    g.check_dim(u, "SOVF subgradient")?;
    if !g.is_polyhedral() {
        return Err(TiltError::input(format!(
            "{} is not a polyhedral term",
            g.name()
        )));
    }
    check_subgradient(g, x, u)?;
    let m = g.dim();
    let mut form = SovfForm::new(SovfCase::PolyhedralSubspace, m);
    for i in 0..m {
        let pinned = match g.kind {
            TermKind::NonpositiveOrthant { .. } => x[i] >= -ACTIVE_TOL && u[i] > ACTIVE_TOL,
            TermKind::L1Norm { .. } => {
                x[i].abs() <= ACTIVE_TOL && u[i].abs() < 1.0 - SATURATION_TOL
            }
            TermKind::SpectralNorm { .. } => unreachable!(),
        };
        if pinned {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            form.constrain(e);
        }
    }
    Ok(form)
}

/// Dispatches on the kind of `g` with default tolerances.
pub fn build_sovf(g: &NonsmoothTerm, x: &DVector<f64>, u: &DVector<f64>) -> Result<SovfForm> {
    match g.kind {
        TermKind::SpectralNorm { p, q } => {
            g.check_dim(x, "SOVF point")?;
            g.check_dim(u, "SOVF subgradient")?;
            build_sovf_spectral(&vec_to_mat(x, p, q), &vec_to_mat(u, p, q), DEFAULT_TOL_CASE)
        }
        _ => build_sovf_polyhedral(g, x, u),
    }
}

/// Perturbation radii cycled across samples.
pub const BSUB_RADII: [f64; 4] = [1e-4, 1e-5, 1e-6, 1e-7];
/// Minimal separation of the perturbed point from the nondifferentiability set of the prox.
pub const BSUB_MIN_GAP: f64 = 1e-9;
pub const BSUB_PINV_CUTOFF: f64 = 1e-8;
pub const BSUB_RANGE_TOL: f64 = 1e-4;
const BSUB_MAX_REDRAWS: usize = 64;

/// Distance from `a` to the set where `Prox_g` fails to be differentiable, as far as the
/// catalog structure is concerned.
fn differentiability_gap(g: &NonsmoothTerm, a: &DVector<f64>) -> Result<f64> {
    Ok(match g.kind {
        TermKind::SpectralNorm { p, q } => {
            let m = vec_to_mat(a, p, q);
            let sigma = numkernel::singular_values(&m);
            let mut gap = f64::INFINITY;
            for w in sigma.as_slice().windows(2) {
                gap = gap.min(w[0] - w[1]);
            }
            gap = gap.min(sigma[sigma.len() - 1]);
            let nu = sigma.sum();
            gap = gap.min((nu - 1.0).abs());
            if nu > 1.0 {
                let theta = compute_threshold_indexes(&sigma)?.theta;
                for &s in sigma.iter() {
                    gap = gap.min((s - theta).abs());
                }
            }
            gap
        }
        TermKind::L1Norm { .. } => a
            .iter()
            .map(|v| (v.abs() - 1.0).abs())
            .fold(f64::INFINITY, f64::min),
        TermKind::NonpositiveOrthant { .. } => {
            a.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
        }
    })
}

/// Central finite-difference Jacobian of `Prox_g` at `a`, symmetrized.
fn prox_jacobian(g: &NonsmoothTerm, a: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = a.len();
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut plus = a.clone();
        let mut minus = a.clone();
        plus[k] += h;
        minus[k] -= h;
        let col = (proxcore::prox_apply(g, &plus)? - proxcore::prox_apply(g, &minus)?) / (2.0 * h);
        jac.set_column(k, &col);
    }
    Ok((&jac + jac.transpose()) * 0.5)
}

/// One sampled element `V` of the B-subdifferential of the prox, with its pseudoinverse.
#[derive(Debug, Clone)]
pub struct BsubSample {
    pub radius: f64,
    pub jacobian: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
}

impl BsubSample {
    /// `(⟨y, V†y⟩ − ‖y‖², ‖V V† y − y‖)`.
    pub fn evaluate(&self, y: &DVector<f64>) -> (f64, f64) {
        let vy = &self.pinv * y;
        let range_residual = (&self.jacobian * &vy - y).norm();
        (y.dot(&vy) - y.norm_squared(), range_residual)
    }
}

/// Jacobians of `Prox_g` at random differentiable points near `x + u`.
#[derive(Debug, Clone)]
pub struct BsubSampler {
    pub samples: Vec<BsubSample>,
    /// Draws discarded for lying too close to a nondifferentiable point.
    pub redraws: usize,
    form: Option<SovfForm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BsubEstimate {
    /// Minimum over accepted samples, `+∞` when none admits `y` in its range.
    pub value: f64,
    pub accepted: usize,
    pub rejected: usize,
    /// Accepted samples for a `y` that the closed-form domain excludes.
    pub disagreements: usize,
}

impl BsubSampler {
    pub fn new(
        g: &NonsmoothTerm,
        x: &DVector<f64>,
        u: &DVector<f64>,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        g.check_dim(x, "B-subdifferential point")?;
        g.check_dim(u, "B-subdifferential subgradient")?;
        if n_samples == 0 {
            return Err(TiltError::input("n_samples must be at least 1"));
        }
        let form = build_sovf(g, x, u).ok();
        let a = x + u;
        let scale = 1.0 + a.norm();
        let drawn: Vec<Result<(BsubSample, usize)>> = (0..n_samples)
            .into_par_iter()
            .map(|k| {
                let radius = BSUB_RADII[k % BSUB_RADII.len()];
                let mut stream = rng::stream(seed, Purpose::BsubSample, k as u64);
                for attempt in 0..BSUB_MAX_REDRAWS {
                    let point = &a + rng::uniform_in_ball(&mut stream, a.len(), radius);
                    let gap = differentiability_gap(g, &point)?;
                    if gap < BSUB_MIN_GAP {
                        continue;
                    }
                    let h = (1e-2 * gap).min(1e-2 * radius);
                    let jacobian = prox_jacobian(g, &point, h)?;
                    // finite-difference noise sets a floor on the pseudoinverse cutoff
                    let (values, vectors) = numkernel::sym_eig(&jacobian)?;
                    let top = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    let cutoff = (BSUB_PINV_CUTOFF * top).max(1e-13 * scale / h);
                    let mut pinv = DMatrix::zeros(a.len(), a.len());
                    for (i, &lam) in values.iter().enumerate() {
                        if lam > cutoff {
                            let v = vectors.column(i);
                            pinv += v * v.transpose() / lam;
                        }
                    }
                    return Ok((
                        BsubSample {
                            radius,
                            jacobian,
                            pinv,
                        },
                        attempt,
                    ));
                }
                Err(TiltError::Numerical(
                    "no differentiable point of the prox found near x + u".into(),
                ))
            })
            .collect();
        let mut samples = Vec::with_capacity(n_samples);
        let mut redraws = 0;
        for d in drawn {
            let (s, r) = d?;
            samples.push(s);
            redraws += r;
        }
        Ok(Self {
            samples,
            redraws,
            form,
        })
    }

    pub fn min_value(&self, y: &DVector<f64>) -> BsubEstimate {
        let tol = BSUB_RANGE_TOL * (1.0 + y.norm());
        let outside = self
            .form
            .as_ref()
            .and_then(|f| f.in_domain(y).ok())
            .map(|inside| !inside)
            .unwrap_or(false);
        let mut est = BsubEstimate {
            value: f64::INFINITY,
            accepted: 0,
            rejected: 0,
            disagreements: 0,
        };
        for s in &self.samples {
            let (value, residual) = s.evaluate(y);
            if residual <= tol {
                est.accepted += 1;
                est.value = est.value.min(value);
                if outside {
                    est.disagreements += 1;
                }
            } else {
                est.rejected += 1;
            }
        }
        est
    }
}

/// `min_k ⟨y, V_k†y⟩ − ‖y‖²` over sampled prox Jacobians `V_k` near `x + u` whose range
/// contains `y`.
pub fn bsub_min_oracle(
    g: &NonsmoothTerm,
    x: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<BsubEstimate> {
    g.check_dim(y, "B-subdifferential direction")?;
    Ok(BsubSampler::new(g, x, u, n_samples, seed)?.min_value(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    /// `X = Prox(A)`, `U = A − X` for `A = Diag(2, 0.5)`.
    fn exterior_diag() -> SovfForm {
        let x = m2(1.0, 0.0, 0.0, 0.5);
        let u = m2(1.0, 0.0, 0.0, 0.0);
        build_sovf_spectral(&x, &u, DEFAULT_TOL_CASE).unwrap()
    }

    #[test]
    fn exterior_example_values() {
        let form = exterior_diag();
        assert_eq!(form.case_tag, SovfCase::Exterior);
        let idx = form.indexes.unwrap();
        assert_eq!((idx.k1, idx.k2), (1, 1));
        assert_abs_diff_eq!(idx.theta, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            sovf_eval_matrix(&form, &m2(0.0, 1.0, 0.0, 0.0)).unwrap(),
            4.0 / 3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            sovf_eval_matrix(&form, &m2(0.0, 1.0, 1.0, 0.0)).unwrap(),
            4.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            sovf_eval_matrix(&form, &m2(0.7, 0.0, 0.0, 0.2)).unwrap(),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn interior_domain_is_zero() {
        let x = DMatrix::zeros(2, 3);
        let u = DMatrix::from_row_slice(2, 3, &[0.5, 0.0, 0.0, 0.0, 0.3, 0.0]);
        let form = build_sovf_spectral(&x, &u, DEFAULT_TOL_CASE).unwrap();
        assert_eq!(form.case_tag, SovfCase::Interior);
        assert_eq!(sovf_eval(&form, &DVector::zeros(6)).unwrap(), 0.0);
        let mut y = DVector::zeros(6);
        y[4] = 1e-3;
        assert!(sovf_eval(&form, &y).unwrap().is_infinite());
    }

    #[test]
    fn boundary_domain_structure() {
        let x = DMatrix::zeros(2, 2);
        let u = m2(1.0, 0.0, 0.0, 0.0);
        let form = build_sovf_spectral(&x, &u, DEFAULT_TOL_CASE).unwrap();
        assert_eq!(form.case_tag, SovfCase::Boundary);
        assert!(!form.ambiguous);
        assert_eq!(
            sovf_eval_matrix(&form, &m2(0.3, 0.0, 0.0, -2.0)).unwrap(),
            0.0
        );
        assert!(sovf_eval_matrix(&form, &m2(0.0, 1.0, 0.0, 0.0))
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn boundary_band_is_flagged() {
        let x = DMatrix::zeros(2, 2);
        let u = m2(0.6, 0.0, 0.0, 0.4 + 5e-9);
        let form = build_sovf_spectral(&x, &u, DEFAULT_TOL_CASE).unwrap();
        assert_eq!(form.case_tag, SovfCase::Boundary);
        assert!(form.ambiguous);
        // rank 2: both diagonal entries must agree
        assert!(sovf_eval_matrix(&form, &m2(1.0, 0.0, 0.0, 1.0)).unwrap() == 0.0);
        assert!(sovf_eval_matrix(&form, &m2(1.0, 0.0, 0.0, 0.0))
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn rejects_non_subgradient() {
        let x = m2(1.0, 0.0, 0.0, 0.5);
        let u = m2(0.0, 0.0, 0.0, 1.0);
        assert!(build_sovf_spectral(&x, &u, DEFAULT_TOL_CASE).is_err());
    }

    #[test]
    fn tall_matrices_match_transposed_wide_form() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.4, 0.0, 0.0]);
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let tall = build_sovf_spectral(&x, &u, DEFAULT_TOL_CASE).unwrap();
        let wide = build_sovf_spectral(&x.transpose(), &u.transpose(), DEFAULT_TOL_CASE).unwrap();
        let y = DMatrix::from_row_slice(3, 2, &[0.0, 0.7, -0.2, 0.0, 0.5, 0.0]);
        let a = sovf_eval_matrix(&tall, &y).unwrap();
        let b = sovf_eval_matrix(&wide, &y.transpose()).unwrap();
        assert!(a.is_finite());
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn tie_moves_symmetric_part_into_constraints() {
        // σ = (1.5, 0.5): k1 = 1, k2 = 2, θ = 0.5 = σ₂
        let x = m2(0.5, 0.0, 0.0, 0.5);
        let u = m2(1.0, 0.0, 0.0, 0.0);
        let form = build_sovf_spectral(&x, &u, DEFAULT_TOL_CASE).unwrap();
        assert_eq!(form.tie_constraints, 1);
        assert!(sovf_eval_matrix(&form, &m2(0.0, 1.0, 1.0, 0.0))
            .unwrap()
            .is_infinite());
        // skew part keeps weight 2p₁/(θ + σ₂) = 2 on ((ỹ₁₂ − ỹ₂₁)/2)²
        assert_abs_diff_eq!(
            sovf_eval_matrix(&form, &m2(0.0, 1.0, -1.0, 0.0)).unwrap(),
            2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn polyhedral_examples() {
        let orth = NonsmoothTerm::nonpositive_orthant(2);
        let form = build_sovf_polyhedral(
            &orth,
            &DVector::from_row_slice(&[0.0, -1.0]),
            &DVector::from_row_slice(&[2.0, 0.0]),
        )
        .unwrap();
        assert_eq!(form.domain_constraints.len(), 1);
        assert!(sovf_eval(&form, &DVector::from_row_slice(&[1.0, 0.0]))
            .unwrap()
            .is_infinite());
        assert_eq!(
            sovf_eval(&form, &DVector::from_row_slice(&[0.0, 5.0])).unwrap(),
            0.0
        );

        let form = build_sovf_polyhedral(&orth, &DVector::zeros(2), &DVector::zeros(2)).unwrap();
        assert!(form.domain_constraints.is_empty());

        let l1 = NonsmoothTerm::l1(1);
        let form = build_sovf_polyhedral(&l1, &DVector::zeros(1), &DVector::from_row_slice(&[1.0]))
            .unwrap();
        assert!(form.domain_constraints.is_empty());
        let form = build_sovf_polyhedral(&l1, &DVector::zeros(1), &DVector::from_row_slice(&[0.5]))
            .unwrap();
        assert_eq!(form.domain_constraints.len(), 1);

        assert!(build_sovf_polyhedral(
            &NonsmoothTerm::spectral(1, 1),
            &DVector::zeros(1),
            &DVector::zeros(1)
        )
        .is_err());
    }

    #[test]
    fn oracle_matches_exterior_closed_form() {
        let g = NonsmoothTerm::spectral(2, 2);
        let x = mat_to_vec(&m2(1.0, 0.0, 0.0, 0.5));
        let u = mat_to_vec(&m2(1.0, 0.0, 0.0, 0.0));
        let sampler = BsubSampler::new(&g, &x, &u, 16, 7).unwrap();
        let y = mat_to_vec(&m2(0.0, 1.0, 0.0, 0.0));
        let est = sampler.min_value(&y);
        assert!(est.accepted > 0);
        assert!((est.value - 4.0 / 3.0).abs() <= 1e-3, "{est:?}");
        assert_eq!(est.disagreements, 0);
    }

    #[test]
    fn oracle_interior_gives_zero_at_origin() {
        let g = NonsmoothTerm::spectral(2, 2);
        let u = mat_to_vec(&m2(0.5, 0.0, 0.0, 0.2));
        let est = bsub_min_oracle(&g, &DVector::zeros(4), &u, &DVector::zeros(4), 8, 1).unwrap();
        assert_eq!(est.value, 0.0);
        let mut y = DVector::zeros(4);
        y[0] = 1.0;
        let est = bsub_min_oracle(&g, &DVector::zeros(4), &u, &y, 8, 1).unwrap();
        assert!(est.value.is_infinite());
    }

    #[test]
    fn oracle_is_deterministic() {
        let g = NonsmoothTerm::spectral(2, 2);
        let x = mat_to_vec(&m2(1.0, 0.0, 0.0, 0.5));
        let u = mat_to_vec(&m2(1.0, 0.0, 0.0, 0.0));
        let y = mat_to_vec(&m2(0.3, 1.0, -0.4, 0.2));
        let a = bsub_min_oracle(&g, &x, &u, &y, 8, 99).unwrap();
        let b = bsub_min_oracle(&g, &x, &u, &y, 8, 99).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a, b);
    }
}

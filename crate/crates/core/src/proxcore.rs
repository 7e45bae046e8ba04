//! Proximal mappings, projections, Moreau envelopes and first/second subderivatives for the
//! catalog of nonsmooth terms.
//!
//! Points in the space of a term are flat vectors. For the spectral norm a vector of length
//! `p·q` is read as a `p × q` matrix in row-major order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TiltError};
use crate::numkernel::{self, SvdFactorization};

/// Components with `|x_i|` at most this are treated as active (zero).
pub const ACTIVE_TOL: f64 = 1e-10;
/// Relative width of the top singular cluster.
pub const TOP_CLUSTER_TOL: f64 = 1e-8;
/// Default Dykstra iteration budget and successive-iterate tolerance.
pub const DYKSTRA_MAX_ITER: usize = 10_000;
pub const DYKSTRA_TOL: f64 = 1e-10;
/// Membership tolerance for `u ∈ ∂g(x)` checks.
pub const SUBGRADIENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TermKind {
    /// Largest singular value of a `p × q` matrix.
    SpectralNorm {
        p: usize,
        q: usize,
    },
    L1Norm {
        m: usize,
    },
    /// Indicator of `{x : x ≤ 0}`.
    NonpositiveOrthant {
        m: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonsmoothTerm {
    pub kind: TermKind,
}

pub fn vec_to_mat(x: &DVector<f64>, p: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(p, q, x.as_slice())
}

pub fn mat_to_vec(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.transpose().iter().copied())
}

impl NonsmoothTerm {
    pub fn spectral(p: usize, q: usize) -> Self {
        Self {
            kind: TermKind::SpectralNorm { p, q },
        }
    }

    pub fn l1(m: usize) -> Self {
        Self {
            kind: TermKind::L1Norm { m },
        }
    }

    pub fn nonpositive_orthant(m: usize) -> Self {
        Self {
            kind: TermKind::NonpositiveOrthant { m },
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            TermKind::SpectralNorm { p, q } => p * q,
            TermKind::L1Norm { m } | TermKind::NonpositiveOrthant { m } => m,
        }
    }

    /// Lipschitz constant relative to the domain (0 for the indicator, which is constant there).
    pub fn lipschitz_const(&self) -> f64 {
        match self.kind {
            TermKind::SpectralNorm { .. } | TermKind::L1Norm { .. } => 1.0,
            TermKind::NonpositiveOrthant { .. } => 0.0,
        }
    }

    pub fn is_polyhedral(&self) -> bool {
        !matches!(self.kind, TermKind::SpectralNorm { .. })
    }

    pub fn is_indicator(&self) -> bool {
        matches!(self.kind, TermKind::NonpositiveOrthant { .. })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TermKind::SpectralNorm { .. } => "spectral_norm",
            TermKind::L1Norm { .. } => "l1",
            TermKind::NonpositiveOrthant { .. } => "nonpos_orthant",
        }
    }

    pub(crate) fn check_dim(&self, x: &DVector<f64>, what: &str) -> Result<()> {
        if x.len() != self.dim() {
            return Err(TiltError::input(format!(
                "{what}: expected a point of dimension {}, got {}",
                self.dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TiltError::input(format!("{what}: non-finite entry")));
        }
        Ok(())
    }

    /// Matrix view of a point of a spectral-norm term.
    pub fn as_matrix(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        match self.kind {
            TermKind::SpectralNorm { p, q } => Some(vec_to_mat(x, p, q)),
            _ => None,
        }
    }

    pub fn in_domain(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self.kind {
            TermKind::NonpositiveOrthant { .. } => x.iter().all(|&v| v <= tol),
            _ => true,
        }
    }

    /// `g(x)`, with `+∞` outside the domain.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self.kind {
            TermKind::SpectralNorm { p, q } => numkernel::spectral_norm(&vec_to_mat(x, p, q)),
            TermKind::L1Norm { .. } => x.abs().sum(),
            TermKind::NonpositiveOrthant { .. } => {
                if x.iter().all(|&v| v <= 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// The threshold indexes `k1 ≤ k2` of a nonincreasing vector with `‖σ‖₁ > 1`, and the active
/// threshold `theta = (σ₁ + … + σ_{k1} − 1) / k1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdIndexes {
    pub k1: usize,
    pub k2: usize,
    pub theta: f64,
}

/// Indexes are 1-based, matching their use as counts of leading entries.
pub fn compute_threshold_indexes(sigma: &DVector<f64>) -> Result<ThresholdIndexes> {
    let scale = 1.0 + sigma.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tie = 1e-12 * scale;
    if sigma.is_empty() {
        return Err(TiltError::input("threshold indexes of an empty vector"));
    }
    if sigma.iter().any(|&s| !s.is_finite() || s < -tie) {
        return Err(TiltError::input(
            "threshold indexes need finite nonnegative entries",
        ));
    }
    if sigma.as_slice().windows(2).any(|w| w[1] > w[0] + tie) {
        return Err(TiltError::input(
            "threshold indexes need a nonincreasing vector",
        ));
    }
    if sigma.sum() <= 1.0 {
        return Err(TiltError::input(
            "threshold indexes are defined for vectors with l1 norm above 1",
        ));
    }
    let mut running = 0.0;
    let mut k1 = 0;
    let mut k2 = 0;
    for (idx, &s) in sigma.iter().enumerate() {
        running += s;
        let i = idx + 1;
        let bound = (running - 1.0) / i as f64;
        if s > bound + tie {
            k1 = i;
        }
        if s >= bound - tie {
            k2 = i;
        }
    }
    let theta = (sigma.rows(0, k1).sum() - 1.0) / k1 as f64;
    Ok(ThresholdIndexes {
        k1,
        k2,
        theta: theta.max(0.0),
    })
}

/// Euclidean projection onto the probability simplex `{λ ≥ 0, Σλ = 1}`.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut running = 0.0;
    let mut theta = 0.0;
    for (idx, &s) in sorted.iter().enumerate() {
        running += s;
        let t = (running - 1.0) / (idx + 1) as f64;
        if s > t {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Euclidean projection onto the unit ℓ1 ball.
pub fn project_l1_ball(v: &DVector<f64>) -> DVector<f64> {
    if v.abs().sum() <= 1.0 {
        return v.clone();
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[j].abs().total_cmp(&v[i].abs()).then(i.cmp(&j)));
    let sorted = DVector::from_iterator(v.len(), order.iter().map(|&i| v[i].abs()));
    let idx = compute_threshold_indexes(&sorted).expect("sorted input with norm above one");
    v.map(|x| x.signum() * (x.abs() - idx.theta).max(0.0))
}

/// Projection of a vector of singular values onto the ℓ1 ball, keeping entries beyond `k1` at 0.
fn project_singular_values(sigma: &DVector<f64>) -> DVector<f64> {
    if sigma.sum() <= 1.0 {
        return sigma.clone();
    }
    let idx = compute_threshold_indexes(sigma).expect("singular values are sorted");
    DVector::from_fn(sigma.len(), |i, _| {
        if i < idx.k1 {
            (sigma[i] - idx.theta).max(0.0)
        } else {
            0.0
        }
    })
}

/// Euclidean projection onto the nuclear-norm unit ball.
pub fn project_nuclear_ball(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.is_empty() {
        return Ok(a.clone());
    }
    if a.nrows() > a.ncols() {
        return Ok(project_nuclear_ball(&a.transpose())?.transpose());
    }
    let f = numkernel::svd(a)?;
    if f.singulars.sum() <= 1.0 {
        return Ok(a.clone());
    }
    Ok(f.compose(&project_singular_values(&f.singulars)))
}

fn soft_threshold(a: &DVector<f64>, level: f64) -> DVector<f64> {
    a.map(|x| x.signum() * (x.abs() - level).max(0.0))
}

/// `Prox_g(a)` with unit scale.
pub fn prox_apply(g: &NonsmoothTerm, a: &DVector<f64>) -> Result<DVector<f64>> {
    prox_scaled(g, 1.0, a)
}

/// `Prox_{σ g}(a)`.
pub fn prox_scaled(g: &NonsmoothTerm, sigma: f64, a: &DVector<f64>) -> Result<DVector<f64>> {
    g.check_dim(a, "prox")?;
    if !(sigma > 0.0) {
        return Err(TiltError::input("prox scale must be positive"));
    }
    Ok(match g.kind {
        TermKind::SpectralNorm { p, q } => {
            let am = vec_to_mat(a, p, q);
            let proj = project_nuclear_ball(&(&am / sigma))? * sigma;
            mat_to_vec(&(am - proj))
        }
        TermKind::L1Norm { .. } => soft_threshold(a, sigma),
        TermKind::NonpositiveOrthant { .. } => a.map(|x| x.min(0.0)),
    })
}

/// Moreau envelope `e_{σg}(x)` and its gradient `(x − Prox_{σg}(x)) / σ`.
pub fn moreau_envelope(
    g: &NonsmoothTerm,
    sigma: f64,
    x: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    if !(sigma > 0.0) {
        return Err(TiltError::input(format!(
            "Moreau envelope parameter must be positive, got {sigma}"
        )));
    }
    let p = prox_scaled(g, sigma, x)?;
    let diff = x - &p;
    let value = g.value(&p) + diff.norm_squared() / (2.0 * sigma);
    Ok((value, diff / sigma))
}

/// Top singular cluster `(R₁, S₁)` of a nonzero matrix.
fn top_singular_frames(f: &SvdFactorization) -> (DMatrix<f64>, DMatrix<f64>) {
    let top = f.singulars[0];
    let m = f
        .singulars
        .iter()
        .take_while(|&&s| s >= top * (1.0 - TOP_CLUSTER_TOL))
        .count();
    (
        f.left.columns(0, m).into_owned(),
        f.right.columns(0, m).into_owned(),
    )
}

/// Projection of a symmetric matrix onto `{Z ⪰ 0, tr Z = 1}`.
fn project_spectraplex(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = numkernel::sym_eig(&((z + z.transpose()) * 0.5))?;
    let projected = project_simplex(&values);
    Ok(&vectors * DMatrix::from_diagonal(&projected) * vectors.transpose())
}

/// SVD of `X` with the leading left and right singular frames.
type SpectralFrames = (SvdFactorization, DMatrix<f64>, DMatrix<f64>);

fn spectral_frames_or_zero(g: &NonsmoothTerm, x: &DVector<f64>) -> Result<Option<SpectralFrames>> {
    let TermKind::SpectralNorm { p, q } = g.kind else {
        unreachable!("spectral helper on a non-spectral term")
    };
    let xm = vec_to_mat(x, p, q);
    let (work, _) = oriented(&xm);
    if work.abs().max() == 0.0 {
        return Ok(None);
    }
    let f = numkernel::svd(&work)?;
    let (r1, s1) = top_singular_frames(&f);
    Ok(Some((f, r1, s1)))
}

/// Returns the wide orientation of a matrix and whether it was transposed.
fn oriented(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if a.nrows() > a.ncols() {
        (a.transpose(), true)
    } else {
        (a.clone(), false)
    }
}

/// Euclidean projection of `w0` onto `∂g(x)`.
///
/// For the spectral norm at `X ≠ 0` the subdifferential is `{R₁ Z S₁ᵀ : Z ⪰ 0, tr Z = 1}` over
/// the top singular frames, so the projection reduces to a spectraplex projection; at `X = 0` it
/// is the nuclear ball.
pub fn subdiff_project(
    g: &NonsmoothTerm,
    x: &DVector<f64>,
    w0: &DVector<f64>,
) -> Result<DVector<f64>> {
    g.check_dim(x, "subdiff_project point")?;
    g.check_dim(w0, "subdiff_project start")?;
    match g.kind {
        TermKind::SpectralNorm { p, q } => {
            let w = vec_to_mat(w0, p, q);
            let transposed = p > q;
            let w = if transposed { w.transpose() } else { w };
            let projected = match spectral_frames_or_zero(g, x)? {
                None => project_nuclear_ball(&w)?,
                Some((_, r1, s1)) => {
                    let z = r1.transpose() * &w * &s1;
                    &r1 * project_spectraplex(&z)? * s1.transpose()
                }
            };
            let projected = if transposed {
                projected.transpose()
            } else {
                projected
            };
            Ok(mat_to_vec(&projected))
        }
        TermKind::L1Norm { .. } => Ok(DVector::from_fn(x.len(), |i, _| {
            if x[i] > ACTIVE_TOL {
                1.0
            } else if x[i] < -ACTIVE_TOL {
                -1.0
            } else {
                w0[i].clamp(-1.0, 1.0)
            }
        })),
        TermKind::NonpositiveOrthant { .. } => {
            if !g.in_domain(x, ACTIVE_TOL) {
                return Err(TiltError::domain(
                    "subdifferential of the orthant indicator outside {x <= 0}",
                ));
            }
            Ok(DVector::from_fn(x.len(), |i, _| {
                if x[i] < -ACTIVE_TOL {
                    0.0
                } else {
                    w0[i].max(0.0)
                }
            }))
        }
    }
}

/// `dist(w, ∂g(x))`.
pub fn subdiff_distance(g: &NonsmoothTerm, x: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    Ok((subdiff_project(g, x, w)? - w).norm())
}

pub(crate) fn check_subgradient(
    g: &NonsmoothTerm,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<()> {
    let dist = subdiff_distance(g, x, u)?;
    if dist > SUBGRADIENT_TOL * (1.0 + u.norm()) {
        return Err(TiltError::input(format!(
            "u is not a subgradient of {} at x (distance {dist:e})",
            g.name()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DykstraOutcome {
    pub point: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

type Projector = dyn Fn(&DVector<f64>) -> Result<DVector<f64>>;

/// Dykstra's alternating projections onto the intersection of closed convex sets.
pub fn dykstra<P>(
    x0: &DVector<f64>,
    projections: &[P],
    max_iter: usize,
    tol: f64,
) -> Result<DykstraOutcome>
where
    P: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut x = x0.clone();
    let mut increments = vec![DVector::zeros(x0.len()); projections.len()];
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        let start = x.clone();
        for (proj, inc) in projections.iter().zip(increments.iter_mut()) {
            let shifted = &x + &*inc;
            let next = proj(&shifted)?;
            *inc = shifted - &next;
            x = next;
        }
        residual = (&x - &start).norm();
        if residual <= tol {
            return Ok(DykstraOutcome {
                point: x,
                iterations: iter,
                residual,
            });
        }
    }
    Err(TiltError::Convergence {
        what: "Dykstra projection".into(),
        residual,
    })
}

/// Projection onto the spectral-norm subdifferential by Dykstra steps between the nuclear ball
/// and the hyperplane `⟨W, X⟩ = ‖X‖₂`.
pub fn subdiff_project_dykstra(
    p: usize,
    q: usize,
    x: &DVector<f64>,
    w0: &DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<DykstraOutcome> {
    let g = NonsmoothTerm::spectral(p, q);
    g.check_dim(x, "subdiff_project_dykstra point")?;
    g.check_dim(w0, "subdiff_project_dykstra start")?;
    let norm = g.value(x);
    let ball = move |w: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(mat_to_vec(&project_nuclear_ball(&vec_to_mat(w, p, q))?))
    };
    if norm == 0.0 {
        let point = ball(w0)?;
        return Ok(DykstraOutcome {
            point,
            iterations: 0,
            residual: 0.0,
        });
    }
    let xx = x.norm_squared();
    let x_owned = x.clone();
    let plane = move |w: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(w - &x_owned * ((w.dot(&x_owned) - norm) / xx))
    };
    let sets: [&Projector; 2] = [&ball, &plane];
    dykstra(w0, &sets, max_iter, tol)
}

/// First-order subderivative `dg(x)(d)`; `+∞` for directions leaving the domain of an indicator.
pub fn subderivative(g: &NonsmoothTerm, x: &DVector<f64>, d: &DVector<f64>) -> Result<f64> {
    g.check_dim(x, "subderivative point")?;
    g.check_dim(d, "subderivative direction")?;
    match g.kind {
        TermKind::SpectralNorm { p, q } => {
            let dm = vec_to_mat(d, p, q);
            let dm = if p > q { dm.transpose() } else { dm };
            match spectral_frames_or_zero(g, x)? {
                None => Ok(numkernel::spectral_norm(&dm)),
                Some((_, r1, s1)) => {
                    let block = r1.transpose() * dm * s1;
                    numkernel::sym_eig_max(&((&block + block.transpose()) * 0.5))
                }
            }
        }
        TermKind::L1Norm { .. } => Ok(x
            .iter()
            .zip(d.iter())
            .map(|(&xi, &di)| {
                if xi.abs() <= ACTIVE_TOL {
                    di.abs()
                } else {
                    xi.signum() * di
                }
            })
            .sum()),
        TermKind::NonpositiveOrthant { .. } => {
            if !g.in_domain(x, ACTIVE_TOL) {
                return Err(TiltError::domain("orthant subderivative outside {x <= 0}"));
            }
            let dir_tol = 1e-12 * (1.0 + d.amax());
            let tangent = x
                .iter()
                .zip(d.iter())
                .all(|(&xi, &di)| xi < -ACTIVE_TOL || di <= dir_tol);
            Ok(if tangent { 0.0 } else { f64::INFINITY })
        }
    }
}

/// Numerical estimate of the second subderivative `d²g(x, u)(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondSubderivative {
    /// Extrapolated limit; `+∞` when the quotients diverge or leave the domain.
    pub value: f64,
    /// Spread of the last three quotients.
    pub band: f64,
    pub diverged: bool,
}

/// `τ ∈ {1e−2, 1e−2.5, …, 1e−5}`.
pub fn default_tau_schedule() -> Vec<f64> {
    (0..7).map(|k| 10f64.powf(-2.0 - 0.5 * k as f64)).collect()
}

pub fn second_difference_quotient(
    g: &NonsmoothTerm,
    x: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    tau: f64,
) -> f64 {
    let shifted = x + d * tau;
    let gv = g.value(&shifted);
    if !gv.is_finite() {
        return f64::INFINITY;
    }
    (gv - g.value(x) - tau * u.dot(d)) / (0.5 * tau * tau)
}

/// Second-order difference quotients along a decreasing `τ` schedule, extrapolated to `τ = 0`
/// through the last three points.
pub fn second_subderivative_estimate(
    g: &NonsmoothTerm,
    x: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    schedule: &[f64],
) -> Result<SecondSubderivative> {
    g.check_dim(x, "second subderivative point")?;
    g.check_dim(u, "second subderivative subgradient")?;
    g.check_dim(d, "second subderivative direction")?;
    if schedule.len() < 3 {
        return Err(TiltError::input("tau schedule needs at least three points"));
    }
    if schedule.windows(2).any(|w| !(w[1] < w[0])) || schedule.iter().any(|&t| !(t > 0.0)) {
        return Err(TiltError::input(
            "tau schedule must be positive and decreasing",
        ));
    }
    if !g.value(x).is_finite() {
        return Err(TiltError::domain("second subderivative outside the domain"));
    }
    check_subgradient(g, x, u)?;

    let infinite = SecondSubderivative {
        value: f64::INFINITY,
        band: 0.0,
        diverged: true,
    };
    let quotients: Vec<f64> = schedule
        .iter()
        .map(|&t| second_difference_quotient(g, x, u, d, t))
        .collect();
    let n = quotients.len();
    let tail = &quotients[n - 3..];
    if tail.iter().any(|q| !q.is_finite()) {
        return Ok(infinite);
    }
    let first = quotients
        .iter()
        .copied()
        .find(|q| q.is_finite())
        .unwrap_or(tail[0]);
    let floor = 1e-3 * (1.0 + g.value(x).abs());
    if tail[2].abs() >= 10.0 * first.abs().max(floor) {
        return Ok(infinite);
    }

    let taus = &schedule[n - 3..];
    let mut value = 0.0;
    for i in 0..3 {
        let mut weight = 1.0;
        for j in 0..3 {
            if i != j {
                weight *= -taus[j] / (taus[i] - taus[j]);
            }
        }
        value += weight * tail[i];
    }
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SecondSubderivative {
        value,
        band: hi - lo,
        diverged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn diag2(a: f64, b: f64) -> DVector<f64> {
        dv(&[a, 0.0, 0.0, b])
    }

    /// ℓ1-ball projection by bisection on the threshold.
    fn l1_oracle(v: &DVector<f64>) -> DVector<f64> {
        if v.abs().sum() <= 1.0 {
            return v.clone();
        }
        let (mut lo, mut hi) = (0.0, v.amax());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = v.iter().map(|x| (x.abs() - mid).max(0.0)).sum();
            if s > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        v.map(|x| x.signum() * (x.abs() - t).max(0.0))
    }

    #[test]
    fn threshold_index_examples() {
        let t = compute_threshold_indexes(&dv(&[2.0, 0.0])).unwrap();
        assert_eq!((t.k1, t.k2), (1, 1));
        assert_abs_diff_eq!(t.theta, 1.0);
        let t = compute_threshold_indexes(&dv(&[1.5, 0.5])).unwrap();
        assert_eq!((t.k1, t.k2), (1, 2));
        assert_abs_diff_eq!(t.theta, 0.5);
        let t = compute_threshold_indexes(&dv(&[0.6, 0.4, 0.4])).unwrap();
        assert_eq!((t.k1, t.k2), (3, 3));
        assert_abs_diff_eq!(t.theta, 0.4 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn threshold_indexes_match_enumeration_of_defining_sets() {
        // direct enumeration of {i : σ_i > (S_i − 1)/i} and {i : σ_i ≥ (S_i − 1)/i}
        let cases = [
            vec![3.0, 1.0, 0.5],
            vec![0.9, 0.8, 0.1, 0.0],
            vec![1.25, 0.75, 0.5],
        ];
        for c in cases {
            let sigma = dv(&c);
            let mut strict = Vec::new();
            let mut weak = Vec::new();
            for i in 1..=c.len() {
                let s: f64 = c[..i].iter().sum();
                let bound = (s - 1.0) / i as f64;
                if c[i - 1] > bound {
                    strict.push(i);
                }
                if c[i - 1] >= bound {
                    weak.push(i);
                }
            }
            let t = compute_threshold_indexes(&sigma).unwrap();
            assert_eq!(t.k1, *strict.iter().max().unwrap());
            assert_eq!(t.k2, *weak.iter().max().unwrap());
        }
    }

    #[test]
    fn threshold_indexes_reject_unsorted() {
        assert!(compute_threshold_indexes(&dv(&[0.5, 2.0])).is_err());
        assert!(compute_threshold_indexes(&dv(&[0.5, 0.2])).is_err());
    }

    #[test]
    fn l1_projection_examples() {
        assert_eq!(project_l1_ball(&dv(&[0.5, 0.3])), dv(&[0.5, 0.3]));
        assert_abs_diff_eq!(
            project_l1_ball(&dv(&[2.0, 0.0])),
            dv(&[1.0, 0.0]),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            project_l1_ball(&dv(&[1.0, 1.0])),
            dv(&[0.5, 0.5]),
            epsilon = 1e-15
        );
        let v = dv(&[-3.0, 0.2, 1.5, -0.1]);
        assert_abs_diff_eq!(project_l1_ball(&v), l1_oracle(&v), epsilon = 1e-12);
    }

    #[test]
    fn nuclear_projection_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]);
        assert_abs_diff_eq!(project_nuclear_ball(&a).unwrap(), a, epsilon = 1e-15);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let e = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(project_nuclear_ball(&a).unwrap(), e, epsilon = 1e-14);
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.5]);
        assert_abs_diff_eq!(project_nuclear_ball(&a).unwrap(), e, epsilon = 1e-14);
    }

    #[test]
    fn prox_examples() {
        let g = NonsmoothTerm::spectral(2, 2);
        assert_eq!(
            prox_apply(&g, &DVector::zeros(4)).unwrap(),
            DVector::zeros(4)
        );
        let inside = diag2(0.4, -0.3);
        assert_abs_diff_eq!(
            prox_apply(&g, &inside).unwrap(),
            DVector::zeros(4),
            epsilon = 1e-15
        );
        let out = prox_apply(&g, &diag2(1.5, 0.5)).unwrap();
        assert_abs_diff_eq!(out, diag2(0.5, 0.5), epsilon = 1e-14);

        let l1 = NonsmoothTerm::l1(3);
        assert_eq!(
            prox_apply(&l1, &dv(&[2.0, -0.5, -3.0])).unwrap(),
            dv(&[1.0, 0.0, -2.0])
        );
        let orth = NonsmoothTerm::nonpositive_orthant(2);
        assert_eq!(
            prox_apply(&orth, &dv(&[2.0, -0.5])).unwrap(),
            dv(&[0.0, -0.5])
        );
    }

    /// Direct minimization of ‖Z‖₂ + ½‖Z − A‖² over diagonal Z by a fine grid, confirming the
    /// prox of Diag(1.5, 0.5) (the minimizer stays diagonal by symmetry).
    #[test]
    fn spectral_prox_matches_direct_minimization() {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps {
                let z1 = 1.5 * i as f64 / steps as f64;
                let z2 = 1.0 * j as f64 / steps as f64;
                let val = z1.abs().max(z2.abs()) + 0.5 * ((z1 - 1.5).powi(2) + (z2 - 0.5).powi(2));
                if val < best.0 {
                    best = (val, z1, z2);
                }
            }
        }
        let g = NonsmoothTerm::spectral(2, 2);
        let out = prox_apply(&g, &diag2(1.5, 0.5)).unwrap();
        assert!((out[0] - best.1).abs() <= 5e-3 && (out[3] - best.2).abs() <= 5e-3);
    }

    #[test]
    fn moreau_examples() {
        let (v, grad) = moreau_envelope(&NonsmoothTerm::l1(1), 1.0, &dv(&[2.0])).unwrap();
        assert_abs_diff_eq!(v, 1.5);
        assert_abs_diff_eq!(grad[0], 1.0);
        let (v, grad) =
            moreau_envelope(&NonsmoothTerm::nonpositive_orthant(1), 1.0, &dv(&[1.0])).unwrap();
        assert_abs_diff_eq!(v, 0.5);
        assert_abs_diff_eq!(grad[0], 1.0);
        assert!(moreau_envelope(&NonsmoothTerm::l1(1), 0.0, &dv(&[2.0])).is_err());
        assert!(moreau_envelope(&NonsmoothTerm::l1(1), -1.0, &dv(&[2.0])).is_err());
    }

    #[test]
    fn subdiff_projection_examples() {
        let g = NonsmoothTerm::spectral(2, 2);
        let w = subdiff_project(&g, &diag2(2.0, 0.5), &dv(&[0.3, -2.0, 4.0, 1.0])).unwrap();
        assert_abs_diff_eq!(w, diag2(1.0, 0.0), epsilon = 1e-14);

        let w0 = dv(&[2.0, 1.0, 0.0, -0.5]);
        let w = subdiff_project(&g, &DVector::zeros(4), &w0).unwrap();
        let ball = mat_to_vec(&project_nuclear_ball(&vec_to_mat(&w0, 2, 2)).unwrap());
        assert_abs_diff_eq!(w, ball, epsilon = 1e-14);

        let orth = NonsmoothTerm::nonpositive_orthant(2);
        let w = subdiff_project(&orth, &dv(&[0.0, -1.0]), &dv(&[1.0, 1.0])).unwrap();
        assert_eq!(w, dv(&[1.0, 0.0]));
        assert!(subdiff_project(&orth, &dv(&[0.5, -1.0]), &dv(&[1.0, 1.0])).is_err());

        let l1 = NonsmoothTerm::l1(3);
        let w = subdiff_project(&l1, &dv(&[1.0, 0.0, -2.0]), &dv(&[0.0, 3.0, 0.0])).unwrap();
        assert_eq!(w, dv(&[1.0, 1.0, -1.0]));
    }

    /// Support-function check: for X with a simple top singular value, every element of the
    /// nuclear ball achieving ⟨W, X⟩ = ‖X‖₂ equals e₁e₁ᵀ.
    #[test]
    fn simple_top_singular_value_gives_singleton() {
        let g = NonsmoothTerm::spectral(2, 2);
        let x = diag2(2.0, 0.5);
        let e11 = diag2(1.0, 0.0);
        for w0 in [dv(&[0.0, 1.0, 1.0, 0.0]), dv(&[-5.0, 0.0, 2.0, 7.0])] {
            let w = subdiff_project(&g, &x, &w0).unwrap();
            assert_abs_diff_eq!(w.dot(&x), 2.0, epsilon = 1e-12);
            assert!(numkernel::nuclear_norm(&vec_to_mat(&w, 2, 2)) <= 1.0 + 1e-12);
            assert_abs_diff_eq!(w, e11.clone(), epsilon = 1e-12);
        }
    }

    #[test]
    fn dykstra_approaches_closed_form_projection() {
        // repeated top singular value: the hyperplane touches a curved face, so progress is slow
        let x = diag2(1.0, 1.0);
        let w0 = dv(&[0.9, 0.3, -0.2, 0.4]);
        let g = NonsmoothTerm::spectral(2, 2);
        let closed = subdiff_project(&g, &x, &w0).unwrap();
        assert_abs_diff_eq!(closed, dv(&[0.75, 0.05, 0.05, 0.25]), epsilon = 1e-14);
        let errs: Vec<f64> = [1e-4, 1e-6]
            .iter()
            .map(|&tol| {
                let out = subdiff_project_dykstra(2, 2, &x, &w0, 200_000, tol).unwrap();
                (out.point - &closed).norm()
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[1] <= 0.05, "{errs:?}");
    }

    #[test]
    fn dykstra_keeps_a_fixed_point() {
        // W0 already in the subdifferential: a fixed point of both projections
        let out =
            subdiff_project_dykstra(2, 2, &diag2(2.0, 0.5), &diag2(1.0, 0.0), 10, 1e-14).unwrap();
        assert_abs_diff_eq!(out.point, diag2(1.0, 0.0), epsilon = 1e-14);
    }

    #[test]
    fn dykstra_reports_nonconvergence() {
        let x = diag2(1.0, 1.0);
        let w0 = dv(&[5.0, 3.0, -2.0, 4.0]);
        let err = subdiff_project_dykstra(2, 2, &x, &w0, 2, 1e-16).unwrap_err();
        assert!(matches!(err, TiltError::Convergence { .. }));
    }

    #[test]
    fn subderivative_examples() {
        let g = NonsmoothTerm::spectral(2, 2);
        let x = diag2(2.0, 0.5);
        assert_abs_diff_eq!(
            subderivative(&g, &x, &diag2(1.0, 0.0)).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            subderivative(&g, &x, &diag2(0.0, 1.0)).unwrap(),
            0.0,
            epsilon = 1e-14
        );
        let d = dv(&[0.3, -1.0, 2.0, 0.1]);
        let expected = numkernel::spectral_norm(&vec_to_mat(&d, 2, 2));
        assert_abs_diff_eq!(subderivative(&g, &DVector::zeros(4), &d).unwrap(), expected);

        let orth = NonsmoothTerm::nonpositive_orthant(2);
        assert_eq!(
            subderivative(&orth, &dv(&[0.0, -1.0]), &dv(&[-1.0, 5.0])).unwrap(),
            0.0
        );
        assert!(subderivative(&orth, &dv(&[0.0, -1.0]), &dv(&[1.0, 5.0]))
            .unwrap()
            .is_infinite());

        let l1 = NonsmoothTerm::l1(2);
        assert_abs_diff_eq!(
            subderivative(&l1, &dv(&[0.0, -1.0]), &dv(&[-2.0, 3.0])).unwrap(),
            -1.0
        );
    }

    /// One-sided finite-difference quotients (g(X + tD) − g(X)) / t.
    #[test]
    fn spectral_subderivative_matches_difference_quotients() {
        let g = NonsmoothTerm::spectral(2, 3);
        let x = dv(&[1.0, 0.2, 0.0, 0.3, 1.0, 0.1]);
        for d in [
            dv(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            dv(&[0.3, -0.7, 0.2, 0.5, 0.1, -0.4]),
        ] {
            let t = 1e-7;
            let fd = (g.value(&(&x + &d * t)) - g.value(&x)) / t;
            assert!((subderivative(&g, &x, &d).unwrap() - fd).abs() <= 1e-5);
        }
    }

    #[test]
    fn second_subderivative_orthant_examples() {
        let g = NonsmoothTerm::nonpositive_orthant(1);
        let s = default_tau_schedule();
        let est =
            second_subderivative_estimate(&g, &dv(&[0.0]), &dv(&[0.0]), &dv(&[-1.0]), &s).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(!est.diverged);
        // ⟨u, d⟩ < 0 = dg(x)(d): quotients 2/τ blow up
        let est =
            second_subderivative_estimate(&g, &dv(&[0.0]), &dv(&[1.0]), &dv(&[-1.0]), &s).unwrap();
        assert!(est.diverged && est.value.is_infinite());
        // leaving the domain
        let est =
            second_subderivative_estimate(&g, &dv(&[0.0]), &dv(&[1.0]), &dv(&[1.0]), &s).unwrap();
        assert!(est.diverged);
    }

    #[test]
    fn second_subderivative_spectral_closed_forms() {
        let g = NonsmoothTerm::spectral(2, 2);
        let s = default_tau_schedule();
        let d = dv(&[0.0, 1.0, 0.0, 0.0]);
        // X = Diag(1, 0.5), U = e₁e₁ᵀ: σ₁(X + τD) = 1 + (2/3)τ² + O(τ⁴)
        let est =
            second_subderivative_estimate(&g, &diag2(1.0, 0.5), &diag2(1.0, 0.0), &d, &s).unwrap();
        assert!((est.value - 4.0 / 3.0).abs() <= 1e-6 + est.band, "{est:?}");
        // X = Diag(2, 0.5): value 8/15
        let est =
            second_subderivative_estimate(&g, &diag2(2.0, 0.5), &diag2(1.0, 0.0), &d, &s).unwrap();
        assert!((est.value - 8.0 / 15.0).abs() <= 1e-6 + est.band, "{est:?}");
    }

    #[test]
    fn second_subderivative_rejects_non_subgradient() {
        let g = NonsmoothTerm::spectral(2, 2);
        let s = default_tau_schedule();
        let err = second_subderivative_estimate(
            &g,
            &diag2(2.0, 0.5),
            &diag2(0.0, 1.0),
            &diag2(1.0, 0.0),
            &s,
        );
        assert!(err.is_err());
    }
}

//! Composite problems `min f0(x) + g(F(x))` and their first-order objects: Lagrangian,
//! KKT residual, multiplier sets, critical cone, the `τ` radius and directional multipliers.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TiltError};
use crate::numkernel;
use crate::proxcore::{self, NonsmoothTerm, TermKind, ACTIVE_TOL};
use crate::rng::{self, Purpose};

pub const MULTIPLIER_MAX_ITER: usize = 5000;
pub const MULTIPLIER_DEDUP_RADIUS: f64 = 1e-6;
/// Accepted violation of `∇F(x)ᵀμ = x*`, relative to `1 + ‖x*‖`.
pub const MULTIPLIER_TOL: f64 = 1e-8;
/// Width of the argmax band in the exact directional filter.
pub const EXACT_FILTER_BAND: f64 = 1e-5;

/// Smooth part `f0`.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothObjective {
    /// `½ xᵀQx + cᵀx`.
    Quadratic { q: DMatrix<f64>, c: DVector<f64> },
    /// `½ xᵀQx + cᵀx + Σ aᵢ xᵢ⁴`.
    Quartic {
        q: DMatrix<f64>,
        c: DVector<f64>,
        a: DVector<f64>,
    },
}

impl SmoothObjective {
    fn parts(&self) -> (&DMatrix<f64>, &DVector<f64>, Option<&DVector<f64>>) {
        match self {
            SmoothObjective::Quadratic { q, c } => (q, c, None),
            SmoothObjective::Quartic { q, c, a } => (q, c, Some(a)),
        }
    }

    pub fn dim(&self) -> usize {
        self.parts().1.len()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let (q, c, a) = self.parts();
        let mut v = 0.5 * x.dot(&(q * x)) + c.dot(x);
        if let Some(a) = a {
            v += a
                .iter()
                .zip(x.iter())
                .map(|(ai, xi)| ai * xi.powi(4))
                .sum::<f64>();
        }
        v
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (q, c, a) = self.parts();
        let mut g = q * x + c;
        if let Some(a) = a {
            for i in 0..g.len() {
                g[i] += 4.0 * a[i] * x[i].powi(3);
            }
        }
        g
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (q, _, a) = self.parts();
        let mut h = q.clone();
        if let Some(a) = a {
            for i in 0..x.len() {
                h[(i, i)] += 12.0 * a[i] * x[i] * x[i];
            }
        }
        h
    }
}

/// Smooth map `F`; component `i` of the quadratic map is `(Ax + b)ᵢ + ½ xᵀHᵢx`.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothMap {
    Affine {
        a: DMatrix<f64>,
        b: DVector<f64>,
    },
    Quadratic {
        a: DMatrix<f64>,
        b: DVector<f64>,
        hessians: Vec<DMatrix<f64>>,
    },
}

impl SmoothMap {
    /// The identity into `R^m`, also used for the reshape onto `p × q` matrices (row-major).
    pub fn identity(m: usize) -> Self {
        SmoothMap::Affine {
            a: DMatrix::identity(m, m),
            b: DVector::zeros(m),
        }
    }

    fn linear(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        match self {
            SmoothMap::Affine { a, b } | SmoothMap::Quadratic { a, b, .. } => (a, b),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.linear().0.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.linear().0.nrows()
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, SmoothMap::Affine { .. })
    }

    pub fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        let (a, b) = self.linear();
        let mut v = a * x + b;
        if let SmoothMap::Quadratic { hessians, .. } = self {
            for (i, h) in hessians.iter().enumerate() {
                v[i] += 0.5 * x.dot(&(h * x));
            }
        }
        v
    }

    /// `∇F(x)`, an `m × n` matrix.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (a, _) = self.linear();
        let mut j = a.clone();
        if let SmoothMap::Quadratic { hessians, .. } = self {
            for (i, h) in hessians.iter().enumerate() {
                let row = h * x;
                for k in 0..j.ncols() {
                    j[(i, k)] += row[k];
                }
            }
        }
        j
    }

    /// Matrix of `v ↦ ⟨μ, ∇²F(x)(v, v)⟩`; zero for affine maps.
    pub fn second_action(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let n = self.in_dim();
        let mut out = DMatrix::zeros(n, n);
        if let SmoothMap::Quadratic { hessians, .. } = self {
            for (h, m) in hessians.iter().zip(mu.iter()) {
                out += h * *m;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeProblem {
    pub n: usize,
    pub f0: SmoothObjective,
    pub map: SmoothMap,
    pub g: NonsmoothTerm,
    /// Modulus of metric subregularity of the constraint system, supplied by the user.
    pub kappa_mscq: f64,
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(TiltError::input(format!(
            "{what} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    numkernel::check_finite(m, what)?;
    numkernel::symmetrized(m).map(|_| ())
}

fn check_len(v: &DVector<f64>, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(TiltError::input(format!(
            "{what} must have length {n}, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(TiltError::input(format!("{what} has a non-finite entry")));
    }
    Ok(())
}

impl CompositeProblem {
    pub fn new(
        f0: SmoothObjective,
        map: SmoothMap,
        g: NonsmoothTerm,
        kappa_mscq: f64,
    ) -> Result<Self> {
        let n = f0.dim();
        let (q, c, a) = f0.parts();
        check_square(q, n, "f0.Q")?;
        check_len(c, n, "f0.c")?;
        if let Some(a) = a {
            check_len(a, n, "f0.a")?;
        }
        let (fa, fb) = map.linear();
        if fa.ncols() != n {
            return Err(TiltError::input(format!(
                "F.A has {} columns but f0 has dimension {n}",
                fa.ncols()
            )));
        }
        numkernel::check_finite(fa, "F.A")?;
        check_len(fb, fa.nrows(), "F.b")?;
        if let SmoothMap::Quadratic { hessians, .. } = &map {
            if hessians.len() != fa.nrows() {
                return Err(TiltError::input(format!(
                    "F has {} components but {} hessians",
                    fa.nrows(),
                    hessians.len()
                )));
            }
            for (i, h) in hessians.iter().enumerate() {
                check_square(h, n, &format!("F.hessians[{i}]"))?;
            }
        }
        if map.out_dim() != g.dim() {
            return Err(TiltError::input(format!(
                "F maps into dimension {} but g acts on dimension {}",
                map.out_dim(),
                g.dim()
            )));
        }
        if !(kappa_mscq > 0.0) || !kappa_mscq.is_finite() {
            return Err(TiltError::input("kappa_mscq must be positive and finite"));
        }
        Ok(Self {
            n,
            f0,
            map,
            g,
            kappa_mscq,
        })
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.f0.value(x) + self.g.value(&self.map.value(x))
    }

    /// `L(x, μ) = f0(x) + ⟨F(x), μ⟩`.
    pub fn lagrangian(&self, x: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        self.f0.value(x) + self.map.value(x).dot(mu)
    }

    pub fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        check_len(x, self.n, "x")
    }

    /// `F(x)`, failing when it leaves `dom g`.
    pub fn feasible_image(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let fx = self.map.value(x);
        if !self.g.in_domain(&fx, ACTIVE_TOL) {
            return Err(TiltError::domain("F(x) lies outside dom g"));
        }
        Ok(fx)
    }
}

/// A point with its sampled multipliers.
#[derive(Debug, Clone)]
pub struct StationaryPoint {
    pub x_bar: DVector<f64>,
    pub multipliers: Vec<DVector<f64>>,
    pub kkt_residual: f64,
}

/// `‖∇f0(x) + ∇F(x)ᵀμ‖ + dist(μ, ∂g(F(x)))`.
pub fn kkt_residual(prob: &CompositeProblem, x: &DVector<f64>, mu: &DVector<f64>) -> Result<f64> {
    let fx = prob.feasible_image(x)?;
    check_len(mu, prob.g.dim(), "multiplier")?;
    let grad = prob.f0.gradient(x) + prob.map.jacobian(x).transpose() * mu;
    Ok(grad.norm() + proxcore::subdiff_distance(&prob.g, &fx, mu)?)
}

/// `∇²f0(x) + ⟨μ, ∇²F(x)(·, ·)⟩`.
pub fn lagrangian_hessian(
    prob: &CompositeProblem,
    x: &DVector<f64>,
    mu: &DVector<f64>,
) -> DMatrix<f64> {
    let h = prob.f0.hessian(x) + prob.map.second_action(mu);
    (&h + h.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub struct MultiplierSample {
    /// Lexicographically sorted, pairwise farther apart than the dedup radius.
    pub multipliers: Vec<DVector<f64>>,
    pub starts: usize,
    pub converged: usize,
    /// Smallest `‖∇F(x)ᵀμ − x*‖` reached over all starts.
    pub best_residual: f64,
}

impl MultiplierSample {
    /// Largest pairwise distance among the sampled multipliers.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.multipliers.iter().enumerate() {
            for b in &self.multipliers[i + 1..] {
                d = d.max((a - b).norm());
            }
        }
        d
    }
}

pub(crate) fn lexicographic(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let o = x.total_cmp(y);
        if o.is_ne() {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

pub(crate) fn sort_dedup(mut points: Vec<DVector<f64>>, radius: f64) -> Vec<DVector<f64>> {
    points.sort_by(lexicographic);
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for p in points {
        if kept.iter().all(|k| (k - &p).norm() > radius) {
            kept.push(p);
        }
    }
    kept
}

/// Points of `Λ(x, x*) = {μ ∈ ∂g(F(x)) : ∇F(x)ᵀμ = x*}` from alternating projections started
/// at random points.
pub fn multiplier_sample(
    prob: &CompositeProblem,
    x: &DVector<f64>,
    xstar: &DVector<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<MultiplierSample> {
    let fx = prob.feasible_image(x)?;
    check_len(xstar, prob.n, "x*")?;
    let jt = prob.map.jacobian(x).transpose();
    let jt_pinv = numkernel::pseudo_inverse(&jt, 1e-12)?;
    let scale = 1.0 + xstar.norm();
    let tol = MULTIPLIER_TOL * scale;
    let m = prob.g.dim();

    let runs: Vec<Result<(Option<DVector<f64>>, f64)>> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut stream = rng::stream(seed, Purpose::MultiplierStart, k as u64);
            let mut mu = rng::normal_vector(&mut stream, m) * scale;
            let mut residual = f64::INFINITY;
            for _ in 0..MULTIPLIER_MAX_ITER {
                let affine = &mu - &jt_pinv * (&jt * &mu - xstar);
                mu = proxcore::subdiff_project(&prob.g, &fx, &affine)?;
                residual = (&jt * &mu - xstar).norm();
                if residual <= 1e-2 * tol {
                    break;
                }
            }
            Ok(((residual <= tol).then_some(mu), residual))
        })
        .collect();

    let mut found = Vec::new();
    let mut best_residual = f64::INFINITY;
    for r in runs {
        let (mu, res) = r?;
        best_residual = best_residual.min(res);
        if let Some(mu) = mu {
            found.push(mu);
        }
    }
    let converged = found.len();
    Ok(MultiplierSample {
        multipliers: sort_dedup(found, MULTIPLIER_DEDUP_RADIUS),
        starts: n_samples,
        converged,
        best_residual,
    })
}

/// Whether `dg(F(x))(∇F(x)v) = ⟨x*, v⟩` within `tol·(1 + ‖v‖)`.
pub fn critical_cone_test(
    prob: &CompositeProblem,
    x: &DVector<f64>,
    xstar: &DVector<f64>,
    v: &DVector<f64>,
    tol: f64,
) -> Result<bool> {
    let fx = prob.feasible_image(x)?;
    check_len(xstar, prob.n, "x*")?;
    check_len(v, prob.n, "direction")?;
    let jv = prob.map.jacobian(x) * v;
    let dg = proxcore::subderivative(&prob.g, &fx, &jv)?;
    if !dg.is_finite() {
        return Ok(false);
    }
    Ok((dg - xstar.dot(v)).abs() <= tol * (1.0 + v.norm()))
}

/// `κℓ‖∇F(x)‖ + κ‖x*‖ + ℓ` with the MSCQ modulus `κ` and the Lipschitz constant `ℓ` of `g`.
pub fn tau_constant(
    prob: &CompositeProblem,
    x: &DVector<f64>,
    xstar: &DVector<f64>,
) -> Result<f64> {
    prob.check_point(x)?;
    check_len(xstar, prob.n, "x*")?;
    let kappa = prob.kappa_mscq;
    let ell = prob.g.lipschitz_const();
    let jnorm = numkernel::spectral_norm(&prob.map.jacobian(x));
    Ok(kappa * ell * jnorm + kappa * xstar.norm() + ell)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Exact,
    #[default]
    Conservative,
}

/// Objective of the directional multiplier set, `⟨μ, ∇²F(x)(v, v)⟩ + d²g(F(x), μ)(∇F(x)v)`.
pub fn directional_objective(
    prob: &CompositeProblem,
    x: &DVector<f64>,
    v: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<f64> {
    let fx = prob.feasible_image(x)?;
    let jv = prob.map.jacobian(x) * v;
    let curvature = v.dot(&(prob.map.second_action(mu) * v));
    let d2 = proxcore::second_subderivative_estimate(
        &prob.g,
        &fx,
        mu,
        &jv,
        &proxcore::default_tau_schedule(),
    )?;
    Ok(curvature + d2.value)
}

/// Candidates attaining the directional argmax (exact mode) or all candidates (conservative).
pub fn directional_multiplier_filter(
    prob: &CompositeProblem,
    x: &DVector<f64>,
    v: &DVector<f64>,
    candidates: &[DVector<f64>],
    mode: FilterMode,
) -> Result<Vec<DVector<f64>>> {
    if mode == FilterMode::Conservative || candidates.len() <= 1 {
        return Ok(candidates.to_vec());
    }
    let values: Vec<f64> = candidates
        .iter()
        .map(|mu| directional_objective(prob, x, v, mu))
        .collect::<Result<_>>()?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(candidates
        .iter()
        .zip(values)
        .filter(|(_, val)| {
            if best.is_infinite() {
                val.is_infinite()
            } else {
                *val >= best - EXACT_FILTER_BAND
            }
        })
        .map(|(mu, _)| mu.clone())
        .collect())
}

/// Sampled ratios `dist(x', C) / dist(F(x'), dom g)` near `x`, where `C = F⁻¹(dom g)`.
///
/// Only available for an affine `F` into the nonpositive orthant, where `C` is a polyhedron and
/// the distance comes from Dykstra's method over its halfspaces. Diagnostic only.
pub fn estimate_mscq_modulus(
    prob: &CompositeProblem,
    x: &DVector<f64>,
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Option<f64>> {
    prob.check_point(x)?;
    let (SmoothMap::Affine { a, b }, TermKind::NonpositiveOrthant { .. }) =
        (&prob.map, prob.g.kind)
    else {
        return Ok(None);
    };
    let halfspaces: Vec<(DVector<f64>, f64)> = (0..a.nrows())
        .filter_map(|i| {
            let row = a.row(i).transpose();
            let nn = row.norm_squared();
            (nn > 0.0).then_some((row, nn))
        })
        .collect();
    let projections: Vec<_> = halfspaces
        .iter()
        .enumerate()
        .map(|(i, (row, nn))| {
            let bi = b[i];
            move |z: &DVector<f64>| -> Result<DVector<f64>> {
                let excess = row.dot(z) + bi;
                Ok(if excess > 0.0 {
                    z - row * (excess / nn)
                } else {
                    z.clone()
                })
            }
        })
        .collect();
    let ratios: Vec<Option<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|k| -> Result<Option<f64>> {
            let mut stream = rng::stream(seed, Purpose::Mscq, k as u64);
            let xp = x + rng::uniform_in_ball(&mut stream, prob.n, radius);
            let viol = prob.map.value(&xp).map(|v| v.max(0.0)).norm();
            if viol <= 1e-12 {
                return Ok(None);
            }
            let out = proxcore::dykstra(&xp, &projections, 20_000, 1e-12)?;
            Ok(Some((out.point - &xp).norm() / viol))
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().flatten().reduce(f64::max))
}

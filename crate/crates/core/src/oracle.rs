//! Brute-force probe of tilt stability: solve the tilted problems
//! `min f0(x) + g(F(x)) − ⟨u, x − x̄⟩` over the ball `‖x − x̄‖ ≤ δ` for sampled tilts `u` and
//! measure how the minimizers move.
//!
//! The oracle is evidence, not proof. A blow-up of the ratios refutes stability convincingly;
//! bounded ratios only support it statistically.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::composite::{CompositeProblem, SmoothMap};
use crate::error::{Result, TiltError};
use crate::proxcore::{self, TermKind};
use crate::rng::{self, Purpose};

/// Result of a Nelder-Mead run.
#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Nelder-Mead with dimension-adapted coefficients, restarted from the best vertex until a
/// restart stops improving.
pub fn nelder_mead<F>(
    f: F,
    x0: &DVector<f64>,
    step: f64,
    max_evals: usize,
    ftol: f64,
    xtol: f64,
) -> SimplexResult
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut best = run_simplex(&f, x0, step, max_evals, ftol, xtol);
    let mut evals = best.evals;
    let mut restart_step = step * 0.1;
    for _ in 0..6 {
        if evals >= max_evals {
            break;
        }
        let next = run_simplex(&f, &best.x, restart_step, max_evals - evals, ftol, xtol);
        evals += next.evals;
        let improved = next.value < best.value - ftol;
        if next.value <= best.value {
            best = next;
        }
        if !improved {
            break;
        }
        restart_step *= 0.1;
    }
    best.evals = evals;
    best
}

fn run_simplex<F>(
    f: &F,
    x0: &DVector<f64>,
    step: f64,
    max_evals: usize,
    ftol: f64,
    xtol: f64,
) -> SimplexResult
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x0.len();
    let nf = n as f64;
    let (alpha, beta, gamma, delta) =
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let (alpha, beta, gamma, delta) = if n <= 1 {
        (1.0, 2.0, 0.5, 0.5)
    } else {
        (alpha, beta, gamma, delta)
    };

    let mut pts: Vec<DVector<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.clone());
    for i in 0..n {
        let mut p = x0.clone();
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(&f).collect();
    let mut evals = n + 1;

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = (vals[n] - vals[0]).abs();
        let diameter = pts[1..]
            .iter()
            .map(|p| (p - &pts[0]).amax())
            .fold(0.0, f64::max);
        if (spread <= ftol && diameter <= xtol) || diameter <= 1e-3 * xtol || evals >= max_evals {
            break;
        }

        let centroid = pts[..n].iter().fold(DVector::zeros(n), |acc, p| acc + p) / nf;
        let xr = &centroid + (&centroid - &pts[n]) * alpha;
        let fr = f(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = &centroid + (&xr - &centroid) * beta;
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = &centroid + (&xr - &centroid) * gamma;
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = &centroid - (&centroid - &pts[n]) * gamma;
            let fc = f(&xc);
            (xc, fc)
        };
        evals += 1;
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            pts[i] = &pts[0] + (&pts[i] - &pts[0]) * delta;
            vals[i] = f(&pts[i]);
        }
        evals += n;
    }
    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(0);
    SimplexResult {
        x: pts[best].clone(),
        value: vals[best],
        evals,
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub multistarts: usize,
    /// Evaluation budget per pass.
    pub max_evals: usize,
    /// Moreau parameters of the smoothing passes for norm-type `g`.
    pub smoothing: Vec<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            multistarts: 16,
            max_evals: 20_000,
            smoothing: vec![1e-1, 1e-2, 1e-3],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TiltSample {
    pub index: usize,
    pub u: Vec<f64>,
    /// Cluster representatives of the near-optimal multistart results, best first.
    pub minimizers: Vec<Vec<f64>>,
    pub best_value: Option<f64>,
    pub cluster_diameter: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzPair {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub delta: f64,
    pub tilt_radius: f64,
    pub n_tilts: usize,
    pub seed: u64,
    pub cluster_tol: f64,
    pub pair_floor: f64,
    pub samples: Vec<TiltSample>,
    pub lipschitz_pairs: Vec<LipschitzPair>,
    pub empirical_lipschitz: Option<f64>,
    pub uniqueness_violations: usize,
    pub failed_samples: usize,
    pub center_check: bool,
}

/// Feasibility handling for the localized tilted objective.
struct Localized<'a> {
    prob: &'a CompositeProblem,
    x_bar: &'a DVector<f64>,
    delta: f64,
    /// `F` is the identity into the orthant, so feasibility is a componentwise clip.
    clip: bool,
}

impl Localized<'_> {
    /// Retraction onto the feasible part of the ball (orthant clip, then radial scaling).
    fn retract(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = if self.clip {
            x.map(|v| v.min(0.0))
        } else {
            x.clone()
        };
        let d = (&y - self.x_bar).norm();
        if d > self.delta {
            y = self.x_bar + (&y - self.x_bar) * (self.delta / d);
        }
        y
    }

    /// Objective at the retracted point plus the squared retraction distance.
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>, sigma: Option<f64>) -> f64 {
        let y = self.retract(x);
        let fy = self.prob.map.value(&y);
        let gv = match sigma {
            Some(s) => proxcore::moreau_envelope(&self.prob.g, s, &fy)
                .map(|(v, _)| v)
                .unwrap_or(f64::INFINITY),
            None => self.prob.g.value(&fy),
        };
        if !gv.is_finite() {
            return f64::INFINITY;
        }
        self.prob.f0.value(&y) + gv - u.dot(&(&y - self.x_bar)) + (x - &y).norm_squared()
    }
}

fn identity_into_orthant(prob: &CompositeProblem) -> bool {
    if !matches!(prob.g.kind, TermKind::NonpositiveOrthant { .. }) {
        return false;
    }
    match &prob.map {
        SmoothMap::Affine { a, b } => {
            a.is_square()
                && *a == nalgebra::DMatrix::identity(a.nrows(), a.ncols())
                && b.iter().all(|&v| v == 0.0)
        }
        SmoothMap::Quadratic { .. } => false,
    }
}

fn solve_tilt(
    loc: &Localized,
    u: &DVector<f64>,
    starts: &[DVector<f64>],
    opts: &SolverOptions,
) -> Vec<(DVector<f64>, f64)> {
    let n = loc.x_bar.len();
    let smoothing: &[f64] = if loc.prob.g.is_indicator() {
        &[]
    } else {
        &opts.smoothing
    };
    let xtol = 1e-11 * (1.0 + loc.delta);
    starts
        .iter()
        .filter_map(|x0| {
            let mut x = x0.clone();
            let mut step = 0.1 * loc.delta;
            for &s in smoothing {
                let r = nelder_mead(
                    |z| loc.eval(z, u, Some(s)),
                    &x,
                    step,
                    opts.max_evals,
                    1e-15,
                    xtol,
                );
                x = r.x;
                step = (step * 0.5).max(1e-3 * loc.delta);
            }
            let r = nelder_mead(
                |z| loc.eval(z, u, None),
                &x,
                step,
                opts.max_evals,
                1e-15,
                xtol,
            );
            let y = loc.retract(&r.x);
            let value = loc.eval(&y, u, None);
            (value.is_finite() && n > 0).then_some((y, value))
        })
        .collect()
}

/// Solves the tilted localized problems at `n_tilts` tilts (`u = 0` first) and collects
/// pairwise Lipschitz ratios of the argmin map.
pub fn tilt_oracle(
    prob: &CompositeProblem,
    x_bar: &DVector<f64>,
    delta: f64,
    tilt_radius: f64,
    n_tilts: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<OracleReport> {
    prob.check_point(x_bar)?;
    if !(delta > 0.0) || !(tilt_radius > 0.0) {
        return Err(TiltError::input("delta and tilt_radius must be positive"));
    }
    if n_tilts < 2 {
        return Err(TiltError::input("n_tilts must be at least 2"));
    }
    if opts.multistarts == 0 {
        return Err(TiltError::input("at least one multistart is required"));
    }
    let n = prob.n;
    let loc = Localized {
        prob,
        x_bar,
        delta,
        clip: identity_into_orthant(prob),
    };
    let cluster_tol = 1e-4 * delta;
    let pair_floor = 1e-3 * tilt_radius;

    let samples: Vec<TiltSample> = (0..n_tilts)
        .into_par_iter()
        .map(|k| {
            let u = if k == 0 {
                DVector::zeros(n)
            } else {
                let mut s = rng::stream(seed, Purpose::TiltSample, k as u64);
                rng::uniform_in_ball(&mut s, n, tilt_radius)
            };
            let mut s = rng::stream(seed, Purpose::Multistart, k as u64);
            let starts: Vec<DVector<f64>> = (0..opts.multistarts)
                .map(|i| {
                    if i == 0 {
                        x_bar.clone()
                    } else {
                        x_bar + rng::uniform_in_ball(&mut s, n, delta)
                    }
                })
                .collect();
            let results = solve_tilt(&loc, &u, &starts, opts);
            let u_vec: Vec<f64> = u.iter().copied().collect();
            let Some(vmin) = results.iter().map(|r| r.1).reduce(f64::min) else {
                return TiltSample {
                    index: k,
                    u: u_vec,
                    minimizers: Vec::new(),
                    best_value: None,
                    cluster_diameter: 0.0,
                    failed: true,
                };
            };
            let mut near: Vec<&(DVector<f64>, f64)> = results
                .iter()
                .filter(|r| r.1 <= vmin + 1e-10 * (1.0 + vmin.abs()))
                .collect();
            near.sort_by(|a, b| a.1.total_cmp(&b.1));
            let mut reps: Vec<DVector<f64>> = Vec::new();
            for (x, _) in &near {
                if reps.iter().all(|r| (r - x).norm() > cluster_tol) {
                    reps.push(x.clone());
                }
            }
            let mut diameter: f64 = 0.0;
            for (i, a) in reps.iter().enumerate() {
                for b in &reps[i + 1..] {
                    diameter = diameter.max((a - b).norm());
                }
            }
            TiltSample {
                index: k,
                u: u_vec,
                minimizers: reps.iter().map(|r| r.iter().copied().collect()).collect(),
                best_value: Some(vmin),
                cluster_diameter: diameter,
                failed: false,
            }
        })
        .collect();

    let ok: Vec<&TiltSample> = samples.iter().filter(|s| !s.failed).collect();
    let mut pairs = Vec::new();
    for (i, a) in ok.iter().enumerate() {
        for b in &ok[i + 1..] {
            let ua = DVector::from_column_slice(&a.u);
            let ub = DVector::from_column_slice(&b.u);
            let du = (&ua - &ub).norm();
            if du < pair_floor {
                continue;
            }
            let xa = DVector::from_column_slice(&a.minimizers[0]);
            let xb = DVector::from_column_slice(&b.minimizers[0]);
            pairs.push(LipschitzPair {
                u1: a.u.clone(),
                u2: b.u.clone(),
                ratio: (xa - xb).norm() / du,
            });
        }
    }
    let center = &samples[0];
    let center_check = !center.failed
        && center.minimizers.len() == 1
        && (DVector::from_column_slice(&center.minimizers[0]) - x_bar).norm() <= cluster_tol;
    Ok(OracleReport {
        delta,
        tilt_radius,
        n_tilts,
        seed,
        cluster_tol,
        pair_floor,
        empirical_lipschitz: pairs.iter().map(|p| p.ratio).reduce(f64::max),
        uniqueness_violations: samples.iter().filter(|s| s.minimizers.len() > 1).count(),
        failed_samples: samples.iter().filter(|s| s.failed).count(),
        center_check,
        samples,
        lipschitz_pairs: pairs,
    })
}

/// Oracle runs at `tilt_radius · 10^{-i}` for `i = 0..k`.
#[allow(clippy::too_many_arguments)]
pub fn tilt_sweep(
    prob: &CompositeProblem,
    x_bar: &DVector<f64>,
    delta: f64,
    tilt_radius: f64,
    k: usize,
    n_tilts: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<Vec<OracleReport>> {
    (0..k)
        .map(|i| {
            let r = tilt_radius * 10f64.powi(-(i as i32));
            tilt_oracle(prob, x_bar, delta, r, n_tilts, seed, opts)
        })
        .collect()
}

/// Nearest-rank quantile of the recorded ratios (`quantile = 1` gives the maximum).
pub fn lipschitz_estimate(report: &OracleReport, quantile: f64) -> Result<f64> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(TiltError::input("quantile must lie in (0, 1]"));
    }
    let mut ratios: Vec<f64> = report.lipschitz_pairs.iter().map(|p| p.ratio).collect();
    if ratios.is_empty() {
        return Err(TiltError::input("oracle report has no Lipschitz ratios"));
    }
    ratios.sort_by(f64::total_cmp);
    let rank = (quantile * ratios.len() as f64).ceil() as usize;
    Ok(ratios[rank.clamp(1, ratios.len()) - 1])
}

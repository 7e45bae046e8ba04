//! Pointbased second-order certificates for tilt stability.
//!
//! For each sampled multiplier `μ` the second-order condition is reduced to the subspace
//! `S = {v : ∇F(x̄)v ∈ dom Γ_g(F(x̄), μ)}` with an orthonormal basis `B`, where it becomes an
//! eigenvalue test on `M = Bᵀ∇²L B + (∇F B)ᵀ G (∇F B)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::composite::{
    self, critical_cone_test, directional_multiplier_filter, lagrangian_hessian, multiplier_sample,
    tau_constant, CompositeProblem, FilterMode,
};
use crate::error::{Result, TiltError};
use crate::numkernel;
use crate::proxcore::{self, ACTIVE_TOL};
use crate::rng::{self, Purpose};
use crate::sovf::{self, SovfCase, SovfForm};

/// Absolute buffer on `λ_min − 1/κ` for the strict and weak inequalities.
pub const CERTIFY_MARGIN: f64 = 1e-9;
pub const CRITICAL_TOL: f64 = 1e-8;
const NULLSPACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Certified,
    Refuted,
    Inconclusive,
}

#[derive(Debug, Clone, Copy)]
pub struct AnalyzeOptions {
    pub mu_samples: usize,
    pub seed: u64,
    pub mode: FilterMode,
    /// Random directions drawn when searching the critical cone.
    pub direction_samples: usize,
    /// Caller asserts the sequence hypotheses of the necessary condition.
    pub hypotheses: bool,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            mu_samples: 64,
            seed: 0,
            mode: FilterMode::Conservative,
            direction_samples: 32,
            hypotheses: false,
        }
    }
}

/// Orthonormal basis of `S` and the reduced matrix.
#[derive(Debug, Clone)]
pub struct ReducedForm {
    /// `n × d`; `d = 0` when `S = {0}`.
    pub basis: DMatrix<f64>,
    pub matrix: DMatrix<f64>,
}

impl ReducedForm {
    /// `λ_min(M)` and a unit witness direction `v = Bw` in the ambient space.
    pub fn lambda_min(&self) -> Result<Option<(f64, DVector<f64>)>> {
        if self.basis.ncols() == 0 {
            return Ok(None);
        }
        let (lambda, w) = numkernel::sym_eig_min(&self.matrix)?;
        Ok(Some((lambda, &self.basis * w)))
    }
}

/// `q(v) = ⟨v, ∇²L(x̄, μ)v⟩ + Γ(∇F(x̄)v)` restricted to `S`.
pub fn reduced_quadratic_form(
    prob: &CompositeProblem,
    x_bar: &DVector<f64>,
    mu: &DVector<f64>,
    form: &SovfForm,
) -> Result<ReducedForm> {
    prob.check_point(x_bar)?;
    if form.dim != prob.g.dim() {
        return Err(TiltError::input(
            "SOVF form does not match the dimension of g",
        ));
    }
    let j = prob.map.jacobian(x_bar);
    let cj = form.constraint_matrix() * &j;
    let basis = numkernel::nullspace_basis(&cj, NULLSPACE_TOL)?;
    let h = lagrangian_hessian(prob, x_bar, mu);
    let jb = &j * &basis;
    let m = basis.transpose() * h * &basis + jb.transpose() * form.quadratic_matrix() * &jb;
    let matrix = (&m + m.transpose()) * 0.5;
    Ok(ReducedForm { basis, matrix })
}

/// `q(v)` evaluated directly, `+∞` when `∇F(x̄)v ∉ dom Γ`.
pub fn second_order_value(
    prob: &CompositeProblem,
    x_bar: &DVector<f64>,
    mu: &DVector<f64>,
    form: &SovfForm,
    v: &DVector<f64>,
) -> Result<f64> {
    let jv = prob.map.jacobian(x_bar) * v;
    let gamma = sovf::sovf_eval(form, &jv)?;
    Ok(v.dot(&(lagrangian_hessian(prob, x_bar, mu) * v)) + gamma)
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplierRecord {
    pub mu: Vec<f64>,
    pub case: SovfCase,
    pub subspace_dim: usize,
    /// Absent when `S = {0}` (the condition holds vacuously).
    pub lambda_min: Option<f64>,
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub mu_samples: usize,
    pub multiplier_starts_converged: usize,
    pub multipliers_found: usize,
    pub multipliers_in_tau_ball: usize,
    pub multipliers_checked: usize,
    pub tau: f64,
    pub multiplier_diameter: f64,
    pub max_kkt_residual: f64,
    pub direction_samples: usize,
    pub critical_directions_found: usize,
    /// Exact mode found no critical direction and fell back to all multipliers.
    pub exact_fallback: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TiltReport {
    pub verdict: Verdict,
    pub kappa: f64,
    pub mode: FilterMode,
    pub hypotheses_flag: bool,
    /// Smallest `λ_min` over non-vacuous records.
    pub min_lambda: Option<f64>,
    pub best_modulus: Option<f64>,
    pub per_multiplier: Vec<MultiplierRecord>,
    pub metadata: ReportMetadata,
}

#[derive(Clone, Copy, PartialEq)]
enum Target {
    Sufficient,
    Necessary,
}

struct Analysis {
    records: Vec<MultiplierRecord>,
    metadata: ReportMetadata,
}

fn best_from_records(records: &[MultiplierRecord]) -> (Option<f64>, Option<f64>) {
    let min_lambda = records.iter().filter_map(|r| r.lambda_min).reduce(f64::min);
    let best = match min_lambda {
        None => Some(0.0),
        Some(l) if l > 0.0 => Some(1.0 / l),
        Some(_) => None,
    };
    (min_lambda, best)
}

fn analyze(
    prob: &CompositeProblem,
    x_bar: &DVector<f64>,
    opts: &AnalyzeOptions,
    purpose: Target,
) -> Result<Analysis> {
    prob.check_point(x_bar)?;
    let fx = prob.feasible_image(x_bar)?;
    let xstar = -prob.f0.gradient(x_bar);
    let sample = multiplier_sample(prob, x_bar, &xstar, opts.mu_samples, opts.seed)?;
    if sample.multipliers.is_empty() {
        return Err(TiltError::NotStationary(format!(
            "no multiplier satisfies the KKT system at x_bar (best residual {:e})",
            sample.best_residual
        )));
    }
    let tau = tau_constant(prob, x_bar, &xstar)?;
    let in_ball: Vec<DVector<f64>> = sample
        .multipliers
        .iter()
        .filter(|mu| mu.norm() <= tau + 1e-9 * (1.0 + tau))
        .cloned()
        .collect();
    if in_ball.is_empty() {
        return Err(TiltError::input(format!(
            "all sampled multipliers lie outside the tau ball (tau = {tau:e}); kappa_mscq may be too small"
        )));
    }

    let reduced: Vec<(SovfForm, ReducedForm)> = in_ball
        .par_iter()
        .map(|mu| {
            let form = sovf::build_sovf(&prob.g, &fx, mu)?;
            let red = reduced_quadratic_form(prob, x_bar, mu, &form)?;
            Ok((form, red))
        })
        .collect::<Result<_>>()?;

    // candidate critical directions: random draws, then basis directions of each S
    let mut candidates: Vec<DVector<f64>> = (0..opts.direction_samples)
        .map(|k| {
            let mut s = rng::stream(opts.seed, Purpose::CriticalDirection, k as u64);
            rng::unit_vector(&mut s, prob.n)
        })
        .collect();
    for (_, red) in &reduced {
        for c in red.basis.column_iter() {
            candidates.push(c.into_owned());
            candidates.push(-c.into_owned());
        }
    }
    let critical: Vec<DVector<f64>> = candidates
        .into_iter()
        .filter_map(
            |v| match critical_cone_test(prob, x_bar, &xstar, &v, CRITICAL_TOL) {
                Ok(true) => Some(Ok(v)),
                Ok(false) => None,
                Err(e) => Some(Err(e)),
            },
        )
        .collect::<Result<_>>()?;

    let union_of_filters = |critical: &[DVector<f64>]| -> Result<Vec<bool>> {
        let per_dir: Vec<Vec<DVector<f64>>> = critical
            .par_iter()
            .map(|v| directional_multiplier_filter(prob, x_bar, v, &in_ball, FilterMode::Exact))
            .collect::<Result<_>>()?;
        Ok(in_ball
            .iter()
            .map(|mu| per_dir.iter().any(|kept| kept.contains(mu)))
            .collect())
    };

    let mut exact_fallback = false;
    let keep: Vec<bool> = match purpose {
        Target::Sufficient => match opts.mode {
            FilterMode::Conservative => vec![true; in_ball.len()],
            FilterMode::Exact if critical.is_empty() => {
                exact_fallback = true;
                vec![true; in_ball.len()]
            }
            FilterMode::Exact => union_of_filters(&critical)?,
        },
        Target::Necessary => {
            if critical.is_empty() {
                vec![false; in_ball.len()]
            } else if in_ball.len() == 1 {
                vec![true]
            } else {
                union_of_filters(&critical)?
            }
        }
    };

    let mut records = Vec::new();
    for ((mu, (form, red)), kept) in in_ball.iter().zip(&reduced).zip(&keep) {
        if !kept {
            continue;
        }
        let eig = red.lambda_min()?;
        records.push(MultiplierRecord {
            mu: mu.iter().copied().collect(),
            case: form.case_tag,
            subspace_dim: red.basis.ncols(),
            lambda_min: eig.as_ref().map(|e| e.0),
            witness: eig.map(|e| e.1.iter().copied().collect()),
        });
    }

    let max_kkt = in_ball
        .iter()
        .map(|mu| composite::kkt_residual(prob, x_bar, mu))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    Ok(Analysis {
        metadata: ReportMetadata {
            seed: opts.seed,
            mu_samples: opts.mu_samples,
            multiplier_starts_converged: sample.converged,
            multipliers_found: sample.multipliers.len(),
            multipliers_in_tau_ball: in_ball.len(),
            multipliers_checked: records.len(),
            tau,
            multiplier_diameter: sample.diameter(),
            max_kkt_residual: max_kkt,
            direction_samples: opts.direction_samples,
            critical_directions_found: critical.len(),
            exact_fallback,
        },
        records,
    })
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(TiltError::input("kappa must be positive and finite"));
    }
    Ok(())
}

/// Certified iff `λ_min(M) > 1/κ` (with margin) for every checked multiplier.
pub fn certify_sufficient(
    prob: &CompositeProblem,
    x_bar: &DVector<f64>,
    kappa: f64,
    opts: &AnalyzeOptions,
) -> Result<TiltReport> {
    check_kappa(kappa)?;
    let a = analyze(prob, x_bar, opts, Target::Sufficient)?;
    let (min_lambda, best_modulus) = best_from_records(&a.records);
    let certified = a.records.iter().all(|r| {
        r.lambda_min
            .is_none_or(|l| l > 1.0 / kappa + CERTIFY_MARGIN)
    });
    Ok(TiltReport {
        verdict: if certified {
            Verdict::Certified
        } else {
            Verdict::Inconclusive
        },
        kappa,
        mode: opts.mode,
        hypotheses_flag: opts.hypotheses,
        min_lambda,
        best_modulus,
        per_multiplier: a.records,
        metadata: a.metadata,
    })
}

/// Refuted iff some directional multiplier has `λ_min(M) < 1/κ` (with margin) and the caller
/// asserted the hypotheses.
pub fn evaluate_necessary(
    prob: &CompositeProblem,
    x_bar: &DVector<f64>,
    kappa: f64,
    opts: &AnalyzeOptions,
) -> Result<TiltReport> {
    check_kappa(kappa)?;
    let a = analyze(prob, x_bar, opts, Target::Necessary)?;
    let (min_lambda, best_modulus) = best_from_records(&a.records);
    let violated = a.records.iter().any(|r| {
        r.lambda_min
            .is_some_and(|l| l < 1.0 / kappa - CERTIFY_MARGIN)
    });
    Ok(TiltReport {
        verdict: if violated && opts.hypotheses {
            Verdict::Refuted
        } else {
            Verdict::Inconclusive
        },
        kappa,
        mode: opts.mode,
        hypotheses_flag: opts.hypotheses,
        min_lambda,
        best_modulus,
        per_multiplier: a.records,
        metadata: a.metadata,
    })
}

/// `1/λ*` with `λ* = min λ_min(M)`; `0` when every subspace is trivial, absent when `λ* ≤ 0`.
pub fn best_modulus(
    prob: &CompositeProblem,
    x_bar: &DVector<f64>,
    opts: &AnalyzeOptions,
) -> Result<Option<f64>> {
    let a = analyze(prob, x_bar, opts, Target::Sufficient)?;
    Ok(best_from_records(&a.records).1)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub eta: f64,
    pub seed: u64,
    pub samples_drawn: usize,
    pub infeasible_rejected: usize,
    pub samples_kept: usize,
    pub directions_evaluated: usize,
    /// Minimum of `q(v)/‖v‖²` over evaluated critical directions.
    pub min_observed: Option<f64>,
    pub nonpositive_fraction: f64,
}

const SCAN_DIRECTIONS: usize = 8;

/// Samples `(x, u)` near `(x̄, 0)` on the graph of `Ψ` and evaluates the second-order quantity
/// with numerically estimated second subderivatives. Evidence only, never a certificate.
pub fn neighborhood_scan(
    prob: &CompositeProblem,
    x_bar: &DVector<f64>,
    eta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ScanReport> {
    prob.check_point(x_bar)?;
    if !(eta > 0.0) {
        return Err(TiltError::input("eta must be positive"));
    }
    let clip_to_domain = prob.g.is_indicator()
        && prob.map.is_affine()
        && prob.map.jacobian(x_bar) == DMatrix::identity(prob.n, prob.n)
        && prob
            .map
            .value(&DVector::zeros(prob.n))
            .iter()
            .all(|&b| b == 0.0);

    struct Outcome {
        infeasible: bool,
        kept: bool,
        values: Vec<f64>,
    }

    let outcomes: Vec<Outcome> = (0..n_samples)
        .into_par_iter()
        .map(|k| -> Result<Outcome> {
            let mut s = rng::stream(seed, Purpose::Scan, k as u64);
            let mut x = x_bar + rng::uniform_in_ball(&mut s, prob.n, eta);
            if clip_to_domain {
                x = x.map(|v| v.min(0.0));
            }
            let fx = prob.map.value(&x);
            if !prob.g.in_domain(&fx, 0.0) {
                return Ok(Outcome {
                    infeasible: true,
                    kept: false,
                    values: Vec::new(),
                });
            }
            let j = prob.map.jacobian(&x);
            let grad = prob.f0.gradient(&x);
            let jt_pinv = numkernel::pseudo_inverse(&j.transpose(), 1e-12)?;
            let w0 = -(&jt_pinv * &grad) + rng::normal_vector(&mut s, prob.g.dim()) * eta;
            let mu = proxcore::subdiff_project(&prob.g, &fx, &w0)?;
            let u = &grad + j.transpose() * &mu;
            if u.norm() > eta {
                return Ok(Outcome {
                    infeasible: false,
                    kept: false,
                    values: Vec::new(),
                });
            }
            let xstar = j.transpose() * &mu;
            let h = lagrangian_hessian(prob, &x, &mu);
            let mut values = Vec::new();
            for _ in 0..SCAN_DIRECTIONS {
                let v = rng::unit_vector(&mut s, prob.n);
                if !critical_cone_test(prob, &x, &xstar, &v, CRITICAL_TOL)? {
                    continue;
                }
                let d2 = proxcore::second_subderivative_estimate(
                    &prob.g,
                    &fx,
                    &mu,
                    &(&j * &v),
                    &proxcore::default_tau_schedule(),
                )?;
                if d2.value.is_finite() {
                    values.push(v.dot(&(&h * &v)) + d2.value);
                }
            }
            Ok(Outcome {
                infeasible: false,
                kept: true,
                values,
            })
        })
        .collect::<Result<_>>()?;

    let values: Vec<f64> = outcomes
        .iter()
        .flat_map(|o| o.values.iter().copied())
        .collect();
    let nonpositive = values.iter().filter(|&&v| v <= ACTIVE_TOL).count();
    Ok(ScanReport {
        eta,
        seed,
        samples_drawn: n_samples,
        infeasible_rejected: outcomes.iter().filter(|o| o.infeasible).count(),
        samples_kept: outcomes.iter().filter(|o| o.kept).count(),
        directions_evaluated: values.len(),
        min_observed: values.iter().copied().reduce(f64::min),
        nonpositive_fraction: if values.is_empty() {
            0.0
        } else {
            nonpositive as f64 / values.len() as f64
        },
    })
}

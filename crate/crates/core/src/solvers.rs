//! Minimum-norm equality, regularized least-squares and relaxed
//! (inequality) solvers over an assembled [`RecoveryProblem`].
//!
//! All three work in the coefficient space `λ` of `u = Σ λ_i ψ_i` and share
//! one linearized subproblem. With `z = Kλ`, `A = ∂r/∂z` and
//! `c = r − Az`, minimizing
//!
//! ```text
//! λ⁺ᵀKλ⁺ + (1/s)‖c + AKλ⁺‖² + (τ/s)(λ⁺ − λ)ᵀK(λ⁺ − λ)
//! ```
//!
//! gives `λ⁺ = θλ − Aᵀ(AKAᵀ + sI)⁻¹(c + θAz)` with `θ = τ/(s + τ)` after
//! rescaling. `s → 0` is the SQP step of the equality problem, `s = 1/μ`
//! the Gauss–Newton step of the regularized objective and `s = 1/ρ` the
//! semismooth Newton step of the squared-hinge penalty. Every iterate stays
//! in the span of the rows of the constraint Jacobians.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::kernel::RkhsFunction;
use crate::linalg::SpdSolver;
use crate::problem::{ProblemKind, RecoveryProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Zero,
    /// One step of the problem linearized at `u = 0`.
    Linearized,
    /// Small seeded random coefficients.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol_constraint: f64,
    pub tol_stationarity: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub linesearch_shrink: f64,
    pub mu: f64,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol_constraint: 1e-8,
            tol_stationarity: 1e-6,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            linesearch_shrink: 0.5,
            mu: 1e4,
            seed: 0,
            init: InitStrategy::Zero,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_constraint", self.tol_constraint),
            ("tol_stationarity", self.tol_stationarity),
            ("penalty_init", self.penalty_init),
            ("mu", self.mu),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return input(format!("solver.{name} must be positive and finite, got {v}"));
            }
        }
        if self.max_iters == 0 {
            return input("solver.max_iters must be at least 1");
        }
        if !(self.penalty_growth > 1.0) {
            return input(format!(
                "solver.penalty_growth must exceed 1, got {}",
                self.penalty_growth
            ));
        }
        if !(self.linesearch_shrink > 0.0 && self.linesearch_shrink < 1.0) {
            return input(format!(
                "solver.linesearch_shrink must lie in (0, 1), got {}",
                self.linesearch_shrink
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Equality,
    Regularized,
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iters: usize,
    /// Largest violation beyond tolerance; zero for the unconstrained
    /// regularized objective.
    pub final_constraint_violation: f64,
    pub final_stationarity: f64,
    /// `‖u‖`
    pub objective: f64,
    /// `‖r(λ)‖₂`
    pub residual_norm: f64,
    /// `(objective, violation)` per iteration.
    pub history: Vec<(f64, f64)>,
    pub message: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySolution {
    pub method: Method,
    /// `u` expanded over the problem's atom functionals.
    pub function: RkhsFunction,
    /// `λ` over the problem basis.
    pub coeffs: Vec<f64>,
    /// One per constraint, with stationarity `2Kλ = Jᵀν`.
    pub multipliers: Vec<f64>,
    pub report: SolveReport,
}

impl RecoverySolution {
    pub fn lambda(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

/// State at one iterate.
struct Point {
    lambda: DVector<f64>,
    z: DVector<f64>,
    r: DVector<f64>,
    a: DMatrix<f64>,
    sq_norm: f64,
}

impl Point {
    fn new(problem: &RecoveryProblem, lambda: DVector<f64>) -> Self {
        let z = problem.gram().entries() * &lambda;
        let (r, a) = problem.residual_and_value_jacobian(&z);
        let sq_norm = lambda.dot(&z).max(0.0);
        Self {
            lambda,
            z,
            r,
            a,
            sq_norm,
        }
    }

    fn objective(&self) -> f64 {
        self.sq_norm.sqrt()
    }
}

/// `(θλ − Aᵀy, y)` with `(AKAᵀ + sI) y = c + θAz` over the selected rows.
fn subproblem(
    problem: &RecoveryProblem,
    pt: &Point,
    rows: &[usize],
    c: &DVector<f64>,
    s: f64,
    theta: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = pt.lambda.len();
    if rows.is_empty() {
        return Ok((&pt.lambda * theta, DVector::zeros(0)));
    }
    let a = pt.a.select_rows(rows);
    let ak = &a * problem.gram().entries();
    let mut g = &ak * a.transpose();
    g = (&g + g.transpose()) * 0.5;
    // exact factorization first; escalation supplies a shift only if needed
    let nugget = 0.0;
    for i in 0..g.nrows() {
        g[(i, i)] += s;
    }
    let solver = SpdSolver::new(g, nugget)?;
    let rhs = c + (&a * &pt.z) * theta;
    let y = solver.solve(&rhs);
    let mut next = a.transpose() * &y;
    next.neg_mut();
    if theta != 0.0 {
        next += &pt.lambda * theta;
    }
    debug_assert_eq!(next.len(), n);
    Ok((next, y))
}

fn all_rows(problem: &RecoveryProblem) -> Vec<usize> {
    (0..problem.num_constraints()).collect()
}

/// `‖K(2λ − Aᵀν)‖ / (1 + ‖λ‖)`
fn stationarity(problem: &RecoveryProblem, pt: &Point, nu: &DVector<f64>) -> f64 {
    let v = &pt.lambda * 2.0 - pt.a.transpose() * nu;
    (problem.gram().entries() * v).norm() / (1.0 + pt.lambda.norm())
}

fn violation(pt: &Point, tolerances: &DVector<f64>) -> f64 {
    pt.r.iter()
        .zip(tolerances.iter())
        .map(|(r, e)| (r.abs() - e).max(0.0))
        .fold(0.0, f64::max)
}

fn initial_lambda(problem: &RecoveryProblem, cfg: &SolverConfig) -> Result<DVector<f64>> {
    let n = problem.len();
    Ok(match cfg.init {
        InitStrategy::Zero => DVector::zeros(n),
        InitStrategy::Linearized => {
            let pt = Point::new(problem, DVector::zeros(n));
            let c = &pt.r - &pt.a * &pt.z;
            subproblem(problem, &pt, &all_rows(problem), &c, 0.0, 0.0)?.0
        }
        InitStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            DVector::from_fn(n, |_, _| 1e-3 * rng.gen_range(-1.0..1.0))
        }
    })
}

fn finish(
    problem: &RecoveryProblem,
    method: Method,
    pt: &Point,
    multipliers: DVector<f64>,
    mut report: SolveReport,
    start: Instant,
) -> Result<RecoverySolution> {
    report.objective = pt.objective();
    report.residual_norm = pt.r.norm();
    report.seconds = start.elapsed().as_secs_f64();
    Ok(RecoverySolution {
        method,
        function: problem.function(&pt.lambda)?,
        coeffs: pt.lambda.iter().copied().collect(),
        multipliers: multipliers.iter().copied().collect(),
        report,
    })
}

fn empty_report() -> SolveReport {
    SolveReport {
        converged: false,
        iters: 0,
        final_constraint_violation: f64::INFINITY,
        final_stationarity: f64::INFINITY,
        objective: 0.0,
        residual_norm: 0.0,
        history: Vec::new(),
        message: String::new(),
        seconds: 0.0,
    }
}

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;
/// Relative slack for merit values that agree to rounding.
const ROUNDOFF: f64 = 1e-13;

/// Undamped linearized step over `rows` and the multipliers `ν = −2y` it
/// certifies, zero off `rows`.
fn newton_step(
    problem: &RecoveryProblem,
    pt: &Point,
    rows: &[usize],
    c: &DVector<f64>,
    s: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (next, y) = subproblem(problem, pt, rows, c, s, 0.0)?;
    let mut nu = DVector::zeros(pt.r.len());
    for (k, &n) in rows.iter().enumerate() {
        nu[n] = -2.0 * y[k];
    }
    Ok((next, nu))
}

fn linearized_offset(pt: &Point) -> DVector<f64> {
    &pt.r - &pt.a * &pt.z
}

/// `min ‖u‖ s.t. r(λ) = 0` by SQP with an `ℓ₂` exact-penalty merit line
/// search.
pub fn solve_min_norm_equality(problem: &RecoveryProblem, cfg: &SolverConfig) -> Result<RecoverySolution> {
    cfg.validate()?;
    if problem.kind() != ProblemKind::Equality {
        return input("equality solver needs an equality problem");
    }
    let start = Instant::now();
    let rows = all_rows(problem);
    let mut report = empty_report();
    let mut pt = Point::new(problem, initial_lambda(problem, cfg)?);
    let mut rho = 0.0f64;
    let mut mult;
    loop {
        let (qp, nu) = newton_step(problem, &pt, &rows, &linearized_offset(&pt), 0.0)?;
        mult = nu;
        let viol = pt.r.amax();
        let stat = stationarity(problem, &pt, &mult);
        report.history.push((pt.objective(), viol));
        report.final_constraint_violation = viol;
        report.final_stationarity = stat;
        if viol <= cfg.tol_constraint && stat <= cfg.tol_stationarity {
            report.converged = true;
            report.message = "converged".into();
            break;
        }
        if report.iters >= cfg.max_iters {
            report.message = format!("iteration limit {} reached", cfg.max_iters);
            break;
        }
        report.iters += 1;
        let d = &qp - &pt.lambda;
        rho = rho.max(mult.norm() + 1e-8);
        let merit = |p: &Point| p.sq_norm + rho * p.r.norm();
        let m0 = merit(&pt);
        let slope = 2.0 * pt.z.dot(&d) - rho * pt.r.norm();
        let mut alpha = 1.0;
        pt = loop {
            let cand = Point::new(problem, &pt.lambda + &d * alpha);
            if merit(&cand) <= m0 + ARMIJO * alpha * slope.min(0.0) + ROUNDOFF * m0 || alpha < MIN_STEP {
                break cand;
            }
            alpha *= cfg.linesearch_shrink;
        };
    }
    finish(problem, Method::Equality, &pt, mult, report, start)
}

/// `min ‖r(λ)‖² + (1/μ)‖u‖²` by Levenberg–Marquardt with damping in the
/// `K`-metric. The reported multipliers tend to `−2μ r`, so stationarity is
/// the scaled gradient of `μ‖r‖² + ‖u‖²`.
pub fn solve_regularized(problem: &RecoveryProblem, cfg: &SolverConfig) -> Result<RecoverySolution> {
    cfg.validate()?;
    let start = Instant::now();
    let rows = all_rows(problem);
    let mu = cfg.mu;
    let s_base = 1.0 / mu;
    let mut report = empty_report();
    let mut pt = Point::new(problem, initial_lambda(problem, cfg)?);
    let psi = |p: &Point| mu * p.r.norm_squared() + p.sq_norm;
    let mut tau = 0.0f64;
    let mut g_scale = None;
    let mut mult;
    loop {
        let c = linearized_offset(&pt);
        let (gn, nu) = newton_step(problem, &pt, &rows, &c, s_base)?;
        mult = nu;
        let stat = stationarity(problem, &pt, &mult);
        report.history.push((pt.objective(), pt.r.norm()));
        report.final_constraint_violation = 0.0;
        report.final_stationarity = stat;
        if stat <= cfg.tol_stationarity {
            report.converged = true;
            report.message = "converged".into();
            break;
        }
        if report.iters >= cfg.max_iters {
            report.message = format!("iteration limit {} reached", cfg.max_iters);
            break;
        }
        report.iters += 1;
        let scale = *g_scale.get_or_insert_with(|| {
            let ak = &pt.a * problem.gram().entries();
            (&ak * pt.a.transpose()).diagonal().amax().max(s_base)
        });
        let p0 = psi(&pt);
        let mut accepted = false;
        for _ in 0..60 {
            let next = if tau == 0.0 {
                gn.clone()
            } else {
                let s = s_base + tau;
                subproblem(problem, &pt, &rows, &c, s, tau / s)?.0
            };
            let cand = Point::new(problem, next);
            let d = &cand.lambda - &pt.lambda;
            // Gauss–Newton model of ψ at the candidate
            let lin = &pt.r + &pt.a * (problem.gram().entries() * &d);
            let predicted = p0 - (mu * lin.norm_squared() + cand.sq_norm);
            let actual = p0 - psi(&cand);
            if actual > 0.0 && actual >= 0.25 * predicted.max(0.0) {
                if actual >= 0.75 * predicted {
                    tau = if tau <= 1e-12 * scale { 0.0 } else { tau / 4.0 };
                }
                pt = cand;
                accepted = true;
                break;
            }
            tau = if tau == 0.0 { 1e-3 * scale } else { tau * 4.0 };
        }
        if !accepted {
            report.message = "no decrease along the damped step".into();
            break;
        }
    }
    finish(problem, Method::Regularized, &pt, mult, report, start)
}

/// `min ‖u‖ s.t. |r_n(λ)| ≤ ε_n` by an exterior squared-hinge penalty
/// `‖u‖² + ρ Σ max(0, |r_n| − ε_n)²` with geometrically growing `ρ`.
pub fn solve_min_norm_inequality(problem: &RecoveryProblem, cfg: &SolverConfig) -> Result<RecoverySolution> {
    cfg.validate()?;
    if problem.kind() != ProblemKind::Relaxed {
        return input("inequality solver needs a relaxed problem");
    }
    let start = Instant::now();
    let eps = problem.tolerances();
    let mut report = empty_report();
    let mut pt = Point::new(problem, initial_lambda(problem, cfg)?);
    let mut rho = cfg.penalty_init;
    let excess = |p: &Point| -> DVector<f64> {
        DVector::from_iterator(
            p.r.len(),
            p.r.iter()
                .zip(eps.iter())
                .map(|(r, e)| r.signum() * (r.abs() - e).max(0.0)),
        )
    };
    let penalized = |p: &Point, rho: f64| p.sq_norm + rho * excess(p).norm_squared();
    let mut mult;
    'outer: loop {
        // inner semismooth Gauss–Newton on the penalized objective; at least
        // one step per penalty level
        let mut fresh = true;
        loop {
            let active: Vec<usize> = (0..pt.r.len()).filter(|&n| pt.r[n].abs() > eps[n]).collect();
            let c = DVector::from_iterator(
                active.len(),
                active
                    .iter()
                    .map(|&n| pt.r[n] - pt.r[n].signum() * eps[n] - pt.a.row(n).dot(&pt.z.transpose())),
            );
            let (next, nu) = newton_step(problem, &pt, &active, &c, 1.0 / rho)?;
            mult = nu;
            let stat = stationarity(problem, &pt, &mult);
            let viol = violation(&pt, &eps);
            report.history.push((pt.objective(), viol));
            report.final_constraint_violation = viol;
            report.final_stationarity = stat;
            if stat <= cfg.tol_stationarity {
                if viol <= cfg.tol_constraint {
                    report.converged = true;
                    report.message = "converged".into();
                    break 'outer;
                }
                if !fresh {
                    break;
                }
            }
            fresh = false;
            if report.iters >= cfg.max_iters {
                report.message = format!("iteration limit {} reached at penalty {rho:e}", cfg.max_iters);
                break 'outer;
            }
            report.iters += 1;
            let d = &next - &pt.lambda;
            let grad_dot = {
                let v = &pt.lambda * 2.0 + pt.a.transpose() * (excess(&pt) * (2.0 * rho));
                (problem.gram().entries() * v).dot(&d)
            };
            let p0 = penalized(&pt, rho);
            let mut alpha = 1.0;
            let accepted = loop {
                let cand = Point::new(problem, &pt.lambda + &d * alpha);
                if penalized(&cand, rho) <= p0 + ARMIJO * alpha * grad_dot.min(0.0) + ROUNDOFF * p0 {
                    break Some(cand);
                }
                if alpha < MIN_STEP {
                    break None;
                }
                alpha *= cfg.linesearch_shrink;
            };
            match accepted {
                Some(cand) => pt = cand,
                None => break,
            }
        }
        rho *= cfg.penalty_growth;
        if !rho.is_finite() || rho > 1e20 {
            report.message = "penalty parameter overflow".into();
            break;
        }
    }
    finish(problem, Method::Relaxed, &pt, mult, report, start)
}

/// Stationarity `‖2Kλ − Jᵀν‖ / (1 + ‖λ‖)`, feasibility beyond tolerance,
/// and complementarity `max |ν_n| · max(0, ε_n − |r_n|)`.
pub fn kkt_residual(problem: &RecoveryProblem, solution: &RecoverySolution) -> Result<KktResidual> {
    let pt = Point::new(problem, solution.lambda());
    let nu = DVector::from_column_slice(&solution.multipliers);
    if nu.len() != problem.num_constraints() {
        return input("multiplier count differs from constraint count");
    }
    let stationarity = stationarity(problem, &pt, &nu);
    let (feasibility, complementarity) = match solution.method {
        Method::Regularized => (0.0, 0.0),
        Method::Equality => (pt.r.amax(), 0.0),
        Method::Relaxed => {
            let eps = problem.tolerances();
            let comp = (0..nu.len())
                .map(|n| nu[n].abs() * (eps[n] - pt.r[n].abs()).max(0.0))
                .fold(0.0, f64::max);
            (violation(&pt, &eps), comp)
        }
    };
    Ok(KktResidual {
        stationarity,
        feasibility,
        complementarity,
    })
}

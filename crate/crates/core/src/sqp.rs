//! Sequential quadratic programming for the smooth (linear/logistic) models.
//!
//! Each iteration linearises the constraints at the iterate, solves a convex
//! QP subproblem under a BFGS approximation of the Lagrangian Hessian, takes
//! the QP duals as the new multiplier estimates, and backtracks along the
//! step until an l1 exact-penalty merit function decreases. Termination is by
//! the KKT residual (stationarity, primal feasibility, complementarity, dual
//! feasibility).
//!
//! The volume objective under a logistic model is not concave, so a run is
//! wrapped in a small multi-start; the best KKT point wins.

use serde::{Deserialize, Serialize};

use crate::conversion::ConversionModel;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, SquareMatrix};
use crate::market::Portfolio;
use crate::objective::{penalize, Evaluator, ProblemSpec};
use crate::qp::{solve_qp_warm, GeneralRow, QpSubproblem, WorkingSet};
use crate::rng::Prng;
use crate::solver::{
    Diagnostics, SolverResult, SolverStatus, SqpDiagnostics, SqpTraceRow, FEASIBILITY_TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqpConfig {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    /// Backtracking halves the step at most this many times per iteration.
    pub max_halvings: usize,
    /// The merit weight stays at least this factor above the largest
    /// multiplier.
    pub merit_r_margin: f64,
    /// Number of starts: delta = 0 first, then random points in the box.
    pub multi_starts: usize,
    pub seed: u64,
}

impl Default for SqpConfig {
    fn default() -> Self {
        SqpConfig {
            max_iterations: 200,
            kkt_tolerance: 1e-6,
            max_halvings: 10,
            merit_r_margin: 2.0,
            multi_starts: 5,
            seed: 0,
        }
    }
}

impl SqpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tolerance > 0.0) {
            return Err(Error::Config("SQP kkt_tolerance must be positive".into()));
        }
        if self.max_iterations == 0 || self.multi_starts == 0 {
            return Err(Error::Config(
                "SQP max_iterations and multi_starts must be at least 1".into(),
            ));
        }
        if !(self.merit_r_margin > 1.0) {
            return Err(Error::Config("SQP merit_r_margin must exceed 1".into()));
        }
        Ok(())
    }
}

/// Iterate state: the point, the multiplier estimates for the two general
/// constraints (`lambda`, `beta`) and the per-coordinate box constraints
/// (`mu` for upper, `gamma` for lower), and the BFGS Hessian approximation.
#[derive(Debug, Clone)]
pub struct SqpState {
    pub delta: Vec<f64>,
    pub lambda: f64,
    pub beta: f64,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub q: SquareMatrix,
}

impl SqpState {
    pub fn fresh(delta: Vec<f64>, hessian_scale: f64) -> Self {
        let n = delta.len();
        SqpState {
            delta,
            lambda: 0.0,
            beta: 0.0,
            mu: vec![0.0; n],
            gamma: vec![0.0; n],
            q: SquareMatrix::scaled_identity(n, hessian_scale),
        }
    }
}

/// The QP subproblem at the current iterate: minimise
/// `1/2 s^T Q s + grad(g)^T s` subject to the linearised general constraints
/// and the box rows `s_j <= M_j - delta_j`, `-s_j <= delta_j - m_j`.
pub fn build_qp<'a>(
    state: &'a SqpState,
    spec: &ProblemSpec,
    ev: &Evaluator,
) -> Result<QpSubproblem<'a>> {
    ev.require_differentiable()?;
    let n = state.delta.len();
    let grad: Vec<f64> = (0..n)
        .map(|j| -ev.objective_grad_j(spec, j, state.delta[j]))
        .collect();
    let a: Vec<f64> = (0..n)
        .map(|j| ev.constraint_grad_j(spec, j, state.delta[j]))
        .collect();
    let neg_a: Vec<f64> = a.iter().map(|&x| -x).collect();
    let (h1, h2) = ev.residuals(spec, &state.delta);
    let quotes = ev.portfolio().quotes();
    Ok(QpSubproblem {
        q: &state.q,
        grad,
        lower: (0..n).map(|j| quotes[j].delta_lower - state.delta[j]).collect(),
        upper: (0..n).map(|j| quotes[j].delta_upper - state.delta[j]).collect(),
        general: vec![
            GeneralRow { coef: a, rhs: -h1 },
            GeneralRow { coef: neg_a, rhs: -h2 },
        ],
    })
}

/// Damped BFGS update of the Hessian approximation: stays symmetric positive
/// definite even when the raw curvature pair is indefinite.
pub fn bfgs_update(q: &mut SquareMatrix, step: &[f64], grad_diff: &[f64]) {
    if norm_inf(step) < 1e-14 {
        return;
    }
    let qs = q.matvec(step);
    let s_qs = dot(step, &qs);
    if !(s_qs > 0.0) {
        return;
    }
    let s_y = dot(step, grad_diff);
    // Powell damping: blend y toward Q s until y_hat^T s >= 0.2 s^T Q s.
    let theta = if s_y >= 0.2 * s_qs {
        1.0
    } else {
        0.8 * s_qs / (s_qs - s_y)
    };
    let y_hat: Vec<f64> = grad_diff
        .iter()
        .zip(&qs)
        .map(|(&y, &qsj)| theta * y + (1.0 - theta) * qsj)
        .collect();
    let y_s = dot(&y_hat, step);
    q.add_outer(-1.0 / s_qs, &qs);
    q.add_outer(1.0 / y_s, &y_hat);
}

/// l1 exact-penalty merit: `-objective + r * (positive parts of h1, h2 and
/// the box residuals)`.
pub fn merit_value(
    spec: &ProblemSpec,
    portfolio: &Portfolio,
    model: &ConversionModel,
    delta: &[f64],
    r: f64,
) -> Result<f64> {
    let ev = Evaluator::new(portfolio, model)?;
    ev.check_delta_len(delta)?;
    Ok(merit_with(&ev, spec, delta, r))
}

fn merit_with(ev: &Evaluator, spec: &ProblemSpec, delta: &[f64], r: f64) -> f64 {
    let (obj, h1, h2) = ev.objective_and_residuals(spec, delta);
    let mut infeas = h1.max(0.0) + h2.max(0.0);
    for (q, &d) in ev.portfolio().quotes().iter().zip(delta) {
        infeas += (d - q.delta_upper).max(0.0);
        infeas += (q.delta_lower - d).max(0.0);
    }
    -obj + r * infeas
}

/// KKT residual: the largest violation among stationarity, primal
/// feasibility, complementary slackness, and multiplier signs.
pub fn kkt_residual(
    state: &SqpState,
    spec: &ProblemSpec,
    portfolio: &Portfolio,
    model: &ConversionModel,
) -> Result<f64> {
    let ev = Evaluator::new(portfolio, model)?;
    ev.check_delta_len(&state.delta)?;
    ev.require_differentiable()?;
    Ok(kkt_residual_with(&ev, spec, state))
}

fn kkt_residual_with(ev: &Evaluator, spec: &ProblemSpec, state: &SqpState) -> f64 {
    let n = state.delta.len();
    let (h1, h2) = ev.residuals(spec, &state.delta);
    let quotes = ev.portfolio().quotes();
    let mut res = h1.max(0.0).max(h2.max(0.0));
    res = res.max((state.lambda * h1).abs()).max((state.beta * h2).abs());
    res = res.max(-state.lambda).max(-state.beta);
    for j in 0..n {
        let d = state.delta[j];
        let f1 = d - quotes[j].delta_upper;
        let f2 = quotes[j].delta_lower - d;
        let grad_l = -ev.objective_grad_j(spec, j, d)
            + (state.lambda - state.beta) * ev.constraint_grad_j(spec, j, d)
            + state.mu[j]
            - state.gamma[j];
        res = res.max(grad_l.abs());
        res = res.max(f1.max(0.0)).max(f2.max(0.0));
        res = res.max((state.mu[j] * f1).abs()).max((state.gamma[j] * f2).abs());
        res = res.max(-state.mu[j]).max(-state.gamma[j]);
    }
    res
}

/// Directional derivative of the merit function along `s` (exact for the l1
/// penalty; constraints at their boundary contribute their positive-part
/// slope).
fn merit_slope(ev: &Evaluator, spec: &ProblemSpec, delta: &[f64], s: &[f64], r: f64) -> f64 {
    let n = delta.len();
    let grad_obj: Vec<f64> = (0..n).map(|j| -ev.objective_grad_j(spec, j, delta[j])).collect();
    let mut slope = dot(&grad_obj, s);
    let (h1, h2) = ev.residuals(spec, delta);
    let dh: f64 = (0..n).map(|j| ev.constraint_grad_j(spec, j, delta[j]) * s[j]).sum();
    const EDGE: f64 = 1e-12;
    for (h, dhi) in [(h1, dh), (h2, -dh)] {
        if h > EDGE {
            slope += r * dhi;
        } else if h >= -EDGE {
            slope += r * dhi.max(0.0);
        }
    }
    let quotes = ev.portfolio().quotes();
    for j in 0..n {
        let f1 = delta[j] - quotes[j].delta_upper;
        if f1 > EDGE {
            slope += r * s[j];
        } else if f1 >= -EDGE {
            slope += r * s[j].max(0.0);
        }
        let f2 = quotes[j].delta_lower - delta[j];
        if f2 > EDGE {
            slope -= r * s[j];
        } else if f2 >= -EDGE {
            slope += r * (-s[j]).max(0.0);
        }
    }
    slope
}

/// One SQP run from an explicit start (projected into the box if needed).
pub fn run_sqp(
    spec: &ProblemSpec,
    portfolio: &Portfolio,
    model: &ConversionModel,
    config: &SqpConfig,
    start: &[f64],
) -> Result<SolverResult> {
    config.validate()?;
    spec.validate()?;
    let ev = Evaluator::new(portfolio, model)?;
    ev.check_delta_len(start)?;
    ev.require_differentiable()?;
    run_from(&ev, spec, config, start, 0)
}

fn run_from(
    ev: &Evaluator,
    spec: &ProblemSpec,
    config: &SqpConfig,
    start: &[f64],
    start_index: usize,
) -> Result<SolverResult> {
    let quotes = ev.portfolio().quotes();
    let n = quotes.len();
    let delta0: Vec<f64> = start
        .iter()
        .zip(quotes)
        .map(|(&d, q)| d.clamp(q.delta_lower, q.delta_upper))
        .collect();

    let grad0: Vec<f64> = (0..n).map(|j| -ev.objective_grad_j(spec, j, delta0[j])).collect();
    let span = quotes
        .iter()
        .map(|q| q.delta_upper - q.delta_lower)
        .fold(0.0f64, f64::max);
    let hessian_scale = (norm_inf(&grad0) / span.max(1e-6)).max(1.0);
    let mut state = SqpState::fresh(delta0, hessian_scale);

    let mut r = 1.0f64;
    let mut warm: Option<WorkingSet> = None;
    let mut merit_steps: Vec<(f64, f64)> = Vec::new();
    let mut trace: Vec<SqpTraceRow> = Vec::new();
    let mut relaxed_qps = 0usize;
    let mut status = SolverStatus::MaxIterations;
    let mut last_res = f64::INFINITY;
    let mut iterations = 0usize;

    for iter in 0..config.max_iterations {
        iterations = iter + 1;
        let qp = build_qp(&state, spec, ev)?;
        let sol = solve_qp_warm(&qp, warm.as_ref())?;
        if sol.relaxed {
            relaxed_qps += 1;
        }
        state.lambda = sol.general_multipliers[0];
        state.beta = sol.general_multipliers[1];
        state.mu = sol.upper_multipliers.clone();
        state.gamma = sol.lower_multipliers.clone();

        let res = kkt_residual_with(ev, spec, &state);
        last_res = res;
        if res < config.kkt_tolerance {
            status = SolverStatus::Converged;
            trace.push(SqpTraceRow {
                iter,
                phi: merit_with(ev, spec, &state.delta, r),
                kkt_residual: res,
                alpha: 0.0,
            });
            break;
        }

        let max_mult = state
            .lambda
            .max(state.beta)
            .max(state.mu.iter().cloned().fold(0.0, f64::max))
            .max(state.gamma.iter().cloned().fold(0.0, f64::max));
        r = r.max(config.merit_r_margin * max_mult);

        let step = sol.step;
        if norm_inf(&step) < 1e-14 {
            status = SolverStatus::Stalled;
            trace.push(SqpTraceRow {
                iter,
                phi: merit_with(ev, spec, &state.delta, r),
                kkt_residual: res,
                alpha: 0.0,
            });
            break;
        }
        let slope = merit_slope(ev, spec, &state.delta, &step, r).min(0.0);

        let phi0 = merit_with(ev, spec, &state.delta, r);
        // Near the solution the true merit decrease drops below one ulp of
        // phi while the KKT residual still has ground to cover; allow steps
        // whose decrease is unmeasurable at f64 resolution.
        let resolution = 4.0 * f64::EPSILON * (1.0 + phi0.abs());
        let mut alpha = 1.0f64;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let candidate: Vec<f64> = state
                .delta
                .iter()
                .zip(&step)
                .zip(quotes)
                .map(|((&d, &s), q)| (d + alpha * s).clamp(q.delta_lower, q.delta_upper))
                .collect();
            let phi1 = merit_with(ev, spec, &candidate, r);
            if phi1 <= phi0 + 1e-4 * alpha * slope + resolution {
                accepted = Some((candidate, phi1, alpha));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next_delta, phi1, alpha)) = accepted else {
            status = SolverStatus::Stalled;
            trace.push(SqpTraceRow { iter, phi: phi0, kkt_residual: res, alpha: 0.0 });
            break;
        };

        // BFGS pair: only the general constraints enter; box gradients are
        // constant and cancel in the difference.
        let weight = state.lambda - state.beta;
        let actual_step: Vec<f64> =
            next_delta.iter().zip(&state.delta).map(|(a, b)| a - b).collect();
        let grad_diff: Vec<f64> = (0..n)
            .map(|j| {
                let g_new = -ev.objective_grad_j(spec, j, next_delta[j])
                    + weight * ev.constraint_grad_j(spec, j, next_delta[j]);
                let g_old = -ev.objective_grad_j(spec, j, state.delta[j])
                    + weight * ev.constraint_grad_j(spec, j, state.delta[j]);
                g_new - g_old
            })
            .collect();
        bfgs_update(&mut state.q, &actual_step, &grad_diff);

        state.delta = next_delta;
        // The merit trace keeps the measurable descent steps; sub-resolution
        // polishing steps appear only in the iteration trace.
        if phi1 < phi0 {
            merit_steps.push((phi0, phi1));
        }
        trace.push(SqpTraceRow { iter, phi: phi1, kkt_residual: res, alpha });
        warm = Some(sol.working_set);
    }

    let (objective, h1, h2) = ev.objective_and_residuals(spec, &state.delta);
    Ok(SolverResult {
        delta: state.delta.clone(),
        objective,
        h1,
        h2,
        feasible: h1 <= FEASIBILITY_TOL && h2 <= FEASIBILITY_TOL,
        status,
        diagnostics: Diagnostics::Sqp(SqpDiagnostics {
            iterations,
            kkt_residual: last_res,
            merit_steps,
            trace,
            start_index,
            relaxed_qps,
            lambda: state.lambda,
            beta: state.beta,
            mu: state.mu,
            gamma: state.gamma,
        }),
    })
}

/// Multi-start driver: `delta = 0` first, then seeded random points in the
/// box. Converged runs are preferred; among those the lowest penalised
/// objective wins, ties by start index.
pub fn run_sqp_multistart(
    spec: &ProblemSpec,
    portfolio: &Portfolio,
    model: &ConversionModel,
    config: &SqpConfig,
) -> Result<SolverResult> {
    config.validate()?;
    spec.validate()?;
    let ev = Evaluator::new(portfolio, model)?;
    ev.require_differentiable()?;
    let n = portfolio.len();
    let mut rng = Prng::seed_from(config.seed);
    let r_select = 1e6 * ev.baseline(spec).abs().max(1.0);

    let mut best: Option<(bool, f64, SolverResult)> = None;
    for start_index in 0..config.multi_starts {
        let start: Vec<f64> = if start_index == 0 {
            vec![0.0; n]
        } else {
            portfolio
                .quotes()
                .iter()
                .map(|q| rng.range(q.delta_lower, q.delta_upper))
                .collect()
        };
        let result = run_from(&ev, spec, config, &start, start_index)?;
        let converged = result.status == SolverStatus::Converged;
        let penalized = penalize(result.objective, result.h1, result.h2, r_select);
        let better = match &best {
            None => true,
            Some((best_conv, best_pen, _)) => {
                if converged != *best_conv {
                    converged
                } else {
                    penalized < *best_pen
                }
            }
        };
        if better {
            best = Some((converged, penalized, result));
        }
    }
    Ok(best.expect("at least one start ran").2)
}

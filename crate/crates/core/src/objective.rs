//! The two objectives, their constraints, gradients, and the penalty
//! reformulation shared by both solvers.
//!
//! Volume problems maximise `sum_j P_j (1 + delta_j) pi_j` subject to the
//! expected fraction of new customers `(1/N) sum pi_j` staying inside
//! `[l2, l1]`. Count problems maximise `sum_j pi_j` subject to the expected
//! volume staying inside `[C2, C1]`. Feasible means both residuals are <= 0.

use serde::{Deserialize, Serialize};

use crate::conversion::{BaseRate, ConversionModel, StepMode};
use crate::error::{Error, Result};
use crate::market::{DeltaDomain, MarketQuote, Portfolio};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Volume,
    Count,
}

/// Bounds on the expected fraction of new customers, `l2 <= (1/N) sum pi <= l1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Bounds on the expected premium volume, `C2 <= E[V] <= C1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeBounds {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub objective: Objective,
    pub count_bounds: Option<CountBounds>,
    pub volume_bounds: Option<VolumeBounds>,
    pub delta_domain: DeltaDomain,
}

impl ProblemSpec {
    /// Volume problems pair with count bounds and count problems with volume
    /// bounds; exactly one pair may be set.
    pub fn validate(&self) -> Result<()> {
        self.delta_domain.validate()?;
        match (self.objective, &self.count_bounds, &self.volume_bounds) {
            (Objective::Volume, Some(cb), None) => {
                if !(0.0 < cb.lower && cb.lower < cb.upper && cb.upper < 1.0) {
                    return Err(Error::validation(
                        "count_bounds",
                        None,
                        format!("need 0 < l2 < l1 < 1, got [{}, {}]", cb.lower, cb.upper),
                    ));
                }
            }
            (Objective::Count, None, Some(vb)) => {
                if !(vb.lower < vb.upper) {
                    return Err(Error::validation(
                        "volume_bounds",
                        None,
                        format!("need C2 < C1, got [{}, {}]", vb.lower, vb.upper),
                    ));
                }
            }
            (Objective::Volume, _, _) => {
                return Err(Error::validation(
                    "count_bounds",
                    None,
                    "a volume objective takes count bounds (and no volume bounds)",
                ))
            }
            (Objective::Count, _, _) => {
                return Err(Error::validation(
                    "volume_bounds",
                    None,
                    "a count objective takes volume bounds (and no count bounds)",
                ))
            }
        }
        Ok(())
    }
}

/// Exterior quadratic penalty configuration for the GA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Penalty coefficient `r > 0`.
    pub r: f64,
    /// Multiplier applied when the incumbent is still infeasible at a
    /// generation end. Capped at `r = 1e12`.
    pub growth: f64,
}

impl PenaltyConfig {
    pub const R_CAP: f64 = 1e12;

    /// Default schedule: `r = 1e3 x objective scale`, growing tenfold while
    /// the incumbent stays infeasible.
    pub fn auto(objective_scale: f64) -> Self {
        PenaltyConfig {
            r: 1e3 * objective_scale.abs().max(1.0),
            growth: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !(self.growth >= 1.0) {
            return Err(Error::validation(
                "penalty",
                None,
                format!("need r > 0 and growth >= 1, got r = {}, growth = {}", self.r, self.growth),
            ));
        }
        Ok(())
    }
}

pub fn expected_volume(portfolio: &Portfolio, model: &ConversionModel, delta: &[f64]) -> Result<f64> {
    check_len(portfolio, delta)?;
    let mut total = 0.0;
    for (j, (q, &d)) in portfolio.quotes().iter().zip(delta).enumerate() {
        total += q.premium_at(d) * model.acceptance_prob(q, j, d)?;
    }
    Ok(total)
}

pub fn expected_count(portfolio: &Portfolio, model: &ConversionModel, delta: &[f64]) -> Result<f64> {
    check_len(portfolio, delta)?;
    let mut total = 0.0;
    for (j, (q, &d)) in portfolio.quotes().iter().zip(delta).enumerate() {
        total += model.acceptance_prob(q, j, d)?;
    }
    Ok(total)
}

/// Constraint residuals `(h1, h2)`; the point is feasible iff both are <= 0.
pub fn constraint_residuals(
    spec: &ProblemSpec,
    portfolio: &Portfolio,
    model: &ConversionModel,
    delta: &[f64],
) -> Result<(f64, f64)> {
    let ev = Evaluator::new(portfolio, model)?;
    ev.check_delta_len(delta)?;
    Ok(ev.residuals(spec, delta))
}

/// `-objective + r * (phi(h1) + phi(h2))` with `phi(x) = max(0, x)^2`;
/// solvers minimise this.
pub fn penalized_objective(
    spec: &ProblemSpec,
    penalty: &PenaltyConfig,
    portfolio: &Portfolio,
    model: &ConversionModel,
    delta: &[f64],
) -> Result<f64> {
    let ev = Evaluator::new(portfolio, model)?;
    ev.check_delta_len(delta)?;
    let (obj, h1, h2) = ev.objective_and_residuals(spec, delta);
    Ok(penalize(obj, h1, h2, penalty.r))
}

pub(crate) fn penalize(objective: f64, h1: f64, h2: f64, r: f64) -> f64 {
    let phi = |x: f64| {
        let v = x.max(0.0);
        v * v
    };
    -objective + r * (phi(h1) + phi(h2))
}

/// Gradient of the (maximised) objective; length `N`, separable across
/// customers. Requires a differentiable model.
pub fn objective_grad(
    spec: &ProblemSpec,
    portfolio: &Portfolio,
    model: &ConversionModel,
    delta: &[f64],
) -> Result<Vec<f64>> {
    let ev = Evaluator::new(portfolio, model)?;
    ev.check_delta_len(delta)?;
    ev.require_differentiable()?;
    Ok(match spec.objective {
        Objective::Volume => (0..delta.len()).map(|j| ev.volume_grad_j(j, delta[j])).collect(),
        Objective::Count => (0..delta.len()).map(|j| ev.pi_grad(j, delta[j])).collect(),
    })
}

fn check_len(portfolio: &Portfolio, delta: &[f64]) -> Result<()> {
    if delta.len() != portfolio.len() {
        return Err(Error::Domain(format!(
            "delta vector has length {}, portfolio has {} customers",
            delta.len(),
            portfolio.len()
        )));
    }
    Ok(())
}

/// Per-customer data resolved once so the solvers' inner loops stay cheap.
/// Produces bit-identical values to the public `acceptance_prob` path.
pub struct Evaluator<'a> {
    portfolio: &'a Portfolio,
    prepared: Vec<Prepared>,
}

enum Prepared {
    Step {
        c1: f64,
        c2: f64,
        pmin: f64,
        pmax: f64,
        /// Jump midpoints and the distinct competitor premiums they bracket
        /// (piecewise-constant mode only).
        cells: Option<(Vec<f64>, Vec<f64>)>,
    },
    Linear {
        alpha: f64,
        beta: f64,
    },
    Logistic {
        c: f64,
        t: f64,
    },
}

impl<'a> Evaluator<'a> {
    pub fn new(portfolio: &'a Portfolio, model: &ConversionModel) -> Result<Self> {
        model.validate(portfolio.len())?;
        let prepared = portfolio
            .quotes()
            .iter()
            .enumerate()
            .map(|(j, q)| prepare(model, q, j))
            .collect();
        Ok(Evaluator { portfolio, prepared })
    }

    pub fn n(&self) -> usize {
        self.portfolio.len()
    }

    pub fn portfolio(&self) -> &Portfolio {
        self.portfolio
    }

    pub fn check_delta_len(&self, delta: &[f64]) -> Result<()> {
        check_len(self.portfolio, delta)
    }

    pub fn require_differentiable(&self) -> Result<()> {
        if matches!(self.prepared.first(), Some(Prepared::Step { .. })) {
            return Err(Error::UnsupportedModel("objective_grad"));
        }
        Ok(())
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self.prepared.first(), Some(Prepared::Step { .. }))
    }

    #[inline]
    pub fn pi(&self, j: usize, delta: f64) -> f64 {
        let q = &self.portfolio.quotes()[j];
        match &self.prepared[j] {
            Prepared::Step { c1, c2, pmin, pmax, cells } => {
                let premium = q.premium_at(delta);
                match cells {
                    None => clamped(*c1, *c2, premium, *pmin, *pmax),
                    Some((mids, distinct)) => {
                        let cell = mids.partition_point(|&m| m < premium);
                        clamped(*c1, *c2, distinct[cell], *pmin, *pmax)
                    }
                }
            }
            Prepared::Linear { alpha, beta } => (alpha + beta * delta).clamp(0.0, 1.0),
            Prepared::Logistic { c, t } => {
                let e = (-t * delta).exp();
                c / (c + e)
            }
        }
    }

    #[inline]
    pub fn pi_grad(&self, j: usize, delta: f64) -> f64 {
        match &self.prepared[j] {
            Prepared::Step { .. } => f64::NAN,
            Prepared::Linear { alpha, beta } => {
                let raw = alpha + beta * delta;
                if raw > 0.0 && raw < 1.0 {
                    *beta
                } else {
                    0.0
                }
            }
            Prepared::Logistic { t, .. } => {
                let pi = self.pi(j, delta);
                t * pi * (1.0 - pi)
            }
        }
    }

    /// d/d delta_j of the expected volume: `P_j pi_j + P_j (1 + delta_j) pi'_j`.
    #[inline]
    pub fn volume_grad_j(&self, j: usize, delta: f64) -> f64 {
        let p = self.portfolio.quotes()[j].base_premium;
        p * self.pi(j, delta) + p * (1.0 + delta) * self.pi_grad(j, delta)
    }

    pub fn volume(&self, delta: &[f64]) -> f64 {
        self.portfolio
            .quotes()
            .iter()
            .zip(delta)
            .enumerate()
            .map(|(j, (q, &d))| q.premium_at(d) * self.pi(j, d))
            .sum()
    }

    pub fn count(&self, delta: &[f64]) -> f64 {
        delta.iter().enumerate().map(|(j, &d)| self.pi(j, d)).sum()
    }

    pub fn objective(&self, spec: &ProblemSpec, delta: &[f64]) -> f64 {
        match spec.objective {
            Objective::Volume => self.volume(delta),
            Objective::Count => self.count(delta),
        }
    }

    pub fn residuals(&self, spec: &ProblemSpec, delta: &[f64]) -> (f64, f64) {
        match spec.objective {
            Objective::Volume => {
                let b = spec.count_bounds.expect("validated spec");
                let epn = self.count(delta) / self.n() as f64;
                (epn - b.upper, b.lower - epn)
            }
            Objective::Count => {
                let b = spec.volume_bounds.expect("validated spec");
                let v = self.volume(delta);
                (v - b.upper, b.lower - v)
            }
        }
    }

    pub fn objective_and_residuals(&self, spec: &ProblemSpec, delta: &[f64]) -> (f64, f64, f64) {
        let volume = self.volume(delta);
        let count = self.count(delta);
        match spec.objective {
            Objective::Volume => {
                let b = spec.count_bounds.expect("validated spec");
                let epn = count / self.n() as f64;
                (volume, epn - b.upper, b.lower - epn)
            }
            Objective::Count => {
                let b = spec.volume_bounds.expect("validated spec");
                (count, volume - b.upper, b.lower - volume)
            }
        }
    }

    /// Gradient of `h1` (`grad h2` is its negation: both constraints bound the
    /// same functional).
    pub fn constraint_grad_j(&self, spec: &ProblemSpec, j: usize, delta: f64) -> f64 {
        match spec.objective {
            Objective::Volume => self.pi_grad(j, delta) / self.n() as f64,
            Objective::Count => self.volume_grad_j(j, delta),
        }
    }

    /// Gradient of the maximised objective at coordinate `j`.
    pub fn objective_grad_j(&self, spec: &ProblemSpec, j: usize, delta: f64) -> f64 {
        match spec.objective {
            Objective::Volume => self.volume_grad_j(j, delta),
            Objective::Count => self.pi_grad(j, delta),
        }
    }

    /// Baseline objective at unchanged premiums (`delta = 0`), computed
    /// without bounds checks so it is defined for every portfolio.
    pub fn baseline(&self, spec: &ProblemSpec) -> f64 {
        let zeros = vec![0.0; self.n()];
        self.objective(spec, &zeros)
    }
}

fn prepare(model: &ConversionModel, q: &MarketQuote, j: usize) -> Prepared {
    let pmin = q.min_competitor();
    let pmax = q.max_competitor();
    match model {
        ConversionModel::Step(p) => {
            let cells = match p.mode {
                StepMode::ClampedLinear => None,
                StepMode::PiecewiseConstant => {
                    let mut distinct = q.competitor_premiums.clone();
                    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    distinct.dedup();
                    let mids = distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                    Some((mids, distinct))
                }
            };
            Prepared::Step { c1: p.c1, c2: p.c2, pmin, pmax, cells }
        }
        ConversionModel::Linear(p) => Prepared::Linear {
            alpha: p.alpha.get(j),
            beta: p.beta.get(j),
        },
        ConversionModel::Logistic(p) => {
            let base = match &p.base {
                BaseRate::Fixed { rate } => rate.get(j),
                BaseRate::Market { market } => {
                    clamped(market.c1, market.c2, q.base_premium, pmin, pmax)
                }
            };
            Prepared::Logistic {
                c: base / (1.0 - base),
                t: p.elasticity.get(j),
            }
        }
    }
}

#[inline]
fn clamped(c1: f64, c2: f64, premium: f64, pmin: f64, pmax: f64) -> f64 {
    (c1 + (c2 - c1) * (premium - pmin) / (pmax - pmin)).clamp(c2, c1)
}

//! Brute-force ground truth for small instances: exhaustive search over
//! discrete delta grids. Not a production solver; refuses large instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{DeltaDomain, Portfolio};
use crate::objective::{Evaluator, ProblemSpec};
use crate::conversion::ConversionModel;
use crate::solver::{Diagnostics, OracleDiagnostics, SolverResult, SolverStatus, FEASIBILITY_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleGrid {
    /// Use the problem's own discrete delta domain.
    Domain,
    /// A uniform per-customer grid of this many points spanning the quote's
    /// delta bounds (for continuous domains).
    Resolution { points: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub grid: OracleGrid,
    pub max_combinations: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            grid: OracleGrid::Domain,
            max_combinations: 10_000_000,
        }
    }
}

/// Enumerate every grid combination and return the feasible one with the best
/// objective; when nothing is feasible, the combination with the least total
/// violation, flagged infeasible. Ties break toward the lexicographically
/// smallest delta vector (the enumeration order).
pub fn exhaustive_search(
    spec: &ProblemSpec,
    portfolio: &Portfolio,
    model: &ConversionModel,
    config: &OracleConfig,
) -> Result<SolverResult> {
    spec.validate()?;
    let ev = Evaluator::new(portfolio, model)?;
    let grids = build_grids(spec, portfolio, config)?;

    let mut combinations: u128 = 1;
    for g in &grids {
        combinations = combinations.saturating_mul(g.len() as u128);
    }
    if combinations > config.max_combinations as u128 {
        return Err(Error::CapExceeded {
            combinations,
            cap: config.max_combinations,
        });
    }

    let n = portfolio.len();
    let mut index = vec![0usize; n];
    let mut delta: Vec<f64> = grids.iter().map(|g| g[0]).collect();

    let mut best: Option<(bool, f64, f64, Vec<f64>, f64, f64)> = None;
    for _ in 0..combinations as u64 {
        let (obj, h1, h2) = ev.objective_and_residuals(spec, &delta);
        let feasible = h1 <= FEASIBILITY_TOL && h2 <= FEASIBILITY_TOL;
        let violation = h1.max(0.0) + h2.max(0.0);
        let better = match &best {
            None => true,
            Some((bf, bobj, bviol, ..)) => match (feasible, bf) {
                (true, false) => true,
                (false, true) => false,
                // Strict improvement only: the enumeration is lexicographic,
                // so first-found wins ties.
                (true, true) => obj > *bobj,
                (false, false) => violation < *bviol,
            },
        };
        if better {
            best = Some((feasible, obj, violation, delta.clone(), h1, h2));
        }

        // Odometer step, last customer least significant.
        for pos in (0..n).rev() {
            index[pos] += 1;
            if index[pos] < grids[pos].len() {
                delta[pos] = grids[pos][index[pos]];
                break;
            }
            index[pos] = 0;
            delta[pos] = grids[pos][0];
        }
    }

    let (feasible, objective, _viol, delta, h1, h2) = best.expect("grids are nonempty");
    Ok(SolverResult {
        delta,
        objective,
        h1,
        h2,
        feasible,
        status: SolverStatus::Enumerated,
        diagnostics: Diagnostics::Oracle(OracleDiagnostics { combinations }),
    })
}

fn build_grids(
    spec: &ProblemSpec,
    portfolio: &Portfolio,
    config: &OracleConfig,
) -> Result<Vec<Vec<f64>>> {
    match (&config.grid, &spec.delta_domain) {
        (OracleGrid::Domain, DeltaDomain::Discrete { values }) => {
            spec.delta_domain.validate_against(portfolio)?;
            Ok(vec![values.clone(); portfolio.len()])
        }
        (OracleGrid::Domain, DeltaDomain::Continuous) => Err(Error::Config(
            "oracle grid 'domain' needs a discrete delta domain; use a resolution grid instead"
                .into(),
        )),
        (OracleGrid::Resolution { points }, _) => {
            if *points == 0 {
                return Err(Error::Config("oracle resolution must be at least 1".into()));
            }
            Ok(portfolio
                .quotes()
                .iter()
                .map(|q| {
                    if *points == 1 {
                        return vec![0.5 * (q.delta_lower + q.delta_upper)];
                    }
                    let step = (q.delta_upper - q.delta_lower) / (*points as f64 - 1.0);
                    (0..*points)
                        .map(|i| {
                            if i + 1 == *points {
                                q.delta_upper // exact endpoint, no rounding drift
                            } else {
                                q.delta_lower + step * i as f64
                            }
                        })
                        .collect()
                })
                .collect())
        }
    }
}

//! Acceptance-probability models: the chance that a customer accepts the
//! company's offer at premium `P * (1 + delta)`.
//!
//! Three families are supported:
//!
//! - **Step**: anchored to the competitors' premium range. The cheapest offer
//!   in the market converts with probability `c1`, the most expensive with
//!   `c2 < c1`. Two modes: `ClampedLinear` interpolates linearly between the
//!   cheapest and most expensive competitor premium; `PiecewiseConstant`
//!   holds the interpolated level of the nearest competitor premium, jumping
//!   at the arithmetic midpoints between consecutive market offers.
//! - **Linear**: `clamp(alpha + beta * delta, 0, 1)` per customer.
//! - **Logistic**: `1 / (1 + c^-1 exp(-T delta))` with `T < 0` the price
//!   elasticity and `c = pi0 / (1 - pi0)` derived from the conversion rate
//!   before any premium change. The base rate `pi0` is either given or taken
//!   from the clamped-linear market position at `delta = 0`, which embeds the
//!   competition signal the same way the step model does.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketQuote;

/// A scalar parameter shared by the whole portfolio or given per customer
/// (in portfolio order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Shared(f64),
    PerCustomer(Vec<f64>),
}

impl Param {
    pub fn get(&self, customer_index: usize) -> f64 {
        match self {
            Param::Shared(v) => *v,
            Param::PerCustomer(vs) => vs[customer_index],
        }
    }

    fn validate(&self, name: &'static str, n: usize, check: impl Fn(f64) -> bool, what: &str) -> Result<()> {
        let bad = |v: f64, id: Option<u64>| Err(Error::validation(name, id, format!("{what}, got {v}")));
        match self {
            Param::Shared(v) => {
                if !check(*v) {
                    return bad(*v, None);
                }
            }
            Param::PerCustomer(vs) => {
                if vs.len() != n {
                    return Err(Error::validation(
                        name,
                        None,
                        format!("per-customer list has {} entries, portfolio has {n}", vs.len()),
                    ));
                }
                for (i, &v) in vs.iter().enumerate() {
                    if !check(v) {
                        return bad(v, Some(i as u64));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    PiecewiseConstant,
    ClampedLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    /// Conversion rate of the cheapest offer in the market.
    pub c1: f64,
    /// Conversion rate of the most expensive offer.
    pub c2: f64,
    pub mode: StepMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub alpha: Param,
    pub beta: Param,
}

/// The `c1`/`c2` anchor used to derive a logistic base rate from the market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAnchor {
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseRate {
    /// Explicit conversion rate at `delta = 0`.
    Fixed { rate: Param },
    /// Clamped-linear market value at `delta = 0`.
    Market { market: StepAnchor },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub base: BaseRate,
    /// Price elasticity `T < 0`; larger `|T|` means a more price-sensitive customer.
    pub elasticity: Param,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConversionModel {
    Step(StepParams),
    Linear(LinearParams),
    Logistic(LogisticParams),
}

impl ConversionModel {
    pub fn validate(&self, n_customers: usize) -> Result<()> {
        match self {
            ConversionModel::Step(p) => validate_step_pair("step", p.c1, p.c2),
            ConversionModel::Linear(p) => {
                p.alpha.validate("alpha", n_customers, |a| a > 0.0 && a <= 1.0, "alpha must lie in (0, 1]")?;
                p.beta.validate("beta", n_customers, |b| b <= 0.0 && b.is_finite(), "beta must be <= 0")
            }
            ConversionModel::Logistic(p) => {
                match &p.base {
                    BaseRate::Fixed { rate } => rate.validate(
                        "base_rate",
                        n_customers,
                        |r| r > 0.0 && r < 1.0,
                        "base rate must lie strictly in (0, 1)",
                    )?,
                    BaseRate::Market { market } => {
                        validate_step_pair("logistic market base", market.c1, market.c2)?;
                        if market.c1 >= 1.0 {
                            return Err(Error::validation(
                                "logistic market base",
                                None,
                                "c1 must be < 1 so the derived base rate stays in (0, 1)",
                            ));
                        }
                    }
                }
                p.elasticity.validate(
                    "elasticity",
                    n_customers,
                    |t| t < 0.0 && t.is_finite(),
                    "elasticity must be negative",
                )
            }
        }
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self, ConversionModel::Step(_))
    }

    /// Acceptance probability for the customer at `customer_index` when its
    /// premium changes by `delta`. `delta` must lie in the quote's bounds.
    pub fn acceptance_prob(
        &self,
        quote: &MarketQuote,
        customer_index: usize,
        delta: f64,
    ) -> Result<f64> {
        check_delta(quote, delta)?;
        Ok(self.prob_unchecked(quote, customer_index, delta))
    }

    /// Derivative of the acceptance probability with respect to `delta`.
    /// Only the linear and logistic models are differentiable.
    pub fn acceptance_prob_grad(
        &self,
        quote: &MarketQuote,
        customer_index: usize,
        delta: f64,
    ) -> Result<f64> {
        check_delta(quote, delta)?;
        match self {
            ConversionModel::Step(_) => Err(Error::UnsupportedModel("acceptance_prob_grad")),
            ConversionModel::Linear(p) => {
                let alpha = p.alpha.get(customer_index);
                let beta = p.beta.get(customer_index);
                let raw = alpha + beta * delta;
                Ok(if raw > 0.0 && raw < 1.0 { beta } else { 0.0 })
            }
            ConversionModel::Logistic(p) => {
                let t = p.elasticity.get(customer_index);
                let pi = self.prob_unchecked(quote, customer_index, delta);
                Ok(t * pi * (1.0 - pi))
            }
        }
    }

    /// Probability without the bounds check; used for baselines and for
    /// evaluating "what if the company had offered this premium" questions
    /// (competitor-anchored volume bounds).
    pub(crate) fn prob_unchecked(&self, quote: &MarketQuote, customer_index: usize, delta: f64) -> f64 {
        match self {
            ConversionModel::Step(p) => {
                step_prob(p, quote, quote.premium_at(delta))
            }
            ConversionModel::Linear(p) => {
                let raw = p.alpha.get(customer_index) + p.beta.get(customer_index) * delta;
                raw.clamp(0.0, 1.0)
            }
            ConversionModel::Logistic(p) => {
                let base = logistic_base(&p.base, quote, customer_index);
                let c = base / (1.0 - base);
                logistic_prob(c, p.elasticity.get(customer_index), delta)
            }
        }
    }

    /// Probability the model assigns to an arbitrary candidate premium with no
    /// premium change applied (`delta = 0` semantics): the step model reads
    /// the market position of the candidate, the logistic model derives its
    /// base rate from it, and the linear model is premium-independent.
    pub(crate) fn prob_at_candidate(
        &self,
        quote: &MarketQuote,
        customer_index: usize,
        candidate_premium: f64,
    ) -> f64 {
        match self {
            ConversionModel::Step(p) => step_prob(p, quote, candidate_premium),
            ConversionModel::Linear(p) => p.alpha.get(customer_index).clamp(0.0, 1.0),
            ConversionModel::Logistic(p) => match &p.base {
                BaseRate::Fixed { rate } => rate.get(customer_index),
                BaseRate::Market { market } => {
                    clamped_linear(market.c1, market.c2, quote, candidate_premium)
                }
            },
        }
    }
}

fn validate_step_pair(field: &'static str, c1: f64, c2: f64) -> Result<()> {
    if !(c2 > 0.0 && c2 < c1 && c1 <= 1.0) {
        return Err(Error::validation(
            field,
            None,
            format!("need 0 < c2 < c1 <= 1, got c1 = {c1}, c2 = {c2}"),
        ));
    }
    Ok(())
}

fn check_delta(quote: &MarketQuote, delta: f64) -> Result<()> {
    if delta < quote.delta_lower || delta > quote.delta_upper || !delta.is_finite() {
        return Err(Error::Domain(format!(
            "delta {delta} outside [{}, {}] for customer {}",
            quote.delta_lower, quote.delta_upper, quote.customer_id
        )));
    }
    Ok(())
}

/// Midpoints between consecutive distinct competitor premiums: the points
/// where the piecewise-constant conversion level jumps. Length `k - 1` with
/// duplicates collapsed.
pub fn jump_points(quote: &MarketQuote) -> Vec<f64> {
    let distinct = distinct_sorted(&quote.competitor_premiums);
    distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn distinct_sorted(premiums: &[f64]) -> Vec<f64> {
    let mut xs = premiums.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    xs
}

/// Literal interpolation between the market's cheapest and most expensive
/// premium, clamped to `[c2, c1]` outside the observed range.
fn clamped_linear(c1: f64, c2: f64, quote: &MarketQuote, premium: f64) -> f64 {
    let min = quote.min_competitor();
    let max = quote.max_competitor();
    let raw = c1 + (c2 - c1) * (premium - min) / (max - min);
    raw.clamp(c2, c1)
}

fn step_prob(p: &StepParams, quote: &MarketQuote, premium: f64) -> f64 {
    match p.mode {
        StepMode::ClampedLinear => clamped_linear(p.c1, p.c2, quote, premium),
        StepMode::PiecewiseConstant => {
            let distinct = distinct_sorted(&quote.competitor_premiums);
            piecewise_constant(p.c1, p.c2, quote, &distinct, premium)
        }
    }
}

/// Level of the cell `(mid[i-1], mid[i]]` containing the premium, where the
/// mids are the midpoints between consecutive distinct competitor premiums.
/// The level is the clamped-linear value at the cell's own competitor
/// premium, so the first cell yields exactly `c1` and the last exactly `c2`.
fn piecewise_constant(c1: f64, c2: f64, quote: &MarketQuote, distinct: &[f64], premium: f64) -> f64 {
    let mut cell = 0;
    for w in distinct.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if premium > mid {
            cell += 1;
        } else {
            break;
        }
    }
    clamped_linear(c1, c2, quote, distinct[cell])
}

fn logistic_prob(c: f64, t: f64, delta: f64) -> f64 {
    // 1 / (1 + c^-1 e^(-T d)), written to stay stable for small c.
    let e = (-t * delta).exp();
    c / (c + e)
}

fn logistic_base(base: &BaseRate, quote: &MarketQuote, customer_index: usize) -> f64 {
    match base {
        BaseRate::Fixed { rate } => rate.get(customer_index),
        BaseRate::Market { market } => clamped_linear(market.c1, market.c2, quote, quote.base_premium),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn example_quote() -> MarketQuote {
        MarketQuote {
            customer_id: 1,
            base_premium: 568.0,
            competitor_premiums: vec![
                438.0, 457.0, 477.0, 492.0, 532.0, 596.0, 654.0, 675.0, 733.0,
            ],
            delta_lower: -0.2,
            delta_upper: 0.2,
        }
    }

    fn step(mode: StepMode) -> ConversionModel {
        ConversionModel::Step(StepParams { c1: 0.75, c2: 0.3, mode })
    }

    fn logistic(base: f64, t: f64) -> ConversionModel {
        ConversionModel::Logistic(LogisticParams {
            base: BaseRate::Fixed { rate: Param::Shared(base) },
            elasticity: Param::Shared(t),
        })
    }

    #[test]
    fn jump_points_of_example_market() {
        let expected = [447.5, 467.0, 484.5, 512.0, 564.0, 625.0, 664.5, 704.0];
        assert_eq!(jump_points(&example_quote()), expected);
    }

    #[test]
    fn jump_points_trivial_and_duplicates() {
        let mut q = example_quote();
        q.competitor_premiums = vec![500.0, 520.0];
        assert_eq!(jump_points(&q), vec![510.0]);
        q.competitor_premiums = vec![500.0, 500.0, 520.0];
        assert_eq!(jump_points(&q), vec![510.0]);
    }

    #[test]
    fn clamped_linear_at_current_premium() {
        let q = example_quote();
        let pi = step(StepMode::ClampedLinear).acceptance_prob(&q, 0, 0.0).unwrap();
        assert_relative_eq!(pi, 0.75 - 0.45 * (568.0 - 438.0) / (733.0 - 438.0), epsilon = 1e-15);
        assert_relative_eq!(pi, 0.5517, epsilon = 1e-4);
    }

    #[test]
    fn piecewise_constant_shares_a_cell() {
        let q = example_quote();
        let m = step(StepMode::PiecewiseConstant);
        // 568 and 580 both fall in (564, 625], whose level is the market
        // value of the bracketed competitor 596.
        let a = m.acceptance_prob(&q, 0, 0.0).unwrap();
        let b = m.acceptance_prob(&q, 0, 580.0 / 568.0 - 1.0).unwrap();
        assert_eq!(a, b);
        assert_relative_eq!(a, 0.50898, epsilon = 1e-5);
        assert_relative_eq!(a, 0.75 - 0.45 * (596.0 - 438.0) / 295.0, epsilon = 1e-15);
    }

    #[test]
    fn clamps_outside_market_range() {
        let mut q = example_quote();
        q.base_premium = 400.0; // below every competitor
        let pi = step(StepMode::ClampedLinear).acceptance_prob(&q, 0, 0.0).unwrap();
        assert_eq!(pi, 0.75);
        q.base_premium = 900.0; // above every competitor
        let pi = step(StepMode::ClampedLinear).acceptance_prob(&q, 0, 0.0).unwrap();
        assert_eq!(pi, 0.3);
    }

    #[test]
    fn logistic_values() {
        let q = example_quote();
        // c = 1 makes delta = 0 a coin flip whatever the elasticity.
        assert_eq!(logistic(0.5, -7.0).acceptance_prob(&q, 0, 0.0).unwrap(), 0.5);
        // base 0.75 -> c = 3; direct evaluation at delta = 0.1, T = -4.
        let pi = logistic(0.75, -4.0).acceptance_prob(&q, 0, 0.1).unwrap();
        assert_relative_eq!(pi, 1.0 / (1.0 + (1.0 / 3.0) * 0.4f64.exp()), epsilon = 1e-15);
        assert_relative_eq!(pi, 0.66788, epsilon = 1e-5);
    }

    #[test]
    fn logistic_gradient_analytic() {
        let q = example_quote();
        let g = logistic(0.5, -4.0).acceptance_prob_grad(&q, 0, 0.0).unwrap();
        assert_relative_eq!(g, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn linear_gradient_and_clamp() {
        let q = example_quote();
        let m = ConversionModel::Linear(LinearParams {
            alpha: Param::Shared(0.5),
            beta: Param::Shared(-1.0),
        });
        assert_eq!(m.acceptance_prob_grad(&q, 0, 0.0).unwrap(), -1.0);
        // Clamped region: alpha + beta * delta < 0.
        let m2 = ConversionModel::Linear(LinearParams {
            alpha: Param::Shared(0.1),
            beta: Param::Shared(-1.0),
        });
        assert_eq!(m2.acceptance_prob(&q, 0, 0.2).unwrap(), 0.0);
        assert_eq!(m2.acceptance_prob_grad(&q, 0, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn step_gradient_unsupported() {
        let q = example_quote();
        let err = step(StepMode::ClampedLinear).acceptance_prob_grad(&q, 0, 0.0).unwrap_err();
        assert!(matches!(err, Error::UnsupportedModel(_)));
    }

    #[test]
    fn delta_outside_bounds_is_domain_error() {
        let q = example_quote();
        assert!(matches!(
            step(StepMode::ClampedLinear).acceptance_prob(&q, 0, 0.5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = crate::rng::Prng::seed_from(21);
        let q = example_quote();
        let h = 1e-6;
        for _ in 0..100 {
            let base = rng.range(0.1, 0.9);
            let t = rng.range(-8.0, -0.5);
            let d = rng.range(-0.19, 0.19);
            let m = logistic(base, t);
            let analytic = m.acceptance_prob_grad(&q, 0, d).unwrap();
            let fd = (m.acceptance_prob(&q, 0, d + h).unwrap()
                - m.acceptance_prob(&q, 0, d - h).unwrap())
                / (2.0 * h);
            let rel = (analytic - fd).abs() / (1.0 + analytic.abs());
            assert!(rel < 1e-6, "base {base} t {t} d {d}: {analytic} vs {fd}");
        }
    }

    #[test]
    fn per_customer_params_resolve_by_index() {
        let q = example_quote();
        let m = ConversionModel::Logistic(LogisticParams {
            base: BaseRate::Fixed { rate: Param::PerCustomer(vec![0.5, 0.75]) },
            elasticity: Param::PerCustomer(vec![-4.0, -4.0]),
        });
        m.validate(2).unwrap();
        assert_eq!(m.acceptance_prob(&q, 0, 0.0).unwrap(), 0.5);
        assert_eq!(m.acceptance_prob(&q, 1, 0.0).unwrap(), 0.75);
        // Wrong length is caught up front.
        assert!(m.validate(3).is_err());
    }

    #[test]
    fn market_derived_base_embeds_competition() {
        let q = example_quote();
        let m = ConversionModel::Logistic(LogisticParams {
            base: BaseRate::Market { market: StepAnchor { c1: 0.75, c2: 0.3 } },
            elasticity: Param::Shared(-4.0),
        });
        let at_zero = m.acceptance_prob(&q, 0, 0.0).unwrap();
        let cl = step(StepMode::ClampedLinear).acceptance_prob(&q, 0, 0.0).unwrap();
        assert_relative_eq!(at_zero, cl, epsilon = 1e-12);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(step(StepMode::ClampedLinear).validate(1).is_ok());
        let bad = ConversionModel::Step(StepParams { c1: 0.3, c2: 0.75, mode: StepMode::ClampedLinear });
        assert!(bad.validate(1).is_err());
        assert!(logistic(1.0, -4.0).validate(1).is_err());
        assert!(logistic(0.5, 0.5).validate(1).is_err());
        let bad_linear = ConversionModel::Linear(LinearParams {
            alpha: Param::Shared(0.5),
            beta: Param::Shared(0.1),
        });
        assert!(bad_linear.validate(1).is_err());
    }

    fn arb_quote() -> impl Strategy<Value = MarketQuote> {
        (
            2usize..9,
            proptest::collection::vec(100.0f64..2000.0, 9),
            100.0f64..2000.0,
        )
            .prop_map(|(k, comps, base)| MarketQuote {
                customer_id: 1,
                base_premium: base,
                competitor_premiums: comps[..k].to_vec(),
                delta_lower: -0.4,
                delta_upper: 0.4,
            })
            .prop_filter("two distinct competitors", |q| q.min_competitor() < q.max_competitor())
    }

    fn arb_model() -> impl Strategy<Value = ConversionModel> {
        prop_oneof![
            (0.05f64..0.5, 0.5f64..1.0, prop_oneof![Just(StepMode::ClampedLinear), Just(StepMode::PiecewiseConstant)])
                .prop_map(|(c2, c1, mode)| ConversionModel::Step(StepParams { c1, c2, mode })),
            (0.05f64..1.0, -2.0f64..0.0).prop_map(|(alpha, beta)| {
                ConversionModel::Linear(LinearParams {
                    alpha: Param::Shared(alpha),
                    beta: Param::Shared(beta),
                })
            }),
            (0.05f64..0.95, -9.0f64..-0.1).prop_map(|(base, t)| {
                ConversionModel::Logistic(LogisticParams {
                    base: BaseRate::Fixed { rate: Param::Shared(base) },
                    elasticity: Param::Shared(t),
                })
            }),
        ]
    }

    proptest! {
        /// Acceptance is non-increasing in delta for every model family.
        #[test]
        fn monotone_non_increasing(q in arb_quote(), m in arb_model(), a in -0.4f64..0.4, b in -0.4f64..0.4) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let pa = m.acceptance_prob(&q, 0, lo).unwrap();
            let pb = m.acceptance_prob(&q, 0, hi).unwrap();
            prop_assert!(pa >= pb, "pi({lo}) = {pa} < pi({hi}) = {pb}");
        }

        /// Outputs stay inside the probability range the model promises.
        #[test]
        fn output_range(q in arb_quote(), m in arb_model(), d in -0.4f64..0.4) {
            let pi = m.acceptance_prob(&q, 0, d).unwrap();
            prop_assert!((0.0..=1.0).contains(&pi));
            if let ConversionModel::Step(p) = &m {
                prop_assert!(pi >= p.c2 - 1e-15 && pi <= p.c1 + 1e-15);
            }
            if matches!(m, ConversionModel::Logistic(_)) {
                prop_assert!(pi > 0.0 && pi < 1.0);
            }
        }

        /// At a non-duplicated competitor premium, both step modes agree.
        #[test]
        fn step_modes_agree_on_competitor_premiums(q in arb_quote(), idx in 0usize..8) {
            let idx = idx % q.competitor_premiums.len();
            let target = q.competitor_premiums[idx];
            let dup = q.competitor_premiums.iter().filter(|&&p| p == target).count();
            prop_assume!(dup == 1);
            let mut q = q;
            // Aim the company premium exactly at the competitor's.
            q.base_premium = target;
            let pwc = step(StepMode::PiecewiseConstant).acceptance_prob(&q, 0, 0.0).unwrap();
            let cl = step(StepMode::ClampedLinear).acceptance_prob(&q, 0, 0.0).unwrap();
            prop_assert!((pwc - cl).abs() < 1e-12, "{pwc} vs {cl}");
        }
    }
}

//! Synthetic market generator.
//!
//! For each customer: draw the company premium `P0` (uniform, with a 75%/25%
//! split below/above the split point), draw the company's market-rank
//! fraction `u`, anchor the market's median premium via
//! `P_m = P0 / (1 + (upb - lwb)(u - 0.5))`, put the cheapest and most
//! expensive offers at `P_m (1 + lwb)` and `P_m (1 + upb)`, and fill the
//! remaining competitors uniformly in between. Any interior draw exactly
//! equal to `P0` is redrawn, and the competitor order is shuffled before
//! column assignment.
//!
//! The default band `(lwb, upb) = (-0.15, +0.10)` places the company on the
//! expensive side of the market (mean band position ~0.6), which is what the
//! published premium statistics and position plots reflect; see the README
//! for the configuration surface.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{MarketQuote, Portfolio};
use crate::rng::Prng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Portfolio size.
    pub n: usize,
    pub base_low: f64,
    pub base_high: f64,
    /// Share of customers quoted below `split_point`.
    pub cheap_share: f64,
    pub split_point: f64,
    /// The company's rank fraction is uniform on `(rank_low, rank_high)`;
    /// 0 is the cheapest company in the market, 1 the most expensive.
    pub rank_low: f64,
    pub rank_high: f64,
    /// Market band around the median premium: cheapest offer at
    /// `P_m (1 + lwb)`, most expensive at `P_m (1 + upb)`.
    pub lwb: f64,
    pub upb: f64,
    /// Interior competitors drawn uniformly inside the band (the band edges
    /// themselves are two more offers).
    pub n_other: usize,
    /// Delta bounds written into every generated quote.
    pub delta_lower: f64,
    pub delta_upper: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            base_low: 400.0,
            base_high: 2000.0,
            cheap_share: 0.75,
            split_point: 1600.0,
            rank_low: 0.25,
            rank_high: 0.75,
            lwb: -0.15,
            upb: 0.10,
            n_other: 7,
            delta_lower: -0.2,
            delta_upper: 0.2,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("simulator n must be at least 1".into()));
        }
        if !(self.base_low > 0.0 && self.base_low < self.split_point && self.split_point < self.base_high) {
            return Err(Error::Config(format!(
                "need 0 < base_low < split_point < base_high, got {} / {} / {}",
                self.base_low, self.split_point, self.base_high
            )));
        }
        if !(0.0..=1.0).contains(&self.cheap_share) {
            return Err(Error::Config("cheap_share must lie in [0, 1]".into()));
        }
        if !(0.0 < self.rank_low && self.rank_low < self.rank_high && self.rank_high < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < rank_low < rank_high < 1, got {} / {}",
                self.rank_low, self.rank_high
            )));
        }
        if !(self.lwb < 0.0 && 0.0 < self.upb) {
            return Err(Error::Config(format!(
                "need lwb < 0 < upb, got {} / {}",
                self.lwb, self.upb
            )));
        }
        if !(self.delta_lower > -1.0 && self.delta_lower < self.delta_upper && self.delta_upper < 1.0) {
            return Err(Error::Config(format!(
                "need -1 < delta_lower < delta_upper < 1, got {} / {}",
                self.delta_lower, self.delta_upper
            )));
        }
        Ok(())
    }

    pub fn competitor_count(&self) -> usize {
        self.n_other + 2
    }
}

/// Company base premium: uniform on the cheap segment with probability
/// `cheap_share`, else uniform on the expensive segment.
pub fn gen_base_premium(config: &SimConfig, rng: &mut Prng) -> f64 {
    if rng.chance(config.cheap_share) {
        rng.range(config.base_low, config.split_point)
    } else {
        rng.range(config.split_point, config.base_high)
    }
}

/// Median premium anchored at the company's rank fraction, plus the implied
/// band edges. Satisfies `(P_m - P0) / (0.5 - u) = P_max - P_min`.
pub fn median_premium(p0: f64, u: f64, lwb: f64, upb: f64) -> (f64, f64, f64) {
    let pm = p0 / (1.0 + (upb - lwb) * (u - 0.5));
    (pm, pm * (1.0 + lwb), pm * (1.0 + upb))
}

/// Per-quote generation detail, exposed for tests and metadata.
#[derive(Debug, Clone, Copy)]
pub struct QuoteDetail {
    pub p0: f64,
    pub u: f64,
    pub pm: f64,
    pub pmin: f64,
    pub pmax: f64,
}

pub fn gen_quote(config: &SimConfig, rng: &mut Prng, customer_id: u64) -> MarketQuote {
    gen_quote_detailed(config, rng, customer_id).0
}

pub(crate) fn gen_quote_detailed(
    config: &SimConfig,
    rng: &mut Prng,
    customer_id: u64,
) -> (MarketQuote, QuoteDetail) {
    let p0 = gen_base_premium(config, rng);
    let u = rng.range(config.rank_low, config.rank_high);
    let (pm, pmin, pmax) = median_premium(p0, u, config.lwb, config.upb);
    let mut competitors = Vec::with_capacity(config.competitor_count());
    competitors.push(pmin);
    competitors.push(pmax);
    for _ in 0..config.n_other {
        // Redraw on an exact collision with the company premium.
        let mut p = rng.range(pmin, pmax);
        while p == p0 {
            p = rng.range(pmin, pmax);
        }
        competitors.push(p);
    }
    rng.shuffle(&mut competitors);
    (
        MarketQuote {
            customer_id,
            base_premium: p0,
            competitor_premiums: competitors,
            delta_lower: config.delta_lower,
            delta_upper: config.delta_upper,
        },
        QuoteDetail { p0, u, pm, pmin, pmax },
    )
}

/// Column statistics in the shape of the published premium table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnStats {
    pub label: String,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PremiumStats {
    pub columns: Vec<ColumnStats>,
}

impl PremiumStats {
    pub fn to_table_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:>6}", ""));
        for c in &self.columns {
            out.push_str(&format!("{:>10}", c.label));
        }
        out.push('\n');
        let rows: [(&str, fn(&ColumnStats) -> f64); 6] = [
            ("mean", |c| c.mean),
            ("min", |c| c.min),
            ("q1", |c| c.q1),
            ("q2", |c| c.q2),
            ("q3", |c| c.q3),
            ("max", |c| c.max),
        ];
        for (name, pick) in rows {
            out.push_str(&format!("{name:>6}"));
            for c in &self.columns {
                out.push_str(&format!("{:>10.0}", pick(c)));
            }
            out.push('\n');
        }
        out
    }
}

/// Generate a portfolio of `config.n` quotes plus its premium statistics.
pub fn simulate_portfolio(config: &SimConfig) -> Result<(Portfolio, PremiumStats)> {
    config.validate()?;
    let mut rng = Prng::seed_from(config.seed);
    let quotes: Vec<MarketQuote> = (1..=config.n as u64)
        .map(|id| gen_quote(config, &mut rng, id))
        .collect();
    let portfolio = Portfolio::new(quotes)?;
    let stats = premium_stats(&portfolio);
    Ok((portfolio, stats))
}

pub fn premium_stats(portfolio: &Portfolio) -> PremiumStats {
    let k = portfolio.competitor_count();
    let mut columns = Vec::with_capacity(k + 1);
    let base: Vec<f64> = portfolio.quotes().iter().map(|q| q.base_premium).collect();
    columns.push(column_stats("P0", base));
    for i in 0..k {
        let col: Vec<f64> = portfolio
            .quotes()
            .iter()
            .map(|q| q.competitor_premiums[i])
            .collect();
        columns.push(column_stats(&format!("P{}", i + 1), col));
    }
    PremiumStats { columns }
}

fn column_stats(label: &str, mut xs: Vec<f64>) -> ColumnStats {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    ColumnStats {
        label: label.to_string(),
        mean,
        min: xs[0],
        q1: quantile(&xs, 0.25),
        q2: quantile(&xs, 0.50),
        q3: quantile(&xs, 0.75),
        max: xs[xs.len() - 1],
    }
}

/// Linear interpolation between order statistics (the spreadsheet convention).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

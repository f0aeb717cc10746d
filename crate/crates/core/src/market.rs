//! Market data model: customer quotes, portfolios, and the delta domain.
//!
//! A quote carries the company's base premium `P`, the premiums the `k`
//! competitors offered the same customer, and the admissible relative premium
//! change `delta in [delta_lower, delta_upper]`. The offered premium after
//! optimisation is `P * (1 + delta)`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketQuote {
    pub customer_id: u64,
    pub base_premium: f64,
    pub competitor_premiums: Vec<f64>,
    pub delta_lower: f64,
    pub delta_upper: f64,
}

impl MarketQuote {
    pub fn validate(&self) -> Result<()> {
        let id = Some(self.customer_id);
        if !(self.base_premium > 0.0) || !self.base_premium.is_finite() {
            return Err(Error::validation(
                "base_premium",
                id,
                format!("must be positive and finite, got {}", self.base_premium),
            ));
        }
        if self.competitor_premiums.is_empty() {
            return Err(Error::validation(
                "competitor_premiums",
                id,
                "at least one competitor premium is required",
            ));
        }
        for &p in &self.competitor_premiums {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::validation(
                    "competitor_premiums",
                    id,
                    format!("must all be positive and finite, got {p}"),
                ));
            }
        }
        let min = self.min_competitor();
        let max = self.max_competitor();
        if min == max {
            return Err(Error::validation(
                "competitor_premiums",
                id,
                "need at least two distinct competitor premiums (the step model's \
                 denominator is max - min)",
            ));
        }
        for (name, v) in [("delta_lower", self.delta_lower), ("delta_upper", self.delta_upper)] {
            if !v.is_finite() || v <= -1.0 || v >= 1.0 {
                return Err(Error::validation(
                    name,
                    id,
                    format!("must lie strictly inside (-1, 1), got {v}"),
                ));
            }
        }
        if self.delta_lower >= self.delta_upper {
            return Err(Error::validation(
                "delta_lower",
                id,
                format!(
                    "delta interval is empty: lower {} >= upper {}",
                    self.delta_lower, self.delta_upper
                ),
            ));
        }
        Ok(())
    }

    pub fn min_competitor(&self) -> f64 {
        self.competitor_premiums.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_competitor(&self) -> f64 {
        self.competitor_premiums.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Offered premium at a given delta.
    pub fn premium_at(&self, delta: f64) -> f64 {
        self.base_premium * (1.0 + delta)
    }
}

/// Market rank of a candidate premium among the quote's competitors:
/// `1` is cheapest, `k + 1` most expensive. Ties go to the company (only
/// strictly cheaper competitors count).
pub fn market_rank(quote: &MarketQuote, candidate_premium: f64) -> usize {
    1 + quote
        .competitor_premiums
        .iter()
        .filter(|&&p| p < candidate_premium)
        .count()
}

/// A validated set of quotes: nonempty, unique customer ids, uniform
/// competitor count. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Portfolio {
    quotes: Vec<MarketQuote>,
}

impl Portfolio {
    pub fn new(quotes: Vec<MarketQuote>) -> Result<Self> {
        if quotes.is_empty() {
            return Err(Error::validation("portfolio", None, "no quotes"));
        }
        let k = quotes[0].competitor_premiums.len();
        let mut ids: Vec<u64> = Vec::with_capacity(quotes.len());
        for q in &quotes {
            q.validate()?;
            if q.competitor_premiums.len() != k {
                return Err(Error::validation(
                    "competitor_premiums",
                    Some(q.customer_id),
                    format!(
                        "competitor count {} differs from the portfolio's {k}",
                        q.competitor_premiums.len()
                    ),
                ));
            }
            ids.push(q.customer_id);
        }
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            let dup = ids.windows(2).find(|w| w[0] == w[1]).unwrap()[0];
            return Err(Error::validation(
                "customer_id",
                Some(dup),
                "duplicate customer id",
            ));
        }
        Ok(Portfolio { quotes })
    }

    pub fn quotes(&self) -> &[MarketQuote] {
        &self.quotes
    }

    pub fn len(&self) -> usize {
        self.quotes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }

    /// Number of competitors per quote (uniform across the portfolio).
    pub fn competitor_count(&self) -> usize {
        self.quotes[0].competitor_premiums.len()
    }
}

/// Admissible values for each customer's premium change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaDomain {
    /// Any value within the quote's own `[delta_lower, delta_upper]`.
    Continuous,
    /// A shared grid, e.g. -0.20 ..= 0.20 in steps of 0.05.
    Discrete { values: Vec<f64> },
}

impl DeltaDomain {
    pub fn validate(&self) -> Result<()> {
        if let DeltaDomain::Discrete { values } = self {
            if values.is_empty() {
                return Err(Error::validation("delta_domain", None, "empty discrete grid"));
            }
            if values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::validation(
                    "delta_domain",
                    None,
                    "discrete grid must be strictly increasing",
                ));
            }
        }
        Ok(())
    }

    /// Discrete grids must lie inside every quote's delta interval (closure).
    pub fn validate_against(&self, portfolio: &Portfolio) -> Result<()> {
        self.validate()?;
        if let DeltaDomain::Discrete { values } = self {
            for q in portfolio.quotes() {
                let lo = values.first().copied().unwrap();
                let hi = values.last().copied().unwrap();
                if lo < q.delta_lower || hi > q.delta_upper {
                    return Err(Error::validation(
                        "delta_domain",
                        Some(q.customer_id),
                        format!(
                            "grid [{lo}, {hi}] exceeds the quote's bounds [{}, {}]",
                            q.delta_lower, q.delta_upper
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            DeltaDomain::Continuous => None,
            DeltaDomain::Discrete { values } => Some(values),
        }
    }
}

/// Read a portfolio from CSV with header
/// `customer_id,P0,P1,...,Pk,delta_lower,delta_upper`.
pub fn read_portfolio<R: Read>(reader: R) -> Result<Portfolio> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        row: 1,
        message: format!("cannot read header: {e}"),
    })?;
    let cols = header.len();
    if cols < 5 {
        return Err(Error::Parse {
            row: 1,
            message: format!(
                "expected header customer_id,P0,...,Pk,delta_lower,delta_upper with k >= 1, \
                 got {cols} columns"
            ),
        });
    }
    let k = cols - 4;
    let expected: Vec<String> = std::iter::once("customer_id".to_string())
        .chain((0..=k).map(|i| format!("P{i}")))
        .chain(["delta_lower".to_string(), "delta_upper".to_string()])
        .collect();
    for (got, want) in header.iter().zip(&expected) {
        if got != want {
            return Err(Error::Parse {
                row: 1,
                message: format!("unexpected header column {got:?}, expected {want:?}"),
            });
        }
    }

    let mut quotes = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2; // 1-based, after the header line
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != cols {
            return Err(Error::Parse {
                row,
                message: format!("expected {cols} fields, got {}", record.len()),
            });
        }
        let field = |idx: usize| -> Result<f64> {
            record[idx].parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("field {:?} is not a number: {:?}", expected[idx], &record[idx]),
            })
        };
        let customer_id = record[0].parse::<u64>().map_err(|_| Error::Parse {
            row,
            message: format!("customer_id is not an integer: {:?}", &record[0]),
        })?;
        let base_premium = field(1)?;
        let competitor_premiums = (2..2 + k).map(field).collect::<Result<Vec<f64>>>()?;
        let delta_lower = field(cols - 2)?;
        let delta_upper = field(cols - 1)?;
        quotes.push(MarketQuote {
            customer_id,
            base_premium,
            competitor_premiums,
            delta_lower,
            delta_upper,
        });
    }
    Portfolio::new(quotes)
}

pub fn load_portfolio(path: impl AsRef<Path>) -> Result<Portfolio> {
    let file = std::fs::File::open(path.as_ref())?;
    read_portfolio(std::io::BufReader::new(file))
}

/// Write a portfolio in the same CSV schema `read_portfolio` accepts.
/// Floats use shortest round-trip formatting, so write-then-read is exact.
pub fn write_portfolio<W: Write>(portfolio: &Portfolio, mut w: W) -> Result<()> {
    let k = portfolio.competitor_count();
    write!(w, "customer_id,P0")?;
    for i in 1..=k {
        write!(w, ",P{i}")?;
    }
    writeln!(w, ",delta_lower,delta_upper")?;
    for q in portfolio.quotes() {
        write!(w, "{},{}", q.customer_id, q.base_premium)?;
        for p in &q.competitor_premiums {
            write!(w, ",{p}")?;
        }
        writeln!(w, ",{},{}", q.delta_lower, q.delta_upper)?;
    }
    Ok(())
}

pub fn save_portfolio(portfolio: &Portfolio, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_portfolio(portfolio, &mut buf)?;
    std::fs::write(path.as_ref(), buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The single-customer market of the worked example: nine competitors,
    /// company premium 568.
    pub(crate) fn example_quote() -> MarketQuote {
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

    const EXAMPLE_CSV: &str = "\
customer_id,P0,P1,P2,P3,P4,P5,P6,P7,P8,P9,delta_lower,delta_upper
1,568,438,457,477,492,532,596,654,675,733,-0.2,0.2
";

    #[test]
    fn loads_example_row() {
        let p = read_portfolio(EXAMPLE_CSV.as_bytes()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.competitor_count(), 9);
        let q = &p.quotes()[0];
        assert_eq!(q.base_premium, 568.0);
        assert_eq!(q.competitor_premiums[0], 438.0);
        assert_eq!(q.delta_upper, 0.2);
    }

    #[test]
    fn empty_delta_interval_rejected() {
        let csv = "customer_id,P0,P1,P2,delta_lower,delta_upper\n1,100,90,110,0.1,0.1\n";
        let err = read_portfolio(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation { field: "delta_lower", .. }), "{err}");
    }

    #[test]
    fn equal_competitors_rejected() {
        let csv = "customer_id,P0,P1,P2,delta_lower,delta_upper\n1,100,95,95,-0.1,0.1\n";
        let err = read_portfolio(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation { field: "competitor_premiums", .. }), "{err}");
    }

    #[test]
    fn malformed_row_names_row_number() {
        let csv = "customer_id,P0,P1,P2,delta_lower,delta_upper\n\
                   1,100,90,110,-0.1,0.1\n\
                   2,abc,90,110,-0.1,0.1\n";
        let err = read_portfolio(csv.as_bytes()).unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let csv = "customer_id,P0,P1,P2,delta_lower,delta_upper\n\
                   1,100,90,110,-0.1,0.1\n\
                   1,200,190,210,-0.1,0.1\n";
        let err = read_portfolio(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation { field: "customer_id", .. }), "{err}");
    }

    #[test]
    fn heterogeneous_competitor_count_rejected() {
        let a = MarketQuote {
            customer_id: 1,
            base_premium: 100.0,
            competitor_premiums: vec![90.0, 110.0],
            delta_lower: -0.1,
            delta_upper: 0.1,
        };
        let b = MarketQuote {
            competitor_premiums: vec![90.0, 100.0, 110.0],
            customer_id: 2,
            ..a.clone()
        };
        let err = Portfolio::new(vec![a, b]).unwrap_err();
        assert!(matches!(err, Error::Validation { field: "competitor_premiums", .. }), "{err}");
    }

    #[test]
    fn rank_of_example_candidates() {
        let q = example_quote();
        assert_eq!(market_rank(&q, 568.0), 6);
        assert_eq!(market_rank(&q, 400.0), 1);
        assert_eq!(market_rank(&q, 800.0), 10);
        // Ties go to the company.
        assert_eq!(market_rank(&q, 438.0), 1);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = read_portfolio(EXAMPLE_CSV.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_portfolio(&p, &mut buf).unwrap();
        let again = read_portfolio(buf.as_slice()).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn discrete_domain_must_fit_bounds() {
        let p = read_portfolio(EXAMPLE_CSV.as_bytes()).unwrap();
        let ok = DeltaDomain::Discrete { values: vec![-0.2, 0.0, 0.2] };
        ok.validate_against(&p).unwrap();
        let too_wide = DeltaDomain::Discrete { values: vec![-0.3, 0.0, 0.2] };
        assert!(too_wide.validate_against(&p).is_err());
        let unsorted = DeltaDomain::Discrete { values: vec![0.0, 0.0, 0.1] };
        assert!(unsorted.validate().is_err());
    }

    fn arb_quote() -> impl Strategy<Value = MarketQuote> {
        (
            2usize..8,
            proptest::collection::vec(10.0f64..2000.0, 8),
            10.0f64..2000.0,
        )
            .prop_map(|(k, comps, base)| MarketQuote {
                customer_id: 1,
                base_premium: base,
                competitor_premiums: comps[..k].to_vec(),
                delta_lower: -0.5,
                delta_upper: 0.5,
            })
            .prop_filter("needs two distinct competitors", |q| {
                q.min_competitor() < q.max_competitor()
            })
    }

    proptest! {
        #[test]
        fn rank_is_monotone_in_candidate(q in arb_quote(), a in 1.0f64..3000.0, b in 1.0f64..3000.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(market_rank(&q, lo) <= market_rank(&q, hi));
        }

        #[test]
        fn write_read_round_trips(quotes in proptest::collection::vec(arb_quote(), 1..6)) {
            let quotes: Vec<MarketQuote> = quotes
                .into_iter()
                .enumerate()
                .map(|(i, mut q)| { q.customer_id = i as u64 + 1; q })
                .collect();
            let k = quotes[0].competitor_premiums.len();
            let quotes: Vec<MarketQuote> = quotes
                .into_iter()
                .map(|mut q| { q.competitor_premiums.resize(k, q.max_competitor() + 1.0); q })
                .collect();
            if let Ok(p) = Portfolio::new(quotes) {
                let mut buf = Vec::new();
                write_portfolio(&p, &mut buf).unwrap();
                let again = read_portfolio(buf.as_slice()).unwrap();
                prop_assert_eq!(p, again);
            }
        }
    }
}

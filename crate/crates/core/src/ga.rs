//! Penalty-method genetic algorithm over the penalised objective.
//!
//! Handles the non-smooth step model and discrete delta grids. Chromosomes
//! are bound-respecting by construction: continuous genes are fixed-point
//! codes inside each quote's own `[delta_lower, delta_upper]`, discrete genes
//! index the shared grid, so no repair step is ever needed.
//!
//! One seeded RNG stream drives everything in a fixed order (initial
//! population, then per generation: selection, crossover, mutation), so a
//! `(seed, config, portfolio)` triple reproduces the run bit for bit.

use serde::{Deserialize, Serialize};

use crate::conversion::ConversionModel;
use crate::error::{Error, Result};
use crate::market::{DeltaDomain, Portfolio};
use crate::objective::{penalize, Evaluator, PenaltyConfig, ProblemSpec};
use crate::rng::Prng;
use crate::solver::{
    Diagnostics, GaDiagnostics, GaTraceRow, SolverResult, SolverStatus, FEASIBILITY_TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub max_generations: usize,
    /// Bits per gene in the continuous fixed-point encoding.
    pub bits_per_gene: u32,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 100,
            crossover_prob: 0.8,
            mutation_prob: 0.01,
            max_generations: 500,
            bits_per_gene: 12,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("GA population_size must be at least 2".into()));
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("GA {name} must lie in [0, 1], got {p}")));
            }
        }
        if self.max_generations < 1 {
            return Err(Error::Config("GA max_generations must be at least 1".into()));
        }
        if !(4..=31).contains(&self.bits_per_gene) {
            return Err(Error::Config(format!(
                "GA bits_per_gene must lie in 4..=31, got {}",
                self.bits_per_gene
            )));
        }
        Ok(())
    }
}

/// How genes map to premium changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// Fixed-point codes of `bits` bits inside each quote's delta interval.
    Continuous { bits: u32 },
    /// Indices into the shared discrete grid.
    Discrete { cardinality: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chromosome {
    pub genes: Vec<u32>,
    pub encoding: Encoding,
}

/// Map a chromosome to a delta vector. Total: every well-formed chromosome
/// decodes to a point inside the box.
pub fn decode(chromosome: &Chromosome, portfolio: &Portfolio, domain: &DeltaDomain) -> Vec<f64> {
    match chromosome.encoding {
        Encoding::Continuous { bits } => {
            let span = ((1u64 << bits) - 1) as f64;
            portfolio
                .quotes()
                .iter()
                .zip(&chromosome.genes)
                .map(|(q, &v)| {
                    q.delta_lower + (q.delta_upper - q.delta_lower) * v as f64 / span
                })
                .collect()
        }
        Encoding::Discrete { .. } => {
            let values = domain.values().expect("discrete encoding needs a discrete domain");
            chromosome.genes.iter().map(|&i| values[i as usize]).collect()
        }
    }
}

/// Biased roulette wheel: `count` independent draws with probability
/// proportional to the (non-negative) weights.
pub fn select_parents(
    population: &[Chromosome],
    weights: &[f64],
    count: usize,
    rng: &mut Prng,
) -> Vec<Chromosome> {
    debug_assert_eq!(population.len(), weights.len());
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut total = 0.0;
    for &w in weights {
        debug_assert!(w >= 0.0 && w.is_finite());
        total += w;
        cumulative.push(total);
    }
    (0..count)
        .map(|_| {
            let target = rng.unit() * total;
            let idx = cumulative.partition_point(|&c| c <= target).min(population.len() - 1);
            population[idx].clone()
        })
        .collect()
}

/// Single-point crossover with probability `p_c`: the cut point is uniform
/// over the string interior, the tails swap. Continuous chromosomes cut the
/// concatenated bit string (MSB-first per gene), discrete ones cut between
/// genes. Strings too short for an interior cut pass through unchanged.
pub fn crossover(
    parent_a: &Chromosome,
    parent_b: &Chromosome,
    p_c: f64,
    rng: &mut Prng,
) -> (Chromosome, Chromosome) {
    debug_assert_eq!(parent_a.encoding, parent_b.encoding);
    let mut a = parent_a.clone();
    let mut b = parent_b.clone();
    if !rng.chance(p_c) {
        return (a, b);
    }
    match parent_a.encoding {
        Encoding::Discrete { .. } => {
            let n = a.genes.len();
            if n < 2 {
                return (a, b);
            }
            let cut = 1 + rng.below(n as u64 - 1) as usize;
            for i in cut..n {
                std::mem::swap(&mut a.genes[i], &mut b.genes[i]);
            }
        }
        Encoding::Continuous { bits } => {
            let total_bits = a.genes.len() as u64 * bits as u64;
            if total_bits < 2 {
                return (a, b);
            }
            let cut = 1 + rng.below(total_bits - 1);
            let gene = (cut / bits as u64) as usize;
            let offset = (cut % bits as u64) as u32;
            if offset > 0 {
                // Swap the low (bits - offset) bits of the cut gene.
                let mask = (1u32 << (bits - offset)) - 1;
                let av = a.genes[gene];
                let bv = b.genes[gene];
                a.genes[gene] = (av & !mask) | (bv & mask);
                b.genes[gene] = (bv & !mask) | (av & mask);
                for i in gene + 1..a.genes.len() {
                    std::mem::swap(&mut a.genes[i], &mut b.genes[i]);
                }
            } else {
                for i in gene..a.genes.len() {
                    std::mem::swap(&mut a.genes[i], &mut b.genes[i]);
                }
            }
        }
    }
    (a, b)
}

/// Mutation: continuous chromosomes flip each bit independently with
/// probability `p_m`; discrete ones redraw each gene uniformly with
/// probability `p_m`. Positions are visited via geometric skips, so the cost
/// scales with the number of mutations, not the string length.
pub fn mutate(chromosome: &Chromosome, p_m: f64, rng: &mut Prng) -> Chromosome {
    let mut out = chromosome.clone();
    match chromosome.encoding {
        Encoding::Continuous { bits } => {
            let total = out.genes.len() * bits as usize;
            for_each_hit(total, p_m, rng, |pos, _| {
                let gene = pos / bits as usize;
                let bit = bits - 1 - (pos % bits as usize) as u32;
                out.genes[gene] ^= 1 << bit;
            });
        }
        Encoding::Discrete { cardinality } => {
            for_each_hit(out.genes.len(), p_m, rng, |pos, rng| {
                out.genes[pos] = rng.below(cardinality as u64) as u32;
            });
        }
    }
    out
}

/// Visit each of `total` positions independently with probability `p`,
/// skipping over misses with geometric jumps.
fn for_each_hit(total: usize, p: f64, rng: &mut Prng, mut f: impl FnMut(usize, &mut Prng)) {
    if p <= 0.0 || total == 0 {
        return;
    }
    if p >= 1.0 {
        for pos in 0..total {
            f(pos, rng);
        }
        return;
    }
    let ln_miss = (1.0 - p).ln();
    let mut pos = 0usize;
    loop {
        let u = rng.unit();
        let skip = ((1.0 - u).ln() / ln_miss).floor();
        if !skip.is_finite() || skip >= (total - pos) as f64 {
            return;
        }
        pos += skip as usize;
        f(pos, rng);
        pos += 1;
        if pos >= total {
            return;
        }
    }
}

pub(crate) fn initial_population(
    n: usize,
    encoding: Encoding,
    population_size: usize,
    rng: &mut Prng,
) -> Vec<Chromosome> {
    (0..population_size)
        .map(|_| {
            let genes = (0..n)
                .map(|_| match encoding {
                    Encoding::Continuous { bits } => rng.below(1u64 << bits) as u32,
                    Encoding::Discrete { cardinality } => rng.below(cardinality as u64) as u32,
                })
                .collect();
            Chromosome { genes, encoding }
        })
        .collect()
}

#[derive(Clone)]
struct Scored {
    objective: f64,
    h1: f64,
    h2: f64,
}

impl Scored {
    fn feasible(&self) -> bool {
        self.h1 <= FEASIBILITY_TOL && self.h2 <= FEASIBILITY_TOL
    }
}

/// Run the GA and return the best solution ever seen, by penalised objective.
pub fn run_ga(
    spec: &ProblemSpec,
    portfolio: &Portfolio,
    model: &ConversionModel,
    config: &GaConfig,
    penalty: &PenaltyConfig,
) -> Result<SolverResult> {
    config.validate()?;
    spec.validate()?;
    penalty.validate()?;
    spec.delta_domain.validate_against(portfolio)?;
    let ev = Evaluator::new(portfolio, model)?;

    let encoding = match &spec.delta_domain {
        DeltaDomain::Continuous => Encoding::Continuous { bits: config.bits_per_gene },
        DeltaDomain::Discrete { values } => Encoding::Discrete {
            cardinality: values.len() as u32,
        },
    };

    let mut rng = Prng::seed_from(config.seed);
    let mut population = initial_population(portfolio.len(), encoding, config.population_size, &mut rng);

    let mut r = penalty.r;
    let score = |ev: &Evaluator, ch: &Chromosome| -> Scored {
        let delta = decode(ch, portfolio, &spec.delta_domain);
        let (objective, h1, h2) = ev.objective_and_residuals(spec, &delta);
        Scored { objective, h1, h2 }
    };

    let mut incumbent: Option<(Chromosome, Scored)> = None;
    let mut best_trace: Vec<f64> = Vec::with_capacity(config.max_generations);
    let mut trace: Vec<GaTraceRow> = Vec::with_capacity(config.max_generations);

    for generation in 0..config.max_generations {
        let scored: Vec<Scored> = population.iter().map(|ch| score(&ev, ch)).collect();
        let penalized: Vec<f64> = scored.iter().map(|s| penalize(s.objective, s.h1, s.h2, r)).collect();

        let gen_best = penalized
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let incumbent_value = match &incumbent {
            Some((_, s)) => penalize(s.objective, s.h1, s.h2, r),
            None => f64::INFINITY,
        };
        if penalized[gen_best] < incumbent_value {
            incumbent = Some((population[gen_best].clone(), scored[gen_best].clone()));
        }
        let (_, inc_scored) = incumbent.as_ref().unwrap();
        let inc_value = penalize(inc_scored.objective, inc_scored.h1, inc_scored.h2, r);

        // Best-ever trajectory: a running minimum, monotone by construction
        // even when the penalty weight grows between generations.
        let best_ever = best_trace.last().map_or(inc_value, |&b: &f64| b.min(inc_value));
        best_trace.push(best_ever);
        trace.push(GaTraceRow {
            generation,
            best: inc_value,
            mean: penalized.iter().sum::<f64>() / penalized.len() as f64,
            feasible_count: scored.iter().filter(|s| s.feasible()).count(),
        });

        if generation + 1 == config.max_generations {
            break;
        }

        // Grow the penalty while the incumbent is still infeasible.
        if !inc_scored.feasible() {
            r = (r * penalty.growth).min(PenaltyConfig::R_CAP);
        }

        // Roulette weights: distance to the generation's worst, plus a sliver
        // so an all-equal generation draws uniformly.
        let worst = penalized.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = penalized.iter().map(|&p| (worst - p) + 1e-12).collect();

        let selected = select_parents(&population, &weights, config.population_size, &mut rng);
        let mut next = Vec::with_capacity(config.population_size);
        let mut iter = selected.chunks_exact(2);
        for pair in &mut iter {
            let (a, b) = crossover(&pair[0], &pair[1], config.crossover_prob, &mut rng);
            next.push(a);
            next.push(b);
        }
        if let [odd] = iter.remainder() {
            next.push(odd.clone());
        }
        for ch in &mut next {
            *ch = mutate(ch, config.mutation_prob, &mut rng);
        }
        // Elitism: the incumbent always survives into the next generation.
        next[0] = incumbent.as_ref().unwrap().0.clone();
        population = next;
    }

    let (chromosome, scored) = incumbent.expect("at least one generation ran");
    let delta = decode(&chromosome, portfolio, &spec.delta_domain);
    Ok(SolverResult {
        feasible: scored.feasible(),
        delta,
        objective: scored.objective,
        h1: scored.h1,
        h2: scored.h2,
        status: SolverStatus::MaxGenerations,
        diagnostics: Diagnostics::Ga(GaDiagnostics {
            generations: config.max_generations,
            best_trace,
            trace,
            final_penalty_r: r,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversion::{BaseRate, LogisticParams, Param, StepMode, StepParams};
    use crate::market::MarketQuote;
    use crate::objective::{CountBounds, Objective};
    use crate::oracle::{exhaustive_search, OracleConfig, OracleGrid};
    use approx::assert_relative_eq;

    fn quote(id: u64, premium: f64) -> MarketQuote {
        MarketQuote {
            customer_id: id,
            base_premium: premium,
            competitor_premiums: vec![0.8 * premium, 1.1 * premium, 1.25 * premium],
            delta_lower: -0.2,
            delta_upper: 0.2,
        }
    }

    fn logistic(base: f64, t: f64) -> ConversionModel {
        ConversionModel::Logistic(LogisticParams {
            base: BaseRate::Fixed { rate: Param::Shared(base) },
            elasticity: Param::Shared(t),
        })
    }

    fn volume_spec(domain: DeltaDomain, l2: f64, l1: f64) -> ProblemSpec {
        ProblemSpec {
            objective: Objective::Volume,
            count_bounds: Some(CountBounds { lower: l2, upper: l1 }),
            volume_bounds: None,
            delta_domain: domain,
        }
    }

    fn chrom(genes: Vec<u32>, encoding: Encoding) -> Chromosome {
        Chromosome { genes, encoding }
    }

    #[test]
    fn decode_continuous_endpoints_and_midpoint() {
        let p = Portfolio::new(vec![quote(1, 100.0)]).unwrap();
        let enc = Encoding::Continuous { bits: 8 };
        let d = decode(&chrom(vec![0], enc), &p, &DeltaDomain::Continuous);
        assert_eq!(d, vec![-0.2]);
        let d = decode(&chrom(vec![255], enc), &p, &DeltaDomain::Continuous);
        assert_eq!(d, vec![0.2]);
        let d = decode(&chrom(vec![128], enc), &p, &DeltaDomain::Continuous);
        assert_relative_eq!(d[0], -0.2 + 0.4 * 128.0 / 255.0, epsilon = 1e-15);
        assert_relative_eq!(d[0], 0.000784, epsilon = 1e-6);
    }

    #[test]
    fn decode_discrete_indexes_grid() {
        let p = Portfolio::new(vec![quote(1, 100.0), quote(2, 150.0)]).unwrap();
        let domain = DeltaDomain::Discrete { values: vec![-0.1, 0.0, 0.1] };
        let enc = Encoding::Discrete { cardinality: 3 };
        let d = decode(&chrom(vec![0, 2], enc), &p, &domain);
        assert_eq!(d, vec![-0.1, 0.1]);
    }

    #[test]
    fn roulette_probabilities_follow_weights() {
        let enc = Encoding::Discrete { cardinality: 2 };
        let pop = vec![chrom(vec![0], enc), chrom(vec![1], enc)];
        let mut rng = Prng::seed_from(5);
        let picks = select_parents(&pop, &[1.0, 3.0], 40_000, &mut rng);
        let ones = picks.iter().filter(|c| c.genes[0] == 1).count() as f64 / 40_000.0;
        assert!((ones - 0.75).abs() < 0.01, "selected the 3-weight member {ones} of the time");
    }

    #[test]
    fn roulette_uniform_when_weights_equal() {
        let enc = Encoding::Discrete { cardinality: 2 };
        let pop = vec![chrom(vec![0], enc), chrom(vec![1], enc)];
        let mut rng = Prng::seed_from(6);
        let picks = select_parents(&pop, &[1e-12, 1e-12], 40_000, &mut rng);
        let ones = picks.iter().filter(|c| c.genes[0] == 1).count() as f64 / 40_000.0;
        assert!((ones - 0.5).abs() < 0.01, "uniform draw expected, got {ones}");
    }

    #[test]
    fn roulette_is_deterministic() {
        let enc = Encoding::Discrete { cardinality: 4 };
        let pop: Vec<Chromosome> = (0..4).map(|i| chrom(vec![i], enc)).collect();
        let a = select_parents(&pop, &[1.0, 2.0, 3.0, 4.0], 100, &mut Prng::seed_from(7));
        let b = select_parents(&pop, &[1.0, 2.0, 3.0, 4.0], 100, &mut Prng::seed_from(7));
        assert_eq!(a, b);
    }

    #[test]
    fn crossover_at_gene_boundary() {
        // 000|000 and 111|111 cut at bit 3 -> 000111 and 111000.
        let enc = Encoding::Continuous { bits: 3 };
        let a = chrom(vec![0b000, 0b000], enc);
        let b = chrom(vec![0b111, 0b111], enc);
        // Find a seed whose first draws pick "cross" and cut 3.
        for seed in 0..200 {
            let mut probe = Prng::seed_from(seed);
            let crossed = probe.chance(1.0);
            let cut = 1 + probe.below(5);
            assert!(crossed);
            if cut == 3 {
                let mut rng = Prng::seed_from(seed);
                let (ca, cb) = crossover(&a, &b, 1.0, &mut rng);
                assert_eq!(ca.genes, vec![0b000, 0b111]);
                assert_eq!(cb.genes, vec![0b111, 0b000]);
                return;
            }
        }
        panic!("no seed with cut 3 in the probe range");
    }

    #[test]
    fn crossover_disabled_copies_parents() {
        let enc = Encoding::Continuous { bits: 4 };
        let a = chrom(vec![0b1010, 0b0101], enc);
        let b = chrom(vec![0b1111, 0b0000], enc);
        let mut rng = Prng::seed_from(8);
        let (ca, cb) = crossover(&a, &b, 0.0, &mut rng);
        assert_eq!(ca, a);
        assert_eq!(cb, b);
    }

    #[test]
    fn crossover_interior_cut_mixes_distinct_parents() {
        let enc = Encoding::Continuous { bits: 4 };
        let a = chrom(vec![0b0000, 0b0000], enc);
        let b = chrom(vec![0b1111, 0b1111], enc);
        let mut rng = Prng::seed_from(9);
        for _ in 0..50 {
            let (ca, cb) = crossover(&a, &b, 1.0, &mut rng);
            assert_ne!(ca, a, "interior cut must exchange at least one bit");
            assert_ne!(ca, b);
            assert_ne!(cb, a);
            assert_ne!(cb, b);
        }
    }

    #[test]
    fn mutation_extremes() {
        let enc = Encoding::Continuous { bits: 4 };
        let c = chrom(vec![0b1010, 0b0110], enc);
        let mut rng = Prng::seed_from(10);
        assert_eq!(mutate(&c, 0.0, &mut rng), c);
        let flipped = mutate(&c, 1.0, &mut rng);
        assert_eq!(flipped.genes, vec![0b0101, 0b1001]);
    }

    #[test]
    fn mutation_rate_matches_binomial_mean() {
        let enc = Encoding::Continuous { bits: 8 };
        let c = chrom(vec![0u32; 25], enc);
        let total_bits = 200.0;
        let p = 0.03;
        let trials = 10_000;
        let mut rng = Prng::seed_from(11);
        let mut flips = 0u64;
        for _ in 0..trials {
            let m = mutate(&c, p, &mut rng);
            flips += m
                .genes
                .iter()
                .zip(&c.genes)
                .map(|(a, b)| (a ^ b).count_ones() as u64)
                .sum::<u64>();
        }
        let mean = trials as f64 * total_bits * p;
        let sd = (trials as f64 * total_bits * p * (1.0 - p)).sqrt();
        assert!(
            (flips as f64 - mean).abs() < 3.0 * sd,
            "{flips} flips vs expected {mean} +- {}",
            3.0 * sd
        );
    }

    #[test]
    fn ga_matches_oracle_on_two_customers() {
        let portfolio = Portfolio::new(vec![quote(1, 100.0), quote(2, 100.0)]).unwrap();
        let model = logistic(0.5, -5.0);
        let domain = DeltaDomain::Discrete { values: vec![-0.1, 0.0, 0.1] };
        let spec = volume_spec(domain, 0.4, 0.6);
        let oracle = exhaustive_search(&spec, &portfolio, &model, &OracleConfig::default()).unwrap();
        assert_relative_eq!(oracle.objective, 106.02134, epsilon = 1e-4);

        let config = GaConfig { seed: 42, ..GaConfig::default() };
        let penalty = PenaltyConfig::auto(100.0);
        let got = run_ga(&spec, &portfolio, &model, &config, &penalty).unwrap();
        assert!(got.feasible);
        let rel = (got.objective - oracle.objective).abs() / oracle.objective.abs();
        assert!(rel < 0.005, "GA {} vs oracle {}", got.objective, oracle.objective);
    }

    #[test]
    fn ga_finds_single_customer_step_optimum_on_grid() {
        let portfolio = Portfolio::new(vec![quote(1, 500.0)]).unwrap();
        let model = ConversionModel::Step(StepParams {
            c1: 0.75,
            c2: 0.3,
            mode: StepMode::PiecewiseConstant,
        });
        // No binding constraints; a 41-point reference grid is the oracle.
        let spec = volume_spec(DeltaDomain::Continuous, 0.01, 0.99);
        let oracle_cfg = OracleConfig { grid: OracleGrid::Resolution { points: 41 }, max_combinations: 100 };
        let oracle = exhaustive_search(&spec, &portfolio, &model, &oracle_cfg).unwrap();
        let config = GaConfig { seed: 3, ..GaConfig::default() };
        let got = run_ga(&spec, &portfolio, &model, &config, &PenaltyConfig::auto(300.0)).unwrap();
        // The continuous GA can only beat a coarse grid optimum.
        assert!(
            got.objective >= oracle.objective * (1.0 - 5e-3),
            "GA {} vs grid oracle {}",
            got.objective,
            oracle.objective
        );
    }

    #[test]
    fn degenerate_run_returns_best_of_initial_population() {
        let portfolio = Portfolio::new(vec![quote(1, 100.0), quote(2, 130.0)]).unwrap();
        let model = logistic(0.5, -5.0);
        let domain = DeltaDomain::Discrete { values: vec![-0.1, 0.0, 0.1] };
        let spec = volume_spec(domain.clone(), 0.05, 0.95);
        let config = GaConfig {
            population_size: 10,
            crossover_prob: 0.0,
            mutation_prob: 0.0,
            max_generations: 1,
            seed: 99,
            ..GaConfig::default()
        };
        let penalty = PenaltyConfig::auto(200.0);
        let got = run_ga(&spec, &portfolio, &model, &config, &penalty).unwrap();

        // Rebuild the same initial population and score it by hand.
        let mut rng = Prng::seed_from(99);
        let pop = initial_population(2, Encoding::Discrete { cardinality: 3 }, 10, &mut rng);
        let ev = Evaluator::new(&portfolio, &model).unwrap();
        let best = pop
            .iter()
            .map(|ch| {
                let d = decode(ch, &portfolio, &domain);
                let (o, h1, h2) = ev.objective_and_residuals(&spec, &d);
                penalize(o, h1, h2, penalty.r)
            })
            .fold(f64::INFINITY, f64::min);
        let got_pen = penalize(got.objective, got.h1, got.h2, penalty.r);
        assert_relative_eq!(got_pen, best, epsilon = 1e-12);
    }

    #[test]
    fn incumbent_trace_is_monotone_and_runs_deterministic() {
        let portfolio = Portfolio::new(vec![quote(1, 100.0), quote(2, 250.0), quote(3, 700.0)]).unwrap();
        let model = logistic(0.55, -3.0);
        let spec = volume_spec(DeltaDomain::Continuous, 0.35, 0.65);
        let config = GaConfig { max_generations: 60, seed: 7, ..GaConfig::default() };
        let penalty = PenaltyConfig::auto(1000.0);
        let a = run_ga(&spec, &portfolio, &model, &config, &penalty).unwrap();
        let b = run_ga(&spec, &portfolio, &model, &config, &penalty).unwrap();
        assert_eq!(a.delta, b.delta);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        let Diagnostics::Ga(diag) = &a.diagnostics else { panic!() };
        assert_eq!(diag.best_trace.len(), 60);
        assert!(diag.best_trace.windows(2).all(|w| w[1] <= w[0]), "best-ever trace must not rise");
        // Decoded deltas always respect the box.
        for (&d, q) in a.delta.iter().zip(portfolio.quotes()) {
            assert!(d >= q.delta_lower && d <= q.delta_upper);
        }
    }

    /// Tiny-instance reliability: with default-ish settings the GA attains the
    /// oracle optimum on at least 95 of 100 seeded random instances.
    #[test]
    fn ga_attains_oracle_on_tiny_instances() {
        let mut hits = 0;
        for trial in 0..100u64 {
            let mut rng = Prng::seed_from(1000 + trial);
            let n = 1 + rng.below(3) as usize;
            let quotes: Vec<MarketQuote> = (0..n)
                .map(|i| {
                    let p = rng.range(80.0, 1500.0);
                    MarketQuote {
                        customer_id: i as u64 + 1,
                        base_premium: p,
                        competitor_premiums: vec![
                            p * rng.range(0.7, 0.95),
                            p * rng.range(0.96, 1.1),
                            p * rng.range(1.11, 1.4),
                        ],
                        delta_lower: -0.2,
                        delta_upper: 0.2,
                    }
                })
                .collect();
            let portfolio = Portfolio::new(quotes).unwrap();
            let grid_len = 3 + rng.below(7) as usize; // 3..=9 values
            let lo = -0.2 + 0.01 * rng.below(5) as f64;
            let hi = 0.2 - 0.01 * rng.below(5) as f64;
            let values: Vec<f64> = (0..grid_len)
                .map(|i| {
                    if i + 1 == grid_len {
                        hi
                    } else {
                        lo + (hi - lo) * i as f64 / (grid_len as f64 - 1.0)
                    }
                })
                .collect();
            let model = if rng.chance(0.5) {
                ConversionModel::Step(StepParams {
                    c1: rng.range(0.6, 0.9),
                    c2: rng.range(0.1, 0.4),
                    mode: if rng.chance(0.5) { StepMode::PiecewiseConstant } else { StepMode::ClampedLinear },
                })
            } else {
                logistic(rng.range(0.3, 0.7), rng.range(-6.0, -1.0))
            };
            // Anchor the feasible band on an achievable point so a feasible
            // solution always exists.
            let probe: Vec<f64> = (0..n).map(|_| values[rng.below(grid_len as u64) as usize]).collect();
            let ev = Evaluator::new(&portfolio, &model).unwrap();
            let epn = ev.count(&probe) / n as f64;
            let spec = volume_spec(
                DeltaDomain::Discrete { values },
                (epn - 0.05).max(0.01),
                (epn + 0.05).min(0.99),
            );
            let oracle = exhaustive_search(&spec, &portfolio, &model, &OracleConfig::default()).unwrap();
            let config = GaConfig { max_generations: 200, seed: trial, ..GaConfig::default() };
            let got = run_ga(&spec, &portfolio, &model, &config, &PenaltyConfig::auto(1000.0)).unwrap();
            if oracle.feasible == got.feasible
                && (got.objective - oracle.objective).abs() <= 0.005 * oracle.objective.abs()
            {
                hits += 1;
            }
        }
        assert!(hits >= 95, "GA matched the oracle on only {hits} of 100 tiny instances");
    }
}

//! Generational genetic algorithm with tournament selection, single-point
//! crossover, per-gene uniform-reset mutation and a best-individual buffer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::fitness::{Evaluator, Objective};
use super::genome::{random_genome, Genome, ParamRanges, GENE_COUNT};
use super::report::{BestBuffer, IterationStats, TuneReport, DEFAULT_BUFFER_CAPACITY};

pub const TOURNAMENT_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub generations: usize,
    pub population: usize,
    pub cxpb: f64,
    pub mutpb: f64,
    pub indpb: f64,
    pub tournament_size: usize,
    pub seed: u64,
    pub buffer_capacity: usize,
}

impl Default for GaConfig {
    /// Gen=50, Pop=50, CxPb=0.3, MutPb=0.2, IndPb=0.1.
    fn default() -> Self {
        Self {
            generations: 50,
            population: 50,
            cxpb: 0.3,
            mutpb: 0.2,
            indpb: 0.1,
            tournament_size: TOURNAMENT_SIZE,
            seed: 0,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

impl GaConfig {
    /// Validates and returns the effective configuration; an odd population
    /// is rounded up to the next even size.
    pub fn effective(&self) -> Result<Self> {
        for (name, p) in [("cxpb", self.cxpb), ("mutpb", self.mutpb), ("indpb", self.indpb)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.population < TOURNAMENT_SIZE.max(self.tournament_size) {
            return Err(Error::InvalidParameter(format!(
                "population must be >= {}, got {}",
                TOURNAMENT_SIZE.max(self.tournament_size),
                self.population
            )));
        }
        if self.tournament_size == 0 {
            return Err(Error::InvalidParameter("tournament_size must be >= 1".into()));
        }
        let mut cfg = self.clone();
        if cfg.population % 2 == 1 {
            log::warn!("population {} is odd; rounding up to {}", cfg.population, cfg.population + 1);
            cfg.population += 1;
        }
        Ok(cfg)
    }

    /// Upper bound on fitness requests: `Pop * (Gen + 1)`.
    pub fn budget(&self) -> usize {
        self.population * (self.generations + 1)
    }
}

/// Index of the fittest drawn individual; ties go to the earliest draw.
pub fn tournament_winner(draws: &[usize], fitness: &[f64]) -> usize {
    let mut best = draws[0];
    for &d in &draws[1..] {
        if fitness[d] > fitness[best] {
            best = d;
        }
    }
    best
}

/// Tournament of `size` uniform draws with replacement.
pub fn tournament_select_sized<R: Rng + ?Sized>(
    population: &[Genome],
    fitness: &[f64],
    size: usize,
    rng: &mut R,
) -> Result<usize> {
    if population.len() < TOURNAMENT_SIZE {
        return Err(Error::InvalidParameter(format!(
            "tournament needs at least {TOURNAMENT_SIZE} individuals, got {}",
            population.len()
        )));
    }
    if fitness.len() != population.len() {
        return Err(Error::DimensionMismatch {
            expected: population.len(),
            got: fitness.len(),
        });
    }
    let draws: Vec<usize> = (0..size.max(1))
        .map(|_| rng.random_range(0..population.len()))
        .collect();
    Ok(tournament_winner(&draws, fitness))
}

/// Best of three random individuals.
pub fn tournament_select<R: Rng + ?Sized>(population: &[Genome], fitness: &[f64], rng: &mut R) -> Result<Genome> {
    tournament_select_sized(population, fitness, TOURNAMENT_SIZE, rng).map(|i| population[i])
}

/// Children swapping suffixes at gene boundary `cut` (1..=6).
pub fn crossover_at(a: &Genome, b: &Genome, cut: usize) -> (Genome, Genome) {
    let mut c1 = *a;
    let mut c2 = *b;
    c1.0[cut..].copy_from_slice(&b.0[cut..]);
    c2.0[cut..].copy_from_slice(&a.0[cut..]);
    (c1, c2)
}

pub fn single_point_crossover<R: Rng + ?Sized>(a: &Genome, b: &Genome, rng: &mut R) -> (Genome, Genome) {
    let cut = rng.random_range(1..GENE_COUNT);
    crossover_at(a, b, cut)
}

/// Resamples each gene uniformly within its range with probability `indpb`.
/// One random draw is consumed per gene regardless of outcome.
pub fn mutate<R: Rng + ?Sized>(g: &Genome, indpb: f64, ranges: &ParamRanges, rng: &mut R) -> Genome {
    let mut out = *g;
    for (v, r) in out.0.iter_mut().zip(&ranges.genes) {
        if rng.random::<f64>() < indpb {
            *v = r.sample(rng);
        }
    }
    out
}

/// What the GA did in one generation.
pub struct GenerationView<'a> {
    pub generation: usize,
    pub parents: &'a [Genome],
    pub offspring: &'a [Genome],
    pub changed: &'a [bool],
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn run_ga<O: Objective>(cfg: &GaConfig, ranges: &ParamRanges, objective: &O) -> Result<TuneReport> {
    run_ga_observed(cfg, ranges, objective, |_| {})
}

/// Runs the GA, calling `observe` after each generation's variation step.
pub fn run_ga_observed<O, F>(cfg: &GaConfig, ranges: &ParamRanges, objective: &O, mut observe: F) -> Result<TuneReport>
where
    O: Objective,
    F: FnMut(&GenerationView<'_>),
{
    let cfg = cfg.effective()?;
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut evaluator = Evaluator::new(objective);
    let mut buffer = BestBuffer::new(cfg.buffer_capacity);

    let mut population: Vec<Genome> = (0..cfg.population).map(|_| random_genome(ranges, &mut rng)).collect();
    let mut fitness = evaluator.evaluate_batch(&population);
    buffer.offer_all(&population, &fitness);
    let mut trace = vec![IterationStats {
        iteration: 0,
        best_fitness: buffer.best_fitness(),
        mean_fitness: mean(&fitness),
        evals_so_far: evaluator.requests(),
    }];

    for generation in 1..=cfg.generations {
        let mut offspring = Vec::with_capacity(cfg.population);
        let mut off_fit = Vec::with_capacity(cfg.population);
        for _ in 0..cfg.population {
            let i = tournament_select_sized(&population, &fitness, cfg.tournament_size, &mut rng)?;
            offspring.push(population[i]);
            off_fit.push(fitness[i]);
        }
        let mut changed = vec![false; cfg.population];
        for pair in 0..cfg.population / 2 {
            let (i, j) = (2 * pair, 2 * pair + 1);
            if rng.random::<f64>() < cfg.cxpb {
                let (a, b) = single_point_crossover(&offspring[i], &offspring[j], &mut rng);
                offspring[i] = a;
                offspring[j] = b;
                changed[i] = true;
                changed[j] = true;
            }
        }
        for (child, flag) in offspring.iter_mut().zip(changed.iter_mut()) {
            if rng.random::<f64>() < cfg.mutpb {
                *child = mutate(child, cfg.indpb, ranges, &mut rng);
                *flag = true;
            }
        }
        observe(&GenerationView {
            generation,
            parents: &population,
            offspring: &offspring,
            changed: &changed,
        });

        let idx: Vec<usize> = (0..cfg.population).filter(|&i| changed[i]).collect();
        let batch: Vec<Genome> = idx.iter().map(|&i| offspring[i]).collect();
        let values = evaluator.evaluate_batch(&batch);
        for (&i, f) in idx.iter().zip(values) {
            off_fit[i] = f;
        }

        population = offspring;
        fitness = off_fit;
        buffer.offer_all(&population, &fitness);
        trace.push(IterationStats {
            iteration: generation,
            best_fitness: buffer.best_fitness(),
            mean_fitness: mean(&fitness),
            evals_so_far: evaluator.requests(),
        });
    }

    let config = serde_json::to_value(&cfg)?;
    Ok(TuneReport::assemble("ga", config, ranges, trace, &evaluator, &buffer))
}

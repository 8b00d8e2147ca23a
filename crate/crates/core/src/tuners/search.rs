//! Uniform random search and exhaustive grid search.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::fitness::{Evaluator, Objective};
use super::genome::{random_genome, GeneKind, GeneRange, Genome, ParamRanges, GENE_COUNT};
use super::report::{BestBuffer, IterationStats, TuneReport, DEFAULT_BUFFER_CAPACITY};

/// Genomes evaluated per parallel batch.
const BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchConfig {
    pub budget: usize,
    pub seed: u64,
    pub buffer_capacity: usize,
}

impl RandomSearchConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            seed,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Evenly spaced levels per gene; a count of 1 pins the midpoint.
    pub levels: [usize; GENE_COUNT],
    /// Largest grid the search agrees to enumerate.
    pub cap: u64,
    pub buffer_capacity: usize,
}

impl GridConfig {
    pub const DEFAULT_CAP: u64 = 1_000_000;

    pub fn new(levels: [usize; GENE_COUNT]) -> Self {
        Self {
            levels,
            cap: Self::DEFAULT_CAP,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

/// Evaluates genomes one by one (in parallel batches) and records a trace
/// row per evaluation with the running best and running mean.
fn sweep<O: Objective>(
    method: &str,
    config: serde_json::Value,
    genomes: &[Genome],
    ranges: &ParamRanges,
    objective: &O,
    buffer_capacity: usize,
) -> TuneReport {
    let mut evaluator = Evaluator::new(objective);
    let mut buffer = BestBuffer::new(buffer_capacity);
    let mut trace = Vec::with_capacity(genomes.len());
    let mut sum = 0.0;
    for chunk in genomes.chunks(BATCH) {
        let base = evaluator.requests();
        let fitness = evaluator.evaluate_batch(chunk);
        for (i, (g, &f)) in chunk.iter().zip(&fitness).enumerate() {
            buffer.offer(g, f);
            sum += f;
            let n = base + i + 1;
            trace.push(IterationStats {
                iteration: n,
                best_fitness: buffer.best_fitness(),
                mean_fitness: sum / n as f64,
                evals_so_far: n,
            });
        }
    }
    TuneReport::assemble(method, config, ranges, trace, &evaluator, &buffer)
}

/// Evaluates `budget` independent uniform genomes.
pub fn run_random_search<O: Objective>(cfg: &RandomSearchConfig, ranges: &ParamRanges, objective: &O) -> Result<TuneReport> {
    if cfg.budget == 0 {
        return Err(Error::InvalidParameter("budget must be >= 1".into()));
    }
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let genomes: Vec<Genome> = (0..cfg.budget).map(|_| random_genome(ranges, &mut rng)).collect();
    let config = serde_json::to_value(cfg)?;
    Ok(sweep("random", config, &genomes, ranges, objective, cfg.buffer_capacity))
}

/// `count` evenly spaced values over the range; integers rounded and deduplicated.
pub fn gene_levels(range: &GeneRange, count: usize) -> Vec<f64> {
    let mut out: Vec<f64> = if count <= 1 {
        vec![range.midpoint()]
    } else {
        (0..count)
            .map(|i| range.from_unit(i as f64 / (count - 1) as f64))
            .collect()
    };
    if range.kind == GeneKind::Integer {
        out.dedup();
    }
    out
}

/// The full Cartesian grid, first gene varying slowest.
pub fn grid_genomes(levels: &[usize; GENE_COUNT], ranges: &ParamRanges, cap: u64) -> Result<Vec<Genome>> {
    if levels.contains(&0) {
        return Err(Error::InvalidParameter("every level count must be >= 1".into()));
    }
    let axes: Vec<Vec<f64>> = ranges
        .genes
        .iter()
        .zip(levels)
        .map(|(r, &c)| gene_levels(r, c))
        .collect();
    let size = axes.iter().map(|a| a.len() as u128).product::<u128>();
    if size > cap as u128 {
        return Err(Error::GridTooLarge {
            size,
            cap: cap as u128,
        });
    }
    let mut out = vec![Genome([0.0; GENE_COUNT])];
    for (d, axis) in axes.iter().enumerate() {
        out = out
            .into_iter()
            .flat_map(|g| {
                axis.iter().map(move |&v| {
                    let mut h = g;
                    h.0[d] = v;
                    h
                })
            })
            .collect();
    }
    Ok(out)
}

pub fn run_grid_search<O: Objective>(cfg: &GridConfig, ranges: &ParamRanges, objective: &O) -> Result<TuneReport> {
    ranges.validate()?;
    let genomes = grid_genomes(&cfg.levels, ranges, cfg.cap)?;
    let config = serde_json::to_value(cfg)?;
    Ok(sweep("grid", config, &genomes, ranges, objective, cfg.buffer_capacity))
}

//! Particle swarm over the unit hypercube, decoded affinely onto the gene ranges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::fitness::{Evaluator, Objective};
use super::genome::{Genome, ParamRanges, GENE_COUNT};
use super::report::{BestBuffer, IterationStats, TuneReport, DEFAULT_BUFFER_CAPACITY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub particles: usize,
    /// Evaluation rounds, the initial swarm included.
    pub iterations: usize,
    /// Velocity bounds in unit-cube coordinates.
    pub vmin: f64,
    pub vmax: f64,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
    pub buffer_capacity: usize,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            particles: 50,
            iterations: 100,
            vmin: -0.5,
            vmax: 0.5,
            inertia: 0.7298,
            cognitive: 1.49618,
            social: 1.49618,
            seed: 0,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.iterations == 0 {
            return Err(Error::InvalidParameter("particles and iterations must be >= 1".into()));
        }
        if self.vmin.partial_cmp(&self.vmax) != Some(std::cmp::Ordering::Less) {
            return Err(Error::InvalidParameter(format!(
                "vmin ({}) must be < vmax ({})",
                self.vmin, self.vmax
            )));
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        self.particles * self.iterations
    }
}

pub type Point = [f64; GENE_COUNT];

/// Per-dimension velocity and position update with fresh uniforms `r1`, `r2`.
/// Velocity is clamped to `[vmin, vmax]`, position to `[0, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn step_particle<R: Rng + ?Sized>(
    cfg: &PsoConfig,
    position: &mut Point,
    velocity: &mut Point,
    personal_best: &Point,
    global_best: &Point,
    rng: &mut R,
) {
    for d in 0..GENE_COUNT {
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let v = cfg.inertia * velocity[d]
            + cfg.cognitive * r1 * (personal_best[d] - position[d])
            + cfg.social * r2 * (global_best[d] - position[d]);
        velocity[d] = v.clamp(cfg.vmin, cfg.vmax);
        position[d] = (position[d] + velocity[d]).clamp(0.0, 1.0);
    }
}

pub fn decode(ranges: &ParamRanges, p: &Point) -> Genome {
    let mut g = [0.0; GENE_COUNT];
    for (d, v) in g.iter_mut().enumerate() {
        *v = ranges.genes[d].from_unit(p[d]);
    }
    Genome(g)
}

pub fn run_pso<O: Objective>(cfg: &PsoConfig, ranges: &ParamRanges, objective: &O) -> Result<TuneReport> {
    cfg.validate()?;
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut evaluator = Evaluator::new(objective);
    let mut buffer = BestBuffer::new(cfg.buffer_capacity);

    let mut positions: Vec<Point> = (0..cfg.particles)
        .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
        .collect();
    let mut velocities: Vec<Point> = (0..cfg.particles)
        .map(|_| std::array::from_fn(|_| rng.random_range(cfg.vmin..cfg.vmax)))
        .collect();

    let genomes: Vec<Genome> = positions.iter().map(|p| decode(ranges, p)).collect();
    let fitness = evaluator.evaluate_batch(&genomes);
    buffer.offer_all(&genomes, &fitness);
    let mut personal = positions.clone();
    let mut personal_fit = fitness.clone();
    let mut global_idx = argmax(&personal_fit);
    let mut global = personal[global_idx];
    let mut global_fit = personal_fit[global_idx];
    let mut trace = vec![IterationStats {
        iteration: 1,
        best_fitness: buffer.best_fitness(),
        mean_fitness: fitness.iter().sum::<f64>() / fitness.len() as f64,
        evals_so_far: evaluator.requests(),
    }];

    for iteration in 2..=cfg.iterations {
        for (pos, (vel, pb)) in positions.iter_mut().zip(velocities.iter_mut().zip(&personal)) {
            step_particle(cfg, pos, vel, pb, &global, &mut rng);
        }
        let genomes: Vec<Genome> = positions.iter().map(|p| decode(ranges, p)).collect();
        let fitness = evaluator.evaluate_batch(&genomes);
        buffer.offer_all(&genomes, &fitness);
        for i in 0..cfg.particles {
            if fitness[i] > personal_fit[i] {
                personal_fit[i] = fitness[i];
                personal[i] = positions[i];
            }
        }
        global_idx = argmax(&personal_fit);
        if personal_fit[global_idx] > global_fit {
            global_fit = personal_fit[global_idx];
            global = personal[global_idx];
        }
        trace.push(IterationStats {
            iteration,
            best_fitness: buffer.best_fitness(),
            mean_fitness: fitness.iter().sum::<f64>() / fitness.len() as f64,
            evals_so_far: evaluator.requests(),
        });
    }

    let config = serde_json::to_value(cfg)?;
    Ok(TuneReport::assemble("pso", config, ranges, trace, &evaluator, &buffer))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionParams;
use crate::error::{Error, Result};

use super::fitness::{Evaluator, Objective};
use super::genome::{Genome, ParamRanges};

pub const DEFAULT_BUFFER_CAPACITY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub genome: Genome,
    pub fitness: f64,
}

/// Hall of fame: the best distinct genomes seen during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestBuffer {
    capacity: usize,
    entries: Vec<BufferEntry>,
}

impl BestBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn best(&self) -> Option<&BufferEntry> {
        self.entries.first()
    }

    pub fn best_fitness(&self) -> f64 {
        self.best().map_or(f64::NEG_INFINITY, |e| e.fitness)
    }

    /// Offers a candidate; duplicates of a stored genome are ignored and
    /// equal-fitness newcomers rank after earlier entries.
    pub fn offer(&mut self, genome: &Genome, fitness: f64) {
        if self.entries.iter().any(|e| e.genome.bits() == genome.bits()) {
            return;
        }
        if self.entries.len() == self.capacity && fitness <= self.entries[self.capacity - 1].fitness {
            return;
        }
        let pos = self.entries.partition_point(|e| e.fitness >= fitness);
        self.entries.insert(
            pos,
            BufferEntry {
                genome: *genome,
                fitness,
            },
        );
        self.entries.truncate(self.capacity);
    }

    pub fn offer_all(&mut self, genomes: &[Genome], fitness: &[f64]) {
        for (g, &f) in genomes.iter().zip(fitness) {
            self.offer(g, f);
        }
    }
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Best fitness seen so far in the run.
    pub best_fitness: f64,
    /// Mean fitness of the current population (or of all samples so far).
    pub mean_fitness: f64,
    pub evals_so_far: usize,
}

/// Full audit of a tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub method: String,
    pub config: serde_json::Value,
    pub ranges: ParamRanges,
    pub iterations: Vec<IterationStats>,
    /// Fitness requests: pipeline runs plus cache hits.
    pub fitness_evaluations: usize,
    pub pipeline_runs: usize,
    pub cache_hits: usize,
    /// Seconds spent evaluating fitness.
    pub wall_seconds: f64,
    /// Seconds spent building the kNN graph, when the harness built one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_seconds: Option<f64>,
    pub best_genome: Genome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_params: Option<DiffusionParams>,
    pub best_fitness: f64,
    pub best_buffer: Vec<BufferEntry>,
}

impl TuneReport {
    pub(crate) fn assemble<O: Objective>(
        method: &str,
        config: serde_json::Value,
        ranges: &ParamRanges,
        iterations: Vec<IterationStats>,
        evaluator: &Evaluator<'_, O>,
        buffer: &BestBuffer,
    ) -> Self {
        let best = buffer.best().copied().expect("at least one evaluation");
        Self {
            method: method.to_string(),
            config,
            ranges: ranges.clone(),
            iterations,
            fitness_evaluations: evaluator.requests(),
            pipeline_runs: evaluator.cache().misses(),
            cache_hits: evaluator.cache().hits(),
            wall_seconds: evaluator.elapsed().as_secs_f64(),
            graph_seconds: None,
            best_genome: best.genome,
            best_params: None,
            best_fitness: best.fitness,
            best_buffer: buffer.entries().to_vec(),
        }
    }

    /// Total optimization time: fitness evaluation plus graph construction.
    pub fn total_seconds(&self) -> f64 {
        self.wall_seconds + self.graph_seconds.unwrap_or(0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Same document with timing fields removed; byte-stable under a fixed seed.
    pub fn to_json_without_timing(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_seconds");
            obj.remove("graph_seconds");
        }
        Ok(serde_json::to_string_pretty(&v)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `iteration,best_fitness,mean_fitness,evals_so_far` rows.
    pub fn convergence_csv(&self) -> String {
        let mut out = String::from("iteration,best_fitness,mean_fitness,evals_so_far\n");
        for s in &self.iterations {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.iteration, s.best_fitness, s.mean_fitness, s.evals_so_far
            );
        }
        out
    }

    pub fn save_convergence_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.convergence_csv()).map_err(|e| Error::io(path, e))
    }

    /// `method  evals  seconds  best` summary line.
    pub fn summary_row(&self) -> String {
        format!(
            "{:<8} {:>8} {:>10.2} s {:>9.4}",
            self.method,
            self.fitness_evaluations,
            self.total_seconds(),
            self.best_fitness
        )
    }
}

/// Spread of best fitness across repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatStats {
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for a single run).
    pub stdev: f64,
    pub min: f64,
    pub max: f64,
}

impl RepeatStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stdev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            runs: values.len(),
            mean,
            stdev,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: f64) -> Genome {
        Genome([v; 7])
    }

    #[test]
    fn buffer_sorted_dedup_bounded() {
        let mut b = BestBuffer::new(3);
        b.offer(&g(1.0), 0.5);
        b.offer(&g(2.0), 0.9);
        b.offer(&g(2.0), 0.9);
        b.offer(&g(3.0), 0.1);
        b.offer(&g(4.0), 0.7);
        let f: Vec<f64> = b.entries().iter().map(|e| e.fitness).collect();
        assert_eq!(f, vec![0.9, 0.7, 0.5]);
        b.offer(&g(5.0), 0.05);
        assert_eq!(b.entries().len(), 3);
        assert_eq!(b.best().unwrap().genome, g(2.0));
    }

    #[test]
    fn buffer_ties_keep_first_arrival() {
        let mut b = BestBuffer::new(5);
        b.offer(&g(1.0), 0.5);
        b.offer(&g(2.0), 0.5);
        assert_eq!(b.best().unwrap().genome, g(1.0));
    }

    #[test]
    fn repeat_stats_sample_stdev() {
        let s = RepeatStats::from_values(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.stdev - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!((s.min, s.max), (1.0, 4.0));
        assert_eq!(RepeatStats::from_values(&[0.3]).unwrap().stdev, 0.0);
        assert!(RepeatStats::from_values(&[]).is_none());
    }
}

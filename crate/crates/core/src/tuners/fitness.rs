//! Fitness functions and the shared, budget-accounted evaluation cache.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::data::{DescriptorSet, GroundTruth, Ranking};
use crate::diffusion::{baseline_ranking, diffuse, DiffusionParams, Query};
use crate::error::{Error, Result};
use crate::eval::{ap_from_hits, report_from_aps, MetricReport};
use crate::graph::KnnGraph;

use super::genome::{Genome, GENE_COUNT};

/// A black-box fitness to maximize.
pub trait Objective: Sync {
    /// Cache identity. Genomes with equal keys must have equal fitness.
    type Key: Hash + Eq + Clone + Send + Sync;

    fn key(&self, genome: &Genome) -> Self::Key;

    fn evaluate(&self, genome: &Genome) -> f64;
}

/// Wraps a closed-form function of the genome.
pub struct FnObjective<F>(pub F);

impl<F: Fn(&Genome) -> f64 + Sync> Objective for FnObjective<F> {
    type Key = [u64; GENE_COUNT];

    fn key(&self, genome: &Genome) -> Self::Key {
        genome.bits()
    }

    fn evaluate(&self, genome: &Genome) -> f64 {
        (self.0)(genome)
    }
}

/// Everything a diffusion fitness evaluation reads. Immutable and shared.
#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub database: DescriptorSet,
    pub queries: DescriptorSet,
    pub ground_truth: GroundTruth,
    pub graph: KnnGraph,
}

impl RetrievalTask {
    pub fn new(database: DescriptorSet, queries: DescriptorSet, ground_truth: GroundTruth, graph: KnnGraph) -> Result<Self> {
        if !database.is_normalized() || !queries.is_normalized() {
            return Err(Error::InvalidParameter("descriptor sets must be normalized".into()));
        }
        if graph.n() != database.len() {
            return Err(Error::DimensionMismatch {
                expected: database.len(),
                got: graph.n(),
            });
        }
        if queries.dim() != database.dim() {
            return Err(Error::DimensionMismatch {
                expected: database.dim(),
                got: queries.dim(),
            });
        }
        if ground_truth.is_empty() {
            return Err(Error::Empty("ground truth has no queries".into()));
        }
        ground_truth.validate(&database, &queries)?;
        Ok(Self {
            database,
            queries,
            ground_truth,
            graph,
        })
    }

    fn query(&self, id: &str) -> Query<'_> {
        let i = self.queries.index_of(id).expect("validated query id");
        Query {
            id: self.queries.id(i),
            vector: self.queries.row(i),
        }
    }

    fn map_with<F>(&self, rank: F) -> Result<MetricReport>
    where
        F: Fn(Query<'_>) -> Result<Ranking> + Sync,
    {
        let queries: Vec<(&str, _)> = self.ground_truth.iter().collect();
        let aps: Vec<Result<(String, f64)>> = queries
            .par_iter()
            .map(|&(q, positives)| {
                let ranking = rank(self.query(q))?;
                let ap = ap_from_hits(ranking.ids().map(|id| positives.contains(id)), positives.len());
                Ok((q.to_string(), ap))
            })
            .collect();
        let per_query = aps.into_iter().collect::<Result<BTreeMap<_, _>>>()?;
        Ok(report_from_aps(per_query))
    }

    /// mAP of diffusion re-ranking with `params` over every ground-truth query.
    pub fn evaluate_params(&self, params: &DiffusionParams) -> Result<MetricReport> {
        self.map_with(|q| diffuse(&self.database, &self.graph, q, params))
    }

    /// mAP of plain cosine ranking.
    pub fn baseline(&self) -> Result<MetricReport> {
        self.map_with(|q| baseline_ranking(&self.database, q))
    }

    /// Per-query rankings, keyed by query id.
    pub fn rankings(&self, params: Option<&DiffusionParams>) -> Result<BTreeMap<String, Ranking>> {
        self.ground_truth
            .iter()
            .map(|(q, _)| {
                let query = self.query(q);
                let r = match params {
                    Some(p) => diffuse(&self.database, &self.graph, query, p)?,
                    None => baseline_ranking(&self.database, query)?,
                };
                Ok((q.to_string(), r))
            })
            .collect()
    }
}

/// Cache identity of a decoded, clamped parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamKey {
    alpha_bits: u64,
    ints: [usize; 6],
}

impl ParamKey {
    pub fn new(p: &DiffusionParams) -> Self {
        Self {
            alpha_bits: p.alpha.to_bits(),
            ints: [
                p.beta as usize,
                p.gamma as usize,
                p.k_s,
                p.k,
                p.iterations,
                p.trunc,
            ],
        }
    }
}

/// mAP of diffusion with the genome's decoded parameters.
pub struct DiffusionObjective<'a> {
    pub task: &'a RetrievalTask,
}

impl<'a> DiffusionObjective<'a> {
    pub fn new(task: &'a RetrievalTask) -> Self {
        Self { task }
    }

    pub fn params(&self, genome: &Genome) -> DiffusionParams {
        genome.to_params().clamped(self.task.database.len())
    }
}

impl Objective for DiffusionObjective<'_> {
    type Key = ParamKey;

    fn key(&self, genome: &Genome) -> ParamKey {
        ParamKey::new(&self.params(genome))
    }

    /// Failed evaluations score 0.0 so a run never aborts mid-evolution.
    fn evaluate(&self, genome: &Genome) -> f64 {
        match self.task.evaluate_params(&self.params(genome)) {
            Ok(r) => r.map,
            Err(e) => {
                log::warn!("fitness evaluation failed for {genome:?}: {e}");
                0.0
            }
        }
    }
}

/// Memoized fitness values with hit/miss counters.
#[derive(Debug, Clone)]
pub struct FitnessCache<K> {
    map: HashMap<K, f64>,
    hits: usize,
    misses: usize,
}

impl<K: Hash + Eq> Default for FitnessCache<K> {
    fn default() -> Self {
        Self {
            map: HashMap::new(),
            hits: 0,
            misses: 0,
        }
    }
}

impl<K: Hash + Eq + Clone> FitnessCache<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn misses(&self) -> usize {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, key: &K) -> Option<f64> {
        self.map.get(key).copied()
    }

    /// Returns the cached fitness or evaluates and stores it.
    pub fn evaluate<O: Objective<Key = K>>(&mut self, genome: &Genome, objective: &O) -> f64 {
        let key = objective.key(genome);
        if let Some(&f) = self.map.get(&key) {
            self.hits += 1;
            return f;
        }
        self.misses += 1;
        let f = objective.evaluate(genome);
        self.map.insert(key, f);
        f
    }
}

/// Objective plus cache plus request accounting, shared by every tuner.
pub struct Evaluator<'a, O: Objective> {
    objective: &'a O,
    cache: FitnessCache<O::Key>,
    requests: usize,
    elapsed: Duration,
}

impl<'a, O: Objective> Evaluator<'a, O> {
    pub fn new(objective: &'a O) -> Self {
        Self {
            objective,
            cache: FitnessCache::new(),
            requests: 0,
            elapsed: Duration::ZERO,
        }
    }

    /// Fitness requests so far (pipeline runs plus cache hits).
    pub fn requests(&self) -> usize {
        self.requests
    }

    pub fn cache(&self) -> &FitnessCache<O::Key> {
        &self.cache
    }

    pub fn elapsed(&self) -> Duration {
        self.elapsed
    }

    /// Evaluates a batch. Distinct uncached keys are computed concurrently;
    /// the first occurrence of a new key counts as a miss, later ones as hits,
    /// so the accounting does not depend on scheduling.
    pub fn evaluate_batch(&mut self, genomes: &[Genome]) -> Vec<f64> {
        let start = Instant::now();
        let keys: Vec<O::Key> = genomes.iter().map(|g| self.objective.key(g)).collect();
        let mut pending: Vec<(O::Key, &Genome)> = Vec::new();
        let mut pending_keys = std::collections::HashSet::new();
        for (k, g) in keys.iter().zip(genomes) {
            if self.cache.map.contains_key(k) || !pending_keys.insert(k.clone()) {
                self.cache.hits += 1;
            } else {
                self.cache.misses += 1;
                pending.push((k.clone(), g));
            }
        }
        let objective = self.objective;
        let computed: Vec<f64> = pending.par_iter().map(|(_, g)| objective.evaluate(g)).collect();
        for ((k, _), f) in pending.into_iter().zip(computed) {
            self.cache.map.insert(k, f);
        }
        self.requests += genomes.len();
        self.elapsed += start.elapsed();
        keys.iter().map(|k| self.cache.map[k]).collect()
    }

    pub fn evaluate(&mut self, genome: &Genome) -> f64 {
        self.evaluate_batch(std::slice::from_ref(genome))[0]
    }
}

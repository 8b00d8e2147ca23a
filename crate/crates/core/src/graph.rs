//! Exact and LSH-approximate weighted kNN graphs.
//!
//! Edge weights are `clamp(cosine, 0, 1)` stored as `f32`; nine significant
//! digits in the graph file are enough to restore every weight bit-exactly.
//! Graphs are symmetrized by union: an edge survives if either endpoint
//! picked the other.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::value::RawValue;

use crate::data::{dot, DescriptorSet};
use crate::error::{Error, Result};

/// Weighted kNN adjacency. Neighbor lists are sorted by neighbor index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    n: usize,
    k: usize,
    adjacency: Vec<Vec<(usize, f32)>>,
    symmetric: bool,
}

/// The outgoing top-k picks each node made before symmetrization.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildTrace {
    pub picks: Vec<Vec<usize>>,
}

/// Cosine similarity turned into an edge weight.
#[inline]
pub fn edge_weight(cosine: f64) -> f32 {
    cosine.clamp(0.0, 1.0) as f32
}

impl KnnGraph {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            adjacency: vec![Vec::new(); n],
            symmetric: true,
        }
    }

    /// Union-symmetrizes per-node picks `(neighbor, weight)`.
    pub fn from_picks(n: usize, k: usize, picks: &[Vec<(usize, f32)>]) -> Result<Self> {
        if picks.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: picks.len(),
            });
        }
        let mut adjacency: Vec<Vec<(usize, f32)>> = vec![Vec::new(); n];
        for (i, row) in picks.iter().enumerate() {
            for &(j, w) in row {
                if j >= n || j == i {
                    return Err(Error::InvalidParameter(format!(
                        "invalid pick {i} -> {j} for n={n}"
                    )));
                }
                adjacency[i].push((j, w));
                adjacency[j].push((i, w));
            }
        }
        for row in adjacency.iter_mut() {
            row.sort_by_key(|&(j, _)| j);
            row.dedup_by_key(|&mut (j, _)| j);
        }
        Ok(Self {
            n,
            k,
            adjacency,
            symmetric: true,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f32)] {
        &self.adjacency[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f32> {
        let row = &self.adjacency[i];
        row.binary_search_by_key(&j, |&(n, _)| n)
            .ok()
            .map(|p| row[p].1)
    }

    /// Number of stored adjacency entries (twice the undirected edge count
    /// for a symmetric graph).
    pub fn entry_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn edge_count(&self) -> usize {
        if self.symmetric {
            self.entry_count() / 2
        } else {
            self.entry_count()
        }
    }
}

fn check_build_args(ds: &DescriptorSet, k: usize) -> Result<()> {
    if !ds.is_normalized() {
        return Err(Error::InvalidParameter(
            "graph construction needs a normalized descriptor set".into(),
        ));
    }
    if k == 0 || k >= ds.len() {
        return Err(Error::InvalidParameter(format!(
            "k must satisfy 1 <= k < N (k={k}, N={})",
            ds.len()
        )));
    }
    Ok(())
}

/// Keeps the `k` candidates most similar to node `i`, ties by lower index.
fn top_k(ds: &DescriptorSet, i: usize, candidates: &[usize], k: usize) -> Vec<(usize, f32)> {
    let q = ds.row(i);
    let mut scored: Vec<(usize, f64)> = candidates
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (j, dot(ds.row(j), q)))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    let mut out = Vec::with_capacity(scored.len());
    out.extend(scored.iter().map(|&(j, c)| (j, edge_weight(c))));
    out
}

fn finish(n: usize, k: usize, picks: Vec<Vec<(usize, f32)>>) -> Result<(KnnGraph, BuildTrace)> {
    let graph = KnnGraph::from_picks(n, k, &picks)?;
    let trace = BuildTrace {
        picks: picks
            .into_iter()
            .map(|row| row.into_iter().map(|(j, _)| j).collect())
            .collect(),
    };
    Ok((graph, trace))
}

/// Exact kNN graph over all pairs.
pub fn build_bruteforce(ds: &DescriptorSet, k: usize) -> Result<KnnGraph> {
    build_bruteforce_traced(ds, k).map(|(g, _)| g)
}

pub fn build_bruteforce_traced(ds: &DescriptorSet, k: usize) -> Result<(KnnGraph, BuildTrace)> {
    check_build_args(ds, k)?;
    let n = ds.len();
    let all: Vec<usize> = (0..n).collect();
    let picks: Vec<Vec<(usize, f32)>> = (0..n)
        .into_par_iter()
        .map(|i| top_k(ds, i, &all, k))
        .collect();
    finish(n, k, picks)
}

/// One hash table: `bits` random hyperplanes and the buckets they induce.
#[derive(Debug, Clone)]
pub struct LshTable {
    hyperplanes: Vec<f64>,
    signatures: Vec<u32>,
    buckets: HashMap<u32, Vec<usize>>,
}

impl LshTable {
    pub fn hyperplanes(&self) -> &[f64] {
        &self.hyperplanes
    }

    pub fn signature_of(&self, node: usize) -> u32 {
        self.signatures[node]
    }

    pub fn bucket(&self, signature: u32) -> &[usize] {
        self.buckets.get(&signature).map_or(&[], Vec::as_slice)
    }

    pub fn buckets(&self) -> &HashMap<u32, Vec<usize>> {
        &self.buckets
    }
}

/// Sign-of-random-projection hash index for cosine similarity.
#[derive(Debug, Clone)]
pub struct LshIndex {
    dim: usize,
    bits: usize,
    seed: u64,
    tables: Vec<LshTable>,
}

impl LshIndex {
    /// Hashes every row of `ds` into `tables` tables of `bits`-bit signatures.
    ///
    /// Table `t` draws its hyperplanes from its own stream of `seed`, so an
    /// index with more tables extends one with fewer.
    pub fn build(ds: &DescriptorSet, tables: usize, bits: usize, seed: u64) -> Result<Self> {
        if tables == 0 {
            return Err(Error::InvalidParameter("tables must be >= 1".into()));
        }
        if !(1..=30).contains(&bits) {
            return Err(Error::InvalidParameter(format!(
                "bits must be in [1, 30], got {bits}"
            )));
        }
        let dim = ds.dim();
        let tables = (0..tables)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let mut hyperplanes = Vec::with_capacity(bits * dim);
                for _ in 0..bits {
                    let mut h: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
                    h.iter_mut().for_each(|v| *v /= norm);
                    hyperplanes.extend_from_slice(&h);
                }
                let signatures: Vec<u32> = ds
                    .rows()
                    .map(|row| signature(&hyperplanes, dim, row))
                    .collect();
                let mut buckets: HashMap<u32, Vec<usize>> = HashMap::new();
                for (i, &s) in signatures.iter().enumerate() {
                    buckets.entry(s).or_default().push(i);
                }
                LshTable {
                    hyperplanes,
                    signatures,
                    buckets,
                }
            })
            .collect();
        Ok(Self {
            dim,
            bits,
            seed,
            tables,
        })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tables(&self) -> &[LshTable] {
        &self.tables
    }

    pub fn signature(&self, table: usize, vector: &[f64]) -> u32 {
        signature(&self.tables[table].hyperplanes, self.dim, vector)
    }

    /// Sorted, deduplicated co-occupants of `node` over all tables (including `node`).
    pub fn candidates(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for t in &self.tables {
            out.extend_from_slice(t.bucket(t.signatures[node]));
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn signature(hyperplanes: &[f64], dim: usize, v: &[f64]) -> u32 {
    hyperplanes
        .chunks_exact(dim)
        .enumerate()
        .fold(0u32, |acc, (t, h)| {
            if dot(h, v) >= 0.0 {
                acc | (1 << t)
            } else {
                acc
            }
        })
}

/// Approximate kNN graph: top-k among LSH bucket co-occupants.
pub fn build_lsh_approx(
    ds: &DescriptorSet,
    k: usize,
    tables: usize,
    bits: usize,
    seed: u64,
) -> Result<KnnGraph> {
    build_lsh_approx_traced(ds, k, tables, bits, seed).map(|(g, _)| g)
}

pub fn build_lsh_approx_traced(
    ds: &DescriptorSet,
    k: usize,
    tables: usize,
    bits: usize,
    seed: u64,
) -> Result<(KnnGraph, BuildTrace)> {
    check_build_args(ds, k)?;
    let index = LshIndex::build(ds, tables, bits, seed)?;
    let picks: Vec<Vec<(usize, f32)>> = (0..ds.len())
        .into_par_iter()
        .map(|i| top_k(ds, i, &index.candidates(i), k))
        .collect();
    finish(ds.len(), k, picks)
}

/// Fraction of the exact graph's edges present in `approx`.
pub fn edge_recall(approx: &KnnGraph, exact: &KnnGraph) -> Result<f64> {
    if approx.n != exact.n {
        return Err(Error::DimensionMismatch {
            expected: exact.n,
            got: approx.n,
        });
    }
    let total = exact.entry_count();
    if total == 0 {
        return Ok(1.0);
    }
    let mut hits = 0usize;
    for (a, e) in approx.adjacency.iter().zip(&exact.adjacency) {
        let (mut p, mut q) = (0, 0);
        while p < a.len() && q < e.len() {
            match a[p].0.cmp(&e[q].0) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    hits += 1;
                    p += 1;
                    q += 1;
                }
            }
        }
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Deserialize)]
struct GraphFile<'a> {
    n: usize,
    k: usize,
    symmetric: bool,
    #[serde(borrow)]
    edges: Vec<&'a RawValue>,
}

/// Serializes the graph as JSON. Symmetric graphs list each edge once with `i < j`.
pub fn graph_to_string(g: &KnnGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{{");
    let _ = writeln!(out, "  \"n\": {},", g.n);
    let _ = writeln!(out, "  \"k\": {},", g.k);
    let _ = writeln!(out, "  \"symmetric\": {},", g.symmetric);
    let _ = write!(out, "  \"edges\": [");
    let mut first = true;
    for (i, row) in g.adjacency.iter().enumerate() {
        for &(j, w) in row {
            if g.symmetric && j < i {
                continue;
            }
            out.push_str(if first { "\n" } else { ",\n" });
            first = false;
            let _ = write!(out, "    [{i}, {j}, {w:.8e}]");
        }
    }
    out.push_str(if first { "]\n}\n" } else { "\n  ]\n}\n" });
    out
}

pub fn save_graph(g: &KnnGraph, path: &Path) -> Result<()> {
    fs::write(path, graph_to_string(g)).map_err(|e| Error::io(path, e))
}

fn line_col_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn graph_from_str(text: &str) -> Result<KnnGraph> {
    let file: GraphFile<'_> = serde_json::from_str(text).map_err(|e| Error::Corrupt {
        offset: line_col_offset(text, e.line(), e.column()),
        msg: e.to_string(),
    })?;
    let mut adjacency: Vec<Vec<(usize, f32)>> = vec![Vec::new(); file.n];
    for raw in &file.edges {
        let offset = raw.get().as_ptr() as usize - text.as_ptr() as usize;
        let corrupt = |msg: String| Error::Corrupt { offset, msg };
        let (i, j, w): (usize, usize, f64) =
            serde_json::from_str(raw.get()).map_err(|e| corrupt(e.to_string()))?;
        let w = w as f32;
        if i >= file.n || j >= file.n {
            return Err(corrupt(format!("edge ({i}, {j}) out of range for n={}", file.n)));
        }
        if i == j {
            return Err(corrupt(format!("self-loop on node {i}")));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(corrupt(format!("weight {w} outside [0, 1]")));
        }
        adjacency[i].push((j, w));
        if file.symmetric {
            adjacency[j].push((i, w));
        }
    }
    for (i, row) in adjacency.iter_mut().enumerate() {
        row.sort_by_key(|&(j, _)| j);
        if row.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Corrupt {
                offset: 0,
                msg: format!("duplicate edge at node {i}"),
            });
        }
    }
    Ok(KnnGraph {
        n: file.n,
        k: file.k,
        adjacency,
        symmetric: file.symmetric,
    })
}

pub fn load_graph(path: &Path) -> Result<KnnGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    graph_from_str(&text)
}

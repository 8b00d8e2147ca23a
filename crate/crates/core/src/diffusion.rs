//! Damped diffusion re-ranking: truncate, build the normalized affinity
//! operator, seed from the query, solve `(I - alpha S) x = b`, rank by `x`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{sort_desc_by_score, DescriptorSet, RankedItem, Ranking};
use crate::error::{Error, Result};
use crate::graph::KnnGraph;

/// Residual norm at which the conjugate-gradient solve stops early.
pub const RESIDUAL_TOLERANCE: f64 = 1e-6;

/// Largest system `solve_reference` accepts.
pub const REFERENCE_MAX_NODES: usize = 2000;

/// The seven tunable diffusion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    /// Damping factor.
    pub alpha: f64,
    /// Exponent applied to affinity weights.
    pub beta: u32,
    /// Exponent applied to seed similarities.
    pub gamma: u32,
    /// Number of non-zero seed entries.
    pub k_s: usize,
    /// Neighbors kept per node inside the truncated subset.
    pub k: usize,
    /// Conjugate-gradient iteration cap.
    pub iterations: usize,
    /// Number of database items diffused over.
    pub trunc: usize,
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1), got {}", self.alpha));
        }
        if self.beta == 0 || self.gamma == 0 {
            return bad("beta and gamma must be >= 1".into());
        }
        if self.k_s == 0 || self.k == 0 || self.iterations == 0 || self.trunc == 0 {
            return bad("k_s, k, iterations and trunc must be >= 1".into());
        }
        Ok(())
    }

    /// Fits the parameters to a database of `n` items: `trunc <= n`,
    /// `k_s <= trunc`, `k < trunc`.
    pub fn clamped(&self, n: usize) -> Self {
        let mut p = *self;
        if p.trunc > n {
            log::debug!("trunc {} clamped to database size {n}", p.trunc);
            p.trunc = n;
        }
        if p.k_s > p.trunc {
            log::debug!("k_s {} clamped to trunc {}", p.k_s, p.trunc);
            p.k_s = p.trunc;
        }
        if p.k >= p.trunc {
            p.k = p.trunc.saturating_sub(1);
        }
        p
    }
}

/// Integer power by repeated multiplication; `int_pow(x, 1) == x` bitwise.
#[inline]
pub fn int_pow(x: f64, e: u32) -> f64 {
    let mut acc = x;
    for _ in 1..e {
        acc *= x;
    }
    acc
}

/// Indices of the `trunc` database items most similar to the query, in
/// descending similarity (ties by index). `trunc > N` is clamped to `N`.
pub fn truncate_candidates(ds: &DescriptorSet, query: &[f64], trunc: usize) -> Result<Vec<usize>> {
    let sims = ds.similarities(query)?;
    truncate_by_scores(&sims, trunc)
}

fn truncate_by_scores(sims: &[f64], trunc: usize) -> Result<Vec<usize>> {
    if trunc == 0 {
        return Err(Error::InvalidParameter("trunc must be >= 1".into()));
    }
    let trunc = if trunc > sims.len() {
        log::debug!("trunc {trunc} clamped to {}", sims.len());
        sims.len()
    } else {
        trunc
    };
    let mut order: Vec<usize> = (0..sims.len()).collect();
    sort_desc_by_score(&mut order, sims);
    order.truncate(trunc);
    Ok(order)
}

/// Powered, union-symmetrized weights of the graph restricted to a subset,
/// before normalization. Rows are indexed by subset position.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetWeights {
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// Restricts `graph` to `subset`, keeps each node's `k` strongest in-subset
/// neighbors (ties by lower database index), symmetrizes by union and raises
/// every weight to `beta`.
pub fn subset_weights(graph: &KnnGraph, subset: &[usize], k: usize, beta: u32) -> Result<SubsetWeights> {
    if subset.is_empty() {
        return Err(Error::InvalidParameter("empty subset".into()));
    }
    if beta == 0 {
        return Err(Error::InvalidParameter("beta must be >= 1".into()));
    }
    let mut local = vec![usize::MAX; graph.n()];
    for (pos, &g) in subset.iter().enumerate() {
        if g >= graph.n() {
            return Err(Error::InvalidParameter(format!(
                "subset index {g} out of range for graph of {} nodes",
                graph.n()
            )));
        }
        local[g] = pos;
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); subset.len()];
    let mut inside: Vec<(usize, usize, f32)> = Vec::new();
    for (i, &g) in subset.iter().enumerate() {
        inside.clear();
        inside.extend(
            graph
                .neighbors(g)
                .iter()
                .filter(|&&(j, _)| local[j] != usize::MAX)
                .map(|&(j, w)| (local[j], j, w)),
        );
        inside.sort_unstable_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)));
        for &(j, _, w) in inside.iter().take(k) {
            let w = int_pow(w as f64, beta);
            rows[i].push((j, w));
            rows[j].push((i, w));
        }
    }
    for row in rows.iter_mut() {
        row.sort_by_key(|&(j, _)| j);
        row.dedup_by_key(|&mut (j, _)| j);
    }
    Ok(SubsetWeights { rows })
}

/// Symmetrically normalized affinity `S = D^-1/2 W D^-1/2` in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityOperator {
    subset: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    degree: Vec<f64>,
}

impl AffinityOperator {
    pub fn from_weights(subset: Vec<usize>, weights: &SubsetWeights) -> Self {
        let degree: Vec<f64> = weights
            .rows
            .iter()
            .map(|r| r.iter().map(|&(_, w)| w).sum())
            .collect();
        let inv_sqrt: Vec<f64> = degree
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let mut row_ptr = Vec::with_capacity(weights.rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, row) in weights.rows.iter().enumerate() {
            for &(j, w) in row {
                if w > 0.0 {
                    cols.push(j);
                    vals.push(w * (inv_sqrt[i] * inv_sqrt[j]));
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            subset,
            row_ptr,
            cols,
            vals,
            degree,
        }
    }

    /// Operator with no edges over `n` nodes.
    pub fn zero(subset: Vec<usize>) -> Self {
        let n = subset.len();
        Self {
            subset,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            vals: Vec::new(),
            degree: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.degree.len()
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// `out = S x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *o = self.cols[r.clone()]
                .iter()
                .zip(&self.vals[r])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Builds the normalized operator for `subset`. Isolated nodes get zero rows.
pub fn build_affinity(graph: &KnnGraph, subset: &[usize], k: usize, beta: u32) -> Result<AffinityOperator> {
    let w = subset_weights(graph, subset, k, beta)?;
    Ok(AffinityOperator::from_weights(subset.to_vec(), &w))
}

/// Sparse non-negative query seed over subset positions, L1-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedVector {
    pub values: Vec<f64>,
}

/// Un-normalized seed: `max(0, sim)^gamma` at the first `k_s` positions of
/// `subset_sims` (which must be in descending order), zero elsewhere.
pub fn seed_weights(subset_sims: &[f64], k_s: usize, gamma: u32) -> Vec<f64> {
    let k_s = k_s.min(subset_sims.len());
    let mut b = vec![0.0; subset_sims.len()];
    for (v, &s) in b.iter_mut().zip(subset_sims).take(k_s) {
        *v = int_pow(s.max(0.0), gamma);
    }
    b
}

fn seed_from_sims(subset_sims: &[f64], k_s: usize, gamma: u32) -> Result<SeedVector> {
    if gamma == 0 {
        return Err(Error::InvalidParameter("gamma must be >= 1".into()));
    }
    let mut values = seed_weights(subset_sims, k_s, gamma);
    let sum: f64 = values.iter().sum();
    if sum.is_nan() || sum <= 0.0 {
        return Err(Error::QueryDisconnected(k_s.min(subset_sims.len())));
    }
    values.iter_mut().for_each(|v| *v /= sum);
    Ok(SeedVector { values })
}

/// Seed vector for `query` over `subset`. Non-zeros sit at the `k_s` subset
/// items most similar to the query.
pub fn build_seed(
    ds: &DescriptorSet,
    query: &[f64],
    subset: &[usize],
    k_s: usize,
    gamma: u32,
) -> Result<SeedVector> {
    let sims = ds.similarities(query)?;
    let subset_sims: Vec<f64> = subset.iter().map(|&g| sims[g]).collect();
    let mut order: Vec<usize> = (0..subset.len()).collect();
    order.sort_by(|&a, &b| {
        subset_sims[b]
            .total_cmp(&subset_sims[a])
            .then(subset[a].cmp(&subset[b]))
    });
    let ranked: Vec<f64> = order.iter().map(|&p| subset_sims[p]).collect();
    let ranked_seed = seed_from_sims(&ranked, k_s, gamma)?;
    let mut values = vec![0.0; subset.len()];
    for (&pos, &v) in order.iter().zip(&ranked_seed.values) {
        values[pos] = v;
    }
    Ok(SeedVector { values })
}

/// Result of an iterative solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient on `(I - alpha S) x = b`, at most `iterations` steps
/// or until the residual norm drops below [`RESIDUAL_TOLERANCE`].
pub fn conjugate_gradient(op: &AffinityOperator, b: &[f64], alpha: f64, iterations: usize) -> Result<Solution> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must be in [0, 1), got {alpha}")));
    }
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    if b.len() != op.n() {
        return Err(Error::DimensionMismatch {
            expected: op.n(),
            got: b.len(),
        });
    }
    if alpha == 0.0 {
        return Ok(Solution {
            x: b.to_vec(),
            iterations: 0,
            residual_norm: 0.0,
        });
    }
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rs = dotv(&r, &r);
    let mut used = 0;
    if rs.sqrt() < RESIDUAL_TOLERANCE {
        return Ok(Solution {
            x,
            iterations: 0,
            residual_norm: rs.sqrt(),
        });
    }
    for _ in 0..iterations {
        used += 1;
        op.apply(&p, &mut ap);
        for (a, &pi) in ap.iter_mut().zip(&p) {
            *a = pi - alpha * *a;
        }
        let pap = dotv(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::NonFinite("conjugate gradient"));
        }
        if pap <= 0.0 {
            break;
        }
        let step = rs / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rs_new = dotv(&r, &r);
        if !rs_new.is_finite() {
            return Err(Error::NonFinite("conjugate gradient"));
        }
        if rs_new.sqrt() < RESIDUAL_TOLERANCE {
            rs = rs_new;
            break;
        }
        let ratio = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + ratio * p[i];
        }
        rs = rs_new;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("conjugate gradient"));
    }
    Ok(Solution {
        x,
        iterations: used,
        residual_norm: rs.sqrt(),
    })
}

/// Approximate diffusion scores over the subset.
pub fn solve_diffusion(op: &AffinityOperator, b: &SeedVector, alpha: f64, iterations: usize) -> Result<Vec<f64>> {
    conjugate_gradient(op, &b.values, alpha, iterations).map(|s| s.x)
}

/// Dense LU solve of `(I - alpha S) x = b`.
pub fn solve_reference(op: &AffinityOperator, b: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let n = op.n();
    if n > REFERENCE_MAX_NODES {
        return Err(Error::InvalidParameter(format!(
            "dense reference solve limited to {REFERENCE_MAX_NODES} nodes, got {n}"
        )));
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let a = DMatrix::identity(n, n) - op.to_dense() * alpha;
    let x = a
        .lu()
        .solve(&DVector::from_column_slice(b))
        .ok_or(Error::Singular)?;
    Ok(x.iter().copied().collect())
}

/// A query vector and, when it is itself a database item, its id.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub id: &'a str,
    pub vector: &'a [f64],
}

/// Full diffusion re-ranking for one query.
///
/// Subset items are ranked by diffusion score; the rest of the database
/// follows in raw-cosine order with scores shifted below the subset minimum.
/// A query that is also a database item is left out of its own ranking.
pub fn diffuse(ds: &DescriptorSet, graph: &KnnGraph, query: Query<'_>, params: &DiffusionParams) -> Result<Ranking> {
    if graph.n() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            got: graph.n(),
        });
    }
    params.validate()?;
    let p = params.clamped(ds.len());
    let sims = ds.similarities(query.vector)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    sort_desc_by_score(&mut order, &sims);
    let (subset, tail) = order.split_at(p.trunc);

    let op = build_affinity(graph, subset, p.k, p.beta)?;
    let subset_sims: Vec<f64> = subset.iter().map(|&i| sims[i]).collect();
    let seed = seed_from_sims(&subset_sims, p.k_s, p.gamma)?;
    let x = solve_diffusion(&op, &seed, p.alpha, p.iterations)?;

    let exclude = ds.index_of(query.id);
    let mut positions: Vec<usize> = (0..subset.len())
        .filter(|&pos| Some(subset[pos]) != exclude)
        .collect();
    positions.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));

    let mut entries = Vec::with_capacity(ds.len());
    entries.extend(positions.iter().map(|&pos| RankedItem {
        index: subset[pos],
        id: ds.id_arc(subset[pos]).clone(),
        score: x[pos],
    }));
    let floor = entries.last().map_or(0.0, |e| e.score);
    entries.extend(tail.iter().filter(|&&i| Some(i) != exclude).map(|&i| RankedItem {
        index: i,
        id: ds.id_arc(i).clone(),
        score: floor - (1.0 - sims[i]),
    }));
    Ok(Ranking::from_sorted(entries))
}

/// Raw-cosine ranking of the whole database, the no-diffusion baseline.
pub fn baseline_ranking(ds: &DescriptorSet, query: Query<'_>) -> Result<Ranking> {
    Ranking::by_cosine(ds, query.vector, ds.index_of(query.id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_manifolds, l2_normalize};
    use crate::graph::build_bruteforce;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_set(n: usize, dim: usize, seed: u64) -> DescriptorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..n * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ids = (0..n).map(|i| format!("r{i}")).collect();
        l2_normalize(DescriptorSet::new(ids, dim, vals).unwrap()).unwrap()
    }

    fn two_node_graph(w: f32) -> KnnGraph {
        KnnGraph::from_picks(2, 1, &[vec![(1, w)], vec![]]).unwrap()
    }

    fn params(alpha: f64, k_s: usize, trunc: usize) -> DiffusionParams {
        DiffusionParams {
            alpha,
            beta: 1,
            gamma: 1,
            k_s,
            k: 10,
            iterations: 30,
            trunc,
        }
    }

    #[test]
    fn truncate_full_and_single() {
        let ds = random_set(30, 5, 1);
        let q = ds.row(3).to_vec();
        let all = truncate_candidates(&ds, &q, 30).unwrap();
        assert_eq!(all.len(), 30);
        assert_eq!(all[0], 3);
        let sims = ds.similarities(&q).unwrap();
        assert!(all.windows(2).all(|w| sims[w[0]] >= sims[w[1]]));
        assert_eq!(truncate_candidates(&ds, &q, 1).unwrap(), vec![3]);
        assert_eq!(truncate_candidates(&ds, &q, 500).unwrap(), all);
        assert!(truncate_candidates(&ds, &q, 0).is_err());
    }

    #[test]
    fn beta_one_passes_weights_through() {
        let ds = random_set(40, 4, 2);
        let g = build_bruteforce(&ds, 5).unwrap();
        let subset: Vec<usize> = (0..40).collect();
        let w = subset_weights(&g, &subset, 5, 1).unwrap();
        for (i, row) in w.rows.iter().enumerate() {
            for &(j, v) in row {
                assert_eq!(v.to_bits(), (g.weight(i, j).unwrap() as f64).to_bits());
            }
        }
    }

    #[test]
    fn beta_three_cubes_weights() {
        let g = two_node_graph(0.5);
        let w = subset_weights(&g, &[0, 1], 1, 3).unwrap();
        assert_eq!(w.rows[0], vec![(1, 0.125)]);
        assert_eq!(w.rows[1], vec![(0, 0.125)]);
    }

    #[test]
    fn empty_subset_rejected() {
        assert!(build_affinity(&two_node_graph(0.5), &[], 1, 1).is_err());
    }

    #[test]
    fn subset_restriction_reapplies_degree_bound() {
        let (ds, _) = generate_synthetic_manifolds(40, 0.05, 3, 2).unwrap();
        let g = build_bruteforce(&ds, 10).unwrap();
        let subset: Vec<usize> = (0..80).step_by(2).collect();
        let w = subset_weights(&g, &subset, 3, 1).unwrap();
        for (i, row) in w.rows.iter().enumerate() {
            for &(j, _) in row {
                assert!(g.weight(subset[i], subset[j]).is_some());
                assert!(w.rows[j].iter().any(|&(x, _)| x == i));
            }
        }
    }

    #[test]
    fn operator_is_symmetric_nonnegative_zero_diagonal() {
        let ds = random_set(80, 6, 3);
        let g = build_bruteforce(&ds, 7).unwrap();
        let subset: Vec<usize> = (0..60).collect();
        let op = build_affinity(&g, &subset, 7, 2).unwrap();
        let m = op.to_dense();
        for i in 0..op.n() {
            assert_eq!(m[(i, i)], 0.0);
            for j in 0..op.n() {
                assert!(m[(i, j)] >= 0.0);
                assert_eq!(m[(i, j)].to_bits(), m[(j, i)].to_bits());
            }
        }
    }

    fn norm2(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn power_iteration(op: &AffinityOperator) -> f64 {
        let n = op.n();
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut out = vec![0.0; n];
        let mut lambda = 0.0;
        for _ in 0..500 {
            op.apply(&v, &mut out);
            let norm = norm2(&out);
            if norm == 0.0 {
                return 0.0;
            }
            lambda = dotv(&v, &out);
            v.iter_mut().zip(&out).for_each(|(a, b)| *a = b / norm);
        }
        lambda
    }

    #[test]
    fn operator_spectrum_bounded_by_one() {
        for seed in 0..10 {
            let ds = random_set(120, 5, seed);
            let g = build_bruteforce(&ds, 8).unwrap();
            let subset: Vec<usize> = (0..100).collect();
            let op = build_affinity(&g, &subset, 6, 1 + seed as u32 % 4).unwrap();
            assert!(power_iteration(&op) <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn seed_gamma_one_is_raw_similarity() {
        let sims = [0.9, 0.5, -0.2, 0.1];
        assert_eq!(seed_weights(&sims, 4, 1), vec![0.9, 0.5, 0.0, 0.1]);
        assert_eq!(seed_weights(&sims, 2, 1), vec![0.9, 0.5, 0.0, 0.0]);
        let s = seed_from_sims(&sims, 4, 1).unwrap();
        assert!((s.values.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((s.values[0] - 0.9 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn seed_dense_when_k_s_is_subset_size() {
        let ds = random_set(20, 3, 4);
        let q = ds.row(0).to_vec();
        let subset = truncate_candidates(&ds, &q, 20).unwrap();
        let sims = ds.similarities(&q).unwrap();
        let s = build_seed(&ds, &q, &subset, 20, 2).unwrap();
        let nonzero = s.values.iter().filter(|&&v| v > 0.0).count();
        let positive = subset.iter().filter(|&&i| sims[i] > 0.0).count();
        assert_eq!(nonzero, positive);
    }

    #[test]
    fn seed_picks_most_similar_positions() {
        let ds = random_set(30, 4, 5);
        let q = ds.row(7).to_vec();
        // Unsorted subset: build_seed must still find the top-k_s by similarity.
        let subset: Vec<usize> = (0..30).rev().collect();
        let s = build_seed(&ds, &q, &subset, 3, 1).unwrap();
        let top = truncate_candidates(&ds, &q, 3).unwrap();
        for (pos, &g) in subset.iter().enumerate() {
            assert_eq!(s.values[pos] > 0.0, top.contains(&g) && ds.similarities(&q).unwrap()[g] > 0.0);
        }
    }

    #[test]
    fn disconnected_query_rejected() {
        assert!(matches!(
            seed_from_sims(&[-0.5, -0.1, 0.3], 2, 1),
            Err(Error::QueryDisconnected(2))
        ));
    }

    #[test]
    fn alpha_zero_returns_seed_exactly() {
        let ds = random_set(50, 4, 6);
        let g = build_bruteforce(&ds, 5).unwrap();
        let subset: Vec<usize> = (0..50).collect();
        let op = build_affinity(&g, &subset, 5, 2).unwrap();
        let b = SeedVector {
            values: (0..50).map(|i| i as f64 / 1225.0).collect(),
        };
        assert_eq!(solve_diffusion(&op, &b, 0.0, 10).unwrap(), b.values);
        assert_eq!(solve_reference(&op, &b.values, 0.0).unwrap(), b.values);
    }

    #[test]
    fn empty_operator_returns_seed() {
        let op = AffinityOperator::zero((0..5).collect());
        let b = SeedVector {
            values: vec![0.5, 0.25, 0.125, 0.125, 0.0],
        };
        for alpha in [0.3, 0.9] {
            assert_eq!(solve_diffusion(&op, &b, alpha, 10).unwrap(), b.values);
        }
    }

    #[test]
    fn two_node_hand_solve() {
        let g = two_node_graph(0.3);
        let op = build_affinity(&g, &[0, 1], 1, 1).unwrap();
        let m = op.to_dense();
        assert!((m[(0, 1)] - 1.0).abs() < 1e-15);
        let x = solve_reference(&op, &[1.0, 0.0], 0.5).unwrap();
        assert!((x[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((x[1] - 2.0 / 3.0).abs() < 1e-12);
        let xcg = solve_diffusion(&op, &SeedVector { values: vec![1.0, 0.0] }, 0.5, 10).unwrap();
        assert!((xcg[0] - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn solver_rejects_bad_alpha_and_iterations() {
        let op = AffinityOperator::zero(vec![0, 1]);
        let b = SeedVector { values: vec![1.0, 0.0] };
        assert!(solve_diffusion(&op, &b, 1.0, 10).is_err());
        assert!(solve_diffusion(&op, &b, 0.5, 0).is_err());
    }

    #[test]
    fn cg_matches_dense_on_fifty_nodes() {
        let ds = random_set(50, 5, 7);
        let g = build_bruteforce(&ds, 6).unwrap();
        let q = ds.row(0).to_vec();
        let subset = truncate_candidates(&ds, &q, 50).unwrap();
        let op = build_affinity(&g, &subset, 6, 1).unwrap();
        let b = build_seed(&ds, &q, &subset, 10, 1).unwrap();
        let x = solve_diffusion(&op, &b, 0.9, 200).unwrap();
        let r = solve_reference(&op, &b.values, 0.9).unwrap();
        let diff = x.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-5, "diff {diff}");
    }

    fn neumann(op: &AffinityOperator, b: &[f64], alpha: f64, terms: usize) -> Vec<f64> {
        let mut x = b.to_vec();
        let mut term = b.to_vec();
        let mut next = vec![0.0; b.len()];
        for _ in 0..terms {
            op.apply(&term, &mut next);
            for (t, n) in term.iter_mut().zip(&next) {
                *t = alpha * n;
            }
            x.iter_mut().zip(&term).for_each(|(a, t)| *a += t);
        }
        x
    }

    #[test]
    fn dense_solve_matches_neumann_series() {
        // 0.99^200 is still 0.13, so the slowest case needs far more terms.
        for (alpha, terms) in [(0.5, 200), (0.9, 200), (0.99, 4000)] {
            for seed in 0..5 {
                let ds = random_set(100, 4, 40 + seed);
                let g = build_bruteforce(&ds, 7).unwrap();
                let q = ds.row(3).to_vec();
                let subset: Vec<usize> = (0..100).collect();
                let op = build_affinity(&g, &subset, 7, 2).unwrap();
                let b = build_seed(&ds, &q, &subset, 15, 2).unwrap();
                let oracle = neumann(&op, &b.values, alpha, terms);
                assert!(oracle.iter().all(|&v| v >= 0.0));
                let r = solve_reference(&op, &b.values, alpha).unwrap();
                let diff = oracle.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-6, "alpha {alpha} seed {seed} diff {diff}");
            }
        }
    }

    #[test]
    fn seed_scaling_scales_solution() {
        let ds = random_set(60, 5, 8);
        let g = build_bruteforce(&ds, 6).unwrap();
        let q = ds.row(1).to_vec();
        let subset = truncate_candidates(&ds, &q, 60).unwrap();
        let op = build_affinity(&g, &subset, 6, 2).unwrap();
        let b = build_seed(&ds, &q, &subset, 15, 1).unwrap();
        let x = solve_reference(&op, &b.values, 0.8).unwrap();
        let scaled: Vec<f64> = b.values.iter().map(|v| v * 4.0).collect();
        let y = solve_reference(&op, &scaled, 0.8).unwrap();
        let argsort = |v: &[f64]| {
            let mut o: Vec<usize> = (0..v.len()).collect();
            o.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
            o
        };
        assert_eq!(argsort(&x), argsort(&y));
        for (a, b) in x.iter().zip(&y) {
            assert!((4.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_params_reproduce_cosine_order() {
        let (ds, _) = generate_synthetic_manifolds(60, 0.05, 3, 11).unwrap();
        let g = build_bruteforce(&ds, 10).unwrap();
        let q = Query {
            id: "external",
            vector: ds.row(17),
        };
        let ranking = diffuse(&ds, &g, q, &params(0.0, 120, 120)).unwrap();
        let base = baseline_ranking(&ds, q).unwrap();
        assert_eq!(ranking.ids().collect::<Vec<_>>(), base.ids().collect::<Vec<_>>());
    }

    #[test]
    fn truncated_ranking_covers_database_once() {
        let (ds, _) = generate_synthetic_manifolds(50, 0.05, 3, 12).unwrap();
        let g = build_bruteforce(&ds, 10).unwrap();
        let id = ds.id(5).to_string();
        let q = Query {
            id: &id,
            vector: ds.row(5),
        };
        let r = diffuse(&ds, &g, q, &params(0.9, 20, 40)).unwrap();
        assert_eq!(r.len(), 99);
        assert!(r.ids().all(|x| x != id));
        let mut seen: Vec<usize> = r.entries().iter().map(|e| e.index).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 99);
        assert!(r.entries().windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn params_clamp_to_small_database() {
        let p = DiffusionParams {
            alpha: 0.5,
            beta: 2,
            gamma: 2,
            k_s: 80,
            k: 40,
            iterations: 10,
            trunc: 3000,
        }
        .clamped(30);
        assert_eq!((p.trunc, p.k_s, p.k), (30, 30, 29));
    }
}

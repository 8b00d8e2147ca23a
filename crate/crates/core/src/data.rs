//! Descriptor sets, ground truth, rankings and the synthetic two-arc generator.
//!
//! Every similarity in the crate is the cosine of unit-normalized rows, which
//! on unit vectors orders items exactly like ascending Euclidean distance.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic prefix of the packed descriptor format.
pub const PACKED_MAGIC: &[u8; 4] = b"DSET";

/// On-disk descriptor encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorFormat {
    /// `id,v1,v2,...,vdim` per line.
    Csv,
    /// `DSET`, u32 LE count, u32 LE dim, count*dim f32 LE, row-major.
    Packed,
}

impl DescriptorFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DescriptorFormat::Csv => "csv",
            DescriptorFormat::Packed => "dset",
        }
    }
}

impl FromStr for DescriptorFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DescriptorFormat::Csv),
            "packed" => Ok(DescriptorFormat::Packed),
            other => Err(Error::InvalidParameter(format!(
                "unknown descriptor format {other:?} (expected csv|packed)"
            ))),
        }
    }
}

/// Id-indexed matrix of feature vectors, one row per item.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    ids: Vec<Arc<str>>,
    dim: usize,
    vectors: Vec<f64>,
    normalized: bool,
    index: HashMap<Arc<str>, usize>,
}

impl DescriptorSet {
    /// Builds a set from row-major values. The result is marked unnormalized.
    pub fn new(ids: Vec<String>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("descriptor set has no rows".into()));
        }
        if dim < 2 {
            return Err(Error::InvalidParameter(format!(
                "descriptor dim must be >= 2, got {dim}"
            )));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                got: vectors.len(),
            });
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row: pos / dim,
                msg: "non-finite value".into(),
            });
        }
        let ids: Vec<Arc<str>> = ids.into_iter().map(Arc::from).collect();
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Parse {
                    row: i,
                    msg: format!("duplicate id {id:?}"),
                });
            }
        }
        Ok(Self {
            ids,
            dim,
            vectors,
            normalized: false,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub(crate) fn id_arc(&self, i: usize) -> &Arc<str> {
        &self.ids[i]
    }

    pub fn ids(&self) -> impl ExactSizeIterator<Item = &str> + '_ {
        self.ids.iter().map(|s| &**s)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.vectors
    }

    /// Returns a copy whose ids are prefixed with `prefix`.
    pub fn with_id_prefix(&self, prefix: &str) -> Result<Self> {
        let ids = self.ids().map(|id| format!("{prefix}{id}")).collect();
        let mut out = Self::new(ids, self.dim, self.vectors.clone())?;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Cosine similarity of every row against `query`.
    pub fn similarities(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        Ok(self.rows().map(|r| dot(r, query)).collect())
    }

    pub fn write(&self, path: &Path, format: DescriptorFormat) -> Result<()> {
        match format {
            DescriptorFormat::Csv => self.write_csv(path),
            DescriptorFormat::Packed => self.write_packed(path),
        }
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, id) in self.ids().enumerate() {
            let mut line = String::from(id);
            for v in self.row(i) {
                line.push(',');
                line.push_str(&v.to_string());
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_packed(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + self.vectors.len() * 4);
        buf.extend_from_slice(PACKED_MAGIC);
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.vectors {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Reads a descriptor file. Row order is preserved; the result is unnormalized.
///
/// Packed files carry no ids, so rows are labelled by their decimal index.
pub fn load_descriptors(path: &Path, format: DescriptorFormat) -> Result<DescriptorSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::Empty(format!("{} is empty", path.display())));
    }
    match format {
        DescriptorFormat::Csv => parse_csv(&bytes),
        DescriptorFormat::Packed => parse_packed(&bytes),
    }
}

fn parse_csv(bytes: &[u8]) -> Result<DescriptorSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut dim = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let width = record.len().saturating_sub(1);
        let expected = *dim.get_or_insert(width);
        if width != expected || width == 0 {
            return Err(Error::Parse {
                row,
                msg: format!("expected {expected} values, found {width}"),
            });
        }
        ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("not a number: {field:?}"),
            })?;
            values.push(v);
        }
    }
    let dim = dim.ok_or_else(|| Error::Empty("csv has no rows".into()))?;
    DescriptorSet::new(ids, dim, values)
}

fn parse_packed(bytes: &[u8]) -> Result<DescriptorSet> {
    if bytes.len() < 12 {
        return Err(Error::Corrupt {
            offset: bytes.len(),
            msg: "truncated header".into(),
        });
    }
    if &bytes[..4] != PACKED_MAGIC {
        return Err(Error::Corrupt {
            offset: 0,
            msg: "bad magic, expected DSET".into(),
        });
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if count == 0 {
        return Err(Error::Empty("packed file declares zero rows".into()));
    }
    let payload = &bytes[12..];
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Corrupt {
            offset: 4,
            msg: "header size overflow".into(),
        })?;
    if payload.len() != expected {
        return Err(Error::Corrupt {
            offset: 12 + payload.len().min(expected),
            msg: format!(
                "payload has {} bytes, header implies {expected}",
                payload.len()
            ),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let ids = (0..count).map(|i| i.to_string()).collect();
    DescriptorSet::new(ids, dim, values)
}

const UNIT_NORM_SLACK: f64 = 4.0 * f64::EPSILON;

/// Scales every row to unit Euclidean norm.
///
/// A set already flagged as normalized is returned untouched, and rows whose
/// norm is within a few ulps of 1 keep their bits, so normalizing twice gives
/// bitwise the same vectors as normalizing once.
pub fn l2_normalize(ds: DescriptorSet) -> Result<DescriptorSet> {
    if ds.normalized {
        return Ok(ds);
    }
    let mut ds = ds;
    let dim = ds.dim;
    for (i, row) in ds.vectors.chunks_exact_mut(dim).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm(ds.ids[i].to_string()));
        }
        if (norm - 1.0).abs() > UNIT_NORM_SLACK {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    ds.normalized = true;
    Ok(ds)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two unit vectors, i.e. their dot product.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(dot(a, b))
}

/// Query id → ids of the relevant database items.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruth {
    positives: BTreeMap<String, BTreeSet<String>>,
}

impl GroundTruth {
    pub fn new(positives: BTreeMap<String, BTreeSet<String>>) -> Result<Self> {
        for (q, set) in &positives {
            if set.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "query {q:?} has no positives"
                )));
            }
            if set.contains(q) {
                return Err(Error::InvalidParameter(format!(
                    "query {q:?} lists itself as a positive"
                )));
            }
        }
        Ok(Self { positives })
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn positives(&self, query: &str) -> Option<&BTreeSet<String>> {
        self.positives.get(query)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> + '_ {
        self.positives.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Checks that every query exists in `queries` and every positive in `database`.
    pub fn validate(&self, database: &DescriptorSet, queries: &DescriptorSet) -> Result<()> {
        for (q, set) in &self.positives {
            if queries.index_of(q).is_none() {
                return Err(Error::UnknownId(q.clone()));
            }
            if let Some(missing) = set.iter().find(|id| database.index_of(id).is_none()) {
                return Err(Error::UnknownId(missing.clone()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let positives: BTreeMap<String, BTreeSet<String>> = serde_json::from_str(&text)?;
        Self::new(positives)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// One entry of a [`Ranking`].
#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub index: usize,
    pub id: Arc<str>,
    pub score: f64,
}

/// Database items ordered by descending score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ranking {
    entries: Vec<RankedItem>,
}

impl Ranking {
    /// Wraps entries that are already sorted by non-increasing score.
    pub fn from_sorted(entries: Vec<RankedItem>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].score >= w[1].score));
        Self { entries }
    }

    /// Ranking by raw cosine similarity, optionally skipping one database index.
    pub fn by_cosine(ds: &DescriptorSet, query: &[f64], exclude: Option<usize>) -> Result<Self> {
        let sims = ds.similarities(query)?;
        let mut order: Vec<usize> = (0..ds.len()).filter(|&i| Some(i) != exclude).collect();
        sort_desc_by_score(&mut order, &sims);
        Ok(Self::from_sorted(
            order
                .into_iter()
                .map(|i| RankedItem {
                    index: i,
                    id: ds.id_arc(i).clone(),
                    score: sims[i],
                })
                .collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RankedItem] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| &*e.id)
    }
}

/// Sorts indices by descending score, breaking ties by ascending index.
pub(crate) fn sort_desc_by_score(order: &mut [usize], scores: &[f64]) {
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
}

/// Shape of the two concentric noisy arcs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_per_class: usize,
    pub noise_sigma: f64,
    pub ambient_dim: usize,
    pub seed: u64,
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Angular extent of both arcs, radians.
    pub arc_span: f64,
    /// Offset of the arc centre from the origin. Keeps the arcs apart after
    /// unit normalization.
    pub lift: f64,
}

impl SyntheticConfig {
    pub fn new(n_per_class: usize, noise_sigma: f64, ambient_dim: usize, seed: u64) -> Self {
        Self {
            n_per_class,
            noise_sigma,
            ambient_dim,
            seed,
            inner_radius: 1.0,
            outer_radius: 1.5,
            arc_span: std::f64::consts::PI,
            lift: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_per_class < 10 {
            return bad(format!("n_per_class must be >= 10, got {}", self.n_per_class));
        }
        if self.ambient_dim < 2 {
            return bad(format!("ambient_dim must be >= 2, got {}", self.ambient_dim));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.inner_radius > 0.0 && self.outer_radius > 0.0) {
            return bad("arc radii must be positive".into());
        }
        if !(self.arc_span > 0.0 && self.lift > 0.0) {
            return bad("arc_span and lift must be positive".into());
        }
        Ok(())
    }

    /// Centre of both arcs in ambient coordinates.
    pub fn centre(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.ambient_dim];
        if self.ambient_dim >= 3 {
            c[2] = self.lift;
        } else {
            c[1] = self.lift;
        }
        c
    }

    pub fn radius(&self, class: usize) -> f64 {
        if class == 0 {
            self.inner_radius
        } else {
            self.outer_radius
        }
    }

    /// Unnormalized points: `counts[c]` samples of class `c`, row-major, with labels.
    ///
    /// Both classes draw from one seeded stream, class 0 first.
    pub fn sample_raw(&self, counts: [usize; 2]) -> (Vec<f64>, Vec<usize>) {
        let dim = self.ambient_dim;
        let centre = self.centre();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut values = Vec::with_capacity((counts[0] + counts[1]) * dim);
        let mut labels = Vec::with_capacity(counts[0] + counts[1]);
        for (class, &count) in counts.iter().enumerate() {
            let r = self.radius(class);
            for _ in 0..count {
                let t = rng.random_range(0.0..self.arc_span);
                let mut p = centre.clone();
                p[0] += r * t.cos();
                p[1] += r * t.sin();
                for v in p.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += self.noise_sigma * z;
                }
                values.extend_from_slice(&p);
                labels.push(class);
            }
        }
        (values, labels)
    }
}

/// Database, held-out queries and their ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub database: DescriptorSet,
    pub queries: DescriptorSet,
    pub ground_truth: GroundTruth,
}

fn class_id(class: usize, i: usize) -> String {
    format!("a{class}-{i:05}")
}

/// Two interleaved arcs, unit-normalized; every item is a query whose
/// positives are the other items of its arc.
pub fn generate_synthetic_manifolds(
    n_per_class: usize,
    noise_sigma: f64,
    ambient_dim: usize,
    seed: u64,
) -> Result<(DescriptorSet, GroundTruth)> {
    let cfg = SyntheticConfig::new(n_per_class, noise_sigma, ambient_dim, seed);
    cfg.validate()?;
    let (values, labels) = cfg.sample_raw([n_per_class, n_per_class]);
    let ids: Vec<String> = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| class_id(c, i - c * n_per_class))
        .collect();
    let ds = l2_normalize(DescriptorSet::new(ids.clone(), ambient_dim, values)?)?;
    let mut by_class: [BTreeSet<String>; 2] = Default::default();
    for (id, &c) in ids.iter().zip(&labels) {
        by_class[c].insert(id.clone());
    }
    let positives = ids
        .iter()
        .zip(&labels)
        .map(|(id, &c)| {
            let mut set = by_class[c].clone();
            set.remove(id);
            (id.clone(), set)
        })
        .collect();
    Ok((ds, GroundTruth::new(positives)?))
}

/// Like [`generate_synthetic_manifolds`] but with `n_queries` extra samples
/// held out of the database (split evenly across the two arcs).
pub fn generate_synthetic_task(cfg: &SyntheticConfig, n_queries: usize) -> Result<SyntheticTask> {
    cfg.validate()?;
    if n_queries == 0 {
        return Err(Error::InvalidParameter("n_queries must be >= 1".into()));
    }
    let n = cfg.n_per_class;
    let q = [n_queries - n_queries / 2, n_queries / 2];
    let (values, labels) = cfg.sample_raw([n + q[0], n + q[1]]);
    let dim = cfg.ambient_dim;

    let mut db_ids = Vec::new();
    let mut db_vals = Vec::new();
    let mut q_ids = Vec::new();
    let mut q_vals = Vec::new();
    let mut q_class = Vec::new();
    let mut seen = [0usize; 2];
    for (row, &c) in values.chunks_exact(dim).zip(&labels) {
        let i = seen[c];
        seen[c] += 1;
        if i < n {
            db_ids.push(class_id(c, i));
            db_vals.extend_from_slice(row);
        } else {
            q_ids.push(format!("q{c}-{:03}", i - n));
            q_vals.extend_from_slice(row);
            q_class.push(c);
        }
    }
    let positives = q_ids
        .iter()
        .zip(&q_class)
        .map(|(qid, &c)| (qid.clone(), (0..n).map(|i| class_id(c, i)).collect()))
        .collect();
    Ok(SyntheticTask {
        database: l2_normalize(DescriptorSet::new(db_ids, dim, db_vals)?)?,
        queries: l2_normalize(DescriptorSet::new(q_ids, dim, q_vals)?)?,
        ground_truth: GroundTruth::new(positives)?,
    })
}

//! Experiment orchestration behind the `difftune` command line: loading
//! inputs, building graphs, running tuners and writing the fixed output
//! layout of one experiment directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic_task, l2_normalize, load_descriptors, DescriptorFormat, DescriptorSet, GroundTruth, SyntheticConfig, SyntheticTask};
use crate::diffusion::DiffusionParams;
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::graph::{build_bruteforce, build_lsh_approx, edge_recall, load_graph, save_graph, KnnGraph};
use crate::tuners::{
    run_ga, run_grid_search, run_pso, run_random_search, DiffusionObjective, GaConfig, GridConfig, ParamRanges, PsoConfig,
    RandomSearchConfig, RepeatStats, RetrievalTask, TuneReport,
};

/// Fixed file names inside an experiment directory.
pub mod files {
    pub const DATABASE_STEM: &str = "database";
    pub const QUERIES_STEM: &str = "queries";
    pub const GROUND_TRUTH: &str = "gt.json";
    pub const GRAPH: &str = "graph.json";
    pub const REPORT: &str = "report.json";
    pub const CONVERGENCE: &str = "convergence.csv";
    pub const LOG: &str = "run.log";
    pub const METRICS: &str = "metrics.json";
    pub const PER_QUERY: &str = "per_query.csv";
    pub const SUMMARY: &str = "summary.json";
}

/// Prefix given to query ids read from packed files, which carry no ids.
pub const PACKED_QUERY_PREFIX: &str = "q";

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    /// Bad flags, invalid configuration, missing inputs. Exit code 1.
    #[error("configuration error: {0}")]
    Config(String),
    /// Anything that failed while running. Exit code 2.
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CommandError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CommandError::Config(_) => 1,
            CommandError::Runtime(Error::InvalidParameter(_) | Error::GridTooLarge { .. }) => 1,
            CommandError::Runtime(_) => 2,
        }
    }
}

pub type CommandResult<T> = std::result::Result<T, CommandError>;

fn require_file(path: &Path, what: &str) -> CommandResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CommandError::Config(format!("{what} file {} does not exist", path.display())))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphBackend {
    Bruteforce,
    Lsh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub backend: GraphBackend,
    pub k: usize,
    pub lsh_tables: usize,
    pub lsh_bits: usize,
    pub lsh_seed: u64,
}

impl GraphConfig {
    pub fn new(backend: GraphBackend, k: usize) -> Self {
        Self {
            backend,
            k,
            lsh_tables: 20,
            lsh_bits: 8,
            lsh_seed: 0,
        }
    }
}

/// Builds the configured graph and returns it with its build time in seconds.
pub fn build_graph(ds: &DescriptorSet, cfg: &GraphConfig) -> Result<(KnnGraph, f64)> {
    let k = cfg.k.min(ds.len().saturating_sub(1)).max(1);
    let start = Instant::now();
    let g = match cfg.backend {
        GraphBackend::Bruteforce => build_bruteforce(ds, k)?,
        GraphBackend::Lsh => build_lsh_approx(ds, k, cfg.lsh_tables, cfg.lsh_bits, cfg.lsh_seed)?,
    };
    Ok((g, start.elapsed().as_secs_f64()))
}

/// Where the inputs of an experiment live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub dataset: PathBuf,
    pub format: DescriptorFormat,
    /// Query descriptors; when absent the database items are the queries.
    pub queries: Option<PathBuf>,
    pub gt: PathBuf,
}

impl DatasetPaths {
    pub fn check(&self) -> CommandResult<()> {
        require_file(&self.dataset, "dataset")?;
        if let Some(q) = &self.queries {
            require_file(q, "queries")?;
        }
        require_file(&self.gt, "ground truth")
    }

    /// Loads and normalizes database and queries, plus the ground truth.
    pub fn load(&self) -> Result<(DescriptorSet, DescriptorSet, GroundTruth)> {
        let database = l2_normalize(load_descriptors(&self.dataset, self.format)?)?;
        let queries = match &self.queries {
            Some(p) => {
                let q = load_descriptors(p, self.format)?;
                let q = match self.format {
                    DescriptorFormat::Packed => q.with_id_prefix(PACKED_QUERY_PREFIX)?,
                    DescriptorFormat::Csv => q,
                };
                l2_normalize(q)?
            }
            None => database.clone(),
        };
        let gt = GroundTruth::load(&self.gt)?;
        Ok((database, queries, gt))
    }
}

/// Where the graph comes from: built on the fly or read from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphSource {
    Build(GraphConfig),
    File(PathBuf),
}

/// Loads inputs and prepares the graph. Returns graph build seconds when built.
pub fn prepare_task(paths: &DatasetPaths, source: &GraphSource) -> Result<(RetrievalTask, Option<f64>)> {
    let (database, queries, gt) = paths.load()?;
    let (graph, seconds) = match source {
        GraphSource::Build(cfg) => {
            let (g, s) = build_graph(&database, cfg)?;
            (g, Some(s))
        }
        GraphSource::File(p) => (load_graph(p)?, None),
    };
    Ok((RetrievalTask::new(database, queries, gt, graph)?, seconds))
}

/// Tuner choice plus its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum MethodConfig {
    Ga(GaConfig),
    Pso(PsoConfig),
    Random(RandomSearchConfig),
    Grid(GridConfig),
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::Ga(_) => "ga",
            MethodConfig::Pso(_) => "pso",
            MethodConfig::Random(_) => "random",
            MethodConfig::Grid(_) => "grid",
        }
    }

    /// Validated configuration with defaults applied (e.g. even GA population).
    pub fn effective(&self) -> Result<Self> {
        Ok(match self {
            MethodConfig::Ga(c) => MethodConfig::Ga(c.effective()?),
            MethodConfig::Pso(c) => {
                c.validate()?;
                self.clone()
            }
            MethodConfig::Random(c) => {
                if c.budget == 0 {
                    return Err(Error::InvalidParameter("budget must be >= 1".into()));
                }
                self.clone()
            }
            MethodConfig::Grid(_) => self.clone(),
        })
    }
}

/// Full effective configuration of a tuning experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub inputs: DatasetPaths,
    pub graph: GraphSource,
    pub method: MethodConfig,
    pub large_ranges: bool,
    /// Effective ranges; filled from the dataset size when absent.
    pub ranges: Option<ParamRanges>,
    pub seed: u64,
}

/// Runs the configured tuner over a prepared task.
pub fn tune(task: &RetrievalTask, method: &MethodConfig, ranges: &ParamRanges) -> Result<TuneReport> {
    let objective = DiffusionObjective::new(task);
    let mut report = match method {
        MethodConfig::Ga(c) => run_ga(c, ranges, &objective)?,
        MethodConfig::Pso(c) => run_pso(c, ranges, &objective)?,
        MethodConfig::Random(c) => run_random_search(c, ranges, &objective)?,
        MethodConfig::Grid(c) => run_grid_search(c, ranges, &objective)?,
    };
    report.best_params = Some(objective.params(&report.best_genome));
    Ok(report)
}

/// Outcome of [`cmd_tune`].
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub report: TuneReport,
    pub dir: PathBuf,
}

/// `tune`: prepare, run, write `report.json`, `convergence.csv`, `run.log` and
/// (when built) `graph.json` into `out`.
pub fn cmd_tune(cfg: &ExperimentConfig, out: &Path) -> CommandResult<TuneOutcome> {
    cfg.inputs.check()?;
    if let GraphSource::File(p) = &cfg.graph {
        require_file(p, "graph")?;
    }
    let method = cfg.method.effective()?;
    let (task, graph_seconds) = prepare_task(&cfg.inputs, &cfg.graph)?;
    let ranges = match &cfg.ranges {
        Some(r) => {
            r.validate()?;
            r.clone()
        }
        None => ParamRanges::for_dataset(task.database.len(), cfg.large_ranges),
    };
    let effective = ExperimentConfig {
        method: method.clone(),
        ranges: Some(ranges.clone()),
        ..cfg.clone()
    };

    ensure_dir(out)?;
    if matches!(cfg.graph, GraphSource::Build(_)) {
        save_graph(&task.graph, &out.join(files::GRAPH))?;
    }
    let mut report = tune(&task, &method, &ranges)?;
    report.graph_seconds = graph_seconds;
    report.config = serde_json::json!({
        "experiment": serde_json::to_value(&effective).map_err(Error::from)?,
        "method": report.config,
    });
    report.save(&out.join(files::REPORT))?;
    report.save_convergence_csv(&out.join(files::CONVERGENCE))?;

    let mut log = String::new();
    let _ = writeln!(log, "method={} dataset={} queries={}", method.name(), task.database.len(), task.ground_truth.len());
    if let Some(s) = graph_seconds {
        let _ = writeln!(log, "graph_build_seconds={s:.3}");
    }
    let _ = writeln!(log, "fitness_evaluations={} pipeline_runs={} cache_hits={}", report.fitness_evaluations, report.pipeline_runs, report.cache_hits);
    let _ = writeln!(log, "best_fitness={} best_params={}", report.best_fitness, serde_json::to_string(&report.best_params).map_err(Error::from)?);
    let _ = writeln!(log, "{}", report.summary_row());
    write_text(&out.join(files::LOG), &log)?;
    Ok(TuneOutcome {
        report,
        dir: out.to_path_buf(),
    })
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub baseline: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<DiffusionParams>,
    pub metrics: MetricReport,
}

/// `evaluate`: mAP of diffusion with `params`, or of raw cosine when `params`
/// is `None`. Writes `metrics.json` and `per_query.csv`.
pub fn cmd_evaluate(inputs: &DatasetPaths, graph: &GraphSource, params: Option<DiffusionParams>, out: &Path) -> CommandResult<EvaluationReport> {
    inputs.check()?;
    if let Some(p) = &params {
        p.validate()?;
    }
    let (task, _) = prepare_task(inputs, graph)?;
    let params = params.map(|p| p.clamped(task.database.len()));
    let metrics = match &params {
        Some(p) => task.evaluate_params(p)?,
        None => task.baseline()?,
    };
    let report = EvaluationReport {
        baseline: params.is_none(),
        params,
        metrics,
    };
    ensure_dir(out)?;
    write_text(&out.join(files::METRICS), &(serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"))?;
    let mut csv = String::from("query,ap\n");
    for (q, ap) in &report.metrics.per_query_ap {
        let _ = writeln!(csv, "{q},{ap}");
    }
    write_text(&out.join(files::PER_QUERY), &csv)?;
    Ok(report)
}

/// What [`cmd_build_graph`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBuildOutcome {
    pub n: usize,
    pub edges: usize,
    pub build_seconds: f64,
    /// Brute-force build time and edge recall, when compared.
    pub comparison: Option<(f64, f64)>,
}

/// `build-graph`: builds the chosen backend and writes `graph.json`. With
/// `compare`, an LSH build is also measured against brute force.
pub fn cmd_build_graph(dataset: &Path, format: DescriptorFormat, cfg: &GraphConfig, compare: bool, out: &Path) -> CommandResult<GraphBuildOutcome> {
    require_file(dataset, "dataset")?;
    if cfg.k == 0 {
        return Err(CommandError::Config("graph k must be >= 1".into()));
    }
    let ds = l2_normalize(load_descriptors(dataset, format)?)?;
    let (g, secs) = build_graph(&ds, cfg)?;
    ensure_dir(out)?;
    save_graph(&g, &out.join(files::GRAPH))?;
    let comparison = if compare && cfg.backend == GraphBackend::Lsh {
        let (exact, exact_secs) = build_graph(&ds, &GraphConfig { backend: GraphBackend::Bruteforce, ..cfg.clone() })?;
        Some((exact_secs, edge_recall(&g, &exact)?))
    } else {
        None
    };
    Ok(GraphBuildOutcome {
        n: g.n(),
        edges: g.edge_count(),
        build_seconds: secs,
        comparison,
    })
}

/// Paths written by [`cmd_gen_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFiles {
    pub database: PathBuf,
    pub queries: PathBuf,
    pub ground_truth: PathBuf,
}

/// Renames ids to what the packed format can represent: database rows by
/// index, queries by `q` + index.
fn relabel_for_packed(task: &SyntheticTask) -> Result<SyntheticTask> {
    let db_ids: Vec<String> = (0..task.database.len()).map(|i| i.to_string()).collect();
    let q_ids: Vec<String> = (0..task.queries.len()).map(|i| format!("{PACKED_QUERY_PREFIX}{i}")).collect();
    let db_map: BTreeMap<&str, &str> = task.database.ids().zip(db_ids.iter().map(String::as_str)).collect();
    let q_map: BTreeMap<&str, &str> = task.queries.ids().zip(q_ids.iter().map(String::as_str)).collect();
    let positives = task
        .ground_truth
        .iter()
        .map(|(q, set)| (q_map[q].to_string(), set.iter().map(|p| db_map[p.as_str()].to_string()).collect()))
        .collect();
    let relabel = |ds: &DescriptorSet, ids: Vec<String>| -> Result<DescriptorSet> {
        l2_normalize(DescriptorSet::new(ids, ds.dim(), ds.values().to_vec())?)
    };
    Ok(SyntheticTask {
        database: relabel(&task.database, db_ids.clone())?,
        queries: relabel(&task.queries, q_ids.clone())?,
        ground_truth: GroundTruth::new(positives)?,
    })
}

/// `gen-synthetic`: writes the two-arc database, held-out queries and ground truth.
pub fn cmd_gen_synthetic(cfg: &SyntheticConfig, n_queries: usize, format: DescriptorFormat, out: &Path) -> CommandResult<GeneratedFiles> {
    cfg.validate().map_err(|e| CommandError::Config(e.to_string()))?;
    if n_queries == 0 {
        return Err(CommandError::Config("n_queries must be >= 1".into()));
    }
    let mut task = generate_synthetic_task(cfg, n_queries)?;
    if format == DescriptorFormat::Packed {
        task = relabel_for_packed(&task)?;
    }
    ensure_dir(out)?;
    let files = GeneratedFiles {
        database: out.join(format!("{}.{}", files::DATABASE_STEM, format.extension())),
        queries: out.join(format!("{}.{}", files::QUERIES_STEM, format.extension())),
        ground_truth: out.join(files::GROUND_TRUTH),
    };
    task.database.write(&files.database, format)?;
    task.queries.write(&files.queries, format)?;
    task.ground_truth.save(&files.ground_truth)?;
    Ok(files)
}

/// One line of the method comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub source: String,
    pub method: String,
    pub fitness_evaluations: usize,
    pub seconds: f64,
    pub best_fitness: f64,
}

/// Comparison table plus best-fitness spread per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub repeatability: BTreeMap<String, RepeatStats>,
}

impl Summary {
    pub fn from_reports(reports: &[(String, TuneReport)]) -> Self {
        let rows = reports
            .iter()
            .map(|(src, r)| SummaryRow {
                source: src.clone(),
                method: r.method.clone(),
                fitness_evaluations: r.fitness_evaluations,
                seconds: r.total_seconds(),
                best_fitness: r.best_fitness,
            })
            .collect();
        let mut by_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (_, r) in reports {
            by_method.entry(r.method.clone()).or_default().push(r.best_fitness);
        }
        let repeatability = by_method
            .into_iter()
            .filter_map(|(m, v)| RepeatStats::from_values(&v).map(|s| (m, s)))
            .collect();
        Self { rows, repeatability }
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<8} {:>8} {:>12} {:>9}  source\n", "method", "evals", "time", "best");
        for r in &self.rows {
            let _ = writeln!(out, "{:<8} {:>8} {:>10.2} s {:>9.4}  {}", r.method, r.fitness_evaluations, r.seconds, r.best_fitness, r.source);
        }
        for (m, s) in &self.repeatability {
            let _ = writeln!(out, "{m}: runs={} avg={:.4} stdev={:.4} min={:.4} max={:.4}", s.runs, s.mean, s.stdev, s.min, s.max);
        }
        out
    }
}

/// `report`: reads tune reports and writes `summary.json` when `out` is given.
pub fn cmd_report(reports: &[PathBuf], out: Option<&Path>) -> CommandResult<Summary> {
    if reports.is_empty() {
        return Err(CommandError::Config("no reports given".into()));
    }
    let mut loaded = Vec::new();
    for p in reports {
        require_file(p, "report")?;
        loaded.push((p.display().to_string(), TuneReport::load(p)?));
    }
    let summary = Summary::from_reports(&loaded);
    if let Some(out) = out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        write_text(out, &(serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n"))?;
    }
    Ok(summary)
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use difftune::data::{DescriptorFormat, SyntheticConfig};
use difftune::diffusion::DiffusionParams;
use difftune::harness::{
    cmd_build_graph, cmd_evaluate, cmd_gen_synthetic, cmd_report, cmd_tune, CommandError, CommandResult, DatasetPaths,
    ExperimentConfig, GraphBackend, GraphConfig, GraphSource, MethodConfig,
};
use difftune::tuners::{GaConfig, GridConfig, PsoConfig, RandomSearchConfig, GENE_COUNT};

#[derive(Parser, Debug)]
#[command(name = "difftune", version, about = "Diffusion re-ranking on kNN graphs with parameter tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a two-arc synthetic database, held-out queries and ground truth.
    GenSynthetic(GenArgs),
    /// Build a kNN graph and write graph.json.
    BuildGraph(BuildGraphArgs),
    /// Compute mAP for one parameter set, or for raw cosine with --baseline.
    Evaluate(EvaluateArgs),
    /// Tune the diffusion parameters with the chosen method.
    Tune(TuneArgs),
    /// Aggregate tune reports into a comparison table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Packed,
}

impl From<FormatArg> for DescriptorFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => DescriptorFormat::Csv,
            FormatArg::Packed => DescriptorFormat::Packed,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Bruteforce,
    Lsh,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Ga,
    Pso,
    Random,
    Grid,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 500)]
    n_per_class: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Held-out queries, split across the two arcs.
    #[arg(long, default_value_t = 20)]
    n_queries: usize,
    #[arg(long, default_value_t = 1.0)]
    inner_radius: f64,
    #[arg(long, default_value_t = 1.5)]
    outer_radius: f64,
    /// Angular extent of each arc in radians.
    #[arg(long, default_value_t = std::f64::consts::PI)]
    arc_span: f64,
    /// Offset of the arc centre from the origin.
    #[arg(long, default_value_t = 2.0)]
    lift: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GraphArgs {
    #[arg(long, value_enum, default_value_t = BackendArg::Bruteforce)]
    graph: BackendArg,
    /// Neighbours per node; defaults to the upper bound of the k range.
    #[arg(long)]
    graph_k: Option<usize>,
    #[arg(long, default_value_t = 20)]
    lsh_tables: usize,
    #[arg(long, default_value_t = 8)]
    lsh_bits: usize,
    /// Read a prebuilt graph instead of building one.
    #[arg(long, conflicts_with = "graph")]
    graph_file: Option<PathBuf>,
}

impl GraphArgs {
    fn source(&self, default_k: usize, seed: u64) -> GraphSource {
        match &self.graph_file {
            Some(p) => GraphSource::File(p.clone()),
            None => GraphSource::Build(self.config(default_k, seed)),
        }
    }

    fn config(&self, default_k: usize, seed: u64) -> GraphConfig {
        let backend = match self.graph {
            BackendArg::Bruteforce => GraphBackend::Bruteforce,
            BackendArg::Lsh => GraphBackend::Lsh,
        };
        GraphConfig {
            lsh_tables: self.lsh_tables,
            lsh_bits: self.lsh_bits,
            lsh_seed: seed,
            ..GraphConfig::new(backend, self.graph_k.unwrap_or(default_k))
        }
    }
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Query descriptors; the database items are used when omitted.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    gt: PathBuf,
}

impl InputArgs {
    fn paths(&self) -> DatasetPaths {
        DatasetPaths {
            dataset: self.dataset.clone(),
            format: self.format.into(),
            queries: self.queries.clone(),
            gt: self.gt.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct BuildGraphArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long, value_enum, default_value_t = BackendArg::Bruteforce)]
    graph: BackendArg,
    #[arg(long, default_value_t = 40)]
    graph_k: usize,
    #[arg(long, default_value_t = 20)]
    lsh_tables: usize,
    #[arg(long, default_value_t = 8)]
    lsh_bits: usize,
    /// Also build the brute-force graph and report LSH edge recall.
    #[arg(long)]
    compare: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ParamArgs {
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, default_value_t = 3)]
    beta: u32,
    #[arg(long, default_value_t = 3)]
    gamma: u32,
    #[arg(long, default_value_t = 50)]
    k_s: usize,
    #[arg(long, default_value_t = 15)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    /// Candidates re-ranked per query; defaults to the whole database.
    #[arg(long, default_value_t = usize::MAX)]
    trunc: usize,
}

impl ParamArgs {
    fn params(&self) -> DiffusionParams {
        DiffusionParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            k_s: self.k_s,
            k: self.k,
            iterations: self.iterations,
            trunc: self.trunc,
        }
    }
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    params: ParamArgs,
    /// Rank by raw cosine similarity, without diffusion.
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Ga)]
    method: MethodArg,
    #[arg(long, default_value_t = 50)]
    generations: usize,
    #[arg(long, default_value_t = 50)]
    population: usize,
    #[arg(long, default_value_t = 0.3)]
    cxpb: f64,
    #[arg(long, default_value_t = 0.2)]
    mutpb: f64,
    #[arg(long, default_value_t = 0.1)]
    indpb: f64,
    #[arg(long, default_value_t = 50)]
    particles: usize,
    /// PSO evaluation rounds, the initial swarm included.
    #[arg(long, default_value_t = 100)]
    pso_iterations: usize,
    #[arg(long, default_value_t = 0.5)]
    vmax: f64,
    #[arg(long, default_value_t = 0.7298)]
    inertia: f64,
    #[arg(long, default_value_t = 1.49618)]
    cognitive: f64,
    #[arg(long, default_value_t = 1.49618)]
    social: f64,
    /// Evaluations for random search.
    #[arg(long, default_value_t = 600)]
    budget: usize,
    /// Levels per gene for grid search: one count, or seven comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "3")]
    grid_levels: Vec<usize>,
    #[arg(long, default_value_t = GridConfig::DEFAULT_CAP)]
    grid_cap: u64,
    /// Use the wider k_s and k bounds meant for large databases.
    #[arg(long)]
    large_ranges: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

impl TuneArgs {
    fn method(&self) -> CommandResult<MethodConfig> {
        Ok(match self.method {
            MethodArg::Ga => MethodConfig::Ga(GaConfig {
                generations: self.generations,
                population: self.population,
                cxpb: self.cxpb,
                mutpb: self.mutpb,
                indpb: self.indpb,
                seed: self.seed,
                ..GaConfig::default()
            }),
            MethodArg::Pso => MethodConfig::Pso(PsoConfig {
                particles: self.particles,
                iterations: self.pso_iterations,
                vmin: -self.vmax,
                vmax: self.vmax,
                inertia: self.inertia,
                cognitive: self.cognitive,
                social: self.social,
                seed: self.seed,
                ..PsoConfig::default()
            }),
            MethodArg::Random => MethodConfig::Random(RandomSearchConfig::new(self.budget, self.seed)),
            MethodArg::Grid => {
                let levels: [usize; GENE_COUNT] = match self.grid_levels.as_slice() {
                    [one] => [*one; GENE_COUNT],
                    many => many.try_into().map_err(|_| {
                        CommandError::Config(format!("--grid-levels needs 1 or {GENE_COUNT} values, got {}", many.len()))
                    })?,
                };
                MethodConfig::Grid(GridConfig {
                    cap: self.grid_cap,
                    ..GridConfig::new(levels)
                })
            }
        })
    }
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// report.json files written by `tune`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Where to write summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> CommandResult<()> {
    match cli.command {
        Command::GenSynthetic(a) => {
            let cfg = SyntheticConfig {
                inner_radius: a.inner_radius,
                outer_radius: a.outer_radius,
                arc_span: a.arc_span,
                lift: a.lift,
                ..SyntheticConfig::new(a.n_per_class, a.noise, a.dim, a.seed)
            };
            let files = cmd_gen_synthetic(&cfg, a.n_queries, a.format.into(), &a.out)?;
            println!("database {}", files.database.display());
            println!("queries {}", files.queries.display());
            println!("ground truth {}", files.ground_truth.display());
        }
        Command::BuildGraph(a) => {
            let backend = match a.graph {
                BackendArg::Bruteforce => GraphBackend::Bruteforce,
                BackendArg::Lsh => GraphBackend::Lsh,
            };
            let cfg = GraphConfig {
                lsh_tables: a.lsh_tables,
                lsh_bits: a.lsh_bits,
                lsh_seed: a.seed,
                ..GraphConfig::new(backend, a.graph_k)
            };
            let o = cmd_build_graph(&a.dataset, a.format.into(), &cfg, a.compare, &a.out)?;
            println!("graph n={} edges={} build_seconds={:.3}", o.n, o.edges, o.build_seconds);
            if let Some((exact_secs, recall)) = o.comparison {
                println!("bruteforce build_seconds={exact_secs:.3} edge_recall={recall:.4}");
            }
        }
        Command::Evaluate(a) => {
            let params = (!a.baseline).then(|| a.params.params());
            let default_k = a.params.k.max(40);
            let source = a.graph.source(default_k, a.seed);
            let r = cmd_evaluate(&a.inputs.paths(), &source, params, &a.out)?;
            let label = if r.baseline { "baseline" } else { "diffusion" };
            println!("{label} mAP={:.6} queries={}", r.metrics.map, r.metrics.n_queries);
        }
        Command::Tune(a) => {
            let method = a.method()?;
            let default_k = if a.large_ranges { 100 } else { 40 };
            let cfg = ExperimentConfig {
                inputs: a.inputs.paths(),
                graph: a.graph.source(default_k, a.seed),
                method,
                large_ranges: a.large_ranges,
                ranges: None,
                seed: a.seed,
            };
            let o = cmd_tune(&cfg, &a.out)?;
            println!("{}", o.report.summary_row());
        }
        Command::Report(a) => {
            let s = cmd_report(&a.reports, a.out.as_deref())?;
            print!("{}", s.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

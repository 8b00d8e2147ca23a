//! Black-box tuners over the seven diffusion parameters.

pub mod fitness;
pub mod ga;
pub mod genome;
pub mod pso;
pub mod report;
pub mod search;

pub use fitness::{DiffusionObjective, Evaluator, FitnessCache, FnObjective, Objective, ParamKey, RetrievalTask};
pub use ga::{crossover_at, mutate, run_ga, run_ga_observed, single_point_crossover, tournament_select, GaConfig};
pub use genome::{random_genome, GeneKind, GeneRange, Genome, ParamRanges, GENE_COUNT, GENE_NAMES};
pub use pso::{run_pso, PsoConfig};
pub use report::{BestBuffer, BufferEntry, IterationStats, RepeatStats, TuneReport};
pub use search::{run_grid_search, run_random_search, GridConfig, RandomSearchConfig};

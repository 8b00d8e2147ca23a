//! Diffusion re-ranking over kNN graphs, with genetic, swarm, random and grid
//! tuning of the diffusion parameters.

pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod graph;
pub mod harness;
pub mod tuners;

pub use data::{DescriptorFormat, DescriptorSet, GroundTruth, Ranking};
pub use diffusion::{diffuse, DiffusionParams, Query};
pub use error::{Error, Result};
pub use graph::KnnGraph;

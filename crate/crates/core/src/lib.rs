//! Sparse training of differentiable-architecture-search parameters with
//! small softmax temperatures.
//!
//! The pieces, bottom up:
//! - [`snsoftmax`]: tempered softmax, its Jacobian and the sparse-noisy
//!   backward rule that keeps gradients alive when `beta` saturates.
//! - [`schedules`]: linear, exponential-space, cyclic and entropy-driven
//!   temperature schedules.
//! - [`space`]: the supernet cell, its operations, discretization and
//!   genotypes.
//! - [`metrics`], [`data`], [`bilevel`]: entropy/accuracy measurement,
//!   synthetic tasks and the alternating search loop.

pub mod bilevel;
pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod report;
pub mod schedules;
pub mod snsoftmax;
pub mod space;

pub use bilevel::{
    run_search, run_search_from, SearchOutcome, SearchTrace, TraceRecord, TrainerConfig,
};
pub use config::SearchConfig;
pub use data::{generate, planted_optimum_task, Dataset, Sample};
pub use error::{Error, Result};
pub use metrics::{beta_entropy, discretized_accuracy, mean_edge_entropy, EntropyReport};
pub use schedules::{
    ScheduleConfig, ScheduleKind, ScheduleList, TemperatureController, TemperatureState,
};
pub use snsoftmax::{ScalePolicy, SoftmaxMode, TemperedDistribution};
pub use space::{Genotype, NetConfig, OpKind, SuperNet};

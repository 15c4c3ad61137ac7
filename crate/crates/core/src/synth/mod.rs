//! Semi-synthetic populations with known per-group ground truth, and a
//! benchmark that repeatedly samples from them.

pub mod benchmark;
pub mod model;
pub mod population;

pub use benchmark::{
    run_benchmark, BenchmarkConfig, BenchmarkReport, CoverageRow, ErrorRow, Failure, WidthRow, BUCKETS,
};
pub use model::{Emission, ModelChoice, SynthModel, Term, BUILTIN_MODELS};
pub use population::{
    allocate, compute_ground_truth, generate_population, largest_remainder, sample_evaluation_dataset, BaseProfile,
    CovariateProfile, MarginalAttribute, Population,
};

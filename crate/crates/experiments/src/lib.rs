//! Synthetic data, splits, grid search and the repetition benchmark.

pub mod benchmark;
pub mod correlation;
pub mod grid;
pub mod split;
pub mod synthetic;

pub use benchmark::{run_benchmark, BenchMethod, BenchmarkConfig, BenchmarkReport, MethodGrids};
pub use correlation::{correlation_study, CorrelationStudy};
pub use grid::{grid_search, GridConfig, GridOutcome, Metric};
pub use split::{split, split_indices, Split, SplitIndices};
pub use synthetic::{generate_synthetic, orthant_problem, SideRecipe, Synthetic, SyntheticSpec};

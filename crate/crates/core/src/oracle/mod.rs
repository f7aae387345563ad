//! Independent checks: a dense solve of the truncated chain and a Monte
//! Carlo simulator of the walk itself.

pub mod compare;
mod sampler;
pub mod simulate;
pub mod truncated;

pub use compare::{compare_cells, CellComparison, MIN_EXPECTED_VISITS};
pub use simulate::{
    estimate_exit_probability, simulate, simulate_passage, Direction, Estimate, PassageConfig,
    PassageStats, Per, SimBudget, SimConfig, SimStats,
};
pub use truncated::{default_truncation, truncated_solve, DENSE_LIMIT};

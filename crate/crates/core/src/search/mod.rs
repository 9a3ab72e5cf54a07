//! Budget-constrained search over pruning configurations.

pub mod dataset;
pub mod mcts;
pub mod oracle;

pub use dataset::{
    budget_grid, default_budget_grid, generate_dataset, parse_budget_grid, search_seed, Dataset, TrainingSample,
};
pub use mcts::{
    check_valid, clip_ratio, evaluate_config, perturbation_magnitude, run_search, search, ConstraintSpec,
    EvaluationRecord, FnReward, MemoEvaluator, PrunedAccuracy, RewardModel, SearchBudget, SearchNode, SearchResult,
    SearchTree,
};
pub use oracle::{brute_force_oracle, grid_values, random_search_baseline, OracleResult};

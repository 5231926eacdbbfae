//! Execution-plan search: per-layer sharding strategies and batch size
//! chosen from profiled costs, refined jointly with model hyperparameters.
//!
//! [`dp_bootstrap`] solves the memory-constrained latency minimization
//! exactly for one batch size. [`beam_search`] starts from that plan and
//! alternates between mutating the sharding plan and the hyperparameters,
//! scoring configurations by quality per unit of `flops^α` under latency
//! and quality constraints.

mod dp;
mod profile;
mod search;

pub use dp::{dp_bootstrap, dp_bootstrap_all_batches, estimate_max_batch, BatchOutcome, BootstrapReport, MAX_CAPACITY};
pub use profile::{ExecutionPlan, ProfileTable, StrategyId};
pub use search::{
    beam_search, beam_search_with, score, BeamSearchResult, Candidate, FlopsModel, HyperparamPoint,
    HyperparamSpace, KnobSpec, MonomialFlops, PhaseKind, PhaseRecord, Proposer, QualityModel, QualityOracle,
    RandomMutationProposer, RankedPlan, ScoreMode, Scored, SearchConfig,
};

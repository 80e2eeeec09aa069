//! Rule mining with Monte Carlo Tree Search, plus the pieces needed to turn
//! mined rules into text an LLM can consume.

pub mod bits;
pub mod dataset;
pub mod formulate;
pub mod gridworld;
pub mod mcts;
pub mod oracle;
pub mod pipeline;
pub mod ruleeval;
pub mod seed;
pub mod translate;

pub use bits::Bits;
pub use dataset::{
    Dataset, DatasetError, Predicate, PredicateId, PredicateKind, PredicateMatrix, PredicateRegistry, Target,
};
pub use mcts::{search, SearchConfig, SearchError, SearchReport, TaskProfile};
pub use ruleeval::{RewardMetric, Rule, RuleMetrics, Rulebook, ScoredRule};

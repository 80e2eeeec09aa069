//! Per-target mining: advice filtering, search, cleaning and pruning.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, PredicateMatrix};
use crate::formulate::{filter_body_predicates, FilterReport, FormulateError, FormulationAdvice};
use crate::mcts::{search, search_root_parallel, SearchConfig, SearchError, SearchReport};
use crate::ruleeval::{clean_rules, dominance_prune, RewardMetric, RuleError, RulebookEntry};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("formulate: {0}")]
    Formulate(#[from] FormulateError),
    #[error("search: {0}")]
    Search(#[from] SearchError),
    #[error("clean: {0}")]
    Rule(#[from] RuleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineOptions {
    pub search: SearchConfig,
    /// Independent search trees merged by key; 1 runs a single tree.
    pub workers: usize,
    /// Cleaning floor on the reward; unset means the terminal threshold for
    /// precision rewards and 0 otherwise.
    pub min_reward: Option<f64>,
    pub min_coverage_count: usize,
}

impl Default for MineOptions {
    fn default() -> Self {
        MineOptions {
            search: SearchConfig::default(),
            workers: 1,
            min_reward: None,
            min_coverage_count: 5,
        }
    }
}

impl MineOptions {
    pub fn effective_min_reward(&self) -> f64 {
        self.min_reward.unwrap_or(match self.search.reward_metric {
            RewardMetric::Precision => self.search.terminal_threshold,
            _ => 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRun {
    pub target: String,
    pub positives: usize,
    pub filter: FilterReport,
    pub search: SearchReport,
    pub harvested: usize,
    pub after_cleaning: usize,
    pub after_pruning: usize,
}

/// Filters the matrix by the advice, searches it, then cleans and prunes the
/// harvest. Entries reference predicate ids of the filtered matrix.
pub fn mine_target(
    matrix: &PredicateMatrix,
    advice: &FormulationAdvice,
    opts: &MineOptions,
) -> Result<(Vec<RulebookEntry>, TargetRun), PipelineError> {
    let (filtered, filter) = filter_body_predicates(advice, matrix)?;
    let report = if opts.workers > 1 {
        search_root_parallel(&filtered, &opts.search, opts.workers)?
    } else {
        search(&filtered, &opts.search)?
    };
    let harvested = report.rules();
    let n_harvested = harvested.len();
    let cleaned = clean_rules(harvested, opts.effective_min_reward(), opts.min_coverage_count);
    let after_cleaning = cleaned.len();
    let pruned = dominance_prune(cleaned);
    let entries = pruned
        .iter()
        .map(|r| RulebookEntry::from_scored(r, &filtered, opts.search.reward_metric))
        .collect::<Result<Vec<_>, _>>()?;
    let run = TargetRun {
        target: matrix.target_spec().name.clone(),
        positives: matrix.positives(),
        filter,
        search: report,
        harvested: n_harvested,
        after_cleaning,
        after_pruning: entries.len(),
    };
    Ok((entries, run))
}

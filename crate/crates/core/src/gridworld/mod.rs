//! Two-agent cooperative gridworld: environment, scripted plan, trajectory
//! datasets, rule mining over them and a rule-following agent.

mod agent;
mod data;
mod env;
mod map;
mod policy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agent::{evaluate, grounded_rulebook, EvalReport, ScriptedAgent};
pub use data::{episodes_to_dataset, grid_schema, observation_values, observed_targets, transition_sample, GridTarget};
pub use env::{
    Action, Block, Env, Observation, StepResult, NEIGHBOR_NAMES, REMOVABLE_PENALTY, TREASURE_REWARD, WALL_PENALTY,
};
pub use map::{agent_index, Cell, Color, GridMap, PlanStep, Pos, AGENT_NAMES, FIXTURE_MAP};
pub use policy::{
    collect_trajectories, episodes_from_json, episodes_to_json, optimal_action, replay_episode, run_episode, Episode,
    Outcome, Transition,
};

use crate::dataset::{build_matrix, build_predicate_space, Dataset, DatasetError, SpaceOptions};
use crate::formulate::{Advisor, HeuristicAdvisor, ProposedTarget, TaskDescription};
use crate::pipeline::{mine_target, MineOptions, PipelineError, TargetRun};
use crate::ruleeval::{Rulebook, RulebookMetadata};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("map: {0}")]
    Map(String),
    #[error("action `{0}` is not one of up, down, left, right, stand")]
    InvalidAction(String),
    #[error("episode is already done")]
    EpisodeDone,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn task_description(map: &GridMap) -> TaskDescription {
    TaskDescription {
        name: map.name.clone(),
        description: "Two agents, alice and bob, share a grid. Walls, a lever-opened removable wall, a \
                      key-opened door and a gate held open from a pressure block separate them from the \
                      treasure. They score by reaching the treasure within the step limit."
            .into(),
        schema_summary: "Per agent and step: offsets of self and teammate to the treasure, the 8 \
                         neighbouring blocks, the block stood on, both actions, and visited flags for \
                         yellow, purple and skyblue."
            .into(),
        label_semantics: "One dataset per rule head; label 1 when the head holds after the step.".into(),
        candidate_targets: GridTarget::all().into_iter().map(GridTarget::target).collect(),
    }
}

/// Stand-in for the formulation step on this environment: proposes every
/// head and drops predicates that never co-occur with the head.
pub fn default_advisor() -> HeuristicAdvisor {
    HeuristicAdvisor {
        exclude_zero_cooccurrence: true,
        proposed_targets: GridTarget::all()
            .into_iter()
            .map(|g| ProposedTarget {
                target: g.target(),
                rationale: "subgoal or hazard of the cooperative plan".into(),
            })
            .collect(),
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMineReport {
    pub runs: Vec<TargetRun>,
    /// Proposed heads with no positive sample in the episodes.
    pub skipped: Vec<String>,
}

/// Mines one rule set per head and merges them into a rulebook. Head `i`
/// searches with seed `derive_seed(opts.search.rng_seed, "gridworld-mine", i)`.
pub fn mine_rulebook(
    episodes: &[Episode],
    map: &GridMap,
    targets: &[GridTarget],
    advisor: &dyn Advisor,
    opts: &MineOptions,
) -> Result<(Rulebook, GridMineReport), GridError> {
    let observed = observed_targets(episodes);
    let task = task_description(map);
    let mut book = Rulebook::new(RulebookMetadata::default(), Vec::new());
    let mut report = GridMineReport {
        runs: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, &g) in targets.iter().enumerate() {
        if !observed.contains(&g) {
            report.skipped.push(g.name());
            continue;
        }
        let ds = Dataset::Table(episodes_to_dataset(episodes, g)?);
        let target = g.target();
        let registry = build_predicate_space(&ds, &target, &SpaceOptions::default())?;
        let matrix = build_matrix(&ds, &registry, &target)?;
        let advice = advisor
            .advise(&task, &matrix)
            .map_err(|e| GridError::Pipeline(PipelineError::Formulate(e)))?;
        let mut target_opts = *opts;
        target_opts.search.rng_seed = derive_seed(opts.search.rng_seed, "gridworld-mine", i as u64);
        let (entries, run) = mine_target(&matrix, &advice, &target_opts)?;
        for e in entries {
            book.push(e);
        }
        report.runs.push(run);
    }
    Ok((book, report))
}

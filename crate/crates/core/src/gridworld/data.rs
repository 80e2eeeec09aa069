use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::env::{Action, Block, Observation, NEIGHBOR_NAMES};
use super::map::{agent_index, Color, AGENT_NAMES};
use super::policy::{Episode, Transition};
use super::GridError;
use crate::dataset::{Domain, Feature, FeatureKind, FeatureSchema, Sample, TabularDataset, Target, TargetSource, Value};

/// Rule heads mined from gridworld episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridTarget {
    /// Someone walked into a closed removable wall this step.
    Penalty,
    /// The agent stands on the color after this step.
    StandsOn { color: Color, agent: usize },
    /// The agent moved onto the treasure this step.
    GameWin { agent: usize },
}

impl GridTarget {
    /// Every head a formulation step may propose on this environment.
    pub fn all() -> Vec<GridTarget> {
        let mut v = vec![GridTarget::Penalty];
        for color in Color::VISITABLE {
            for agent in 0..2 {
                v.push(GridTarget::StandsOn { color, agent });
            }
        }
        v.extend((0..2).map(|agent| GridTarget::GameWin { agent }));
        v
    }

    /// Agents whose perspective produces samples.
    pub fn perspectives(self) -> Vec<usize> {
        match self {
            GridTarget::Penalty => vec![0, 1],
            GridTarget::StandsOn { agent, .. } | GridTarget::GameWin { agent } => vec![agent],
        }
    }

    pub fn holds(self, t: &Transition) -> bool {
        match self {
            GridTarget::Penalty => t.removable_hits.iter().any(|&h| h),
            GridTarget::StandsOn { color, agent } => t.next_on[agent] == Block::of_color(color),
            GridTarget::GameWin { agent } => t.won_by == Some(agent),
        }
    }

    /// Head for a subgoal color pursued by `agent`.
    pub fn for_subgoal(color: Color, agent: usize) -> GridTarget {
        match color {
            Color::Green => GridTarget::GameWin { agent },
            color => GridTarget::StandsOn { color, agent },
        }
    }

    pub fn name(self) -> String {
        self.to_string()
    }

    /// Dataset target: label "1" on the per-target dataset, named after the head.
    pub fn target(self) -> Target {
        Target {
            name: self.name(),
            source: TargetSource::Label { class: "1".into() },
        }
    }
}

impl fmt::Display for GridTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridTarget::Penalty => write!(f, "penalty"),
            GridTarget::StandsOn { color, agent } => {
                write!(f, "stands_on({},{})", color.name(), AGENT_NAMES[*agent])
            }
            GridTarget::GameWin { agent } => write!(f, "game_win({})", AGENT_NAMES[*agent]),
        }
    }
}

impl FromStr for GridTarget {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, GridError> {
        let bad = || GridError::InvalidArgument(format!("unknown gridworld target `{s}`"));
        if s == "penalty" {
            return Ok(GridTarget::Penalty);
        }
        if let Some(rest) = s.strip_prefix("stands_on(").and_then(|r| r.strip_suffix(')')) {
            let (c, a) = rest.split_once(',').ok_or_else(bad)?;
            return Ok(GridTarget::StandsOn {
                color: c.trim().parse()?,
                agent: agent_index(a.trim())?,
            });
        }
        if let Some(a) = s.strip_prefix("game_win(").and_then(|r| r.strip_suffix(')')) {
            return Ok(GridTarget::GameWin {
                agent: agent_index(a.trim())?,
            });
        }
        Err(bad())
    }
}

fn neighbor_feature(i: usize) -> String {
    format!("self_nb_{}", NEIGHBOR_NAMES[i])
}

fn visited_feature(who: &str, c: Color) -> String {
    format!("{who}_visited_{}", c.name())
}

/// Feature columns, in sample order.
pub fn grid_schema() -> FeatureSchema {
    let cat = |name: String, values: &[&str]| Feature {
        name,
        kind: FeatureKind::Categorical,
        domain: if values.is_empty() {
            Domain::Unbounded
        } else {
            Domain::Values(values.iter().map(|s| s.to_string()).collect())
        },
    };
    let blocks = ["empty", "wall", "removable", "yellow", "purple", "skyblue", "green"];
    let actions = ["up", "down", "left", "right", "stand"];
    let mut f = vec![
        cat("self_dx".into(), &[]),
        cat("self_dy".into(), &[]),
        cat("mate_dx".into(), &[]),
        cat("mate_dy".into(), &[]),
    ];
    f.extend((0..8).map(|i| cat(neighbor_feature(i), &blocks)));
    f.push(cat("self_on".into(), &blocks));
    f.push(cat("mate_on".into(), &blocks));
    f.push(cat("self_act".into(), &actions));
    f.push(cat("mate_act".into(), &actions));
    for who in ["self", "mate"] {
        for c in Color::VISITABLE {
            f.push(Feature {
                name: visited_feature(who, c),
                kind: FeatureKind::Boolean,
                domain: Domain::Unbounded,
            });
        }
    }
    FeatureSchema::new(f).expect("feature names are distinct")
}

/// One row from `me`'s point of view. A missing teammate action is `Missing`.
pub fn observation_values(me: &Observation, mate: &Observation, act: Action, mate_act: Option<Action>) -> Vec<Value> {
    let cat = |s: String| Value::Cat(s);
    let mut v = vec![
        cat(me.dx.to_string()),
        cat(me.dy.to_string()),
        cat(mate.dx.to_string()),
        cat(mate.dy.to_string()),
    ];
    v.extend(me.neighbors.iter().map(|b| cat(b.name().to_string())));
    v.push(cat(me.on.name().to_string()));
    v.push(cat(mate.on.name().to_string()));
    v.push(cat(act.name().to_string()));
    v.push(mate_act.map_or(Value::Missing, |a| cat(a.name().to_string())));
    v.extend(me.visited.iter().map(|&b| Value::Bool(b)));
    v.extend(mate.visited.iter().map(|&b| Value::Bool(b)));
    v
}

pub fn transition_sample(t: &Transition, agent: usize, target: GridTarget) -> Sample {
    let mate = 1 - agent;
    Sample {
        values: observation_values(
            &t.observations[agent],
            &t.observations[mate],
            t.actions[agent],
            Some(t.actions[mate]),
        ),
        label: if target.holds(t) { "1" } else { "0" }.to_string(),
    }
}

/// One sample per step per perspective agent of `target`, labelled "1" when
/// the target holds for that step.
pub fn episodes_to_dataset(episodes: &[Episode], target: GridTarget) -> Result<TabularDataset, GridError> {
    if episodes.iter().all(Episode::is_empty) {
        return Err(GridError::InvalidArgument("no episode steps to convert".into()));
    }
    let perspectives = target.perspectives();
    let samples = episodes
        .iter()
        .flat_map(|e| &e.transitions)
        .flat_map(|t| perspectives.iter().map(move |&a| transition_sample(t, a, target)))
        .collect();
    Ok(TabularDataset::new(grid_schema(), samples)?)
}

/// Targets with at least one positive sample.
pub fn observed_targets(episodes: &[Episode]) -> BTreeSet<GridTarget> {
    GridTarget::all()
        .into_iter()
        .filter(|g| episodes.iter().flat_map(|e| &e.transitions).any(|t| g.holds(t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_matrix, build_predicate_space, evaluate_predicate, Dataset, SampleRef, SpaceOptions};
    use crate::gridworld::map::GridMap;
    use crate::gridworld::policy::collect_trajectories;

    #[test]
    fn target_names_round_trip() {
        for g in GridTarget::all() {
            assert_eq!(g.name().parse::<GridTarget>().unwrap(), g);
        }
        assert_eq!(
            GridTarget::StandsOn { color: Color::Skyblue, agent: 1 }.name(),
            "stands_on(skyblue,bob)"
        );
        assert!("stands_on(red,bob)".parse::<GridTarget>().is_err());
    }

    #[test]
    fn bob_stepping_onto_skyblue_is_positive() {
        let eps = collect_trajectories(&GridMap::fixture(), 1.0, 1, 0).unwrap();
        let target = GridTarget::StandsOn { color: Color::Skyblue, agent: 1 };
        let step = eps[0]
            .transitions
            .iter()
            .find(|t| t.actions[1] == Action::Right && t.next_on[1] == Block::Skyblue)
            .expect("bob walks right onto skyblue");
        assert_eq!(transition_sample(step, 1, target).label, "1");
        let win = eps[0].transitions.last().unwrap();
        assert_eq!(win.actions[0], Action::Up);
        assert_eq!(transition_sample(win, 0, GridTarget::GameWin { agent: 0 }).label, "1");
    }

    #[test]
    fn timeouts_have_no_game_win_labels() {
        let eps = collect_trajectories(&GridMap::fixture(), 0.0, 20, 1).unwrap();
        let timeouts: Vec<_> = eps.into_iter().filter(|e| e.outcome == super::super::policy::Outcome::Timeout).collect();
        assert!(!timeouts.is_empty());
        let ds = episodes_to_dataset(&timeouts, GridTarget::GameWin { agent: 0 }).unwrap();
        assert!(ds.samples().iter().all(|s| s.label == "0"));
    }

    #[test]
    fn perspective_counts() {
        let eps = collect_trajectories(&GridMap::fixture(), 0.7, 5, 2).unwrap();
        let steps: usize = eps.iter().map(|e| e.len()).sum();
        assert_eq!(episodes_to_dataset(&eps, GridTarget::Penalty).unwrap().samples().len(), 2 * steps);
        assert_eq!(
            episodes_to_dataset(&eps, GridTarget::GameWin { agent: 0 }).unwrap().samples().len(),
            steps
        );
        assert!(episodes_to_dataset(&[], GridTarget::Penalty).is_err());
    }

    #[test]
    fn matrix_columns_match_reevaluation() {
        let eps = collect_trajectories(&GridMap::fixture(), 0.7, 10, 5).unwrap();
        let target = GridTarget::Penalty;
        let ds = Dataset::Table(episodes_to_dataset(&eps, target).unwrap());
        let reg = build_predicate_space(&ds, &target.target(), &SpaceOptions::default()).unwrap();
        let m = build_matrix(&ds, &reg, &target.target()).unwrap();
        let Dataset::Table(table) = &ds else { unreachable!() };
        for p in m.registry().iter() {
            for (i, s) in table.samples().iter().enumerate() {
                let v = evaluate_predicate(&p.kind, SampleRef::Row { schema: table.schema(), sample: s }).unwrap();
                assert_eq!(v, m.column(p.id).unwrap().get(i));
            }
        }
    }
}

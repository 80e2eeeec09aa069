use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::{Action, Block, Env, Observation, StepResult};
use super::map::{Cell, Color, GridMap, Pos};
use super::GridError;
use crate::seed::{derive_seed, stage_rng};

/// BFS distances to `goal` over every non-wall cell, mechanical blocks
/// included regardless of their state.
fn distances_to(map: &GridMap, goal: Pos) -> Vec<Option<u32>> {
    let idx = |p: Pos| (p.y * map.width + p.x) as usize;
    let mut dist = vec![None; (map.width * map.height) as usize];
    dist[idx(goal)] = Some(0);
    let mut queue = VecDeque::from([goal]);
    while let Some(p) = queue.pop_front() {
        let d = dist[idx(p)].expect("queued cells have a distance");
        for a in Action::MOVES {
            let (dx, dy) = a.delta();
            let q = p.offset(dx, dy);
            if map.in_bounds(q) && map.cell(q) != Cell::Wall && dist[idx(q)].is_none() {
                dist[idx(q)] = Some(d + 1);
                queue.push_back(q);
            }
        }
    }
    dist
}

/// The scripted joint plan: each agent pursues its first unreached plan
/// step, moving along a shortest path and waiting in front of anything
/// still closed. Hold steps keep the agent in place once reached.
pub fn optimal_action(env: &Env, agent: usize) -> Action {
    let map = env.map();
    let pos = env.positions[agent];
    let step = map.plan.iter().find(|s| {
        s.agent == agent && (s.hold || s.color == Color::Green || !env.team_visited(s.color))
    });
    let Some(step) = step else {
        return Action::Stand;
    };
    let goal = map.special(step.color).expect("plan colors exist on the map");
    if pos == goal {
        return Action::Stand;
    }
    let dist = distances_to(map, goal);
    let at = |p: Pos| dist[(p.y * map.width + p.x) as usize];
    let Some(here) = at(pos) else {
        return Action::Stand;
    };
    for a in Action::MOVES {
        let (dx, dy) = a.delta();
        let q = pos.offset(dx, dy);
        if map.in_bounds(q) && at(q) == Some(here - 1) && env.block_at(q).passable() {
            return a;
        }
    }
    Action::Stand
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: usize,
    pub positions: [Pos; 2],
    pub observations: [Observation; 2],
    pub actions: [Action; 2],
    pub reward: f64,
    pub penalties: [f64; 2],
    pub removable_hits: [bool; 2],
    /// Standing block of each agent after the step.
    pub next_on: [Block; 2],
    pub won_by: Option<usize>,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub map: String,
    pub seed: u64,
    pub transitions: Vec<Transition>,
    pub outcome: Outcome,
    pub total_reward: f64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Plays one episode; `choose` picks the joint action from the current state.
pub fn run_episode(
    map: &GridMap,
    seed: u64,
    mut choose: impl FnMut(&Env) -> [Action; 2],
) -> Result<Episode, GridError> {
    let mut env = Env::new(map.clone());
    let mut transitions = Vec::new();
    let mut total_reward = 0.0;
    while !env.done {
        let positions = env.positions;
        let observations = env.observe_all();
        let actions = choose(&env);
        let StepResult {
            reward,
            penalties,
            removable_hits,
            won_by,
            done,
        } = env.step(actions)?;
        total_reward += reward;
        transitions.push(Transition {
            t: env.t - 1,
            positions,
            observations,
            actions,
            reward,
            penalties,
            removable_hits,
            next_on: [env.block_at(env.positions[0]), env.block_at(env.positions[1])],
            won_by,
            done,
        });
    }
    Ok(Episode {
        map: map.name.clone(),
        seed,
        transitions,
        outcome: if env.won { Outcome::Win } else { Outcome::Timeout },
        total_reward,
    })
}

/// Each agent independently plays the planned action with probability `p`,
/// otherwise a uniformly random one.
pub fn collect_trajectories(map: &GridMap, p: f64, n_episodes: usize, seed: u64) -> Result<Vec<Episode>, GridError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GridError::InvalidArgument(format!("p = {p} is outside [0, 1]")));
    }
    (0..n_episodes)
        .map(|e| {
            let episode_seed = derive_seed(seed, "gridworld-collect", e as u64);
            let mut rng = stage_rng(episode_seed, "policy", 0);
            run_episode(map, episode_seed, |env| {
                let mut pick = |agent: usize| {
                    if rng.gen::<f64>() < p {
                        optimal_action(env, agent)
                    } else {
                        Action::ALL[rng.gen_range(0..Action::ALL.len())]
                    }
                };
                let a = pick(0);
                let b = pick(1);
                [a, b]
            })
        })
        .collect()
}

/// Re-plays the recorded actions and returns the regenerated episode.
pub fn replay_episode(map: &GridMap, episode: &Episode) -> Result<Episode, GridError> {
    let mut actions = episode.transitions.iter().map(|t| t.actions);
    let replayed = run_episode(map, episode.seed, |_| actions.next().unwrap_or([Action::Stand; 2]))?;
    if replayed.len() != episode.len() {
        return Err(GridError::ReplayMismatch(format!(
            "replay ran {} steps, log has {}",
            replayed.len(),
            episode.len()
        )));
    }
    Ok(replayed)
}

pub fn episodes_to_json(episodes: &[Episode]) -> String {
    let mut s = serde_json::to_string(episodes).expect("episodes serialize");
    s.push('\n');
    s
}

pub fn episodes_from_json(text: &str) -> Result<Vec<Episode>, GridError> {
    Ok(serde_json::from_str(text)?)
}

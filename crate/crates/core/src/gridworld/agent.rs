use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{grid_schema, observation_values, GridTarget};
use super::env::{Action, Block, Observation};
use super::map::{Color, GridMap};
use super::policy::{collect_trajectories, run_episode, Episode, Outcome};
use super::GridError;
use crate::dataset::{FeatureSchema, PredicateKind, PredicateRegistry, Sample, SampleRef};
use crate::ruleeval::{canonical_key, Provenance, RewardMetric, RuleMetrics, Rulebook, RulebookEntry, RulebookMetadata};
use crate::seed::{derive_seed, stage_rng};
use crate::translate::entry_matches;

fn eq(feature: &str, value: impl ToString) -> PredicateKind {
    PredicateKind::Equals {
        feature: feature.to_string(),
        value: value.to_string(),
    }
}

fn move_feature(a: Action) -> &'static str {
    match a {
        Action::Up => "self_nb_u",
        Action::Down => "self_nb_d",
        Action::Left => "self_nb_l",
        Action::Right => "self_nb_r",
        Action::Stand => unreachable!("standing enters no neighbour"),
    }
}

/// Handcrafted rules for the map's plan: step onto an adjacent subgoal
/// block, an approach cell per subgoal taken from the planned episode, and
/// never walk into a closed removable wall.
pub fn grounded_rulebook(map: &GridMap) -> Result<Rulebook, GridError> {
    let demo = collect_trajectories(map, 1.0, 1, 0)?.remove(0);
    let mut rules: Vec<(GridTarget, Vec<PredicateKind>)> = Vec::new();
    for a in Action::MOVES {
        rules.push((
            GridTarget::Penalty,
            vec![eq(move_feature(a), Block::Removable.name()), eq("self_act", a)],
        ));
    }
    for step in &map.plan {
        let target = GridTarget::for_subgoal(step.color, step.agent);
        let block = Block::of_color(step.color).name();
        for a in Action::MOVES {
            rules.push((target, vec![eq(move_feature(a), block), eq("self_act", a)]));
        }
        if let Some(t) = demo
            .transitions
            .iter()
            .find(|t| target.holds(t) && t.actions[step.agent] != Action::Stand)
        {
            let o = &t.observations[step.agent];
            rules.push((
                target,
                vec![eq("self_dx", o.dx), eq("self_dy", o.dy), eq("self_act", t.actions[step.agent])],
            ));
        }
    }
    let mut kinds: Vec<PredicateKind> = Vec::new();
    for (_, body) in &rules {
        for k in body {
            if !kinds.contains(k) {
                kinds.push(k.clone());
            }
        }
    }
    let registry = PredicateRegistry::from_kinds(kinds)?;
    let mut book = Rulebook::new(
        RulebookMetadata {
            notes: vec![format!("handcrafted rules for map {}", map.name)],
            ..Default::default()
        },
        Vec::new(),
    );
    for (target, body) in rules {
        let preds: Vec<_> = body
            .iter()
            .map(|k| {
                registry
                    .iter()
                    .find(|p| &p.kind == k)
                    .cloned()
                    .expect("registered above")
            })
            .collect();
        let ids: Vec<usize> = preds.iter().map(|p| p.id).collect();
        book.push(RulebookEntry {
            key: canonical_key(&target.name(), &ids),
            target: target.target(),
            body: preds,
            metrics: RuleMetrics::from_counts(0, 0, 0, 0),
            reward_metric: RewardMetric::Precision,
            reward: 1.0,
            provenance: Provenance::Handcrafted,
            translation: String::new(),
        });
    }
    Ok(book)
}

#[derive(Debug, Clone, PartialEq)]
struct Waypoint {
    dx: i32,
    dy: i32,
    action: Action,
    reward: f64,
    key: String,
}

fn waypoint_of(entry: &RulebookEntry) -> Option<Waypoint> {
    let mut dx = None;
    let mut dy = None;
    let mut action = None;
    for p in &entry.body {
        if let PredicateKind::Equals { feature, value } = &p.kind {
            match feature.as_str() {
                "self_dx" => dx = value.parse().ok(),
                "self_dy" => dy = value.parse().ok(),
                "self_act" => action = value.parse().ok(),
                _ => {}
            }
        }
    }
    Some(Waypoint {
        dx: dx?,
        dy: dy?,
        action: action?,
        reward: entry.reward,
        key: entry.key.clone(),
    })
}

/// Rule-following agent.
///
/// Each step it drops actions matching a penalty rule, stands if it is on a
/// hold block, then works on the first unachieved subgoal (map plan order)
/// it has rules for: an action matching one of those rules is taken
/// directly; otherwise it walks toward the nearest approach cell named by a
/// positional rule. With nothing to go on it walks toward the treasure.
pub struct ScriptedAgent {
    schema: FeatureSchema,
    order: Vec<Color>,
    hold: Vec<Color>,
    penalty: Vec<RulebookEntry>,
    by_target: BTreeMap<String, Vec<RulebookEntry>>,
}

impl ScriptedAgent {
    pub fn new(book: &Rulebook, map: &GridMap) -> Self {
        let mut penalty = Vec::new();
        let mut by_target: BTreeMap<String, Vec<RulebookEntry>> = BTreeMap::new();
        for e in &book.rules {
            if e.target.name == GridTarget::Penalty.name() {
                penalty.push(e.clone());
            } else {
                by_target.entry(e.target.name.clone()).or_default().push(e.clone());
            }
        }
        ScriptedAgent {
            schema: grid_schema(),
            order: map.subgoal_order(),
            hold: map.hold_colors(),
            penalty,
            by_target,
        }
    }

    fn sample(&self, me: &Observation, mate: &Observation, a: Action) -> Sample {
        Sample {
            values: observation_values(me, mate, a, None),
            label: String::new(),
        }
    }

    fn matches(&self, e: &RulebookEntry, s: &Sample) -> bool {
        entry_matches(
            e,
            SampleRef::Row {
                schema: &self.schema,
                sample: s,
            },
        )
    }

    fn achieved(&self, c: Color, me: &Observation, mate: &Observation) -> bool {
        if c == Color::Green {
            false
        } else if self.hold.contains(&c) {
            let b = Block::of_color(c);
            me.on == b || mate.on == b
        } else {
            me.has_visited(c) || mate.has_visited(c)
        }
    }

    /// Current subgoal and its rules.
    pub fn subgoal(&self, me: &Observation, mate: &Observation, agent: usize) -> Option<(Color, &[RulebookEntry])> {
        self.order.iter().find_map(|&c| {
            if self.achieved(c, me, mate) {
                return None;
            }
            self.by_target
                .get(&GridTarget::for_subgoal(c, agent).name())
                .filter(|r| !r.is_empty())
                .map(|r| (c, r.as_slice()))
        })
    }

    pub fn act(&self, me: &Observation, mate: &Observation, agent: usize, rng: &mut ChaCha8Rng) -> Action {
        let samples: Vec<(Action, Sample)> = Action::ALL.iter().map(|&a| (a, self.sample(me, mate, a))).collect();
        let safe: Vec<Action> = samples
            .iter()
            .filter(|(_, s)| !self.penalty.iter().any(|e| self.matches(e, s)))
            .map(|(a, _)| *a)
            .collect();
        if self.hold.iter().any(|&c| me.on == Block::of_color(c)) {
            return Action::Stand;
        }
        if let Some((_, rules)) = self.subgoal(me, mate, agent) {
            let mut best: Option<(f64, Action)> = None;
            for (a, s) in &samples {
                if !safe.contains(a) {
                    continue;
                }
                for e in rules.iter().filter(|e| self.matches(e, s)) {
                    if best.is_none_or(|(r, _)| e.reward > r) {
                        best = Some((e.reward, *a));
                    }
                }
            }
            if let Some((_, a)) = best {
                return a;
            }
            let nearest = rules.iter().filter_map(waypoint_of).min_by(|a, b| {
                let d = |w: &Waypoint| (w.dx - me.dx).abs() + (w.dy - me.dy).abs();
                d(a).cmp(&d(b))
                    .then(b.reward.total_cmp(&a.reward))
                    .then_with(|| a.key.cmp(&b.key))
            });
            if let Some(w) = nearest {
                if (w.dx, w.dy) == (me.dx, me.dy) {
                    return if safe.contains(&w.action) { w.action } else { Action::Stand };
                }
                return greedy(me, (w.dx, w.dy), &safe, rng);
            }
        }
        greedy(me, (0, 0), &safe, rng)
    }
}

/// Step toward an offset along the longer axis first, only into cells that
/// look passable; wander when both axes are blocked.
fn greedy(me: &Observation, goal: (i32, i32), safe: &[Action], rng: &mut ChaCha8Rng) -> Action {
    let (ddx, ddy) = (goal.0 - me.dx, goal.1 - me.dy);
    if (ddx, ddy) == (0, 0) {
        return Action::Stand;
    }
    let h = match ddx.signum() {
        1 => Some(Action::Right),
        -1 => Some(Action::Left),
        _ => None,
    };
    let v = match ddy.signum() {
        1 => Some(Action::Down),
        -1 => Some(Action::Up),
        _ => None,
    };
    let mut order = match ddx.abs().cmp(&ddy.abs()) {
        std::cmp::Ordering::Greater => [h, v],
        std::cmp::Ordering::Less => [v, h],
        std::cmp::Ordering::Equal if rng.gen_bool(0.5) => [h, v],
        std::cmp::Ordering::Equal => [v, h],
    }
    .into_iter()
    .flatten();
    let open = |a: Action| {
        safe.contains(&a)
            && a.neighbor_index()
                .is_none_or(|i| me.neighbors[i].passable())
    };
    if let Some(a) = order.find(|&a| open(a)) {
        return a;
    }
    let options: Vec<Action> = Action::ALL.into_iter().filter(|&a| open(a)).collect();
    options.choose(rng).copied().unwrap_or(Action::Stand)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub wins: usize,
    /// WR
    pub win_rate: f64,
    /// AR
    pub mean_reward: f64,
    /// AL
    pub mean_length: f64,
}

impl EvalReport {
    pub fn from_episodes(episodes: &[Episode]) -> Self {
        let n = episodes.len();
        let wins = episodes.iter().filter(|e| e.outcome == Outcome::Win).count();
        let mean = |f: &dyn Fn(&Episode) -> f64| {
            if n == 0 {
                0.0
            } else {
                episodes.iter().map(f).sum::<f64>() / n as f64
            }
        };
        EvalReport {
            episodes: n,
            wins,
            win_rate: if n == 0 { 0.0 } else { wins as f64 / n as f64 },
            mean_reward: mean(&|e| e.total_reward),
            mean_length: mean(&|e| e.len() as f64),
        }
    }
}

/// Plays `n_episodes` with both agents driven by the rulebook.
pub fn evaluate(
    book: &Rulebook,
    map: &GridMap,
    n_episodes: usize,
    seed: u64,
) -> Result<(EvalReport, Vec<Episode>), GridError> {
    let agent = ScriptedAgent::new(book, map);
    let episodes = (0..n_episodes)
        .map(|e| {
            let episode_seed = derive_seed(seed, "gridworld-eval", e as u64);
            let mut rng = stage_rng(episode_seed, "agent", 0);
            run_episode(map, episode_seed, |env| {
                let [a, b] = env.observe_all();
                let first = agent.act(&a, &b, 0, &mut rng);
                let second = agent.act(&b, &a, 1, &mut rng);
                [first, second]
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((EvalReport::from_episodes(&episodes), episodes))
}

//! Monte Carlo Tree Search over partial conjunctions.
//!
//! A node's state is a set of body predicates; the root is the empty set and
//! an action adds one predicate. Each iteration selects a leaf by UCT, expands
//! one untried action, rolls out uniformly random legal additions until a
//! terminal state, and backs the terminal reward up the path. Terminal states
//! whose precision meets the threshold are harvested as rules.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bits;
use crate::dataset::{PredicateId, PredicateMatrix};
use crate::ruleeval::{
    body_coverage, canonical_key, reward, Provenance, RewardMetric, Rule, RuleError, RuleMetrics, ScoredRule,
};
use crate::seed::{derive_seed, stage_rng};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("node {0} cannot be expanded")]
    NotExpandable(usize),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub total_rollouts: usize,
    pub exploration_c: f64,
    pub max_body_predicates: usize,
    /// Precision a rule must reach to be a threshold terminal.
    pub terminal_threshold: f64,
    /// Compare with `>` instead of `>=`.
    pub terminal_strict: bool,
    pub reward_metric: RewardMetric,
    pub min_support_to_expand: usize,
    pub rng_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            total_rollouts: 500,
            exploration_c: std::f64::consts::SQRT_2,
            max_body_predicates: 5,
            terminal_threshold: 0.9,
            terminal_strict: false,
            reward_metric: RewardMetric::Precision,
            min_support_to_expand: 5,
            rng_seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidConfig(m));
        if self.total_rollouts == 0 {
            return bad("total_rollouts must be positive".into());
        }
        if !(self.exploration_c > 0.0 && self.exploration_c.is_finite()) {
            return bad(format!("exploration_c must be positive, got {}", self.exploration_c));
        }
        if self.max_body_predicates == 0 {
            return bad("max_body_predicates must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.terminal_threshold) {
            return bad(format!(
                "terminal_threshold {} is outside the precision range [0, 1]",
                self.terminal_threshold
            ));
        }
        Ok(())
    }

    pub fn meets_threshold(&self, precision: f64) -> bool {
        if self.terminal_strict {
            precision > self.terminal_threshold
        } else {
            precision >= self.terminal_threshold
        }
    }
}

/// Named search defaults for the supported task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskProfile {
    Relation,
    Anomaly,
    Abuse,
    Gridworld,
}

impl TaskProfile {
    pub const ALL: [TaskProfile; 4] = [
        TaskProfile::Relation,
        TaskProfile::Anomaly,
        TaskProfile::Abuse,
        TaskProfile::Gridworld,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskProfile::Relation => "relation",
            TaskProfile::Anomaly => "anomaly",
            TaskProfile::Abuse => "abuse",
            TaskProfile::Gridworld => "gridworld",
        }
    }

    pub fn search_config(self) -> SearchConfig {
        let (reward_metric, max_body_predicates, terminal_threshold, terminal_strict) = match self {
            TaskProfile::Relation => (RewardMetric::Precision, 2, 0.9, true),
            TaskProfile::Anomaly => (RewardMetric::F1, 5, 0.9, true),
            TaskProfile::Abuse => (RewardMetric::F1, 5, 0.85, true),
            TaskProfile::Gridworld => (RewardMetric::PrecisionPlusRecall, 10, 1.0, false),
        };
        SearchConfig {
            total_rollouts: 500,
            max_body_predicates,
            terminal_threshold,
            terminal_strict,
            reward_metric,
            ..SearchConfig::default()
        }
    }
}

impl std::str::FromStr for TaskProfile {
    type Err = SearchError;

    fn from_str(s: &str) -> Result<Self, SearchError> {
        TaskProfile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SearchError::InvalidConfig(format!("unknown task profile `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Threshold,
    MaxLength,
    DeadEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TerminalCounts {
    pub threshold: usize,
    pub max_length: usize,
    pub dead_end: usize,
}

impl TerminalCounts {
    fn bump(&mut self, reason: TerminalReason) {
        match reason {
            TerminalReason::Threshold => self.threshold += 1,
            TerminalReason::MaxLength => self.max_length += 1,
            TerminalReason::DeadEnd => self.dead_end += 1,
        }
    }

    fn add(&mut self, other: &TerminalCounts) {
        self.threshold += other.threshold;
        self.max_length += other.max_length;
        self.dead_end += other.dead_end;
    }
}

/// UCT_j = mean_j + c * sqrt(2 ln N_parent / N_j); unvisited children score
/// +inf so they are tried first.
pub fn uct_score(mean_reward: f64, visits: u64, parent_visits: u64, c: f64) -> f64 {
    if visits == 0 {
        return f64::INFINITY;
    }
    let parent = parent_visits.max(1) as f64;
    mean_reward + c * (2.0 * parent.ln() / visits as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    /// Sorted body predicate ids.
    pub state: Vec<PredicateId>,
    pub action: Option<PredicateId>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub untried: Vec<PredicateId>,
    pub visits: u64,
    pub total_reward: f64,
    pub metrics: RuleMetrics,
    pub terminal: Option<TerminalReason>,
    coverage: Bits,
}

impl SearchNode {
    pub fn mean_reward(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_reward / self.visits as f64
        }
    }

    pub fn coverage_count(&self) -> usize {
        self.metrics.coverage_count
    }

    pub fn coverage(&self) -> &Bits {
        &self.coverage
    }
}

#[derive(Debug, Clone, Default)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn node(&self, i: usize) -> &SearchNode {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Predicates that may be added to `state`: not already present, not over a
/// feature the state already constrains, and keeping coverage at or above
/// `min_support_to_expand`.
pub fn legal_actions(
    state: &[PredicateId],
    coverage: &Bits,
    matrix: &PredicateMatrix,
    config: &SearchConfig,
) -> Vec<PredicateId> {
    if state.len() >= config.max_body_predicates {
        return Vec::new();
    }
    (0..matrix.n_predicates())
        .filter(|&p| is_legal(p, state, coverage, matrix, config))
        .collect()
}

fn is_legal(
    p: PredicateId,
    state: &[PredicateId],
    coverage: &Bits,
    matrix: &PredicateMatrix,
    config: &SearchConfig,
) -> bool {
    let g = matrix.group(p);
    !state.iter().any(|&s| s == p || matrix.group(s) == g)
        && coverage.and_count_at_least(matrix.column(p).expect("id in range"), config.min_support_to_expand)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestedRule {
    #[serde(flatten)]
    pub scored: ScoredRule,
    pub reason: TerminalReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub target: String,
    pub harvested: Vec<HarvestedRule>,
    pub rollouts: usize,
    pub tree_size: usize,
    pub terminal_hits: TerminalCounts,
    pub diagnostics: Vec<String>,
    #[serde(skip)]
    pub duration: Duration,
}

impl SearchReport {
    pub fn rules(&self) -> Vec<ScoredRule> {
        self.harvested.iter().map(|h| h.scored.clone()).collect()
    }

    pub fn keys(&self) -> Vec<String> {
        self.harvested.iter().map(|h| h.scored.key()).collect()
    }
}

pub struct Searcher<'m> {
    matrix: &'m PredicateMatrix,
    config: SearchConfig,
    tree: SearchTree,
    rng: ChaCha8Rng,
    harvest: BTreeMap<String, HarvestedRule>,
    counts: TerminalCounts,
    rollouts: usize,
    scratch: Vec<PredicateId>,
}

impl<'m> Searcher<'m> {
    pub fn new(matrix: &'m PredicateMatrix, config: SearchConfig) -> Result<Self, SearchError> {
        config.validate()?;
        let coverage = Bits::ones(matrix.n_samples());
        let metrics = RuleMetrics::from_coverage(&coverage, matrix.target());
        let untried = legal_actions(&[], &coverage, matrix, &config);
        let terminal = untried.is_empty().then_some(TerminalReason::DeadEnd);
        let root = SearchNode {
            state: Vec::new(),
            action: None,
            parent: None,
            children: Vec::new(),
            untried,
            visits: 0,
            total_reward: 0.0,
            metrics,
            terminal,
            coverage,
        };
        Ok(Searcher {
            matrix,
            rng: stage_rng(config.rng_seed, "mcts", 0),
            config,
            tree: SearchTree { nodes: vec![root] },
            harvest: BTreeMap::new(),
            counts: TerminalCounts::default(),
            rollouts: 0,
            scratch: (0..matrix.n_predicates()).collect(),
        })
    }

    pub fn tree(&self) -> &SearchTree {
        &self.tree
    }

    fn reward_of(&self, metrics: &RuleMetrics) -> f64 {
        reward(metrics, self.config.reward_metric)
    }

    fn classify(&self, state: &[PredicateId], metrics: &RuleMetrics, has_legal: bool) -> Option<TerminalReason> {
        if !state.is_empty() && self.config.meets_threshold(metrics.precision) {
            Some(TerminalReason::Threshold)
        } else if state.len() >= self.config.max_body_predicates {
            Some(TerminalReason::MaxLength)
        } else if !has_legal {
            Some(TerminalReason::DeadEnd)
        } else {
            None
        }
    }

    /// Records a terminal event; threshold terminals are re-verified from
    /// scratch and harvested.
    fn record_terminal(&mut self, state: &[PredicateId], reason: TerminalReason) -> Result<(), SearchError> {
        self.counts.bump(reason);
        if reason != TerminalReason::Threshold {
            return Ok(());
        }
        let target = &self.matrix.target_spec().name;
        let key = canonical_key(target, state);
        if self.harvest.contains_key(&key) {
            return Ok(());
        }
        let metrics = RuleMetrics::from_coverage(&body_coverage(state, self.matrix)?, self.matrix.target());
        if !self.config.meets_threshold(metrics.precision) {
            return Ok(());
        }
        let scored = ScoredRule {
            rule: Rule::new(state.iter().copied(), target.clone(), Provenance::Searched),
            reward: self.reward_of(&metrics),
            metrics,
        };
        self.harvest.insert(key, HarvestedRule { scored, reason });
        Ok(())
    }

    /// Root-to-leaf path following the best UCT child while the current node
    /// is fully expanded and non-terminal. Ties go to the lowest predicate id.
    pub fn select(&self) -> Vec<usize> {
        let mut path = vec![0];
        let mut cur = 0;
        loop {
            let node = &self.tree.nodes[cur];
            if node.terminal.is_some() || !node.untried.is_empty() || node.children.is_empty() {
                return path;
            }
            let mut best: Option<(f64, PredicateId, usize)> = None;
            for &c in &node.children {
                let child = &self.tree.nodes[c];
                let score = uct_score(child.mean_reward(), child.visits, node.visits, self.config.exploration_c);
                let action = child.action.expect("non-root node has an action");
                let better = match best {
                    None => true,
                    Some((s, a, _)) => score > s || (score == s && action < a),
                };
                if better {
                    best = Some((score, action, c));
                }
            }
            cur = best.expect("children non-empty").2;
            path.push(cur);
        }
    }

    /// Creates one child by removing a uniformly random untried action.
    pub fn expand(&mut self, node: usize) -> Result<usize, SearchError> {
        let parent = &self.tree.nodes[node];
        if parent.terminal.is_some() || parent.untried.is_empty() {
            return Err(SearchError::NotExpandable(node));
        }
        let k = self.rng.gen_range(0..parent.untried.len());
        let action = self.tree.nodes[node].untried.swap_remove(k);
        let parent = &self.tree.nodes[node];
        let mut state = parent.state.clone();
        let pos = state.binary_search(&action).unwrap_err();
        state.insert(pos, action);
        let coverage = parent.coverage.and(self.matrix.column(action).expect("legal id"));
        let metrics = RuleMetrics::from_coverage(&coverage, self.matrix.target());
        let untried = legal_actions(&state, &coverage, self.matrix, &self.config);
        let terminal = self.classify(&state, &metrics, !untried.is_empty());
        let untried = if terminal.is_some() { Vec::new() } else { untried };
        if let Some(reason) = terminal {
            self.record_terminal(&state, reason)?;
        }
        let idx = self.tree.nodes.len();
        self.tree.nodes.push(SearchNode {
            state,
            action: Some(action),
            parent: Some(node),
            children: Vec::new(),
            untried,
            visits: 0,
            total_reward: 0.0,
            metrics,
            terminal,
            coverage,
        });
        self.tree.nodes[node].children.push(idx);
        Ok(idx)
    }

    /// Uniformly random legal addition, or None when no predicate is legal.
    fn random_legal(&mut self, state: &[PredicateId], coverage: &Bits) -> Option<PredicateId> {
        // The first legal element of a uniformly shuffled list is uniform
        // over the legal set, so shuffle lazily and stop there.
        let n = self.scratch.len();
        for i in 0..n {
            let j = self.rng.gen_range(i..n);
            self.scratch.swap(i, j);
            let p = self.scratch[i];
            if is_legal(p, state, coverage, self.matrix, &self.config) {
                return Some(p);
            }
        }
        None
    }

    /// Rollout from `node` to a terminal state; returns that state's reward.
    pub fn simulate(&mut self, node: usize) -> Result<f64, SearchError> {
        let start = &self.tree.nodes[node];
        if start.terminal.is_some() {
            return Ok(self.reward_of(&start.metrics));
        }
        let mut state = start.state.clone();
        let mut coverage = start.coverage.clone();
        let mut metrics = start.metrics;
        loop {
            if !state.is_empty() && self.config.meets_threshold(metrics.precision) {
                self.record_terminal(&state, TerminalReason::Threshold)?;
                break;
            }
            if state.len() >= self.config.max_body_predicates {
                self.record_terminal(&state, TerminalReason::MaxLength)?;
                break;
            }
            let Some(p) = self.random_legal(&state, &coverage) else {
                self.record_terminal(&state, TerminalReason::DeadEnd)?;
                break;
            };
            let pos = state.binary_search(&p).unwrap_err();
            state.insert(pos, p);
            coverage.and_assign(self.matrix.column(p).expect("legal id"));
            metrics = RuleMetrics::from_coverage(&coverage, self.matrix.target());
        }
        Ok(self.reward_of(&metrics))
    }

    pub fn backpropagate(&mut self, path: &[usize], reward: f64) {
        for &i in path {
            let n = &mut self.tree.nodes[i];
            n.visits += 1;
            n.total_reward += reward;
        }
    }

    /// One select / expand / simulate / backpropagate iteration.
    pub fn iterate(&mut self) -> Result<(), SearchError> {
        let mut path = self.select();
        let leaf = *path.last().expect("path has root");
        let n = &self.tree.nodes[leaf];
        let at = if n.terminal.is_none() && !n.untried.is_empty() {
            let child = self.expand(leaf)?;
            path.push(child);
            child
        } else {
            leaf
        };
        let r = self.simulate(at)?;
        self.backpropagate(&path, r);
        self.rollouts += 1;
        Ok(())
    }

    pub fn run(&mut self) -> Result<SearchReport, SearchError> {
        let started = Instant::now();
        let mut diagnostics = Vec::new();
        if self.tree.root().untried.is_empty() {
            diagnostics.push(format!(
                "no legal root actions ({} predicates, min support {})",
                self.matrix.n_predicates(),
                self.config.min_support_to_expand
            ));
        } else {
            for _ in 0..self.config.total_rollouts {
                self.iterate()?;
            }
        }
        Ok(SearchReport {
            target: self.matrix.target_spec().name.clone(),
            harvested: self.harvest.values().cloned().collect(),
            rollouts: self.rollouts,
            tree_size: self.tree.len(),
            terminal_hits: self.counts,
            diagnostics,
            duration: started.elapsed(),
        })
    }
}

pub fn search(matrix: &PredicateMatrix, config: &SearchConfig) -> Result<SearchReport, SearchError> {
    Searcher::new(matrix, *config)?.run()
}

/// Config of worker `index` in a root-parallel search.
pub fn worker_config(config: &SearchConfig, index: usize) -> SearchConfig {
    SearchConfig {
        rng_seed: derive_seed(config.rng_seed, "mcts-worker", index as u64),
        ..*config
    }
}

/// Root-parallel search: `workers` independent trees with derived seeds,
/// harvests merged by canonical key.
pub fn search_root_parallel(
    matrix: &PredicateMatrix,
    config: &SearchConfig,
    workers: usize,
) -> Result<SearchReport, SearchError> {
    config.validate()?;
    let started = Instant::now();
    let reports: Vec<Result<SearchReport, SearchError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers.max(1))
            .map(|i| {
                let cfg = worker_config(config, i);
                s.spawn(move || search(matrix, &cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("search worker panicked")).collect()
    });
    let mut merged = merge_reports(reports.into_iter().collect::<Result<Vec<_>, _>>()?);
    merged.duration = started.elapsed();
    Ok(merged)
}

pub fn merge_reports(reports: Vec<SearchReport>) -> SearchReport {
    let mut harvest = BTreeMap::new();
    let mut out = SearchReport {
        target: reports.first().map(|r| r.target.clone()).unwrap_or_default(),
        harvested: Vec::new(),
        rollouts: 0,
        tree_size: 0,
        terminal_hits: TerminalCounts::default(),
        diagnostics: Vec::new(),
        duration: Duration::ZERO,
    };
    for r in reports {
        out.rollouts += r.rollouts;
        out.tree_size += r.tree_size;
        out.terminal_hits.add(&r.terminal_hits);
        out.duration += r.duration;
        for d in r.diagnostics {
            if !out.diagnostics.contains(&d) {
                out.diagnostics.push(d);
            }
        }
        for h in r.harvested {
            harvest.entry(h.scored.key()).or_insert(h);
        }
    }
    out.harvested = harvest.into_values().collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{PredicateKind, PredicateRegistry, Target};

    fn matrix(cols: Vec<Vec<bool>>, target: Vec<bool>) -> PredicateMatrix {
        let kinds = (0..cols.len())
            .map(|i| PredicateKind::Flag { feature: format!("p{i}") })
            .collect();
        PredicateMatrix::from_columns(
            PredicateRegistry::from_kinds(kinds).unwrap(),
            cols.into_iter().map(Bits::from_bools).collect(),
            Bits::from_bools(target),
            Target::label("1"),
        )
        .unwrap()
    }

    fn cfg() -> SearchConfig {
        SearchConfig {
            min_support_to_expand: 1,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn profiles_carry_table_defaults() {
        let rows: Vec<_> = TaskProfile::ALL
            .iter()
            .map(|p| {
                let c = p.search_config();
                (c.total_rollouts, c.max_body_predicates, c.terminal_threshold, c.terminal_strict, c.reward_metric)
            })
            .collect();
        assert_eq!(
            rows,
            vec![
                (500, 2, 0.9, true, RewardMetric::Precision),
                (500, 5, 0.9, true, RewardMetric::F1),
                (500, 5, 0.85, true, RewardMetric::F1),
                (500, 10, 1.0, false, RewardMetric::PrecisionPlusRecall),
            ]
        );
        for p in TaskProfile::ALL {
            assert_eq!(p.name().parse::<TaskProfile>().unwrap(), p);
            p.search_config().validate().unwrap();
        }
    }

    #[test]
    fn uct_examples() {
        assert_eq!(uct_score(0.5, 1, 1, 1.0), 0.5);
        assert_eq!(uct_score(0.5, 0, 5, 1.0), f64::INFINITY);
        // 0.5 + 1.41421 * sqrt(2 ln 10 / 3), evaluated by hand:
        // ln 10 = 2.302585093, 2 ln 10 / 3 = 1.535056729, sqrt = 1.238974063
        let v = uct_score(0.5, 3, 10, 1.41421);
        assert!((v - 2.252168540).abs() < 1e-6, "{v}");
    }

    #[test]
    fn legal_actions_exclude_same_feature_and_low_support() {
        let kinds = vec![
            PredicateKind::Interval { feature: "x".into(), lo: 1.0, hi: 6.5, closed_hi: false },
            PredicateKind::Interval { feature: "x".into(), lo: 6.5, hi: 12.0, closed_hi: true },
            PredicateKind::Flag { feature: "rare".into() },
        ];
        let m = PredicateMatrix::from_columns(
            PredicateRegistry::from_kinds(kinds).unwrap(),
            vec![
                Bits::from_bools([true, true, false, false]),
                Bits::from_bools([false, false, true, true]),
                Bits::from_bools([true, false, false, false]),
            ],
            Bits::from_bools([true, false, true, false]),
            Target::label("1"),
        )
        .unwrap();
        let c = SearchConfig { min_support_to_expand: 2, ..SearchConfig::default() };
        let all = Bits::ones(4);
        assert_eq!(legal_actions(&[], &all, &m, &c), vec![0, 1]);
        let cov0 = m.column(0).unwrap().clone();
        assert!(legal_actions(&[0], &cov0, &m, &c).is_empty());
        let c1 = SearchConfig { max_body_predicates: 1, min_support_to_expand: 0, ..c };
        assert!(legal_actions(&[2], m.column(2).unwrap(), &m, &c1).is_empty());
    }

    #[test]
    fn select_on_fresh_root_is_root() {
        let m = matrix(vec![vec![true, false], vec![false, true]], vec![true, false]);
        let s = Searcher::new(&m, cfg()).unwrap();
        assert_eq!(s.select(), vec![0]);
    }

    #[test]
    fn select_prefers_higher_mean_and_breaks_ties_low() {
        let m = matrix(vec![vec![true, false], vec![false, true]], vec![true, false]);
        let mut c = cfg();
        c.max_body_predicates = 1;
        let mut s = Searcher::new(&m, c).unwrap();
        let a = s.expand(0).unwrap();
        let b = s.expand(0).unwrap();
        // equal stats: lowest predicate id wins
        s.backpropagate(&[0, a], 0.5);
        s.backpropagate(&[0, b], 0.5);
        let low = if s.tree.nodes[a].action == Some(0) { a } else { b };
        assert_eq!(s.select(), vec![0, low]);
        let (n0, n1) = if low == a { (a, b) } else { (b, a) };
        s.backpropagate(&[0, n1], 1.0);
        s.backpropagate(&[0, n0], 0.0);
        // means now 0.25 vs 0.75 with equal visits
        assert_eq!(s.select(), vec![0, n1]);
    }

    #[test]
    fn expand_adds_action_to_state() {
        let m = matrix(vec![vec![true, true, false], vec![true, false, true]], vec![true, false, false]);
        let mut s = Searcher::new(&m, cfg()).unwrap();
        let c = s.expand(0).unwrap();
        let c2 = s.expand(c).unwrap();
        let n = &s.tree.nodes[c2];
        assert_eq!(n.state, vec![0, 1]);
        assert_eq!(n.parent, Some(c));
        assert!(n.coverage_count() <= s.tree.nodes[c].coverage_count());
    }

    #[test]
    fn expand_terminal_is_error() {
        let m = matrix(vec![vec![true, false]], vec![true, false]);
        let mut c = cfg();
        c.max_body_predicates = 1;
        let mut s = Searcher::new(&m, c).unwrap();
        let child = s.expand(0).unwrap();
        assert!(matches!(s.expand(child), Err(SearchError::NotExpandable(_))));
        assert!(matches!(s.expand(0), Err(SearchError::NotExpandable(0))));
    }

    #[test]
    fn single_untried_is_deterministic() {
        let m = matrix(vec![vec![true, false]], vec![true, false]);
        for seed in 0..5 {
            let mut s = Searcher::new(&m, SearchConfig { rng_seed: seed, ..cfg() }).unwrap();
            let c = s.expand(0).unwrap();
            assert_eq!(s.tree.nodes[c].action, Some(0));
        }
    }

    #[test]
    fn simulate_on_terminal_returns_own_reward() {
        // p0 has precision 1 -> threshold terminal
        let m = matrix(vec![vec![true, false, false], vec![true, true, false]], vec![true, false, false]);
        let mut s = Searcher::new(&m, cfg()).unwrap();
        while s.tree.nodes[0].untried.len() > 0 {
            s.expand(0).unwrap();
        }
        let p0 = s.tree.nodes[0].children.iter().copied().find(|&c| s.tree.nodes[c].action == Some(0)).unwrap();
        assert_eq!(s.tree.nodes[p0].terminal, Some(TerminalReason::Threshold));
        assert_eq!(s.simulate(p0).unwrap(), 1.0);
    }

    #[test]
    fn backpropagate_accumulates() {
        let m = matrix(vec![vec![true, false], vec![true, true]], vec![true, false]);
        let mut s = Searcher::new(&m, SearchConfig { terminal_threshold: 1.0, ..cfg() }).unwrap();
        let a = s.expand(0).unwrap();
        s.backpropagate(&[0, a], 1.0);
        s.backpropagate(&[0, a], 0.0);
        assert_eq!(s.tree.nodes[0].mean_reward(), 0.5);
        assert_eq!(s.tree.nodes[a].mean_reward(), 0.5);
        assert_eq!(s.tree.nodes[a].visits, 2);
    }

    #[test]
    fn no_root_actions_gives_diagnostic() {
        let m = matrix(vec![vec![false, false]], vec![true, false]);
        let r = search(&m, &cfg()).unwrap();
        assert!(r.harvested.is_empty());
        assert_eq!(r.rollouts, 0);
        assert_eq!(r.diagnostics.len(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig { total_rollouts: 0, ..cfg() }.validate().is_err());
        assert!(SearchConfig { max_body_predicates: 0, ..cfg() }.validate().is_err());
        assert!(SearchConfig { terminal_threshold: 1.5, ..cfg() }.validate().is_err());
        assert!(SearchConfig { exploration_c: -1.0, ..cfg() }.validate().is_err());
    }

    #[test]
    fn threshold_strictness() {
        let c = SearchConfig { terminal_threshold: 0.9, terminal_strict: true, ..cfg() };
        assert!(!c.meets_threshold(0.9));
        assert!(c.meets_threshold(0.95));
        let c = SearchConfig { terminal_threshold: 1.0, terminal_strict: false, ..cfg() };
        assert!(c.meets_threshold(1.0));
    }
}

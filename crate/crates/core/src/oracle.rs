//! Exhaustive enumeration of rule bodies, used as ground truth for search.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{PredicateId, PredicateMatrix};
use crate::mcts::SearchConfig;
use crate::ruleeval::{body_coverage, dominance_prune, reward, Provenance, RewardMetric, Rule, RuleError, ScoredRule};

pub const DEFAULT_BUDGET: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration needs {needed} bodies, over the budget of {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("max_len must be at least 1")]
    ZeroLength,
    #[error(transparent)]
    Rule(#[from] RuleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub max_len: usize,
    pub min_coverage: usize,
    pub threshold: f64,
    pub strict: bool,
    pub reward_metric: RewardMetric,
    pub budget: u128,
}

impl OracleConfig {
    /// Oracle settings that mirror a search configuration.
    pub fn from_search(c: &SearchConfig) -> Self {
        OracleConfig {
            max_len: c.max_body_predicates,
            min_coverage: c.min_support_to_expand,
            threshold: c.terminal_threshold,
            strict: c.terminal_strict,
            reward_metric: c.reward_metric,
            budget: DEFAULT_BUDGET,
        }
    }

    fn meets(&self, precision: f64) -> bool {
        if self.strict {
            precision > self.threshold
        } else {
            precision >= self.threshold
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub target: String,
    /// Every legal body, in enumeration order.
    pub enumerated: Vec<ScoredRule>,
    /// Bodies meeting the threshold with coverage at or above the floor.
    pub qualifying: Vec<ScoredRule>,
    /// Qualifying bodies that a search can end on: some insertion order
    /// keeps every proper prefix below the threshold.
    pub terminal_qualifying: Vec<ScoredRule>,
    pub enumeration_count: usize,
}

pub fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

pub fn enumeration_bound(n_predicates: usize, max_len: usize) -> u128 {
    (1..=max_len as u128).map(|k| binomial(n_predicates as u128, k)).sum()
}

fn sort_qualifying(rules: &mut [ScoredRule]) {
    rules.sort_by(|a, b| {
        b.reward
            .total_cmp(&a.reward)
            .then(a.rule.body.len().cmp(&b.rule.body.len()))
            .then_with(|| a.key().cmp(&b.key()))
    });
}

/// Bodies of size 1..=max_len with at most one predicate per feature group,
/// in lexicographic id order.
fn legal_bodies(matrix: &PredicateMatrix, max_len: usize) -> Vec<Vec<PredicateId>> {
    fn rec(
        m: &PredicateMatrix,
        start: PredicateId,
        max_len: usize,
        cur: &mut Vec<PredicateId>,
        out: &mut Vec<Vec<PredicateId>>,
    ) {
        for p in start..m.n_predicates() {
            if cur.iter().any(|&q| m.group(q) == m.group(p)) {
                continue;
            }
            cur.push(p);
            out.push(cur.clone());
            if cur.len() < max_len {
                rec(m, p + 1, max_len, cur, out);
            }
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(matrix, 0, max_len, &mut Vec::new(), &mut out);
    out
}

pub fn enumerate_rules(matrix: &PredicateMatrix, config: &OracleConfig) -> Result<OracleReport, OracleError> {
    if config.max_len == 0 {
        return Err(OracleError::ZeroLength);
    }
    let needed = enumeration_bound(matrix.n_predicates(), config.max_len);
    if needed > config.budget {
        return Err(OracleError::BudgetExceeded {
            needed,
            budget: config.budget,
        });
    }
    let target = matrix.target_spec().name.clone();
    let mut enumerated = Vec::new();
    // body -> (meets threshold, reachable as a search terminal)
    let mut status: BTreeMap<Vec<PredicateId>, (bool, bool)> = BTreeMap::new();
    let mut bodies = legal_bodies(matrix, config.max_len);
    bodies.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    for body in bodies {
        let metrics = crate::ruleeval::RuleMetrics::from_coverage(&body_coverage(&body, matrix)?, matrix.target());
        let meets = config.meets(metrics.precision);
        let reachable = body.len() == 1
            || (0..body.len()).any(|i| {
                let mut sub = body.clone();
                sub.remove(i);
                matches!(status.get(&sub), Some(&(false, true)))
            });
        status.insert(body.clone(), (meets, reachable));
        enumerated.push(ScoredRule {
            rule: Rule::new(body, target.clone(), Provenance::Oracle),
            reward: reward(&metrics, config.reward_metric),
            metrics,
        });
    }
    // Present enumeration in lexicographic body order.
    enumerated.sort_by(|a, b| a.rule.body.cmp(&b.rule.body));
    let mut qualifying: Vec<ScoredRule> = enumerated
        .iter()
        .filter(|r| config.meets(r.metrics.precision) && r.metrics.coverage_count >= config.min_coverage)
        .cloned()
        .collect();
    sort_qualifying(&mut qualifying);
    let terminal_qualifying = qualifying
        .iter()
        .filter(|r| status.get(&r.rule.body).is_some_and(|s| s.1))
        .cloned()
        .collect();
    Ok(OracleReport {
        target,
        enumeration_count: enumerated.len(),
        enumerated,
        qualifying,
        terminal_qualifying,
    })
}

/// |harvest ∩ qualifying| / |qualifying| by canonical key, after dominance
/// pruning both sides. An empty qualifying set gives 1.
pub fn search_recall(harvest: &[ScoredRule], qualifying: &[ScoredRule]) -> f64 {
    let q: BTreeSet<String> = dominance_prune(qualifying.to_vec()).iter().map(ScoredRule::key).collect();
    if q.is_empty() {
        return 1.0;
    }
    let h: BTreeSet<String> = dominance_prune(harvest.to_vec()).iter().map(ScoredRule::key).collect();
    h.intersection(&q).count() as f64 / q.len() as f64
}

//! Rules, their metrics on a predicate matrix, cleaning, and the persisted
//! rulebook.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bits;
use crate::dataset::{Predicate, PredicateId, PredicateMatrix, Target};

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("unknown predicate id {0}")]
    UnknownPredicate(PredicateId),
    #[error("unsupported rulebook format `{0}`")]
    Format(String),
    #[error("malformed rulebook: {0}")]
    Malformed(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Searched,
    Oracle,
    Handcrafted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    /// Sorted, duplicate-free body predicate ids.
    pub body: Vec<PredicateId>,
    /// Target name.
    pub target: String,
    pub provenance: Provenance,
}

impl Rule {
    pub fn new(body: impl IntoIterator<Item = PredicateId>, target: impl Into<String>, provenance: Provenance) -> Self {
        let mut body: Vec<PredicateId> = body.into_iter().collect();
        body.sort_unstable();
        body.dedup();
        Rule {
            body,
            target: target.into(),
            provenance,
        }
    }

    /// Order-insensitive identity: target plus sorted body ids.
    pub fn canonical_key(&self) -> String {
        canonical_key(&self.target, &self.body)
    }

    /// `self.body` is a strict subset of `other.body`.
    pub fn body_strict_subset_of(&self, other: &Rule) -> bool {
        self.body.len() < other.body.len() && self.body.iter().all(|p| other.body.binary_search(p).is_ok())
    }
}

pub fn canonical_key(target: &str, body: &[PredicateId]) -> String {
    let mut ids = body.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let ids: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
    format!("{target}<-{}", ids.join(","))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleMetrics {
    pub coverage_count: usize,
    pub positive_count: usize,
    pub total_positives: usize,
    pub n_samples: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub coverage_fraction: f64,
}

impl RuleMetrics {
    pub fn from_counts(coverage_count: usize, positive_count: usize, total_positives: usize, n_samples: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        // Zero coverage counts as precision 0 so rewards stay total.
        let precision = ratio(positive_count, coverage_count);
        let recall = ratio(positive_count, total_positives);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RuleMetrics {
            coverage_count,
            positive_count,
            total_positives,
            n_samples,
            precision,
            recall,
            f1,
            coverage_fraction: ratio(coverage_count, n_samples),
        }
    }

    pub fn from_coverage(coverage: &Bits, target: &Bits) -> Self {
        RuleMetrics::from_counts(
            coverage.count_ones(),
            coverage.and_count(target),
            target.count_ones(),
            target.len(),
        )
    }
}

/// Samples on which every body predicate holds. The empty body covers all.
pub fn body_coverage(body: &[PredicateId], m: &PredicateMatrix) -> Result<Bits, RuleError> {
    let mut cov = Bits::ones(m.n_samples());
    for &id in body {
        let col = m.column(id).ok_or(RuleError::UnknownPredicate(id))?;
        cov.and_assign(col);
    }
    Ok(cov)
}

pub fn rule_metrics(body: &[PredicateId], m: &PredicateMatrix) -> Result<RuleMetrics, RuleError> {
    Ok(RuleMetrics::from_coverage(&body_coverage(body, m)?, m.target()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMetric {
    #[default]
    Precision,
    F1,
    PrecisionPlusRecall,
}

impl RewardMetric {
    pub fn max_value(self) -> f64 {
        match self {
            RewardMetric::PrecisionPlusRecall => 2.0,
            _ => 1.0,
        }
    }
}

pub fn reward(metrics: &RuleMetrics, metric: RewardMetric) -> f64 {
    match metric {
        RewardMetric::Precision => metrics.precision,
        RewardMetric::F1 => metrics.f1,
        RewardMetric::PrecisionPlusRecall => metrics.precision + metrics.recall,
    }
}

/// A rule with its metrics and reward attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRule {
    pub rule: Rule,
    pub metrics: RuleMetrics,
    pub reward: f64,
}

impl ScoredRule {
    pub fn evaluate(rule: Rule, m: &PredicateMatrix, metric: RewardMetric) -> Result<Self, RuleError> {
        let metrics = rule_metrics(&rule.body, m)?;
        Ok(ScoredRule {
            reward: reward(&metrics, metric),
            rule,
            metrics,
        })
    }

    pub fn key(&self) -> String {
        self.rule.canonical_key()
    }
}

/// Drops low-reward and low-coverage rules, then deduplicates by canonical
/// key (first occurrence wins).
pub fn clean_rules(rules: Vec<ScoredRule>, min_reward: f64, min_coverage_count: usize) -> Vec<ScoredRule> {
    let mut seen = std::collections::BTreeSet::new();
    rules
        .into_iter()
        .filter(|r| r.reward >= min_reward && r.metrics.coverage_count >= min_coverage_count)
        .filter(|r| seen.insert(r.key()))
        .collect()
}

/// Removes every rule whose body strictly contains the body of another rule
/// with the same target and an equal or higher reward. Ties keep the shorter
/// rule. Input order is preserved among survivors.
pub fn dominance_prune(rules: Vec<ScoredRule>) -> Vec<ScoredRule> {
    let dominated: Vec<bool> = rules
        .iter()
        .map(|b| {
            rules.iter().any(|a| {
                a.rule.target == b.rule.target && a.reward >= b.reward && a.rule.body_strict_subset_of(&b.rule)
            })
        })
        .collect();
    rules
        .into_iter()
        .zip(dominated)
        .filter(|(_, d)| !d)
        .map(|(r, _)| r)
        .collect()
}

pub const RULEBOOK_FORMAT: &str = "rulebook/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulebookEntry {
    pub key: String,
    pub target: Target,
    pub body: Vec<Predicate>,
    pub metrics: RuleMetrics,
    pub reward_metric: RewardMetric,
    pub reward: f64,
    pub provenance: Provenance,
    pub translation: String,
}

impl RulebookEntry {
    pub fn from_scored(scored: &ScoredRule, matrix: &PredicateMatrix, metric: RewardMetric) -> Result<Self, RuleError> {
        let body = scored
            .rule
            .body
            .iter()
            .map(|&id| matrix.registry().get(id).cloned().ok_or(RuleError::UnknownPredicate(id)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RulebookEntry {
            key: scored.key(),
            target: matrix.target_spec().clone(),
            body,
            metrics: scored.metrics,
            reward_metric: metric,
            reward: scored.reward,
            provenance: scored.rule.provenance,
            translation: String::new(),
        })
    }

    pub fn body_names(&self) -> Vec<&str> {
        self.body.iter().map(|p| p.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RulebookMetadata {
    pub dataset_fingerprint: String,
    /// Search configuration used per target, as recorded by the producer.
    pub search: BTreeMap<String, serde_json::Value>,
    pub min_reward: f64,
    pub min_coverage_count: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rulebook {
    pub format: String,
    pub metadata: RulebookMetadata,
    pub rules: Vec<RulebookEntry>,
}

impl Rulebook {
    pub fn new(metadata: RulebookMetadata, rules: Vec<RulebookEntry>) -> Self {
        let mut book = Rulebook {
            format: RULEBOOK_FORMAT.to_string(),
            metadata,
            rules: Vec::new(),
        };
        for r in rules {
            book.push(r);
        }
        book
    }

    /// Adds an entry unless its canonical key is already present.
    pub fn push(&mut self, entry: RulebookEntry) -> bool {
        if self.rules.iter().any(|r| r.key == entry.key) {
            return false;
        }
        self.rules.push(entry);
        true
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("rulebook serializes");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, RuleError> {
        let book: Rulebook = serde_json::from_str(text)?;
        if book.format != RULEBOOK_FORMAT {
            return Err(RuleError::Format(book.format));
        }
        Ok(book)
    }
}

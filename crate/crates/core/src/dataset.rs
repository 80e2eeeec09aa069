//! Dataset ingestion and construction of the boolean predicate space.
//!
//! Three input shapes are supported: delimited tables (with inferred or
//! declared schemas), event sequences (one sequence per line) and
//! relation-pair tables, which are ordinary tables of 0/1 columns. Every
//! feature is turned into boolean predicates: categorical features one-hot,
//! boolean features a single "true" flag, continuous features Gini-chosen
//! interval bins, and event sequences ordered patterns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bits;

pub type PredicateId = usize;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("empty feature")]
    EmptyFeature,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no predicates to build a matrix from")]
    NoPredicates,
    #[error("values and labels differ in length ({values} vs {labels})")]
    LengthMismatch { values: usize, labels: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("duplicate feature `{0}`")]
    DuplicateFeature(String),
    #[error("predicate `{predicate}` does not apply to {found} feature `{feature}`")]
    TypeMismatch {
        predicate: String,
        feature: String,
        found: &'static str,
    },
    #[error("invalid predicate: {0}")]
    InvalidPredicate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical,
    Continuous,
    Boolean,
    EventVocabulary,
}

impl FeatureKind {
    fn label(self) -> &'static str {
        match self {
            FeatureKind::Categorical => "categorical",
            FeatureKind::Continuous => "continuous",
            FeatureKind::Boolean => "boolean",
            FeatureKind::EventVocabulary => "event-vocabulary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Values(BTreeSet<String>),
    Range { min: f64, max: f64 },
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<Feature>,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(DatasetError::DuplicateFeature(f.name.clone()));
            }
        }
        Ok(FeatureSchema { features })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Cat(String),
    Num(f64),
    Bool(bool),
    Missing,
}

impl Value {
    fn kind_label(&self) -> &'static str {
        match self {
            Value::Cat(_) => "categorical",
            Value::Num(_) => "continuous",
            Value::Bool(_) => "boolean",
            Value::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub values: Vec<Value>,
    /// Class identifier; binary datasets use "1" / "0".
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub events: Vec<String>,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    schema: FeatureSchema,
    samples: Vec<Sample>,
}

impl TabularDataset {
    pub fn new(schema: FeatureSchema, samples: Vec<Sample>) -> Result<Self> {
        for f in schema.features() {
            if f.kind == FeatureKind::EventVocabulary {
                return Err(DatasetError::InvalidArgument(format!(
                    "event-vocabulary feature `{}` in a tabular schema",
                    f.name
                )));
            }
        }
        for (i, s) in samples.iter().enumerate() {
            if s.values.len() != schema.len() {
                return Err(DatasetError::Parse {
                    line: i + 1,
                    message: format!("expected {} values, got {}", schema.len(), s.values.len()),
                });
            }
            for (f, v) in schema.features().iter().zip(&s.values) {
                let ok = matches!(
                    (f.kind, v),
                    (_, Value::Missing)
                        | (FeatureKind::Categorical, Value::Cat(_))
                        | (FeatureKind::Continuous, Value::Num(_))
                        | (FeatureKind::Boolean, Value::Bool(_))
                );
                if !ok {
                    return Err(DatasetError::Parse {
                        line: i + 1,
                        message: format!(
                            "feature `{}` is {} but value is {}",
                            f.name,
                            f.kind.label(),
                            v.kind_label()
                        ),
                    });
                }
            }
        }
        Ok(TabularDataset { schema, samples })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Values of one feature across all samples.
    pub fn column(&self, name: &str) -> Result<impl Iterator<Item = &Value>> {
        let idx = self
            .schema
            .index_of(name)
            .ok_or_else(|| DatasetError::UnknownFeature(name.to_string()))?;
        Ok(self.samples.iter().map(move |s| &s.values[idx]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    vocabulary: BTreeSet<String>,
    samples: Vec<SequenceSample>,
}

impl SequenceDataset {
    pub fn new(vocabulary: BTreeSet<String>, samples: Vec<SequenceSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if let Some(e) = s.events.iter().find(|e| !vocabulary.contains(*e)) {
                return Err(DatasetError::Parse {
                    line: i + 1,
                    message: format!("event `{e}` not in vocabulary"),
                });
            }
        }
        Ok(SequenceDataset {
            vocabulary,
            samples,
        })
    }

    /// Builds a dataset whose vocabulary is every event that occurs.
    pub fn from_samples(samples: Vec<SequenceSample>) -> Self {
        let vocabulary = samples
            .iter()
            .flat_map(|s| s.events.iter().cloned())
            .collect();
        SequenceDataset {
            vocabulary,
            samples,
        }
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    pub fn samples(&self) -> &[SequenceSample] {
        &self.samples
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Table(TabularDataset),
    Sequences(SequenceDataset),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Table(t) => t.samples.len(),
            Dataset::Sequences(s) => s.samples.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> SampleRef<'_> {
        match self {
            Dataset::Table(t) => SampleRef::Row {
                schema: &t.schema,
                sample: &t.samples[i],
            },
            Dataset::Sequences(s) => SampleRef::Sequence(&s.samples[i]),
        }
    }
}

/// A borrowed view of one sample together with what is needed to evaluate
/// predicates on it.
#[derive(Debug, Clone, Copy)]
pub enum SampleRef<'a> {
    Row {
        schema: &'a FeatureSchema,
        sample: &'a Sample,
    },
    Sequence(&'a SequenceSample),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredicateKind {
    Equals {
        feature: String,
        value: String,
    },
    /// `[lo, hi)`, or `[lo, hi]` when `closed_hi` is set.
    Interval {
        feature: String,
        lo: f64,
        hi: f64,
        closed_hi: bool,
    },
    Flag {
        feature: String,
    },
    /// Events that must occur in this relative order, not necessarily adjacent.
    Pattern {
        events: Vec<String>,
    },
}

impl PredicateKind {
    pub fn feature(&self) -> Option<&str> {
        match self {
            PredicateKind::Equals { feature, .. }
            | PredicateKind::Interval { feature, .. }
            | PredicateKind::Flag { feature } => Some(feature),
            PredicateKind::Pattern { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PredicateKind::Interval { lo, hi, closed_hi, .. } => {
                // A degenerate point interval is allowed only closed on both
                // sides; it is what a constant feature discretizes into.
                if lo < hi || (lo == hi && *closed_hi) {
                    Ok(())
                } else {
                    Err(DatasetError::InvalidPredicate(format!(
                        "interval [{lo}, {hi}] is empty"
                    )))
                }
            }
            PredicateKind::Pattern { events } if events.is_empty() => Err(
                DatasetError::InvalidPredicate("ordered pattern has no events".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn display_name(&self) -> String {
        self.to_string()
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            PredicateKind::Equals { .. } => "equals",
            PredicateKind::Interval { .. } => "interval",
            PredicateKind::Flag { .. } => "flag",
            PredicateKind::Pattern { .. } => "pattern",
        }
    }
}

impl fmt::Display for PredicateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredicateKind::Equals { feature, value } => write!(f, "{feature}={value}"),
            PredicateKind::Interval {
                feature,
                lo,
                hi,
                closed_hi,
            } => {
                let close = if *closed_hi { ']' } else { ')' };
                write!(f, "{feature} in [{lo}, {hi}{close}")
            }
            PredicateKind::Flag { feature } => write!(f, "{feature}"),
            PredicateKind::Pattern { events } => write!(f, "seq({})", events.join(",")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub id: PredicateId,
    pub name: String,
    #[serde(flatten)]
    pub kind: PredicateKind,
}

/// True iff `pattern` occurs in `events` in order (gaps allowed).
pub fn is_ordered_subsequence(pattern: &[String], events: &[String]) -> bool {
    let mut it = events.iter();
    pattern.iter().all(|p| it.any(|e| e == p))
}

pub fn evaluate_predicate(p: &PredicateKind, s: SampleRef<'_>) -> Result<bool> {
    match (p, s) {
        (PredicateKind::Pattern { events }, SampleRef::Sequence(seq)) => {
            Ok(is_ordered_subsequence(events, &seq.events))
        }
        (PredicateKind::Pattern { .. }, SampleRef::Row { .. }) => Err(DatasetError::TypeMismatch {
            predicate: p.to_string(),
            feature: "<row>".into(),
            found: "tabular",
        }),
        (_, SampleRef::Sequence(_)) => Err(DatasetError::TypeMismatch {
            predicate: p.to_string(),
            feature: p.feature().unwrap_or_default().into(),
            found: "event-vocabulary",
        }),
        (_, SampleRef::Row { schema, sample }) => {
            let name = p.feature().unwrap_or_default();
            let idx = schema
                .index_of(name)
                .ok_or_else(|| DatasetError::UnknownFeature(name.to_string()))?;
            eval_on_value(p, schema.features()[idx].kind, &sample.values[idx])
        }
    }
}

fn eval_on_value(p: &PredicateKind, kind: FeatureKind, v: &Value) -> Result<bool> {
    let mismatch = || DatasetError::TypeMismatch {
        predicate: p.to_string(),
        feature: p.feature().unwrap_or_default().into(),
        found: kind.label(),
    };
    match p {
        PredicateKind::Equals { value, .. } => match (kind, v) {
            (FeatureKind::Categorical, Value::Cat(c)) => Ok(c == value),
            (FeatureKind::Categorical, Value::Missing) => Ok(false),
            _ => Err(mismatch()),
        },
        PredicateKind::Interval {
            lo, hi, closed_hi, ..
        } => match (kind, v) {
            (FeatureKind::Continuous, Value::Num(x)) => {
                Ok(*x >= *lo && (*x < *hi || (*closed_hi && *x <= *hi)))
            }
            (FeatureKind::Continuous, Value::Missing) => Ok(false),
            _ => Err(mismatch()),
        },
        PredicateKind::Flag { .. } => match (kind, v) {
            (FeatureKind::Boolean, Value::Bool(b)) => Ok(*b),
            (FeatureKind::Boolean, Value::Missing) => Ok(false),
            _ => Err(mismatch()),
        },
        PredicateKind::Pattern { .. } => Err(mismatch()),
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// Best binary split of a sorted slice: (threshold, decrease in
/// `n * gini` summed over the two halves).
fn best_split(sorted: &[(f64, bool)]) -> Option<(f64, f64)> {
    let n = sorted.len();
    let total_pos = sorted.iter().filter(|(_, y)| *y).count();
    let parent = n as f64 * gini(total_pos, n);
    let mut best: Option<(f64, f64)> = None;
    let mut left_pos = 0;
    for i in 1..n {
        if sorted[i - 1].1 {
            left_pos += 1;
        }
        if sorted[i - 1].0 == sorted[i].0 {
            continue;
        }
        let children = i as f64 * gini(left_pos, i)
            + (n - i) as f64 * gini(total_pos - left_pos, n - i);
        let decrease = parent - children;
        if best.is_none_or(|(_, d)| decrease > d) {
            best = Some(((sorted[i - 1].0 + sorted[i].0) / 2.0, decrease));
        }
    }
    best
}

const MIN_GINI_DECREASE: f64 = 1e-12;

/// Supervised split points for a continuous feature.
///
/// Greedy recursive binary splitting: each round splits the interval whose
/// best midpoint split yields the largest decrease in weighted Gini impurity.
/// Stops once `n_bins` intervals exist or no split decreases impurity.
pub fn gini_split_points(values: &[f64], labels: &[bool], n_bins: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(DatasetError::EmptyFeature);
    }
    if values.len() != labels.len() {
        return Err(DatasetError::LengthMismatch {
            values: values.len(),
            labels: labels.len(),
        });
    }
    if n_bins < 2 {
        return Err(DatasetError::InvalidArgument(format!(
            "n_bins must be at least 2, got {n_bins}"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(DatasetError::InvalidArgument("NaN feature value".into()));
    }
    let mut sorted: Vec<(f64, bool)> = values.iter().copied().zip(labels.iter().copied()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Intervals as half-open index ranges into `sorted`.
    let mut intervals = vec![(0usize, sorted.len())];
    let mut thresholds = Vec::new();
    while intervals.len() < n_bins {
        let mut best: Option<(usize, f64, f64)> = None;
        for (k, &(a, b)) in intervals.iter().enumerate() {
            if let Some((t, d)) = best_split(&sorted[a..b]) {
                if d > MIN_GINI_DECREASE && best.is_none_or(|(_, _, bd)| d > bd) {
                    best = Some((k, t, d));
                }
            }
        }
        let Some((k, t, _)) = best else { break };
        let (a, b) = intervals[k];
        let cut = a + sorted[a..b].partition_point(|(v, _)| *v < t);
        intervals.splice(k..=k, [(a, cut), (cut, b)]);
        thresholds.push(t);
    }
    thresholds.sort_by(f64::total_cmp);
    Ok(thresholds)
}

/// Interval predicates partitioning `[min, max]` at `thresholds`: every bin is
/// left-closed right-open except the last, which is closed on both ends.
pub fn interval_predicates(feature: &str, min: f64, max: f64, thresholds: &[f64]) -> Vec<PredicateKind> {
    let mut inner: Vec<f64> = thresholds.iter().copied().filter(|t| *t > min && *t < max).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    let mut edges = vec![min];
    edges.extend(inner);
    edges.push(max);
    let last = edges.len() - 2;
    edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| PredicateKind::Interval {
            feature: feature.to_string(),
            lo: w[0],
            hi: w[1],
            closed_hi: i == last,
        })
        .collect()
}

/// Discretizes a continuous feature into Gini-chosen bins. Missing values are
/// skipped when choosing the bins.
pub fn discretize_feature(
    feature: &str,
    values: &[Option<f64>],
    labels: &[bool],
    n_bins: usize,
) -> Result<Vec<PredicateKind>> {
    if values.len() != labels.len() {
        return Err(DatasetError::LengthMismatch {
            values: values.len(),
            labels: labels.len(),
        });
    }
    let (xs, ys): (Vec<f64>, Vec<bool>) = values
        .iter()
        .zip(labels)
        .filter_map(|(v, y)| v.map(|v| (v, *y)))
        .unzip();
    let thresholds = gini_split_points(&xs, &ys, n_bins)?;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(interval_predicates(feature, min, max, &thresholds))
}

/// One equality predicate per observed category; boolean features get a
/// single flag for the true case.
pub fn onehot_predicates<'a>(
    feature: &Feature,
    observed: impl IntoIterator<Item = &'a Value>,
) -> Vec<PredicateKind> {
    match feature.kind {
        FeatureKind::Boolean => vec![PredicateKind::Flag {
            feature: feature.name.clone(),
        }],
        FeatureKind::Categorical => {
            let cats: BTreeSet<&str> = observed
                .into_iter()
                .filter_map(|v| match v {
                    Value::Cat(c) => Some(c.as_str()),
                    _ => None,
                })
                .collect();
            cats.into_iter()
                .map(|c| PredicateKind::Equals {
                    feature: feature.name.clone(),
                    value: c.to_string(),
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Ordered event patterns of length 1..=max_len that occur in at least
/// `min_support` sequences.
pub fn sequence_patterns(
    ds: &SequenceDataset,
    max_len: usize,
    min_support: usize,
) -> Vec<PredicateKind> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            for ev in &ds.vocabulary {
                let mut pat = prefix.clone();
                pat.push(ev.clone());
                let support = ds
                    .samples
                    .iter()
                    .filter(|s| is_ordered_subsequence(&pat, &s.events))
                    .count();
                // Support is anti-monotone in the pattern, so infrequent
                // patterns are not extended.
                if support >= min_support.max(1) {
                    out.push(PredicateKind::Pattern { events: pat.clone() });
                    next.push(pat);
                }
            }
        }
        frontier = next;
    }
    out
}

/// The dense, id-ordered set of body predicates a search runs over.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredicateRegistry {
    predicates: Vec<Predicate>,
}

impl PredicateRegistry {
    pub fn from_kinds(kinds: Vec<PredicateKind>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut predicates = Vec::with_capacity(kinds.len());
        for kind in kinds {
            kind.validate()?;
            let name = kind.display_name();
            if !seen.insert(name.clone()) {
                return Err(DatasetError::InvalidPredicate(format!(
                    "duplicate predicate `{name}`"
                )));
            }
            predicates.push(Predicate {
                id: predicates.len(),
                name,
                kind,
            });
        }
        Ok(PredicateRegistry { predicates })
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn get(&self, id: PredicateId) -> Option<&Predicate> {
        self.predicates.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Predicate> {
        self.predicates.iter()
    }

    pub fn find(&self, name: &str) -> Option<&Predicate> {
        self.predicates.iter().find(|p| p.name == name)
    }

    /// A new registry keeping only `keep` predicates, re-numbered densely.
    /// Returns the registry and the old id of each new id.
    pub fn retain(&self, keep: impl Fn(&Predicate) -> bool) -> (PredicateRegistry, Vec<PredicateId>) {
        let mut predicates = Vec::new();
        let mut old_ids = Vec::new();
        for p in self.predicates.iter().filter(|p| keep(p)) {
            old_ids.push(p.id);
            predicates.push(Predicate {
                id: predicates.len(),
                ..p.clone()
            });
        }
        (PredicateRegistry { predicates }, old_ids)
    }

    /// Group index per predicate: predicates over the same source feature share
    /// a group; ordered patterns each get their own.
    pub fn feature_groups(&self) -> Vec<usize> {
        let mut by_feature: BTreeMap<&str, usize> = BTreeMap::new();
        let mut next = 0;
        self.predicates
            .iter()
            .map(|p| match p.kind.feature() {
                Some(f) => *by_feature.entry(f).or_insert_with(|| {
                    next += 1;
                    next - 1
                }),
                None => {
                    next += 1;
                    next - 1
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSource {
    /// One-vs-rest on the sample label.
    Label { class: String },
    /// A predicate designated as the rule head.
    Predicate { predicate: PredicateKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub name: String,
    #[serde(flatten)]
    pub source: TargetSource,
}

impl Target {
    pub fn label(class: impl Into<String>) -> Self {
        let class = class.into();
        Target {
            name: format!("label={class}"),
            source: TargetSource::Label { class },
        }
    }

    pub fn predicate(kind: PredicateKind) -> Self {
        Target {
            name: kind.display_name(),
            source: TargetSource::Predicate { predicate: kind },
        }
    }

    /// Source feature the target is defined over, if any.
    pub fn feature(&self) -> Option<&str> {
        match &self.source {
            TargetSource::Predicate { predicate } => predicate.feature(),
            TargetSource::Label { .. } => None,
        }
    }

    pub fn holds(&self, s: SampleRef<'_>) -> Result<bool> {
        match (&self.source, s) {
            (TargetSource::Label { class }, SampleRef::Row { sample, .. }) => {
                Ok(&sample.label == class)
            }
            (TargetSource::Label { class }, SampleRef::Sequence(seq)) => {
                Ok(parse_bool(class).ok_or_else(|| {
                    DatasetError::InvalidArgument(format!(
                        "sequence labels are boolean, got class `{class}`"
                    ))
                })? == seq.label)
            }
            (TargetSource::Predicate { predicate }, s) => evaluate_predicate(predicate, s),
        }
    }
}

pub fn target_column(ds: &Dataset, target: &Target) -> Result<Vec<bool>> {
    (0..ds.len()).map(|i| target.holds(ds.sample(i))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpaceOptions {
    pub n_bins: usize,
    pub pattern_max_len: usize,
    pub pattern_min_support: usize,
}

impl Default for SpaceOptions {
    fn default() -> Self {
        SpaceOptions {
            n_bins: 10,
            pattern_max_len: 2,
            pattern_min_support: 1,
        }
    }
}

/// Body predicates for a search job. The target's own feature is left out, and
/// continuous features are binned against the target column.
pub fn build_predicate_space(
    ds: &Dataset,
    target: &Target,
    opts: &SpaceOptions,
) -> Result<PredicateRegistry> {
    if ds.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let kinds = match ds {
        Dataset::Sequences(seqs) => {
            sequence_patterns(seqs, opts.pattern_max_len, opts.pattern_min_support)
        }
        Dataset::Table(table) => {
            let labels = target_column(ds, target)?;
            let mut kinds = Vec::new();
            for (idx, feature) in table.schema.features().iter().enumerate() {
                if target.feature() == Some(feature.name.as_str()) {
                    continue;
                }
                let column = table.samples.iter().map(|s| &s.values[idx]);
                match feature.kind {
                    FeatureKind::Categorical | FeatureKind::Boolean => {
                        kinds.extend(onehot_predicates(feature, column))
                    }
                    FeatureKind::Continuous => {
                        let values: Vec<Option<f64>> = column
                            .map(|v| match v {
                                Value::Num(x) => Some(*x),
                                _ => None,
                            })
                            .collect();
                        if values.iter().all(Option::is_none) {
                            continue;
                        }
                        kinds.extend(discretize_feature(
                            &feature.name,
                            &values,
                            &labels,
                            opts.n_bins,
                        )?);
                    }
                    FeatureKind::EventVocabulary => {}
                }
            }
            kinds
        }
    };
    PredicateRegistry::from_kinds(kinds)
}

/// Samples x predicates boolean matrix plus the target column. All rule
/// rewards are computed on this.
#[derive(Debug, Clone)]
pub struct PredicateMatrix {
    registry: PredicateRegistry,
    columns: Vec<Bits>,
    target: Bits,
    target_spec: Target,
    groups: Vec<usize>,
    n_samples: usize,
}

impl PredicateMatrix {
    pub fn from_columns(
        registry: PredicateRegistry,
        columns: Vec<Bits>,
        target: Bits,
        target_spec: Target,
    ) -> Result<Self> {
        let n_samples = target.len();
        if n_samples == 0 {
            return Err(DatasetError::EmptyDataset);
        }
        if columns.len() != registry.len() {
            return Err(DatasetError::InvalidArgument(format!(
                "{} columns for {} predicates",
                columns.len(),
                registry.len()
            )));
        }
        if let Some(c) = columns.iter().find(|c| c.len() != n_samples) {
            return Err(DatasetError::LengthMismatch {
                values: c.len(),
                labels: n_samples,
            });
        }
        let groups = registry.feature_groups();
        Ok(PredicateMatrix {
            registry,
            columns,
            target,
            target_spec,
            groups,
            n_samples,
        })
    }

    pub fn registry(&self) -> &PredicateRegistry {
        &self.registry
    }

    pub fn column(&self, id: PredicateId) -> Option<&Bits> {
        self.columns.get(id)
    }

    pub fn target(&self) -> &Bits {
        &self.target
    }

    pub fn target_spec(&self) -> &Target {
        &self.target_spec
    }

    /// Feature group of a predicate; same-group predicates constrain the same
    /// source feature.
    pub fn group(&self, id: PredicateId) -> usize {
        self.groups[id]
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_predicates(&self) -> usize {
        self.columns.len()
    }

    pub fn positives(&self) -> usize {
        self.target.count_ones()
    }
}

pub fn build_matrix(
    ds: &Dataset,
    registry: &PredicateRegistry,
    target: &Target,
) -> Result<PredicateMatrix> {
    if ds.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    if registry.is_empty() {
        return Err(DatasetError::NoPredicates);
    }
    let mut columns = Vec::with_capacity(registry.len());
    for p in registry.iter() {
        let col: Vec<bool> = (0..ds.len())
            .map(|i| evaluate_predicate(&p.kind, ds.sample(i)))
            .collect::<Result<_>>()?;
        columns.push(Bits::from_bools(col));
    }
    let target_bits = Bits::from_bools(target_column(ds, target)?);
    PredicateMatrix::from_columns(registry.clone(), columns, target_bits, target.clone())
}

pub fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableOptions {
    pub delimiter: char,
    pub label_column: Option<String>,
    /// Declared kinds; undeclared columns are inferred.
    pub kinds: BTreeMap<String, FeatureKind>,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            delimiter: ',',
            label_column: Some("label".into()),
            kinds: BTreeMap::new(),
        }
    }
}

fn infer_kind<'a>(cells: impl Iterator<Item = &'a str> + Clone) -> FeatureKind {
    let present = cells.filter(|c| !c.trim().is_empty());
    if present.clone().all(|c| parse_bool(c).is_some()) {
        FeatureKind::Boolean
    } else if present.clone().all(|c| c.trim().parse::<f64>().is_ok()) {
        FeatureKind::Continuous
    } else {
        FeatureKind::Categorical
    }
}

/// Reads a delimited table with a header row.
pub fn read_table<R: Read>(reader: R, opts: &TableOptions) -> Result<TabularDataset> {
    let delimiter = u8::try_from(opts.delimiter).map_err(|_| {
        DatasetError::InvalidArgument(format!("delimiter `{}` is not ASCII", opts.delimiter))
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let label_idx = match &opts.label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DatasetError::UnknownFeature(name.clone()))?,
        ),
        None => None,
    };
    for name in opts.kinds.keys() {
        if !headers.contains(name) {
            return Err(DatasetError::UnknownFeature(name.clone()));
        }
    }

    let mut features = Vec::new();
    let mut feature_cols = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if Some(j) == label_idx {
            continue;
        }
        let kind = opts
            .kinds
            .get(name)
            .copied()
            .unwrap_or_else(|| infer_kind(rows.iter().map(|r| r[j].as_str())));
        let present = rows.iter().map(|r| r[j].trim()).filter(|c| !c.is_empty());
        let domain = match kind {
            FeatureKind::Continuous => {
                let nums: Vec<f64> = present.filter_map(|c| c.parse().ok()).collect();
                if nums.is_empty() {
                    Domain::Unbounded
                } else {
                    Domain::Range {
                        min: nums.iter().copied().fold(f64::INFINITY, f64::min),
                        max: nums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    }
                }
            }
            _ => Domain::Values(present.map(str::to_string).collect()),
        };
        features.push(Feature {
            name: name.clone(),
            kind,
            domain,
        });
        feature_cols.push(j);
    }
    let schema = FeatureSchema::new(features)?;

    let mut samples = Vec::with_capacity(rows.len());
    for (line, row) in rows.iter().enumerate() {
        let mut values = Vec::with_capacity(feature_cols.len());
        for (f, &j) in schema.features().iter().zip(&feature_cols) {
            let cell = row[j].trim();
            let bad = |what: &str| DatasetError::Parse {
                line: line + 2,
                message: format!("`{cell}` is not {what} (column `{}`)", f.name),
            };
            let v = if cell.is_empty() {
                Value::Missing
            } else {
                match f.kind {
                    FeatureKind::Categorical => Value::Cat(cell.to_string()),
                    FeatureKind::Continuous => {
                        Value::Num(cell.parse().map_err(|_| bad("a number"))?)
                    }
                    FeatureKind::Boolean => Value::Bool(parse_bool(cell).ok_or_else(|| bad("boolean"))?),
                    FeatureKind::EventVocabulary => {
                        return Err(DatasetError::InvalidArgument(format!(
                            "column `{}` declared as event vocabulary in a table",
                            f.name
                        )))
                    }
                }
            };
            values.push(v);
        }
        let label = label_idx.map(|j| row[j].trim().to_string()).unwrap_or_default();
        samples.push(Sample { values, label });
    }
    TabularDataset::new(schema, samples)
}

/// Reads one sequence per line: whitespace-separated event tokens followed by
/// a final "0"/"1" label token. Blank lines and `#` comments are skipped.
pub fn read_sequences<R: BufRead>(reader: R) -> Result<SequenceDataset> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        let last = tokens.pop().unwrap_or_default();
        let label = match last.as_str() {
            "0" => false,
            "1" => true,
            other => {
                return Err(DatasetError::Parse {
                    line: i + 1,
                    message: format!("label must be 0 or 1, got `{other}`"),
                })
            }
        };
        samples.push(SequenceSample {
            events: tokens,
            label,
        });
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    Ok(SequenceDataset::from_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weighted_gini(values: &[f64], labels: &[bool], t: f64) -> f64 {
        let (mut ln, mut lp, mut rn, mut rp) = (0, 0, 0, 0);
        for (v, y) in values.iter().zip(labels) {
            if *v < t {
                ln += 1;
                lp += *y as usize;
            } else {
                rn += 1;
                rp += *y as usize;
            }
        }
        let n = values.len() as f64;
        ln as f64 / n * gini(lp, ln) + rn as f64 / n * gini(rp, rn)
    }

    #[test]
    fn gini_two_bins_picks_clean_gap() {
        let v = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let y = [false, false, false, true, true, true];
        // Brute force over the five midpoint candidates.
        let cands = [1.5, 2.5, 6.5, 10.5, 11.5];
        let best = cands
            .iter()
            .copied()
            .min_by(|a, b| weighted_gini(&v, &y, *a).total_cmp(&weighted_gini(&v, &y, *b)))
            .unwrap();
        assert_eq!(best, 6.5);
        assert_eq!(gini_split_points(&v, &y, 2).unwrap(), vec![6.5]);
    }

    #[test]
    fn gini_constant_feature_has_no_thresholds() {
        let v = [4.0; 7];
        let y = [true, false, true, false, true, true, false];
        assert!(gini_split_points(&v, &y, 4).unwrap().is_empty());
    }

    #[test]
    fn gini_single_gap() {
        assert_eq!(gini_split_points(&[0.0, 1.0], &[false, true], 2).unwrap(), vec![0.5]);
    }

    #[test]
    fn gini_empty_is_error() {
        assert!(matches!(
            gini_split_points(&[], &[], 2),
            Err(DatasetError::EmptyFeature)
        ));
    }

    #[test]
    fn gini_capped_by_distinct_values() {
        let v = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let y = [false, false, true, true, false, false];
        let t = gini_split_points(&v, &y, 10).unwrap();
        assert_eq!(t, vec![1.5, 2.5]);
        let preds = interval_predicates("x", 1.0, 3.0, &t);
        assert_eq!(preds.len(), 3);
    }

    #[test]
    fn discretize_builds_closed_last_bin() {
        let vals: Vec<Option<f64>> = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0].iter().map(|v| Some(*v)).collect();
        let y = [false, false, false, true, true, true];
        let preds = discretize_feature("x", &vals, &y, 2).unwrap();
        let names: Vec<String> = preds.iter().map(|p| p.to_string()).collect();
        assert_eq!(names, ["x in [1, 6.5)", "x in [6.5, 12]"]);
    }

    #[test]
    fn constant_feature_single_bin() {
        let vals = vec![Some(3.0); 4];
        let preds = discretize_feature("c", &vals, &[true, false, true, false], 10).unwrap();
        assert_eq!(preds.len(), 1);
        let schema = FeatureSchema::new(vec![Feature {
            name: "c".into(),
            kind: FeatureKind::Continuous,
            domain: Domain::Unbounded,
        }])
        .unwrap();
        let s = Sample {
            values: vec![Value::Num(3.0)],
            label: "1".into(),
        };
        assert!(evaluate_predicate(&preds[0], SampleRef::Row { schema: &schema, sample: &s }).unwrap());
    }

    #[test]
    fn interval_boundary_goes_right() {
        let schema = FeatureSchema::new(vec![Feature {
            name: "x".into(),
            kind: FeatureKind::Continuous,
            domain: Domain::Unbounded,
        }])
        .unwrap();
        let preds = interval_predicates("x", 1.0, 12.0, &[6.5]);
        let s = Sample {
            values: vec![Value::Num(6.5)],
            label: "0".into(),
        };
        let r = SampleRef::Row { schema: &schema, sample: &s };
        assert!(!evaluate_predicate(&preds[0], r).unwrap());
        assert!(evaluate_predicate(&preds[1], r).unwrap());
    }

    #[test]
    fn onehot_counts() {
        let color = Feature {
            name: "color".into(),
            kind: FeatureKind::Categorical,
            domain: Domain::Unbounded,
        };
        let vals = [Value::Cat("red".into()), Value::Cat("blue".into()), Value::Cat("red".into())];
        assert_eq!(onehot_predicates(&color, &vals).len(), 2);
        let flag = Feature {
            name: "player_of".into(),
            kind: FeatureKind::Boolean,
            domain: Domain::Unbounded,
        };
        let preds = onehot_predicates(&flag, &[Value::Bool(true), Value::Bool(false)]);
        assert_eq!(preds, vec![PredicateKind::Flag { feature: "player_of".into() }]);
        assert_eq!(preds[0].to_string(), "player_of");
    }

    fn ev(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn ordered_pattern_semantics() {
        let p = PredicateKind::Pattern { events: ev("E11 E28") };
        let yes = SequenceSample { events: ev("E5 E11 E9 E28"), label: true };
        let no = SequenceSample { events: ev("E28 E11"), label: true };
        assert!(evaluate_predicate(&p, SampleRef::Sequence(&yes)).unwrap());
        assert!(!evaluate_predicate(&p, SampleRef::Sequence(&no)).unwrap());
    }

    #[test]
    fn type_mismatch_is_error() {
        let schema = FeatureSchema::new(vec![Feature {
            name: "x".into(),
            kind: FeatureKind::Continuous,
            domain: Domain::Unbounded,
        }])
        .unwrap();
        let s = Sample { values: vec![Value::Num(1.0)], label: "0".into() };
        let p = PredicateKind::Equals { feature: "x".into(), value: "a".into() };
        assert!(matches!(
            evaluate_predicate(&p, SampleRef::Row { schema: &schema, sample: &s }),
            Err(DatasetError::TypeMismatch { .. })
        ));
        let seq = SequenceSample { events: vec![], label: false };
        assert!(evaluate_predicate(&p, SampleRef::Sequence(&seq)).is_err());
    }

    #[test]
    fn read_table_infers_kinds() {
        let csv = "age,color,member,label\n30,red,1,1\n25.5,blue,0,0\n,red,1,1\n";
        let t = read_table(csv.as_bytes(), &TableOptions::default()).unwrap();
        let kinds: Vec<FeatureKind> = t.schema().features().iter().map(|f| f.kind).collect();
        assert_eq!(
            kinds,
            [FeatureKind::Continuous, FeatureKind::Categorical, FeatureKind::Boolean]
        );
        assert_eq!(t.samples()[2].values[0], Value::Missing);
        assert_eq!(t.samples()[1].label, "0");
    }

    #[test]
    fn read_sequences_parses_labels() {
        let text = "E1 E2 E3 1\n# comment\n\nE2 0\n";
        let ds = read_sequences(text.as_bytes()).unwrap();
        assert_eq!(ds.samples().len(), 2);
        assert!(ds.samples()[0].label);
        assert!(ds.samples()[1].events == ev("E2"));
        assert!(read_sequences("E1 x\n".as_bytes()).is_err());
    }

    #[test]
    fn matrix_shape_and_relation_target() {
        let csv = "player_of,member_of,citizen_of\n1,1,0\n0,0,1\n1,1,1\n0,1,0\n";
        let opts = TableOptions { label_column: None, ..Default::default() };
        let ds = Dataset::Table(read_table(csv.as_bytes(), &opts).unwrap());
        let target = Target::predicate(PredicateKind::Flag { feature: "citizen_of".into() });
        let reg = build_predicate_space(&ds, &target, &SpaceOptions::default()).unwrap();
        assert_eq!(reg.len(), 2);
        assert!(reg.find("citizen_of").is_none());
        let m = build_matrix(&ds, &reg, &target).unwrap();
        assert_eq!(m.n_samples(), 4);
        assert_eq!(m.n_predicates(), 2);
        assert_eq!(m.target(), &Bits::from_bools([false, true, true, false]));
    }

    #[test]
    fn empty_dataset_is_error() {
        let ds = Dataset::Sequences(SequenceDataset::from_samples(vec![]));
        let reg = PredicateRegistry::from_kinds(vec![PredicateKind::Pattern { events: ev("E1") }]).unwrap();
        assert!(matches!(
            build_matrix(&ds, &reg, &Target::label("1")),
            Err(DatasetError::EmptyDataset)
        ));
    }

    #[test]
    fn sequence_matrix_uses_ordered_subsequence() {
        let ds = SequenceDataset::from_samples(vec![
            SequenceSample { events: ev("E1 E2"), label: true },
            SequenceSample { events: ev("E2 E1"), label: false },
        ]);
        let ds = Dataset::Sequences(ds);
        let reg = build_predicate_space(&ds, &Target::label("1"), &SpaceOptions::default()).unwrap();
        // two singletons, both orders of the pair
        assert_eq!(reg.len(), 4);
        let m = build_matrix(&ds, &reg, &Target::label("1")).unwrap();
        let id = reg.find("seq(E1,E2)").unwrap().id;
        assert_eq!(m.column(id).unwrap(), &Bits::from_bools([true, false]));
    }

    #[test]
    fn feature_groups_share_by_feature() {
        let reg = PredicateRegistry::from_kinds(vec![
            PredicateKind::Equals { feature: "a".into(), value: "x".into() },
            PredicateKind::Pattern { events: ev("E1") },
            PredicateKind::Equals { feature: "a".into(), value: "y".into() },
            PredicateKind::Pattern { events: ev("E2") },
        ])
        .unwrap();
        let g = reg.feature_groups();
        assert_eq!(g[0], g[2]);
        assert_ne!(g[1], g[3]);
    }
}

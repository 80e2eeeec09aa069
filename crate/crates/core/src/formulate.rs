//! Search formulation behind an advisor: which extra targets to mine and
//! which body predicates to drop before searching.
//!
//! Three advisors ship here. [`IdentityAdvisor`] changes nothing,
//! [`HeuristicAdvisor`] applies fixed data-driven exclusions plus a canned
//! target list, and [`RemoteAdvisor`] asks a chat-completion endpoint and
//! parses a delimited, line-oriented reply. The remote path can record and
//! replay transcripts so it is testable offline.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bits;
use crate::dataset::{target_column, Dataset, DatasetError, PredicateId, PredicateMatrix, PredicateRegistry, Target};
use crate::seed::fingerprint;
use crate::translate::{fill, TranslateError};

#[derive(Debug, Error)]
pub enum FormulateError {
    #[error("task description is empty")]
    EmptyDescription,
    #[error("advice excludes unknown predicate id {0}")]
    UnknownPredicate(PredicateId),
    #[error("advice would exclude all {0} body predicates")]
    EmptiesRegistry(usize),
    #[error("proposed target `{name}` cannot be evaluated: {source}")]
    TargetNotEvaluable { name: String, source: DatasetError },
    #[error("malformed advisor reply: {0}")]
    MalformedReply(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("no recorded transcript for request {0}")]
    NoTranscript(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Template(#[from] TranslateError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

type Result<T> = std::result::Result<T, FormulateError>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskDescription {
    pub name: String,
    pub description: String,
    pub schema_summary: String,
    pub label_semantics: String,
    /// Targets beyond the label an advisor may propose by name.
    pub candidate_targets: Vec<Target>,
}

impl TaskDescription {
    pub fn validate(&self) -> Result<()> {
        if self.description.trim().is_empty() {
            return Err(FormulateError::EmptyDescription);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedTarget {
    pub target: Target,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: PredicateId,
    pub name: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FormulationAdvice {
    pub proposed_targets: Vec<ProposedTarget>,
    pub excluded: Vec<Exclusion>,
    /// Free-form remarks, including fallback warnings.
    pub notes: Vec<String>,
}

impl FormulationAdvice {
    pub fn excluded_ids(&self) -> BTreeSet<PredicateId> {
        self.excluded.iter().map(|e| e.id).collect()
    }

    /// Excluded ids exist and proposed targets evaluate on every sample.
    pub fn validate(&self, registry: &PredicateRegistry, ds: Option<&Dataset>) -> Result<()> {
        for e in &self.excluded {
            if registry.get(e.id).is_none() {
                return Err(FormulateError::UnknownPredicate(e.id));
            }
        }
        if let Some(ds) = ds {
            for t in &self.proposed_targets {
                target_column(ds, &t.target).map_err(|source| FormulateError::TargetNotEvaluable {
                    name: t.target.name.clone(),
                    source,
                })?;
            }
        }
        Ok(())
    }
}

pub trait Advisor {
    fn name(&self) -> &str;
    fn advise(&self, task: &TaskDescription, matrix: &PredicateMatrix) -> Result<FormulationAdvice>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityAdvisor;

impl Advisor for IdentityAdvisor {
    fn name(&self) -> &str {
        "identity"
    }

    fn advise(&self, task: &TaskDescription, _matrix: &PredicateMatrix) -> Result<FormulationAdvice> {
        task.validate()?;
        Ok(FormulationAdvice::default())
    }
}

/// Fixed exclusions: predicates that never co-occur with the target, and any
/// predicate over a listed feature. Proposes a canned target list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicAdvisor {
    pub exclude_zero_cooccurrence: bool,
    pub exclude_features: BTreeSet<String>,
    pub proposed_targets: Vec<ProposedTarget>,
}

impl HeuristicAdvisor {
    pub fn zero_cooccurrence() -> Self {
        HeuristicAdvisor {
            exclude_zero_cooccurrence: true,
            ..Default::default()
        }
    }
}

impl Advisor for HeuristicAdvisor {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn advise(&self, task: &TaskDescription, matrix: &PredicateMatrix) -> Result<FormulationAdvice> {
        task.validate()?;
        let mut excluded = Vec::new();
        for p in matrix.registry().iter() {
            let col = matrix.column(p.id).expect("registry id has a column");
            let rationale = if self.exclude_zero_cooccurrence && col.and_count(matrix.target()) == 0 {
                "never holds together with the target".to_string()
            } else if p.kind.feature().is_some_and(|f| self.exclude_features.contains(f)) {
                "feature judged irrelevant to the target".to_string()
            } else {
                continue;
            };
            excluded.push(Exclusion {
                id: p.id,
                name: p.name.clone(),
                rationale,
            });
        }
        Ok(FormulationAdvice {
            proposed_targets: self.proposed_targets.clone(),
            excluded,
            notes: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub before: usize,
    pub after: usize,
    pub removed_fraction: f64,
    /// `old_ids[new_id]` is the id in the unfiltered matrix.
    pub old_ids: Vec<PredicateId>,
}

/// Drops excluded predicates and re-numbers the survivors densely.
pub fn filter_body_predicates(
    advice: &FormulationAdvice,
    matrix: &PredicateMatrix,
) -> Result<(PredicateMatrix, FilterReport)> {
    advice.validate(matrix.registry(), None)?;
    let excluded = advice.excluded_ids();
    let before = matrix.n_predicates();
    if before > 0 && excluded.len() >= before {
        return Err(FormulateError::EmptiesRegistry(before));
    }
    let (registry, old_ids) = matrix.registry().retain(|p| !excluded.contains(&p.id));
    let columns: Vec<Bits> = old_ids
        .iter()
        .map(|&id| matrix.column(id).expect("id in range").clone())
        .collect();
    let filtered = PredicateMatrix::from_columns(registry, columns, matrix.target().clone(), matrix.target_spec().clone())?;
    let after = filtered.n_predicates();
    let removed_fraction = if before == 0 {
        0.0
    } else {
        (before - after) as f64 / before as f64
    };
    info!(
        "advice removed {} of {} body predicates ({:.1}%)",
        before - after,
        before,
        removed_fraction * 100.0
    );
    Ok((
        filtered,
        FilterReport {
            before,
            after,
            removed_fraction,
            old_ids,
        },
    ))
}

/// Search targets: the base target first, then proposals, deduplicated by
/// name.
pub fn propose_targets(advice: &FormulationAdvice, base: &Target) -> Vec<Target> {
    let mut seen = BTreeSet::new();
    std::iter::once(base)
        .chain(advice.proposed_targets.iter().map(|p| &p.target))
        .filter(|t| seen.insert(t.name.clone()))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl ChatRequest {
    /// Hex SHA-256 of the request JSON; names transcript files.
    pub fn fingerprint(&self) -> String {
        fingerprint(serde_json::to_string(self).expect("request serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub timeout_secs: u64,
    /// Extra attempts after a malformed reply or transport failure.
    pub max_retries: usize,
    /// Degrade to identity advice instead of failing the run.
    pub fail_open: bool,
    /// Formulation prompt file; the built-in template when unset.
    pub prompt_template: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: "http://localhost:8000/v1/chat/completions".into(),
            model: "gpt-4".into(),
            api_key_env: "RULEMINE_API_KEY".into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1000,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            timeout_secs: 60,
            max_retries: 2,
            fail_open: true,
            prompt_template: None,
        }
    }
}

pub trait ChatTransport: Send + Sync {
    /// Returns the assistant message text.
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// OpenAI-compatible chat-completions over HTTP.
pub struct HttpTransport {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        HttpTransport {
            url: url.into(),
            api_key,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    /// Reads the credential from the configured environment variable.
    pub fn from_config(config: &EndpointConfig) -> Self {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            warn!("{} is not set; sending requests without a credential", config.api_key_env);
        }
        HttpTransport::new(&config.url, key, Duration::from_secs(config.timeout_secs))
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| FormulateError::Transport(format!("POST {}: {e}", self.url)))?;
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| FormulateError::Transport(format!("reading response: {e}")))?;
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| FormulateError::Transport("response has no choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub request: ChatRequest,
    pub response: String,
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> FormulateError {
    let context = context.into();
    move |source| FormulateError::Io { context, source }
}

pub fn transcript_path(dir: &Path, request: &ChatRequest) -> PathBuf {
    dir.join(format!("{}.json", request.fingerprint()))
}

/// Answers from transcripts recorded by [`CapturingTransport`].
pub struct ReplayTransport {
    transcripts: BTreeMap<String, String>,
}

impl ReplayTransport {
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut transcripts = BTreeMap::new();
        let entries = fs::read_dir(dir).map_err(io_err(format!("reading {}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(io_err(format!("reading {}", dir.display())))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let text = fs::read_to_string(&path).map_err(io_err(format!("reading {}", path.display())))?;
                let t: Transcript = serde_json::from_str(&text)?;
                transcripts.insert(t.request.fingerprint(), t.response);
            }
        }
        Ok(ReplayTransport { transcripts })
    }

    pub fn from_transcripts(items: impl IntoIterator<Item = Transcript>) -> Self {
        ReplayTransport {
            transcripts: items
                .into_iter()
                .map(|t| (t.request.fingerprint(), t.response))
                .collect(),
        }
    }
}

impl ChatTransport for ReplayTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let key = request.fingerprint();
        self.transcripts
            .get(&key)
            .cloned()
            .ok_or(FormulateError::NoTranscript(key))
    }
}

/// Forwards to another transport and writes each exchange to `dir`.
pub struct CapturingTransport<T> {
    inner: T,
    dir: PathBuf,
}

impl<T: ChatTransport> CapturingTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Self {
        CapturingTransport { inner, dir: dir.into() }
    }
}

impl<T: ChatTransport> ChatTransport for CapturingTransport<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let response = self.inner.complete(request)?;
        fs::create_dir_all(&self.dir).map_err(io_err(format!("creating {}", self.dir.display())))?;
        let path = transcript_path(&self.dir, request);
        let t = Transcript {
            request: request.clone(),
            response: response.clone(),
        };
        let mut text = serde_json::to_string_pretty(&t)?;
        text.push('\n');
        fs::write(&path, text).map_err(io_err(format!("writing {}", path.display())))?;
        Ok(response)
    }
}

pub const DEFAULT_FORMULATION_PROMPT: &str = "\
=== system ===
You help set up a rule-mining search. Rules have the form
\"body predicate 1 and body predicate 2 and ... implies target\".
=== prompt ===
Task: {task}
{description}

Data: {schema}
Label: {labels}

Body predicates, one per line:
{predicates}

Additional targets you may propose, one per line:
{targets}

List body predicates that are impossible or irrelevant for explaining the
target, and any additional targets worth mining.
=== output ===
Reply with exactly one block in this format and nothing else inside it:
BEGIN ADVICE
EXCLUDE <predicate name> :: <reason>
TARGET <target name> :: <reason>
END ADVICE";

/// Parses the delimited advice block. Names must match the registry
/// (exclusions) or the task's candidate targets / registry predicates
/// (targets).
pub fn parse_advice(reply: &str, registry: &PredicateRegistry, task: &TaskDescription) -> Result<FormulationAdvice> {
    let malformed = |m: String| FormulateError::MalformedReply(m);
    let lines: Vec<&str> = reply.lines().map(str::trim).collect();
    let start = lines
        .iter()
        .position(|l| *l == "BEGIN ADVICE")
        .ok_or_else(|| malformed("no BEGIN ADVICE line".into()))?;
    let len = lines[start + 1..]
        .iter()
        .position(|l| *l == "END ADVICE")
        .ok_or_else(|| malformed("no END ADVICE line".into()))?;
    let mut advice = FormulationAdvice::default();
    let mut excluded_seen = BTreeSet::new();
    for line in &lines[start + 1..start + 1 + len] {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (verb, rest) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| malformed(format!("cannot parse `{line}`")))?;
        let (name, rationale) = match rest.split_once("::") {
            Some((n, r)) => (n.trim(), r.trim()),
            None => (rest.trim(), ""),
        };
        match verb {
            "EXCLUDE" => {
                let p = registry
                    .find(name)
                    .ok_or_else(|| malformed(format!("unknown predicate `{name}`")))?;
                if excluded_seen.insert(p.id) {
                    advice.excluded.push(Exclusion {
                        id: p.id,
                        name: p.name.clone(),
                        rationale: rationale.to_string(),
                    });
                }
            }
            "TARGET" => {
                let target = task
                    .candidate_targets
                    .iter()
                    .find(|t| t.name == name)
                    .cloned()
                    .or_else(|| registry.find(name).map(|p| Target::predicate(p.kind.clone())))
                    .ok_or_else(|| malformed(format!("unknown target `{name}`")))?;
                advice.proposed_targets.push(ProposedTarget {
                    target,
                    rationale: rationale.to_string(),
                });
            }
            other => return Err(malformed(format!("unknown directive `{other}`"))),
        }
    }
    Ok(advice)
}

pub struct RemoteAdvisor {
    config: EndpointConfig,
    transport: Box<dyn ChatTransport>,
}

impl RemoteAdvisor {
    pub fn new(config: EndpointConfig, transport: Box<dyn ChatTransport>) -> Self {
        RemoteAdvisor { config, transport }
    }

    pub fn build_request(&self, task: &TaskDescription, registry: &PredicateRegistry) -> Result<ChatRequest> {
        let template_text = match &self.config.prompt_template {
            Some(path) => fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?,
            None => DEFAULT_FORMULATION_PROMPT.to_string(),
        };
        let predicates: Vec<&str> = registry.iter().map(|p| p.name.as_str()).collect();
        let targets: Vec<&str> = task.candidate_targets.iter().map(|t| t.name.as_str()).collect();
        let values = BTreeMap::from([
            ("task", task.name.clone()),
            ("description", task.description.clone()),
            ("schema", task.schema_summary.clone()),
            ("labels", task.label_semantics.clone()),
            ("predicates", predicates.join("\n")),
            ("targets", if targets.is_empty() { "(none)".to_string() } else { targets.join("\n") }),
        ]);
        let (system, user) = split_sections(&template_text);
        let mut messages = Vec::new();
        if let Some(s) = system {
            messages.push(ChatMessage {
                role: "system".into(),
                content: fill(&s, &values, "formulation system prompt")?,
            });
        }
        messages.push(ChatMessage {
            role: "user".into(),
            content: fill(&user, &values, "formulation prompt")?,
        });
        Ok(ChatRequest {
            model: self.config.model.clone(),
            messages,
            temperature: self.config.temperature,
            top_p: self.config.top_p,
            max_tokens: self.config.max_tokens,
            frequency_penalty: self.config.frequency_penalty,
            presence_penalty: self.config.presence_penalty,
        })
    }

    fn fallback(&self, reason: String) -> Result<FormulationAdvice> {
        warn!("advisor falling back to identity advice: {reason}");
        Ok(FormulationAdvice {
            notes: vec![format!("fallback to identity advice: {reason}")],
            ..Default::default()
        })
    }
}

/// System section and the user turn (prompt plus output sections).
fn split_sections(text: &str) -> (Option<String>, String) {
    let mut system: Option<Vec<&str>> = None;
    let mut user = Vec::new();
    let mut in_system = false;
    for line in text.lines() {
        match line.trim() {
            "=== system ===" => {
                in_system = true;
                system.get_or_insert_with(Vec::new);
            }
            "=== prompt ===" | "=== output ===" => in_system = false,
            _ if in_system => system.get_or_insert_with(Vec::new).push(line),
            _ => user.push(line),
        }
    }
    (
        system.map(|s| s.join("\n").trim().to_string()),
        user.join("\n").trim().to_string(),
    )
}

impl Advisor for RemoteAdvisor {
    fn name(&self) -> &str {
        "remote"
    }

    fn advise(&self, task: &TaskDescription, matrix: &PredicateMatrix) -> Result<FormulationAdvice> {
        task.validate()?;
        let request = self.build_request(task, matrix.registry())?;
        // Malformed replies always degrade to identity advice after the
        // retries; transport failures do so only when failing open.
        let mut last = String::new();
        let mut transport_error = None;
        for attempt in 0..=self.config.max_retries {
            match self.transport.complete(&request) {
                Ok(reply) => match parse_advice(&reply, matrix.registry(), task) {
                    Ok(advice) => return Ok(advice),
                    Err(e) => {
                        warn!("attempt {}: {e}", attempt + 1);
                        last = e.to_string();
                        transport_error = None;
                    }
                },
                Err(e) => {
                    warn!("attempt {}: {e}", attempt + 1);
                    last = e.to_string();
                    let retryable = matches!(e, FormulateError::Transport(_));
                    transport_error = Some(e);
                    if !retryable {
                        break;
                    }
                }
            }
        }
        match transport_error {
            Some(e) if !self.config.fail_open => Err(e),
            _ => self.fallback(last),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PredicateKind;
    use std::sync::Mutex;

    fn matrix() -> PredicateMatrix {
        let kinds = vec![
            PredicateKind::Flag { feature: "a".into() },
            PredicateKind::Flag { feature: "b".into() },
            PredicateKind::Flag { feature: "c".into() },
        ];
        PredicateMatrix::from_columns(
            PredicateRegistry::from_kinds(kinds).unwrap(),
            vec![
                Bits::from_bools([true, false, true, false]),
                Bits::from_bools([false, true, false, true]),
                Bits::from_bools([true, true, false, false]),
            ],
            Bits::from_bools([true, false, true, false]),
            Target::label("1"),
        )
        .unwrap()
    }

    fn task() -> TaskDescription {
        TaskDescription {
            name: "toy".into(),
            description: "toy task".into(),
            candidate_targets: vec![Target::predicate(PredicateKind::Flag { feature: "goal".into() })],
            ..Default::default()
        }
    }

    struct Scripted {
        replies: Mutex<Vec<Result<String>>>,
        seen: Mutex<Vec<ChatRequest>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<String>>) -> Self {
            Scripted {
                replies: Mutex::new(replies.into_iter().rev().collect()),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl ChatTransport for Scripted {
        fn complete(&self, request: &ChatRequest) -> Result<String> {
            self.seen.lock().unwrap().push(request.clone());
            self.replies.lock().unwrap().pop().unwrap_or_else(|| Ok(String::new()))
        }
    }

    #[test]
    fn identity_leaves_registry_unchanged() {
        let m = matrix();
        let advice = IdentityAdvisor.advise(&task(), &m).unwrap();
        let (f, r) = filter_body_predicates(&advice, &m).unwrap();
        assert_eq!(f.n_predicates(), 3);
        assert_eq!(r.removed_fraction, 0.0);
        assert_eq!(propose_targets(&advice, m.target_spec()), vec![Target::label("1")]);
    }

    #[test]
    fn heuristic_excludes_zero_cooccurrence() {
        let m = matrix();
        let advice = HeuristicAdvisor::zero_cooccurrence().advise(&task(), &m).unwrap();
        assert_eq!(advice.excluded_ids(), BTreeSet::from([1]));
        for id in advice.excluded_ids() {
            assert_eq!(m.column(id).unwrap().and_count(m.target()), 0);
        }
        let (f, r) = filter_body_predicates(&advice, &m).unwrap();
        assert_eq!(r.old_ids, vec![0, 2]);
        assert_eq!(f.registry().get(1).unwrap().name, "c");
        assert!((r.removed_fraction - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn excluding_everything_is_error() {
        let m = matrix();
        let advice = HeuristicAdvisor {
            exclude_features: ["a", "b", "c"].iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
        .advise(&task(), &m)
        .unwrap();
        assert!(matches!(
            filter_body_predicates(&advice, &m),
            Err(FormulateError::EmptiesRegistry(3))
        ));
    }

    #[test]
    fn propose_targets_dedupes() {
        let t = Target::predicate(PredicateKind::Flag { feature: "goal".into() });
        let p = ProposedTarget {
            target: t.clone(),
            rationale: String::new(),
        };
        let advice = FormulationAdvice {
            proposed_targets: vec![p.clone(), p],
            ..Default::default()
        };
        assert_eq!(propose_targets(&advice, &Target::label("1")), vec![Target::label("1"), t]);
    }

    #[test]
    fn empty_description_rejected() {
        let t = TaskDescription::default();
        assert!(matches!(
            IdentityAdvisor.advise(&t, &matrix()),
            Err(FormulateError::EmptyDescription)
        ));
    }

    #[test]
    fn parse_reply_with_three_exclusions() {
        let m = matrix();
        let reply = "Sure.\nBEGIN ADVICE\nEXCLUDE a :: noise\nEXCLUDE b :: noise\n# c too\nEXCLUDE c\nTARGET goal :: subgoal\nEND ADVICE\nthanks";
        let a = parse_advice(reply, m.registry(), &task()).unwrap();
        assert_eq!(a.excluded_ids(), BTreeSet::from([0, 1, 2]));
        assert_eq!(a.excluded[0].rationale, "noise");
        assert_eq!(a.proposed_targets[0].target.name, "goal");
    }

    #[test]
    fn parse_rejects_unknown_names_and_missing_block() {
        let m = matrix();
        assert!(parse_advice("nothing here", m.registry(), &task()).is_err());
        assert!(parse_advice("BEGIN ADVICE\nEXCLUDE zz\nEND ADVICE", m.registry(), &task()).is_err());
        assert!(parse_advice("BEGIN ADVICE\nDROP a\nEND ADVICE", m.registry(), &task()).is_err());
        assert!(parse_advice("BEGIN ADVICE\nEXCLUDE a", m.registry(), &task()).is_err());
    }

    #[test]
    fn request_uses_zero_temperature() {
        let adv = RemoteAdvisor::new(EndpointConfig::default(), Box::new(Scripted::new(vec![])));
        let req = adv.build_request(&task(), matrix().registry()).unwrap();
        assert_eq!(req.temperature, 0.0);
        assert_eq!(req.top_p, 1.0);
        assert_eq!(req.max_tokens, 1000);
        assert_eq!(req.messages[0].role, "system");
        assert!(req.messages[1].content.contains("\na\nb\nc\n"));
        assert!(req.messages[1].content.contains("BEGIN ADVICE"));
    }

    #[test]
    fn malformed_then_good_reply_retries() {
        let t = Scripted::new(vec![
            Ok("garbage".into()),
            Ok("BEGIN ADVICE\nEXCLUDE b :: x\nEND ADVICE".into()),
        ]);
        let adv = RemoteAdvisor::new(EndpointConfig::default(), Box::new(t));
        let a = adv.advise(&task(), &matrix()).unwrap();
        assert_eq!(a.excluded_ids(), BTreeSet::from([1]));
    }

    #[test]
    fn persistent_malformed_falls_back_to_identity() {
        let t = Scripted::new(vec![Ok("no".into()), Ok("no".into()), Ok("no".into())]);
        let cfg = EndpointConfig {
            fail_open: false,
            ..EndpointConfig::default()
        };
        let a = RemoteAdvisor::new(cfg, Box::new(t)).advise(&task(), &matrix()).unwrap();
        assert!(a.excluded.is_empty() && a.proposed_targets.is_empty());
        assert_eq!(a.notes.len(), 1);
    }

    #[test]
    fn unreachable_endpoint_fail_open_and_closed() {
        let cfg = EndpointConfig {
            url: "http://127.0.0.1:9/v1/chat/completions".into(),
            max_retries: 0,
            timeout_secs: 2,
            ..EndpointConfig::default()
        };
        let open = RemoteAdvisor::new(cfg.clone(), Box::new(HttpTransport::from_config(&cfg)));
        let a = open.advise(&task(), &matrix()).unwrap();
        assert!(a.excluded.is_empty());
        assert!(a.notes[0].contains("fallback"));
        let closed_cfg = EndpointConfig { fail_open: false, ..cfg };
        let closed = RemoteAdvisor::new(closed_cfg.clone(), Box::new(HttpTransport::from_config(&closed_cfg)));
        assert!(matches!(
            closed.advise(&task(), &matrix()),
            Err(FormulateError::Transport(_))
        ));
    }

    #[test]
    fn capture_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let reply = "BEGIN ADVICE\nEXCLUDE c :: x\nEND ADVICE".to_string();
        let capture = CapturingTransport::new(Scripted::new(vec![Ok(reply)]), dir.path());
        let live = RemoteAdvisor::new(EndpointConfig::default(), Box::new(capture))
            .advise(&task(), &matrix())
            .unwrap();
        let replay = ReplayTransport::from_dir(dir.path()).unwrap();
        let again = RemoteAdvisor::new(EndpointConfig::default(), Box::new(replay))
            .advise(&task(), &matrix())
            .unwrap();
        assert_eq!(live, again);
        assert_eq!(again.excluded_ids(), BTreeSet::from([2]));
    }

    #[test]
    fn replay_miss_is_reported() {
        let r = ReplayTransport::from_transcripts(vec![]);
        let req = RemoteAdvisor::new(EndpointConfig::default(), Box::new(Scripted::new(vec![])))
            .build_request(&task(), matrix().registry())
            .unwrap();
        assert!(matches!(r.complete(&req), Err(FormulateError::NoTranscript(_))));
    }
}

//! Natural-language rendering of rules, rule retrieval, and prompt assembly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{evaluate_predicate, PredicateKind, SampleRef};
use crate::ruleeval::{Rulebook, RulebookEntry};

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("unknown placeholder `{{{name}}}` in {context}")]
    UnknownPlaceholder { name: String, context: String },
    #[error("malformed template {context}: {message}")]
    Malformed { context: String, message: String },
    #[error("template is missing the `{{{0}}}` placeholder")]
    MissingSlot(String),
    #[error("placeholder `{{{0}}}` appears more than once")]
    DuplicateSlot(String),
    #[error("unknown template section `{0}`")]
    UnknownSection(String),
    #[error("rulebook is empty")]
    EmptyRulebook,
    #[error("no {0} template in lexicon")]
    MissingTemplate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("lexicon: {0}")]
    Lexicon(#[from] toml::de::Error),
}

type Result<T> = std::result::Result<T, TranslateError>;

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Text(String),
    Slot(String),
}

fn parse_template(template: &str, context: &str) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut chars = template.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                text.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                text.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) if ch.is_ascii_alphanumeric() || ch == '_' => name.push(ch),
                        other => {
                            return Err(TranslateError::Malformed {
                                context: context.to_string(),
                                message: match other {
                                    Some(ch) => format!("unexpected `{ch}` inside placeholder"),
                                    None => "unterminated placeholder".into(),
                                },
                            })
                        }
                    }
                }
                if name.is_empty() {
                    return Err(TranslateError::Malformed {
                        context: context.to_string(),
                        message: "empty placeholder".into(),
                    });
                }
                pieces.push(Piece::Text(std::mem::take(&mut text)));
                pieces.push(Piece::Slot(name));
            }
            '}' => {
                return Err(TranslateError::Malformed {
                    context: context.to_string(),
                    message: "unmatched `}`".into(),
                })
            }
            c => text.push(c),
        }
    }
    pieces.push(Piece::Text(text));
    Ok(pieces)
}

/// Substitutes `{name}` placeholders; `{{` and `}}` are literal braces.
/// Any placeholder without a value is an error.
pub fn fill(template: &str, values: &BTreeMap<&str, String>, context: &str) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    for piece in parse_template(template, context)? {
        match piece {
            Piece::Text(t) => out.push_str(&t),
            Piece::Slot(name) => match values.get(name.as_str()) {
                Some(v) => out.push_str(v),
                None => {
                    return Err(TranslateError::UnknownPlaceholder {
                        name,
                        context: context.to_string(),
                    })
                }
            },
        }
    }
    Ok(out)
}

/// "a", "a and b", "a, b, and c".
pub fn oxford_join(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [a] => a.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceStyle {
    #[default]
    Percent,
    Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KindTemplates {
    pub equals: Option<String>,
    pub interval: Option<String>,
    pub flag: Option<String>,
    pub pattern: Option<String>,
}

impl Default for KindTemplates {
    fn default() -> Self {
        KindTemplates {
            equals: Some("{feature} is {value}".into()),
            interval: Some("{feature} is between {lo} and {hi}".into()),
            flag: Some("{feature}".into()),
            pattern: Some("events {events} occur sequentially".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lexicon {
    /// Sentence template over `{body}`, `{target}` and `{confidence}`.
    pub rule: String,
    pub body_joiner: String,
    pub confidence_style: ConfidenceStyle,
    pub confidence_decimals: usize,
    /// Line template over `{n}` and `{rule}`.
    pub numbering: String,
    pub empty_sentinel: String,
    /// Used for targets without an entry in `targets`; sees `{target}`.
    pub target_default: String,
    pub templates: KindTemplates,
    /// Feature name -> phrase substituted for `{feature}`.
    pub features: BTreeMap<String, String>,
    /// Predicate name -> phrase replacing the kind template entirely.
    pub predicates: BTreeMap<String, String>,
    /// Target name -> phrase.
    pub targets: BTreeMap<String, String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon {
            rule: "If {body}, then {target} (confidence {confidence}).".into(),
            body_joiner: " and ".into(),
            confidence_style: ConfidenceStyle::Percent,
            confidence_decimals: 2,
            numbering: "{n}. {rule}".into(),
            empty_sentinel: "no known patterns".into(),
            target_default: "{target} holds".into(),
            templates: KindTemplates::default(),
            features: BTreeMap::new(),
            predicates: BTreeMap::new(),
            targets: BTreeMap::new(),
        }
    }
}

impl Lexicon {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn confidence(&self, precision: f64) -> String {
        let d = self.confidence_decimals;
        match self.confidence_style {
            ConfidenceStyle::Percent => format!("{:.*}%", d, precision * 100.0),
            ConfidenceStyle::Fraction => format!("{:.*}", d, precision),
        }
    }

    fn feature_phrase(&self, feature: &str) -> String {
        self.features.get(feature).cloned().unwrap_or_else(|| feature.to_string())
    }

    pub fn predicate_phrase(&self, name: &str, kind: &PredicateKind) -> Result<String> {
        if let Some(p) = self.predicates.get(name) {
            return Ok(p.clone());
        }
        let missing = || TranslateError::MissingTemplate(kind.kind_name().to_string());
        let mut v = BTreeMap::new();
        let template = match kind {
            PredicateKind::Equals { feature, value } => {
                v.insert("feature", self.feature_phrase(feature));
                v.insert("value", value.clone());
                self.templates.equals.as_ref().ok_or_else(missing)?
            }
            PredicateKind::Interval { feature, lo, hi, .. } => {
                v.insert("feature", self.feature_phrase(feature));
                v.insert("lo", short_number(*lo));
                v.insert("hi", short_number(*hi));
                self.templates.interval.as_ref().ok_or_else(missing)?
            }
            PredicateKind::Flag { feature } => {
                v.insert("feature", self.feature_phrase(feature));
                self.templates.flag.as_ref().ok_or_else(missing)?
            }
            PredicateKind::Pattern { events } => {
                v.insert("events", oxford_join(events));
                self.templates.pattern.as_ref().ok_or_else(missing)?
            }
        };
        fill(template, &v, &format!("{} template", kind.kind_name()))
    }

    pub fn target_phrase(&self, target: &str) -> Result<String> {
        match self.targets.get(target) {
            Some(p) => Ok(p.clone()),
            None => {
                let v = BTreeMap::from([("target", target.to_string())]);
                fill(&self.target_default, &v, "target_default")
            }
        }
    }
}

/// Up to six decimals with trailing zeros dropped: bin edges are float
/// midpoints such as 54.849999999999994.
pub fn short_number(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

/// One sentence for a rulebook entry.
pub fn translate_rule(entry: &RulebookEntry, lexicon: &Lexicon) -> Result<String> {
    let phrases = entry
        .body
        .iter()
        .map(|p| lexicon.predicate_phrase(&p.name, &p.kind))
        .collect::<Result<Vec<_>>>()?;
    let v = BTreeMap::from([
        ("body", phrases.join(&lexicon.body_joiner)),
        ("target", lexicon.target_phrase(&entry.target.name)?),
        ("confidence", lexicon.confidence(entry.metrics.precision)),
    ]);
    fill(&lexicon.rule, &v, "rule template")
}

/// Fills every entry's `translation` field.
pub fn translate_rulebook(book: &mut Rulebook, lexicon: &Lexicon) -> Result<()> {
    for e in &mut book.rules {
        e.translation = translate_rule(e, lexicon)?;
    }
    Ok(())
}

/// Entries by (reward desc, coverage desc, key asc).
pub fn render_order(entries: &[RulebookEntry]) -> Vec<&RulebookEntry> {
    let mut v: Vec<&RulebookEntry> = entries.iter().collect();
    v.sort_by(|a, b| {
        b.reward
            .total_cmp(&a.reward)
            .then(b.metrics.coverage_count.cmp(&a.metrics.coverage_count))
            .then_with(|| a.key.cmp(&b.key))
    });
    v
}

/// Numbered guidelines for the given entries, in the order given.
pub fn render_entries(entries: &[&RulebookEntry], lexicon: &Lexicon, allow_empty: bool) -> Result<String> {
    if entries.is_empty() {
        return if allow_empty {
            Ok(lexicon.empty_sentinel.clone())
        } else {
            Err(TranslateError::EmptyRulebook)
        };
    }
    let mut lines = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let v = BTreeMap::from([("n", (i + 1).to_string()), ("rule", translate_rule(e, lexicon)?)]);
        lines.push(fill(&lexicon.numbering, &v, "numbering")?);
    }
    Ok(lines.join("\n"))
}

pub fn render_rulebook(book: &Rulebook, lexicon: &Lexicon, allow_empty: bool) -> Result<String> {
    render_entries(&render_order(&book.rules), lexicon, allow_empty)
}

#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    /// Exact predicate match against a sample.
    Sample(SampleRef<'a>),
    /// Token-set Jaccard against rule translations.
    Text(&'a str),
}

pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Body predicates all hold on the sample. Evaluation errors count as no match.
pub fn entry_matches(entry: &RulebookEntry, sample: SampleRef<'_>) -> bool {
    entry
        .body
        .iter()
        .all(|p| evaluate_predicate(&p.kind, sample).unwrap_or(false))
}

/// Top-k rules for a query. Sample queries keep matching rules ranked by
/// reward; text queries rank every rule by Jaccard similarity of its
/// translation. Ties break by canonical key.
pub fn retrieve_rules<'b>(
    query: Query<'_>,
    book: &'b Rulebook,
    lexicon: &Lexicon,
    k: usize,
) -> Result<Vec<&'b RulebookEntry>> {
    if k == 0 {
        return Err(TranslateError::InvalidArgument("k must be at least 1".into()));
    }
    let mut scored: Vec<(f64, &RulebookEntry)> = match query {
        Query::Sample(s) => book
            .rules
            .iter()
            .filter(|e| entry_matches(e, s))
            .map(|e| (e.reward, e))
            .collect(),
        Query::Text(text) => {
            let q = tokens(text);
            book.rules
                .iter()
                .map(|e| {
                    let t = if e.translation.is_empty() {
                        translate_rule(e, lexicon)?
                    } else {
                        e.translation.clone()
                    };
                    Ok((jaccard(&q, &tokens(&t)), e))
                })
                .collect::<Result<_>>()?
        }
    };
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.key.cmp(&b.1.key)));
    Ok(scored.into_iter().take(k).map(|(_, e)| e).collect())
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionPolicy {
    /// Guidelines above this estimate switch from inject-all to retrieval.
    pub token_budget: usize,
    pub retrieve_k: usize,
}

impl Default for InjectionPolicy {
    fn default() -> Self {
        InjectionPolicy {
            token_budget: 2000,
            retrieve_k: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    InjectAll,
    Retrieved,
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guidelines {
    pub text: String,
    pub keys: Vec<String>,
    pub selection: Selection,
    pub estimated_tokens: usize,
}

/// Injects the whole rulebook when it fits the budget, otherwise retrieves
/// for the query (or truncates the ranked list when there is none) and drops
/// trailing rules until the text fits. At least one rule is kept.
pub fn select_guidelines(
    book: &Rulebook,
    lexicon: &Lexicon,
    query: Option<Query<'_>>,
    policy: &InjectionPolicy,
    allow_empty: bool,
) -> Result<Guidelines> {
    let ordered = render_order(&book.rules);
    let all = render_entries(&ordered, lexicon, allow_empty)?;
    let build = |entries: &[&RulebookEntry], selection| -> Result<Guidelines> {
        let text = render_entries(entries, lexicon, allow_empty)?;
        Ok(Guidelines {
            estimated_tokens: estimate_tokens(&text),
            keys: entries.iter().map(|e| e.key.clone()).collect(),
            text,
            selection,
        })
    };
    if estimate_tokens(&all) <= policy.token_budget {
        return build(&ordered, Selection::InjectAll);
    }
    let (mut chosen, selection) = match query {
        Some(q) => (retrieve_rules(q, book, lexicon, policy.retrieve_k.max(1))?, Selection::Retrieved),
        None => (ordered, Selection::Truncated),
    };
    while chosen.len() > 1 && estimate_tokens(&render_entries(&chosen, lexicon, allow_empty)?) > policy.token_budget {
        chosen.pop();
    }
    build(&chosen, selection)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: Option<String>,
    pub prompt: String,
    pub output: Option<String>,
    pub rules_slot: String,
    pub input_slot: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    System,
    Prompt,
    Output,
}

impl PromptTemplate {
    /// Parses a template file. Lines `=== system ===`, `=== prompt ===` and
    /// `=== output ===` open sections; without headers the whole text is the
    /// prompt. The rules and input slots must each appear exactly once and no
    /// other placeholder may appear, apart from names listed in `extra`.
    pub fn parse(text: &str, rules_slot: &str, input_slot: &str, extra: &[&str]) -> Result<Self> {
        let mut sections: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
        let mut current = Section::Prompt;
        let mut seen_header = false;
        for line in text.lines() {
            let trimmed = line.trim();
            if let Some(name) = trimmed.strip_prefix("===").and_then(|s| s.strip_suffix("===")) {
                current = match name.trim() {
                    "system" => Section::System,
                    "prompt" => Section::Prompt,
                    "output" => Section::Output,
                    other => return Err(TranslateError::UnknownSection(other.to_string())),
                };
                seen_header = true;
                sections.entry(current as u8).or_default();
                continue;
            }
            sections.entry(current as u8).or_default().push(line);
        }
        let join = |s: Section| -> Option<String> {
            sections.get(&(s as u8)).map(|lines| {
                let body = lines.join("\n");
                if seen_header {
                    body.trim_matches('\n').to_string()
                } else {
                    body
                }
            })
        };
        let t = PromptTemplate {
            system: join(Section::System),
            prompt: join(Section::Prompt).unwrap_or_default(),
            output: join(Section::Output),
            rules_slot: rules_slot.to_string(),
            input_slot: input_slot.to_string(),
        };
        t.check(extra)?;
        Ok(t)
    }

    fn parts(&self) -> Vec<(&'static str, &str)> {
        let mut v = Vec::new();
        if let Some(s) = &self.system {
            v.push(("system section", s.as_str()));
        }
        v.push(("prompt section", self.prompt.as_str()));
        if let Some(s) = &self.output {
            v.push(("output section", s.as_str()));
        }
        v
    }

    fn check(&self, extra: &[&str]) -> Result<()> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for (ctx, text) in self.parts() {
            for piece in parse_template(text, ctx)? {
                if let Piece::Slot(name) = piece {
                    if name != self.rules_slot && name != self.input_slot && !extra.contains(&name.as_str()) {
                        return Err(TranslateError::UnknownPlaceholder {
                            name,
                            context: ctx.to_string(),
                        });
                    }
                    *counts.entry(name).or_default() += 1;
                }
            }
        }
        for slot in [&self.rules_slot, &self.input_slot] {
            match counts.get(slot.as_str()).copied().unwrap_or(0) {
                0 => return Err(TranslateError::MissingSlot(slot.clone())),
                1 => {}
                _ => return Err(TranslateError::DuplicateSlot(slot.clone())),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: Option<String>,
    /// Instruction text with guidelines and input substituted.
    pub prompt: String,
    pub output_format: Option<String>,
    pub guidelines: String,
    pub input: String,
    pub estimated_tokens: usize,
}

impl PromptBundle {
    /// System, prompt and output sections joined by blank lines.
    pub fn full_text(&self) -> String {
        [self.system.as_deref(), Some(self.prompt.as_str()), self.output_format.as_deref()]
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Prompt plus output instructions, the user turn of a chat request.
    pub fn user_text(&self) -> String {
        [Some(self.prompt.as_str()), self.output_format.as_deref()]
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

pub fn assemble_prompt(
    template: &PromptTemplate,
    guidelines: &str,
    input: &str,
    extra: &BTreeMap<String, String>,
) -> Result<PromptBundle> {
    template.check(&extra.keys().map(String::as_str).collect::<Vec<_>>())?;
    let mut v: BTreeMap<&str, String> = extra.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    v.insert(&template.rules_slot, guidelines.to_string());
    v.insert(&template.input_slot, input.to_string());
    let system = template.system.as_ref().map(|s| fill(s, &v, "system section")).transpose()?;
    let prompt = fill(&template.prompt, &v, "prompt section")?;
    let output_format = template.output.as_ref().map(|s| fill(s, &v, "output section")).transpose()?;
    let mut bundle = PromptBundle {
        system,
        prompt,
        output_format,
        guidelines: guidelines.to_string(),
        input: input.to_string(),
        estimated_tokens: 0,
    };
    bundle.estimated_tokens = estimate_tokens(&bundle.full_text());
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Predicate, SequenceSample, Target};
    use crate::ruleeval::{Provenance, RewardMetric, RuleMetrics, RulebookMetadata};

    fn entry(body: Vec<PredicateKind>, target: Target, pos: usize, cov: usize, key: &str) -> RulebookEntry {
        let body = body
            .into_iter()
            .enumerate()
            .map(|(id, kind)| Predicate {
                id,
                name: kind.display_name(),
                kind,
            })
            .collect();
        let metrics = RuleMetrics::from_counts(cov, pos, pos.max(1) * 2, 200);
        RulebookEntry {
            key: key.into(),
            target,
            body,
            metrics,
            reward_metric: RewardMetric::Precision,
            reward: metrics.precision,
            provenance: Provenance::Searched,
            translation: String::new(),
        }
    }

    fn pattern(events: &[&str]) -> PredicateKind {
        PredicateKind::Pattern {
            events: events.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn log_lexicon() -> Lexicon {
        Lexicon {
            rule: "If {body}, {target} with a confidence of {confidence}".into(),
            targets: BTreeMap::from([(
                "label=1".to_string(),
                "it indicates a high probability of anomaly".to_string(),
            )]),
            ..Lexicon::default()
        }
    }

    #[test]
    fn bin_edges_render_short() {
        assert_eq!(short_number(54.849999999999994), "54.85");
        assert_eq!(short_number(6.5), "6.5");
        assert_eq!(short_number(3.0), "3");
        assert_eq!(short_number(-0.0000001), "0");
    }

    #[test]
    fn log_rule_sentence() {
        // 0.9553 precision: 2101 of 2199 is 0.95543, so use an exact ratio.
        let mut e = entry(vec![pattern(&["E11", "E28"])], Target::label("1"), 9553, 10000, "k");
        e.metrics.precision = 0.9553;
        assert_eq!(
            translate_rule(&e, &log_lexicon()).unwrap(),
            "If events E11 and E28 occur sequentially, it indicates a high probability of anomaly with a confidence of 95.53%"
        );
    }

    #[test]
    fn relation_rule_sentence() {
        let player = PredicateKind::Flag { feature: "player_of".into() };
        let member = PredicateKind::Flag { feature: "member_of".into() };
        let lex = Lexicon {
            rule: "If {body}, then {target}.".into(),
            predicates: BTreeMap::from([(
                "player_of".to_string(),
                "someone is a player of a certain team".to_string(),
            )]),
            targets: BTreeMap::from([("member_of".to_string(), "they are also a member of that team".to_string())]),
            ..Lexicon::default()
        };
        let e = entry(vec![player], Target::predicate(member), 10, 10, "k");
        assert_eq!(
            translate_rule(&e, &lex).unwrap(),
            "If someone is a player of a certain team, then they are also a member of that team."
        );
    }

    #[test]
    fn single_flag_default_template() {
        let e = entry(vec![PredicateKind::Flag { feature: "hot".into() }], Target::label("1"), 9, 10, "k");
        assert_eq!(
            translate_rule(&e, &Lexicon::default()).unwrap(),
            "If hot, then label=1 holds (confidence 90.00%)."
        );
    }

    #[test]
    fn oxford_joins() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(oxford_join(&s(&["E11", "E28"])), "E11 and E28");
        assert_eq!(oxford_join(&s(&["E11", "E26", "E20"])), "E11, E26, and E20");
    }

    #[test]
    fn missing_template_names_kind() {
        let mut lex = Lexicon::default();
        lex.templates.pattern = None;
        let e = entry(vec![pattern(&["A"])], Target::label("1"), 1, 1, "k");
        let err = translate_rule(&e, &lex).unwrap_err();
        assert!(err.to_string().contains("pattern"), "{err}");
    }

    #[test]
    fn unfilled_placeholder_is_error() {
        let lex = Lexicon {
            rule: "If {body} then {oops}".into(),
            ..Lexicon::default()
        };
        let e = entry(vec![pattern(&["A"])], Target::label("1"), 1, 1, "k");
        assert!(matches!(
            translate_rule(&e, &lex),
            Err(TranslateError::UnknownPlaceholder { .. })
        ));
    }

    fn book(entries: Vec<RulebookEntry>) -> Rulebook {
        Rulebook::new(RulebookMetadata::default(), entries)
    }

    #[test]
    fn render_orders_by_reward_then_coverage_then_key() {
        let t = Target::label("1");
        let b = book(vec![
            entry(vec![pattern(&["A"])], t.clone(), 8, 10, "c"),
            entry(vec![pattern(&["B"])], t.clone(), 18, 20, "b"),
            entry(vec![pattern(&["C"])], t.clone(), 10, 10, "a"),
            entry(vec![pattern(&["D"])], t, 9, 10, "d"),
        ]);
        let text = render_rulebook(&b, &Lexicon::default(), false).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("1. If events C "));
        // 0.9 with coverage 20 before 0.9 with coverage 10
        assert!(lines[1].starts_with("2. If events B "));
        assert!(lines[2].starts_with("3. If events D "));
        assert!(lines[3].starts_with("4. If events A "));
    }

    #[test]
    fn empty_book_sentinel() {
        let b = book(vec![]);
        assert_eq!(render_rulebook(&b, &Lexicon::default(), true).unwrap(), "no known patterns");
        assert!(matches!(
            render_rulebook(&b, &Lexicon::default(), false),
            Err(TranslateError::EmptyRulebook)
        ));
    }

    #[test]
    fn retrieve_by_sample_matches_ordered_pattern() {
        let t = Target::label("1");
        let b = book(vec![
            entry(vec![pattern(&["E11", "E28"])], t.clone(), 9, 10, "a"),
            entry(vec![pattern(&["E28", "E11"])], t.clone(), 10, 10, "b"),
            entry(vec![pattern(&["E5"])], t, 10, 10, "c"),
        ]);
        let seq = SequenceSample {
            events: ["E5", "E11", "E3", "E28"].iter().map(|s| s.to_string()).collect(),
            label: true,
        };
        let got = retrieve_rules(Query::Sample(SampleRef::Sequence(&seq)), &b, &Lexicon::default(), 5).unwrap();
        let keys: Vec<&str> = got.iter().map(|e| e.key.as_str()).collect();
        assert_eq!(keys, vec!["c", "a"]);
        for e in got {
            assert!(entry_matches(e, SampleRef::Sequence(&seq)));
        }
    }

    #[test]
    fn retrieve_lexical_disjoint_is_key_ordered() {
        let t = Target::label("1");
        let b = book(vec![
            entry(vec![pattern(&["B"])], t.clone(), 9, 10, "b"),
            entry(vec![pattern(&["A"])], t, 10, 10, "a"),
        ]);
        let got = retrieve_rules(Query::Text("zzz qqq"), &b, &Lexicon::default(), 10).unwrap();
        let keys: Vec<&str> = got.iter().map(|e| e.key.as_str()).collect();
        assert_eq!(keys, vec!["a", "b"]);
        let got = retrieve_rules(Query::Text("events b"), &b, &Lexicon::default(), 1).unwrap();
        assert_eq!(got[0].key, "b");
        assert!(retrieve_rules(Query::Text("x"), &b, &Lexicon::default(), 0).is_err());
    }

    #[test]
    fn jaccard_values() {
        assert_eq!(jaccard(&tokens("a b"), &tokens("B c")), 1.0 / 3.0);
        assert_eq!(jaccard(&tokens(""), &tokens("")), 0.0);
    }

    #[test]
    fn prompt_with_figure_style_slots() {
        let text = "=== system ===\nYou review logs.\n=== prompt ===\nThe Guidelines are:\n{guidelines}\nLogs:\n{logs}\n=== output ===\nAnswer with {{\"anomaly\": bool}}.";
        let t = PromptTemplate::parse(text, "guidelines", "logs", &[]).unwrap();
        let b = assemble_prompt(&t, "1. rule", "E1 E2", &BTreeMap::new()).unwrap();
        assert_eq!(b.system.as_deref(), Some("You review logs."));
        assert_eq!(b.prompt, "The Guidelines are:\n1. rule\nLogs:\nE1 E2");
        assert_eq!(b.output_format.as_deref(), Some("Answer with {\"anomaly\": bool}."));
        assert_eq!(b.full_text().matches("1. rule").count(), 1);
        assert_eq!(b.estimated_tokens, estimate_tokens(&b.full_text()));
        let again = assemble_prompt(&t, "1. rule", "E1 E2", &BTreeMap::new()).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn prompt_slot_errors() {
        assert!(matches!(
            PromptTemplate::parse("only {input}", "rules", "input", &[]),
            Err(TranslateError::MissingSlot(s)) if s == "rules"
        ));
        assert!(matches!(
            PromptTemplate::parse("{rules} {rules} {input}", "rules", "input", &[]),
            Err(TranslateError::DuplicateSlot(_))
        ));
        assert!(matches!(
            PromptTemplate::parse("{rules} {input} {who}", "rules", "input", &[]),
            Err(TranslateError::UnknownPlaceholder { .. })
        ));
        assert!(PromptTemplate::parse("{rules} {input} {who}", "rules", "input", &["who"]).is_ok());
        assert!(matches!(
            PromptTemplate::parse("=== nope ===\n{rules}{input}", "rules", "input", &[]),
            Err(TranslateError::UnknownSection(_))
        ));
    }

    #[test]
    fn empty_rules_sentinel_in_prompt() {
        let t = PromptTemplate::parse("Rules:\n{rules}\nInput: {input}", "rules", "input", &[]).unwrap();
        let g = select_guidelines(&book(vec![]), &Lexicon::default(), None, &InjectionPolicy::default(), true)
            .unwrap();
        let b = assemble_prompt(&t, &g.text, "x", &BTreeMap::new()).unwrap();
        assert_eq!(b.prompt, "Rules:\nno known patterns\nInput: x");
    }

    #[test]
    fn injection_policy_switches_to_retrieval() {
        let t = Target::label("1");
        let entries = (0..50)
            .map(|i| entry(vec![pattern(&[&format!("E{i}")])], t.clone(), 9, 10, &format!("k{i:02}")))
            .collect();
        let b = book(entries);
        let lex = Lexicon::default();
        let all = select_guidelines(&b, &lex, None, &InjectionPolicy { token_budget: 100_000, retrieve_k: 3 }, false)
            .unwrap();
        assert_eq!(all.selection, Selection::InjectAll);
        assert_eq!(all.keys.len(), 50);
        let small = InjectionPolicy { token_budget: 60, retrieve_k: 3 };
        let r = select_guidelines(&b, &lex, Some(Query::Text("events E7")), &small, false).unwrap();
        assert_eq!(r.selection, Selection::Retrieved);
        assert_eq!(r.keys[0], "k07");
        assert!(r.keys.len() <= 3);
        let tr = select_guidelines(&b, &lex, None, &small, false).unwrap();
        assert_eq!(tr.selection, Selection::Truncated);
        assert!(tr.estimated_tokens <= 60);
    }

    #[test]
    fn lexicon_from_toml() {
        let lex = Lexicon::from_toml(
            r#"
rule = "If {body}, {target} with a confidence of {confidence}"
[targets]
"label=1" = "anomaly"
[features]
temp = "the temperature"
"#,
        )
        .unwrap();
        assert_eq!(lex.targets["label=1"], "anomaly");
        assert_eq!(lex.body_joiner, " and ");
        assert_eq!(
            lex.predicate_phrase("x", &PredicateKind::Equals { feature: "temp".into(), value: "high".into() })
                .unwrap(),
            "the temperature is high"
        );
    }
}

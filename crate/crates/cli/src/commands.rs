use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::warn;
use serde::{Deserialize, Serialize};

use rulemine::dataset::{
    build_matrix, build_predicate_space, evaluate_predicate, read_sequences, read_table, Dataset, PredicateMatrix,
    Target,
};
use rulemine::formulate::{
    propose_targets, Advisor, CapturingTransport, ChatMessage, ChatRequest, ChatTransport, FormulationAdvice,
    HttpTransport, IdentityAdvisor, RemoteAdvisor, ReplayTransport,
};
use rulemine::oracle::{enumerate_rules, search_recall, OracleConfig};
use rulemine::pipeline::{mine_target, TargetRun};
use rulemine::ruleeval::{RuleMetrics, Rulebook, RulebookMetadata};
use rulemine::search;
use rulemine::seed::fingerprint;
use rulemine::translate::{
    assemble_prompt, entry_matches, render_rulebook, select_guidelines, translate_rulebook, Guidelines, Lexicon,
    PromptBundle, PromptTemplate, Query,
};

use crate::config::{AdvisorMode, DataKind, RunConfig};
use crate::manifest::RunContext;
use crate::AugmentMode;

pub const TRANSCRIPT_DIR: &str = "transcripts";
pub const DEFAULT_AUGMENT_TEMPLATE: &str = include_str!("../data/augment_prompt.txt");

pub fn load_dataset(cfg: &RunConfig, ctx: &mut RunContext) -> Result<(Dataset, String)> {
    let Some(path) = &cfg.data.path else {
        bail!("no dataset configured (set data.path or pass --data)");
    };
    let bytes = ctx.read_input(path)?;
    let fp = fingerprint(&bytes);
    let ds = match cfg.data.kind {
        DataKind::Table => Dataset::Table(
            read_table(Cursor::new(bytes), &cfg.data.table_options())
                .with_context(|| format!("parsing {}", path.display()))?,
        ),
        DataKind::Sequences => Dataset::Sequences(
            read_sequences(Cursor::new(bytes)).with_context(|| format!("parsing {}", path.display()))?,
        ),
    };
    Ok((ds, fp))
}

pub fn load_lexicon(cfg: &RunConfig, ctx: &mut RunContext) -> Result<Lexicon> {
    match &cfg.translate.lexicon {
        Some(path) => {
            let text = ctx.read_input_text(path)?;
            Lexicon::from_toml(&text).with_context(|| format!("parsing lexicon {}", path.display()))
        }
        None => Ok(Lexicon::default()),
    }
}

/// Network transport that records transcripts, or a replay of recorded ones.
pub fn build_transport(cfg: &RunConfig, out_dir: &Path) -> Result<Box<dyn ChatTransport>> {
    Ok(match &cfg.advisor.replay_from {
        Some(dir) => Box::new(
            ReplayTransport::from_dir(dir).with_context(|| format!("loading transcripts from {}", dir.display()))?,
        ),
        None => Box::new(CapturingTransport::new(
            HttpTransport::from_config(&cfg.advisor.endpoint),
            out_dir.join(TRANSCRIPT_DIR),
        )),
    })
}

pub fn build_advisor(cfg: &RunConfig, ctx: &mut RunContext) -> Result<Box<dyn Advisor>> {
    Ok(match cfg.advisor.mode {
        AdvisorMode::Identity => Box::new(IdentityAdvisor),
        AdvisorMode::Heuristic => Box::new(cfg.advisor.heuristic.clone()),
        AdvisorMode::Remote => {
            if let Some(p) = &cfg.advisor.endpoint.prompt_template {
                ctx.read_input(p)?;
            }
            let transport = build_transport(cfg, &ctx.out_dir)?;
            Box::new(RemoteAdvisor::new(cfg.advisor.endpoint.clone(), transport))
        }
    })
}

fn target_matrix(ds: &Dataset, target: &Target, cfg: &RunConfig) -> Result<PredicateMatrix> {
    let registry = build_predicate_space(ds, target, &cfg.space)?;
    Ok(build_matrix(ds, &registry, target)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MineReport {
    pub dataset_fingerprint: String,
    pub advisor: String,
    pub advice: Vec<FormulationAdvice>,
    pub targets: Vec<TargetRun>,
    /// Targets with no positive sample.
    pub skipped: Vec<String>,
}

pub fn mine(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let (ds, dataset_fp) = ctx.timed("ingest", |ctx| load_dataset(cfg, ctx))?;
    let lexicon = ctx.timed("ingest", |ctx| load_lexicon(cfg, ctx))?;
    let base = cfg.data.base_target();
    let task = cfg.task.description();
    let advisor = build_advisor(cfg, ctx)?;
    let base_matrix = ctx.timed("predicates", |_| target_matrix(&ds, &base, cfg))?;
    let base_advice = ctx.timed("formulate", |_| Ok(advisor.advise(&task, &base_matrix)?))?;
    let targets = propose_targets(&base_advice, &base);

    let mut book = Rulebook::new(
        RulebookMetadata {
            dataset_fingerprint: dataset_fp.clone(),
            min_coverage_count: cfg.clean.min_coverage_count,
            notes: base_advice.notes.clone(),
            ..Default::default()
        },
        Vec::new(),
    );
    let mut report = MineReport {
        dataset_fingerprint: dataset_fp,
        advisor: advisor.name().to_string(),
        advice: vec![base_advice.clone()],
        targets: Vec::new(),
        skipped: Vec::new(),
    };
    let mut first = Some((base_matrix, base_advice));
    for (i, target) in targets.iter().enumerate() {
        let (matrix, advice) = match first.take() {
            Some(pair) => pair,
            None => {
                let m = ctx.timed("predicates", |_| target_matrix(&ds, target, cfg))?;
                let a = ctx.timed("formulate", |_| Ok(advisor.advise(&task, &m)?))?;
                report.advice.push(a.clone());
                (m, a)
            }
        };
        if matrix.positives() == 0 {
            warn!("target {} has no positive samples; skipped", target.name);
            report.skipped.push(target.name.clone());
            continue;
        }
        let opts = cfg.mine_options(cfg.search_config_for(cfg.profile, "mine", i as u64));
        let (entries, run) = ctx.timed("search", |_| Ok(mine_target(&matrix, &advice, &opts)?))?;
        println!(
            "{}: {} positives, {} predicates after advice, {} harvested, {} kept",
            run.target, run.positives, run.filter.after, run.harvested, run.after_pruning
        );
        book.metadata.search.insert(target.name.clone(), serde_json::to_value(opts.search)?);
        book.metadata.min_reward = opts.effective_min_reward();
        for e in entries {
            book.push(e);
        }
        report.targets.push(run);
    }
    let rendered = ctx.timed("translate", |_| {
        translate_rulebook(&mut book, &lexicon)?;
        Ok(render_rulebook(&book, &lexicon, true)?)
    })?;
    ctx.write_artifact("rulebook.json", book.to_text())?;
    ctx.write_artifact("rules.txt", format!("{rendered}\n"))?;
    ctx.write_artifact("mine_report.json", to_json(&report)?)?;
    println!("{} rules written to {}", book.len(), ctx.out_dir.join("rulebook.json").display());
    Ok(())
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RuleScore {
    pub key: String,
    pub target: String,
    pub body: Vec<String>,
    pub metrics: RuleMetrics,
}

/// Predict positive iff any rule of the target matches.
#[derive(Debug, Serialize, Deserialize)]
pub struct PooledScore {
    pub target: String,
    pub rules: usize,
    pub metrics: RuleMetrics,
    pub accuracy: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalRulesReport {
    pub dataset_fingerprint: String,
    pub rules: Vec<RuleScore>,
    pub pooled: Vec<PooledScore>,
}

/// Body predicates whose feature is absent from a tabular dataset.
fn schema_mismatches(book: &Rulebook, ds: &Dataset) -> Vec<String> {
    let Dataset::Table(table) = ds else {
        return Vec::new();
    };
    let mut bad = Vec::new();
    for e in &book.rules {
        for p in &e.body {
            if let Some(f) = p.kind.feature() {
                if table.schema().index_of(f).is_none() {
                    bad.push(format!("{} (rule {})", p.name, e.key));
                }
            }
        }
    }
    bad
}

pub fn eval_rules(cfg: &RunConfig, rulebook: &Path, ctx: &mut RunContext) -> Result<()> {
    let book = Rulebook::from_text(&ctx.read_input_text(rulebook)?)
        .with_context(|| format!("parsing rulebook {}", rulebook.display()))?;
    let (ds, dataset_fp) = ctx.timed("ingest", |ctx| load_dataset(cfg, ctx))?;
    let bad = schema_mismatches(&book, &ds);
    if !bad.is_empty() {
        bail!("rulebook predicates not evaluable on this dataset: {}", bad.join(", "));
    }
    let report = ctx.timed("evaluate", |_| {
        let n = ds.len();
        let mut labels: BTreeMap<String, Vec<bool>> = BTreeMap::new();
        let mut targets: Vec<Target> = vec![cfg.data.base_target()];
        for e in &book.rules {
            if !targets.iter().any(|t| t.name == e.target.name) {
                targets.push(e.target.clone());
            }
        }
        for t in &targets {
            let col = (0..n).map(|i| t.holds(ds.sample(i))).collect::<Result<Vec<_>, _>>()?;
            labels.insert(t.name.clone(), col);
        }
        let mut predicted: BTreeMap<&str, Vec<bool>> =
            targets.iter().map(|t| (t.name.as_str(), vec![false; n])).collect();
        let mut rules = Vec::new();
        for e in &book.rules {
            for p in &e.body {
                evaluate_predicate(&p.kind, ds.sample(0))
                    .with_context(|| format!("predicate {} of rule {}", p.name, e.key))?;
            }
            let y = &labels[&e.target.name];
            let pred = predicted.get_mut(e.target.name.as_str()).expect("target registered");
            let (mut cov, mut pos) = (0, 0);
            for i in 0..n {
                if entry_matches(e, ds.sample(i)) {
                    cov += 1;
                    pos += usize::from(y[i]);
                    pred[i] = true;
                }
            }
            let total = y.iter().filter(|&&b| b).count();
            rules.push(RuleScore {
                key: e.key.clone(),
                target: e.target.name.clone(),
                body: e.body_names().into_iter().map(str::to_string).collect(),
                metrics: RuleMetrics::from_counts(cov, pos, total, n),
            });
        }
        let pooled = targets
            .iter()
            .map(|t| {
                let y = &labels[&t.name];
                let p = &predicted[t.name.as_str()];
                let tp = (0..n).filter(|&i| p[i] && y[i]).count();
                let correct = (0..n).filter(|&i| p[i] == y[i]).count();
                PooledScore {
                    target: t.name.clone(),
                    rules: book.rules.iter().filter(|e| e.target.name == t.name).count(),
                    metrics: RuleMetrics::from_counts(
                        p.iter().filter(|&&b| b).count(),
                        tp,
                        y.iter().filter(|&&b| b).count(),
                        n,
                    ),
                    accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
                }
            })
            .collect();
        Ok(EvalRulesReport {
            dataset_fingerprint: dataset_fp,
            rules,
            pooled,
        })
    })?;
    println!("{:<40} {:>9} {:>9} {:>9} {:>8}", "rule", "precision", "recall", "f1", "covered");
    for r in &report.rules {
        println!(
            "{:<40} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            r.key, r.metrics.precision, r.metrics.recall, r.metrics.f1, r.metrics.coverage_count
        );
    }
    for p in &report.pooled {
        println!(
            "pooled {} ({} rules): precision {:.4} recall {:.4} f1 {:.4} accuracy {:.4}",
            p.target, p.rules, p.metrics.precision, p.metrics.recall, p.metrics.f1, p.accuracy
        );
    }
    ctx.write_artifact("eval_rules.json", to_json(&report)?)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OracleCheckReport {
    pub target: String,
    pub n_predicates: usize,
    pub oracle: OracleConfig,
    pub enumerated: usize,
    pub qualifying: usize,
    pub terminal_qualifying: usize,
    pub harvested: usize,
    /// Recall of the pruned harvest against the pruned reachable set.
    pub recall: f64,
    pub missed: Vec<String>,
}

pub fn oracle_check(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let (ds, _) = ctx.timed("ingest", |ctx| load_dataset(cfg, ctx))?;
    let target = cfg.data.base_target();
    let matrix = ctx.timed("predicates", |_| target_matrix(&ds, &target, cfg))?;
    let mut search_cfg = cfg.search_config_for(cfg.profile, "oracle-check", 0);
    if let Some(k) = cfg.oracle.max_len {
        search_cfg.max_body_predicates = k;
    }
    let mut oracle_cfg = OracleConfig::from_search(&search_cfg);
    oracle_cfg.budget = u128::from(cfg.oracle.budget);
    let oracle = ctx.timed("enumerate", |_| Ok(enumerate_rules(&matrix, &oracle_cfg)?))?;
    let report = ctx.timed("search", |_| Ok(search(&matrix, &search_cfg)?))?;
    let harvest = report.rules();
    let recall = search_recall(&harvest, &oracle.terminal_qualifying);
    let found: std::collections::BTreeSet<String> = harvest.iter().map(|r| r.key()).collect();
    let missed = rulemine::ruleeval::dominance_prune(oracle.terminal_qualifying.clone())
        .iter()
        .map(|r| r.key())
        .filter(|k| !found.contains(k))
        .collect();
    let out = OracleCheckReport {
        target: target.name.clone(),
        n_predicates: matrix.n_predicates(),
        oracle: oracle_cfg,
        enumerated: oracle.enumeration_count,
        qualifying: oracle.qualifying.len(),
        terminal_qualifying: oracle.terminal_qualifying.len(),
        harvested: harvest.len(),
        recall,
        missed,
    };
    println!(
        "{}: {} predicates, {} bodies enumerated, {} qualifying ({} reachable), {} harvested",
        out.target, out.n_predicates, out.enumerated, out.qualifying, out.terminal_qualifying, out.harvested
    );
    println!("search recall: {:.4}", out.recall);
    ctx.write_artifact("oracle_check.json", to_json(&out)?)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub guidelines: Guidelines,
    pub bundle: PromptBundle,
}

pub fn augment(cfg: &RunConfig, rulebook: &PathBuf, input: &PathBuf, mode: AugmentMode, ctx: &mut RunContext) -> Result<()> {
    let book = Rulebook::from_text(&ctx.read_input_text(rulebook)?)
        .with_context(|| format!("parsing rulebook {}", rulebook.display()))?;
    let input_text = ctx.read_input_text(input)?;
    let input_text = input_text.trim_end();
    let lexicon = load_lexicon(cfg, ctx)?;
    let template_text = match &cfg.translate.template {
        Some(p) => ctx.read_input_text(p)?,
        None => DEFAULT_AUGMENT_TEMPLATE.to_string(),
    };
    let record = ctx.timed("assemble", |_| {
        let template = PromptTemplate::parse(&template_text, "rules", "input", &[])?;
        let guidelines = select_guidelines(
            &book,
            &lexicon,
            Some(Query::Text(input_text)),
            &cfg.translate.policy,
            cfg.translate.allow_empty,
        )?;
        let bundle = assemble_prompt(&template, &guidelines.text, input_text, &BTreeMap::new())?;
        Ok(AugmentRecord { guidelines, bundle })
    })?;
    let text = format!("{}\n", record.bundle.full_text());
    ctx.write_artifact("prompt.txt", &text)?;
    ctx.write_artifact("prompt.json", to_json(&record)?)?;
    match mode {
        AugmentMode::Dry => print!("{text}"),
        AugmentMode::Remote => {
            let e = &cfg.advisor.endpoint;
            let mut messages = Vec::new();
            if let Some(s) = &record.bundle.system {
                messages.push(ChatMessage {
                    role: "system".into(),
                    content: s.clone(),
                });
            }
            messages.push(ChatMessage {
                role: "user".into(),
                content: record.bundle.user_text(),
            });
            let request = ChatRequest {
                model: e.model.clone(),
                messages,
                temperature: e.temperature,
                top_p: e.top_p,
                max_tokens: e.max_tokens,
                frequency_penalty: e.frequency_penalty,
                presence_penalty: e.presence_penalty,
            };
            let transport = build_transport(cfg, &ctx.out_dir)?;
            let reply = ctx.timed("remote", |_| Ok(transport.complete(&request)?))?;
            ctx.write_artifact("reply.txt", format!("{reply}\n"))?;
            println!("{reply}");
        }
    }
    Ok(())
}

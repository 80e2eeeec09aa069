use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use rulemine::dataset::{FeatureKind, SpaceOptions, TableOptions, Target};
use rulemine::formulate::{EndpointConfig, HeuristicAdvisor, TaskDescription};
use rulemine::mcts::{SearchConfig, TaskProfile};
use rulemine::pipeline::MineOptions;
use rulemine::ruleeval::RewardMetric;
use rulemine::seed::derive_seed;
use rulemine::translate::InjectionPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Table,
    Sequences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub kind: DataKind,
    pub delimiter: char,
    pub label_column: Option<String>,
    /// Label value counted as the positive class.
    pub positive_class: String,
    /// Column kinds that override inference.
    pub kinds: BTreeMap<String, FeatureKind>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            kind: DataKind::Table,
            delimiter: ',',
            label_column: Some("label".into()),
            positive_class: "1".into(),
            kinds: BTreeMap::new(),
        }
    }
}

impl DataConfig {
    pub fn table_options(&self) -> TableOptions {
        TableOptions {
            delimiter: self.delimiter,
            label_column: self.label_column.clone(),
            kinds: self.kinds.clone(),
        }
    }

    pub fn base_target(&self) -> Target {
        Target::label(self.positive_class.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub description: String,
    pub schema_summary: String,
    pub label_semantics: String,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            name: "rules".into(),
            description: "Find conjunctions of conditions that imply the positive label.".into(),
            schema_summary: String::new(),
            label_semantics: String::new(),
        }
    }
}

impl TaskConfig {
    pub fn description(&self) -> TaskDescription {
        TaskDescription {
            name: self.name.clone(),
            description: self.description.clone(),
            schema_summary: self.schema_summary.clone(),
            label_semantics: self.label_semantics.clone(),
            candidate_targets: Vec::new(),
        }
    }
}

/// Per-field overrides of the profile's search defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOverrides {
    pub total_rollouts: Option<usize>,
    pub exploration_c: Option<f64>,
    pub max_body_predicates: Option<usize>,
    pub terminal_threshold: Option<f64>,
    pub terminal_strict: Option<bool>,
    pub reward_metric: Option<RewardMetric>,
    pub min_support_to_expand: Option<usize>,
}

impl SearchOverrides {
    pub fn apply(&self, mut c: SearchConfig) -> SearchConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(
            total_rollouts,
            exploration_c,
            max_body_predicates,
            terminal_threshold,
            terminal_strict,
            reward_metric,
            min_support_to_expand
        );
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    /// Unset: the terminal threshold for precision rewards, else 0.
    pub min_reward: Option<f64>,
    pub min_coverage_count: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            min_reward: None,
            min_coverage_count: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AdvisorMode {
    #[default]
    Identity,
    Heuristic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisorConfig {
    pub mode: AdvisorMode,
    pub heuristic: HeuristicAdvisor,
    pub endpoint: EndpointConfig,
    /// Answer remote requests from transcripts in this directory instead of
    /// the network.
    pub replay_from: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslateConfig {
    pub lexicon: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub policy: InjectionPolicy,
    /// Render "no known patterns" instead of failing on an empty rulebook.
    pub allow_empty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    /// Longest body enumerated; the search's body limit when unset.
    pub max_len: Option<usize>,
    pub budget: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            max_len: None,
            budget: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridworldConfig {
    /// Map file; the bundled fixture when unset.
    pub map: Option<PathBuf>,
    pub p: f64,
    pub episodes: usize,
    pub eval_episodes: usize,
}

impl Default for GridworldConfig {
    fn default() -> Self {
        GridworldConfig {
            map: None,
            p: 0.7,
            episodes: 1000,
            eval_episodes: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: TaskProfile,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub data: DataConfig,
    pub task: TaskConfig,
    pub space: SpaceOptions,
    pub search: SearchOverrides,
    pub clean: CleanConfig,
    pub advisor: AdvisorConfig,
    pub translate: TranslateConfig,
    pub oracle: OracleSettings,
    pub gridworld: GridworldConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: TaskProfile::Anomaly,
            seed: 0,
            out_dir: PathBuf::from("out"),
            workers: 1,
            data: DataConfig::default(),
            task: TaskConfig::default(),
            space: SpaceOptions::default(),
            search: SearchOverrides::default(),
            clean: CleanConfig::default(),
            advisor: AdvisorConfig::default(),
            translate: TranslateConfig::default(),
            oracle: OracleSettings::default(),
            gridworld: GridworldConfig::default(),
        }
    }
}

/// Command-line flags that override config fields.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Task profile supplying search defaults.
    #[arg(long, global = true, value_parser = parse_profile)]
    pub profile: Option<TaskProfile>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Independent search trees per target.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Dataset file.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub data_kind: Option<DataKind>,
    #[arg(long, global = true)]
    pub label_column: Option<String>,
    #[arg(long, global = true)]
    pub positive_class: Option<String>,
    /// Gini bins per continuous feature.
    #[arg(long, global = true)]
    pub n_bins: Option<usize>,
    #[arg(long, global = true)]
    pub rollouts: Option<usize>,
    #[arg(long, global = true)]
    pub exploration_c: Option<f64>,
    #[arg(long, global = true)]
    pub max_body: Option<usize>,
    /// Terminal precision threshold.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Terminal comparison: strict (>) or not (>=).
    #[arg(long, global = true)]
    pub strict: Option<bool>,
    #[arg(long, global = true, value_parser = parse_metric)]
    pub reward_metric: Option<RewardMetric>,
    #[arg(long, global = true)]
    pub min_support: Option<usize>,
    #[arg(long, global = true)]
    pub min_reward: Option<f64>,
    #[arg(long, global = true)]
    pub min_coverage: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub advisor: Option<AdvisorMode>,
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, global = true)]
    pub template: Option<PathBuf>,
    #[arg(long, global = true)]
    pub token_budget: Option<usize>,
    #[arg(long, global = true)]
    pub retrieve_k: Option<usize>,
}

fn parse_profile(s: &str) -> Result<TaskProfile, String> {
    s.parse().map_err(|e: rulemine::SearchError| e.to_string())
}

fn parse_metric(s: &str) -> Result<RewardMetric, String> {
    match s {
        "precision" => Ok(RewardMetric::Precision),
        "f1" => Ok(RewardMetric::F1),
        "precision_plus_recall" => Ok(RewardMetric::PrecisionPlusRecall),
        other => Err(format!(
            "unknown reward metric `{other}` (precision, f1, precision_plus_recall)"
        )),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = o.$src.clone() {
                    self.$($dst)+ = v;
                }
            };
        }
        set!(profile => profile);
        set!(seed => seed);
        set!(out => out_dir);
        set!(workers => workers);
        set!(data_kind => data.kind);
        set!(positive_class => data.positive_class);
        set!(n_bins => space.n_bins);
        set!(min_coverage => clean.min_coverage_count);
        set!(advisor => advisor.mode);
        set!(token_budget => translate.policy.token_budget);
        set!(retrieve_k => translate.policy.retrieve_k);
        if o.data.is_some() {
            self.data.path = o.data.clone();
        }
        if o.label_column.is_some() {
            self.data.label_column = o.label_column.clone();
        }
        if o.min_reward.is_some() {
            self.clean.min_reward = o.min_reward;
        }
        if o.lexicon.is_some() {
            self.translate.lexicon = o.lexicon.clone();
        }
        if o.template.is_some() {
            self.translate.template = o.template.clone();
        }
        let s = &mut self.search;
        s.total_rollouts = o.rollouts.or(s.total_rollouts);
        s.exploration_c = o.exploration_c.or(s.exploration_c);
        s.max_body_predicates = o.max_body.or(s.max_body_predicates);
        s.terminal_threshold = o.threshold.or(s.terminal_threshold);
        s.terminal_strict = o.strict.or(s.terminal_strict);
        s.reward_metric = o.reward_metric.or(s.reward_metric);
        s.min_support_to_expand = o.min_support.or(s.min_support_to_expand);
    }

    /// Search settings for the `index`-th job of `stage`.
    pub fn search_config_for(&self, profile: TaskProfile, stage: &str, index: u64) -> SearchConfig {
        let mut c = self.search.apply(profile.search_config());
        c.rng_seed = derive_seed(self.seed, stage, index);
        c
    }

    pub fn mine_options(&self, search: SearchConfig) -> MineOptions {
        MineOptions {
            search,
            workers: self.workers,
            min_reward: self.clean.min_reward,
            min_coverage_count: self.clean.min_coverage_count,
        }
    }

    /// Rejects invalid settings before any work starts.
    pub fn validate(&self) -> Result<()> {
        for profile in [self.profile, TaskProfile::Gridworld] {
            self.search
                .apply(profile.search_config())
                .validate()
                .with_context(|| format!("search settings for profile `{}`", profile.name()))?;
        }
        ensure!(self.workers >= 1, "workers must be at least 1");
        ensure!(self.space.n_bins >= 2, "n_bins must be at least 2, got {}", self.space.n_bins);
        ensure!(self.space.pattern_max_len >= 1, "pattern_max_len must be at least 1");
        ensure!(self.data.delimiter.is_ascii(), "delimiter must be ASCII");
        if let Some(r) = self.clean.min_reward {
            ensure!(r.is_finite() && r >= 0.0, "min_reward must be a non-negative number, got {r}");
        }
        ensure!(self.translate.policy.retrieve_k >= 1, "retrieve_k must be at least 1");
        ensure!(self.translate.policy.token_budget >= 1, "token_budget must be positive");
        ensure!(self.oracle.max_len != Some(0), "oracle max_len must be at least 1");
        let g = &self.gridworld;
        ensure!((0.0..=1.0).contains(&g.p), "gridworld p = {} is outside [0, 1]", g.p);
        ensure!(g.episodes >= 1 && g.eval_episodes >= 1, "gridworld episode counts must be positive");
        let e = &self.advisor.endpoint;
        if !(0.0..=2.0).contains(&e.temperature) || !(0.0..=1.0).contains(&e.top_p) {
            bail!("endpoint temperature must be in [0, 2] and top_p in [0, 1]");
        }
        Ok(())
    }

    /// Makes every path absolute so a manifest replays from any directory.
    pub fn absolutize(&mut self) -> Result<()> {
        let abs = |p: &mut PathBuf| -> Result<()> {
            *p = std::path::absolute(&*p).with_context(|| format!("resolving {}", p.display()))?;
            Ok(())
        };
        abs(&mut self.out_dir)?;
        for p in [
            self.data.path.as_mut(),
            self.translate.lexicon.as_mut(),
            self.translate.template.as_mut(),
            self.gridworld.map.as_mut(),
            self.advisor.replay_from.as_mut(),
            self.advisor.endpoint.prompt_template.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            abs(p)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_defaults_flow_through() {
        let cfg = RunConfig {
            profile: TaskProfile::Relation,
            ..Default::default()
        };
        let s = cfg.search_config_for(cfg.profile, "mine", 0);
        assert_eq!((s.total_rollouts, s.max_body_predicates, s.terminal_threshold), (500, 2, 0.9));
        assert!(s.terminal_strict);
    }

    #[test]
    fn flags_override_file() {
        let mut cfg: RunConfig = toml::from_str(
            "profile = \"abuse\"\nseed = 3\n[search]\ntotal_rollouts = 100\nmax_body_predicates = 4\n",
        )
        .unwrap();
        cfg.apply(&Overrides {
            rollouts: Some(50),
            seed: Some(9),
            ..Default::default()
        });
        let s = cfg.search_config_for(cfg.profile, "mine", 0);
        assert_eq!(cfg.seed, 9);
        assert_eq!((s.total_rollouts, s.max_body_predicates, s.terminal_threshold), (50, 4, 0.85));
    }

    #[test]
    fn invalid_overrides_rejected() {
        for toml_text in [
            "[search]\nterminal_threshold = 1.5",
            "[search]\ntotal_rollouts = 0",
            "[search]\nmax_body_predicates = 0",
            "[search]\nexploration_c = -1.0",
            "workers = 0",
            "[space]\nn_bins = 1",
            "[gridworld]\np = 1.2",
        ] {
            let cfg: RunConfig = toml::from_str(toml_text).unwrap();
            assert!(cfg.validate().is_err(), "{toml_text}");
        }
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        RunConfig::default().validate().unwrap();
    }
}

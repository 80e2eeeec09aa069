//! `rulemine`: mine rules with MCTS, check them, and feed them to prompts.

mod commands;
mod config;
mod grid;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use config::{AdvisorMode, Overrides, RunConfig};
use manifest::{RunContext, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "rulemine", version, about = "Logic-rule mining with Monte Carlo Tree Search")]
struct Cli {
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// Print the assembled prompt only.
    Dry,
    /// Send the prompt to the configured endpoint and print the reply.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Mine a rulebook from the configured dataset.
    Mine,
    /// Score a rulebook's rules, alone and pooled, on a dataset.
    EvalRules {
        #[arg(long)]
        rulebook: PathBuf,
    },
    /// Compare search against exhaustive enumeration on the dataset.
    OracleCheck,
    /// Two-agent gridworld: collect trajectories, mine them, evaluate rulebooks.
    #[command(subcommand)]
    Gridworld(GridCommand),
    /// Build a rule-augmented prompt for an input.
    Augment {
        #[arg(long)]
        rulebook: PathBuf,
        /// File holding the input text.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "dry")]
        mode: AugmentMode,
    },
    /// Re-run a recorded command and compare its outputs byte for byte.
    Replay {
        manifest: PathBuf,
        /// Where to write the re-run; `<original out>/replay` by default.
        #[arg(long = "into")]
        into: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridCommand {
    /// Play episodes under the p-mixture of planned and random actions.
    Collect {
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Mine one rule set per gridworld head from collected episodes.
    Mine {
        /// Episode log; `<out>/episodes.json` by default.
        #[arg(long)]
        episodes: Option<PathBuf>,
    },
    /// Play a rulebook-driven agent and report WR, AR and AL.
    Eval {
        /// Rulebook; `<out>/gridworld_rulebook.json` by default.
        #[arg(long, conflicts_with = "grounded")]
        rulebook: Option<PathBuf>,
        /// Use the handcrafted rulebook.
        #[arg(long)]
        grounded: bool,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

impl Command {
    pub fn slug(&self) -> &'static str {
        match self {
            Command::Mine => "mine",
            Command::EvalRules { .. } => "eval-rules",
            Command::OracleCheck => "oracle-check",
            Command::Gridworld(GridCommand::Collect { .. }) => "gridworld-collect",
            Command::Gridworld(GridCommand::Mine { .. }) => "gridworld-mine",
            Command::Gridworld(GridCommand::Eval { .. }) => "gridworld-eval",
            Command::Augment { .. } => "augment",
            Command::Replay { .. } => "replay",
        }
    }

    /// Folds command flags into the config and fills default paths, so the
    /// manifest holds everything needed to re-run.
    fn resolve(mut self, cfg: &mut RunConfig) -> Result<Self> {
        let abs = |p: &mut PathBuf| -> Result<()> {
            *p = std::path::absolute(&*p).with_context(|| format!("resolving {}", p.display()))?;
            Ok(())
        };
        match &mut self {
            Command::EvalRules { rulebook } => abs(rulebook)?,
            Command::Augment { rulebook, input, .. } => {
                abs(rulebook)?;
                abs(input)?;
            }
            Command::Gridworld(GridCommand::Collect { p, episodes }) => {
                if let Some(p) = p {
                    cfg.gridworld.p = *p;
                }
                if let Some(n) = episodes {
                    cfg.gridworld.episodes = *n;
                }
            }
            Command::Gridworld(GridCommand::Mine { episodes }) => {
                let p = episodes.get_or_insert_with(|| cfg.out_dir.join("episodes.json"));
                abs(p)?;
            }
            Command::Gridworld(GridCommand::Eval {
                rulebook,
                grounded,
                episodes,
            }) => {
                if !*grounded {
                    let p = rulebook.get_or_insert_with(|| cfg.out_dir.join(grid::RULEBOOK_FILE));
                    abs(p)?;
                }
                if let Some(n) = episodes {
                    cfg.gridworld.eval_episodes = *n;
                }
            }
            Command::Mine | Command::OracleCheck | Command::Replay { .. } => {}
        }
        Ok(self)
    }
}

/// Runs one command and writes its manifest.
pub fn execute(command: &Command, cfg: &RunConfig) -> Result<RunManifest> {
    let mut ctx = RunContext::new(&cfg.out_dir)?;
    let result = match command {
        Command::Mine => commands::mine(cfg, &mut ctx),
        Command::EvalRules { rulebook } => commands::eval_rules(cfg, rulebook, &mut ctx),
        Command::OracleCheck => commands::oracle_check(cfg, &mut ctx),
        Command::Gridworld(g) => grid::run(g, cfg, &mut ctx),
        Command::Augment { rulebook, input, mode } => commands::augment(cfg, rulebook, input, *mode, &mut ctx),
        Command::Replay { .. } => bail!("replay cannot be nested"),
    };
    result.with_context(|| command.slug().to_string())?;
    ctx.finish(command, cfg)
}

fn replay(manifest_path: &Path, into: Option<PathBuf>) -> Result<()> {
    let original = RunManifest::load(manifest_path)?;
    let mut cfg = original.config.clone();
    let orig_out = cfg.out_dir.clone();
    cfg.out_dir = std::path::absolute(into.unwrap_or_else(|| orig_out.join("replay")))?;
    let remote = cfg.advisor.mode == AdvisorMode::Remote
        || matches!(original.command, Command::Augment { mode: AugmentMode::Remote, .. });
    if remote && cfg.advisor.replay_from.is_none() {
        cfg.advisor.replay_from = Some(orig_out.join(commands::TRANSCRIPT_DIR));
    }
    for (path, want) in &original.inputs {
        let bytes = std::fs::read(path).with_context(|| format!("reading recorded input {path}"))?;
        if &rulemine::seed::fingerprint(&bytes) != want {
            bail!("input {path} changed since the recorded run");
        }
    }
    let rerun = execute(&original.command, &cfg)?;
    let mut differing = Vec::new();
    for (name, want) in &original.artifacts {
        let status = match rerun.artifacts.get(name) {
            Some(got) if got == want => "identical",
            Some(_) => "DIFFERS",
            None => "MISSING",
        };
        if status != "identical" {
            differing.push(name.clone());
        }
        println!("{status:9} {name}");
    }
    if !differing.is_empty() {
        bail!("replay of `{}` differs in {}", original.command.slug(), differing.join(", "));
    }
    println!(
        "replay of `{}` reproduced {} artifact(s) in {}",
        original.command.slug(),
        original.artifacts.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    if let Command::Replay { manifest, into } = cli.command {
        return replay(&manifest, into);
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&cli.overrides);
    cfg.absolutize()?;
    let command = cli.command.resolve(&mut cfg)?;
    cfg.validate().context("invalid configuration")?;
    execute(&command, &cfg)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

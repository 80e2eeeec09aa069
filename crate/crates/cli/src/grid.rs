use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use rulemine::formulate::{Advisor, IdentityAdvisor, RemoteAdvisor};
use rulemine::gridworld::{
    collect_trajectories, default_advisor, episodes_from_json, episodes_to_json, evaluate, grounded_rulebook,
    mine_rulebook, EvalReport, GridMap, GridMineReport, GridTarget, Outcome,
};
use rulemine::mcts::TaskProfile;
use rulemine::ruleeval::Rulebook;
use rulemine::seed::fingerprint;
use rulemine::translate::{render_rulebook, translate_rulebook};

use crate::commands::{build_transport, load_lexicon, to_json};
use crate::config::{AdvisorMode, RunConfig};
use crate::manifest::RunContext;
use crate::GridCommand;

pub const RULEBOOK_FILE: &str = "gridworld_rulebook.json";

fn load_map(cfg: &RunConfig, ctx: &mut RunContext) -> Result<GridMap> {
    match &cfg.gridworld.map {
        Some(path) => {
            let text = ctx.read_input_text(path)?;
            GridMap::parse(&text).with_context(|| format!("parsing map {}", path.display()))
        }
        None => Ok(GridMap::fixture()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeSummary {
    seed: u64,
    outcome: Outcome,
    length: usize,
    reward: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalOutput {
    map: String,
    rulebook: String,
    report: EvalReport,
    episodes: Vec<EpisodeSummary>,
}

fn print_report(what: &str, r: &EvalReport) {
    println!(
        "{what}: {} episodes, WR {:.3}, AR {:.2}, AL {:.1}",
        r.episodes, r.win_rate, r.mean_reward, r.mean_length
    );
}

pub fn run(cmd: &GridCommand, cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let map = load_map(cfg, ctx)?;
    match cmd {
        GridCommand::Collect { .. } => {
            let g = &cfg.gridworld;
            let episodes = ctx.timed("collect", |_| Ok(collect_trajectories(&map, g.p, g.episodes, cfg.seed)?))?;
            print_report(&format!("collected at p = {}", g.p), &EvalReport::from_episodes(&episodes));
            ctx.write_artifact("episodes.json", episodes_to_json(&episodes))?;
        }
        GridCommand::Mine { episodes } => {
            let path = episodes.as_ref().expect("resolved before execution");
            let text = ctx.read_input_text(path)?;
            let episodes = episodes_from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
            let advisor: Box<dyn Advisor> = match cfg.advisor.mode {
                AdvisorMode::Identity => Box::new(IdentityAdvisor),
                AdvisorMode::Heuristic => {
                    let mut a = default_advisor();
                    a.exclude_features.extend(cfg.advisor.heuristic.exclude_features.iter().cloned());
                    Box::new(a)
                }
                AdvisorMode::Remote => Box::new(RemoteAdvisor::new(
                    cfg.advisor.endpoint.clone(),
                    build_transport(cfg, &ctx.out_dir)?,
                )),
            };
            let opts = cfg.mine_options(cfg.search_config_for(TaskProfile::Gridworld, "gridworld-mine", 0));
            let (mut book, report): (Rulebook, GridMineReport) = ctx.timed("search", |_| {
                Ok(mine_rulebook(&episodes, &map, &GridTarget::all(), advisor.as_ref(), &opts)?)
            })?;
            book.metadata.dataset_fingerprint = fingerprint(text.as_bytes());
            book.metadata.min_reward = opts.effective_min_reward();
            book.metadata.min_coverage_count = opts.min_coverage_count;
            book.metadata.search.insert("gridworld".into(), serde_json::to_value(opts.search)?);
            let lexicon = load_lexicon(cfg, ctx)?;
            let rendered = ctx.timed("translate", |_| {
                translate_rulebook(&mut book, &lexicon)?;
                Ok(render_rulebook(&book, &lexicon, true)?)
            })?;
            for r in &report.runs {
                println!("{}: {} positives, {} rules kept", r.target, r.positives, r.after_pruning);
            }
            for s in &report.skipped {
                println!("{s}: no positive steps, skipped");
            }
            ctx.write_artifact(RULEBOOK_FILE, book.to_text())?;
            ctx.write_artifact("gridworld_rules.txt", format!("{rendered}\n"))?;
            ctx.write_artifact("gridworld_mine_report.json", to_json(&report)?)?;
            println!("{} rules written", book.len());
        }
        GridCommand::Eval { rulebook, grounded, .. } => {
            let (book, label) = if *grounded {
                (grounded_rulebook(&map)?, "grounded".to_string())
            } else {
                let path = rulebook.as_ref().expect("resolved before execution");
                let book = Rulebook::from_text(&ctx.read_input_text(path)?)
                    .with_context(|| format!("parsing rulebook {}", path.display()))?;
                (book, path.display().to_string())
            };
            let n = cfg.gridworld.eval_episodes;
            let (report, episodes) = ctx.timed("evaluate", |_| Ok(evaluate(&book, &map, n, cfg.seed)?))?;
            print_report(&label, &report);
            let out = EvalOutput {
                map: map.name.clone(),
                rulebook: if *grounded { label } else { fingerprint(book.to_text().as_bytes()) },
                report,
                episodes: episodes
                    .iter()
                    .map(|e| EpisodeSummary {
                        seed: e.seed,
                        outcome: e.outcome,
                        length: e.len(),
                        reward: e.total_reward,
                    })
                    .collect(),
            };
            ctx.write_artifact("gridworld_eval.json", to_json(&out)?)?;
        }
    }
    Ok(())
}

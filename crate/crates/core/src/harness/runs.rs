//! Scenario runners. Each run owns one output directory:
//!
//! ```text
//! <out>/config.resolved.toml   every key of the run's configuration
//! <out>/metrics.csv            one row per meta-iteration
//! <out>/tasks.log              every sampled training task
//! <out>/checkpoint.txt         latest resumable state
//! <out>/final.ckpt             state after the last iteration
//! <out>/*.svg                  charts, unless plots are disabled
//! ```

use std::fmt::Write as _;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use super::config::{RunConfig, RunPlan};
use super::metrics::{self, MetricsRecord};
use super::plots;
use crate::error::{Error, Result};
use crate::hpo::{self, SearchSpace, Study, TuneSettings};
use crate::metatrain::{self, TaskLogEntry, TrainReport, TrainState};
use crate::rollout::Evaluation;

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn task_log_text(entries: &[TaskLogEntry]) -> String {
    let mut out = String::from("iteration\tindex\tlevel\tseed\tcomplexity\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:?}",
            e.iteration, e.index, e.level, e.seed, e.complexity
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub report: TrainReport,
}

/// Runs one training job described by `config`, optionally resuming from a
/// checkpoint file, and writes all outputs.
pub fn run_training(config: &RunConfig, resume: Option<&Path>) -> Result<RunOutput> {
    let plan = config.plan()?;
    let dir = plan.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join("config.resolved.toml"), &config.resolved().to_toml()?)?;

    let state = match resume {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(TrainState::from_checkpoint(&text)?)
        }
        None => None,
    };
    // a resumed run keeps the rows already on disk
    let mut metrics_so_far = match (&state, resume) {
        (Some(s), Some(_)) if s.iteration > 0 => {
            let mut prior = metrics::read_csv(&dir.join("metrics.csv")).unwrap_or_default();
            prior.truncate(s.iteration);
            prior
        }
        _ => Vec::new(),
    };
    let ckpt_path = dir.join("checkpoint.txt");
    let mut ckpt_error = None;
    let report = metatrain::meta_train_with(&plan.meta, state, |record, st| {
        if plan.checkpoint_every > 0 && record.meta_iteration % plan.checkpoint_every == 0 {
            if let Err(e) = write(&ckpt_path, &st.to_checkpoint()) {
                ckpt_error = Some(e);
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    })?;
    if let Some(e) = ckpt_error {
        return Err(e);
    }
    metrics_so_far.extend(report.metrics.iter().copied());
    metrics::write_csv(&dir.join("metrics.csv"), &metrics_so_far)?;
    write(&dir.join("tasks.log"), &task_log_text(&report.task_log))?;
    write(&dir.join("final.ckpt"), &report.state.to_checkpoint())?;
    if plan.plots {
        plots::emit_plots(&dir, &metrics_so_far)?;
    }
    Ok(RunOutput { dir, report })
}

pub const VARIANTS: [&str; 3] = ["full", "no_meta", "no_intrinsic"];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutput {
    pub dir: PathBuf,
    /// `(variant name, run)` in [`VARIANTS`] order.
    pub runs: Vec<(String, RunOutput)>,
}

impl AblationOutput {
    pub fn metrics(&self, variant: &str) -> Option<&[MetricsRecord]> {
        self.runs
            .iter()
            .find(|(n, _)| n == variant)
            .map(|(_, r)| r.report.metrics.as_slice())
    }
}

/// Side-by-side table: `meta_iteration` then `<variant>_<column>` for
/// success rate, average reward and meta-loss.
pub fn comparison_csv(runs: &[(&str, &[MetricsRecord])]) -> String {
    let mut out = String::from("meta_iteration");
    for (name, _) in runs {
        let _ = write!(out, ",{name}_success_rate,{name}_avg_reward,{name}_meta_loss");
    }
    out.push('\n');
    let rows = runs.iter().map(|(_, m)| m.len()).max().unwrap_or(0);
    for i in 0..rows {
        let _ = write!(out, "{}", i + 1);
        for (_, m) in runs {
            match m.get(i) {
                Some(r) => {
                    let _ = write!(out, ",{:?},{:?},{:?}", r.success_rate, r.avg_reward, r.meta_loss);
                }
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Full agent, no meta-update, and no intrinsic reward on identical seeds.
pub fn run_ablation_suite(config: &RunConfig) -> Result<AblationOutput> {
    let plan: RunPlan = config.plan()?;
    let root = plan.out_dir.clone();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut runs = Vec::new();
    for name in VARIANTS {
        let mut c = config.clone();
        c.out_dir = Some(root.join(name));
        match name {
            "no_meta" => c.meta_enabled = Some(false),
            "no_intrinsic" => c.intrinsic_enabled = Some(false),
            _ => {}
        }
        runs.push((name.to_string(), run_training(&c, None)?));
    }
    let table: Vec<(&str, &[MetricsRecord])> = runs
        .iter()
        .map(|(n, r)| (n.as_str(), r.report.metrics.as_slice()))
        .collect();
    write(&root.join("comparison.csv"), &comparison_csv(&table))?;
    if plan.plots {
        plots::comparison_chart(&root.join("comparison.svg"), &table)?;
    }
    Ok(AblationOutput { dir: root, runs })
}

/// Random-search study over `space` with short meta-training trials.
pub fn run_tune(config: &RunConfig, settings: &TuneSettings, space: &SearchSpace) -> Result<(PathBuf, Study)> {
    let plan = config.plan()?;
    let dir = plan.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join("config.resolved.toml"), &config.resolved().to_toml()?)?;
    let mut runner = hpo::meta_runner(plan.meta.clone());
    let study = hpo::tune(settings, space, &plan.meta.hp, &mut runner)?;
    write(&dir.join("study.tsv"), &study.to_text())?;
    let best = study.best_hp();
    let mut best_cfg = config.resolved();
    best_cfg.beta_meta = Some(best.beta_meta);
    best_cfg.alpha_inner = Some(best.alpha_inner);
    best_cfg.inner_steps = Some(best.inner_steps);
    best_cfg.eps_high = Some(best.eps_high);
    best_cfg.eps_option = Some(best.eps_option);
    best_cfg.eta = Some(best.eta);
    write(&dir.join("best.toml"), &best_cfg.to_toml()?)?;
    Ok((dir, study))
}

/// Scores a saved training state on held-out tasks of its current level,
/// drawn from the iteration after the last one trained.
pub fn run_eval(config: &RunConfig, checkpoint: &Path) -> Result<Evaluation> {
    let plan = config.plan()?;
    let text = fs::read_to_string(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    let state = TrainState::from_checkpoint(&text)?;
    let level = plan.meta.curriculum.at(state.curriculum.position).clone();
    if level.n_states() != state.params.input_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {} grid cells but level {} has {}",
            state.params.input_dim(),
            level.level,
            level.n_states()
        )));
    }
    let hp = plan.meta.effective_hp(state.iteration);
    metatrain::evaluate_adapted(&state.params, &plan.meta, &level, &hp, state.iteration, None)
}

/// Charts for an existing metrics file, written next to it unless `out` is given.
pub fn run_plot(metrics_path: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let records = metrics::read_csv(metrics_path)?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => metrics_path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    plots::emit_plots(&dir, &records)
}

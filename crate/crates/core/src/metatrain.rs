//! First-order MAML over hierarchical agents.
//!
//! Each meta-iteration samples a batch of tasks from the current curriculum
//! level, adapts a clone of the meta-parameters to every task with `K` SGD
//! steps on the inner losses, scores the adapted parameters on fresh
//! validation rollouts, and applies one Adam step to the meta-parameters
//! using the validation gradients taken at the adapted parameters.
//!
//! Every random draw comes from a stream derived from `(seed, purpose,
//! iteration, task index)`, so a run is reproducible regardless of worker
//! count and can resume from a checkpoint without replaying history.

use std::ops::ControlFlow;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentAdam, AgentGrads, AgentParams, EpsilonSchedule, HyperParams};
use crate::curriculum::{CurriculumSchedule, CurriculumState};
use crate::error::{Error, Result};
use crate::exploration::VisitCounts;
use crate::gridworld::{self, GridTask, TaskSettings};
use crate::harness::metrics::MetricsRecord;
use crate::losses::{self, TargetParams};
use crate::rollout::{self, EpisodeSettings, Evaluation, Trajectory};
use crate::seeding::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablations {
    pub meta_enabled: bool,
    pub intrinsic_enabled: bool,
    pub curriculum_enabled: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            meta_enabled: true,
            intrinsic_enabled: true,
            curriculum_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    pub hp: HyperParams,
    pub meta_iterations: usize,
    pub curriculum: CurriculumSchedule,
    pub ablations: Ablations,
    pub seed: u64,
    pub task: TaskSettings,
    /// Greedy evaluation episodes per meta-iteration, spread over
    /// `eval_tasks` freshly sampled tasks, each adapted from the updated
    /// meta-parameters before it is played.
    pub eval_episodes: usize,
    pub eval_tasks: usize,
    /// Fresh rollouts per task used to score adapted parameters.
    pub validation_episodes: usize,
    pub epsilon_schedule: EpsilonSchedule,
    /// Only first-order meta-gradients are implemented; `false` is rejected.
    pub first_order: bool,
    pub workers: usize,
    pub log_wall_time: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            hp: HyperParams::default(),
            meta_iterations: 100,
            curriculum: CurriculumSchedule::ladder(),
            ablations: Ablations::default(),
            seed: 0,
            task: TaskSettings::default(),
            eval_episodes: 20,
            eval_tasks: 4,
            validation_episodes: 1,
            epsilon_schedule: EpsilonSchedule::Constant,
            first_order: true,
            workers: 1,
            log_wall_time: false,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.curriculum.validate()?;
        self.task.reward.validate()?;
        if self.meta_iterations == 0 {
            return Err(Error::Config("meta_iterations must be >= 1".into()));
        }
        if self.eval_episodes == 0 || self.eval_tasks == 0 || self.validation_episodes == 0 {
            return Err(Error::Config(
                "eval_episodes, eval_tasks and validation_episodes must be >= 1".into(),
            ));
        }
        if self.task.max_steps == 0 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if !self.first_order {
            return Err(Error::Config(
                "second-order meta-gradients are not implemented".into(),
            ));
        }
        Ok(())
    }

    /// Hyperparameters with ablations and the exploration schedule applied.
    pub fn effective_hp(&self, iteration: usize) -> HyperParams {
        let mut hp = self.hp;
        if !self.ablations.intrinsic_enabled {
            hp.eta = 0.0;
        }
        let k = self.epsilon_schedule.factor(iteration);
        hp.eps_high = (hp.eps_high * k).clamp(0.0, 1.0);
        hp.eps_option = (hp.eps_option * k).clamp(0.0, 1.0);
        hp
    }
}

pub fn exploration_settings(hp: &HyperParams) -> EpisodeSettings {
    EpisodeSettings {
        eps_high: hp.eps_high,
        eps_option: hp.eps_option,
        eta: hp.eta,
        eps_count: hp.eps_count,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedParams {
    pub params: AgentParams,
    pub task_seed: u64,
    /// Total inner loss before each SGD step.
    pub inner_losses: Vec<f64>,
    /// Mean per-episode intrinsic return over the adaptation rollouts.
    pub mean_intrinsic: f64,
    pub sgd_steps: usize,
}

/// `K` SGD steps on the inner losses from a clone of `theta`. Targets are
/// synced once from `theta`; visit counts live for the whole adaptation.
pub fn inner_adapt(
    theta: &AgentParams,
    task: &GridTask,
    hp: &HyperParams,
    rng: &mut Rng,
) -> Result<AdaptedParams> {
    if hp.inner_steps == 0 {
        return Err(Error::Config("inner_steps must be >= 1".into()));
    }
    let mut params = theta.clone();
    let targets = TargetParams::sync(theta);
    let settings = exploration_settings(hp);
    let mut counts = VisitCounts::new();
    let mut inner_losses = Vec::with_capacity(hp.inner_steps);
    let mut intrinsic = 0.0;
    let mut episodes = 0usize;
    for step in 0..hp.inner_steps {
        let trajectories = (0..hp.episodes_per_inner_step)
            .map(|_| rollout::run_episode(&params, task, &settings, Some(&mut counts), rng))
            .collect::<Result<Vec<Trajectory>>>()?;
        intrinsic += trajectories.iter().map(Trajectory::cumulative_intrinsic).sum::<f64>();
        episodes += trajectories.len();
        let (bundle, grads) = losses::loss_and_grads(&params, &trajectories, &targets, hp.gamma)?;
        if !bundle.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite(format!(
                "inner loss at step {step} on task {} (total = {})",
                task.seed(),
                bundle.total
            )));
        }
        inner_losses.push(bundle.total);
        params.sgd_step(&grads, hp.alpha_inner)?;
    }
    Ok(AdaptedParams {
        params,
        task_seed: task.seed(),
        inner_losses,
        mean_intrinsic: intrinsic / episodes as f64,
        sgd_steps: hp.inner_steps,
    })
}

fn validation_rollouts(
    params: &AgentParams,
    task: &GridTask,
    hp: &HyperParams,
    episodes: usize,
    rng: &mut Rng,
) -> Result<Vec<Trajectory>> {
    let settings = exploration_settings(hp);
    let mut counts = VisitCounts::new();
    (0..episodes)
        .map(|_| rollout::run_episode(params, task, &settings, Some(&mut counts), rng))
        .collect()
}

/// Validation loss of `params` on fresh rollouts, with targets synced from
/// `params`, and its gradient at `params`.
pub fn validation_loss_and_grad(
    params: &AgentParams,
    task: &GridTask,
    hp: &HyperParams,
    episodes: usize,
    rng: &mut Rng,
) -> Result<(f64, AgentGrads)> {
    let trajectories = validation_rollouts(params, task, hp, episodes, rng)?;
    let targets = TargetParams::sync(params);
    let (bundle, grads) = losses::loss_and_grads(params, &trajectories, &targets, hp.gamma)?;
    if !bundle.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite(format!(
            "validation loss on task {} (total = {})",
            task.seed(),
            bundle.total
        )));
    }
    Ok((bundle.total, grads))
}

/// Meta-loss of an adaptation: the inner-loss total on fresh rollouts at the
/// adapted parameters.
pub fn meta_loss(
    adapted: &AdaptedParams,
    task: &GridTask,
    hp: &HyperParams,
    rng: &mut Rng,
) -> Result<f64> {
    let trajectories = validation_rollouts(&adapted.params, task, hp, hp.episodes_per_inner_step, rng)?;
    let targets = TargetParams::sync(&adapted.params);
    let bundle = losses::total_inner_loss(&adapted.params, &trajectories, &targets, hp.gamma)?;
    if !bundle.is_finite() {
        return Err(Error::NonFinite(format!("meta-loss on task {}", task.seed())));
    }
    Ok(bundle.total)
}

/// Validation loss before and after adapting `theta` to `task`.
///
/// Both sides are scored on one held-out set of `episodes` fresh rollouts
/// collected with `theta`, each with targets synced from the parameters
/// being scored. Sharing the rollouts removes on-policy sampling noise from
/// the comparison.
pub fn adaptation_benefit(
    theta: &AgentParams,
    task: &GridTask,
    hp: &HyperParams,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut adapt_rng = seeding::stream(seed, &[seeding::TAG_ADAPT]);
    let adapted = inner_adapt(theta, task, hp, &mut adapt_rng)?;
    let mut val_rng = seeding::stream(seed, &[seeding::TAG_META]);
    let held_out = validation_rollouts(theta, task, hp, episodes, &mut val_rng)?;
    let score = |p: &AgentParams| -> Result<f64> {
        Ok(losses::total_inner_loss(p, &held_out, &TargetParams::sync(p), hp.gamma)?.total)
    };
    Ok((score(theta)?, score(&adapted.params)?))
}

/// Sums per-task first-order meta-gradients in index order and applies one
/// Adam step to `theta`.
pub fn meta_update(
    theta: &mut AgentParams,
    task_grads: &[AgentGrads],
    adam: &mut AgentAdam,
    beta_meta: f64,
) -> Result<()> {
    let sum = sum_grads(theta, task_grads)?;
    theta.adam_step(&sum, adam, beta_meta)
}

pub fn sum_grads(theta: &AgentParams, task_grads: &[AgentGrads]) -> Result<AgentGrads> {
    if task_grads.is_empty() {
        return Err(Error::Insufficient("meta-update needs at least one task gradient".into()));
    }
    let mut sum = AgentGrads::zeros_like(theta);
    for g in task_grads {
        if !g.is_finite() {
            return Err(Error::NonFinite("task meta-gradient".into()));
        }
        sum.add_assign(g)?;
    }
    Ok(sum)
}

/// One task drawn during a meta-iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLogEntry {
    pub iteration: usize,
    pub index: usize,
    pub level: usize,
    pub seed: u64,
    pub complexity: f64,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Number of completed meta-iterations.
    pub iteration: usize,
    pub params: AgentParams,
    pub adam: AgentAdam,
    pub curriculum: CurriculumState,
    pub outer_updates: usize,
}

impl TrainState {
    pub fn fresh(config: &MetaConfig) -> Result<Self> {
        let n_states = config.curriculum.at(0).n_states();
        let mut rng = seeding::stream(config.seed, &[seeding::TAG_INIT]);
        let params = AgentParams::new(n_states, &mut rng)?;
        let adam = AgentAdam::new(&params);
        Ok(Self {
            iteration: 0,
            params,
            adam,
            curriculum: CurriculumState::new(),
            outer_updates: 0,
        })
    }

    /// Text checkpoint: a `metatrain v1` header block, the agent
    /// checkpoint, then one `adam` block per network.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::from("metatrain v1\n");
        out.push_str(&format!("iteration {}\n", self.iteration));
        out.push_str(&format!("position {}\n", self.curriculum.position));
        out.push_str(&format!("outer_updates {}\n", self.outer_updates));
        let hist: Vec<String> = self.curriculum.history.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&format!("history {} {}\n", hist.len(), hist.join(" ")));
        out.push_str(&self.params.to_checkpoint());
        for s in self.adam.states() {
            out.push_str(&format!("adam {} {}\n", s.t, s.m.len()));
            for (m, v) in s.m.iter().zip(&s.v) {
                out.push_str(&format!("{m:?} {v:?}\n"));
            }
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut field = |name: &str| -> Result<String> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse("checkpoint", format!("missing {name}")))?;
            line.strip_prefix(name)
                .map(|s| s.trim().to_string())
                .ok_or_else(|| Error::parse(format!("line {}", n + 1), format!("expected {name}")))
        };
        if field("metatrain v1")? != "" {
            return Err(Error::parse("line 1", "bad header"));
        }
        let num = |s: String, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::parse("checkpoint", format!("bad {what}")))
        };
        let iteration = num(field("iteration")?, "iteration")?;
        let position = num(field("position")?, "position")?;
        let outer_updates = num(field("outer_updates")?, "outer_updates")?;
        let hist_line = field("history")?;
        let mut toks = hist_line.split_whitespace();
        let count = num(toks.next().unwrap_or("").to_string(), "history count")?;
        let history = toks
            .map(|t| t.parse::<f64>().map_err(|_| Error::parse("checkpoint", "bad history value")))
            .collect::<Result<Vec<_>>>()?;
        if history.len() != count {
            return Err(Error::parse("checkpoint", "history length mismatch"));
        }
        let params = AgentParams::read_checkpoint(&mut lines)?;
        let mut adam = AgentAdam::new(&params);
        for state in adam.states_mut() {
            let (n, header) = lines
                .next()
                .ok_or_else(|| Error::parse("checkpoint", "missing adam block"))?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            let bad = || Error::parse(format!("line {}", n + 1), "bad adam header");
            if parts.len() != 3 || parts[0] != "adam" {
                return Err(bad());
            }
            state.t = parts[1].parse().map_err(|_| bad())?;
            let len: usize = parts[2].parse().map_err(|_| bad())?;
            if len != state.m.len() {
                return Err(bad());
            }
            for i in 0..len {
                let (n, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse("checkpoint", "truncated adam block"))?;
                let mut it = line.split_whitespace().map(str::parse::<f64>);
                match (it.next(), it.next()) {
                    (Some(Ok(m)), Some(Ok(v))) => {
                        state.m[i] = m;
                        state.v[i] = v;
                    }
                    _ => return Err(Error::parse(format!("line {}", n + 1), "bad adam moments")),
                }
            }
        }
        Ok(Self {
            iteration,
            params,
            adam,
            curriculum: CurriculumState { position, history },
            outer_updates,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<MetricsRecord>,
    pub task_log: Vec<TaskLogEntry>,
    pub state: TrainState,
    pub inner_sgd_steps: usize,
    /// True when the observer stopped the run early.
    pub stopped_early: bool,
}

struct TaskOutcome {
    adapted: AgentParams,
    meta_loss: f64,
    grads: AgentGrads,
    mean_intrinsic: f64,
    sgd_steps: usize,
}

fn eval_share(total: usize, n_tasks: usize, index: usize) -> usize {
    total / n_tasks + usize::from(index < total % n_tasks)
}

fn run_task(
    theta: &AgentParams,
    task: &GridTask,
    hp: &HyperParams,
    config: &MetaConfig,
    iteration: usize,
    index: usize,
) -> Result<TaskOutcome> {
    let tags = |tag: u64| [tag, iteration as u64, index as u64];
    let mut adapt_rng = seeding::stream(config.seed, &tags(seeding::TAG_ADAPT));
    let adapted = inner_adapt(theta, task, hp, &mut adapt_rng)?;
    let mut meta_rng = seeding::stream(config.seed, &tags(seeding::TAG_META));
    let (meta_loss, grads) =
        validation_loss_and_grad(&adapted.params, task, hp, config.validation_episodes, &mut meta_rng)?;
    Ok(TaskOutcome {
        adapted: adapted.params,
        meta_loss,
        grads,
        mean_intrinsic: adapted.mean_intrinsic,
        sgd_steps: adapted.sgd_steps,
    })
}

/// Adapts `theta` to the `index`-th evaluation task of an iteration and
/// plays its share of greedy episodes.
fn eval_task(
    theta: &AgentParams,
    task: &GridTask,
    hp: &HyperParams,
    config: &MetaConfig,
    iteration: usize,
    index: usize,
) -> Result<Evaluation> {
    let share = eval_share(config.eval_episodes, config.eval_tasks, index);
    if share == 0 {
        return Ok(Evaluation {
            success_rate: 0.0,
            mean_ext_return: 0.0,
            episodes: 0,
        });
    }
    let tags = |k: u64| [seeding::TAG_EVAL, iteration as u64, index as u64, k];
    let mut adapt_rng = seeding::stream(config.seed, &tags(0));
    let adapted = inner_adapt(theta, task, hp, &mut adapt_rng)?;
    let mut rng = seeding::stream(config.seed, &tags(1));
    rollout::evaluate(&adapted.params, std::slice::from_ref(task), share, &mut rng)
}

/// Fresh same-level tasks used to score one meta-iteration.
pub fn sample_eval_tasks(
    config: &MetaConfig,
    level: &crate::curriculum::CurriculumLevelSpec,
    iteration: usize,
) -> Result<Vec<GridTask>> {
    let mut rng = seeding::stream(config.seed, &[seeding::TAG_EVAL, iteration as u64]);
    (0..config.eval_tasks)
        .map(|_| gridworld::generate_task_with(level, config.task, &mut rng))
        .collect()
}

/// Scores `theta` on the evaluation tasks of `iteration`: each task is
/// adapted with K inner steps, then played greedily. Episodes are pooled.
pub fn evaluate_adapted(
    theta: &AgentParams,
    config: &MetaConfig,
    level: &crate::curriculum::CurriculumLevelSpec,
    hp: &HyperParams,
    iteration: usize,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Evaluation> {
    let tasks = sample_eval_tasks(config, level, iteration)?;
    let run = |(i, t): (usize, &GridTask)| eval_task(theta, t, hp, config, iteration, i);
    let evals: Vec<Result<Evaluation>> = match pool {
        Some(p) if config.workers > 1 => p.install(|| tasks.par_iter().enumerate().map(run).collect()),
        _ => tasks.iter().enumerate().map(run).collect(),
    };
    let evals = evals.into_iter().collect::<Result<Vec<_>>>()?;
    let n: usize = evals.iter().map(|e| e.episodes).sum();
    if n == 0 {
        return Err(Error::Insufficient("evaluation played no episodes".into()));
    }
    let pooled = |f: fn(&Evaluation) -> f64| evals.iter().map(|e| f(e) * e.episodes as f64).sum::<f64>() / n as f64;
    Ok(Evaluation {
        success_rate: pooled(|e| e.success_rate),
        mean_ext_return: pooled(|e| e.mean_ext_return),
        episodes: n,
    })
}

/// Samples the task batch of one meta-iteration.
pub fn sample_batch(
    config: &MetaConfig,
    level: &crate::curriculum::CurriculumLevelSpec,
    iteration: usize,
) -> Result<Vec<GridTask>> {
    let mut rng = seeding::stream(config.seed, &[seeding::TAG_TASKS, iteration as u64]);
    (0..config.hp.tasks_per_meta_batch)
        .map(|_| gridworld::generate_task_with(level, config.task, &mut rng))
        .collect()
}

/// Runs `config.meta_iterations` meta-iterations from scratch.
pub fn meta_train(config: &MetaConfig) -> Result<TrainReport> {
    meta_train_with(config, None, |_, _| ControlFlow::Continue(()))
}

/// Full training loop. Resumes from `resume` when given. `observer` sees each
/// record together with the state after that iteration and may stop the run.
pub fn meta_train_with(
    config: &MetaConfig,
    resume: Option<TrainState>,
    mut observer: impl FnMut(&MetricsRecord, &TrainState) -> ControlFlow<()>,
) -> Result<TrainReport> {
    config.validate()?;
    let mut state = match resume {
        Some(s) => s,
        None => TrainState::fresh(config)?,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let started = Instant::now();
    let mut metrics = Vec::new();
    let mut task_log = Vec::new();
    let mut inner_sgd_steps = 0;
    let mut stopped_early = false;

    while state.iteration < config.meta_iterations {
        let iteration = state.iteration;
        let wrap = |e: Error| Error::Iteration {
            iteration: iteration + 1,
            source: Box::new(e),
        };
        let level = config.curriculum.at(state.curriculum.position).clone();
        if level.n_states() != state.params.input_dim() {
            return Err(wrap(Error::Dimension {
                expected: state.params.input_dim(),
                actual: level.n_states(),
            }));
        }
        let hp = config.effective_hp(iteration);
        let tasks = sample_batch(config, &level, iteration).map_err(wrap)?;
        for (index, task) in tasks.iter().enumerate() {
            task_log.push(TaskLogEntry {
                iteration: iteration + 1,
                index,
                level: level.level,
                seed: task.seed(),
                complexity: task.complexity(),
            });
        }

        let n_tasks = tasks.len();
        let outcomes = if config.ablations.meta_enabled {
            let theta = &state.params;
            let run = |(i, t): (usize, &GridTask)| run_task(theta, t, &hp, config, iteration, i);
            let outcomes: Vec<Result<TaskOutcome>> = if config.workers > 1 {
                pool.install(|| tasks.par_iter().enumerate().map(run).collect())
            } else {
                tasks.iter().enumerate().map(run).collect()
            };
            let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>().map_err(wrap)?;
            let grads: Vec<AgentGrads> = outcomes.iter().map(|o| o.grads.clone()).collect();
            meta_update(&mut state.params, &grads, &mut state.adam, hp.beta_meta).map_err(wrap)?;
            state.outer_updates += 1;
            outcomes
        } else {
            // Plain HRL: each task continues from the previous task's adapted
            // parameters and the last one is carried into the next iteration.
            let mut outcomes = Vec::with_capacity(n_tasks);
            for (i, t) in tasks.iter().enumerate() {
                let o = run_task(&state.params, t, &hp, config, iteration, i).map_err(wrap)?;
                state.params = o.adapted.clone();
                outcomes.push(o);
            }
            outcomes
        };
        inner_sgd_steps += outcomes.iter().map(|o| o.sgd_steps).sum::<usize>();

        let scored = evaluate_adapted(&state.params, config, &level, &hp, iteration, Some(&pool)).map_err(wrap)?;
        let (success, avg_reward) = (scored.success_rate, scored.mean_ext_return);
        let record = MetricsRecord {
            meta_iteration: iteration + 1,
            meta_loss: outcomes.iter().map(|o| o.meta_loss).sum::<f64>() / n_tasks as f64,
            avg_reward,
            success_rate: success,
            level: level.level,
            mean_intrinsic: outcomes.iter().map(|o| o.mean_intrinsic).sum::<f64>() / n_tasks as f64,
            wall_time: if config.log_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        let advanced = state
            .curriculum
            .record(&config.curriculum, success, config.ablations.curriculum_enabled);
        if advanced {
            let next = config.curriculum.at(state.curriculum.position);
            if (next.width, next.height) != (level.width, level.height) {
                let mut rng = seeding::stream(config.seed, &[seeding::TAG_INIT, iteration as u64 + 1]);
                let (params, adam) = state
                    .params
                    .regrid(
                        &state.adam,
                        (level.width, level.height),
                        (next.width, next.height),
                        &mut rng,
                    )
                    .map_err(wrap)?;
                state.params = params;
                state.adam = adam;
            }
        }
        state.iteration += 1;
        metrics.push(record);
        if observer(&record, &state).is_break() {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainReport {
        metrics,
        task_log,
        state,
        inner_sgd_steps,
        stopped_early,
    })
}

//! Run configuration: a scenario preset plus flat override keys, read from
//! TOML and further overridden by CLI flags.
//!
//! ```toml
//! scenario = "fixed"        # fixed | gradual | custom
//! seed = 7
//! meta_iterations = 200
//! eps_option = 0.4
//! levels = [1, 2, 3]
//! ```
//!
//! Every key except `scenario` is optional; missing keys take the preset's
//! value. [`RunConfig::resolved`] returns a copy with every key filled in,
//! which is what a run freezes next to its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{EpsilonSchedule, HyperParams};
use crate::curriculum::{self, CurriculumSchedule, Gate};
use crate::error::{Error, Result};
use crate::gridworld::{RewardSpec, TaskSettings};
use crate::metatrain::{Ablations, MetaConfig};

/// Level of the fixed scenario: the 6x6 grid with three traps.
pub const FIXED_LEVEL: usize = 3;
pub const FIXED_ITERATIONS: usize = 500;
pub const GRADUAL_ITERATIONS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Fixed,
    Gradual,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub seed: Option<u64>,
    pub meta_iterations: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub plots: Option<bool>,
    pub workers: Option<usize>,
    /// Write a resumable checkpoint every N iterations; 0 disables.
    pub checkpoint_every: Option<usize>,
    pub log_wall_time: Option<bool>,

    pub beta_meta: Option<f64>,
    pub alpha_inner: Option<f64>,
    pub inner_steps: Option<usize>,
    pub eps_high: Option<f64>,
    pub eps_option: Option<f64>,
    pub eta: Option<f64>,
    pub eps_count: Option<f64>,
    pub gamma: Option<f64>,
    pub tasks_per_meta_batch: Option<usize>,
    pub episodes_per_inner_step: Option<usize>,

    pub meta_enabled: Option<bool>,
    pub intrinsic_enabled: Option<bool>,
    pub curriculum_enabled: Option<bool>,

    /// Ladder levels in order, each in 1..=5.
    pub levels: Option<Vec<usize>>,
    pub gate_window: Option<usize>,
    pub gate_threshold: Option<f64>,

    pub step_penalty: Option<f64>,
    pub trap_penalty: Option<f64>,
    pub goal_reward: Option<f64>,
    pub trap_terminates: Option<bool>,
    pub max_steps: Option<usize>,

    pub eval_episodes: Option<usize>,
    pub eval_tasks: Option<usize>,
    pub validation_episodes: Option<usize>,
    /// Linear decay of both exploration rates to this fraction.
    pub epsilon_final_fraction: Option<f64>,
    /// Iterations over which the decay runs; 0 keeps rates constant.
    pub epsilon_decay_iterations: Option<usize>,
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub scenario: Scenario,
    pub meta: MetaConfig,
    pub out_dir: PathBuf,
    pub plots: bool,
    pub checkpoint_every: usize,
}

impl RunConfig {
    pub fn preset(scenario: Scenario) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config: {e}")))
    }

    fn preset_hp(&self) -> HyperParams {
        match self.scenario {
            Scenario::Fixed | Scenario::Gradual => HyperParams::fixed_scenario(),
            Scenario::Custom => HyperParams::default(),
        }
    }

    fn preset_levels(&self) -> Vec<usize> {
        match self.scenario {
            Scenario::Fixed => vec![FIXED_LEVEL],
            Scenario::Gradual | Scenario::Custom => (1..=curriculum::DEFAULT_LADDER_LEN).collect(),
        }
    }

    fn preset_iterations(&self) -> usize {
        match self.scenario {
            Scenario::Fixed => FIXED_ITERATIONS,
            Scenario::Gradual => GRADUAL_ITERATIONS,
            Scenario::Custom => 100,
        }
    }

    fn default_out_dir(&self) -> PathBuf {
        let root = std::env::var_os(super::OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        let name = match self.scenario {
            Scenario::Fixed => "fixed",
            Scenario::Gradual => "gradual",
            Scenario::Custom => "custom",
        };
        root.join(name)
    }

    /// Copy with every optional key filled from the preset.
    pub fn resolved(&self) -> Self {
        let hp = self.preset_hp();
        let base = MetaConfig::default();
        let task = TaskSettings::default();
        let gate = Gate::default();
        let (decay_to, decay_iters) = match base.epsilon_schedule {
            EpsilonSchedule::Constant => (1.0, 0),
            EpsilonSchedule::Linear {
                final_fraction,
                iterations,
            } => (final_fraction, iterations),
        };
        Self {
            scenario: self.scenario,
            seed: Some(self.seed.unwrap_or(0)),
            meta_iterations: Some(self.meta_iterations.unwrap_or_else(|| self.preset_iterations())),
            out_dir: Some(self.out_dir.clone().unwrap_or_else(|| self.default_out_dir())),
            plots: Some(self.plots.unwrap_or(true)),
            workers: Some(self.workers.unwrap_or(1)),
            checkpoint_every: Some(self.checkpoint_every.unwrap_or(100)),
            log_wall_time: Some(self.log_wall_time.unwrap_or(false)),
            beta_meta: Some(self.beta_meta.unwrap_or(hp.beta_meta)),
            alpha_inner: Some(self.alpha_inner.unwrap_or(hp.alpha_inner)),
            inner_steps: Some(self.inner_steps.unwrap_or(hp.inner_steps)),
            eps_high: Some(self.eps_high.unwrap_or(hp.eps_high)),
            eps_option: Some(self.eps_option.unwrap_or(hp.eps_option)),
            eta: Some(self.eta.unwrap_or(hp.eta)),
            eps_count: Some(self.eps_count.unwrap_or(hp.eps_count)),
            gamma: Some(self.gamma.unwrap_or(hp.gamma)),
            tasks_per_meta_batch: Some(self.tasks_per_meta_batch.unwrap_or(hp.tasks_per_meta_batch)),
            episodes_per_inner_step: Some(
                self.episodes_per_inner_step
                    .unwrap_or(hp.episodes_per_inner_step),
            ),
            meta_enabled: Some(self.meta_enabled.unwrap_or(true)),
            intrinsic_enabled: Some(self.intrinsic_enabled.unwrap_or(true)),
            curriculum_enabled: Some(self.curriculum_enabled.unwrap_or(true)),
            levels: Some(self.levels.clone().unwrap_or_else(|| self.preset_levels())),
            gate_window: Some(self.gate_window.unwrap_or(gate.window)),
            gate_threshold: Some(self.gate_threshold.unwrap_or(gate.success_threshold)),
            step_penalty: Some(self.step_penalty.unwrap_or(task.reward.step_penalty)),
            trap_penalty: Some(self.trap_penalty.unwrap_or(task.reward.trap_penalty)),
            goal_reward: Some(self.goal_reward.unwrap_or(task.reward.goal_reward)),
            trap_terminates: Some(self.trap_terminates.unwrap_or(task.reward.trap_terminates)),
            max_steps: Some(self.max_steps.unwrap_or(task.max_steps)),
            eval_episodes: Some(self.eval_episodes.unwrap_or(base.eval_episodes)),
            eval_tasks: Some(self.eval_tasks.unwrap_or(base.eval_tasks)),
            validation_episodes: Some(self.validation_episodes.unwrap_or(base.validation_episodes)),
            epsilon_final_fraction: Some(self.epsilon_final_fraction.unwrap_or(decay_to)),
            epsilon_decay_iterations: Some(self.epsilon_decay_iterations.unwrap_or(decay_iters)),
        }
    }

    /// Resolves and validates into a runnable plan.
    pub fn plan(&self) -> Result<RunPlan> {
        let r = self.resolved();
        // every field is Some after resolution
        let hp = HyperParams {
            beta_meta: r.beta_meta.unwrap(),
            alpha_inner: r.alpha_inner.unwrap(),
            inner_steps: r.inner_steps.unwrap(),
            eps_high: r.eps_high.unwrap(),
            eps_option: r.eps_option.unwrap(),
            eta: r.eta.unwrap(),
            eps_count: r.eps_count.unwrap(),
            gamma: r.gamma.unwrap(),
            tasks_per_meta_batch: r.tasks_per_meta_batch.unwrap(),
            episodes_per_inner_step: r.episodes_per_inner_step.unwrap(),
        };
        let levels = r
            .levels
            .as_ref()
            .unwrap()
            .iter()
            .map(|&l| curriculum::level_spec(l))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Config(e.to_string()))?;
        let curriculum = CurriculumSchedule::new(
            levels,
            Gate {
                window: r.gate_window.unwrap(),
                success_threshold: r.gate_threshold.unwrap(),
            },
        )?;
        let reward = RewardSpec {
            step_penalty: r.step_penalty.unwrap(),
            trap_penalty: r.trap_penalty.unwrap(),
            goal_reward: r.goal_reward.unwrap(),
            trap_terminates: r.trap_terminates.unwrap(),
        };
        let decay_iters = r.epsilon_decay_iterations.unwrap();
        let epsilon_schedule = if decay_iters == 0 {
            EpsilonSchedule::Constant
        } else {
            EpsilonSchedule::Linear {
                final_fraction: r.epsilon_final_fraction.unwrap(),
                iterations: decay_iters,
            }
        };
        let meta = MetaConfig {
            hp,
            meta_iterations: r.meta_iterations.unwrap(),
            curriculum,
            ablations: Ablations {
                meta_enabled: r.meta_enabled.unwrap(),
                intrinsic_enabled: r.intrinsic_enabled.unwrap(),
                curriculum_enabled: r.curriculum_enabled.unwrap(),
            },
            seed: r.seed.unwrap(),
            task: TaskSettings {
                reward,
                max_steps: r.max_steps.unwrap(),
            },
            eval_episodes: r.eval_episodes.unwrap(),
            eval_tasks: r.eval_tasks.unwrap(),
            validation_episodes: r.validation_episodes.unwrap(),
            epsilon_schedule,
            first_order: true,
            workers: r.workers.unwrap(),
            log_wall_time: r.log_wall_time.unwrap(),
        };
        meta.validate()?;
        if r.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(RunPlan {
            scenario: r.scenario,
            meta,
            out_dir: r.out_dir.unwrap(),
            plots: r.plots.unwrap(),
            checkpoint_every: r.checkpoint_every.unwrap(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_preset() {
        let plan = RunConfig::preset(Scenario::Fixed).plan().unwrap();
        assert_eq!(plan.meta.meta_iterations, 500);
        assert_eq!(plan.meta.hp, HyperParams::fixed_scenario());
        let l = plan.meta.curriculum.at(0);
        assert_eq!((l.width, l.height, l.n_traps), (6, 6, 3));
        assert_eq!(plan.meta.curriculum.levels.len(), 1);
    }

    #[test]
    fn gradual_preset() {
        let plan = RunConfig::preset(Scenario::Gradual).plan().unwrap();
        assert_eq!(plan.meta.meta_iterations, 4000);
        assert_eq!(plan.meta.curriculum.levels.len(), 5);
    }

    #[test]
    fn overrides_and_frozen_round_trip() {
        let cfg = RunConfig::from_toml(
            "scenario = \"gradual\"\nseed = 9\neps_option = 0.25\nlevels = [1, 2]\nmeta_iterations = 12\n",
        )
        .unwrap();
        let plan = cfg.plan().unwrap();
        assert_eq!(plan.meta.seed, 9);
        assert_eq!(plan.meta.hp.eps_option, 0.25);
        assert_eq!(plan.meta.curriculum.levels.len(), 2);
        let frozen = cfg.resolved().to_toml().unwrap();
        let again = RunConfig::from_toml(&frozen).unwrap();
        assert_eq!(again, cfg.resolved());
        assert_eq!(again.plan().unwrap(), plan);
    }

    #[test]
    fn bad_configs() {
        assert!(RunConfig::from_toml("scenario = \"weird\"").is_err());
        assert!(RunConfig::from_toml("unknown_key = 1").is_err());
        let mut c = RunConfig::preset(Scenario::Custom);
        c.levels = Some(vec![2, 1]);
        assert!(c.plan().is_err());
        c.levels = Some(vec![9]);
        assert!(c.plan().is_err());
        let mut c = RunConfig::preset(Scenario::Fixed);
        c.eps_high = Some(1.5);
        assert!(c.plan().is_err());
        c.eps_high = None;
        c.meta_iterations = Some(0);
        assert!(c.plan().is_err());
    }
}

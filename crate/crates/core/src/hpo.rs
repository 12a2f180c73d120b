//! Hyperparameter search: seeded random sampling, a trailing-window trial
//! objective, and median pruning of intermediate reports.
//!
//! # Study format
//!
//! One trial per line, tab-separated:
//!
//! ```text
//! trial<TAB>status<TAB>objective<TAB>params<TAB>intermediates
//! 0	complete	-3.25	beta_meta=0.0001,alpha_inner=0.003,inner_steps=3,eps_high=0.3,eps_option=0.5,eta=0.1	10:-7.5;20:-3.25
//! ```
//!
//! `status` is `running`, `pruned` or `complete`; `objective` is `-` unless
//! the trial completed. Intermediates are `step:value` pairs in step order.

use std::fmt::Write as _;
use std::ops::ControlFlow;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::HyperParams;
use crate::error::{Error, Result};
use crate::harness::metrics::MetricsRecord;
use crate::metatrain::{self, MetaConfig};
use crate::seeding::{self, Rng};

/// Number of trailing records averaged by the trial objective.
pub const OBJECTIVE_WINDOW: usize = 10;
/// Meta-iterations between intermediate reports.
pub const REPORT_EVERY: usize = 10;
pub const DEFAULT_MIN_TRIALS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    fn check(&self, name: &str, positive: bool) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite()) || self.low > self.high {
            return Err(Error::Config(format!(
                "{name}: empty range [{}, {}]",
                self.low, self.high
            )));
        }
        if positive && self.low <= 0.0 {
            return Err(Error::Config(format!("{name}: log range needs low > 0")));
        }
        Ok(())
    }

    fn uniform(&self, rng: &mut Rng) -> f64 {
        if self.low == self.high {
            return self.low;
        }
        rng.random_range(self.low..=self.high)
    }

    fn log_uniform(&self, rng: &mut Rng) -> f64 {
        if self.low == self.high {
            return self.low;
        }
        let v = rng.random_range(self.low.ln()..=self.high.ln()).exp();
        v.clamp(self.low, self.high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    /// Log-uniform.
    pub beta_meta: Range,
    /// Log-uniform.
    pub alpha_inner: Range,
    /// Inclusive integer range.
    pub inner_steps: (usize, usize),
    pub eps_high: Range,
    pub eps_option: Range,
    pub eta: Range,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            beta_meta: Range::new(1e-6, 1e-3),
            alpha_inner: Range::new(1e-4, 1e-2),
            inner_steps: (1, 10),
            eps_high: Range::new(0.0, 1.0),
            eps_option: Range::new(0.0, 1.0),
            eta: Range::new(0.0, 0.5),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        self.beta_meta.check("beta_meta", true)?;
        self.alpha_inner.check("alpha_inner", true)?;
        self.eps_high.check("eps_high", false)?;
        self.eps_option.check("eps_option", false)?;
        self.eta.check("eta", false)?;
        let (lo, hi) = self.inner_steps;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("inner_steps: empty range [{lo}, {hi}]")));
        }
        for (name, r) in [("eps_high", self.eps_high), ("eps_option", self.eps_option)] {
            if r.low < 0.0 || r.high > 1.0 {
                return Err(Error::Config(format!("{name} range must lie in [0, 1]")));
            }
        }
        if self.eta.low < 0.0 {
            return Err(Error::Config("eta range must be non-negative".into()));
        }
        Ok(())
    }
}

/// One draw per searched parameter; the rest are copied from `base`.
pub fn sample_hyperparams(rng: &mut Rng, space: &SearchSpace, base: &HyperParams) -> Result<HyperParams> {
    space.validate()?;
    let (lo, hi) = space.inner_steps;
    Ok(HyperParams {
        beta_meta: space.beta_meta.log_uniform(rng),
        alpha_inner: space.alpha_inner.log_uniform(rng),
        inner_steps: rng.random_range(lo..=hi),
        eps_high: space.eps_high.uniform(rng),
        eps_option: space.eps_option.uniform(rng),
        eta: space.eta.uniform(rng),
        ..*base
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Running,
    Pruned,
    Complete,
}

impl TrialStatus {
    fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Running => "running",
            TrialStatus::Pruned => "pruned",
            TrialStatus::Complete => "complete",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "running" => Some(TrialStatus::Running),
            "pruned" => Some(TrialStatus::Pruned),
            "complete" => Some(TrialStatus::Complete),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub id: usize,
    pub hp: HyperParams,
    /// `(report step, objective so far)` with strictly increasing steps.
    pub intermediates: Vec<(usize, f64)>,
    pub objective: Option<f64>,
    pub status: TrialStatus,
}

impl TrialRecord {
    pub fn value_at(&self, step: usize) -> Option<f64> {
        self.intermediates
            .iter()
            .find(|(s, _)| *s == step)
            .map(|&(_, v)| v)
    }
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// True iff at least `min_trials` non-pruned trials reported at `step` and
/// `value` is strictly below the median of their reports.
pub fn median_prune(history: &[TrialRecord], step: usize, value: f64, min_trials: usize) -> bool {
    let reports: Vec<f64> = history
        .iter()
        .filter(|t| t.status != TrialStatus::Pruned)
        .filter_map(|t| t.value_at(step))
        .collect();
    if reports.is_empty() || reports.len() < min_trials {
        return false;
    }
    median(&reports).is_some_and(|m| value < m)
}

/// Mean `avg_reward` over the last [`OBJECTIVE_WINDOW`] records.
pub fn trial_objective(metrics: &[MetricsRecord]) -> Result<f64> {
    if metrics.len() < OBJECTIVE_WINDOW {
        return Err(Error::Insufficient(format!(
            "trial objective needs {OBJECTIVE_WINDOW} records, got {}",
            metrics.len()
        )));
    }
    let tail = &metrics[metrics.len() - OBJECTIVE_WINDOW..];
    Ok(tail.iter().map(|m| m.avg_reward).sum::<f64>() / OBJECTIVE_WINDOW as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneSettings {
    pub n_trials: usize,
    pub seed: u64,
    pub pruning: bool,
    pub min_trials: usize,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            n_trials: 50,
            seed: 0,
            pruning: true,
            min_trials: DEFAULT_MIN_TRIALS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub trials: Vec<TrialRecord>,
    /// Index into `trials` of the selected trial.
    pub best: usize,
    /// True when every trial was pruned and `best` is ranked by its last
    /// intermediate value instead of a final objective.
    pub best_from_intermediate: bool,
}

impl Study {
    pub fn best_hp(&self) -> HyperParams {
        self.trials[self.best].hp
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("trial\tstatus\tobjective\tparams\tintermediates\n");
        for t in &self.trials {
            let _ = writeln!(out, "{}", trial_line(t));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Vec<TrialRecord>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == "trial\tstatus\tobjective\tparams\tintermediates" => {}
            _ => return Err(Error::parse("line 1", "missing study header")),
        }
        lines
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| parse_trial_line(l).map_err(|m| Error::parse(format!("line {}", n + 1), m)))
            .collect()
    }
}

fn trial_line(t: &TrialRecord) -> String {
    let objective = t.objective.map_or_else(|| "-".to_string(), |v| format!("{v:?}"));
    let hp = &t.hp;
    let params = format!(
        "beta_meta={:?},alpha_inner={:?},inner_steps={},eps_high={:?},eps_option={:?},eta={:?}",
        hp.beta_meta, hp.alpha_inner, hp.inner_steps, hp.eps_high, hp.eps_option, hp.eta
    );
    let inter: Vec<String> = t
        .intermediates
        .iter()
        .map(|(s, v)| format!("{s}:{v:?}"))
        .collect();
    format!(
        "{}\t{}\t{}\t{}\t{}",
        t.id,
        t.status.as_str(),
        objective,
        params,
        inter.join(";")
    )
}

fn parse_trial_line(line: &str) -> std::result::Result<TrialRecord, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 5 {
        return Err(format!("expected 5 tab-separated columns, got {}", cols.len()));
    }
    let id = cols[0].parse().map_err(|_| "bad trial id".to_string())?;
    let status = TrialStatus::parse(cols[1]).ok_or("bad status")?;
    let objective = match cols[2] {
        "-" => None,
        v => Some(v.parse::<f64>().map_err(|_| "bad objective".to_string())?),
    };
    let mut hp = HyperParams::default();
    for kv in cols[3].split(',') {
        let (k, v) = kv.split_once('=').ok_or("bad param")?;
        let f = || v.parse::<f64>().map_err(|_| format!("bad value for {k}"));
        match k {
            "beta_meta" => hp.beta_meta = f()?,
            "alpha_inner" => hp.alpha_inner = f()?,
            "inner_steps" => hp.inner_steps = v.parse().map_err(|_| "bad inner_steps".to_string())?,
            "eps_high" => hp.eps_high = f()?,
            "eps_option" => hp.eps_option = f()?,
            "eta" => hp.eta = f()?,
            _ => return Err(format!("unknown param {k}")),
        }
    }
    let intermediates = cols[4]
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|p| {
            let (s, v) = p.split_once(':').ok_or("bad intermediate")?;
            Ok((
                s.parse().map_err(|_| "bad step".to_string())?,
                v.parse().map_err(|_| "bad value".to_string())?,
            ))
        })
        .collect::<std::result::Result<Vec<(usize, f64)>, String>>()?;
    Ok(TrialRecord {
        id,
        hp,
        intermediates,
        objective,
        status,
    })
}

/// Runs one trial. The runner calls `report(step, value)` at each report
/// step; a `Break` answer means the trial was pruned and should stop.
/// The runner returns the final objective, or `None` when it stopped early.
pub trait TrialRunner {
    fn run(
        &mut self,
        id: usize,
        hp: &HyperParams,
        report: &mut dyn FnMut(usize, f64) -> ControlFlow<()>,
    ) -> Result<Option<f64>>;
}

impl<F> TrialRunner for F
where
    F: FnMut(usize, &HyperParams, &mut dyn FnMut(usize, f64) -> ControlFlow<()>) -> Result<Option<f64>>,
{
    fn run(
        &mut self,
        id: usize,
        hp: &HyperParams,
        report: &mut dyn FnMut(usize, f64) -> ControlFlow<()>,
    ) -> Result<Option<f64>> {
        self(id, hp, report)
    }
}

/// Random search with optional median pruning. Trials run sequentially in
/// id order, so a study is a pure function of its inputs.
pub fn tune(
    settings: &TuneSettings,
    space: &SearchSpace,
    base: &HyperParams,
    runner: &mut impl TrialRunner,
) -> Result<Study> {
    if settings.n_trials == 0 {
        return Err(Error::Config("n_trials must be >= 1".into()));
    }
    space.validate()?;
    let mut trials: Vec<TrialRecord> = Vec::with_capacity(settings.n_trials);
    for id in 0..settings.n_trials {
        let mut rng = seeding::stream(settings.seed, &[seeding::TAG_TRIAL, id as u64]);
        let hp = sample_hyperparams(&mut rng, space, base)?;
        let mut record = TrialRecord {
            id,
            hp,
            intermediates: Vec::new(),
            objective: None,
            status: TrialStatus::Running,
        };
        let history = &trials;
        let mut pruned = false;
        let mut report = |step: usize, value: f64| {
            if record.intermediates.last().is_some_and(|&(s, _)| s >= step) {
                return ControlFlow::Continue(());
            }
            record.intermediates.push((step, value));
            if settings.pruning && median_prune(history, step, value, settings.min_trials) {
                pruned = true;
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        };
        let outcome = runner.run(id, &hp, &mut report)?;
        // a runner that stops without an objective is treated as pruned
        match outcome {
            Some(v) if !pruned => {
                record.status = TrialStatus::Complete;
                record.objective = Some(v);
            }
            _ => record.status = TrialStatus::Pruned,
        }
        trials.push(record);
    }
    let best_complete = trials
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.objective.map(|v| (i, v)))
        .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
            Some((_, b)) if b >= v => acc,
            _ => Some((i, v)),
        });
    let (best, from_intermediate) = match best_complete {
        Some((i, _)) => (i, false),
        None => {
            let last = |t: &TrialRecord| t.intermediates.last().map_or(f64::NEG_INFINITY, |&(_, v)| v);
            let i = (0..trials.len())
                .fold(0, |b, i| if last(&trials[i]) > last(&trials[b]) { i } else { b });
            (i, true)
        }
    };
    Ok(Study {
        trials,
        best,
        best_from_intermediate: from_intermediate,
    })
}

/// Trial runner backed by real meta-training: reports the trailing-window
/// objective every [`REPORT_EVERY`] iterations.
pub fn meta_runner(
    base: MetaConfig,
) -> impl FnMut(usize, &HyperParams, &mut dyn FnMut(usize, f64) -> ControlFlow<()>) -> Result<Option<f64>> {
    move |id, hp, report| {
        let config = MetaConfig {
            hp: *hp,
            seed: seeding::derive_seed(base.seed, &[seeding::TAG_TRIAL, id as u64]),
            ..base.clone()
        };
        let mut seen = Vec::new();
        let result = metatrain::meta_train_with(&config, None, |record, _| {
            seen.push(*record);
            let step = record.meta_iteration;
            if step % REPORT_EVERY == 0 {
                if let Ok(v) = trial_objective(&seen) {
                    return report(step, v);
                }
            }
            ControlFlow::Continue(())
        })?;
        if result.stopped_early {
            return Ok(None);
        }
        trial_objective(&result.metrics).map(Some)
    }
}

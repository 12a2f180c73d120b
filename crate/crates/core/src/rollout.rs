//! The hierarchical episode loop: option selection, primitive actions,
//! visitation bonuses, and sampled option termination.

use std::fmt::Write as _;

use rand::RngCore;

use crate::agent::{self, AgentParams};
use crate::error::{Error, Result};
use crate::exploration::{self, VisitCounts};
use crate::gridworld::{self, Action, GridTask};
use crate::neuralnet::Mlp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state_index: usize,
    pub option: usize,
    pub action: usize,
    pub r_ext: f64,
    pub r_int: f64,
    pub r_total: f64,
    pub next_state_index: usize,
    pub done: bool,
    pub option_terminated: bool,
    pub succeeded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub n_states: usize,
    pub cumulative_ext: f64,
    pub cumulative_total: f64,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn cumulative_intrinsic(&self) -> f64 {
        self.transitions.iter().map(|t| t.r_int).sum()
    }

    /// True when the option changes only at the first transition or right
    /// after a transition flagged `option_terminated`.
    pub fn option_continuity_holds(&self) -> bool {
        self.transitions
            .windows(2)
            .all(|w| w[1].option == w[0].option || w[0].option_terminated)
    }

    /// One line per transition:
    /// `s option action r_ext r_int r_total s' done option_terminated succeeded`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for t in &self.transitions {
            let _ = writeln!(
                out,
                "{} {} {} {:?} {:?} {:?} {} {} {} {}",
                t.state_index,
                t.option,
                t.action,
                t.r_ext,
                t.r_int,
                t.r_total,
                t.next_state_index,
                t.done as u8,
                t.option_terminated as u8,
                t.succeeded as u8
            );
        }
        out
    }
}

/// Behaviour knobs for one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSettings {
    pub eps_high: f64,
    pub eps_option: f64,
    pub eta: f64,
    pub eps_count: f64,
}

impl EpisodeSettings {
    pub fn greedy() -> Self {
        Self {
            eps_high: 0.0,
            eps_option: 0.0,
            eta: 0.0,
            eps_count: 1.0,
        }
    }
}

/// Memoizes network outputs per state; parameters are fixed within an episode.
pub(crate) struct OutputCache<'a> {
    net: &'a Mlp,
    rows: Vec<Option<Vec<f64>>>,
}

impl<'a> OutputCache<'a> {
    pub(crate) fn new(net: &'a Mlp, n_states: usize) -> Self {
        Self {
            net,
            rows: vec![None; n_states],
        }
    }

    pub(crate) fn get(&mut self, state: usize) -> Result<&[f64]> {
        if self.rows[state].is_none() {
            let enc = gridworld::one_hot(self.rows.len(), state);
            self.rows[state] = Some(self.net.predict(&enc)?);
        }
        Ok(self.rows[state].as_deref().expect("filled above"))
    }
}

/// Runs one episode. When `counts` is given, the state entered at each step
/// is recorded and pays the count-based bonus.
pub fn run_episode(
    params: &AgentParams,
    task: &GridTask,
    settings: &EpisodeSettings,
    mut counts: Option<&mut VisitCounts>,
    rng: &mut impl RngCore,
) -> Result<Trajectory> {
    let n_states = task.n_states();
    if params.input_dim() != n_states {
        return Err(Error::Dimension {
            expected: n_states,
            actual: params.input_dim(),
        });
    }
    let mut high = OutputCache::new(&params.high, n_states);
    let mut heads: Vec<OutputCache> = params
        .options
        .iter()
        .map(|o| OutputCache::new(o, n_states))
        .collect();
    let mut beta = OutputCache::new(&params.termination, n_states);

    let mut state = gridworld::reset(task);
    let mut transitions = Vec::new();
    let mut option = 0;
    let mut option_terminated = true;
    let (mut cumulative_ext, mut cumulative_total) = (0.0, 0.0);

    while !state.terminated {
        let s = gridworld::state_index(task, &state);
        if option_terminated {
            option = agent::epsilon_greedy(high.get(s)?, settings.eps_high, rng);
        }
        let a = agent::epsilon_greedy(heads[option].get(s)?, settings.eps_option, rng);
        let action = Action::from_index(a).expect("head emits 4 actions");
        let outcome = gridworld::step(task, &state, action);
        let next = gridworld::state_index(task, &outcome.state);
        let r_int = match counts.as_deref_mut() {
            Some(c) => {
                let n = c.record_visit(next);
                exploration::intrinsic_reward(n, settings.eta, settings.eps_count)
            }
            None => 0.0,
        };
        let r_total = exploration::total_reward(outcome.reward, r_int);
        option_terminated = if outcome.done {
            true
        } else {
            agent::sample_termination(beta.get(next)?[option], rng)
        };
        transitions.push(Transition {
            state_index: s,
            option,
            action: a,
            r_ext: outcome.reward,
            r_int,
            r_total,
            next_state_index: next,
            done: outcome.done,
            option_terminated,
            succeeded: outcome.state.succeeded,
        });
        cumulative_ext += outcome.reward;
        cumulative_total += r_total;
        state = outcome.state;
    }

    Ok(Trajectory {
        success: state.succeeded,
        transitions,
        n_states,
        cumulative_ext,
        cumulative_total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub success_rate: f64,
    pub mean_ext_return: f64,
    pub episodes: usize,
}

/// Greedy, purely extrinsic episodes spread round-robin over `tasks`.
pub fn evaluate(
    params: &AgentParams,
    tasks: &[GridTask],
    n_episodes: usize,
    rng: &mut impl RngCore,
) -> Result<Evaluation> {
    if tasks.is_empty() {
        return Err(Error::Insufficient("evaluation needs at least one task".into()));
    }
    if n_episodes == 0 {
        return Err(Error::Insufficient("evaluation needs at least one episode".into()));
    }
    let settings = EpisodeSettings::greedy();
    let mut successes = 0usize;
    let mut total = 0.0;
    for i in 0..n_episodes {
        let traj = run_episode(params, &tasks[i % tasks.len()], &settings, None, rng)?;
        successes += traj.success as usize;
        total += traj.cumulative_ext;
    }
    Ok(Evaluation {
        success_rate: successes as f64 / n_episodes as f64,
        mean_ext_return: total / n_episodes as f64,
        episodes: n_episodes,
    })
}

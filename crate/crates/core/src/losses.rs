//! Inner-loop losses over trajectories.
//!
//! * low level: per-option TD regression onto
//!   `r_total + gamma * max_a Q_target(s', a) * (1 - done)`;
//! * high level: SMDP Q-learning over option segments, with the discounted
//!   in-segment return and `gamma^tau` bootstrapping;
//! * termination: binary cross-entropy of `beta_w(s')` against the label
//!   "the running option is no longer greedy under the target high-level head".
//!
//! Each component is a mean over its samples within a trajectory, and then
//! averaged over trajectories.

use crate::agent::{argmax, AgentGrads, AgentParams, N_OPTIONS};
use crate::error::{Error, Result};
use crate::gridworld;
use crate::rollout::{OutputCache, Trajectory, Transition};

pub const PROB_CLAMP: f64 = 1e-6;

/// Frozen copy of the agent used for bootstrapped targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetParams(AgentParams);

impl TargetParams {
    pub fn sync(params: &AgentParams) -> Self {
        Self(params.clone())
    }

    pub fn params(&self) -> &AgentParams {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub l_high: f64,
    pub l_low: [f64; N_OPTIONS],
    pub l_beta: [f64; N_OPTIONS],
    pub total: f64,
}

impl LossBundle {
    fn from_parts(l_high: f64, l_low: [f64; N_OPTIONS], l_beta: [f64; N_OPTIONS]) -> Self {
        let total = l_high + l_low.iter().zip(&l_beta).map(|(a, b)| a + b).sum::<f64>();
        Self {
            l_high,
            l_low,
            l_beta,
            total,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.l_high.is_finite()
            && self.l_low.iter().chain(&self.l_beta).all(|v| v.is_finite())
    }
}

/// Which loss components contribute to a gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Components {
    pub high: bool,
    pub low: bool,
    pub beta: bool,
}

impl Components {
    pub const ALL: Self = Self {
        high: true,
        low: true,
        beta: true,
    };
    pub const HIGH: Self = Self {
        high: true,
        low: false,
        beta: false,
    };
    pub const LOW: Self = Self {
        high: false,
        low: true,
        beta: false,
    };
    pub const BETA: Self = Self {
        high: false,
        low: false,
        beta: true,
    };
}

/// One option-level segment of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_state: usize,
    pub option: usize,
    pub duration: usize,
    pub discounted_return: f64,
    pub end_state: usize,
    pub done: bool,
}

/// Splits a trajectory wherever `option_terminated` is set.
pub fn segments(traj: &Trajectory, gamma: f64) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut current: Option<Segment> = None;
    for tr in &traj.transitions {
        let seg = current.get_or_insert(Segment {
            start_state: tr.state_index,
            option: tr.option,
            duration: 0,
            discounted_return: 0.0,
            end_state: tr.state_index,
            done: false,
        });
        seg.discounted_return += gamma.powi(seg.duration as i32) * tr.r_total;
        seg.duration += 1;
        seg.end_state = tr.next_state_index;
        seg.done = tr.done;
        if tr.option_terminated || tr.done {
            out.extend(current.take());
        }
    }
    out.extend(current);
    out
}

fn max(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `r_total + gamma * max_a Q_target_w(s', a) * (1 - done)` for the
/// transition's own option head.
pub fn low_level_target(tr: &Transition, targets: &TargetParams, gamma: f64) -> Result<f64> {
    if tr.done || gamma == 0.0 {
        return Ok(tr.r_total);
    }
    let t = targets.params();
    let head = t
        .options
        .get(tr.option)
        .ok_or_else(|| Error::OutOfRange(format!("option {}", tr.option)))?;
    let q = head.predict(&gridworld::one_hot(t.input_dim(), tr.next_state_index))?;
    Ok(tr.r_total + gamma * max(&q))
}

/// SMDP target for one segment.
pub fn high_level_target(seg: &Segment, targets: &TargetParams, gamma: f64) -> Result<f64> {
    if seg.done {
        return Ok(seg.discounted_return);
    }
    let t = targets.params();
    let q = t.high.predict(&gridworld::one_hot(t.input_dim(), seg.end_state))?;
    Ok(seg.discounted_return + gamma.powi(seg.duration as i32) * max(&q))
}

/// Per-state accumulated output gradients for one network.
struct GradSink {
    rows: Vec<Option<Vec<f64>>>,
    width: usize,
}

impl GradSink {
    fn new(n_states: usize, width: usize) -> Self {
        Self {
            rows: vec![None; n_states],
            width,
        }
    }

    fn add(&mut self, state: usize, index: usize, value: f64) {
        let width = self.width;
        self.rows[state].get_or_insert_with(|| vec![0.0; width])[index] += value;
    }

    fn flush(
        self,
        net: &crate::neuralnet::Mlp,
        out: &mut crate::neuralnet::Gradients,
    ) -> Result<()> {
        let n = self.rows.len();
        for (s, row) in self.rows.into_iter().enumerate() {
            if let Some(g) = row {
                let (_, cache) = net.forward(&gridworld::one_hot(n, s))?;
                net.backward_into(&cache, &g, out)?;
            }
        }
        Ok(())
    }
}

fn bce(p: f64, label: bool) -> (f64, f64) {
    let clamped = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = if label { -clamped.ln() } else { -(1.0 - clamped).ln() };
    let grad = if clamped != p {
        0.0
    } else if label {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    };
    (loss, grad)
}

/// Core evaluation shared by every public entry point. Gradients, when
/// requested, cover only the components selected by `parts`.
fn evaluate(
    params: &AgentParams,
    trajectories: &[Trajectory],
    targets: &TargetParams,
    gamma: f64,
    parts: Components,
    want_grads: bool,
) -> Result<(LossBundle, Option<AgentGrads>)> {
    if trajectories.is_empty() {
        return Err(Error::Insufficient("loss needs at least one trajectory".into()));
    }
    let n_states = params.input_dim();
    if targets.params().input_dim() != n_states {
        return Err(Error::Dimension {
            expected: n_states,
            actual: targets.params().input_dim(),
        });
    }
    for traj in trajectories {
        if traj.n_states != n_states {
            return Err(Error::Dimension {
                expected: n_states,
                actual: traj.n_states,
            });
        }
        if traj.is_empty() {
            return Err(Error::Insufficient("empty trajectory".into()));
        }
    }
    let t = targets.params();
    let mut live_high = OutputCache::new(&params.high, n_states);
    let mut live_opts: Vec<_> = params.options.iter().map(|o| OutputCache::new(o, n_states)).collect();
    let mut live_beta = OutputCache::new(&params.termination, n_states);
    let mut tgt_high = OutputCache::new(&t.high, n_states);
    let mut tgt_opts: Vec<_> = t.options.iter().map(|o| OutputCache::new(o, n_states)).collect();

    let mut sink_high = GradSink::new(n_states, N_OPTIONS);
    let mut sink_opts: Vec<_> = (0..N_OPTIONS)
        .map(|o| GradSink::new(n_states, params.options[o].output_dim()))
        .collect();
    let mut sink_beta = GradSink::new(n_states, N_OPTIONS);

    let weight = 1.0 / trajectories.len() as f64;
    let mut l_high = 0.0;
    let mut l_low = [0.0; N_OPTIONS];
    let mut l_beta = [0.0; N_OPTIONS];

    for traj in trajectories {
        // low level
        let mut used = [0usize; N_OPTIONS];
        for tr in &traj.transitions {
            used[tr.option] += 1;
        }
        for tr in &traj.transitions {
            let o = tr.option;
            let y = if tr.done || gamma == 0.0 {
                tr.r_total
            } else {
                tr.r_total + gamma * max(tgt_opts[o].get(tr.next_state_index)?)
            };
            let q = live_opts[o].get(tr.state_index)?[tr.action];
            let scale = weight / used[o] as f64;
            let diff = q - y;
            l_low[o] += scale * diff * diff;
            if want_grads && parts.low {
                sink_opts[o].add(tr.state_index, tr.action, scale * 2.0 * diff);
            }
        }

        // high level
        let segs = segments(traj, gamma);
        let scale = weight / segs.len() as f64;
        for seg in &segs {
            let y = if seg.done {
                seg.discounted_return
            } else {
                seg.discounted_return
                    + gamma.powi(seg.duration as i32) * max(tgt_high.get(seg.end_state)?)
            };
            let q = live_high.get(seg.start_state)?[seg.option];
            let diff = q - y;
            l_high += scale * diff * diff;
            if want_grads && parts.high {
                sink_high.add(seg.start_state, seg.option, scale * 2.0 * diff);
            }
        }

        // termination
        let mut labelled = [0usize; N_OPTIONS];
        for tr in traj.transitions.iter().filter(|tr| !tr.done) {
            labelled[tr.option] += 1;
        }
        for tr in traj.transitions.iter().filter(|tr| !tr.done) {
            let o = tr.option;
            let q = tgt_high.get(tr.next_state_index)?;
            let label = q[o] - max(q) < 0.0;
            let p = live_beta.get(tr.next_state_index)?[o];
            let (loss, grad) = bce(p, label);
            let scale = weight / labelled[o] as f64;
            l_beta[o] += scale * loss;
            if want_grads && parts.beta {
                sink_beta.add(tr.next_state_index, o, scale * grad);
            }
        }
    }

    let bundle = LossBundle::from_parts(l_high, l_low, l_beta);
    if !want_grads {
        return Ok((bundle, None));
    }
    let mut grads = AgentGrads::zeros_like(params);
    sink_high.flush(&params.high, &mut grads.high)?;
    for ((sink, net), g) in sink_opts.into_iter().zip(&params.options).zip(grads.options.iter_mut()) {
        sink.flush(net, g)?;
    }
    sink_beta.flush(&params.termination, &mut grads.termination)?;
    Ok((bundle, Some(grads)))
}

/// Per-option mean squared TD error (0 for unused options).
pub fn low_level_loss(
    params: &AgentParams,
    traj: &Trajectory,
    targets: &TargetParams,
    gamma: f64,
) -> Result<[f64; N_OPTIONS]> {
    let (b, _) = evaluate(params, std::slice::from_ref(traj), targets, gamma, Components::ALL, false)?;
    Ok(b.l_low)
}

pub fn high_level_loss(
    params: &AgentParams,
    traj: &Trajectory,
    targets: &TargetParams,
    gamma: f64,
) -> Result<f64> {
    let (b, _) = evaluate(params, std::slice::from_ref(traj), targets, gamma, Components::ALL, false)?;
    Ok(b.l_high)
}

/// Per-option termination BCE. Terminal transitions carry no label.
pub fn termination_loss(
    params: &AgentParams,
    traj: &Trajectory,
    targets: &TargetParams,
) -> Result<[f64; N_OPTIONS]> {
    let (b, _) = evaluate(params, std::slice::from_ref(traj), targets, 0.0, Components::ALL, false)?;
    Ok(b.l_beta)
}

pub fn total_inner_loss(
    params: &AgentParams,
    trajectories: &[Trajectory],
    targets: &TargetParams,
    gamma: f64,
) -> Result<LossBundle> {
    Ok(evaluate(params, trajectories, targets, gamma, Components::ALL, false)?.0)
}

/// Loss bundle plus the gradient of its total with respect to every head.
pub fn loss_and_grads(
    params: &AgentParams,
    trajectories: &[Trajectory],
    targets: &TargetParams,
    gamma: f64,
) -> Result<(LossBundle, AgentGrads)> {
    component_grads(params, trajectories, targets, gamma, Components::ALL)
}

pub fn component_grads(
    params: &AgentParams,
    trajectories: &[Trajectory],
    targets: &TargetParams,
    gamma: f64,
    parts: Components,
) -> Result<(LossBundle, AgentGrads)> {
    let (bundle, grads) = evaluate(params, trajectories, targets, gamma, parts, true)?;
    Ok((bundle, grads.expect("gradients requested")))
}

/// Greedy option under the target high-level head at `state`.
pub fn greedy_option(targets: &TargetParams, state: usize) -> Result<usize> {
    let t = targets.params();
    Ok(argmax(&t.high.predict(&gridworld::one_hot(t.input_dim(), state))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;

    fn agent(n: usize, seed: u64) -> AgentParams {
        AgentParams::with_hidden(n, &[6, 5], &mut seeding::rng_from_seed(seed)).unwrap()
    }

    fn tr(s: usize, option: usize, action: usize, r: f64, next: usize, done: bool, term: bool) -> Transition {
        Transition {
            state_index: s,
            option,
            action,
            r_ext: r,
            r_int: 0.0,
            r_total: r,
            next_state_index: next,
            done,
            option_terminated: term || done,
            succeeded: done,
        }
    }

    fn traj(n_states: usize, transitions: Vec<Transition>) -> Trajectory {
        let cumulative_ext = transitions.iter().map(|t| t.r_ext).sum();
        Trajectory {
            success: transitions.last().map(|t| t.succeeded).unwrap_or(false),
            cumulative_total: cumulative_ext,
            cumulative_ext,
            transitions,
            n_states,
        }
    }

    #[test]
    fn low_target_cases() {
        let mut p = agent(4, 0);
        p.options[2].set_output_constant(&[2.0, -1.0, 0.5, 1.0]).unwrap();
        let targets = TargetParams::sync(&p);
        let terminal = tr(0, 2, 0, 9.9, 3, true, true);
        assert_eq!(low_level_target(&terminal, &targets, 0.99).unwrap(), 9.9);
        let mid = tr(0, 2, 0, -0.1, 1, false, false);
        assert!((low_level_target(&mid, &targets, 0.99).unwrap() - 1.88).abs() < 1e-12);
        assert_eq!(low_level_target(&mid, &targets, 0.0).unwrap(), -0.1);
    }

    #[test]
    fn single_transition_low_loss() {
        let mut p = agent(4, 1);
        p.options[1].set_output_constant(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        let targets = TargetParams::sync(&p);
        let t = traj(4, vec![tr(0, 1, 2, 3.0, 3, true, true)]);
        let l = low_level_loss(&p, &t, &targets, 0.9).unwrap();
        assert!((l[1] - 4.0).abs() < 1e-12);
        assert_eq!(l[0], 0.0);
        assert_eq!(l[4], 0.0);
    }

    #[test]
    fn smdp_target_arithmetic() {
        let mut p = agent(4, 2);
        p.high.set_output_constant(&[4.0, 1.0, 0.0, -3.0, 2.0]).unwrap();
        let targets = TargetParams::sync(&p);
        let t = traj(
            4,
            vec![tr(0, 3, 0, 1.0, 1, false, false), tr(1, 3, 0, 1.0, 2, false, true)],
        );
        let segs = segments(&t, 0.5);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].duration, 2);
        assert!((high_level_target(&segs[0], &targets, 0.5).unwrap() - 2.5).abs() < 1e-12);

        let terminal = traj(4, vec![tr(0, 0, 0, 5.0, 3, true, true)]);
        let segs = segments(&terminal, 0.5);
        assert_eq!(high_level_target(&segs[0], &targets, 0.5).unwrap(), 5.0);
    }

    #[test]
    fn exact_fit_gives_zero_loss() {
        // gamma = 0 and terminal transitions make targets equal to rewards
        let mut p = agent(4, 3);
        p.high.set_output_constant(&[1.5; 5]).unwrap();
        for o in &mut p.options {
            o.set_output_constant(&[1.5; 4]).unwrap();
        }
        let targets = TargetParams::sync(&p);
        let t = traj(4, vec![tr(0, 0, 1, 1.5, 1, false, true), tr(1, 2, 3, 1.5, 3, true, true)]);
        let b = total_inner_loss(&p, &[t.clone()], &targets, 0.0).unwrap();
        assert_eq!(b.l_high, 0.0);
        assert!(b.l_low.iter().all(|&v| v == 0.0));
        assert_eq!(high_level_loss(&p, &t, &targets, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn termination_bce_cases() {
        let mut p = agent(4, 4);
        p.termination.set_output_constant(&[0.0; 5]).unwrap();
        // option 0 is the target argmax everywhere: labels are all 0
        p.high.set_output_constant(&[3.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let targets = TargetParams::sync(&p);
        let t = traj(
            4,
            vec![
                tr(0, 0, 0, -0.1, 1, false, false),
                tr(1, 0, 0, -0.1, 2, false, false),
                tr(2, 1, 0, -0.1, 3, false, false),
                tr(3, 1, 0, 1.0, 3, true, true),
            ],
        );
        let l = termination_loss(&p, &t, &targets).unwrap();
        assert!((l[0] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l[1] - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(l[2], 0.0);

        // labels 0 with beta -> 0: loss vanishes
        p.termination.set_output_constant(&[-30.0; 5]).unwrap();
        let l = termination_loss(&p, &t, &targets).unwrap();
        assert!(l[0] <= -(1.0 - PROB_CLAMP).ln() + 1e-15);
        // option 1 is never greedy: label 1, beta -> 1 saturates at the clamp
        p.termination.set_output_constant(&[-30.0, 30.0, 0.0, 0.0, 0.0]).unwrap();
        let l = termination_loss(&p, &t, &targets).unwrap();
        assert!(l[1] <= -(1.0 - PROB_CLAMP).ln() + 1e-15);
    }

    #[test]
    fn bundle_total_is_sum_of_parts() {
        let p = agent(9, 5);
        let targets = TargetParams::sync(&agent(9, 6));
        let t = traj(
            9,
            vec![
                tr(0, 0, 1, -0.1, 3, false, false),
                tr(3, 0, 3, -0.1, 4, false, true),
                tr(4, 4, 3, -0.1, 5, false, false),
                tr(5, 4, 1, 9.9, 8, true, true),
            ],
        );
        let b = total_inner_loss(&p, &[t], &targets, 0.9).unwrap();
        let sum = b.l_high + b.l_low.iter().sum::<f64>() + b.l_beta.iter().sum::<f64>();
        assert!((b.total - sum).abs() < 1e-12);
        assert!(b.total > 0.0 && b.is_finite());
    }

    #[test]
    fn targets_do_not_track_live_params() {
        let p = agent(9, 7);
        let targets = TargetParams::sync(&p);
        let t = traj(9, vec![tr(0, 2, 1, -0.1, 3, false, false), tr(3, 2, 1, 9.9, 8, true, true)]);
        let y_before = low_level_target(&t.transitions[0], &targets, 0.9).unwrap();
        let mut live = p.clone();
        let mut g = AgentGrads::zeros_like(&live);
        g.options[2].values_mut().iter_mut().for_each(|v| *v = 1.0);
        live.sgd_step(&g, 0.5).unwrap();
        assert_eq!(low_level_target(&t.transitions[0], &targets, 0.9).unwrap(), y_before);
        assert_eq!(targets.params(), &p);
    }

    #[test]
    fn empty_inputs_rejected() {
        let p = agent(4, 8);
        let targets = TargetParams::sync(&p);
        assert!(total_inner_loss(&p, &[], &targets, 0.9).is_err());
        assert!(total_inner_loss(&p, &[traj(4, vec![])], &targets, 0.9).is_err());
    }
}

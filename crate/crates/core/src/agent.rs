//! The meta-parameter set: high-level option values, per-option action
//! values, and the multi-head termination network.
//!
//! Agent checkpoints are the seven network blocks (high-level, options 0..4,
//! termination) in [`Mlp`] checkpoint format behind an `agent v1` header.

use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::{AdamState, Gradients, Mlp, OutputActivation};

pub const N_OPTIONS: usize = 5;
pub const HIDDEN: [usize; 2] = [64, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub high: Mlp,
    pub options: Vec<Mlp>,
    pub termination: Mlp,
}

/// Gradients shaped like [`AgentParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGrads {
    pub high: Gradients,
    pub options: Vec<Gradients>,
    pub termination: Gradients,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentAdam {
    pub high: AdamState,
    pub options: Vec<AdamState>,
    pub termination: AdamState,
}

impl AgentParams {
    pub fn new(n_states: usize, rng: &mut impl RngCore) -> Result<Self> {
        Self::with_hidden(n_states, &HIDDEN, rng)
    }

    /// Same heads with custom hidden widths; used by small test fixtures.
    pub fn with_hidden(n_states: usize, hidden: &[usize], rng: &mut impl RngCore) -> Result<Self> {
        let dims = |out: usize| {
            let mut d = vec![n_states];
            d.extend_from_slice(hidden);
            d.push(out);
            d
        };
        let high = Mlp::new(&dims(N_OPTIONS), OutputActivation::Linear, rng)?;
        let options = (0..N_OPTIONS)
            .map(|_| Mlp::new(&dims(crate::gridworld::N_ACTIONS), OutputActivation::Linear, rng))
            .collect::<Result<Vec<_>>>()?;
        let termination = Mlp::new(&dims(N_OPTIONS), OutputActivation::Sigmoid, rng)?;
        Ok(Self {
            high,
            options,
            termination,
        })
    }

    /// Carries the agent from a `from` grid to a `to` grid (width, height).
    /// Input columns of cells present in both grids keep their weights,
    /// matched by `(x, y)`; the remaining columns are freshly initialized.
    /// Returns the new parameters and the correspondingly remapped Adam state.
    pub fn regrid(
        &self,
        adam: &AgentAdam,
        from: (usize, usize),
        to: (usize, usize),
        rng: &mut impl RngCore,
    ) -> Result<(Self, AgentAdam)> {
        if self.input_dim() != from.0 * from.1 {
            return Err(Error::Dimension {
                expected: from.0 * from.1,
                actual: self.input_dim(),
            });
        }
        let map: Vec<Option<usize>> = (0..to.0 * to.1)
            .map(|j| {
                let (x, y) = (j % to.0, j / to.0);
                (x < from.0 && y < from.1).then(|| y * from.0 + x)
            })
            .collect();
        let high = self.high.remap_inputs(&map, rng)?;
        let options = self
            .options
            .iter()
            .map(|o| o.remap_inputs(&map, rng))
            .collect::<Result<Vec<_>>>()?;
        let termination = self.termination.remap_inputs(&map, rng)?;
        let adam = AgentAdam {
            high: adam.high.remap_inputs(&self.high, &map),
            options: adam
                .options
                .iter()
                .zip(&self.options)
                .map(|(s, o)| s.remap_inputs(o, &map))
                .collect(),
            termination: adam.termination.remap_inputs(&self.termination, &map),
        };
        Ok((
            Self {
                high,
                options,
                termination,
            },
            adam,
        ))
    }

    pub fn input_dim(&self) -> usize {
        self.high.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.options.len() != N_OPTIONS {
            return Err(Error::Dimension {
                expected: N_OPTIONS,
                actual: self.options.len(),
            });
        }
        let input = self.input_dim();
        for net in self.nets() {
            if net.input_dim() != input {
                return Err(Error::Dimension {
                    expected: input,
                    actual: net.input_dim(),
                });
            }
        }
        if self.options.iter().any(|o| o.dims() != self.options[0].dims()) {
            return Err(Error::Config("option heads differ in shape".into()));
        }
        if self.high.output_dim() != N_OPTIONS || self.termination.output_dim() != N_OPTIONS {
            return Err(Error::Config("high/termination heads need 5 outputs".into()));
        }
        Ok(())
    }

    pub fn nets(&self) -> impl Iterator<Item = &Mlp> {
        std::iter::once(&self.high)
            .chain(self.options.iter())
            .chain(std::iter::once(&self.termination))
    }

    fn nets_mut(&mut self) -> impl Iterator<Item = &mut Mlp> {
        std::iter::once(&mut self.high)
            .chain(self.options.iter_mut())
            .chain(std::iter::once(&mut self.termination))
    }

    pub fn n_params(&self) -> usize {
        self.nets().map(Mlp::n_params).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.nets().all(Mlp::is_finite)
    }

    pub fn sgd_step(&mut self, grads: &AgentGrads, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("agent gradient".into()));
        }
        for (net, g) in self.nets_mut().zip(grads.parts()) {
            net.sgd_step(g, lr)?;
        }
        Ok(())
    }

    pub fn adam_step(&mut self, grads: &AgentGrads, state: &mut AgentAdam, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("agent gradient".into()));
        }
        let states = std::iter::once(&mut state.high)
            .chain(state.options.iter_mut())
            .chain(std::iter::once(&mut state.termination));
        for ((net, g), s) in self.nets_mut().zip(grads.parts()).zip(states) {
            net.adam_step(g, s, lr)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("agent v1\nnets {}\n", N_OPTIONS + 2);
        for net in self.nets() {
            out.push_str(&net.to_checkpoint());
        }
        out
    }

    pub fn read_checkpoint<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<Self> {
        let header = lines.next().map(|(_, l)| l.trim());
        if header != Some("agent v1") {
            return Err(Error::parse("agent checkpoint", "expected 'agent v1'"));
        }
        let count = lines.next().map(|(_, l)| l.trim());
        if count != Some(format!("nets {}", N_OPTIONS + 2).as_str()) {
            return Err(Error::parse("agent checkpoint", "expected 'nets 7'"));
        }
        let high = Mlp::read_checkpoint(lines)?;
        let options = (0..N_OPTIONS)
            .map(|_| Mlp::read_checkpoint(lines))
            .collect::<Result<Vec<_>>>()?;
        let termination = Mlp::read_checkpoint(lines)?;
        let params = Self {
            high,
            options,
            termination,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        Self::read_checkpoint(&mut text.lines().enumerate())
    }
}

impl AgentGrads {
    pub fn zeros_like(params: &AgentParams) -> Self {
        Self {
            high: Gradients::zeros_like(&params.high),
            options: params.options.iter().map(Gradients::zeros_like).collect(),
            termination: Gradients::zeros_like(&params.termination),
        }
    }

    pub fn parts(&self) -> impl Iterator<Item = &Gradients> {
        std::iter::once(&self.high)
            .chain(self.options.iter())
            .chain(std::iter::once(&self.termination))
    }

    fn parts_mut(&mut self) -> impl Iterator<Item = &mut Gradients> {
        std::iter::once(&mut self.high)
            .chain(self.options.iter_mut())
            .chain(std::iter::once(&mut self.termination))
    }

    pub fn is_finite(&self) -> bool {
        self.parts().all(Gradients::is_finite)
    }

    pub fn add_assign(&mut self, other: &AgentGrads) -> Result<()> {
        for (a, b) in self.parts_mut().zip(other.parts()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.parts_mut().for_each(|g| g.scale(k));
    }

    pub fn norm_sq(&self) -> f64 {
        self.parts().map(Gradients::norm_sq).sum()
    }

    /// All entries in network order, flattened.
    pub fn flatten(&self) -> Vec<f64> {
        self.parts().flat_map(|g| g.values().iter().copied()).collect()
    }
}

impl AgentAdam {
    pub fn new(params: &AgentParams) -> Self {
        Self {
            high: AdamState::new(&params.high),
            options: params.options.iter().map(AdamState::new).collect(),
            termination: AdamState::new(&params.termination),
        }
    }

    pub fn states(&self) -> impl Iterator<Item = &AdamState> {
        std::iter::once(&self.high)
            .chain(self.options.iter())
            .chain(std::iter::once(&self.termination))
    }

    pub fn states_mut(&mut self) -> impl Iterator<Item = &mut AdamState> {
        std::iter::once(&mut self.high)
            .chain(self.options.iter_mut())
            .chain(std::iter::once(&mut self.termination))
    }
}

/// How the exploration rates evolve over meta-iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonSchedule {
    #[default]
    Constant,
    /// Linear decay to `final_fraction` of the configured value over `iterations`.
    Linear { final_fraction: f64, iterations: usize },
}

impl EpsilonSchedule {
    pub fn factor(&self, iteration: usize) -> f64 {
        match *self {
            EpsilonSchedule::Constant => 1.0,
            EpsilonSchedule::Linear {
                final_fraction,
                iterations,
            } => {
                if iterations == 0 {
                    return final_fraction;
                }
                let frac = (iteration as f64 / iterations as f64).min(1.0);
                1.0 + (final_fraction - 1.0) * frac
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub beta_meta: f64,
    pub alpha_inner: f64,
    pub inner_steps: usize,
    pub eps_high: f64,
    pub eps_option: f64,
    pub eta: f64,
    pub eps_count: f64,
    pub gamma: f64,
    pub tasks_per_meta_batch: usize,
    pub episodes_per_inner_step: usize,
}

impl HyperParams {
    /// The tuned values reported for the tuning study.
    pub fn tuned() -> Self {
        Self {
            beta_meta: 8.24e-6,
            alpha_inner: 0.00317,
            inner_steps: 5,
            eps_high: 0.1018,
            eps_option: 0.6199,
            eta: 0.1111,
            ..Self::default()
        }
    }

    /// Settings of the fixed-complexity experiment.
    pub fn fixed_scenario() -> Self {
        Self {
            beta_meta: 1e-4,
            alpha_inner: 0.003,
            inner_steps: 3,
            eps_high: 0.3,
            eps_option: 0.5,
            eta: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} not in [0, 1]")))
            }
        };
        prob("eps_high", self.eps_high)?;
        prob("eps_option", self.eps_option)?;
        if !(self.beta_meta > 0.0 && self.beta_meta.is_finite()) {
            return Err(Error::Config("beta_meta must be > 0".into()));
        }
        if !(self.alpha_inner > 0.0 && self.alpha_inner.is_finite()) {
            return Err(Error::Config("alpha_inner must be > 0".into()));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be >= 1".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config("eta must be >= 0".into()));
        }
        if !(self.eps_count > 0.0 && self.eps_count.is_finite()) {
            return Err(Error::Config("eps_count must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma = {} not in [0, 1)", self.gamma)));
        }
        if self.tasks_per_meta_batch == 0 || self.episodes_per_inner_step == 0 {
            return Err(Error::Config(
                "tasks_per_meta_batch and episodes_per_inner_step must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            beta_meta: 1e-4,
            alpha_inner: 0.003,
            inner_steps: 5,
            eps_high: 0.1,
            eps_option: 0.1,
            eta: 0.1,
            eps_count: 1.0,
            gamma: 0.99,
            tasks_per_meta_batch: 4,
            episodes_per_inner_step: 1,
        }
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy over precomputed head outputs.
pub fn epsilon_greedy(values: &[f64], eps: f64, rng: &mut impl RngCore) -> usize {
    let explore: f64 = rng.random();
    if explore < eps {
        rng.random_range(0..values.len())
    } else {
        argmax(values)
    }
}

pub fn select_option(
    params: &AgentParams,
    state_enc: &[f64],
    eps_high: f64,
    rng: &mut impl RngCore,
) -> Result<usize> {
    let q = params.high.predict(state_enc)?;
    Ok(epsilon_greedy(&q, eps_high, rng))
}

pub fn select_action(
    params: &AgentParams,
    option: usize,
    state_enc: &[f64],
    eps_option: f64,
    rng: &mut impl RngCore,
) -> Result<usize> {
    let head = params
        .options
        .get(option)
        .ok_or_else(|| Error::OutOfRange(format!("option {option}")))?;
    let q = head.predict(state_enc)?;
    Ok(epsilon_greedy(&q, eps_option, rng))
}

pub fn termination_prob(params: &AgentParams, option: usize, state_enc: &[f64]) -> Result<f64> {
    if option >= N_OPTIONS {
        return Err(Error::OutOfRange(format!("option {option}")));
    }
    Ok(params.termination.predict(state_enc)?[option])
}

pub fn sample_termination(p: f64, rng: &mut impl RngCore) -> bool {
    let u: f64 = rng.random();
    u < p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regrid_keeps_shared_cells() {
        let mut rng = crate::seeding::rng_from_seed(4);
        let p = AgentParams::with_hidden(16, &[8, 6], &mut rng).unwrap();
        let adam = AgentAdam::new(&p);
        let (q, qa) = p.regrid(&adam, (4, 4), (5, 5), &mut rng).unwrap();
        q.validate().unwrap();
        assert_eq!(q.input_dim(), 25);
        assert_eq!(qa.high.m.len(), q.high.n_params());
        for (x, y) in [(0, 0), (3, 0), (2, 3), (3, 3)] {
            let old = p.high.predict(&crate::gridworld::one_hot(16, y * 4 + x)).unwrap();
            let new = q.high.predict(&crate::gridworld::one_hot(25, y * 5 + x)).unwrap();
            assert_eq!(old, new);
        }
        assert!(p.regrid(&adam, (5, 5), (6, 6), &mut rng).is_err());
    }
    use crate::seeding;

    fn small_agent(seed: u64) -> AgentParams {
        AgentParams::new(36, &mut seeding::rng_from_seed(seed)).unwrap()
    }

    fn with_high_output(mut p: AgentParams, out: &[f64]) -> AgentParams {
        p.high.set_output_constant(out).unwrap();
        p
    }

    #[test]
    fn shapes() {
        let p = small_agent(0);
        p.validate().unwrap();
        assert_eq!(p.high.dims(), &[36, 64, 32, 5]);
        assert_eq!(p.options[0].dims(), &[36, 64, 32, 4]);
        assert_eq!(p.termination.output_activation(), OutputActivation::Sigmoid);
        assert_eq!(p.n_params(), 4613 * 2 + 4580 * 5);
    }

    #[test]
    fn greedy_option() {
        let p = with_high_output(small_agent(1), &[1.0, 3.0, 2.0, 0.0, -1.0]);
        let mut rng = seeding::rng_from_seed(0);
        let enc = crate::gridworld::one_hot(36, 4);
        assert_eq!(select_option(&p, &enc, 0.0, &mut rng).unwrap(), 1);
        let shifted = with_high_output(p, &[11.0, 13.0, 12.0, 10.0, 9.0]);
        assert_eq!(select_option(&shifted, &enc, 0.0, &mut rng).unwrap(), 1);
    }

    #[test]
    fn ties_pick_lowest() {
        assert_eq!(argmax(&[2.0, 5.0, 5.0, 1.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }

    #[test]
    fn greedy_action() {
        let mut p = small_agent(2);
        p.options[3].set_output_constant(&[0.0, 0.0, 5.0, 0.0]).unwrap();
        let mut rng = seeding::rng_from_seed(0);
        let enc = crate::gridworld::one_hot(36, 0);
        assert_eq!(select_action(&p, 3, &enc, 0.0, &mut rng).unwrap(), 2);
        assert!(select_action(&p, 5, &enc, 0.0, &mut rng).is_err());
    }

    fn frequencies(draw: impl FnMut() -> usize, k: usize, n: usize) -> Vec<f64> {
        let mut counts = vec![0usize; k];
        let mut draw = draw;
        for _ in 0..n {
            counts[draw()] += 1;
        }
        counts.into_iter().map(|c| c as f64 / n as f64).collect()
    }

    #[test]
    fn uniform_exploration_frequencies() {
        let p = with_high_output(small_agent(3), &[9.0, 0.0, 0.0, 0.0, 0.0]);
        let enc = crate::gridworld::one_hot(36, 0);
        let mut rng = seeding::rng_from_seed(17);
        let f = frequencies(|| select_option(&p, &enc, 1.0, &mut rng).unwrap(), 5, 10_000);
        for v in &f {
            assert!((v - 0.2).abs() < 0.02, "{f:?}");
        }
        let f = frequencies(|| select_action(&p, 0, &enc, 1.0, &mut rng).unwrap(), 4, 10_000);
        for v in &f {
            assert!((v - 0.25).abs() < 0.02, "{f:?}");
        }
    }

    #[test]
    fn termination_probabilities() {
        let mut p = small_agent(4);
        p.termination.set_output_constant(&[0.0; 5]).unwrap();
        for s in 0..36 {
            let enc = crate::gridworld::one_hot(36, s);
            for o in 0..N_OPTIONS {
                assert_eq!(termination_prob(&p, o, &enc).unwrap(), 0.5);
            }
        }
        p.termination.set_output_constant(&[40.0; 5]).unwrap();
        let enc = crate::gridworld::one_hot(36, 0);
        assert!(termination_prob(&p, 2, &enc).unwrap() > 1.0 - 1e-12);
        let fresh = small_agent(5);
        for s in 0..36 {
            let pr = termination_prob(&fresh, 0, &crate::gridworld::one_hot(36, s)).unwrap();
            assert!(pr > 0.0 && pr < 1.0);
        }
    }

    #[test]
    fn bernoulli_termination() {
        let mut rng = seeding::rng_from_seed(9);
        assert!((0..1000).all(|_| !sample_termination(0.0, &mut rng)));
        assert!((0..1000).all(|_| sample_termination(1.0, &mut rng)));
        let hits = (0..10_000).filter(|_| sample_termination(0.3, &mut rng)).count();
        assert!((hits as f64 / 10_000.0 - 0.3).abs() < 0.015);
    }

    #[test]
    fn clone_isolation() {
        let original = small_agent(6);
        let snapshot = original.clone();
        let mut copy = original.clone();
        let mut g = AgentGrads::zeros_like(&copy);
        g.options[1].values_mut()[0] = 1.0;
        copy.sgd_step(&g, 0.5).unwrap();
        assert_eq!(original, snapshot);
        assert_ne!(copy, original);
    }

    #[test]
    fn hyperparams_validation() {
        HyperParams::tuned().validate().unwrap();
        HyperParams::fixed_scenario().validate().unwrap();
        let bad = HyperParams {
            gamma: 1.0,
            ..HyperParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = HyperParams {
            inner_steps: 0,
            ..HyperParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = HyperParams {
            eps_high: 1.2,
            ..HyperParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = AgentParams::with_hidden(9, &[4, 3], &mut seeding::rng_from_seed(8)).unwrap();
        let text = p.to_checkpoint();
        assert_eq!(AgentParams::from_checkpoint(&text).unwrap(), p);
    }

    #[test]
    fn epsilon_schedule() {
        assert_eq!(EpsilonSchedule::Constant.factor(1000), 1.0);
        let s = EpsilonSchedule::Linear {
            final_fraction: 0.5,
            iterations: 100,
        };
        assert_eq!(s.factor(0), 1.0);
        assert!((s.factor(50) - 0.75).abs() < 1e-12);
        assert_eq!(s.factor(500), 0.5);
    }
}

//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row-major, `out x in`) followed by the bias vector. [`Gradients`] and the
//! Adam moments share that layout, so optimizer updates are plain zips.
//!
//! # Checkpoint format (version 1)
//!
//! ```text
//! mlp v1
//! dims 36 64 32 5
//! output linear
//! params 4613
//! <one f64 per line, flat layout above>
//! ```

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

impl OutputActivation {
    fn name(self) -> &'static str {
        match self {
            OutputActivation::Linear => "linear",
            OutputActivation::Sigmoid => "sigmoid",
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
    output: OutputActivation,
}

/// Activations retained by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    /// Final output after the output activation.
    output: Vec<f64>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Gradient of a scalar with respect to every parameter of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// He-initialized network: weights ~ N(0, 2/fan_in), biases zero.
    pub fn new(dims: &[usize], output: OutputActivation, rng: &mut impl RngCore) -> Result<Self> {
        let mut net = Self::zeros(dims, output)?;
        let mut offset = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::Config(e.to_string()))?;
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = normal.sample(rng);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], output: OutputActivation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least 2 layer widths, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
            output,
        })
    }

    /// Copy with a new input width. Input column `j` of the first layer is
    /// taken from old column `map[j]`, or He-sampled when `map[j]` is `None`.
    /// Every later layer is copied unchanged.
    pub fn remap_inputs(&self, map: &[Option<usize>], rng: &mut impl RngCore) -> Result<Self> {
        let (old_in, out) = (self.dims[0], self.dims[1]);
        if let Some(&bad) = map.iter().flatten().find(|&&j| j >= old_in) {
            return Err(Error::Dimension {
                expected: old_in,
                actual: bad + 1,
            });
        }
        let mut dims = self.dims.clone();
        dims[0] = map.len();
        let mut net = Self::zeros(&dims, self.output)?;
        let normal = Normal::new(0.0, (2.0 / map.len() as f64).sqrt())
            .map_err(|e| Error::Config(e.to_string()))?;
        let new_in = map.len();
        for o in 0..out {
            for (j, src) in map.iter().enumerate() {
                net.params[o * new_in + j] = match src {
                    Some(k) => self.params[o * old_in + k],
                    None => normal.sample(rng),
                };
            }
        }
        let (old_rest, new_rest) = (old_in * out, new_in * out);
        net.params[new_rest..].copy_from_slice(&self.params[old_rest..]);
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// (weight offset, bias offset) of layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let start = param_count(&self.dims[..=l]);
        (start, start + self.dims[l] * self.dims[l + 1])
    }

    /// Zeroes the output layer weights and sets its biases, making the
    /// network output constant (before activation) for every input.
    pub fn set_output_constant(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.output_dim() {
            return Err(Error::Dimension {
                expected: self.output_dim(),
                actual: bias.len(),
            });
        }
        let l = self.n_layers() - 1;
        let (w, b) = self.offsets(l);
        self.params[w..b].fill(0.0);
        self.params[b..b + bias.len()].copy_from_slice(bias);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Cache)> {
        self.check_input(x)?;
        let n = self.n_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut a = x.to_vec();
        for l in 0..n {
            let z = self.affine(l, &a);
            let next = if l + 1 < n {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                self.activate_output(&z)
            };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        let cache = Cache {
            inputs,
            pre,
            output: a.clone(),
        };
        Ok((a, cache))
    }

    /// Forward pass without retaining a cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let n = self.n_layers();
        let mut a = x.to_vec();
        for l in 0..n {
            let z = self.affine(l, &a);
            a = if l + 1 < n {
                z.into_iter().map(|v| v.max(0.0)).collect()
            } else {
                self.activate_output(&z)
            };
        }
        Ok(a)
    }

    fn activate_output(&self, z: &[f64]) -> Vec<f64> {
        match self.output {
            OutputActivation::Linear => z.to_vec(),
            OutputActivation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
        }
    }

    fn affine(&self, l: usize, a: &[f64]) -> Vec<f64> {
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let (w, b) = self.offsets(l);
        let weights = &self.params[w..b];
        let mut z = self.params[b..b + fan_out].to_vec();
        // inputs are mostly one-hot; skip zero columns
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (j, zj) in z.iter_mut().enumerate() {
                *zj += weights[j * fan_in + i] * ai;
            }
        }
        z
    }

    /// Gradients of the scalar whose derivative with respect to the network
    /// output is `grad_out`.
    pub fn backward(&self, cache: &Cache, grad_out: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, grad_out, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Mlp::backward`] but accumulates into `grads`.
    pub fn backward_into(&self, cache: &Cache, grad_out: &[f64], grads: &mut Gradients) -> Result<()> {
        let n = self.n_layers();
        if grad_out.len() != self.output_dim() {
            return Err(Error::Dimension {
                expected: self.output_dim(),
                actual: grad_out.len(),
            });
        }
        if cache.pre.len() != n || cache.inputs[0].len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: n,
                actual: cache.pre.len(),
            });
        }
        if grads.dims != self.dims {
            return Err(Error::Dimension {
                expected: self.n_params(),
                actual: grads.values.len(),
            });
        }
        let mut delta: Vec<f64> = match self.output {
            OutputActivation::Linear => grad_out.to_vec(),
            OutputActivation::Sigmoid => grad_out
                .iter()
                .zip(&cache.output)
                .map(|(g, p)| g * p * (1.0 - p))
                .collect(),
        };
        for l in (0..n).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let (w, b) = self.offsets(l);
            let a = &cache.inputs[l];
            {
                let gw = &mut grads.values[w..b];
                for (j, &dj) in delta.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    let row = &mut gw[j * fan_in..(j + 1) * fan_in];
                    for (g, &ai) in row.iter_mut().zip(a) {
                        *g += dj * ai;
                    }
                }
            }
            for (g, &dj) in grads.values[b..b + fan_out].iter_mut().zip(&delta) {
                *g += dj;
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[w..b];
            let prev_pre = &cache.pre[l - 1];
            let mut next = vec![0.0; fan_in];
            for (j, &dj) in delta.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                let row = &weights[j * fan_in..(j + 1) * fan_in];
                for (acc, &wji) in next.iter_mut().zip(row) {
                    *acc += wji * dj;
                }
            }
            for (d, &z) in next.iter_mut().zip(prev_pre) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = next;
        }
        Ok(())
    }

    fn check_grads(&self, grads: &Gradients) -> Result<()> {
        if grads.dims != self.dims {
            return Err(Error::Dimension {
                expected: self.n_params(),
                actual: grads.values.len(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok(())
    }

    /// Plain gradient descent: `theta -= lr * g`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        self.check_grads(grads)?;
        if !lr.is_finite() {
            return Err(Error::NonFinite("learning rate".into()));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.values) {
            *p -= lr * g;
        }
        Ok(())
    }

    /// One bias-corrected Adam update; increments the state's timestep.
    pub fn adam_step(&mut self, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
        self.check_grads(grads)?;
        if state.m.len() != self.params.len() {
            return Err(Error::Dimension {
                expected: self.params.len(),
                actual: state.m.len(),
            });
        }
        if !lr.is_finite() {
            return Err(Error::NonFinite("learning rate".into()));
        }
        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - state.beta1.powi(t);
        let c2 = 1.0 - state.beta2.powi(t);
        for (((p, g), m), v) in self
            .params
            .iter_mut()
            .zip(&grads.values)
            .zip(state.m.iter_mut())
            .zip(state.v.iter_mut())
        {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = String::with_capacity(self.params.len() * 24 + 64);
        out.push_str("mlp v1\n");
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        out.push_str(&format!("dims {}\n", dims.join(" ")));
        out.push_str(&format!("output {}\n", self.output.name()));
        out.push_str(&format!("params {}\n", self.params.len()));
        for p in &self.params {
            out.push_str(&format!("{p:?}\n"));
        }
        out
    }

    /// Parses one network from `lines`, advancing the iterator past it.
    pub fn read_checkpoint<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<Self> {
        let mut next = |what: &str| -> Result<(usize, &'a str)> {
            lines
                .next()
                .ok_or_else(|| Error::parse("checkpoint", format!("unexpected end, wanted {what}")))
        };
        let (n, header) = next("header")?;
        if header.trim() != "mlp v1" {
            return Err(Error::parse(format!("line {}", n + 1), "expected 'mlp v1'"));
        }
        let (n, dims_line) = next("dims")?;
        let dims: Vec<usize> = dims_line
            .strip_prefix("dims ")
            .ok_or_else(|| Error::parse(format!("line {}", n + 1), "expected dims"))?
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(format!("line {}", n + 1), e.to_string()))?;
        let (n, out_line) = next("output")?;
        let output = match out_line.trim() {
            "output linear" => OutputActivation::Linear,
            "output sigmoid" => OutputActivation::Sigmoid,
            _ => return Err(Error::parse(format!("line {}", n + 1), "bad output activation")),
        };
        let (n, count_line) = next("params")?;
        let count: usize = count_line
            .strip_prefix("params ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| Error::parse(format!("line {}", n + 1), "expected params count"))?;
        let mut net = Self::zeros(&dims, output)?;
        if count != net.n_params() {
            return Err(Error::parse(
                format!("line {}", n + 1),
                format!("params {count} does not match dims ({})", net.n_params()),
            ));
        }
        for p in net.params.iter_mut() {
            let (n, v) = next("parameter")?;
            *p = v
                .trim()
                .parse()
                .map_err(|_| Error::parse(format!("line {}", n + 1), "bad float"))?;
        }
        if !net.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(net)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        Self::read_checkpoint(&mut text.lines().enumerate())
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            dims: net.dims.clone(),
            values: vec![0.0; net.n_params()],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Dimension {
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        Self {
            m: vec![0.0; net.n_params()],
            v: vec![0.0; net.n_params()],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Moments laid out for a network remapped from `old` with `map`; fresh
    /// columns start with zero moments.
    pub fn remap_inputs(&self, old: &Mlp, map: &[Option<usize>]) -> Self {
        let (old_in, out) = (old.dims[0], old.dims[1]);
        let new_in = map.len();
        let remap = |v: &[f64]| {
            let mut w = vec![0.0; new_in * out];
            for o in 0..out {
                for (j, src) in map.iter().enumerate() {
                    if let Some(k) = src {
                        w[o * new_in + j] = v[o * old_in + k];
                    }
                }
            }
            w.extend_from_slice(&v[old_in * out..]);
            w
        };
        Self {
            m: remap(&self.m),
            v: remap(&self.v),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use rand::Rng;

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn parameter_counts() {
        let mut rng = seeding::rng_from_seed(0);
        // weights plus biases per layer
        let a = Mlp::new(&[36, 64, 32, 5], OutputActivation::Linear, &mut rng).unwrap();
        assert_eq!(a.n_params(), (36 * 64 + 64) + (64 * 32 + 32) + (32 * 5 + 5));
        assert_eq!(a.n_params(), 4613);
        let b = Mlp::new(&[36, 64, 32, 4], OutputActivation::Linear, &mut rng).unwrap();
        assert_eq!(b.n_params(), 4580);
        assert!(Mlp::new(&[36], OutputActivation::Linear, &mut rng).is_err());
        assert!(Mlp::new(&[36, 0, 4], OutputActivation::Linear, &mut rng).is_err());
    }

    #[test]
    fn init_statistics() {
        let mut rng = seeding::rng_from_seed(1);
        let net = Mlp::new(&[200, 300, 2], OutputActivation::Linear, &mut rng).unwrap();
        let (w, b) = net.offsets(0);
        let ws = &net.params()[w..b];
        let var = ws.iter().map(|x| x * x).sum::<f64>() / ws.len() as f64;
        assert!((var - 2.0 / 200.0).abs() < 0.1 * 2.0 / 200.0, "{var}");
        assert!(net.params()[b..b + 300].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_network_outputs() {
        let lin = Mlp::zeros(&[3, 4, 2], OutputActivation::Linear).unwrap();
        assert_eq!(lin.predict(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let sig = Mlp::zeros(&[3, 4, 2], OutputActivation::Sigmoid).unwrap();
        assert_eq!(sig.predict(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5, 0.5]);
        assert!(lin.predict(&[1.0]).is_err());
    }

    #[test]
    fn forward_is_pure_and_matches_predict() {
        let mut rng = seeding::rng_from_seed(2);
        let net = Mlp::new(&[6, 8, 4, 3], OutputActivation::Sigmoid, &mut rng).unwrap();
        let x = rand_vec(&mut rng, 6);
        let (a, _) = net.forward(&x).unwrap();
        let (b, _) = net.forward(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, net.predict(&x).unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn backward_linearity() {
        let mut rng = seeding::rng_from_seed(3);
        let net = Mlp::new(&[6, 8, 4, 3], OutputActivation::Linear, &mut rng).unwrap();
        let x = rand_vec(&mut rng, 6);
        let (_, cache) = net.forward(&x).unwrap();
        let zero = net.backward(&cache, &[0.0; 3]).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let up = rand_vec(&mut rng, 3);
        let g1 = net.backward(&cache, &up).unwrap();
        let up2: Vec<f64> = up.iter().map(|v| 2.0 * v).collect();
        let g2 = net.backward(&cache, &up2).unwrap();
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert!(net.backward(&cache, &[0.0; 2]).is_err());
    }

    /// Central-difference oracle for d(upstream . f(x)) / d(theta).
    fn finite_difference(net: &Mlp, x: &[f64], upstream: &[f64], h: f64) -> Vec<f64> {
        let mut probe = net.clone();
        (0..net.n_params())
            .map(|i| {
                let orig = probe.params[i];
                probe.params[i] = orig + h;
                let plus: f64 = probe.predict(x).unwrap().iter().zip(upstream).map(|(a, b)| a * b).sum();
                probe.params[i] = orig - h;
                let minus: f64 = probe.predict(x).unwrap().iter().zip(upstream).map(|(a, b)| a * b).sum();
                probe.params[i] = orig;
                (plus - minus) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_check_small_nets() {
        let mut rng = seeding::rng_from_seed(4);
        for (trial, act) in [OutputActivation::Linear, OutputActivation::Sigmoid]
            .into_iter()
            .cycle()
            .take(10)
            .enumerate()
        {
            let mut net = Mlp::new(&[6, 8, 4, 3], act, &mut rng).unwrap();
            for p in net.params_mut() {
                *p += rng.random_range(-0.1..0.1);
            }
            let x = rand_vec(&mut rng, 6);
            let up = rand_vec(&mut rng, 3);
            let (_, cache) = net.forward(&x).unwrap();
            let g = net.backward(&cache, &up).unwrap();
            let fd = finite_difference(&net, &x, &up, 1e-5);
            for (i, (a, b)) in g.values().iter().zip(&fd).enumerate() {
                let err = (a - b).abs() / a.abs().max(b.abs()).max(1e-7);
                assert!(err < 1e-4, "trial {trial} param {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn sgd_arithmetic() {
        let mut net = Mlp::zeros(&[1, 1], OutputActivation::Linear).unwrap();
        net.params_mut()[0] = 1.0;
        let mut g = Gradients::zeros_like(&net);
        g.values_mut()[0] = 2.0;
        let before = net.clone();
        net.sgd_step(&g, 0.0).unwrap();
        assert_eq!(net, before);
        net.sgd_step(&g, 0.003).unwrap();
        assert!((net.params()[0] - 0.994).abs() < 1e-15);
        let mut neg = g.clone();
        neg.scale(-1.0);
        net.sgd_step(&neg, 0.003).unwrap();
        assert!((net.params()[0] - 1.0).abs() < 1e-15);
        g.values_mut()[0] = f64::NAN;
        assert!(net.sgd_step(&g, 0.1).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut rng = seeding::rng_from_seed(5);
        let mut net = Mlp::new(&[3, 4, 2], OutputActivation::Linear, &mut rng).unwrap();
        let before = net.clone();
        let mut state = AdamState::new(&net);
        net.adam_step(&Gradients::zeros_like(&net), &mut state, 0.1).unwrap();
        assert_eq!(net, before);
        assert_eq!(state.t, 1);
        assert!(state.m.iter().chain(&state.v).all(|&v| v == 0.0));
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        // with constant g, m_hat = g and v_hat = g^2 exactly, so each step is lr * g / (|g| + eps)
        let lr = 8.24e-6;
        let mut net = Mlp::zeros(&[1, 1], OutputActivation::Linear).unwrap();
        let mut state = AdamState::new(&net);
        let mut g = Gradients::zeros_like(&net);
        g.values_mut()[0] = 0.37;
        g.values_mut()[1] = -2.5;
        let expected = [lr * 0.37 / (0.37 + 1e-8), -lr * 2.5 / (2.5 + 1e-8)];
        for _ in 0..200 {
            let before = net.params().to_vec();
            net.adam_step(&g, &mut state, lr).unwrap();
            for i in 0..2 {
                let delta = before[i] - net.params()[i];
                assert!((delta - expected[i]).abs() < 1e-9 * lr.max(1.0), "{delta}");
            }
        }
        assert!(net.is_finite());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = seeding::rng_from_seed(6);
        let net = Mlp::new(&[5, 7, 3], OutputActivation::Sigmoid, &mut rng).unwrap();
        let text = net.to_checkpoint();
        assert!(text.starts_with("mlp v1\ndims 5 7 3\noutput sigmoid\nparams 66\n"));
        assert_eq!(Mlp::from_checkpoint(&text).unwrap(), net);
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(Mlp::from_checkpoint(&truncated).is_err());
    }
}

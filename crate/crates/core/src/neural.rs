//! Minimal dense-network stack: forward pass, exact reverse-mode gradients,
//! Adam, and mini-batch MSE fitting. No autodiff framework; the architecture
//! family is fixed (dense layers, tanh or LeakyReLU hidden activations,
//! linear output), so the gradients are hand-derived.
//!
//! All randomness flows through a caller-supplied ChaCha stream, making every
//! initialization and training run reproducible from a seed.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeding;

const LEAKY_SLOPE: f64 = 0.01;

/// Hidden-layer activation. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    LeakyRelu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }

    /// Derivative evaluated at the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Self::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Self::LeakyRelu => {
                if pre >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::LeakyRelu => "leaky_relu",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "leaky_relu" => Ok(Self::LeakyRelu),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected network. Layer k maps `dims[k] -> dims[k+1]`; weights are
/// stored row-major as `[out * in_dim + in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Seeded uniform fan-in initialization: He-style limits for LeakyReLU,
    /// Xavier-style for tanh. Biases start at zero.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut net = Self::zeros(dims, activation)?;
        for k in 0..net.dims.len() - 1 {
            let fan_in = net.dims[k] as f64;
            let fan_out = net.dims[k + 1] as f64;
            let limit = match activation {
                Activation::Tanh => (6.0 / (fan_in + fan_out)).sqrt(),
                Activation::LeakyRelu => (6.0 / fan_in).sqrt(),
            };
            for w in net.weights[k].iter_mut() {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// All-zero parameters. Useful for delta-form models and tests.
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer dims must have length >= 2 and be positive, got {dims:?}"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..dims.len() - 1 {
            weights.push(vec![0.0; dims[k] * dims[k + 1]]);
            biases.push(vec![0.0; dims[k + 1]]);
        }
        Ok(Self { dims: dims.to_vec(), activation, weights, biases })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layer_weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn layer_biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input length {} does not match input dim {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Deterministic forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut current = input.to_vec();
        let last = self.dims.len() - 2;
        for k in 0..=last {
            let mut next = self.affine(k, &current);
            if k < last {
                for v in next.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            current = next;
        }
        Ok(current)
    }

    /// Forward pass that records every pre-activation for the backward pass.
    pub fn forward_traced(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let last = self.dims.len() - 2;
        let mut pre = Vec::with_capacity(last + 1);
        let mut post = Vec::with_capacity(last + 1);
        let mut current = input.to_vec();
        for k in 0..=last {
            let z = self.affine(k, &current);
            let a = if k < last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a.clone());
            current = a;
        }
        Ok(ForwardTrace { input: input.to_vec(), pre, post })
    }

    fn affine(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let in_dim = self.dims[layer];
        let out_dim = self.dims[layer + 1];
        let w = &self.weights[layer];
        let b = &self.biases[layer];
        let mut out = Vec::with_capacity(out_dim);
        for o in 0..out_dim {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            out.push(acc);
        }
        out
    }

    /// Exact reverse-mode gradients of a scalar loss, given the loss gradient
    /// with respect to the (linear) network output.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<Gradients> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output grad length {} does not match output dim {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grad.to_vec();
        for k in (0..self.dims.len() - 1).rev() {
            let in_dim = self.dims[k];
            let out_dim = self.dims[k + 1];
            let layer_input: &[f64] =
                if k == 0 { &trace.input } else { &trace.post[k - 1] };
            for o in 0..out_dim {
                grads.biases[k][o] += delta[o];
                let row = &mut grads.weights[k][o * in_dim..(o + 1) * in_dim];
                for (g, xi) in row.iter_mut().zip(layer_input) {
                    *g += delta[o] * xi;
                }
            }
            if k > 0 {
                let w = &self.weights[k];
                let mut prev = vec![0.0; in_dim];
                for o in 0..out_dim {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += delta[o] * wi;
                    }
                }
                for (p, &z) in prev.iter_mut().zip(&trace.pre[k - 1]) {
                    *p *= self.activation.derivative(z);
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    pub fn assert_finite(&self) -> Result<()> {
        let all_finite = self
            .weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()));
        if all_finite {
            Ok(())
        } else {
            Err(Error::Numeric("network parameters became non-finite".into()))
        }
    }

    /// Text checkpoint with a shape header; round-trips bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "mlp-v1")?;
        writeln!(file, "activation {}", self.activation.name())?;
        write!(file, "dims")?;
        for d in &self.dims {
            write!(file, " {d}")?;
        }
        writeln!(file)?;
        for k in 0..self.dims.len() - 1 {
            write_floats(&mut file, "weights", &self.weights[k])?;
            write_floats(&mut file, "biases", &self.biases[k])?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let mut next_line = |expect: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(line))) => Ok((i + 1, line)),
                Some((i, Err(e))) => {
                    Err(Error::Parse { line: i + 1, message: e.to_string() })
                }
                None => Err(Error::Parse {
                    line: 0,
                    message: format!("unexpected end of file, expected {expect}"),
                }),
            }
        };

        let (line_no, magic) = next_line("magic")?;
        if magic.trim() != "mlp-v1" {
            return Err(Error::Parse { line: line_no, message: "expected `mlp-v1` header".into() });
        }
        let (line_no, act_line) = next_line("activation")?;
        let activation = act_line
            .strip_prefix("activation ")
            .ok_or_else(|| Error::Parse { line: line_no, message: "expected activation".into() })
            .and_then(Activation::parse)?;
        let (line_no, dims_line) = next_line("dims")?;
        let dims = dims_line
            .strip_prefix("dims")
            .ok_or_else(|| Error::Parse { line: line_no, message: "expected dims".into() })?
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;

        let mut net = Self::zeros(&dims, activation)?;
        for k in 0..dims.len() - 1 {
            let (line_no, w_line) = next_line("weights")?;
            net.weights[k] = parse_floats(&w_line, "weights", line_no, dims[k] * dims[k + 1])?;
            let (line_no, b_line) = next_line("biases")?;
            net.biases[k] = parse_floats(&b_line, "biases", line_no, dims[k + 1])?;
        }
        Ok(net)
    }
}

fn write_floats<W: Write>(file: &mut W, tag: &str, values: &[f64]) -> Result<()> {
    write!(file, "{tag}")?;
    for v in values {
        write!(file, " {v}")?;
    }
    writeln!(file)?;
    Ok(())
}

fn parse_floats(line: &str, tag: &str, line_no: usize, expected: usize) -> Result<Vec<f64>> {
    let rest = line.strip_prefix(tag).ok_or_else(|| Error::Parse {
        line: line_no,
        message: format!("expected `{tag}` line"),
    })?;
    let values = rest
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
    if values.len() != expected {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {expected} values, got {}", values.len()),
        });
    }
    Ok(values)
}

/// Cached activations of one forward pass, consumed by `Mlp::backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().unwrap()
    }
}

/// Parameter gradients mirroring an `Mlp`'s shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in v.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum()
    }

    fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Adam with bias correction. Moment accumulators mirror the parameter shapes.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m_weights: Vec<Vec<f64>>,
    v_weights: Vec<Vec<f64>>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m_weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// One Adam update. Fails fast on non-finite gradients or parameters
    /// instead of clamping silently.
    pub fn apply(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient in Adam update".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);

        for k in 0..net.weights.len() {
            update_slice(
                &mut net.weights[k],
                &grads.weights[k],
                &mut self.m_weights[k],
                &mut self.v_weights[k],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            update_slice(
                &mut net.biases[k],
                &grads.biases[k],
                &mut self.m_biases[k],
                &mut self.v_biases[k],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
        net.assert_finite()
    }
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Mini-batch MSE training settings. Defaults follow the building-model
/// hyperparameters used throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { epochs: 500, batch_size: 256, lr: 0.001, seed: 0 }
    }
}

/// Train `net` on (input, target) pairs with seeded shuffling and Adam.
/// Returns the full-dataset MSE after the final epoch.
pub fn fit_regression(
    net: &mut Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &FitConfig,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "inputs ({}) and targets ({}) differ in length",
            inputs.len(),
            targets.len()
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
    }
    let out_dim = net.output_dim();

    let mut rng = seeding::child_rng(cfg.seed, "fit-regression");
    let mut optimizer = Adam::new(net, cfg.lr);
    let mut order: Vec<usize> = (0..inputs.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(net);
            let scale = 1.0 / (batch.len() * out_dim) as f64;
            for &i in batch {
                let trace = net.forward_traced(&inputs[i])?;
                let grad_out: Vec<f64> = trace
                    .output()
                    .iter()
                    .zip(&targets[i])
                    .map(|(p, t)| 2.0 * (p - t) * scale)
                    .collect();
                grads.add_assign(&net.backward(&trace, &grad_out)?);
            }
            optimizer.apply(net, &grads)?;
        }
    }

    let mut mse = 0.0;
    for (input, target) in inputs.iter().zip(targets) {
        let pred = net.forward(input)?;
        for (p, t) in pred.iter().zip(target) {
            mse += (p - t) * (p - t);
        }
    }
    Ok(mse / (inputs.len() * out_dim) as f64)
}

//! Minimal differentiable-network core.
//!
//! Networks are sequential stacks of a fixed layer set (dense, relu, tanh,
//! sigmoid, reshape) over batch-major `f64` matrices (one row per item).
//! Parameters and gradients live in flat vectors so optimizers, soft
//! updates and checkpoints can treat a network as a single buffer.
//!
//! `forward` caches per-layer activations; `backward` consumes the cache
//! and accumulates parameter gradients additively until an optimizer step
//! clears them. Everything is deterministic given the init seed and
//! inputs.
//!
//! A `Network` is single-writer: forward/backward/step must not run
//! concurrently on one instance, though instances move freely between
//! threads. Parallelism belongs at the trial level.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::derive_stream;

/// One layer of a sequential network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    Tanh,
    Sigmoid,
    /// Reinterprets the feature axis as `rows x cols`. Count-preserving;
    /// identity for data and gradients, kept for shape bookkeeping at
    /// frame boundaries.
    Reshape { rows: usize, cols: usize },
}

impl LayerSpec {
    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Dense {
            in_features,
            out_features,
        }
    }

    fn param_count(&self) -> usize {
        match self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            _ => 0,
        }
    }

    /// Output feature count given the input feature count, or a config
    /// error when the layer cannot accept it.
    fn out_features(&self, in_features: usize) -> Result<usize> {
        match self {
            LayerSpec::Dense {
                in_features: d_in,
                out_features,
            } => {
                if *d_in != in_features {
                    return Err(Error::Config(format!(
                        "dense layer expects {d_in} input features, previous layer provides {in_features}"
                    )));
                }
                Ok(*out_features)
            }
            LayerSpec::Relu | LayerSpec::Tanh | LayerSpec::Sigmoid => Ok(in_features),
            LayerSpec::Reshape { rows, cols } => {
                if rows * cols != in_features {
                    return Err(Error::Config(format!(
                        "reshape to {rows}x{cols} needs {} features, previous layer provides {in_features}",
                        rows * cols
                    )));
                }
                Ok(in_features)
            }
        }
    }
}

/// Optimizer selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer hyperparameters. Weight decay is applied as an additive
/// gradient term before the update rule.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0,1), got {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    /// acts[0] is the input; acts[i+1] is the output of layer i.
    acts: Vec<Mat>,
}

/// A sequential differentiable network with flat parameter storage.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<LayerSpec>,
    /// Per-layer offset into `params` (dense layers only consume space).
    offsets: Vec<usize>,
    params: Vec<f64>,
    grads: Vec<f64>,
    in_features: usize,
    out_features: usize,
    cache: Option<ForwardCache>,
    adam: Option<AdamState>,
}

/// Validates the stack and initializes parameters: dense weights drawn
/// uniformly from `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`,
/// biases zero. Deterministic for a given seed.
pub fn init_network(spec: &[LayerSpec], seed: u64) -> Result<Network> {
    if spec.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    let in_features = match spec[0] {
        LayerSpec::Dense { in_features, .. } => in_features,
        LayerSpec::Reshape { rows, cols } => rows * cols,
        _ => {
            return Err(Error::Config(
                "first layer must declare an input size (dense or reshape)".into(),
            ))
        }
    };

    let mut offsets = Vec::with_capacity(spec.len());
    let mut total = 0usize;
    let mut features = in_features;
    for layer in spec {
        offsets.push(total);
        features = layer.out_features(features)?;
        total += layer.param_count();
    }

    let mut params = vec![0.0; total];
    let mut rng = derive_stream(seed, "nn-init");
    for (layer, &off) in spec.iter().zip(&offsets) {
        if let LayerSpec::Dense {
            in_features: d_in,
            out_features: d_out,
        } = layer
        {
            let bound = (6.0 / (d_in + d_out) as f64).sqrt();
            for w in &mut params[off..off + d_in * d_out] {
                *w = rng.random_range(-bound..=bound);
            }
            // Biases stay zero.
        }
    }

    Ok(Network {
        layers: spec.to_vec(),
        offsets,
        grads: vec![0.0; params.len()],
        params,
        in_features,
        out_features: features,
        cache: None,
        adam: None,
    })
}

impl Network {
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    pub(crate) fn from_parts(layers: Vec<LayerSpec>, params: Vec<f64>) -> Result<Network> {
        let mut net = init_network(&layers, 0)?;
        if net.params.len() != params.len() {
            return Err(Error::Config(format!(
                "parameter vector length {} does not match layer stack ({} expected)",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    /// Runs the stack on a batch-major input and caches activations for a
    /// later `backward`.
    pub fn forward(&mut self, input: &Mat) -> Result<Mat> {
        if input.cols != self.in_features {
            return Err(Error::shape(
                format!("{} features", self.in_features),
                format!("{} features", input.cols),
                "network forward input",
            ));
        }
        if !input.is_finite() {
            return Err(Error::Numerical("network forward: non-finite input".into()));
        }

        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for (idx, layer) in self.layers.iter().enumerate() {
            let x = &acts[idx];
            let y = match layer {
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let off = self.offsets[idx];
                    let (w, b) = dense_slices(&self.params, off, *in_features, *out_features);
                    dense_forward(x, w, b, *in_features, *out_features)
                }
                LayerSpec::Relu => Mat {
                    rows: x.rows,
                    cols: x.cols,
                    data: x.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
                },
                LayerSpec::Tanh => Mat {
                    rows: x.rows,
                    cols: x.cols,
                    data: x.data.iter().map(|v| v.tanh()).collect(),
                },
                LayerSpec::Sigmoid => Mat {
                    rows: x.rows,
                    cols: x.cols,
                    data: x.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
                },
                LayerSpec::Reshape { .. } => x.clone(),
            };
            acts.push(y);
        }
        let out = acts.last().unwrap().clone();
        self.cache = Some(ForwardCache { acts });
        Ok(out)
    }

    /// Backpropagates `output_grad` through the cached forward pass,
    /// accumulating parameter gradients and returning the input gradient.
    pub fn backward(&mut self, output_grad: &Mat) -> Result<Mat> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let out = cache.acts.last().unwrap();
        if output_grad.rows != out.rows || output_grad.cols != out.cols {
            return Err(Error::shape(
                format!("{}x{}", out.rows, out.cols),
                format!("{}x{}", output_grad.rows, output_grad.cols),
                "network backward output_grad",
            ));
        }

        let mut grad = output_grad.clone();
        for idx in (0..self.layers.len()).rev() {
            let x = &cache.acts[idx];
            let y = &cache.acts[idx + 1];
            grad = match self.layers[idx] {
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let off = self.offsets[idx];
                    let w_len = in_features * out_features;
                    let (dw, db) = self.grads[off..off + w_len + out_features]
                        .split_at_mut(w_len);
                    dense_backward_params(x, &grad, dw, db, in_features, out_features);
                    let w = &self.params[off..off + w_len];
                    dense_backward_input(&grad, w, in_features, out_features)
                }
                LayerSpec::Relu => Mat {
                    rows: grad.rows,
                    cols: grad.cols,
                    data: grad
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(&g, &xv)| if xv > 0.0 { g } else { 0.0 })
                        .collect(),
                },
                LayerSpec::Tanh => Mat {
                    rows: grad.rows,
                    cols: grad.cols,
                    data: grad
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(&g, &yv)| g * (1.0 - yv * yv))
                        .collect(),
                },
                LayerSpec::Sigmoid => Mat {
                    rows: grad.rows,
                    cols: grad.cols,
                    data: grad
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(&g, &yv)| g * yv * (1.0 - yv))
                        .collect(),
                },
                LayerSpec::Reshape { .. } => grad,
            };
        }
        Ok(grad)
    }

    /// Applies one optimizer step and clears gradients. On a non-finite
    /// gradient the parameters are left untouched and an error returned.
    pub fn optimizer_step(&mut self, cfg: &OptimizerConfig) -> Result<()> {
        cfg.validate()?;
        if self.grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(
                "optimizer step aborted: non-finite gradient".into(),
            ));
        }
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in self.params.iter_mut().zip(&self.grads) {
                    let eff = g + cfg.weight_decay * *p;
                    *p -= cfg.learning_rate * eff;
                }
            }
            OptimizerKind::Adam => {
                let n = self.params.len();
                let state = self.adam.get_or_insert_with(|| AdamState {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    step: 0,
                });
                state.step += 1;
                let t = state.step as i32;
                let bc1 = 1.0 - cfg.beta1.powi(t);
                let bc2 = 1.0 - cfg.beta2.powi(t);
                for i in 0..n {
                    let eff = self.grads[i] + cfg.weight_decay * self.params[i];
                    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * eff;
                    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * eff * eff;
                    let m_hat = state.m[i] / bc1;
                    let v_hat = state.v[i] / bc2;
                    self.params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                }
            }
        }
        self.grads.fill(0.0);
        Ok(())
    }
}

fn dense_slices<'a>(
    params: &'a [f64],
    off: usize,
    in_features: usize,
    out_features: usize,
) -> (&'a [f64], &'a [f64]) {
    let w_len = in_features * out_features;
    (
        &params[off..off + w_len],
        &params[off + w_len..off + w_len + out_features],
    )
}

/// y = x*W + b with W stored row-major as (in_features, out_features).
fn dense_forward(x: &Mat, w: &[f64], b: &[f64], in_features: usize, out_features: usize) -> Mat {
    let mut y = Mat::zeros(x.rows, out_features);
    for i in 0..x.rows {
        let y_row = &mut y.data[i * out_features..(i + 1) * out_features];
        y_row.copy_from_slice(b);
        let x_row = &x.data[i * in_features..(i + 1) * in_features];
        for (k, &xv) in x_row.iter().enumerate() {
            let w_row = &w[k * out_features..(k + 1) * out_features];
            for (yv, &wv) in y_row.iter_mut().zip(w_row) {
                *yv += xv * wv;
            }
        }
    }
    y
}

/// Accumulates dW += x^T*dy and db += column sums of dy.
fn dense_backward_params(
    x: &Mat,
    dy: &Mat,
    dw: &mut [f64],
    db: &mut [f64],
    in_features: usize,
    out_features: usize,
) {
    for i in 0..x.rows {
        let x_row = &x.data[i * in_features..(i + 1) * in_features];
        let dy_row = &dy.data[i * out_features..(i + 1) * out_features];
        for (k, &xv) in x_row.iter().enumerate() {
            let dw_row = &mut dw[k * out_features..(k + 1) * out_features];
            for (d, &g) in dw_row.iter_mut().zip(dy_row) {
                *d += xv * g;
            }
        }
        for (d, &g) in db.iter_mut().zip(dy_row) {
            *d += g;
        }
    }
}

/// dx = dy * W^T.
fn dense_backward_input(dy: &Mat, w: &[f64], in_features: usize, out_features: usize) -> Mat {
    let mut dx = Mat::zeros(dy.rows, in_features);
    for i in 0..dy.rows {
        let dy_row = &dy.data[i * out_features..(i + 1) * out_features];
        let dx_row = &mut dx.data[i * in_features..(i + 1) * in_features];
        for (k, d) in dx_row.iter_mut().enumerate() {
            let w_row = &w[k * out_features..(k + 1) * out_features];
            *d = dy_row.iter().zip(w_row).map(|(g, wv)| g * wv).sum();
        }
    }
    dx
}

/// A scalar loss over a network output, with its analytic gradient.
/// `grad_check` only uses `value` on the numeric side, so the two paths
/// stay independent.
pub trait LossFn {
    fn value(&self, output: &Mat) -> f64;
    fn grad(&self, output: &Mat) -> Mat;
}

/// Mean squared error against a fixed target, averaged over every entry.
pub struct MseLoss {
    pub target: Mat,
}

impl LossFn for MseLoss {
    fn value(&self, output: &Mat) -> f64 {
        let n = (output.rows * output.cols) as f64;
        output
            .data
            .iter()
            .zip(&self.target.data)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / n
    }

    fn grad(&self, output: &Mat) -> Mat {
        let n = (output.rows * output.cols) as f64;
        Mat {
            rows: output.rows,
            cols: output.cols,
            data: output
                .data
                .iter()
                .zip(&self.target.data)
                .map(|(o, t)| 2.0 * (o - t) / n)
                .collect(),
        }
    }
}

/// Compares analytic parameter gradients against central finite
/// differences of `loss` and returns the maximum relative error, with
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(net: &mut Network, input: &Mat, loss: &dyn LossFn, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Config(format!("grad_check eps must be in (0, 1e-2], got {eps}")));
    }

    net.zero_grads();
    let out = net.forward(input)?;
    let base = loss.value(&out);
    if !base.is_finite() {
        return Err(Error::Numerical("grad_check: non-finite loss".into()));
    }
    net.backward(&loss.grad(&out))?;
    let analytic = net.grads().to_vec();
    net.zero_grads();

    let mut max_rel = 0.0f64;
    for i in 0..analytic.len() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + eps;
        let plus = loss.value(&net.forward(input)?);
        net.params_mut()[i] = orig - eps;
        let minus = loss.value(&net.forward(input)?);
        net.params_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical("grad_check: non-finite loss".into()));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    // Leave the cache in a state consistent with the unperturbed params.
    net.forward(input)?;
    Ok(max_rel)
}

//! Differentiable client objectives over flat parameter vectors.
//!
//! Gradients are computed analytically; the finite-difference checks in the
//! tests are the oracle.

mod dense;
mod quadratic;

use rand::Rng;

pub use dense::Layer;
pub use quadratic::{quadratic_testbed, QuadraticTestbed, CURVATURE_MAX, CURVATURE_MIN};

use crate::data::LabeledDataset;
use crate::param::ParamVec;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Quadratic(QuadraticTestbed),
    /// Softmax regression.
    Logistic {
        input_dim: usize,
        num_classes: usize,
    },
    /// tanh hidden layers, softmax output.
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        num_classes: usize,
    },
}

impl ModelSpec {
    pub fn param_count(&self) -> usize {
        match self {
            ModelSpec::Quadratic(q) => q.dim(),
            _ => self.layers().iter().map(Layer::param_count).sum(),
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, ModelSpec::Quadratic(_))
    }

    /// Dense layers in parameter order; empty for quadratics.
    pub fn layers(&self) -> Vec<Layer> {
        let widths: Vec<usize> = match self {
            ModelSpec::Quadratic(_) => return Vec::new(),
            ModelSpec::Logistic { input_dim, num_classes } => vec![*input_dim, *num_classes],
            ModelSpec::Mlp {
                input_dim,
                hidden,
                num_classes,
            } => std::iter::once(*input_dim)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(*num_classes))
                .collect(),
        };
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    inputs: w[0],
                    outputs: w[1],
                    offset,
                };
                offset += layer.param_count();
                layer
            })
            .collect()
    }
}

/// One client's view of the training data. Quadratic objectives ignore the
/// rows and use `client` to select their curvature.
#[derive(Debug, Clone, Copy)]
pub struct Shard<'a> {
    pub client: usize,
    pub data: Option<&'a LabeledDataset>,
    pub rows: &'a [usize],
}

impl<'a> Shard<'a> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Positions into a shard's row list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch(pub Vec<usize>);

impl Batch {
    pub fn full(shard_len: usize) -> Self {
        Batch((0..shard_len).collect())
    }

    /// Uniform with replacement. An empty shard yields an empty batch and
    /// consumes no randomness.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, shard_len: usize, size: usize) -> Self {
        if shard_len == 0 {
            return Batch::default();
        }
        Batch((0..size).map(|_| rng.random_range(0..shard_len)).collect())
    }

    pub fn positions(&self) -> &[usize] {
        &self.0
    }
}

/// Shared starting point `x0` for all clients. Weights are Glorot-uniform,
/// biases and quadratic parameters zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVec {
    let mut x = ParamVec::zeros(spec.param_count());
    let mut rng = stream_rng(seed, &[stream::INIT]);
    for layer in spec.layers() {
        let a = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for v in &mut x[layer.weight_range()] {
            *v = rng.random_range(-a..a);
        }
    }
    x
}

/// Batch-mean loss and its exact gradient.
pub fn loss_and_grad(spec: &ModelSpec, x: &ParamVec, shard: &Shard<'_>, batch: &Batch) -> (f64, ParamVec) {
    match spec {
        ModelSpec::Quadratic(q) => q.loss_and_grad(shard.client, x),
        _ => {
            let data = shard.data.expect("classifier objectives need a dataset");
            dense::loss_and_grad(&spec.layers(), x, data, shard.rows, batch.positions())
        }
    }
}

/// `f(x) = (1/m) sum_i f_i(x)` with each `f_i` over its full shard.
pub fn full_objective(spec: &ModelSpec, x: &ParamVec, shards: &[Shard<'_>]) -> (f64, ParamVec) {
    assert!(!shards.is_empty(), "full objective over zero clients");
    let mut loss = 0.0;
    let mut grad = ParamVec::zeros(x.len());
    for shard in shards {
        let (l, g) = loss_and_grad(spec, x, shard, &Batch::full(shard.len()));
        loss += l;
        grad.axpy(1.0, &g);
    }
    let inv = 1.0 / shards.len() as f64;
    grad.scale(inv);
    (loss * inv, grad)
}

/// Class scores for one input.
pub fn logits(spec: &ModelSpec, x: &ParamVec, features: &[f64]) -> Vec<f64> {
    dense::forward(&spec.layers(), x, features).pop().unwrap_or_default()
}

/// Mean cross-entropy and top-1 accuracy over a whole dataset. Ties in the
/// argmax go to the lowest class index.
pub fn evaluate(spec: &ModelSpec, x: &ParamVec, data: &LabeledDataset) -> (f64, f64) {
    let layers = spec.layers();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for r in 0..data.len() {
        let out = dense::forward(&layers, x, data.row(r))
            .pop()
            .expect("at least one layer");
        let label = data.label(r);
        loss += dense::log_sum_exp(&out) - out[label];
        if argmax(&out) == label {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    (loss / n, correct as f64 / n)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate().skip(1) {
        if s > v[best] {
            best = i;
        }
    }
    best
}

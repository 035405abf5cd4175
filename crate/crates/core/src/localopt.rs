//! Client-side training: K steps of SGD, SAM or heavy-ball momentum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{loss_and_grad, Batch, ModelSpec, Shard};
use crate::param::ParamVec;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalMethod {
    #[default]
    Sgd,
    Sam,
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Picked by the algorithm kind, never read from config files.
    #[serde(skip)]
    pub method: LocalMethod,
    pub eta0: f64,
    pub decay: f64,
    /// SAM perturbation radius.
    pub lambda: f64,
    /// Heavy-ball coefficient.
    pub mu: f64,
    /// Gradients at or below this norm skip the SAM perturbation.
    pub grad_floor: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: LocalMethod::Sgd,
            eta0: 0.1,
            decay: 0.998,
            lambda: 0.1,
            mu: 0.9,
            grad_floor: 1e-12,
            batch_size: 32,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("optimizer.{key}"), msg))
            }
        };
        check(self.eta0 > 0.0 && self.eta0.is_finite(), "eta0", "must be positive")?;
        check(self.decay > 0.0 && self.decay <= 1.0, "decay", "must be in (0, 1]")?;
        check(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            "lambda",
            "must be non-negative",
        )?;
        check((0.0..1.0).contains(&self.mu), "mu", "must be in [0, 1)")?;
        check(self.grad_floor >= 0.0, "grad_floor", "must be non-negative")?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")
    }
}

/// `eta0 * decay^t`, held constant over the K steps of round `t`.
pub fn lr_at_round(cfg: &OptimizerConfig, round: usize) -> f64 {
    cfg.eta0 * cfg.decay.powf(round as f64)
}

/// Per-round optimizer state. The momentum buffer starts at zero every round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptState {
    pub momentum: Option<ParamVec>,
}

impl OptState {
    pub fn fresh(method: LocalMethod, p: usize) -> Self {
        OptState {
            momentum: (method == LocalMethod::SgdMomentum).then(|| ParamVec::zeros(p)),
        }
    }
}

fn finite(v: ParamVec, client: usize) -> Result<ParamVec> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { client })
    }
}

fn gradient(spec: &ModelSpec, x: &ParamVec, shard: &Shard<'_>, batch: &Batch) -> Result<ParamVec> {
    let (loss, grad) = loss_and_grad(spec, x, shard, batch);
    if loss.is_finite() {
        finite(grad, shard.client)
    } else {
        Err(Error::NonFinite { client: shard.client })
    }
}

pub fn sgd_step(spec: &ModelSpec, x: &ParamVec, shard: &Shard<'_>, batch: &Batch, eta: f64) -> Result<ParamVec> {
    let g = gradient(spec, x, shard, batch)?;
    let mut next = x.clone();
    next.axpy(-eta, &g);
    finite(next, shard.client)
}

/// Gradient at `x + lambda * g / |g|` on the same minibatch, applied at `x`.
/// With `lambda == 0` only one gradient is evaluated.
pub fn sam_step(
    spec: &ModelSpec,
    x: &ParamVec,
    shard: &Shard<'_>,
    batch: &Batch,
    eta: f64,
    lambda: f64,
    grad_floor: f64,
) -> Result<ParamVec> {
    let g1 = gradient(spec, x, shard, batch)?;
    let norm = g1.norm();
    let g = if lambda == 0.0 || norm <= grad_floor {
        g1
    } else {
        let mut perturbed = x.clone();
        perturbed.axpy(lambda / norm, &g1);
        gradient(spec, &perturbed, shard, batch)?
    };
    let mut next = x.clone();
    next.axpy(-eta, &g);
    finite(next, shard.client)
}

/// `v <- mu v + g; x <- x - eta v`.
pub fn momentum_step(
    spec: &ModelSpec,
    x: &ParamVec,
    state: &mut OptState,
    shard: &Shard<'_>,
    batch: &Batch,
    eta: f64,
    mu: f64,
) -> Result<ParamVec> {
    let g = gradient(spec, x, shard, batch)?;
    let v = state.momentum.get_or_insert_with(|| ParamVec::zeros(x.len()));
    v.scale(mu);
    v.axpy(1.0, &g);
    let mut next = x.clone();
    next.axpy(-eta, v);
    finite(next, shard.client)
}

/// Optional observation of a local phase.
#[derive(Debug, Clone, Default)]
pub struct LocalProbe {
    /// When set, accumulates `sum_{k<K} |x_k - anchor|^2`.
    pub anchor: Option<ParamVec>,
    pub drift_sq: f64,
    /// Shard position to watch for in minibatches.
    pub watch: Option<usize>,
    /// First step whose minibatch contained `watch`.
    pub first_hit: Option<usize>,
}

/// Runs `steps` local iterations from `x0` and returns the final iterate.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    spec: &ModelSpec,
    x0: &ParamVec,
    shard: &Shard<'_>,
    steps: usize,
    cfg: &OptimizerConfig,
    eta: f64,
    state: &mut OptState,
    rng: &mut StreamRng,
) -> Result<ParamVec> {
    local_train_probed(spec, x0, shard, steps, cfg, eta, state, rng, None)
}

#[allow(clippy::too_many_arguments)]
pub fn local_train_probed(
    spec: &ModelSpec,
    x0: &ParamVec,
    shard: &Shard<'_>,
    steps: usize,
    cfg: &OptimizerConfig,
    eta: f64,
    state: &mut OptState,
    rng: &mut StreamRng,
    mut probe: Option<&mut LocalProbe>,
) -> Result<ParamVec> {
    assert!(steps >= 1, "at least one local step");
    let mut x = x0.clone();
    for k in 0..steps {
        let batch = Batch::sample(rng, shard.len(), cfg.batch_size);
        if let Some(p) = probe.as_deref_mut() {
            if let Some(anchor) = &p.anchor {
                p.drift_sq += x.dist_sq(anchor);
            }
            if p.first_hit.is_none() && p.watch.is_some_and(|w| batch.positions().contains(&w)) {
                p.first_hit = Some(k);
            }
        }
        x = match cfg.method {
            LocalMethod::Sgd => sgd_step(spec, &x, shard, &batch, eta)?,
            LocalMethod::Sam => sam_step(spec, &x, shard, &batch, eta, cfg.lambda, cfg.grad_floor)?,
            LocalMethod::SgdMomentum => momentum_step(spec, &x, state, shard, &batch, eta, cfg.mu)?,
        };
    }
    Ok(x)
}

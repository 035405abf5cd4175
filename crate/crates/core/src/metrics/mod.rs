//! Per-round diagnostics and cross-run analyses.

mod stability;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use stability::{stability_probe, write_stability_csv, StabilityRow, StabilityTrace};

use crate::data::LabeledDataset;
use crate::engine::{evaluate_model, RoundStats, Simulation};
use crate::error::{Error, Result};
use crate::localopt::lr_at_round;
use crate::model::{self, full_objective, ModelSpec};
use crate::param::ParamVec;

/// One evaluated round. `t` counts completed rounds; `t = 0` is the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub train_loss: f64,
    /// Absent for objectives without a held-out set.
    pub test_acc: Option<f64>,
    /// `|grad f(x_bar)|^2` over the full training objective.
    pub grad_norm_sq: f64,
    pub consensus: f64,
    pub delta_t: f64,
    /// Only recorded in diagnostic mode.
    pub v1: Option<f64>,
    pub v2: Option<f64>,
    pub lr: f64,
}

pub const CSV_HEADER: &str = "t,train_loss,test_acc,grad_norm_sq,consensus,delta_t,v1,v2,lr";

/// `(1/m) sum_i |x_i - x_bar|^2`; exactly 0 when all clients agree.
pub fn consensus_distance(models: &[ParamVec]) -> f64 {
    assert!(!models.is_empty(), "no clients");
    if models.iter().all(|x| x == &models[0]) {
        return 0.0;
    }
    let mean = ParamVec::mean(models);
    models.iter().map(|x| x.dist_sq(&mean)).sum::<f64>() / models.len() as f64
}

/// `Delta = (1/m) sum_i |z_i - x_i|^2` between each client's pre-mix local
/// output and its post-mix model.
pub fn consistency_delta(locals: &[ParamVec], mixed: &[ParamVec]) -> f64 {
    assert_eq!(locals.len(), mixed.len());
    locals.iter().zip(mixed).map(|(z, x)| z.dist_sq(x)).sum::<f64>() / locals.len() as f64
}

/// `V1 = (1/m) sum_i sum_{k<K} |x_{i,k} - x_i|^2` from per-client drift sums,
/// and `V2 = |x_bar_next - x_bar|^2`.
pub fn update_energies(drift_sums: &[f64], mean_before: &ParamVec, mean_after: &ParamVec) -> (f64, f64) {
    let v1 = drift_sums.iter().sum::<f64>() / drift_sums.len() as f64;
    (v1, mean_after.dist_sq(mean_before))
}

/// Mean cross-entropy and top-1 accuracy of `x` on `test`.
pub fn eval_model(spec: &ModelSpec, x: &ParamVec, test: &LabeledDataset) -> (f64, f64) {
    model::evaluate(spec, x, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetHit {
    pub target: f64,
    /// First round reaching the target; `None` if never reached.
    pub round: Option<usize>,
}

pub fn rounds_to_target(series: &[RoundRecord], targets: &[f64]) -> Vec<TargetHit> {
    targets
        .iter()
        .map(|&target| TargetHit {
            target,
            round: series
                .iter()
                .find(|r| r.test_acc.is_some_and(|a| a >= target))
                .map(|r| r.t),
        })
        .collect()
}

/// Snapshot metrics for the averaged model of `sim`.
pub fn evaluate_state(sim: &Simulation<'_>, stats: Option<&RoundStats>) -> RoundRecord {
    let env = sim.environment();
    let models = sim.mixed_models();
    let x_bar = ParamVec::mean(&models);
    let shards = env.shards(models.len());
    let (train_loss, grad) = full_objective(&env.model, &x_bar, &shards);
    RoundRecord {
        t: sim.round(),
        train_loss,
        test_acc: evaluate_model(env, &x_bar).map(|(_, acc)| acc),
        grad_norm_sq: grad.norm_sq(),
        consensus: consensus_distance(&models),
        delta_t: stats.map_or(0.0, |s| s.delta),
        v1: stats.and_then(|s| s.v1),
        v2: stats.and_then(|s| s.v2),
        lr: stats.map_or_else(|| lr_at_round(&sim.config().optimizer, 0), |s| s.lr),
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io("writing csv", source),
        other => Error::io("writing csv", std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes the metrics table; absent values become empty fields.
pub fn write_metrics_csv<W: Write>(records: &[RoundRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_io)?;
    }
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(',')).map_err(csv_io)?;
    }
    w.flush().map_err(|e| Error::io("writing csv", e))
}

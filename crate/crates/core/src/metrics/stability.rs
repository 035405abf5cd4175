//! Coupled twin runs whose training sets differ in exactly one sample.
//!
//! Both runs share every seed, so minibatch draws coincide and the parameter
//! trajectories agree bit for bit until the swapped sample is first drawn.

use std::io::Write;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::engine::{evaluate_model, Environment, Simulation};
use crate::error::{Error, Result};
use crate::param::ParamVec;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub t: usize,
    /// This round contains the first draw of the swapped sample.
    pub first_draw: bool,
    /// `(1/m) sum_i |x_i - x'_i|`.
    pub mean_param_distance: f64,
    /// Absolute held-out loss difference of the averaged models.
    pub heldout_loss_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityTrace {
    pub client: usize,
    pub position: usize,
    /// `(round, local step)` of the first draw.
    pub first_draw: Option<(usize, usize)>,
    pub rows: Vec<StabilityRow>,
}

pub fn stability_probe(
    cfg: &ExperimentConfig,
    client: usize,
    position: usize,
    replacement: (&[f64], usize),
    workers: Option<usize>,
) -> Result<StabilityTrace> {
    cfg.validate()?;
    let base = Environment::build(cfg)?;
    let twin = base.with_swapped_sample(client, position, replacement.0, replacement.1)?;
    let mut a = Simulation::new(cfg, &base, workers)?;
    let mut b = Simulation::new(cfg, &twin, workers)?;
    a.watch_sample(client, position);

    let mut rows = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        a.run_round()?;
        b.run_round()?;
        let xa = a.mixed_models();
        let xb = b.mixed_models();
        let distance = xa.iter().zip(&xb).map(|(u, v)| u.dist_sq(v).sqrt()).sum::<f64>() / xa.len() as f64;
        let gap = evaluate_model(&base, &ParamVec::mean(&xa))
            .zip(evaluate_model(&base, &ParamVec::mean(&xb)))
            .map(|((la, _), (lb, _))| (la - lb).abs());
        rows.push(StabilityRow {
            t: a.round(),
            first_draw: a.first_draw().is_some_and(|(r, _)| r == a.round()),
            mean_param_distance: distance,
            heldout_loss_gap: gap,
        });
    }
    Ok(StabilityTrace {
        client,
        position,
        first_draw: a.first_draw(),
        rows,
    })
}

pub fn write_stability_csv<W: Write>(trace: &StabilityTrace, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["t", "first_draw", "mean_param_distance", "heldout_loss_gap"])
        .map_err(|e| Error::io("writing stability csv", std::io::Error::other(e.to_string())))?;
    for r in &trace.rows {
        w.write_record([
            r.t.to_string(),
            u8::from(r.first_draw).to_string(),
            r.mean_param_distance.to_string(),
            r.heldout_loss_gap.map(|g| g.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| Error::io("writing stability csv", std::io::Error::other(e.to_string())))?;
    }
    w.flush().map_err(|e| Error::io("writing stability csv", e))
}

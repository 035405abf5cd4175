//! Round orchestration for Ole-initialized decentralized training and the
//! decentralized and centralized baselines.
//!
//! One decentralized round, for every client `i` in parallel:
//!
//! 1. `x_{i,0} = x_i + beta (x_i - z_i)` where `z_i` is the client's previous
//!    local output,
//! 2. `K` local optimizer steps give the new `z_i`,
//! 3. gossip: `x_i <- sum_j w_ij z_j`.
//!
//! Centralized kinds sample a fraction of clients, train them from the global
//! model and replace it by the plain average of their outputs.

use std::time::Instant;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelKind};
use crate::data::{self, LabeledDataset, PartitionPlan, SyntheticSpec};
use crate::error::{Error, Result};
use crate::localopt::{local_train_probed, lr_at_round, LocalProbe, OptState};
use crate::metrics::{self, RoundRecord, TargetHit};
use crate::model::{self, init_params, quadratic_testbed, ModelSpec, Shard};
use crate::param::ParamVec;
use crate::rng::{client_rng, stream, stream_rng};
use crate::topology::{build_mixing, MixingMatrix, TopologySpec};

/// Everything a run needs besides its mutable client state: the objective,
/// the datasets and how they are split.
#[derive(Debug, Clone)]
pub struct Environment {
    pub model: ModelSpec,
    pub train: Option<LabeledDataset>,
    pub test: Option<LabeledDataset>,
    /// Absent for quadratic objectives.
    pub plan: Option<PartitionPlan>,
    pub x0: ParamVec,
}

impl Environment {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let m = cfg.clients;
        if cfg.model.kind == ModelKind::Quadratic {
            let q = quadratic_testbed(
                m,
                cfg.model.dim,
                cfg.model.heterogeneity,
                cfg.model.shared_curvature,
                cfg.seed,
            );
            let model = ModelSpec::Quadratic(q);
            let x0 = init_params(&model, cfg.seed);
            return Ok(Environment {
                model,
                train: None,
                test: None,
                plan: None,
                x0,
            });
        }

        let (train, test) = match &cfg.data.train_csv {
            Some(path) => {
                let train = data::load_csv(path)?;
                let test = cfg.data.test_csv.as_ref().map(data::load_csv).transpose()?;
                (train, test)
            }
            None => {
                let spec = SyntheticSpec {
                    classes: cfg.data.classes,
                    dim: cfg.data.dim,
                    per_class: cfg.data.per_class,
                    cluster_spread: cfg.data.cluster_spread,
                };
                let (train, test) = data::generate_synthetic_with_test(&spec, cfg.data.test_per_class, cfg.seed)?;
                (train, Some(test))
            }
        };
        let num_classes = test
            .as_ref()
            .map_or(train.num_classes(), |t| t.num_classes().max(train.num_classes()));
        let model = match cfg.model.kind {
            ModelKind::Logistic => ModelSpec::Logistic {
                input_dim: train.dim(),
                num_classes,
            },
            _ => ModelSpec::Mlp {
                input_dim: train.dim(),
                hidden: cfg.model.hidden.clone(),
                num_classes,
            },
        };
        let plan = data::partition(&train, m, cfg.partition, cfg.seed)?;
        let x0 = init_params(&model, cfg.seed);
        Ok(Environment {
            model,
            train: Some(train),
            test,
            plan: Some(plan),
            x0,
        })
    }

    pub fn clients(&self) -> Option<usize> {
        self.plan.as_ref().map(PartitionPlan::clients)
    }

    pub fn shard(&self, client: usize) -> Shard<'_> {
        Shard {
            client,
            data: self.train.as_ref(),
            rows: self.plan.as_ref().map_or(&[], |p| p.shard(client)),
        }
    }

    pub fn shards(&self, m: usize) -> Vec<Shard<'_>> {
        (0..m).map(|i| self.shard(i)).collect()
    }

    /// A copy whose training set differs only at position `position` of
    /// client `client`'s shard.
    pub fn with_swapped_sample(&self, client: usize, position: usize, features: &[f64], label: usize) -> Result<Self> {
        let plan = self
            .plan
            .as_ref()
            .ok_or_else(|| Error::invalid("swap", "objective has no training samples"))?;
        if client >= plan.clients() {
            return Err(Error::invalid("swap", format!("client {client} out of range")));
        }
        let row = *plan.shard(client).get(position).ok_or_else(|| {
            Error::invalid(
                "swap",
                format!(
                    "sample {position} out of range for client {client} ({} samples)",
                    plan.shard(client).len()
                ),
            )
        })?;
        let mut out = self.clone();
        out.train
            .as_mut()
            .expect("plan implies a training set")
            .replace_row(row, features, label)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    /// Model after the last gossip step.
    pub x_mixed: ParamVec,
    /// Local output of the previous round.
    pub z_prev: ParamVec,
    pub opt_state: OptState,
}

/// `x + beta (x - z)`.
pub fn ole_init(x_mixed: &ParamVec, z_prev: &ParamVec, beta: f64) -> Result<ParamVec> {
    if x_mixed.len() != z_prev.len() {
        return Err(Error::invalid(
            "z_prev",
            format!("length {} does not match {}", z_prev.len(), x_mixed.len()),
        ));
    }
    if beta == 0.0 {
        return Ok(x_mixed.clone());
    }
    Ok(x_mixed
        .iter()
        .zip(z_prev.iter())
        .map(|(x, z)| x + beta * (x - z))
        .collect::<Vec<_>>()
        .into())
}

/// `x_i = sum_j w_ij z_j`, accumulated in ascending `j`.
pub fn gossip_mix(locals: &[ParamVec], w: &MixingMatrix) -> Vec<ParamVec> {
    assert_eq!(locals.len(), w.m(), "one local model per client");
    (0..w.m())
        .map(|i| {
            let mut acc = ParamVec::zeros(locals[i].len());
            for (j, z) in locals.iter().enumerate() {
                acc.axpy(w.get(i, j), z);
            }
            acc
        })
        .collect()
}

/// Per-round quantities produced by the engine itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    /// Rounds completed, starting at 1.
    pub round: usize,
    pub lr: f64,
    pub delta: f64,
    pub v1: Option<f64>,
    pub v2: Option<f64>,
}

/// Snapshot of one round's intermediate vectors.
#[derive(Debug, Clone)]
pub struct RoundInternals {
    /// Mixing matrix used this round; `None` for centralized kinds.
    pub mixing: Option<MixingMatrix>,
    /// Clients that trained this round, ascending.
    pub participants: Vec<usize>,
    /// Local starting points (Ole-initialized for decentralized kinds).
    pub starts: Vec<ParamVec>,
    /// Local outputs `z_i`.
    pub locals: Vec<ParamVec>,
    /// Models after mixing or aggregation, one per client.
    pub mixed: Vec<ParamVec>,
}

struct ClientOutcome {
    start: ParamVec,
    z: ParamVec,
    opt_state: OptState,
    drift_sq: f64,
    first_hit: Option<usize>,
}

pub struct Simulation<'e> {
    cfg: ExperimentConfig,
    env: &'e Environment,
    topology: Option<TopologySpec>,
    static_mixing: Option<MixingMatrix>,
    clients: Vec<ClientState>,
    round: usize,
    pool: rayon::ThreadPool,
    capture: bool,
    watch: Option<(usize, usize)>,
    first_draw: Option<(usize, usize)>,
}

impl<'e> Simulation<'e> {
    /// `workers = None` lets rayon pick the thread count.
    pub fn new(cfg: &ExperimentConfig, env: &'e Environment, workers: Option<usize>) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.clients;
        if let Some(n) = env.clients() {
            if n != m {
                return Err(Error::config(
                    "clients",
                    format!("environment has {n} shards, config asks for {m}"),
                ));
            }
        }
        let topology = (!cfg.algorithm.is_central() && m >= 2).then(|| cfg.topology_spec());
        let static_mixing = match topology {
            Some(spec) if !spec.kind.is_time_varying() => Some(build_mixing(&spec)?),
            Some(_) => None,
            None if !cfg.algorithm.is_central() => Some(MixingMatrix::single()),
            None => None,
        };

        let clients = (0..m)
            .map(|i| {
                let mut x = env.x0.clone();
                if cfg.init_jitter > 0.0 && !cfg.algorithm.is_central() {
                    let mut rng = stream_rng(cfg.seed, &[stream::JITTER, i as u64]);
                    for v in x.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += cfg.init_jitter * z;
                    }
                }
                ClientState {
                    z_prev: x.clone(),
                    x_mixed: x,
                    opt_state: OptState::default(),
                }
            })
            .collect();

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.unwrap_or(0))
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?;
        Ok(Simulation {
            cfg: cfg.clone(),
            env,
            topology,
            static_mixing,
            clients,
            round: 0,
            pool,
            capture: false,
            watch: None,
            first_draw: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn environment(&self) -> &Environment {
        self.env
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Keep intermediate vectors in each [`RoundOutput`].
    pub fn set_capture(&mut self, on: bool) {
        self.capture = on;
    }

    /// Track the first minibatch containing position `position` of client
    /// `client`'s shard.
    pub fn watch_sample(&mut self, client: usize, position: usize) {
        self.watch = Some((client, position));
    }

    /// `(round, step)` of the first draw of the watched sample, if any.
    pub fn first_draw(&self) -> Option<(usize, usize)> {
        self.first_draw
    }

    pub fn mixed_models(&self) -> Vec<ParamVec> {
        self.clients.iter().map(|c| c.x_mixed.clone()).collect()
    }

    pub fn average_model(&self) -> ParamVec {
        ParamVec::mean(&self.mixed_models())
    }

    /// Gossip matrix for round index `t` (0-based).
    pub fn mixing_for_round(&self, t: usize) -> Result<Option<MixingMatrix>> {
        if let Some(w) = &self.static_mixing {
            return Ok(Some(w.clone()));
        }
        self.topology.map(|spec| build_mixing(&spec.for_round(t))).transpose()
    }

    fn train_clients(
        &self,
        ids: &[usize],
        starts: Vec<ParamVec>,
        anchors: &[&ParamVec],
        eta: f64,
    ) -> Result<Vec<ClientOutcome>> {
        let t = self.round;
        let steps = self.cfg.effective_local_steps();
        let opt = self.cfg.effective_optimizer();
        let p = self.env.x0.len();
        let diagnostics = self.cfg.diagnostics;
        let results: Vec<Result<ClientOutcome>> = self.pool.install(|| {
            ids.par_iter()
                .zip(starts.into_par_iter())
                .zip(anchors.par_iter())
                .map(|((&i, start), anchor)| {
                    let mut probe = LocalProbe {
                        anchor: diagnostics.then(|| (*anchor).clone()),
                        watch: self.watch.filter(|w| w.0 == i).map(|w| w.1),
                        ..Default::default()
                    };
                    let mut state = OptState::fresh(opt.method, p);
                    let mut rng = client_rng(self.cfg.seed, i, t);
                    let z = local_train_probed(
                        &self.env.model,
                        &start,
                        &self.env.shard(i),
                        steps,
                        &opt,
                        eta,
                        &mut state,
                        &mut rng,
                        Some(&mut probe),
                    )
                    .map_err(|e| match e {
                        Error::NonFinite { client } => Error::Divergence { round: t + 1, client },
                        other => other,
                    })?;
                    Ok(ClientOutcome {
                        start,
                        z,
                        opt_state: state,
                        drift_sq: probe.drift_sq,
                        first_hit: probe.first_hit,
                    })
                })
                .collect()
        });
        results.into_iter().collect()
    }

    fn note_first_draw(&mut self, ids: &[usize], outcomes: &[ClientOutcome]) {
        if self.first_draw.is_some() {
            return;
        }
        if let Some((client, _)) = self.watch {
            if let Some(pos) = ids.iter().position(|&i| i == client) {
                if let Some(step) = outcomes[pos].first_hit {
                    self.first_draw = Some((self.round + 1, step));
                }
            }
        }
    }

    /// Executes one communication round.
    pub fn run_round(&mut self) -> Result<(RoundStats, Option<RoundInternals>)> {
        if self.cfg.algorithm.is_central() {
            self.central_round()
        } else {
            self.decentralized_round()
        }
    }

    fn decentralized_round(&mut self) -> Result<(RoundStats, Option<RoundInternals>)> {
        let t = self.round;
        let m = self.clients.len();
        let eta = lr_at_round(&self.cfg.optimizer, t);
        let beta = self.cfg.effective_beta();
        let w = self.mixing_for_round(t)?.expect("decentralized kinds always mix");

        let ids: Vec<usize> = (0..m).collect();
        let starts = self
            .clients
            .iter()
            .map(|c| ole_init(&c.x_mixed, &c.z_prev, beta))
            .collect::<Result<Vec<_>>>()?;
        let anchors: Vec<&ParamVec> = self.clients.iter().map(|c| &c.x_mixed).collect();
        let outcomes = self.train_clients(&ids, starts, &anchors, eta)?;
        self.note_first_draw(&ids, &outcomes);

        let locals: Vec<ParamVec> = outcomes.iter().map(|o| o.z.clone()).collect();
        let mixed = gossip_mix(&locals, &w);
        if let Some(client) = mixed.iter().position(|x| !x.is_finite()) {
            return Err(Error::Divergence { round: t + 1, client });
        }

        let delta = metrics::consistency_delta(&locals, &mixed);
        let (v1, v2) = if self.cfg.diagnostics {
            let drift: Vec<f64> = outcomes.iter().map(|o| o.drift_sq).collect();
            let (v1, v2) = metrics::update_energies(&drift, &self.average_model(), &ParamVec::mean(&mixed));
            (Some(v1), Some(v2))
        } else {
            (None, None)
        };

        let internals = self.capture.then(|| RoundInternals {
            mixing: Some(w),
            participants: ids,
            starts: outcomes.iter().map(|o| o.start.clone()).collect(),
            locals: locals.clone(),
            mixed: mixed.clone(),
        });
        for ((client, outcome), x) in self.clients.iter_mut().zip(outcomes).zip(mixed) {
            client.x_mixed = x;
            client.z_prev = outcome.z;
            client.opt_state = outcome.opt_state;
        }
        self.round += 1;
        Ok((
            RoundStats {
                round: self.round,
                lr: eta,
                delta,
                v1,
                v2,
            },
            internals,
        ))
    }

    fn central_round(&mut self) -> Result<(RoundStats, Option<RoundInternals>)> {
        let t = self.round;
        let m = self.clients.len();
        let eta = lr_at_round(&self.cfg.optimizer, t);
        let mut coordinator = stream_rng(self.cfg.seed, &[stream::COORDINATOR, t as u64]);
        let mut ids = index::sample(&mut coordinator, m, self.cfg.participants_per_round()).into_vec();
        ids.sort_unstable();

        let global = self.clients[0].x_mixed.clone();
        let starts = vec![global.clone(); ids.len()];
        let anchors = vec![&global; ids.len()];
        let outcomes = self.train_clients(&ids, starts, &anchors, eta)?;
        self.note_first_draw(&ids, &outcomes);

        let locals: Vec<ParamVec> = outcomes.iter().map(|o| o.z.clone()).collect();
        let next = ParamVec::mean(&locals);
        if !next.is_finite() {
            return Err(Error::Divergence {
                round: t + 1,
                client: ids[0],
            });
        }
        let delta = locals.iter().map(|z| z.dist_sq(&next)).sum::<f64>() / locals.len() as f64;
        let (v1, v2) = if self.cfg.diagnostics {
            let drift: Vec<f64> = outcomes.iter().map(|o| o.drift_sq).collect();
            let (v1, v2) = metrics::update_energies(&drift, &global, &next);
            (Some(v1), Some(v2))
        } else {
            (None, None)
        };

        let internals = self.capture.then(|| RoundInternals {
            mixing: None,
            participants: ids.clone(),
            starts: outcomes.iter().map(|o| o.start.clone()).collect(),
            locals: locals.clone(),
            mixed: vec![next.clone(); m],
        });
        for (&i, outcome) in ids.iter().zip(outcomes) {
            self.clients[i].z_prev = outcome.z;
            self.clients[i].opt_state = outcome.opt_state;
        }
        for client in &mut self.clients {
            client.x_mixed = next.clone();
        }
        self.round += 1;
        Ok((
            RoundStats {
                round: self.round,
                lr: eta,
                delta,
                v1,
                v2,
            },
            internals,
        ))
    }

    /// Full metric record for the current state.
    pub fn record(&self, stats: Option<&RoundStats>) -> RoundRecord {
        metrics::evaluate_state(self, stats)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub rounds_completed: usize,
    pub initial: RoundRecord,
    #[serde(rename = "final")]
    pub last: Option<RoundRecord>,
    pub best_acc: Option<f64>,
    pub rounds_to_targets: Vec<TargetHit>,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
}

impl RunOutput {
    /// Initial state followed by the evaluated rounds.
    pub fn series(&self) -> Vec<RoundRecord> {
        std::iter::once(self.summary.initial.clone())
            .chain(self.records.iter().cloned())
            .collect()
    }
}

/// Builds the environment, runs `cfg.rounds` rounds and evaluates every
/// `eval_every` rounds (and always after the last one).
pub fn run_experiment(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<RunOutput> {
    cfg.validate()?;
    let env = Environment::build(cfg)?;
    run_with_environment(cfg, &env, workers)
}

pub fn run_with_environment(cfg: &ExperimentConfig, env: &Environment, workers: Option<usize>) -> Result<RunOutput> {
    let started = Instant::now();
    let mut sim = Simulation::new(cfg, env, workers)?;
    let initial = sim.record(None);
    let mut records = Vec::new();
    for _ in 0..cfg.rounds {
        let (stats, _) = sim.run_round()?;
        if stats.round % cfg.eval_every == 0 || stats.round == cfg.rounds {
            records.push(sim.record(Some(&stats)));
        }
    }
    let series: Vec<RoundRecord> = std::iter::once(initial.clone())
        .chain(records.iter().cloned())
        .collect();
    let best_acc = series
        .iter()
        .filter_map(|r| r.test_acc)
        .fold(None, |best: Option<f64>, a| Some(best.map_or(a, |b| b.max(a))));
    let summary = Summary {
        config: cfg.clone(),
        rounds_completed: sim.round(),
        initial,
        last: records.last().cloned(),
        best_acc,
        rounds_to_targets: metrics::rounds_to_target(&series, &cfg.targets),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { records, summary })
}

/// Convenience for model-level evaluation of an arbitrary parameter vector.
pub fn evaluate_model(env: &Environment, x: &ParamVec) -> Option<(f64, f64)> {
    match (&env.model, &env.test) {
        (ModelSpec::Quadratic(_), _) | (_, None) => None,
        (spec, Some(test)) => Some(model::evaluate(spec, x, test)),
    }
}

//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use dgossip::config::AlgorithmKind;
use dgossip::data::{self, PartitionScheme, SyntheticSpec};
use dgossip::engine::{run_experiment, Environment, Simulation};
use dgossip::localopt::{sam_step, sgd_step};
use dgossip::metrics::{stability_probe, write_metrics_csv};
use dgossip::model::{self, quadratic_testbed, Batch, ModelSpec, Shard};
use dgossip::topology::{build_mixing, TopologyKind, TopologySpec};
use dgossip::{ExperimentConfig, ParamVec};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn criterion(n: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let result = match (result, budget) {
        (Ok(_), Some(b)) if elapsed > b => Err(format!("took {:.2?}, budget {:.0?}", elapsed, b)),
        (r, _) => r,
    };
    let (status, detail) = match &result {
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    println!("criterion {n:>2} {status}  {name}  [{elapsed:.2?}] {detail}");
    result.is_ok()
}

fn all_topologies(m: usize) -> Vec<TopologySpec> {
    vec![
        TopologySpec::new(TopologyKind::Ring, m),
        TopologySpec::new(TopologyKind::Grid, m),
        TopologySpec::new(TopologyKind::Exponential, m),
        TopologySpec::new(TopologyKind::FullyConnected, m),
        TopologySpec::random_k(m, 10.min(m - 1), 7).for_round(0),
        TopologySpec::random_k(m, 3.min(m - 1), 11).for_round(5),
    ]
}

fn mixing_suite() -> Outcome {
    let mut checked = 0;
    for m in [4, 9, 16, 25, 100] {
        for spec in all_topologies(m) {
            let w = build_mixing(&spec).map_err(|e| e.to_string())?;
            let a = w.as_slice();
            for i in 0..m {
                for j in 0..m {
                    ensure!(
                        a[i * m + j].to_bits() == a[j * m + i].to_bits(),
                        "{spec:?}: asymmetric at ({i},{j})"
                    );
                }
                let row: f64 = w.row(i).iter().sum();
                ensure!((row - 1.0).abs() <= 1e-12, "{spec:?}: row {i} sums to {row}");
            }
            let ev = jacobi_eigenvalues(m, a);
            ensure!(
                ev.iter().all(|&l| l > -1.0 && l <= 1.0 + 1e-12),
                "{spec:?}: eigenvalue outside (-1, 1]"
            );
            let p = vec![1.0 / m as f64; m * m];
            let mut power = a.to_vec();
            for t in 1..=5 {
                let diff: Vec<f64> = power.iter().zip(&p).map(|(x, y)| x - y).collect();
                let norm = symmetric_op_norm(m, &diff);
                ensure!(
                    norm <= w.psi().powi(t) + 1e-9,
                    "{spec:?}: |W^{t} - P| = {norm} > psi^{t} = {}",
                    w.psi().powi(t)
                );
                power = matmul(m, &power, a);
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} matrices"))
}

fn spectral_values() -> Outcome {
    let psi = |kind, m| {
        build_mixing(&TopologySpec::new(kind, m))
            .map(|w| w.psi())
            .map_err(|e| e.to_string())
    };
    for m in [2, 3, 5, 16, 32, 100] {
        let v = psi(TopologyKind::FullyConnected, m)?;
        ensure!(v.abs() <= 1e-12, "fully-connected m={m}: psi {v}");
    }
    for m in [4, 16] {
        let got = psi(TopologyKind::Ring, m)?;
        let want = ring_psi_closed_form(m);
        ensure!((got - want).abs() <= 1e-9, "ring m={m}: psi {got}, closed form {want}");
    }
    let r16 = 1.0 / 3.0 + 2.0 / 3.0 * (std::f64::consts::PI / 8.0).cos();
    ensure!((psi(TopologyKind::Ring, 16)? - r16).abs() <= 1e-9, "ring m=16 off");
    ensure!((psi(TopologyKind::Ring, 4)? - 1.0 / 3.0).abs() <= 1e-9, "ring m=4 off");
    let order = [
        psi(TopologyKind::FullyConnected, 16)?,
        psi(TopologyKind::Exponential, 16)?,
        psi(TopologyKind::Grid, 16)?,
        psi(TopologyKind::Ring, 16)?,
    ];
    ensure!(order.windows(2).all(|w| w[0] < w[1]), "ordering violated: {order:?}");
    Ok(format!("m=16 psi full/exp/grid/ring = {order:.6?}"))
}

fn ole_chebyshev_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut pairs = 0;
    let mut worst: f64 = 0.0;
    while pairs < 50 {
        let m = rng.random_range(4..=12);
        let beta = rng.random_range(0.0..=0.9);
        let kind = [TopologyKind::Ring, TopologyKind::Exponential, TopologyKind::RandomK][rng.random_range(0..3)];
        let mut cfg = config(QUADRATIC_RING);
        cfg.clients = m;
        cfg.beta = beta;
        cfg.seed = rng.random();
        cfg.topology.kind = kind;
        cfg.topology.k = rng.random_range(1..m);
        cfg.init_jitter = rng.random_range(0.1..2.0);
        cfg.model.dim = rng.random_range(1..=6);
        let env = Environment::build(&cfg).map_err(|e| e.to_string())?;
        let mut sim = Simulation::new(&cfg, &env, Some(2)).map_err(|e| e.to_string())?;
        sim.set_capture(true);
        let (_, mut prev) = sim.run_round().map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let (_, next) = sim.run_round().map_err(|e| e.to_string())?;
            let (p, n) = (prev.as_ref().unwrap(), next.as_ref().unwrap());
            let w = p.mixing.as_ref().unwrap();
            for i in 0..m {
                let mut want = vec![0.0; cfg.model.dim];
                for j in 0..m {
                    let c = (1.0 + beta) * w.get(i, j) - if i == j { beta } else { 0.0 };
                    for (acc, z) in want.iter_mut().zip(p.locals[j].iter()) {
                        *acc += c * z;
                    }
                }
                worst = worst.max(max_abs_diff(&n.starts[i], &want));
            }
            pairs += 1;
            prev = next;
        }
    }
    ensure!(worst <= 1e-10, "max deviation {worst:e}");
    Ok(format!("{pairs} rounds, max deviation {worst:.2e}"))
}

fn bitwise_series(cfg: &ExperimentConfig) -> Result<Vec<u8>, String> {
    let out = run_experiment(cfg, Some(2)).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    write_metrics_csv(&out.series(), &mut buf).map_err(|e| e.to_string())?;
    Ok(buf)
}

fn final_bits(cfg: &ExperimentConfig) -> Result<Vec<u64>, String> {
    let env = Environment::build(cfg).map_err(|e| e.to_string())?;
    let mut sim = Simulation::new(cfg, &env, Some(3)).map_err(|e| e.to_string())?;
    for _ in 0..cfg.rounds {
        sim.run_round().map_err(|e| e.to_string())?;
    }
    Ok(sim
        .clients()
        .iter()
        .flat_map(|c| {
            c.x_mixed
                .iter()
                .chain(c.z_prev.iter())
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        })
        .collect())
}

fn degeneracy() -> Outcome {
    let mut oled = config(LOGISTIC_DIRICHLET);
    oled.rounds = 50;
    oled.beta = 0.0;
    let mut plain = oled.clone();
    plain.algorithm = AlgorithmKind::DFedAvg;
    plain.beta = 0.7;
    ensure!(
        bitwise_series(&oled)? == bitwise_series(&plain)?,
        "oled-sgd(beta=0) metrics differ from dfedavg"
    );
    ensure!(
        final_bits(&oled)? == final_bits(&plain)?,
        "oled-sgd(beta=0) states differ from dfedavg"
    );

    let mut sam = oled.clone();
    sam.algorithm = AlgorithmKind::OledSam;
    sam.beta = 0.3;
    sam.optimizer.lambda = 0.0;
    let mut sgd = sam.clone();
    sgd.algorithm = AlgorithmKind::OledSgd;
    ensure!(
        final_bits(&sam)? == final_bits(&sgd)?,
        "oled-sam(lambda=0) run differs from oled-sgd"
    );

    let env = Environment::build(&oled).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut steps = 0;
    for client in 0..4 {
        let shard = env.shard(client);
        let mut x = model::init_params(&env.model, client as u64);
        for _ in 0..25 {
            let batch = Batch::sample(&mut rng, shard.len(), 8);
            let a = sgd_step(&env.model, &x, &shard, &batch, 0.1).map_err(|e| e.to_string())?;
            let b = sam_step(&env.model, &x, &shard, &batch, 0.1, 0.0, 1e-12).map_err(|e| e.to_string())?;
            ensure!(
                a.iter().zip(b.iter()).all(|(u, v)| u.to_bits() == v.to_bits()),
                "sam(lambda=0) step differs from sgd"
            );
            x = a;
            steps += 1;
        }
    }
    Ok(format!("50 rounds bitwise equal, {steps} single steps bitwise equal"))
}

fn finite_difference_error(spec: &ModelSpec, x: &ParamVec, shard: &Shard<'_>, batch: &Batch) -> f64 {
    let (_, g) = model::loss_and_grad(spec, x, shard, batch);
    let h = 1e-6;
    let mut fd = vec![0.0; x.len()];
    for (k, slot) in fd.iter_mut().enumerate() {
        let mut plus = x.clone();
        plus[k] += h;
        let mut minus = x.clone();
        minus[k] -= h;
        let (fp, _) = model::loss_and_grad(spec, &plus, shard, batch);
        let (fm, _) = model::loss_and_grad(spec, &minus, shard, batch);
        *slot = (fp - fm) / (2.0 * h);
    }
    let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = g.norm() + fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

fn gradient_oracle() -> Outcome {
    let ds = data::generate_synthetic(
        &SyntheticSpec {
            classes: 3,
            dim: 4,
            per_class: 10,
            cluster_spread: 1.0,
        },
        3,
    )
    .map_err(|e| e.to_string())?;
    let rows: Vec<usize> = (0..ds.len()).collect();
    let sample_shard = Shard {
        client: 0,
        data: Some(&ds),
        rows: &rows,
    };
    let specs = [
        (
            "quadratic",
            ModelSpec::Quadratic(quadratic_testbed(4, 6, 1.0, false, 9)),
        ),
        (
            "logistic",
            ModelSpec::Logistic {
                input_dim: 4,
                num_classes: 3,
            },
        ),
        (
            "mlp",
            ModelSpec::Mlp {
                input_dim: 4,
                hidden: vec![5, 4],
                num_classes: 3,
            },
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut report = Vec::new();
    for (name, spec) in &specs {
        let mut worst: f64 = 0.0;
        for point in 0..20 {
            let x: ParamVec = (0..spec.param_count())
                .map(|_| rng.random_range(-1.5..1.5))
                .collect::<Vec<_>>()
                .into();
            let (shard, batch) = match spec {
                ModelSpec::Quadratic(_) => (
                    Shard {
                        client: point % 4,
                        data: None,
                        rows: &[],
                    },
                    Batch(Vec::new()),
                ),
                _ => (sample_shard, Batch::sample(&mut rng, rows.len(), 8)),
            };
            worst = worst.max(finite_difference_error(spec, &x, &shard, &batch));
        }
        ensure!(worst < 1e-5, "{name}: relative error {worst:e}");
        report.push(format!("{name} {worst:.1e}"));
    }
    Ok(report.join(", "))
}

fn average_preservation() -> Outcome {
    let mut cfg = config(LOGISTIC_DIRICHLET);
    cfg.rounds = 100;
    cfg.beta = 0.9;
    cfg.topology.kind = TopologyKind::RandomK;
    cfg.topology.k = 3;
    let env = Environment::build(&cfg).map_err(|e| e.to_string())?;
    let mut sim = Simulation::new(&cfg, &env, None).map_err(|e| e.to_string())?;
    sim.set_capture(true);
    let (mut mix_err, mut ole_err): (f64, f64) = (0.0, 0.0);
    let mut prev_mean: Option<ParamVec> = None;
    for _ in 0..cfg.rounds {
        let (_, internals) = sim.run_round().map_err(|e| e.to_string())?;
        let r = internals.unwrap();
        let mixed_mean = ParamVec::mean(&r.mixed);
        mix_err = mix_err.max(max_abs_diff(&mixed_mean, &ParamVec::mean(&r.locals)));
        if let Some(prev) = &prev_mean {
            ole_err = ole_err.max(max_abs_diff(&ParamVec::mean(&r.starts), prev));
        }
        prev_mean = Some(mixed_mean);
    }
    ensure!(mix_err <= 1e-12, "mixing moved the mean by {mix_err:e}");
    ensure!(ole_err <= 1e-10, "Ole moved the mean by {ole_err:e}");
    Ok(format!("mixing {mix_err:.1e}, Ole {ole_err:.1e}"))
}

fn first_consensus_round(cfg: &ExperimentConfig, tol: f64) -> Result<Option<usize>, String> {
    let out = run_experiment(cfg, None).map_err(|e| e.to_string())?;
    Ok(out.series().iter().find(|r| r.consensus < tol).map(|r| r.t))
}

fn consensus_acceleration() -> Outcome {
    let mut base = config(QUADRATIC_RING);
    base.model.heterogeneity = 0.0;
    base.model.shared_curvature = true;
    base.init_jitter = 1.0;
    let mut oled = base.clone();
    oled.beta = 0.2;
    let mut plain = base;
    plain.beta = 0.0;
    let a = first_consensus_round(&oled, 1e-6)?;
    let b = first_consensus_round(&plain, 1e-6)?;
    let (Some(a), Some(b)) = (a, b) else {
        return Err(format!("consensus not reached: beta=0.2 {a:?}, beta=0 {b:?}"));
    };
    ensure!(a < b, "beta=0.2 needs {a} rounds, beta=0 needs {b}");
    Ok(format!("beta=0.2: {a} rounds, beta=0: {b} rounds"))
}

fn heterogeneous_quadratic() -> Outcome {
    let (mut go, mut gd, mut dn, mut dd) = (vec![], vec![], vec![], vec![]);
    for seed in 0..5 {
        let mut oled = config(QUADRATIC_RING);
        oled.seed = seed;
        let mut plain = oled.clone();
        plain.algorithm = AlgorithmKind::DFedAvg;
        let a = run_experiment(&oled, None).map_err(|e| e.to_string())?;
        let b = run_experiment(&plain, None).map_err(|e| e.to_string())?;
        let (la, lb) = (a.summary.last.unwrap(), b.summary.last.unwrap());
        go.push(la.grad_norm_sq);
        gd.push(lb.grad_norm_sq);
        dn.push(la.delta_t);
        dd.push(lb.delta_t);
    }
    let (go, gd, dn, dd) = (median(go), median(gd), median(dn), median(dd));
    ensure!(go <= gd, "median grad norm: oled {go:e} > dfedavg {gd:e}");
    ensure!(dn <= dd, "median delta: oled {dn:e} > dfedavg {dd:e}");
    Ok(format!(
        "median |grad|^2 oled {go:.3e} vs dfedavg {gd:.3e}; median delta {dn:.3e} vs {dd:.3e}"
    ))
}

fn logistic_benchmark() -> Outcome {
    let (mut a, mut b) = (vec![], vec![]);
    for seed in 0..5 {
        let mut oled = config(LOGISTIC_DIRICHLET);
        oled.seed = seed;
        let mut plain = oled.clone();
        plain.algorithm = AlgorithmKind::DFedAvg;
        a.push(
            run_experiment(&oled, None)
                .map_err(|e| e.to_string())?
                .summary
                .best_acc
                .unwrap(),
        );
        b.push(
            run_experiment(&plain, None)
                .map_err(|e| e.to_string())?
                .summary
                .best_acc
                .unwrap(),
        );
    }
    let (a, b) = (median(a), median(b));
    ensure!(a >= b - 0.005, "median best accuracy oled {a} < dfedavg {b} - 0.005");
    Ok(format!("median best accuracy oled {a:.4}, dfedavg {b:.4}"))
}

fn partition_properties() -> Outcome {
    let spec = SyntheticSpec {
        classes: 10,
        dim: 2,
        per_class: 100,
        cluster_spread: 1.0,
    };
    let ds = data::generate_synthetic(&spec, 0).map_err(|e| e.to_string())?;
    let schemes = [
        PartitionScheme::Iid,
        PartitionScheme::Dirichlet { alpha: 0.1 },
        PartitionScheme::Dirichlet { alpha: 1e6 },
        PartitionScheme::Pathological { classes_per_client: 2 },
        PartitionScheme::Pathological { classes_per_client: 10 },
    ];
    for scheme in schemes {
        for (m, seed) in [(1, 0), (7, 1), (100, 2), (100, 3)] {
            if let PartitionScheme::Pathological { classes_per_client } = scheme {
                if m * classes_per_client < 10 {
                    continue;
                }
            }
            let plan = data::partition(&ds, m, scheme, seed).map_err(|e| e.to_string())?;
            let mut seen = vec![0u32; ds.len()];
            for i in 0..m {
                ensure!(!plan.shard(i).is_empty(), "{scheme:?} m={m}: client {i} empty");
                for &r in plan.shard(i) {
                    seen[r] += 1;
                }
            }
            ensure!(seen.iter().all(|&c| c == 1), "{scheme:?} m={m}: not a set partition");
        }
    }
    for seed in 0..10 {
        let plan = data::partition_pathological(&ds, 100, 2, seed).map_err(|e| e.to_string())?;
        for i in 0..100 {
            let distinct = plan.class_histogram(&ds, i).iter().filter(|&&c| c > 0).count();
            ensure!(
                distinct == 2,
                "pathological seed {seed}: client {i} holds {distinct} classes"
            );
        }
    }
    let alphas = [0.1, 0.3, 1.0, 10.0, 1e6];
    let mut tv = Vec::new();
    for alpha in alphas {
        let mut sum = 0.0;
        for seed in 0..10 {
            let plan = data::partition_dirichlet(&ds, 10, alpha, seed).map_err(|e| e.to_string())?;
            sum += data::mean_label_tv(&ds, &plan);
        }
        tv.push(sum / 10.0);
    }
    ensure!(tv.windows(2).all(|w| w[1] <= w[0]), "TV not monotone in alpha: {tv:?}");
    Ok(format!("mean TV over alpha {alphas:?}: {tv:.3?}"))
}

fn stability() -> Outcome {
    let mut cfg = config(LOGISTIC_DIRICHLET);
    cfg.rounds = 100;
    cfg.optimizer.batch_size = 4;
    let env = Environment::build(&cfg).map_err(|e| e.to_string())?;
    let plan = env.plan.as_ref().unwrap();
    let train = env.train.as_ref().unwrap();
    let client = (0..16).max_by_key(|&i| plan.shard(i).len()).unwrap();

    // Prefer a sample drawn a few rounds in, so the zero prefix is non-trivial.
    let mut chosen = None;
    for position in 0..plan.shard(client).len().min(40) {
        let row = plan.shard(client)[position];
        let features: Vec<f64> = train.row(row).iter().map(|v| -v).collect();
        let label = (train.label(row) + 1) % 4;
        let trace = stability_probe(&cfg, client, position, (&features, label), Some(2)).map_err(|e| e.to_string())?;
        let late = trace.first_draw.is_some_and(|(r, _)| r >= 3);
        chosen = Some((position, row, trace));
        if late {
            break;
        }
    }
    let (position, row, trace) = chosen.ok_or("empty shard")?;
    ensure!(trace.rows.len() == 100, "expected 100 rows, got {}", trace.rows.len());
    let Some((first_round, step)) = trace.first_draw else {
        return Err("swapped sample never drawn".into());
    };
    for r in &trace.rows {
        if r.t < first_round {
            ensure!(
                r.mean_param_distance.to_bits() == 0,
                "round {}: distance {} before first draw",
                r.t,
                r.mean_param_distance
            );
        } else {
            ensure!(
                r.mean_param_distance > 0.0 && r.mean_param_distance.is_finite(),
                "round {}: distance {} after first draw",
                r.t,
                r.mean_param_distance
            );
        }
    }
    let original = train.row(row).to_vec();
    let same =
        stability_probe(&cfg, client, position, (&original, train.label(row)), Some(2)).map_err(|e| e.to_string())?;
    ensure!(
        same.rows.iter().all(|r| r.mean_param_distance.to_bits() == 0),
        "identical replacement produced nonzero distance"
    );
    Ok(format!(
        "first draw round {first_round} step {step}, final distance {:.3e}",
        trace.rows.last().unwrap().mean_param_distance
    ))
}

fn binary() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dgossip"));
    cmd.env_remove("DGOSSIP_SEED");
    cmd
}

fn run_cli(config_path: &Path, out: &Path, workers: &str) -> Result<Vec<u8>, String> {
    let status = binary()
        .args(["run", "--config"])
        .arg(config_path)
        .arg("--out")
        .arg(out)
        .args(["--workers", workers])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        status.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&status.stderr)
    );
    std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let configs = [
        (
            "random-k",
            format!("{LOGISTIC_DIRICHLET}\n"),
            vec![
                ("rounds", "40"),
                ("topology.kind", "\"random-k\""),
                ("topology.k", "3"),
                ("diagnostics", "true"),
            ],
        ),
        (
            "mlp-sam",
            format!("{LOGISTIC_DIRICHLET}\n"),
            vec![
                ("rounds", "20"),
                ("algorithm", "\"oled-sam\""),
                ("model.kind", "\"mlp\""),
            ],
        ),
        (
            "fedavg",
            format!("{LOGISTIC_DIRICHLET}\n"),
            vec![("rounds", "30"), ("algorithm", "\"fedsam\"")],
        ),
        ("quadratic", QUADRATIC_RING.to_string(), vec![("rounds", "60")]),
    ];
    for (name, text, overrides) in configs {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        for (k, v) in overrides {
            dgossip::config::apply_override(&mut table, k, v).map_err(|e| e.to_string())?;
        }
        let path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&path, toml::to_string(&table).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let one = run_cli(&path, &dir.path().join(format!("{name}-1")), "1")?;
        let four = run_cli(&path, &dir.path().join(format!("{name}-4")), "4")?;
        ensure!(
            !one.is_empty() && one == four,
            "{name}: metrics.csv differs between 1 and 4 workers"
        );
    }
    Ok("4 configs, metrics.csv identical for 1 and 4 workers".into())
}

fn validation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "beta = 1.2\nrounds = 2\n").map_err(|e| e.to_string())?;
    let from_file = binary()
        .args(["run", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("a"))
        .output()
        .map_err(|e| e.to_string())?;
    let from_flag = binary()
        .args(["run", "--set", "beta=1.0", "--out"])
        .arg(dir.path().join("b"))
        .output()
        .map_err(|e| e.to_string())?;
    for (what, out) in [("config file", &from_file), ("--set", &from_flag)] {
        ensure!(out.status.code() == Some(2), "{what}: exit {:?}", out.status.code());
        let stderr = String::from_utf8_lossy(&out.stderr);
        ensure!(stderr.contains("beta"), "{what}: message lacks `beta`: {stderr}");
    }
    ensure!(
        !dir.path().join("a/summary.json").exists(),
        "rejected run still wrote output"
    );
    let err = ExperimentConfig::from_toml_str("beta = 1.0", &[]).unwrap_err();
    ensure!(err.exit_code() == 2, "library exit code {}", err.exit_code());
    Ok("beta >= 1 rejected with exit code 2".into())
}

fn main() {
    panic::set_hook(Box::new(|_| {}));
    println!("running acceptance criteria");
    let results = [
        criterion(1, "mixing-matrix suite", Some(Duration::from_secs(5)), mixing_suite),
        criterion(2, "spectral values", None, spectral_values),
        criterion(3, "Ole / modified-matrix equivalence", None, ole_chebyshev_equivalence),
        criterion(4, "degeneracy (beta=0, lambda=0)", None, degeneracy),
        criterion(5, "gradient finite-difference oracle", None, gradient_oracle),
        criterion(6, "average preservation", None, average_preservation),
        criterion(
            7,
            "consensus acceleration",
            Some(Duration::from_secs(10)),
            consensus_acceleration,
        ),
        criterion(
            8,
            "heterogeneous quadratic trend",
            Some(Duration::from_secs(60)),
            heterogeneous_quadratic,
        ),
        criterion(
            9,
            "logistic desk benchmark",
            Some(Duration::from_secs(120)),
            logistic_benchmark,
        ),
        criterion(10, "partition properties", None, partition_properties),
        criterion(11, "stability probe", None, stability),
        criterion(12, "determinism across worker counts", None, determinism),
        criterion(13, "beta validation", None, validation),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

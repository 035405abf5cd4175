//! Command-line front end: `run`, `sweep`, `topo-report`, `stability`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_override, ExperimentConfig};
use crate::engine::{run_experiment, Environment, RunOutput, Summary};
use crate::error::{Error, Result};
use crate::metrics::{stability_probe, write_metrics_csv, write_stability_csv};
use crate::topology::{beta_theory_bound, build_mixing, TopologyKind, TopologySpec};

pub const SEED_ENV: &str = "DGOSSIP_SEED";

#[derive(Debug, Parser)]
#[command(name = "dgossip", version, about = "Decentralized federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write metrics.csv and summary.json.
    Run(RunArgs),
    /// Run one experiment per value of a config key.
    Sweep(SweepArgs),
    /// Spectral report of mixing matrices.
    TopoReport(TopoArgs),
    /// Coupled runs differing in one training sample.
    Stability(StabilityArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Dotted-key override, e.g. `optimizer.lambda=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for local training, or `auto`.
    #[arg(long, default_value = "auto")]
    pub workers: String,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Dotted config key to vary.
    #[arg(long)]
    pub key: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TopoArgs {
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "fully-connected,exponential,grid,ring,random-k"
    )]
    pub kinds: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub m: Vec<usize>,
    /// Neighbors per node for random-k.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write topo_report.csv into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 0)]
    pub client: usize,
    /// Position of the swapped sample inside the client's shard.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    /// Replacement features; defaults to the negated original.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub features: Option<Vec<f64>>,
    /// Replacement label; defaults to the next class.
    #[arg(long)]
    pub label: Option<usize>,
    /// Replace the sample with an exact copy of itself.
    #[arg(long, conflicts_with_all = ["features", "label"])]
    pub identical: bool,
}

pub fn parse_workers(raw: &str) -> Result<Option<usize>> {
    if raw.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => Ok(Some(n)),
        _ => Err(Error::invalid(
            "workers",
            format!("expected a positive integer or `auto`, got `{raw}`"),
        )),
    }
}

impl RunArgs {
    fn overrides(&self, extra: &[(String, String)]) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            seed.trim()
                .parse::<u64>()
                .map_err(|_| Error::config("seed", format!("{SEED_ENV} must be an unsigned integer, got `{seed}`")))?;
            out.push(("seed".to_string(), seed.trim().to_string()));
        }
        for s in &self.set {
            out.push(parse_override(s)?);
        }
        out.extend_from_slice(extra);
        Ok(out)
    }

    fn load(&self, extra: &[(String, String)]) -> Result<ExperimentConfig> {
        let overrides = self.overrides(extra)?;
        match &self.config {
            Some(path) => ExperimentConfig::load(path, &overrides),
            None => ExperimentConfig::from_toml_str("", &overrides),
        }
    }
}

fn prepare_file(dir: &Path, name: &str, force: bool) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join(name);
    if path.exists() && !force {
        return Err(Error::io(
            format!("{} exists (pass --force to overwrite)", path.display()),
            io::Error::from(io::ErrorKind::AlreadyExists),
        ));
    }
    Ok(path)
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(io::BufWriter::new)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_run(dir: &Path, out: &RunOutput, force: bool) -> Result<()> {
    let summary_path = prepare_file(dir, "summary.json", force)?;
    let metrics_path = dir.join("metrics.csv");
    write_metrics_csv(&out.series(), create(&metrics_path)?)?;
    let mut f = create(&summary_path)?;
    serde_json::to_writer_pretty(&mut f, &out.summary)
        .map_err(|e| Error::io(format!("writing {}", summary_path.display()), e.into()))?;
    writeln!(f)
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(format!("writing {}", summary_path.display()), e))
}

fn format_round(round: Option<usize>, rounds: usize) -> String {
    round.map_or_else(|| format!(">{rounds}"), |r| r.to_string())
}

fn print_summary(s: &Summary) {
    let last = s.last.as_ref().unwrap_or(&s.initial);
    println!(
        "{} rounds  train_loss {:.6}  grad_norm_sq {:.3e}  consensus {:.3e}  delta_t {:.3e}",
        s.rounds_completed, last.train_loss, last.grad_norm_sq, last.consensus, last.delta_t
    );
    if let Some(best) = s.best_acc {
        println!("best test accuracy {best:.4}");
    }
    for hit in &s.rounds_to_targets {
        println!(
            "  target {:.3}: {}",
            hit.target,
            format_round(hit.round, s.rounds_completed)
        );
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = args.load(&[])?;
    let workers = parse_workers(&args.workers)?;
    prepare_file(&args.out, "summary.json", args.force)?;
    let out = run_experiment(&cfg, workers)?;
    write_run(&args.out, &out, args.force)?;
    print_summary(&out.summary);
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    value: String,
    status: &'static str,
    best_acc: Option<f64>,
    rounds_to_first_target: Option<String>,
    final_delta_t: Option<f64>,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let values: Vec<&str> = args.values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::invalid("values", "empty sweep"));
    }
    let workers = parse_workers(&args.run.workers)?;
    let cells = values
        .iter()
        .map(|v| {
            let cfg = args.run.load(&[(args.key.clone(), v.to_string())])?;
            Ok((*v, cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    let sweep_path = prepare_file(&args.run.out, "sweep.csv", args.run.force)?;

    let mut rows = Vec::with_capacity(cells.len());
    for (value, cfg) in &cells {
        let dir = args.run.out.join(format!("{}={}", args.key, value));
        prepare_file(&dir, "summary.json", args.run.force)?;
        let row = match run_experiment(cfg, workers) {
            Ok(out) => {
                write_run(&dir, &out, args.run.force)?;
                let s = &out.summary;
                SweepRow {
                    value: value.to_string(),
                    status: "ok",
                    best_acc: s.best_acc,
                    rounds_to_first_target: s
                        .rounds_to_targets
                        .first()
                        .map(|h| format_round(h.round, s.rounds_completed)),
                    final_delta_t: Some(s.last.as_ref().unwrap_or(&s.initial).delta_t),
                }
            }
            Err(e @ Error::Divergence { .. }) => {
                eprintln!("{}={value}: {e}", args.key);
                SweepRow {
                    value: value.to_string(),
                    status: "diverged",
                    best_acc: None,
                    rounds_to_first_target: None,
                    final_delta_t: None,
                }
            }
            Err(e) => return Err(e),
        };
        println!("{}={}  {}", args.key, row.value, row.status);
        rows.push(row);
    }

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(&sweep_path)?);
    for row in &rows {
        w.serialize(row)
            .map_err(|e| Error::io("writing sweep.csv", io::Error::other(e.to_string())))?;
    }
    w.flush().map_err(|e| Error::io("writing sweep.csv", e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopoRow {
    pub kind: String,
    pub m: usize,
    pub psi: f64,
    pub beta_theory_bound: f64,
    pub annotation: String,
}

/// One row per `(kind, m)`; random-k reports its first-round draw, with `k`
/// capped at `m - 1`.
pub fn topo_report(kinds: &[TopologyKind], ms: &[usize], k: usize, seed: u64) -> Result<Vec<TopoRow>> {
    let mut rows = Vec::new();
    for &kind in kinds {
        for &m in ms {
            let spec = match kind {
                TopologyKind::RandomK => {
                    TopologySpec::random_k(m, k.min(m.saturating_sub(1)).max(1), seed).for_round(0)
                }
                _ => TopologySpec::new(kind, m),
            };
            let psi = build_mixing(&spec)?.psi();
            rows.push(TopoRow {
                kind: kind.name().to_string(),
                m,
                psi,
                beta_theory_bound: beta_theory_bound(psi),
                annotation: kind.asymptotic_psi().to_string(),
            });
        }
    }
    Ok(rows)
}

pub fn cmd_topo_report(args: &TopoArgs) -> Result<()> {
    let kinds = args
        .kinds
        .iter()
        .map(|s| s.trim().parse::<TopologyKind>())
        .collect::<Result<Vec<_>>>()?;
    let rows = topo_report(&kinds, &args.m, args.k, args.seed)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        for row in &rows {
            w.serialize(row)
                .map_err(|e| Error::io("writing topology report", io::Error::other(e.to_string())))?;
        }
        w.flush().map_err(|e| Error::io("writing topology report", e))?;
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join("topo_report.csv");
        fs::write(&path, &buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    io::stdout()
        .write_all(&buf)
        .map_err(|e| Error::io("writing to stdout", e))
}

pub fn cmd_stability(args: &StabilityArgs) -> Result<()> {
    let cfg = args.run.load(&[])?;
    let workers = parse_workers(&args.run.workers)?;
    let path = prepare_file(&args.run.out, "stability.csv", args.run.force)?;

    let env = Environment::build(&cfg)?;
    let (train, plan) = env
        .train
        .as_ref()
        .zip(env.plan.as_ref())
        .ok_or_else(|| Error::invalid("model.kind", "stability probe needs a sample-based objective"))?;
    if args.client >= plan.clients() {
        return Err(Error::invalid("client", format!("client {} out of range", args.client)));
    }
    let row = *plan.shard(args.client).get(args.sample).ok_or_else(|| {
        Error::invalid(
            "sample",
            format!(
                "sample {} out of range for client {} ({} samples)",
                args.sample,
                args.client,
                plan.shard(args.client).len()
            ),
        )
    })?;
    let original = train.row(row).to_vec();
    let original_label = train.label(row);
    let classes = env.model.layers().last().map_or(1, |l| l.outputs);
    let (features, label) = if args.identical {
        (original, original_label)
    } else {
        (
            args.features
                .clone()
                .unwrap_or_else(|| original.iter().map(|v| -v).collect()),
            args.label.unwrap_or((original_label + 1) % classes),
        )
    };

    let trace = stability_probe(&cfg, args.client, args.sample, (&features, label), workers)?;
    write_stability_csv(&trace, create(&path)?)?;
    match trace.first_draw {
        Some((round, step)) => println!("swapped sample first drawn in round {round}, step {step}"),
        None => println!("swapped sample never drawn"),
    }
    if let Some(last) = trace.rows.last() {
        println!("final mean parameter distance {:.6e}", last.mean_param_distance);
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::TopoReport(a) => cmd_topo_report(a),
        Command::Stability(a) => cmd_stability(a),
    }
}

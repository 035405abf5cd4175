//! Experiment configuration: TOML files plus dotted-key overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::PartitionScheme;
use crate::error::{Error, Result};
use crate::localopt::{LocalMethod, OptimizerConfig};
use crate::rng::{derive_seed, stream};
use crate::topology::{TopologyKind, TopologySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlgorithmKind {
    #[serde(rename = "oled-sgd")]
    OledSgd,
    #[serde(rename = "oled-sam")]
    OledSam,
    #[serde(rename = "dfedavg")]
    DFedAvg,
    #[serde(rename = "dfedavgm")]
    DFedAvgM,
    #[serde(rename = "dfedsam")]
    DFedSam,
    #[serde(rename = "dpsgd")]
    DPsgd,
    #[serde(rename = "fedavg")]
    FedAvgCentral,
    #[serde(rename = "fedsam")]
    FedSamCentral,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 8] = [
        AlgorithmKind::OledSgd,
        AlgorithmKind::OledSam,
        AlgorithmKind::DFedAvg,
        AlgorithmKind::DFedAvgM,
        AlgorithmKind::DFedSam,
        AlgorithmKind::DPsgd,
        AlgorithmKind::FedAvgCentral,
        AlgorithmKind::FedSamCentral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::OledSgd => "oled-sgd",
            AlgorithmKind::OledSam => "oled-sam",
            AlgorithmKind::DFedAvg => "dfedavg",
            AlgorithmKind::DFedAvgM => "dfedavgm",
            AlgorithmKind::DFedSam => "dfedsam",
            AlgorithmKind::DPsgd => "dpsgd",
            AlgorithmKind::FedAvgCentral => "fedavg",
            AlgorithmKind::FedSamCentral => "fedsam",
        }
    }

    pub fn is_central(self) -> bool {
        matches!(self, AlgorithmKind::FedAvgCentral | AlgorithmKind::FedSamCentral)
    }

    pub fn uses_ole(self) -> bool {
        matches!(self, AlgorithmKind::OledSgd | AlgorithmKind::OledSam)
    }

    pub fn local_method(self) -> LocalMethod {
        match self {
            AlgorithmKind::OledSam | AlgorithmKind::DFedSam | AlgorithmKind::FedSamCentral => LocalMethod::Sam,
            AlgorithmKind::DFedAvgM => LocalMethod::SgdMomentum,
            _ => LocalMethod::Sgd,
        }
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlgorithmKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("algorithm", format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    /// Partners per node for `random-k`.
    pub k: usize,
    /// Graph seed; derived from the experiment seed when absent.
    pub seed: Option<u64>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            kind: TopologyKind::RandomK,
            k: 10,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Quadratic,
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden widths for `mlp`.
    pub hidden: Vec<usize>,
    /// Parameter dimension for `quadratic`.
    pub dim: usize,
    pub heterogeneity: f64,
    /// All quadratic clients share one curvature matrix.
    pub shared_curvature: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Logistic,
            hidden: vec![32],
            dim: 10,
            heterogeneity: 1.0,
            shared_curvature: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub cluster_spread: f64,
    /// Load training rows from CSV instead of generating them.
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            classes: 10,
            dim: 10,
            per_class: 100,
            test_per_class: 50,
            cluster_spread: 1.0,
            train_csv: None,
            test_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: AlgorithmKind,
    /// Ole coefficient; ignored (treated as 0) by non-Ole algorithms.
    pub beta: f64,
    pub seed: u64,
    pub rounds: usize,
    pub local_steps: usize,
    pub clients: usize,
    /// Fraction of clients sampled per round by centralized algorithms.
    pub participation: f64,
    pub eval_every: usize,
    /// Record the per-step update energies V1 and V2.
    pub diagnostics: bool,
    /// Standard deviation of per-client Gaussian offsets added to the shared
    /// starting point; 0 keeps every client at the same start.
    pub init_jitter: f64,
    /// Accuracy targets for the rounds-to-target summary.
    pub targets: Vec<f64>,
    pub topology: TopologyConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub partition: PartitionScheme,
    pub optimizer: OptimizerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: AlgorithmKind::OledSgd,
            beta: 0.99,
            seed: 0,
            rounds: 500,
            local_steps: 5,
            clients: 100,
            participation: 0.1,
            eval_every: 1,
            diagnostics: false,
            init_jitter: 0.0,
            targets: vec![0.5, 0.6, 0.7, 0.8],
            topology: TopologyConfig::default(),
            model: ModelConfig::default(),
            data: DataConfig::default(),
            partition: PartitionScheme::Dirichlet { alpha: 0.3 },
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text, applies `key=value` overrides, and validates.
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(error_key(&e), e.message().to_string()))?;
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(error_key(&e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta < 1.0) {
            return Err(Error::config("beta", format!("beta must be < 1 (got {})", self.beta)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config("beta", format!("beta must be >= 0 (got {})", self.beta)));
        }
        if self.clients == 0 {
            return Err(Error::config("clients", "need at least one client"));
        }
        if self.local_steps == 0 {
            return Err(Error::config("local_steps", "need at least one local step"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::config("participation", "must be in (0, 1]"));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(Error::config("init_jitter", "must be non-negative"));
        }
        if self.targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::config("targets", "accuracy targets must lie in [0, 1]"));
        }
        if !self.algorithm.is_central() && self.clients >= 2 {
            self.topology_spec()
                .validate()
                .map_err(|e| Error::config("topology", e.to_string()))?;
        }
        match self.model.kind {
            ModelKind::Quadratic if self.model.dim == 0 => {
                return Err(Error::config("model.dim", "must be at least 1"));
            }
            ModelKind::Mlp if self.model.hidden.contains(&0) => {
                return Err(Error::config("model.hidden", "hidden widths must be positive"));
            }
            _ => {}
        }
        if !(self.model.heterogeneity >= 0.0) {
            return Err(Error::config("model.heterogeneity", "must be non-negative"));
        }
        self.optimizer.validate()
    }

    pub fn topology_seed(&self) -> u64 {
        self.topology
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, &[stream::TOPOLOGY]))
    }

    pub fn topology_spec(&self) -> TopologySpec {
        TopologySpec {
            kind: self.topology.kind,
            m: self.clients,
            k: self.topology.k,
            seed: self.topology_seed(),
        }
    }

    /// Ole coefficient actually applied.
    pub fn effective_beta(&self) -> f64 {
        if self.algorithm.uses_ole() {
            self.beta
        } else {
            0.0
        }
    }

    /// D-PSGD takes a single local step per round.
    pub fn effective_local_steps(&self) -> usize {
        if self.algorithm == AlgorithmKind::DPsgd {
            1
        } else {
            self.local_steps
        }
    }

    pub fn effective_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            method: self.algorithm.local_method(),
            ..self.optimizer
        }
    }

    /// Clients sampled per round by centralized algorithms.
    pub fn participants_per_round(&self) -> usize {
        ((self.participation * self.clients as f64).ceil() as usize).clamp(1, self.clients)
    }
}

fn error_key(e: &toml::de::Error) -> String {
    // serde messages name the field in backticks; fall back to the document.
    let msg = e.message();
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<config>".into())
}

/// Sets `a.b.c = value`, creating intermediate tables. The value is parsed
/// as a TOML literal, or taken as a plain string when that fails.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed override key"));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, path) = parts.split_last().expect("non-empty");
    let mut cursor = table;
    for part in path {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a table")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

/// Splits `KEY=VALUE`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(s, "override must look like KEY=VALUE"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

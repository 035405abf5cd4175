//! Communication graphs and their gossip matrices.
//!
//! Every topology is turned into a symmetric doubly-stochastic matrix with
//! Metropolis weights `w_ij = 1 / (1 + max(deg_i, deg_j))` on edges and the
//! remaining mass on the diagonal. The spectral quantity of interest is
//! `psi = max(|lambda_2|, |lambda_m|)`, the second largest eigenvalue modulus.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, stream_rng};

const RANDOM_K_RETRIES: usize = 32;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Ring,
    Grid,
    Exponential,
    FullyConnected,
    RandomK,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 5] = [
        TopologyKind::Ring,
        TopologyKind::Grid,
        TopologyKind::Exponential,
        TopologyKind::FullyConnected,
        TopologyKind::RandomK,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Grid => "grid",
            TopologyKind::Exponential => "exponential",
            TopologyKind::FullyConnected => "fully-connected",
            TopologyKind::RandomK => "random-k",
        }
    }

    /// Asymptotic psi reported in the literature for each graph family,
    /// for display next to the computed value.
    pub fn asymptotic_psi(self) -> &'static str {
        match self {
            TopologyKind::FullyConnected => "0",
            TopologyKind::Exponential => "1 - 2/(1 + ln m)",
            TopologyKind::Grid => "1 - 1/(m ln m)",
            TopologyKind::Ring => "1 - 16 pi^2/(3 m^2)",
            TopologyKind::RandomK => "n/a",
        }
    }

    /// Whether a fresh graph is drawn every round.
    pub fn is_time_varying(self) -> bool {
        self == TopologyKind::RandomK
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ring" => Ok(TopologyKind::Ring),
            "grid" => Ok(TopologyKind::Grid),
            "exponential" | "exp" => Ok(TopologyKind::Exponential),
            "fully-connected" | "full" | "fullyconnected" => Ok(TopologyKind::FullyConnected),
            "random-k" | "random" | "randomk" => Ok(TopologyKind::RandomK),
            other => Err(Error::Topology(format!("unknown topology kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub m: usize,
    /// Partners drawn per node; RandomK only.
    pub k: usize,
    /// Graph seed; RandomK only.
    pub seed: u64,
}

impl TopologySpec {
    pub fn new(kind: TopologyKind, m: usize) -> Self {
        TopologySpec { kind, m, k: 0, seed: 0 }
    }

    pub fn random_k(m: usize, k: usize, seed: u64) -> Self {
        TopologySpec {
            kind: TopologyKind::RandomK,
            m,
            k,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Topology(format!(
                "at least 2 clients required, got m={}",
                self.m
            )));
        }
        match self.kind {
            TopologyKind::Grid if perfect_square_root(self.m).is_none() => Err(Error::Topology(format!(
                "grid: perfect square required, got m={}",
                self.m
            ))),
            TopologyKind::RandomK if self.k == 0 || self.k >= self.m => Err(Error::Topology(format!(
                "random-k: need 1 <= k < m, got k={} m={}",
                self.k, self.m
            ))),
            _ => Ok(()),
        }
    }

    /// Topology used in round `round`: time-varying kinds get a per-round seed,
    /// static kinds are returned unchanged.
    pub fn for_round(&self, round: usize) -> TopologySpec {
        if self.kind.is_time_varying() {
            TopologySpec {
                seed: derive_seed(self.seed, &[stream::TOPOLOGY, round as u64]),
                ..*self
            }
        } else {
            *self
        }
    }
}

fn perfect_square_root(m: usize) -> Option<usize> {
    let r = (m as f64).sqrt().round() as usize;
    (r * r == m).then_some(r)
}

/// Undirected simple graph as sorted neighbor lists (no self loops).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    /// Builds the graph from an arbitrary edge list; duplicates and self
    /// loops are dropped and every edge is made bidirectional.
    pub fn from_edges(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut present = vec![false; m * m];
        for (i, j) in edges {
            if i != j {
                present[i * m + j] = true;
                present[j * m + i] = true;
            }
        }
        let neighbors = (0..m)
            .map(|i| (0..m).filter(|&j| present[i * m + j]).collect())
            .collect();
        Adjacency { neighbors }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn is_connected(&self) -> bool {
        let m = self.len();
        if m == 0 {
            return true;
        }
        let mut seen = vec![false; m];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == m
    }
}

/// Graph of a static topology kind.
pub fn adjacency(spec: &TopologySpec) -> Result<Adjacency> {
    spec.validate()?;
    let m = spec.m;
    let adj = match spec.kind {
        TopologyKind::Ring => Adjacency::from_edges(m, (0..m).flat_map(|i| [(i, (i + 1) % m), (i, (i + m - 1) % m)])),
        TopologyKind::Grid => {
            let side = perfect_square_root(m).expect("validated");
            let id = |r: usize, c: usize| (r % side) * side + (c % side);
            Adjacency::from_edges(
                m,
                (0..side).flat_map(|r| {
                    (0..side).flat_map(move |c| {
                        [
                            (id(r, c), id(r + 1, c)),
                            (id(r, c), id(r + side - 1, c)),
                            (id(r, c), id(r, c + 1)),
                            (id(r, c), id(r, c + side - 1)),
                        ]
                    })
                }),
            )
        }
        TopologyKind::Exponential => {
            let hops: Vec<usize> = (0..usize::BITS).map(|j| 1usize << j).take_while(|&h| h < m).collect();
            Adjacency::from_edges(
                m,
                (0..m).flat_map(|i| {
                    hops.iter()
                        .flat_map(move |&h| [(i, (i + h) % m), (i, (i + m - h % m) % m)])
                }),
            )
        }
        TopologyKind::FullyConnected => Adjacency::from_edges(m, (0..m).flat_map(|i| (0..m).map(move |j| (i, j)))),
        TopologyKind::RandomK => random_k_adjacency(m, spec.k, spec.seed)?,
    };
    Ok(adj)
}

/// Every node draws `k` distinct partners uniformly at random; an edge
/// exists if either endpoint drew it. Disconnected draws are redrawn with
/// the next sub-seed.
pub fn random_k_adjacency(m: usize, k: usize, round_seed: u64) -> Result<Adjacency> {
    if k == 0 || k >= m {
        return Err(Error::Topology(format!("random-k: need 1 <= k < m, got k={k} m={m}")));
    }
    for attempt in 0..RANDOM_K_RETRIES {
        let mut rng = stream_rng(round_seed, &[stream::TOPOLOGY, attempt as u64]);
        let mut edges = Vec::with_capacity(m * k);
        for i in 0..m {
            for p in index::sample(&mut rng, m - 1, k) {
                let j = if p >= i { p + 1 } else { p };
                edges.push((i, j));
            }
        }
        let adj = Adjacency::from_edges(m, edges);
        if adj.is_connected() {
            return Ok(adj);
        }
    }
    Err(Error::Disconnected {
        m,
        k,
        retries: RANDOM_K_RETRIES,
    })
}

/// Symmetric doubly-stochastic gossip matrix with its cached spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    m: usize,
    w: Vec<f64>,
    /// Eigenvalues in descending order.
    eigenvalues: Vec<f64>,
    psi: f64,
}

impl MixingMatrix {
    /// Metropolis weights over a connected graph.
    pub fn metropolis(adj: &Adjacency) -> Result<Self> {
        let m = adj.len();
        if !adj.is_connected() {
            return Err(Error::Topology("graph is not connected".into()));
        }
        let mut w = vec![0.0; m * m];
        for i in 0..m {
            for &j in adj.neighbors(i) {
                w[i * m + j] = 1.0 / (1 + adj.degree(i).max(adj.degree(j))) as f64;
            }
        }
        for i in 0..m {
            let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[i * m + j]).sum();
            w[i * m + i] = 1.0 - off;
        }
        Self::from_dense(m, w)
    }

    /// The 1x1 matrix `[1]`, for single-client runs.
    pub fn single() -> Self {
        MixingMatrix {
            m: 1,
            w: vec![1.0],
            eigenvalues: vec![1.0],
            psi: 0.0,
        }
    }

    fn from_dense(m: usize, w: Vec<f64>) -> Result<Self> {
        let eigenvalues = symmetric_eigenvalues(m, &w)?;
        let psi = second_modulus(&eigenvalues);
        Ok(MixingMatrix { m, w, eigenvalues, psi })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.m..(i + 1) * self.m]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }
}

pub fn build_mixing(spec: &TopologySpec) -> Result<MixingMatrix> {
    MixingMatrix::metropolis(&adjacency(spec)?)
}

/// Recomputes psi from scratch by symmetric eigen-decomposition.
pub fn spectral_gap(w: &MixingMatrix) -> Result<f64> {
    Ok(second_modulus(&symmetric_eigenvalues(w.m, &w.w)?))
}

/// Eigenvalues of a symmetric row-major matrix, sorted descending.
pub fn symmetric_eigenvalues(m: usize, entries: &[f64]) -> Result<Vec<f64>> {
    let mat = DMatrix::from_row_slice(m, m, entries);
    let eig = SymmetricEigen::try_new(mat, f64::EPSILON, EIGEN_MAX_ITER).ok_or(Error::EigenFailure)?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

fn second_modulus(desc: &[f64]) -> f64 {
    match desc.len() {
        0 | 1 => 0.0,
        n => desc[1].abs().max(desc[n - 1].abs()),
    }
}

/// `(1 + beta) W - beta I`: the matrix that opposite-lookahead mixing is
/// equivalent to. Entries may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedMatrix {
    m: usize,
    w: Vec<f64>,
    psi_tilde: f64,
}

impl ModifiedMatrix {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn psi_tilde(&self) -> f64 {
        self.psi_tilde
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.m + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }
}

pub fn chebyshev_modified(w: &MixingMatrix, beta: f64) -> Result<ModifiedMatrix> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid("beta", format!("beta must be in [0, 1), got {beta}")));
    }
    let m = w.m;
    let mut out: Vec<f64> = w.w.iter().map(|v| (1.0 + beta) * v).collect();
    for i in 0..m {
        out[i * m + i] -= beta;
    }
    // The principal eigenvalue 1 maps to itself; only the rest matter.
    let psi_tilde = w.eigenvalues[1.min(m)..]
        .iter()
        .map(|&l| ((1.0 + beta) * l - beta).abs())
        .fold(0.0, f64::max);
    Ok(ModifiedMatrix { m, w: out, psi_tilde })
}

/// Largest Ole coefficient admitted by the convergence analysis:
/// `min(sqrt(10) (1 - psi) / 40, sqrt(5) / 30)`. Diagnostic only.
pub fn beta_theory_bound(psi: f64) -> f64 {
    (10f64.sqrt() * (1.0 - psi) / 40.0).min(5f64.sqrt() / 30.0)
}

//! Labeled datasets and their partitioning across clients.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, StreamRng};

const CLUSTER_RADIUS: f64 = 2.0;
const PATHOLOGICAL_MAX_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    dim: usize,
    num_classes: usize,
    /// Row-major `n x dim`.
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        num_classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Data(format!(
                "feature buffer has {} values, expected {} rows x {} columns",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            name: name.into(),
            dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Overwrites one sample in place.
    pub fn replace_row(&mut self, i: usize, features: &[f64], label: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::invalid("row", format!("{i} out of range ({} rows)", self.len())));
        }
        if features.len() != self.dim {
            return Err(Error::invalid(
                "features",
                format!("expected {} values, got {}", self.dim, features.len()),
            ));
        }
        if label >= self.num_classes {
            return Err(Error::invalid(
                "label",
                format!("{label} >= {} classes", self.num_classes),
            ));
        }
        self.features[i * self.dim..(i + 1) * self.dim].copy_from_slice(features);
        self.labels[i] = label;
        Ok(())
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Gaussian class clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub cluster_spread: f64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("classes", "need at least 2 classes"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim", "need at least 1 feature"));
        }
        if self.per_class == 0 {
            return Err(Error::invalid("per_class", "need at least 1 sample per class"));
        }
        if !(self.cluster_spread >= 0.0) {
            return Err(Error::invalid("cluster_spread", "must be non-negative"));
        }
        Ok(())
    }

    fn centers(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, &[stream::TRAIN_DATA, 0]);
        (0..self.classes)
            .map(|_| {
                let mut v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut v {
                    *x *= CLUSTER_RADIUS / norm;
                }
                v
            })
            .collect()
    }

    fn sample(&self, centers: &[Vec<f64>], per_class: usize, rng: &mut StreamRng) -> (Vec<f64>, Vec<usize>) {
        let mut features = Vec::with_capacity(self.classes * per_class * self.dim);
        let mut labels = Vec::with_capacity(self.classes * per_class);
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                for &mu in center {
                    let z: f64 = rng.sample(StandardNormal);
                    features.push(mu + self.cluster_spread * z);
                }
                labels.push(c);
            }
        }
        (features, labels)
    }
}

/// `classes` isotropic Gaussian clusters with means on the radius-2 sphere,
/// `per_class` samples each, ordered by class.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let centers = spec.centers(seed);
    let mut rng = stream_rng(seed, &[stream::TRAIN_DATA, 1]);
    let (features, labels) = spec.sample(&centers, spec.per_class, &mut rng);
    LabeledDataset::new("synthetic", spec.dim, spec.classes, features, labels)
}

/// Training set as [`generate_synthetic`] plus a held-out set drawn from the
/// same clusters with an independent noise stream.
pub fn generate_synthetic_with_test(
    spec: &SyntheticSpec,
    test_per_class: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = generate_synthetic(spec, seed)?;
    if test_per_class == 0 {
        return Err(Error::invalid(
            "test_per_class",
            "need at least 1 test sample per class",
        ));
    }
    let centers = spec.centers(seed);
    let mut rng = stream_rng(seed, &[stream::TEST_DATA]);
    let (features, labels) = spec.sample(&centers, test_per_class, &mut rng);
    let test = LabeledDataset::new("synthetic-test", spec.dim, spec.classes, features, labels)?;
    Ok((train, test))
}

/// Reads `f1,...,fd,label` rows after a one-line header.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;

    let mut dim = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(path, row, e))?;
        let bad = |msg: String| Error::Csv {
            path: path.to_path_buf(),
            row,
            msg,
        };
        if record.len() < 2 {
            return Err(bad(format!("expected at least 2 columns, got {}", record.len())));
        }
        let d = record.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expect) if expect != d => {
                return Err(bad(format!(
                    "inconsistent column count: expected {}, got {}",
                    expect + 1,
                    d + 1
                )))
            }
            Some(_) => {}
        }
        for field in record.iter().take(d) {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(format!("cannot parse feature `{field}`")))?;
            features.push(v);
        }
        let raw = &record[d];
        let label: i64 = raw.parse().map_err(|_| bad(format!("cannot parse label `{raw}`")))?;
        if label < 0 {
            return Err(bad(format!("negative label {label}")));
        }
        labels.push(label as usize);
    }
    let Some(dim) = dim else {
        return Err(Error::Data(format!("{}: empty dataset", path.display())));
    };
    let num_classes = labels.iter().max().map_or(0, |&l| l + 1);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(name, dim, num_classes, features, labels)
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(format!("reading {}", path.display()), source),
        other => Error::Csv {
            path: path.to_path_buf(),
            row,
            msg: format!("{other:?}"),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum PartitionScheme {
    Iid,
    Dirichlet { alpha: f64 },
    Pathological { classes_per_client: usize },
}

/// Disjoint per-client row index lists covering the whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub seed: u64,
    pub assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.assignments[client]
    }

    /// Label histogram of one client.
    pub fn class_histogram(&self, ds: &LabeledDataset, client: usize) -> Vec<usize> {
        let mut counts = vec![0; ds.num_classes()];
        for &r in &self.assignments[client] {
            counts[ds.label(r)] += 1;
        }
        counts
    }

    /// JSON audit export (`client -> indices`).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

pub fn partition(ds: &LabeledDataset, m: usize, scheme: PartitionScheme, seed: u64) -> Result<PartitionPlan> {
    match scheme {
        PartitionScheme::Iid => partition_iid(ds, m, seed),
        PartitionScheme::Dirichlet { alpha } => partition_dirichlet(ds, m, alpha, seed),
        PartitionScheme::Pathological { classes_per_client } => partition_pathological(ds, m, classes_per_client, seed),
    }
}

fn check_clients(ds: &LabeledDataset, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("clients", "need at least one client"));
    }
    if ds.len() < m {
        return Err(Error::Data(format!(
            "dataset has {} rows, cannot give each of {m} clients a sample",
            ds.len()
        )));
    }
    Ok(())
}

/// Global shuffle, then round-robin.
pub fn partition_iid(ds: &LabeledDataset, m: usize, seed: u64) -> Result<PartitionPlan> {
    check_clients(ds, m)?;
    let mut rng = stream_rng(seed, &[stream::PARTITION, 0]);
    let mut rows: Vec<usize> = (0..ds.len()).collect();
    rows.shuffle(&mut rng);
    let mut assignments = vec![Vec::with_capacity(ds.len() / m + 1); m];
    for (pos, r) in rows.into_iter().enumerate() {
        assignments[pos % m].push(r);
    }
    Ok(PartitionPlan {
        scheme: PartitionScheme::Iid,
        seed,
        assignments,
    })
}

fn dirichlet_draw(rng: &mut StreamRng, gamma: &Gamma<f64>, m: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        // All draws can underflow to zero for very small alpha.
        if total > 0.0 && total.is_finite() {
            return g.into_iter().map(|v| v / total).collect();
        }
    }
}

/// Splits `n` items by `shares` using largest-remainder rounding; ties in
/// the fractional part go to the lower client index.
fn largest_remainder(shares: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per class, shares `p ~ Dir(alpha)` over clients; samples split by
/// largest remainder. Empty clients then take one sample from the largest.
pub fn partition_dirichlet(ds: &LabeledDataset, m: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", format!("must be positive, got {alpha}")));
    }
    check_clients(ds, m)?;
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid("alpha", e.to_string()))?;
    let mut rng = stream_rng(seed, &[stream::PARTITION, 1]);
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); m];
    for c in 0..ds.num_classes() {
        let mut rows: Vec<usize> = (0..ds.len()).filter(|&r| ds.label(r) == c).collect();
        if rows.is_empty() {
            continue;
        }
        rows.shuffle(&mut rng);
        let shares = dirichlet_draw(&mut rng, &gamma, m);
        let mut start = 0;
        for (client, count) in largest_remainder(&shares, rows.len()).into_iter().enumerate() {
            assignments[client].extend_from_slice(&rows[start..start + count]);
            start += count;
        }
    }
    while let Some(empty) = assignments.iter().position(Vec::is_empty) {
        let donor = (0..m)
            .max_by(|&a, &b| assignments[a].len().cmp(&assignments[b].len()).then(b.cmp(&a)))
            .expect("m >= 1");
        let row = assignments[donor].pop().expect("n >= m guarantees a donor");
        assignments[empty].push(row);
    }
    Ok(PartitionPlan {
        scheme: PartitionScheme::Dirichlet { alpha },
        seed,
        assignments,
    })
}

/// Every client owns exactly `classes_per_client` classes; each class is
/// divided evenly among its owners. Class draws are repeated until every
/// class has at least one owner and no more owners than samples.
pub fn partition_pathological(
    ds: &LabeledDataset,
    m: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    let c = ds.num_classes();
    if classes_per_client == 0 || classes_per_client > c {
        return Err(Error::invalid(
            "classes_per_client",
            format!("need 1 <= classes_per_client <= {c}, got {classes_per_client}"),
        ));
    }
    check_clients(ds, m)?;
    if m * classes_per_client < c {
        return Err(Error::invalid(
            "classes_per_client",
            format!("infeasible: {m} clients x {classes_per_client} classes cannot cover {c} classes"),
        ));
    }
    if m * classes_per_client > ds.len() {
        return Err(Error::invalid(
            "classes_per_client",
            format!(
                "infeasible: {m} clients x {classes_per_client} classes exceed {} samples",
                ds.len()
            ),
        ));
    }
    let counts = ds.class_counts();
    let mut rng = stream_rng(seed, &[stream::PARTITION, 2]);
    let mut owned: Vec<Vec<usize>> = Vec::new();
    for _ in 0..PATHOLOGICAL_MAX_DRAWS {
        owned = (0..m)
            .map(|_| {
                let mut v = index::sample(&mut rng, c, classes_per_client).into_vec();
                v.sort_unstable();
                v
            })
            .collect();
        let mut holders = vec![0usize; c];
        owned.iter().flatten().for_each(|&k| holders[k] += 1);
        if holders.iter().zip(&counts).all(|(&h, &n)| h >= 1 && h <= n) {
            break;
        }
        owned.clear();
    }
    if owned.is_empty() {
        return Err(Error::Data(
            "could not draw a class assignment covering every class within its sample count".into(),
        ));
    }

    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); m];
    for class in 0..c {
        let holders: Vec<usize> = (0..m).filter(|&i| owned[i].contains(&class)).collect();
        let mut rows: Vec<usize> = (0..ds.len()).filter(|&r| ds.label(r) == class).collect();
        rows.shuffle(&mut rng);
        let base = rows.len() / holders.len();
        let extra = rows.len() % holders.len();
        let mut start = 0;
        for (h, &client) in holders.iter().enumerate() {
            let count = base + usize::from(h < extra);
            assignments[client].extend_from_slice(&rows[start..start + count]);
            start += count;
        }
    }
    Ok(PartitionPlan {
        scheme: PartitionScheme::Pathological { classes_per_client },
        seed,
        assignments,
    })
}

/// Mean over clients of the total-variation distance between the client's
/// label distribution and the global one.
pub fn mean_label_tv(ds: &LabeledDataset, plan: &PartitionPlan) -> f64 {
    let n = ds.len() as f64;
    let global: Vec<f64> = ds.class_counts().iter().map(|&k| k as f64 / n).collect();
    let total: f64 = (0..plan.clients())
        .map(|i| {
            let hist = plan.class_histogram(ds, i);
            let size = plan.shard(i).len() as f64;
            0.5 * hist
                .iter()
                .zip(&global)
                .map(|(&h, g)| (h as f64 / size - g).abs())
                .sum::<f64>()
        })
        .sum();
    total / plan.clients() as f64
}

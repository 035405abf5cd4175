#![allow(dead_code)]

use dgossip::ExperimentConfig;

/// Cyclic Jacobi eigenvalues of a dense symmetric row-major matrix,
/// ascending. Kept independent of the library's solver.
pub fn jacobi_eigenvalues(n: usize, entries: &[f64]) -> Vec<f64> {
    let mut a = entries.to_vec();
    let total: f64 = a.iter().map(|v| v * v).sum();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
        }
        if off <= 1e-30 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Largest absolute eigenvalue of a symmetric matrix, i.e. its operator norm.
pub fn symmetric_op_norm(n: usize, entries: &[f64]) -> f64 {
    jacobi_eigenvalues(n, entries)
        .into_iter()
        .fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn matmul(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Ring Metropolis matrix is circulant with weights 1/3: its spectrum is
/// `1/3 + 2/3 cos(2 pi k / m)`.
pub fn ring_psi_closed_form(m: usize) -> f64 {
    (1..m)
        .map(|k| (1.0 / 3.0 + 2.0 / 3.0 * (2.0 * std::f64::consts::PI * k as f64 / m as f64).cos()).abs())
        .fold(0.0, f64::max)
}

pub fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text, &[]).expect("test config parses")
}

pub const QUADRATIC_RING: &str = r#"
algorithm = "oled-sgd"
beta = 0.2
rounds = 300
local_steps = 5
clients = 16
targets = []
[topology]
kind = "ring"
[model]
kind = "quadratic"
dim = 10
heterogeneity = 1.0
[optimizer]
eta0 = 0.05
decay = 1.0
"#;

pub const LOGISTIC_DIRICHLET: &str = r#"
algorithm = "oled-sgd"
beta = 0.2
rounds = 200
local_steps = 5
clients = 16
[topology]
kind = "ring"
[model]
kind = "logistic"
[data]
classes = 4
dim = 10
per_class = 200
test_per_class = 100
[partition]
scheme = "dirichlet"
alpha = 0.3
"#;

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

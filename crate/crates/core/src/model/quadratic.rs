use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::param::ParamVec;
use crate::rng::{stream, stream_rng};

pub const CURVATURE_MIN: f64 = 0.5;
pub const CURVATURE_MAX: f64 = 2.0;

/// Client objectives `f_i(x) = x'A_i x / 2 - b_i'x` with known global optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTestbed {
    dim: usize,
    /// Row-major `dim x dim`, symmetric bit for bit.
    curvatures: Vec<Vec<f64>>,
    offsets: Vec<Vec<f64>>,
    optimum: Vec<f64>,
}

impl QuadraticTestbed {
    /// Builds a testbed from explicit client data and solves for the optimum.
    ///
    /// Panics on shape mismatch or a singular mean curvature.
    pub fn from_parts(dim: usize, curvatures: Vec<Vec<f64>>, offsets: Vec<Vec<f64>>) -> Self {
        assert_eq!(curvatures.len(), offsets.len());
        assert!(!curvatures.is_empty());
        let m = curvatures.len() as f64;
        let mut a_mean = DMatrix::<f64>::zeros(dim, dim);
        let mut b_mean = DVector::<f64>::zeros(dim);
        for (a, b) in curvatures.iter().zip(&offsets) {
            assert_eq!(a.len(), dim * dim);
            assert_eq!(b.len(), dim);
            a_mean += DMatrix::from_row_slice(dim, dim, a);
            b_mean += DVector::from_column_slice(b);
        }
        a_mean /= m;
        b_mean /= m;
        let optimum = a_mean
            .lu()
            .solve(&b_mean)
            .expect("mean curvature must be invertible")
            .iter()
            .copied()
            .collect();
        QuadraticTestbed {
            dim,
            curvatures,
            offsets,
            optimum,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clients(&self) -> usize {
        self.curvatures.len()
    }

    pub fn curvature(&self, client: usize) -> &[f64] {
        &self.curvatures[client]
    }

    pub fn offset(&self, client: usize) -> &[f64] {
        &self.offsets[client]
    }

    /// Minimizer of the client average.
    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    pub fn loss_and_grad(&self, client: usize, x: &[f64]) -> (f64, ParamVec) {
        let a = &self.curvatures[client];
        let b = &self.offsets[client];
        let p = self.dim;
        let ax: Vec<f64> = (0..p)
            .map(|i| a[i * p..(i + 1) * p].iter().zip(x).map(|(u, v)| u * v).sum())
            .collect();
        let xax: f64 = ax.iter().zip(x).map(|(u, v)| u * v).sum();
        let bx: f64 = b.iter().zip(x).map(|(u, v)| u * v).sum();
        let grad: Vec<f64> = ax.iter().zip(b).map(|(u, v)| u - v).collect();
        (0.5 * xax - bx, grad.into())
    }
}

fn random_orthogonal<R: Rng>(rng: &mut R, p: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// `A_i = Q_i D_i Q_i'` with spectrum in `[0.5, 2]` and
/// `b_i = b_bar + heterogeneity * delta_i` with `sum_i delta_i = 0`.
/// With `shared_curvature` every client gets the same `A`.
pub fn quadratic_testbed(
    m: usize,
    p: usize,
    heterogeneity: f64,
    shared_curvature: bool,
    seed: u64,
) -> QuadraticTestbed {
    assert!(m >= 1 && p >= 1);
    let mut rng = stream_rng(seed, &[stream::QUADRATIC]);
    let mut draw_curvature = || {
        let q = random_orthogonal(&mut rng, p);
        let d = DMatrix::from_diagonal(&DVector::from_fn(p, |_, _| {
            rng.random_range(CURVATURE_MIN..=CURVATURE_MAX)
        }));
        let a = &q * d * q.transpose();
        // Exact symmetry from the upper triangle.
        let mut out = vec![0.0; p * p];
        for i in 0..p {
            for j in i..p {
                let v = 0.5 * (a[(i, j)] + a[(j, i)]);
                out[i * p + j] = v;
                out[j * p + i] = v;
            }
        }
        out
    };
    let curvatures: Vec<Vec<f64>> = if shared_curvature {
        vec![draw_curvature(); m]
    } else {
        (0..m).map(|_| draw_curvature()).collect()
    };

    let b_bar: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let mut deltas: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for j in 0..p {
        let mean = deltas.iter().map(|d| d[j]).sum::<f64>() / m as f64;
        deltas.iter_mut().for_each(|d| d[j] -= mean);
    }
    let offsets = deltas
        .iter()
        .map(|d| b_bar.iter().zip(d).map(|(b, e)| b + heterogeneity * e).collect())
        .collect();
    QuadraticTestbed::from_parts(p, curvatures, offsets)
}

//! Gram-matrix burst suppression baselines: generalized max-pooling (GMP)
//! and democratic aggregation (DA).
//!
//! Both take the `n x n` self-similarity matrix of a set and return
//! per-element weights that make every element contribute evenly to the
//! aggregated vector. Building the gram matrix alone is `O(n^2 d)`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::set::{FeatureSet, WeightVector};

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_DA_ITERATIONS: usize = 10;
pub const DEFAULT_DA_TOL: f64 = 1e-2;

/// Which feature space a gram matrix was computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GramSource {
    #[default]
    Entangled,
    Identity,
    Variance,
}

/// Symmetric self-similarity matrix `G = f f^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    g: Array2<f64>,
    source: GramSource,
}

impl GramMatrix {
    pub fn from_matrix(g: Array2<f64>, source: GramSource) -> Result<Self> {
        let n = g.nrows();
        if n == 0 || g.ncols() != n {
            return Err(Error::Dimension(format!(
                "gram matrix must be square, got {:?}",
                g.dim()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (g[[i, j]], g[[j, i]]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::Validation("gram matrix has non-finite entries".into()));
                }
                if (a - b).abs() > 1e-9 {
                    return Err(Error::Validation(format!("gram matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { g, source })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.g.view()
    }

    pub fn source(&self) -> GramSource {
        self.source
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }
}

pub fn gram(set: &FeatureSet) -> GramMatrix {
    gram_of(set.features(), GramSource::Entangled)
}

pub fn gram_of(rows: ArrayView2<'_, f64>, source: GramSource) -> GramMatrix {
    let g = rows.dot(&rows.t());
    GramMatrix { g, source }
}

/// Solves `(G + ridge I) w = 1`, so each element has (nearly) unit dot product
/// with the weighted aggregate.
pub fn gmp_weights(g: &GramMatrix, ridge: f64) -> Result<WeightVector> {
    if !(ridge > 0.0) || !ridge.is_finite() {
        return Err(Error::Parameter(format!("ridge must be positive, got {ridge}")));
    }
    let n = g.n();
    let mut a = DMatrix::from_fn(n, n, |i, j| g.g[[i, j]]);
    for i in 0..n {
        a[(i, i)] += ridge;
    }
    let ones = DVector::from_element(n, 1.0);
    let w = match a.clone().cholesky() {
        Some(ch) => ch.solve(&ones),
        None => a
            .lu()
            .solve(&ones)
            .ok_or_else(|| Error::Numerical("GMP system is singular".into()))?,
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("GMP solution is not finite".into()));
    }
    WeightVector::new(Array1::from_iter(w.iter().copied()))
}

/// Outcome of the democratic-weight iteration.
#[derive(Debug, Clone)]
pub struct DaResult {
    pub weights: WeightVector,
    pub iterations: usize,
    pub converged: bool,
    /// Max relative deviation of `lambda_i (G lambda)_i` from its mean.
    pub spread: f64,
}

/// Democratic weights: `l > 0` with `l_i (G l)_i = 1` for every `i`.
///
/// This is the stationary point of the convex function
/// `phi(l) = l^T G l / 2 - sum_i ln l_i`. Starting from all-ones, each round
/// takes a Newton step on `phi` (Hessian `G + diag(1 / l^2)`, backtracked to
/// keep `l` positive and `phi` decreasing) and then applies the Sinkhorn
/// normalization `l <- l sqrt(n / l^T G l)`, the exact minimizer of `phi`
/// along `l`, which puts the mean of `l_i (G l)_i` at 1. The plain Sinkhorn
/// update `l_i <- l_i / sqrt(l_i (G l)_i)` oscillates once `G` has negative
/// entries; the Newton step does not.
///
/// Stops when the relative spread of `l_i (G l)_i` is within `tol`. Running
/// out of iterations is not an error: the best iterate is returned with
/// `converged = false`.
pub fn da_weights(g: &GramMatrix, iterations: usize, tol: f64) -> Result<DaResult> {
    if !(tol >= 0.0) {
        return Err(Error::Parameter(format!("tolerance must be >= 0, got {tol}")));
    }
    let gm = g.matrix();
    let n = g.n();
    let mut lambda = Array1::<f64>::ones(n);
    sinkhorn_rescale(gm, &mut lambda);
    let mut spread = democratic_spread(gm, &lambda);
    let mut best = (spread, lambda.clone());
    let mut done = 0;
    while done < iterations && !(spread <= tol) {
        let Some(step) = newton_step(gm, &lambda) else { break };
        let Some(next) = backtrack(gm, &lambda, &step) else {
            break;
        };
        lambda = next;
        sinkhorn_rescale(gm, &mut lambda);
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("democratic weights diverged".into()));
        }
        done += 1;
        spread = democratic_spread(gm, &lambda);
        if spread < best.0 {
            best = (spread, lambda.clone());
        }
    }
    Ok(DaResult {
        weights: WeightVector::new(best.1)?,
        iterations: done,
        converged: best.0 <= tol,
        spread: best.0,
    })
}

fn democratic_objective(g: ArrayView2<'_, f64>, lambda: &Array1<f64>) -> f64 {
    0.5 * lambda.dot(&g.dot(lambda)) - lambda.iter().map(|v| v.ln()).sum::<f64>()
}

fn sinkhorn_rescale(g: ArrayView2<'_, f64>, lambda: &mut Array1<f64>) {
    let energy = lambda.dot(&g.dot(lambda));
    if energy > 0.0 {
        *lambda *= (lambda.len() as f64 / energy).sqrt();
    }
}

fn newton_step(g: ArrayView2<'_, f64>, lambda: &Array1<f64>) -> Option<Array1<f64>> {
    let n = lambda.len();
    let gl = g.dot(lambda);
    let hess = DMatrix::from_fn(n, n, |i, j| {
        g[[i, j]] + if i == j { 1.0 / (lambda[i] * lambda[i]) } else { 0.0 }
    });
    let rhs = DVector::from_fn(n, |i, _| 1.0 / lambda[i] - gl[i]);
    let step = hess.cholesky()?.solve(&rhs);
    step.iter()
        .all(|v| v.is_finite())
        .then(|| Array1::from_iter(step.iter().copied()))
}

/// Largest step fraction `2^-m` that keeps every weight positive and
/// satisfies the Armijo condition on `phi`.
fn backtrack(g: ArrayView2<'_, f64>, lambda: &Array1<f64>, step: &Array1<f64>) -> Option<Array1<f64>> {
    let f0 = democratic_objective(g, lambda);
    let grad = g.dot(lambda) - lambda.mapv(|v| 1.0 / v);
    let slope = grad.dot(step);
    let mut t = 1.0;
    for _ in 0..60 {
        let next = lambda + &(step * t);
        if next.iter().all(|&v| v > 0.0) && democratic_objective(g, &next) <= f0 + 1e-4 * t * slope {
            return Some(next);
        }
        t *= 0.5;
    }
    None
}

/// `max_i |s_i - mean(s)| / mean(s)` for `s_i = l_i (G l)_i`; infinite when
/// the mean is not positive.
pub fn democratic_spread(g: ArrayView2<'_, f64>, lambda: &Array1<f64>) -> f64 {
    let s = lambda * &g.dot(lambda);
    let mean = s.mean().unwrap_or(0.0);
    if !(mean > 0.0) {
        return f64::INFINITY;
    }
    s.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / mean
}

//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Mat, Result};

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    (a - b).abs() / scale
}

/// Frobenius inner product.
pub fn frob_dot(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Largest singular triplet `(σ, u, v)` with `m v = σ u`.
///
/// Works on the Gram matrix of the smaller side, so thin and wide partial
/// products cost at most `min(r, c)³`.
pub fn top_singular(m: &Mat) -> (f64, DVector<f64>, DVector<f64>) {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return (0.0, DVector::zeros(r), DVector::zeros(c));
    }
    if r <= c {
        let gram = m * m.transpose();
        let (vals, vecs) = sorted_symmetric_eigen(&gram);
        let sigma = vals[0].max(0.0).sqrt();
        let u = vecs.column(0).into_owned();
        if sigma == 0.0 {
            return (0.0, u, unit_vector(c, 0));
        }
        let v = m.transpose() * &u / sigma;
        (sigma, u, v)
    } else {
        let gram = m.transpose() * m;
        let (vals, vecs) = sorted_symmetric_eigen(&gram);
        let sigma = vals[0].max(0.0).sqrt();
        let v = vecs.column(0).into_owned();
        if sigma == 0.0 {
            return (0.0, unit_vector(r, 0), v);
        }
        let u = m * &v / sigma;
        (sigma, u, v)
    }
}

/// Largest singular value.
pub fn sigma_max(m: &Mat) -> f64 {
    top_singular(m).0
}

pub(crate) fn unit_vector(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    if n > 0 {
        e[i] = 1.0;
    }
    e
}

/// Full symmetric eigendecomposition, eigenvalues in descending order with
/// eigenvectors as the matching columns.
pub fn sorted_symmetric_eigen(m: &Mat) -> (Vec<f64>, Mat) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Stopping rules for the top-eigenpair Krylov solver.
#[derive(Debug, Clone, Copy)]
pub struct KrylovOptions {
    /// Relative change of the Ritz value between checks.
    pub rel_tol: f64,
    /// Required `‖A v − λ v‖₂ ≤ residual_tol · λ`.
    pub residual_tol: f64,
    /// Budget of operator applications; `None` means `100 · n`.
    pub max_iters: Option<usize>,
    /// Krylov basis size before an explicit restart.
    pub max_basis: usize,
    /// Seed of the perturbation added to the all-ones start vector.
    pub seed: u64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            residual_tol: 1e-10,
            max_iters: None,
            max_basis: 80,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TopEigen {
    pub value: f64,
    pub vector: DVector<f64>,
    /// Second-largest Ritz value of the last Krylov basis, when it had one.
    pub second: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Deterministic start: all-ones plus a tiny seeded perturbation.
pub fn start_vector(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| 1.0 + 1e-6 * rng.random_range(-1.0..1.0))
}

/// Largest eigenpair of a symmetric PSD operator by Lanczos iteration with
/// full reorthogonalization and explicit restarts from the Ritz vector.
pub fn top_eigenpair<F>(n: usize, apply: F, opts: &KrylovOptions) -> Result<TopEigen>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if n == 0 {
        return Err(Error::Shape("operator of dimension zero".into()));
    }
    let budget = opts.max_iters.unwrap_or(100 * n).max(1);
    let basis_cap = opts.max_basis.clamp(1, n);
    let mut v = start_vector(n, opts.seed);
    v /= v.norm();
    let mut total = 0usize;
    let mut best: Option<TopEigen> = None;

    loop {
        let mut q: Vec<DVector<f64>> = Vec::with_capacity(basis_cap);
        let mut alpha: Vec<f64> = Vec::with_capacity(basis_cap);
        let mut beta: Vec<f64> = Vec::with_capacity(basis_cap);
        let mut current = v.clone();
        let mut ritz = (0.0, DVector::from_element(1, 1.0), None);
        let mut prev_theta = f64::NAN;

        for j in 0..basis_cap {
            let mut w = apply(&current);
            total += 1;
            let a = current.dot(&w);
            w.axpy(-a, &current, 1.0);
            if j > 0 {
                w.axpy(-beta[j - 1], &q[j - 1], 1.0);
            }
            q.push(current.clone());
            alpha.push(a);
            for _ in 0..2 {
                for qi in &q {
                    let c = qi.dot(&w);
                    w.axpy(-c, qi, 1.0);
                }
            }
            let b = w.norm();
            ritz = tridiagonal_top(&alpha, &beta);
            let theta: f64 = ritz.0;
            let s_last = ritz.1[j].abs();
            let estimate = b * s_last;
            let settled = (theta - prev_theta).abs() <= opts.rel_tol * theta.abs();
            prev_theta = theta;
            let scale = theta.abs().max(f64::MIN_POSITIVE);
            if b <= 1e-14 * scale || (estimate <= 0.1 * opts.residual_tol * scale && settled) {
                break;
            }
            if total >= budget {
                break;
            }
            beta.push(b);
            current = w / b;
        }

        let m = alpha.len();
        let mut y = DVector::zeros(n);
        for (qi, si) in q.iter().zip(ritz.1.iter().take(m)) {
            y.axpy(*si, qi, 1.0);
        }
        y /= y.norm();
        let ay = apply(&y);
        total += 1;
        let value = y.dot(&ay);
        let residual = (&ay - &y * value).norm();
        let candidate = TopEigen {
            value,
            vector: y.clone(),
            second: ritz.2,
            iterations: total,
            residual,
        };
        let ok = residual <= opts.residual_tol * value.abs() || residual == 0.0;
        if ok {
            return Ok(candidate);
        }
        let improved = best.as_ref().is_none_or(|b| candidate.residual < b.residual);
        if improved {
            best = Some(candidate);
        }
        if total >= budget {
            let b = best.expect("at least one restart ran");
            return Err(Error::Convergence {
                estimate: b.value,
                residual: b.residual,
                iterations: total,
            });
        }
        v = y;
    }
}

/// Top eigenpair and second eigenvalue of the symmetric tridiagonal matrix
/// with diagonal `alpha` and off-diagonal `beta`.
fn tridiagonal_top(alpha: &[f64], beta: &[f64]) -> (f64, DVector<f64>, Option<f64>) {
    let m = alpha.len();
    let mut t = Mat::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let (vals, vecs) = sorted_symmetric_eigen(&t);
    let second = vals.get(1).copied();
    (vals[0], vecs.column(0).into_owned(), second)
}

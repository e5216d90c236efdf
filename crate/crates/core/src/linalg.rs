//! Small dense solvers used by the coding and learning routines.

use nalgebra::{DMatrix, DVector};

/// Gram condition number above which the normal equations are abandoned.
pub const GRAM_COND_LIMIT: f64 = 1e12;

/// Least-squares solution of `min ||a c - b||`.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub coef: DVector<f64>,
    /// The normal equations were rejected and an orthogonal factorization used.
    pub used_fallback: bool,
    /// Numerical rank is below the column count; `coef` is the minimum-norm solution.
    pub rank_deficient: bool,
}

/// Solves via Cholesky on `aᵀa`, falling back to an SVD (minimum-norm)
/// solve when the Gram matrix is not positive definite or its condition
/// estimate exceeds [`GRAM_COND_LIMIT`].
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> LstsqSolution {
    let gram = a.tr_mul(a);
    let rhs = a.tr_mul(b);
    if let Some(chol) = gram.clone().cholesky() {
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..l.nrows() {
            let v = l[(i, i)].abs();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let cond = (hi / lo).powi(2);
        if cond.is_finite() && cond <= GRAM_COND_LIMIT {
            return LstsqSolution {
                coef: chol.solve(&rhs),
                used_fallback: false,
                rank_deficient: false,
            };
        }
    }
    svd_lstsq(a, b)
}

fn svd_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> LstsqSolution {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let rank = svd.rank(eps);
    let coef = svd
        .solve(b, eps)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()));
    LstsqSolution {
        coef,
        used_fallback: true,
        rank_deficient: rank < a.ncols(),
    }
}

/// Power-iteration estimate of the largest eigenvalue of `dᵀd`
/// (the squared spectral norm of `d`).
pub fn spectral_norm_sq(d: &DMatrix<f64>, iterations: usize) -> f64 {
    let p = d.ncols();
    // fixed, non-degenerate start so the estimate is reproducible
    let mut v = DVector::from_fn(p, |i, _| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.7).sin());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w = d.tr_mul(&(d * &v));
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        lambda = n;
        v = w / n;
    }
    lambda
}

/// Leading singular triple `(u, s, v)` of `m`.
pub fn leading_singular_pair(m: &DMatrix<f64>) -> (DVector<f64>, f64, DVector<f64>) {
    let svd = m.clone().svd(true, true);
    let idx = svd.singular_values.imax();
    let u = svd.u.as_ref().expect("u requested").column(idx).into_owned();
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let v = v_t.row(idx).transpose();
    (u, svd.singular_values[idx], v)
}

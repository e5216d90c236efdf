//! Sparse coding: OMP for the ℓ0-constrained problem, accelerated proximal
//! gradient for the ℓ1-penalized one, and the per-sample losses built on them.

use nalgebra::{DMatrix, DVector, DVectorView};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::csv_text;
use crate::linalg::{lstsq, spectral_norm_sq};
use crate::model::{Dictionary, SampleSet, SparseCode};

/// Coefficients at or below this magnitude are not reported by the lasso.
pub const LASSO_ZERO: f64 = 1e-12;
pub const LASSO_DEFAULT_TOL: f64 = 1e-8;
pub const LASSO_DEFAULT_MAX_ITER: usize = 2000;
pub const POWER_ITERATIONS: usize = 50;

// OMP stops once the residual energy is this small relative to the signal.
const OMP_REL_RESIDUAL: f64 = 1e-24;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CodingStatus {
    /// The least-squares refit fell back to a minimum-norm solve.
    pub singular_fallback: bool,
    /// An iterative solver hit its iteration cap.
    pub not_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodingResult {
    pub code: SparseCode,
    /// `½ ||x - D γ||²`
    pub residual_sq: f64,
    pub status: CodingStatus,
}

/// The sparsity-promoting term of the coding objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// At most `s` nonzeros.
    L0Constrained { s: usize },
    /// `λ ||γ||₁`
    L1Penalized { lambda: f64 },
}

impl LossSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            LossSpec::L0Constrained { s } if s == 0 || s > dim => Err(Error::InvalidArgument(
                format!("ℓ0 budget s={s} must lie in [1, d={dim}]"),
            )),
            LossSpec::L1Penalized { lambda } if !(lambda > 0.0 && lambda.is_finite()) => Err(
                Error::InvalidArgument(format!("lambda must be positive, got {lambda}")),
            ),
            _ => Ok(()),
        }
    }

    /// Support budget, when the loss has one.
    pub fn budget(&self) -> Option<usize> {
        match *self {
            LossSpec::L0Constrained { s } => Some(s),
            LossSpec::L1Penalized { .. } => None,
        }
    }
}

fn residual(x: DVectorView<'_, f64>, d: &DMatrix<f64>, code: &SparseCode) -> DVector<f64> {
    let mut r = x.into_owned();
    for (&j, &v) in code.support().iter().zip(code.values()) {
        r.axpy(-v, &d.column(j), 1.0);
    }
    r
}

/// Index of the largest `|values[j]|` over `j` not excluded; lowest index on ties.
fn argmax_abs(values: &DVector<f64>, excluded: &[usize]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in values.iter().enumerate() {
        if excluded.contains(&j) {
            continue;
        }
        let a = v.abs();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((j, a));
        }
    }
    best
}

/// Orthogonal Matching Pursuit with budget `s`.
///
/// Each step adds the atom most correlated with the current residual (lowest
/// index on ties) and refits all selected coefficients by least squares.
/// Stops early once the residual vanishes.
pub fn omp(x: DVectorView<'_, f64>, dict: &Dictionary, s: usize) -> Result<CodingResult> {
    if x.len() != dict.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("signal of length {}", dict.dim()),
            actual: format!("length {}", x.len()),
        });
    }
    if s == 0 || s > dict.dim() {
        return Err(Error::InvalidArgument(format!(
            "OMP budget s={s} must lie in [1, d={}]",
            dict.dim()
        )));
    }
    Ok(omp_unchecked(x, dict.matrix(), s))
}

pub(crate) fn omp_unchecked(x: DVectorView<'_, f64>, d: &DMatrix<f64>, s: usize) -> CodingResult {
    let energy = x.norm_squared();
    let mut status = CodingStatus::default();
    let mut support: Vec<usize> = Vec::with_capacity(s);
    let mut coef = DVector::zeros(0);
    let mut r = x.into_owned();
    let floor = OMP_REL_RESIDUAL * energy;
    for _ in 0..s.min(d.ncols()) {
        if r.norm_squared() <= floor || energy == 0.0 {
            break;
        }
        let corr = d.tr_mul(&r);
        let Some((j, c)) = argmax_abs(&corr, &support) else {
            break;
        };
        if c * c <= floor {
            break;
        }
        support.push(j);
        let sub = d.select_columns(&support);
        let sol = lstsq(&sub, &x.into_owned());
        status.singular_fallback |= sol.rank_deficient;
        coef = sol.coef;
        r = x.into_owned() - &sub * &coef;
    }
    let pairs = support.iter().copied().zip(coef.iter().copied()).collect();
    let code = SparseCode::from_pairs(pairs).expect("OMP never selects an atom twice");
    CodingResult {
        code,
        residual_sq: 0.5 * r.norm_squared(),
        status,
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Approximate minimizer of `½||x - Dγ||² + λ||γ||₁`.
///
/// FISTA with step `1/L`, `L` a power-iteration estimate of `||D||₂²`, and a
/// function-value restart: whenever the accelerated step would increase the
/// objective, momentum is reset and a plain proximal step is taken instead,
/// so the objective never increases. Stops when the relative decrease falls
/// below `tol`.
pub fn lasso(
    x: DVectorView<'_, f64>,
    dict: &Dictionary,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<CodingResult> {
    if x.len() != dict.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("signal of length {}", dict.dim()),
            actual: format!("length {}", x.len()),
        });
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let lip = spectral_norm_sq(dict.matrix(), POWER_ITERATIONS);
    Ok(lasso_with_lipschitz(x, dict.matrix(), lambda, lip, tol, max_iter).0)
}

/// Lasso solve with a precomputed Lipschitz constant. Also returns the
/// objective after every iteration.
pub(crate) fn lasso_with_lipschitz(
    x: DVectorView<'_, f64>,
    d: &DMatrix<f64>,
    lambda: f64,
    lipschitz: f64,
    tol: f64,
    max_iter: usize,
) -> (CodingResult, Vec<f64>) {
    let p = d.ncols();
    let x = x.into_owned();
    let dtx = d.tr_mul(&x);
    let objective = |g: &DVector<f64>| -> f64 {
        0.5 * (&x - d * g).norm_squared() + lambda * g.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut lip = lipschitz.max(f64::MIN_POSITIVE);
    let prox_step = |y: &DVector<f64>, lip: f64| -> DVector<f64> {
        // gradient of the smooth part: Dᵀ(Dy - x)
        let grad = d.tr_mul(&(d * y)) - &dtx;
        DVector::from_fn(p, |i, _| soft_threshold(y[i] - grad[i] / lip, lambda / lip))
    };

    let mut gamma = DVector::zeros(p);
    let mut f_prev = objective(&gamma);
    let mut y = gamma.clone();
    let mut t = 1.0f64;
    let mut trace = vec![f_prev];
    let mut converged = false;
    for _ in 0..max_iter {
        let mut next = prox_step(&y, lip);
        let mut f_next = objective(&next);
        if f_next > f_prev {
            // restart from the last iterate with a plain proximal step
            t = 1.0;
            next = prox_step(&gamma, lip);
            f_next = objective(&next);
            while f_next > f_prev * (1.0 + 1e-15) + 1e-300 && lip < 1e300 {
                // the power-iteration estimate can sit slightly below ||D||²
                lip *= 2.0;
                next = prox_step(&gamma, lip);
                f_next = objective(&next);
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &gamma) * ((t - 1.0) / t_next);
        t = t_next;
        let decrease = f_prev - f_next;
        gamma = next;
        trace.push(f_next);
        let rel = decrease / f_prev.max(f64::MIN_POSITIVE);
        f_prev = f_next;
        if rel >= 0.0 && rel < tol {
            converged = true;
            break;
        }
    }
    let pairs = gamma
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > LASSO_ZERO)
        .map(|(j, &v)| (j, v))
        .collect();
    let code = SparseCode::from_pairs(pairs).expect("indices are increasing");
    let r = residual(x.as_view(), d, &code);
    let result = CodingResult {
        code,
        residual_sq: 0.5 * r.norm_squared(),
        status: CodingStatus {
            singular_fallback: false,
            not_converged: !converged,
        },
    };
    (result, trace)
}

/// Exact best single-atom loss `½ min_j ||x - D_j (D_jᵀx)||²` and the
/// minimizing atom (lowest index on ties).
pub fn loss_f1_exact(x: DVectorView<'_, f64>, d: &DMatrix<f64>) -> (f64, usize) {
    let corr = d.tr_mul(&x);
    let (j, _) = argmax_abs(&corr, &[]).expect("dictionary has at least one atom");
    let mut r = x.into_owned();
    r.axpy(-corr[j], &d.column(j), 1.0);
    (0.5 * r.norm_squared(), j)
}

/// `f^[s]`: exact for `s = 1`; OMP (an upper bound on the infimum) otherwise.
pub fn loss_fs(x: DVectorView<'_, f64>, dict: &Dictionary, s: usize) -> Result<f64> {
    if s == 0 || s > dict.dim() {
        return Err(Error::InvalidArgument(format!(
            "s={s} must lie in [1, d={}]",
            dict.dim()
        )));
    }
    if x.len() != dict.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("signal of length {}", dict.dim()),
            actual: format!("length {}", x.len()),
        });
    }
    Ok(loss_fs_unchecked(x, dict.matrix(), s))
}

pub(crate) fn loss_fs_unchecked(x: DVectorView<'_, f64>, d: &DMatrix<f64>, s: usize) -> f64 {
    if s == 1 {
        loss_f1_exact(x, d).0
    } else {
        omp_unchecked(x, d, s).residual_sq
    }
}

/// Codes every sample under `spec`, in sample order.
pub fn code_batch(samples: &SampleSet, dict: &Dictionary, spec: LossSpec) -> Result<Vec<CodingResult>> {
    check_batch(samples, dict, spec)?;
    Ok(code_columns(samples.signals(), dict.matrix(), spec))
}

pub(crate) fn code_columns(x: &DMatrix<f64>, d: &DMatrix<f64>, spec: LossSpec) -> Vec<CodingResult> {
    match spec {
        LossSpec::L0Constrained { s } => (0..x.ncols())
            .into_par_iter()
            .map(|i| omp_unchecked(x.column(i), d, s))
            .collect(),
        LossSpec::L1Penalized { lambda } => {
            let lip = spectral_norm_sq(d, POWER_ITERATIONS);
            (0..x.ncols())
                .into_par_iter()
                .map(|i| {
                    lasso_with_lipschitz(
                        x.column(i),
                        d,
                        lambda,
                        lip,
                        LASSO_DEFAULT_TOL,
                        LASSO_DEFAULT_MAX_ITER,
                    )
                    .0
                })
                .collect()
        }
    }
}

fn check_batch(samples: &SampleSet, dict: &Dictionary, spec: LossSpec) -> Result<()> {
    if samples.dim() != dict.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("samples of dimension {}", dict.dim()),
            actual: format!("dimension {}", samples.dim()),
        });
    }
    spec.validate(dict.dim())
}

/// Per-sample loss `f_x(D)` under `spec`.
pub(crate) fn sample_losses(x: &DMatrix<f64>, d: &DMatrix<f64>, spec: LossSpec) -> Vec<f64> {
    match spec {
        LossSpec::L0Constrained { s } => (0..x.ncols())
            .into_par_iter()
            .map(|i| loss_fs_unchecked(x.column(i), d, s))
            .collect(),
        LossSpec::L1Penalized { lambda } => code_columns(x, d, spec)
            .into_iter()
            .map(|r| r.residual_sq + lambda * r.code.l1_norm())
            .collect(),
    }
}

/// `(1/n) Σ f_{x_i}(D)`.
pub fn empirical_risk(samples: &SampleSet, dict: &Dictionary, spec: LossSpec) -> Result<f64> {
    check_batch(samples, dict, spec)?;
    let losses = sample_losses(samples.signals(), dict.matrix(), spec);
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// CSV with header `sample_index,support,values,residual_sq`; support and
/// values are space-separated lists in support order.
pub fn coding_csv(results: &[CodingResult]) -> String {
    csv_text(
        "sample_index,support,values,residual_sq",
        results.iter().enumerate().map(|(i, r)| {
            let support: Vec<String> = r.code.support().iter().map(|j| j.to_string()).collect();
            let values: Vec<String> = r.code.values().iter().map(|v| format!("{v:.16e}")).collect();
            format!("{i},{},{},{:.16e}", support.join(" "), values.join(" "), r.residual_sq)
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_dictionary, sample_batch, CoeffDist, GenerativeModel};
    use proptest::prelude::*;

    fn identity(n: usize) -> Dictionary {
        Dictionary::new(DMatrix::identity(n, n)).unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    /// Exhaustive minimum of ½||x - D_S c||² over all supports of size `s`.
    fn brute_force(x: &DVector<f64>, d: &DMatrix<f64>, s: usize) -> f64 {
        fn rec(start: usize, p: usize, s: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == s {
                out.push(cur.clone());
                return;
            }
            for j in start..p {
                cur.push(j);
                rec(j + 1, p, s, cur, out);
                cur.pop();
            }
        }
        let mut supports = Vec::new();
        rec(0, d.ncols(), s, &mut Vec::new(), &mut supports);
        supports
            .iter()
            .map(|sup| {
                let sub = d.select_columns(sup);
                // independent route: QR-based projection via SVD pseudo-inverse
                let pinv = sub.clone().pseudo_inverse(1e-12).unwrap();
                let c = pinv * x;
                0.5 * (x - sub * c).norm_squared()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn omp_identity_one_sparse() {
        let r = omp(v(&[0.0, 3.0, 0.0, 0.0]).as_view(), &identity(4), 1).unwrap();
        assert_eq!(r.code.support(), &[1]);
        assert_eq!(r.code.values(), &[3.0]);
        assert_eq!(r.residual_sq, 0.0);
    }

    #[test]
    fn omp_zero_signal() {
        let r = omp(DVector::zeros(4).as_view(), &identity(4), 2).unwrap();
        assert!(r.code.is_empty());
        assert_eq!(r.residual_sq, 0.0);
    }

    #[test]
    fn omp_rejects_bad_budget() {
        let d = identity(3);
        assert!(omp(v(&[1.0, 0.0, 0.0]).as_view(), &d, 0).is_err());
        assert!(omp(v(&[1.0, 0.0, 0.0]).as_view(), &d, 4).is_err());
        assert!(omp(v(&[1.0, 0.0]).as_view(), &d, 1).is_err());
    }

    #[test]
    fn omp_ties_pick_lowest_index() {
        let r = omp(v(&[1.0, 1.0, 0.0]).as_view(), &identity(3), 1).unwrap();
        assert_eq!(r.code.support(), &[0]);
    }

    #[test]
    fn omp_stops_early_on_exact_fit() {
        let r = omp(v(&[0.0, 2.0, 0.0]).as_view(), &identity(3), 3).unwrap();
        assert_eq!(r.code.len(), 1);
    }

    #[test]
    fn omp_skips_duplicate_atoms() {
        // two identical atoms plus e2; x needs both directions
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let d = Dictionary::new(m).unwrap();
        let r = omp(v(&[1.0, 0.5]).as_view(), &d, 2).unwrap();
        assert!(r.residual_sq < 1e-20);
        assert!(!r.status.singular_fallback);
    }

    #[test]
    fn omp_matches_brute_force_on_incoherent_sparse() {
        let d = gen_dictionary(8, 10, 4).unwrap();
        let model = GenerativeModel::new(d.clone(), 2, CoeffDist::StandardGaussian, 0.0).unwrap();
        let set = sample_batch(&model, 20, 1).unwrap();
        for i in 0..set.len() {
            let x = set.sample(i).into_owned();
            let r = omp(x.as_view(), &d, 2).unwrap();
            let best = brute_force(&x, d.matrix(), 2);
            assert!(r.residual_sq >= best - 1e-12);
        }
    }

    #[test]
    fn residual_sq_matches_definition() {
        let d = gen_dictionary(6, 9, 2).unwrap();
        let x = v(&[0.3, -1.0, 0.2, 0.5, 0.9, -0.4]);
        for s in 1..=4 {
            let r = omp(x.as_view(), &d, s).unwrap();
            let direct = 0.5 * (&x - d.apply(&r.code)).norm_squared();
            assert!((r.residual_sq - direct).abs() <= 1e-9 * direct.max(1e-300));
        }
    }

    #[test]
    fn lasso_large_lambda_gives_zero() {
        let d = gen_dictionary(5, 7, 1).unwrap();
        let x = v(&[1.0, -2.0, 0.5, 0.0, 0.3]);
        let lam = d.matrix().tr_mul(&x).amax();
        let r = lasso(x.as_view(), &d, lam, 1e-10, 100).unwrap();
        assert!(r.code.is_empty());
        assert!((r.residual_sq - 0.5 * x.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn lasso_identity_is_soft_threshold() {
        let r = lasso(v(&[2.0, 0.1]).as_view(), &identity(2), 1.0, 1e-12, 100).unwrap();
        assert_eq!(r.code.support(), &[0]);
        assert!((r.code.values()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lasso_rejects_bad_params() {
        let d = identity(2);
        assert!(lasso(v(&[1.0, 0.0]).as_view(), &d, 0.0, 1e-8, 10).is_err());
        assert!(lasso(v(&[1.0, 0.0]).as_view(), &d, 0.1, 0.0, 10).is_err());
    }

    #[test]
    fn lasso_reports_non_convergence() {
        let d = gen_dictionary(8, 10, 3).unwrap();
        let x = v(&[1.0, -0.5, 0.3, 0.2, 0.8, -1.1, 0.4, 0.0]);
        let r = lasso(x.as_view(), &d, 0.01, 1e-300, 3).unwrap();
        assert!(r.status.not_converged);
    }

    fn lasso_objective(x: &DVector<f64>, d: &Dictionary, lam: f64, r: &CodingResult) -> f64 {
        0.5 * (x - d.apply(&r.code)).norm_squared() + lam * r.code.l1_norm()
    }

    #[test]
    fn lasso_matches_tight_reference() {
        let d = gen_dictionary(8, 10, 7).unwrap();
        for seed in 0..5u64 {
            let x = gen_dictionary(8, 1, 100 + seed).unwrap().into_matrix().column(0) * 2.0;
            let fast = lasso(x.as_view(), &d, 0.1, LASSO_DEFAULT_TOL, LASSO_DEFAULT_MAX_ITER).unwrap();
            let reference = lasso(x.as_view(), &d, 0.1, 1e-14, 1_000_000).unwrap();
            let (a, b) = (
                lasso_objective(&x, &d, 0.1, &fast),
                lasso_objective(&x, &d, 0.1, &reference),
            );
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn lasso_objective_is_monotone() {
        let d = gen_dictionary(8, 10, 9).unwrap();
        let x = v(&[1.0, -0.5, 0.3, 0.2, 0.8, -1.1, 0.4, 0.0]);
        let lip = spectral_norm_sq(d.matrix(), POWER_ITERATIONS);
        let (_, trace) = lasso_with_lipschitz(x.as_view(), d.matrix(), 0.05, lip, 1e-14, 5000);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn f1_of_atom_is_zero_and_orthogonal_is_half_energy() {
        let d = gen_dictionary(6, 4, 3).unwrap();
        for j in 0..4 {
            let x = d.atom(j).into_owned();
            assert!(loss_fs(x.as_view(), &d, 1).unwrap() < 1e-25);
        }
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let d = Dictionary::new(m).unwrap();
        let x = v(&[0.0, 0.0, 2.0]);
        assert_eq!(loss_fs(x.as_view(), &d, 1).unwrap(), 2.0);
    }

    #[test]
    fn f1_matches_full_scan() {
        let d = gen_dictionary(7, 12, 5).unwrap();
        let x = v(&[0.3, 1.0, -0.2, 0.7, 0.0, -0.9, 0.4]);
        let scan = (0..12)
            .map(|j| {
                let a = d.atom(j);
                let alpha = a.dot(&x);
                0.5 * (&x - a * alpha).norm_squared()
            })
            .fold(f64::INFINITY, f64::min);
        assert!((loss_fs(x.as_view(), &d, 1).unwrap() - scan).abs() < 1e-14);
    }

    #[test]
    fn fs_two_sparse_matches_brute_force() {
        let d = gen_dictionary(8, 10, 11).unwrap();
        let model = GenerativeModel::new(d.clone(), 2, CoeffDist::StandardGaussian, 0.0).unwrap();
        let set = sample_batch(&model, 30, 2).unwrap();
        let mut hits = 0;
        for i in 0..set.len() {
            let x = set.sample(i).into_owned();
            let f = loss_fs(x.as_view(), &d, 2).unwrap();
            let best = brute_force(&x, d.matrix(), 2);
            assert!(f >= best - 1e-12);
            if (f - best).abs() < 1e-12 {
                hits += 1;
            }
        }
        // exactly-sparse signals on an 8x10 dictionary: OMP almost always succeeds
        assert!(hits >= 20, "hits {hits}");
    }

    #[test]
    fn empirical_risk_zero_at_ground_truth() {
        // μ < 1/3 makes OMP recover every 2-sparse support exactly
        let d = gen_dictionary(400, 30, 0).unwrap();
        assert!(crate::metrics::mutual_coherence(&d).value < 1.0 / 3.0);
        let model = GenerativeModel::new(d.clone(), 2, CoeffDist::StandardGaussian, 0.0).unwrap();
        let set = sample_batch(&model, 200, 0).unwrap();
        let risk = empirical_risk(&set, &d, LossSpec::L0Constrained { s: 2 }).unwrap();
        assert!(risk < 1e-18, "risk {risk}");
    }

    #[test]
    fn empirical_risk_single_sample() {
        let d = gen_dictionary(5, 8, 0).unwrap();
        let x = v(&[1.0, 0.2, -0.3, 0.0, 0.5]);
        let set = SampleSet::from_signals(DMatrix::from_column_slice(5, 1, x.as_slice())).unwrap();
        for spec in [LossSpec::L0Constrained { s: 2 }, LossSpec::L1Penalized { lambda: 0.1 }] {
            let risk = empirical_risk(&set, &d, spec).unwrap();
            let single = sample_losses(set.signals(), d.matrix(), spec)[0];
            assert_eq!(risk, single);
        }
    }

    #[test]
    fn empirical_f1_risk_matches_independent_monte_carlo() {
        let d0 = gen_dictionary(50, 70, 0).unwrap();
        let model = GenerativeModel::new(d0.clone(), 3, CoeffDist::StandardGaussian, 0.0).unwrap();
        let set = sample_batch(&model, 1000, 1).unwrap();
        let risk = empirical_risk(&set, &d0, LossSpec::L0Constrained { s: 1 }).unwrap();
        assert!(risk > 0.0);
        // independent MC: explicit per-atom scan on a fresh draw
        let mc = sample_batch(&model, 20_000, 2).unwrap();
        let vals: Vec<f64> = (0..mc.len())
            .map(|i| {
                let x = mc.sample(i);
                (0..70)
                    .map(|j| {
                        let a = d0.atom(j);
                        0.5 * (x - a * a.dot(&x)).norm_squared()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // the 1000-sample risk has its own sampling error; combine both
        let train_vals = sample_losses(set.signals(), d0.matrix(), LossSpec::L0Constrained { s: 1 });
        let tm = train_vals.iter().sum::<f64>() / 1000.0;
        let tv = train_vals.iter().map(|v| (v - tm).powi(2)).sum::<f64>() / 999.0;
        let se = (var / n + tv / 1000.0).sqrt();
        assert!((risk - mean).abs() < 3.0 * se, "{risk} vs {mean} (se {se})");
    }

    #[test]
    fn coding_csv_layout() {
        let r = omp(v(&[0.0, 3.0, 0.0, 0.0]).as_view(), &identity(4), 1).unwrap();
        let csv = coding_csv(&[r]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("sample_index,support,values,residual_sq"));
        assert!(lines.next().unwrap().starts_with("0,1,3.0000000000000000e0,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn omp_residual_non_increasing_in_s(seed in 0u64..1000, xs in proptest::collection::vec(-2.0f64..2.0, 8)) {
            let d = gen_dictionary(8, 12, seed).unwrap();
            let x = DVector::from_vec(xs);
            let mut prev = f64::INFINITY;
            for s in 1..=8 {
                let f = loss_fs(x.as_view(), &d, s).unwrap();
                prop_assert!(f <= prev + 1e-12);
                prev = f;
            }
        }

        #[test]
        fn omp_is_scale_equivariant(seed in 0u64..1000, c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
                                    xs in proptest::collection::vec(-2.0f64..2.0, 8)) {
            let d = gen_dictionary(8, 12, seed).unwrap();
            let x = DVector::from_vec(xs);
            let a = omp(x.as_view(), &d, 3).unwrap();
            let b = omp((&x * c).as_view(), &d, 3).unwrap();
            prop_assert_eq!(a.code.support(), b.code.support());
            for (va, vb) in a.code.values().iter().zip(b.code.values()) {
                prop_assert!((va * c - vb).abs() <= 1e-9 * (1.0 + vb.abs()));
            }
        }
    }
}

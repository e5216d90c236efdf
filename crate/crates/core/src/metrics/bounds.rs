//! Numerical evaluation of the risk/recovery sandwich and the usage-pruning
//! sparsity threshold.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{cross_coherence, cross_nu, dict_distance, mutual_coherence, nearest_estimates, Flagged};
use crate::coding::{loss_f1_exact, omp_unchecked, sample_losses, LossSpec};
use crate::error::{Error, Result};
use crate::io::csv_text;
use crate::linalg::lstsq;
use crate::model::{sample_code, CoeffDist, Dictionary, GenerativeModel, SampleSet};
use crate::rng::{substream, Domain};

/// `max{0, 1 - (k-2) μ0 - 2 ν²}`.
pub fn zeta_k(mu0: f64, nu: f64, k: usize) -> f64 {
    (1.0 - (k as f64 - 2.0) * mu0 - 2.0 * nu * nu).max(0.0)
}

/// Largest sparsity for which the most correlated atom of `[D̂0 | A]` is
/// guaranteed to lie in the ε-close block:
/// `(1 - ε/2 + √ε + μ0) / (μ0 + √ε + μ(D0, A))`.
///
/// A zero denominator yields `+∞`, flagged.
pub fn theorem2_threshold(eps: f64, mu0: f64, mu_cross: f64) -> Result<Flagged<f64>> {
    let unit = 0.0..=1.0;
    if !(eps >= 0.0 && eps.is_finite()) || !unit.contains(&mu0) || !unit.contains(&mu_cross) {
        return Err(Error::InvalidArgument(format!(
            "need eps >= 0 and coherences in [0, 1], got eps={eps}, mu0={mu0}, mu_cross={mu_cross}"
        )));
    }
    let root = eps.sqrt();
    let denom = mu0 + root + mu_cross;
    let numer = 1.0 - eps / 2.0 + root + mu0;
    if denom == 0.0 {
        return Ok(Flagged {
            value: f64::INFINITY,
            degenerate: true,
        });
    }
    Ok(Flagged {
        value: numer / denom,
        degenerate: false,
    })
}

/// All quantities of the risk/recovery sandwich for one `(D0, D̂, k)`.
///
/// `risk_fk` is computed with OMP, which upper-bounds the true `f^[k]`
/// infimum; the lower bound built from it is therefore at least as large as
/// the exact one, which makes checking `lower ≤ dist` stricter, not looser.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub k: usize,
    pub n_mc: usize,
    pub dist: f64,
    /// Monte-Carlo mean of the exact `f^[1]`.
    pub risk_f1: f64,
    pub se_f1: f64,
    /// Monte-Carlo mean of the OMP `f^[k]`.
    pub risk_fk: f64,
    pub se_fk: f64,
    /// Monte-Carlo mean of the smaller of the OMP loss and the loss of a
    /// least-squares fit on the nearest estimates of the true support atoms.
    /// Both are feasible `k`-sparse codes, so this still upper-bounds `f^[k]`
    /// while removing most of the greedy error.
    pub risk_fk_feasible: f64,
    pub se_fk_feasible: f64,
    pub mu0: f64,
    pub nu: f64,
    /// Coherence between `D0` and the estimated atoms that are nobody's
    /// nearest match.
    pub mu_cross: f64,
    pub zeta: f64,
    /// `(2/k) E f^[k]`
    pub lower: f64,
    /// `(4/k) E f^[1] - (4/k) ζ_k (k-1)`
    pub upper: f64,
    /// Empirical `f^[1]` risk on a training set, when attached.
    pub train_risk_f1: Option<f64>,
    /// `risk_f1 - train_risk_f1`: population minus training risk.
    pub gen_gap: Option<f64>,
}

pub const BOUND_HEADER: &str = "k,n_mc,dist,risk_f1,se_f1,risk_fk,se_fk,risk_fk_feasible,se_fk_feasible,mu0,nu,mu_cross,zeta,lower,upper,train_risk_f1,gen_gap";

impl BoundReport {
    /// Standard error of `lower`.
    pub fn lower_se(&self) -> f64 {
        2.0 / self.k as f64 * self.se_fk
    }

    /// `(2/k)` times [`risk_fk_feasible`](Self::risk_fk_feasible).
    pub fn lower_feasible(&self) -> f64 {
        2.0 / self.k as f64 * self.risk_fk_feasible
    }

    /// Standard error of `upper`.
    pub fn upper_se(&self) -> f64 {
        4.0 / self.k as f64 * self.se_f1
    }

    /// `lower - z·SE ≤ dist`.
    pub fn lower_holds(&self, z: f64) -> bool {
        self.lower - z * self.lower_se() <= self.dist
    }

    /// `dist ≤ upper + z·SE`.
    pub fn upper_holds(&self, z: f64) -> bool {
        self.dist <= self.upper + z * self.upper_se()
    }

    /// Attaches the empirical `f^[1]` risk of `dhat` on `train`.
    pub fn with_training_set(mut self, train: &SampleSet, dhat: &Dictionary) -> Result<Self> {
        if train.dim() != dhat.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("samples of dimension {}", dhat.dim()),
                actual: format!("dimension {}", train.dim()),
            });
        }
        let losses = sample_losses(train.signals(), dhat.matrix(), LossSpec::L0Constrained { s: 1 });
        let risk = losses.iter().sum::<f64>() / losses.len() as f64;
        self.train_risk_f1 = Some(risk);
        self.gen_gap = Some(self.risk_f1 - risk);
        Ok(self)
    }

    /// `(4/k)(R_S f^[1] + gap - ζ_k (k-1))`, the training-risk form of the
    /// upper bound with the measured gap in place of its uniform bound.
    pub fn training_upper(&self) -> Option<f64> {
        let k = self.k as f64;
        Some(4.0 / k * (self.train_risk_f1? + self.gen_gap? - self.zeta * (k - 1.0)))
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            self.k,
            self.n_mc,
            self.dist,
            self.risk_f1,
            self.se_f1,
            self.risk_fk,
            self.se_fk,
            self.risk_fk_feasible,
            self.se_fk_feasible,
            self.mu0,
            self.nu,
            self.mu_cross,
            self.zeta,
            self.lower,
            self.upper,
            opt(self.train_risk_f1),
            opt(self.gen_gap)
        )
    }

    pub fn to_csv(reports: &[BoundReport]) -> String {
        csv_text(BOUND_HEADER, reports.iter().map(|r| r.csv_row()))
    }
}

/// [`lemma1_check_with`] for noiseless Gaussian coefficients.
pub fn lemma1_check(d0: &Dictionary, dhat: &Dictionary, k: usize, n_mc: usize, seed: u64) -> Result<BoundReport> {
    let model = GenerativeModel::new(d0.clone(), k, CoeffDist::StandardGaussian, 0.0)?;
    lemma1_check_with(&model, dhat, n_mc, seed)
}

/// Fills a [`BoundReport`] with Monte-Carlo risk estimates from `n_mc`
/// fresh samples of `model`. Checks nothing itself.
pub fn lemma1_check_with(model: &GenerativeModel, dhat: &Dictionary, n_mc: usize, seed: u64) -> Result<BoundReport> {
    let d0 = model.dictionary();
    let k = model.sparsity();
    if dhat.dim() != d0.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} rows", d0.dim()),
            actual: format!("{} rows", dhat.dim()),
        });
    }
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let dm = dhat.matrix();
    let sigma = model.noise_sigma();
    let nearest: Vec<usize> = nearest_estimates(d0, dhat)?.iter().map(|&(j, _)| j).collect();
    let per_sample: Vec<(f64, f64, f64)> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Domain::MonteCarlo, i as u64);
            let code = sample_code(model, &mut rng);
            let mut x = d0.apply(&code);
            if sigma > 0.0 {
                use rand_distr::{Distribution, StandardNormal};
                for r in 0..x.len() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[r] += sigma * z;
                }
            }
            let f1 = loss_f1_exact(x.as_view(), dm).0;
            let fk = if k == 1 { f1 } else { omp_unchecked(x.as_view(), dm, k).residual_sq };
            let mut atoms: Vec<usize> = code.support().iter().map(|&i| nearest[i]).collect();
            atoms.sort_unstable();
            atoms.dedup();
            let sub = dm.select_columns(&atoms);
            let fit = lstsq(&sub, &x);
            let refit = 0.5 * (&x - &sub * &fit.coef).norm_squared();
            (f1, fk, fk.min(refit))
        })
        .collect();
    let (risk_f1, se_f1) = mean_se(per_sample.iter().map(|v| v.0));
    let (risk_fk, se_fk) = mean_se(per_sample.iter().map(|v| v.1));
    let (risk_fk_feasible, se_fk_feasible) = mean_se(per_sample.iter().map(|v| v.2));

    let dist = dict_distance(d0, dhat)?;
    let mu0 = mutual_coherence(d0).value;
    let nu = cross_nu(dhat, d0)?.value;
    let extras: Vec<usize> = (0..dhat.n_atoms()).filter(|j| !nearest.contains(j)).collect();
    let a: DMatrix<f64> = dm.select_columns(&extras);
    let mu_cross = cross_coherence(d0, &a)?.value;
    let zeta = zeta_k(mu0, nu, k);
    let kf = k as f64;
    Ok(BoundReport {
        k,
        n_mc,
        dist,
        risk_f1,
        se_f1,
        risk_fk,
        se_fk,
        risk_fk_feasible,
        se_fk_feasible,
        mu0,
        nu,
        mu_cross,
        zeta,
        lower: 2.0 / kf * risk_fk,
        upper: 4.0 / kf * risk_f1 - 4.0 / kf * zeta * (kf - 1.0),
        train_risk_f1: None,
        gen_gap: None,
    })
}

/// Mean and standard error of the mean; summation in index order.
pub(crate) fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

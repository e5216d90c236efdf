//! Dictionary learning: mini-batch Online Dictionary Learning with a
//! pluggable coder, and batch K-SVD. Both end with a full coding pass over the
//! training set that yields per-atom usage counts.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coding::{code_columns, omp_unchecked, CodingResult, LossSpec};
use crate::error::{Error, Result};
use crate::io::{csv_text, parse_index_csv, write_mtx, write_text};
use crate::model::{gen_dictionary, Dictionary, SampleSet};
use crate::rng::{derive_seed, substream, Domain};

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_ODL_DEAD_THRESHOLD: usize = 10;
pub const ODL_CHECKPOINT_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// `p'` distinct training samples, normalized.
    #[default]
    DataSamples,
    /// Normalized Gaussian columns.
    GaussianColumns,
}

/// How the final usage pass codes the training samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageMode {
    /// The training coder itself.
    #[default]
    Coder,
    /// OMP with a single atom per sample.
    SingleAtom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of atoms to learn.
    pub p_prime: usize,
    /// ODL iterations (mini-batches) or K-SVD sweeps.
    pub iterations: usize,
    pub batch_size: usize,
    pub coder: LossSpec,
    pub init: InitStrategy,
    /// ODL: consecutive batches without use before an atom is replaced.
    /// K-SVD: sweeps without use (1 replaces on the first unused sweep).
    pub dead_atom_threshold: usize,
    pub usage_mode: UsageMode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(p_prime: usize, iterations: usize, coder: LossSpec, seed: u64) -> Self {
        Self {
            p_prime,
            iterations,
            batch_size: DEFAULT_BATCH_SIZE,
            coder,
            init: InitStrategy::DataSamples,
            dead_atom_threshold: DEFAULT_ODL_DEAD_THRESHOLD,
            usage_mode: UsageMode::Coder,
            seed,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.p_prime == 0 || self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "p_prime, iterations and batch_size must be positive (got {}, {}, {})",
                self.p_prime, self.iterations, self.batch_size
            )));
        }
        if self.dead_atom_threshold == 0 {
            return Err(Error::InvalidArgument("dead_atom_threshold must be positive".into()));
        }
        self.coder.validate(dim)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainStatus {
    /// `DataSamples` init was requested with fewer samples than atoms.
    pub init_fallback: bool,
    pub dead_atoms_replaced: usize,
    /// Mini-batches skipped because every signal in them was zero.
    pub skipped_batches: usize,
    /// Some coding call hit its iteration cap.
    pub coder_not_converged: bool,
    /// Some OMP refit needed the minimum-norm fallback.
    pub singular_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub dictionary: Dictionary,
    /// Number of training samples whose final code uses each atom.
    pub usage: Vec<usize>,
    /// ODL: mean mini-batch loss per checkpoint window. K-SVD: training loss after each sweep.
    pub loss_trace: Vec<f64>,
    pub status: TrainStatus,
}

impl TrainReport {
    pub fn usage_csv(&self) -> String {
        usage_csv(&self.usage)
    }

    pub fn loss_csv(&self) -> String {
        csv_text(
            "checkpoint,loss",
            self.loss_trace
                .iter()
                .enumerate()
                .map(|(i, l)| format!("{i},{l:.16e}")),
        )
    }

    /// Writes `dictionary.mtx`, `usage.csv` and `loss.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_mtx(dir.join("dictionary.mtx"), self.dictionary.matrix())?;
        write_text(dir.join("usage.csv"), &self.usage_csv())?;
        write_text(dir.join("loss.csv"), &self.loss_csv())
    }
}

pub fn usage_csv(usage: &[usize]) -> String {
    csv_text(
        "atom_index,count",
        usage.iter().enumerate().map(|(j, c)| format!("{j},{c}")),
    )
}

/// Inverse of [`usage_csv`]; rows must list atoms `0, 1, ...` in order.
pub fn parse_usage_csv(text: &str) -> Result<Vec<usize>> {
    let rows = parse_index_csv(text, "usage csv")?;
    for (pos, &(j, _)) in rows.iter().enumerate() {
        if j != pos {
            return Err(Error::Parse {
                context: "usage csv".into(),
                message: format!("row {pos} lists atom {j}"),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, c)| c).collect())
}

/// Initial dictionary. Returns `true` alongside it when `DataSamples` had to
/// fall back to Gaussian columns.
pub fn init_dictionary(samples: &SampleSet, cfg: &TrainConfig) -> Result<(Dictionary, bool)> {
    if cfg.p_prime == 0 {
        return Err(Error::InvalidArgument("p_prime must be positive".into()));
    }
    let d = samples.dim();
    let gaussian = || gen_dictionary(d, cfg.p_prime, derive_seed(cfg.seed, Domain::Init as u64));
    match cfg.init {
        InitStrategy::GaussianColumns => Ok((gaussian()?, false)),
        InitStrategy::DataSamples if samples.len() < cfg.p_prime => {
            log::warn!(
                "{} samples cannot seed {} atoms; using Gaussian columns",
                samples.len(),
                cfg.p_prime
            );
            Ok((gaussian()?, true))
        }
        InitStrategy::DataSamples => {
            let mut rng = substream(cfg.seed, Domain::Init, 0);
            let picks = rand::seq::index::sample(&mut rng, samples.len(), cfg.p_prime).into_vec();
            let fallback = gaussian()?;
            let columns: Vec<DVector<f64>> = picks
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let x = samples.sample(i);
                    if x.norm() > 0.0 {
                        x.into_owned()
                    } else {
                        fallback.atom(j).into_owned()
                    }
                })
                .collect();
            Ok((Dictionary::from_columns(&columns)?, false))
        }
    }
}

fn check_inputs(samples: &SampleSet, cfg: &TrainConfig) -> Result<()> {
    cfg.validate(samples.dim())
}

/// Online Dictionary Learning.
///
/// Each iteration draws a mini-batch without replacement, codes it with the
/// current dictionary, accumulates `A += γγᵀ` and `B += xγᵀ`, and runs one
/// pass of block-coordinate descent over the columns of the surrogate
/// `½ tr(DᵀDA) - tr(DᵀB)`, renormalizing every updated column.
pub fn odl_train(samples: &SampleSet, cfg: &TrainConfig) -> Result<TrainReport> {
    check_inputs(samples, cfg)?;
    let (init, init_fallback) = init_dictionary(samples, cfg)?;
    let mut report = odl_train_from(samples, cfg, init)?;
    report.status.init_fallback = init_fallback;
    Ok(report)
}

/// [`odl_train`] from a given starting dictionary.
pub fn odl_train_from(samples: &SampleSet, cfg: &TrainConfig, init: Dictionary) -> Result<TrainReport> {
    check_inputs(samples, cfg)?;
    check_init(samples, cfg, &init)?;
    let x = samples.signals();
    let (dim, n, pp) = (samples.dim(), samples.len(), cfg.p_prime);
    let mut dict = init.into_matrix();
    let mut a = DMatrix::<f64>::zeros(pp, pp);
    let mut b = DMatrix::<f64>::zeros(dim, pp);
    let mut unused_streak = vec![0usize; pp];
    let mut status = TrainStatus::default();
    let mut trace = Vec::new();
    let (mut window_loss, mut window_count) = (0.0, 0usize);
    let batch = cfg.batch_size.min(n);

    for t in 0..cfg.iterations {
        let mut rng = substream(cfg.seed, Domain::Batches, t as u64);
        let picks = rand::seq::index::sample(&mut rng, n, batch).into_vec();
        let xb = x.select_columns(&picks);
        if xb.iter().all(|&v| v == 0.0) {
            status.skipped_batches += 1;
            continue;
        }
        let codes = code_columns(&xb, &dict, cfg.coder);
        let mut used = vec![false; pp];
        for (i, r) in codes.iter().enumerate() {
            note_status(&mut status, r);
            window_loss += loss_value(r, cfg.coder);
            window_count += 1;
            let xi = xb.column(i);
            let (sup, val) = (r.code.support(), r.code.values());
            for (&j, &g) in sup.iter().zip(val) {
                used[j] = true;
                for (&l, &h) in sup.iter().zip(val) {
                    a[(j, l)] += g * h;
                }
                b.column_mut(j).axpy(g, &xi, 1.0);
            }
        }

        // dead atoms take the worst-reconstructed samples of this batch
        let mut worst: Vec<usize> = (0..codes.len()).collect();
        worst.sort_by(|&i, &k| codes[k].residual_sq.total_cmp(&codes[i].residual_sq).then(i.cmp(&k)));
        let mut donors = worst.into_iter().filter(|&i| codes[i].residual_sq > 0.0);
        for j in 0..pp {
            if used[j] {
                unused_streak[j] = 0;
                continue;
            }
            unused_streak[j] += 1;
            if unused_streak[j] >= cfg.dead_atom_threshold {
                let Some(i) = donors.next() else { break };
                let xi = xb.column(i);
                dict.set_column(j, &(xi / xi.norm()));
                a.row_mut(j).fill(0.0);
                a.column_mut(j).fill(0.0);
                b.column_mut(j).fill(0.0);
                unused_streak[j] = 0;
                status.dead_atoms_replaced += 1;
            }
        }

        for j in 0..pp {
            let ajj = a[(j, j)];
            if ajj <= 1e-12 {
                continue;
            }
            let mut u = b.column(j) - &dict * a.column(j);
            u /= ajj;
            u += dict.column(j);
            let norm = u.norm();
            if norm > 0.0 && norm.is_finite() {
                dict.set_column(j, &(u / norm));
            }
        }

        if (t + 1) % ODL_CHECKPOINT_EVERY == 0 || t + 1 == cfg.iterations {
            if window_count > 0 {
                trace.push(window_loss / window_count as f64);
            }
            window_loss = 0.0;
            window_count = 0;
        }
    }

    let dictionary = Dictionary::from_unnormalized(dict)?;
    let usage = usage_counts(x, &dictionary, cfg, &mut status);
    Ok(TrainReport {
        dictionary,
        usage,
        loss_trace: trace,
        status,
    })
}

fn check_init(samples: &SampleSet, cfg: &TrainConfig, init: &Dictionary) -> Result<()> {
    if init.dim() != samples.dim() || init.n_atoms() != cfg.p_prime {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} initial dictionary", samples.dim(), cfg.p_prime),
            actual: format!("{}x{}", init.dim(), init.n_atoms()),
        });
    }
    Ok(())
}

fn note_status(status: &mut TrainStatus, r: &CodingResult) {
    status.coder_not_converged |= r.status.not_converged;
    status.singular_fallback |= r.status.singular_fallback;
}

fn loss_value(r: &CodingResult, coder: LossSpec) -> f64 {
    match coder {
        LossSpec::L0Constrained { .. } => r.residual_sq,
        LossSpec::L1Penalized { lambda } => r.residual_sq + lambda * r.code.l1_norm(),
    }
}

fn usage_counts(x: &DMatrix<f64>, dict: &Dictionary, cfg: &TrainConfig, status: &mut TrainStatus) -> Vec<usize> {
    let spec = match cfg.usage_mode {
        UsageMode::Coder => cfg.coder,
        UsageMode::SingleAtom => LossSpec::L0Constrained { s: 1 },
    };
    let mut usage = vec![0usize; dict.n_atoms()];
    for r in code_columns(x, dict.matrix(), spec) {
        note_status(status, &r);
        for &j in r.code.support() {
            usage[j] += 1;
        }
    }
    usage
}

/// Losses recorded around one K-SVD sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepLosses {
    /// Mean `½||x - Dγ||²` right after the OMP coding step.
    pub after_coding: f64,
    /// The same quantity after all atom updates.
    pub after_update: f64,
    pub replaced: usize,
}

/// One K-SVD sweep in place: OMP coding of every sample, then a rank-1
/// refit of each atom (in index order) against the residual of the samples
/// that use it. Unused atoms take the worst-reconstructed sample.
pub fn ksvd_sweep(x: &DMatrix<f64>, dict: &mut DMatrix<f64>, s: usize, status: &mut TrainStatus) -> SweepLosses {
    let (dim, n) = (x.nrows(), x.ncols());
    let pp = dict.ncols();
    let codes: Vec<CodingResult> = {
        use rayon::prelude::*;
        let d: &DMatrix<f64> = dict;
        (0..n).into_par_iter().map(|i| omp_unchecked(x.column(i), d, s)).collect()
    };
    // coefficient storage: per sample (atom, value); per atom list of (sample, slot)
    let mut coefs: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut users: Vec<Vec<(usize, usize)>> = vec![Vec::new(); pp];
    let mut resid = x.clone();
    for (i, r) in codes.iter().enumerate() {
        note_status(status, r);
        let mut row = Vec::with_capacity(r.code.len());
        for (slot, (&j, &g)) in r.code.support().iter().zip(r.code.values()).enumerate() {
            users[j].push((i, slot));
            row.push((j, g));
            resid.column_mut(i).axpy(-g, &dict.column(j), 1.0);
        }
        coefs.push(row);
    }
    let mean_loss = |resid: &DMatrix<f64>| {
        resid.column_iter().map(|c| 0.5 * c.norm_squared()).sum::<f64>() / n as f64
    };
    let after_coding = mean_loss(&resid);

    let mut taken = vec![false; n];
    let mut replaced = 0;
    for j in 0..pp {
        let who = &users[j];
        if who.is_empty() {
            let donor = (0..n)
                .filter(|&i| !taken[i])
                .map(|i| (i, resid.column(i).norm_squared()))
                .filter(|&(_, e)| e > 0.0)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((i, _)) = donor {
                taken[i] = true;
                let xi = x.column(i);
                dict.set_column(j, &(xi / xi.norm()));
                replaced += 1;
            }
            continue;
        }
        let mut e = DMatrix::<f64>::zeros(dim, who.len());
        for (c, &(i, slot)) in who.iter().enumerate() {
            let g = coefs[i][slot].1;
            let mut col = resid.column(i).into_owned();
            col.axpy(g, &dict.column(j), 1.0);
            e.set_column(c, &col);
        }
        let (u, sigma, v) = crate::linalg::leading_singular_pair(&e);
        dict.set_column(j, &u);
        for (c, &(i, slot)) in who.iter().enumerate() {
            let g = sigma * v[c];
            coefs[i][slot].1 = g;
            let mut col = e.column(c).into_owned();
            col.axpy(-g, &u, 1.0);
            resid.set_column(i, &col);
        }
    }
    status.dead_atoms_replaced += replaced;
    SweepLosses {
        after_coding,
        after_update: mean_loss(&resid),
        replaced,
    }
}

/// Batch K-SVD with OMP coding.
pub fn ksvd_train(samples: &SampleSet, cfg: &TrainConfig) -> Result<TrainReport> {
    check_inputs(samples, cfg)?;
    let (init, init_fallback) = init_dictionary(samples, cfg)?;
    let mut report = ksvd_train_from(samples, cfg, init)?;
    report.status.init_fallback = init_fallback;
    Ok(report)
}

/// [`ksvd_train`] from a given starting dictionary.
pub fn ksvd_train_from(samples: &SampleSet, cfg: &TrainConfig, init: Dictionary) -> Result<TrainReport> {
    check_inputs(samples, cfg)?;
    check_init(samples, cfg, &init)?;
    let LossSpec::L0Constrained { s } = cfg.coder else {
        return Err(Error::InvalidArgument("K-SVD requires an ℓ0-constrained (OMP) coder".into()));
    };
    let x = samples.signals();
    let mut dict = init.into_matrix();
    let mut status = TrainStatus::default();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let losses = ksvd_sweep(x, &mut dict, s, &mut status);
        trace.push(losses.after_update);
    }
    let dictionary = Dictionary::from_unnormalized(dict)?;
    let usage = usage_counts(x, &dictionary, cfg, &mut status);
    Ok(TrainReport {
        dictionary,
        usage,
        loss_trace: trace,
        status,
    })
}

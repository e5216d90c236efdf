//! Seeded experiment sweeps written as CSV tables.
//!
//! Every cell of a sweep is self-contained: its data, initialization and
//! batch order derive only from `base_seed + repeat`, so cells run in
//! parallel and the tables are byte-identical across runs. Wall times go to
//! a separate `timing.csv` for the same reason.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

pub use config::{Algorithm, ExperimentConfig};

use crate::coding::{empirical_risk, LossSpec};
use crate::distill::{fine_tune, oracle_overlap, prune_by_usage, Trainer};
use crate::error::{Error, Result};
use crate::io::{csv_text, write_text};
use crate::learning::{init_dictionary, ksvd_train_from, odl_train_from, TrainReport};
use crate::metrics::{dict_distance, min_usage_statistic};
use crate::model::{gen_dictionary, CoeffDist, Dictionary, GenerativeModel, SampleSet};
use crate::rng::derive_seed;

/// Salts passed to [`derive_seed`] with a repeat's seed.
pub const SALT_DICTIONARY: u64 = 1;
pub const SALT_TRAIN: u64 = 2;
pub const SALT_TEST: u64 = 3;
pub const SALT_LEARN: u64 = 4;
pub const SALT_MONTE_CARLO: u64 = 5;

/// One trained dictionary of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub p_prime: usize,
    pub sigma: f64,
    pub n_train: usize,
    pub seed: u64,
    /// Mean OMP `f^[k]` loss of the learned `p'`-atom dictionary on the training set.
    pub train_risk: f64,
    /// Same on the held-out test set.
    pub test_risk: f64,
    pub dist_over_realized: f64,
    /// Distance after pruning to `min(p, p')` atoms by usage.
    pub dist_distilled: f64,
    /// Distance of a `p`-atom dictionary trained on the same data.
    pub dist_traditional: f64,
    pub min_usage: usize,
    /// Agreement of the usage-pruned selection with the oracle one.
    pub oracle_overlap: f64,
    pub wall_time_s: f64,
}

pub const SWEEP_HEADER: &str = "p_prime,sigma,n_train,seed,train_risk,test_risk,dist_over_realized,dist_distilled,dist_traditional,min_usage,oracle_overlap";
pub const TIMING_HEADER: &str = "p_prime,sigma,n_train,seed,wall_time_s";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            self.p_prime,
            self.sigma,
            self.n_train,
            self.seed,
            self.train_risk,
            self.test_risk,
            self.dist_over_realized,
            self.dist_distilled,
            self.dist_traditional,
            self.min_usage,
            self.oracle_overlap
        )
    }

    fn cell(&self) -> (u64, usize, usize) {
        (self.sigma.to_bits(), self.n_train, self.p_prime)
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    csv_text(SWEEP_HEADER, rows.iter().map(SweepRow::csv_row))
}

pub fn timing_csv(rows: &[SweepRow]) -> String {
    csv_text(
        TIMING_HEADER,
        rows.iter()
            .map(|r| format!("{},{},{},{},{:.3}", r.p_prime, r.sigma, r.n_train, r.seed, r.wall_time_s)),
    )
}

/// Nearest-rank percentile: the smallest value with at least `q` of the
/// sample at or below it.
pub fn nearest_rank(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Mean with 25th and 75th nearest-rank percentiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub p25: f64,
    pub p75: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p25: nearest_rank(values, 0.25),
            p75: nearest_rank(values, 0.75),
        }
    }
}

const SUMMARY_METRICS: [&str; 7] = [
    "train_risk",
    "test_risk",
    "dist_over_realized",
    "dist_distilled",
    "dist_traditional",
    "min_usage",
    "oracle_overlap",
];

fn metric_values(r: &SweepRow) -> [f64; 7] {
    [
        r.train_risk,
        r.test_risk,
        r.dist_over_realized,
        r.dist_distilled,
        r.dist_traditional,
        r.min_usage as f64,
        r.oracle_overlap,
    ]
}

/// Per-cell summaries, keyed by `(sigma, n_train, p_prime)` in row order.
pub fn summarize(rows: &[SweepRow]) -> Vec<(f64, usize, usize, Vec<Summary>)> {
    let mut cells: Vec<(f64, usize, usize, Vec<[f64; 7]>)> = Vec::new();
    for r in rows {
        match cells.last_mut() {
            Some(c) if (c.0.to_bits(), c.1, c.2) == r.cell() => c.3.push(metric_values(r)),
            _ => cells.push((r.sigma, r.n_train, r.p_prime, vec![metric_values(r)])),
        }
    }
    cells
        .into_iter()
        .map(|(sigma, n, pp, vals)| {
            let sums = (0..SUMMARY_METRICS.len())
                .map(|m| Summary::of(&vals.iter().map(|v| v[m]).collect::<Vec<_>>()))
                .collect();
            (sigma, n, pp, sums)
        })
        .collect()
}

pub fn summary_csv(rows: &[SweepRow]) -> String {
    let mut header = String::from("sigma,n_train,p_prime,repeats");
    for m in SUMMARY_METRICS {
        header.push_str(&format!(",{m}_mean,{m}_p25,{m}_p75"));
    }
    let counts = rows.iter().fold(BTreeMap::new(), |mut acc, r| {
        *acc.entry(r.cell()).or_insert(0usize) += 1;
        acc
    });
    csv_text(
        &header,
        summarize(rows).into_iter().map(|(sigma, n, pp, sums)| {
            let mut line = format!("{sigma},{n},{pp},{}", counts[&(sigma.to_bits(), n, pp)]);
            for s in sums {
                line.push_str(&format!(",{:.16e},{:.16e},{:.16e}", s.mean, s.p25, s.p75));
            }
            line
        }),
    )
}

/// Ground truth and data of one repeat.
struct Problem {
    d0: Dictionary,
    train: SampleSet,
    test: SampleSet,
}

fn make_problem(d: usize, p: usize, k: usize, sigma: f64, n_train: usize, n_test: usize, seed: u64) -> Result<Problem> {
    let d0 = gen_dictionary(d, p, derive_seed(seed, SALT_DICTIONARY))?;
    let model = GenerativeModel::new(d0.clone(), k, CoeffDist::StandardGaussian, sigma)?;
    Ok(Problem {
        train: crate::model::sample_batch(&model, n_train, derive_seed(seed, SALT_TRAIN))?,
        test: crate::model::sample_batch(&model, n_test, derive_seed(seed, SALT_TEST))?,
        d0,
    })
}

fn trainer(cfg: &ExperimentConfig) -> Trainer {
    match cfg.algorithm {
        Algorithm::Ksvd => ksvd_train_from,
        Algorithm::OdlOmp | Algorithm::OdlLasso => odl_train_from,
    }
}

fn train(cfg: &ExperimentConfig, data: &SampleSet, p_prime: usize, k: usize, seed: u64) -> Result<TrainReport> {
    let tc = cfg.train_config(p_prime, k, derive_seed(seed, SALT_LEARN));
    let (init, fallback) = init_dictionary(data, &tc)?;
    let mut report = trainer(cfg)(data, &tc, init)?;
    report.status.init_fallback = fallback;
    Ok(report)
}

/// Metrics of one `(σ, n_train, p', repeat)` training run.
struct Trained {
    train_risk: f64,
    test_risk: f64,
    dist: f64,
    dist_distilled: f64,
    min_usage: usize,
    oracle_overlap: f64,
    wall_time_s: f64,
}

fn run_cell(cfg: &ExperimentConfig, sigma: f64, n_train: usize, p_prime: usize, seed: u64) -> Result<Trained> {
    let start = Instant::now();
    let prob = make_problem(cfg.d, cfg.p, cfg.k, sigma, n_train, cfg.n_test, seed)?;
    let report = train(cfg, &prob.train, p_prime, cfg.k, seed)?;
    let risk_spec = LossSpec::L0Constrained { s: cfg.k };
    let p_target = cfg.p.min(p_prime);
    let distilled = prune_by_usage(&report, p_target)?;
    let overlap = oracle_overlap(&report, &prob.d0, &distilled.kept_indices)?;
    let distilled_dict = if cfg.fine_tune_iterations > 0 {
        let tc = crate::learning::TrainConfig {
            iterations: cfg.fine_tune_iterations,
            ..cfg.train_config(p_target, cfg.k, derive_seed(seed, SALT_LEARN))
        };
        fine_tune(&distilled, &prob.train, &tc, trainer(cfg))?.dictionary
    } else {
        distilled.dictionary
    };
    Ok(Trained {
        train_risk: empirical_risk(&prob.train, &report.dictionary, risk_spec)?,
        test_risk: empirical_risk(&prob.test, &report.dictionary, risk_spec)?,
        dist: dict_distance(&prob.d0, &report.dictionary)?,
        dist_distilled: dict_distance(&prob.d0, &distilled_dict)?,
        min_usage: min_usage_statistic(&report),
        oracle_overlap: overlap,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Creates the output directory and checks it is writable.
fn prepare_output(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Trains every `(σ, n_train, p', repeat)` cell, plus a `p`-atom baseline
/// per `(σ, n_train, repeat)`, without writing anything.
pub fn compute_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut p_values = cfg.p_prime_grid.clone();
    p_values.push(cfg.p);
    p_values.sort_unstable();
    p_values.dedup();

    let mut jobs = Vec::new();
    for &sigma in &cfg.sigma_grid {
        for n in cfg.n_train_values() {
            for &pp in &p_values {
                for r in 0..cfg.repeats as u64 {
                    jobs.push((sigma, n, pp, cfg.base_seed + r));
                }
            }
        }
    }
    let results: Vec<Trained> = jobs
        .par_iter()
        .map(|&(sigma, n, pp, seed)| run_cell(cfg, sigma, n, pp, seed))
        .collect::<Result<_>>()?;
    let lookup: BTreeMap<(u64, usize, usize, u64), &Trained> = jobs
        .iter()
        .zip(&results)
        .map(|(&(s, n, pp, seed), t)| ((s.to_bits(), n, pp, seed), t))
        .collect();

    let mut rows = Vec::new();
    for &(sigma, n, pp, seed) in &jobs {
        if !cfg.p_prime_grid.contains(&pp) {
            continue;
        }
        let t = lookup[&(sigma.to_bits(), n, pp, seed)];
        let baseline = lookup[&(sigma.to_bits(), n, cfg.p, seed)];
        rows.push(SweepRow {
            p_prime: pp,
            sigma,
            n_train: n,
            seed,
            train_risk: t.train_risk,
            test_risk: t.test_risk,
            dist_over_realized: t.dist,
            dist_distilled: t.dist_distilled,
            dist_traditional: baseline.dist,
            min_usage: t.min_usage,
            oracle_overlap: t.oracle_overlap,
            wall_time_s: t.wall_time_s,
        });
    }
    rows.sort_by(|a, b| {
        a.sigma
            .total_cmp(&b.sigma)
            .then(a.n_train.cmp(&b.n_train))
            .then(a.p_prime.cmp(&b.p_prime))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

fn write_sweep_files(dir: &Path, cfg: &ExperimentConfig, rows: &[SweepRow]) -> Result<()> {
    write_text(dir.join("config.toml"), &cfg.to_toml())?;
    write_text(dir.join("sweep.csv"), &sweep_csv(rows))?;
    write_text(dir.join("summary.csv"), &summary_csv(rows))?;
    write_text(dir.join("timing.csv"), &timing_csv(rows))
}

/// Runs the sweep and writes `sweep.csv`, `summary.csv`, `timing.csv` and
/// `config.toml` into `cfg.output_dir`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    prepare_output(&cfg.output_dir)?;
    let rows = compute_sweep(cfg)?;
    write_sweep_files(&cfg.output_dir, cfg, &rows)?;
    Ok(rows)
}

/// Relative distance improvement over the `p`-atom baseline, from means
/// over repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub sigma: f64,
    pub n_train: usize,
    pub p_prime: usize,
    pub dist_traditional: f64,
    pub dist_over_realized: f64,
    pub dist_distilled: f64,
    pub improvement_over_realized: f64,
    pub improvement_distilled: f64,
    /// The baseline distance was 0; both improvements are reported as 0.
    pub degenerate: bool,
}

pub const NOISE_HEADER: &str = "sigma,n_train,p_prime,dist_traditional,dist_over_realized,dist_distilled,improvement_over_realized,improvement_distilled,degenerate";

/// `(base - est) / base`, or `0` flagged when `base == 0`.
pub fn relative_improvement(base: f64, est: f64) -> (f64, bool) {
    if base == 0.0 {
        (0.0, true)
    } else {
        ((base - est) / base, false)
    }
}

pub fn noise_rows(rows: &[SweepRow]) -> Vec<NoiseRow> {
    summarize(rows)
        .into_iter()
        .map(|(sigma, n_train, p_prime, s)| {
            let (trad, over, dist) = (s[4].mean, s[2].mean, s[3].mean);
            let (io, degenerate) = relative_improvement(trad, over);
            let (id, _) = relative_improvement(trad, dist);
            NoiseRow {
                sigma,
                n_train,
                p_prime,
                dist_traditional: trad,
                dist_over_realized: over,
                dist_distilled: dist,
                improvement_over_realized: io,
                improvement_distilled: id,
                degenerate,
            }
        })
        .collect()
}

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    csv_text(
        NOISE_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.sigma,
                r.n_train,
                r.p_prime,
                r.dist_traditional,
                r.dist_over_realized,
                r.dist_distilled,
                r.improvement_over_realized,
                r.improvement_distilled,
                r.degenerate
            )
        }),
    )
}

/// Runs the sweep over `sigma_grid` and additionally writes `noise.csv`.
pub fn run_noise_sweep(cfg: &ExperimentConfig) -> Result<Vec<NoiseRow>> {
    let rows = run_sweep(cfg)?;
    let noise = noise_rows(&rows);
    write_text(cfg.output_dir.join("noise.csv"), &noise_csv(&noise))?;
    Ok(noise)
}

/// Minimum atom usage per `(d, k, p')`, over repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRow {
    pub d: usize,
    pub k: usize,
    pub p_prime: usize,
    pub repeats: usize,
    pub min_usage: Summary,
}

pub const PHASE_HEADER: &str = "d,k,p_prime,repeats,min_usage_mean,min_usage_p25,min_usage_p75";

pub fn phase_csv(rows: &[PhaseRow]) -> String {
    csv_text(
        PHASE_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{:.16e},{:.16e},{:.16e}",
                r.d, r.k, r.p_prime, r.repeats, r.min_usage.mean, r.min_usage.p25, r.min_usage.p75
            )
        }),
    )
}

/// Phase-transition cells over `d_grid × k_grid × p_prime_grid` at the first
/// `sigma_grid` value and `n_train`, without writing anything.
pub fn compute_phase_transition(cfg: &ExperimentConfig) -> Result<Vec<PhaseRow>> {
    cfg.validate()?;
    let sigma = cfg.sigma_grid[0];
    let mut cells = Vec::new();
    for d in cfg.dims() {
        for k in cfg.sparsities() {
            for &pp in &cfg.p_prime_grid {
                cells.push((d, k, pp));
            }
        }
    }
    let jobs: Vec<(usize, usize, usize, u64)> = cells
        .iter()
        .flat_map(|&(d, k, pp)| (0..cfg.repeats as u64).map(move |r| (d, k, pp, cfg.base_seed + r)))
        .collect();
    let usage: Vec<f64> = jobs
        .par_iter()
        .map(|&(d, k, pp, seed)| {
            let prob = make_problem(d, cfg.p, k, sigma, cfg.n_train, 1, seed)?;
            Ok(min_usage_statistic(&train(cfg, &prob.train, pp, k, seed)?) as f64)
        })
        .collect::<Result<_>>()?;
    Ok(cells
        .iter()
        .zip(usage.chunks(cfg.repeats))
        .map(|(&(d, k, p_prime), u)| PhaseRow {
            d,
            k,
            p_prime,
            repeats: cfg.repeats,
            min_usage: Summary::of(u),
        })
        .collect())
}

/// Runs the phase-transition cells and writes `phase.csv`.
pub fn run_phase_transition(cfg: &ExperimentConfig) -> Result<Vec<PhaseRow>> {
    cfg.validate()?;
    prepare_output(&cfg.output_dir)?;
    let rows = compute_phase_transition(cfg)?;
    write_text(cfg.output_dir.join("config.toml"), &cfg.to_toml())?;
    write_text(cfg.output_dir.join("phase.csv"), &phase_csv(&rows))?;
    Ok(rows)
}

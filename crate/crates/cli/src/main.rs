use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use overdict_core::coding::{empirical_risk, LossSpec};
use overdict_core::distill::{oracle_overlap, oracle_prune, prune_by_usage};
use overdict_core::experiments::{
    self, Algorithm, ExperimentConfig, SALT_DICTIONARY, SALT_LEARN, SALT_MONTE_CARLO, SALT_TEST, SALT_TRAIN,
};
use overdict_core::io::{csv_text, read_mtx, write_mtx, write_text};
use overdict_core::learning::{ksvd_train, odl_train, parse_usage_csv, TrainReport, TrainStatus};
use overdict_core::metrics::{
    atom_diagnostics, cross_nu, diagnostics_csv, dict_distance, legacy_distance, lemma1_check_with, mutual_coherence,
    nearest_estimates, theorem2_threshold, BoundReport,
};
use overdict_core::model::{gen_dictionary, sample_batch, CoeffDist, Dictionary, GenerativeModel, SampleSet};
use overdict_core::rng::derive_seed;
use overdict_core::{Error, Result};

#[derive(Parser)]
#[command(name = "overdict", version, about = "Over-realized dictionary learning experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Base seed; overrides `base_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_parser = parse_key_value)]
    set: Vec<(String, String)>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a ground-truth dictionary with training and test signals.
    Gen {
        /// Training signals (default: `n_train`).
        #[arg(long)]
        n: Option<usize>,
        /// Noise level (default: first entry of `sigma_grid`).
        #[arg(long)]
        sigma: Option<f64>,
        /// Draw ±1 coefficients instead of standard Gaussians.
        #[arg(long)]
        rademacher: bool,
    },
    /// Learn a dictionary from a signal matrix.
    Train {
        #[arg(long)]
        samples: PathBuf,
        /// Number of atoms (default: `p`).
        #[arg(long)]
        p_prime: Option<usize>,
    },
    /// Prune a learned dictionary to its most used atoms.
    Distill {
        #[arg(long)]
        dictionary: PathBuf,
        #[arg(long)]
        usage: PathBuf,
        /// Atoms to keep (default: `p`).
        #[arg(long)]
        p_target: Option<usize>,
        /// Ground truth, for the oracle overlap or oracle selection.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Keep the atoms nearest to the ground truth instead.
        #[arg(long, requires = "truth")]
        oracle: bool,
    },
    /// Compare a dictionary with the ground truth.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        dictionary: PathBuf,
        /// Signals on which to report the empirical risk.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Usage counts, for per-atom diagnostics.
        #[arg(long)]
        usage: Option<PathBuf>,
    },
    /// Monte-Carlo evaluation of the risk/recovery bounds.
    Bounds {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        dictionary: PathBuf,
        /// Sparsity (default: `k`).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 100_000)]
        n_mc: usize,
        /// Training signals, to report the generalization gap.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Closeness level for the pruning-threshold report.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Over-realization sweep over `p_prime_grid`, `sigma_grid` and `n_train_grid`.
    Sweep,
    /// Sweep plus relative improvement per noise level.
    Noise,
    /// Minimum-usage statistic over `d_grid`, `k_grid` and `p_prime_grid`.
    Phase,
}

fn parse_key_value(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(("base_seed".into(), seed.to_string()));
    }
    if let Some(out) = &common.out {
        overrides.push(("output_dir".into(), toml_string(&out.to_string_lossy())));
    }
    match &common.config {
        Some(path) => ExperimentConfig::load(path, &overrides),
        None => ExperimentConfig::from_sources(None, &overrides),
    }
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn output_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(dir)
}

fn read_dictionary(path: &Path) -> Result<Dictionary> {
    Dictionary::new(read_mtx(path)?)
}

fn read_samples(path: &Path) -> Result<SampleSet> {
    SampleSet::from_signals(read_mtx(path)?)
}

fn read_usage(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_usage_csv(&text)
}

fn metrics_csv(rows: &[(&str, f64)]) -> String {
    csv_text("metric,value", rows.iter().map(|(m, v)| format!("{m},{v:.16e}")))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let seed = cfg.base_seed;
    match cli.command {
        Command::Gen { n, sigma, rademacher } => {
            let dir = output_dir(&cfg)?;
            let d0 = gen_dictionary(cfg.d, cfg.p, derive_seed(seed, SALT_DICTIONARY))?;
            let dist = if rademacher { CoeffDist::Rademacher } else { CoeffDist::StandardGaussian };
            let model = GenerativeModel::new(d0.clone(), cfg.k, dist, sigma.unwrap_or(cfg.sigma_grid[0]))?;
            let train = sample_batch(&model, n.unwrap_or(cfg.n_train), derive_seed(seed, SALT_TRAIN))?;
            let test = sample_batch(&model, cfg.n_test, derive_seed(seed, SALT_TEST))?;
            write_mtx(dir.join("truth.mtx"), d0.matrix())?;
            write_mtx(dir.join("train.mtx"), train.signals())?;
            write_mtx(dir.join("test.mtx"), test.signals())?;
            println!("wrote truth.mtx, train.mtx, test.mtx to {}", dir.display());
        }
        Command::Train { samples, p_prime } => {
            let set = read_samples(&samples)?;
            let tc = cfg.train_config(p_prime.unwrap_or(cfg.p), cfg.k, derive_seed(seed, SALT_LEARN));
            let report = match cfg.algorithm {
                Algorithm::Ksvd => ksvd_train(&set, &tc)?,
                Algorithm::OdlOmp | Algorithm::OdlLasso => odl_train(&set, &tc)?,
            };
            let dir = output_dir(&cfg)?;
            report.write_to(dir)?;
            let s = report.status;
            println!(
                "trained {} atoms; dead atoms replaced {}, skipped batches {}, init fallback {}, coder not converged {}, singular fallback {}",
                report.dictionary.n_atoms(),
                s.dead_atoms_replaced,
                s.skipped_batches,
                s.init_fallback,
                s.coder_not_converged,
                s.singular_fallback
            );
        }
        Command::Distill {
            dictionary,
            usage,
            p_target,
            truth,
            oracle,
        } => {
            let report = TrainReport {
                dictionary: read_dictionary(&dictionary)?,
                usage: read_usage(&usage)?,
                loss_trace: Vec::new(),
                status: TrainStatus::default(),
            };
            let target = p_target.unwrap_or(cfg.p);
            let truth = truth.as_deref().map(read_dictionary).transpose()?;
            let mut result = match (&truth, oracle) {
                (Some(d0), true) => oracle_prune(&report, d0, target)?,
                _ => prune_by_usage(&report, target)?,
            };
            if let Some(d0) = &truth {
                result.oracle_overlap = Some(oracle_overlap(&report, d0, &result.kept_indices)?);
            }
            let dir = output_dir(&cfg)?;
            result.write_to(dir)?;
            match result.oracle_overlap {
                Some(o) => println!("kept {} atoms, oracle overlap {o:.4}", target),
                None => println!("kept {} atoms", target),
            }
        }
        Command::Eval {
            truth,
            dictionary,
            samples,
            usage,
        } => {
            let d0 = read_dictionary(&truth)?;
            let dhat = read_dictionary(&dictionary)?;
            let mut rows = vec![
                ("dict_distance", dict_distance(&d0, &dhat)?),
                ("mu_truth", mutual_coherence(&d0).value),
                ("mu_estimate", mutual_coherence(&dhat).value),
                ("nu", cross_nu(&dhat, &d0)?.value),
            ];
            if d0.n_atoms() == dhat.n_atoms() {
                rows.push(("legacy_distance", legacy_distance(&d0, &dhat)?));
            }
            if let Some(path) = samples {
                let set = read_samples(&path)?;
                rows.push(("risk_f1", empirical_risk(&set, &dhat, LossSpec::L0Constrained { s: 1 })?));
                rows.push(("risk_fk", empirical_risk(&set, &dhat, cfg.coder(cfg.k))?));
            }
            let dir = output_dir(&cfg)?;
            write_text(dir.join("metrics.csv"), &metrics_csv(&rows))?;
            if let Some(path) = usage {
                let diag = atom_diagnostics(&dhat, &d0, &read_usage(&path)?)?;
                write_text(dir.join("diagnostics.csv"), &diagnostics_csv(&diag))?;
            }
            for (m, v) in rows {
                println!("{m} {v:.6e}");
            }
        }
        Command::Bounds {
            truth,
            dictionary,
            k,
            n_mc,
            train,
            eps,
        } => {
            let d0 = read_dictionary(&truth)?;
            let dhat = read_dictionary(&dictionary)?;
            let model = GenerativeModel::new(d0.clone(), k.unwrap_or(cfg.k), CoeffDist::StandardGaussian, 0.0)?;
            let mut report = lemma1_check_with(&model, &dhat, n_mc, derive_seed(seed, SALT_MONTE_CARLO))?;
            if let Some(path) = train {
                report = report.with_training_set(&read_samples(&path)?, &dhat)?;
            }
            let dir = output_dir(&cfg)?;
            write_text(dir.join("bounds.csv"), &BoundReport::to_csv(std::slice::from_ref(&report)))?;
            println!(
                "dist {:.6e} lower {:.6e} upper {:.6e} (lower holds {}, upper holds {} at 3 SE)",
                report.dist,
                report.lower,
                report.upper,
                report.lower_holds(3.0),
                report.upper_holds(3.0)
            );
            if let Some(eps) = eps {
                let t = theorem2_threshold(eps, report.mu0, report.mu_cross)?;
                let close = nearest_estimates(&d0, &dhat)?.iter().filter(|&&(_, v)| v <= eps).count();
                write_text(
                    dir.join("threshold.csv"),
                    &csv_text(
                        "eps,mu0,mu_cross,threshold,degenerate,close_true_atoms",
                        [format!(
                            "{eps},{:.16e},{:.16e},{:.16e},{},{close}",
                            report.mu0, report.mu_cross, t.value, t.degenerate
                        )],
                    ),
                )?;
                println!("pruning threshold {:.6} ({close} of {} true atoms within eps)", t.value, d0.n_atoms());
            }
        }
        Command::Sweep => {
            let rows = experiments::run_sweep(&cfg)?;
            println!("{} rows written to {}", rows.len(), cfg.output_dir.display());
        }
        Command::Noise => {
            let rows = experiments::run_noise_sweep(&cfg)?;
            println!("{} noise rows written to {}", rows.len(), cfg.output_dir.display());
        }
        Command::Phase => {
            let rows = experiments::run_phase_transition(&cfg)?;
            println!("{} phase rows written to {}", rows.len(), cfg.output_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}

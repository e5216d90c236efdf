//! Pruning an over-realized dictionary back to a target size.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{csv_text, write_mtx, write_text};
use crate::learning::{TrainConfig, TrainReport};
use crate::metrics::signed_sq_distances;
use crate::model::{Dictionary, SampleSet};

#[derive(Debug, Clone, PartialEq)]
pub struct DistillResult {
    /// Selected columns of the input, unmodified, in index order.
    pub dictionary: Dictionary,
    /// Selected atom indices, ascending.
    pub kept_indices: Vec<usize>,
    /// Fraction of `kept_indices` shared with the oracle selection.
    pub oracle_overlap: Option<f64>,
}

impl DistillResult {
    fn from_selection(report: &TrainReport, mut kept: Vec<usize>) -> Result<Self> {
        kept.sort_unstable();
        Ok(Self {
            dictionary: report.dictionary.select(&kept)?,
            kept_indices: kept,
            oracle_overlap: None,
        })
    }

    pub fn kept_csv(&self) -> String {
        csv_text(
            "rank,atom_index",
            self.kept_indices.iter().enumerate().map(|(r, j)| format!("{r},{j}")),
        )
    }

    /// Writes `distilled.mtx` and `kept.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_mtx(dir.join("distilled.mtx"), self.dictionary.matrix())?;
        write_text(dir.join("kept.csv"), &self.kept_csv())
    }
}

fn check_target(report: &TrainReport, p_target: usize) -> Result<()> {
    let pp = report.dictionary.n_atoms();
    if p_target == 0 || p_target > pp {
        return Err(Error::InvalidArgument(format!(
            "p_target must be in 1..={pp}, got {p_target}"
        )));
    }
    if report.usage.len() != pp {
        return Err(Error::ShapeMismatch {
            expected: format!("{pp} usage counts"),
            actual: format!("{}", report.usage.len()),
        });
    }
    Ok(())
}

/// Atom indices by descending usage, ties to the lower index.
fn usage_order(usage: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..usage.len()).collect();
    order.sort_by(|&a, &b| usage[b].cmp(&usage[a]).then(a.cmp(&b)));
    order
}

/// Keeps the `p_target` most used atoms.
pub fn prune_by_usage(report: &TrainReport, p_target: usize) -> Result<DistillResult> {
    check_target(report, p_target)?;
    let kept = usage_order(&report.usage)[..p_target].to_vec();
    Ok(DistillResult::from_selection(report, kept)?)
}

/// Keeps, for each true atom, its nearest estimated atom.
///
/// True atoms are processed in ascending order of their nearest distance and
/// an estimated atom is taken at most once; a true atom whose nearest atom is
/// already taken is skipped. Any shortfall is filled with the most used
/// remaining atoms. When `p_target < p` only the closest `p_target` matches
/// are kept.
pub fn oracle_prune(report: &TrainReport, d0: &Dictionary, p_target: usize) -> Result<DistillResult> {
    check_target(report, p_target)?;
    let kept = oracle_selection(report, d0, p_target)?;
    Ok(DistillResult::from_selection(report, kept)?)
}

fn oracle_selection(report: &TrainReport, d0: &Dictionary, p_target: usize) -> Result<Vec<usize>> {
    let dhat = &report.dictionary;
    if d0.dim() != dhat.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} rows", dhat.dim()),
            actual: format!("{} rows", d0.dim()),
        });
    }
    let dist = signed_sq_distances(d0.matrix(), dhat.matrix());
    let mut nearest: Vec<(f64, usize, usize)> = (0..d0.n_atoms())
        .map(|i| {
            let mut best = (f64::INFINITY, 0);
            for j in 0..dhat.n_atoms() {
                if dist[(i, j)] < best.0 {
                    best = (dist[(i, j)], j);
                }
            }
            (best.0, i, best.1)
        })
        .collect();
    nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut taken = vec![false; dhat.n_atoms()];
    let mut kept = Vec::with_capacity(p_target);
    for &(_, _, j) in &nearest {
        if kept.len() == p_target {
            break;
        }
        if !taken[j] {
            taken[j] = true;
            kept.push(j);
        }
    }
    for j in usage_order(&report.usage) {
        if kept.len() == p_target {
            break;
        }
        if !taken[j] {
            taken[j] = true;
            kept.push(j);
        }
    }
    Ok(kept)
}

/// Fraction of `selection` also chosen by the oracle for the same size.
pub fn oracle_overlap(report: &TrainReport, d0: &Dictionary, selection: &[usize]) -> Result<f64> {
    check_target(report, selection.len())?;
    let oracle = oracle_selection(report, d0, selection.len())?;
    let shared = selection.iter().filter(|j| oracle.contains(j)).count();
    Ok(shared as f64 / selection.len() as f64)
}

/// [`prune_by_usage`] with `oracle_overlap` filled in.
pub fn prune_with_oracle(report: &TrainReport, d0: &Dictionary, p_target: usize) -> Result<DistillResult> {
    let mut result = prune_by_usage(report, p_target)?;
    result.oracle_overlap = Some(oracle_overlap(report, d0, &result.kept_indices)?);
    Ok(result)
}

/// Signature shared by [`odl_train_from`](crate::learning::odl_train_from)
/// and [`ksvd_train_from`](crate::learning::ksvd_train_from).
pub type Trainer = fn(&SampleSet, &TrainConfig, Dictionary) -> Result<TrainReport>;

/// Optional refinement of a pruned dictionary, starting from its atoms;
/// `cfg.p_prime` is replaced by the pruned size.
pub fn fine_tune(result: &DistillResult, samples: &SampleSet, cfg: &TrainConfig, trainer: Trainer) -> Result<TrainReport> {
    let cfg = TrainConfig {
        p_prime: result.kept_indices.len(),
        ..cfg.clone()
    };
    trainer(samples, &cfg, result.dictionary.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::TrainStatus;
    use crate::metrics::dict_distance;
    use crate::model::gen_dictionary;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn report(dict: Dictionary, usage: Vec<usize>) -> TrainReport {
        TrainReport {
            dictionary: dict,
            usage,
            loss_trace: vec![],
            status: TrainStatus::default(),
        }
    }

    #[test]
    fn usage_example() {
        let r = report(gen_dictionary(4, 3, 0).unwrap(), vec![5, 1, 9]);
        let out = prune_by_usage(&r, 2).unwrap();
        assert_eq!(out.kept_indices, vec![0, 2]);
        assert_eq!(out.dictionary.matrix().column(1), r.dictionary.matrix().column(2));
        assert!(out.oracle_overlap.is_none());
    }

    #[test]
    fn full_size_is_identity() {
        let r = report(gen_dictionary(4, 6, 0).unwrap(), vec![0, 3, 3, 1, 0, 2]);
        let out = prune_by_usage(&r, 6).unwrap();
        assert_eq!(out.kept_indices, (0..6).collect::<Vec<_>>());
        assert_eq!(out.dictionary, r.dictionary);
    }

    #[test]
    fn usage_ties_prefer_lower_index() {
        let r = report(gen_dictionary(4, 5, 0).unwrap(), vec![2, 7, 2, 2, 7]);
        assert_eq!(prune_by_usage(&r, 3).unwrap().kept_indices, vec![0, 1, 4]);
    }

    #[test]
    fn target_too_large() {
        let r = report(gen_dictionary(4, 3, 0).unwrap(), vec![1, 1, 1]);
        assert_eq!(prune_by_usage(&r, 4).unwrap_err().kind(), "invalid_argument");
        assert!(oracle_prune(&r, &r.dictionary, 4).is_err());
        assert!(prune_by_usage(&r, 0).is_err());
    }

    #[test]
    fn oracle_finds_embedded_copy() {
        let d0 = gen_dictionary(10, 6, 1).unwrap();
        let noise = gen_dictionary(10, 5, 2).unwrap();
        let mut cols: Vec<_> = (0..5).map(|j| noise.atom(j).into_owned()).collect();
        let flipped: Vec<_> = (0..6).map(|j| -d0.atom(j).into_owned()).collect();
        for (pos, c) in [1, 3, 4, 6, 8, 10].into_iter().zip(flipped) {
            cols.insert(pos, c);
        }
        let dhat = Dictionary::from_columns(&cols).unwrap();
        let r = report(dhat, vec![0; 11]);
        let out = oracle_prune(&r, &d0, 6).unwrap();
        assert_eq!(out.kept_indices, vec![1, 3, 4, 6, 8, 10]);
        assert!(dict_distance(&d0, &out.dictionary).unwrap() < 1e-20);
    }

    #[test]
    fn oracle_pads_collisions_by_usage() {
        // Both true atoms are nearest to estimated atom 0.
        let d0 = Dictionary::from_unnormalized(DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.1, -0.1, 0.0, 0.0])).unwrap();
        let dhat = Dictionary::new(DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0])).unwrap();
        let r = report(dhat, vec![0, 4, 9]);
        assert_eq!(oracle_prune(&r, &d0, 2).unwrap().kept_indices, vec![0, 2]);
    }

    #[test]
    fn oracle_at_full_size_is_permutation() {
        let d0 = gen_dictionary(8, 5, 3).unwrap();
        let dhat = gen_dictionary(8, 5, 4).unwrap();
        let r = report(dhat, vec![1, 2, 3, 4, 5]);
        assert_eq!(oracle_prune(&r, &d0, 5).unwrap().kept_indices, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn serialization() {
        let r = report(gen_dictionary(4, 3, 0).unwrap(), vec![5, 1, 9]);
        let out = prune_by_usage(&r, 2).unwrap();
        assert_eq!(out.kept_csv(), "rank,atom_index\n0,0\n1,2\n");
        let dir = tempfile::tempdir().unwrap();
        out.write_to(dir.path()).unwrap();
        let m = crate::io::read_mtx(dir.path().join("distilled.mtx")).unwrap();
        assert_eq!(&m, out.dictionary.matrix());
    }

    #[test]
    fn fine_tune_keeps_size() {
        let d0 = gen_dictionary(8, 6, 3).unwrap();
        let model = crate::model::GenerativeModel::new(d0.clone(), 2, Default::default(), 0.0).unwrap();
        let samples = crate::model::sample_batch(&model, 64, 1).unwrap();
        let r = report(gen_dictionary(8, 9, 5).unwrap(), vec![3; 9]);
        let pruned = prune_by_usage(&r, 6).unwrap();
        let cfg = TrainConfig::new(9, 5, crate::coding::LossSpec::L0Constrained { s: 2 }, 0);
        let tuned = fine_tune(&pruned, &samples, &cfg, crate::learning::odl_train_from).unwrap();
        assert_eq!(tuned.dictionary.n_atoms(), 6);
    }

    proptest! {
        #[test]
        fn kept_usage_dominates_discarded(usage in prop::collection::vec(0usize..20, 1..15), frac in 0.0f64..1.0, seed in 0u64..100) {
            let pp = usage.len();
            let target = 1 + ((pp - 1) as f64 * frac) as usize;
            let d0 = gen_dictionary(5, 4, seed + 1000).unwrap();
            let r = report(gen_dictionary(5, pp, seed).unwrap(), usage.clone());
            let out = prune_by_usage(&r, target).unwrap();
            prop_assert_eq!(out.kept_indices.len(), target);
            let min_kept = out.kept_indices.iter().map(|&j| usage[j]).min().unwrap();
            for j in (0..pp).filter(|j| !out.kept_indices.contains(j)) {
                prop_assert!(usage[j] <= min_kept);
            }
            let full = dict_distance(&d0, &r.dictionary).unwrap();
            let sub = dict_distance(&d0, &out.dictionary).unwrap();
            prop_assert!(sub >= full - 1e-12);
            prop_assert_eq!(prune_by_usage(&r, target).unwrap(), out);
        }
    }
}

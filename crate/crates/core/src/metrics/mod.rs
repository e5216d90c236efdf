//! Recovery distances, coherence measures, per-atom diagnostics, and the
//! quantities entering the risk/recovery bounds.

mod assignment;
mod bounds;

use nalgebra::DMatrix;

pub use assignment::min_cost_assignment;
pub use bounds::{lemma1_check, lemma1_check_with, theorem2_threshold, zeta_k, BoundReport};

use crate::coding::{empirical_risk, LossSpec};
use crate::error::{Error, Result};
use crate::io::csv_text;
use crate::learning::TrainReport;
use crate::model::{Dictionary, SampleSet};

/// A value computed under a documented convention when the input was
/// degenerate (too few atoms, empty set, zero denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub degenerate: bool,
}

impl<T> Flagged<T> {
    fn ok(value: T) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn degenerate(value: T) -> Self {
        Self {
            value,
            degenerate: true,
        }
    }
}

fn check_rows(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: format!("{a} rows"),
            actual: format!("{b} rows"),
        });
    }
    Ok(())
}

/// `min_{c=±1} ||a - c b||²` for every pair of columns, as a
/// `cols(a) × cols(b)` matrix.
pub fn signed_sq_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let g = a.tr_mul(b);
    let na: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).collect();
    let nb: Vec<f64> = b.column_iter().map(|c| c.norm_squared()).collect();
    DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        (na[i] + nb[j] - 2.0 * g[(i, j)].abs()).max(0.0)
    })
}

/// For each row, the lowest-index column attaining the minimum.
fn row_argmin(m: &DMatrix<f64>) -> Vec<(usize, f64)> {
    (0..m.nrows())
        .map(|i| {
            let mut best = (0, m[(i, 0)]);
            for j in 1..m.ncols() {
                if m[(i, j)] < best.1 {
                    best = (j, m[(i, j)]);
                }
            }
            best
        })
        .collect()
}

/// For every true atom, the index of its nearest estimated atom and the
/// sign-optimal squared distance to it.
pub fn nearest_estimates(d0: &Dictionary, dhat: &Dictionary) -> Result<Vec<(usize, f64)>> {
    check_rows(d0.dim(), dhat.dim())?;
    Ok(row_argmin(&signed_sq_distances(d0.matrix(), dhat.matrix())))
}

/// Cross-size recovery distance: the mean over true atoms of the squared
/// distance to the closest estimated atom, up to sign.
pub fn dict_distance(d0: &Dictionary, dhat: &Dictionary) -> Result<f64> {
    let nearest = nearest_estimates(d0, dhat)?;
    Ok(nearest.iter().map(|&(_, v)| v).sum::<f64>() / d0.n_atoms() as f64)
}

/// `min_P ||D0 - D̂P||²_F` over signed permutations, solved exactly as an
/// assignment problem on the signed squared distances.
pub fn legacy_distance(d0: &Dictionary, dhat: &Dictionary) -> Result<f64> {
    check_rows(d0.dim(), dhat.dim())?;
    if d0.n_atoms() != dhat.n_atoms() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} atoms", d0.n_atoms()),
            actual: format!("{} atoms", dhat.n_atoms()),
        });
    }
    let cost = signed_sq_distances(d0.matrix(), dhat.matrix());
    Ok(min_cost_assignment(&cost).1)
}

/// `max_{i≠j} |⟨D_i, D_j⟩|`; 0 (flagged) when there is a single atom.
pub fn mutual_coherence(dict: &Dictionary) -> Flagged<f64> {
    let p = dict.n_atoms();
    if p < 2 {
        return Flagged::degenerate(0.0);
    }
    let g = dict.matrix().tr_mul(dict.matrix());
    let mut m = 0.0f64;
    for j in 0..p {
        for i in 0..j {
            m = m.max(g[(i, j)].abs());
        }
    }
    Flagged::ok(m.min(1.0))
}

/// Coherence between `D̂` and `D0` after excluding, for each estimated atom,
/// its nearest true atom (lowest index on ties). 0 (flagged) when `D0` has
/// a single atom.
pub fn cross_nu(dhat: &Dictionary, d0: &Dictionary) -> Result<Flagged<f64>> {
    check_rows(d0.dim(), dhat.dim())?;
    if d0.n_atoms() < 2 {
        return Ok(Flagged::degenerate(0.0));
    }
    let dist = signed_sq_distances(dhat.matrix(), d0.matrix());
    let nearest = row_argmin(&dist);
    let g = dhat.matrix().tr_mul(d0.matrix());
    let mut m = 0.0f64;
    for (j, &(i_near, _)) in nearest.iter().enumerate() {
        for k in 0..d0.n_atoms() {
            if k != i_near {
                m = m.max(g[(j, k)].abs());
            }
        }
    }
    Ok(Flagged::ok(m.min(1.0)))
}

/// `max_{i,j} |⟨D0_i, A_j⟩|`; `a` may have zero columns (0, flagged).
pub fn cross_coherence(d0: &Dictionary, a: &DMatrix<f64>) -> Result<Flagged<f64>> {
    check_rows(d0.dim(), a.nrows())?;
    if a.ncols() == 0 {
        return Ok(Flagged::degenerate(0.0));
    }
    let m = d0.matrix().tr_mul(a).amax();
    Ok(Flagged::ok(m.min(1.0)))
}

/// Similarity assigned to an exact match, `ln(1e18)`.
pub const SIMILARITY_CAP: f64 = 41.446_531_673_892_82;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomDiagnostics {
    pub atom_index: usize,
    pub nearest_true_index: usize,
    /// Sign-optimal squared distance to the nearest true atom.
    pub distance: f64,
    /// `-ln(distance)`, capped at [`SIMILARITY_CAP`].
    pub similarity: f64,
    pub capped: bool,
    pub usage: usize,
}

pub fn atom_diagnostics(dhat: &Dictionary, d0: &Dictionary, usage: &[usize]) -> Result<Vec<AtomDiagnostics>> {
    check_rows(d0.dim(), dhat.dim())?;
    if usage.len() != dhat.n_atoms() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} usage counts", dhat.n_atoms()),
            actual: format!("{}", usage.len()),
        });
    }
    let nearest = row_argmin(&signed_sq_distances(dhat.matrix(), d0.matrix()));
    Ok(nearest
        .into_iter()
        .enumerate()
        .map(|(j, (i, dist))| {
            let raw = -dist.ln();
            let capped = !(raw < SIMILARITY_CAP);
            AtomDiagnostics {
                atom_index: j,
                nearest_true_index: i,
                distance: dist,
                similarity: if capped { SIMILARITY_CAP } else { raw },
                capped,
                usage: usage[j],
            }
        })
        .collect())
}

pub const DIAGNOSTICS_HEADER: &str =
    "atom_index,nearest_true_index,distance,similarity,capped,usage";

pub fn diagnostics_csv(rows: &[AtomDiagnostics]) -> String {
    csv_text(
        DIAGNOSTICS_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{:.16e},{:.16e},{},{}",
                r.atom_index, r.nearest_true_index, r.distance, r.similarity, r.capped as u8, r.usage
            )
        }),
    )
}

/// Test risk minus train risk.
pub fn generalization_gap(dict: &Dictionary, train: &SampleSet, test: &SampleSet, spec: LossSpec) -> Result<f64> {
    Ok(empirical_risk(test, dict, spec)? - empirical_risk(train, dict, spec)?)
}

/// Smallest per-atom usage of a trained dictionary.
pub fn min_usage_statistic(report: &TrainReport) -> usize {
    report.usage.iter().copied().min().unwrap_or(0)
}

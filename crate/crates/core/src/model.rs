//! Ground-truth dictionaries and the synthetic sparse generative model.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

/// Tolerance on unit column norms.
pub const NORM_TOL: f64 = 1e-9;

/// A `d × p` matrix whose columns (atoms) have unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Wraps a matrix whose columns are already unit norm.
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        check_shape(&atoms)?;
        check_finite(&atoms)?;
        for (j, col) in atoms.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::NotNormalized { index: j, norm });
            }
        }
        Ok(Self { atoms })
    }

    /// Normalizes every column of `atoms`. Zero columns are rejected.
    pub fn from_unnormalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        check_shape(&atoms)?;
        check_finite(&atoms)?;
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm == 0.0 {
                return Err(Error::NotNormalized { index: j, norm });
            }
            col /= norm;
        }
        Ok(Self { atoms })
    }

    /// Builds from a column-major list of atoms, normalizing each.
    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidDimensions("no columns".into()));
        }
        Self::from_unnormalized(DMatrix::from_columns(columns))
    }

    /// Signal dimension `d`.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms `p`.
    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atom(&self, j: usize) -> DVectorView<'_, f64> {
        self.atoms.column(j)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.atoms
    }

    /// The dictionary made of the given columns, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidDimensions("empty column selection".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.n_atoms()) {
            return Err(Error::InvalidArgument(format!(
                "column {bad} out of range for {} atoms",
                self.n_atoms()
            )));
        }
        Ok(Self {
            atoms: self.atoms.select_columns(indices),
        })
    }

    /// `[self | other]`.
    pub fn concat(&self, other: &Dictionary) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} rows", self.dim()),
                actual: format!("{} rows", other.dim()),
            });
        }
        let cols: Vec<_> = self
            .atoms
            .column_iter()
            .chain(other.atoms.column_iter())
            .map(|c| c.into_owned())
            .collect();
        Ok(Self {
            atoms: DMatrix::from_columns(&cols),
        })
    }

    /// Dictionary times a sparse code.
    pub fn apply(&self, code: &SparseCode) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (&j, &v) in code.support().iter().zip(code.values()) {
            out.axpy(v, &self.atoms.column(j), 1.0);
        }
        out
    }
}

fn check_shape(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidDimensions(format!(
            "dictionary must be at least 1x1, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Support set and nonzero values of a sparse vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseCode {
    support: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCode {
    /// `support` must be strictly increasing and match `values` in length.
    pub fn new(support: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "support has {} entries but values has {}",
                support.len(),
                values.len()
            )));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "support must be strictly increasing".into(),
            ));
        }
        Ok(Self { support, values })
    }

    /// Builds a code from unordered `(index, value)` pairs.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Result<Self> {
        pairs.sort_by_key(|&(j, _)| j);
        let (support, values) = pairs.into_iter().unzip();
        Self::new(support, values)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Dense length-`p` representation.
    pub fn to_dense(&self, p: usize) -> DVector<f64> {
        let mut out = DVector::zeros(p);
        for (&j, &v) in self.support.iter().zip(&self.values) {
            out[j] = v;
        }
        out
    }
}

/// Distribution of the nonzero coefficients; both have mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffDist {
    #[default]
    StandardGaussian,
    Rademacher,
}

impl CoeffDist {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            CoeffDist::StandardGaussian => StandardNormal.sample(rng),
            CoeffDist::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Ground-truth dictionary plus the sampling law `x = D0 γ + v`.
#[derive(Debug, Clone)]
pub struct GenerativeModel {
    dictionary: Dictionary,
    sparsity: usize,
    coeff_dist: CoeffDist,
    noise_sigma: f64,
}

impl GenerativeModel {
    pub fn new(
        dictionary: Dictionary,
        sparsity: usize,
        coeff_dist: CoeffDist,
        noise_sigma: f64,
    ) -> Result<Self> {
        if sparsity == 0 || sparsity > dictionary.dim() || sparsity > dictionary.n_atoms() {
            return Err(Error::InvalidArgument(format!(
                "sparsity {sparsity} must lie in [1, min(d={}, p={})]",
                dictionary.dim(),
                dictionary.n_atoms()
            )));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be finite and nonnegative, got {noise_sigma}"
            )));
        }
        Ok(Self {
            dictionary,
            sparsity,
            coeff_dist,
            noise_sigma,
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    pub fn coeff_dist(&self) -> CoeffDist {
        self.coeff_dist
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Same model with a different noise level.
    pub fn with_noise(&self, noise_sigma: f64) -> Result<Self> {
        Self::new(
            self.dictionary.clone(),
            self.sparsity,
            self.coeff_dist,
            noise_sigma,
        )
    }
}

/// Training or test signals, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    signals: DMatrix<f64>,
    codes: Option<Vec<SparseCode>>,
}

impl SampleSet {
    pub fn new(signals: DMatrix<f64>, codes: Option<Vec<SparseCode>>) -> Result<Self> {
        if signals.ncols() == 0 || signals.nrows() == 0 {
            return Err(Error::InvalidDimensions("empty sample set".into()));
        }
        if let Some(c) = &codes {
            if c.len() != signals.ncols() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} codes", signals.ncols()),
                    actual: format!("{} codes", c.len()),
                });
            }
        }
        Ok(Self { signals, codes })
    }

    pub fn from_signals(signals: DMatrix<f64>) -> Result<Self> {
        Self::new(signals, None)
    }

    pub fn dim(&self) -> usize {
        self.signals.nrows()
    }

    pub fn len(&self) -> usize {
        self.signals.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.ncols() == 0
    }

    pub fn sample(&self, i: usize) -> DVectorView<'_, f64> {
        self.signals.column(i)
    }

    pub fn signals(&self) -> &DMatrix<f64> {
        &self.signals
    }

    pub fn codes(&self) -> Option<&[SparseCode]> {
        self.codes.as_deref()
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let codes = self
            .codes
            .as_ref()
            .map(|c| indices.iter().map(|&i| c[i].clone()).collect());
        Self::new(self.signals.select_columns(indices), codes)
    }
}

/// `p` i.i.d. standard normal columns normalized to unit norm.
///
/// Column `j` depends only on `(seed, j)`, so dictionaries generated with the
/// same seed share their leading columns.
pub fn gen_dictionary(d: usize, p: usize, seed: u64) -> Result<Dictionary> {
    if d == 0 || p == 0 {
        return Err(Error::InvalidDimensions(format!(
            "d and p must be at least 1, got d={d}, p={p}"
        )));
    }
    let columns: Vec<DVector<f64>> = (0..p)
        .map(|j| {
            let mut rng = substream(seed, Domain::Dictionary, j as u64);
            loop {
                let v = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                if v.norm() > 0.0 {
                    break v;
                }
            }
        })
        .collect();
    Dictionary::from_columns(&columns)
}

/// Draws a `k`-sparse code with uniformly random support.
pub fn sample_code<R: Rng + ?Sized>(model: &GenerativeModel, rng: &mut R) -> SparseCode {
    let p = model.dictionary.n_atoms();
    let mut support = rand::seq::index::sample(rng, p, model.sparsity).into_vec();
    support.sort_unstable();
    let values = support.iter().map(|_| model.coeff_dist.draw(rng)).collect();
    SparseCode { support, values }
}

/// Draws `n` signals `x_i = D0 γ_i + v_i`, keeping the pre-noise codes.
pub fn sample_batch(model: &GenerativeModel, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let d = model.dictionary.dim();
    let drawn: Vec<(DVector<f64>, SparseCode)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Domain::Samples, i as u64);
            let code = sample_code(model, &mut rng);
            let mut x = model.dictionary.apply(&code);
            if model.noise_sigma > 0.0 {
                let mut noise_rng = substream(seed, Domain::Noise, i as u64);
                for r in 0..d {
                    let z: f64 = StandardNormal.sample(&mut noise_rng);
                    x[r] += model.noise_sigma * z;
                }
            }
            (x, code)
        })
        .collect();
    let (columns, codes): (Vec<_>, Vec<_>) = drawn.into_iter().unzip();
    SampleSet::new(DMatrix::from_columns(&columns), Some(codes))
}

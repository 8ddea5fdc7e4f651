//! Dynamic-mode feature sets and the permutation-aligned distance between
//! them.
//!
//! Modes are the right eigenvectors `V` of `M = V diag(lambda) V^{-1}`,
//! normalized to unit length. Eigenvectors of a real nonsymmetric matrix
//! are complex in general, so features are kept complex and compared with
//! the modulus similarity `|x^H y| / (|x| |y|)`, which ignores any complex
//! rescaling of either vector.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub type C64 = Complex<f64>;

/// Eigenvector matrices with a condition number above this are reported as
/// nearly defective.
pub const DEFECTIVE_CONDITION: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct Eigenmodes {
    pub values: Vec<C64>,
    /// Unit-norm right eigenvectors, `vectors[k]` paired with `values[k]`.
    pub vectors: Vec<DVector<C64>>,
    /// 2-norm condition number of the eigenvector matrix.
    pub condition: f64,
}

/// Eigen-decomposition through the complex Schur form `M = Z T Z^H`.
///
/// Eigenvectors of the triangular factor are obtained by back substitution
/// and mapped back with `Z`; near-zero pivots are perturbed to a small
/// floor so repeated eigenvalues still produce finite directions.
pub fn eigenmodes(m: &DMatrix<f64>) -> Result<Eigenmodes> {
    if !m.is_square() {
        return Err(Error::Shape(format!("eigenmodes needs a square matrix, got {:?}", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix for eigen-decomposition"));
    }
    let dim = m.nrows();
    if dim == 0 {
        return Ok(Eigenmodes {
            values: Vec::new(),
            vectors: Vec::new(),
            condition: 1.0,
        });
    }
    let complex = m.map(|v| C64::new(v, 0.0));
    let (z, t) = nalgebra::linalg::Schur::new(complex).unpack();
    let scale = t.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = (f64::EPSILON * scale).max(f64::MIN_POSITIVE);

    let mut values = Vec::with_capacity(dim);
    let mut vectors = Vec::with_capacity(dim);
    for k in 0..dim {
        let lambda = t[(k, k)];
        let mut y = DVector::<C64>::zeros(dim);
        y[k] = C64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for l in j + 1..=k {
                acc += t[(j, l)] * y[l];
            }
            let mut pivot = t[(j, j)] - lambda;
            if pivot.norm() < floor {
                pivot = C64::new(floor, 0.0);
            }
            y[j] = -acc / pivot;
            // Rescale to keep the recurrence away from overflow.
            let big = y.iter().map(|c| c.norm()).fold(0.0, f64::max);
            if big > 1e100 {
                y.unscale_mut(big);
            }
        }
        let mut v = &z * y;
        let norm = v.norm();
        v.unscale_mut(norm);
        values.push(lambda);
        vectors.push(v);
    }

    let vmat = DMatrix::from_columns(&vectors);
    let sv = vmat.singular_values();
    let condition = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
    if condition > DEFECTIVE_CONDITION {
        log::warn!("eigenvector matrix is nearly defective (condition {condition:e}); using computed directions");
    }
    Ok(Eigenmodes {
        values,
        vectors,
        condition,
    })
}

/// Which dynamic modes make up a feature set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Eigenvectors of `A`.
    #[default]
    SlowOnly,
    /// Eigenvectors of `Q`.
    FastOnly,
    /// Eigenvectors of `A` followed by those of `Q`.
    Both,
    /// Eigenvectors of `A` from a single-timescale fit (`Q = 0`).
    SingleTimescale,
}

impl FeatureSource {
    pub const ALL: [FeatureSource; 4] = [
        FeatureSource::SlowOnly,
        FeatureSource::FastOnly,
        FeatureSource::Both,
        FeatureSource::SingleTimescale,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::SlowOnly => "slow",
            FeatureSource::FastOnly => "fast",
            FeatureSource::Both => "both",
            FeatureSource::SingleTimescale => "single",
        }
    }
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slow" | "slow_only" => Ok(FeatureSource::SlowOnly),
            "fast" | "fast_only" => Ok(FeatureSource::FastOnly),
            "both" => Ok(FeatureSource::Both),
            "single" | "single_timescale" => Ok(FeatureSource::SingleTimescale),
            other => Err(Error::InvalidArgument(format!("unknown feature source '{other}'"))),
        }
    }
}

/// Unordered set of unit-norm complex mode vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalFeatures {
    vectors: Vec<DVector<C64>>,
    eigenvalues: Vec<C64>,
    source: FeatureSource,
}

impl ModalFeatures {
    /// Normalizes every vector; all must share one dimension and be nonzero.
    pub fn new(vectors: Vec<DVector<C64>>, eigenvalues: Vec<C64>, source: FeatureSource) -> Result<Self> {
        if vectors.len() != eigenvalues.len() {
            return Err(Error::Shape(format!(
                "{} vectors but {} eigenvalues",
                vectors.len(),
                eigenvalues.len()
            )));
        }
        let dim = vectors.first().map_or(0, |v| v.len());
        let mut normalized = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.len() != dim {
                return Err(Error::Shape("feature vectors differ in dimension".into()));
            }
            if v.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::NonFinite("feature vector"));
            }
            let norm = v.norm();
            if norm == 0.0 {
                return Err(Error::InvalidArgument("zero feature vector".into()));
            }
            normalized.push(v.unscale(norm));
        }
        Ok(Self {
            vectors: normalized,
            eigenvalues,
            source,
        })
    }

    pub fn vectors(&self) -> &[DVector<C64>] {
        &self.vectors
    }

    pub fn eigenvalues(&self) -> &[C64] {
        &self.eigenvalues
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }
}

/// Mode feature set of the given kind. `SingleTimescale` expects parameters
/// fitted with `Q = 0`.
pub fn modal_features(params: &ModelParams, source: FeatureSource) -> Result<ModalFeatures> {
    let (vectors, values) = match source {
        FeatureSource::SlowOnly => {
            let e = eigenmodes(params.a())?;
            (e.vectors, e.values)
        }
        FeatureSource::FastOnly => {
            let e = eigenmodes(params.q())?;
            (e.vectors, e.values)
        }
        FeatureSource::Both => {
            let slow = eigenmodes(params.a())?;
            let fast = eigenmodes(params.q())?;
            (
                slow.vectors.into_iter().chain(fast.vectors).collect(),
                slow.values.into_iter().chain(fast.values).collect(),
            )
        }
        FeatureSource::SingleTimescale => {
            if params.q().iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidArgument(
                    "single-timescale features need parameters fitted with Q = 0".into(),
                ));
            }
            let e = eigenmodes(params.a())?;
            (e.vectors, e.values)
        }
    };
    ModalFeatures::new(vectors, values, source)
}

/// `|x^H y| / (|x| |y|)`.
pub fn similarity(x: &DVector<C64>, y: &DVector<C64>) -> f64 {
    let denom = x.norm() * y.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (x.dotc(y).norm() / denom).min(1.0)
}

/// Cost matrix `C[i, j] = 1 - similarity(x_i, y_j)`.
pub fn cost_matrix(f1: &ModalFeatures, f2: &ModalFeatures) -> Result<DMatrix<f64>> {
    if f1.len() != f2.len() {
        return Err(Error::Shape(format!(
            "feature sets differ in size: {} vs {}",
            f1.len(),
            f2.len()
        )));
    }
    if f1.dimension() != f2.dimension() {
        return Err(Error::Shape(format!(
            "feature vectors differ in dimension: {} vs {}",
            f1.dimension(),
            f2.dimension()
        )));
    }
    let n = f1.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        // Vectors are unit norm by construction.
        1.0 - (f1.vectors[i].dotc(&f2.vectors[j]).norm()).min(1.0)
    }))
}

/// Minimum over one-to-one matchings of the summed dissimilarity.
pub fn aligned_distance(f1: &ModalFeatures, f2: &ModalFeatures) -> Result<f64> {
    let cost = cost_matrix(f1, f2)?;
    Ok(assignment::solve(&cost)?.cost.max(0.0))
}

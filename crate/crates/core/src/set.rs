//! Domain types shared by every aggregation method, plus the weighted-sum
//! contract and the similarity primitives used for matching.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n x d` block of element features that share one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Array2<f64>,
    identity: i64,
    source_id: String,
}

impl FeatureSet {
    pub fn new(features: Array2<f64>, identity: i64, source_id: impl Into<String>) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::Validation(format!("feature set must be non-empty, got {n}x{d}")));
        }
        if identity < 0 {
            return Err(Error::Validation(format!(
                "identity label must be >= 0, got {identity}"
            )));
        }
        ensure_finite(features.view(), "features")?;
        Ok(Self {
            features,
            identity,
            source_id: source_id.into(),
        })
    }

    /// Builds a set from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], identity: i64, source_id: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("rows of unequal length".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(features, identity, source_id)
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn into_features(self) -> Array2<f64> {
        self.features
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn identity(&self) -> i64 {
        self.identity
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Returns a copy whose rows are scaled to unit L2 norm. Zero rows are kept as-is.
    pub fn l2_normalized(&self) -> Self {
        Self {
            features: l2_normalize_rows(self.features.view()),
            identity: self.identity,
            source_id: self.source_id.clone(),
        }
    }

    /// Returns a copy with rows permuted so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        let features = self.features.select(Axis(0), perm);
        Ok(Self {
            features,
            identity: self.identity,
            source_id: self.source_id.clone(),
        })
    }
}

/// Per-element weights for one set.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Array1<f64>);

impl WeightVector {
    pub fn new(weights: Array1<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Validation("weights must be finite".into()));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize, value: f64) -> Self {
        Self(Array1::from_elem(n, value))
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array1<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Elementwise product, used to compose weighting schemes.
    pub fn product(&self, other: &WeightVector) -> Result<WeightVector> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "cannot compose weights of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        WeightVector::new(&self.0 * &other.0)
    }
}

impl From<WeightVector> for Array1<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Which weighting produced a set representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodTag {
    Sum,
    Attention,
    Vbs,
    Vba,
    Gmp,
    Da,
    Composite,
}

impl MethodTag {
    pub const ALL: [MethodTag; 7] = [
        MethodTag::Sum,
        MethodTag::Attention,
        MethodTag::Vbs,
        MethodTag::Vba,
        MethodTag::Gmp,
        MethodTag::Da,
        MethodTag::Composite,
    ];

    pub fn code(self) -> u8 {
        match self {
            MethodTag::Sum => 0,
            MethodTag::Attention => 1,
            MethodTag::Vbs => 2,
            MethodTag::Vba => 3,
            MethodTag::Gmp => 4,
            MethodTag::Da => 5,
            MethodTag::Composite => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodTag::Sum => "sum",
            MethodTag::Attention => "attention",
            MethodTag::Vbs => "vbs",
            MethodTag::Vba => "vba",
            MethodTag::Gmp => "gmp",
            MethodTag::Da => "da",
            MethodTag::Composite => "composite",
        }
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown method tag {s:?}")))
    }
}

/// The aggregated vector describing a whole set.
#[derive(Debug, Clone, PartialEq)]
pub struct SetRepresentation {
    pub vector: Array1<f64>,
    pub method: MethodTag,
}

impl SetRepresentation {
    pub fn new(vector: Array1<f64>, method: MethodTag) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::Validation("empty set representation".into()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("set representation must be finite".into()));
        }
        Ok(Self { vector, method })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// `F = sum_i w_i f_i`, tagged as plain [`MethodTag::Sum`]; use
/// [`weighted_sum_tagged`] to record the weighting method.
pub fn weighted_sum(set: &FeatureSet, weights: &WeightVector) -> Result<SetRepresentation> {
    weighted_sum_tagged(set, weights, MethodTag::Sum)
}

pub fn weighted_sum_tagged(set: &FeatureSet, weights: &WeightVector, method: MethodTag) -> Result<SetRepresentation> {
    let vector = weighted_rows(set.features(), weights.as_array().view())?;
    SetRepresentation::new(vector, method)
}

/// Weighted sum of matrix rows.
pub fn weighted_rows(rows: ArrayView2<'_, f64>, weights: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if rows.nrows() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} rows",
            weights.len(),
            rows.nrows()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Validation("weights must be finite".into()));
    }
    Ok(rows.t().dot(&weights))
}

/// Cosine similarity `a.b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("cosine similarity of a zero vector".into()));
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Result of comparing two weighted sets through their aggregated vectors.
#[derive(Debug, Clone)]
pub struct CrossSimilarity {
    /// `<sum_i wx_i x_i, sum_j wy_j y_j>`.
    pub aggregate: f64,
    /// `[wx_i wy_j <x_i, y_j>]`, an `n x m` matrix whose entries sum to `aggregate`.
    pub pairwise: Array2<f64>,
}

/// Splits the inner product of two sum-aggregated representations into the
/// all-to-all weighted element similarities it is made of.
pub fn cross_similarity_decomposition(
    x: &FeatureSet,
    y: &FeatureSet,
    wx: &WeightVector,
    wy: &WeightVector,
) -> Result<CrossSimilarity> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!(
            "sets of dimension {} and {}",
            x.dim(),
            y.dim()
        )));
    }
    let fx = weighted_rows(x.features(), wx.as_array().view())?;
    let fy = weighted_rows(y.features(), wy.as_array().view())?;
    let mut pairwise = x.features().dot(&y.features().t());
    for ((i, j), v) in pairwise.indexed_iter_mut() {
        *v *= wx.as_array()[i] * wy.as_array()[j];
    }
    Ok(CrossSimilarity {
        aggregate: fx.dot(&fy),
        pairwise,
    })
}

pub fn l2_normalize_rows(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

pub(crate) fn ensure_finite(m: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if let Some(((i, j), v)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Validation(format!("{what}[{i}, {j}] is not finite ({v})")));
    }
    Ok(())
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Validation(format!(
            "permutation of length {} for {n} rows",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Validation(format!("{perm:?} is not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

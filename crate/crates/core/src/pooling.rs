// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token-matrix aggregation: mean, max, last-token, attention pooling, and
//! a dataset-level PCA basis whose scores feed the MLP probe.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gelu, softmax_in_place};

/// Hidden states of one token segment, `N x D`, rows in token order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix(Array2<f64>);

impl TokenMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "token matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token matrix".into()));
        }
        Ok(Self(data))
    }

    pub fn from_f32(rows: usize, dim: usize, data: &[f32]) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} floats for {rows}x{dim} token matrix",
                data.len()
            )));
        }
        let v = data.iter().map(|&x| x as f64).collect();
        Self::new(Array2::from_shape_vec((rows, dim), v).expect("length checked"))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let flat = rows.iter().flatten().copied().collect();
        Self::new(Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::ShapeMismatch(e.to_string()))?)
    }

    pub fn n_tokens(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Input-stage pooling for the MLP probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PoolingSpec {
    Mean,
    Max,
    LastToken,
    /// Mean-pooled vector projected onto the top `n_components` principal
    /// directions of the training token rows.
    Pca { n_components: usize },
}

impl std::str::FromStr for PoolingSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PoolingSpec::Mean),
            "max" => Ok(PoolingSpec::Max),
            "last" | "last_token" | "last-token" => Ok(PoolingSpec::LastToken),
            other => match other.strip_prefix("pca:") {
                Some(n) => n
                    .parse()
                    .map(|n_components| PoolingSpec::Pca { n_components })
                    .map_err(|_| Error::InvalidArgument(format!("bad PCA size in {other:?}"))),
                None => Err(Error::InvalidArgument(format!("unknown pooling {other:?}"))),
            },
        }
    }
}

pub fn mean_pool(m: &TokenMatrix) -> Array1<f64> {
    m.0.mean_axis(Axis(0)).expect("non-empty by construction")
}

pub fn max_pool(m: &TokenMatrix) -> Array1<f64> {
    m.0.fold_axis(Axis(0), f64::NEG_INFINITY, |&acc, &x| acc.max(x))
}

pub fn last_token_pool(m: &TokenMatrix) -> Array1<f64> {
    m.0.row(m.n_tokens() - 1).to_owned()
}

/// Two-layer per-token scorer: `s = w2 . gelu(W1^T x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScorer {
    /// `D x H`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

impl AttentionScorer {
    pub fn scores(&self, tokens: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut hidden = tokens.dot(&self.w1);
        hidden += &self.b1;
        hidden.mapv_inplace(gelu);
        hidden.dot(&self.w2) + self.b2
    }
}

/// Softmax weights over tokens followed by the weighted row sum. Returns
/// `(pooled, weights)`.
pub fn attention_pool_weighted(m: &TokenMatrix, scorer: &AttentionScorer) -> Result<(Array1<f64>, Array1<f64>)> {
    if scorer.w1.nrows() != m.dim() {
        return Err(Error::DimensionMismatch(format!(
            "scorer expects dim {}, tokens have {}",
            scorer.w1.nrows(),
            m.dim()
        )));
    }
    let mut weights = scorer.scores(m.view());
    softmax_in_place(weights.as_slice_mut().expect("contiguous"));
    let pooled = weights.dot(&m.0);
    Ok((pooled, weights))
}

pub fn attention_pool(m: &TokenMatrix, scorer: &AttentionScorer) -> Result<Array1<f64>> {
    attention_pool_weighted(m, scorer).map(|(pooled, _)| pooled)
}

/// Top principal directions of a set of token rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Array1<f64>,
    /// `n x D`, orthonormal rows.
    pub components: Array2<f64>,
    /// Nonincreasing.
    pub explained_variance: Array1<f64>,
}

impl PcaBasis {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    /// Component scores of a single D-vector.
    pub fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "PCA basis has dim {}, input has {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self.components.dot(&(&x - &self.mean)))
    }
}

/// Mean and unbiased covariance over every row of every matrix.
pub fn token_covariance(matrices: &[TokenMatrix]) -> Result<(Array1<f64>, Array2<f64>)> {
    let d = matrices
        .first()
        .map(TokenMatrix::dim)
        .ok_or_else(|| Error::InvalidArgument("no matrices for covariance".into()))?;
    if let Some(bad) = matrices.iter().find(|m| m.dim() != d) {
        return Err(Error::DimensionMismatch(format!("dims {d} and {}", bad.dim())));
    }
    let total: usize = matrices.iter().map(TokenMatrix::n_tokens).sum();
    if total < 2 {
        return Err(Error::Degenerate("covariance needs at least 2 rows".into()));
    }
    let mut mean = Array1::<f64>::zeros(d);
    for m in matrices {
        mean += &m.0.sum_axis(Axis(0));
    }
    mean /= total as f64;

    let mut cov = Array2::<f64>::zeros((d, d));
    for m in matrices {
        let centered = &m.0 - &mean;
        cov += &centered.t().dot(&centered);
    }
    cov /= (total - 1) as f64;
    Ok((mean, cov))
}

/// Fit the top-`n` principal directions of all token rows. Each component's
/// largest-magnitude entry is made positive.
pub fn pca_fit(matrices: &[TokenMatrix], n: usize) -> Result<PcaBasis> {
    if n == 0 {
        return Err(Error::InvalidArgument("PCA needs n >= 1".into()));
    }
    let total: usize = matrices.iter().map(TokenMatrix::n_tokens).sum();
    if total <= n {
        return Err(Error::Degenerate(format!("PCA with n={n} needs more than {n} rows, got {total}")));
    }
    let (mean, cov) = token_covariance(matrices)?;
    let d = cov.nrows();
    if n > d {
        return Err(Error::InvalidArgument(format!("PCA n={n} exceeds dimension {d}")));
    }

    let sym = nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * d as f64 * f64::EPSILON * 16.0 + f64::MIN_POSITIVE;
    let achievable = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
    if achievable < n {
        return Err(Error::RankDeficient {
            requested: n,
            achievable,
        });
    }

    let mut components = Array2::<f64>::zeros((n, d));
    let mut variance = Array1::<f64>::zeros(n);
    for (k, &i) in order.iter().take(n).enumerate() {
        let col = eig.eigenvectors.column(i);
        let pivot = (0..d)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .expect("d >= 1");
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[k, j]] = sign * col[j];
        }
        variance[k] = eig.eigenvalues[i];
    }
    Ok(PcaBasis {
        mean,
        components,
        explained_variance: variance,
    })
}

/// Scores of the example's mean-pooled vector on each component (length n).
pub fn pca_project(basis: &PcaBasis, m: &TokenMatrix) -> Result<Array1<f64>> {
    if m.dim() != basis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "PCA basis has dim {}, tokens have {}",
            basis.dim(),
            m.dim()
        )));
    }
    basis.scores(mean_pool(m).view())
}

/// Apply a pooling spec. PCA pooling needs its fitted basis.
pub fn pool(spec: PoolingSpec, m: &TokenMatrix, pca: Option<&PcaBasis>) -> Result<Array1<f64>> {
    match spec {
        PoolingSpec::Mean => Ok(mean_pool(m)),
        PoolingSpec::Max => Ok(max_pool(m)),
        PoolingSpec::LastToken => Ok(last_token_pool(m)),
        PoolingSpec::Pca { n_components } => {
            let basis = pca.ok_or_else(|| Error::InvalidArgument("PCA pooling without a fitted basis".into()))?;
            if basis.n_components() != n_components {
                return Err(Error::ShapeMismatch(format!(
                    "PCA basis has {} components, pooling asks for {n_components}",
                    basis.n_components()
                )));
            }
            pca_project(basis, m)
        }
    }
}

/// Length of the pooled vector for a given token dimension.
pub fn pooled_dim(spec: PoolingSpec, token_dim: usize) -> usize {
    match spec {
        PoolingSpec::Pca { n_components } => n_components,
        _ => token_dim,
    }
}

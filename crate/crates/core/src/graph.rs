//! Intrinsic and penalty graphs over a two-domain batch.
//!
//! A batch of `N` samples is described by its labels and domain tags
//! ([`BatchMeta`]). The LDA-style rules connect cross-domain samples of the
//! same class in the intrinsic graph and cross-domain samples of different
//! classes in the penalty graph. Graph Laplacians `L = D - W` turn the
//! pairwise objective `sum_ij |phi_i - phi_j|^2 W_ij` into the trace form
//! `2 Tr(Phi L Phi^T)`.
//!
//! All matrices are dense: `N` is a mini-batch size.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    Target,
}

/// Labels and domain membership of every column of a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchMeta {
    labels: Vec<usize>,
    domains: Vec<DomainTag>,
}

impl BatchMeta {
    pub fn new(labels: Vec<usize>, domains: Vec<DomainTag>) -> Result<Self> {
        if labels.len() != domains.len() {
            return Err(shape_mismatch("batch meta", labels.len(), domains.len()));
        }
        if labels.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a batch needs at least 2 samples, got {}",
                labels.len()
            )));
        }
        Ok(Self { labels, domains })
    }

    /// Source samples first, then target samples, matching the column
    /// layout `[phi(X_s) | phi(X_t)]`.
    pub fn two_domain(source_labels: &[usize], target_labels: &[usize]) -> Result<Self> {
        let labels = source_labels.iter().chain(target_labels).copied().collect();
        let domains = std::iter::repeat_n(DomainTag::Source, source_labels.len())
            .chain(std::iter::repeat_n(DomainTag::Target, target_labels.len()))
            .collect();
        Self::new(labels, domains)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn domains(&self) -> &[DomainTag] {
        &self.domains
    }

    /// Reorders samples so that new position `k` holds old sample `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            domains: perm.iter().map(|&i| self.domains[i]).collect(),
        }
    }
}

/// Options for the intrinsic graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    /// Also connect same-class samples of the same domain (ablation only).
    #[serde(default)]
    pub within_domain_edges: bool,
}

/// Symmetric, nonnegative pairwise weights with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Array2<f64>);

impl WeightMatrix {
    pub fn from_array(entries: Array2<f64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols {
            return Err(shape_mismatch("weight matrix", (rows, rows), (rows, cols)));
        }
        for i in 0..rows {
            if entries[[i, i]] != 0.0 {
                return Err(Error::InvalidInput(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let w = entries[[i, j]];
                if !w.is_finite() {
                    return Err(Error::NonFinite("weight matrix"));
                }
                if w < 0.0 {
                    return Err(Error::InvalidInput(format!("negative weight at ({i}, {j})")));
                }
                if w != entries[[j, i]] {
                    return Err(Error::InvalidInput(format!("asymmetric weight at ({i}, {j})")));
                }
            }
        }
        Ok(Self(entries))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Array2::zeros((n, n)))
    }

    pub(crate) fn from_array_unchecked(entries: Array2<f64>) -> Self {
        debug_assert!(Self::from_array(entries.clone()).is_ok());
        Self(entries)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(permute_symmetric(&self.0, perm))
    }
}

/// `L = D - W` for a valid weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix(Array2<f64>);

impl LaplacianMatrix {
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(permute_symmetric(&self.0, perm))
    }
}

fn permute_symmetric(m: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let n = perm.len();
    Array2::from_shape_fn((n, n), |(i, j)| m[[perm[i], perm[j]]])
}

fn build_by_rule(meta: &BatchMeta, rule: impl Fn(usize, usize) -> bool) -> WeightMatrix {
    let n = meta.len();
    let w = Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && rule(i, j) {
            1.0
        } else {
            0.0
        }
    });
    WeightMatrix::from_array_unchecked(w)
}

/// Intrinsic graph: an edge between samples of the same class drawn from
/// different domains.
pub fn build_intrinsic_lda(meta: &BatchMeta) -> WeightMatrix {
    build_intrinsic_lda_with(meta, GraphOptions::default())
}

pub fn build_intrinsic_lda_with(meta: &BatchMeta, options: GraphOptions) -> WeightMatrix {
    let (y, dom) = (meta.labels(), meta.domains());
    build_by_rule(meta, |i, j| {
        y[i] == y[j] && (options.within_domain_edges || dom[i] != dom[j])
    })
}

/// Penalty graph: an edge between samples of different classes drawn from
/// different domains.
pub fn build_penalty_lda(meta: &BatchMeta) -> WeightMatrix {
    let (y, dom) = (meta.labels(), meta.domains());
    build_by_rule(meta, |i, j| y[i] != y[j] && dom[i] != dom[j])
}

/// Row sums of `W`, i.e. the diagonal of the degree matrix.
pub fn degrees(w: &WeightMatrix) -> Array1<f64> {
    w.0.sum_axis(Axis(1))
}

pub fn degree_matrix(w: &WeightMatrix) -> Array2<f64> {
    Array2::from_diag(&degrees(w))
}

pub fn laplacian(w: &WeightMatrix) -> LaplacianMatrix {
    let mut l = -&w.0;
    for (i, d) in degrees(w).into_iter().enumerate() {
        l[[i, i]] = d;
    }
    LaplacianMatrix(l)
}

fn check_columns(phi: &ArrayView2<f64>, n: usize) -> Result<()> {
    if phi.ncols() != n {
        return Err(shape_mismatch("embedding columns", n, phi.ncols()));
    }
    Ok(())
}

/// `sum_i sum_j |phi_i - phi_j|^2 W_ij` over both orderings of every pair.
pub fn pairwise_quadratic(phi: ArrayView2<f64>, w: &WeightMatrix) -> Result<f64> {
    check_columns(&phi, w.len())?;
    let n = w.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let wij = w.0[[i, j]];
            if wij == 0.0 {
                continue;
            }
            let dist2: f64 = phi
                .column(i)
                .iter()
                .zip(phi.column(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += wij * dist2;
        }
    }
    Ok(total)
}

/// `Tr(Phi M Phi^T)` for a `d x N` embedding and an `N x N` matrix.
pub fn trace_quadratic(phi: ArrayView2<f64>, m: &Array2<f64>) -> Result<f64> {
    check_columns(&phi, m.nrows())?;
    if m.ncols() != m.nrows() {
        return Err(shape_mismatch("trace quadratic", m.nrows(), m.ncols()));
    }
    let pm = phi.dot(m);
    Ok((&pm * &phi).sum())
}

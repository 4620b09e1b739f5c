//! Labeled graphs: representation, normalization, ingestion and synthetic
//! generation.

pub(crate) mod io;
mod sbm;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Matrix, SparseOperand};
use crate::sparse::CsrMatrix;

pub use io::{load_graph, save_graph};
pub use sbm::{generate_sbm, SbmConfig};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("invalid SBM config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn token(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "none" => Some(Split::None),
            _ => None,
        }
    }
}

/// An immutable node-classification graph.
///
/// The adjacency pattern is symmetric with unit weights, free of duplicates
/// and self-loops. Each node carries exactly one split tag, so the
/// train/val/test masks are disjoint by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    features: Matrix,
    adjacency: CsrMatrix,
    labels: Vec<usize>,
    splits: Vec<Split>,
    num_classes: usize,
}

impl GraphDataset {
    /// Builds a dataset from an undirected edge list. Reversed and repeated
    /// pairs collapse to one edge; self-loops are dropped.
    pub fn from_edges(
        features: Matrix,
        edges: &[(usize, usize)],
        labels: Vec<usize>,
        splits: Vec<Split>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || splits.len() != n {
            return Err(GraphError::Invalid(format!(
                "{n} feature rows but {} labels and {} split tags",
                labels.len(),
                splits.len()
            )));
        }
        if let Some(((r, c), _)) = features.indexed_iter().find(|(_, x)| !x.is_finite()) {
            return Err(GraphError::Invalid(format!("non-finite feature at ({r}, {c})")));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(GraphError::Invalid(format!(
                "node {i} has label {y} but there are {num_classes} classes"
            )));
        }
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::Invalid(format!("edge ({u}, {v}) references a node >= {n}")));
            }
            if u != v {
                triplets.push((u, v, 1.0));
                triplets.push((v, u, 1.0));
            }
        }
        let summed = CsrMatrix::from_triplets(n, n, &triplets);
        let adjacency = CsrMatrix::new(
            n,
            n,
            summed.indptr().to_vec(),
            summed.indices().to_vec(),
            vec![1.0; summed.nnz()],
        );
        Ok(Self {
            features,
            adjacency,
            labels,
            splits,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.row(node).map(|(c, _)| c)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.indptr()[node + 1] - self.adjacency.indptr()[node]
    }

    /// Undirected edges as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes())
            .flat_map(|u| self.neighbors(u).filter(move |&v| u < v).map(move |v| (u, v)))
            .collect()
    }

    /// Ascending indices of nodes tagged with `split`.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.split_indices(Split::Train)
    }

    /// Nodes whose label may be used during training.
    pub fn is_labeled_for_training(&self, node: usize) -> bool {
        self.splits[node] == Split::Train
    }

    /// Mean fraction of same-class neighbors over nodes with at least one
    /// neighbor.
    pub fn edge_homophily(&self) -> f64 {
        let mut total = 0.0;
        let mut counted = 0usize;
        for u in 0..self.num_nodes() {
            let deg = self.degree(u);
            if deg == 0 {
                continue;
            }
            let same = self.neighbors(u).filter(|&v| self.labels[v] == self.labels[u]).count();
            total += same as f64 / deg as f64;
            counted += 1;
        }
        if counted == 0 {
            0.0
        } else {
            total / counted as f64
        }
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` in compressed-row form.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    operator: Arc<SparseOperand>,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &CsrMatrix {
        self.operator.matrix()
    }

    pub fn operand(&self) -> Arc<SparseOperand> {
        Arc::clone(&self.operator)
    }

    pub fn dim(&self) -> usize {
        self.matrix().rows()
    }
}

pub fn normalize_adjacency(g: &GraphDataset) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt()).collect();
    let mut triplets = Vec::with_capacity(g.adjacency().nnz() + n);
    for u in 0..n {
        triplets.push((u, u, inv_sqrt[u] * inv_sqrt[u]));
        for v in g.neighbors(u) {
            triplets.push((u, v, inv_sqrt[u] * inv_sqrt[v]));
        }
    }
    NormalizedAdjacency {
        operator: SparseOperand::new(CsrMatrix::from_triplets(n, n, &triplets)),
    }
}

//! Two-layer GCN, SGC and MLP node classifiers over flattened parameters.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Matrix, Tape, Var};
use crate::graph::NormalizedAdjacency;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn2,
    Sgc2,
    Mlp2,
}

impl Arch {
    pub fn id(self) -> u32 {
        match self {
            Arch::Gcn2 => 0,
            Arch::Sgc2 => 1,
            Arch::Mlp2 => 2,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(Arch::Gcn2),
            1 => Some(Arch::Sgc2),
            2 => Some(Arch::Mlp2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
}

/// Location of one weight tensor inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorLayout {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorLayout {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(ModelError::Spec(format!(
                "layer widths must be >= 1, got {}/{}/{}",
                self.in_dim, self.hidden_dim, self.out_dim
            )));
        }
        Ok(())
    }

    /// Same architecture with a different initialization seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Tensor shapes in order: weights then bias for each layer.
    pub fn layout(&self) -> Vec<TensorLayout> {
        let shapes = match self.arch {
            Arch::Gcn2 | Arch::Mlp2 => vec![
                (self.in_dim, self.hidden_dim),
                (1, self.hidden_dim),
                (self.hidden_dim, self.out_dim),
                (1, self.out_dim),
            ],
            Arch::Sgc2 => vec![(self.in_dim, self.out_dim), (1, self.out_dim)],
        };
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(rows, cols)| {
                let t = TensorLayout { rows, cols, offset };
                offset += rows * cols;
                t
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(TensorLayout::len).sum()
    }
}

/// Model parameters as one flat vector plus the tensor layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub flat: Vec<f64>,
    pub layout: Vec<TensorLayout>,
}

impl ParameterVector {
    pub fn new(flat: Vec<f64>, layout: Vec<TensorLayout>) -> Result<Self> {
        let total: usize = layout.iter().map(TensorLayout::len).sum();
        if total != flat.len() {
            return Err(ModelError::Shape(format!(
                "layout covers {total} parameters but vector has {}",
                flat.len()
            )));
        }
        Ok(Self { flat, layout })
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn unflatten(&self) -> Vec<Matrix> {
        self.layout
            .iter()
            .map(|t| {
                Array2::from_shape_vec((t.rows, t.cols), self.flat[t.offset..t.offset + t.len()].to_vec())
                    .expect("layout lengths checked")
            })
            .collect()
    }

    pub fn flatten(tensors: &[Matrix]) -> Self {
        let mut flat = Vec::new();
        let mut layout = Vec::with_capacity(tensors.len());
        for m in tensors {
            layout.push(TensorLayout {
                rows: m.nrows(),
                cols: m.ncols(),
                offset: flat.len(),
            });
            flat.extend(m.iter().copied());
        }
        Self { flat, layout }
    }

    /// Records each tensor as a leaf on `tape`.
    pub fn to_vars<'t>(&self, tape: &'t Tape, requires_grad: bool) -> Vec<Var<'t>> {
        self.unflatten()
            .into_iter()
            .map(|m| if requires_grad { tape.param(m) } else { tape.constant(m) })
            .collect()
    }

    pub fn from_vars(vars: &[Var<'_>]) -> Self {
        let tensors: Vec<Matrix> = vars.iter().map(|v| (*v.value()).clone()).collect();
        Self::flatten(&tensors)
    }

    pub fn sub(&self, other: &Self) -> Vec<f64> {
        self.flat.iter().zip(&other.flat).map(|(a, b)| a - b).collect()
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `spec.seed`.
pub fn init_params(spec: &ModelSpec) -> ParameterVector {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = spec.layout();
    let mut flat = vec![0.0; spec.num_params()];
    for t in &layout {
        if t.rows == 1 {
            continue;
        }
        let bound = (6.0 / (t.rows + t.cols) as f64).sqrt();
        for x in &mut flat[t.offset..t.offset + t.len()] {
            *x = rng.random_range(-bound..bound);
        }
    }
    ParameterVector { flat, layout }
}

/// How node features are propagated before each layer.
#[derive(Debug, Clone, Copy)]
pub enum Propagation<'a> {
    /// Structure-free: propagation is the identity.
    Identity,
    Graph(&'a NormalizedAdjacency),
}

impl Propagation<'_> {
    fn apply<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Propagation::Identity => Ok(x),
            Propagation::Graph(a) => Ok(x.sparse_product(a.operand(), false)?),
        }
    }
}

/// Logits of `spec` on features `x`.
pub fn forward<'t>(spec: &ModelSpec, params: &[Var<'t>], x: Var<'t>, prop: Propagation<'_>) -> Result<Var<'t>> {
    let (rows, cols) = x.shape();
    if cols != spec.in_dim {
        return Err(ModelError::Shape(format!(
            "features have {cols} columns, model expects {}",
            spec.in_dim
        )));
    }
    if let Propagation::Graph(a) = prop {
        if a.dim() != rows {
            return Err(ModelError::Shape(format!(
                "adjacency is {}x{} but there are {rows} feature rows",
                a.dim(),
                a.dim()
            )));
        }
    }
    let expected = spec.layout().len();
    if params.len() != expected {
        return Err(ModelError::Shape(format!(
            "{} parameter tensors given, {expected} expected",
            params.len()
        )));
    }
    match spec.arch {
        Arch::Gcn2 => {
            let h = prop.apply(x)?.matmul(params[0])?.add_row(params[1])?.relu();
            Ok(prop.apply(h)?.matmul(params[2])?.add_row(params[3])?)
        }
        Arch::Mlp2 => {
            let h = x.matmul(params[0])?.add_row(params[1])?.relu();
            Ok(h.matmul(params[2])?.add_row(params[3])?)
        }
        Arch::Sgc2 => {
            let smoothed = prop.apply(prop.apply(x)?)?;
            Ok(smoothed.matmul(params[0])?.add_row(params[1])?)
        }
    }
}

/// Plain evaluation without gradients.
pub fn predict(spec: &ModelSpec, theta: &ParameterVector, features: &Matrix, prop: Propagation<'_>) -> Result<Matrix> {
    let tape = Tape::new();
    let params = theta.to_vars(&tape, false);
    let x = tape.constant(features.clone());
    Ok((*forward(spec, &params, x, prop)?.value()).clone())
}

/// `-Σ targets ⊙ log_softmax(logits)`; with row weights summing to one this
/// is the mean cross-entropy.
pub fn cross_entropy<'t>(logits: Var<'t>, targets: Var<'t>) -> Result<Var<'t>> {
    let logp = logits.log_softmax()?;
    Ok(targets.mul(logp)?.sum().scale(-1.0))
}

/// One-hot targets on `rows`, each weighted `1/|rows|`; zeros elsewhere.
pub fn hard_targets(labels: &[usize], rows: &[usize], num_classes: usize) -> Matrix {
    let mut t = Array2::zeros((labels.len(), num_classes));
    let w = 1.0 / rows.len().max(1) as f64;
    for &r in rows {
        t[[r, labels[r]]] = w;
    }
    t
}

/// Index of the largest entry per row, first on ties.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(logits: &Matrix, labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let pred = argmax_rows(logits);
    rows.iter().filter(|&&r| pred[r] == labels[r]).count() as f64 / rows.len() as f64
}

//! Evaluation phase and analysis tools.
//!
//! Models are trained from scratch on a condensed set (structure-free, so
//! propagation is the identity) and scored transductively on the original
//! graph. The same protocol trains on the full graph for reference numbers.

mod clustering;
mod coreset;
mod decomposition;
mod report;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Matrix, Tape};
use crate::buffer::expert_seed;
use crate::condenser::{CondenseError, CondensedSet};
use crate::graph::{normalize_adjacency, GraphDataset, Split};
use crate::models::{
    accuracy, cross_entropy, forward, hard_targets, init_params, predict, ModelError, ModelSpec, ParameterVector,
    Propagation,
};

pub use clustering::{calinski_harabasz, clustering_metrics, davies_bouldin, silhouette, ClusteringScores};
pub use coreset::{coreset, coreset_indices, herding, k_center, CoresetMethod};
pub use decomposition::{
    decompose_trajectory, error_decomposition, CondensedDynamics, DecompositionConfig, DecompositionRow,
    ErrorDecomposition, LinearRegressionDynamics, StudentDynamics,
};
pub use report::{write_decomposition_csv, write_eval_csv, write_eval_json, EvalSummary};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("training diverged at epoch {0}")]
    Divergence(usize),
    #[error("clustering metric undefined: {0}")]
    Metric(String),
    #[error("telescoping identity violated at stage {stage}: max coordinate residual {residual:e}")]
    IdentityViolation { stage: usize, residual: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Condense(#[from] CondenseError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<AutodiffError> for EvalError {
    fn from(e: AutodiffError) -> Self {
        EvalError::Model(e.into())
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub train_epochs: usize,
    pub eval_interval: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub optimizer: Optimizer,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            train_epochs: 200,
            eval_interval: 20,
            lr: 0.01,
            weight_decay: 5e-4,
            optimizer: Optimizer::Adam,
            repeats: 5,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.eval_interval < 1 || self.eval_interval > self.train_epochs {
            return Err(EvalError::Contract(format!(
                "eval_interval ({}) must lie in [1, train_epochs = {}]",
                self.eval_interval, self.train_epochs
            )));
        }
        if self.repeats < 1 {
            return Err(EvalError::Contract("repeats must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(EvalError::Contract(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Best test accuracy of each repeat plus aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        Self {
            accuracies,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Training data for [`train_model`]: what the loss sees, nothing more.
pub struct TrainingData<'a> {
    pub features: &'a Matrix,
    pub propagation: Propagation<'a>,
    /// Row-weighted targets, zero on rows that carry no loss.
    pub targets: Matrix,
}

/// Full-batch training from `init`; `probe` sees the parameters every
/// `proto.eval_interval` epochs and after the last epoch.
pub fn train_model(
    spec: &ModelSpec,
    init: ParameterVector,
    data: &TrainingData<'_>,
    proto: &EvalProtocol,
    mut probe: impl FnMut(usize, &ParameterVector) -> Result<()>,
) -> Result<ParameterVector> {
    let mut theta = init;
    let n = theta.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    for epoch in 1..=proto.train_epochs {
        let tape = Tape::new();
        let params = theta.to_vars(&tape, true);
        let x = tape.constant(data.features.clone());
        let logits = forward(spec, &params, x, data.propagation)?;
        let loss = cross_entropy(logits, tape.constant(data.targets.clone()))?;
        if !loss.scalar().is_finite() {
            return Err(EvalError::Divergence(epoch));
        }
        let grads = tape.backward(loss)?;
        let tensors: Vec<Matrix> = params.iter().map(|&p| grads.get_or_zeros(p)).collect();
        let grad = ParameterVector::flatten(&tensors).flat;
        match proto.optimizer {
            Optimizer::Sgd => {
                for (w, g) in theta.flat.iter_mut().zip(&grad) {
                    *w -= proto.lr * (g + proto.weight_decay * *w);
                }
            }
            Optimizer::Adam => {
                let (c1, c2) = (1.0 - beta1.powi(epoch as i32), 1.0 - beta2.powi(epoch as i32));
                for i in 0..n {
                    let g = grad[i] + proto.weight_decay * theta.flat[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    theta.flat[i] -= proto.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
        if epoch % proto.eval_interval == 0 || epoch == proto.train_epochs {
            probe(epoch, &theta)?;
        }
    }
    Ok(theta)
}

/// Seed of repeat `r`'s model initialization.
pub fn repeat_seed(proto: &EvalProtocol, r: usize) -> u64 {
    expert_seed(proto.seed ^ 0x5EED_0000_0000_0000, r)
}

/// Best transductive test accuracy while training on `data`, per repeat.
fn run_repeats(
    g: &GraphDataset,
    spec: &ModelSpec,
    proto: &EvalProtocol,
    data: &TrainingData<'_>,
) -> Result<EvalReport>
where
{
    proto.validate()?;
    let adj = normalize_adjacency(g);
    let test = g.split_indices(Split::Test);
    let accuracies = (0..proto.repeats)
        .into_par_iter()
        .map(|r| {
            let spec = spec.with_seed(repeat_seed(proto, r));
            let mut best = 0.0f64;
            train_model(&spec, init_params(&spec), data, proto, |_, theta| {
                let logits = predict(&spec, theta, g.features(), Propagation::Graph(&adj))?;
                best = best.max(accuracy(&logits, g.labels(), &test));
                Ok(())
            })?;
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalReport::from_accuracies(accuracies))
}

/// Trains on the condensed set and reports the best test accuracy on `g`.
pub fn evaluate_condensed(
    set: &CondensedSet,
    g: &GraphDataset,
    spec: &ModelSpec,
    proto: &EvalProtocol,
) -> Result<EvalReport> {
    if set.features.ncols() != g.feature_dim() {
        return Err(EvalError::Contract(format!(
            "condensed features are {}-dim, graph features {}-dim",
            set.features.ncols(),
            g.feature_dim()
        )));
    }
    if spec.in_dim != g.feature_dim() || spec.out_dim != g.num_classes() {
        return Err(EvalError::Contract(format!(
            "model expects {} -> {}, graph has {} features and {} classes",
            spec.in_dim,
            spec.out_dim,
            g.feature_dim(),
            g.num_classes()
        )));
    }
    let data = TrainingData {
        features: &set.features,
        propagation: Propagation::Identity,
        targets: set.target_matrix(true),
    };
    run_repeats(g, spec, proto, &data)
}

/// Reference run: the same protocol trained on the whole graph with its
/// training labels.
pub fn evaluate_full_graph(g: &GraphDataset, spec: &ModelSpec, proto: &EvalProtocol) -> Result<EvalReport> {
    let adj = normalize_adjacency(g);
    let data = TrainingData {
        features: g.features(),
        propagation: Propagation::Graph(&adj),
        targets: hard_targets(g.labels(), &g.train_indices(), g.num_classes()),
    };
    run_repeats(g, spec, proto, &data)
}

/// The training split packaged as a (frozen) condensed set.
pub fn training_split_as_set(g: &GraphDataset) -> CondensedSet {
    let rows = g.train_indices();
    let mut features = Array2::zeros((rows.len(), g.feature_dim()));
    for (k, &r) in rows.iter().enumerate() {
        features.row_mut(k).assign(&g.features().row(r));
    }
    CondensedSet {
        features,
        hard_labels: rows.iter().map(|&r| g.labels()[r]).collect(),
        soft_labels: None,
        inner_lr: 1.0,
        num_classes: g.num_classes(),
    }
}

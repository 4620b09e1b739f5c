//! Buffer phase: training expert models on the original graph under an
//! easy-to-difficult curriculum and recording their parameter trajectories.

mod format;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::curriculum::{difficulty_scores, subset_at, CurriculumError, DifficultyProfile, PacingConfig};
use crate::graph::{normalize_adjacency, GraphDataset, NormalizedAdjacency, Split};
use crate::models::{
    accuracy, cross_entropy, forward, hard_targets, init_params, predict, Arch, ModelError, ModelSpec, ParameterVector,
    Propagation,
};

pub use format::{
    decode_trajectory, encode_trajectory, load_trajectory, save_trajectory, sidecar_path, FormatError,
    TRAJECTORY_MAGIC, TRAJECTORY_VERSION,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("invalid buffer config: {0}")]
    Config(String),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<crate::autodiff::AutodiffError> for TrainError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferConfig {
    pub num_experts: usize,
    pub arch: Arch,
    pub hidden_dim: usize,
    /// Hard cap on the number of epochs.
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub pacing: PacingConfig,
    pub snapshot_interval: usize,
    /// Post-curriculum early stopping: epochs without validation gain.
    pub patience: usize,
    pub seed: u64,
}

impl Default for BufferConfig {
    fn default() -> Self {
        let pacing = PacingConfig::default();
        Self {
            num_experts: 10,
            arch: Arch::Gcn2,
            hidden_dim: 64,
            epochs: pacing.zeta + pacing.extra_epochs,
            lr: 0.3,
            momentum: 0.0,
            weight_decay: 0.0,
            pacing,
            snapshot_interval: 1,
            patience: 20,
            seed: 0,
        }
    }
}

impl BufferConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.pacing.validate()?;
        let fail = |m: String| Err(TrainError::Config(m));
        if self.num_experts < 1 {
            return fail("num_experts must be >= 1".into());
        }
        if self.epochs < self.pacing.zeta + self.pacing.extra_epochs {
            return fail(format!(
                "epochs ({}) must cover zeta + extra_epochs ({})",
                self.epochs,
                self.pacing.zeta + self.pacing.extra_epochs
            ));
        }
        if self.snapshot_interval < 1 {
            return fail("snapshot_interval must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }

    pub fn model_spec(&self, g: &GraphDataset, expert_id: usize) -> ModelSpec {
        ModelSpec {
            arch: self.arch,
            in_dim: g.feature_dim(),
            hidden_dim: self.hidden_dim,
            out_dim: g.num_classes(),
            seed: expert_seed(self.seed, expert_id),
        }
    }
}

/// Seed of expert `expert_id`'s initialization (splitmix64 of the pair).
pub fn expert_seed(seed: u64, expert_id: usize) -> u64 {
    let mut z = seed ^ (expert_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub expert_id: usize,
    /// `None` for plain full-set training.
    pub pacing: Option<PacingConfig>,
    pub lr: f64,
    pub momentum: f64,
    pub epochs_per_snapshot: usize,
    pub seed: u64,
    pub init_seed: u64,
    /// Validation accuracy at each snapshot.
    pub val_accuracy: Vec<f64>,
    /// Training loss of each epoch, measured before its update.
    pub train_loss: Vec<f64>,
}

/// Parameter snapshots of one expert; snapshot 0 is the initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTrajectory {
    pub spec: ModelSpec,
    pub snapshots: Vec<ParameterVector>,
    pub meta: TrajectoryMeta,
}

impl ExpertTrajectory {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.snapshots.first().map_or(0, ParameterVector::len)
    }

    pub fn last(&self) -> &ParameterVector {
        self.snapshots.last().expect("trajectories hold at least two snapshots")
    }

    pub fn final_val_accuracy(&self) -> f64 {
        self.meta.val_accuracy.last().copied().unwrap_or(0.0)
    }
}

enum Schedule<'a> {
    Curriculum(&'a DifficultyProfile),
    FullSet,
}

/// Trains expert `expert_id` with the curriculum in `cfg.pacing`.
pub fn train_expert(g: &GraphDataset, cfg: &BufferConfig, expert_id: usize) -> Result<ExpertTrajectory, TrainError> {
    cfg.validate()?;
    let profile = difficulty_scores(g)?;
    run_training(g, cfg, expert_id, Schedule::Curriculum(&profile))
}

/// Same training loop without a curriculum: every epoch sees the full
/// training split.
pub fn train_expert_full(
    g: &GraphDataset,
    cfg: &BufferConfig,
    expert_id: usize,
) -> Result<ExpertTrajectory, TrainError> {
    cfg.validate()?;
    run_training(g, cfg, expert_id, Schedule::FullSet)
}

/// Trains `cfg.num_experts` experts on the current rayon pool.
pub fn train_experts(g: &GraphDataset, cfg: &BufferConfig) -> Result<Vec<ExpertTrajectory>, TrainError> {
    cfg.validate()?;
    let profile = difficulty_scores(g)?;
    (0..cfg.num_experts)
        .into_par_iter()
        .map(|id| run_training(g, cfg, id, Schedule::Curriculum(&profile)))
        .collect()
}

fn run_training(
    g: &GraphDataset,
    cfg: &BufferConfig,
    expert_id: usize,
    schedule: Schedule<'_>,
) -> Result<ExpertTrajectory, TrainError> {
    let adj = normalize_adjacency(g);
    let spec = cfg.model_spec(g, expert_id);
    spec.validate()?;
    let train_all = g.train_indices();
    let val = g.split_indices(Split::Val);
    let zeta = cfg.pacing.zeta;
    let total = (zeta + cfg.pacing.extra_epochs).min(cfg.epochs);

    let mut theta = init_params(&spec);
    let mut velocity = vec![0.0; theta.len()];
    let val_acc = |theta: &ParameterVector| -> Result<f64, TrainError> {
        let logits = predict(&spec, theta, g.features(), Propagation::Graph(&adj))?;
        Ok(accuracy(&logits, g.labels(), &val))
    };

    let mut snapshots = vec![theta.clone()];
    let mut val_series = vec![val_acc(&theta)?];
    let mut losses = Vec::with_capacity(total);
    let mut best_val = f64::NEG_INFINITY;
    let mut stale = 0usize;

    for epoch in 0..total {
        let subset = match schedule {
            Schedule::Curriculum(profile) => subset_at(profile, &cfg.pacing, epoch),
            Schedule::FullSet => train_all.clone(),
        };
        let (loss, grad) = loss_and_grad(g, &adj, &spec, &theta, &subset)?;
        if !loss.is_finite() || grad.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::Divergence { epoch, loss });
        }
        losses.push(loss);
        for ((w, v), dw) in theta.flat.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            let step = dw + cfg.weight_decay * *w;
            *v = cfg.momentum * *v + step;
            *w -= cfg.lr * *v;
        }

        let snapshot_due = (epoch + 1) % cfg.snapshot_interval == 0;
        let post_curriculum = epoch >= zeta;
        let acc = if snapshot_due || post_curriculum {
            Some(val_acc(&theta)?)
        } else {
            None
        };
        if snapshot_due {
            snapshots.push(theta.clone());
            val_series.push(acc.unwrap());
        }
        if post_curriculum {
            let acc = acc.unwrap();
            if acc > best_val {
                best_val = acc;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    if snapshots.len() < 2 {
        return Err(TrainError::Config(format!(
            "only {} epochs ran with snapshot_interval {}; need at least two snapshots",
            losses.len(),
            cfg.snapshot_interval
        )));
    }

    let pacing = match schedule {
        Schedule::Curriculum(_) => Some(cfg.pacing.clone()),
        Schedule::FullSet => None,
    };
    Ok(ExpertTrajectory {
        meta: TrajectoryMeta {
            expert_id,
            pacing,
            lr: cfg.lr,
            momentum: cfg.momentum,
            epochs_per_snapshot: cfg.snapshot_interval,
            seed: cfg.seed,
            init_seed: spec.seed,
            val_accuracy: val_series,
            train_loss: losses,
        },
        spec,
        snapshots,
    })
}

/// Mean cross-entropy over `rows` on the full graph and its gradient.
pub fn loss_and_grad(
    g: &GraphDataset,
    adj: &NormalizedAdjacency,
    spec: &ModelSpec,
    theta: &ParameterVector,
    rows: &[usize],
) -> Result<(f64, Vec<f64>), TrainError> {
    let tape = Tape::new();
    let params = theta.to_vars(&tape, true);
    let x = tape.constant(g.features().clone());
    let logits = forward(spec, &params, x, Propagation::Graph(adj))?;
    let targets = tape.constant(hard_targets(g.labels(), rows, g.num_classes()));
    let loss = cross_entropy(logits, targets)?;
    let grads = tape.backward(loss)?;
    let tensors: Vec<_> = params.iter().map(|&p| grads.get_or_zeros(p)).collect();
    Ok((loss.scalar(), ParameterVector::flatten(&tensors).flat))
}

/// Gradient-norm means of the easy and difficult training nodes at one
/// snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNormPoint {
    pub snapshot: usize,
    pub easy_mean: f64,
    pub difficult_mean: f64,
}

/// Norm of each node's own cross-entropy gradient at `theta`.
pub fn per_node_grad_norms(
    g: &GraphDataset,
    adj: &NormalizedAdjacency,
    spec: &ModelSpec,
    theta: &ParameterVector,
    nodes: &[usize],
) -> Result<Vec<f64>, TrainError> {
    let tape = Tape::new();
    let params = theta.to_vars(&tape, true);
    let x = tape.constant(g.features().clone());
    let logp = forward(spec, &params, x, Propagation::Graph(adj))?.log_softmax()?;
    let mut norms = Vec::with_capacity(nodes.len());
    for &node in nodes {
        let targets = tape.constant(hard_targets(g.labels(), &[node], g.num_classes()));
        let loss = targets.mul(logp)?.sum().scale(-1.0);
        let grads = tape.grad(loss, &params, false)?;
        let sq: f64 = grads.iter().map(|v| v.value().iter().map(|x| x * x).sum::<f64>()).sum();
        norms.push(sq.sqrt());
    }
    Ok(norms)
}

/// Splits the training nodes at `easy_fraction` of the difficulty order and
/// averages per-node gradient norms within each group, for every
/// `stride`-th snapshot (the last snapshot is always included).
pub fn grad_norm_analysis(
    g: &GraphDataset,
    trajectory: &ExpertTrajectory,
    easy_fraction: f64,
    stride: usize,
) -> Result<Vec<GradNormPoint>, TrainError> {
    if !(easy_fraction > 0.0 && easy_fraction < 1.0) {
        return Err(TrainError::Config(format!(
            "easy_fraction must lie in (0, 1), got {easy_fraction}"
        )));
    }
    let profile = difficulty_scores(g)?;
    let n = profile.num_train();
    if n < 2 {
        return Err(TrainError::Config("need at least two training nodes".into()));
    }
    let cut = ((easy_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (easy, difficult) = profile.order.split_at(cut);
    let adj = normalize_adjacency(g);
    let mut picks: Vec<usize> = (0..trajectory.len()).step_by(stride.max(1)).collect();
    if picks.last() != Some(&(trajectory.len() - 1)) {
        picks.push(trajectory.len() - 1);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    picks
        .into_iter()
        .map(|k| {
            let theta = &trajectory.snapshots[k];
            let e = per_node_grad_norms(g, &adj, &trajectory.spec, theta, easy)?;
            let d = per_node_grad_norms(g, &adj, &trajectory.spec, theta, difficult)?;
            Ok(GradNormPoint {
                snapshot: k,
                easy_mean: mean(&e),
                difficult_mean: mean(&d),
            })
        })
        .collect()
}

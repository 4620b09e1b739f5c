//! Homophily-based node difficulty and easy-to-difficult pacing.
//!
//! A training node's difficulty is the entropy of the class distribution
//! over its closed neighborhood, counting only neighbors whose labels are
//! visible during training. The pacing function then decides which prefix
//! of the ascending-difficulty order is trained on at each epoch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::GraphDataset;

#[derive(Debug, Error, PartialEq)]
pub enum CurriculumError {
    #[error("the graph has no training nodes")]
    EmptyTrainingSet,
    #[error("invalid pacing config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyProfile {
    /// Difficulty per node; zero for nodes outside the training split.
    pub scores: Vec<f64>,
    /// Training nodes by ascending difficulty, ties by ascending index.
    pub order: Vec<usize>,
}

impl DifficultyProfile {
    pub fn num_train(&self) -> usize {
        self.order.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacingKind {
    Linear,
    Root,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacingConfig {
    pub kind: PacingKind,
    /// Fraction of the training set available at epoch 0.
    pub lambda0: f64,
    /// Epoch at which the whole training set is in use.
    pub zeta: usize,
    /// Epochs of full-set training after the curriculum ends.
    pub extra_epochs: usize,
}

impl Default for PacingConfig {
    fn default() -> Self {
        Self {
            kind: PacingKind::Linear,
            lambda0: 0.5,
            zeta: 40,
            extra_epochs: 20,
        }
    }
}

impl PacingConfig {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        if !(self.lambda0 > 0.0 && self.lambda0 <= 1.0) {
            return Err(CurriculumError::Config(format!(
                "lambda0 must lie in (0, 1], got {}",
                self.lambda0
            )));
        }
        if self.zeta < 1 {
            return Err(CurriculumError::Config("zeta must be >= 1".into()));
        }
        Ok(())
    }
}

/// Entropy of the labeled closed neighborhood of every training node.
pub fn difficulty_scores(g: &GraphDataset) -> Result<DifficultyProfile, CurriculumError> {
    let train = g.train_indices();
    if train.is_empty() {
        return Err(CurriculumError::EmptyTrainingSet);
    }
    let mut scores = vec![0.0; g.num_nodes()];
    let mut counts = vec![0usize; g.num_classes()];
    for &x in &train {
        counts.iter_mut().for_each(|c| *c = 0);
        counts[g.labels()[x]] += 1;
        for n in g.neighbors(x).filter(|&n| g.is_labeled_for_training(n)) {
            counts[g.labels()[n]] += 1;
        }
        let total: usize = counts.iter().sum();
        scores[x] = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.ln()
            })
            .sum::<f64>()
            .max(0.0);
    }
    let mut order = train;
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    Ok(DifficultyProfile { scores, order })
}

/// Fraction of the training set used at epoch `t`.
pub fn pacing(cfg: &PacingConfig, t: usize) -> f64 {
    let lambda = cfg.lambda0;
    let progress = t as f64 / cfg.zeta as f64;
    let h = match cfg.kind {
        PacingKind::Linear => lambda + (1.0 - lambda) * progress,
        PacingKind::Root => (lambda * lambda + (1.0 - lambda * lambda) * progress).sqrt(),
        PacingKind::Geometric => {
            let l2 = lambda.log2();
            (l2 - l2 * progress).exp2()
        }
    };
    if t >= cfg.zeta {
        1.0
    } else {
        h.min(1.0)
    }
}

/// The easiest `⌈h(t)·|train|⌉` training nodes, as ascending node indices.
pub fn subset_at(profile: &DifficultyProfile, cfg: &PacingConfig, t: usize) -> Vec<usize> {
    let n = profile.num_train();
    let take = ((pacing(cfg, t) * n as f64).ceil() as usize).clamp(1, n);
    let mut subset = profile.order[..take].to_vec();
    subset.sort_unstable();
    subset
}

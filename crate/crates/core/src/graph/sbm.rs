use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GraphDataset, GraphError, Result, Split};

/// Stochastic block model with noisy one-hot class centroids as features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub nodes_per_class: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            nodes_per_class: 200,
            num_classes: 3,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 32,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(GraphError::Config(m));
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return fail(format!(
                "probabilities must lie in [0, 1], got p_in={} p_out={}",
                self.p_in, self.p_out
            ));
        }
        if self.p_in <= self.p_out {
            return fail(format!("p_in ({}) must exceed p_out ({})", self.p_in, self.p_out));
        }
        if self.nodes_per_class < 2 {
            return fail(format!("nodes_per_class must be >= 2, got {}", self.nodes_per_class));
        }
        if self.num_classes < 1 {
            return fail("num_classes must be >= 1".into());
        }
        if self.feature_dim < self.num_classes {
            return fail(format!(
                "feature_dim ({}) must be >= num_classes ({}) to hold one-hot centroids",
                self.feature_dim, self.num_classes
            ));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return fail(format!(
                "feature_noise must be finite and >= 0, got {}",
                self.feature_noise
            ));
        }
        Ok(())
    }
}

/// Samples a block-model graph. Node `i` belongs to class
/// `i / nodes_per_class`; each class is split 20/20/60 into train/val/test.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<GraphDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.nodes_per_class * cfg.num_classes;
    let labels: Vec<usize> = (0..n).map(|i| i / cfg.nodes_per_class).collect();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let noise = Normal::new(0.0, cfg.feature_noise).expect("validated std-dev");
    let mut features = Array2::<f64>::zeros((n, cfg.feature_dim));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for x in row.iter_mut() {
            *x = noise.sample(&mut rng);
        }
        row[labels[i]] += 1.0;
    }

    let mut splits = vec![Split::Test; n];
    let n_train = (0.2 * cfg.nodes_per_class as f64).round() as usize;
    let n_val = (0.2 * cfg.nodes_per_class as f64).round() as usize;
    for c in 0..cfg.num_classes {
        let mut members: Vec<usize> = (c * cfg.nodes_per_class..(c + 1) * cfg.nodes_per_class).collect();
        members.shuffle(&mut rng);
        for &i in &members[..n_train] {
            splits[i] = Split::Train;
        }
        for &i in &members[n_train..n_train + n_val] {
            splits[i] = Split::Val;
        }
    }

    GraphDataset::from_edges(features, &edges, labels, splits, cfg.num_classes)
}

//! Coreset baselines: pick real training nodes per class.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Result;
use crate::condenser::{class_budget, CondensedSet};
use crate::graph::GraphDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoresetMethod {
    Random,
    Herding,
    Kcenter,
}

impl CoresetMethod {
    pub fn name(self) -> &'static str {
        match self {
            CoresetMethod::Random => "random",
            CoresetMethod::Herding => "herding",
            CoresetMethod::Kcenter => "kcenter",
        }
    }
}

fn dist2(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy herding: each step adds the point that brings the running mean of
/// the selection closest to the class mean.
pub fn herding(points: &Array2<f64>, k: usize) -> Vec<usize> {
    let n = points.nrows();
    let mean = points.mean_axis(ndarray::Axis(0)).expect("non-empty class");
    let mut chosen = Vec::with_capacity(k);
    let mut used = vec![false; n];
    let mut sum = Array1::<f64>::zeros(points.ncols());
    for step in 1..=k.min(n) {
        let mut best = None;
        for i in (0..n).filter(|&i| !used[i]) {
            let candidate = (&sum + &points.row(i)) / step as f64;
            let d = dist2(candidate.view(), mean.view());
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.unwrap();
        used[i] = true;
        sum += &points.row(i);
        chosen.push(i);
    }
    chosen
}

/// Greedy farthest-point selection starting from the point nearest the
/// mean.
pub fn k_center(points: &Array2<f64>, k: usize) -> Vec<usize> {
    let n = points.nrows();
    if n == 0 || k == 0 {
        return vec![];
    }
    let mean = points.mean_axis(ndarray::Axis(0)).expect("non-empty class");
    let first = (0..n)
        .min_by(|&a, &b| {
            dist2(points.row(a), mean.view())
                .total_cmp(&dist2(points.row(b), mean.view()))
                .then(a.cmp(&b))
        })
        .unwrap();
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(points.row(i), points.row(first))).collect();
    while chosen.len() < k.min(n) {
        let next = (0..n)
            .filter(|i| !chosen.contains(i))
            .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a)))
            .unwrap();
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist2(points.row(i), points.row(next)));
        }
    }
    chosen
}

/// Selected training-node indices, grouped by class in ascending class
/// order.
pub fn coreset_indices(g: &GraphDataset, ratio: f64, method: CoresetMethod, seed: u64) -> Result<Vec<usize>> {
    let budget = class_budget(g, ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = g.train_indices();
    let mut out = Vec::new();
    for (class, &k) in budget.iter().enumerate() {
        let members: Vec<usize> = train.iter().copied().filter(|&i| g.labels()[i] == class).collect();
        let mut points = Array2::zeros((members.len(), g.feature_dim()));
        for (r, &m) in members.iter().enumerate() {
            points.row_mut(r).assign(&g.features().row(m));
        }
        let local = match method {
            CoresetMethod::Random => {
                let idx: Vec<usize> = (0..members.len()).collect();
                idx.choose_multiple(&mut rng, k.min(members.len())).copied().collect()
            }
            CoresetMethod::Herding => herding(&points, k),
            CoresetMethod::Kcenter => k_center(&points, k),
        };
        out.extend(local.into_iter().map(|r| members[r]));
    }
    Ok(out)
}

/// A frozen condensed set made of real training nodes.
pub fn coreset(g: &GraphDataset, ratio: f64, method: CoresetMethod, seed: u64) -> Result<CondensedSet> {
    let rows = coreset_indices(g, ratio, method, seed)?;
    let mut features = Array2::zeros((rows.len(), g.feature_dim()));
    for (k, &r) in rows.iter().enumerate() {
        features.row_mut(k).assign(&g.features().row(r));
    }
    Ok(CondensedSet {
        features,
        hard_labels: rows.iter().map(|&r| g.labels()[r]).collect(),
        soft_labels: None,
        inner_lr: 1.0,
        num_classes: g.num_classes(),
    })
}

//! Condensation phase: optimizes a small structure-free node set so that a
//! few SGD steps on it reproduce segments of the expert trajectories.
//!
//! Each iteration samples an expert and a start checkpoint `θ*_t` from the
//! current matching window, runs `q` differentiable SGD steps on the
//! condensed set starting from `θ*_t`, and scores the endpoint against
//! `θ*_{t+p}` with the normalized distance
//!
//! ```text
//! L_M = ‖θ̃_{t+q} − θ*_{t+p}‖² / ‖θ*_t − θ*_{t+p}‖²
//! ```
//!
//! When soft labels are learnable a KL term `α·KL(f(θ*_T; X_S) ‖ Ỹ)` pulls
//! them toward the predictions of the expert's final snapshot. Gradients of
//! the total flow to the features, the soft labels and the inner learning
//! rate.

mod io;
mod window;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Matrix, Tape, Var};
use crate::buffer::ExpertTrajectory;
use crate::graph::GraphDataset;
use crate::models::{cross_entropy, forward, hard_targets, ModelError, ModelSpec, ParameterVector, Propagation};

pub use io::{load_condensed, save_condensed, trajectory_digest, CondensedMeta};
pub use window::{max_start, sample_match, window, window_upper, MatchSample, Window, WindowMode};

#[derive(Debug, Error)]
pub enum CondenseError {
    #[error("invalid condensation config: {0}")]
    Config(String),
    #[error("inner loop diverged at step {step}")]
    InnerDivergence { step: usize },
    #[error("non-finite outer gradient at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("degenerate match: start and target checkpoints coincide")]
    DegenerateMatch,
    #[error("soft labels are required for the distillation loss")]
    MissingSoftLabels,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] crate::graph::GraphError),
}

impl From<AutodiffError> for CondenseError {
    fn from(e: AutodiffError) -> Self {
        CondenseError::Model(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CondenseError>;

/// Learnable condensed node set.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedSet {
    pub features: Matrix,
    pub hard_labels: Vec<usize>,
    /// Row-stochastic soft labels, when enabled.
    pub soft_labels: Option<Matrix>,
    /// Learnable inner-loop learning rate η.
    pub inner_lr: f64,
    pub num_classes: usize,
}

impl CondensedSet {
    pub fn len(&self) -> usize {
        self.hard_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard_labels.is_empty()
    }

    /// Training targets with each row weighted `1/N'`: soft labels when
    /// present, one-hot labels otherwise.
    pub fn target_matrix(&self, use_soft: bool) -> Matrix {
        let n = self.len().max(1) as f64;
        match (&self.soft_labels, use_soft) {
            (Some(soft), true) => soft / n,
            _ => {
                let rows: Vec<usize> = (0..self.len()).collect();
                hard_targets(&self.hard_labels, &rows, self.num_classes)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CondenseError::Config(m));
        if self.features.nrows() != self.len() {
            return fail(format!(
                "{} feature rows for {} labels",
                self.features.nrows(),
                self.len()
            ));
        }
        if self.len() < self.num_classes {
            return fail(format!(
                "{} nodes cannot cover {} classes",
                self.len(),
                self.num_classes
            ));
        }
        for c in 0..self.num_classes {
            if !self.hard_labels.contains(&c) {
                return fail(format!("class {c} has no condensed node"));
            }
        }
        if let Some(soft) = &self.soft_labels {
            if soft.dim() != (self.len(), self.num_classes) {
                return fail(format!("soft labels have shape {:?}", soft.dim()));
            }
            for (i, row) in soft.rows().into_iter().enumerate() {
                if (row.sum() - 1.0).abs() > 1e-9 || row.iter().any(|&x| x < 0.0) {
                    return fail(format!("soft label row {i} is not a distribution"));
                }
            }
        }
        if !(self.inner_lr > 0.0) {
            return fail(format!("inner learning rate must be positive, got {}", self.inner_lr));
        }
        Ok(())
    }
}

/// Per-class node budget for `ratio` of the training split: largest-remainder
/// apportionment of `⌊ratio·|train|⌋` nodes, at least one per class.
pub fn class_budget(g: &GraphDataset, ratio: f64) -> Result<Vec<usize>> {
    let train = g.train_indices();
    let c = g.num_classes();
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CondenseError::Config(format!("ratio must lie in (0, 1), got {ratio}")));
    }
    let total = (ratio * train.len() as f64).floor() as usize;
    if total < c {
        return Err(CondenseError::Config(format!(
            "ratio {ratio} of {} training nodes gives {total} nodes, fewer than {c} classes",
            train.len()
        )));
    }
    let mut freq = vec![0usize; c];
    for &i in &train {
        freq[g.labels()[i]] += 1;
    }
    if let Some(empty) = freq.iter().position(|&f| f == 0) {
        return Err(CondenseError::Config(format!("class {empty} has no training nodes")));
    }
    let quotas: Vec<f64> = freq
        .iter()
        .map(|&f| total as f64 * f as f64 / train.len() as f64)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q.floor() as usize).max(1)).collect();
    let mut by_remainder: Vec<usize> = (0..c).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &k in by_remainder.iter().cycle() {
        if assigned >= total {
            break;
        }
        counts[k] += 1;
        assigned += 1;
    }
    while assigned > total {
        let k = (0..c)
            .filter(|&k| counts[k] > 1)
            .max_by_key(|&k| (counts[k], std::cmp::Reverse(k)))
            .unwrap();
        counts[k] -= 1;
        assigned -= 1;
    }
    Ok(counts)
}

/// Starting point for condensation: features copied from random training
/// nodes of each class, soft labels (if requested) as one-hot smoothed by
/// 0.1.
pub fn init_condensed(
    g: &GraphDataset,
    ratio: f64,
    seed: u64,
    use_soft_labels: bool,
    inner_lr: f64,
) -> Result<CondensedSet> {
    let budget = class_budget(g, ratio)?;
    let c = g.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = g.train_indices();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (class, &count) in budget.iter().enumerate() {
        let members: Vec<usize> = train.iter().copied().filter(|&i| g.labels()[i] == class).collect();
        let picks: Vec<usize> = if count <= members.len() {
            members.choose_multiple(&mut rng, count).copied().collect()
        } else {
            (0..count).map(|_| *members.choose(&mut rng).unwrap()).collect()
        };
        rows.extend(picks);
        labels.extend(std::iter::repeat_n(class, count));
    }
    let d = g.feature_dim();
    let mut features = Array2::zeros((rows.len(), d));
    for (k, &r) in rows.iter().enumerate() {
        features.row_mut(k).assign(&g.features().row(r));
    }
    let soft_labels = use_soft_labels.then(|| {
        let mut s = Array2::from_elem((labels.len(), c), 0.1 / c as f64);
        for (k, &y) in labels.iter().enumerate() {
            s[[k, y]] += 0.9;
        }
        s
    });
    Ok(CondensedSet {
        features,
        hard_labels: labels,
        soft_labels,
        inner_lr,
        num_classes: c,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    /// Expert epochs spanned by one match (p).
    pub expert_steps: usize,
    /// Student SGD steps on the condensed set (q).
    pub student_steps: usize,
    /// Initial window upper bound (U).
    pub window_init: usize,
    /// Final window upper bound (U').
    pub window_max: usize,
    pub iterations: usize,
    /// Weight of the soft-label distillation term.
    pub alpha: f64,
    pub lr_feat: f64,
    pub lr_y: f64,
    /// Outer rate for η; 0 keeps η at its initial value.
    pub lr_lr: f64,
    pub momentum: f64,
    pub window_mode: WindowMode,
    /// Train the inner loop on soft labels when they are learnable.
    pub soft_inner: bool,
    /// Upper limit on `student_steps` (memory bound of the unrolled tape).
    pub max_student_steps: usize,
    pub seed: u64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            expert_steps: 2,
            student_steps: 10,
            window_init: 3,
            window_max: 45,
            iterations: 200,
            alpha: 0.0,
            lr_feat: 0.3,
            lr_y: 0.0,
            lr_lr: 0.0,
            momentum: 0.5,
            window_mode: WindowMode::Expanding,
            soft_inner: true,
            max_student_steps: 64,
            seed: 0,
        }
    }
}

impl MatchingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CondenseError::Config(m));
        if self.window_init < 1 || self.window_init > self.window_max {
            return fail(format!(
                "need 1 <= window_init ({}) <= window_max ({})",
                self.window_init, self.window_max
            ));
        }
        if self.expert_steps < 1 || self.student_steps < 1 {
            return fail("expert_steps and student_steps must be >= 1".into());
        }
        if self.student_steps > self.max_student_steps {
            return fail(format!(
                "student_steps ({}) exceeds max_student_steps ({})",
                self.student_steps, self.max_student_steps
            ));
        }
        if self.iterations < 1 {
            return fail("iterations must be >= 1".into());
        }
        if !(self.alpha >= 0.0) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        for (name, v) in [("lr_feat", self.lr_feat), ("lr_y", self.lr_y), ("lr_lr", self.lr_lr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Whether soft labels are optimized (and so drive the KL term).
    pub fn learns_soft_labels(&self, set: &CondensedSet) -> bool {
        self.lr_y > 0.0 && set.soft_labels.is_some()
    }
}

/// One iteration's record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub iteration: usize,
    pub expert: usize,
    pub start: usize,
    pub window_upper: usize,
    pub matching_loss: f64,
    pub kee_loss: f64,
    pub total_loss: f64,
    /// No update was made because every redraw was degenerate.
    pub skipped: bool,
}

/// `‖student − target‖² / ‖start − target‖²`.
pub fn matching_loss(student: &[f64], target: &[f64], start: &[f64]) -> Result<f64> {
    let denom = squared_distance(start, target);
    if denom < 1e-24 {
        return Err(CondenseError::DegenerateMatch);
    }
    Ok(squared_distance(student, target) / denom)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Runs `q` differentiable SGD steps on the condensed set from `start`.
///
/// `targets` are row-weighted training targets, `eta` a 1x1 learning rate.
pub fn inner_loop<'t>(
    spec: &ModelSpec,
    start: Vec<Var<'t>>,
    features: Var<'t>,
    targets: Var<'t>,
    eta: Var<'t>,
    steps: usize,
) -> Result<Vec<Var<'t>>> {
    let mut theta = start;
    for step in 0..steps {
        let logits = forward(spec, &theta, features, Propagation::Identity)?;
        let loss = cross_entropy(logits, targets)?;
        let grads = features.tape().grad(loss, &theta, true)?;
        let mut next = Vec::with_capacity(theta.len());
        for (w, g) in theta.iter().zip(grads) {
            let rate = eta.broadcast_scalar(g.shape())?;
            next.push(w.sub(rate.mul(g)?)?);
        }
        if next.iter().any(|v| v.value().iter().any(|x| !x.is_finite())) {
            return Err(CondenseError::InnerDivergence { step });
        }
        theta = next;
    }
    Ok(theta)
}

/// `KL(softmax(f(θ*_T; X)) ‖ Ỹ)` summed over classes and averaged over rows,
/// as a tape value differentiable in the features and soft labels.
pub fn kee_loss_var<'t>(
    spec: &ModelSpec,
    expert: &[Var<'t>],
    features: Var<'t>,
    soft_labels: Var<'t>,
) -> Result<Var<'t>> {
    let rows = features.shape().0;
    let logp = forward(spec, expert, features, Propagation::Identity)?.log_softmax()?;
    let p = logp.exp();
    let log_y = soft_labels.log()?;
    Ok(p.mul(logp.sub(log_y)?)?.sum().scale(1.0 / rows as f64))
}

/// Value of the distillation loss for `set` under expert parameters `theta`.
pub fn kee_loss(spec: &ModelSpec, theta: &ParameterVector, set: &CondensedSet) -> Result<f64> {
    let soft = set.soft_labels.as_ref().ok_or(CondenseError::MissingSoftLabels)?;
    let tape = Tape::new();
    let expert = theta.to_vars(&tape, false);
    let x = tape.constant(set.features.clone());
    let y = tape.constant(soft.clone());
    Ok(kee_loss_var(spec, &expert, x, y)?.scalar())
}

/// Gradients of one matching objective.
#[derive(Debug, Clone)]
pub struct MatchGradients {
    pub matching_loss: f64,
    pub kee_loss: f64,
    pub total_loss: f64,
    pub features: Matrix,
    pub soft_labels: Option<Matrix>,
    pub inner_lr: f64,
}

/// Evaluates `L = L_M + α·L_E` for one sampled segment and differentiates
/// it with respect to the condensed features, soft labels and η.
pub fn match_gradients(
    spec: &ModelSpec,
    start: &ParameterVector,
    target: &ParameterVector,
    expert_final: &ParameterVector,
    set: &CondensedSet,
    cfg: &MatchingConfig,
) -> Result<MatchGradients> {
    let denom = squared_distance(&start.flat, &target.flat);
    if denom < 1e-24 {
        return Err(CondenseError::DegenerateMatch);
    }
    let learn_soft = cfg.learns_soft_labels(set);
    let use_kee = learn_soft && cfg.alpha > 0.0;

    let tape = Tape::new();
    let x = tape.param(set.features.clone());
    let eta = tape.scalar_param(set.inner_lr);
    let soft = if learn_soft {
        set.soft_labels.clone().map(|s| tape.param(s))
    } else {
        None
    };
    let targets = match soft {
        Some(s) if cfg.soft_inner => s.scale(1.0 / set.len() as f64),
        _ => tape.constant(set.target_matrix(false)),
    };

    let theta0 = start.to_vars(&tape, true);
    let end = inner_loop(spec, theta0, x, targets, eta, cfg.student_steps)?;

    let mut distance: Option<Var<'_>> = None;
    for (w, t) in end.iter().zip(target.unflatten()) {
        let d = w.sub(tape.constant(t))?;
        let sq = d.mul(d)?.sum();
        distance = Some(match distance {
            Some(acc) => acc.add(sq)?,
            None => sq,
        });
    }
    let lm = distance.expect("models have parameters").scale(1.0 / denom);

    let (total, le) = if use_kee {
        let expert = expert_final.to_vars(&tape, false);
        let le = kee_loss_var(spec, &expert, x, soft.expect("learnable soft labels"))?;
        (lm.add(le.scale(cfg.alpha))?, le.scalar())
    } else {
        (lm, 0.0)
    };

    let grads = tape.backward(total)?;
    Ok(MatchGradients {
        matching_loss: lm.scalar(),
        kee_loss: le,
        total_loss: total.scalar(),
        features: grads.get_or_zeros(x),
        soft_labels: soft.map(|s| grads.get_or_zeros(s)),
        inner_lr: grads.get_or_zeros(eta)[[0, 0]],
    })
}

/// Result of a condensation run.
#[derive(Debug, Clone)]
pub struct Condensation {
    pub set: CondensedSet,
    pub log: Vec<MatchOutcome>,
}

/// Runs the full condensation loop.
pub fn condense(
    trajectories: &[ExpertTrajectory],
    cfg: &MatchingConfig,
    initial: &CondensedSet,
) -> Result<Condensation> {
    condense_observed(trajectories, cfg, initial, |_, _| {})
}

const MAX_REDRAWS: usize = 5;

/// [`condense`] with a callback after every iteration.
pub fn condense_observed(
    trajectories: &[ExpertTrajectory],
    cfg: &MatchingConfig,
    initial: &CondensedSet,
    mut observer: impl FnMut(&MatchOutcome, &CondensedSet),
) -> Result<Condensation> {
    cfg.validate()?;
    initial.validate()?;
    let Some(first) = trajectories.first() else {
        return Err(CondenseError::Config("no expert trajectories".into()));
    };
    let spec = first.spec.clone();
    if let Some(t) = trajectories.iter().find(|t| {
        t.spec.arch != spec.arch
            || t.spec.in_dim != spec.in_dim
            || t.spec.hidden_dim != spec.hidden_dim
            || t.spec.out_dim != spec.out_dim
    }) {
        return Err(CondenseError::Config(format!(
            "trajectory specs differ: {:?} vs {:?}",
            spec, t.spec
        )));
    }
    if spec.in_dim != initial.features.ncols() || spec.out_dim != initial.num_classes {
        return Err(CondenseError::Config(format!(
            "condensed set is {}-dim with {} classes, experts expect {} and {}",
            initial.features.ncols(),
            initial.num_classes,
            spec.in_dim,
            spec.out_dim
        )));
    }
    let needed = max_start(cfg) + cfg.expert_steps + 1;
    if let Some(short) = trajectories.iter().find(|t| t.len() < needed) {
        return Err(CondenseError::Config(format!(
            "trajectory of expert {} has {} snapshots, window and p need {needed}",
            short.meta.expert_id,
            short.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut set = initial.clone();
    let mut v_feat = Array2::<f64>::zeros(set.features.dim());
    let mut v_soft = set.soft_labels.as_ref().map(|s| Array2::<f64>::zeros(s.dim()));
    let mut v_lr = 0.0;
    let mut log = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let expert = rng.random_range(0..trajectories.len());
        let traj = &trajectories[expert];
        let upper = window_upper(cfg, iteration);

        let mut attempt = None;
        for _ in 0..=MAX_REDRAWS {
            let sample = sample_match(traj, cfg, iteration, &mut rng)?;
            match match_gradients(&spec, sample.start, sample.target, traj.last(), &set, cfg) {
                Ok(g) => {
                    attempt = Some((sample.start_index, g));
                    break;
                }
                Err(CondenseError::DegenerateMatch) => continue,
                Err(e) => return Err(e),
            }
        }
        let Some((start, grads)) = attempt else {
            let outcome = MatchOutcome {
                iteration,
                expert,
                start: 0,
                window_upper: upper,
                matching_loss: f64::NAN,
                kee_loss: f64::NAN,
                total_loss: f64::NAN,
                skipped: true,
            };
            observer(&outcome, &set);
            log.push(outcome);
            continue;
        };

        let finite = grads.features.iter().all(|x| x.is_finite())
            && grads.inner_lr.is_finite()
            && grads
                .soft_labels
                .as_ref()
                .is_none_or(|s| s.iter().all(|x| x.is_finite()));
        if !finite || !grads.total_loss.is_finite() {
            return Err(CondenseError::NonFinite { iteration });
        }

        v_feat = &v_feat * cfg.momentum + &grads.features;
        set.features.scaled_add(-cfg.lr_feat, &v_feat);
        if let (Some(g), Some(v), Some(soft)) = (&grads.soft_labels, v_soft.as_mut(), set.soft_labels.as_mut()) {
            *v = &*v * cfg.momentum + g;
            soft.scaled_add(-cfg.lr_y, v);
            project_rows_to_simplex(soft);
        }
        v_lr = cfg.momentum * v_lr + grads.inner_lr;
        set.inner_lr = (set.inner_lr - cfg.lr_lr * v_lr).max(1e-6);

        let outcome = MatchOutcome {
            iteration,
            expert,
            start,
            window_upper: upper,
            matching_loss: grads.matching_loss,
            kee_loss: grads.kee_loss,
            total_loss: grads.total_loss,
            skipped: false,
        };
        observer(&outcome, &set);
        log.push(outcome);
    }
    Ok(Condensation { set, log })
}

/// Clamps entries to at least 1e-8 and renormalizes each row.
pub fn project_rows_to_simplex(m: &mut Matrix) {
    for mut row in m.rows_mut() {
        row.mapv_inplace(|x| x.max(1e-8));
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmConfig, Split};
    use crate::models::{init_params, Arch};
    use ndarray::array;

    fn sbm(per_class: usize, classes: usize) -> GraphDataset {
        generate_sbm(&SbmConfig {
            nodes_per_class: per_class,
            num_classes: classes,
            p_in: 0.3,
            p_out: 0.02,
            feature_dim: 5,
            feature_noise: 0.3,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn matching_loss_examples() {
        assert_eq!(matching_loss(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(matching_loss(&[0.3, 2.0], &[1.0, 0.0], &[0.3, 2.0]).unwrap(), 1.0);
        assert_eq!(matching_loss(&[0.5, 0.5], &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(
            matching_loss(&[0.5, 0.5], &[1.0, 0.0], &[1.0, 0.0]),
            Err(CondenseError::DegenerateMatch)
        ));
    }

    #[test]
    fn budget_is_proportional_with_one_per_class_minimum() {
        let g = sbm(20, 3); // 4 train nodes per class
        assert_eq!(class_budget(&g, 0.25).unwrap(), vec![1, 1, 1]);
        assert_eq!(class_budget(&g, 0.5).unwrap(), vec![2, 2, 2]);
        assert!(class_budget(&g, 0.2).is_err());
        assert!(class_budget(&g, 1.0).is_err());
    }

    #[test]
    fn init_rows_come_from_same_class_training_nodes() {
        let g = sbm(20, 3);
        let s = init_condensed(&g, 0.5, 7, true, 0.3).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.inner_lr, 0.3);
        for (k, row) in s.features.rows().into_iter().enumerate() {
            let found = (0..g.num_nodes()).any(|i| {
                g.splits()[i] == Split::Train && g.labels()[i] == s.hard_labels[k] && g.features().row(i) == row
            });
            assert!(found, "row {k} is not a same-class training row");
        }
        let soft = s.soft_labels.as_ref().unwrap();
        for (k, row) in soft.rows().into_iter().enumerate() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!((row[s.hard_labels[k]] - (0.9 + 0.1 / 3.0)).abs() < 1e-12);
        }
        s.validate().unwrap();
    }

    #[test]
    fn kee_examples() {
        let spec = ModelSpec {
            arch: Arch::Sgc2,
            in_dim: 2,
            hidden_dim: 1,
            out_dim: 2,
            seed: 0,
        };
        // Identity weights: logits equal the features.
        let theta = ParameterVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], spec.layout()).unwrap();
        let logit = (0.8f64 / 0.2).ln();
        let set = CondensedSet {
            features: array![[logit, 0.0]],
            hard_labels: vec![0],
            soft_labels: Some(array![[0.5, 0.5]]),
            inner_lr: 0.1,
            num_classes: 2,
        };
        let expected = 0.8 * 1.6f64.ln() + 0.2 * 0.4f64.ln();
        assert!((kee_loss(&spec, &theta, &set).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.1927).abs() < 1e-4);

        let matched = CondensedSet {
            soft_labels: Some(array![[0.8, 0.2]]),
            ..set.clone()
        };
        assert!(kee_loss(&spec, &theta, &matched).unwrap().abs() < 1e-12);
        let hard_only = CondensedSet {
            soft_labels: None,
            ..set
        };
        assert!(matches!(
            kee_loss(&spec, &theta, &hard_only),
            Err(CondenseError::MissingSoftLabels)
        ));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let spec = ModelSpec {
            arch: Arch::Mlp2,
            in_dim: 3,
            hidden_dim: 4,
            out_dim: 2,
            seed: 2,
        };
        let theta = init_params(&spec);
        let tape = Tape::new();
        let x = tape.param(array![[0.1, 0.2, 0.3], [-0.4, 0.5, 0.0]]);
        let targets = tape.constant(array![[0.5, 0.0], [0.0, 0.5]]);
        let eta = tape.scalar_param(0.0);
        let end = inner_loop(&spec, theta.to_vars(&tape, true), x, targets, eta, 3).unwrap();
        assert_eq!(ParameterVector::from_vars(&end), theta);
    }

    #[test]
    fn simplex_projection() {
        let mut m = array![[0.7, -0.1, 0.6], [1.0, 1.0, 0.0]];
        project_rows_to_simplex(&mut m);
        for row in m.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&x| x >= 1e-9));
        }
    }

    #[test]
    fn config_validation() {
        let c = MatchingConfig {
            window_init: 0,
            ..MatchingConfig::default()
        };
        assert!(c.validate().is_err());
        let c = MatchingConfig {
            student_steps: 65,
            ..MatchingConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(MatchingConfig::default().validate().is_ok());
    }
}

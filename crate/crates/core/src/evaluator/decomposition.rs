//! Stage-wise decomposition of the accumulated student-vs-expert error.
//!
//! The expert trajectory is cut into stages of `p` snapshots. In stage `n`
//! the student starts at the expert's stage start plus the current offset
//! `ε_n` and takes `q` steps of its own dynamics. The offset at the next
//! stage splits into
//!
//! * an initialization term `I_n`: how much the student's update from the
//!   offset start differs from its update from the expert start, and
//! * a matching term `δ_{n+1}`: how far the student's update from the expert
//!   start misses the expert's own `p`-snapshot update,
//!
//! so that `ε_{n+1} = ε_0 + Σ_{i≤n} I_i + Σ_{i≤n} δ_{i+1}`. With `ε_0 = 0`
//! the first initialization term vanishes exactly.

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::autodiff::Tape;
use crate::buffer::ExpertTrajectory;
use crate::condenser::CondensedSet;
use crate::models::{cross_entropy, forward, ModelSpec, ParameterVector, Propagation};

/// Deterministic parameter dynamics a student follows.
pub trait StudentDynamics {
    /// Endpoint after `steps` updates from `theta`.
    fn run(&self, theta: &[f64], steps: usize) -> Result<Vec<f64>>;
}

/// Plain SGD with a fixed rate on a condensed set, identity propagation.
pub struct CondensedDynamics<'a> {
    pub spec: &'a ModelSpec,
    pub set: &'a CondensedSet,
    pub lr: f64,
}

impl StudentDynamics for CondensedDynamics<'_> {
    fn run(&self, theta: &[f64], steps: usize) -> Result<Vec<f64>> {
        let layout = self.spec.layout();
        let mut current = ParameterVector::new(theta.to_vec(), layout.clone())?;
        let targets = self.set.target_matrix(true);
        for _ in 0..steps {
            let tape = Tape::new();
            let params = current.to_vars(&tape, true);
            let x = tape.constant(self.set.features.clone());
            let logits = forward(self.spec, &params, x, Propagation::Identity)?;
            let loss = cross_entropy(logits, tape.constant(targets.clone()))?;
            let grads = tape.backward(loss)?;
            let tensors: Vec<_> = params.iter().map(|&p| grads.get_or_zeros(p)).collect();
            let grad = ParameterVector::flatten(&tensors).flat;
            for (w, g) in current.flat.iter_mut().zip(grad) {
                *w -= self.lr * g;
            }
        }
        Ok(current.flat)
    }
}

/// Gradient descent on `(1/2n) Σ (θ·x_i − y_i)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressionDynamics {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub lr: f64,
}

impl LinearRegressionDynamics {
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.inputs.len() as f64;
        let mut g = vec![0.0; theta.len()];
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let residual: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() - y;
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += residual * xi / n;
            }
        }
        g
    }

    /// All iterates `θ_0 .. θ_steps`.
    pub fn trajectory(&self, theta0: &[f64], steps: usize) -> Vec<Vec<f64>> {
        let mut out = vec![theta0.to_vec()];
        for _ in 0..steps {
            let last = out.last().unwrap();
            let g = self.gradient(last);
            out.push(last.iter().zip(g).map(|(w, gi)| w - self.lr * gi).collect());
        }
        out
    }
}

impl StudentDynamics for LinearRegressionDynamics {
    fn run(&self, theta: &[f64], steps: usize) -> Result<Vec<f64>> {
        Ok(self.trajectory(theta, steps).pop().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecompositionConfig {
    /// Expert snapshots per stage.
    pub expert_steps: usize,
    /// Student updates per stage.
    pub student_steps: usize,
    pub stages: usize,
    /// Offset of the student at the first stage; zeros when absent.
    pub initial_offset: Option<Vec<f64>>,
    /// Largest tolerated coordinate residual of the telescoping identity.
    pub tolerance: f64,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            expert_steps: 2,
            student_steps: 10,
            stages: 5,
            initial_offset: None,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    /// `ε_0 ..= ε_N`.
    pub accumulated: Vec<Vec<f64>>,
    /// `I_0 .. I_{N−1}`.
    pub initialization: Vec<Vec<f64>>,
    /// `δ_1 ..= δ_N`.
    pub matching: Vec<Vec<f64>>,
    /// Max coordinate residual of the identity at stages `1 ..= N`.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub stage: usize,
    pub accumulated_norm: f64,
    pub initialization_norm: f64,
    pub matching_norm: f64,
    pub residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

impl ErrorDecomposition {
    pub fn rows(&self) -> Vec<DecompositionRow> {
        (1..self.accumulated.len())
            .map(|n| DecompositionRow {
                stage: n,
                accumulated_norm: norm(&self.accumulated[n]),
                initialization_norm: norm(&self.initialization[n - 1]),
                matching_norm: norm(&self.matching[n - 1]),
                residual: self.residuals[n - 1],
            })
            .collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// `Σ ‖δ_n‖`, the part of the error attributable to matching alone.
    pub fn matching_total(&self) -> f64 {
        self.matching.iter().map(|d| norm(d)).sum()
    }
}

/// Decomposes the student's accumulated error against `expert` snapshots.
///
/// Needs `stages·expert_steps + 1` snapshots. Fails with
/// [`EvalError::IdentityViolation`] if the identity residual exceeds the
/// tolerance at any stage.
pub fn error_decomposition(
    expert: &[Vec<f64>],
    student: &dyn StudentDynamics,
    cfg: &DecompositionConfig,
) -> Result<ErrorDecomposition> {
    let p = cfg.expert_steps;
    if p == 0 || cfg.stages == 0 {
        return Err(EvalError::Contract("expert_steps and stages must be >= 1".into()));
    }
    let needed = cfg.stages * p + 1;
    if expert.len() < needed {
        return Err(EvalError::Contract(format!(
            "{} stages of {p} snapshots need {needed} snapshots, trajectory has {}",
            cfg.stages,
            expert.len()
        )));
    }
    let dim = expert[0].len();
    let eps0 = cfg.initial_offset.clone().unwrap_or_else(|| vec![0.0; dim]);
    if eps0.len() != dim {
        return Err(EvalError::Contract(format!(
            "initial offset has {} coordinates, parameters have {dim}",
            eps0.len()
        )));
    }

    let mut accumulated = vec![eps0.clone()];
    let mut initialization = Vec::with_capacity(cfg.stages);
    let mut matching = Vec::with_capacity(cfg.stages);
    let mut residuals = Vec::with_capacity(cfg.stages);
    let mut telescoped = eps0;
    for n in 0..cfg.stages {
        let base = &expert[n * p];
        let target = &expert[(n + 1) * p];
        let eps = accumulated.last().unwrap();
        let shifted: Vec<f64> = base.iter().zip(eps).map(|(b, e)| b + e).collect();

        let clean = sub(&student.run(base, cfg.student_steps)?, base);
        let end = student.run(&shifted, cfg.student_steps)?;
        let perturbed = sub(&end, &shifted);
        let init_term = sub(&perturbed, &clean);
        let match_term = sub(&clean, &sub(target, base));
        let next = sub(&end, target);

        for ((t, i), d) in telescoped.iter_mut().zip(&init_term).zip(&match_term) {
            *t += i + d;
        }
        let residual = next
            .iter()
            .zip(&telescoped)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !(residual <= cfg.tolerance) {
            return Err(EvalError::IdentityViolation { stage: n + 1, residual });
        }
        initialization.push(init_term);
        matching.push(match_term);
        residuals.push(residual);
        accumulated.push(next);
    }
    Ok(ErrorDecomposition {
        accumulated,
        initialization,
        matching,
        residuals,
    })
}

/// Decomposition of a condensed set's student against a stored expert.
pub fn decompose_trajectory(
    trajectory: &ExpertTrajectory,
    set: &CondensedSet,
    lr: f64,
    cfg: &DecompositionConfig,
) -> Result<ErrorDecomposition> {
    let snapshots: Vec<Vec<f64>> = trajectory.snapshots.iter().map(|s| s.flat.clone()).collect();
    let student = CondensedDynamics {
        spec: &trajectory.spec,
        set,
        lr,
    };
    error_decomposition(&snapshots, &student, cfg)
}

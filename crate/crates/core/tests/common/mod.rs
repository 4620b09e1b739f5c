//! Shared oracles for the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::sync::Arc;

use geom_core::autodiff::SparseOperand;
use geom_core::buffer::{ExpertTrajectory, TrajectoryMeta};
use geom_core::condenser::{match_gradients, CondensedSet, MatchingConfig};
use geom_core::graph::{normalize_adjacency, GraphDataset, Split};
use geom_core::models::{
    cross_entropy, forward, hard_targets, init_params, Arch, ModelSpec, ParameterVector, Propagation,
};
use geom_core::sparse::CsrMatrix;
use geom_core::{Matrix, Tape, Var};
use ndarray::Array2;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Entries in ±[0.1, 1], kept away from the ReLU kink.
pub fn away_from_zero(rng: &mut StdRng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn random_sparse(rng: &mut StdRng, rows: usize, cols: usize, density: f64) -> CsrMatrix {
    let mut t = vec![];
    for r in 0..rows {
        for c in 0..cols {
            if rng.random_bool(density) {
                t.push((r, c, rng.random_range(-1.0..1.0)));
            }
        }
    }
    CsrMatrix::from_triplets(rows, cols, &t)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over concatenated entries.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

pub type ScalarFn = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>>;

/// Tape gradient of a scalar function against central differences in every
/// input coordinate; returns the relative error.
pub fn gradient_check(inputs: &[Matrix], f: &ScalarFn) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out).expect("backward");
    let analytic: Vec<f64> = vars.iter().flat_map(|&v| grads.get_or_zeros(v).into_iter()).collect();

    let eval = |inputs: &[Matrix]| {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        f(&tape, &vars).scalar()
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work = inputs.to_vec();
    for k in 0..inputs.len() {
        for idx in 0..inputs[k].len() {
            let (r, c) = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let orig = work[k][[r, c]];
            work[k][[r, c]] = orig + FD_STEP;
            let up = eval(&work);
            work[k][[r, c]] = orig - FD_STEP;
            let down = eval(&work);
            work[k][[r, c]] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

/// Contracts a matrix-valued output with fixed weights into a scalar.
pub fn contract<'t>(tape: &'t Tape, out: Var<'t>, weights: &Matrix) -> Var<'t> {
    out.mul(tape.constant(weights.clone())).unwrap().sum()
}

/// One finite-difference case per differentiable operation.
pub fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Matrix>, ScalarFn)> {
    let mut r = rng(seed);
    let w34 = random_matrix(&mut r, 3, 4, -1.0, 1.0);
    let w32 = random_matrix(&mut r, 3, 2, -1.0, 1.0);
    let w14 = random_matrix(&mut r, 1, 4, -1.0, 1.0);
    let w31 = random_matrix(&mut r, 3, 1, -1.0, 1.0);
    let w43 = random_matrix(&mut r, 4, 3, -1.0, 1.0);
    let sparse = SparseOperand::new(random_sparse(&mut r, 3, 5, 0.5));

    let a34 = random_matrix(&mut r, 3, 4, -1.0, 1.0);
    let b34 = random_matrix(&mut r, 3, 4, -1.0, 1.0);
    let a42 = random_matrix(&mut r, 4, 2, -1.0, 1.0);
    let pos34 = random_matrix(&mut r, 3, 4, 0.5, 2.0);
    let kinked = away_from_zero(&mut r, 3, 4);
    let row14 = random_matrix(&mut r, 1, 4, -1.0, 1.0);
    let col31 = random_matrix(&mut r, 3, 1, -1.0, 1.0);
    let x54 = random_matrix(&mut r, 5, 4, -1.0, 1.0);
    let x34 = random_matrix(&mut r, 3, 4, -1.0, 1.0);
    let s11 = random_matrix(&mut r, 1, 1, -1.0, 1.0);
    let logits = random_matrix(&mut r, 3, 4, -3.0, 3.0);

    let sp = Arc::clone(&sparse);
    let w54 = random_matrix(&mut r, 5, 4, -1.0, 1.0);
    vec![
        (
            "matmul",
            vec![a34.clone(), a42],
            weighted(&w32, |v| v[0].matmul(v[1]).unwrap()),
        ),
        (
            "sparse_product",
            vec![x54],
            weighted(&w34, move |v| v[0].sparse_product(sparse.clone(), false).unwrap()),
        ),
        (
            "sparse_product_transposed",
            vec![x34],
            weighted(&w54, move |v| v[0].sparse_product(sp.clone(), true).unwrap()),
        ),
        (
            "add",
            vec![a34.clone(), b34.clone()],
            weighted(&w34, |v| v[0].add(v[1]).unwrap()),
        ),
        (
            "sub",
            vec![a34.clone(), b34.clone()],
            weighted(&w34, |v| v[0].sub(v[1]).unwrap()),
        ),
        (
            "mul",
            vec![a34.clone(), b34],
            weighted(&w34, |v| v[0].mul(v[1]).unwrap()),
        ),
        ("scale", vec![a34.clone()], weighted(&w34, |v| v[0].scale(-1.7))),
        ("relu", vec![kinked], weighted(&w34, |v| v[0].relu())),
        ("exp", vec![a34.clone()], weighted(&w34, |v| v[0].exp())),
        ("log", vec![pos34.clone()], weighted(&w34, |v| v[0].log().unwrap())),
        ("recip", vec![pos34], weighted(&w34, |v| v[0].recip().unwrap())),
        ("transpose", vec![a34.clone()], weighted(&w43, |v| v[0].t())),
        (
            "add_row",
            vec![a34.clone(), row14.clone()],
            weighted(&w34, |v| v[0].add_row(v[1]).unwrap()),
        ),
        (
            "broadcast_rows",
            vec![row14],
            weighted(&w34, |v| v[0].broadcast_rows(3).unwrap()),
        ),
        (
            "broadcast_cols",
            vec![col31],
            weighted(&w34, |v| v[0].broadcast_cols(4).unwrap()),
        ),
        (
            "broadcast_scalar",
            vec![s11],
            weighted(&w34, |v| v[0].broadcast_scalar((3, 4)).unwrap()),
        ),
        ("sum_rows", vec![a34.clone()], weighted(&w14, |v| v[0].sum_rows())),
        ("sum_cols", vec![a34.clone()], weighted(&w31, |v| v[0].sum_cols())),
        ("sum", vec![a34], Box::new(|_, v| v[0].mul(v[0]).unwrap().sum())),
        (
            "log_softmax",
            vec![logits],
            weighted(&w34, |v| v[0].log_softmax().unwrap()),
        ),
    ]
}

/// `Σ op(inputs) ⊙ weights`.
pub fn weighted(weights: &Matrix, op: impl for<'t> Fn(&[Var<'t>]) -> Var<'t> + 'static) -> ScalarFn {
    let weights = weights.clone();
    Box::new(move |tape, v| contract(tape, op(v), &weights))
}

/// A random undirected graph with every node in the training split.
pub fn random_graph(rng: &mut StdRng, n: usize, d: usize, classes: usize, density: f64) -> GraphDataset {
    let features = random_matrix(rng, n, d, -1.0, 1.0);
    let mut edges = vec![];
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random_bool(density) {
                edges.push((u, v));
            }
        }
    }
    let labels = (0..n).map(|i| i % classes).collect();
    GraphDataset::from_edges(features, &edges, labels, vec![Split::Train; n], classes).unwrap()
}

/// Training loss of `arch` on a random graph as a function of its
/// parameters and features; returns the gradient check error.
pub fn model_loss_check(arch: Arch, seed: u64) -> f64 {
    let mut r = rng(seed);
    let g = random_graph(&mut r, 8, 3, 2, 0.35);
    let spec = ModelSpec {
        arch,
        in_dim: 3,
        hidden_dim: 4,
        out_dim: 2,
        seed,
    };
    let adj = normalize_adjacency(&g);
    let rows: Vec<usize> = (0..g.num_nodes()).collect();
    let targets = hard_targets(g.labels(), &rows, 2);
    let mut inputs = init_params(&spec).unflatten();
    inputs.push(g.features().clone());
    let f: ScalarFn = Box::new(move |tape, v| {
        let (params, x) = v.split_at(v.len() - 1);
        let logits = forward(&spec, params, x[0], Propagation::Graph(&adj)).unwrap();
        cross_entropy(logits, tape.constant(targets.clone())).unwrap()
    });
    gradient_check(&inputs, &f)
}

/// The meta-gradient toy: 2 classes, d = 3, N' = 2, q = 2, hidden = 4.
pub struct MetaToy {
    pub spec: ModelSpec,
    pub start: ParameterVector,
    pub target: ParameterVector,
    pub set: CondensedSet,
    pub cfg: MatchingConfig,
}

pub fn meta_toy(seed: u64) -> MetaToy {
    let mut r = rng(seed);
    let spec = ModelSpec {
        arch: Arch::Gcn2,
        in_dim: 3,
        hidden_dim: 4,
        out_dim: 2,
        seed,
    };
    let start = init_params(&spec);
    let target = ParameterVector {
        flat: start.flat.iter().map(|w| w + r.random_range(-0.3..0.3)).collect(),
        layout: start.layout.clone(),
    };
    let set = CondensedSet {
        features: random_matrix(&mut r, 2, 3, -1.0, 1.0),
        hard_labels: vec![0, 1],
        soft_labels: None,
        inner_lr: 0.5,
        num_classes: 2,
    };
    let cfg = MatchingConfig {
        student_steps: 2,
        expert_steps: 1,
        ..MatchingConfig::default()
    };
    MetaToy {
        spec,
        start,
        target,
        set,
        cfg,
    }
}

/// `∂L_M/∂X_S` from the tape against central differences.
pub fn meta_gradient_check(seed: u64) -> f64 {
    let toy = meta_toy(seed);
    let loss_at = |features: &Matrix| {
        let set = CondensedSet {
            features: features.clone(),
            ..toy.set.clone()
        };
        match_gradients(&toy.spec, &toy.start, &toy.target, &toy.target, &set, &toy.cfg)
            .unwrap()
            .matching_loss
    };
    let analytic = match_gradients(&toy.spec, &toy.start, &toy.target, &toy.target, &toy.set, &toy.cfg)
        .unwrap()
        .features;
    let mut numeric = Array2::zeros(toy.set.features.dim());
    let mut x = toy.set.features.clone();
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let orig = x[[r, c]];
            x[[r, c]] = orig + FD_STEP;
            let up = loss_at(&x);
            x[[r, c]] = orig - FD_STEP;
            let down = loss_at(&x);
            x[[r, c]] = orig;
            numeric[[r, c]] = (up - down) / (2.0 * FD_STEP);
        }
    }
    relative_error(analytic.as_slice().unwrap(), numeric.as_slice().unwrap())
}

/// Checks the create-graph path: `∇(∇f · u)` from the tape against central
/// differences of first-order gradients, for a fixed direction `u`.
pub fn second_order_check(inputs: &[Matrix], f: &ScalarFn, seed: u64) -> f64 {
    let mut r = rng(seed ^ 0xD1CE);
    let dirs: Vec<Matrix> = inputs
        .iter()
        .map(|m| random_matrix(&mut r, m.nrows(), m.ncols(), -1.0, 1.0))
        .collect();

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let grads = tape.grad(f(&tape, &vars), &vars, true).expect("first order");
    let mut dot = None;
    for (g, u) in grads.iter().zip(&dirs) {
        let term = g.mul(tape.constant(u.clone())).unwrap().sum();
        dot = Some(match dot {
            None => term,
            Some(acc) => term.add(acc).unwrap(),
        });
    }
    let hvp = tape.backward(dot.unwrap()).expect("second order");
    let analytic: Vec<f64> = vars.iter().flat_map(|&v| hvp.get_or_zeros(v).into_iter()).collect();

    let directional = |inputs: &[Matrix]| {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.param(m.clone())).collect();
        let g = tape.backward(f(&tape, &vars)).unwrap();
        vars.iter()
            .zip(&dirs)
            .map(|(&v, u)| (g.get_or_zeros(v) * u).sum())
            .sum::<f64>()
    };
    let mut numeric = vec![];
    let mut work = inputs.to_vec();
    for k in 0..inputs.len() {
        for idx in 0..inputs[k].len() {
            let (rr, c) = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let orig = work[k][[rr, c]];
            work[k][[rr, c]] = orig + FD_STEP;
            let up = directional(&work);
            work[k][[rr, c]] = orig - FD_STEP;
            let down = directional(&work);
            work[k][[rr, c]] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

/// Entropy from a dense adjacency matrix, written independently of the
/// library: `ln N − (1/N) Σ c ln c` over the class counts of the labeled
/// closed neighborhood.
pub fn brute_force_difficulty(g: &GraphDataset) -> Vec<f64> {
    let n = g.num_nodes();
    let mut dense = vec![vec![false; n]; n];
    for (u, v) in g.edges() {
        dense[u][v] = true;
        dense[v][u] = true;
    }
    (0..n)
        .map(|x| {
            if g.splits()[x] != Split::Train {
                return 0.0;
            }
            let mut counts = vec![0f64; g.num_classes()];
            for y in 0..n {
                let member = y == x || (dense[x][y] && g.splits()[y] == Split::Train);
                if member {
                    counts[g.labels()[y]] += 1.0;
                }
            }
            let total: f64 = counts.iter().sum();
            let s: f64 = counts.iter().filter(|&&c| c > 0.0).map(|c| c * c.ln()).sum();
            (total.ln() - s / total).max(0.0)
        })
        .collect()
}

/// Snapshots that move one coordinate by 1 per index.
pub fn flat_trajectory(len: usize) -> ExpertTrajectory {
    let spec = ModelSpec {
        arch: Arch::Mlp2,
        in_dim: 2,
        hidden_dim: 2,
        out_dim: 2,
        seed: 0,
    };
    let base = init_params(&spec);
    let snapshots = (0..len)
        .map(|k| {
            let mut s = base.clone();
            s.flat[0] += k as f64;
            s
        })
        .collect();
    ExpertTrajectory {
        spec,
        snapshots,
        meta: TrajectoryMeta {
            expert_id: 0,
            pacing: None,
            lr: 0.1,
            momentum: 0.0,
            epochs_per_snapshot: 1,
            seed: 0,
            init_seed: 0,
            val_accuracy: vec![],
            train_loss: vec![],
        },
    }
}

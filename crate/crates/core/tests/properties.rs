//! Property-based invariants.

mod common;

use common::random_graph;
use geom_core::condenser::{class_budget, matching_loss, project_rows_to_simplex, window, MatchingConfig, WindowMode};
use geom_core::curriculum::{difficulty_scores, pacing, subset_at, PacingConfig, PacingKind};
use geom_core::models::{init_params, Arch, ModelSpec, ParameterVector};
use geom_core::sparse::CsrMatrix;
use geom_core::Tape;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;

fn arch() -> impl Strategy<Value = Arch> {
    prop_oneof![Just(Arch::Gcn2), Just(Arch::Sgc2), Just(Arch::Mlp2)]
}

fn pacing_kind() -> impl Strategy<Value = PacingKind> {
    prop_oneof![
        Just(PacingKind::Linear),
        Just(PacingKind::Root),
        Just(PacingKind::Geometric)
    ]
}

proptest! {
    #[test]
    fn flatten_unflatten_round_trip(arch in arch(), i in 1usize..6, h in 1usize..6, o in 1usize..5, seed in any::<u64>()) {
        let spec = ModelSpec { arch, in_dim: i, hidden_dim: h, out_dim: o, seed };
        let theta = init_params(&spec);
        prop_assert_eq!(theta.len(), spec.num_params());
        let back = ParameterVector::flatten(&theta.unflatten());
        prop_assert_eq!(back.flat, theta.flat);
    }

    #[test]
    fn log_softmax_rows_normalize(values in prop::collection::vec(-50.0f64..50.0, 12)) {
        let tape = Tape::new();
        let x = tape.constant(Array2::from_shape_vec((3, 4), values).unwrap());
        let logp = x.log_softmax().unwrap().value();
        for row in logp.rows() {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v <= 0.0));
        }
    }

    #[test]
    fn pacing_is_monotone_and_bounded(kind in pacing_kind(), lambda in 0.01f64..=1.0, zeta in 1usize..100) {
        let cfg = PacingConfig { kind, lambda0: lambda, zeta, extra_epochs: 0 };
        let mut last = 0.0;
        for t in 0..zeta + 5 {
            let h = pacing(&cfg, t);
            prop_assert!(h > 0.0 && h <= 1.0);
            prop_assert!(h + 1e-12 >= last);
            last = h;
        }
        prop_assert_eq!(pacing(&cfg, zeta), 1.0);
        prop_assert!((pacing(&cfg, 0) - lambda).abs() < 1e-12);
    }

    #[test]
    fn curriculum_subsets_grow_by_prefixes(seed in any::<u64>(), n in 4usize..40, classes in 1usize..4, kind in pacing_kind(), lambda in 0.05f64..1.0) {
        let mut r = rand::rngs::StdRng::seed_from_u64(seed);
        let g = random_graph(&mut r, n, 2, classes, 0.3);
        let profile = difficulty_scores(&g).unwrap();
        let cfg = PacingConfig { kind, lambda0: lambda, zeta: 10, extra_epochs: 0 };
        let mut previous: Vec<usize> = vec![];
        for t in 0..12 {
            let s = subset_at(&profile, &cfg, t);
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(previous.iter().all(|x| s.binary_search(x).is_ok()));
            previous = s;
        }
        prop_assert_eq!(previous.len(), profile.num_train());
    }

    #[test]
    fn difficulty_is_bounded_by_log_classes(seed in any::<u64>(), n in 2usize..40, classes in 1usize..6, density in 0.0f64..0.8) {
        let mut r = rand::rngs::StdRng::seed_from_u64(seed);
        let g = random_graph(&mut r, n, 2, classes, density);
        let bound = (classes as f64).ln();
        for &s in &difficulty_scores(&g).unwrap().scores {
            prop_assert!(s >= 0.0 && s <= bound + 1e-12);
        }
    }

    #[test]
    fn matching_loss_is_rotation_invariant(
        s in prop::collection::vec(-3.0f64..3.0, 6),
        t in prop::collection::vec(-3.0f64..3.0, 6),
        a in prop::collection::vec(-3.0f64..3.0, 6),
        u in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let norm2: f64 = u.iter().map(|x| x * x).sum();
        prop_assume!(norm2 > 1e-3);
        let den: f64 = a.iter().zip(&t).map(|(x, y)| (x - y) * (x - y)).sum();
        prop_assume!(den > 1e-6);
        // Householder reflection I − 2uuᵀ/‖u‖² is orthogonal.
        let reflect = |v: &[f64]| -> Vec<f64> {
            let dot: f64 = v.iter().zip(&u).map(|(x, y)| x * y).sum();
            v.iter().zip(&u).map(|(x, y)| x - 2.0 * dot / norm2 * y).collect()
        };
        let before = matching_loss(&s, &t, &a).unwrap();
        let after = matching_loss(&reflect(&s), &reflect(&t), &reflect(&a)).unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
    }

    #[test]
    fn simplex_projection_yields_distributions(values in prop::collection::vec(-1.0f64..2.0, 12)) {
        let mut m = Array2::from_shape_vec((4, 3), values).unwrap();
        project_rows_to_simplex(&mut m);
        for row in m.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn csr_agrees_with_dense(seed in any::<u64>(), rows in 1usize..7, cols in 1usize..7, k in 1usize..5) {
        let mut r = rand::rngs::StdRng::seed_from_u64(seed);
        let sparse = common::random_sparse(&mut r, rows, cols, 0.4);
        let dense = sparse.to_dense();
        let x = common::random_matrix(&mut r, cols, k, -1.0, 1.0);
        let diff = &sparse.matmul_dense(&x) - &dense.dot(&x);
        prop_assert!(diff.iter().all(|v| v.abs() < 1e-12));
        prop_assert_eq!(sparse.transpose().to_dense(), dense.t().to_owned());
        prop_assert_eq!(sparse.transpose().transpose(), sparse);
    }

    #[test]
    fn triplets_accumulate_duplicates(entries in prop::collection::vec((0usize..4, 0usize..4, -1.0f64..1.0), 0..20)) {
        let m = CsrMatrix::from_triplets(4, 4, &entries);
        let mut want = Array2::<f64>::zeros((4, 4));
        for &(r, c, v) in &entries {
            want[[r, c]] += v;
        }
        let got = m.to_dense();
        prop_assert!((&got - &want).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn window_contains_its_samples(mode in prop_oneof![Just(WindowMode::Expanding), Just(WindowMode::Fixed), Just(WindowMode::Sliding), Just(WindowMode::Stepwise)],
                                   u0 in 1usize..6, extra in 0usize..10, iteration in 0usize..40, seed in any::<u64>()) {
        let cfg = MatchingConfig { window_mode: mode, window_init: u0, window_max: u0 + extra, ..MatchingConfig::default() };
        let w = window(&cfg, iteration);
        let mut r = rand::rngs::StdRng::seed_from_u64(seed);
        for _ in 0..20 {
            let t = w.sample(&mut r);
            prop_assert!(w.contains(t));
            prop_assert!(t <= cfg.window_max);
        }
        if mode == WindowMode::Expanding {
            prop_assert!(window(&cfg, iteration + 1).upper() >= w.upper());
        }
    }

    #[test]
    fn class_budget_sums_to_floor(seed in any::<u64>(), ratio in 0.1f64..1.0) {
        let g = geom_core::graph::generate_sbm(&geom_core::SbmConfig {
            nodes_per_class: 30, num_classes: 3, feature_dim: 4, seed, ..Default::default()
        }).unwrap();
        let train = g.train_indices().len();
        let total = (ratio * train as f64).floor() as usize;
        match class_budget(&g, ratio) {
            Ok(budget) => {
                prop_assert_eq!(budget.iter().sum::<usize>(), total);
                prop_assert!(budget.iter().all(|&b| b >= 1));
            }
            Err(_) => prop_assert!(total < g.num_classes()),
        }
    }
}

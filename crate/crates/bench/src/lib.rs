//! Shared fixtures for the benchmarks.

use geom_core::buffer::{train_experts, BufferConfig};
use geom_core::condenser::{init_condensed, CondensedSet};
use geom_core::curriculum::PacingConfig;
use geom_core::graph::{generate_sbm, GraphDataset, SbmConfig};
use geom_core::ExpertTrajectory;

/// The 3×200 node block model used by the end-to-end benchmark.
pub fn desk_graph(seed: u64) -> GraphDataset {
    generate_sbm(&SbmConfig {
        feature_noise: 2.0,
        seed,
        ..SbmConfig::default()
    })
    .expect("default SBM config is valid")
}

/// One short expert trajectory with `snapshots` entries.
pub fn short_trajectory(g: &GraphDataset, snapshots: usize) -> ExpertTrajectory {
    let epochs = snapshots - 1;
    let cfg = BufferConfig {
        num_experts: 1,
        epochs,
        pacing: PacingConfig {
            zeta: epochs / 2,
            extra_epochs: epochs - epochs / 2,
            ..PacingConfig::default()
        },
        patience: epochs,
        ..BufferConfig::default()
    };
    train_experts(g, &cfg).expect("buffer training").remove(0)
}

/// A quarter of the training split, features copied from real nodes.
pub fn initial_set(g: &GraphDataset) -> CondensedSet {
    init_condensed(g, 0.25, 0, false, 0.06).expect("budget covers every class")
}

//! Condensed-set bundles: `features.csv`, `labels.csv`, optional
//! `soft_labels.csv`, and `meta.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CondenseError, CondensedSet, Result};
use crate::buffer::{encode_trajectory, ExpertTrajectory};
use crate::graph::io::{read_labels, read_matrix, write_file, write_labels, write_matrix};
use crate::graph::GraphError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensedMeta {
    pub inner_lr: f64,
    pub num_classes: usize,
    /// What produced the set, e.g. `geom` or `coreset:herding`.
    pub source: String,
    /// Resolved configuration of the producing run.
    #[serde(default)]
    pub config: serde_json::Value,
    /// SHA-256 over the trajectories used, when any.
    #[serde(default)]
    pub trajectory_hash: Option<String>,
}

/// SHA-256 of the concatenated binary encodings, hex encoded.
pub fn trajectory_digest(trajectories: &[ExpertTrajectory]) -> String {
    let mut h = Sha256::new();
    for t in trajectories {
        h.update(encode_trajectory(t));
    }
    hex::encode(h.finalize())
}

pub fn save_condensed(set: &CondensedSet, meta: &CondensedMeta, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| GraphError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_matrix(&dir.join("features.csv"), &set.features)?;
    write_labels(&dir.join("labels.csv"), &set.hard_labels)?;
    let soft_path = dir.join("soft_labels.csv");
    match &set.soft_labels {
        Some(soft) => write_matrix(&soft_path, soft)?,
        None if soft_path.exists() => fs::remove_file(&soft_path).map_err(|source| GraphError::Io {
            path: soft_path.display().to_string(),
            source,
        })?,
        None => {}
    }
    let meta = CondensedMeta {
        inner_lr: set.inner_lr,
        num_classes: set.num_classes,
        ..meta.clone()
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_file(&dir.join("meta.json"), &json)?;
    Ok(())
}

pub fn load_condensed(dir: impl AsRef<Path>) -> Result<(CondensedSet, CondensedMeta)> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|source| GraphError::Io {
        path: meta_path.display().to_string(),
        source,
    })?;
    let meta: CondensedMeta = serde_json::from_str(&text).map_err(|e| GraphError::Parse {
        path: meta_path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let features = read_matrix(&dir.join("features.csv"))?;
    let hard_labels = read_labels(&dir.join("labels.csv"))?;
    let soft_path = dir.join("soft_labels.csv");
    let soft_labels = if soft_path.exists() {
        Some(read_matrix(&soft_path)?)
    } else {
        None
    };
    let set = CondensedSet {
        features,
        hard_labels,
        soft_labels,
        inner_lr: meta.inner_lr,
        num_classes: meta.num_classes,
    };
    set.validate().map_err(|e| match e {
        CondenseError::Config(m) => CondenseError::Config(format!("{}: {m}", dir.display())),
        other => other,
    })?;
    Ok((set, meta))
}

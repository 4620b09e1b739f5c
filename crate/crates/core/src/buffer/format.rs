//! Binary trajectory files.
//!
//! Little-endian layout:
//!
//! | bytes | field |
//! |-------|-------|
//! | 8     | magic `GEOMTRAJ` |
//! | 4     | format version (u32, currently 1) |
//! | 4     | arch id (u32: 0 gcn2, 1 sgc2, 2 mlp2) |
//! | 12    | in/hidden/out dims (u32 × 3) |
//! | 4     | snapshot count (u32) |
//! | 8     | parameters per snapshot P (u64) |
//! | 8·P·n | snapshots, each P f64 |
//!
//! Metadata lives in a JSON sidecar at `<path>.meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{ExpertTrajectory, TrajectoryMeta};
use crate::models::{Arch, ModelSpec, ParameterVector};

pub const TRAJECTORY_MAGIC: &[u8; 8] = b"GEOMTRAJ";
pub const TRAJECTORY_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 12 + 4 + 8;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a trajectory file (bad magic)")]
    BadMagic,
    #[error("unsupported trajectory format version {0}")]
    Version(u32),
    #[error("unknown architecture id {0}")]
    UnknownArch(u32),
    #[error("truncated trajectory: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trajectory has {found} bytes, header implies {expected}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("header says P = {header} but the model layout has {layout} parameters")]
    LayoutMismatch { header: usize, layout: usize },
    #[error("trajectory needs at least two snapshots, header says {0}")]
    TooShort(u32),
    #[error("bad metadata sidecar: {0}")]
    Meta(#[from] serde_json::Error),
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode_trajectory(traj: &ExpertTrajectory) -> Vec<u8> {
    let p = traj.num_params();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * p * traj.len());
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.extend_from_slice(&TRAJECTORY_VERSION.to_le_bytes());
    out.extend_from_slice(&traj.spec.arch.id().to_le_bytes());
    for dim in [traj.spec.in_dim, traj.spec.hidden_dim, traj.spec.out_dim] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&(traj.len() as u32).to_le_bytes());
    out.extend_from_slice(&(p as u64).to_le_bytes());
    for snap in &traj.snapshots {
        for x in &snap.flat {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_trajectory(bytes: &[u8], meta: TrajectoryMeta) -> Result<ExpertTrajectory, FormatError> {
    if bytes.len() < 8 || &bytes[..8] != TRAJECTORY_MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 8);
    if version != TRAJECTORY_VERSION {
        return Err(FormatError::Version(version));
    }
    let arch_id = u32_at(bytes, 12);
    let arch = Arch::from_id(arch_id).ok_or(FormatError::UnknownArch(arch_id))?;
    let spec = ModelSpec {
        arch,
        in_dim: u32_at(bytes, 16) as usize,
        hidden_dim: u32_at(bytes, 20) as usize,
        out_dim: u32_at(bytes, 24) as usize,
        seed: meta.init_seed,
    };
    let count = u32_at(bytes, 28);
    let p = u64::from_le_bytes(bytes[32..40].try_into().unwrap()) as usize;
    if count < 2 {
        return Err(FormatError::TooShort(count));
    }
    let layout = spec.layout();
    if spec.num_params() != p {
        return Err(FormatError::LayoutMismatch {
            header: p,
            layout: spec.num_params(),
        });
    }
    let expected = HEADER_LEN + 8 * p * count as usize;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            expected,
            found: bytes.len(),
        });
    }
    let snapshots = bytes[HEADER_LEN..]
        .chunks_exact(8 * p)
        .map(|chunk| {
            let flat = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            ParameterVector {
                flat,
                layout: layout.clone(),
            }
        })
        .collect();
    Ok(ExpertTrajectory { spec, snapshots, meta })
}

/// Writes the binary file and its metadata sidecar.
pub fn save_trajectory(traj: &ExpertTrajectory, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, encode_trajectory(traj)).map_err(io_err(path))?;
    let meta_path = sidecar_path(path);
    let json = serde_json::to_string_pretty(&traj.meta)?;
    fs::write(&meta_path, json).map_err(io_err(&meta_path))
}

/// Reads a trajectory; any defect yields an error and no partial value.
pub fn load_trajectory(path: impl AsRef<Path>) -> Result<ExpertTrajectory, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let meta_path = sidecar_path(path);
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: TrajectoryMeta = serde_json::from_str(&meta_text)?;
    decode_trajectory(&bytes, meta)
}

//! CSV and JSON report writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecompositionRow, EvalError, EvalReport, Result};

/// One evaluated method with its per-repeat accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub arch: String,
    pub report: EvalReport,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| EvalError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `method,arch,repeat,accuracy` rows followed by `mean` and `std` rows.
pub fn write_eval_csv(path: impl AsRef<Path>, summaries: &[EvalSummary]) -> Result<()> {
    let mut out = String::from("method,arch,repeat,accuracy\n");
    for s in summaries {
        for (r, a) in s.report.accuracies.iter().enumerate() {
            writeln!(out, "{},{},{r},{a}", s.method, s.arch).unwrap();
        }
        writeln!(out, "{},{},mean,{}", s.method, s.arch, s.report.mean).unwrap();
        writeln!(out, "{},{},std,{}", s.method, s.arch, s.report.std).unwrap();
    }
    write(path.as_ref(), &out)
}

pub fn write_eval_json(path: impl AsRef<Path>, summaries: &[EvalSummary]) -> Result<()> {
    let json = serde_json::to_string_pretty(summaries).expect("summaries serialize");
    write(path.as_ref(), &json)
}

/// `stage,accumulated,initialization,matching,residual` with L2 norms.
pub fn write_decomposition_csv(path: impl AsRef<Path>, rows: &[DecompositionRow]) -> Result<()> {
    let mut out = String::from("stage,accumulated,initialization,matching,residual\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.stage, r.accumulated_norm, r.initialization_norm, r.matching_norm, r.residual
        )
        .unwrap();
    }
    write(path.as_ref(), &out)
}

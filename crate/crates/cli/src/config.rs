//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use geom_core::evaluator::{CoresetMethod, DecompositionConfig};
use geom_core::{Arch, BufferConfig, EvalProtocol, MatchingConfig, SbmConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; fills every section seed the file leaves unset.
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; all available cores when unset.
    pub threads: Option<usize>,
    pub dataset: DatasetConfig,
    pub inputs: InputsConfig,
    pub model: ModelConfig,
    pub buffer: BufferConfig,
    pub matching: MatchingConfig,
    pub condense: CondenseConfig,
    pub eval: EvalProtocol,
    pub coreset: CoresetConfig,
    pub analyze: AnalyzeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("geom-out"),
            threads: None,
            dataset: DatasetConfig::default(),
            inputs: InputsConfig::default(),
            model: ModelConfig::default(),
            buffer: BufferConfig::default(),
            matching: MatchingConfig::default(),
            condense: CondenseConfig::default(),
            eval: EvalProtocol::default(),
            coreset: CoresetConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

/// A graph bundle on disk, or a generated block model when `path` is unset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub sbm: SbmConfig,
}

/// Artifacts produced by earlier commands.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputsConfig {
    /// Directory of `.traj` files (condense).
    pub trajectories: Option<PathBuf>,
    /// Condensed-set bundle (eval, analyze).
    pub condensed: Option<PathBuf>,
    /// Single `.traj` file (analyze).
    pub trajectory: Option<PathBuf>,
}

/// Architecture trained during evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Gcn2,
            hidden_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CondenseConfig {
    /// Condensed size as a fraction of the training split.
    pub ratio: f64,
    /// Initial inner learning rate η.
    pub inner_lr: f64,
    pub soft_labels: bool,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        Self {
            ratio: 0.25,
            inner_lr: 0.06,
            soft_labels: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoresetConfig {
    pub method: CoresetMethod,
    pub ratio: f64,
}

impl Default for CoresetConfig {
    fn default() -> Self {
        Self {
            method: CoresetMethod::Random,
            ratio: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Analyze the built-in linear-regression toy instead of stored files.
    pub toy: bool,
    /// Student learning rate; the condensed set's η when unset.
    pub lr: Option<f64>,
    pub expert_steps: usize,
    pub student_steps: usize,
    pub stages: usize,
    pub tolerance: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        let d = DecompositionConfig::default();
        Self {
            toy: false,
            lr: None,
            expert_steps: d.expert_steps,
            student_steps: d.student_steps,
            stages: d.stages,
            tolerance: d.tolerance,
        }
    }
}

impl AnalyzeConfig {
    pub fn decomposition(&self) -> DecompositionConfig {
        DecompositionConfig {
            expert_steps: self.expert_steps,
            student_steps: self.student_steps,
            stages: self.stages,
            initial_offset: None,
            tolerance: self.tolerance,
        }
    }
}

/// Sections whose `seed` follows the global seed unless set explicitly.
const SEEDED_SECTIONS: [&[&str]; 4] = [&["dataset", "sbm"], &["buffer"], &["matching"], &["eval"]];

impl RunConfig {
    /// Parses `text`, then fills section seeds from the global seed where the
    /// file does not set them.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))?;
        let mut cfg: RunConfig = table
            .clone()
            .try_into()
            .map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))?;
        let seed = cfg.seed;
        for path in SEEDED_SECTIONS {
            if !has_key(&table, path, "seed") {
                *cfg.section_seed(path) = seed;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text, p)
            }
        }
    }

    /// Overrides the global seed and every section seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        for path in SEEDED_SECTIONS {
            *self.section_seed(path) = seed;
        }
    }

    fn section_seed(&mut self, path: &[&str]) -> &mut u64 {
        match path {
            ["dataset", "sbm"] => &mut self.dataset.sbm.seed,
            ["buffer"] => &mut self.buffer.seed,
            ["matching"] => &mut self.matching.seed,
            ["eval"] => &mut self.eval.seed,
            _ => unreachable!("unknown seeded section {path:?}"),
        }
    }

    /// Checks every section and every referenced path before work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
        self.dataset.sbm.validate().map_err(|e| usage(&e))?;
        self.buffer.validate().map_err(|e| usage(&e))?;
        self.matching.validate().map_err(|e| usage(&e))?;
        self.eval.validate().map_err(|e| usage(&e))?;
        if self.model.hidden_dim == 0 {
            return Err(CliError::Usage("model.hidden_dim must be >= 1".into()));
        }
        for (name, ratio) in [
            ("condense.ratio", self.condense.ratio),
            ("coreset.ratio", self.coreset.ratio),
        ] {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(CliError::Usage(format!("{name} must lie in (0, 1], got {ratio}")));
            }
        }
        if !(self.condense.inner_lr > 0.0 && self.condense.inner_lr.is_finite()) {
            return Err(CliError::Usage(format!(
                "condense.inner_lr must be positive, got {}",
                self.condense.inner_lr
            )));
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("threads must be >= 1".into()));
        }
        let a = &self.analyze;
        if a.expert_steps < 1 || a.student_steps < 1 || a.stages < 1 {
            return Err(CliError::Usage("analyze steps and stages must be >= 1".into()));
        }
        if !(a.tolerance >= 0.0) {
            return Err(CliError::Usage(format!(
                "analyze.tolerance must be >= 0, got {}",
                a.tolerance
            )));
        }
        if let Some(lr) = a.lr.filter(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return Err(CliError::Usage(format!("analyze.lr must be positive, got {lr}")));
        }
        let paths = [
            ("dataset", &self.dataset.path),
            ("trajectory directory", &self.inputs.trajectories),
            ("condensed bundle", &self.inputs.condensed),
            ("trajectory", &self.inputs.trajectory),
        ];
        for (what, path) in paths {
            if let Some(p) = path.as_ref().filter(|p| !p.exists()) {
                return Err(CliError::Usage(format!("{what} path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

fn has_key(table: &toml::Table, path: &[&str], key: &str) -> bool {
    let mut t = table;
    for part in path {
        match t.get(*part).and_then(toml::Value::as_table) {
            Some(inner) => t = inner,
            None => return false,
        }
    }
    t.contains_key(key)
}

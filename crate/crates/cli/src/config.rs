//! Run configuration: one TOML file with a section per stage.
//!
//! Values resolve in this order, later winning:
//!
//! 1. built-in defaults,
//! 2. the `--config` file,
//! 3. `--section.key=value` overrides, in command-line order,
//! 4. the `--seed` and `--out` flags.
//!
//! Every section rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vaediff::augmentation::GenerationFilters;
use vaediff::diffusion::DiffusionConfig;
use vaediff::predictors::{GbtConfig, ZipConfig};
use vaediff::quality::QualityConfig;
use vaediff::vae::VaeConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub seeds: Seeds,
    pub simulate: SimulateConfig,
    pub split: SplitConfig,
    pub vae: VaeConfig,
    pub diffusion: DiffusionConfig,
    pub generate: GenerationFilters,
    pub rebalance: RebalanceConfig,
    pub quality: QualitySection,
    pub predictor: PredictorConfig,
    pub zip: ZipConfig,
    pub evaluate: EvaluateConfig,
    pub explain: ExplainConfig,
}

/// Artifact locations. Unset paths default to fixed names under `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    pub synthetic_schema: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out: PathBuf::from("run"),
            data: None,
            schema: None,
            checkpoints: None,
            synthetic: None,
            synthetic_schema: None,
        }
    }
}

impl Paths {
    pub fn data(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join("data.csv"))
    }

    pub fn schema(&self) -> PathBuf {
        self.schema.clone().unwrap_or_else(|| self.out.join("data.schema.toml"))
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.checkpoints.clone().unwrap_or_else(|| self.out.join("checkpoints"))
    }

    pub fn vae_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("vae.ckpt")
    }

    pub fn diffusion_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("diffusion.ckpt")
    }

    pub fn synthetic(&self) -> PathBuf {
        self.synthetic.clone().unwrap_or_else(|| self.out.join("synthetic.csv"))
    }

    pub fn synthetic_schema(&self) -> PathBuf {
        self.synthetic_schema
            .clone()
            .unwrap_or_else(|| self.out.join("synthetic.schema.toml"))
    }

    pub fn rebalanced(&self) -> PathBuf {
        self.out.join("rebalanced.csv")
    }

    pub fn rebalanced_schema(&self) -> PathBuf {
        self.out.join("rebalanced.schema.toml")
    }

    pub fn logs(&self) -> PathBuf {
        self.out.join("logs")
    }

    pub fn models(&self) -> PathBuf {
        self.out.join("models")
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.models().join(format!("{name}.json"))
    }

    pub fn manifests(&self) -> PathBuf {
        self.out.join("manifests")
    }
}

/// Named seeds. Each stage uses its own value when set, otherwise
/// `base` plus a fixed per-stage offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub base: u64,
    pub simulate: Option<u64>,
    pub split: Option<u64>,
    pub vae: Option<u64>,
    pub diffusion: Option<u64>,
    pub generate: Option<u64>,
    pub quality: Option<u64>,
    pub predictor: Option<u64>,
    pub explain: Option<u64>,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            base: 2024,
            simulate: None,
            split: None,
            vae: None,
            diffusion: None,
            generate: None,
            quality: None,
            predictor: None,
            explain: None,
        }
    }
}

impl Seeds {
    fn pick(&self, explicit: Option<u64>, offset: u64) -> u64 {
        explicit.unwrap_or(self.base.wrapping_add(offset))
    }

    pub fn simulate(&self) -> u64 {
        self.pick(self.simulate, 0)
    }

    pub fn split(&self) -> u64 {
        self.pick(self.split, 1)
    }

    pub fn vae(&self) -> u64 {
        self.pick(self.vae, 2)
    }

    pub fn diffusion(&self) -> u64 {
        self.pick(self.diffusion, 3)
    }

    pub fn generate(&self) -> u64 {
        self.pick(self.generate, 4)
    }

    pub fn quality(&self) -> u64 {
        self.pick(self.quality, 5)
    }

    pub fn predictor(&self) -> u64 {
        self.pick(self.predictor, 6)
    }

    pub fn explain(&self) -> u64 {
        self.pick(self.explain, 7)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub n_rows: usize,
    pub law: Law,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_rows: 17856,
            law: Law::Nonlinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RebalanceConfig {
    /// Desired non-zero rows per zero row.
    pub ratio: f64,
}

impl Default for RebalanceConfig {
    fn default() -> Self {
        Self { ratio: 1.0 }
    }
}

/// Quality settings; the seed comes from `[seeds]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualitySection {
    pub folds: usize,
    pub iterations: usize,
    pub lr: f64,
    pub bins: usize,
    pub density_columns: Option<Vec<String>>,
    pub joint_pairs: Vec<(String, String)>,
}

impl Default for QualitySection {
    fn default() -> Self {
        let q = QualityConfig::default();
        Self {
            folds: q.folds,
            iterations: q.iterations,
            lr: q.lr,
            bins: q.bins,
            density_columns: q.density_columns,
            joint_pairs: q.joint_pairs,
        }
    }
}

impl QualitySection {
    pub fn with_seed(&self, seed: u64) -> QualityConfig {
        QualityConfig {
            folds: self.folds,
            iterations: self.iterations,
            lr: self.lr,
            seed,
            bins: self.bins,
            density_columns: self.density_columns.clone(),
            joint_pairs: self.joint_pairs.clone(),
        }
    }
}

/// Which training table a GBT is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Imbalanced,
    Rebalanced,
}

impl Variant {
    pub fn model_name(self) -> &'static str {
        match self {
            Variant::Imbalanced => "gbt_imbalanced",
            Variant::Rebalanced => "gbt_rebalanced",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub variants: Vec<Variant>,
    /// Candidate configs; a single entry skips cross-validation.
    pub grid: Vec<GbtConfig>,
    pub folds: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            variants: vec![Variant::Imbalanced, Variant::Rebalanced],
            grid: GbtConfig::default_grid(),
            folds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Model file stems under `models/`.
    pub models: Vec<String>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            models: vec!["gbt_imbalanced".into(), "gbt_rebalanced".into(), "zip".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    pub model: String,
    /// Enumerate all coalitions instead of sampling permutations.
    pub exact: bool,
    pub n_permutations: usize,
    /// Test rows to attribute.
    pub rows: usize,
    pub background: usize,
    /// `(feature, interaction feature)` pairs for dependence exports.
    pub dependence: Vec<(String, String)>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            model: "gbt_rebalanced".into(),
            exact: false,
            n_permutations: 50,
            rows: 100,
            background: vaediff::explain::DEFAULT_BACKGROUND,
            dependence: Vec::new(),
        }
    }
}

/// A `--section.key=value` command-line override.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: toml::Value,
}

impl Override {
    /// Parses `section.key=value`. The value is read as a TOML value and
    /// falls back to a bare string.
    pub fn parse(text: &str) -> CliResult<Self> {
        let (key, raw) = text
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{text}` needs the form section.key=value")))?;
        let path: Vec<String> = key.split('.').map(str::to_string).collect();
        if path.len() < 2 || path.iter().any(|p| p.is_empty()) {
            return Err(CliError::Config(format!("override key `{key}` needs the form section.key")));
        }
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        Ok(Self { path, value })
    }

    fn apply(&self, root: &mut toml::Table) -> CliResult<()> {
        let (last, parents) = self.path.split_last().expect("at least two parts");
        let mut table = root;
        for p in parents {
            let entry = table
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("override `{}`: `{p}` is not a section", self.path.join("."))))?;
        }
        table.insert(last.clone(), self.value.clone());
        Ok(())
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        Self::resolve(Some(text), &[])
    }

    /// Defaults, then `file_text`, then `overrides`.
    pub fn resolve(file_text: Option<&str>, overrides: &[Override]) -> CliResult<Self> {
        let mut root: toml::Table = match file_text {
            Some(t) => toml::from_str(t).map_err(|e| CliError::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            o.apply(&mut root)?;
        }
        let cfg: RunConfig = root.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[Override]) -> CliResult<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::io(p.to_path_buf(), e))?),
            None => None,
        };
        Self::resolve(text.as_deref(), overrides)
    }

    pub fn to_toml_string(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> CliResult<()> {
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::Config(format!("split.train_fraction must be in (0, 1), got {f}")));
        }
        if !(self.rebalance.ratio > 0.0 && self.rebalance.ratio.is_finite()) {
            return Err(CliError::Config(format!(
                "rebalance.ratio must be positive, got {}",
                self.rebalance.ratio
            )));
        }
        if self.predictor.grid.is_empty() {
            return Err(CliError::Config("predictor.grid is empty".into()));
        }
        if self.predictor.grid.len() > 1 && self.predictor.folds < 2 {
            return Err(CliError::Config("predictor.folds must be at least 2".into()));
        }
        if !self.explain.exact && self.explain.n_permutations == 0 {
            return Err(CliError::Config("explain.n_permutations must be positive".into()));
        }
        if self.explain.rows == 0 || self.explain.background == 0 {
            return Err(CliError::Config("explain.rows and explain.background must be positive".into()));
        }
        self.vae.validate()?;
        self.diffusion.validate()?;
        for g in &self.predictor.grid {
            g.validate()?;
        }
        Ok(())
    }
}

//! Run configuration: one versioned TOML file drives a full reproduction
//! (extract -> discover -> evaluate), with all randomness (split seed,
//! reference-backend seed) pinned in the file. CLI flags override fields.
//!
//! Relative paths inside the config (dataset, vocab) resolve against the
//! config file's directory; the output directory resolves against the
//! working directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{InstructionSet, InstructionSets, ReflectionLevel, ScoreMode, SeparatorPolicy};
use crate::discovery::Aggregation;
use crate::error::{Error, Result};
use crate::harness::Direction;

pub const CONFIG_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackendConfig {
    /// Deterministic desk-scale backend.
    Reference {
        seed: u64,
        num_layers: usize,
        hidden_dim: usize,
    },
    /// Placeholder for a real-LLM adapter; constructing one requires an
    /// implementation of the Backend trait.
    External {
        model_id: String,
        #[serde(default)]
        hook_point: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    #[default]
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// gsm8k_adv style: answers are numbers, scored by flexible exact match.
    #[default]
    Numeric,
    /// cruxeval_o_adv style: answers are literal value text.
    Literal,
}

impl DatasetKind {
    pub fn score_mode(self) -> ScoreMode {
        match self {
            DatasetKind::Numeric => ScoreMode::NumericContains,
            DatasetKind::Literal => ScoreMode::LiteralContains,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub format: DatasetFormat,
    #[serde(default)]
    pub kind: DatasetKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub seed: u64,
}

fn default_train_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionsConfig {
    pub level0: Vec<String>,
    pub level1: Vec<String>,
    pub level2: Vec<String>,
}

impl Default for InstructionsConfig {
    fn default() -> Self {
        let sets = InstructionSets::defaults();
        Self {
            level0: sets
                .set(ReflectionLevel::NO_REFLECTION)
                .instructions
                .clone(),
            level1: sets.set(ReflectionLevel::INTRINSIC).instructions.clone(),
            level2: sets.set(ReflectionLevel::TRIGGERED).instructions.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// Layers to capture; defaults to all 0..=num_layers.
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default = "default_pairs")]
    pub pairs: Vec<String>,
}

fn default_pairs() -> Vec<String> {
    vec!["0:2".into(), "1:2".into(), "0:1".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    /// Discovery layer; defaults to floor(2L/5).
    #[serde(default)]
    pub layer: Option<usize>,
    /// Word list (one token per line); defaults to the backend vocabulary.
    #[serde(default)]
    pub vocab_path: Option<PathBuf>,
    #[serde(default = "default_discovery_pair")]
    pub pair: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_pool_cap")]
    pub pool_cap: usize,
    #[serde(default)]
    pub baseline_aggregation: Aggregation,
}

fn default_discovery_pair() -> String {
    "0:2".into()
}

fn default_top_k() -> usize {
    5
}

fn default_pool_cap() -> usize {
    2000
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            layer: None,
            vocab_path: None,
            pair: default_discovery_pair(),
            top_k: default_top_k(),
            pool_cap: default_pool_cap(),
            baseline_aggregation: Aggregation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub pair: String,
    pub instruction: String,
    pub direction: Direction,
    pub layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateConfig {
    /// Generation cap; when absent, 256 for numeric datasets and 128 for
    /// literal ones.
    #[serde(default)]
    pub max_new_tokens: Option<usize>,
    #[serde(default = "default_true")]
    pub three_level: bool,
    #[serde(default)]
    pub separator: SeparatorPolicy,
    /// Evaluate tokens selected by a previous `discover` run.
    #[serde(default)]
    pub include_discovered: bool,
    #[serde(default)]
    pub sweeps: Vec<SweepConfig>,
}

fn default_true() -> bool {
    true
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: None,
            three_level: true,
            separator: SeparatorPolicy::default(),
            include_discovered: false,
            sweeps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_parallel() -> usize {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            parallel: default_parallel(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub config_version: i64,
    pub backend: BackendConfig,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    #[serde(default)]
    pub instructions: InstructionsConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default)]
    pub discovery: DiscoveryConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// CLI flag overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub layers: Option<Vec<usize>>,
    pub pair: Option<String>,
    pub direction: Option<Direction>,
    pub top_k: Option<usize>,
    pub parallel: Option<usize>,
}

impl RunConfig {
    /// Parse and validate a config file, resolving its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if config.config_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config_version {} unsupported (this build reads version {CONFIG_VERSION})",
                config.config_version
            )));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.dataset.path = resolve(base, &config.dataset.path);
        if let Some(vocab) = &config.discovery.vocab_path {
            config.discovery.vocab_path = Some(resolve(base, vocab));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn apply_overrides(&mut self, overrides: &Overrides) {
        if let Some(out) = &overrides.out {
            self.output.dir = out.clone();
        }
        if let Some(parallel) = overrides.parallel {
            self.output.parallel = parallel;
        }
        if let Some(top_k) = overrides.top_k {
            self.discovery.top_k = top_k;
        }
        if let Some(pair) = &overrides.pair {
            self.discovery.pair = pair.clone();
            self.extract.pairs = vec![pair.clone()];
            for sweep in &mut self.evaluate.sweeps {
                sweep.pair = pair.clone();
            }
        }
        if let Some(direction) = overrides.direction {
            for sweep in &mut self.evaluate.sweeps {
                sweep.direction = direction;
            }
        }
        if let Some(layers) = &overrides.layers {
            self.extract.layers = layers.clone();
            self.discovery.layer = layers.first().copied();
            for sweep in &mut self.evaluate.sweeps {
                sweep.layers = layers.clone();
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.path.exists() {
            return Err(Error::Config(format!(
                "dataset path {} does not exist",
                self.dataset.path.display()
            )));
        }
        if let Some(vocab) = &self.discovery.vocab_path {
            if !vocab.exists() {
                return Err(Error::Config(format!(
                    "vocab path {} does not exist",
                    vocab.display()
                )));
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::BadTrainFraction(self.split.train_fraction));
        }
        if self.output.parallel == 0 {
            return Err(Error::Config("parallel must be >= 1".into()));
        }
        self.instruction_sets()?;
        for pair in &self.extract.pairs {
            parse_pair(pair)?;
        }
        parse_pair(&self.discovery.pair)?;
        for sweep in &self.evaluate.sweeps {
            parse_pair(&sweep.pair)?;
            if sweep.layers.is_empty() {
                return Err(Error::Config(format!(
                    "sweep for {:?} has no layers",
                    sweep.instruction
                )));
            }
        }
        if let BackendConfig::Reference { num_layers, .. } = &self.backend {
            let max = *num_layers;
            let check = |layer: usize, what: &str| -> Result<()> {
                if layer > max {
                    return Err(Error::Config(format!(
                        "{what} layer {layer} out of range [0, {max}]"
                    )));
                }
                Ok(())
            };
            for &layer in &self.extract.layers {
                check(layer, "extract")?;
            }
            if let Some(layer) = self.discovery.layer {
                check(layer, "discovery")?;
            }
            for sweep in &self.evaluate.sweeps {
                for &layer in &sweep.layers {
                    check(layer, "sweep")?;
                }
            }
        }
        Ok(())
    }

    pub fn instruction_sets(&self) -> Result<InstructionSets> {
        InstructionSets::new(
            InstructionSet::new(
                ReflectionLevel::NO_REFLECTION,
                self.instructions.level0.clone(),
            )?,
            InstructionSet::new(ReflectionLevel::INTRINSIC, self.instructions.level1.clone())?,
            InstructionSet::new(ReflectionLevel::TRIGGERED, self.instructions.level2.clone())?,
        )
    }

    /// Extraction layers; empty list means all of 0..=num_layers.
    pub fn extract_layers(&self, num_layers: usize) -> Vec<usize> {
        if self.extract.layers.is_empty() {
            (0..=num_layers).collect()
        } else {
            self.extract.layers.clone()
        }
    }

    /// Generation cap, defaulting by dataset kind.
    pub fn max_new_tokens(&self) -> usize {
        self.evaluate
            .max_new_tokens
            .unwrap_or(match self.dataset.kind {
                DatasetKind::Numeric => 256,
                DatasetKind::Literal => 128,
            })
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Parse a "a:b" reflection-level pair.
pub fn parse_pair(text: &str) -> Result<(ReflectionLevel, ReflectionLevel)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("pair {text:?} is not of the form a:b")))?;
    let parse = |s: &str| -> Result<ReflectionLevel> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("pair level {s:?} is not an integer")))?;
        ReflectionLevel::new(v)
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if a == b {
        return Err(Error::Config(format!("pair {text:?} has equal levels")));
    }
    Ok((a, b))
}

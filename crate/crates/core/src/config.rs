use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FocalConfig, FusionConfig};
use crate::geometry::DEFAULT_EPS;
use crate::io_util::{parse_json_file, write_json_file};

/// Score exponent used while training; inference uses `FusionConfig::lambda`.
pub const TRAINING_LAMBDA: f64 = 1.0;

/// Tensor widths of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Unary detector feature width.
    pub feature: usize,
    /// Relation token width shared by the binary and ternary decoders and by
    /// the image feature grid.
    pub model: usize,
    /// Prompt/context width of the contextual decoder.
    pub context: usize,
    /// Word/text embedding width (the [ACT] vectors live here).
    pub text: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            feature: 32,
            model: 32,
            context: 32,
            text: 16,
        }
    }
}

/// How the words before "person" in the interaction prompt are produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    Manual { words: Vec<String> },
    Learnable { length: usize },
}

impl PrefixMode {
    pub fn len(&self) -> usize {
        match self {
            PrefixMode::Manual { words } => words.len(),
            PrefixMode::Learnable { length } => *length,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Prompt words; learnable slots render as `[V1] [V2] ...`.
    pub fn words(&self) -> Vec<String> {
        match self {
            PrefixMode::Manual { words } => words.clone(),
            PrefixMode::Learnable { length } => (1..=*length).map(|k| format!("[V{k}]")).collect(),
        }
    }
}

impl Default for PrefixMode {
    fn default() -> Self {
        PrefixMode::Manual {
            words: ["a", "photo", "of", "a"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub dims: ModelDims,
    pub heads: usize,
    pub binary_blocks: usize,
    pub ternary_blocks: usize,
    pub contextual_blocks: usize,
    pub act_length: usize,
    pub prefix: PrefixMode,
    pub fusion: FusionConfig,
    pub training_lambda: f64,
    pub focal: FocalConfig,
    pub spatial_eps: f64,
    /// Category table file, resolved relative to the config file.
    pub categories: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            dims: ModelDims::default(),
            heads: 2,
            binary_blocks: 2,
            ternary_blocks: 2,
            contextual_blocks: 2,
            act_length: 4,
            prefix: PrefixMode::default(),
            fusion: FusionConfig::default(),
            training_lambda: TRAINING_LAMBDA,
            focal: FocalConfig::default(),
            spatial_eps: DEFAULT_EPS,
            categories: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::config("pipeline", d));
        let ModelDims {
            feature,
            model,
            context,
            text,
        } = self.dims;
        for (name, v) in [
            ("feature", feature),
            ("model", model),
            ("context", context),
            ("text", text),
        ] {
            if v == 0 {
                return bad(format!("dims.{name} must be positive"));
            }
        }
        if model < 2 || context < 2 {
            return bad("model and context widths must be at least 2 for layer norm".into());
        }
        if self.heads == 0 || model % self.heads != 0 || context % self.heads != 0 {
            return bad(format!(
                "heads={} must divide model width {model} and context width {context}",
                self.heads
            ));
        }
        if self.binary_blocks == 0 || self.ternary_blocks == 0 {
            return bad("decoder block counts must be at least 1".into());
        }
        if self.contextual_blocks != 2 {
            return bad(format!(
                "contextual decoder has exactly 2 blocks (global, regional), got {}",
                self.contextual_blocks
            ));
        }
        if self.act_length == 0 {
            return bad("act_length must be at least 1".into());
        }
        if self.prefix.is_empty() {
            return bad("prompt prefix must have at least one token".into());
        }
        if !(self.spatial_eps > 0.0 && self.spatial_eps.is_finite()) {
            return bad(format!("spatial_eps must be positive, got {}", self.spatial_eps));
        }
        if self.training_lambda.is_nan() || self.training_lambda <= 0.0 {
            return bad("training_lambda must be positive".into());
        }
        self.fusion.validate()?;
        self.focal.validate()?;
        Ok(())
    }

    /// Loads and validates a config; a relative `categories` path is resolved
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: EngineConfig = parse_json_file(path)?;
        if let (Some(cat), Some(dir)) = (cfg.categories.as_ref(), path.parent()) {
            if cat.is_relative() {
                cfg.categories = Some(dir.join(cat));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_file(path.as_ref(), self)
    }

    /// Copy with the scoring exponent set to its training value.
    pub fn training(&self) -> Self {
        let mut c = self.clone();
        c.fusion.lambda = self.training_lambda;
        c
    }
}

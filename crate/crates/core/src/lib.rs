//! Relational human-object interaction scoring engine.
//!
//! Detections and a feature grid go in; per-pair action scores come out.
//! Three streams contribute logits: a binary decoder over human-object
//! pairs, a ternary decoder over human-object-tool triplets licensed by a
//! knowledge bank, and a prompt-context decoder. The numeric core is generic
//! over [`Scalar`] (`f32` and `f64`); the aliases below name the concrete
//! instantiations.

pub mod categories;
pub mod config;
pub mod container;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod fusion;
pub mod geometry;
mod io_util;
pub mod kernels;
pub mod output;
pub mod pipeline;
pub mod prompt;
pub mod scalar;
pub mod scene;
pub mod selftest;
pub mod tensor;
pub mod tokens;
pub mod weights;

pub use categories::CategoryTable;
pub use config::{EngineConfig, ModelDims, PrefixMode};
pub use error::{Error, Result};
pub use eval::{evaluate, ApReport};
pub use fixtures::{gen_fixtures, generate, FixtureSpec, Fixtures};
pub use fusion::{FocalConfig, FusionConfig, LabelMatrix, ScoredInteraction};
pub use geometry::{BBox, ImageSize};
pub use io_util::sha256_hex;
pub use output::{GroundTruthFile, PredictionFile};
pub use pipeline::{Engine, SceneLogits, SceneLoss, ENGINE_VERSION};
pub use scalar::Scalar;
pub use scene::{load_bank, load_scene, write_scene, Detection, KnowledgeBank, Scene, SceneContext};
pub use selftest::{run_selftest, CheckResult};
pub use tensor::Tensor;
pub use weights::{load_weights, ModelWeights, WeightBundle};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type BBox32 = BBox<f32>;
pub type BBox64 = BBox<f64>;
pub type Scene32 = Scene<f32>;
pub type Scene64 = Scene<f64>;
pub type Engine32 = Engine<f32>;
pub type Engine64 = Engine<f64>;

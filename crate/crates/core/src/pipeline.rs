//! End-to-end inference and training loss for one scene.

use std::path::Path;

use crate::categories::CategoryTable;
use crate::config::EngineConfig;
use crate::decoder::{classify, run_binary_decoder, run_ternary_decoder, AttentionTrace, DecoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{
    final_scores, focal_sums, fuse_semantic, fuse_ternary, normalize_focal, FusionConfig, LabelMatrix,
    ScoredInteraction,
};
use crate::output::{ImagePredictions, PredictedInteraction, PredictionFile, PredictionMetadata};
use crate::prompt::{contextual_features, encode_prompts, global_context, run_contextual_decoder, semantic_logits};
use crate::scalar::Scalar;
use crate::scene::{KnowledgeBank, Scene};
use crate::tensor::Tensor;
use crate::tokens::{build_pairs, build_triplets, enrich_unary, PairSet, TripletSet};
use crate::weights::{load_weights, DecoderRole, ModelWeights, WeightBundle, LAYOUT_VERSION};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct SceneLogits<T> {
    pub pairs: PairSet<T>,
    pub triplets: TripletSet<T>,
    /// `[m x c]` binary-stream logits.
    pub binary: Tensor<T>,
    /// `[r x c]` ternary-stream logits.
    pub ternary: Tensor<T>,
    /// Binary logits refined by the assigned ternary logits.
    pub refined: Tensor<T>,
    /// `[m x c]` prompt-stream logits.
    pub semantic: Tensor<T>,
    /// Final logits entering the sigmoid.
    pub fused: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLoss<T> {
    pub loss: T,
    pub total: T,
    pub positives: usize,
    /// Gradient w.r.t. the fused logits (and, identically, the refined ones).
    pub grad_fused: Tensor<T>,
    /// Gradient w.r.t. the prompt-stream logits: `beta * grad_fused`.
    pub grad_semantic: Tensor<T>,
}

/// Immutable model: config, vocabulary and typed weights.
#[derive(Debug, Clone)]
pub struct Engine<T> {
    config: EngineConfig,
    categories: CategoryTable,
    weights: ModelWeights<T>,
    weights_sha256: String,
}

impl<T: Scalar> Engine<T> {
    pub fn new(config: EngineConfig, categories: CategoryTable, bundle: &WeightBundle) -> Result<Self> {
        config.validate()?;
        let weights = ModelWeights::from_bundle(bundle, &config, &categories)?;
        Ok(Engine {
            config,
            categories,
            weights,
            weights_sha256: bundle.sha256.clone(),
        })
    }

    /// Loads a config file, the category table it names and a weights
    /// container.
    pub fn load(config_path: impl AsRef<Path>, weights_path: impl AsRef<Path>) -> Result<Self> {
        let config = EngineConfig::load(config_path)?;
        let cat_path = config
            .categories
            .clone()
            .ok_or_else(|| Error::config("pipeline", "config does not name a category table"))?;
        let categories = CategoryTable::load(cat_path)?;
        let bundle = load_weights(weights_path)?;
        Self::new(config, categories, &bundle)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn categories(&self) -> &CategoryTable {
        &self.categories
    }

    pub fn weights(&self) -> &ModelWeights<T> {
        &self.weights
    }

    pub fn weights_sha256(&self) -> &str {
        &self.weights_sha256
    }

    /// Copy of the engine with different fusion hyperparameters.
    pub fn with_fusion(&self, fusion: FusionConfig) -> Result<Self> {
        fusion.validate()?;
        let mut e = self.clone();
        e.config.fusion = fusion;
        Ok(e)
    }

    fn decoder_config(&self, role: DecoderRole) -> DecoderConfig {
        let (width, blocks) = match role {
            DecoderRole::Binary => (self.config.dims.model, self.config.binary_blocks),
            DecoderRole::Ternary => (self.config.dims.model, self.config.ternary_blocks),
            DecoderRole::Contextual => (self.config.dims.context, self.config.contextual_blocks),
        };
        DecoderConfig {
            width,
            heads: self.config.heads,
            blocks,
            role,
        }
    }

    /// Forward pass through all three streams.
    pub fn forward(&self, scene: &Scene<T>, bank: &KnowledgeBank) -> Result<SceneLogits<T>> {
        self.forward_traced(scene, bank, None)
    }

    /// As [`forward`](Self::forward), recording every attention map.
    pub fn forward_traced(
        &self,
        scene: &Scene<T>,
        bank: &KnowledgeBank,
        mut trace: Option<&mut AttentionTrace<T>>,
    ) -> Result<SceneLogits<T>> {
        let cfg = &self.config;
        let w = &self.weights;
        scene.validate_against(&self.categories, cfg.dims.feature, cfg.dims.model)?;
        let human = self.categories.human();
        let eps = cfg.spatial_eps;
        let dets = &scene.detections;

        let enriched = enrich_unary(dets, &w.text_embed, &w.unary)?;
        let pairs = build_pairs(dets, &enriched, human, &w.pair, &w.binary_pos, scene.size, eps)?;
        let triplets = build_triplets(
            dets,
            &enriched,
            bank,
            &pairs,
            human,
            &w.triplet,
            &w.ternary_pos,
            scene.size,
            eps,
        )?;

        let (features, feature_pos) = scene.context.flattened();
        let g = run_binary_decoder(
            &pairs.tokens,
            &pairs.positions,
            &features,
            &feature_pos,
            &w.binary,
            &self.decoder_config(DecoderRole::Binary),
            trace.as_deref_mut(),
        )?;
        let binary = classify(&g, &w.binary_head)?;
        let t = run_ternary_decoder(
            &triplets.tokens,
            &triplets.positions,
            &features,
            &feature_pos,
            &w.ternary,
            &self.decoder_config(DecoderRole::Ternary),
            trace.as_deref_mut(),
        )?;
        let ternary = classify(&t, &w.ternary_head)?;
        let refined = fuse_ternary(&binary, &ternary, &triplets.pair_assignment, T::lit(cfg.fusion.alpha))?;

        let regional = contextual_features(dets, &pairs.pairs, &w.context)?;
        let global = global_context(&features, &w.global_proj)?;
        let objects: Vec<usize> = pairs.pairs.iter().map(|&(_, j)| dets[j].category).collect();
        let prompts = encode_prompts(&objects, &w.prompt)?;
        let m2 = run_contextual_decoder(&prompts, &global, &regional, &w.contextual, cfg.heads, trace)?;
        let semantic = semantic_logits(&m2, &w.semantic_head)?;
        let fused = fuse_semantic(&refined, &semantic, T::lit(cfg.fusion.beta))?;

        Ok(SceneLogits {
            pairs,
            triplets,
            binary,
            ternary,
            refined,
            semantic,
            fused,
        })
    }

    pub fn infer_scene(&self, scene: &Scene<T>, bank: &KnowledgeBank) -> Result<Vec<ScoredInteraction<T>>> {
        let logits = self.forward(scene, bank)?;
        final_scores(
            &logits.fused,
            &logits.pairs.pairs,
            &scene.detections,
            T::lit(self.config.fusion.lambda),
        )
    }

    /// Focal loss of one scene's fused logits against labels in canonical
    /// pair order.
    pub fn loss_on_scene(&self, scene: &Scene<T>, bank: &KnowledgeBank, labels: &LabelMatrix) -> Result<SceneLoss<T>> {
        self.loss_on_batch(&[(scene, labels)], bank)
    }

    /// Loss over several scenes, normalized by the total positive count.
    pub fn loss_on_batch(&self, batch: &[(&Scene<T>, &LabelMatrix)], bank: &KnowledgeBank) -> Result<SceneLoss<T>> {
        let c = self.categories.num_actions();
        let focal = &self.config.focal;
        let mut parts = Vec::with_capacity(batch.len());
        for (k, (scene, l)) in batch.iter().enumerate() {
            let f = self.forward(scene, bank)?.fused;
            if (l.rows(), l.cols()) != (f.rows(), c) {
                return Err(Error::shape(
                    "pipeline",
                    "loss_on_scene",
                    format!(
                        "scene {k}: labels [{}x{}] vs logits [{}x{c}]",
                        l.rows(),
                        l.cols(),
                        f.rows()
                    ),
                ));
            }
            parts.push(focal_sums(&f, l, T::lit(focal.gamma), T::lit(focal.alpha))?);
        }
        let out = normalize_focal(&parts, c)?;
        Ok(SceneLoss {
            loss: out.loss,
            total: out.total,
            positives: out.positives,
            grad_semantic: out.grad.scale(T::lit(self.config.fusion.beta)),
            grad_fused: out.grad,
        })
    }

    pub fn metadata(&self) -> PredictionMetadata {
        let f = &self.config.fusion;
        PredictionMetadata {
            alpha: f.alpha,
            beta: f.beta,
            lambda: f.lambda,
            gamma: self.config.focal.gamma,
            focal_alpha: self.config.focal.alpha,
            weights_sha256: self.weights_sha256.clone(),
            engine_version: ENGINE_VERSION.to_string(),
            layout_version: LAYOUT_VERSION,
            num_actions: self.categories.num_actions(),
        }
    }

    /// Prediction file for scored scenes, images in the given order.
    pub fn prediction_file(&self, results: &[(String, Vec<ScoredInteraction<T>>)]) -> PredictionFile {
        let f32s = |b: crate::geometry::BBox<T>| b.cast::<f32>().to_array();
        PredictionFile {
            metadata: self.metadata(),
            images: results
                .iter()
                .map(|(id, scored)| ImagePredictions {
                    image_id: id.clone(),
                    interactions: scored
                        .iter()
                        .map(|s| PredictedInteraction {
                            human_box: f32s(s.human_box),
                            object_box: f32s(s.object_box),
                            object_category: s.object_category,
                            action_scores: s.scores.iter().map(|v| v.to_f32_lossy()).collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

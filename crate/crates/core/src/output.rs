//! Prediction and ground-truth files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io_util::{parse_json_file, to_json_string, write_json_file};

/// Effective hyperparameters and provenance recorded with every prediction
/// file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionMetadata {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub focal_alpha: f64,
    pub weights_sha256: String,
    pub engine_version: String,
    pub layout_version: u32,
    pub num_actions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictedInteraction {
    pub human_box: [f32; 4],
    pub object_box: [f32; 4],
    pub object_category: usize,
    pub action_scores: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagePredictions {
    pub image_id: String,
    pub interactions: Vec<PredictedInteraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub metadata: PredictionMetadata,
    pub images: Vec<ImagePredictions>,
}

impl PredictionFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        parse_json_file(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_file(path.as_ref(), self)
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }
}

/// One annotated `<human, action, object>` instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthTriplet {
    pub human_box: [f32; 4],
    pub object_box: [f32; 4],
    pub object_category: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageGroundTruth {
    pub image_id: String,
    pub hois: Vec<GroundTruthTriplet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub num_actions: usize,
    pub images: Vec<ImageGroundTruth>,
}

impl GroundTruthFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        parse_json_file(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_file(path.as_ref(), self)
    }

    /// Ground truth equal to `preds` with every action scoring above
    /// `threshold` turned into an annotation.
    pub fn from_predictions(preds: &PredictionFile, threshold: f32) -> Self {
        GroundTruthFile {
            num_actions: preds.metadata.num_actions,
            images: preds
                .images
                .iter()
                .map(|im| ImageGroundTruth {
                    image_id: im.image_id.clone(),
                    hois: im
                        .interactions
                        .iter()
                        .flat_map(|p| {
                            p.action_scores
                                .iter()
                                .enumerate()
                                .filter(|(_, &s)| s > threshold)
                                .map(|(a, _)| GroundTruthTriplet {
                                    human_box: p.human_box,
                                    object_box: p.object_box,
                                    object_category: p.object_category,
                                    action: a,
                                })
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

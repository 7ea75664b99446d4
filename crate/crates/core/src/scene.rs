//! Scenes, detections and the affordance knowledge bank, with their
//! structured-text file formats.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::categories::CategoryTable;
use crate::container::{read_tensor_container, write_tensor_container};
use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageSize};
use crate::io_util::{parse_json_file, parse_json_str, write_json_file};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One detected instance: box, confidence, category and unary feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub bbox: BBox<T>,
    pub score: T,
    pub category: usize,
    pub feature: Vec<T>,
}

impl<T: Scalar> Detection<T> {
    pub fn cast<U: Scalar>(&self) -> Detection<U> {
        Detection {
            bbox: self.bbox.cast(),
            score: U::from_f64_lossy(self.score.to_f64_lossy()),
            category: self.category,
            feature: self
                .feature
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

/// Image feature grid and its positional embedding, both `[H' x W' x D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneContext<T> {
    pub spatial: Tensor<T>,
    pub positions: Tensor<T>,
}

impl<T: Scalar> SceneContext<T> {
    pub fn new(spatial: Tensor<T>, positions: Tensor<T>) -> Result<Self> {
        if spatial.ndim() != 3 {
            return Err(Error::validation(
                "scene-model",
                "context.spatial",
                format!("expected [H x W x D], got dims {:?}", spatial.dims()),
            ));
        }
        if spatial.dims() != positions.dims() {
            return Err(Error::validation(
                "scene-model",
                "context.positions",
                format!("dims {:?} differ from spatial {:?}", positions.dims(), spatial.dims()),
            ));
        }
        Ok(SceneContext { spatial, positions })
    }

    pub fn width(&self) -> usize {
        self.spatial.dims()[2]
    }

    pub fn cells(&self) -> usize {
        self.spatial.dims()[0] * self.spatial.dims()[1]
    }

    /// `(V_e, S)` flattened to `[H'W' x D]` in row-major cell order.
    pub fn flattened(&self) -> (Tensor<T>, Tensor<T>) {
        let dims = vec![self.cells(), self.width()];
        (
            self.spatial.clone().reshape(dims.clone()).expect("same element count"),
            self.positions.clone().reshape(dims).expect("same element count"),
        )
    }

    pub fn cast<U: Scalar>(&self) -> SceneContext<U> {
        SceneContext {
            spatial: self.spatial.cast(),
            positions: self.positions.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T> {
    pub image_id: String,
    pub size: ImageSize,
    pub detections: Vec<Detection<T>>,
    pub context: SceneContext<T>,
}

impl<T: Scalar> Scene<T> {
    pub fn cast<U: Scalar>(&self) -> Scene<U> {
        Scene {
            image_id: self.image_id.clone(),
            size: self.size,
            detections: self.detections.iter().map(Detection::cast).collect(),
            context: self.context.cast(),
        }
    }

    pub fn boxes(&self) -> Vec<BBox<T>> {
        self.detections.iter().map(|d| d.bbox).collect()
    }

    /// Checks the scene against engine widths and the category table.
    pub fn validate_against(&self, categories: &CategoryTable, feature_dim: usize, model_dim: usize) -> Result<()> {
        self.size.validate()?;
        for (i, d) in self.detections.iter().enumerate() {
            validate_detection(d, i, Some(categories.num_objects()), Some(feature_dim))?;
        }
        if self.context.width() != model_dim {
            return Err(Error::validation(
                "scene-model",
                "context.spatial",
                format!(
                    "feature width {} differs from model width {model_dim}",
                    self.context.width()
                ),
            ));
        }
        if self.context.cells() == 0 {
            return Err(Error::validation(
                "scene-model",
                "context.spatial",
                "empty feature grid",
            ));
        }
        Ok(())
    }

    /// Same scene with detections reordered so that new index `k` holds old
    /// detection `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut s = self.clone();
        s.detections = order.iter().map(|&i| self.detections[i].clone()).collect();
        s
    }
}

fn validate_detection<T: Scalar>(
    d: &Detection<T>,
    i: usize,
    num_objects: Option<usize>,
    feature_dim: Option<usize>,
) -> Result<()> {
    d.bbox.validate().map_err(|e| match e {
        Error::Validation { reason, .. } => Error::validation("scene-model", format!("detections[{i}].box"), reason),
        other => other,
    })?;
    if !(d.score >= T::zero() && d.score <= T::one()) {
        return Err(Error::validation(
            "scene-model",
            format!("detections[{i}].score"),
            format!("{} outside [0, 1]", d.score),
        ));
    }
    if let Some(n) = num_objects {
        if d.category >= n {
            return Err(Error::validation(
                "scene-model",
                format!("detections[{i}].category"),
                format!("category {} not in [0, {n})", d.category),
            ));
        }
    }
    if let Some(c) = feature_dim {
        if d.feature.len() != c {
            return Err(Error::validation(
                "scene-model",
                format!("detections[{i}].feature"),
                format!("length {} differs from feature width {c}", d.feature.len()),
            ));
        }
    }
    if let Some(k) = d.feature.iter().position(|v| !v.is_finite()) {
        return Err(Error::validation(
            "scene-model",
            format!("detections[{i}].feature[{k}]"),
            "non-finite value",
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    #[serde(rename = "box")]
    bbox: [f32; 4],
    score: f32,
    category: usize,
    feature: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextRef {
    container: String,
    spatial: String,
    positions: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    image_id: String,
    width: u32,
    height: u32,
    detections: Vec<DetectionRecord>,
    context: ContextRef,
}

pub const SPATIAL_TENSOR: &str = "spatial";
pub const POSITIONS_TENSOR: &str = "positions";

/// Loads a scene file and the context tensors it references.
///
/// Checks every invariant that does not need the engine config: box order,
/// score range, equal feature widths, matching context dims.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene<f32>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(path, &text)
}

fn parse_scene(path: &Path, text: &str) -> Result<Scene<f32>> {
    let file: SceneFile = parse_json_str(path, text)?;
    let size = ImageSize {
        width: file.width,
        height: file.height,
    };
    size.validate().map_err(|_| {
        Error::validation(
            "scene-model",
            "width/height",
            format!("image size {}x{} must be positive", file.width, file.height),
        )
    })?;

    let feature_dim = file.detections.first().map(|d| d.feature.len());
    let mut detections = Vec::with_capacity(file.detections.len());
    for (i, r) in file.detections.into_iter().enumerate() {
        let d = Detection {
            bbox: BBox {
                x1: r.bbox[0],
                y1: r.bbox[1],
                x2: r.bbox[2],
                y2: r.bbox[3],
            },
            score: r.score,
            category: r.category,
            feature: r.feature,
        };
        validate_detection(&d, i, None, feature_dim)?;
        detections.push(d);
    }

    let container_path = resolve(path, &file.context.container);
    let tensors = read_tensor_container(&container_path)?;
    let find = |name: &str, field: &str| {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| {
                Error::validation(
                    "scene-model",
                    field,
                    format!("tensor `{name}` not found in {}", container_path.display()),
                )
            })
    };
    let spatial = find(&file.context.spatial, "context.spatial")?;
    let positions = find(&file.context.positions, "context.positions")?;
    let context = SceneContext::new(spatial, positions)?;

    Ok(Scene {
        image_id: file.image_id,
        size,
        detections,
        context,
    })
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    base.parent().map(|d| d.join(p)).unwrap_or_else(|| p.to_path_buf())
}

/// Writes `<stem>.json` semantics to `path` plus a sibling `<stem>.crln`
/// holding the context tensors.
pub fn write_scene(path: impl AsRef<Path>, scene: &Scene<f32>) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::validation("scene-model", "path", "scene path needs a UTF-8 file stem"))?;
    let container_name = format!("{stem}.crln");
    let container_path = path.with_file_name(&container_name);
    write_tensor_container(
        &container_path,
        &[
            (SPATIAL_TENSOR.to_string(), scene.context.spatial.clone()),
            (POSITIONS_TENSOR.to_string(), scene.context.positions.clone()),
        ],
    )?;
    let file = SceneFile {
        image_id: scene.image_id.clone(),
        width: scene.size.width,
        height: scene.size.height,
        detections: scene
            .detections
            .iter()
            .map(|d| DetectionRecord {
                bbox: d.bbox.to_array(),
                score: d.score,
                category: d.category,
                feature: d.feature.clone(),
            })
            .collect(),
        context: ContextRef {
            container: container_name,
            spatial: SPATIAL_TENSOR.into(),
            positions: POSITIONS_TENSOR.into(),
        },
    };
    write_json_file(path, &file)
}

/// Ordered `(object, tool)` category pairs that license ternary tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBank {
    pairs: BTreeSet<(usize, usize)>,
}

impl KnowledgeBank {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>, num_objects: usize) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (k, (o, t)) in pairs.into_iter().enumerate() {
            if o == t {
                return Err(Error::validation(
                    "scene-model",
                    format!("bank[{k}]"),
                    format!("object and tool are the same category {o}"),
                ));
            }
            if o >= num_objects || t >= num_objects {
                return Err(Error::validation(
                    "scene-model",
                    format!("bank[{k}]"),
                    format!("category out of range [0, {num_objects})"),
                ));
            }
            set.insert((o, t));
        }
        Ok(KnowledgeBank { pairs: set })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn contains(&self, object: usize, tool: usize) -> bool {
        self.pairs.contains(&(object, tool))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum NameOrId {
    Id(usize),
    Name(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankRecord {
    object: NameOrId,
    tool: NameOrId,
}

fn resolve_category(v: &NameOrId, cats: &CategoryTable, field: String) -> Result<usize> {
    match v {
        NameOrId::Id(i) if *i < cats.num_objects() => Ok(*i),
        NameOrId::Id(i) => Err(Error::validation(
            "scene-model",
            field,
            format!("category id {i} out of range"),
        )),
        NameOrId::Name(n) => cats
            .object_id(n)
            .ok_or_else(|| Error::validation("scene-model", field, format!("unknown category `{n}`"))),
    }
}

pub fn load_bank(path: impl AsRef<Path>, categories: &CategoryTable) -> Result<KnowledgeBank> {
    let records: Vec<BankRecord> = parse_json_file(path.as_ref())?;
    let mut pairs = Vec::with_capacity(records.len());
    for (k, r) in records.iter().enumerate() {
        let o = resolve_category(&r.object, categories, format!("bank[{k}].object"))?;
        let t = resolve_category(&r.tool, categories, format!("bank[{k}].tool"))?;
        pairs.push((o, t));
    }
    KnowledgeBank::new(pairs, categories.num_objects())
}

/// Writes the bank with category names.
pub fn write_bank(path: impl AsRef<Path>, bank: &KnowledgeBank, categories: &CategoryTable) -> Result<()> {
    let records: Vec<BankRecord> = bank
        .pairs()
        .map(|(o, t)| BankRecord {
            object: NameOrId::Name(categories.object_name(o).unwrap_or_default().to_string()),
            tool: NameOrId::Name(categories.object_name(t).unwrap_or_default().to_string()),
        })
        .collect();
    write_json_file(path.as_ref(), &records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn tiny_scene(n: usize) -> Scene<f32> {
        let detections = (0..n)
            .map(|i| Detection {
                bbox: BBox::new(i as f32, 0.0, i as f32 + 10.0, 20.0).unwrap(),
                score: 0.5,
                category: i % 2,
                feature: vec![0.25, -1.0, i as f32],
            })
            .collect();
        Scene {
            image_id: "img".into(),
            size: ImageSize::new(100, 80).unwrap(),
            detections,
            context: SceneContext::new(Tensor::filled(vec![2, 2, 4], 0.5), Tensor::zeros(vec![2, 2, 4])).unwrap(),
        }
    }

    #[test]
    fn empty_detections_round_trip() {
        let d = dir();
        let p = d.path().join("s.json");
        write_scene(&p, &tiny_scene(0)).unwrap();
        let s = load_scene(&p).unwrap();
        assert!(s.detections.is_empty());
        assert_eq!(s.context.cells(), 4);
    }

    #[test]
    fn scene_round_trip_is_bit_identical() {
        let d = dir();
        let p = d.path().join("s.json");
        let scene = tiny_scene(3);
        write_scene(&p, &scene).unwrap();
        assert_eq!(load_scene(&p).unwrap(), scene);
    }

    #[test]
    fn parse_error_reports_line() {
        let d = dir();
        let p = d.path().join("bad.json");
        std::fs::write(&p, "{\n  \"image_id\": \"x\",\n  \"width\": oops\n}").unwrap();
        match load_scene(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_score_names_field() {
        let d = dir();
        let p = d.path().join("s.json");
        let mut scene = tiny_scene(2);
        scene.detections[1].score = 1.5;
        write_scene(&p, &scene).unwrap();
        match load_scene(&p).unwrap_err() {
            Error::Validation { field, .. } => assert_eq!(field, "detections[1].score"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_features_rejected() {
        let d = dir();
        let p = d.path().join("s.json");
        let mut scene = tiny_scene(2);
        scene.detections[1].feature.push(1.0);
        write_scene(&p, &scene).unwrap();
        assert!(matches!(load_scene(&p).unwrap_err(), Error::Validation { .. }));
    }

    #[test]
    fn bank_rejects_self_pair() {
        let cats = CategoryTable::coco_subset(45, 4).unwrap();
        let d = dir();
        let p = d.path().join("bank.json");
        std::fs::write(&p, r#"[{"object": "cup", "tool": "cup"}]"#).unwrap();
        let err = load_bank(&p, &cats).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
    }

    #[test]
    fn bank_accepts_names_and_ids() {
        let cats = CategoryTable::coco_subset(45, 4).unwrap();
        let d = dir();
        let p = d.path().join("bank.json");
        std::fs::write(&p, r#"[{"object": "cup", "tool": 39}, {"object": 39, "tool": "cup"}]"#).unwrap();
        let bank = load_bank(&p, &cats).unwrap();
        assert!(bank.contains(41, 39));
        assert!(bank.contains(39, 41));
        let q = d.path().join("bank2.json");
        write_bank(&q, &bank, &cats).unwrap();
        assert_eq!(load_bank(&q, &cats).unwrap(), bank);
        std::fs::write(&p, r#"[{"object": "spaceship", "tool": 39}]"#).unwrap();
        assert!(load_bank(&p, &cats).is_err());
    }
}

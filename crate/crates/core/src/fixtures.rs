//! Deterministic synthetic fixtures: config, vocabulary, bank, weights,
//! scenes and ground truth from a seed and a size spec.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::categories::CategoryTable;
use crate::config::{EngineConfig, ModelDims};
use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageSize};
use crate::io_util::{parse_json_file, write_json_file};
use crate::output::{GroundTruthFile, GroundTruthTriplet, ImageGroundTruth};
use crate::scene::{write_bank, write_scene, Detection, KnowledgeBank, Scene, SceneContext};
use crate::tensor::Tensor;
use crate::tokens::enumerate_pairs;
use crate::weights::{weight_layout, Init, WeightBundle};

/// Sizes of a generated fixture set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub num_scenes: usize,
    pub detections_per_scene: usize,
    pub humans_per_scene: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub grid_height: usize,
    pub grid_width: usize,
    pub dims: ModelDims,
    pub heads: usize,
    pub act_length: usize,
    pub binary_blocks: usize,
    pub ternary_blocks: usize,
    pub num_objects: usize,
    pub num_actions: usize,
    pub bank_pairs: usize,
    /// Probability that a human-object pair carries one annotated action.
    pub annotation_rate: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            num_scenes: 4,
            detections_per_scene: 6,
            humans_per_scene: 2,
            image_width: 640,
            image_height: 480,
            grid_height: 6,
            grid_width: 8,
            dims: ModelDims::default(),
            heads: 2,
            act_length: 4,
            binary_blocks: 2,
            ternary_blocks: 2,
            num_objects: 20,
            num_actions: 10,
            bank_pairs: 8,
            annotation_rate: 0.35,
        }
    }
}

impl FixtureSpec {
    /// A compact spec for fast tests.
    pub fn small() -> Self {
        FixtureSpec {
            num_scenes: 2,
            detections_per_scene: 5,
            humans_per_scene: 2,
            image_width: 320,
            image_height: 240,
            grid_height: 3,
            grid_width: 4,
            dims: ModelDims {
                feature: 8,
                model: 8,
                context: 8,
                text: 4,
            },
            heads: 2,
            act_length: 2,
            binary_blocks: 1,
            ternary_blocks: 1,
            num_objects: 6,
            num_actions: 4,
            bank_pairs: 6,
            annotation_rate: 0.35,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: FixtureSpec = parse_json_file(path.as_ref())?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::config("fixtures", d));
        if self.humans_per_scene > self.detections_per_scene {
            return bad(format!(
                "humans_per_scene {} exceeds detections_per_scene {}",
                self.humans_per_scene, self.detections_per_scene
            ));
        }
        if self.grid_height == 0 || self.grid_width == 0 {
            return bad("feature grid must be non-empty".into());
        }
        if !(0.0..=1.0).contains(&self.annotation_rate) {
            return bad(format!(
                "annotation_rate must be in [0, 1], got {}",
                self.annotation_rate
            ));
        }
        ImageSize::new(self.image_width, self.image_height)?;
        self.config().validate()
    }

    /// Engine config matching this spec with default fusion settings.
    pub fn config(&self) -> EngineConfig {
        EngineConfig {
            dims: self.dims,
            heads: self.heads,
            binary_blocks: self.binary_blocks,
            ternary_blocks: self.ternary_blocks,
            act_length: self.act_length,
            ..EngineConfig::default()
        }
    }
}

/// Everything a fixture set contains, in memory.
#[derive(Debug, Clone)]
pub struct Fixtures {
    pub config: EngineConfig,
    pub categories: CategoryTable,
    pub bank: KnowledgeBank,
    pub weights: WeightBundle,
    pub scenes: Vec<Scene<f32>>,
    pub ground_truth: GroundTruthFile,
}

/// Paths written by [`gen_fixtures`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixturePaths {
    pub config: PathBuf,
    pub categories: PathBuf,
    pub bank: PathBuf,
    pub weights: PathBuf,
    pub scenes: Vec<PathBuf>,
    pub ground_truth: PathBuf,
}

/// Independent random stream per purpose, so adding a tensor or a scene
/// never shifts the values drawn for another.
pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a(label.as_bytes()));
        Stream(rng)
    }

    /// Uniform in `[0, 1)` with 24 random bits, exact in `f32`.
    pub fn unit(&mut self) -> f32 {
        (self.0.next_u32() >> 8) as f32 / (1u32 << 24) as f32
    }

    /// Uniform in `[-1, 1)`.
    pub fn signed(&mut self) -> f32 {
        2.0 * self.unit() - 1.0
    }

    /// Uniform in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            items.swap(i, self.below(i + 1));
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn weights_for(seed: u64, config: &EngineConfig, categories: &CategoryTable) -> Result<WeightBundle> {
    let mut tensors = BTreeMap::new();
    for spec in weight_layout(config, categories.num_objects(), categories.num_actions()) {
        let n: usize = spec.dims.iter().product();
        let mut s = Stream::new(seed, &format!("weight:{}", spec.name));
        let data: Vec<f32> = match spec.init {
            Init::Scaled { fan_in } => {
                let k = 1.0 / (fan_in.max(1) as f32).sqrt();
                (0..n).map(|_| k * s.signed()).collect()
            }
            Init::Unit => (0..n).map(|_| s.signed()).collect(),
            Init::Ones => vec![1.0; n],
            Init::Zeros => vec![0.0; n],
        };
        tensors.insert(spec.name, Tensor::new(spec.dims, data)?);
    }
    WeightBundle::from_tensors(tensors)
}

fn bank_for(seed: u64, spec: &FixtureSpec, categories: &CategoryTable) -> Result<KnowledgeBank> {
    let human = categories.human();
    let others: Vec<usize> = (0..categories.num_objects()).filter(|&c| c != human).collect();
    let mut all: Vec<(usize, usize)> = others
        .iter()
        .flat_map(|&o| others.iter().filter(move |&&t| t != o).map(move |&t| (o, t)))
        .collect();
    Stream::new(seed, "bank").shuffle(&mut all);
    all.truncate(spec.bank_pairs);
    KnowledgeBank::new(all, categories.num_objects())
}

fn random_box(s: &mut Stream, size: ImageSize) -> Result<BBox<f32>> {
    let (w_img, h_img) = (size.width as f32, size.height as f32);
    let w = w_img * (0.1 + 0.3 * s.unit());
    let h = h_img * (0.1 + 0.3 * s.unit());
    let x1 = (w_img - w) * s.unit();
    let y1 = (h_img - h) * s.unit();
    BBox::new(x1, y1, x1 + w, y1 + h)
}

fn scene_for(
    seed: u64,
    index: usize,
    spec: &FixtureSpec,
    categories: &CategoryTable,
    bank: &KnowledgeBank,
) -> Result<Scene<f32>> {
    let mut s = Stream::new(seed, &format!("scene:{index}"));
    let human = categories.human();
    let size = ImageSize::new(spec.image_width, spec.image_height)?;
    let bank_cats: Vec<usize> = bank.pairs().flat_map(|(o, t)| [o, t]).collect();
    let others: Vec<usize> = (0..categories.num_objects()).filter(|&c| c != human).collect();

    let mut cats = vec![human; spec.humans_per_scene];
    for _ in spec.humans_per_scene..spec.detections_per_scene {
        let c = if !bank_cats.is_empty() && s.unit() < 0.5 {
            bank_cats[s.below(bank_cats.len())]
        } else {
            others[s.below(others.len())]
        };
        cats.push(c);
    }
    s.shuffle(&mut cats);

    let feature = spec.dims.feature;
    let mut detections = Vec::with_capacity(cats.len());
    for category in cats {
        detections.push(Detection {
            bbox: random_box(&mut s, size)?,
            score: 0.3 + 0.7 * s.unit(),
            category,
            feature: (0..feature).map(|_| s.signed()).collect(),
        });
    }
    let dims = vec![spec.grid_height, spec.grid_width, spec.dims.model];
    let n: usize = dims.iter().product();
    let spatial = Tensor::new(dims.clone(), (0..n).map(|_| s.signed()).collect())?;
    let positions = Tensor::new(dims, (0..n).map(|_| 0.1 * s.signed()).collect())?;
    Ok(Scene {
        image_id: format!("scene_{index:04}"),
        size,
        detections,
        context: SceneContext::new(spatial, positions)?,
    })
}

fn ground_truth_for(
    seed: u64,
    spec: &FixtureSpec,
    scenes: &[Scene<f32>],
    categories: &CategoryTable,
) -> GroundTruthFile {
    let mut s = Stream::new(seed, "ground_truth");
    let images = scenes
        .iter()
        .map(|scene| {
            let cats: Vec<usize> = scene.detections.iter().map(|d| d.category).collect();
            let mut hois = Vec::new();
            for (i, j) in enumerate_pairs(&cats, categories.human()) {
                if (s.unit() as f64) < spec.annotation_rate {
                    hois.push(GroundTruthTriplet {
                        human_box: scene.detections[i].bbox.to_array(),
                        object_box: scene.detections[j].bbox.to_array(),
                        object_category: cats[j],
                        action: s.below(categories.num_actions()),
                    });
                }
            }
            ImageGroundTruth {
                image_id: scene.image_id.clone(),
                hois,
            }
        })
        .collect();
    GroundTruthFile {
        num_actions: categories.num_actions(),
        images,
    }
}

/// Builds a fixture set in memory.
pub fn generate(seed: u64, spec: &FixtureSpec) -> Result<Fixtures> {
    spec.validate()?;
    let config = spec.config();
    let categories = CategoryTable::coco_subset(spec.num_objects, spec.num_actions)?;
    let bank = bank_for(seed, spec, &categories)?;
    let weights = weights_for(seed, &config, &categories)?;
    let scenes = (0..spec.num_scenes)
        .map(|k| scene_for(seed, k, spec, &categories, &bank))
        .collect::<Result<Vec<_>>>()?;
    let ground_truth = ground_truth_for(seed, spec, &scenes, &categories);
    Ok(Fixtures {
        config,
        categories,
        bank,
        weights,
        scenes,
        ground_truth,
    })
}

impl Fixtures {
    /// Writes the set under `out_dir`:
    /// `config.json`, `categories.json`, `bank.json`, `weights.crln`,
    /// `gt.json` and `scenes/scene_XXXX.{json,crln}`.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<FixturePaths> {
        let dir = out_dir.as_ref();
        let scene_dir = dir.join("scenes");
        std::fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
        let paths = FixturePaths {
            config: dir.join("config.json"),
            categories: dir.join("categories.json"),
            bank: dir.join("bank.json"),
            weights: dir.join("weights.crln"),
            scenes: self
                .scenes
                .iter()
                .map(|s| scene_dir.join(format!("{}.json", s.image_id)))
                .collect(),
            ground_truth: dir.join("gt.json"),
        };
        let mut config = self.config.clone();
        config.categories = Some(PathBuf::from("categories.json"));
        write_json_file(&paths.config, &config)?;
        self.categories.save(&paths.categories)?;
        write_bank(&paths.bank, &self.bank, &self.categories)?;
        self.weights.save(&paths.weights)?;
        for (scene, path) in self.scenes.iter().zip(&paths.scenes) {
            write_scene(path, scene)?;
        }
        self.ground_truth.save(&paths.ground_truth)?;
        Ok(paths)
    }
}

/// Generates and writes a fixture set.
pub fn gen_fixtures(seed: u64, spec: &FixtureSpec, out_dir: impl AsRef<Path>) -> Result<FixturePaths> {
    generate(seed, spec)?.write(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate(7, &FixtureSpec::small()).unwrap();
        let b = generate(7, &FixtureSpec::small()).unwrap();
        let c = generate(8, &FixtureSpec::small()).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.scenes, b.scenes);
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_ne!(a.weights.sha256, c.weights.sha256);
    }

    #[test]
    fn three_detections_one_human_gives_two_pairs() {
        let spec = FixtureSpec {
            detections_per_scene: 3,
            humans_per_scene: 1,
            ..FixtureSpec::small()
        };
        let fx = generate(1, &spec).unwrap();
        for scene in &fx.scenes {
            let cats: Vec<usize> = scene.detections.iter().map(|d| d.category).collect();
            assert_eq!(enumerate_pairs(&cats, fx.categories.human()).len(), 2);
        }
    }

    #[test]
    fn unit_draws_are_in_range() {
        let mut s = Stream::new(0, "x");
        for _ in 0..1000 {
            let u = s.unit();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn rejects_more_humans_than_detections() {
        let spec = FixtureSpec {
            humans_per_scene: 9,
            ..FixtureSpec::small()
        };
        assert!(generate(0, &spec).is_err());
    }
}

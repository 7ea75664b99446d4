//! Named weight layout and its typed view.
//!
//! [`weight_layout`] is the single source of truth for tensor names and dims;
//! both the fixture generator and [`ModelWeights::from_bundle`] are driven by
//! it. The layout version also pins the spatial feature order of
//! `geometry::pairwise_spatial`, so a container written for a different
//! encoding is rejected rather than silently misread.

use std::collections::BTreeMap;
use std::path::Path;

use crate::categories::CategoryTable;
use crate::config::EngineConfig;
use crate::container::{decode, encode, NamedTensor};
use crate::error::{Error, Result};
use crate::geometry::{PAIR_FEATURES, TRIPLET_FEATURES};
use crate::io_util::sha256_hex;
use crate::kernels::{LayerNorm, Linear, Mlp};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYOUT_VERSION: u32 = 1;
pub const LAYOUT_TENSOR: &str = "meta.layout_version";
/// Optional `[num_objects x C']` table of externally encoded prompt features.
pub const PROMPT_OVERRIDE: &str = "prompt.encoded";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Scaled {
        fan_in: usize,
    },
    /// Uniform in `[-1, 1]` (embedding tables).
    Unit,
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderRole {
    Binary,
    Ternary,
    Contextual,
}

impl DecoderRole {
    pub fn prefix(self) -> &'static str {
        match self {
            DecoderRole::Binary => "binary",
            DecoderRole::Ternary => "ternary",
            DecoderRole::Contextual => "contextual",
        }
    }
}

struct LayoutBuilder(Vec<WeightSpec>);

impl LayoutBuilder {
    fn push(&mut self, name: String, dims: Vec<usize>, init: Init) {
        self.0.push(WeightSpec { name, dims, init });
    }

    fn linear(&mut self, name: &str, input: usize, output: usize) {
        self.push(
            format!("{name}.weight"),
            vec![input, output],
            Init::Scaled { fan_in: input },
        );
        self.push(format!("{name}.bias"), vec![output], Init::Scaled { fan_in: input });
    }

    fn mlp(&mut self, name: &str, input: usize, output: usize) {
        self.linear(&format!("{name}.l0"), input, 2 * output);
        self.linear(&format!("{name}.l1"), 2 * output, output);
    }

    fn norm(&mut self, name: &str, width: usize) {
        self.push(format!("{name}.gain"), vec![width], Init::Ones);
        self.push(format!("{name}.bias"), vec![width], Init::Zeros);
    }

    fn attention(&mut self, name: &str, width: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{name}.{p}"), width, width);
        }
        self.norm(&format!("{name}.norm"), width);
    }

    fn decoder(&mut self, role: DecoderRole, width: usize, blocks: usize) {
        for b in 0..blocks {
            let base = format!("{}.block{b}", role.prefix());
            self.attention(&format!("{base}.self"), width);
            self.attention(&format!("{base}.cross"), width);
            self.mlp(&format!("{base}.ffn"), width, width);
            self.norm(&format!("{base}.norm"), width);
        }
    }
}

/// Every required tensor for `cfg` with the given vocabulary sizes.
pub fn weight_layout(cfg: &EngineConfig, num_objects: usize, num_actions: usize) -> Vec<WeightSpec> {
    let d = cfg.dims;
    let mut l = LayoutBuilder(Vec::new());
    l.push("text.embed".into(), vec![num_objects, d.text], Init::Unit);
    l.mlp("unary.mlp", d.feature + d.text, d.model);
    l.mlp("pair.mlp", 2 * d.model, d.model);
    l.mlp("triplet.mlp", 3 * d.model, d.model);
    l.mlp("binary_pos.mlp", PAIR_FEATURES, d.model);
    l.mlp("ternary_pos.mlp", TRIPLET_FEATURES, d.model);
    l.mlp("context.mlp", 2 * d.feature, d.context);
    l.linear("global.proj", d.model, d.context);
    l.push("prompt.prefix".into(), vec![cfg.prefix.len(), d.text], Init::Unit);
    l.push("prompt.act".into(), vec![cfg.act_length, d.text], Init::Unit);
    l.push("prompt.person".into(), vec![d.text], Init::Unit);
    l.push("prompt.object_words".into(), vec![num_objects, d.text], Init::Unit);
    l.linear("prompt.proj", 4 * d.text, d.context);
    l.decoder(DecoderRole::Binary, d.model, cfg.binary_blocks);
    l.decoder(DecoderRole::Ternary, d.model, cfg.ternary_blocks);
    l.decoder(DecoderRole::Contextual, d.context, cfg.contextual_blocks);
    l.linear("binary.head", d.model, num_actions);
    l.linear("ternary.head", d.model, num_actions);
    l.linear("semantic.head", d.context, num_actions);
    l.0
}

/// Raw named tensors from a weights container, plus its layout tag and the
/// SHA-256 of the container bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub layout_version: u32,
    pub tensors: BTreeMap<String, Tensor<f32>>,
    pub sha256: String,
}

impl WeightBundle {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let entries = decode(bytes)?;
        let mut tensors: BTreeMap<String, Tensor<f32>> = entries.into_iter().collect();
        let tag = tensors
            .remove(LAYOUT_TENSOR)
            .ok_or_else(|| Error::validation("scene-model", LAYOUT_TENSOR, "missing layout-version tag"))?;
        let layout_version = match tag.data() {
            [v] if *v >= 0.0 && v.fract() == 0.0 => *v as u32,
            _ => {
                return Err(Error::validation(
                    "scene-model",
                    LAYOUT_TENSOR,
                    "layout tag must be a single non-negative integer",
                ))
            }
        };
        if layout_version != LAYOUT_VERSION {
            return Err(Error::validation(
                "scene-model",
                LAYOUT_TENSOR,
                format!("layout version {layout_version}, engine expects {LAYOUT_VERSION}"),
            ));
        }
        Ok(WeightBundle {
            layout_version,
            tensors,
            sha256: sha256_hex(bytes),
        })
    }

    /// Container bytes with the layout tag first and the rest sorted by name.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries: Vec<NamedTensor> = vec![(
            LAYOUT_TENSOR.to_string(),
            Tensor::new(vec![1], vec![self.layout_version as f32])?,
        )];
        entries.extend(self.tensors.iter().map(|(k, v)| (k.clone(), v.clone())));
        encode(&entries)
    }

    pub fn from_tensors(tensors: BTreeMap<String, Tensor<f32>>) -> Result<Self> {
        let mut b = WeightBundle {
            layout_version: LAYOUT_VERSION,
            tensors,
            sha256: String::new(),
        };
        b.sha256 = sha256_hex(&b.to_bytes()?);
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    WeightBundle::from_bytes(&bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    pub fn width(&self) -> usize {
        self.query.in_width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBlockWeights<T> {
    pub self_attn: AttentionWeights<T>,
    pub cross_attn: AttentionWeights<T>,
    pub ffn: Mlp<T>,
    pub norm: LayerNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights<T> {
    pub blocks: Vec<DecoderBlockWeights<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptWeights<T> {
    /// `[P x E]` prefix word embeddings.
    pub prefix: Tensor<T>,
    /// `[A x E]` learnable [ACT] vectors.
    pub act: Tensor<T>,
    /// `[E]` embedding of "person".
    pub person: Tensor<T>,
    /// `[num_objects x E]` word embedding of each object name.
    pub object_words: Tensor<T>,
    /// `4E -> C'` projection.
    pub proj: Linear<T>,
    /// Externally encoded per-category prompt features; bypasses the
    /// built-in encoder when present.
    pub encoded: Option<Tensor<T>>,
}

/// Every learned tensor of the model in typed form.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub text_embed: Tensor<T>,
    pub unary: Mlp<T>,
    pub pair: Mlp<T>,
    pub triplet: Mlp<T>,
    pub binary_pos: Mlp<T>,
    pub ternary_pos: Mlp<T>,
    pub context: Mlp<T>,
    pub global_proj: Linear<T>,
    pub prompt: PromptWeights<T>,
    pub binary: DecoderWeights<T>,
    pub ternary: DecoderWeights<T>,
    pub contextual: DecoderWeights<T>,
    pub binary_head: Linear<T>,
    pub ternary_head: Linear<T>,
    pub semantic_head: Linear<T>,
}

struct Take<'a, T> {
    tensors: &'a BTreeMap<String, Tensor<f32>>,
    expected: BTreeMap<&'a str, &'a [usize]>,
    _t: std::marker::PhantomData<T>,
}

impl<'a, T: Scalar> Take<'a, T> {
    fn tensor(&self, name: &str) -> Result<Tensor<T>> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::validation("scene-model", name, "required weight tensor missing"))?;
        if let Some(dims) = self.expected.get(name) {
            if t.dims() != *dims {
                return Err(Error::validation(
                    "scene-model",
                    name,
                    format!("dims {:?}, expected {:?}", t.dims(), dims),
                ));
            }
        }
        Ok(t.cast())
    }

    fn linear(&self, name: &str) -> Result<Linear<T>> {
        Linear::new(
            self.tensor(&format!("{name}.weight"))?,
            self.tensor(&format!("{name}.bias"))?,
        )
    }

    fn mlp(&self, name: &str) -> Result<Mlp<T>> {
        Mlp::new(vec![
            self.linear(&format!("{name}.l0"))?,
            self.linear(&format!("{name}.l1"))?,
        ])
    }

    fn norm(&self, name: &str) -> Result<LayerNorm<T>> {
        Ok(LayerNorm {
            gain: self.tensor(&format!("{name}.gain"))?,
            bias: self.tensor(&format!("{name}.bias"))?,
        })
    }

    fn attention(&self, name: &str) -> Result<AttentionWeights<T>> {
        Ok(AttentionWeights {
            query: self.linear(&format!("{name}.q"))?,
            key: self.linear(&format!("{name}.k"))?,
            value: self.linear(&format!("{name}.v"))?,
            output: self.linear(&format!("{name}.o"))?,
            norm: self.norm(&format!("{name}.norm"))?,
        })
    }

    fn decoder(&self, role: DecoderRole, blocks: usize) -> Result<DecoderWeights<T>> {
        let blocks = (0..blocks)
            .map(|b| {
                let base = format!("{}.block{b}", role.prefix());
                Ok(DecoderBlockWeights {
                    self_attn: self.attention(&format!("{base}.self"))?,
                    cross_attn: self.attention(&format!("{base}.cross"))?,
                    ffn: self.mlp(&format!("{base}.ffn"))?,
                    norm: self.norm(&format!("{base}.norm"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DecoderWeights { blocks })
    }
}

impl<T: Scalar> ModelWeights<T> {
    /// Validates a bundle against the layout implied by `cfg` and
    /// `categories` and converts it to typed weights.
    pub fn from_bundle(bundle: &WeightBundle, cfg: &EngineConfig, categories: &CategoryTable) -> Result<Self> {
        if bundle.layout_version != LAYOUT_VERSION {
            return Err(Error::validation(
                "scene-model",
                LAYOUT_TENSOR,
                format!("layout version {} vs engine {LAYOUT_VERSION}", bundle.layout_version),
            ));
        }
        let layout = weight_layout(cfg, categories.num_objects(), categories.num_actions());
        let override_dims = [categories.num_objects(), cfg.dims.context];
        let mut expected: BTreeMap<&str, &[usize]> =
            layout.iter().map(|s| (s.name.as_str(), s.dims.as_slice())).collect();
        expected.insert(PROMPT_OVERRIDE, &override_dims);
        if let Some(extra) = bundle.tensors.keys().find(|k| !expected.contains_key(k.as_str())) {
            return Err(Error::validation(
                "scene-model",
                extra.clone(),
                "unexpected tensor for this layout/config",
            ));
        }
        let take = Take::<T> {
            tensors: &bundle.tensors,
            expected,
            _t: std::marker::PhantomData,
        };
        let encoded = if bundle.tensors.contains_key(PROMPT_OVERRIDE) {
            Some(take.tensor(PROMPT_OVERRIDE)?)
        } else {
            None
        };
        Ok(ModelWeights {
            text_embed: take.tensor("text.embed")?,
            unary: take.mlp("unary.mlp")?,
            pair: take.mlp("pair.mlp")?,
            triplet: take.mlp("triplet.mlp")?,
            binary_pos: take.mlp("binary_pos.mlp")?,
            ternary_pos: take.mlp("ternary_pos.mlp")?,
            context: take.mlp("context.mlp")?,
            global_proj: take.linear("global.proj")?,
            prompt: PromptWeights {
                prefix: take.tensor("prompt.prefix")?,
                act: take.tensor("prompt.act")?,
                person: take.tensor("prompt.person")?,
                object_words: take.tensor("prompt.object_words")?,
                proj: take.linear("prompt.proj")?,
                encoded,
            },
            binary: take.decoder(DecoderRole::Binary, cfg.binary_blocks)?,
            ternary: take.decoder(DecoderRole::Ternary, cfg.ternary_blocks)?,
            contextual: take.decoder(DecoderRole::Contextual, cfg.contextual_blocks)?,
            binary_head: take.linear("binary.head")?,
            ternary_head: take.linear("ternary.head")?,
            semantic_head: take.linear("semantic.head")?,
        })
    }
}

//! Attention layer and the decoder block shared by the binary, ternary and
//! contextual stacks.
//!
//! One attention layer computes
//!
//! ```text
//! Q = proj_q(content_q + pos_q)   K = proj_k(content_k + pos_k)   V = proj_v(value)
//! out = Norm(proj_o(concat_h softmax(Q_h K_h^T / sqrt(d_head)) V_h) + content_q)
//! ```
//!
//! The residual connects the query-side content stream. In cross-attention
//! the value has one row per image cell while the output has one row per
//! query, so a value-side residual is not shape-consistent.
//!
//! A block is self-attention, cross-attention into a memory, then
//! `Norm(a + ffn(a))`.

use crate::error::{Error, Result};
use crate::kernels::{matmul, softmax_rows, Linear};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::weights::{AttentionWeights, DecoderBlockWeights, DecoderRole, DecoderWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub role: DecoderRole,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::config(
                "relational-decoders",
                format!("{} decoder needs at least one block", self.role.prefix()),
            ));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::config(
                "relational-decoders",
                format!("width {} not divisible by {} heads", self.width, self.heads),
            ));
        }
        Ok(())
    }

    fn check_weights<T: Scalar>(&self, weights: &DecoderWeights<T>) -> Result<()> {
        self.validate()?;
        if weights.blocks.len() != self.blocks {
            return Err(Error::config(
                "relational-decoders",
                format!(
                    "{} decoder configured with {} blocks, weights have {}",
                    self.role.prefix(),
                    self.blocks,
                    weights.blocks.len()
                ),
            ));
        }
        if let Some(b) = weights.blocks.first() {
            if b.self_attn.width() != self.width {
                return Err(Error::shape(
                    "relational-decoders",
                    "decoder",
                    format!("weights width {} vs configured {}", b.self_attn.width(), self.width),
                ));
            }
        }
        Ok(())
    }
}

/// Attention probability matrices recorded during a forward pass, one
/// `[queries x keys]` matrix per head per attention layer, in execution order.
#[derive(Debug, Clone, Default)]
pub struct AttentionTrace<T> {
    pub maps: Vec<Tensor<T>>,
}

fn columns<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let rows = x.rows();
    let mut data = Vec::with_capacity(rows * len);
    for i in 0..rows {
        data.extend_from_slice(&x.row(i)[start..start + len]);
    }
    Tensor::new(vec![rows, len], data).expect("slice of a finite tensor")
}

fn project<T: Scalar>(lin: &Linear<T>, x: &Tensor<T>, what: &'static str) -> Result<Tensor<T>> {
    if x.cols() != lin.in_width() {
        return Err(Error::shape(
            "relational-decoders",
            what,
            format!("input width {} vs projection width {}", x.cols(), lin.in_width()),
        ));
    }
    lin.forward(x)
}

/// One attention layer; see the module docs for the exact formula.
#[allow(clippy::too_many_arguments)]
pub fn attention<T: Scalar>(
    content_q: &Tensor<T>,
    pos_q: &Tensor<T>,
    content_k: &Tensor<T>,
    pos_k: &Tensor<T>,
    value: &Tensor<T>,
    weights: &AttentionWeights<T>,
    heads: usize,
    mut trace: Option<&mut AttentionTrace<T>>,
) -> Result<Tensor<T>> {
    let width = weights.width();
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::config(
            "relational-decoders",
            format!("width {width} not divisible by {heads} heads"),
        ));
    }
    if content_q.dims() != pos_q.dims() || content_k.dims() != pos_k.dims() {
        return Err(Error::shape(
            "relational-decoders",
            "attention",
            format!(
                "content/position dims differ: q {:?}/{:?}, k {:?}/{:?}",
                content_q.dims(),
                pos_q.dims(),
                content_k.dims(),
                pos_k.dims()
            ),
        ));
    }
    if content_k.rows() != value.rows() {
        return Err(Error::shape(
            "relational-decoders",
            "attention",
            format!("{} keys vs {} values", content_k.rows(), value.rows()),
        ));
    }
    let m = content_q.rows();
    if m > 0 && content_k.rows() == 0 {
        return Err(Error::shape(
            "relational-decoders",
            "attention",
            "queries attend over an empty key set",
        ));
    }

    let q = project(&weights.query, &content_q.add(pos_q)?, "attention.query")?;
    let k = project(&weights.key, &content_k.add(pos_k)?, "attention.key")?;
    let v = project(&weights.value, value, "attention.value")?;

    let dh = width / heads;
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let mut mixed = Tensor::zeros(vec![m, width]);
    for h in 0..heads {
        let qh = columns(&q, h * dh, dh);
        let kh = columns(&k, h * dh, dh);
        let vh = columns(&v, h * dh, dh);
        let scores = matmul(&qh, &kh.transpose()?)?.scale(scale);
        let probs = softmax_rows(&scores)?;
        let ctx = matmul(&probs, &vh)?;
        for i in 0..m {
            mixed.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(ctx.row(i));
        }
        if let Some(t) = trace.as_deref_mut() {
            t.maps.push(probs);
        }
    }
    let out = weights.output.forward(&mixed)?;
    weights.norm.forward(&out.add(content_q)?)
}

/// Key/value memory a block cross-attends into.
pub struct Memory<'a, T> {
    pub keys: &'a Tensor<T>,
    pub key_positions: &'a Tensor<T>,
    pub values: &'a Tensor<T>,
}

/// Self-attention over `(content, pos)`, cross-attention into `memory`, then
/// `Norm(a + ffn(a))`.
pub fn decoder_block<T: Scalar>(
    content: &Tensor<T>,
    pos: &Tensor<T>,
    memory: &Memory<'_, T>,
    block: &DecoderBlockWeights<T>,
    heads: usize,
    mut trace: Option<&mut AttentionTrace<T>>,
) -> Result<Tensor<T>> {
    let a_self = attention(
        content,
        pos,
        content,
        pos,
        content,
        &block.self_attn,
        heads,
        trace.as_deref_mut(),
    )?;
    let a_cross = attention(
        &a_self,
        pos,
        memory.keys,
        memory.key_positions,
        memory.values,
        &block.cross_attn,
        heads,
        trace,
    )?;
    let ffn = block.ffn.forward(&a_cross)?;
    block.norm.forward(&a_cross.add(&ffn)?)
}

fn run_stack<T: Scalar>(
    tokens: &Tensor<T>,
    positions: &Tensor<T>,
    features: &Tensor<T>,
    feature_positions: &Tensor<T>,
    weights: &DecoderWeights<T>,
    config: &DecoderConfig,
    mut trace: Option<&mut AttentionTrace<T>>,
) -> Result<Tensor<T>> {
    config.check_weights(weights)?;
    let (_, w) = tokens.shape2("decoder")?;
    let (_, fw) = features.shape2("decoder")?;
    if w != config.width || fw != config.width {
        return Err(Error::shape(
            "relational-decoders",
            "decoder",
            format!("token width {w}, feature width {fw}, configured {}", config.width),
        ));
    }
    if tokens.rows() == 0 {
        return Ok(Tensor::zeros(vec![0, config.width]));
    }
    let memory = Memory {
        keys: features,
        key_positions: feature_positions,
        values: features,
    };
    let mut g = tokens.clone();
    for block in &weights.blocks {
        g = decoder_block(&g, positions, &memory, block, config.heads, trace.as_deref_mut())?;
    }
    Ok(g)
}

/// Binary stack over pair tokens `G0` with positions `X`, cross-attending
/// into the flattened image features `V_e` with positions `S`.
pub fn run_binary_decoder<T: Scalar>(
    pair_tokens: &Tensor<T>,
    pair_positions: &Tensor<T>,
    features: &Tensor<T>,
    feature_positions: &Tensor<T>,
    weights: &DecoderWeights<T>,
    config: &DecoderConfig,
    trace: Option<&mut AttentionTrace<T>>,
) -> Result<Tensor<T>> {
    run_stack(
        pair_tokens,
        pair_positions,
        features,
        feature_positions,
        weights,
        config,
        trace,
    )
}

/// Ternary stack over triplet tokens `T0` with positions `W`.
pub fn run_ternary_decoder<T: Scalar>(
    triplet_tokens: &Tensor<T>,
    triplet_positions: &Tensor<T>,
    features: &Tensor<T>,
    feature_positions: &Tensor<T>,
    weights: &DecoderWeights<T>,
    config: &DecoderConfig,
    trace: Option<&mut AttentionTrace<T>>,
) -> Result<Tensor<T>> {
    run_stack(
        triplet_tokens,
        triplet_positions,
        features,
        feature_positions,
        weights,
        config,
        trace,
    )
}

/// Affine classifier head, no activation.
pub fn classify<T: Scalar>(decoded: &Tensor<T>, head: &Linear<T>) -> Result<Tensor<T>> {
    if decoded.cols() != head.in_width() {
        return Err(Error::shape(
            "relational-decoders",
            "classify",
            format!("decoded width {} vs head input {}", decoded.cols(), head.in_width()),
        ));
    }
    head.forward(decoded)
}

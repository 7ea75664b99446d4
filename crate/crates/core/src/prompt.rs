//! Contextualized prompt features and the two-block contextual decoder.
//!
//! The frozen text encoder is replaced by a deterministic stand-in: each
//! prompt row is `proj(mean(prefix) || mean(act) || e("person") || e(object))`.
//! Only the information that reaches the output (prefix, [ACT] vectors and
//! object category) matters for this engine; real encoder outputs can be
//! supplied per category through `PromptWeights::encoded`.

use crate::decoder::{decoder_block, AttentionTrace, DecoderConfig, Memory};
use crate::error::{Error, Result};
use crate::kernels::{Linear, Mlp};
use crate::scalar::Scalar;
use crate::scene::Detection;
use crate::tensor::Tensor;
use crate::weights::{DecoderRole, DecoderWeights, PromptWeights};

/// Regional context rows `d_l = mlp(u_i || u_j)` from raw detector features.
pub fn contextual_features<T: Scalar>(
    detections: &[Detection<T>],
    pairs: &[(usize, usize)],
    mlp: &Mlp<T>,
) -> Result<Tensor<T>> {
    let mut rows = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        for idx in [i, j] {
            if idx >= detections.len() {
                return Err(Error::IndexOutOfRange {
                    module: "prompt-context",
                    what: "pair",
                    index: idx,
                    len: detections.len(),
                });
            }
        }
        let mut row = detections[i].feature.clone();
        row.extend_from_slice(&detections[j].feature);
        rows.push(row);
    }
    mlp.forward(&Tensor::from_rows(&rows, mlp.in_width())?)
}

/// Global context: mean over grid cells of `[cells x D]` features, then
/// the projection to the context width.
pub fn global_context<T: Scalar>(features: &Tensor<T>, proj: &Linear<T>) -> Result<Tensor<T>> {
    let (cells, width) = features.shape2("global_context")?;
    if cells == 0 {
        return Err(Error::validation(
            "prompt-context",
            "context.spatial",
            "empty feature grid",
        ));
    }
    let mut acc = vec![0.0f64; width];
    for i in 0..cells {
        for (a, v) in acc.iter_mut().zip(features.row(i)) {
            *a += v.to_f64_lossy();
        }
    }
    let pooled: Vec<T> = acc.iter().map(|a| T::from_f64_lossy(a / cells as f64)).collect();
    let out = proj.forward(&Tensor::new(vec![1, width], pooled)?)?;
    out.reshape(vec![proj.out_width()])
}

fn mean_rows<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let (r, c) = (x.rows(), x.cols());
    let mut acc = vec![0.0f64; c];
    for i in 0..r {
        for (a, v) in acc.iter_mut().zip(x.row(i)) {
            *a += v.to_f64_lossy();
        }
    }
    acc.iter().map(|a| T::from_f64_lossy(a / r.max(1) as f64)).collect()
}

/// Textual features `M0`, one row per pair, from each pair's object category.
pub fn encode_prompts<T: Scalar>(object_categories: &[usize], prompt: &PromptWeights<T>) -> Result<Tensor<T>> {
    let num_objects = prompt.object_words.rows();
    if let Some((k, &c)) = object_categories.iter().enumerate().find(|(_, &c)| c >= num_objects) {
        return Err(Error::validation(
            "prompt-context",
            format!("pairs[{k}].object_category"),
            format!("unknown category {c}"),
        ));
    }
    if let Some(table) = &prompt.encoded {
        return table.gather_rows(object_categories);
    }
    let prefix = mean_rows(&prompt.prefix);
    let act = mean_rows(&prompt.act);
    let rows: Vec<Vec<T>> = object_categories
        .iter()
        .map(|&c| {
            let mut row = prefix.clone();
            row.extend_from_slice(&act);
            row.extend_from_slice(prompt.person.data());
            row.extend_from_slice(prompt.object_words.row(c));
            row
        })
        .collect();
    prompt.proj.forward(&Tensor::from_rows(&rows, prompt.proj.in_width())?)
}

/// Block 1 cross-attends into the global context repeated once per row;
/// block 2 cross-attends into the regional rows. All positional streams are
/// zero.
pub fn run_contextual_decoder<T: Scalar>(
    prompts: &Tensor<T>,
    global: &Tensor<T>,
    regional: &Tensor<T>,
    weights: &DecoderWeights<T>,
    heads: usize,
    mut trace: Option<&mut AttentionTrace<T>>,
) -> Result<Tensor<T>> {
    let (m, width) = prompts.shape2("run_contextual_decoder")?;
    let cfg = DecoderConfig {
        width,
        heads,
        blocks: 2,
        role: DecoderRole::Contextual,
    };
    cfg.validate()?;
    if weights.blocks.len() != 2 {
        return Err(Error::config(
            "prompt-context",
            format!(
                "contextual decoder needs 2 blocks, weights have {}",
                weights.blocks.len()
            ),
        ));
    }
    if regional.dims() != prompts.dims() {
        return Err(Error::shape(
            "prompt-context",
            "run_contextual_decoder",
            format!("regional {:?} vs prompts {:?}", regional.dims(), prompts.dims()),
        ));
    }
    if global.dims() != [width] {
        return Err(Error::shape(
            "prompt-context",
            "run_contextual_decoder",
            format!("global context dims {:?}, expected [{width}]", global.dims()),
        ));
    }
    if m == 0 {
        return Ok(Tensor::zeros(vec![0, width]));
    }
    let zeros = Tensor::zeros(vec![m, width]);
    let repeated = Tensor::new(vec![m, width], global.data().repeat(m))?;
    let m1 = decoder_block(
        prompts,
        &zeros,
        &Memory {
            keys: &repeated,
            key_positions: &zeros,
            values: &repeated,
        },
        &weights.blocks[0],
        heads,
        trace.as_deref_mut(),
    )?;
    decoder_block(
        &m1,
        &zeros,
        &Memory {
            keys: regional,
            key_positions: &zeros,
            values: regional,
        },
        &weights.blocks[1],
        heads,
        trace,
    )
}

/// Semantic interaction logits from the contextual decoder output.
pub fn semantic_logits<T: Scalar>(decoded: &Tensor<T>, head: &Linear<T>) -> Result<Tensor<T>> {
    crate::decoder::classify(decoded, head).map_err(|e| match e {
        Error::Shape { op, detail, .. } => Error::Shape {
            module: "prompt-context",
            op,
            detail,
        },
        other => other,
    })
}

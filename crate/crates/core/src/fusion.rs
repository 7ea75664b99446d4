//! Logit fusion, the focal-loss objective and final interaction scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::kernels::sigmoid_scalar;
use crate::scalar::Scalar;
use crate::scene::Detection;
use crate::tensor::Tensor;

/// Weights of the ternary and prompt streams and the confidence exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            alpha: 1.0,
            beta: 0.4,
            lambda: 2.8,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config(
                "fusion-scoring",
                format!(
                    "alpha ({}) and beta ({}) must be finite and >= 0",
                    self.alpha, self.beta
                ),
            ));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(
                "fusion-scoring",
                format!("lambda must be > 0, got {}", self.lambda),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) || !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(
                "fusion-scoring",
                format!(
                    "focal gamma {} must be >= 0 and alpha {} in [0, 1]",
                    self.gamma, self.alpha
                ),
            ));
        }
        Ok(())
    }
}

/// Binary `m x c` action labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl LabelMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "fusion-scoring",
                "LabelMatrix::new",
                format!("{} labels for {rows}x{cols}", data.len()),
            ));
        }
        Ok(LabelMatrix { rows, cols, data })
    }

    /// From 0/1 integers; any other value is a validation error.
    pub fn from_rows(rows: &[Vec<u8>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "fusion-scoring",
                    "LabelMatrix::from_rows",
                    format!("row {i} length {}", r.len()),
                ));
            }
            for (j, &v) in r.iter().enumerate() {
                match v {
                    0 => data.push(false),
                    1 => data.push(true),
                    _ => {
                        return Err(Error::validation(
                            "fusion-scoring",
                            format!("labels[{i}][{j}]"),
                            format!("label must be 0 or 1, got {v}"),
                        ))
                    }
                }
            }
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        LabelMatrix {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn positives(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "fusion-scoring",
                "LabelMatrix::vstack",
                "column counts differ",
            ));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(self.rows + other.rows, self.cols, data)
    }
}

/// `y_hat_l = y_tilde_l + alpha * sum of ternary rows assigned to pair l`.
///
/// Ternary rows are summed in ascending triplet order; pairs with no
/// assigned triplet are returned unchanged.
pub fn fuse_ternary<T: Scalar>(
    binary: &Tensor<T>,
    ternary: &Tensor<T>,
    pair_assignment: &[usize],
    alpha: T,
) -> Result<Tensor<T>> {
    let (m, c) = binary.shape2("fuse_ternary")?;
    let (r, c2) = ternary.shape2("fuse_ternary")?;
    if c != c2 || r != pair_assignment.len() {
        return Err(Error::shape(
            "fusion-scoring",
            "fuse_ternary",
            format!(
                "binary [{m}x{c}], ternary [{r}x{c2}], {} assignments",
                pair_assignment.len()
            ),
        ));
    }
    if let Some(&bad) = pair_assignment.iter().find(|&&l| l >= m) {
        return Err(Error::Consistency {
            module: "fusion-scoring",
            detail: format!("triplet assigned to pair {bad}, only {m} pairs"),
        });
    }
    if alpha == T::zero() || r == 0 {
        return Ok(binary.clone());
    }
    let mut sums = vec![T::zero(); m * c];
    let mut hit = vec![false; m];
    for (o, &l) in pair_assignment.iter().enumerate() {
        hit[l] = true;
        for (s, &v) in sums[l * c..(l + 1) * c].iter_mut().zip(ternary.row(o)) {
            *s += v;
        }
    }
    let mut out = binary.clone();
    for l in (0..m).filter(|&l| hit[l]) {
        for (y, &s) in out.row_mut(l).iter_mut().zip(&sums[l * c..(l + 1) * c]) {
            *y += alpha * s;
        }
    }
    Ok(out)
}

/// `y_hat' = y_hat + beta * y_dot`, elementwise.
pub fn fuse_semantic<T: Scalar>(refined: &Tensor<T>, semantic: &Tensor<T>, beta: T) -> Result<Tensor<T>> {
    if refined.dims() != semantic.dims() {
        return Err(Error::shape(
            "fusion-scoring",
            "fuse_semantic",
            format!("{:?} vs {:?}", refined.dims(), semantic.dims()),
        ));
    }
    if beta == T::zero() {
        return Ok(refined.clone());
    }
    Tensor::new(
        refined.dims().to_vec(),
        refined
            .data()
            .iter()
            .zip(semantic.data())
            .map(|(&a, &b)| a + beta * b)
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalOutput<T> {
    /// Sum over entries divided by `max(1, positives)`.
    pub loss: T,
    /// Derivative of `loss` with respect to each logit.
    pub grad: Tensor<T>,
    /// Sum over entries before normalization.
    pub total: T,
    pub positives: usize,
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Per-entry sigmoid focal loss and its derivative w.r.t. the logit.
///
/// Positive: `alpha (1-p)^g * -ln p`; negative: `(1-alpha) p^g * -ln(1-p)`.
pub fn focal_term<T: Scalar>(logit: T, positive: bool, gamma: T, alpha: T) -> (T, T) {
    let p = sigmoid_scalar(logit);
    let q = sigmoid_scalar(-logit);
    if positive {
        let nll = softplus(-logit);
        let w = q.powf(gamma);
        let loss = alpha * w * nll;
        let grad = alpha * w * (-gamma * p * nll - q);
        (loss, grad)
    } else {
        let nll = softplus(logit);
        let w = p.powf(gamma);
        let one_minus = T::one() - alpha;
        let loss = one_minus * w * nll;
        let grad = one_minus * w * (p + gamma * q * nll);
        (loss, grad)
    }
}

/// Unnormalized focal sum and per-entry derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalSums<T> {
    pub total: T,
    pub grad: Tensor<T>,
    pub positives: usize,
}

pub fn focal_sums<T: Scalar>(logits: &Tensor<T>, labels: &LabelMatrix, gamma: T, alpha: T) -> Result<FocalSums<T>> {
    let (m, c) = logits.shape2("focal_loss")?;
    if (m, c) != (labels.rows(), labels.cols()) {
        return Err(Error::shape(
            "fusion-scoring",
            "focal_loss",
            format!("logits [{m}x{c}] vs labels [{}x{}]", labels.rows(), labels.cols()),
        ));
    }
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(m * c);
    for (&x, &y) in logits.data().iter().zip(labels.data()) {
        let (l, g) = focal_term(x, y, gamma, alpha);
        total += l;
        grad.push(g);
    }
    Ok(FocalSums {
        total,
        grad: Tensor::new(vec![m, c], grad)?,
        positives: labels.positives(),
    })
}

/// Combines per-part sums into the loss normalized by the total number of
/// positives, clamped to at least one.
pub fn normalize_focal<T: Scalar>(parts: &[FocalSums<T>], cols: usize) -> Result<FocalOutput<T>> {
    let positives: usize = parts.iter().map(|p| p.positives).sum();
    let norm = T::from_usize(positives.max(1)).expect("count fits scalar");
    let total = parts.iter().fold(T::zero(), |acc, p| acc + p.total);
    let blocks: Vec<&Tensor<T>> = parts.iter().map(|p| &p.grad).collect();
    let grad = Tensor::vstack(&blocks, cols)?.map(|g| g / norm);
    Ok(FocalOutput {
        loss: total / norm,
        grad,
        total,
        positives,
    })
}

/// Focal loss normalized by the number of positive labels, clamped to at
/// least one.
pub fn focal_loss<T: Scalar>(logits: &Tensor<T>, labels: &LabelMatrix, gamma: T, alpha: T) -> Result<FocalOutput<T>> {
    let sums = focal_sums(logits, labels, gamma, alpha)?;
    normalize_focal(&[sums], labels.cols())
}

/// One human-object pair with its per-action scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredInteraction<T> {
    pub pair: (usize, usize),
    pub human_box: BBox<T>,
    pub object_box: BBox<T>,
    pub object_category: usize,
    pub scores: Vec<T>,
}

/// `s = (s_h * s_o)^lambda * sigmoid(logit)` for one entry.
pub fn score<T: Scalar>(logit: T, human_conf: T, object_conf: T, lambda: T) -> T {
    (human_conf * object_conf).powf(lambda) * sigmoid_scalar(logit)
}

pub fn final_scores<T: Scalar>(
    logits: &Tensor<T>,
    pairs: &[(usize, usize)],
    detections: &[Detection<T>],
    lambda: T,
) -> Result<Vec<ScoredInteraction<T>>> {
    let (m, _) = logits.shape2("final_scores")?;
    if m != pairs.len() {
        return Err(Error::shape(
            "fusion-scoring",
            "final_scores",
            format!("{m} logit rows vs {} pairs", pairs.len()),
        ));
    }
    pairs
        .iter()
        .enumerate()
        .map(|(l, &(i, j))| {
            let (h, o) = match (detections.get(i), detections.get(j)) {
                (Some(h), Some(o)) => (h, o),
                _ => {
                    return Err(Error::IndexOutOfRange {
                        module: "fusion-scoring",
                        what: "pair",
                        index: i.max(j),
                        len: detections.len(),
                    })
                }
            };
            Ok(ScoredInteraction {
                pair: (i, j),
                human_box: h.bbox,
                object_box: o.bbox,
                object_category: o.category,
                scores: logits
                    .row(l)
                    .iter()
                    .map(|&x| score(x, h.score, o.score, lambda))
                    .collect(),
            })
        })
        .collect()
}

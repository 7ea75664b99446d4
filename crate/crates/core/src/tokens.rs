//! Unary, binary and ternary token construction.
//!
//! Enumeration order is lexicographic in detection indices: pairs `(i, j)`
//! and triplets `(i, j, k)`. Every row index downstream refers to this order.

use crate::error::{Error, Result};
use crate::geometry::{binary_positions, ternary_positions, BBox, ImageSize};
use crate::kernels::Mlp;
use crate::scalar::Scalar;
use crate::scene::{Detection, KnowledgeBank};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedUnary<T> {
    pub index: usize,
    pub vector: Vec<T>,
}

/// Enriched unary tokens `mlp(u_i || e_{c_i})`, one per detection, in order.
pub fn enrich_unary<T: Scalar>(
    detections: &[Detection<T>],
    text_table: &Tensor<T>,
    mlp: &Mlp<T>,
) -> Result<Vec<EnrichedUnary<T>>> {
    let (num_objects, text_width) = text_table.shape2("enrich_unary")?;
    let mut rows = Vec::with_capacity(detections.len());
    for (i, d) in detections.iter().enumerate() {
        if d.category >= num_objects {
            return Err(Error::validation(
                "token-builder",
                format!("detections[{i}].category"),
                format!("no text embedding for category {} ({num_objects} rows)", d.category),
            ));
        }
        let mut row = d.feature.clone();
        row.extend_from_slice(text_table.row(d.category));
        rows.push(row);
    }
    let width = mlp.in_width();
    if let Some(first) = rows.first() {
        if first.len() != width {
            return Err(Error::shape(
                "token-builder",
                "enrich_unary",
                format!(
                    "feature ({}) + text ({text_width}) = {} != mlp input {width}",
                    first.len() - text_width,
                    first.len()
                ),
            ));
        }
    }
    let out = mlp.forward(&Tensor::from_rows(&rows, width)?)?;
    Ok((0..out.rows())
        .map(|i| EnrichedUnary {
            index: i,
            vector: out.row(i).to_vec(),
        })
        .collect())
}

pub fn stack_unary<T: Scalar>(enriched: &[EnrichedUnary<T>], width: usize) -> Result<Tensor<T>> {
    let rows: Vec<Vec<T>> = enriched.iter().map(|u| u.vector.clone()).collect();
    Tensor::from_rows(&rows, width)
}

/// Human-object pairs with content tokens `G0` and positional rows `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet<T> {
    pub pairs: Vec<(usize, usize)>,
    pub tokens: Tensor<T>,
    pub positions: Tensor<T>,
}

impl<T> PairSet<T> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn index_of(&self, pair: (usize, usize)) -> Option<usize> {
        self.pairs.binary_search(&pair).ok()
    }
}

/// Human-object-tool triplets with content tokens `T0`, positional rows `W`
/// and the row of the `(human, object)` pair each triplet contributes to.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet<T> {
    pub triplets: Vec<(usize, usize, usize)>,
    pub tokens: Tensor<T>,
    pub positions: Tensor<T>,
    pub pair_assignment: Vec<usize>,
}

impl<T> TripletSet<T> {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// All ordered `(i, j)` with `i` human and `i != j`.
pub fn enumerate_pairs(categories: &[usize], human: usize) -> Vec<(usize, usize)> {
    let n = categories.len();
    let mut out = Vec::new();
    for i in (0..n).filter(|&i| categories[i] == human) {
        out.extend((0..n).filter(|&j| j != i).map(|j| (i, j)));
    }
    out
}

/// All `(i, j, k)` pairwise distinct with `i` human and
/// `(category(j), category(k))` in the bank.
pub fn enumerate_triplets(categories: &[usize], human: usize, bank: &KnowledgeBank) -> Vec<(usize, usize, usize)> {
    let n = categories.len();
    let mut out = Vec::new();
    if bank.is_empty() {
        return out;
    }
    for i in (0..n).filter(|&i| categories[i] == human) {
        for j in (0..n).filter(|&j| j != i) {
            for k in (0..n).filter(|&k| k != i && k != j) {
                if bank.contains(categories[j], categories[k]) {
                    out.push((i, j, k));
                }
            }
        }
    }
    out
}

fn concat_rows<T: Scalar>(enriched: &[EnrichedUnary<T>], idx: &[usize]) -> Vec<T> {
    idx.iter().flat_map(|&i| enriched[i].vector.iter().copied()).collect()
}

fn check_aligned<T: Scalar>(detections: &[Detection<T>], enriched: &[EnrichedUnary<T>]) -> Result<()> {
    if detections.len() != enriched.len() || enriched.iter().enumerate().any(|(k, u)| u.index != k) {
        return Err(Error::Consistency {
            module: "token-builder",
            detail: format!(
                "{} enriched tokens not aligned with {} detections",
                enriched.len(),
                detections.len()
            ),
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn build_pairs<T: Scalar>(
    detections: &[Detection<T>],
    enriched: &[EnrichedUnary<T>],
    human: usize,
    pair_mlp: &Mlp<T>,
    position_mlp: &Mlp<T>,
    img: ImageSize,
    eps: f64,
) -> Result<PairSet<T>> {
    check_aligned(detections, enriched)?;
    let cats: Vec<usize> = detections.iter().map(|d| d.category).collect();
    let pairs = enumerate_pairs(&cats, human);
    let rows: Vec<Vec<T>> = pairs.iter().map(|&(i, j)| concat_rows(enriched, &[i, j])).collect();
    let tokens = pair_mlp.forward(&Tensor::from_rows(&rows, pair_mlp.in_width())?)?;
    let boxes: Vec<BBox<T>> = detections.iter().map(|d| d.bbox).collect();
    let positions = binary_positions(&pairs, &boxes, img, position_mlp, eps)?;
    Ok(PairSet {
        pairs,
        tokens,
        positions,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn build_triplets<T: Scalar>(
    detections: &[Detection<T>],
    enriched: &[EnrichedUnary<T>],
    bank: &KnowledgeBank,
    pairs: &PairSet<T>,
    human: usize,
    triplet_mlp: &Mlp<T>,
    position_mlp: &Mlp<T>,
    img: ImageSize,
    eps: f64,
) -> Result<TripletSet<T>> {
    check_aligned(detections, enriched)?;
    let cats: Vec<usize> = detections.iter().map(|d| d.category).collect();
    let triplets = enumerate_triplets(&cats, human, bank);
    let pair_assignment = triplets
        .iter()
        .map(|&(i, j, k)| {
            pairs.index_of((i, j)).ok_or_else(|| Error::Consistency {
                module: "token-builder",
                detail: format!("triplet ({i}, {j}, {k}) has no ({i}, {j}) pair"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<T>> = triplets
        .iter()
        .map(|&(i, j, k)| concat_rows(enriched, &[i, j, k]))
        .collect();
    let tokens = triplet_mlp.forward(&Tensor::from_rows(&rows, triplet_mlp.in_width())?)?;
    let boxes: Vec<BBox<T>> = detections.iter().map(|d| d.bbox).collect();
    let positions = ternary_positions(&triplets, &boxes, img, position_mlp, eps)?;
    Ok(TripletSet {
        triplets,
        tokens,
        positions,
        pair_assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PAIR_FEATURES, TRIPLET_FEATURES};
    use crate::kernels::Linear;

    const HUMAN: usize = 0;
    const CUP: usize = 41;
    const BOTTLE: usize = 39;
    const IMG: ImageSize = ImageSize {
        width: 100,
        height: 100,
    };

    fn det(category: usize, x: f32) -> Detection<f32> {
        Detection {
            bbox: BBox::new(x, x, x + 10.0, x + 20.0).unwrap(),
            score: 0.9,
            category,
            feature: vec![x, 1.0],
        }
    }

    fn unary(n: usize, width: usize) -> Vec<EnrichedUnary<f32>> {
        (0..n)
            .map(|i| EnrichedUnary {
                index: i,
                vector: (0..width).map(|k| (i * width + k) as f32).collect(),
            })
            .collect()
    }

    #[test]
    fn zero_detections_give_empty_everything() {
        let text = Tensor::<f32>::zeros(vec![50, 3]);
        let u = enrich_unary(&[], &text, &Mlp::zeros(5, 4)).unwrap();
        assert!(u.is_empty());
        let p = build_pairs(
            &[],
            &u,
            HUMAN,
            &Mlp::zeros(8, 4),
            &Mlp::zeros(PAIR_FEATURES, 4),
            IMG,
            1e-3,
        )
        .unwrap();
        assert_eq!(p.tokens.dims(), &[0, 4]);
    }

    #[test]
    fn zero_mlp_enrichment_is_bias() {
        let text = Tensor::<f32>::filled(vec![50, 3], 0.5);
        let mut m = Mlp::zeros(5, 4);
        m.layers[1].bias = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = enrich_unary(&[det(HUMAN, 1.0), det(CUP, 5.0)], &text, &m).unwrap();
        assert_eq!(u[0].vector, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(u[1].vector, u[0].vector);
    }

    #[test]
    fn missing_text_embedding_is_validation_error() {
        let text = Tensor::<f32>::zeros(vec![5, 3]);
        let err = enrich_unary(&[det(CUP, 1.0)], &text, &Mlp::zeros(5, 4)).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn three_detections_one_human() {
        let dets = [det(HUMAN, 0.0), det(CUP, 10.0), det(BOTTLE, 20.0)];
        let u = unary(3, 2);
        let p = build_pairs(
            &dets,
            &u,
            HUMAN,
            &Mlp::zeros(4, 2),
            &Mlp::zeros(PAIR_FEATURES, 2),
            IMG,
            1e-3,
        )
        .unwrap();
        assert_eq!(p.pairs, vec![(0, 1), (0, 2)]);
        assert_eq!(p.positions.dims(), &[2, 2]);
    }

    #[test]
    fn no_humans_no_pairs() {
        assert!(enumerate_pairs(&[CUP, BOTTLE, CUP], HUMAN).is_empty());
    }

    #[test]
    fn human_human_pairs_both_directions() {
        assert_eq!(enumerate_pairs(&[HUMAN, HUMAN], HUMAN), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn triplet_examples() {
        let bank = KnowledgeBank::new([(CUP, BOTTLE)], 80).unwrap();
        let t = enumerate_triplets(&[HUMAN, HUMAN, CUP, BOTTLE], HUMAN, &bank);
        assert_eq!(t, vec![(0, 2, 3), (1, 2, 3)]);

        let both = KnowledgeBank::new([(CUP, BOTTLE), (BOTTLE, CUP)], 80).unwrap();
        let t = enumerate_triplets(&[HUMAN, CUP, BOTTLE], HUMAN, &both);
        assert_eq!(t, vec![(0, 1, 2), (0, 2, 1)]);

        assert!(enumerate_triplets(&[HUMAN, CUP, BOTTLE], HUMAN, &KnowledgeBank::empty()).is_empty());
    }

    #[test]
    fn pair_assignment_points_at_matching_pair() {
        let dets = [det(HUMAN, 0.0), det(CUP, 10.0), det(BOTTLE, 20.0), det(HUMAN, 30.0)];
        let u = unary(4, 2);
        let bank = KnowledgeBank::new([(CUP, BOTTLE), (BOTTLE, CUP)], 80).unwrap();
        let p = build_pairs(
            &dets,
            &u,
            HUMAN,
            &Mlp::zeros(4, 2),
            &Mlp::zeros(PAIR_FEATURES, 2),
            IMG,
            1e-3,
        )
        .unwrap();
        let t = build_triplets(
            &dets,
            &u,
            &bank,
            &p,
            HUMAN,
            &Mlp::zeros(6, 2),
            &Mlp::zeros(TRIPLET_FEATURES, 2),
            IMG,
            1e-3,
        )
        .unwrap();
        assert_eq!(t.len(), 4);
        for (o, &(i, j, _)) in t.triplets.iter().enumerate() {
            assert_eq!(p.pairs[t.pair_assignment[o]], (i, j));
        }
    }

    #[test]
    fn dangling_triplet_is_consistency_error() {
        let dets = [det(HUMAN, 0.0), det(CUP, 10.0), det(BOTTLE, 20.0)];
        let u = unary(3, 2);
        let bank = KnowledgeBank::new([(CUP, BOTTLE)], 80).unwrap();
        let empty = PairSet {
            pairs: vec![],
            tokens: Tensor::zeros(vec![0, 2]),
            positions: Tensor::zeros(vec![0, 2]),
        };
        let err = build_triplets(
            &dets,
            &u,
            &bank,
            &empty,
            HUMAN,
            &Mlp::zeros(6, 2),
            &Mlp::zeros(TRIPLET_FEATURES, 2),
            IMG,
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Consistency { .. }));
    }

    #[test]
    fn pair_tokens_concatenate_human_then_object() {
        // identity-like first layer picks out u'_i || u'_j; relu keeps the
        // nonnegative test values.
        let dets = [det(HUMAN, 0.0), det(CUP, 10.0)];
        let u = unary(2, 2);
        let eye = Linear::new(Tensor::identity(4), Tensor::zeros(vec![4])).unwrap();
        let m = Mlp::new(vec![eye.clone(), eye]).unwrap();
        let p = build_pairs(&dets, &u, HUMAN, &m, &Mlp::zeros(PAIR_FEATURES, 4), IMG, 1e-3).unwrap();
        assert_eq!(p.tokens.row(0), &[0.0, 1.0, 2.0, 3.0]);
    }
}

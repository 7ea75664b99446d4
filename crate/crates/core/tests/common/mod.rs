#![allow(dead_code)]

use crln_core::fixtures::Stream;
use crln_core::kernels::{Linear, Mlp};
use crln_core::weights::{AttentionWeights, DecoderBlockWeights, DecoderWeights};
use crln_core::{Engine, FixtureSpec, Fixtures, KnowledgeBank, Tensor};
use num_rational::Ratio;

pub type Mat = Vec<Vec<f64>>;

pub fn stream(seed: u64, label: &str) -> Stream {
    Stream::new(seed, label)
}

pub fn random_tensor(s: &mut Stream, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| scale * s.signed() as f64).collect(),
    )
    .unwrap()
}

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn from_mat(m: &Mat, cols: usize) -> Tensor<f64> {
    Tensor::from_rows(m, cols).unwrap()
}

pub fn fixture_engine(seed: u64, spec: &FixtureSpec) -> (Engine<f64>, Fixtures) {
    let fx = crln_core::generate(seed, spec).unwrap();
    let engine = Engine::new(fx.config.clone(), fx.categories.clone(), &fx.weights).unwrap();
    (engine, fx)
}

// ---------------------------------------------------------------------------
// Positionless decoder, written with plain loops
// ---------------------------------------------------------------------------

fn affine(x: &Mat, lin: &Linear<f64>) -> Mat {
    let w = lin.weight.data();
    let (k, n) = (lin.weight.rows(), lin.weight.cols());
    x.iter()
        .map(|row| {
            (0..n)
                .map(|j| {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += row[p] * w[p * n + j];
                    }
                    acc + lin.bias.data()[j]
                })
                .collect()
        })
        .collect()
}

fn feed_forward(x: &Mat, mlp: &Mlp<f64>) -> Mat {
    let mut h = x.clone();
    for (i, layer) in mlp.layers.iter().enumerate() {
        h = affine(&h, layer);
        if i + 1 < mlp.layers.len() {
            for v in h.iter_mut().flatten() {
                *v = v.max(0.0);
            }
        }
    }
    h
}

fn norm(x: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) * inv * gain[j] + bias[j])
                .collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

pub fn plain_attention(query: &Mat, keys: &Mat, values: &Mat, w: &AttentionWeights<f64>, heads: usize) -> Mat {
    let q = affine(query, &w.query);
    let k = affine(keys, &w.key);
    let v = affine(values, &w.value);
    let width = q[0].len();
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut mixed = vec![vec![0.0; width]; query.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| {
                    let mut acc = 0.0;
                    for c in cols.clone() {
                        acc += qi[c] * kj[c];
                    }
                    acc * scale
                })
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            for c in cols.clone() {
                let mut acc = 0.0;
                for (j, p) in probs.iter().enumerate() {
                    acc += p * v[j][c];
                }
                mixed[i][c] = acc;
            }
        }
    }
    let out = affine(&mixed, &w.output);
    norm(&add(&out, query), w.norm.gain.data(), w.norm.bias.data())
}

pub fn plain_block(x: &Mat, memory: &Mat, b: &DecoderBlockWeights<f64>, heads: usize) -> Mat {
    let a = plain_attention(x, x, x, &b.self_attn, heads);
    let c = plain_attention(&a, memory, memory, &b.cross_attn, heads);
    let f = feed_forward(&c, &b.ffn);
    norm(&add(&c, &f), b.norm.gain.data(), b.norm.bias.data())
}

pub fn plain_decoder(x: &Mat, memory: &Mat, w: &DecoderWeights<f64>, heads: usize) -> Mat {
    w.blocks
        .iter()
        .fold(x.clone(), |g, b| plain_block(&g, memory, b, heads))
}

// ---------------------------------------------------------------------------
// Spatial encoding, recomputed from box corners
// ---------------------------------------------------------------------------

pub fn plain_spatial(bi: [f64; 4], bj: [f64; 4], img_w: f64, img_h: f64) -> Vec<f64> {
    let eps = 1e-3;
    let desc = |b: [f64; 4]| {
        let w = b[2] - b[0];
        let h = b[3] - b[1];
        (b[0] + 0.5 * w, b[1] + 0.5 * h, w, h, w * h, w / (h + eps))
    };
    let (cxi, cyi, wi, hi, ai, ri) = desc(bi);
    let (cxj, cyj, wj, hj, aj, rj) = desc(bj);
    let ix = (bi[2].min(bj[2]) - bi[0].max(bj[0])).max(0.0);
    let iy = (bi[3].min(bj[3]) - bi[1].max(bj[1])).max(0.0);
    let inter = ix * iy;
    let union = ai + aj - inter;
    let overlap = if union > 0.0 { (inter / union).min(1.0) } else { 0.0 };
    let mut base = vec![
        cxi / img_w,
        cyi / img_h,
        wi / img_w,
        hi / img_h,
        ai / (img_w * img_h),
        ri,
        cxj / img_w,
        cyj / img_h,
        wj / img_w,
        hj / img_h,
        aj / (img_w * img_h),
        rj,
    ];
    let (dx, dy) = (cxj - cxi, cyj - cyi);
    base.extend([
        overlap,
        ai / (aj + eps),
        dx / (wi + eps),
        dy / (hi + eps),
        (dx * dx + dy * dy).sqrt() / (img_w * img_w + img_h * img_h).sqrt(),
        ri / (rj + eps),
    ]);
    let logs: Vec<f64> = base
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if k == 14 || k == 15 {
                v.signum() * (1.0 + v.abs()).ln()
            } else {
                (v.max(0.0) + eps).ln()
            }
        })
        .collect();
    base.extend(logs);
    base
}

// ---------------------------------------------------------------------------
// Enumeration and fusion by brute force
// ---------------------------------------------------------------------------

pub fn brute_pairs(cats: &[usize], human: usize) -> Vec<(usize, usize)> {
    let n = cats.len();
    let mut all: Vec<(usize, usize)> = (0..n * n).map(|x| (x / n, x % n)).collect();
    all.retain(|&(i, j)| i != j && cats[i] == human);
    all
}

pub fn brute_triplets(cats: &[usize], human: usize, bank: &KnowledgeBank) -> Vec<(usize, usize, usize)> {
    let n = cats.len();
    let mut all: Vec<(usize, usize, usize)> = (0..n * n * n).map(|x| (x / (n * n), (x / n) % n, x % n)).collect();
    all.retain(|&(i, j, k)| i != j && j != k && i != k && cats[i] == human && bank.contains(cats[j], cats[k]));
    all
}

/// Group-by-pair sum: for each pair row, gather its triplets in ascending
/// order, sum them, then add `alpha` times the sum.
pub fn group_by_fuse(binary: &Mat, ternary: &Mat, assignment: &[usize], alpha: f64) -> Mat {
    binary
        .iter()
        .enumerate()
        .map(|(l, row)| {
            let members: Vec<usize> = (0..assignment.len()).filter(|&o| assignment[o] == l).collect();
            if members.is_empty() || alpha == 0.0 {
                return row.clone();
            }
            row.iter()
                .enumerate()
                .map(|(c, &y)| {
                    let mut s = 0.0;
                    for &o in &members {
                        s += ternary[o][c];
                    }
                    y + alpha * s
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// AP by exhaustive precision/recall enumeration
// ---------------------------------------------------------------------------

/// Sum over true positives of `max precision at any rank >= k`, divided by
/// the number of ground truths.
pub fn enumerated_ap(hits: &[bool], num_gt: usize) -> Ratio<i64> {
    let n = hits.len();
    let precision_at = |k: usize| {
        let tp = hits[..=k].iter().filter(|&&h| h).count() as i64;
        Ratio::new(tp, k as i64 + 1)
    };
    let mut ap = Ratio::from_integer(0);
    for k in (0..n).filter(|&k| hits[k]) {
        let best = (k..n).map(precision_at).max().unwrap();
        ap += best / Ratio::from_integer(num_gt as i64);
    }
    ap
}

/// Every TP/FP pattern of every length up to `max_len`.
pub fn all_hit_patterns(max_len: usize) -> Vec<Vec<bool>> {
    (0..=max_len)
        .flat_map(|n| (0u32..1 << n).map(move |bits| (0..n).map(|k| bits >> k & 1 == 1).collect()))
        .collect()
}

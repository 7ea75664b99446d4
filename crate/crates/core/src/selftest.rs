//! Built-in invariant checks, runnable from the CLI without external data.

use crate::container::{decode, encode};
use crate::error::Result;
use crate::eval::average_precision;
use crate::fixtures::{generate, FixtureSpec, Stream};
use crate::fusion::{focal_loss, focal_term, FusionConfig, LabelMatrix};
use crate::kernels::{layer_norm, softmax_rows, LAYER_NORM_EPS};
use crate::pipeline::Engine;
use crate::scene::KnowledgeBank;
use crate::tensor::Tensor;
use crate::tokens::enumerate_pairs;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<std::result::Result<(), String>>) -> CheckResult {
    match outcome {
        Ok(Ok(())) => CheckResult {
            name,
            passed: true,
            detail: String::new(),
        },
        Ok(Err(detail)) => CheckResult {
            name,
            passed: false,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn random_matrix(s: &mut Stream, rows: usize, cols: usize, scale: f64) -> Result<Tensor<f64>> {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| scale * s.signed() as f64).collect(),
    )
}

fn softmax_rows_sum_to_one() -> Result<std::result::Result<(), String>> {
    let mut s = Stream::new(0, "selftest:softmax");
    for _ in 0..200 {
        let (r, c) = (1 + s.below(6), 1 + s.below(9));
        let x = random_matrix(&mut s, r, c, 30.0)?;
        let y = softmax_rows(&x)?;
        for i in 0..r {
            let sum: f64 = y.row(i).iter().sum();
            if (sum - 1.0).abs() > 1e-12 || y.row(i).iter().any(|&v| v < 0.0) {
                return Ok(Err(format!("row {i} sums to {sum}")));
            }
        }
        let shifted = Tensor::new(x.dims().to_vec(), x.data().iter().map(|v| v + 7.25).collect())?;
        let d = softmax_rows(&shifted)?.max_abs_diff(&y).unwrap_or(f64::INFINITY);
        if d > 1e-12 {
            return Ok(Err(format!("shift changed output by {d}")));
        }
    }
    Ok(Ok(()))
}

fn layer_norm_moments() -> Result<std::result::Result<(), String>> {
    let mut s = Stream::new(0, "selftest:layer_norm");
    for _ in 0..200 {
        let (r, c) = (1 + s.below(5), 2 + s.below(15));
        let x = random_matrix(&mut s, r, c, 10.0)?;
        let y = layer_norm(&x, &Tensor::filled(vec![c], 1.0), &Tensor::zeros(vec![c]))?;
        for i in 0..r {
            let row = y.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let xm = x.row(i).iter().sum::<f64>() / c as f64;
            let xv = x.row(i).iter().map(|v| (v - xm).powi(2)).sum::<f64>() / c as f64;
            let expected = xv / (xv + LAYER_NORM_EPS);
            if mean.abs() > 1e-9 || (var - expected).abs() > 1e-9 {
                return Ok(Err(format!("row {i}: mean {mean}, var {var}")));
            }
        }
    }
    Ok(Ok(()))
}

fn pair_counts() -> Result<std::result::Result<(), String>> {
    let mut s = Stream::new(0, "selftest:pairs");
    for _ in 0..500 {
        let n = s.below(9);
        let cats: Vec<usize> = (0..n).map(|_| s.below(4)).collect();
        let h = cats.iter().filter(|&&c| c == 0).count();
        let pairs = enumerate_pairs(&cats, 0);
        let expected = h * n.saturating_sub(1);
        if pairs.len() != expected {
            return Ok(Err(format!("{cats:?}: {} pairs, expected {expected}", pairs.len())));
        }
    }
    Ok(Ok(()))
}

fn engine(seed: u64) -> Result<(Engine<f64>, crate::fixtures::Fixtures)> {
    let fx = generate(seed, &FixtureSpec::small())?;
    let e = Engine::new(fx.config.clone(), fx.categories.clone(), &fx.weights)?;
    Ok((e, fx))
}

fn fusion_identities() -> Result<std::result::Result<(), String>> {
    let (e, fx) = engine(11)?;
    let base = e.config().fusion;
    let no_ternary = e.with_fusion(FusionConfig { alpha: 0.0, ..base })?;
    let no_prompt = e.with_fusion(FusionConfig { beta: 0.0, ..base })?;
    for scene in &fx.scenes {
        let scene = scene.cast::<f64>();
        let a0 = no_ternary.forward(&scene, &fx.bank)?;
        if a0.refined != a0.binary {
            return Ok(Err(format!("{}: alpha=0 refined differs from binary", scene.image_id)));
        }
        let empty = e.forward(&scene, &KnowledgeBank::empty())?;
        if empty.refined != empty.binary || empty.fused != a0.fused {
            return Ok(Err(format!("{}: empty bank differs from alpha=0", scene.image_id)));
        }
        let b0 = no_prompt.forward(&scene, &fx.bank)?;
        if b0.fused != b0.refined {
            return Ok(Err(format!("{}: beta=0 fused differs from refined", scene.image_id)));
        }
    }
    Ok(Ok(()))
}

fn focal_gradient() -> Result<std::result::Result<(), String>> {
    let mut s = Stream::new(0, "selftest:focal");
    let h = 1e-6;
    for seed in 0..50 {
        let x = random_matrix(&mut s, 4, 6, 4.0)?;
        let bits: Vec<bool> = (0..24).map(|_| s.unit() < 0.3).collect();
        let labels = LabelMatrix::new(4, 6, bits)?;
        let out = focal_loss(&x, &labels, 2.0, 0.25)?;
        for k in 0..x.len() {
            let norm = labels.positives().max(1) as f64;
            let term = |d: f64| focal_term(x.data()[k] + d, labels.data()[k], 2.0, 0.25).0 / norm;
            let fd = (term(h) - term(-h)) / (2.0 * h);
            let g = out.grad.data()[k];
            let rel = (fd - g).abs() / g.abs().max(fd.abs()).max(1e-6);
            if rel > 1e-4 {
                return Ok(Err(format!("seed {seed}, index {k}: analytic {g}, numeric {fd}")));
            }
        }
    }
    Ok(Ok(()))
}

fn determinism() -> Result<std::result::Result<(), String>> {
    let (e, fx) = engine(5)?;
    for scene in &fx.scenes {
        let scene = scene.cast::<f64>();
        if e.infer_scene(&scene, &fx.bank)? != e.infer_scene(&scene, &fx.bank)? {
            return Ok(Err(format!("{}: repeated inference differs", scene.image_id)));
        }
    }
    let again = generate(5, &FixtureSpec::small())?;
    if again.weights != fx.weights || again.scenes != fx.scenes {
        return Ok(Err("fixture generation is not deterministic".into()));
    }
    Ok(Ok(()))
}

fn canonical(scored: &[crate::fusion::ScoredInteraction<f64>]) -> Vec<String> {
    let mut v: Vec<String> = scored
        .iter()
        .map(|s| {
            let scores: Vec<String> = s.scores.iter().map(|x| format!("{x:.9}")).collect();
            format!(
                "{:?}|{:?}|{}|{}",
                s.human_box.to_array(),
                s.object_box.to_array(),
                s.object_category,
                scores.join(",")
            )
        })
        .collect();
    v.sort();
    v
}

fn permutation_equivariance() -> Result<std::result::Result<(), String>> {
    let (e, fx) = engine(9)?;
    let mut s = Stream::new(0, "selftest:perm");
    for scene in &fx.scenes {
        let scene = scene.cast::<f64>();
        let base = canonical(&e.infer_scene(&scene, &fx.bank)?);
        for _ in 0..5 {
            let mut order: Vec<usize> = (0..scene.detections.len()).collect();
            s.shuffle(&mut order);
            let permuted = canonical(&e.infer_scene(&scene.permuted(&order), &fx.bank)?);
            if permuted != base {
                return Ok(Err(format!(
                    "{}: order {order:?} changed the output multiset",
                    scene.image_id
                )));
            }
        }
    }
    Ok(Ok(()))
}

fn container_round_trip() -> Result<std::result::Result<(), String>> {
    let fx = generate(2, &FixtureSpec::small())?;
    let bytes = fx.weights.to_bytes()?;
    let again = encode(&decode(&bytes)?)?;
    if again != bytes {
        return Ok(Err("decode then encode changed the bytes".into()));
    }
    Ok(Ok(()))
}

fn perfect_ap() -> Result<std::result::Result<(), String>> {
    let ranked = [(0.9, true), (0.8, true), (0.1, true)];
    match average_precision(&ranked, 3) {
        Some(1.0) => Ok(Ok(())),
        other => Ok(Err(format!("perfect ranking gave {other:?}"))),
    }
}

/// Runs every check and reports each outcome.
pub fn run_selftest() -> Vec<CheckResult> {
    vec![
        check(
            "softmax rows sum to one and are shift invariant",
            softmax_rows_sum_to_one(),
        ),
        check("layer norm yields zero mean and unit variance", layer_norm_moments()),
        check("pair count equals humans times (n - 1)", pair_counts()),
        check(
            "fusion identities for alpha = 0, beta = 0 and empty bank",
            fusion_identities(),
        ),
        check("focal gradient matches central differences", focal_gradient()),
        check("inference and fixture generation are deterministic", determinism()),
        check("scores are equivariant to detection order", permutation_equivariance()),
        check("tensor container round-trips byte-identically", container_round_trip()),
        check("perfect ranking has AP 1", perfect_ap()),
    ]
}

//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use crln_core::decoder::{run_binary_decoder, DecoderConfig};
use crln_core::eval::{ap_from_ranked_hits, evaluate};
use crln_core::fusion::{focal_loss, fuse_semantic, fuse_ternary, score, LabelMatrix};
use crln_core::kernels::{layer_norm, softmax_rows, LAYER_NORM_EPS};
use crln_core::tokens::{enumerate_pairs, enumerate_triplets};
use crln_core::weights::DecoderRole;
use crln_core::{
    generate, run_selftest, Engine32, EngineConfig, FixtureSpec, FusionConfig, GroundTruthFile, KnowledgeBank,
    PrefixMode, ScoredInteraction, Tensor,
};
use num_rational::Ratio;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn attention_algebra() -> Outcome {
    let start = Instant::now();
    let (engine, _) = fixture_engine(100, &FixtureSpec::small());
    let w = engine.weights();
    let cfg = DecoderConfig {
        width: 8,
        heads: 2,
        blocks: 1,
        role: DecoderRole::Binary,
    };
    let mut s = stream(100, "acceptance:attention");
    let mut tensors = 0;
    for _ in 0..1000 {
        let (r, c) = (1 + s.below(6), 2 + s.below(14));
        let x = random_tensor(&mut s, r, c, 20.0);
        let y = softmax_rows(&x).map_err(|e| e.to_string())?;
        let shifted = softmax_rows(&x.map(|v| v - 13.5)).map_err(|e| e.to_string())?;
        let n = layer_norm(&x, &Tensor::filled(vec![c], 1.0), &Tensor::zeros(vec![c])).map_err(|e| e.to_string())?;
        for i in 0..r {
            let sum: f64 = y.row(i).iter().sum();
            ensure((sum - 1.0).abs() <= 1e-6, || format!("softmax row sums to {sum}"))?;
            let xm = x.row(i).iter().sum::<f64>() / c as f64;
            let xv = x.row(i).iter().map(|v| (v - xm).powi(2)).sum::<f64>() / c as f64;
            let mean = n.row(i).iter().sum::<f64>() / c as f64;
            let var = n.row(i).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            ensure(mean.abs() <= 1e-4, || format!("layer norm mean {mean}"))?;
            ensure((var - xv / (xv + LAYER_NORM_EPS)).abs() <= 1e-4, || {
                format!("layer norm variance {var}")
            })?;
        }
        let d = shifted.max_abs_diff(&y).unwrap();
        ensure(d <= 1e-6, || format!("shift changed softmax by {d}"))?;

        let m = 1 + s.below(5);
        let cells = 1 + s.below(10);
        let tokens = random_tensor(&mut s, m, 8, 2.0);
        let feats = random_tensor(&mut s, cells, 8, 2.0);
        let zero_pos = run_binary_decoder(
            &tokens,
            &Tensor::zeros(vec![m, 8]),
            &feats,
            &Tensor::zeros(vec![cells, 8]),
            &w.binary,
            &cfg,
            None,
        )
        .map_err(|e| e.to_string())?;
        let plain = from_mat(&plain_decoder(&to_mat(&tokens), &to_mat(&feats), &w.binary, 2), 8);
        ensure(zero_pos == plain, || {
            "zero-position decoder differs from positionless computation".into()
        })?;
        tensors += 5;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("{tensors} random tensors in {elapsed:.2?}"))
}

fn enumeration_oracles() -> Outcome {
    let mut checked = 0;
    for seed in 0..600u64 {
        let mut s = stream(seed, "acceptance:enumeration");
        let n = s.below(9);
        let cats: Vec<usize> = (0..n).map(|_| s.below(5)).collect();
        let bank_pairs: Vec<(usize, usize)> = (0..s.below(10))
            .map(|_| (1 + s.below(4), 1 + s.below(4)))
            .filter(|(o, t)| o != t)
            .collect();
        let bank = KnowledgeBank::new(bank_pairs, 5).map_err(|e| e.to_string())?;
        let pairs = enumerate_pairs(&cats, 0);
        let humans = cats.iter().filter(|&&c| c == 0).count();
        ensure(pairs.len() == humans * n.saturating_sub(1), || {
            format!("seed {seed}: pair count")
        })?;
        ensure(pairs == brute_pairs(&cats, 0), || format!("seed {seed}: pairs differ"))?;
        let triplets = enumerate_triplets(&cats, 0, &bank);
        ensure(triplets == brute_triplets(&cats, 0, &bank), || {
            format!("seed {seed}: triplets differ")
        })?;
        checked += 1;
    }
    Ok(format!("{checked} seeds, n <= 8, exact"))
}

fn fusion_oracle() -> Outcome {
    let mut s = stream(200, "acceptance:fusion");
    for k in 0..600 {
        let m = 1 + s.below(10);
        let r = s.below(31);
        let c = 1 + s.below(8);
        let binary = random_tensor(&mut s, m, c, 4.0);
        let ternary = random_tensor(&mut s, r, c, 4.0);
        let assignment: Vec<usize> = (0..r).map(|_| s.below(m)).collect();
        let alpha = 0.25 + s.unit() as f64;
        let got = fuse_ternary(&binary, &ternary, &assignment, alpha).map_err(|e| e.to_string())?;
        let want = from_mat(
            &group_by_fuse(&to_mat(&binary), &to_mat(&ternary), &assignment, alpha),
            c,
        );
        ensure(got == want, || {
            format!("instance {k}: fused rows differ from group-by sum")
        })?;
    }
    let (engine, fx) = fixture_engine(201, &FixtureSpec::default());
    let off = engine
        .with_fusion(FusionConfig {
            alpha: 0.0,
            beta: 0.0,
            lambda: 2.8,
        })
        .map_err(|e| e.to_string())?;
    for scene in &fx.scenes {
        let logits = off.forward(&scene.cast(), &fx.bank).map_err(|e| e.to_string())?;
        ensure(logits.fused == logits.binary, || {
            format!("{}: alpha=beta=0 not binary", scene.image_id)
        })?;
    }
    Ok("600 instances bitwise; alpha=beta=0 collapses to binary".into())
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let (beta, h) = (0.4, 1e-5);
    let mut worst = 0.0f64;
    for seed in 0..150u64 {
        let mut s = stream(seed, "acceptance:gradient");
        let refined = random_tensor(&mut s, 4, 6, 3.0);
        let semantic = random_tensor(&mut s, 4, 6, 3.0);
        let labels = LabelMatrix::new(4, 6, (0..24).map(|_| s.unit() < 0.25).collect()).map_err(|e| e.to_string())?;
        let loss_at = |sem: &Tensor<f64>| {
            let fused = fuse_semantic(&refined, sem, beta).unwrap();
            focal_loss(&fused, &labels, 2.0, 0.25).unwrap()
        };
        let analytic = loss_at(&semantic).grad.scale(beta);
        for k in 0..24 {
            let bump = |d: f64| {
                let mut v = semantic.data().to_vec();
                v[k] += d;
                loss_at(&Tensor::new(vec![4, 6], v).unwrap()).loss
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let g = analytic.data()[k];
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!("150 seeds, max relative error {worst:.2e}, {elapsed:.2?}"))
}

fn scoring_arithmetic() -> Outcome {
    let spot = score(0.0, 0.9f64, 0.8, 2.8);
    let want = 0.72f64.powf(2.8) * 0.5;
    ensure((spot - want).abs() < 1e-6, || format!("{spot} vs {want}"))?;
    ensure((spot - 0.199_297_1).abs() < 1e-6, || format!("{spot}"))?;
    ensure((score(0.0, 1.0f64, 1.0, 2.8) - 0.5).abs() < 1e-6, || {
        "unit confidences".into()
    })?;
    let mut s = stream(300, "acceptance:lambda");
    for _ in 0..10_000 {
        let (sh, so, x) = (
            0.01 + 0.99 * s.unit() as f64,
            0.01 + 0.99 * s.unit() as f64,
            8.0 * s.signed() as f64,
        );
        let (a, b) = (0.1 + 4.0 * s.unit() as f64, 0.1 + 4.0 * s.unit() as f64);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        ensure(score(x, sh, so, hi) <= score(x, sh, so, lo), || {
            format!("lambda {lo} -> {hi} increased score")
        })?;
    }
    Ok(format!("0.72^2.8 * 0.5 = {spot:.7}; monotone over 10000 draws"))
}

fn ap_oracle() -> Outcome {
    let mut instances = 0;
    for hits in all_hit_patterns(6) {
        let tp = hits.iter().filter(|&&h| h).count();
        for num_gt in tp.max(1)..=tp + 3 {
            let got: Ratio<i64> = ap_from_ranked_hits(&hits, num_gt).ok_or("no AP")?;
            let want = enumerated_ap(&hits, num_gt);
            ensure(got == want, || format!("{hits:?}/{num_gt}: {got} vs {want}"))?;
            instances += 1;
        }
    }
    let (engine, fx) = fixture_engine(301, &FixtureSpec::default());
    let results: Vec<_> = fx
        .scenes
        .iter()
        .map(|s| {
            let s = s.cast::<f64>();
            (s.image_id.clone(), engine.infer_scene(&s, &fx.bank).unwrap())
        })
        .collect();
    let preds = engine.prediction_file(&results);
    let report = evaluate(&preds, &GroundTruthFile::from_predictions(&preds, 0.0), 0.5).map_err(|e| e.to_string())?;
    ensure(report.map == 1.0, || {
        format!("perfect predictions give mAP {}", report.map)
    })?;
    Ok(format!("{instances} ranked instances exact; perfect mAP = 1.0"))
}

fn golden_json() -> String {
    let fx = generate(42, &FixtureSpec::default()).unwrap();
    let engine = Engine32::new(fx.config.clone(), fx.categories.clone(), &fx.weights).unwrap();
    let results: Vec<_> = fx
        .scenes
        .iter()
        .map(|s| (s.image_id.clone(), engine.infer_scene(s, &fx.bank).unwrap()))
        .collect();
    engine.prediction_file(&results).to_json()
}

fn multiset(v: Vec<ScoredInteraction<f64>>) -> Vec<String> {
    let mut k: Vec<String> = v
        .iter()
        .map(|s| {
            let scores: Vec<String> = s.scores.iter().map(|x| format!("{x:.9}")).collect();
            format!(
                "{:?}{:?}{}{}",
                s.human_box.to_array(),
                s.object_box.to_array(),
                s.object_category,
                scores.join(",")
            )
        })
        .collect();
    k.sort();
    k
}

fn end_to_end() -> Outcome {
    let first = golden_json();
    ensure(first == golden_json(), || "two runs differ".into())?;
    let committed =
        std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/seed42_predictions.json"))
            .map_err(|e| e.to_string())?;
    ensure(first == committed, || {
        "output differs from the committed golden file".into()
    })?;

    let (engine, fx) = fixture_engine(42, &FixtureSpec::default());
    let mut s = stream(42, "acceptance:permutation");
    for scene in &fx.scenes {
        let scene = scene.cast::<f64>();
        let base = multiset(engine.infer_scene(&scene, &fx.bank).map_err(|e| e.to_string())?);
        for _ in 0..10 {
            let mut order: Vec<usize> = (0..scene.detections.len()).collect();
            s.shuffle(&mut order);
            let got = multiset(
                engine
                    .infer_scene(&scene.permuted(&order), &fx.bank)
                    .map_err(|e| e.to_string())?,
            );
            ensure(got == base, || {
                format!("{}: permutation {order:?} changed output", scene.image_id)
            })?;
        }
    }

    let start = Instant::now();
    let failed: Vec<String> = run_selftest()
        .into_iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.to_string())
        .collect();
    let elapsed = start.elapsed();
    ensure(failed.is_empty(), || format!("selftest failures: {failed:?}"))?;
    within(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "golden byte-identical; 40 permutations preserved; selftest {elapsed:.2?}"
    ))
}

const DEFAULT_CONFIG_SNAPSHOT: &str = r#"{
  "dims": {
    "feature": 32,
    "model": 32,
    "context": 32,
    "text": 16
  },
  "heads": 2,
  "binary_blocks": 2,
  "ternary_blocks": 2,
  "contextual_blocks": 2,
  "act_length": 4,
  "prefix": {
    "manual": {
      "words": [
        "a",
        "photo",
        "of",
        "a"
      ]
    }
  },
  "fusion": {
    "alpha": 1.0,
    "beta": 0.4,
    "lambda": 2.8
  },
  "training_lambda": 1.0,
  "focal": {
    "gamma": 2.0,
    "alpha": 0.25
  },
  "spatial_eps": 0.001,
  "categories": null
}"#;

fn config_defaults() -> Outcome {
    let cfg = EngineConfig::default();
    let json = serde_json::to_string_pretty(&cfg).map_err(|e| e.to_string())?;
    ensure(json == DEFAULT_CONFIG_SNAPSHOT, || format!("snapshot differs:\n{json}"))?;
    ensure(cfg.fusion.lambda == 2.8 && cfg.training().fusion.lambda == 1.0, || {
        "lambda".into()
    })?;
    ensure(cfg.fusion.alpha == 1.0 && cfg.fusion.beta == 0.4, || {
        "alpha/beta".into()
    })?;
    ensure(cfg.act_length == 4, || "act length".into())?;
    ensure(
        (cfg.binary_blocks, cfg.ternary_blocks, cfg.contextual_blocks) == (2, 2, 2),
        || "block counts".into(),
    )?;
    ensure(matches!(cfg.prefix, PrefixMode::Manual { .. }), || "prefix".into())?;
    Ok("lambda 2.8/1.0, alpha 1.0, beta 0.4, [ACT] 4, 2 blocks per decoder".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("attention algebra suite", attention_algebra),
        ("enumeration oracles", enumeration_oracles),
        ("fusion oracle", fusion_oracle),
        ("focal gradient check", gradient_check),
        ("scoring arithmetic", scoring_arithmetic),
        ("AP oracle", ap_oracle),
        ("end-to-end determinism and equivariance", end_to_end),
        ("hyperparameter defaults", config_defaults),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", 8 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

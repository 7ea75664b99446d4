use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use crln_core::container::inspect;
use crln_core::eval::DEFAULT_IOU_THRESHOLD;
use crln_core::{
    evaluate, gen_fixtures, load_bank, load_scene, run_selftest, Engine, Error, FixtureSpec, FusionConfig,
    GroundTruthFile, KnowledgeBank, PredictionFile, Result, Scalar,
};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "crln", version, about = "Relational human-object interaction scoring engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Score every human-object pair of one or more scenes.
    Infer {
        /// Scene JSON file; repeat for several scenes.
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
        /// Engine config JSON naming the category table.
        #[arg(long)]
        config: PathBuf,
        /// Weights container.
        #[arg(long)]
        weights: PathBuf,
        /// Knowledge bank JSON; an empty bank disables the ternary stream.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Ternary-stream weight [default: from config, 1.0].
        #[arg(long)]
        alpha: Option<f64>,
        /// Prompt-stream weight [default: from config, 0.4].
        #[arg(long)]
        beta: Option<f64>,
        /// Detector-confidence exponent [default: from config, 2.8].
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
        /// Prediction file to write; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute mAP of a prediction file against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
        iou: f64,
        /// Full per-class report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a deterministic synthetic fixture set.
    GenFixtures {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Fixture size spec JSON; built-in defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest,
    /// List the tensors stored in a container.
    Inspect {
        #[arg(long)]
        container: PathBuf,
    },
}

fn infer<T: Scalar>(engine: &Engine<T>, scenes: &[PathBuf], bank: &KnowledgeBank) -> Result<PredictionFile> {
    let results = scenes
        .par_iter()
        .map(|path| {
            let scene = load_scene(path)?.cast::<T>();
            let scored = engine.infer_scene(&scene, bank)?;
            Ok((scene.image_id, scored))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(engine.prediction_file(&results))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Error::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_infer(
    scenes: &[PathBuf],
    config: &Path,
    weights: &Path,
    bank: Option<&Path>,
    alpha: Option<f64>,
    beta: Option<f64>,
    lambda: Option<f64>,
    precision: Precision,
    out: Option<&Path>,
) -> Result<()> {
    fn build<T: Scalar>(
        config: &Path,
        weights: &Path,
        alpha: Option<f64>,
        beta: Option<f64>,
        lambda: Option<f64>,
    ) -> Result<Engine<T>> {
        let engine = Engine::<T>::load(config, weights)?;
        let base = engine.config().fusion;
        engine.with_fusion(FusionConfig {
            alpha: alpha.unwrap_or(base.alpha),
            beta: beta.unwrap_or(base.beta),
            lambda: lambda.unwrap_or(base.lambda),
        })
    }
    let preds = match precision {
        Precision::F32 => {
            let engine = build::<f32>(config, weights, alpha, beta, lambda)?;
            let bank = match bank {
                Some(p) => load_bank(p, engine.categories())?,
                None => KnowledgeBank::empty(),
            };
            infer(&engine, scenes, &bank)?
        }
        Precision::F64 => {
            let engine = build::<f64>(config, weights, alpha, beta, lambda)?;
            let bank = match bank {
                Some(p) => load_bank(p, engine.categories())?,
                None => KnowledgeBank::empty(),
            };
            infer(&engine, scenes, &bank)?
        }
    };
    write_or_print(out, &preds.to_json())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Infer {
            scenes,
            config,
            weights,
            bank,
            alpha,
            beta,
            lambda,
            precision,
            out,
        } => {
            run_infer(
                &scenes,
                &config,
                &weights,
                bank.as_deref(),
                alpha,
                beta,
                lambda,
                precision,
                out.as_deref(),
            )?;
            Ok(true)
        }
        Command::Eval { pred, gt, iou, out } => {
            let report = evaluate(&PredictionFile::load(&pred)?, &GroundTruthFile::load(&gt)?, iou)?;
            println!(
                "mAP@{}: {:.6} over {} classes",
                report.iou_threshold, report.map, report.classes_evaluated
            );
            if let Some(out) = out {
                let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
                write_or_print(Some(&out), &json)?;
            }
            Ok(true)
        }
        Command::GenFixtures { seed, out_dir, spec } => {
            let spec = match spec {
                Some(p) => FixtureSpec::load(p)?,
                None => FixtureSpec::default(),
            };
            let paths = gen_fixtures(seed, &spec, &out_dir)?;
            println!(
                "wrote {} scenes, weights and ground truth to {}",
                paths.scenes.len(),
                out_dir.display()
            );
            Ok(true)
        }
        Command::Selftest => {
            let results = run_selftest();
            for r in &results {
                if r.passed {
                    println!("PASS {}", r.name);
                } else {
                    println!("FAIL {}: {}", r.name, r.detail);
                }
            }
            Ok(results.iter().all(|r| r.passed))
        }
        Command::Inspect { container } => {
            let bytes = std::fs::read(&container).map_err(|e| Error::Io {
                path: container.clone(),
                source: e,
            })?;
            let entries = inspect(&bytes)?;
            println!("{} tensors", entries.len());
            for e in entries {
                println!(
                    "{}\t{:?}\toffset={}\tbytes={}",
                    e.name, e.dims, e.offset, e.payload_bytes
                );
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 1 } else { 2 })
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use landgen::checkpoint::{load_checkpoint, save_checkpoint};
use landgen::cluvae::Variant;
use landgen::context::ContextGraph;
use landgen::error::{Error, Result};
use landgen::evaluation::{
    ablation_study, evaluate, evaluate_with_dump, square_size_study, stability_study, ConfigGenerator,
    ExperimentRunner, ReplayGenerator,
};
use landgen::grid::{load_dataset, save_dataset, synthesize_city, DatasetSample, GreenLevel, SynthesisParams};
use landgen::neural::Rng;
use landgen::pipeline::{train_pipeline, PipelineConfig};
use landgen::service::{serve, DEFAULT_PORT};

#[derive(Parser)]
#[command(name = "landgen", version, about = "Human-guided conditional land-use generation on synthetic cities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a city dataset.
    Synth(SynthArgs),
    /// Train a model (context VGAE then CVAE) and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "full")]
        variant: Variant,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on its held-out test samples.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "replay")]
        model: Option<PathBuf>,
        /// Generations per test condition.
        #[arg(long, default_value_t = 5)]
        gens: usize,
        /// Evaluation seed; defaults to the checkpoint's training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replay the original test configurations instead of generating.
        #[arg(long)]
        replay: bool,
        /// Also write the raw per-level tensors behind the report.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Print an aligned table instead of JSON.
        #[arg(long)]
        table: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate configurations for one context and green level.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..5))]
        level: u8,
        /// Take the context of this dataset sample (needs --data).
        #[arg(long, conflicts_with = "context_file", requires = "data")]
        context_id: Option<u64>,
        /// JSON file holding an 8-row feature matrix.
        #[arg(long, required_unless_present = "context_id")]
        context_file: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Round intensities to integer counts.
        #[arg(long)]
        round: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and compare the full model against all ablations.
    Ablation {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Number of training seeds to average over.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, default_value_t = 5)]
        gens: usize,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        table: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stability and square-size studies.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Serve the HTTP API (and optionally a static UI).
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, env = "LANDGEN_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Directory of static UI assets served under `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Retrain full and no_variational several times and report mean and variance.
    Stability {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 6)]
        runs: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        gens: usize,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        table: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate and retrain at several grid resolutions.
    SquareSize {
        #[arg(long, value_delimiter = ',', default_value = "5,10,25,50,100")]
        n_list: Vec<usize>,
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, default_value_t = 5)]
        gens: usize,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        table: bool,
    },
}

#[derive(Args, Clone)]
struct SynthArgs {
    /// Grid resolution N (N x N cells); for square-size studies, the reference resolution.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// POI categories M.
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Functional zone classes Z.
    #[arg(long, default_value_t = 6)]
    z: usize,
    /// Number of samples K.
    #[arg(long, default_value_t = 2000)]
    k: usize,
    /// Months of house-price history T.
    #[arg(long, default_value_t = 13)]
    t: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct ModelArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Zone-loss weight.
    #[arg(long, default_value_t = 0.55)]
    lambda: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// CVAE latent width L.
    #[arg(long, default_value_t = 32)]
    latent: usize,
    /// CVAE hidden width H.
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    vgae_epochs: usize,
}

impl ModelArgs {
    fn config(&self, variant: Variant, seed: u64) -> PipelineConfig {
        let mut config = PipelineConfig::new(variant, seed);
        config.lambda = self.lambda;
        config.latent = self.latent;
        config.hidden = self.hidden;
        config.train.epochs = self.epochs;
        config.train.learning_rate = self.lr;
        config.train.batch_size = self.batch;
        config.vgae.epochs = self.vgae_epochs;
        config
    }
}

impl SynthArgs {
    fn params(&self) -> SynthesisParams {
        SynthesisParams::new(self.n, self.m, self.z, self.k, self.t, self.seed)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn read_context_file(path: &Path) -> Result<ContextGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let rows = value.get("features").unwrap_or(&value);
    let rows: Vec<Vec<f64>> = serde_json::from_value(rows.clone())?;
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::param("context feature rows must have equal length"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let features = ndarray::Array2::from_shape_vec((rows.len(), width), flat)
        .map_err(|e| Error::param(e.to_string()))?;
    ContextGraph::from_features(features)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let samples = synthesize_city(&args.params())?;
            let out = args.out.ok_or_else(|| Error::param("--out is required"))?;
            save_dataset(&samples, &out)
        }
        Command::Train {
            data,
            variant,
            seed,
            model,
            out,
        } => {
            let samples = load_dataset(&data)?;
            let run = train_pipeline(&samples, &model.config(variant, seed))?;
            save_checkpoint(&run.model, &out)?;
            let o = &run.outcome;
            eprintln!(
                "trained {variant}: total loss {:.4} -> {:.4} over {} epochs",
                o.initial.total,
                o.final_loss.total,
                o.history.len()
            );
            Ok(())
        }
        Command::Eval {
            data,
            model,
            gens,
            seed,
            replay,
            dump,
            table,
            out,
        } => {
            let samples = load_dataset(&data)?;
            let trained = model.as_deref().map(load_checkpoint).transpose()?;
            let test: Vec<&DatasetSample> = match &trained {
                Some(m) => m.test_samples(&samples)?,
                None => samples.iter().collect(),
            };
            let seed = seed.or(trained.as_ref().map(|m| m.meta.seed)).unwrap_or(0);
            let generator: &dyn ConfigGenerator = match (&trained, replay) {
                (Some(m), false) => m,
                _ => &ReplayGenerator,
            };
            let report = match &dump {
                Some(path) => {
                    let (report, raw) = evaluate_with_dump(generator, &test, gens, seed)?;
                    std::fs::write(path, serde_json::to_string(&raw)?).map_err(|e| Error::io(path, e))?;
                    report
                }
                None => evaluate(generator, &test, gens, seed)?,
            };
            let text = if table { report.to_table() } else { to_json(&report)? };
            emit(out.as_deref(), &text)
        }
        Command::Generate {
            model,
            level,
            context_id,
            context_file,
            data,
            count,
            seed,
            round,
            out,
        } => {
            if count == 0 {
                return Err(Error::param("--count must be at least 1"));
            }
            let trained = load_checkpoint(&model)?;
            let context = match (context_id, context_file) {
                (Some(id), _) => {
                    let samples = load_dataset(data.as_deref().expect("clap requires --data"))?;
                    samples
                        .into_iter()
                        .find(|s| s.sample_id == id)
                        .ok_or_else(|| Error::NotFound(format!("sample {id}")))?
                        .context
                }
                (None, Some(path)) => read_context_file(&path)?,
                (None, None) => return Err(Error::param("give --context-id or --context-file")),
            };
            let level = GreenLevel::new(level as usize)?;
            let mut configs = trained.generate(&context, level, count, &mut Rng::new(seed))?;
            if round {
                configs = configs.iter().map(|c| c.rounded()).collect();
            }
            let body = serde_json::json!({
                "green_level": level.index(),
                "seed": seed,
                "configurations": configs.iter().map(|c| c.to_nested()).collect::<Vec<_>>(),
                "category_totals": configs.iter().map(|c| c.category_totals()).collect::<Vec<_>>(),
            });
            emit(out.as_deref(), &to_json(&body)?)
        }
        Command::Ablation {
            data,
            seed,
            seeds,
            gens,
            model,
            table,
            out,
        } => {
            let samples = load_dataset(&data)?;
            let mut runner = ExperimentRunner::new(&samples, model.config(Variant::Full, seed), gens);
            let seed_list: Vec<u64> = (0..seeds.max(1) as u64).map(|i| seed.wrapping_add(i)).collect();
            let report = ablation_study(&mut runner, &seed_list)?;
            let text = if table { report.to_table() } else { to_json(&report)? };
            emit(out.as_deref(), &text)
        }
        Command::Study(StudyCommand::Stability {
            data,
            runs,
            seed,
            gens,
            model,
            table,
            out,
        }) => {
            let samples = load_dataset(&data)?;
            let mut runner = ExperimentRunner::new(&samples, model.config(Variant::Full, seed), gens);
            let report = stability_study(&mut runner, runs, &[Variant::Full, Variant::NoVariational], seed)?;
            let text = if table { report.to_table() } else { to_json(&report)? };
            emit(out.as_deref(), &text)
        }
        Command::Study(StudyCommand::SquareSize {
            n_list,
            synth,
            gens,
            model,
            table,
        }) => {
            let config = model.config(Variant::Full, synth.seed);
            let report = square_size_study(&synth.params(), &n_list, &config, gens)?;
            let text = if table { report.to_table() } else { to_json(&report)? };
            emit(synth.out.as_deref(), &text)
        }
        Command::Serve {
            model,
            data,
            port,
            static_dir,
        } => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            runtime.block_on(serve(model, data, port, static_dir))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}

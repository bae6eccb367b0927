use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mtlsum::training::RunStatus;
use mtlsum_cli::commands::{self, DecodeArgs, EvalArgs, GradcheckArgs, SynthArgs, TrainArgs};
use mtlsum_cli::{exit_code, EXIT_NUMERIC, EXIT_OK};

/// Multi-task pointer-generator summarization.
///
/// Log verbosity follows MTLSUM_LOG (error, warn, info, debug); default info.
#[derive(Parser)]
#[command(name = "mtlsum", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run config.
    Train(TrainCmd),
    /// Beam-decode a JSON-lines corpus with a checkpoint.
    Decode(DecodeCmd),
    /// Score hypotheses against references.
    Eval(EvalCmd),
    /// Finite-difference check of the full loss on a tiny model.
    Gradcheck(GradcheckCmd),
    /// Generate the synthetic task corpora.
    Synth(SynthCmd),
}

#[derive(Args)]
struct TrainCmd {
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DecodeCmd {
    /// Checkpoint file or run directory.
    checkpoint: PathBuf,
    /// JSON-lines corpus.
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    task: Option<String>,
    /// Beam width [default: 4, or the run config's value]
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
}

#[derive(Args)]
struct EvalCmd {
    /// One hypothesis per line, plain or JSON with a `hypothesis` field.
    hypotheses: PathBuf,
    /// One reference per line, plain or JSON with `reference` or `target`.
    references: PathBuf,
    #[arg(long)]
    sources: Option<PathBuf>,
    /// Whitespace-separated keywords per line, or JSON with `keywords`.
    #[arg(long)]
    keywords: Option<PathBuf>,
    /// Write report.json, report.txt and scores.jsonl here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckCmd {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run the model graph in 32-bit floats.
    #[arg(long)]
    f32: bool,
    #[arg(long, default_value = "final")]
    preset: String,
    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 8)]
    emb_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    init_range: f64,
    #[arg(long)]
    no_coverage: bool,
    /// Finite-difference step [default: 1e-5]
    #[arg(long)]
    step: Option<f64>,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthCmd {
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "copy-oov,keyword-extract,subset-rewrite")]
    kinds: Vec<String>,
    #[arg(long, default_value_t = 50)]
    vocab: usize,
    #[arg(long, default_value_t = 20)]
    oov_pool: usize,
    #[arg(long, default_value_t = 5)]
    min_len: usize,
    #[arg(long, default_value_t = 15)]
    max_len: usize,
    #[arg(long, default_value_t = 5000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    valid: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
}

fn run(cli: Cli) -> mtlsum::Result<i32> {
    match cli.command {
        Command::Train(c) => {
            let outcome = commands::train(&TrainArgs {
                config: c.config,
                output_dir: c.output_dir,
                max_steps: c.max_steps,
                seed: c.seed,
            })?;
            println!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
            if let RunStatus::Diverged { step, detail } = &outcome.status {
                log::error!("numeric abort at step {step}: {detail}");
                return Ok(EXIT_NUMERIC);
            }
        }
        Command::Decode(c) => {
            let n = commands::decode(&DecodeArgs {
                checkpoint: c.checkpoint,
                input: c.input,
                output: c.output.clone(),
                task: c.task,
                beam: c.beam,
                max_len: c.max_len,
                min_len: c.min_len,
            })?;
            log::info!("wrote {n} records to {}", c.output.display());
        }
        Command::Eval(c) => {
            let report = commands::eval(&EvalArgs {
                hypotheses: c.hypotheses,
                references: c.references,
                sources: c.sources,
                keywords: c.keywords,
                out: c.out,
            })?;
            print!("{}", report.table());
        }
        Command::Gradcheck(c) => {
            if c.f32 {
                log::warn!(
                    "32-bit precision: tolerance relaxed to {:.0e}",
                    commands::gradcheck::F32_TOLERANCE
                );
            }
            let report = commands::gradcheck(&GradcheckArgs {
                seed: c.seed,
                f32: c.f32,
                preset: c.preset,
                gamma: c.gamma,
                lambda: c.lambda,
                hidden: c.hidden,
                emb_dim: c.emb_dim,
                init_range: c.init_range,
                coverage: !c.no_coverage,
                step: c.step,
            })?;
            if c.json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                for g in &report.groups {
                    println!("{:<12} {:>6} {:>10.3e}", g.name, g.size, g.max_rel_error);
                }
                println!(
                    "loss {:.12} worst relative error {:.3e} (tolerance {:.0e}) {}",
                    report.loss,
                    report.worst_rel_error,
                    report.tolerance,
                    if report.passed() { "PASS" } else { "FAIL" }
                );
            }
            if !report.passed() {
                return Ok(EXIT_NUMERIC);
            }
        }
        Command::Synth(c) => {
            let kinds = commands::synth(&SynthArgs {
                out: c.out.clone(),
                seed: c.seed,
                kinds: c.kinds,
                vocab: c.vocab,
                oov_pool: c.oov_pool,
                min_len: c.min_len,
                max_len: c.max_len,
                train: c.train,
                valid: c.valid,
                test: c.test,
            })?;
            log::info!("wrote {} corpora and run.toml under {}", kinds.len(), c.out.display());
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MTLSUM_LOG", "info")).init();
    let cli = Cli::parse();
    let code = run(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    });
    ExitCode::from(code as u8)
}

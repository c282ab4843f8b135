use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use starner_core::numerics::GRADIENT_FLOOR;
use starner_pipeline::bench::{bench, CSV_HEADER};
use starner_pipeline::dataset::{load_examples, read_records, write_records, Example};
use starner_pipeline::gradcheck::full_model_gradcheck;
use starner_pipeline::train::train_with;
use starner_pipeline::{generate_corpus, Checkpoint, Config, GrammarSpec, PipelineError};

#[derive(Parser)]
#[command(name = "starner", version, about = "Nested named entity tagging with star-graph attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled corpus as JSON lines.
    GenerateData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the grammar file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the per-step loss trace, one value per line.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a checkpoint on labelled data.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        per_type: bool,
        #[arg(long)]
        per_relation: bool,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
        /// Accepted for uniformity; evaluation is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Annotate sentences; existing entity fields are replaced.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Accepted for uniformity; prediction is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time forward passes against sentence length (CSV on stdout).
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare analytic and finite-difference gradients of the full loss.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 64)]
        coords: usize,
        #[arg(long, default_value_t = 5)]
        tokens: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<Config, PipelineError> {
    let mut config = Config::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn restore(path: &Path) -> Result<starner_pipeline::Trained, PipelineError> {
    Checkpoint::load(path)?.restore()
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::GenerateData { spec, out, seed } => {
            let mut spec = GrammarSpec::load(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let names = spec.type_names();
            let records: Vec<_> = generate_corpus(&spec)?.iter().map(|e| e.to_record(&names)).collect();
            write_records(&out, &records)?;
            eprintln!("wrote {} sentences to {}", records.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            trace,
        } => {
            let config = load_config(&config, seed)?;
            let examples = load_examples(&data, &config.type_names)?;
            let outcome = train_with(&config, &examples, |e| match e.train_f1 {
                Some(f1) => eprintln!("epoch {:>4}  loss {:.6}  train f1 {:.4}", e.epoch + 1, e.mean_loss, f1),
                None => eprintln!("epoch {:>4}  loss {:.6}", e.epoch + 1, e.mean_loss),
            })?;
            Checkpoint::from_trained(&outcome.trained).save(&out)?;
            if let Some(path) = trace {
                let text: String = outcome.loss_trace.iter().map(|l| format!("{l:?}\n")).collect();
                std::fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
            }
            eprintln!("seed {}; wrote {}", config.seed, out.display());
        }
        Command::Eval {
            ckpt,
            data,
            per_type,
            per_relation,
            json,
            seed: _,
        } => {
            let trained = restore(&ckpt)?;
            let examples = load_examples(&data, &trained.config.type_names)?;
            let report = trained.evaluate(&examples)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.table(per_type, per_relation));
            }
        }
        Command::Predict {
            ckpt,
            input,
            out,
            seed: _,
        } => {
            let trained = restore(&ckpt)?;
            let names = &trained.config.type_names;
            let mut records = read_records(&input)?;
            for r in &mut records {
                let entities = trained.predict(&r.tokens, r.pos.as_deref())?;
                let ex = Example {
                    tokens: Vec::new(),
                    pos: None,
                    entities,
                };
                r.entities = ex.to_record(names).entities;
            }
            write_records(&out, &records)?;
        }
        Command::Bench {
            config,
            sizes,
            runs,
            seed,
        } => {
            let config = load_config(&config, seed)?;
            println!("{CSV_HEADER}");
            for row in bench(&config, &sizes, runs)? {
                println!("{}", row.csv());
            }
        }
        Command::Gradcheck {
            config,
            eps,
            coords,
            tokens,
            tolerance,
            seed,
        } => {
            let config = load_config(&config, seed)?;
            let report = full_model_gradcheck(&config, tokens, eps, coords)?;
            let floored = report.floored_error(GRADIENT_FLOOR);
            println!("coordinates checked   {}", report.coords_checked);
            println!("max floored error     {floored:.3e}");
            println!("max relative error    {:.3e}", report.max_rel_error);
            println!("max absolute error    {:.3e}", report.max_abs_error());
            if let Some((name, index, a, n)) = &report.worst {
                println!("worst coordinate      {name}[{index}] analytic {a:.6e} numeric {n:.6e}");
            }
            if floored > tolerance {
                return Err(PipelineError::GradCheck(format!(
                    "gradient check failed: {floored:.3e} > {tolerance:.1e}"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {message}", e.kind());
            ExitCode::FAILURE
        }
    }
}

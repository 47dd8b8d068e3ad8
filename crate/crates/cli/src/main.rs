use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lstmvar::cell::GateVariant;
use lstmvar::data::convert_text;
use lstmvar::runner::{
    evaluate, gradcheck_with_hook, load_checkpoint, load_datasets, load_for_checkpoint,
    params_table, train_on, write_run_outputs, ExperimentConfig, GradcheckSpec, GRADCHECK_TOLERANCE,
};

#[derive(Parser)]
#[command(name = "lstmvar", version, about = "Train and check LSTM cells with simplified gates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics, curves and the best checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config field, e.g. `--set variant=lstm2` or `--set dropout.signal_rate=0.1`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Do not print per-epoch progress.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on a dataset (`idx:<images>,<labels>` or `tokens:<path>`).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
    },
    /// Compare backpropagation against finite differences on a random instance.
    Gradcheck {
        #[arg(long)]
        variant: GateVariant,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long = "T")]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        /// Perturb the analytic gradient before comparing (negative control).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Print parameter counts for every variant at the experiment sizes.
    ParamsTable,
    /// Turn raw `<label>\t<text>` files into token files with a shared vocabulary.
    ConvertText {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long = "out", required = true)]
        outputs: Vec<PathBuf>,
        #[arg(long)]
        vocab: usize,
    },
}

enum Failure {
    Lib(lstmvar::Error),
    Gradcheck(String),
}

impl From<lstmvar::Error> for Failure {
    fn from(e: lstmvar::Error) -> Self {
        Failure::Lib(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
        Err(Failure::Gradcheck(msg)) => {
            eprintln!("error[gradcheck]: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train {
            config,
            overrides,
            quiet,
        } => {
            let config = ExperimentConfig::load(&config, &overrides)?;
            let data = load_datasets(&config, Path::new(""))?;
            let outcome = train_on(&config, &data, |r| {
                if !quiet {
                    eprintln!(
                        "epoch {:>3}  loss {:.4}  train {:.4}  test {:.4}  lr {:.3e}",
                        r.epoch, r.train_loss, r.train_acc, r.test_acc, r.lr
                    );
                }
            })?;
            let dir = PathBuf::from(&config.output_dir);
            write_run_outputs(&outcome, &dir)?;
            std::fs::write(
                dir.join("config.json"),
                serde_json::to_string_pretty(&config).expect("config serializes"),
            )
            .map_err(|e| lstmvar::Error::io(dir.join("config.json"), e))?;
            match outcome.checkpoint.best_epoch {
                Some(e) => println!(
                    "best epoch {e}: test accuracy {:.4}; outputs in {}",
                    outcome.history[e].test_acc,
                    dir.display()
                ),
                None => println!("no epochs run; outputs in {}", dir.display()),
            }
        }
        Command::Eval { checkpoint, data } => {
            let cp = load_checkpoint(&checkpoint)?;
            let dataset = load_for_checkpoint(&cp, &data)?;
            let (loss, acc) = evaluate(&cp.model, &dataset)?;
            println!("samples {}  loss {loss:.6}  accuracy {acc:.6}", dataset.len());
        }
        Command::Gradcheck {
            variant,
            m,
            n,
            steps,
            seed,
            batch,
            corrupt,
        } => {
            let spec = GradcheckSpec {
                variant,
                input: m,
                hidden: n,
                steps,
                batch,
                seed,
            };
            if steps == 0 || batch == 0 {
                return Err(lstmvar::Error::Config("T and batch must be positive".into()).into());
            }
            let report = gradcheck_with_hook(spec, |g| {
                if corrupt {
                    g.candidate.b.as_mut().expect("candidate bias").as_mut_slice()[0] += 1e-2;
                }
            })?;
            for (name, err) in &report.per_tensor {
                println!("  {name:<8} {err:.3e}");
            }
            println!("{}", report.summary());
            if !report.passed {
                return Err(Failure::Gradcheck(format!(
                    "max relative error {:.3e} exceeds {GRADCHECK_TOLERANCE:e}",
                    report.max_relative_error
                )));
            }
        }
        Command::ParamsTable => print!("{}", params_table()),
        Command::ConvertText {
            inputs,
            outputs,
            vocab,
        } => {
            let s = convert_text(&inputs, &outputs, vocab)?;
            println!(
                "converted {} documents; {} distinct words, ids above {vocab} written as OOV",
                s.documents, s.distinct_words
            );
        }
    }
    Ok(())
}

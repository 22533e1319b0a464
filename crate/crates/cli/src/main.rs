use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use match3gen_cli::commands::*;
use match3gen_cli::service::{serve, ServeOptions};

#[derive(Parser)]
#[command(name = "match3gen", version, about = "Generate, annotate, train on, and evaluate match-3 level layouts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write rule-based layouts (not yet annotated).
    GenDataset(GenDatasetArgs),
    /// Run the bot on every layout and assign splits.
    Annotate(AnnotateArgs),
    Train(TrainArgs),
    /// Pick the best checkpoint in a directory.
    Select(SelectArgs),
    Generate(GenerateArgs),
    /// Run the 144-level sweep and the metric suite on one checkpoint.
    Evaluate(EvaluateArgs),
    /// Train both variants and compare them.
    Ablation(AblationArgs),
    Serve(ServeArgs),
    /// gen-dataset, annotate, train, select, evaluate.
    Pipeline(PipelineArgs),
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory of static UI files served under `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Concurrent bot validations.
    #[arg(long, default_value_t = 2)]
    workers: usize,
    #[command(flatten)]
    bot: BotArgs,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDataset(a) => {
            let n = gen_dataset(&a)?;
            eprintln!("wrote {n} layouts to {}", a.out.display());
        }
        Command::Annotate(a) => {
            let m = annotate_cmd(&a)?;
            eprintln!(
                "annotated {} levels (m_min {}, m_max {}, {:.2}% of TRAIN valid)",
                m.levels.len(),
                m.m_min,
                m.m_max,
                m.valid_pct(20.0)
            );
        }
        Command::Train(a) => {
            let r = train_cmd(&a)?;
            if let Some(last) = r.history.last() {
                eprintln!("epoch {} ce {:.4} kl {:.4}", last.epoch, last.ce, last.kl);
            }
            eprintln!("{} checkpoints written to {}", r.checkpoints.len(), a.out.display());
        }
        Command::Select(a) => {
            let s = select_cmd(&a)?;
            for (epoch, score) in &s.scores {
                eprintln!("epoch {epoch:>6}  score {score:.2}");
            }
            println!("{}", s.path.display());
        }
        Command::Generate(a) => {
            let text = generate_cmd(&a)?;
            if a.out.is_none() {
                std::io::stdout().write_all(text.as_bytes())?;
            }
        }
        Command::Evaluate(a) => {
            let r = evaluate_cmd(&a)?;
            println!("{}", r.summary());
        }
        Command::Ablation(a) => {
            let r = ablation_cmd(&a)?;
            println!("{}", r.avalon.summary());
            println!("{}", r.vanilla.summary());
            println!("dataset valid {:.2}%", r.dataset_valid_pct);
        }
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(ServeOptions {
                model: a.model,
                addr: a.addr,
                static_dir: a.static_dir,
                workers: a.workers,
                bot: a.bot.config(),
            }))?;
        }
        Command::Pipeline(a) => {
            let out = pipeline_cmd(&a)?;
            eprintln!("report written to {}", out.report.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ichain::incremental::StreamMode;
use ichain::trainer::{Intermediate, Stage, TrainMode};
use ichain::Result;
use ichain_cli::eval::{evaluate, EvalArgs, InputKind, SplitArg};
use ichain_cli::layout::Regime;
use ichain_cli::train::{train, TrainArgs, TrainOutcome};
use ichain_cli::{exit_code, generate, report, tools, RunConfig};

#[derive(Parser)]
#[command(name = "ichain", version, about = "Incremental speech chain experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Nonincremental,
    Incremental,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nonincremental => TrainMode::Nonincremental,
            ModeArg::Incremental => TrainMode::Incremental,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum IntermediateArg {
    TeacherForcing,
    Greedy,
}

impl From<IntermediateArg> for Intermediate {
    fn from(m: IntermediateArg) -> Self {
        match m {
            IntermediateArg::TeacherForcing => Intermediate::TeacherForcing,
            IntermediateArg::Greedy => Intermediate::Greedy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum StreamArg {
    Isr,
    Itts,
    IsrToItts,
    IttsToIsr,
}

impl From<StreamArg> for StreamMode {
    fn from(m: StreamArg) -> Self {
        match m {
            StreamArg::Isr => StreamMode::Isr,
            StreamArg::Itts => StreamMode::Itts,
            StreamArg::IsrToItts => StreamMode::IsrToItts,
            StreamArg::IttsToIsr => StreamMode::IttsToIsr,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Replace an existing corpus.
        #[arg(long)]
        force: bool,
    },
    /// Run one training stage.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        intermediate: Option<IntermediateArg>,
        /// Continue from the saved session of this run.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs; resume later with --resume.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Score a trained pair on natural or synthetic input.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "natural")]
        input: InputKind,
        #[arg(long, value_enum, default_value = "independent")]
        regime: Regime,
        #[arg(long, value_enum, default_value = "dev")]
        split: SplitArg,
    },
    /// Tabulate the evaluation records of a run directory.
    Report {
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value = "dev")]
        split: SplitArg,
    },
    /// Export teacher segment alignments.
    Align {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Stream utterances through the incremental pair and record each step.
    Stream {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: StreamArg,
        #[arg(long, value_enum, default_value = "independent")]
        regime: Regime,
        #[arg(long, value_enum, default_value = "dev")]
        split: SplitArg,
        #[arg(long)]
        id: Option<String>,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { config, force } => {
            let g = generate::generate(&RunConfig::load(&config)?, force)?;
            println!("generated {} utterances", g.utterances);
        }
        Command::Train {
            config,
            stage,
            mode,
            intermediate,
            resume,
            max_epochs,
        } => {
            let args = TrainArgs {
                stage: if stage == 1 { Stage::One } else { Stage::Two },
                mode: mode.map(Into::into),
                intermediate: intermediate.map(Into::into),
                resume,
                max_epochs,
            };
            match train(&RunConfig::load(&config)?, &args)? {
                TrainOutcome::Completed {
                    run,
                    recognizer,
                    synthesizer,
                } => println!("{run}: wrote {} and {}", recognizer.display(), synthesizer.display()),
                TrainOutcome::Interrupted { run, epoch } => {
                    println!("{run}: stopped after epoch {epoch}; continue with --resume")
                }
            }
        }
        Command::Eval {
            config,
            mode,
            input,
            regime,
            split,
        } => {
            let args = EvalArgs {
                mode: mode.into(),
                regime,
                input,
                split: split.into(),
            };
            let r = evaluate(&RunConfig::load(&config)?, &args)?;
            println!(
                "{}: cer {:.2}% feature loss {:.4} delay {:.4} s / {:.1} chars",
                r.id, r.cer, r.feature_loss, r.delay_seconds, r.delay_characters
            );
        }
        Command::Report { run_dir, split } => {
            let r = report::report(&run_dir, split.into())?;
            print!("{}", r.table);
        }
        Command::Align { config, split } => {
            let a = tools::align(&RunConfig::load(&config)?, split.into())?;
            println!("aligned {} utterances into {}", a.utterances, a.path.display());
            if let Some(avg) = a.avg_main_char_blocks {
                println!("average main segment: {avg:.3} character blocks");
            }
        }
        Command::Stream {
            config,
            mode,
            regime,
            split,
            id,
        } => {
            let p = tools::stream(&RunConfig::load(&config)?, mode.into(), regime, split.into(), id.as_deref())?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

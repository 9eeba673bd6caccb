use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use setofsets::config::{load_config, RunConfig};
use setofsets::evolver::Mode;
use setofsets::pipeline;
use setofsets::Result;

#[derive(Parser)]
#[command(
    name = "setofsets",
    about = "Evolve per-task Pareto sets of pruned specialist subnetworks from one shared net"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the engine base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the run directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override the arms, e.g. `multitask,singletask`.
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<String>>,

    /// Override the number of repeat seeds per arm.
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the task suite and pretrain the shared net.
    Pretrain(CommonArgs),
    /// Evolve the mask populations for every requested arm and seed.
    Evolve(CommonArgs),
    /// Fine-tune evolved candidates and export the specialist set.
    Finalize(CommonArgs),
    /// Emit scatter/trend CSVs and the markdown summary for a finished run.
    Report(CommonArgs),
    /// All four stages in order.
    Run(CommonArgs),
}

fn parse_arm(text: &str) -> Result<Mode> {
    match text {
        "multitask" => Ok(Mode::Multitask),
        "singletask" => Ok(Mode::Singletask),
        other => Err(setofsets::Error::Validation {
            field: "arms".to_string(),
            msg: format!("unknown arm `{other}` (expected multitask or singletask)"),
        }),
    }
}

fn effective_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.engine.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.display().to_string();
    }
    if let Some(arms) = &args.arms {
        config.arms = arms
            .iter()
            .map(|a| parse_arm(a))
            .collect::<Result<Vec<Mode>>>()?;
    }
    if let Some(repeats) = args.repeats {
        config.repeats = repeats;
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Pretrain(args) => {
            let path = pipeline::cmd_pretrain(&effective_config(args)?)?;
            println!("wrote {}", path.display());
        }
        Command::Evolve(args) => {
            let config = effective_config(args)?;
            pipeline::cmd_evolve(&config)?;
            println!("evolve artifacts in {}/evolve", config.output_dir);
        }
        Command::Finalize(args) => {
            let path = pipeline::cmd_finalize(&effective_config(args)?)?;
            println!("wrote {}", path.display());
        }
        Command::Report(args) => {
            let config = effective_config(args)?;
            pipeline::cmd_report(std::path::Path::new(&config.output_dir))?;
            println!("report in {}/report", config.output_dir);
        }
        Command::Run(args) => {
            let config = effective_config(args)?;
            pipeline::cmd_run(&config)?;
            println!("run complete in {}", config.output_dir);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}] {e}", e.tag());
            ExitCode::FAILURE
        }
    }
}

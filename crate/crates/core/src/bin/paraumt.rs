use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use paraumt_core::fixtures::write_pipeline_fixture;
use paraumt_core::pipeline::{exit_code, AblationAxis, Pipeline, PipelineConfig, Profile, Stage};
use paraumt_core::{Error, Result};

/// Paraphrase generation by unsupervised translation between corpus clusters.
#[derive(Parser)]
#[command(name = "paraumt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides PARAUMT_OUT and the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// paper | desk
    #[arg(long)]
    profile: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    Cluster(StageArgs),
    ReviewReport(StageArgs),
    Pair(StageArgs),
    TrainUmt(StageArgs),
    Distill(StageArgs),
    Filter(StageArgs),
    TrainSurrogate(StageArgs),
    Finetune(StageArgs),
    Paraphrase(StageArgs),
    Eval(StageArgs),
    Ablate {
        #[command(flatten)]
        args: StageArgs,
        /// Restrict to these axes (default: every axis with values).
        #[arg(long = "axis")]
        axes: Vec<String>,
    },
    /// cluster, pair, train-umt, distill, filter, train-surrogate, eval
    All(StageArgs),
    /// Write the synthetic four-dialect fixture and a desk config.
    Fixture {
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(args: &StageArgs) -> Result<Pipeline> {
    let profile = args.profile.as_deref().map(str::parse::<Profile>).transpose()?;
    let mut config = PipelineConfig::load(&args.config, profile)?;
    if let Some(out) = args.out.clone().or_else(|| std::env::var_os("PARAUMT_OUT").map(PathBuf::from)) {
        config.output_dir = out;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Pipeline::new(config)
}

fn run_stages(args: &StageArgs, stages: &[Stage]) -> Result<()> {
    let pipeline = load(args)?;
    for &stage in stages {
        let t0 = Instant::now();
        let outcome = pipeline.run(stage)?;
        println!("{stage}: {} ({:.1}s)", outcome.summary, t0.elapsed().as_secs_f64());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let single = |args: &StageArgs, stage| run_stages(args, &[stage]);
    match cli.command {
        Command::Cluster(a) => single(&a, Stage::Cluster),
        Command::ReviewReport(a) => single(&a, Stage::ReviewReport),
        Command::Pair(a) => single(&a, Stage::Pair),
        Command::TrainUmt(a) => single(&a, Stage::TrainUmt),
        Command::Distill(a) => single(&a, Stage::Distill),
        Command::Filter(a) => single(&a, Stage::Filter),
        Command::TrainSurrogate(a) => single(&a, Stage::TrainSurrogate),
        Command::Finetune(a) => single(&a, Stage::Finetune),
        Command::Paraphrase(a) => single(&a, Stage::Paraphrase),
        Command::Eval(a) => single(&a, Stage::Eval),
        Command::All(a) => run_stages(&a, &Stage::MAIN),
        Command::Ablate { args, axes } => {
            let pipeline = load(&args)?;
            let axes = if axes.is_empty() {
                AblationAxis::ALL.to_vec()
            } else {
                axes.iter()
                    .map(|a| {
                        a.parse().map_err(|_| Error::Config {
                            field: "--axis".into(),
                            message: format!("unknown axis `{a}`"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let outcome = pipeline.run_ablation(&axes)?;
            println!("ablate: {}", outcome.summary);
            for p in outcome.outputs.iter().filter(|p| p.extension().is_some_and(|e| e == "md")) {
                print!("{}", std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?);
            }
            Ok(())
        }
        Command::Fixture { dir, seed } => {
            let f = write_pipeline_fixture(&dir, seed)?;
            println!("wrote fixture; run: paraumt all --config {}", f.config.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use terrain_qd::commands::{self, ExportKind};
use terrain_qd::error::{CliError, EXIT_USAGE};
use terrain_qd::pool::default_workers;
use terrain_qd::{Overrides, RunConfig};
use terrain_qd_core::DescriptorMode;

#[derive(Parser)]
#[command(name = "terrain-qd", version, about = "Quality-diversity search for terrains that break legged-robot controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the QD search and write a run directory.
    Run(RunArgs),
    /// Run with alpha = 1 and alpha = 0 and compare the archives' penalty STD.
    StdAblation(RunArgs),
    /// Export an archive as heightmaps or plot-ready CSV.
    Export(ExportArgs),
    /// Evaluate one genome file and print the report as JSON.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Cassie,
    Anymal,
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Heightmaps,
    Summary,
    ParallelCoords,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Iterations.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    emitters: Option<usize>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    episodes: Option<u32>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    offset: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    min_f: Option<f64>,
    #[arg(long)]
    archive_learning_rate: Option<f64>,
    /// Raster cell size in meters.
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    snapshot_interval: Option<u64>,
    /// External evaluator command line (split on whitespace).
    #[arg(long)]
    external: Option<String>,
    /// Per-episode timeout for the external evaluator, in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Evaluation threads (default: logical cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// No progress lines on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct ExportArgs {
    /// Archive JSON (final archive or snapshot).
    archive: PathBuf,
    #[arg(value_enum)]
    what: What,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    output: PathBuf,
    /// Raster cell size for heightmaps, in meters.
    #[arg(long, default_value_t = terrain_qd_core::terrain::DEFAULT_RESOLUTION_M)]
    resolution: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Genome file: {"params": [64 numbers]}.
    genome: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Evaluation seed (an elite's `eval_seed` reproduces its report).
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
}

impl ConfigArgs {
    fn resolve(self, output: Option<PathBuf>) -> Result<(RunConfig, usize), CliError> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let overrides = Overrides {
            mode: self.mode.map(|m| match m {
                Mode::Cassie => DescriptorMode::Cassie,
                Mode::Anymal => DescriptorMode::Anymal,
            }),
            budget: self.budget,
            emitters: self.emitters,
            population: self.population,
            episodes: self.episodes,
            alpha: self.alpha,
            lambda: self.lambda,
            offset: self.offset,
            min_f: self.min_f,
            archive_learning_rate: self.archive_learning_rate,
            resolution_m: self.resolution,
            seed: self.seed,
            snapshot_interval: self.snapshot_interval,
            external: self.external.map(|c| c.split_whitespace().map(String::from).collect()),
            timeout_s: self.timeout,
            output,
        };
        let workers = match self.workers {
            Some(0) => return Err(CliError::config("workers", "must be at least 1")),
            Some(n) => n,
            None => default_workers(),
        };
        let config = overrides.apply(base);
        config.validate()?;
        Ok((config, workers))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let (config, workers) = args.cfg.resolve(args.output)?;
            let out = commands::cmd_run(&config, workers, !args.quiet)?;
            let m = out.log.last().map(|r| r.metrics);
            if let Some(m) = m {
                println!(
                    "{}: {} cells, qd score {}, mean fitness {}",
                    out.config.output.display(),
                    m.archive_size,
                    m.qd_score,
                    m.mean_fitness
                );
            }
        }
        Command::StdAblation(args) => {
            let (config, workers) = args.cfg.resolve(args.output)?;
            let out = commands::cmd_std_ablation(&config, workers, !args.quiet)?;
            print!("{}", commands::ablation_csv(&out.rows));
        }
        Command::Export(args) => {
            let kind = match args.what {
                What::Heightmaps => ExportKind::Heightmaps,
                What::Summary => ExportKind::Summary,
                What::ParallelCoords => ExportKind::ParallelCoords,
            };
            for path in commands::cmd_export(&args.archive, kind, &args.output, args.resolution)? {
                println!("{}", path.display());
            }
        }
        Command::Eval(args) => {
            let (config, workers) = args.cfg.resolve(None)?;
            let out = commands::cmd_eval(&args.genome, &config, args.eval_seed, workers)?;
            println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

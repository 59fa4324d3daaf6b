use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use tattnet::config::{RunConfig, Variant};
use tattnet::data::{load_journeys_with, synthetic::generate_synthetic, write_journeys, PatientJourney};
use tattnet::error::{Error, Result};
use tattnet::run;

#[derive(Parser)]
#[command(name = "tattnet", version, about = "Temporal attention network for irregular clinical time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with [model], [train], [data] and [synthetic] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the model seed; also drives splitting and batch order.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; every artifact is written below it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic journey file at <out>/journeys.jsonl.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Split, normalize, train and evaluate on the test subset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a trained run on one subset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// train, valid or test.
        #[arg(long, default_value = "test")]
        subset: String,
    },
    /// Write the attention maps of one journey as CSV files.
    ExportAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Journey id.
        #[arg(long)]
        journey: String,
    },
    /// Train the full model and its ablated variants over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Comma-separated variant names; all when omitted.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
}

fn load_config(common: &Common) -> Result<(RunConfig, u64)> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = common.seed.unwrap_or(cfg.model.seed);
    Ok((cfg, seed))
}

fn load_data(path: &Path, cfg: &RunConfig) -> Result<Vec<PatientJourney>> {
    let journeys = load_journeys_with(path, &cfg.data.fallback)?;
    log::info!("loaded {} journeys from {}", journeys.len(), path.display());
    Ok(journeys)
}

fn parse_variants(names: &[String]) -> Result<Vec<Variant>> {
    if names.is_empty() {
        return Ok(Variant::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| {
            Variant::ALL
                .into_iter()
                .find(|v| v.name() == n)
                .ok_or_else(|| Error::Config(format!("unknown variant {n:?}")))
        })
        .collect()
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let (cfg, seed) = load_config(&common)?;
            let journeys = generate_synthetic(&cfg.synthetic, seed)?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            let path = common.out.join("journeys.jsonl");
            write_journeys(&path, &journeys)?;
            let pos = journeys.iter().filter(|j| j.label == 1).count();
            println!("wrote {} journeys ({pos} positive) to {}", journeys.len(), path.display());
        }
        Command::Train { common, data } => {
            let (cfg, seed) = load_config(&common)?;
            let journeys = load_data(&data, &cfg)?;
            let reports = run::train_repeats(&journeys, &cfg, seed, &common.out)?;
            for r in &reports {
                print!("{}", r.to_text());
            }
        }
        Command::Eval { common, data, run: run_dir, subset } => {
            let (cfg, _) = load_config(&common)?;
            let journeys = load_data(&data, &cfg)?;
            let report = run::eval_run(&run_dir, &journeys, &subset)?;
            run::write_text(&common.out.join(run::METRICS_FILE), &report.to_text())?;
            print!("{}", report.to_text());
        }
        Command::ExportAttention { common, data, run: run_dir, journey } => {
            let (cfg, _) = load_config(&common)?;
            let journeys = load_data(&data, &cfg)?;
            let files = run::export_run(&run_dir, &journeys, &journey, &common.out)?;
            println!("wrote {} files to {}", files.len(), common.out.display());
        }
        Command::Ablate { common, data, runs, variants } => {
            let (cfg, seed) = load_config(&common)?;
            let variants = parse_variants(&variants)?;
            let journeys = load_data(&data, &cfg)?;
            let rows = run::ablate(&journeys, &cfg, &variants, seed, runs, Some(&common.out))?;
            print!("{}", run::ablation_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

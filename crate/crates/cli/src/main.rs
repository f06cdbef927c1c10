use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coadapt_cli::analyze::{collect_inputs, comparison_csv, load_trace, summary_csv};
use coadapt_cli::config::{ExperimentConfig, KvDoc};
use coadapt_cli::experiment::{check_divergence, plan, run_all, write_datasets, write_outputs};
use coadapt_cli::presets::{preset_doc, preset_names, with_base};
use coadapt_cli::stability::{
    features_csv, load_network_features, parse_features, report, FeatureInput, SimulationSettings,
};
use coadapt_cli::{exit_code, EXIT_CONFIG};
use coadapt_core::agents::BackupSelector;
use coadapt_core::{Error, Result};

#[derive(Parser)]
#[command(name = "coadapt", version, about = "Feature co-adaptation experiments for offline TD learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect offline datasets, one per seed.
    GenData(ExperimentArgs),
    /// Train every variant and seed; writes traces, parameters and datasets.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Summarize trace CSVs. Inputs are files or directories, optionally `label=path`.
    Analyze {
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Metric used for the pairwise comparison.
        #[arg(long, default_value = "final_return")]
        metric: String,
    },
    /// Eigenvalues of the TD matrix, stability verdict and trace condition.
    Stability(StabilityArgs),
    /// Show the presets built into the binary.
    ListPresets,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    preset: Option<String>,
    /// Flat key = value file layered over the preset (or the base preset).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override, applied last.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Replaces the configured seed list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StabilityArgs {
    /// CSV with phi_* and next_* columns.
    #[arg(long, conflicts_with_all = ["dataset", "params"])]
    features: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, requires = "params")]
    dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    params: Option<PathBuf>,
    /// Backup used to pick next-state features: sarsa, expected, max or mc.
    #[arg(long, default_value = "sarsa")]
    selector: String,
    /// Also run expected linear TD on the features.
    #[arg(long)]
    simulate: bool,
    #[arg(long, default_value_t = 200_000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    eta: f64,
    /// Write the analysed features as CSV.
    #[arg(long)]
    dump_features: Option<PathBuf>,
}

fn init_logging() -> Result<()> {
    let level = match std::env::var("COADAPT_LOG").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Error,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => return Err(Error::config(format!("COADAPT_LOG must be quiet, info or debug, not '{other}'"))),
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut doc = match &args.preset {
        Some(name) => preset_doc(name)?,
        None => preset_doc("base")?,
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let user = KvDoc::parse(&text)?;
        doc = if args.preset.is_some() {
            doc.merge(&user);
            doc
        } else {
            with_base(&user)?
        };
    }
    for s in &args.set {
        doc.set_assignment(s)?;
    }
    let cfg = ExperimentConfig::from_doc(&doc)?;
    if args.seeds.is_empty() {
        Ok(cfg)
    } else {
        cfg.with_seeds(args.seeds.clone())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ListPresets => {
            for (name, description) in preset_names() {
                println!("{name:<20} {description}");
            }
        }
        Command::GenData(exp) => {
            let cfg = load_config(&exp)?;
            for p in write_datasets(&exp.out, &cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Train { exp, jobs } => {
            let cfg = load_config(&exp)?;
            if jobs == 0 {
                return Err(Error::config("--jobs must be at least 1"));
            }
            let specs = plan(&cfg)?;
            // surface dataset mismatches before any training starts
            if let Some(path) = &cfg.data.file {
                let data = coadapt_core::envdata::OfflineDataset::read(path)?;
                for (_, variant) in cfg.variants()? {
                    coadapt_cli::experiment::check_dataset(&variant, &data)?;
                }
            }
            let runs = run_all(&specs, jobs)?;
            for p in write_outputs(&exp.out, &cfg, &runs)? {
                println!("{}", p.display());
            }
            check_divergence(&runs)?;
        }
        Command::Analyze { inputs, out, metric } => {
            let traces = collect_inputs(&inputs)?
                .iter()
                .map(|(label, path)| load_trace(path, label.as_deref()))
                .collect::<Result<Vec<_>>>()?;
            let summary = summary_csv(&traces)?;
            let comparison = comparison_csv(&traces, &metric)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_file(&out.join("summary.csv"), &summary)?;
            write_file(&out.join("comparison.csv"), &comparison)?;
            println!("{}", out.join("summary.csv").display());
            println!("{}", out.join("comparison.csv").display());
        }
        Command::Stability(args) => {
            let input: FeatureInput = match (&args.features, &args.dataset, &args.params) {
                (Some(path), _, _) => {
                    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    parse_features(&text, args.gamma)?
                }
                (None, Some(d), Some(p)) => load_network_features(d, p, BackupSelector::parse(&args.selector)?)?,
                _ => return Err(Error::config("give --features, or --dataset with --params")),
            };
            if let Some(path) = &args.dump_features {
                write_file(path, &features_csv(&input))?;
            }
            let sim = args.simulate.then_some(SimulationSettings {
                eta: args.eta,
                steps: args.steps,
            });
            print!("{}", report(&input, sim.as_ref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_logging() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

//! Command line interface for the workbench: scenario runs, config
//! generation, model training, prediction, and the live HTTP adapter.

use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use dohbench::clock::RealClock;
use dohbench::genconfig::generate_config;
use dohbench::live::{exfil_live, serve_requests};
use dohbench::predict::predict_command;
use dohbench::scenario::{run_scenario, ScenarioOptions};
use dohbench::train::{train_command, TrainOptions};
use dohcore::client::{render_stats, Clock, ExfilConfig};
use dohcore::detect::render_summary_table;
use dohcore::server::ExfilServer;

#[derive(Parser)]
#[command(
    name = "dohbench",
    version,
    about = "DNS-over-HTTPS exfiltration and detection workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config end to end on the simulated loopback path
    Run {
        /// Scenario config JSON file
        #[arg(long)]
        config: PathBuf,
        /// Directory the run output tree is created under
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Override the config's RNG seed
        #[arg(long)]
        seed: Option<u64>,
        /// Fraction of each virtual delay really slept (0 = instant)
        #[arg(long, default_value_t = 0.0)]
        time_scale: f64,
        /// Directory holding `*_model.json` bundles
        #[arg(long, default_value = "models")]
        models: PathBuf,
    },
    /// Interactively create a scenario config file
    GenConfig {
        /// Announce creation of a new configuration
        #[arg(long)]
        create: bool,
        /// Directory the config file is saved into
        #[arg(long, default_value = "test_configs")]
        out_dir: PathBuf,
    },
    /// Train detection models from labelled flow CSVs
    Train {
        /// Labelled feature CSV files
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Directory the model bundles are written into
        #[arg(long, default_value = "models")]
        out: PathBuf,
        /// Target false positive rate as a fraction
        #[arg(long, default_value_t = 0.01)]
        target_fpr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a flow CSV with every model in a directory
    Predict {
        #[arg(long, default_value = "models")]
        models: PathBuf,
        /// Feature CSV to score
        #[arg(long)]
        csv: PathBuf,
    },
    /// Serve the reassembly endpoint over plain HTTP
    Serve {
        /// Scenario config the server takes framing and codec settings from
        #[arg(long)]
        config: PathBuf,
        /// Listen address
        #[arg(long, default_value = "127.0.0.1:8053")]
        listen: String,
    },
    /// Exfiltrate a file to a live resolver URL over plain HTTP
    Exfil {
        /// Scenario config; its first DoH server URL is the target
        #[arg(long)]
        config: PathBuf,
        /// File to exfiltrate (default: the config's first test file)
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn load_config(path: &PathBuf) -> Result<ExfilConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    ExfilConfig::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            time_scale,
            models,
        } => {
            let opts = ScenarioOptions {
                out_root: out,
                seed,
                time_scale,
                models_dir: models,
            };
            let result = run_scenario(&config, &opts)?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "Run directory: {}", result.run_dir.display())?;
            write!(stdout, "{}", render_stats(&result.stats))?;
            writeln!(
                stdout,
                "Reconstruction: {} ({} bytes, sha256 {})",
                if result.reconstruction.complete
                    && result.reconstruction.digest == result.input_digest
                {
                    "match"
                } else {
                    "MISMATCH"
                },
                result.reconstruction.bytes.len(),
                result.reconstruction.digest
            )?;
            writeln!(
                stdout,
                "Flows: {} total, {} at the resolver endpoint",
                result.vectors.len(),
                result.resolver_flows
            )?;
            writeln!(stdout)?;
            write!(stdout, "{}", render_summary_table(&result.reports))?;
            Ok(())
        }
        Command::GenConfig { create, out_dir } => {
            let stdin = std::io::stdin();
            let mut input = stdin.lock();
            let mut output = std::io::stdout().lock();
            generate_config(&mut input, &mut output, &out_dir, create)?;
            Ok(())
        }
        Command::Train {
            data,
            out,
            target_fpr,
            seed,
        } => {
            if !(0.0..=1.0).contains(&target_fpr) {
                bail!("target FPR must be a fraction between 0 and 1");
            }
            let opts = TrainOptions {
                target_fpr,
                seed,
                ..TrainOptions::default()
            };
            let mut stdout = std::io::stdout().lock();
            train_command(&data, &out, &opts, &mut stdout)?;
            Ok(())
        }
        Command::Predict { models, csv } => {
            let mut stdout = std::io::stdout().lock();
            let now = Clock::now(&RealClock);
            predict_command(&models, &csv, now, &mut stdout)?;
            Ok(())
        }
        Command::Serve { config, listen } => {
            let cfg = load_config(&config)?;
            let server = ExfilServer::new(cfg.framing_config(), cfg.pipeline_config());
            let listener = TcpListener::bind(&listen)
                .with_context(|| format!("binding {listen}"))?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "Listening on http://{listen} for DoH queries")?;
            serve_requests(&server, &listener, &mut stdout, None)?;
            Ok(())
        }
        Command::Exfil { config, file, seed } => {
            let cfg = load_config(&config)?;
            let input_path = match file {
                Some(path) => path,
                None => PathBuf::from(
                    cfg.test_files
                        .first()
                        .context("config lists no test_files and --file not given")?,
                ),
            };
            let input = std::fs::read(&input_path)
                .with_context(|| format!("reading {}", input_path.display()))?;
            let mut stdout = std::io::stdout().lock();
            let (stats, session_id) = exfil_live(&cfg, &input, seed, &mut stdout)?;
            writeln!(stdout, "Session: {session_id}")?;
            write!(stdout, "{}", render_stats(&stats))?;
            Ok(())
        }
    }
}

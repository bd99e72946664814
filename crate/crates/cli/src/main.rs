use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ncl_cli::commands::{self, CalibrateOptions, DemoSource, SweepAxes};
use ncl_cli::config::{self, parse_composition, Overrides};
use ncl_cli::manifest::read_manifest;
use ncl_cli::CliError;
use ncl_core::irl::IrlConfig;
use ncl_core::{HvComposition, Method};

#[derive(Parser)]
#[command(name = "ncl-sim", version, about = "Unsignalized intersection simulator with game-theoretic CAV and HV agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write trajectories, metrics, PET events and a manifest.
    Simulate(SimulateArgs),
    /// Run every combination of methods, volumes, ROPs and seeds.
    Sweep(SweepArgs),
    /// Cluster drivers and fit reward weights by max-entropy IRL.
    Calibrate(CalibrateArgs),
    /// Recompute metrics.json and pet.csv from a trajectories file.
    Metrics(MetricsArgs),
    /// Check the files of a run directory against its manifest digests.
    Verify {
        dir: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML config, or a manifest.json to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    /// Arrivals per stream per hour.
    #[arg(long)]
    volume: Option<f64>,
    #[arg(long)]
    rop: Option<f64>,
    /// HV shares as aggressive,normal,conservative.
    #[arg(long, value_parser = parse_composition)]
    composition: Option<HvComposition>,
    #[arg(long)]
    frames: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
    #[arg(long = "method", value_delimiter = ',', default_value = "ncl,cl,fcfs,batch")]
    methods: Vec<Method>,
    #[arg(long = "volume", value_delimiter = ',', default_value = "100,200,300,400")]
    volumes: Vec<f64>,
    #[arg(long = "rop", value_delimiter = ',', default_value = "1.0")]
    rops: Vec<f64>,
    #[arg(long = "seed", value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, value_parser = parse_composition)]
    composition: Option<HvComposition>,
    #[arg(long)]
    frames: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Trajectories file holding the demonstrations.
    #[arg(required_unless_present = "synthetic", conflicts_with = "synthetic")]
    demos: Option<PathBuf>,
    /// Plant demos with the three driver presets instead of reading a file.
    #[arg(long)]
    synthetic: bool,
    /// Scenarios per preset for --synthetic.
    #[arg(long, default_value_t = 500)]
    scenarios: usize,
    /// Config supplying the intersection layout and time step.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cluster count; picked by the elbow method when omitted.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    stride: usize,
    /// Report path.
    #[arg(long, default_value = "calibration.json")]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    trajectories: PathBuf,
    /// Config supplying the layout the trajectories were recorded on.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            let ov = Overrides {
                seed: a.seed,
                method: a.method,
                volume: a.volume,
                rop: a.rop,
                composition: a.composition,
                frames: a.frames,
            };
            let cfg = config::validated(config::load(a.config.as_deref())?, &ov)?;
            let m = commands::simulate(&cfg, &a.out)?;
            match m.avg_travel_speed {
                Some(v) => println!("avg_speed {v:.6} total_delay {:.6} vehicles {}", m.total_delay, m.spawned),
                None => println!("no vehicles entered the network"),
            }
        }
        Command::Sweep(a) => {
            let ov = Overrides {
                composition: a.composition,
                frames: a.frames,
                ..Overrides::default()
            };
            let cfg = config::validated(config::load(a.config.as_deref())?, &ov)?;
            let axes = SweepAxes {
                methods: a.methods,
                volumes: a.volumes,
                rops: a.rops,
                seeds: a.seeds,
            };
            let rows = commands::sweep(&cfg, &axes, &a.out)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            println!("{} rows written to {}", rows.len(), a.out.join(commands::SWEEP_FILE).display());
            if failed > 0 {
                return Err(CliError::RunsFailed(failed));
            }
        }
        Command::Calibrate(a) => {
            let cfg = config::load(a.config.as_deref())?;
            let mut irl = IrlConfig::default();
            irl.learning_rate = a.lr.unwrap_or(irl.learning_rate);
            irl.regularization = a.lambda.unwrap_or(irl.regularization);
            irl.epochs = a.epochs.unwrap_or(irl.epochs);
            let source = match a.demos {
                Some(p) => DemoSource::File(p),
                None => DemoSource::Synthetic { scenarios: a.scenarios },
            };
            let opts = CalibrateOptions {
                source,
                clusters: a.clusters,
                irl,
                seed: a.seed,
                stride: a.stride,
            };
            let report = commands::calibrate(&cfg, &opts)?;
            let mut json = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Io(e.into()))?;
            json.push(b'\n');
            std::fs::write(&a.out, json)?;
            println!("{} clusters written to {}", report.k, a.out.display());
        }
        Command::Metrics(a) => {
            let cfg = config::load(a.config.as_deref())?;
            let m = commands::recompute_metrics(&a.trajectories, &cfg, &a.out)?;
            println!("avg_speed {} total_delay {:.6}", m.avg_travel_speed.map_or("-".into(), |v| format!("{v:.6}")), m.total_delay);
        }
        Command::Verify { dir } => {
            let m = read_manifest(&dir)?;
            let bad = m.mismatches(&dir);
            if !bad.is_empty() {
                return Err(CliError::Io(anyhow::anyhow!("digest mismatch: {}", bad.join(", "))));
            }
            println!("{} files match", m.digests.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use momct_core::pipeline::{self, RunConfig};
use momct_core::{EngineConfig, Error, GeoPoint, MetricsConfig, ReferenceOrigin};
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(
    name = "momct",
    version,
    about = "Multi-camera tracklet fusion harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate truth and delivered messages for a scenario.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Fuse a recorded message stream (`-` reads standard input).
    Fuse {
        #[arg(long = "in", value_name = "FILE")]
        input: String,
        #[arg(long)]
        out: PathBuf,
        /// Tangent-plane origin as `LAT,LON`; defaults to the first point of the stream.
        #[arg(long, value_parser = parse_origin)]
        origin: Option<GeoPoint>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Engine settings, e.g. `filter.n_particles=2000`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Simulate, fuse, and score a scenario.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Recompute metrics from written truth and event files.
    Metrics {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scoring settings, e.g. `metrics.burn_in=2`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn parse_origin(s: &str) -> Result<GeoPoint, String> {
    let (lat, lon) = s.split_once(',').ok_or("expected LAT,LON")?;
    let lat = lat.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let lon = lon.trim().parse::<f64>().map_err(|e| e.to_string())?;
    GeoPoint::new(lat, lon).map_err(|e| e.to_string())
}

fn load_run_config(
    path: &Path,
    seed: Option<u64>,
    overrides: &[String],
) -> Result<RunConfig, Error> {
    let mut all = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("scenario.seed={s}"));
    }
    RunConfig::load(path, &all)
}

/// Applies `section.key=value` overrides to a config that serializes as a
/// JSON object with the given sections.
fn overridden<T>(base: &T, overrides: &[String]) -> Result<T, Error>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut value: Value = serde_json::to_value(base).expect("config serializes");
    for o in overrides {
        pipeline::apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

fn fuse(
    input: &str,
    out: &Path,
    origin: Option<GeoPoint>,
    seed: u64,
    overrides: &[String],
) -> Result<(), Error> {
    let cfg: EngineConfig = overridden(&EngineConfig::default(), overrides)?;
    cfg.validate().map_err(Error::Config)?;
    let origin = origin
        .map(ReferenceOrigin::new)
        .transpose()
        .map_err(|e| Error::Config(e.to_string()))?;
    let reader: Box<dyn BufRead> = if input == "-" {
        Box::new(io::stdin().lock())
    } else {
        let f = File::open(input).map_err(|source| Error::Io {
            path: input.into(),
            source,
        })?;
        Box::new(BufReader::new(f))
    };
    let events = pipeline::fuse_file(reader, cfg, origin, seed)?;
    pipeline::write_events(out, &events)
}

fn metrics(
    truth: &Path,
    events: &Path,
    out: Option<&Path>,
    overrides: &[String],
) -> Result<(), Error> {
    #[derive(serde::Serialize, serde::Deserialize)]
    struct Wrapper {
        metrics: MetricsConfig,
    }
    let cfg = overridden(
        &Wrapper {
            metrics: MetricsConfig::default(),
        },
        overrides,
    )?
    .metrics;
    cfg.validate().map_err(Error::Config)?;
    let report = pipeline::metrics_from_files(truth, events, &cfg)?;
    if let Some(path) = out {
        pipeline::write_metrics(path, &report)?;
    }
    print!("{}", pipeline::metrics_line(&report));
    Ok(())
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Simulate {
            config,
            out,
            seed,
            overrides,
        } => {
            let cfg = load_run_config(&config, seed, &overrides)?;
            let output = momct_core::simulator::run_scenario(&cfg.scenario)
                .map_err(|e| Error::Config(e.to_string()))?;
            pipeline::write_scenario(&out, &output)?;
            let c = output.counters;
            eprintln!(
                "frames {} detections {} dropped {} delivered {}",
                c.frames, c.detections, c.dropped, c.delivered
            );
            Ok(())
        }
        Command::Fuse {
            input,
            out,
            origin,
            seed,
            overrides,
        } => fuse(&input, &out, origin, seed, &overrides),
        Command::Run {
            config,
            out,
            seed,
            overrides,
        } => {
            let cfg = load_run_config(&config, seed, &overrides)?;
            let output = pipeline::run_e2e(&cfg)?;
            fs::create_dir_all(&out).map_err(|source| Error::Io {
                path: out.clone(),
                source,
            })?;
            pipeline::write_run(&out, &output)?;
            print!("{}", pipeline::metrics_line(&output.report));
            if let Some(secs) = output.report.runtime_seconds {
                eprintln!("runtime {secs:.3} s");
            }
            Ok(())
        }
        Command::Metrics {
            truth,
            events,
            out,
            overrides,
        } => metrics(&truth, &events, out.as_deref(), &overrides),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `hiersteer` — the pipeline entry point: generate the five-zone track,
//! record demonstration laps, train the classifier and zone regressors,
//! evaluate against held-out laps, and drive the track closed-loop.

use clap::{Parser, Subcommand};
use hiersteer_cli::commands::{self, Paths};
use hiersteer_cli::manifest::PipelineManifest;
use hiersteer_core::datalog::Direction;
use hiersteer_core::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hiersteer", version, about)]
struct Cli {
    /// Pipeline manifest (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override; every random stream derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Single-threaded, bit-reproducible runs.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Image scale relative to 168×94 (0.5 = fast CI size).
    #[arg(long, global = true)]
    scale: Option<f64>,

    /// Output directory for all pipeline artifacts.
    #[arg(long, global = true, env = "HIERSTEER_OUT", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the five-zone track and export its cone map (CSV + SVG).
    GenTrack,
    /// Record demonstration laps in both directions.
    Record,
    /// Train the classifier, the five zone regressors and the baseline.
    Train,
    /// Confusion matrices, per-zone MSE, lap traces and baseline comparison.
    Eval,
    /// Closed-loop autonomous driving on the track.
    Drive {
        /// Consecutive laps per direction.
        #[arg(long, default_value_t = 3)]
        laps: usize,
        /// cw, ccw or both.
        #[arg(long, default_value = "both")]
        direction: String,
        /// router (trained system) or oracle (harness-validity check).
        #[arg(long, default_value = "router")]
        controller: String,
    },
    /// Full pipeline: gen-track, record, train, eval, drive (stage-cached).
    RunAll,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Format { .. } => 3,
        Error::Recording(_) => 1,
        _ => 2,
    }
}

fn load_manifest(cli: &Cli) -> Result<PipelineManifest, Error> {
    let mut manifest = match &cli.config {
        Some(path) => PipelineManifest::load(path)?,
        None => PipelineManifest::default(),
    };
    if let Some(seed) = cli.seed {
        manifest.seed = seed;
    }
    if let Some(scale) = cli.scale {
        manifest.scale = scale;
    }
    if cli.deterministic {
        manifest.deterministic = true;
    }
    manifest.validate()?;
    Ok(manifest)
}

fn parse_directions(s: &str) -> Result<Vec<Direction>, Error> {
    match s {
        "cw" => Ok(vec![Direction::Cw]),
        "ccw" => Ok(vec![Direction::Ccw]),
        "both" => Ok(vec![Direction::Cw, Direction::Ccw]),
        other => Err(Error::parameter(format!(
            "direction must be cw|ccw|both, got '{other}'"
        ))),
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let manifest = load_manifest(cli)?;
    let paths = Paths::new(&cli.out);
    match &cli.command {
        Command::GenTrack => {
            commands::cmd_gen_track(&manifest, &paths)?;
            Ok(0)
        }
        Command::Record => {
            commands::cmd_record(&manifest, &paths)?;
            Ok(0)
        }
        Command::Train => {
            commands::cmd_train(&manifest, &paths)?;
            Ok(0)
        }
        Command::Eval => {
            let summary = commands::cmd_eval(&manifest, &paths)?;
            Ok(if summary.pass { 0 } else { 1 })
        }
        Command::Drive {
            laps,
            direction,
            controller,
        } => {
            let directions = parse_directions(direction)?;
            let summary =
                commands::cmd_drive(&manifest, &paths, *laps, &directions, controller)?;
            Ok(if summary.success { 0 } else { 1 })
        }
        Command::RunAll => {
            let (eval, drive) = commands::cmd_run_all(&manifest, &paths)?;
            println!(
                "run-all: eval {} | drive {}",
                if eval.pass { "pass" } else { "FAIL" },
                if drive.success { "pass" } else { "FAIL" }
            );
            Ok(if eval.pass && drive.success { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use courtsight_cli::commands;
use courtsight_cli::config::PipelineConfig;
use courtsight_cli::CliError;

/// Multi-LiDAR player tracking with camera-assisted occlusion repair.
#[derive(Parser, Debug)]
#[command(name = "courtsight", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `section.key = value` config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Input dataset directory (sets `paths.data`).
    #[arg(short, long)]
    data: Option<PathBuf>,
    /// Output directory (sets `paths.output`).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset into the output directory.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// LiDAR-only tracking.
    Track {
        #[command(flatten)]
        common: Common,
    },
    /// LiDAR tracking with camera-assisted identity repair.
    TrackFusion {
        #[command(flatten)]
        common: Common,
    },
    /// Score track files against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Track files, optionally as `label=path`.
        #[arg(required = true)]
        tracks: Vec<String>,
    },
    /// Comparison table from metrics files.
    Report {
        #[command(flatten)]
        common: Common,
        /// Metrics files; defaults to every `metrics_*.txt` in the output directory.
        files: Vec<String>,
    },
}

/// Pull `--section.key value` and `--section.key=value` pairs out of the
/// argument list; clap sees the rest.
fn split_overrides(args: impl IntoIterator<Item = String>) -> (Vec<String>, Vec<String>) {
    let (mut rest, mut overrides) = (Vec::new(), Vec::new());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let dotted = a
            .strip_prefix("--")
            .is_some_and(|f| f.split('=').next().is_some_and(|k| k.contains('.')));
        if !dotted {
            rest.push(a);
            continue;
        }
        let has_value = a.contains('=');
        overrides.push(a);
        if !has_value {
            if let Some(v) = it.next() {
                overrides.push(v);
            }
        }
    }
    (rest, overrides)
}

fn resolve(common: &Common, extra: &[String]) -> Result<PipelineConfig, CliError> {
    let mut overrides = Vec::new();
    if let Some(d) = &common.data {
        overrides.push(format!("--paths.data={}", d.display()));
    }
    if let Some(o) = &common.out {
        overrides.push(format!("--paths.output={}", o.display()));
    }
    overrides.extend(extra.iter().cloned());
    PipelineConfig::resolve(common.config.as_deref(), &overrides)
}

fn run(cli: Cli, extra: &[String]) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common } => commands::simulate(&resolve(&common, extra)?),
        Command::Track { common } => commands::track(&resolve(&common, extra)?).map(drop),
        Command::TrackFusion { common } => commands::track_fusion(&resolve(&common, extra)?).map(drop),
        Command::Evaluate { common, tracks } => {
            let cfg = resolve(&common, extra)?;
            commands::evaluate(&cfg, &tracks)?;
            print!("{}", std::fs::read_to_string(cfg.paths.output.join(commands::COMPARISON)).unwrap_or_default());
            Ok(())
        }
        Command::Report { common, files } => {
            let text = commands::report(&resolve(&common, extra)?, &files)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, extra) = split_overrides(std::env::args());
    let cli = Cli::parse_from(args);
    match run(cli, &extra) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_flags_are_split_off() {
        let args = ["courtsight", "evaluate", "--tracker.max_lost_frames", "5", "-o", "out", "--a.b=1", "x.txt"];
        let (rest, over) = split_overrides(args.iter().map(|s| s.to_string()));
        assert_eq!(rest, ["courtsight", "evaluate", "-o", "out", "x.txt"]);
        assert_eq!(over, ["--tracker.max_lost_frames", "5", "--a.b=1"]);
    }
}

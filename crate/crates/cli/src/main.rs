use std::path::PathBuf;
use std::process::ExitCode;

use auditrv::commands::{cmd_audit, cmd_bench, cmd_check, cmd_partition, cmd_run, CmdOutput, RunArgs};
use auditrv::monitor::Mode;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "auditrv", version, about = "Auditable runtime monitoring: check, partition, run, audit, bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ttv,
    Vtt,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ttv => Mode::TrustThenVerify,
            ModeArg::Vtt => Mode::VerifyThenTrust,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse, safety-check and stratify a specification.
    Check {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Split a specification into per-monitor rule files.
    Partition {
        /// Defaults to the bundled UAV specification.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Defaults to the bundled UAV topology.
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a scenario and optionally persist the run directory.
    Run {
        /// Scenario file, or a bundled name such as `nominal`.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ttv")]
        mode: ModeArg,
        #[arg(long)]
        partitioned: bool,
        /// Keep every revision instead of compacting at session close.
        #[arg(long)]
        no_compact: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replay a run directory and re-derive its verdicts.
    Audit {
        #[arg(long)]
        log_dir: PathBuf,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Defaults to `registry.txt` inside the run directory.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Run N synthetic booking sessions in both modes.
    Bench {
        #[arg(value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let out: CmdOutput = match Cli::parse().command {
        Command::Check { spec } => cmd_check(&spec),
        Command::Partition { spec, topology, out } => cmd_partition(spec.as_deref(), topology.as_deref(), &out),
        Command::Run {
            scenario,
            spec,
            topology,
            mode,
            partitioned,
            no_compact,
            out,
            seed,
        } => cmd_run(&RunArgs {
            scenario,
            spec,
            topology,
            mode: mode.into(),
            partitioned,
            out,
            seed,
            compact: !no_compact,
        }),
        Command::Audit {
            log_dir,
            spec,
            registry,
        } => cmd_audit(&log_dir, spec.as_deref(), registry.as_deref()),
        Command::Bench { n, seed } => cmd_bench(n, seed),
    };
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    ExitCode::from(out.code.clamp(0, 255) as u8)
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hopfdelay_cli::{
    cmd_analyze, cmd_certify, cmd_scan_kappa, cmd_scan_mu, cmd_simulate, cmd_verify, parse_range, parse_rect, Output,
    EXIT_PRECONDITION,
};

#[derive(Parser)]
#[command(name = "hopfdelay", version, about = "Stability of delayed feedback at a Hopf point")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Problem file (JSON, schema_version 1)
    file: PathBuf,
    /// Write the primary output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Averaged stability verdict; exit 0 stable, 10 unstable, 11 inconclusive
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the spread factor mu or the gain kappa
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "A:B:N", conflicts_with = "kappa", required_unless_present = "kappa")]
        mu: Option<String>,
        #[arg(long, value_name = "A:B:N")]
        kappa: Option<String>,
    },
    /// Integrate the full delayed system and print the trajectory CSV
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Compare the averaged verdict with simulation
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Count characteristic roots in a rectangle by the argument principle
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, value_name = "reLo:reHi:imLo:imHi", allow_hyphen_values = true)]
        rect: Option<String>,
    },
}

fn configure_threads() {
    if let Some(n) = std::env::var("HOPFDELAY_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn emit(out: &Option<PathBuf>, output: &Output) -> std::io::Result<()> {
    match out {
        Some(path) => std::fs::write(path, &output.body)?,
        None => std::io::stdout().lock().write_all(output.body.as_bytes())?,
    }
    if let Some(summary) = &output.summary {
        eprintln!("{summary}");
    }
    Ok(())
}

fn run(command: Command) -> (hopfdelay::Result<Output>, Option<PathBuf>) {
    match command {
        Command::Analyze { common } => (cmd_analyze(&common.file), common.out),
        Command::Scan { common, mu, kappa } => {
            let result = match (mu, kappa) {
                (Some(m), _) => parse_range(&m).and_then(|g| cmd_scan_mu(&common.file, &g)),
                (None, Some(k)) => parse_range(&k).and_then(|g| cmd_scan_kappa(&common.file, &g)),
                (None, None) => unreachable!("clap requires one of --mu/--kappa"),
            };
            (result, common.out)
        }
        Command::Simulate { common, t_end, dt } => (cmd_simulate(&common.file, t_end, dt), common.out),
        Command::Verify { common, t_end, dt } => (cmd_verify(&common.file, t_end, dt), common.out),
        Command::Certify { common, delta, rect } => {
            let result = rect
                .as_deref()
                .map(parse_rect)
                .transpose()
                .and_then(|r| cmd_certify(&common.file, delta, r));
            (result, common.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let (result, out) = run(cli.command);
    match result {
        Ok(output) => {
            if let Err(e) = emit(&out, &output) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_PRECONDITION);
            }
            ExitCode::from(output.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_PRECONDITION)
        }
    }
}

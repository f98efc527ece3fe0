//! `uplink`: run, compare, validate, and live-stream adaptive uplink
//! scenarios.
//!
//! Exit codes: 0 ok, 1 usage error, 2 scenario validation error, 3 runtime
//! error.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use uplink_cli::{compare, export, live, scenario_io};
use uplink_core::scenario::Scenario;
use uplink_core::sim::run_sim;

const OUT_DIR_ENV: &str = "UPLINK_OUT";

#[derive(Parser)]
#[command(
    name = "uplink",
    about = "Adaptive real-time video uplink simulator and live testbed",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and export frames.csv, epochs.csv, summary.json.
    Run {
        /// Scenario file path or a built-in name (`paper-default`).
        scenario: String,
        /// Disable adaptation: fixed encoder settings for the whole run.
        #[arg(long)]
        no_adaptation: bool,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default `$UPLINK_OUT` or ./uplink-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run both arms (adaptation on/off) and write a delta report.
    Compare {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a scenario, printing the first error if any.
    Validate { scenario: String },
    /// Stream over real sockets using the same wire formats.
    Live {
        #[arg(long)]
        role: Role,
        #[arg(long)]
        scenario: String,
        /// Server address (client role).
        #[arg(long)]
        peer: Option<SocketAddr>,
        /// Bind address (server role), e.g. 0.0.0.0:47800.
        #[arg(long)]
        bind: Option<SocketAddr>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Role {
    Client,
    Server,
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("uplink-out"))
}

fn load_scenario(spec: &str, seed: Option<u64>) -> Result<Scenario, ExitCode> {
    match scenario_io::load(spec) {
        Ok(mut scenario) => {
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            Ok(scenario)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(2))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Keep clap's rendering but pin usage problems to exit code 1.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run {
            scenario,
            no_adaptation,
            seed,
            out,
        } => {
            let mut scenario = match load_scenario(&scenario, seed) {
                Ok(s) => s,
                Err(code) => return code,
            };
            if no_adaptation {
                scenario.adaptation = false;
            }
            let output = match run_sim(&scenario) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(3);
                }
            };
            let dir = out_dir(out);
            match export::write_run(&dir, &output) {
                Ok(files) => {
                    let s = &output.summary;
                    println!(
                        "{} frames ({} completed, {} lost/expired), violation_fraction {:.4}, median RTT {}",
                        s.frames_total,
                        s.frames_completed,
                        s.frames_lost + s.frames_expired,
                        s.violation_fraction,
                        s.rtt_median
                            .map(|v| format!("{:.1} ms", v * 1e3))
                            .unwrap_or_else(|| "n/a".into()),
                    );
                    println!("wrote {}", files.summary.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(3)
                }
            }
        }
        Command::Compare {
            scenario,
            seed,
            out,
        } => {
            let scenario = match load_scenario(&scenario, seed) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let dir = out_dir(out);
            match compare::run_and_export(&scenario, &dir) {
                Ok(report) => {
                    println!(
                        "adaptation:    violation_fraction {:.4}, median RTT {}",
                        report.adaptation.violation_fraction,
                        report
                            .adaptation
                            .median_rtt
                            .map(|v| format!("{:.1} ms", v * 1e3))
                            .unwrap_or_else(|| "n/a".into()),
                    );
                    println!(
                        "no adaptation: violation_fraction {:.4}, median RTT {}",
                        report.no_adaptation.violation_fraction,
                        report
                            .no_adaptation
                            .median_rtt
                            .map(|v| format!("{:.1} ms", v * 1e3))
                            .unwrap_or_else(|| "n/a".into()),
                    );
                    println!("wrote {}", dir.join("delta.json").display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(3)
                }
            }
        }
        Command::Validate { scenario } => match scenario_io::load(&scenario) {
            Ok(s) => {
                println!("ok: {}", s.describe());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Live {
            role,
            scenario,
            peer,
            bind,
            seed,
            out,
        } => {
            let scenario = match load_scenario(&scenario, seed) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let dir = out_dir(out);
            let result = match role {
                Role::Server => {
                    let bind = match bind {
                        Some(addr) => addr,
                        None => {
                            eprintln!("error: --bind is required for the server role");
                            return ExitCode::from(1);
                        }
                    };
                    live::run_server(&scenario, bind, &dir).map(|s| {
                        println!(
                            "{} frames completed, violation_fraction {:.4}",
                            s.frames_completed, s.violation_fraction
                        );
                    })
                }
                Role::Client => {
                    let peer = match peer {
                        Some(addr) => addr,
                        None => {
                            eprintln!("error: --peer is required for the client role");
                            return ExitCode::from(1);
                        }
                    };
                    live::run_client(&scenario, peer, Some(&dir)).map(|s| {
                        println!("{} frames sent", s.frames_total);
                    })
                }
            };
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(3)
                }
            }
        }
    }
}

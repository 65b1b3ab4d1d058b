use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use sweep_cli::certio::{self, write_all_atomic, write_atomic, ReportFile};
use sweep_cli::commands::{self, Globals};
use sweep_cli::{registry, CliError};
use sweep_core::dynamics::Trajectory;

#[derive(Parser)]
#[command(name = "sweepctl", version, about = "Optimal control of sweeping processes: check, simulate, solve, verify")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Seed for every sampled quantity.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Multiplier applied to every verification tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions on the sweeping set.
    Check {
        /// Problem file or builtin name.
        problem: String,
        /// Trajectory CSV to check the Gram condition along.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Control for the default catching-up trajectory.
        #[arg(long)]
        control: Option<String>,
    },
    /// Integrate the penalized system, optionally against the catching-up oracle.
    Simulate {
        problem: String,
        #[arg(long)]
        gamma: f64,
        /// const:v1,..,vm or csv:path
        #[arg(long, default_value = "const:0")]
        control: String,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve along the penalty schedule and certify the result.
    Solve {
        problem: String,
        /// Initial control; defaults to the middle of U.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a certificate against the maximum principle.
    Verify {
        certificate: PathBuf,
        problem: String,
        /// Where to write the report JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Builtin examples.
    #[command(subcommand)]
    Example(ExampleCommand),
}

#[derive(Subcommand)]
enum ExampleCommand {
    /// List builtin problems.
    List,
    /// Write a builtin problem file.
    Export {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the closed-form certificate of a builtin, where one is known.
    Certificate {
        name: String,
        #[arg(long, default_value_t = 2000)]
        cells: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let g = Globals {
        seed: cli.global.seed,
        tol_scale: cli.global.tol_scale,
    };
    if !(g.tol_scale > 0.0) {
        return Err(CliError::Usage("--tol-scale must be positive".into()));
    }
    match cli.command {
        Command::Check {
            problem,
            trajectory,
            control,
        } => {
            let pf = commands::load_problem(&problem)?;
            let traj = match trajectory {
                Some(p) => {
                    let built = pf.build(g.seed)?;
                    let text = std::fs::read_to_string(p)?;
                    Some(Trajectory::from_csv(&text, pf.n, pf.m, built.problem.r())?)
                }
                None => None,
            };
            let r = commands::check(&pf, g, traj, control.as_deref())?;
            println!("{}", json(&r));
            if let Some(name) = r.first_failure {
                eprintln!("assumption {name} failed");
                return Ok(ExitCode::from(1));
            }
        }
        Command::Simulate {
            problem,
            gamma,
            control,
            oracle,
            out,
        } => {
            let pf = commands::load_problem(&problem)?;
            let s = commands::simulate(&pf, g, gamma, &control, oracle)?;
            let mut files = vec![("trajectory.csv", s.trajectory.to_csv()), ("summary.json", json(&s.summary))];
            if let Some(o) = &s.oracle {
                files.push(("oracle.csv", o.to_csv()));
            }
            write_all_atomic(&out, &files)?;
            println!("{}", json(&s.summary));
        }
        Command::Solve { problem, init, out } => {
            let pf = commands::load_problem(&problem)?;
            let s = commands::solve(&pf, g, init.as_deref())?;
            write_all_atomic(&out, &s.files())?;
            println!("J = {:e}  lambda = {:.6}  terminal residual = {:e}", s.summary.objective, s.summary.lambda, s.summary.terminal_residual);
            for r in &s.report.residuals {
                println!("{:<16} {:>12.4e}  tol {:.1e}  {}", r.name, r.value, r.tol, if r.pass() { "pass" } else { "FAIL" });
            }
            if !s.report.pass() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Verify {
            certificate,
            problem,
            report,
        } => {
            let pf = commands::load_problem(&problem)?;
            let cert = certio::certificate_from_json(&std::fs::read_to_string(certificate)?)?;
            let rep = commands::verify(&cert, &pf, g)?;
            let text = json(&ReportFile::from_report(&rep));
            match report {
                Some(p) => write_atomic(&p, &text)?,
                None => println!("{text}"),
            }
            if !rep.pass() {
                eprintln!("failed: {}", rep.failed().join(", "));
                return Ok(ExitCode::from(1));
            }
        }
        Command::Example(ExampleCommand::List) => {
            for b in &registry::BUILTINS {
                println!("{:<16} {}", b.name, b.summary);
            }
        }
        Command::Example(ExampleCommand::Export { name, out }) => {
            let b = registry::find(&name).ok_or_else(|| CliError::Usage(format!("no builtin named `{name}`")))?;
            emit(&out, &b.problem().to_json())?;
        }
        Command::Example(ExampleCommand::Certificate { name, cells, out }) => {
            let cert = registry::closed_form_certificate(&name, cells)
                .ok_or_else(|| CliError::Usage(format!("no closed-form certificate for `{name}`")))?;
            emit(&out, &certio::certificate_to_json(&cert))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.global.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build_global();
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

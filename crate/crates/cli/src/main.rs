use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use opcon_core::pipeline::{self, Outcome, RunOptions, Verb};
use opcon_core::scenario::Scenario;
use opcon_core::Error;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DESIGN: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "opcon", version, about = "Min-norm barrier-function augmentation: design, simulation and margin analysis")]
struct Cli {
    #[command(subcommand)]
    verb: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and validate the design only.
    Design(Common),
    /// Design plus baseline and augmented simulations.
    Simulate(Common),
    /// Design plus the activation-pattern margin sweep.
    Analyze(Common),
    /// Every stage.
    Run(Common),
    /// Barrier versus projection-operator comparison on a scalar scenario.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file; repeat to run a batch concurrently.
    #[arg(long = "config", value_name = "PATH")]
    configs: Vec<PathBuf>,
    /// Built-in scenario name (scalar-servo, aircraft-lateral); may be repeated.
    #[arg(long = "builtin", value_name = "NAME")]
    builtins: Vec<String>,
    /// Output root; each scenario writes into <out>/<scenario name>.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Step size override in seconds.
    #[arg(long, value_name = "S")]
    dt: Option<f64>,
    /// Seed for the randomized policy self-check.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_DESIGN,
    }
}

enum Source {
    File(PathBuf),
    Builtin(String),
}

impl Source {
    fn label(&self) -> String {
        match self {
            Source::File(p) => p.display().to_string(),
            Source::Builtin(n) => format!("builtin:{n}"),
        }
    }

    fn load(&self) -> opcon_core::Result<Scenario> {
        match self {
            Source::File(p) => Scenario::load(p),
            Source::Builtin(n) => Scenario::builtin(n),
        }
    }
}

fn run_one(src: &Source, verb: Verb, out: &Path, opts: &RunOptions) -> Result<Outcome, (String, u8)> {
    let fail = |e: Error| (format!("{}: {e}", src.label()), exit_code(&e));
    let scenario = src.load().map_err(fail)?;
    let dir = out.join(scenario.name());
    pipeline::execute(&scenario, verb, &dir, opts).map_err(fail)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (verb, args) = match cli.verb {
        Command::Design(a) => (Verb::Design, a),
        Command::Simulate(a) => (Verb::Simulate, a),
        Command::Analyze(a) => (Verb::Analyze, a),
        Command::Run(a) => (Verb::Run, a),
        Command::Compare(a) => (Verb::Compare, a),
    };
    let mut sources: Vec<Source> = args.configs.into_iter().map(Source::File).collect();
    sources.extend(args.builtins.into_iter().map(Source::Builtin));
    if sources.is_empty() {
        eprintln!("error: give at least one --config or --builtin");
        return ExitCode::from(EXIT_CONFIG);
    }
    let opts = RunOptions { dt: args.dt, seed: args.seed };

    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = sources.iter().map(|src| s.spawn(|| run_one(src, verb, &args.out, &opts))).collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
    });

    let mut codes = Vec::new();
    for r in results {
        match r {
            Ok(outcome) => {
                for c in outcome.checks() {
                    println!("{} {} {}: {}", outcome.manifest.scenario, if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
                }
                println!("{}: artifacts in {}", outcome.manifest.scenario, outcome.out_dir.display());
                if !outcome.passed() {
                    codes.push(EXIT_CHECK);
                }
            }
            Err((msg, code)) => {
                eprintln!("error: {msg}");
                codes.push(code);
            }
        }
    }
    let code = [EXIT_CONFIG, EXIT_DESIGN, EXIT_IO, EXIT_CHECK].into_iter().find(|c| codes.contains(c)).unwrap_or(0);
    ExitCode::from(code)
}

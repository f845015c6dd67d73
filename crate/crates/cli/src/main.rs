use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcast::baselines::Scheme;
use gcast::harness::{self, RunResults, Scenario, SweepSpec, VALIDATE_TOL};

#[derive(Parser)]
#[command(name = "gcast", version, about = "Rate-splitting multicast beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every scheme on every channel realization of a scenario.
    Run {
        /// Scenario JSON; the built-in default scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        realizations: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario over the values of one axis and write a CSV table.
    Sweep {
        /// Sweep specification JSON.
        #[arg(long)]
        scenario: PathBuf,
        /// Also write the full results of every point as JSON.
        #[arg(long)]
        results: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Re-check every stored solution of a results file.
    Validate {
        results: PathBuf,
        #[arg(long, default_value_t = VALIDATE_TOL)]
        tol: f64,
    },
}

#[derive(Args)]
struct Common {
    /// Master seed, overriding the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated schemes: PropRS, OneLayerRS, NoRS, OFDMA.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    /// Realizations solved in parallel.
    #[arg(long)]
    jobs: Option<usize>,
}

enum Failure {
    Validation,
    Config(String),
}

impl From<gcast::Error> for Failure {
    fn from(e: gcast::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Config(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn apply(scenario: &mut Scenario, common: &Common) {
    if let Some(seed) = common.seed {
        scenario.seed = seed;
    }
    if let Some(schemes) = &common.schemes {
        scenario.schemes = schemes.clone();
    }
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure>
where
    T: Send,
{
    match jobs {
        Some(0) => Err(Failure::Config("--jobs must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn print_summary(results: &RunResults) {
    for row in &results.summary {
        eprintln!(
            "{:<11} mean {:>14.3} bit/s  std {:>12.3}  n {}",
            row.scheme.name(),
            row.mean_rate,
            row.std_rate,
            row.n_realizations
        );
    }
    for real in &results.realizations {
        for entry in &real.schemes {
            if let Some(err) = &entry.error {
                eprintln!("realization {} {}: {err}", real.index, entry.scheme);
            }
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            scenario,
            realizations,
            common,
        } => {
            let mut s = match &scenario {
                Some(p) => Scenario::from_json(&read(p)?)?,
                None => Scenario::default(),
            };
            apply(&mut s, &common);
            if let Some(r) = realizations {
                s.realizations = r;
            }
            s.validate()?;
            let results = with_jobs(common.jobs, || harness::run(&s))??;
            print_summary(&results);
            write(common.out.as_deref(), &results.to_json()?)
        }
        Command::Sweep {
            scenario,
            results,
            common,
        } => {
            let mut spec = SweepSpec::from_json(&read(&scenario)?)?;
            apply(&mut spec.scenario, &common);
            spec.validate()?;
            let out = with_jobs(common.jobs, || harness::sweep(&spec))??;
            if let Some(p) = &results {
                let text = serde_json::to_string_pretty(&out).map_err(|e| Failure::Config(e.to_string()))?;
                write(Some(p), &text)?;
            }
            write(common.out.as_deref(), &out.to_csv()?)
        }
        Command::Validate { results, tol } => {
            let stored = RunResults::from_json(&read(&results)?)?;
            let report = harness::validate(&stored, tol)?;
            for f in &report.findings {
                let detail = serde_json::to_string(&f.violation).unwrap_or_default();
                println!("realization {} {}: {detail}", f.realization, f.scheme);
            }
            println!(
                "{} solutions checked, {} violations",
                report.checked,
                report.findings.len()
            );
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Validation)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use qht_gof::estimator::{compute_mn, EstimatorConfig};
use qht_gof::experiments::{self, load_or_build_table, ExperimentSpec, FULL_SCALE_RUNS, VERSION};
use qht_gof::pattern::{Efficiency, PatternKernel};
use qht_gof::simulator::{generate, load_dataset, save_dataset, SimError};
use qht_gof::states::{l2_distance_sq, make_state, StateKind, DEFAULT_DIM};
use qht_gof::testing::calibrate;

#[derive(Parser)]
#[command(name = "qht-gof", version, about = "Goodness-of-fit tests for quantum homodyne tomography data")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate pi^{-1} f^eta_{j,k}(x) as CSV.
    Patterns {
        #[arg(long)]
        j: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
        x_min: f64,
        #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
        x_max: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Squared L2 distance between two states.
    Distance {
        a: String,
        b: String,
        #[arg(long, default_value_t = DEFAULT_DIM)]
        dim: usize,
    },
    /// Simulate a noisy homodyne dataset.
    Simulate {
        #[arg(long)]
        state: String,
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute M_n for a dataset against a null state.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tau: String,
        #[arg(short = 'N', long = "bandwidth")]
        bandwidth: usize,
    },
    /// Calibrate thresholds by simulation under the null.
    Calibrate {
        #[arg(long)]
        tau: String,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(short = 'N', long = "bandwidth")]
        bandwidth: usize,
        #[arg(short, long)]
        n: usize,
        #[arg(long = "alpha", default_values_t = [0.01, 0.05])]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a JSON experiment spec.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Use 1000 runs per replicate set.
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn parse_state(text: &str) -> Result<StateKind, Failure> {
    StateKind::parse(text).map_err(invalid)
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Patterns {
            j,
            k,
            eta,
            x_min,
            x_max,
            step,
            out,
        } => patterns(j, k, eta, x_min, x_max, step, out.as_deref()),
        Command::Distance { a, b, dim } => {
            let (a, b) = (parse_state(&a)?, parse_state(&b)?);
            if dim == 0 {
                return Err(invalid("dimension must be at least 1"));
            }
            let rho = make_state(a, dim).map_err(invalid)?;
            let tau = make_state(b, dim).map_err(invalid)?;
            println!("{}", l2_distance_sq(&rho, &tau));
            Ok(())
        }
        Command::Simulate {
            state,
            n,
            eta,
            seed,
            out,
        } => {
            let state = parse_state(&state)?;
            Efficiency::new(eta).map_err(invalid)?;
            let ds = generate(state, n, eta, seed).map_err(|e| match e {
                SimError::Unsupported(_) | SimError::Empty => invalid(e),
                e => runtime(e),
            })?;
            save_dataset(&ds, &out).map_err(runtime)
        }
        Command::Estimate { data, tau, bandwidth } => {
            let tau = parse_state(&tau)?;
            if bandwidth == 0 {
                return Err(invalid("bandwidth must be at least 1"));
            }
            let ds = load_dataset(&data).map_err(|e| match e {
                SimError::Io(_) => runtime(e),
                e => invalid(e),
            })?;
            let table = load_or_build_table(ds.eta().value(), bandwidth).map_err(runtime)?;
            let tau = make_state(tau, DEFAULT_DIM.max(bandwidth)).map_err(invalid)?;
            let cfg = EstimatorConfig::new(tau, Arc::new(table)).map_err(invalid)?;
            let mn = compute_mn(&ds, &cfg).map_err(invalid)?;
            println!("{mn}");
            Ok(())
        }
        Command::Calibrate {
            tau,
            eta,
            bandwidth,
            n,
            alphas,
            runs,
            seed,
        } => {
            let tau = parse_state(&tau)?;
            Efficiency::new(eta).map_err(invalid)?;
            if bandwidth == 0 {
                return Err(invalid("bandwidth must be at least 1"));
            }
            if runs < 100 {
                return Err(invalid(format!("at least 100 runs are required, got {runs}")));
            }
            if let Some(a) = alphas.iter().find(|&&a| !(a > 0.0 && a < 1.0) || a * (runs as f64) < 1.0) {
                return Err(invalid(format!("level {a} must lie in (0, 1) with alpha * runs >= 1")));
            }
            let table = load_or_build_table(eta, bandwidth).map_err(runtime)?;
            let tau = make_state(tau, DEFAULT_DIM.max(bandwidth)).map_err(invalid)?;
            let cfg = EstimatorConfig::new(tau, Arc::new(table)).map_err(invalid)?;
            let cal = calibrate(&cfg, n, &alphas, runs, seed).map_err(runtime)?;
            println!("alpha,nu");
            for (a, nu) in cal.thresholds {
                println!("{a},{nu:.6e}");
            }
            Ok(())
        }
        Command::Run {
            spec,
            seed,
            paper_scale,
            out,
        } => {
            let mut spec = ExperimentSpec::load(&spec).map_err(invalid)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if paper_scale {
                spec.runs = FULL_SCALE_RUNS;
            }
            if let Some(out) = out {
                spec.output_dir = out;
            }
            let outcome = experiments::run(&spec).map_err(|e| {
                if e.is_validation() {
                    invalid(e)
                } else {
                    runtime(e)
                }
            })?;
            println!("state,alpha,nu,median,mse,level_or_power");
            for r in &outcome.rows {
                println!(
                    "{},{},{:.4e},{:.4e},{:.4e},{:.4}",
                    r.state, r.alpha, r.nu, r.median, r.mse, r.level_or_power
                );
            }
            Ok(())
        }
    }
}

fn patterns(j: usize, k: usize, eta: f64, x_min: f64, x_max: f64, step: f64, out: Option<&Path>) -> Result<(), Failure> {
    let eta = Efficiency::new(eta).map_err(invalid)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid(format!("step must be positive, got {step}")));
    }
    if !(x_min.is_finite() && x_max.is_finite() && x_min <= x_max) {
        return Err(invalid(format!("empty range [{x_min}, {x_max}]")));
    }
    let (j, k) = if j >= k { (j, k) } else { (k, j) };
    let kernel = PatternKernel::new(eta, j + 1).map_err(runtime)?;
    let count = ((x_max - x_min) / step + 1e-9).floor() as usize + 1;
    let mut sink: Box<dyn Write> = match out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(runtime)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let write = |sink: &mut Box<dyn Write>| -> io::Result<()> {
        writeln!(sink, "# qht-gof {VERSION} patterns j={j} k={k} eta={}", eta.value())?;
        writeln!(sink, "x,value")?;
        for i in 0..count {
            let mut x = x_min + i as f64 * step;
            if x.abs() < 1e-9 * step {
                x = 0.0;
            }
            let v = kernel.eval(j, k, x) / std::f64::consts::PI;
            writeln!(sink, "{x:.10},{v:.15e}")?;
        }
        sink.flush()
    };
    write(&mut sink).map_err(runtime)
}

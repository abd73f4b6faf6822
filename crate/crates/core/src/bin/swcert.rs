use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use swcert::config::{resolve_system, ConfigError};
use swcert::csvfmt::num;
use swcert::experiment::{
    certify_run, run_baseline, run_experiment, write_baseline_csv, CertifyRequest, ExperimentConfig, Mode,
};
use swcert::policy::Tolerances;
use swcert::sampling::{sample_continuous, sample_hybrid, unit_sphere, SamplingConfig};
use swcert::system::SwitchedSystem;

#[derive(Parser)]
#[command(name = "swcert", version, about = "Data-driven stability certificates for switching systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw observations, or a free-running trajectory with --steps.
    Simulate {
        #[arg(long, default_value = "ncs")]
        system: String,
        #[arg(long, default_value = "hybrid")]
        mode: Mode,
        #[arg(long = "l", default_value_t = 1)]
        horizon: usize,
        #[arg(long = "N", default_value_t = 100)]
        samples: usize,
        #[arg(long = "W", default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit one trajectory of this many steps instead of samples.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One sampled certification, reported as JSON.
    Certify {
        #[arg(long, default_value = "ncs")]
        system: String,
        #[arg(long, default_value = "hybrid")]
        mode: Mode,
        #[arg(long = "l", default_value_t = 1)]
        horizon: usize,
        #[arg(long = "N", default_value_t = 4000)]
        samples: usize,
        #[arg(long = "W", default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.05)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Model-based upper bounds per lift against the cycle lower bound.
    Baseline {
        #[arg(long, default_value = "ncs")]
        system: String,
        #[arg(long, default_value_t = 4)]
        l_max: usize,
        #[arg(long, default_value_t = 12)]
        cycle_max: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a JSON experiment grid.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `output` field.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(format!("write failed: {e}"))
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| Failure::Config(format!("cannot create {}: {e}", path.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_trajectory(sys: &SwitchedSystem, steps: usize, seed: u64, out: &mut dyn Write) -> Result<(), Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = unit_sphere(&mut rng, sys.dim());
    let path = sys.simulate(0, x0, steps, &mut rng).map_err(|e| Failure::Run(e.to_string()))?;
    let coords: Vec<String> = (0..sys.dim()).map(|i| format!("x{i}")).collect();
    writeln!(out, "k,edge,label,{}", coords.join(","))?;
    for (k, (edge, x)) in path.iter().enumerate() {
        let label = sys.graph().edge(*edge).label;
        let xs: Vec<String> = x.iter().map(|v| num(*v)).collect();
        writeln!(out, "{k},{edge},{label},{}", xs.join(","))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            system,
            mode,
            horizon,
            samples,
            noise,
            seed,
            steps,
            out,
        } => {
            let sys = resolve_system(&system)?;
            let mut w = sink(out.as_deref())?;
            if let Some(steps) = steps {
                write_trajectory(&sys, steps, seed, &mut w)?;
            } else {
                let cfg = SamplingConfig::new(horizon, samples, noise, seed).map_err(|e| Failure::Config(e.to_string()))?;
                let failed = |e: swcert::sampling::SamplingError| Failure::Run(e.to_string());
                match mode {
                    Mode::Hybrid => sample_hybrid(&sys, &cfg).map_err(failed)?.write_csv(&mut w)?,
                    Mode::Continuous => sample_continuous(&sys, &cfg).map_err(failed)?.write_csv(&mut w)?,
                    Mode::Baseline => return Err(Failure::Config("simulate needs hybrid or continuous mode".into())),
                }
            }
            w.flush()?;
        }
        Command::Certify {
            system,
            mode,
            horizon,
            samples,
            noise,
            beta,
            seed,
            out,
        } => {
            if mode == Mode::Baseline {
                return Err(Failure::Config("certify needs hybrid or continuous mode; use `baseline`".into()));
            }
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Failure::Config("--beta must lie in (0, 1)".into()));
            }
            let sys = resolve_system(&system)?;
            let req = CertifyRequest {
                mode,
                horizon,
                samples,
                noise_radius: noise,
                beta,
                seed,
            };
            let outcome = certify_run(&sys, &req, &Tolerances::default()).map_err(|e| Failure::Run(e.to_string()))?;
            let doc = json!({
                "system": system,
                "mode": mode,
                "l": horizon,
                "N": samples,
                "W": noise,
                "seed": seed,
                "c_star": outcome.solution.c_star,
                "feasibility_calls": outcome.solution.diagnostics.feasibility_calls,
                "report": outcome.report,
            });
            let mut w = sink(out.as_deref())?;
            writeln!(w, "{}", serde_json::to_string_pretty(&doc).expect("report serializes"))?;
            w.flush()?;
        }
        Command::Baseline {
            system,
            l_max,
            cycle_max,
            out,
        } => {
            if l_max == 0 || cycle_max == 0 {
                return Err(Failure::Config("--l-max and --cycle-max must be positive".into()));
            }
            let sys = resolve_system(&system)?;
            let mut cfg = ExperimentConfig::new(Mode::Baseline);
            cfg.horizons = (1..=l_max).collect();
            cfg.cycle_max = cycle_max;
            let report = run_baseline(&sys, &cfg).map_err(|e| Failure::Run(e.to_string()))?;
            let mut w = sink(out.as_deref())?;
            write_baseline_csv(&report, &mut w)?;
            w.flush()?;
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let sys = resolve_system(&cfg.system)?;
            let target = out.or_else(|| cfg.output.clone());
            let mut w = sink(target.as_deref())?;
            if cfg.mode == Mode::Baseline {
                let report = run_baseline(&sys, &cfg).map_err(|e| Failure::Run(e.to_string()))?;
                write_baseline_csv(&report, &mut w)?;
                w.flush()?;
            } else {
                let result = run_experiment(&sys, &cfg)?;
                result.write_csv(&mut w)?;
                w.flush()?;
                let errors = result.error_count();
                if errors > 0 {
                    return Err(Failure::Run(format!("{errors} cell(s) failed; see the error column")));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
    }
}

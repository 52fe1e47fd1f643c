use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{CommandFactory, Parser, Subcommand};

use rect_oamp::harness::{
    metadata_path, parse_methods, parse_seeds, run_experiment, spectra_check, write_report, ExperimentConfig,
    NoiseKind, Predictions, SpectrumSpec,
};
use rect_oamp::scalar_channel::{Prior, PriorModel};
use rect_oamp::state_evolution::{fixed_point_scan, gaussian_fixed_point};
use rect_oamp::{Error, Result};

#[derive(Parser)]
#[command(name = "rect-oamp", version, about = "Optimal OAMP for rectangular spiked models")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment described by a config file.
    Run {
        config: PathBuf,
        /// Seed count, range `a..b` or list.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma list of oamp, pca, amp, se-only.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        /// Override any config key, e.g. `--set m=500`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print state-evolution predictions without simulating.
    Se {
        #[arg(long, default_value_t = 2.0)]
        theta: f64,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value = "rademacher")]
        prior: Prior,
        #[arg(long, default_value_t = 0.04)]
        w0: f64,
        #[arg(long, default_value = "mp")]
        spectrum: SpectrumSpec,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
    },
    /// Validate the induced spectral measures.
    SpectraCheck {
        #[arg(long, default_value = "mp")]
        spectrum: SpectrumSpec,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value_t = 2.0)]
        theta: f64,
    },
    /// Solve the Gaussian-noise fixed-point equations.
    FixedPoint {
        #[arg(long, default_value_t = 2.0)]
        theta: f64,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value = "rademacher")]
        prior: Prior,
        #[arg(long, default_value_t = 0.04)]
        w0: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let Some(command) = cli.command else {
        let _ = Cli::command().print_help();
        return ExitCode::from(2);
    };
    match dispatch(command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Square dimensions standing in for `δ` when only predictions are needed.
fn shape(delta: f64) -> Result<(usize, usize)> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1], got {delta}")));
    }
    let n = 1_000_000usize;
    Ok((((n as f64) * delta).round() as usize, n))
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run {
            config,
            seeds,
            out,
            methods,
            workers,
            overrides,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(m) = methods {
                cfg.methods = parse_methods(&m)?;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            for kv in overrides {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("override `{kv}` is not KEY=VALUE")))?;
                cfg.set(k.trim(), v.trim())?;
            }
            cfg.validate()?;
            let report = run_experiment(&cfg)?;
            write_report(&report, &cfg.out)?;
            println!(
                "wrote {} rows to {} ({} seeds, {} failed); metadata in {}",
                report.rows.len(),
                cfg.out.display(),
                report.metadata.seeds_completed.len(),
                report.metadata.failures.len(),
                metadata_path(&cfg.out).display()
            );
            Ok(true)
        }
        Command::Se {
            theta,
            delta,
            prior,
            w0,
            spectrum,
            iterations,
        } => {
            let (m, n) = shape(delta)?;
            let cfg = ExperimentConfig {
                spectrum,
                noise: NoiseKind::Ri,
                theta,
                m,
                n,
                prior_u: prior,
                prior_v: prior,
                w0_u: w0,
                w0_v: w0,
                iterations,
                methods: vec![],
                ..ExperimentConfig::default()
            };
            cfg.validate()?;
            let preds = Predictions::compute(&cfg)?;
            if let Some(fp) = preds.fixed_point {
                println!(
                    "fixed point: w1 = {:.10}  w2 = {:.10}  mmse_u = {:.10}  mmse_v = {:.10}",
                    fp.w1, fp.w2, fp.mmse_u, fp.mmse_v
                );
            }
            println!("{:>3} {:>14} {:>14} {:>14} {:>14}", "t", "w1", "w2", "cos2_u", "cos2_v");
            for s in &preds.optimal.states[1..] {
                println!(
                    "{:>3} {:>14.10} {:>14.10} {:>14.10} {:>14.10}",
                    s.t,
                    s.w1,
                    s.w2,
                    1.0 - s.mmse_u,
                    1.0 - s.mmse_v
                );
            }
            Ok(true)
        }
        Command::SpectraCheck { spectrum, delta, theta } => {
            let model = Arc::new(spectrum.build(delta)?);
            let checks = spectra_check(model, theta)?;
            for c in &checks {
                println!("{c}");
            }
            let passed = checks.iter().all(|c| c.passed);
            println!("{}", if passed { "all checks passed" } else { "some checks FAILED" });
            Ok(passed)
        }
        Command::FixedPoint { theta, delta, prior, w0 } => {
            let p = PriorModel::new(prior, w0)?;
            let fp = gaussian_fixed_point(theta, delta, p, p)?;
            println!(
                "w1 = {:.10}  w2 = {:.10}  mmse_u = {:.10}  mmse_v = {:.10}  ({} iterations)",
                fp.w1, fp.w2, fp.mmse_u, fp.mmse_v, fp.iterations
            );
            let all = fixed_point_scan(theta, delta, p, p);
            if all.len() > 1 {
                println!("{} distinct fixed points:", all.len());
                for f in all {
                    println!("  w1 = {:.10}  w2 = {:.10}", f.w1, f.w2);
                }
            }
            Ok(true)
        }
    }
}

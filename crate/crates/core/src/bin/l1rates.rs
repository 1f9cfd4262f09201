use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use l1rates::harness::{
    default_t_grid, gamma_rows, nazarov_check, phi_rows, reproduce_example, run_rate_experiment, synthesize_noise,
    write_json, ExampleName, ExperimentConfig, NazarovConfig, OutputFormat, Table, SCHEMA_VERSION,
};
use l1rates::operator::Interval;
use l1rates::rate::{build_phi, check_vi, compute_beta, ViSampler};
use l1rates::solver::{choose_alpha, solve_tikhonov, TikhonovProblem};
use l1rates::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "l1rates",
    version,
    about = "Convergence rates for l1-regularised inverse problems"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files; tables go to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the γₙ table of the configured operator.
    Certify,
    /// Evaluate the rate function φ for the configured x†.
    Phi,
    /// Sample the variational inequality with β = (1−c)/(1+c).
    CheckVi {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Solve one noisy instance.
    Solve {
        #[arg(long)]
        delta: f64,
    },
    /// Run the δ sweep.
    Rates,
    /// Sample the Turán–Nazarov bound on E = [0, measure).
    Nazarov {
        #[arg(long, default_value_t = 0.5)]
        measure: f64,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = -30, allow_hyphen_values = true)]
        freq_min: i64,
        #[arg(long, default_value_t = 30, allow_hyphen_values = true)]
        freq_max: i64,
        #[arg(long, default_value_t = 1024)]
        grid_size: usize,
    },
    /// Reproduce a canned example.
    Example {
        #[arg(value_enum)]
        name: Example,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Example {
    Denoising,
    Wiener,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

struct Sink<'a> {
    out: Option<&'a Path>,
    format: OutputFormat,
}

impl Sink<'_> {
    fn table(&self, stem: &str, table: &Table) -> Result<()> {
        match self.out {
            Some(dir) => table.write(dir, stem, self.format),
            None => {
                print!("{}", table.render(self.format)?);
                Ok(())
            }
        }
    }

    fn summary<T: Serialize>(&self, value: &T) -> Result<()> {
        match self.out {
            Some(dir) => write_json(dir, "summary.json", value),
            None => {
                eprintln!("{}", serde_json::to_string_pretty(value)?);
                Ok(())
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("this command needs --config <path>".into()))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct SolutionRow {
    schema_version: u32,
    position: usize,
    index: i64,
    x: f64,
    xdag: f64,
}

/// Returns whether every asserted invariant held.
fn run(cli: &Cli) -> Result<bool> {
    let sink = Sink {
        out: cli.out.as_deref(),
        format: cli.format.into(),
    };
    match &cli.command {
        Command::Certify => {
            let cfg = load_config(cli)?;
            let (_, _, table) = cfg.setup()?;
            sink.table("gammas", &Table::from_rows(&gamma_rows(&table))?)?;
            Ok(table.is_nondecreasing())
        }
        Command::Phi => {
            let cfg = load_config(cli)?;
            let (_, xdag, table) = cfg.setup()?;
            let phi = build_phi(&xdag, &table)?;
            sink.table("phi", &Table::from_rows(&phi_rows(&phi, &default_t_grid()))?)?;
            if cli.out.is_some() {
                sink.table("gammas", &Table::from_rows(&gamma_rows(&table))?)?;
            }
            Ok(true)
        }
        Command::CheckVi { samples } => {
            let cfg = load_config(cli)?;
            let (op, xdag, table) = cfg.setup()?;
            let phi = build_phi(&xdag, &table)?;
            let beta = compute_beta(table.c_used)?;
            let sampler = ViSampler {
                samples: *samples,
                seed: cfg.seed,
                ..ViSampler::default()
            };
            let report = check_vi(&op, &xdag, beta, &phi, &sampler)?;
            let holds = report.holds();
            sink.summary(&report)?;
            Ok(holds)
        }
        Command::Solve { delta } => {
            let cfg = load_config(cli)?;
            let (op, xdag, _) = cfg.setup()?;
            let y = op.apply(&xdag)?;
            let y_delta = synthesize_noise(&op, &y, *delta, cfg.seed)?;
            let alpha = choose_alpha(&cfg.alpha_rule, *delta, &op, &y_delta, cfg.p, &cfg.solver)?;
            let prob = TikhonovProblem::new(&op, y_delta, alpha, cfg.p)?;
            let (x, diag) = solve_tikhonov(&prob, &cfg.solver)?;
            let rows: Vec<SolutionRow> = x
                .coeffs()
                .iter()
                .zip(xdag.coeffs())
                .enumerate()
                .map(|(k, (&v, &d))| SolutionRow {
                    schema_version: SCHEMA_VERSION,
                    position: k,
                    index: x.index_origin() + k as i64,
                    x: v,
                    xdag: d,
                })
                .collect();
            sink.table("solution", &Table::from_rows(&rows)?)?;
            sink.summary(&serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "delta": delta,
                "alpha": alpha,
                "error_l1": x.sub(&xdag).l1_norm(),
                "residual": prob.residual_norm(x.coeffs()),
                "diagnostics": diag,
            }))?;
            Ok(true)
        }
        Command::Rates => {
            let cfg = load_config(cli)?;
            let outcome = run_rate_experiment(&cfg)?;
            sink.table("records", &Table::from_rows(&outcome.records)?)?;
            if cli.out.is_some() {
                sink.table("gammas", &Table::from_rows(&gamma_rows(&outcome.gammas))?)?;
                sink.table("phi", &Table::from_rows(&phi_rows(&outcome.phi, &default_t_grid()))?)?;
            }
            sink.summary(&outcome.summary)?;
            Ok(outcome.summary.failures == 0)
        }
        Command::Nazarov {
            measure,
            n,
            trials,
            freq_min,
            freq_max,
            grid_size,
        } => {
            let cfg = NazarovConfig {
                intervals: vec![Interval::new(0.0, *measure)],
                n: *n,
                trials: *trials,
                freq_range: (*freq_min, *freq_max),
                grid_size: *grid_size,
                seed: cli.seed.unwrap_or(0),
            };
            let report = nazarov_check(&cfg)?;
            sink.summary(&report)?;
            Ok(report.passed())
        }
        Command::Example { name } => {
            let name = match name {
                Example::Denoising => ExampleName::Denoising,
                Example::Wiener => ExampleName::Wiener,
            };
            let bundle = reproduce_example(name, cli.seed.unwrap_or(0))?;
            match cli.out.as_deref() {
                Some(dir) => bundle.write(dir, sink.format)?,
                None => {
                    for (stem, table) in &bundle.tables {
                        println!("# {stem}");
                        print!("{}", table.render(sink.format)?);
                    }
                    sink.summary(&bundle.summary)?;
                }
            }
            Ok(bundle.passed)
        }
    }
}

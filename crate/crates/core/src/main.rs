use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use berkson::config::{self, Bounds, Config, EstimatorKind, EstimatorSection};
use berkson::estimator::{self, EstimateResult};
use berkson::model::ModelSpec;
use berkson::quadrature::{QuadratureRule, DEFAULT_ORDER};
use berkson::simulated::{self, DrawStore, Half, ImportanceDensity, DEFAULT_NU};
use berkson::{datagen, io, moments, study, Error, Result};

#[derive(Parser)]
#[command(name = "berkson", version, about = "Moment-based estimation for regression with Berkson measurement error")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV dataset with header y,z1,...,zk.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Built-in model name or a TOML file with a [model] table.
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "mde")]
        estimator: String,
        /// Draws per half-store for the simulated estimator.
        #[arg(long = "S", default_value_t = 100)]
        s: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML file with `lower` and `upper` arrays.
        #[arg(long)]
        bounds: Option<PathBuf>,
        /// Degrees of freedom of the t importance density.
        #[arg(long, default_value_t = DEFAULT_NU)]
        nu: f64,
        #[arg(long, default_value_t = 5)]
        multistart: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a dataset from the [model] and [data] tables of a config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a replication study and write report.json, summary.csv and timing.json.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print m1 and m2 by closed form, quadrature and simulation.
    Moments {
        #[arg(long)]
        model: String,
        /// Comma-separated parameter vector (theta, psi, sigma_eps2).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        gamma: Vec<f64>,
        /// Comma-separated observed predictor.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z: Vec<f64>,
        #[arg(long = "S", default_value_t = 100_000)]
        s: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit {
            data,
            model,
            estimator,
            s,
            seed,
            bounds,
            nu,
            multistart,
            out,
        } => fit(FitArgs {
            data,
            model,
            estimator,
            s,
            seed,
            bounds,
            nu,
            multistart,
            out,
        }),
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Study { config, out } => run_study(&config, &out),
        Command::Moments { model, gamma, z, s, seed } => print_moments(&model, &gamma, &z, s, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct FitArgs {
    data: PathBuf,
    model: String,
    estimator: String,
    s: usize,
    seed: u64,
    bounds: Option<PathBuf>,
    nu: f64,
    multistart: usize,
    out: PathBuf,
}

fn fit(a: FitArgs) -> Result<()> {
    let kind: EstimatorKind = a.estimator.parse()?;
    let model = config::model_from_arg(&a.model)?;
    let data = io::read_csv(&a.data)?;
    let bounds: Option<Bounds> = a.bounds.as_ref().map(config::load_toml).transpose()?;
    let space = config::resolve_space(&model, bounds.as_ref())?;
    let section = EstimatorSection {
        kind,
        s: a.s,
        nu: a.nu,
        multistart: a.multistart,
        seed: a.seed,
        ..EstimatorSection::default()
    };
    section.validate()?;
    let options = section.fit_options(a.seed);
    let result = match kind {
        EstimatorKind::Mde | EstimatorKind::Mde2 => estimator::fit_mde(&data, &model, &space, &options)?,
        EstimatorKind::Se => {
            let phi = ImportanceDensity::default_with_nu(&model, &space, a.nu)?;
            estimator::fit_se(&data, &model, &space, &options, a.s, &phi, a.seed)?
        }
    };
    io::write_json(&result, &a.out)?;
    print_fit(&model, &result);
    if result.std_errors.is_none() {
        let reason = result
            .diagnostics
            .get("inference")
            .and_then(|v| v.as_str())
            .unwrap_or("unavailable")
            .to_string();
        let condition = result.diagnostics.get("b_condition").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        return Err(Error::InferenceUnavailable { reason, condition });
    }
    Ok(())
}

fn print_fit(model: &ModelSpec, r: &EstimateResult) {
    let names = study::parameter_names(model.dims());
    println!("{} fit of '{}': objective {:.6e}, converged {}, boundary {}", r.estimator, model.name(), r.objective_value, r.converged, r.boundary_hit);
    for (j, name) in names.iter().enumerate() {
        match &r.std_errors {
            Some(se) => println!("  {name:<12} {:>14.6} (se {:.6})", r.gamma_hat[j], se[j]),
            None => println!("  {name:<12} {:>14.6}", r.gamma_hat[j]),
        }
    }
    if let Some(w) = r.diagnostics.get("warning") {
        println!("warning: {}", w.as_str().unwrap_or_default());
    }
}

fn simulate(config_path: &PathBuf, out: &PathBuf) -> Result<()> {
    let c = Config::load(config_path)?;
    let gen = datagen::GenConfig {
        model: c.model.clone(),
        gamma0: c.data.gamma0.clone(),
        n: c.data.n,
        z: c.data.z.clone(),
        epsilon: c.data.epsilon,
        seed: c.data.seed,
    };
    let data = datagen::generate_dataset(&gen)?;
    io::write_csv(&data, out)?;
    println!("wrote {} observations to {}", data.len(), out.display());
    Ok(())
}

fn run_study(config_path: &PathBuf, out: &PathBuf) -> Result<()> {
    let c = Config::load(config_path)?;
    let start = Instant::now();
    let report = study::run_study(c)?;
    let elapsed = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(out)?;
    io::write_json(&report, out.join("report.json"))?;
    io::write_table(&study::SUMMARY_HEADER, &study::summary_rows(&report), out.join("summary.csv"))?;
    io::write_json(&json!({ "seconds": elapsed }), out.join("timing.json"))?;
    println!(
        "{} replications ({} failed) in {:.1}s; report in {}",
        report.replications,
        report.failed,
        elapsed,
        out.display()
    );
    for s in &report.summary {
        println!(
            "  {:<12} bias {:>10.5} rmse {:>9.5} mean se {:>9.5} coverage {:.3}",
            s.name, s.bias, s.rmse, s.mean_se, s.coverage
        );
    }
    Ok(())
}

fn print_moments(model_arg: &str, gamma: &[f64], z: &[f64], s: usize, seed: u64) -> Result<()> {
    let model = config::model_from_arg(model_arg)?;
    let d = model.dims();
    if gamma.len() != d.len() {
        return Err(Error::Config(format!("--gamma needs {} values, got {}", d.len(), gamma.len())));
    }
    if z.len() != d.k {
        return Err(Error::Config(format!("--z needs {} values, got {}", d.k, z.len())));
    }
    println!("{:<12} {:>20} {:>20}", "method", "m1", "m2");
    let show = |label: &str, r: Result<berkson::MomentPair>| match r {
        Ok(m) => println!("{label:<12} {:>20.12} {:>20.12}", m.m1, m.m2),
        Err(e) => println!("{label:<12} unavailable: {e}"),
    };
    show(
        "closed",
        moments::m1_closed(&model, z, gamma).and_then(|m1| Ok(berkson::MomentPair { m1, m2: moments::m2_closed(&model, z, gamma)? })),
    );
    show(
        "quadrature",
        QuadratureRule::standard(DEFAULT_ORDER, d.k).and_then(|rule| moments::m_quad(&model, z, gamma, &rule)),
    );
    let psi = &gamma[d.psi_range()];
    let scale = model.density().normal_variance(psi).map(f64::sqrt).unwrap_or(1.0);
    let simulated = ImportanceDensity::student_t(d.k, DEFAULT_NU, scale)
        .and_then(|phi| DrawStore::build(1, s, d.k, &phi, seed))
        .and_then(|store| simulated::simulated_moments(&model, z, gamma, &store, 0, Half::First));
    show("simulated", simulated);
    println!("(simulation: S = {s} draws from a t{DEFAULT_NU} importance density, seed {seed})");
    Ok(())
}

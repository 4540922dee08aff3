//! `phsyn` command-line tool.
//!
//! Exit codes: 0 on success, 2 when an input violates the model
//! constraints, 3 when synthesis or passivation is infeasible, 4 on I/O or
//! schema errors, 1 otherwise.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use phsyn::experiment::{run_table1_experiment, write_table_csv};
use phsyn::hinf::{sigma_sweep, ClosedLoopResponse};
use phsyn::io::{
    load_controller, load_plant, save_controller, save_plant, save_state_space, write_popov_csv, write_sigma_csv,
    LoadedPlant, SampledPlant,
};
use phsyn::linalg::logspace;
use phsyn::msd::{msd_plant, MSDConfig};
use phsyn::passivity::{kyp_check, passivity_enforce, passivity_tolerance, popov_sweep, PassivationConfig};
use phsyn::synthesis::{sobsyn, validate_closed_loop, SamplingConfig, SynthesisConfig};
use phsyn::{Error, FeedbackSign, PlantEvaluator, PlantResponse};

#[derive(Parser)]
#[command(name = "phsyn", version, about = "Fixed-order port-Hamiltonian H-infinity controller synthesis")]
struct Cli {
    /// Worker threads for frequency sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a port-Hamiltonian controller for a plant.
    Synth(SynthArgs),
    /// Closed-loop H-infinity norm and stability of a plant and controller.
    Validate(ValidateArgs),
    /// Popov sweep and passivity certificate of a controller.
    Passivity(PassivityArgs),
    /// Singular-value sweep of a system or a closed loop.
    Sigma(SigmaArgs),
    /// Write a mass-spring-damper benchmark plant.
    Msd(MsdArgs),
    /// Sweep benchmark sizes and controller orders.
    Table1(Table1Args),
}

#[derive(Args, Clone)]
struct SynthOptions {
    #[arg(long, default_value_t = 1e-2)]
    eps1: f64,
    #[arg(long, default_value_t = 1e-6)]
    eps2: f64,
    /// Initial upper bound on the achievable level.
    #[arg(long)]
    gamma_u: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    omega_min: f64,
    #[arg(long, default_value_t = 1e3)]
    omega_max: f64,
    /// Number of initial frequency samples.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// BFGS iteration budget per bisection step.
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Use positive instead of negative feedback.
    #[arg(long)]
    positive_feedback: bool,
}

impl SynthOptions {
    fn config(&self, order: usize) -> SynthesisConfig {
        SynthesisConfig {
            order,
            gamma_u: self.gamma_u,
            eps1: self.eps1,
            eps2: self.eps2,
            max_bfgs_iter: self.max_iter,
            initial_samples: self.samples,
            sampling: SamplingConfig {
                omega_min: self.omega_min,
                omega_max: self.omega_max,
                ..SamplingConfig::default()
            },
            seed: self.seed,
            sign: sign(self.positive_feedback),
            ..SynthesisConfig::default()
        }
    }
}

fn sign(positive: bool) -> FeedbackSign {
    if positive {
        FeedbackSign::Positive
    } else {
        FeedbackSign::Negative
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Plant file (`ph-plant/v1` or `sampled-plant/v1`).
    #[arg(long)]
    plant: PathBuf,
    /// Controller order.
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[command(flatten)]
    opts: SynthOptions,
    /// Output directory for `report.json` and `controller.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    plant: PathBuf,
    /// Controller file (`ph-form/v1` or `state-space/v1`).
    #[arg(long)]
    controller: PathBuf,
    #[arg(long)]
    positive_feedback: bool,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PassivityArgs {
    /// Controller file (`ph-form/v1` or `state-space/v1`).
    #[arg(long)]
    controller: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    grid_min: f64,
    #[arg(long, default_value_t = 1e4)]
    grid_max: f64,
    #[arg(long, default_value_t = 1000)]
    grid_points: usize,
    /// Popov eigenvalue CSV.
    #[arg(long)]
    csv: PathBuf,
    /// Certificate JSON.
    #[arg(long)]
    certificate: PathBuf,
    /// Also compute a passive C-perturbation and write it as `state-space/v1`.
    #[arg(long)]
    enforce: Option<PathBuf>,
}

#[derive(Args)]
struct SigmaArgs {
    /// Standalone system (`ph-form/v1` or `state-space/v1`).
    #[arg(long, conflicts_with_all = ["plant", "controller"])]
    system: Option<PathBuf>,
    /// Plant for a closed-loop sweep.
    #[arg(long, requires = "controller")]
    plant: Option<PathBuf>,
    #[arg(long, requires = "plant")]
    controller: Option<PathBuf>,
    #[arg(long)]
    positive_feedback: bool,
    #[arg(long, default_value_t = 1e-3)]
    omega_min: f64,
    #[arg(long, default_value_t = 1e3)]
    omega_max: f64,
    #[arg(long, default_value_t = 1000)]
    points: usize,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MsdArgs {
    #[arg(long, default_value_t = 5)]
    masses: usize,
    #[arg(long, default_value_t = 4.0)]
    mass: f64,
    #[arg(long, default_value_t = 4.0)]
    spring: f64,
    #[arg(long, default_value_t = 1.0)]
    damper: f64,
    /// 1-based indices of the actuated and measured masses.
    #[arg(long, value_delimiter = ',')]
    io: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.4)]
    beta: f64,
    #[arg(long, default_value_t = 0.4)]
    eta: f64,
    /// Tabulate the transfer function at this many log-spaced frequencies
    /// on `[omega-min, omega-max]` and write a `sampled-plant/v1` file.
    #[arg(long)]
    sample_points: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    omega_min: f64,
    #[arg(long, default_value_t = 1e3)]
    omega_max: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Table1Args {
    /// Controller orders.
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    orders: Vec<usize>,
    /// Plant state dimensions (even).
    #[arg(long, value_delimiter = ',', default_value = "10,20,100")]
    sizes: Vec<usize>,
    #[command(flatten)]
    opts: SynthOptions,
    /// Table CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-cell details as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(err) = e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        return match err {
            Error::Validation(_) | Error::Dimension(_) | Error::ThetaLength { .. } => 2,
            Error::Initialization(_) | Error::Infeasible(_) | Error::Optimization { .. } => 3,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Schema(_) | Error::MissingSample { .. } => 4,
            _ => 1,
        };
    }
    if e.chain().any(|c| c.is::<io::Error>()) {
        4
    } else {
        1
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Validate(a) => validate(a),
        Command::Passivity(a) => passivity(a),
        Command::Sigma(a) => sigma(a),
        Command::Msd(a) => msd(a),
        Command::Table1(a) => table1(a),
    }
}

fn with_plant<T>(path: &Path, f: impl FnOnce(&dyn PlantResponse) -> anyhow::Result<T>) -> anyhow::Result<T> {
    let loaded = load_plant(path).with_context(|| format!("loading plant {}", path.display()))?;
    match loaded {
        LoadedPlant::Model(p) => f(&PlantEvaluator::new(&p)),
        LoadedPlant::Sampled(s) => f(&s),
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json_value(path: Option<&Path>, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let config = a.opts.config(a.order);
    let report = with_plant(&a.plant, |p| Ok(sobsyn(p, &config)?))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let report_path = a.out.join("report.json");
    write_json_value(Some(&report_path), &serde_json::to_value(&report).map_err(Error::from)?)?;
    save_controller(&report.controller, &a.out.join("controller.json"))?;
    log::info!(
        "gamma in [{:.4e}, {:.4e}], validated norm {:.4e}",
        report.gamma_l,
        report.gamma_u,
        report.validation.hinf.norm
    );
    Ok(())
}

fn validate(a: ValidateArgs) -> anyhow::Result<()> {
    let ctrl = load_controller(&a.controller)
        .with_context(|| format!("loading controller {}", a.controller.display()))?
        .to_state_space();
    let v = with_plant(&a.plant, |p| {
        Ok(validate_closed_loop(
            p,
            &ctrl,
            sign(a.positive_feedback),
            &SamplingConfig::default(),
            SynthesisConfig::default().exact_validation_limit,
        )?)
    })?;
    let finite = |x: f64| x.is_finite().then_some(x);
    write_json_value(
        a.out.as_deref(),
        &json!({
            "hinf_norm": finite(v.hinf.norm),
            "peak_omega": finite(v.hinf.peak_omega),
            "spectral_abscissa": v.spectral_abscissa,
            "well_posed": v.well_posed,
        }),
    )
}

fn passivity(a: PassivityArgs) -> anyhow::Result<()> {
    let ctrl = load_controller(&a.controller)
        .with_context(|| format!("loading controller {}", a.controller.display()))?
        .to_state_space();
    if !(a.grid_min > 0.0 && a.grid_min < a.grid_max && a.grid_points >= 2) {
        return Err(Error::Dimension(format!(
            "invalid grid [{}, {}] with {} points",
            a.grid_min, a.grid_max, a.grid_points
        ))
        .into());
    }
    let grid = logspace(a.grid_min, a.grid_max, a.grid_points);
    let rows = popov_sweep(&ctrl, &grid)?;
    write_popov_csv(output(Some(&a.csv))?, &rows)?;
    let cert = kyp_check(&ctrl, passivity_tolerance(ctrl.d()))?;
    write_json_value(Some(&a.certificate), &serde_json::to_value(cert).map_err(Error::from)?)?;
    if let Some(path) = a.enforce {
        let result = passivity_enforce(&ctrl, &grid, &PassivationConfig::default())?;
        log::info!("perturbation norm {:.4e}", result.perturbation_norm);
        save_state_space(&result.controller, &path)?;
    }
    Ok(())
}

fn sigma(a: SigmaArgs) -> anyhow::Result<()> {
    if !(a.omega_min > 0.0 && a.omega_min < a.omega_max && a.points >= 2) {
        return Err(Error::Dimension(format!(
            "invalid grid [{}, {}] with {} points",
            a.omega_min, a.omega_max, a.points
        ))
        .into());
    }
    let grid = logspace(a.omega_min, a.omega_max, a.points);
    let rows = match (&a.system, &a.plant, &a.controller) {
        (Some(sys), _, _) => {
            let ss = load_controller(sys)
                .with_context(|| format!("loading system {}", sys.display()))?
                .to_state_space();
            sigma_sweep(&ss, &grid)?
        }
        (None, Some(plant), Some(ctrl)) => {
            let k = load_controller(ctrl)
                .with_context(|| format!("loading controller {}", ctrl.display()))?
                .to_state_space();
            with_plant(plant, |p| {
                let grid: Vec<f64> = if p.model().is_some() {
                    grid.clone()
                } else {
                    p.grid(a.omega_min, a.omega_max, usize::MAX)
                };
                let resp = ClosedLoopResponse {
                    plant: p,
                    controller: &k,
                    sign: sign(a.positive_feedback),
                };
                Ok(sigma_sweep(&resp, &grid)?)
            })?
        }
        _ => return Err(anyhow!("give either --system or both --plant and --controller")),
    };
    write_sigma_csv(output(a.out.as_deref())?, &rows)?;
    Ok(())
}

fn msd(a: MsdArgs) -> anyhow::Result<()> {
    let defaults = MSDConfig::new(a.masses);
    let cfg = MSDConfig {
        n_masses: a.masses,
        mass: a.mass,
        spring: a.spring,
        damper: a.damper,
        io_masses: a.io.unwrap_or(defaults.io_masses),
        beta: a.beta,
        eta: a.eta,
    };
    let plant = msd_plant(&cfg)?;
    match a.sample_points {
        Some(count) => {
            let omegas = logspace(a.omega_min, a.omega_max, count);
            SampledPlant::from_model(&plant, &omegas)?.save(&a.out)?;
        }
        None => save_plant(&plant, &a.out)?,
    }
    Ok(())
}

fn table1(a: Table1Args) -> anyhow::Result<()> {
    let base = MSDConfig::new(1);
    let base = MSDConfig {
        io_masses: vec![1, 2],
        ..base
    };
    let cells = run_table1_experiment(&a.orders, &a.sizes, &base, &a.opts.config(1));
    write_table_csv(output(Some(&a.out))?, &cells)?;
    if let Some(path) = a.json {
        write_json_value(Some(&path), &serde_json::to_value(&cells).map_err(Error::from)?)?;
    }
    for c in &cells {
        if let Some(e) = &c.error {
            eprintln!("n={}, k={}: {e}", c.n, c.k);
        }
    }
    Ok(())
}

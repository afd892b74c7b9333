//! Command-line front end and the experiment pipelines behind `parmor run`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, GainSection, ReductionMethod};
use crate::error::{Error, Result};
use crate::eval::{bode_magnitude, h2_relative_error, moment_error_curve, nrms, system_hash, Curve, FreqGrid, Target, H2_DEFINITION};
use crate::linalg::Matrix;
use crate::moment_basis::{equidistant, fit_data_driven, fit_model_based, BasisSet, SnapshotDataset, WeightMatrix};
use crate::moment_series::{nested_lyapunov, nested_sylvester, MomentSeries};
use crate::nonlinear::{
    assemble_nonlinear_rom, fit_nonlinear_moment, make_nl_benchmark, DeltaMap, NonlinearBasisSet, NonlinearParametricSystem,
    NonlinearRom, NL_BENCHMARK_INTERVAL,
};
use crate::psys::{make_benchmark, DissipativitySpec, ParametricLTI, BENCHMARK_A_RANGE, BENCHMARK_B_RANGE};
use crate::rom::{
    assemble, verify_moment_matching, verify_preservation_grid, Certificate, GainMap, MomentMap, Property, ReducedModel,
    DEFAULT_EPSILON,
};
use crate::siggen::{log_grid, SignalGenerator};
use crate::sim::{add_output_noise, collect_dataset, simulate_interconnection, simulate_rk4, window_times, Method, Model, SimConfig};

/// Process exit code for an error: 2 for invalid configuration, 3 for
/// numerical failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigInvalid { .. } => 2,
        Error::SpectrumOverlap { .. }
        | Error::NumericalFailure(_)
        | Error::NotHurwitz { .. }
        | Error::RankDeficient { .. }
        | Error::SingularShift { .. }
        | Error::SingularGram
        | Error::NonFiniteState { .. }
        | Error::ObservabilityFailure
        | Error::ExcitabilityFailure => 3,
        _ => 1,
    }
}

/// Caps the global rayon pool at `PARMOR_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PARMOR_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Error::config("PARMOR_THREADS", format!("not a thread count: '{v}'")))?;
        if n == 0 {
            return Err(Error::config("PARMOR_THREADS", "must be positive"));
        }
        // a pool may already exist when embedded in tests; keep it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "parmor", version, about = "Parametric model order reduction by moment matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Benchmark systems.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    /// Simulate a system driven by a signal generator; writes a trajectory CSV.
    Simulate(SimulateArgs),
    /// Build a moment approximation or reduced model.
    Reduce {
        #[command(subcommand)]
        cmd: ReduceCmd,
    },
    /// Check a reduced model on a parameter grid.
    Verify(VerifyArgs),
    /// Error curves and frequency responses.
    Eval(EvalArgs),
    /// Run a full experiment from a configuration file.
    Run(RunArgs),
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Write the benchmark system as JSON.
    Gen {
        /// Number of 2x2 blocks (n = 2k).
        #[arg(long, default_value_t = 500)]
        k: usize,
        /// Write the nonlinear six-state benchmark instead.
        #[arg(long)]
        nl: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Explicit generator frequencies (rad/s), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub freqs: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    pub lo_exp: f64,
    #[arg(long, default_value_t = 3.1)]
    pub hi_exp: f64,
    /// Number of log-spaced frequencies when --freqs is absent.
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long)]
    pub include_zero: bool,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
}

impl GenArgs {
    pub fn build(&self) -> Result<SignalGenerator> {
        let freqs = match &self.freqs {
            Some(f) => f.clone(),
            None => log_grid(self.lo_exp, self.hi_exp, self.count)?,
        };
        let g = SignalGenerator::from_frequencies(&freqs, self.include_zero)?;
        if self.amplitude != 1.0 {
            g.scale_omega0(self.amplitude)
        } else {
            Ok(g)
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Rk4,
    ExpmExact,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rk4 => Method::Rk4,
            MethodArg::ExpmExact => Method::ExpmExact,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// System JSON (linear or nonlinear); defaults to the k=500 benchmark.
    #[arg(long)]
    pub system: Option<PathBuf>,
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 20.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Defaults to expm-exact for linear and rk4 for nonlinear systems.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, default_value_t = 1)]
    pub record_stride: usize,
    #[command(flatten)]
    pub gen: GenArgs,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ReduceCmd {
    /// Nested Sylvester series; writes the MomentSeries JSON.
    Series {
        #[arg(long)]
        system: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, default_value_t = 0.55)]
        center: f64,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write a reduced model with the preserving gain (series certificate, Q = I).
        #[arg(long)]
        rom: Option<PathBuf>,
    },
    /// Basis-function weights fitted to exact moments.
    Basis {
        #[arg(long)]
        system: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        basis_order: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        rom: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        zeta: f64,
    },
    /// Basis-function weights estimated from simulated snapshot data.
    Data {
        #[arg(long)]
        system: Option<PathBuf>,
        /// Read the snapshots from a dataset directory instead of simulating.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        basis_order: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, num_args = 2, default_values_t = [17.38, 20.0])]
        window: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        h: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[command(flatten)]
        gen: GenArgs,
        /// Where to write the simulated dataset.
        #[arg(long)]
        dataset_out: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        rom: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        zeta: f64,
    },
    /// RBF regression of the nonlinear moment and the nonlinear reduced model.
    Nl {
        /// Nonlinear system JSON; defaults to the built-in benchmark.
        #[arg(long)]
        system: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        rbf: usize,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 9)]
        k: usize,
        #[arg(long, num_args = 2, default_values_t = [148.67, 200.0])]
        window: Vec<f64>,
        #[arg(long, default_value_t = 440)]
        h: usize,
        #[arg(long, default_value_t = 1e-2)]
        dt: f64,
        /// Constant delta = gamma (1, ..., 1).
        #[arg(long, default_value_t = 0.6)]
        delta: f64,
        #[arg(long)]
        ridge: Option<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.6")]
        freqs: Vec<f64>,
        #[arg(long, default_value_t = 0.3)]
        amplitude: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PropertyArg {
    Stability,
    Passivity,
    MomentMatching,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Reduced model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Full system JSON when the model does not embed it.
    #[arg(long)]
    pub system: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "stability")]
    pub property: PropertyArg,
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
    /// Parameter for the moment-matching check.
    #[arg(long, default_value_t = 0.55)]
    pub p: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Certificate JSON for dissipativity; defaults to the model's own.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    L2Moment,
    H2,
    Bode,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub metric: MetricArg,
    /// Full system JSON; defaults to the k=500 benchmark.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Reduced model, moment series or weight matrix JSON. For l2-moment it
    /// defaults to an N=4 series at 0.55 on the generator given by the flags.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Points of the parameter grid (l2-moment, h2) or frequency grid (bode).
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    /// Parameter for bode.
    #[arg(long, default_value_t = 0.55)]
    pub p: f64,
    #[arg(long, default_value_t = 1000)]
    pub freq_points: usize,
    #[arg(long)]
    pub gnuplot: bool,
    #[command(flatten)]
    pub gen: GenArgs,
    /// Output CSV; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Parent of the run directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Reuse an existing run directory of the same configuration.
    #[arg(long)]
    pub force: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench { cmd: BenchCmd::Gen { k, nl, output } } => {
            let text = if nl {
                make_nl_benchmark(NL_BENCHMARK_INTERVAL)?.to_json()?
            } else {
                make_benchmark(k, BENCHMARK_A_RANGE, BENCHMARK_B_RANGE)?.to_json()?
            };
            fs::write(output, text)?;
            Ok(())
        }
        Command::Simulate(a) => simulate_cmd(&a),
        Command::Reduce { cmd } => reduce_cmd(cmd),
        Command::Verify(a) => verify_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Run(a) => {
            let dir = run_experiment(&a.config, &a.out, a.force)?;
            println!("{}", dir.display());
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn load_linear(path: Option<&PathBuf>) -> Result<ParametricLTI> {
    match path {
        Some(p) => ParametricLTI::from_json(&read(p)?),
        None => make_benchmark(500, BENCHMARK_A_RANGE, BENCHMARK_B_RANGE),
    }
}

enum AnySystem {
    Linear(ParametricLTI),
    Nonlinear(NonlinearParametricSystem),
}

fn load_any(path: Option<&PathBuf>) -> Result<AnySystem> {
    let Some(path) = path else {
        return Ok(AnySystem::Linear(load_linear(None)?));
    };
    let text = read(path)?;
    let v: Value = serde_json::from_str(&text)?;
    // nonlinear systems carry a vector field `f`
    if v.get("f").is_some() {
        Ok(AnySystem::Nonlinear(NonlinearParametricSystem::from_json(&text)?))
    } else {
        Ok(AnySystem::Linear(ParametricLTI::from_json(&text)?))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn simulate_cmd(a: &SimulateArgs) -> Result<()> {
    let gen = a.gen.build()?;
    let sys = load_any(a.system.as_ref())?;
    let default = match sys {
        AnySystem::Linear(_) => Method::ExpmExact,
        AnySystem::Nonlinear(_) => Method::Rk4,
    };
    let cfg = SimConfig {
        dt: a.dt,
        t_end: a.t_end,
        method: a.method.map(Method::from).unwrap_or(default),
        record_stride: a.record_stride,
        sample_times: None,
    };
    let model = match &sys {
        AnySystem::Linear(s) => Model::Linear(s),
        AnySystem::Nonlinear(s) => Model::Nonlinear(s),
    };
    simulate_interconnection(model, &gen, a.p, None, &cfg)?.write_csv(&a.output)
}

fn series_rom(sys: &ParametricLTI, series: MomentSeries, certificate: &str, epsilon: f64) -> Result<ReducedModel> {
    let gen = series.generator.clone();
    let q = Matrix::identity(sys.n, sys.n);
    let cert = match certificate {
        "series" => Certificate::Series { series: nested_lyapunov(sys, series.expansion_point, series.order(), &q)? },
        _ => Certificate::Lyapunov { q },
    };
    assemble(&gen, GainMap::preserving(cert, epsilon)?, MomentMap::Series { series }, Some(sys))
}

fn reduce_cmd(cmd: ReduceCmd) -> Result<()> {
    match cmd {
        ReduceCmd::Series { system, order, center, gen, output, rom } => {
            let sys = load_linear(system.as_ref())?;
            let series = nested_sylvester(&sys, &gen.build()?, center, order)?;
            fs::write(&output, series.to_json()?)?;
            if let Some(path) = rom {
                fs::write(path, series_rom(&sys, series, "series", DEFAULT_EPSILON)?.to_json()?)?;
            }
        }
        ReduceCmd::Basis { system, basis_order, k, gen, output, rom, zeta } => {
            let sys = load_linear(system.as_ref())?;
            let gen = gen.build()?;
            let basis = BasisSet::polynomial(basis_order, sys.param_interval)?;
            let w = fit_model_based(&sys, &gen, &basis, &equidistant(sys.param_interval, k))?;
            write_json(&output, &w)?;
            if let Some(path) = rom {
                let m = assemble(&gen, GainMap::mirrored(&gen, zeta)?, MomentMap::Basis { weights: w }, None)?;
                fs::write(path, m.to_json()?)?;
            }
        }
        ReduceCmd::Data {
            system,
            dataset,
            basis_order,
            k,
            window,
            h,
            dt,
            noise_std,
            noise_seed,
            gen,
            dataset_out,
            output,
            rom,
            zeta,
        } => {
            let gen = gen.build()?;
            let (data, interval) = match dataset {
                Some(dir) => {
                    let d = SnapshotDataset::read_dir(&dir)?;
                    let interval = match &system {
                        Some(_) => load_linear(system.as_ref())?.param_interval,
                        None => [d.params.iter().copied().fold(f64::INFINITY, f64::min), d.params.iter().copied().fold(f64::NEG_INFINITY, f64::max)],
                    };
                    (d, interval)
                }
                None => {
                    let sys = load_linear(system.as_ref())?;
                    let cfg = SimConfig { dt, t_end: window[1], method: Method::ExpmExact, record_stride: 1, sample_times: None };
                    let params = equidistant(sys.param_interval, k);
                    let d = collect_dataset(Model::Linear(&sys), &gen, &params, [window[0], window[1]], h, &cfg)?;
                    (add_output_noise(&d, noise_std, noise_seed)?, sys.param_interval)
                }
            };
            if let Some(dir) = dataset_out {
                data.write_dir(&dir)?;
            }
            let w = fit_data_driven(&data, &BasisSet::polynomial(basis_order, interval)?, interval)?;
            write_json(&output, &w)?;
            if let Some(path) = rom {
                let m = assemble(&gen, GainMap::mirrored(&gen, zeta)?, MomentMap::Basis { weights: w }, None)?;
                fs::write(path, m.to_json()?)?;
            }
        }
        ReduceCmd::Nl { system, rbf, width, seed, k, window, h, dt, delta, ridge, freqs, amplitude, output } => {
            let sys = match &system {
                Some(p) => NonlinearParametricSystem::from_json(&read(p)?)?,
                None => make_nl_benchmark(NL_BENCHMARK_INTERVAL)?,
            };
            let gen = SignalGenerator::from_frequencies(&freqs, false)?.scale_omega0(amplitude)?;
            let cfg = SimConfig { dt, t_end: window[1], method: Method::Rk4, record_stride: 1, sample_times: None };
            let params = equidistant(sys.param_interval, k);
            let data = collect_dataset(Model::Nonlinear(&sys), &gen, &params, [window[0], window[1]], h, &cfg)?;
            let basis = NonlinearBasisSet::rbf_from_data(&data, rbf, width, seed)?;
            let weights = fit_nonlinear_moment(&data, &basis, ridge)?;
            let rom = assemble_nonlinear_rom(&gen, DeltaMap::uniform(gen.nu(), delta), weights)?;
            write_json(&output, &rom)?;
        }
    }
    Ok(())
}

fn verify_cmd(a: &VerifyArgs) -> Result<()> {
    let model = ReducedModel::from_json(&read(&a.model)?)?;
    let system = match &a.system {
        Some(p) => Some(ParametricLTI::from_json(&read(p)?)?),
        None => None,
    };
    let sys = system.as_ref().or(model.system.as_ref());
    let report = match a.property {
        PropertyArg::MomentMatching => {
            let sys = sys.ok_or_else(|| Error::invalid("moment matching needs the full system (--system)"))?;
            serde_json::to_value(verify_moment_matching(&model, sys, a.p, a.tol)?)?
        }
        PropertyArg::Stability | PropertyArg::Passivity => {
            let property = match a.property {
                PropertyArg::Stability => Property::Stability { margin: a.margin },
                _ => Property::Dissipativity { spec: DissipativitySpec::passivity() },
            };
            let cert: Option<Certificate> = match &a.certificate {
                Some(p) => Some(serde_json::from_str(&read(p)?)?),
                None => None,
            };
            let grid = equidistant(model.param_interval, a.grid);
            serde_json::to_value(verify_preservation_grid(&model, sys, &property, cert.as_ref(), &grid)?)?
        }
    };
    let text = serde_json::to_string_pretty(&report)?;
    match &a.output {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

/// A stored artifact that provides `C Pi(p)` approximations.
enum Approx {
    Rom(Box<ReducedModel>),
    Map(MomentMap),
}

fn load_approx(path: &Path) -> Result<Approx> {
    let text = read(path)?;
    let v: Value = serde_json::from_str(&text)?;
    if v.get("moment_map").is_some() {
        Ok(Approx::Rom(Box::new(ReducedModel::from_json(&text)?)))
    } else if v.get("coeffs").is_some() {
        Ok(Approx::Map(MomentMap::Series { series: MomentSeries::from_json(&text)? }))
    } else if v.get("gamma_internal").is_some() {
        Ok(Approx::Map(MomentMap::Basis { weights: serde_json::from_str::<WeightMatrix>(&text)? }))
    } else {
        Err(Error::invalid(format!("{}: not a reduced model, moment series or weight matrix", path.display())))
    }
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let sys = load_linear(a.system.as_ref())?;
    let hash = system_hash(&sys)?;
    let approx = match &a.model {
        Some(p) => Some(load_approx(p)?),
        None => None,
    };
    let curve = match a.metric {
        MetricArg::L2Moment => {
            let (gen, map) = match approx {
                Some(Approx::Rom(m)) => (m.generator.clone(), m.moment_map.clone()),
                Some(Approx::Map(map)) => {
                    let gen = match &map {
                        MomentMap::Series { series } => series.generator.clone(),
                        _ => a.gen.build()?,
                    };
                    (gen, map)
                }
                None => {
                    let gen = a.gen.build()?;
                    let series = nested_sylvester(&sys, &gen, 0.55, 4)?;
                    (gen, MomentMap::Series { series })
                }
            };
            let grid = equidistant(sys.param_interval, a.grid);
            let err = moment_error_curve(&sys, &gen, &map, &grid)?;
            Curve::new("p", grid).meta("system_hash", &hash).meta("metric", "relative l2 moment error").column("error", err)?
        }
        MetricArg::H2 => {
            let Some(Approx::Rom(m)) = approx else {
                return Err(Error::invalid("h2 needs a reduced model (--model)"));
            };
            let grid = equidistant(m.param_interval, a.grid);
            let fg = FreqGrid { points: a.freq_points, ..FreqGrid::default() };
            let err = grid
                .iter()
                .map(|&p| h2_relative_error(Target::System(&sys), Target::Rom(&m), p, &fg))
                .collect::<Result<Vec<_>>>()?;
            Curve::new("p", grid)
                .meta("system_hash", &hash)
                .meta("h2", H2_DEFINITION)
                .meta("freq_grid", format!("[{}, {}] x {}", fg.lo, fg.hi, fg.points))
                .column("h2_rel_error", err)?
        }
        MetricArg::Bode => {
            let fg = FreqGrid { points: a.grid, ..FreqGrid::default() };
            let w = fg.nodes();
            let mut c = Curve::new("omega", w.clone())
                .meta("system_hash", &hash)
                .meta("p", a.p)
                .column("full", bode_magnitude(Target::System(&sys), a.p, &w)?)?;
            if let Some(Approx::Rom(m)) = &approx {
                c = c.column("rom", bode_magnitude(Target::Rom(m), a.p, &w)?)?;
            }
            c
        }
    };
    match &a.output {
        Some(p) => curve.write_file(p, a.gnuplot),
        None => curve.write(&mut std::io::stdout().lock(), a.gnuplot),
    }
}

/// Headline metrics of a run.
#[derive(Debug, Default)]
struct Summary {
    metrics: Map<String, Value>,
}

impl Summary {
    fn put(&mut self, key: &str, v: impl Serialize) -> Result<()> {
        self.metrics.insert(key.to_string(), serde_json::to_value(v)?);
        Ok(())
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Runs the configured experiment and returns the run directory
/// `<out>/<name>-<hash prefix>`.
pub fn run_experiment(config_path: &Path, out: &Path, force: bool) -> Result<PathBuf> {
    let cfg = ExperimentConfig::from_json(&read(config_path)?)?;
    run_config(&cfg, out, force)
}

pub fn run_config(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<PathBuf> {
    let hash = cfg.hash()?;
    let dir = out.join(format!("{}-{}", cfg.name, &hash[..12]));
    if dir.exists() && !force {
        return Err(Error::invalid(format!("run directory {} exists; pass --force to rerun", dir.display())));
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), cfg.canonical_json()?)?;
    let mut summary = Summary::default();
    match cfg.reduction.method {
        ReductionMethod::Series => run_series(cfg, &dir, &mut summary)?,
        ReductionMethod::Basis | ReductionMethod::Data => run_basis(cfg, &dir, &mut summary)?,
        ReductionMethod::Nl => run_nonlinear(cfg, &dir, &mut summary)?,
    }
    let doc = json!({
        "name": cfg.name,
        "config_hash": hash,
        "method": cfg.reduction.method,
        "metrics": Value::Object(summary.metrics),
    });
    write_json(&dir.join("summary.json"), &doc)?;
    Ok(dir)
}

fn gain_for(cfg: &ExperimentConfig, gen: &SignalGenerator, sys: &ParametricLTI, series: Option<&MomentSeries>) -> Result<GainMap> {
    Ok(match &cfg.reduction.gain {
        GainSection::Preserving { certificate, epsilon } => {
            let q = Matrix::identity(sys.n, sys.n);
            let cert = match (certificate.as_str(), series) {
                ("series", Some(s)) => Certificate::Series { series: nested_lyapunov(sys, s.expansion_point, s.order(), &q)? },
                ("series", None) => return Err(Error::config("reduction.gain.certificate", "a series certificate needs the series method")),
                _ => Certificate::Lyapunov { q },
            };
            GainMap::preserving(cert, *epsilon)?
        }
        GainSection::Mirrored { zeta } => GainMap::mirrored(gen, *zeta)?,
        GainSection::Damped { gamma } => GainMap::damped(gen, *gamma)?,
        GainSection::Placed { poles } => GainMap::placed(gen, poles)?,
        GainSection::Constant { g } => GainMap::constant(gen, g)?,
    })
}

fn params_in(values: &[f64], interval: [f64; 2]) -> Vec<f64> {
    values.iter().copied().filter(|p| *p >= interval[0] && *p <= interval[1]).collect()
}

/// Verification, H2 and Bode outputs shared by the linear pipelines.
fn evaluate_linear(cfg: &ExperimentConfig, dir: &Path, sys: &ParametricLTI, rom: &ReducedModel, summary: &mut Summary) -> Result<()> {
    let iv = sys.param_interval;
    let hash = system_hash(sys)?;
    let v = &cfg.verification;
    let grid = equidistant(iv, v.grid);
    let stab = verify_preservation_grid(rom, Some(sys), &Property::Stability { margin: v.stability_margin }, None, &grid)?;
    summary.put("stability_pass", stab.pass)?;
    summary.put("stability_failures", stab.failures)?;
    let mut mm = Vec::new();
    for p in params_in(&v.moment_matching, iv) {
        let r = verify_moment_matching(rom, sys, p, v.tol)?;
        mm.push(json!({"p": p, "max_abs_err": r.max_abs_err, "pass": r.pass}));
    }
    summary.put("moment_matching", &mm)?;
    write_json(&dir.join("verification.json"), &json!({"stability": stab, "moment_matching": mm}))?;

    let e = &cfg.evaluation;
    let h2_params = params_in(&e.h2_params, iv);
    if !h2_params.is_empty() {
        let h2 = h2_params
            .iter()
            .map(|&p| h2_relative_error(Target::System(sys), Target::Rom(rom), p, &e.freq_grid))
            .collect::<Result<Vec<_>>>()?;
        Curve::new("p", h2_params.clone())
            .meta("system_hash", &hash)
            .meta("h2", H2_DEFINITION)
            .meta("freq_grid", format!("[{}, {}] x {}", e.freq_grid.lo, e.freq_grid.hi, e.freq_grid.points))
            .meta("model", rom.provenance())
            .column("h2_rel_error", h2.clone())?
            .write_file(&dir.join("h2.csv"), e.gnuplot)?;
        summary.put("h2", json!({"p": h2_params, "error": h2}))?;
    }
    let bode_params = params_in(&e.bode_params, iv);
    if !bode_params.is_empty() {
        let w = FreqGrid { points: e.bode_points, ..e.freq_grid }.nodes();
        let mut c = Curve::new("omega", w.clone()).meta("system_hash", &hash).meta("model", rom.provenance());
        for &p in &bode_params {
            c = c.column(&format!("full_p={p}"), bode_magnitude(Target::System(sys), p, &w)?)?;
            c = c.column(&format!("rom_p={p}"), bode_magnitude(Target::Rom(rom), p, &w)?)?;
        }
        c.write_file(&dir.join("bode.csv"), e.gnuplot)?;
    }
    Ok(())
}

fn run_series(cfg: &ExperimentConfig, dir: &Path, summary: &mut Summary) -> Result<()> {
    let sys = cfg.linear_system()?;
    let gen = cfg.generator()?;
    let r = &cfg.reduction;
    let nmax = *r.orders.iter().max().unwrap();
    let series = nested_sylvester(&sys, &gen, r.center, nmax)?;
    fs::write(dir.join("series.json"), series.to_json()?)?;
    let grid = equidistant(sys.param_interval, cfg.evaluation.p_grid);
    let mut curve = Curve::new("p", grid.clone())
        .meta("system_hash", system_hash(&sys)?)
        .meta("metric", "relative l2 moment error")
        .meta("center", r.center)
        .meta("nu", gen.nu());
    let mut maxima = Map::new();
    for &n in &r.orders {
        let map = MomentMap::Series { series: series.truncated(n)? };
        let err = moment_error_curve(&sys, &gen, &map, &grid)?;
        maxima.insert(format!("N={n}"), json!(max_of(&err)));
        curve = curve.column(&format!("N={n}"), err)?;
    }
    curve.write_file(&dir.join("moment_error.csv"), cfg.evaluation.gnuplot)?;
    summary.put("n", sys.n)?;
    summary.put("nu", gen.nu())?;
    summary.put("moment_error_max", Value::Object(maxima))?;
    let center_err = moment_error_curve(&sys, &gen, &MomentMap::Series { series: series.clone() }, &[r.center])?[0];
    summary.put("moment_error_at_center", center_err)?;

    let gain = gain_for(cfg, &gen, &sys, Some(&series))?;
    let rom = assemble(&gen, gain, MomentMap::Series { series }, Some(&sys))?;
    fs::write(dir.join("rom.json"), rom.to_json()?)?;
    evaluate_linear(cfg, dir, &sys, &rom, summary)
}

fn run_basis(cfg: &ExperimentConfig, dir: &Path, summary: &mut Summary) -> Result<()> {
    let sys = cfg.linear_system()?;
    let gen = cfg.generator()?;
    let iv = sys.param_interval;
    let basis = BasisSet::polynomial(cfg.reduction.basis_order, iv)?;
    let params = cfg.training_params(iv);
    let weights = if cfg.reduction.method == ReductionMethod::Data {
        let d = &cfg.data;
        let data = collect_dataset(Model::Linear(&sys), &gen, &params, d.window, d.h, &cfg.sim_config())?;
        let data = add_output_noise(&data, d.noise_std, d.noise_seed)?;
        data.write_dir(&dir.join("dataset"))?;
        fit_data_driven(&data, &basis, iv)?
    } else {
        fit_model_based(&sys, &gen, &basis, &params)?
    };
    write_json(&dir.join("weights.json"), &weights)?;
    let grid = equidistant(iv, cfg.evaluation.p_grid);
    let map = MomentMap::Basis { weights };
    let err = moment_error_curve(&sys, &gen, &map, &grid)?;
    Curve::new("p", grid)
        .meta("system_hash", system_hash(&sys)?)
        .meta("metric", "relative l2 moment error")
        .meta("nu", gen.nu())
        .meta("basis", format!("polynomial N={}", cfg.reduction.basis_order))
        .column("error", err.clone())?
        .write_file(&dir.join("moment_error.csv"), cfg.evaluation.gnuplot)?;
    summary.put("n", sys.n)?;
    summary.put("nu", gen.nu())?;
    summary.put("moment_error_max", max_of(&err))?;

    let gain = gain_for(cfg, &gen, &sys, None)?;
    let rom = assemble(&gen, gain, map, Some(&sys))?;
    // the full system is not needed to evaluate a basis model; keep the file small
    let stored = ReducedModel { system: None, ..rom.clone() };
    fs::write(dir.join("rom.json"), stored.to_json()?)?;
    evaluate_linear(cfg, dir, &sys, &rom, summary)
}

/// Held-out comparison of the nonlinear reduced model with full simulation.
pub struct HeldOut {
    pub p: f64,
    pub times: Vec<f64>,
    pub full: Vec<f64>,
    pub reduced: Vec<f64>,
    pub nrms: f64,
}

/// Simulates full and reduced models at `p` (both from rest) and compares
/// their outputs on the window.
pub fn nonlinear_heldout(
    sys: &NonlinearParametricSystem,
    rom: &NonlinearRom,
    gen: &SignalGenerator,
    p: f64,
    window: [f64; 2],
    h: usize,
    cfg: &SimConfig,
) -> Result<HeldOut> {
    let times = window_times(window[0], window[1], h);
    let cfg = SimConfig { t_end: cfg.t_end.max(window[1]), sample_times: Some(times.clone()), ..cfg.clone() };
    let full = simulate_interconnection(Model::Nonlinear(sys), gen, p, None, &cfg)?;
    let red = simulate_rk4(&rom.at(p), gen, &vec![0.0; gen.nu()], &cfg, p)?;
    let nrms = nrms(&red.outputs, &full.outputs)?;
    Ok(HeldOut { p, times, full: full.outputs, reduced: red.outputs, nrms })
}

fn run_nonlinear(cfg: &ExperimentConfig, dir: &Path, summary: &mut Summary) -> Result<()> {
    let sys = cfg.nonlinear_system()?;
    let gen = cfg.generator()?;
    let iv = sys.param_interval;
    sys.check_assumptions(&equidistant(iv, cfg.verification.grid))?;
    let d = &cfg.data;
    let r = &cfg.reduction;
    let sim = cfg.sim_config();
    let params = cfg.training_params(iv);
    let data = collect_dataset(Model::Nonlinear(&sys), &gen, &params, d.window, d.h, &sim)?;
    let data = add_output_noise(&data, d.noise_std, d.noise_seed)?;
    data.write_dir(&dir.join("dataset"))?;
    let basis = NonlinearBasisSet::rbf_from_data(&data, r.rbf, r.width, r.seed)?;
    let weights = fit_nonlinear_moment(&data, &basis, r.ridge)?;
    let rom = assemble_nonlinear_rom(&gen, DeltaMap::uniform(gen.nu(), r.delta), weights)?;
    write_json(&dir.join("nl_rom.json"), &rom)?;
    summary.put("n", sys.n)?;
    summary.put("nu", gen.nu())?;
    summary.put("rbf", r.rbf)?;

    let grid = equidistant(iv, cfg.verification.grid);
    let reals = grid.iter().map(|&p| rom.max_real(p)).collect::<Result<Vec<_>>>()?;
    let stable = reals.iter().all(|&v| v < -cfg.verification.stability_margin);
    summary.put("stability_pass", stable)?;
    write_json(&dir.join("verification.json"), &json!({"stability": {"p": grid, "max_real": reals, "pass": stable}}))?;

    let heldout = params_in(&cfg.evaluation.heldout, iv);
    if !heldout.is_empty() {
        let runs = heldout
            .iter()
            .map(|&p| nonlinear_heldout(&sys, &rom, &gen, p, d.window, d.h, &sim))
            .collect::<Result<Vec<_>>>()?;
        let mut c = Curve::new("t", runs[0].times.clone()).meta("metric", "steady-state output, full vs reduced");
        for h in &runs {
            c = c.column(&format!("full_p={}", h.p), h.full.clone())?;
            c = c.column(&format!("rom_p={}", h.p), h.reduced.clone())?;
        }
        c.write_file(&dir.join("heldout.csv"), cfg.evaluation.gnuplot)?;
        let errs: Vec<f64> = runs.iter().map(|h| h.nrms).collect();
        summary.put("heldout", json!({"p": heldout, "nrms": errs}))?;
        summary.put("heldout_nrms_max", max_of(&errs))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_distinguish_config_and_numerics() {
        assert_eq!(exit_code(&Error::config("a", "b")), 2);
        assert_eq!(exit_code(&Error::NotHurwitz { max_real: 1.0 }), 3);
        assert_eq!(exit_code(&Error::SingularGram), 3);
        assert_eq!(exit_code(&Error::invalid("x")), 1);
    }

    #[test]
    fn parses_documented_invocations() {
        let c = Cli::try_parse_from(["parmor", "bench", "gen", "--k", "500", "-o", "bench.json"]).unwrap();
        assert!(matches!(c.command, Command::Bench { cmd: BenchCmd::Gen { k: 500, nl: false, .. } }));
        let c = Cli::try_parse_from(["parmor", "reduce", "series", "--order", "4", "--center", "0.55", "-o", "s.json"]).unwrap();
        assert!(matches!(c.command, Command::Reduce { cmd: ReduceCmd::Series { order: 4, .. } }));
        let c = Cli::try_parse_from(["parmor", "reduce", "nl", "--rbf", "40", "--seed", "7", "-o", "nl.json"]).unwrap();
        assert!(matches!(c.command, Command::Reduce { cmd: ReduceCmd::Nl { rbf: 40, seed: 7, .. } }));
        let c = Cli::try_parse_from(["parmor", "simulate", "--p", "0.55", "--t-end", "20", "--dt", "1e-3", "-o", "t.csv"]).unwrap();
        assert!(matches!(c.command, Command::Simulate(SimulateArgs { p, .. }) if p == 0.55));
        let c = Cli::try_parse_from(["parmor", "eval", "--metric", "l2-moment", "--grid", "200"]).unwrap();
        assert!(matches!(c.command, Command::Eval(EvalArgs { metric: MetricArg::L2Moment, grid: 200, .. })));
        let c = Cli::try_parse_from(["parmor", "eval", "--metric", "h2", "--grid", "100"]).unwrap();
        assert!(matches!(c.command, Command::Eval(EvalArgs { metric: MetricArg::H2, grid: 100, .. })));
    }

    #[test]
    fn params_outside_interval_are_dropped() {
        assert_eq!(params_in(&[0.0, 0.5, 1.0, 2.0], [0.1, 1.0]), vec![0.5, 1.0]);
    }
}

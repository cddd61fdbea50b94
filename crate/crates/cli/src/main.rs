use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pmap_core::baselines::{bp_log_partition, trbp_log_partition, uniform_spanning_edge_probs, BpConfig};
use pmap_core::bounds::{
    approx_logz_inflation, lower_bound_logz, upper_bound_logz, InflationConfig, LowerBoundConfig,
    PerturbationScheme,
};
use pmap_core::crf::gen_denoise_dataset;
use pmap_core::harness::{
    format_opt, format_table, run_estimation_sweep, run_learning_experiment, write_chart,
    ExperimentSpec, LearnConfig, SweepOptions,
};
use pmap_core::mapsolve::{solve_map, MapMethod};
use pmap_core::model::{gen_spin_glass, CouplingMode, SpinGlassConfig};
use pmap_core::oracle::{exact_log_partition, exact_map};
use pmap_core::perturb::{estimate_logz_full, estimate_logz_sequential};
use pmap_core::{Error, PairwiseModel, Result};

#[derive(Parser)]
#[command(name = "pmap", version, about = "Perturb-and-MAP partition function estimates and bounds")]
struct Cli {
    /// Master seed for every random draw (default 0; overrides a sweep spec's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Tabular output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a spin-glass model or a denoising dataset.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Exact log-partition and MAP by enumeration.
    Exact { model: PathBuf },
    /// Solve for a MAP assignment.
    Map {
        model: PathBuf,
        #[arg(long, default_value = "graphcut")]
        solver: String,
    },
    /// Run one estimator on a model.
    Estimate(EstimateArgs),
    /// Run an estimation sweep from a spec file.
    Sweep {
        spec: PathBuf,
        /// Record wall-clock times (makes output run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Train the perturbed CRF and the unperturbed ablation on denoising.
    Learn(LearnArgs),
    /// Render an error-vs-coupling chart from a sweep CSV.
    Chart { results: PathBuf },
}

#[derive(Subcommand)]
enum GenCommand {
    SpinGlass {
        #[arg(long, default_value_t = 3)]
        rows: usize,
        #[arg(long, default_value_t = 3)]
        cols: usize,
        #[arg(long, default_value_t = 1.0)]
        field: f64,
        #[arg(long, default_value_t = 1.0)]
        coupling: f64,
        #[arg(long, default_value = "mixed")]
        mode: String,
    },
    Denoise {
        #[arg(long, default_value_t = 16)]
        rows: usize,
        #[arg(long, default_value_t = 16)]
        cols: usize,
        #[arg(long, default_value_t = 10)]
        train: usize,
        #[arg(long, default_value_t = 10)]
        test: usize,
        #[arg(long, default_value_t = 0.1)]
        flip: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorKind {
    Full,
    Sequential,
    UpperBound,
    LowerBound,
    Inflation,
    Bp,
    Trbp,
}

#[derive(Args)]
struct EstimateArgs {
    model: PathBuf,
    #[arg(long, value_enum)]
    estimator: EstimatorKind,
    /// Samples, copies or draws, depending on the estimator.
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// none, full, unary or blocks:0,1;2,3
    #[arg(long, default_value = "unary")]
    scheme: String,
    #[arg(long, default_value = "brute")]
    solver: String,
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long, default_value_t = 16)]
    rows: usize,
    #[arg(long, default_value_t = 16)]
    cols: usize,
    #[arg(long, default_value_t = 10)]
    train: usize,
    #[arg(long, default_value_t = 10)]
    test: usize,
    #[arg(long, default_value_t = 0.1)]
    flip: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value = "unary")]
    scheme: String,
    #[arg(long, default_value = "graphcut")]
    solver: String,
    /// Also write the trained perturbed-CRF parameters here.
    #[arg(long)]
    params_out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_model(path: &Path) -> Result<PairwiseModel> {
    PairwiseModel::load(path)
}

fn labels(a: &[usize]) -> String {
    a.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
}

fn run(cli: Cli) -> Result<()> {
    let Format::Csv = cli.format;
    let out = cli.out.as_deref();
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Gen(GenCommand::SpinGlass {
            rows,
            cols,
            field,
            coupling,
            mode,
        }) => {
            let mode: CouplingMode = mode.parse()?;
            let model = gen_spin_glass(&SpinGlassConfig {
                rows,
                cols,
                field_strength: field,
                coupling_strength: coupling,
                mode,
                seed,
            })?;
            emit(out, &model.to_text())
        }
        Command::Gen(GenCommand::Denoise {
            rows,
            cols,
            train,
            test,
            flip,
        }) => {
            let data = gen_denoise_dataset(rows, cols, train, test, flip, seed)?;
            emit(out, &data.to_text())
        }
        Command::Exact { model } => {
            let m = load_model(&model)?;
            let log_z = exact_log_partition(&m)?;
            let (a, v) = exact_map(&m)?;
            let table = format_table(
                &[],
                &["log_z", "map_value", "map_assignment"],
                &[vec![format!("{log_z:?}"), format!("{v:?}"), labels(&a.0)]],
            )?;
            emit(out, &table)
        }
        Command::Map { model, solver } => {
            let m = load_model(&model)?;
            let method: MapMethod = solver.parse()?;
            let r = solve_map(&m, &method)?;
            let table = format_table(
                &[],
                &["solver", "value", "dual_bound", "iterations", "assignment"],
                &[vec![
                    r.solver.to_string(),
                    format!("{:?}", r.value),
                    format_opt(r.dual_bound),
                    r.iterations.to_string(),
                    labels(&r.assignment.0),
                ]],
            )?;
            emit(out, &table)
        }
        Command::Estimate(args) => {
            let m = load_model(&args.model)?;
            let solver: MapMethod = args.solver.parse()?;
            let scheme: PerturbationScheme = args.scheme.parse()?;
            let bp = BpConfig {
                max_iters: args.max_iters,
                damping: args.damping,
                tol: args.tol,
            };
            let (name, estimate, se, note) = match args.estimator {
                EstimatorKind::Full => {
                    let r = estimate_logz_full(&m, args.m, seed)?;
                    ("full", r.mean, Some(r.std_error), String::new())
                }
                EstimatorKind::Sequential => (
                    "sequential",
                    estimate_logz_sequential(&m, args.m, seed)?,
                    None,
                    String::new(),
                ),
                EstimatorKind::UpperBound => {
                    let r = upper_bound_logz(&m, &scheme, &solver, args.m, seed)?;
                    ("upper_bound", r.mean, Some(r.std_error), format!("scheme={scheme}"))
                }
                EstimatorKind::LowerBound => {
                    let cfg = LowerBoundConfig {
                        m: args.m,
                        ..LowerBoundConfig::default()
                    };
                    let r = lower_bound_logz(&m, &scheme, &solver, &cfg, seed)?;
                    (
                        "lower_bound",
                        r.value,
                        Some(r.std_error),
                        format!("scheme={scheme} lambda={:?}", r.best_lambda),
                    )
                }
                EstimatorKind::Inflation => {
                    let r = approx_logz_inflation(&m, &InflationConfig::exact_average(args.m, solver), seed)?;
                    ("inflation", r.mean, None, String::new())
                }
                EstimatorKind::Bp => {
                    let r = bp_log_partition(&m, &bp);
                    ("bp", r.log_z, None, format!("converged={}", r.converged))
                }
                EstimatorKind::Trbp => {
                    let rho = uniform_spanning_edge_probs(&m)?;
                    let r = trbp_log_partition(&m, &rho, &bp)?;
                    ("trbp", r.log_z, None, format!("converged={}", r.converged))
                }
            };
            let table = format_table(
                &[],
                &["estimator", "seed", "m", "estimate", "std_error", "notes"],
                &[vec![
                    name.to_string(),
                    seed.to_string(),
                    args.m.to_string(),
                    format!("{estimate:?}"),
                    format_opt(se),
                    note,
                ]],
            )?;
            emit(out, &table)
        }
        Command::Sweep { spec, timing } => {
            let mut s = ExperimentSpec::load(&spec)?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let r = run_estimation_sweep(&s, SweepOptions { timing })?;
            let csv = r.to_csv()?;
            match (out, &s.out) {
                (Some(p), _) => emit(Some(p), &csv),
                (None, Some(p)) => emit(Some(Path::new(p)), &csv),
                (None, None) => emit(None, &csv),
            }
        }
        Command::Learn(a) => {
            let cfg = LearnConfig {
                rows: a.rows,
                cols: a.cols,
                num_train: a.train,
                num_test: a.test,
                flip_prob: a.flip,
                epochs: a.epochs,
                step: a.step,
                m: a.m,
                scheme: a.scheme.parse()?,
                solver: a.solver.parse()?,
                seed,
            };
            let r = run_learning_experiment(&cfg)?;
            if let Some(p) = &a.params_out {
                let params = &r.summary("perturbed").expect("perturbed run").params;
                emit(Some(p), &r.features.params_to_text(params)?)?;
            }
            emit(out, &r.to_csv()?)
        }
        Command::Chart { results } => {
            let out = out.ok_or_else(|| Error::InvalidConfig("chart needs --out".into()))?;
            let text = std::fs::read_to_string(&results).map_err(|e| Error::Io {
                path: results.clone(),
                source: e,
            })?;
            write_chart(&text, out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! Experiment orchestration: spin-glass estimation sweeps, the denoising
//! learning comparison, CSV tables and SVG error-bar charts.

use std::fmt;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{bp_log_partition, trbp_log_partition, uniform_spanning_edge_probs, BpConfig};
use crate::bounds::{
    approx_logz_inflation, lower_bound_logz, upper_bound_logz, InflationConfig, InflationVariant,
    LowerBoundConfig, PerturbationScheme,
};
use crate::crf::{
    gen_denoise_dataset, pixel_error, train, CrfParams, DenoiseFeatures, GradientMode,
    StepSchedule, TrainConfig,
};
use crate::mapsolve::MapMethod;
use crate::model::{gen_spin_glass, CouplingMode, GridShape, SpinGlassConfig};
use crate::oracle::{exact_log_partition, DEFAULT_STATE_CAP};
use crate::perturb::{estimate_logz_full, mean_and_std_error};
use crate::rng::derive_seed;
use crate::{Error, PairwiseModel, Result};

pub const DEFAULT_COUPLINGS: [f64; 7] = [0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

/// MAP solver used by an estimator; `Auto` picks graph cuts for attractive
/// sweeps and MPLP for mixed ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverChoice {
    Auto,
    Fixed(MapMethod),
}

impl SolverChoice {
    pub fn resolve(&self, mode: CouplingMode) -> MapMethod {
        match (self, mode) {
            (SolverChoice::Fixed(m), _) => *m,
            (SolverChoice::Auto, CouplingMode::Attractive) => MapMethod::GraphCut,
            (SolverChoice::Auto, CouplingMode::Mixed) => MapMethod::mplp(),
        }
    }
}

impl fmt::Display for SolverChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverChoice::Auto => f.write_str("auto"),
            SolverChoice::Fixed(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EstimatorSpec {
    Full { m: usize },
    UpperBound { m: usize, scheme: PerturbationScheme, solver: SolverChoice },
    LowerBound { m: usize, lambdas: Vec<f64>, solver: SolverChoice },
    Inflation { m: usize, solver: SolverChoice },
    Tiled { m: usize, solver: SolverChoice },
    Bp(BpConfig),
    Trbp(BpConfig),
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Full { .. } => "full",
            EstimatorSpec::UpperBound { .. } => "upper_bound",
            EstimatorSpec::LowerBound { .. } => "lower_bound",
            EstimatorSpec::Inflation { .. } => "inflation",
            EstimatorSpec::Tiled { .. } => "tiled",
            EstimatorSpec::Bp(_) => "bp",
            EstimatorSpec::Trbp(_) => "trbp",
        }
    }

    /// Parse `name key=value ...`.
    pub fn parse(name: &str, options: &[&str]) -> Result<Self> {
        let mut kv = Vec::with_capacity(options.len());
        for opt in options {
            let (k, v) = opt
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got '{opt}'")))?;
            kv.push((k, v));
        }
        let allowed: &[&str] = match name {
            "full" => &["m"],
            "upper_bound" => &["m", "scheme", "solver"],
            "lower_bound" => &["m", "lambdas", "solver"],
            "inflation" | "tiled" => &["m", "solver"],
            "bp" | "trbp" => &["damping", "max_iters", "tol"],
            other => return Err(Error::InvalidConfig(format!("unknown estimator '{other}'"))),
        };
        if let Some((k, _)) = kv.iter().find(|(k, _)| !allowed.contains(k)) {
            return Err(Error::InvalidConfig(format!("estimator {name} has no option '{k}'")));
        }
        let get = |key: &str| kv.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let num = |key: &str, default: usize| -> Result<usize> {
            match get(key) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .ok()
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| Error::InvalidConfig(format!("{key} must be a positive integer"))),
            }
        };
        let float = |key: &str, default: f64| -> Result<f64> {
            match get(key) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("{key} must be a number"))),
            }
        };
        let solver = || -> Result<SolverChoice> {
            match get("solver") {
                None | Some("auto") => Ok(SolverChoice::Auto),
                Some(s) => Ok(SolverChoice::Fixed(s.parse()?)),
            }
        };
        let bp = || -> Result<BpConfig> {
            let d = BpConfig::default();
            Ok(BpConfig {
                damping: float("damping", d.damping)?,
                max_iters: num("max_iters", d.max_iters)?,
                tol: float("tol", d.tol)?,
            })
        };
        Ok(match name {
            "full" => EstimatorSpec::Full { m: num("m", 1000)? },
            "upper_bound" => EstimatorSpec::UpperBound {
                m: num("m", 100)?,
                scheme: get("scheme").unwrap_or("unary").parse()?,
                solver: solver()?,
            },
            "lower_bound" => {
                let lambdas = match get("lambdas") {
                    None => LowerBoundConfig::default().lambdas,
                    Some(v) => v
                        .split(',')
                        .map(|x| x.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::InvalidConfig(format!("bad lambda grid '{v}'")))?,
                };
                let cfg = LowerBoundConfig { lambdas, m: num("m", 200)? };
                cfg.validate()?;
                EstimatorSpec::LowerBound {
                    m: cfg.m,
                    lambdas: cfg.lambdas,
                    solver: solver()?,
                }
            }
            "inflation" => EstimatorSpec::Inflation { m: num("m", 16)?, solver: solver()? },
            "tiled" => EstimatorSpec::Tiled { m: num("m", 4)?, solver: solver()? },
            "bp" => EstimatorSpec::Bp(bp()?),
            _ => EstimatorSpec::Trbp(bp()?),
        })
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())?;
        match self {
            EstimatorSpec::Full { m } => write!(f, " m={m}"),
            EstimatorSpec::UpperBound { m, scheme, solver } => {
                write!(f, " m={m} scheme={scheme} solver={solver}")
            }
            EstimatorSpec::LowerBound { m, lambdas, solver } => {
                let grid: Vec<String> = lambdas.iter().map(|l| format!("{l:?}")).collect();
                write!(f, " m={m} lambdas={} solver={solver}", grid.join(","))
            }
            EstimatorSpec::Inflation { m, solver } | EstimatorSpec::Tiled { m, solver } => {
                write!(f, " m={m} solver={solver}")
            }
            EstimatorSpec::Bp(c) | EstimatorSpec::Trbp(c) => write!(
                f,
                " damping={:?} max_iters={} tol={:?}",
                c.damping, c.max_iters, c.tol
            ),
        }
    }
}

/// A spin-glass estimation sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub grid: GridShape,
    pub field_strength: f64,
    pub couplings: Vec<f64>,
    pub mode: CouplingMode,
    pub trials: usize,
    pub estimators: Vec<EstimatorSpec>,
    pub seed: u64,
    pub out: Option<String>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.couplings.is_empty() {
            return Err(Error::InvalidConfig("coupling grid is empty".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("no estimators listed".into()));
        }
        // rows and aggregates are keyed by estimator name
        for (k, e) in self.estimators.iter().enumerate() {
            if self.estimators[..k].iter().any(|p| p.name() == e.name()) {
                return Err(Error::InvalidConfig(format!("estimator {} listed twice", e.name())));
            }
        }
        SpinGlassConfig {
            rows: self.grid.rows,
            cols: self.grid.cols,
            field_strength: self.field_strength,
            coupling_strength: 0.0,
            mode: self.mode,
            seed: 0,
        }
        .validate()?;
        if let Some(c) = self.couplings.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidConfig(format!("invalid coupling strength {c}")));
        }
        Ok(())
    }

    /// Parse the line-oriented `sweep v1` format. Missing fields take the
    /// defaults of a 3x3 attractive sweep with field strength 1.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let bad = |line: usize, msg: String| Error::Parse { line, msg };
        match lines.next() {
            Some((_, header)) => {
                let f: Vec<&str> = header.split_whitespace().collect();
                match f.as_slice() {
                    ["sweep", "v1"] => {}
                    ["sweep", v] => return Err(Error::Version(v.to_string())),
                    _ => return Err(bad(1, format!("expected 'sweep v1', got '{header}'"))),
                }
            }
            None => return Err(bad(1, "empty spec".into())),
        }
        let mut spec = ExperimentSpec {
            grid: GridShape::new(3, 3),
            field_strength: 1.0,
            couplings: DEFAULT_COUPLINGS.to_vec(),
            mode: CouplingMode::Attractive,
            trials: 100,
            estimators: Vec::new(),
            seed: 0,
            out: None,
        };
        for (line, l) in lines {
            let fields: Vec<&str> = l.split_whitespace().collect();
            let parse_f64 = |s: &str| s.parse::<f64>().map_err(|_| bad(line, format!("bad number '{s}'")));
            let parse_usize =
                |s: &str| s.parse::<usize>().map_err(|_| bad(line, format!("bad integer '{s}'")));
            let located = |e: Error| bad(line, e.to_string());
            match fields.as_slice() {
                ["grid", r, c] => spec.grid = GridShape::new(parse_usize(r)?, parse_usize(c)?),
                ["field", f] => spec.field_strength = parse_f64(f)?,
                ["couplings", cs @ ..] => {
                    spec.couplings = cs.iter().map(|c| parse_f64(c)).collect::<Result<_>>()?
                }
                ["mode", m] => spec.mode = m.parse().map_err(located)?,
                ["trials", t] => spec.trials = parse_usize(t)?,
                ["seed", s] => {
                    spec.seed = s.parse().map_err(|_| bad(line, format!("bad seed '{s}'")))?
                }
                ["out", p] => spec.out = Some(p.to_string()),
                ["estimator", name, opts @ ..] => spec
                    .estimators
                    .push(EstimatorSpec::parse(name, opts).map_err(located)?),
                _ => return Err(bad(line, format!("unrecognized line '{l}'"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Canonical spec lines, as echoed into result headers.
    pub fn to_lines(&self) -> Vec<String> {
        let mut out = vec![
            "sweep v1".to_string(),
            format!("grid {} {}", self.grid.rows, self.grid.cols),
            format!("field {:?}", self.field_strength),
            format!(
                "couplings {}",
                self.couplings
                    .iter()
                    .map(|c| format!("{c:?}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            ),
            format!("mode {}", self.mode),
            format!("trials {}", self.trials),
            format!("seed {}", self.seed),
        ];
        out.extend(self.estimators.iter().map(|e| format!("estimator {e}")));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    NotConverged,
    Skipped,
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowStatus::Ok => "ok",
            RowStatus::NotConverged => "not_converged",
            RowStatus::Skipped => "skipped",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub estimator: String,
    pub coupling: f64,
    pub trial: usize,
    pub estimate: Option<f64>,
    pub oracle_logz: Option<f64>,
    pub wall_ms: Option<f64>,
    pub status: RowStatus,
}

impl ResultRow {
    pub fn abs_error(&self) -> Option<f64> {
        Some((self.estimate? - self.oracle_logz?).abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub estimator: String,
    pub coupling: f64,
    pub mean_abs_error: Option<f64>,
    pub std_error: Option<f64>,
    /// Trials that produced an estimate.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResults {
    pub spec: ExperimentSpec,
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepOptions {
    /// Record wall-clock times; off by default so output is reproducible.
    pub timing: bool,
}

struct Outcome {
    estimate: f64,
    converged: bool,
}

fn run_estimator(
    est: &EstimatorSpec,
    model: &PairwiseModel,
    grid: GridShape,
    mode: CouplingMode,
    seed: u64,
) -> Result<Outcome> {
    let ok = |estimate| Outcome { estimate, converged: true };
    match est {
        EstimatorSpec::Full { m } => Ok(ok(estimate_logz_full(model, *m, seed)?.mean)),
        EstimatorSpec::UpperBound { m, scheme, solver } => Ok(ok(upper_bound_logz(
            model,
            scheme,
            &solver.resolve(mode),
            *m,
            seed,
        )?
        .mean)),
        EstimatorSpec::LowerBound { m, lambdas, solver } => {
            let cfg = LowerBoundConfig { lambdas: lambdas.clone(), m: *m };
            Ok(ok(lower_bound_logz(
                model,
                &PerturbationScheme::Unary,
                &solver.resolve(mode),
                &cfg,
                seed,
            )?
            .value))
        }
        EstimatorSpec::Inflation { m, solver } => {
            let cfg = InflationConfig::exact_average(*m, solver.resolve(mode));
            Ok(ok(approx_logz_inflation(model, &cfg, seed)?.mean))
        }
        EstimatorSpec::Tiled { m, solver } => {
            let cfg = InflationConfig {
                variant: InflationVariant::TiledGrid(grid),
                ..InflationConfig::exact_average(*m, solver.resolve(mode))
            };
            Ok(ok(approx_logz_inflation(model, &cfg, seed)?.mean))
        }
        EstimatorSpec::Bp(cfg) => {
            let r = bp_log_partition(model, cfg);
            Ok(Outcome { estimate: r.log_z, converged: r.converged })
        }
        EstimatorSpec::Trbp(cfg) => {
            let rho = uniform_spanning_edge_probs(model)?;
            let r = trbp_log_partition(model, &rho, cfg)?;
            Ok(Outcome { estimate: r.log_z, converged: r.converged })
        }
    }
}

/// Errors that mark an estimator as inapplicable to a cell.
fn is_precondition(e: &Error) -> bool {
    matches!(
        e,
        Error::SolverPrecondition(_)
            | Error::StateSpaceTooLarge { .. }
            | Error::InvalidScheme(_)
            | Error::InvalidConfig(_)
            | Error::Disconnected
    )
}

/// Run every estimator on every (coupling, trial) cell. Cell models use the
/// seed `derive_seed(seed, [coupling index, trial])`.
pub fn run_estimation_sweep(spec: &ExperimentSpec, options: SweepOptions) -> Result<SweepResults> {
    spec.validate()?;
    let cells: Vec<(usize, usize)> = (0..spec.couplings.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let per_cell = cells
        .par_iter()
        .map(|&(ci, trial)| -> Result<Vec<ResultRow>> {
            let coupling = spec.couplings[ci];
            let cell_seed = derive_seed(spec.seed, &[ci as u64, trial as u64]);
            let model = gen_spin_glass(&SpinGlassConfig {
                rows: spec.grid.rows,
                cols: spec.grid.cols,
                field_strength: spec.field_strength,
                coupling_strength: coupling,
                mode: spec.mode,
                seed: cell_seed,
            })?;
            let oracle = match model.num_states() {
                Some(s) if s <= DEFAULT_STATE_CAP => Some(exact_log_partition(&model)?),
                _ => None,
            };
            let mut rows = Vec::with_capacity(spec.estimators.len());
            for (k, est) in spec.estimators.iter().enumerate() {
                let start = Instant::now();
                let seed = derive_seed(cell_seed, &[1 + k as u64]);
                let outcome = run_estimator(est, &model, spec.grid, spec.mode, seed);
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                let (estimate, status) = match outcome {
                    Ok(o) if o.converged => (Some(o.estimate), RowStatus::Ok),
                    Ok(o) => (Some(o.estimate), RowStatus::NotConverged),
                    Err(e) if is_precondition(&e) => (None, RowStatus::Skipped),
                    Err(e) => return Err(e),
                };
                rows.push(ResultRow {
                    estimator: est.name().to_string(),
                    coupling,
                    trial,
                    estimate,
                    oracle_logz: oracle,
                    wall_ms: options.timing.then_some(elapsed),
                    status,
                });
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<ResultRow> = per_cell.into_iter().flatten().collect();

    let mut aggregates = Vec::new();
    for est in &spec.estimators {
        for &coupling in &spec.couplings {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.estimator == est.name() && r.coupling == coupling)
                .collect();
            let errors: Vec<f64> = cell.iter().filter_map(|r| r.abs_error()).collect();
            let count = cell.iter().filter(|r| r.estimate.is_some()).count();
            let (mean, se) = if errors.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_and_std_error(&errors);
                (Some(m), Some(s))
            };
            aggregates.push(AggregateRow {
                estimator: est.name().to_string(),
                coupling,
                mean_abs_error: mean,
                std_error: se,
                count,
            });
        }
    }
    Ok(SweepResults {
        spec: spec.clone(),
        rows,
        aggregates,
    })
}

/// Shortest round-trip form, or `na`.
pub fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x:?}"))
}

/// CSV with `#` comment lines ahead of the column header.
pub fn format_table(header_lines: &[String], columns: &[&str], records: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns)?;
    for r in records {
        w.write_record(r)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| Error::MalformedTable(e.to_string()))?;
    let mut out = String::new();
    for l in header_lines {
        out.push_str(l);
        out.push('\n');
    }
    out.push_str(&String::from_utf8(body).map_err(|e| Error::MalformedTable(e.to_string()))?);
    Ok(out)
}

pub const SWEEP_COLUMNS: [&str; 8] = [
    "estimator",
    "coupling",
    "trial",
    "estimate",
    "oracle_logz",
    "abs_error",
    "wall_ms",
    "status",
];

impl SweepResults {
    pub fn to_csv(&self) -> Result<String> {
        let header: Vec<String> = self
            .spec
            .to_lines()
            .into_iter()
            .map(|l| format!("# spec: {l}"))
            .collect();
        let mut records: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.estimator.clone(),
                    format!("{:?}", r.coupling),
                    r.trial.to_string(),
                    format_opt(r.estimate),
                    format_opt(r.oracle_logz),
                    format_opt(r.abs_error()),
                    format_opt(r.wall_ms),
                    r.status.to_string(),
                ]
            })
            .collect();
        records.extend(self.aggregates.iter().map(|a| {
            vec![
                a.estimator.clone(),
                format!("{:?}", a.coupling),
                "agg".to_string(),
                format_opt(a.mean_abs_error),
                "na".to_string(),
                format_opt(a.std_error),
                "na".to_string(),
                if a.count > 0 { "ok" } else { "skipped" }.to_string(),
            ]
        }));
        format_table(&header, &SWEEP_COLUMNS, &records)
    }

    pub fn aggregate(&self, estimator: &str, coupling: f64) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.estimator == estimator && a.coupling == coupling)
    }
}

// ---------------------------------------------------------------------------
// Learning experiment

#[derive(Clone, Debug, PartialEq)]
pub struct LearnConfig {
    pub rows: usize,
    pub cols: usize,
    pub num_train: usize,
    pub num_test: usize,
    pub flip_prob: f64,
    pub epochs: usize,
    /// Initial step of the `step / sqrt(epoch)` schedule.
    pub step: f64,
    pub m: usize,
    pub scheme: PerturbationScheme,
    pub solver: MapMethod,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            rows: 16,
            cols: 16,
            num_train: 10,
            num_test: 10,
            flip_prob: 0.1,
            epochs: 50,
            step: 0.1,
            m: 1,
            scheme: PerturbationScheme::Unary,
            solver: MapMethod::GraphCut,
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn to_lines(&self) -> Vec<String> {
        vec![
            format!("grid {} {}", self.rows, self.cols),
            format!("train {} test {}", self.num_train, self.num_test),
            format!("flip_prob {:?}", self.flip_prob),
            format!("epochs {} step {:?}/sqrt(epoch) m {}", self.epochs, self.step, self.m),
            format!("scheme {} solver {}", self.scheme, self.solver),
            format!("seed {}", self.seed),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnRow {
    pub method: String,
    pub epoch: usize,
    pub surrogate_loss: f64,
    pub grad_norm: f64,
    pub train_error: f64,
    pub test_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub params: CrfParams,
    pub train_error: f64,
    pub test_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningResults {
    pub config: LearnConfig,
    pub features: DenoiseFeatures,
    pub rows: Vec<LearnRow>,
    pub finals: Vec<MethodSummary>,
}

/// Train the perturbed CRF and the unperturbed ablation on one dataset and
/// track pixel errors after every epoch.
pub fn run_learning_experiment(config: &LearnConfig) -> Result<LearningResults> {
    let data = gen_denoise_dataset(
        config.rows,
        config.cols,
        config.num_train,
        config.num_test,
        config.flip_prob,
        config.seed,
    )?;
    let fmap = DenoiseFeatures::new(config.rows, config.cols);
    let methods = [
        ("perturbed", config.scheme.clone()),
        ("none", PerturbationScheme::Unperturbed),
    ];
    let mut rows = Vec::new();
    let mut finals = Vec::new();
    for (name, scheme) in methods {
        let mut tc = TrainConfig::new(
            GradientMode::Perturbed(scheme),
            config.solver,
            derive_seed(config.seed, &[7]),
        );
        tc.epochs = config.epochs;
        tc.step = StepSchedule::InverseSqrt(config.step);
        tc.m = config.m;
        let result = train(&fmap, &data.train, &tc)?;
        for rec in &result.history {
            let p = CrfParams { theta: rec.theta.clone() };
            rows.push(LearnRow {
                method: name.to_string(),
                epoch: rec.epoch,
                surrogate_loss: rec.loss,
                grad_norm: rec.grad_norm,
                train_error: pixel_error(&fmap, &p, &data.train, &config.solver)?,
                test_error: pixel_error(&fmap, &p, &data.test, &config.solver)?,
            });
        }
        finals.push(MethodSummary {
            method: name.to_string(),
            train_error: pixel_error(&fmap, &result.params, &data.train, &config.solver)?,
            test_error: pixel_error(&fmap, &result.params, &data.test, &config.solver)?,
            params: result.params,
        });
    }
    Ok(LearningResults {
        config: config.clone(),
        features: fmap,
        rows,
        finals,
    })
}

pub const LEARN_COLUMNS: [&str; 6] = [
    "method",
    "epoch",
    "surrogate_loss",
    "grad_norm",
    "train_pixel_error",
    "test_pixel_error",
];

impl LearningResults {
    pub fn to_csv(&self) -> Result<String> {
        let header: Vec<String> = self
            .config
            .to_lines()
            .into_iter()
            .map(|l| format!("# learn: {l}"))
            .collect();
        let mut records: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.epoch.to_string(),
                    format!("{:?}", r.surrogate_loss),
                    format!("{:?}", r.grad_norm),
                    format!("{:?}", r.train_error),
                    format!("{:?}", r.test_error),
                ]
            })
            .collect();
        for f in &self.finals {
            let last = self.rows.iter().rev().find(|r| r.method == f.method);
            records.push(vec![
                f.method.clone(),
                "final".to_string(),
                format_opt(last.map(|r| r.surrogate_loss)),
                format_opt(last.map(|r| r.grad_norm)),
                format!("{:?}", f.train_error),
                format!("{:?}", f.test_error),
            ]);
        }
        format_table(&header, &LEARN_COLUMNS, &records)
    }

    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.finals.iter().find(|f| f.method == method)
    }
}

// ---------------------------------------------------------------------------
// Charts

#[derive(Clone, Debug, PartialEq)]
pub struct ChartSeries {
    pub estimator: String,
    /// (coupling, mean absolute error, standard error), sorted by coupling.
    pub points: Vec<(f64, f64, f64)>,
}

/// Aggregate rows of a sweep CSV grouped by estimator in order of first
/// appearance.
pub fn read_aggregates(csv_text: &str) -> Result<Vec<ChartSeries>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(csv_text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != SWEEP_COLUMNS {
        return Err(Error::MalformedTable(format!(
            "unexpected columns: {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut series: Vec<ChartSeries> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        if &rec[2] != "agg" || &rec[3] == "na" {
            continue;
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| {
                Error::MalformedTable(format!("row {}: bad number '{}'", k + 2, &rec[i]))
            })
        };
        let se = if &rec[5] == "na" { 0.0 } else { num(5)? };
        let point = (num(1)?, num(3)?, se);
        match series.iter_mut().find(|s| s.estimator == rec[0]) {
            Some(s) => s.points.push(point),
            None => series.push(ChartSeries {
                estimator: rec[0].to_string(),
                points: vec![point],
            }),
        }
    }
    if series.is_empty() {
        return Err(Error::MalformedTable("no aggregate rows to chart".into()));
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(series)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Error-vs-coupling chart as a standalone SVG document.
pub fn render_chart(csv_text: &str) -> Result<String> {
    let series = read_aggregates(csv_text)?;
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 30.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let all = series.iter().flat_map(|s| s.points.iter());
    let x_min = all.clone().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = all.clone().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y_max = all.map(|p| p.1 + p.2).fold(0.0, f64::max);
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let y_top = if y_max > 0.0 { y_max * 1.1 } else { 1.0 };
    let sx = |x: f64| left + (x - x_min) / x_span * pw;
    let sy = |y: f64| top + ph - y / y_top * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#,
        y0 = top + ph,
        x1 = left + pw
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{y0:.2}" stroke="black"/>"#,
        y0 = top + ph
    );
    for k in 0..=4 {
        let xv = x_min + x_span * k as f64 / 4.0;
        let yv = y_top * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.2}</text>"#,
            sx(xv),
            top + ph + 18.0,
            xv
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
            left - 6.0,
            sy(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">coupling strength</text>"#,
        left + pw / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">mean absolute error</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(svg, r#"<g class="series" data-estimator="{}">"#, s.estimator);
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        for &(x, y, se) in &s.points {
            let (cx, cy) = (sx(x), sy(y));
            let _ = writeln!(
                svg,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{color}"/>"#,
                sy((y - se).max(0.0)),
                sy(y + se)
            );
            let _ = writeln!(svg, r#"<circle class="point" cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{color}"/>"#);
        }
        let ly = top + 16.0 * k as f64 + 10.0;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            s.estimator
        );
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Render a chart and write it only if rendering succeeds.
pub fn write_chart(csv_text: &str, out: impl AsRef<std::path::Path>) -> Result<()> {
    let svg = render_chart(csv_text)?;
    let out = out.as_ref();
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> ExperimentSpec {
        ExperimentSpec::from_text(text).unwrap()
    }

    #[test]
    fn spec_parsing_and_defaults() {
        let s = spec(
            "sweep v1\n# comment\ngrid 2 3\nfield 0.1\ncouplings 1 2\nmode mixed\ntrials 4\nseed 9\n\
             estimator upper_bound m=50 solver=brute\nestimator bp damping=0.3\n",
        );
        assert_eq!(s.grid, GridShape::new(2, 3));
        assert_eq!(s.couplings, vec![1.0, 2.0]);
        assert_eq!(s.mode, CouplingMode::Mixed);
        assert_eq!(s.estimators.len(), 2);
        assert_eq!(
            s.estimators[0],
            EstimatorSpec::UpperBound {
                m: 50,
                scheme: PerturbationScheme::Unary,
                solver: SolverChoice::Fixed(MapMethod::Brute)
            }
        );
        let round = spec(&s.to_lines().join("\n"));
        assert_eq!(round, s);

        let d = spec("sweep v1\nestimator trbp\n");
        assert_eq!(d.couplings, DEFAULT_COUPLINGS.to_vec());
        assert_eq!(d.trials, 100);
    }

    #[test]
    fn spec_errors() {
        let cases = [
            "sweep v1\ntrials 0\nestimator bp\n",
            "sweep v1\ncouplings\nestimator bp\n",
            "sweep v1\nestimator magic\n",
            "sweep v1\nestimator bp m=3\n",
            "sweep v1\nestimator lower_bound lambdas=0,1\n",
            "sweep v1\n",
            "sweep v1\nfield x\nestimator bp\n",
            "sweep v1\nbogus line\n",
            "sweep v1\nestimator inflation m=4\nestimator inflation m=16\n",
            "model v1\n",
        ];
        for c in cases {
            assert!(ExperimentSpec::from_text(c).is_err(), "{c}");
        }
        assert!(matches!(
            ExperimentSpec::from_text("sweep v2\n"),
            Err(Error::Version(_))
        ));
        match ExperimentSpec::from_text("sweep v1\nestimator bp\nmode sideways\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_cell_counts() {
        let s = spec("sweep v1\ngrid 2 2\ncouplings 1\ntrials 1\nestimator upper_bound m=10\n");
        let r = run_estimation_sweep(&s, SweepOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.aggregates.len(), 1);
        let csv = r.to_csv().unwrap();
        let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data.len(), 3);
        assert_eq!(data[0], SWEEP_COLUMNS.join(","));
        assert!(data[2].starts_with("upper_bound,1.0,agg,"));
    }

    #[test]
    fn sweep_rows_are_recomputable_and_deterministic() {
        let s = spec(
            "sweep v1\ngrid 2 2\ncouplings 0.5 2\ntrials 3\nseed 5\nestimator bp\nestimator inflation m=4\n",
        );
        let a = run_estimation_sweep(&s, SweepOptions::default()).unwrap();
        let b = run_estimation_sweep(&s, SweepOptions::default()).unwrap();
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        for r in &a.rows {
            let e = (r.estimate.unwrap() - r.oracle_logz.unwrap()).abs();
            assert_eq!(r.abs_error(), Some(e));
            assert_eq!(r.wall_ms, None);
        }
        // same cell model for every estimator
        assert_eq!(a.rows[0].oracle_logz, a.rows[1].oracle_logz);
        let csv = a.to_csv().unwrap();
        assert!(csv.lines().next().unwrap().starts_with("# spec: sweep v1"));
    }

    #[test]
    fn inapplicable_estimators_are_skipped() {
        let s = spec(
            "sweep v1\ngrid 3 3\nmode mixed\ncouplings 1\ntrials 2\n\
             estimator upper_bound m=5 solver=graphcut\nestimator tiled m=3\nestimator bp\n",
        );
        let r = run_estimation_sweep(&s, SweepOptions::default()).unwrap();
        let statuses: Vec<RowStatus> = r.rows.iter().map(|r| r.status).collect();
        assert_eq!(
            statuses,
            [RowStatus::Skipped, RowStatus::Skipped, RowStatus::Ok].repeat(2)
        );
        let csv = r.to_csv().unwrap();
        assert!(csv.contains("upper_bound,1.0,0,na,"));
        assert!(csv.contains("upper_bound,1.0,agg,na,na,na,na,skipped"));
    }

    #[test]
    fn timing_is_opt_in() {
        let s = spec("sweep v1\ngrid 2 2\ncouplings 1\ntrials 1\nestimator bp\n");
        let r = run_estimation_sweep(&s, SweepOptions { timing: true }).unwrap();
        assert!(r.rows[0].wall_ms.is_some());
    }

    #[test]
    fn large_grids_have_no_oracle() {
        let s = spec("sweep v1\ngrid 5 5\ncouplings 1\ntrials 1\nestimator bp\n");
        let r = run_estimation_sweep(&s, SweepOptions::default()).unwrap();
        assert_eq!(r.rows[0].oracle_logz, None);
        assert_eq!(r.aggregates[0].mean_abs_error, None);
        assert!(render_chart(&r.to_csv().unwrap()).is_err());
    }

    #[test]
    fn chart_has_one_series_per_estimator() {
        let s = spec(
            "sweep v1\ngrid 2 2\ncouplings 0.1 0.5 1 2 3\ntrials 2\nestimator bp\nestimator upper_bound m=5\n",
        );
        let csv = run_estimation_sweep(&s, SweepOptions::default())
            .unwrap()
            .to_csv()
            .unwrap();
        let svg = render_chart(&csv).unwrap();
        assert_eq!(svg.matches("<g class=\"series\"").count(), 2);
        assert_eq!(svg.matches("class=\"point\"").count(), 10);
        assert_eq!(svg, render_chart(&csv).unwrap());

        let header_only = csv
            .lines()
            .filter(|l| !l.contains(",agg,"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(render_chart(&header_only), Err(Error::MalformedTable(_))));
        assert!(render_chart("a,b\n1,2\n").is_err());
    }

    #[test]
    fn write_chart_leaves_no_file_on_error() {
        let dir = std::env::temp_dir().join(format!("pmap-chart-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let out = dir.join("empty.svg");
        let csv = format!("{}\n", SWEEP_COLUMNS.join(","));
        assert!(write_chart(&csv, &out).is_err());
        assert!(!out.exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn learning_on_noiseless_data() {
        let cfg = LearnConfig {
            rows: 8,
            cols: 8,
            num_train: 2,
            num_test: 2,
            flip_prob: 0.0,
            epochs: 5,
            ..LearnConfig::default()
        };
        let r = run_learning_experiment(&cfg).unwrap();
        for m in ["perturbed", "none"] {
            assert_eq!(r.summary(m).unwrap().test_error, 0.0);
        }
        let csv = r.to_csv().unwrap();
        let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data.len(), 1 + 2 * 5 + 2);
        assert_eq!(data[0], LEARN_COLUMNS.join(","));
        assert_eq!(data.iter().filter(|l| l.contains(",final,")).count(), 2);
    }
}

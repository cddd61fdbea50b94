//! Efficient log-partition estimates from low-dimensional perturbations:
//! an upper bound from averaging perturbed MAP values, an approximation
//! from one MAP solve on an inflated model, and a lower bound that trades
//! perturbation strength against the Gumbel cumulant.

use rayon::prelude::*;

use crate::mapsolve::{solve_map, MapMethod};
use crate::model::{GridShape, Odometer, PairwiseModel};
use crate::oracle::{all_scores, checked_state_count, DEFAULT_STATE_CAP};
use crate::perturb::{gumbel_cumulant, EstimateReport, GumbelSampler};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Which (subset, sub-assignment) pairs receive their own Gumbel variable.
#[derive(Clone, Debug, PartialEq)]
pub enum PerturbationScheme {
    /// No noise at all.
    Unperturbed,
    /// One variable per joint state; enumerable models only.
    FullJoint,
    /// One variable per (i, y_i).
    Unary,
    /// One variable per (alpha, y_alpha) for each listed subset.
    Blocks(Vec<Vec<usize>>),
}

impl PerturbationScheme {
    /// Validated subset family; `None` for [`PerturbationScheme::Unperturbed`].
    pub fn blocks(&self, model: &PairwiseModel) -> Result<Option<Vec<Vec<usize>>>> {
        let n = model.num_vars();
        match self {
            PerturbationScheme::Unperturbed => Ok(None),
            PerturbationScheme::FullJoint => {
                checked_state_count(model, DEFAULT_STATE_CAP)?;
                Ok(Some(vec![(0..n).collect()]))
            }
            PerturbationScheme::Unary => Ok(Some((0..n).map(|i| vec![i]).collect())),
            PerturbationScheme::Blocks(blocks) => {
                let mut covered = vec![false; n];
                let mut out = Vec::with_capacity(blocks.len());
                for b in blocks {
                    if b.is_empty() {
                        return Err(Error::InvalidScheme("empty block".into()));
                    }
                    let mut b = b.clone();
                    b.sort_unstable();
                    b.dedup();
                    if let Some(&bad) = b.iter().find(|&&i| i >= n) {
                        return Err(Error::InvalidScheme(format!(
                            "block references variable {bad} of {n}"
                        )));
                    }
                    b.iter().for_each(|&i| covered[i] = true);
                    out.push(b);
                }
                if let Some(missing) = covered.iter().position(|&c| !c) {
                    return Err(Error::InvalidScheme(format!(
                        "blocks do not cover variable {missing}"
                    )));
                }
                Ok(Some(out))
            }
        }
    }

    /// True when a block spans more than two variables, so perturbed models
    /// can only be maximized by enumeration.
    fn needs_enumeration(&self, blocks: &[Vec<usize>]) -> bool {
        matches!(self, PerturbationScheme::FullJoint) || blocks.iter().any(|b| b.len() > 2)
    }
}

impl std::fmt::Display for PerturbationScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PerturbationScheme::Unperturbed => f.write_str("none"),
            PerturbationScheme::FullJoint => f.write_str("full"),
            PerturbationScheme::Unary => f.write_str("unary"),
            PerturbationScheme::Blocks(blocks) => {
                let parts: Vec<String> = blocks
                    .iter()
                    .map(|b| b.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","))
                    .collect();
                write!(f, "blocks:{}", parts.join(";"))
            }
        }
    }
}

/// Parses `none`, `full`, `unary` or `blocks:0,1;2,3`.
impl std::str::FromStr for PerturbationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PerturbationScheme::Unperturbed),
            "full" => Ok(PerturbationScheme::FullJoint),
            "unary" => Ok(PerturbationScheme::Unary),
            _ => {
                let body = s
                    .strip_prefix("blocks:")
                    .ok_or_else(|| Error::InvalidScheme(format!("unknown scheme '{s}'")))?;
                body.split(';')
                    .map(|b| {
                        b.split(',')
                            .map(|i| {
                                i.trim().parse::<usize>().map_err(|_| {
                                    Error::InvalidScheme(format!("bad variable index '{i}'"))
                                })
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(PerturbationScheme::Blocks)
            }
        }
    }
}

/// Gumbel tables for one draw: `noise[k]` is row-major over block `k`'s
/// variables in increasing order.
fn draw_noise(model: &PairwiseModel, blocks: &[Vec<usize>], seed: u64) -> Vec<Vec<f64>> {
    let mut sampler = GumbelSampler::new(seed);
    blocks
        .iter()
        .map(|b| {
            let size: usize = b.iter().map(|&i| model.cards()[i]).product();
            sampler.sample_n(size)
        })
        .collect()
}

fn block_index(cards: &[usize], block: &[usize], labels: &[usize]) -> usize {
    block.iter().fold(0, |acc, &i| acc * cards[i] + labels[i])
}

/// Evaluates `max_y { phi(y) + scale * sum_alpha g_alpha(y_alpha) }`.
pub(crate) struct PerturbedMax<'a> {
    model: &'a PairwiseModel,
    blocks: Vec<Vec<usize>>,
    solver: MapMethod,
    /// Joint scores when maximizing by enumeration.
    scores: Option<Vec<f64>>,
}

impl<'a> PerturbedMax<'a> {
    /// The unperturbed scheme yields plain MAP solves.
    pub(crate) fn new(
        model: &'a PairwiseModel,
        scheme: &PerturbationScheme,
        solver: &MapMethod,
    ) -> Result<Self> {
        let blocks = scheme.blocks(model)?.unwrap_or_default();
        let scores = if scheme.needs_enumeration(&blocks) {
            if matches!(scheme, PerturbationScheme::Blocks(_)) && *solver != MapMethod::Brute {
                return Err(Error::InvalidScheme(format!(
                    "blocks with more than two variables need the brute solver, not {solver}"
                )));
            }
            let scores = all_scores(model, DEFAULT_STATE_CAP)?;
            if scores.iter().all(|&s| s == f64::NEG_INFINITY) {
                return Err(Error::EmptyDomain);
            }
            Some(scores)
        } else {
            None
        };
        Ok(PerturbedMax {
            model,
            blocks,
            solver: *solver,
            scores,
        })
    }

    fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn eval(&self, seed: u64, scale: f64) -> Result<f64> {
        Ok(self.argmax(seed, scale)?.0)
    }

    /// Perturbed MAP value and a maximizer.
    pub(crate) fn argmax(&self, seed: u64, scale: f64) -> Result<(f64, Vec<usize>)> {
        if self.blocks.is_empty() {
            let r = solve_map(self.model, &self.solver)?;
            return Ok((r.value, r.assignment.0));
        }
        let noise = draw_noise(self.model, &self.blocks, seed);
        match &self.scores {
            Some(scores) => Ok(self.argmax_enumerated(scores, &noise, scale)),
            None => {
                let perturbed = self.perturbed_model(&noise, scale)?;
                let r = solve_map(&perturbed, &self.solver)?;
                Ok((r.value, r.assignment.0))
            }
        }
    }

    fn argmax_enumerated(&self, scores: &[f64], noise: &[Vec<f64>], scale: f64) -> (f64, Vec<usize>) {
        let cards = self.model.cards();
        let mut odo = Odometer::new(cards);
        let mut best = f64::NEG_INFINITY;
        let mut best_labels = odo.labels().to_vec();
        for &score in scores {
            let mut v = score;
            for (b, table) in self.blocks.iter().zip(noise) {
                v += scale * table[block_index(cards, b, odo.labels())];
            }
            if v > best {
                best = v;
                best_labels.copy_from_slice(odo.labels());
            }
            odo.advance();
        }
        (best, best_labels)
    }

    fn perturbed_model(&self, noise: &[Vec<f64>], scale: f64) -> Result<PairwiseModel> {
        let cards = self.model.cards();
        let mut unary: Vec<Vec<f64>> = cards.iter().map(|&c| vec![0.0; c]).collect();
        let mut pairs = Vec::new();
        for (b, table) in self.blocks.iter().zip(noise) {
            let scaled: Vec<f64> = table.iter().map(|g| scale * g).collect();
            match b.as_slice() {
                [i] => unary[*i]
                    .iter_mut()
                    .zip(&scaled)
                    .for_each(|(u, g)| *u += g),
                [i, j] => pairs.push((*i, *j, scaled)),
                _ => unreachable!("larger blocks are enumerated"),
            }
        }
        let model = self.model.with_unary_offsets(&unary)?;
        if pairs.is_empty() {
            Ok(model)
        } else {
            model.with_pair_terms(&pairs)
        }
    }
}

/// Upper bound on log Z: the mean of `m` perturbed MAP values.
///
/// Draw `j` uses the sub-stream `derive_seed(seed, [j])`, so the full-joint
/// scheme reproduces [`crate::perturb::estimate_logz_full`] draw for draw.
pub fn upper_bound_logz(
    model: &PairwiseModel,
    scheme: &PerturbationScheme,
    solver: &MapMethod,
    m: usize,
    seed: u64,
) -> Result<EstimateReport> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be >= 1".into()));
    }
    if matches!(scheme, PerturbationScheme::Unperturbed) {
        return Err(Error::InvalidScheme("a perturbation is required".into()));
    }
    let evaluator = PerturbedMax::new(model, scheme, solver)?;
    let samples = (0..m as u64)
        .into_par_iter()
        .map(|j| evaluator.eval(derive_seed(seed, &[j]), 1.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateReport::from_samples("upper_bound", seed, samples))
}

// ---------------------------------------------------------------------------
// Lower bound

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundConfig {
    pub lambdas: Vec<f64>,
    /// Draws per grid point.
    pub m: usize,
}

impl Default for LowerBoundConfig {
    fn default() -> Self {
        LowerBoundConfig {
            lambdas: (0..10).map(|k| k as f64 / 10.0).collect(),
            m: 100,
        }
    }
}

impl LowerBoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be >= 1".into()));
        }
        if self.lambdas.iter().any(|&l| !(0.0..1.0).contains(&l)) {
            return Err(Error::InvalidConfig(
                "lambda grid must lie in [0, 1); the Gumbel cumulant diverges at 1".into(),
            ));
        }
        if self.lambdas.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("lambda grid must be sorted".into()));
        }
        if !self.lambdas.contains(&0.0) {
            return Err(Error::InvalidConfig("lambda grid must contain 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaPoint {
    pub lambda: f64,
    /// log of the sample mean of exp(perturbed MAP value).
    pub log_mean_exp: f64,
    /// Subtracted cumulant term, `|A| * K(lambda)`.
    pub cumulant: f64,
    pub value: f64,
    /// Delete-one jackknife standard error of `log_mean_exp`.
    pub jackknife_se: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundReport {
    pub value: f64,
    pub best_lambda: f64,
    /// Jackknife SE at the best grid point.
    pub std_error: f64,
    pub points: Vec<LambdaPoint>,
    pub m: usize,
    pub seed: u64,
}

/// `log((1/m) sum exp(x_k))` with a max shift.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + (s / xs.len() as f64).ln()
}

/// Delete-one jackknife standard error of [`log_mean_exp`].
pub fn jackknife_se_log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.len();
    if m < 2 {
        return 0.0;
    }
    let mut rest = Vec::with_capacity(m - 1);
    let loo: Vec<f64> = (0..m)
        .map(|k| {
            rest.clear();
            rest.extend(xs.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, &x)| x));
            log_mean_exp(&rest)
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / m as f64;
    let ss: f64 = loo.iter().map(|l| (l - mean).powi(2)).sum();
    ((m as f64 - 1.0) / m as f64 * ss).sqrt()
}

/// Lower bound on log Z, maximized over a grid of perturbation scales.
///
/// At scale `lambda` the bound is the log-mean-exp of `m` MAP values under
/// `lambda`-scaled noise minus `|A| K(lambda)`. All grid points share the
/// same noise draws; `lambda = 0` is the plain MAP value.
pub fn lower_bound_logz(
    model: &PairwiseModel,
    scheme: &PerturbationScheme,
    solver: &MapMethod,
    config: &LowerBoundConfig,
    seed: u64,
) -> Result<LowerBoundReport> {
    config.validate()?;
    if matches!(scheme, PerturbationScheme::Unperturbed) {
        return Err(Error::InvalidScheme("a perturbation is required".into()));
    }
    let evaluator = PerturbedMax::new(model, scheme, solver)?;
    let num_blocks = evaluator.num_blocks() as f64;
    let mut points = Vec::with_capacity(config.lambdas.len());
    for &lambda in &config.lambdas {
        if lambda == 0.0 {
            let v = solve_map(model, solver)?.value;
            points.push(LambdaPoint {
                lambda,
                log_mean_exp: v,
                cumulant: 0.0,
                value: v,
                jackknife_se: 0.0,
            });
            continue;
        }
        let draws = (0..config.m as u64)
            .into_par_iter()
            .map(|j| evaluator.eval(derive_seed(seed, &[j]), lambda))
            .collect::<Result<Vec<_>>>()?;
        let lme = log_mean_exp(&draws);
        let cumulant = num_blocks * gumbel_cumulant(lambda);
        points.push(LambdaPoint {
            lambda,
            log_mean_exp: lme,
            cumulant,
            value: lme - cumulant,
            jackknife_se: jackknife_se_log_mean_exp(&draws),
        });
    }
    let best = points
        .iter()
        .fold(&points[0], |b, p| if p.value > b.value { p } else { b });
    Ok(LowerBoundReport {
        value: best.value,
        best_lambda: best.lambda,
        std_error: best.jackknife_se,
        points: points.clone(),
        m: config.m,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Inflation

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InflationVariant {
    /// m copies per variable, unaries scaled by 1/m and every original edge
    /// expanded to all m^2 copy pairs with weight 1/m^2.
    ExactAverage,
    /// The grid tiled sqrt(m) x sqrt(m) times; the MAP value is divided by m.
    TiledGrid(GridShape),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InflationConfig {
    /// Copies per variable.
    pub m: usize,
    pub variant: InflationVariant,
    /// Noise multiplier; defaults to 1/m (exact average) or 1 (tiled grid).
    pub perturbation_scale: Option<f64>,
    pub solver: MapMethod,
    /// Independent MAP solves to report.
    pub reports: usize,
}

impl InflationConfig {
    pub fn exact_average(m: usize, solver: MapMethod) -> Self {
        InflationConfig {
            m,
            variant: InflationVariant::ExactAverage,
            perturbation_scale: None,
            solver,
            reports: 1,
        }
    }

    pub fn scale(&self) -> f64 {
        self.perturbation_scale.unwrap_or(match self.variant {
            InflationVariant::ExactAverage => 1.0 / self.m as f64,
            InflationVariant::TiledGrid(_) => 1.0,
        })
    }
}

/// Build the exact-average inflated model with fresh per-copy noise.
/// Copy `a` of variable `i` is variable `i * m + a`.
pub fn inflate_exact_average(
    model: &PairwiseModel,
    m: usize,
    scale: f64,
    seed: u64,
) -> Result<PairwiseModel> {
    let n = model.num_vars();
    let inv_m = 1.0 / m as f64;
    let inv_m2 = 1.0 / (m * m) as f64;
    let mut sampler = GumbelSampler::new(seed);
    let mut cards = Vec::with_capacity(n * m);
    let mut unary = Vec::with_capacity(n * m);
    for i in 0..n {
        for _ in 0..m {
            cards.push(model.cards()[i]);
            unary.push(
                model
                    .unary(i)
                    .iter()
                    .map(|&t| inv_m * t + scale * sampler.sample())
                    .collect(),
            );
        }
    }
    let mut edges = Vec::with_capacity(model.edges().len() * m * m);
    for e in model.edges() {
        let table: Vec<f64> = e.table.iter().map(|&t| inv_m2 * t).collect();
        for a in 0..m {
            for b in 0..m {
                edges.push((e.i * m + a, e.j * m + b, table.clone()));
            }
        }
    }
    PairwiseModel::new(cards, unary, edges)
}

fn grid_edge_table(model: &PairwiseModel, u: usize, v: usize) -> Option<Vec<f64>> {
    let (i, j) = (u.min(v), u.max(v));
    model
        .neighbors(i)
        .iter()
        .find(|&&(_, w)| w == j)
        .map(|&(k, _)| model.edges()[k].table.clone())
}

/// Build the tiled inflated grid with fresh per-cell noise.
///
/// Tiles alternate orientation (mirror tiling), so cells facing each other
/// across a seam are copies of the same original variable `v`; the seam edge
/// between them carries `v`'s original edge toward the tile interior.
pub fn inflate_tiled_grid(
    model: &PairwiseModel,
    grid: GridShape,
    tiles: usize,
    scale: f64,
    seed: u64,
) -> Result<PairwiseModel> {
    if grid.len() != model.num_vars() {
        return Err(Error::InvalidConfig(format!(
            "grid {}x{} does not match {} variables",
            grid.rows,
            grid.cols,
            model.num_vars()
        )));
    }
    let grid_edges = grid.edges();
    if grid_edges.len() != model.edges().len()
        || grid_edges
            .iter()
            .any(|&(u, v)| grid_edge_table(model, u, v).is_none())
    {
        return Err(Error::InvalidConfig(
            "tiled inflation requires a 4-neighbor grid model".into(),
        ));
    }
    let big = GridShape::new(grid.rows * tiles, grid.cols * tiles);
    let orig = |r: usize, c: usize| -> (usize, usize) {
        let (tr, rr) = (r / grid.rows, r % grid.rows);
        let (tc, cc) = (c / grid.cols, c % grid.cols);
        let rr = if tr % 2 == 1 { grid.rows - 1 - rr } else { rr };
        let cc = if tc % 2 == 1 { grid.cols - 1 - cc } else { cc };
        (rr, cc)
    };
    let mut sampler = GumbelSampler::new(seed);
    let mut cards = Vec::with_capacity(big.len());
    let mut unary = Vec::with_capacity(big.len());
    for r in 0..big.rows {
        for c in 0..big.cols {
            let (rr, cc) = orig(r, c);
            let v = grid.index(rr, cc);
            cards.push(model.cards()[v]);
            unary.push(
                model
                    .unary(v)
                    .iter()
                    .map(|&t| t + scale * sampler.sample())
                    .collect(),
            );
        }
    }
    let mut edges = Vec::with_capacity(big.edges().len());
    for (p, q) in big.edges() {
        let (pr, pc) = (p / big.cols, p % big.cols);
        let (qr, qc) = (q / big.cols, q % big.cols);
        let (a, b) = (orig(pr, pc), orig(qr, qc));
        let (u, v) = (grid.index(a.0, a.1), grid.index(b.0, b.1));
        if u != v {
            // interior edge: orient the original table to (p, q)
            let table = grid_edge_table(model, u, v).expect("grid edge exists");
            let table = if u < v {
                table
            } else {
                transpose(&table, model.cards()[v], model.cards()[u])
            };
            edges.push((p, q, table));
        } else {
            // seam: reuse v's edge toward the interior along this axis
            let horizontal = pr == qr;
            let (r0, c0) = a;
            let inner = if horizontal {
                match c0 {
                    0 if grid.cols > 1 => Some((r0, 1)),
                    c if c + 1 == grid.cols && grid.cols > 1 => Some((r0, c - 1)),
                    _ => None,
                }
            } else {
                match r0 {
                    0 if grid.rows > 1 => Some((1, c0)),
                    r if r + 1 == grid.rows && grid.rows > 1 => Some((r - 1, c0)),
                    _ => None,
                }
            };
            if let Some((ri, ci)) = inner {
                let w = grid.index(ri, ci);
                let table = grid_edge_table(model, u, w).expect("grid edge exists");
                // table over (y_u, y_w) when u < w, else (y_w, y_u); both copies share cards
                let table = if u < w {
                    table
                } else {
                    transpose(&table, model.cards()[w], model.cards()[u])
                };
                edges.push((p, q, table));
            }
        }
    }
    PairwiseModel::new(cards, unary, edges)
}

fn transpose(table: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; table.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = table[r * cols + c];
        }
    }
    t
}

/// Single-MAP approximation of log Z on an inflated model.
///
/// Report `r` draws its noise from `derive_seed(seed, [r])`.
pub fn approx_logz_inflation(
    model: &PairwiseModel,
    config: &InflationConfig,
    seed: u64,
) -> Result<EstimateReport> {
    if config.m == 0 || config.reports == 0 {
        return Err(Error::InvalidConfig("m and reports must be >= 1".into()));
    }
    let scale = config.scale();
    let samples = (0..config.reports as u64)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, &[r]);
            match config.variant {
                InflationVariant::ExactAverage => {
                    let inflated = inflate_exact_average(model, config.m, scale, s)?;
                    Ok(solve_map(&inflated, &config.solver)?.value)
                }
                InflationVariant::TiledGrid(grid) => {
                    let tiles = (config.m as f64).sqrt().round() as usize;
                    if tiles * tiles != config.m {
                        return Err(Error::InvalidConfig(format!(
                            "tiled inflation needs a square m, got {}",
                            config.m
                        )));
                    }
                    let inflated = inflate_tiled_grid(model, grid, tiles, scale, s)?;
                    Ok(solve_map(&inflated, &config.solver)?.value / config.m as f64)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let id = match config.variant {
        InflationVariant::ExactAverage => "inflation",
        InflationVariant::TiledGrid(_) => "inflation_tiled",
    };
    Ok(EstimateReport::from_samples(id, seed, samples))
}

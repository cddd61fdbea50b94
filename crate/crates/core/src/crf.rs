//! Conditional random fields trained through perturbed MAP.
//!
//! The surrogate loss replaces each log-partition term with the expected
//! value of a perturbed MAP problem. Its gradient needs only perturbed
//! argmaxes, so training runs wherever a MAP solver does. With no
//! perturbation the same code gives the structured-SVM-like ablation.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;

use crate::bounds::{PerturbationScheme, PerturbedMax};
use crate::mapsolve::{solve_map, MapMethod};
use crate::model::GridShape;
use crate::oracle::{all_scores, exact_log_partition, DEFAULT_STATE_CAP};
use crate::perturb::mean_and_std_error;
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, PairwiseModel, Result};

/// Joint features `Phi(x, y)` whose inner product with the parameters is a
/// pairwise model over `y`.
pub trait FeatureMap: Sync {
    fn dim(&self) -> usize;

    fn features(&self, observed: &[usize], labels: &[usize]) -> Vec<f64>;

    /// The model scoring `y` by `theta . Phi(x, y)`.
    fn model(&self, theta: &[f64], observed: &[usize]) -> Result<PairwiseModel>;

    /// Coordinates kept non-negative when training for graph cuts.
    fn pairwise_coords(&self) -> Range<usize>;
}

/// Per-pixel weight on agreeing with the observation and per-edge weight on
/// neighbors agreeing, over a 4-neighbor grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiseFeatures {
    pub grid: GridShape,
}

impl DenoiseFeatures {
    pub fn new(rows: usize, cols: usize) -> Self {
        DenoiseFeatures {
            grid: GridShape::new(rows, cols),
        }
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.grid.edges()
    }

    /// Serialize parameters as a model block: unary tables `(0, theta_i)`,
    /// edge tables `theta_ij` on the diagonal.
    pub fn params_to_text(&self, params: &CrfParams) -> Result<String> {
        let n = self.grid.len();
        params.check_dim(self.dim())?;
        let unary = (0..n).map(|i| vec![0.0, params.theta[i]]).collect();
        let edges = self
            .edges()
            .into_iter()
            .enumerate()
            .map(|(k, (u, v))| {
                let w = params.theta[n + k];
                (u, v, vec![w, 0.0, 0.0, w])
            })
            .collect();
        let model = PairwiseModel::new(vec![2; n], unary, edges)?;
        Ok(format!(
            "crf v1 denoise {} {}\n{}",
            self.grid.rows,
            self.grid.cols,
            model.to_text()
        ))
    }

    pub fn params_from_text(text: &str) -> Result<(Self, CrfParams)> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let fields: Vec<&str> = header.split_whitespace().collect();
        let dims = match fields.as_slice() {
            ["crf", "v1", "denoise", r, c] => r.parse::<usize>().ok().zip(c.parse::<usize>().ok()),
            ["crf", v, ..] if *v != "v1" => return Err(Error::Version(v.to_string())),
            _ => None,
        };
        let (rows, cols) = dims.ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("expected 'crf v1 denoise <rows> <cols>', got '{header}'"),
        })?;
        let fmap = DenoiseFeatures::new(rows, cols);
        let model = PairwiseModel::from_text(body)?;
        let n = fmap.grid.len();
        if model.num_vars() != n || model.cards().iter().any(|&c| c != 2) {
            return Err(Error::Shape(format!(
                "parameter block does not describe a binary {rows}x{cols} grid"
            )));
        }
        let mut theta: Vec<f64> = (0..n).map(|i| model.unary(i)[1]).collect();
        for (u, v) in fmap.edges() {
            let e = model
                .neighbors(u)
                .iter()
                .find(|&&(_, w)| w == v)
                .map(|&(e, _)| e)
                .ok_or_else(|| Error::Shape(format!("missing grid edge {u}-{v}")))?;
            theta.push(model.edges()[e].table[0]);
        }
        Ok((fmap, CrfParams::new(theta)?))
    }
}

impl FeatureMap for DenoiseFeatures {
    fn dim(&self) -> usize {
        self.grid.len() + self.edges().len()
    }

    fn features(&self, observed: &[usize], labels: &[usize]) -> Vec<f64> {
        let agree = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let mut phi: Vec<f64> = observed
            .iter()
            .zip(labels)
            .map(|(&x, &y)| agree(x, y))
            .collect();
        phi.extend(self.edges().iter().map(|&(u, v)| agree(labels[u], labels[v])));
        phi
    }

    fn model(&self, theta: &[f64], observed: &[usize]) -> Result<PairwiseModel> {
        let n = self.grid.len();
        if theta.len() != self.dim() || observed.len() != n {
            return Err(Error::Shape(format!(
                "expected {} parameters and {n} pixels, got {} and {}",
                self.dim(),
                theta.len(),
                observed.len()
            )));
        }
        let unary = observed
            .iter()
            .zip(theta)
            .map(|(&x, &w)| if x == 0 { vec![w, 0.0] } else { vec![0.0, w] })
            .collect();
        let edges = self
            .edges()
            .into_iter()
            .zip(&theta[n..])
            .map(|((u, v), &w)| (u, v, vec![w, 0.0, 0.0, w]))
            .collect();
        PairwiseModel::new(vec![2; n], unary, edges)
    }

    fn pairwise_coords(&self) -> Range<usize> {
        self.grid.len()..self.dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    pub theta: Vec<f64>,
}

impl CrfParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if let Some((k, &v)) = theta.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidValue {
                value: v,
                location: format!("theta[{k}]"),
            });
        }
        Ok(CrfParams { theta })
    }

    pub fn zeros(dim: usize) -> Self {
        CrfParams {
            theta: vec![0.0; dim],
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.theta.len() != dim {
            return Err(Error::Shape(format!(
                "{} parameters for a {dim}-dimensional feature map",
                self.theta.len()
            )));
        }
        Ok(())
    }
}

/// One observed input and its target labeling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub observed: Vec<usize>,
    pub label: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseDataset {
    pub grid: GridShape,
    pub flip_prob: f64,
    pub seed: u64,
    pub clean: Vec<usize>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

/// Procedural silhouette: a head over a torso with two legs. 1 = foreground.
pub fn silhouette(grid: GridShape) -> Vec<usize> {
    let mut img = Vec::with_capacity(grid.len());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let u = (c as f64 + 0.5) / grid.cols as f64;
            let v = (r as f64 + 0.5) / grid.rows as f64;
            let head = ((u - 0.5) / 0.14).powi(2) + ((v - 0.17) / 0.13).powi(2) <= 1.0;
            let neck = (u - 0.5).abs() <= 0.06 && (0.28..=0.36).contains(&v);
            let torso = ((u - 0.5) / 0.27).powi(2) + ((v - 0.56) / 0.22).powi(2) <= 1.0;
            let legs = (0.66..=0.97).contains(&v) && ((u - 0.4).abs() <= 0.07 || (u - 0.6).abs() <= 0.07);
            img.push(usize::from(head || neck || torso || legs));
        }
    }
    img
}

/// Clean silhouette plus i.i.d. Bernoulli(flip_prob) pixel flips per example.
pub fn gen_denoise_dataset(
    rows: usize,
    cols: usize,
    num_train: usize,
    num_test: usize,
    flip_prob: f64,
    seed: u64,
) -> Result<DenoiseDataset> {
    if !(0.0..0.5).contains(&flip_prob) {
        return Err(Error::InvalidConfig(format!(
            "flip probability must be in [0, 0.5), got {flip_prob}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidConfig("image must be non-empty".into()));
    }
    let grid = GridShape::new(rows, cols);
    let clean = silhouette(grid);
    let make = |split: u64, count: usize| -> Vec<Example> {
        (0..count as u64)
            .map(|k| {
                let mut rng = rng_from_seed(derive_seed(seed, &[split, k]));
                let observed = clean
                    .iter()
                    .map(|&p| p ^ usize::from(rng.gen_bool(flip_prob)))
                    .collect();
                Example {
                    observed,
                    label: clean.clone(),
                }
            })
            .collect()
    };
    Ok(DenoiseDataset {
        grid,
        flip_prob,
        seed,
        train: make(0, num_train),
        test: make(1, num_test),
        clean,
    })
}

impl DenoiseDataset {
    /// ASCII 0/1 grids: the clean image, then every observation.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "denoise v1 {} {} {:?} {} {} {}\n",
            self.grid.rows,
            self.grid.cols,
            self.flip_prob,
            self.seed,
            self.train.len(),
            self.test.len()
        );
        let mut grid = |title: String, img: &[usize]| {
            out.push_str(&title);
            out.push('\n');
            for row in img.chunks(self.grid.cols) {
                row.iter().for_each(|p| out.push(if *p == 1 { '1' } else { '0' }));
                out.push('\n');
            }
        };
        grid("clean".into(), &self.clean);
        for (k, ex) in self.train.iter().enumerate() {
            grid(format!("train {k}"), &ex.observed);
        }
        for (k, ex) in self.test.iter().enumerate() {
            grid(format!("test {k}"), &ex.observed);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Surrogate loss and gradient

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateLoss {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    /// Per-example counts of each sampled argmax.
    pub argmax_counts: Vec<BTreeMap<Vec<usize>, usize>>,
    pub m: usize,
    /// Per-coordinate Monte-Carlo standard error.
    pub std_error: Vec<f64>,
    /// Loss estimate from the same draws.
    pub loss: SurrogateLoss,
}

impl GradientEstimate {
    /// Empirical argmax frequencies for example `k`.
    pub fn frequencies(&self, k: usize) -> Vec<(Vec<usize>, f64)> {
        self.argmax_counts[k]
            .iter()
            .map(|(y, &c)| (y.clone(), c as f64 / self.m as f64))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Draws {
    /// Per example: (perturbed MAP value, argmax) for each draw.
    per_example: Vec<Vec<(f64, Vec<usize>)>>,
}

fn perturbed_draws(
    fmap: &dyn FeatureMap,
    params: &CrfParams,
    examples: &[Example],
    scheme: &PerturbationScheme,
    m: usize,
    seed: u64,
    solver: &MapMethod,
) -> Result<Draws> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be >= 1".into()));
    }
    params.check_dim(fmap.dim())?;
    let per_example = examples
        .par_iter()
        .enumerate()
        .map(|(k, ex)| {
            let model = fmap.model(&params.theta, &ex.observed)?;
            let evaluator = PerturbedMax::new(&model, scheme, solver)?;
            (0..m as u64)
                .map(|d| evaluator.argmax(derive_seed(seed, &[k as u64, d]), 1.0))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Draws { per_example })
}

fn loss_from_draws(
    fmap: &dyn FeatureMap,
    params: &CrfParams,
    examples: &[Example],
    draws: &Draws,
) -> SurrogateLoss {
    let mut value = 0.0;
    let mut var = 0.0;
    for (ex, d) in examples.iter().zip(&draws.per_example) {
        let maxes: Vec<f64> = d.iter().map(|(v, _)| *v).collect();
        let (mean, se) = mean_and_std_error(&maxes);
        value += mean - dot(&params.theta, &fmap.features(&ex.observed, &ex.label));
        var += se * se;
    }
    SurrogateLoss {
        value,
        std_error: var.sqrt(),
    }
}

/// Monte-Carlo estimate of the surrogate loss with `m` draws per example.
/// Draw `d` of example `k` uses the noise stream `derive_seed(seed, [k, d])`.
pub fn surrogate_loss(
    fmap: &dyn FeatureMap,
    params: &CrfParams,
    examples: &[Example],
    scheme: &PerturbationScheme,
    m: usize,
    seed: u64,
    solver: &MapMethod,
) -> Result<SurrogateLoss> {
    let draws = perturbed_draws(fmap, params, examples, scheme, m, seed, solver)?;
    Ok(loss_from_draws(fmap, params, examples, &draws))
}

/// Gradient from argmax counts: expected features under the empirical
/// argmax distribution minus the data features, summed over examples.
pub fn gradient_from_counts(
    fmap: &dyn FeatureMap,
    examples: &[Example],
    counts: &[BTreeMap<Vec<usize>, usize>],
    m: usize,
) -> Vec<f64> {
    let mut grad = vec![0.0; fmap.dim()];
    for (ex, c) in examples.iter().zip(counts) {
        for (y, &n) in c {
            let w = n as f64 / m as f64;
            let phi = fmap.features(&ex.observed, y);
            grad.iter_mut().zip(&phi).for_each(|(g, p)| *g += w * p);
        }
        let phi = fmap.features(&ex.observed, &ex.label);
        grad.iter_mut().zip(&phi).for_each(|(g, p)| *g -= p);
    }
    grad
}

/// Stochastic moment-matching gradient of the surrogate loss.
pub fn surrogate_gradient(
    fmap: &dyn FeatureMap,
    params: &CrfParams,
    examples: &[Example],
    scheme: &PerturbationScheme,
    m: usize,
    seed: u64,
    solver: &MapMethod,
) -> Result<GradientEstimate> {
    let draws = perturbed_draws(fmap, params, examples, scheme, m, seed, solver)?;
    let dim = fmap.dim();
    let mut counts = Vec::with_capacity(examples.len());
    let mut var = vec![0.0; dim];
    for (ex, d) in examples.iter().zip(&draws.per_example) {
        let mut c: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for (_, y) in d {
            *c.entry(y.clone()).or_default() += 1;
            let phi = fmap.features(&ex.observed, y);
            for ((s, q), p) in sum.iter_mut().zip(&mut sum_sq).zip(&phi) {
                *s += p;
                *q += p * p;
            }
        }
        if m > 1 {
            let mf = m as f64;
            for ((v, s), q) in var.iter_mut().zip(&sum).zip(&sum_sq) {
                let sample_var = ((q - s * s / mf) / (mf - 1.0)).max(0.0);
                *v += sample_var / mf;
            }
        }
        counts.push(c);
    }
    Ok(GradientEstimate {
        gradient: gradient_from_counts(fmap, examples, &counts, m),
        argmax_counts: counts,
        m,
        std_error: var.into_iter().map(f64::sqrt).collect(),
        loss: loss_from_draws(fmap, params, examples, &draws),
    })
}

/// Negative conditional log-likelihood by enumeration.
pub fn exact_crf_loss(fmap: &dyn FeatureMap, params: &CrfParams, examples: &[Example]) -> Result<f64> {
    params.check_dim(fmap.dim())?;
    examples.iter().try_fold(0.0, |acc, ex| {
        let model = fmap.model(&params.theta, &ex.observed)?;
        Ok(acc + exact_log_partition(&model)?
            - dot(&params.theta, &fmap.features(&ex.observed, &ex.label)))
    })
}

/// Exact moment-matching gradient from Gibbs expectations.
pub fn exact_crf_gradient(
    fmap: &dyn FeatureMap,
    params: &CrfParams,
    examples: &[Example],
) -> Result<Vec<f64>> {
    params.check_dim(fmap.dim())?;
    let mut grad = vec![0.0; fmap.dim()];
    for ex in examples {
        let model = fmap.model(&params.theta, &ex.observed)?;
        let log_z = exact_log_partition(&model)?;
        let scores = all_scores(&model, DEFAULT_STATE_CAP)?;
        let mut odo = crate::model::Odometer::new(model.cards());
        for s in scores {
            let p = (s - log_z).exp();
            if p > 0.0 {
                let phi = fmap.features(&ex.observed, odo.labels());
                grad.iter_mut().zip(&phi).for_each(|(g, f)| *g += p * f);
            }
            odo.advance();
        }
        let phi = fmap.features(&ex.observed, &ex.label);
        grad.iter_mut().zip(&phi).for_each(|(g, f)| *g -= f);
    }
    Ok(grad)
}

/// Fraction of mislabeled pixels after MAP decoding each observation.
pub fn pixel_error(
    fmap: &dyn FeatureMap,
    params: &CrfParams,
    examples: &[Example],
    solver: &MapMethod,
) -> Result<f64> {
    params.check_dim(fmap.dim())?;
    let mistakes = examples
        .par_iter()
        .map(|ex| {
            let model = fmap.model(&params.theta, &ex.observed)?;
            let decoded = solve_map(&model, solver)?.assignment;
            Ok(decoded.0.iter().zip(&ex.label).filter(|(a, b)| a != b).count())
        })
        .collect::<Result<Vec<_>>>()?;
    let total: usize = examples.iter().map(|ex| ex.label.len()).sum();
    if total == 0 {
        return Ok(0.0);
    }
    Ok(mistakes.iter().sum::<usize>() as f64 / total as f64)
}

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `step / sqrt(epoch)`.
    InverseSqrt(f64),
}

impl StepSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        match *self {
            StepSchedule::Constant(s) => s,
            StepSchedule::InverseSqrt(s) => s / (epoch as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GradientMode {
    /// Perturbed-MAP gradient under the given scheme.
    Perturbed(PerturbationScheme),
    /// Exact gradient from Gibbs marginals; enumerable models only.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub step: StepSchedule,
    /// Draws per example per step.
    pub m: usize,
    pub seed: u64,
    pub solver: MapMethod,
    pub gradient: GradientMode,
    /// Clamp pairwise weights at zero after each step.
    pub project_pairwise: bool,
    /// Stop once the gradient norm falls below this.
    pub grad_tol: Option<f64>,
    pub init: Option<Vec<f64>>,
}

impl TrainConfig {
    pub fn new(gradient: GradientMode, solver: MapMethod, seed: u64) -> Self {
        TrainConfig {
            epochs: 50,
            step: StepSchedule::InverseSqrt(0.1),
            m: 1,
            seed,
            project_pairwise: solver == MapMethod::GraphCut,
            solver,
            gradient,
            grad_tol: None,
            init: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss at the parameters the step started from.
    pub loss: f64,
    pub grad_norm: f64,
    /// Parameters after the step.
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub params: CrfParams,
    pub history: Vec<EpochRecord>,
}

/// Gradient descent on the surrogate (or exact) loss, stepping along the
/// per-example mean gradient.
pub fn train(fmap: &dyn FeatureMap, examples: &[Example], config: &TrainConfig) -> Result<TrainResult> {
    if examples.is_empty() {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    let mut theta = match &config.init {
        Some(t) => CrfParams::new(t.clone())?,
        None => CrfParams::zeros(fmap.dim()),
    };
    theta.check_dim(fmap.dim())?;
    let scale = 1.0 / examples.len() as f64;
    let mut history = Vec::with_capacity(config.epochs);
    let mut limit = f64::INFINITY;
    for epoch in 1..=config.epochs {
        let (loss, grad) = match &config.gradient {
            GradientMode::Perturbed(scheme) => {
                let est = surrogate_gradient(
                    fmap,
                    &theta,
                    examples,
                    scheme,
                    config.m,
                    derive_seed(config.seed, &[epoch as u64]),
                    &config.solver,
                )?;
                (est.loss.value, est.gradient)
            }
            GradientMode::Exact => (
                exact_crf_loss(fmap, &theta, examples)?,
                exact_crf_gradient(fmap, &theta, examples)?,
            ),
        };
        if epoch == 1 {
            // the unperturbed loss can start at exactly zero
            let labels: usize = examples.iter().map(|ex| ex.label.len()).sum();
            limit = 10.0 * loss.abs().max(labels as f64);
        }
        if !loss.is_finite() || loss > limit {
            return Err(Error::Diverged { epoch, loss, limit });
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let done = config.grad_tol.is_some_and(|tol| grad_norm < tol);
        if !done {
            let step = config.step.at(epoch) * scale;
            theta.theta.iter_mut().zip(&grad).for_each(|(t, g)| *t -= step * g);
            if config.project_pairwise {
                for k in fmap.pairwise_coords() {
                    theta.theta[k] = theta.theta[k].max(0.0);
                }
            }
        }
        history.push(EpochRecord {
            epoch,
            loss,
            grad_norm,
            theta: theta.theta.clone(),
        });
        if done {
            break;
        }
    }
    Ok(TrainResult {
        params: theta,
        history,
    })
}

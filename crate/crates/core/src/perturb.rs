//! Gumbel perturbations and the exact, exponential-size identities they
//! satisfy. These routines enumerate joint states and serve as statistical
//! ground truth for the efficient estimators in [`crate::bounds`].

use rand::Rng;
use rayon::prelude::*;

use crate::model::PairwiseModel;
use crate::oracle::{all_scores, DEFAULT_STATE_CAP};
use crate::rng::{derive_seed, rng_from_seed, ChaCha8Rng};
use crate::{Error, Result};

/// Euler–Mascheroni constant, the mean of the standard Gumbel distribution.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// CDF of the zero-mean Gumbel distribution, `exp(-exp(-(t + c)))`.
pub fn gumbel_cdf(t: f64) -> f64 {
    (-(-(t + EULER_GAMMA)).exp()).exp()
}

/// Cumulant generating function `log E[exp(lambda * g)]` of a zero-mean
/// Gumbel variable; finite for `lambda < 1`.
pub fn gumbel_cumulant(lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    if lambda >= 1.0 {
        return f64::INFINITY;
    }
    statrs::function::gamma::ln_gamma(1.0 - lambda) - lambda * EULER_GAMMA
}

/// Zero-mean Gumbel variates by inversion of a seeded uniform stream.
#[derive(Clone, Debug)]
pub struct GumbelSampler {
    seed: u64,
    rng: ChaCha8Rng,
}

impl GumbelSampler {
    pub fn new(seed: u64) -> Self {
        GumbelSampler {
            seed,
            rng: rng_from_seed(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample(&mut self) -> f64 {
        // U must lie strictly inside (0, 1); redraw otherwise.
        let u = loop {
            let u: f64 = self.rng.gen();
            if u > 0.0 && u < 1.0 {
                break u;
            }
        };
        -EULER_GAMMA - (-u.ln()).ln()
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = self.sample());
    }

    pub fn sample_n(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.sample()).collect()
    }
}

pub fn sample_gumbel(seed: u64, count: usize) -> Vec<f64> {
    GumbelSampler::new(seed).sample_n(count)
}

/// Per-draw values of a Monte-Carlo estimator with summary statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    pub estimator: String,
    pub seed: u64,
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(m)`; zero when `m == 1`.
    pub std_error: f64,
}

impl EstimateReport {
    pub fn from_samples(estimator: impl Into<String>, seed: u64, samples: Vec<f64>) -> Self {
        let (mean, std_error) = mean_and_std_error(&samples);
        EstimateReport {
            estimator: estimator.into(),
            seed,
            samples,
            mean,
            std_error,
        }
    }

    pub fn m(&self) -> usize {
        self.samples.len()
    }
}

pub fn mean_and_std_error(samples: &[f64]) -> (f64, f64) {
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// One draw of `max_y { scores[y] + g(y) }` with a fresh Gumbel per state,
/// returning the value and the (first) maximizing state index.
pub(crate) fn full_joint_draw(scores: &[f64], seed: u64) -> (f64, usize) {
    let mut sampler = GumbelSampler::new(seed);
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (s, &score) in scores.iter().enumerate() {
        let v = score + sampler.sample();
        if v > best {
            best = v;
            arg = s;
        }
    }
    (best, arg)
}

fn feasible_scores(model: &PairwiseModel) -> Result<Vec<f64>> {
    let scores = all_scores(model, DEFAULT_STATE_CAP)?;
    if scores.iter().all(|&s| s == f64::NEG_INFINITY) {
        return Err(Error::EmptyDomain);
    }
    Ok(scores)
}

/// Unbiased estimate of log Z from `m` full-dimensional perturbed maxima.
///
/// Draw `j` uses the sub-stream `derive_seed(seed, [j])` and consumes one
/// Gumbel per joint state in lexicographic order.
pub fn estimate_logz_full(model: &PairwiseModel, m: usize, seed: u64) -> Result<EstimateReport> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be >= 1".into()));
    }
    let scores = feasible_scores(model)?;
    let samples: Vec<f64> = (0..m as u64)
        .into_par_iter()
        .map(|j| full_joint_draw(&scores, derive_seed(seed, &[j])).0)
        .collect();
    Ok(EstimateReport::from_samples("full", seed, samples))
}

/// Upper limit on `(m * max card)^n` for the sequential demonstrator.
pub const SEQUENTIAL_WORK_LIMIT: f64 = 1e9;

/// Nested expectation-maximization estimate of log Z.
///
/// Each level replaces the expectation over one variable's perturbation by
/// an `m_per_level`-sample average of perturbed maxima over that variable,
/// recursing into fresh estimates for every branch. Cost grows as
/// `(m * card)^n`, so only tiny models are accepted.
pub fn estimate_logz_sequential(model: &PairwiseModel, m_per_level: usize, seed: u64) -> Result<f64> {
    let n = model.num_vars();
    let max_card = model.cards().iter().copied().max().unwrap_or(1);
    if n > 6 || max_card > 3 {
        return Err(Error::InvalidConfig(format!(
            "sequential estimator supports n <= 6 and cardinality <= 3 (got n = {n}, card = {max_card})"
        )));
    }
    if m_per_level == 0 {
        return Err(Error::InvalidConfig("m_per_level must be >= 1".into()));
    }
    let work = ((m_per_level * max_card) as f64).powi(n as i32);
    if work > SEQUENTIAL_WORK_LIMIT {
        return Err(Error::InvalidConfig(format!(
            "sequential estimator work {work:.3e} exceeds limit {SEQUENTIAL_WORK_LIMIT:.0e}"
        )));
    }
    feasible_scores(model)?;
    let mut prefix = Vec::with_capacity(n);
    Ok(sequential_level(model, m_per_level, &mut prefix, derive_seed(seed, &[])))
}

fn sequential_level(model: &PairwiseModel, m: usize, prefix: &mut Vec<usize>, seed: u64) -> f64 {
    let level = prefix.len();
    if level == model.num_vars() {
        return model.score_raw(prefix);
    }
    let card = model.cards()[level];
    let mut total = 0.0;
    for k in 0..m as u64 {
        let mut sampler = GumbelSampler::new(derive_seed(seed, &[k]));
        let mut best = f64::NEG_INFINITY;
        for y in 0..card {
            let g = sampler.sample();
            prefix.push(y);
            let inner = sequential_level(model, m, prefix, derive_seed(seed, &[k, y as u64]));
            prefix.pop();
            best = best.max(inner + g);
        }
        total += best;
    }
    total / m as f64
}

/// Counts of full-perturbation argmax states, indexed lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalDistribution {
    pub counts: Vec<u64>,
    pub m: usize,
}

impl EmpiricalDistribution {
    pub fn frequencies(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.m as f64)
            .collect()
    }

    pub fn total_variation(&self, probs: &[f64]) -> f64 {
        0.5 * self
            .frequencies()
            .iter()
            .zip(probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Sample joint states through `argmax_y { phi(y) + g(y) }`; the argmax of a
/// full Gumbel perturbation is distributed as the Gibbs distribution.
pub fn gibbs_via_argmax(model: &PairwiseModel, m: usize, seed: u64) -> Result<EmpiricalDistribution> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be >= 1".into()));
    }
    let scores = feasible_scores(model)?;
    let args: Vec<usize> = (0..m as u64)
        .into_par_iter()
        .map(|j| full_joint_draw(&scores, derive_seed(seed, &[j])).1)
        .collect();
    let mut counts = vec![0u64; scores.len()];
    for a in args {
        counts[a] += 1;
    }
    Ok(EmpiricalDistribution { counts, m })
}

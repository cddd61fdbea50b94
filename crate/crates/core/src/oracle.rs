//! Exhaustive enumeration over joint states.
//!
//! States are visited in lexicographic order (variable 0 slowest), which
//! fixes tie-breaking for [`exact_map`] and the state indexing shared with
//! full-dimensional perturbations.

use crate::model::{Odometer, PairwiseModel};
use crate::{Assignment, Error, Result};

pub const DEFAULT_STATE_CAP: u128 = 1 << 24;

/// Per-variable probability tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    pub tables: Vec<Vec<f64>>,
}

/// Running log-sum-exp accumulator with a max shift.
#[derive(Clone, Copy, Debug)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    /// `-inf` when nothing finite was pushed.
    pub fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = LogSumExp::default();
    for v in values {
        acc.push(v);
    }
    acc.value()
}

/// Number of joint states, checked against `cap`.
pub fn checked_state_count(model: &PairwiseModel, cap: u128) -> Result<usize> {
    match model.num_states() {
        Some(s) if s <= cap => Ok(s as usize),
        Some(s) => Err(Error::StateSpaceTooLarge { states: s, cap }),
        None => Err(Error::StateSpaceTooLarge {
            states: u128::MAX,
            cap,
        }),
    }
}

/// Scores of every joint state in lexicographic order (`-inf` = forbidden).
pub fn all_scores(model: &PairwiseModel, cap: u128) -> Result<Vec<f64>> {
    let count = checked_state_count(model, cap)?;
    let mut out = Vec::with_capacity(count);
    let mut odo = Odometer::new(model.cards());
    loop {
        out.push(model.score_raw(odo.labels()));
        if !odo.advance() {
            break;
        }
    }
    Ok(out)
}

pub fn exact_log_partition(model: &PairwiseModel) -> Result<f64> {
    exact_log_partition_capped(model, DEFAULT_STATE_CAP)
}

pub fn exact_log_partition_capped(model: &PairwiseModel, cap: u128) -> Result<f64> {
    checked_state_count(model, cap)?;
    let mut acc = LogSumExp::default();
    let mut odo = Odometer::new(model.cards());
    loop {
        acc.push(model.score_raw(odo.labels()));
        if !odo.advance() {
            break;
        }
    }
    let v = acc.value();
    if v == f64::NEG_INFINITY {
        return Err(Error::EmptyDomain);
    }
    Ok(v)
}

pub fn exact_map(model: &PairwiseModel) -> Result<(Assignment, f64)> {
    exact_map_capped(model, DEFAULT_STATE_CAP)
}

/// Maximizing assignment; ties go to the lexicographically smallest.
pub fn exact_map_capped(model: &PairwiseModel, cap: u128) -> Result<(Assignment, f64)> {
    checked_state_count(model, cap)?;
    let mut best = f64::NEG_INFINITY;
    let mut best_labels: Option<Vec<usize>> = None;
    let mut odo = Odometer::new(model.cards());
    loop {
        let s = model.score_raw(odo.labels());
        if s > best {
            best = s;
            best_labels = Some(odo.labels().to_vec());
        }
        if !odo.advance() {
            break;
        }
    }
    match best_labels {
        Some(l) => Ok((Assignment(l), best)),
        None => Err(Error::EmptyDomain),
    }
}

/// Gibbs probabilities of every joint state in lexicographic order.
pub fn gibbs_distribution(model: &PairwiseModel) -> Result<Vec<f64>> {
    let log_z = exact_log_partition(model)?;
    Ok(all_scores(model, DEFAULT_STATE_CAP)?
        .into_iter()
        .map(|s| (s - log_z).exp())
        .collect())
}

pub fn exact_marginals(model: &PairwiseModel) -> Result<Marginals> {
    let log_z = exact_log_partition(model)?;
    let mut tables: Vec<Vec<f64>> = model.cards().iter().map(|&c| vec![0.0; c]).collect();
    let mut odo = Odometer::new(model.cards());
    loop {
        let p = (model.score_raw(odo.labels()) - log_z).exp();
        for (t, &y) in tables.iter_mut().zip(odo.labels()) {
            t[y] += p;
        }
        if !odo.advance() {
            break;
        }
    }
    for t in &mut tables {
        let s: f64 = t.iter().sum();
        t.iter_mut().for_each(|p| *p /= s);
    }
    Ok(Marginals { tables })
}

/// Joint marginals of each edge, row-major like the edge tables.
pub fn exact_edge_marginals(model: &PairwiseModel) -> Result<Vec<Vec<f64>>> {
    let log_z = exact_log_partition(model)?;
    let cards = model.cards();
    let mut tables: Vec<Vec<f64>> = model
        .edges()
        .iter()
        .map(|e| vec![0.0; cards[e.i] * cards[e.j]])
        .collect();
    let mut odo = Odometer::new(cards);
    loop {
        let y = odo.labels();
        let p = (model.score_raw(y) - log_z).exp();
        for (t, e) in tables.iter_mut().zip(model.edges()) {
            t[y[e.i] * cards[e.j] + y[e.j]] += p;
        }
        if !odo.advance() {
            break;
        }
    }
    Ok(tables)
}

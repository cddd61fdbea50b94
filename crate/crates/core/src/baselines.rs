//! Loopy and tree-reweighted sum-product belief propagation.
//!
//! Both share one log-space message passing routine; plain BP is the
//! reweighted update with every edge appearance probability set to 1.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::mapsolve::FORBIDDEN_SURROGATE;
use crate::model::is_forbidden;
use crate::oracle::log_sum_exp;
use crate::{Error, PairwiseModel, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BpConfig {
    pub max_iters: usize,
    /// Weight on the previous message; 0 means undamped.
    pub damping: f64,
    /// Convergence threshold on the largest log-message change.
    pub tol: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            max_iters: 2000,
            damping: 0.5,
            tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BpResult {
    pub log_z: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Forbidden entries were replaced by a large negative finite score.
    pub used_forbidden_surrogate: bool,
    /// Normalized node beliefs from the final messages.
    pub beliefs: Vec<Vec<f64>>,
}

/// Per-edge probability of appearing in a random spanning tree.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeAppearance {
    pub rho: Vec<f64>,
}

impl EdgeAppearance {
    /// Every edge weight 1, which turns reweighted BP into plain BP.
    pub fn ones(model: &PairwiseModel) -> Self {
        EdgeAppearance {
            rho: vec![1.0; model.edges().len()],
        }
    }

    pub fn validate(&self, model: &PairwiseModel) -> Result<()> {
        if self.rho.len() != model.edges().len() {
            return Err(Error::Shape(format!(
                "{} edge weights for {} edges",
                self.rho.len(),
                model.edges().len()
            )));
        }
        for (e, &r) in self.rho.iter().enumerate() {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidValue {
                    value: r,
                    location: format!("edge appearance {e}"),
                });
            }
        }
        Ok(())
    }
}

fn is_connected(model: &PairwiseModel) -> bool {
    let n = model.num_vars();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &(_, v) in model.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Exact edge probabilities under the uniform spanning-tree distribution,
/// equal to the effective resistance across each edge with unit conductances.
pub fn uniform_spanning_edge_probs(model: &PairwiseModel) -> Result<EdgeAppearance> {
    let n = model.num_vars();
    if !is_connected(model) {
        return Err(Error::Disconnected);
    }
    if model.edges().is_empty() {
        return Ok(EdgeAppearance { rho: vec![] });
    }
    // ground the last node; the reduced Laplacian is positive definite
    let k = n - 1;
    let mut lap = DMatrix::<f64>::zeros(k, k);
    for e in model.edges() {
        for &(a, b) in &[(e.i, e.j), (e.j, e.i)] {
            if a < k {
                lap[(a, a)] += 1.0;
                if b < k {
                    lap[(a, b)] -= 1.0;
                }
            }
        }
    }
    let inv = lap
        .cholesky()
        .ok_or(Error::Disconnected)?
        .inverse();
    let g = |a: usize, b: usize| {
        if a < k && b < k {
            inv[(a, b)]
        } else {
            0.0
        }
    };
    let rho = model
        .edges()
        .iter()
        .map(|e| {
            let r = g(e.i, e.i) + g(e.j, e.j) - 2.0 * g(e.i, e.j);
            r.clamp(f64::MIN_POSITIVE, 1.0)
        })
        .collect();
    Ok(EdgeAppearance { rho })
}

/// Sum-product BP; returns the Bethe estimate from the final messages.
pub fn bp_log_partition(model: &PairwiseModel, config: &BpConfig) -> BpResult {
    reweighted_bp(model, &EdgeAppearance::ones(model), config)
}

/// Tree-reweighted BP; at a fixed point the value bounds log Z from above.
pub fn trbp_log_partition(
    model: &PairwiseModel,
    appearance: &EdgeAppearance,
    config: &BpConfig,
) -> Result<BpResult> {
    appearance.validate(model)?;
    Ok(reweighted_bp(model, appearance, config))
}

fn normalize_log(v: &mut [f64]) {
    let z = log_sum_exp(v.iter().copied());
    v.iter_mut().for_each(|x| *x -= z);
}

fn finite(v: f64, flag: &mut bool) -> f64 {
    if is_forbidden(v) {
        *flag = true;
        FORBIDDEN_SURROGATE
    } else {
        v
    }
}

struct Messages {
    /// `to_j[e]`: log message from `e.i` into `e.j`, indexed by `y_j`.
    to_j: Vec<Vec<f64>>,
    to_i: Vec<Vec<f64>>,
}

impl Messages {
    /// Message on edge `e` into `node`.
    fn into(&self, model: &PairwiseModel, e: usize, node: usize) -> &[f64] {
        if model.edges()[e].j == node {
            &self.to_j[e]
        } else {
            &self.to_i[e]
        }
    }
}

fn reweighted_bp(model: &PairwiseModel, appearance: &EdgeAppearance, config: &BpConfig) -> BpResult {
    let cards = model.cards();
    let n = model.num_vars();
    let rho = &appearance.rho;
    let mut surrogate = false;
    let unary: Vec<Vec<f64>> = (0..n)
        .map(|i| model.unary(i).iter().map(|&v| finite(v, &mut surrogate)).collect())
        .collect();
    let pair: Vec<Vec<f64>> = model
        .edges()
        .iter()
        .map(|e| e.table.iter().map(|&v| finite(v, &mut surrogate)).collect())
        .collect();

    let mut msgs = Messages {
        to_j: model
            .edges()
            .iter()
            .map(|e| vec![-(cards[e.j] as f64).ln(); cards[e.j]])
            .collect(),
        to_i: model
            .edges()
            .iter()
            .map(|e| vec![-(cards[e.i] as f64).ln(); cards[e.i]])
            .collect(),
    };

    // weighted sum of incoming log messages plus the unary score
    let node_potential = |msgs: &Messages, s: usize| -> Vec<f64> {
        let mut acc = unary[s].clone();
        for &(e, _) in model.neighbors(s) {
            let m = msgs.into(model, e, s);
            acc.iter_mut().zip(m).for_each(|(a, &v)| *a += rho[e] * v);
        }
        acc
    };

    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        let pots: Vec<Vec<f64>> = (0..n).map(|s| node_potential(&msgs, s)).collect();
        let mut delta: f64 = 0.0;
        let mut next_j = Vec::with_capacity(pair.len());
        let mut next_i = Vec::with_capacity(pair.len());
        for (e, edge) in model.edges().iter().enumerate() {
            let (ci, cj) = (cards[edge.i], cards[edge.j]);
            let r = rho[e];
            // sender i: its potential minus the reverse message
            let send_i: Vec<f64> = (0..ci)
                .map(|a| pots[edge.i][a] - msgs.to_i[e][a])
                .collect();
            let send_j: Vec<f64> = (0..cj)
                .map(|b| pots[edge.j][b] - msgs.to_j[e][b])
                .collect();
            let mut new_j: Vec<f64> = (0..cj)
                .map(|b| log_sum_exp((0..ci).map(|a| pair[e][a * cj + b] / r + send_i[a])))
                .collect();
            let mut new_i: Vec<f64> = (0..ci)
                .map(|a| log_sum_exp((0..cj).map(|b| pair[e][a * cj + b] / r + send_j[b])))
                .collect();
            normalize_log(&mut new_j);
            normalize_log(&mut new_i);
            for (new, old) in [(&mut new_j, &msgs.to_j[e]), (&mut new_i, &msgs.to_i[e])] {
                if config.damping > 0.0 {
                    new.iter_mut()
                        .zip(old)
                        .for_each(|(x, &o)| *x = (1.0 - config.damping) * *x + config.damping * o);
                    normalize_log(new);
                }
                for (x, o) in new.iter().zip(old) {
                    delta = delta.max((x - o).abs());
                }
            }
            next_j.push(new_j);
            next_i.push(new_i);
        }
        msgs.to_j = next_j;
        msgs.to_i = next_i;
        if delta < config.tol {
            converged = true;
            break;
        }
    }

    // beliefs and the reweighted free energy
    let pots: Vec<Vec<f64>> = (0..n).map(|s| node_potential(&msgs, s)).collect();
    let beliefs: Vec<Vec<f64>> = pots
        .iter()
        .map(|p| {
            let mut b = p.clone();
            normalize_log(&mut b);
            b.into_iter().map(f64::exp).collect()
        })
        .collect();
    let xlogx = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    let mut value = 0.0;
    for s in 0..n {
        for (b, t) in beliefs[s].iter().zip(&unary[s]) {
            value += b * t;
            value -= xlogx(*b);
        }
    }
    for (e, edge) in model.edges().iter().enumerate() {
        let (ci, cj) = (cards[edge.i], cards[edge.j]);
        let r = rho[e];
        let mut logb = vec![0.0; ci * cj];
        for a in 0..ci {
            for b in 0..cj {
                logb[a * cj + b] = pair[e][a * cj + b] / r
                    + pots[edge.i][a]
                    - msgs.to_i[e][a]
                    + pots[edge.j][b]
                    - msgs.to_j[e][b];
            }
        }
        normalize_log(&mut logb);
        let bij: Vec<f64> = logb.iter().map(|v| v.exp()).collect();
        let mut mi = vec![0.0; ci];
        let mut mj = vec![0.0; cj];
        for a in 0..ci {
            for b in 0..cj {
                mi[a] += bij[a * cj + b];
                mj[b] += bij[a * cj + b];
            }
        }
        let mut info = 0.0;
        for a in 0..ci {
            for b in 0..cj {
                let p = bij[a * cj + b];
                if p > 0.0 {
                    info += p * (p.ln() - mi[a].ln() - mj[b].ln());
                }
                value += p * pair[e][a * cj + b];
            }
        }
        value -= r * info;
    }
    BpResult {
        log_z: value,
        converged,
        iterations,
        used_forbidden_surrogate: surrogate,
        beliefs,
    }
}

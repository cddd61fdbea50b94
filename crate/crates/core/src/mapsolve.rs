//! MAP solvers: exhaustive search, graph cuts for binary supermodular
//! models, and MPLP block coordinate descent on the pairwise LP dual.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::model::{is_forbidden, PairwiseModel};
use crate::oracle::exact_map;
use crate::{Assignment, Error, Result};

/// Residual capacities at or below this are treated as saturated.
pub const FLOW_EPS: f64 = 1e-12;

/// Finite stand-in for forbidden entries inside message-passing solvers.
pub const FORBIDDEN_SURROGATE: f64 = -1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MplpConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for MplpConfig {
    fn default() -> Self {
        MplpConfig {
            max_iters: 1000,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MapMethod {
    Brute,
    GraphCut,
    Mplp(MplpConfig),
}

impl MapMethod {
    pub fn id(&self) -> &'static str {
        match self {
            MapMethod::Brute => "brute",
            MapMethod::GraphCut => "graphcut",
            MapMethod::Mplp(_) => "mplp",
        }
    }

    pub fn mplp() -> Self {
        MapMethod::Mplp(MplpConfig::default())
    }
}

impl fmt::Display for MapMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MapMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" => Ok(MapMethod::Brute),
            "graphcut" => Ok(MapMethod::GraphCut),
            "mplp" => Ok(MapMethod::mplp()),
            other => Err(Error::InvalidConfig(format!("unknown MAP method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub assignment: Assignment,
    /// Score of `assignment`, recomputed on the model.
    pub value: f64,
    /// Final LP dual value (MPLP only).
    pub dual_bound: Option<f64>,
    pub solver: &'static str,
    pub iterations: usize,
}

pub fn solve_map(model: &PairwiseModel, method: &MapMethod) -> Result<MapResult> {
    match method {
        MapMethod::Brute => brute_map(model),
        MapMethod::GraphCut => graphcut_map(model),
        MapMethod::Mplp(cfg) => mplp_map(model, cfg),
    }
}

pub fn brute_map(model: &PairwiseModel) -> Result<MapResult> {
    let (assignment, value) = exact_map(model)?;
    Ok(MapResult {
        assignment,
        value,
        dual_bound: None,
        solver: "brute",
        iterations: 1,
    })
}

// ---------------------------------------------------------------------------
// Max-flow

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowNetwork {
    num_nodes: usize,
    arcs: Vec<Arc>,
    source: usize,
    sink: usize,
}

impl FlowNetwork {
    pub fn new(num_nodes: usize, source: usize, sink: usize) -> Result<Self> {
        if source >= num_nodes || sink >= num_nodes || source == sink {
            return Err(Error::InvalidConfig(format!(
                "invalid terminals s = {source}, t = {sink} for {num_nodes} nodes"
            )));
        }
        Ok(FlowNetwork {
            num_nodes,
            arcs: Vec::new(),
            source,
            sink,
        })
    }

    pub fn add_arc(&mut self, from: usize, to: usize, capacity: f64) -> Result<()> {
        if from >= self.num_nodes || to >= self.num_nodes {
            return Err(Error::InvalidConfig(format!("arc ({from}, {to}) out of range")));
        }
        if !(capacity >= 0.0 && capacity.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "arc ({from}, {to}) has invalid capacity {capacity}"
            )));
        }
        self.arcs.push(Arc { from, to, capacity });
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    /// Total capacity of arcs leaving the source side.
    pub fn cut_capacity(&self, source_side: &[bool]) -> f64 {
        self.arcs
            .iter()
            .filter(|a| source_side[a.from] && !source_side[a.to])
            .map(|a| a.capacity)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxFlow {
    pub value: f64,
    /// Nodes reachable from the source in the final residual graph.
    pub source_side: Vec<bool>,
    /// Flow on each arc of the input network, in insertion order.
    pub arc_flows: Vec<f64>,
}

/// Residual graph: arc `2k` is input arc `k`, arc `2k + 1` its reverse.
struct Residual {
    head: Vec<usize>,
    cap: Vec<f64>,
    adj: Vec<Vec<usize>>,
}

impl Residual {
    fn new(net: &FlowNetwork) -> Self {
        let mut r = Residual {
            head: Vec::with_capacity(2 * net.arcs.len()),
            cap: Vec::with_capacity(2 * net.arcs.len()),
            adj: vec![Vec::new(); net.num_nodes],
        };
        for a in &net.arcs {
            r.adj[a.from].push(r.head.len());
            r.head.push(a.to);
            r.cap.push(a.capacity);
            r.adj[a.to].push(r.head.len());
            r.head.push(a.from);
            r.cap.push(0.0);
        }
        r
    }

    fn levels(&self, s: usize) -> Vec<i64> {
        let mut level = vec![-1; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &a in &self.adj[v] {
                let w = self.head[a];
                if self.cap[a] > FLOW_EPS && level[w] < 0 {
                    level[w] = level[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        level
    }
}

/// Exact maximum flow by Dinic's algorithm.
pub fn max_flow(network: &FlowNetwork) -> MaxFlow {
    let (s, t) = (network.source, network.sink);
    let mut res = Residual::new(network);
    let mut total = 0.0;
    loop {
        let mut level = res.levels(s);
        if level[t] < 0 {
            break;
        }
        let mut next = vec![0usize; network.num_nodes];
        let mut path: Vec<usize> = Vec::new();
        let mut v = s;
        loop {
            if v == t {
                let push = path
                    .iter()
                    .map(|&a| res.cap[a])
                    .fold(f64::INFINITY, f64::min);
                for &a in &path {
                    res.cap[a] -= push;
                    res.cap[a ^ 1] += push;
                }
                total += push;
                // retreat to the tail of the first saturated arc
                let cut = path
                    .iter()
                    .position(|&a| res.cap[a] <= FLOW_EPS)
                    .unwrap_or(0);
                path.truncate(cut);
                v = path.last().map_or(s, |&a| res.head[a]);
                continue;
            }
            let mut advanced = false;
            while next[v] < res.adj[v].len() {
                let a = res.adj[v][next[v]];
                let w = res.head[a];
                if res.cap[a] > FLOW_EPS && level[w] == level[v] + 1 {
                    path.push(a);
                    v = w;
                    advanced = true;
                    break;
                }
                next[v] += 1;
            }
            if !advanced {
                if v == s {
                    break;
                }
                level[v] = -1;
                let a = path.pop().expect("non-source node is on the path");
                v = res.head[a ^ 1];
                next[v] += 1;
            }
        }
    }
    let level = res.levels(s);
    let source_side = level.iter().map(|&l| l >= 0).collect();
    let arc_flows = (0..network.arcs.len()).map(|k| res.cap[2 * k + 1]).collect();
    MaxFlow {
        value: total,
        source_side,
        arc_flows,
    }
}

// ---------------------------------------------------------------------------
// Graph cuts

/// Exact MAP for binary models with supermodular edges.
///
/// Scores are negated into energies, each edge is split into unary terms
/// plus one nonnegative arc, and labels are read off the minimum cut:
/// source side is label 0, sink side is label 1.
pub fn graphcut_map(model: &PairwiseModel) -> Result<MapResult> {
    if !model.is_binary() {
        return Err(Error::SolverPrecondition(
            "graph cuts require binary variables".into(),
        ));
    }
    if model.has_forbidden() {
        return Err(Error::SolverPrecondition(
            "graph cuts require finite potentials".into(),
        ));
    }
    if !model.is_supermodular() {
        return Err(Error::SolverPrecondition(
            "graph cuts require supermodular edges".into(),
        ));
    }
    let n = model.num_vars();
    let (s, t) = (n, n + 1);
    let mut net = FlowNetwork::new(n + 2, s, t)?;
    let e0: Vec<f64> = (0..n).map(|i| -model.unary(i)[0]).collect();
    let mut e1: Vec<f64> = (0..n).map(|i| -model.unary(i)[1]).collect();
    let mut constant = 0.0;
    for edge in model.edges() {
        let [a, b, c, d] = [
            -edge.table[0],
            -edge.table[1],
            -edge.table[2],
            -edge.table[3],
        ];
        // E(xi, xj) = A + (C - A) xi + (D - C) xj + (B + C - A - D)(1 - xi) xj
        constant += a;
        e1[edge.i] += c - a;
        e1[edge.j] += d - c;
        let w = b + c - a - d;
        let w = if w < 0.0 && w > -FLOW_EPS { 0.0 } else { w };
        if w > 0.0 {
            net.add_arc(edge.i, edge.j, w)?;
        }
    }
    for i in 0..n {
        if e1[i] > e0[i] {
            net.add_arc(s, i, e1[i] - e0[i])?;
            constant += e0[i];
        } else {
            net.add_arc(i, t, e0[i] - e1[i])?;
            constant += e1[i];
        }
    }
    let flow = max_flow(&net);
    let labels: Vec<usize> = (0..n).map(|i| usize::from(!flow.source_side[i])).collect();
    let value = model.score_raw(&labels);
    debug_assert!((value + constant + flow.value).abs() <= 1e-6 * (1.0 + value.abs()));
    Ok(MapResult {
        assignment: Assignment(labels),
        value,
        dual_bound: None,
        solver: "graphcut",
        iterations: 1,
    })
}

// ---------------------------------------------------------------------------
// MPLP

fn surrogate(v: f64) -> f64 {
    if is_forbidden(v) {
        FORBIDDEN_SURROGATE
    } else {
        v
    }
}

struct MplpState {
    /// Reparameterized unaries: theta_i plus all incoming edge messages.
    beliefs: Vec<Vec<f64>>,
    /// Per edge: messages into its i and j endpoints.
    to_i: Vec<Vec<f64>>,
    to_j: Vec<Vec<f64>>,
    tables: Vec<Vec<f64>>,
}

impl MplpState {
    fn new(model: &PairwiseModel) -> Self {
        let cards = model.cards();
        MplpState {
            beliefs: model
                .unary_tables()
                .iter()
                .map(|t| t.iter().map(|&v| surrogate(v)).collect())
                .collect(),
            to_i: model.edges().iter().map(|e| vec![0.0; cards[e.i]]).collect(),
            to_j: model.edges().iter().map(|e| vec![0.0; cards[e.j]]).collect(),
            tables: model
                .edges()
                .iter()
                .map(|e| e.table.iter().map(|&v| surrogate(v)).collect())
                .collect(),
        }
    }

    fn sweep(&mut self, model: &PairwiseModel) {
        let cards = model.cards();
        for (k, edge) in model.edges().iter().enumerate() {
            let (ci, cj) = (cards[edge.i], cards[edge.j]);
            let table = &self.tables[k];
            let mi: Vec<f64> = (0..ci)
                .map(|x| self.beliefs[edge.i][x] - self.to_i[k][x])
                .collect();
            let mj: Vec<f64> = (0..cj)
                .map(|x| self.beliefs[edge.j][x] - self.to_j[k][x])
                .collect();
            for xi in 0..ci {
                let best = (0..cj)
                    .map(|xj| table[xi * cj + xj] + mj[xj])
                    .fold(f64::NEG_INFINITY, f64::max);
                self.to_i[k][xi] = -0.5 * mi[xi] + 0.5 * best;
                self.beliefs[edge.i][xi] = mi[xi] + self.to_i[k][xi];
            }
            for xj in 0..cj {
                let best = (0..ci)
                    .map(|xi| table[xi * cj + xj] + mi[xi])
                    .fold(f64::NEG_INFINITY, f64::max);
                self.to_j[k][xj] = -0.5 * mj[xj] + 0.5 * best;
                self.beliefs[edge.j][xj] = mj[xj] + self.to_j[k][xj];
            }
        }
    }

    fn dual(&self, model: &PairwiseModel) -> f64 {
        let cj_of = |k: usize| model.cards()[model.edges()[k].j];
        let nodes: f64 = self
            .beliefs
            .iter()
            .map(|b| b.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .sum();
        let edges: f64 = (0..model.edges().len())
            .map(|k| {
                let cj = cj_of(k);
                self.tables[k]
                    .iter()
                    .enumerate()
                    .map(|(idx, &v)| v - self.to_i[k][idx / cj] - self.to_j[k][idx % cj])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        nodes + edges
    }

    /// Per-node argmax of the reparameterized unaries, lowest label on ties.
    fn decode(&self) -> Vec<usize> {
        self.beliefs
            .iter()
            .map(|b| {
                let mut arg = 0;
                for (x, &v) in b.iter().enumerate() {
                    if v > b[arg] {
                        arg = x;
                    }
                }
                arg
            })
            .collect()
    }
}

pub fn mplp_map(model: &PairwiseModel, config: &MplpConfig) -> Result<MapResult> {
    mplp_map_traced(model, config).map(|(r, _)| r)
}

/// MPLP with the dual value recorded after every sweep.
///
/// The first trace entry is the dual at zero messages.
pub fn mplp_map_traced(model: &PairwiseModel, config: &MplpConfig) -> Result<(MapResult, Vec<f64>)> {
    if config.max_iters == 0 {
        return Err(Error::InvalidConfig("MPLP max_iters must be >= 1".into()));
    }
    let mut state = MplpState::new(model);
    let mut trace = vec![state.dual(model)];
    let mut best_labels = state.decode();
    let mut best_value = model.score_raw(&best_labels);
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        state.sweep(model);
        iterations += 1;
        let dual = state.dual(model);
        let labels = state.decode();
        let value = model.score_raw(&labels);
        if value > best_value {
            best_value = value;
            best_labels = labels;
        }
        let prev = *trace.last().expect("trace is non-empty");
        trace.push(dual);
        if prev - dual < config.tol {
            break;
        }
    }
    let dual = *trace.last().expect("trace is non-empty");
    Ok((
        MapResult {
            assignment: Assignment(best_labels),
            value: best_value,
            dual_bound: Some(dual),
            solver: "mplp",
            iterations,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_spin_glass, CouplingMode, IsingParams, SpinGlassConfig};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn glass(rows: usize, cols: usize, f: f64, c: f64, mode: CouplingMode, seed: u64) -> PairwiseModel {
        gen_spin_glass(&SpinGlassConfig {
            rows,
            cols,
            field_strength: f,
            coupling_strength: c,
            mode,
            seed,
        })
        .unwrap()
    }

    /// Shortest-augmenting-path (Edmonds–Karp) reference on a dense matrix.
    fn reference_max_flow(net: &FlowNetwork) -> f64 {
        let n = net.num_nodes();
        let mut cap = vec![vec![0.0; n]; n];
        for a in net.arcs() {
            cap[a.from][a.to] += a.capacity;
        }
        let mut total = 0.0;
        loop {
            let mut prev = vec![usize::MAX; n];
            prev[net.source()] = net.source();
            let mut q = VecDeque::from([net.source()]);
            while let Some(v) = q.pop_front() {
                for w in 0..n {
                    if prev[w] == usize::MAX && cap[v][w] > 1e-12 {
                        prev[w] = v;
                        q.push_back(w);
                    }
                }
            }
            if prev[net.sink()] == usize::MAX {
                return total;
            }
            let mut push = f64::INFINITY;
            let mut w = net.sink();
            while w != net.source() {
                push = push.min(cap[prev[w]][w]);
                w = prev[w];
            }
            let mut w = net.sink();
            while w != net.source() {
                cap[prev[w]][w] -= push;
                cap[w][prev[w]] += push;
                w = prev[w];
            }
            total += push;
        }
    }

    fn random_network(nodes: usize, arcs: usize, seed: u64) -> FlowNetwork {
        let mut rng = rng_from_seed(seed);
        let mut net = FlowNetwork::new(nodes, 0, nodes - 1).unwrap();
        for _ in 0..arcs {
            let a = rng.gen_range(0..nodes);
            let b = rng.gen_range(0..nodes);
            if a != b {
                net.add_arc(a, b, rng.gen::<f64>() * 5.0).unwrap();
            }
        }
        net
    }

    #[test]
    fn diamond_and_single_arc() {
        let mut net = FlowNetwork::new(4, 0, 3).unwrap();
        for (a, b) in [(0, 1), (0, 2), (1, 3), (2, 3)] {
            net.add_arc(a, b, 1.0).unwrap();
        }
        assert_eq!(max_flow(&net).value, 2.0);

        let mut net = FlowNetwork::new(2, 0, 1).unwrap();
        net.add_arc(0, 1, 3.5).unwrap();
        let f = max_flow(&net);
        assert_eq!(f.value, 3.5);
        assert_eq!(f.source_side, vec![true, false]);
    }

    #[test]
    fn network_validation() {
        assert!(FlowNetwork::new(3, 1, 1).is_err());
        let mut net = FlowNetwork::new(3, 0, 2).unwrap();
        assert!(net.add_arc(0, 1, -1.0).is_err());
        assert!(net.add_arc(0, 5, 1.0).is_err());
        assert!(net.add_arc(0, 1, f64::INFINITY).is_err());
    }

    #[test]
    fn flow_equals_cut_on_random_networks() {
        for seed in 0..20 {
            let net = random_network(50, 300, seed);
            let f = max_flow(&net);
            assert!((f.value - net.cut_capacity(&f.source_side)).abs() < 1e-9);
            assert!(f.source_side[0] && !f.source_side[49]);
        }
    }

    #[test]
    fn flow_matches_reference_on_small_networks() {
        for seed in 0..50 {
            let net = random_network(12, 40, 1000 + seed);
            let f = max_flow(&net);
            assert!((f.value - reference_max_flow(&net)).abs() < 1e-9, "seed {seed}");
            // feasibility of the returned arc flows
            let mut balance = [0.0; 12];
            for (a, &x) in net.arcs().iter().zip(&f.arc_flows) {
                assert!(x >= -1e-12 && x <= a.capacity + 1e-12);
                balance[a.from] -= x;
                balance[a.to] += x;
            }
            for (v, b) in balance.iter().enumerate().skip(1).take(10) {
                assert!(b.abs() < 1e-9, "node {v} imbalance {b}");
            }
        }
    }

    #[test]
    fn graphcut_factorized_model() {
        let m = PairwiseModel::new(
            vec![2, 2, 2],
            vec![vec![0.3, -0.1], vec![-0.5, 0.2], vec![1.0, 1.5]],
            vec![(0, 1, vec![0.0; 4]), (1, 2, vec![0.0; 4])],
        )
        .unwrap();
        let r = graphcut_map(&m).unwrap();
        assert_eq!(r.assignment.0, vec![0, 1, 1]);
    }

    #[test]
    fn graphcut_matches_oracle_on_attractive_grids() {
        for seed in 0..100 {
            let m = glass(4, 4, 1.0, 1.0, CouplingMode::Attractive, seed);
            let r = graphcut_map(&m).unwrap();
            let (_, v) = exact_map(&m).unwrap();
            assert!((r.value - v).abs() < 1e-9, "seed {seed}: {} vs {v}", r.value);
            assert_eq!(r.value, m.score_raw(&r.assignment.0));
        }
    }

    #[test]
    fn graphcut_zero_field_prefers_constant_labeling() {
        let m = glass(3, 4, 0.0, 1.0, CouplingMode::Attractive, 4);
        let r = graphcut_map(&m).unwrap();
        let total: f64 = m.edges().iter().map(|e| e.table[0]).sum();
        assert!((r.value - total).abs() < 1e-12);
    }

    #[test]
    fn graphcut_rejects_mixed_couplings() {
        let m = IsingParams {
            fields: vec![0.0, 0.0],
            couplings: vec![(0, 1, -0.5)],
        }
        .to_model()
        .unwrap();
        assert!(matches!(
            solve_map(&m, &MapMethod::GraphCut),
            Err(Error::SolverPrecondition(_))
        ));
        let m = PairwiseModel::new(vec![3], vec![vec![0.0; 3]], vec![]).unwrap();
        assert!(graphcut_map(&m).is_err());
    }

    #[test]
    fn graphcut_is_invariant_to_constant_shifts() {
        let m = glass(3, 3, 1.0, 2.0, CouplingMode::Attractive, 12);
        let base = graphcut_map(&m).unwrap();
        let shifted = m
            .with_pair_terms(&[(3, 4, vec![0.75; 4])])
            .unwrap();
        let r = graphcut_map(&shifted).unwrap();
        assert_eq!(r.assignment, base.assignment);
        assert!((r.value - base.value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn brute_matches_oracle() {
        let m = glass(3, 3, 1.0, 1.0, CouplingMode::Mixed, 2);
        let r = solve_map(&m, &MapMethod::Brute).unwrap();
        assert_eq!(r.value, exact_map(&m).unwrap().1);
    }

    #[test]
    fn mplp_exact_on_chain() {
        let params = IsingParams {
            fields: vec![0.4, -0.9, 0.2, 0.7, -0.3],
            couplings: vec![(0, 1, 1.1), (1, 2, -0.6), (2, 3, 0.8), (3, 4, -1.3)],
        };
        let m = params.to_model().unwrap();
        let r = mplp_map(&m, &MplpConfig::default()).unwrap();
        let (_, v) = exact_map(&m).unwrap();
        assert!((r.value - v).abs() < 1e-6);
        assert!((r.dual_bound.unwrap() - v).abs() < 1e-6);
    }

    #[test]
    fn mplp_zero_coupling_single_sweep() {
        let m = PairwiseModel::new(
            vec![2, 3],
            vec![vec![0.3, -0.1], vec![-0.5, 0.2, 0.1]],
            vec![(0, 1, vec![0.0; 6])],
        )
        .unwrap();
        let r = mplp_map(&m, &MplpConfig::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.assignment.0, vec![0, 1]);
    }

    #[test]
    fn mplp_sandwiches_oracle_on_mixed_grid() {
        for seed in 0..10 {
            let m = glass(4, 4, 1.0, 1.0, CouplingMode::Mixed, seed);
            let (r, trace) = mplp_map_traced(&m, &MplpConfig::default()).unwrap();
            let (_, v) = exact_map(&m).unwrap();
            assert!(r.value <= v + 1e-12);
            assert!(v <= r.dual_bound.unwrap() + 1e-9);
            assert_eq!(r.value, m.score_raw(&r.assignment.0));
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
        }
    }

    #[test]
    fn method_parsing() {
        assert_eq!("graphcut".parse::<MapMethod>().unwrap(), MapMethod::GraphCut);
        assert_eq!("mplp".parse::<MapMethod>().unwrap().id(), "mplp");
        assert!("icm".parse::<MapMethod>().is_err());
    }
}

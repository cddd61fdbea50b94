//! Discrete pairwise models.
//!
//! A [`PairwiseModel`] holds one unary table per variable and one table per
//! edge. Forbidden entries (assignments outside the model's domain) are stored
//! as IEEE negative infinity, which absorbs under addition with finite values;
//! no other non-finite value is accepted. [`Score`] surfaces the distinction
//! at the API boundary.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Table entry marking an excluded assignment.
pub const FORBIDDEN: f64 = f64::NEG_INFINITY;

/// Models with at most this many joint states have their domain verified
/// non-empty at construction time.
pub const DOMAIN_CHECK_LIMIT: u128 = 1 << 24;

pub fn is_forbidden(v: f64) -> bool {
    v == FORBIDDEN
}

/// Total score of an assignment: a finite real or the forbidden marker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Score {
    Feasible(f64),
    Forbidden,
}

impl Score {
    pub fn from_raw(v: f64) -> Self {
        if is_forbidden(v) {
            Score::Forbidden
        } else {
            Score::Feasible(v)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Score::Feasible(v) => Some(v),
            Score::Forbidden => None,
        }
    }

    /// The score as an extended real (`-inf` when forbidden).
    pub fn to_f64(self) -> f64 {
        match self {
            Score::Feasible(v) => v,
            Score::Forbidden => FORBIDDEN,
        }
    }

    pub fn is_forbidden(self) -> bool {
        matches!(self, Score::Forbidden)
    }
}

/// One label per variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<usize>> for Assignment {
    fn from(v: Vec<usize>) -> Self {
        Assignment(v)
    }
}

/// Pairwise table between variables `i < j`, row-major over `(y_i, y_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub table: Vec<f64>,
}

/// Outcome of the non-empty-domain check performed on construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainCheck {
    /// At least one feasible assignment was found (or nothing is forbidden).
    Verified,
    /// The model has forbidden entries and too many states to enumerate.
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseModel {
    cards: Vec<usize>,
    unary: Vec<Vec<f64>>,
    edges: Vec<Edge>,
    /// Per variable: (edge index, neighbor).
    adjacency: Vec<Vec<(usize, usize)>>,
    domain: DomainCheck,
}

fn check_entry(v: f64, location: impl FnOnce() -> String) -> Result<()> {
    if v.is_nan() || v == f64::INFINITY {
        return Err(Error::InvalidValue {
            value: v,
            location: location(),
        });
    }
    Ok(())
}

impl PairwiseModel {
    /// Validate and build a model.
    ///
    /// Edges may be given in either orientation; `(j, i)` tables are
    /// transposed so that every stored edge has `i < j`.
    pub fn new(
        cards: Vec<usize>,
        unary: Vec<Vec<f64>>,
        edges: Vec<(usize, usize, Vec<f64>)>,
    ) -> Result<Self> {
        let n = cards.len();
        if unary.len() != n {
            return Err(Error::Shape(format!(
                "{} unary tables for {} variables",
                unary.len(),
                n
            )));
        }
        for (i, (&c, table)) in cards.iter().zip(&unary).enumerate() {
            if c == 0 {
                return Err(Error::Shape(format!("variable {i} has cardinality 0")));
            }
            if table.len() != c {
                return Err(Error::Shape(format!(
                    "unary table {i} has {} entries, cardinality is {c}",
                    table.len()
                )));
            }
            for (k, &v) in table.iter().enumerate() {
                check_entry(v, || format!("unary {i}[{k}]"))?;
            }
        }

        let mut stored: Vec<Edge> = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashSet::new();
        for (a, b, table) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidEdge(a, b, format!("model has {n} variables")));
            }
            if a == b {
                return Err(Error::InvalidEdge(a, b, "self loop".into()));
            }
            let (ca, cb) = (cards[a], cards[b]);
            if table.len() != ca * cb {
                return Err(Error::Shape(format!(
                    "edge ({a}, {b}) table has {} entries, expected {}x{}",
                    table.len(),
                    ca,
                    cb
                )));
            }
            for (k, &v) in table.iter().enumerate() {
                check_entry(v, || format!("edge ({a}, {b})[{k}]"))?;
            }
            let (i, j, table) = if a < b {
                (a, b, table)
            } else {
                let mut t = vec![0.0; table.len()];
                for ya in 0..ca {
                    for yb in 0..cb {
                        t[yb * ca + ya] = table[ya * cb + yb];
                    }
                }
                (b, a, t)
            };
            if !seen.insert((i, j)) {
                return Err(Error::DuplicateEdge(i, j));
            }
            stored.push(Edge { i, j, table });
        }

        let mut model = PairwiseModel {
            adjacency: build_adjacency(n, &stored),
            cards,
            unary,
            edges: stored,
            domain: DomainCheck::Verified,
        };
        model.domain = model.check_domain()?;
        Ok(model)
    }

    fn check_domain(&self) -> Result<DomainCheck> {
        let any_forbidden = self.unary.iter().flatten().any(|&v| is_forbidden(v))
            || self.edges.iter().flat_map(|e| &e.table).any(|&v| is_forbidden(v));
        if !any_forbidden {
            return Ok(DomainCheck::Verified);
        }
        match self.num_states() {
            Some(s) if s <= DOMAIN_CHECK_LIMIT => {
                let mut odo = Odometer::new(&self.cards);
                loop {
                    if !is_forbidden(self.score_raw(odo.labels())) {
                        return Ok(DomainCheck::Verified);
                    }
                    if !odo.advance() {
                        return Err(Error::EmptyDomain);
                    }
                }
            }
            _ => Ok(DomainCheck::Skipped),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn unary(&self, i: usize) -> &[f64] {
        &self.unary[i]
    }

    pub fn unary_tables(&self) -> &[Vec<f64>] {
        &self.unary
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `(edge index, neighbor)` pairs incident to variable `i`.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn domain_check(&self) -> DomainCheck {
        self.domain
    }

    /// Pairwise value of edge `e` at labels for its `(i, j)` endpoints.
    #[inline]
    pub fn edge_value(&self, e: usize, yi: usize, yj: usize) -> f64 {
        let edge = &self.edges[e];
        edge.table[yi * self.cards[edge.j] + yj]
    }

    /// Number of joint states, `None` on overflow.
    pub fn num_states(&self) -> Option<u128> {
        self.cards
            .iter()
            .try_fold(1u128, |acc, &c| acc.checked_mul(c as u128))
    }

    pub fn is_binary(&self) -> bool {
        self.cards.iter().all(|&c| c == 2)
    }

    pub fn has_forbidden(&self) -> bool {
        self.unary.iter().flatten().any(|&v| is_forbidden(v))
            || self.edges.iter().flat_map(|e| &e.table).any(|&v| is_forbidden(v))
    }

    /// True when every edge is binary and satisfies
    /// `t(0,0) + t(1,1) >= t(0,1) + t(1,0)`.
    pub fn is_supermodular(&self) -> bool {
        self.is_binary()
            && self
                .edges
                .iter()
                .all(|e| e.table[0] + e.table[3] >= e.table[1] + e.table[2])
    }

    /// Sum of all touched table entries; `-inf` when any is forbidden.
    /// Labels are not range-checked.
    #[inline]
    pub fn score_raw(&self, labels: &[usize]) -> f64 {
        let mut s = 0.0;
        for (table, &y) in self.unary.iter().zip(labels) {
            s += table[y];
        }
        for (e, edge) in self.edges.iter().enumerate() {
            s += self.edge_value(e, labels[edge.i], labels[edge.j]);
        }
        s
    }

    pub fn validate_assignment(&self, assignment: &Assignment) -> Result<()> {
        if assignment.len() != self.num_vars() {
            return Err(Error::InvalidAssignment(format!(
                "length {} for {} variables",
                assignment.len(),
                self.num_vars()
            )));
        }
        for (i, (&y, &c)) in assignment.0.iter().zip(&self.cards).enumerate() {
            if y >= c {
                return Err(Error::InvalidAssignment(format!(
                    "label {y} out of range for variable {i} (cardinality {c})"
                )));
            }
        }
        Ok(())
    }

    pub fn score(&self, assignment: &Assignment) -> Result<Score> {
        self.validate_assignment(assignment)?;
        Ok(Score::from_raw(self.score_raw(&assignment.0)))
    }

    /// Copy of the model with `offsets[i][k]` added to unary entry `(i, k)`.
    pub fn with_unary_offsets(&self, offsets: &[Vec<f64>]) -> Result<Self> {
        if offsets.len() != self.num_vars()
            || offsets.iter().zip(&self.cards).any(|(o, &c)| o.len() != c)
        {
            return Err(Error::Shape("unary offsets do not match cardinalities".into()));
        }
        let mut out = self.clone();
        for (i, (table, off)) in out.unary.iter_mut().zip(offsets).enumerate() {
            for (k, (t, &o)) in table.iter_mut().zip(off).enumerate() {
                if !o.is_finite() {
                    return Err(Error::InvalidValue {
                        value: o,
                        location: format!("unary offset {i}[{k}]"),
                    });
                }
                *t += o;
            }
        }
        Ok(out)
    }

    /// Copy of the model with extra pairwise terms added; terms on pairs that
    /// are not yet edges create new edges.
    pub fn with_pair_terms(&self, terms: &[(usize, usize, Vec<f64>)]) -> Result<Self> {
        let unary = self.unary.clone();
        let mut edges: Vec<(usize, usize, Vec<f64>)> = self
            .edges
            .iter()
            .map(|e| (e.i, e.j, e.table.clone()))
            .collect();
        let mut index: std::collections::HashMap<(usize, usize), usize> = self
            .edges
            .iter()
            .enumerate()
            .map(|(k, e)| ((e.i, e.j), k))
            .collect();
        for (a, b, table) in terms {
            let (a, b) = (*a, *b);
            if a >= self.num_vars() || b >= self.num_vars() || a == b {
                return Err(Error::InvalidEdge(a, b, "invalid pair term".into()));
            }
            let (ca, cb) = (self.cards[a], self.cards[b]);
            if table.len() != ca * cb || table.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("pair term ({a}, {b}) is malformed")));
            }
            let (i, j) = (a.min(b), a.max(b));
            let oriented: Vec<f64> = if a < b {
                table.clone()
            } else {
                let mut t = vec![0.0; table.len()];
                for ya in 0..ca {
                    for yb in 0..cb {
                        t[yb * ca + ya] = table[ya * cb + yb];
                    }
                }
                t
            };
            match index.get(&(i, j)) {
                Some(&k) => {
                    for (t, o) in edges[k].2.iter_mut().zip(&oriented) {
                        *t += o;
                    }
                }
                None => {
                    index.insert((i, j), edges.len());
                    edges.push((i, j, oriented));
                }
            }
        }
        // Finite additions keep the domain unchanged, so skip re-checking it.
        let stored: Vec<Edge> = edges
            .into_iter()
            .map(|(i, j, table)| Edge { i, j, table })
            .collect();
        Ok(PairwiseModel {
            adjacency: build_adjacency(self.num_vars(), &stored),
            cards: self.cards.clone(),
            unary,
            edges: stored,
            domain: self.domain,
        })
    }

    /// Serialize to the line-oriented `pmodel v1` text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "pmodel v1 {}", self.num_vars());
        out.push_str("cards");
        for c in &self.cards {
            let _ = write!(out, " {c}");
        }
        out.push('\n');
        for (i, table) in self.unary.iter().enumerate() {
            let _ = write!(out, "unary {i}");
            for &v in table {
                let _ = write!(out, " {}", format_value(v));
            }
            out.push('\n');
        }
        for e in &self.edges {
            let _ = write!(out, "edge {} {}", e.i, e.j);
            for &v in &e.table {
                let _ = write!(out, " {}", format_value(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        parse_model(text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn build_adjacency(n: usize, edges: &[Edge]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); n];
    for (k, e) in edges.iter().enumerate() {
        adj[e.i].push((k, e.j));
        adj[e.j].push((k, e.i));
    }
    adj
}

/// Shortest round-trip decimal, or `-inf` for forbidden entries.
pub fn format_value(v: f64) -> String {
    if is_forbidden(v) {
        "-inf".to_string()
    } else {
        format!("{v:?}")
    }
}

fn parse_value(tok: &str, line: usize, field: &str) -> Result<f64> {
    if tok == "-inf" {
        return Ok(FORBIDDEN);
    }
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{field}: cannot parse '{tok}' as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("{field}: non-finite value '{tok}' (only -inf is allowed)"),
        });
    }
    Ok(v)
}

fn parse_index(tok: Option<&str>, line: usize, field: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {field}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{field}: cannot parse '{tok}' as a non-negative integer"),
    })
}

/// Parse a `pmodel v1` body from an iterator of `(line number, text)`.
pub(crate) fn parse_model_lines<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
) -> Result<PairwiseModel> {
    let mut lines = lines.filter(|(_, l)| !l.trim().is_empty());
    let (ln, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty model file".into(),
    })?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("pmodel") {
        return Err(Error::Parse {
            line: ln,
            msg: "expected header 'pmodel v1 <n>'".into(),
        });
    }
    match toks.next() {
        Some("v1") => {}
        Some(v) => return Err(Error::Version(v.to_string())),
        None => {
            return Err(Error::Parse {
                line: ln,
                msg: "missing version".into(),
            })
        }
    }
    let n = parse_index(toks.next(), ln, "variable count")?;

    let (ln, cards_line) = lines.next().ok_or(Error::Parse {
        line: ln + 1,
        msg: "missing 'cards' line".into(),
    })?;
    let mut toks = cards_line.split_whitespace();
    if toks.next() != Some("cards") {
        return Err(Error::Parse {
            line: ln,
            msg: "expected 'cards' line".into(),
        });
    }
    let cards = toks
        .enumerate()
        .map(|(k, t)| parse_index(Some(t), ln, &format!("card {k}")))
        .collect::<Result<Vec<_>>>()?;
    if cards.len() != n {
        return Err(Error::Parse {
            line: ln,
            msg: format!("{} cards for {n} variables", cards.len()),
        });
    }
    if let Some(k) = cards.iter().position(|&c| c == 0) {
        return Err(Error::Parse {
            line: ln,
            msg: format!("card {k} is zero"),
        });
    }

    let mut unary: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut edges = Vec::new();
    for (ln, line) in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("unary") => {
                let i = parse_index(toks.next(), ln, "unary variable")?;
                if i >= n {
                    return Err(Error::Parse {
                        line: ln,
                        msg: format!("unary variable {i} out of range"),
                    });
                }
                if unary[i].is_some() {
                    return Err(Error::Parse {
                        line: ln,
                        msg: format!("duplicate unary table for variable {i}"),
                    });
                }
                let vals = toks
                    .enumerate()
                    .map(|(k, t)| parse_value(t, ln, &format!("unary {i} entry {k}")))
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != cards[i] {
                    return Err(Error::Parse {
                        line: ln,
                        msg: format!("unary {i}: {} entries, expected {}", vals.len(), cards[i]),
                    });
                }
                unary[i] = Some(vals);
            }
            Some("edge") => {
                let i = parse_index(toks.next(), ln, "edge endpoint i")?;
                let j = parse_index(toks.next(), ln, "edge endpoint j")?;
                if i >= n || j >= n {
                    return Err(Error::Parse {
                        line: ln,
                        msg: format!("edge ({i}, {j}) references a missing variable"),
                    });
                }
                let vals = toks
                    .enumerate()
                    .map(|(k, t)| parse_value(t, ln, &format!("edge ({i}, {j}) entry {k}")))
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != cards[i] * cards[j] {
                    return Err(Error::Parse {
                        line: ln,
                        msg: format!(
                            "edge ({i}, {j}): {} entries, expected {}",
                            vals.len(),
                            cards[i] * cards[j]
                        ),
                    });
                }
                edges.push((i, j, vals));
            }
            Some(other) => {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("unknown record '{other}'"),
                })
            }
            None => unreachable!("blank lines are filtered"),
        }
    }
    let unary = unary
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            t.ok_or(Error::Parse {
                line: 0,
                msg: format!("missing unary table for variable {i}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PairwiseModel::new(cards, unary, edges)
}

fn parse_model(text: &str) -> Result<PairwiseModel> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
    parse_model_lines(&mut lines)
}

/// Mixed-radix counter over joint states, last variable fastest.
///
/// This is lexicographic order over label vectors, which fixes the state
/// indexing used by the oracle and by full-dimensional perturbations.
#[derive(Clone, Debug)]
pub struct Odometer<'a> {
    cards: &'a [usize],
    labels: Vec<usize>,
}

impl<'a> Odometer<'a> {
    pub fn new(cards: &'a [usize]) -> Self {
        Odometer {
            cards,
            labels: vec![0; cards.len()],
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Step to the next state; returns false after the last one.
    pub fn advance(&mut self) -> bool {
        for k in (0..self.cards.len()).rev() {
            self.labels[k] += 1;
            if self.labels[k] < self.cards[k] {
                return true;
            }
            self.labels[k] = 0;
        }
        false
    }
}

/// Row-major state index of a label vector (variable 0 slowest).
pub fn state_index(cards: &[usize], labels: &[usize]) -> usize {
    labels
        .iter()
        .zip(cards)
        .fold(0usize, |acc, (&y, &c)| acc * c + y)
}

/// Inverse of [`state_index`].
pub fn state_labels(cards: &[usize], mut index: usize) -> Vec<usize> {
    let mut labels = vec![0; cards.len()];
    for k in (0..cards.len()).rev() {
        labels[k] = index % cards[k];
        index /= cards[k];
    }
    labels
}

// ---------------------------------------------------------------------------
// Spin glasses

/// Spin value of a binary label: 0 is -1, 1 is +1.
pub fn spin(label: usize) -> f64 {
    if label == 0 {
        -1.0
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingMode {
    /// Couplings drawn from `[0, c]`.
    Attractive,
    /// Couplings drawn from `[-c, c]`.
    Mixed,
}

impl std::str::FromStr for CouplingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attractive" => Ok(CouplingMode::Attractive),
            "mixed" => Ok(CouplingMode::Mixed),
            other => Err(Error::InvalidConfig(format!("unknown coupling mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CouplingMode::Attractive => "attractive",
            CouplingMode::Mixed => "mixed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Self {
        GridShape { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    /// 4-neighbor edges: for each cell in row-major order, its right then
    /// its lower neighbor.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = self.index(r, c);
                if c + 1 < self.cols {
                    out.push((v, v + 1));
                }
                if r + 1 < self.rows {
                    out.push((v, v + self.cols));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpinGlassConfig {
    pub rows: usize,
    pub cols: usize,
    pub field_strength: f64,
    pub coupling_strength: f64,
    pub mode: CouplingMode,
    pub seed: u64,
}

impl SpinGlassConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidConfig("grid dimensions must be >= 1".into()));
        }
        if !(self.field_strength >= 0.0 && self.field_strength.is_finite()) {
            return Err(Error::InvalidConfig("field strength must be finite and >= 0".into()));
        }
        if !(self.coupling_strength >= 0.0 && self.coupling_strength.is_finite()) {
            return Err(Error::InvalidConfig(
                "coupling strength must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> GridShape {
        GridShape::new(self.rows, self.cols)
    }
}

/// Ising parameters of a spin glass, before conversion to tables.
#[derive(Clone, Debug, PartialEq)]
pub struct IsingParams {
    pub fields: Vec<f64>,
    pub couplings: Vec<(usize, usize, f64)>,
}

impl IsingParams {
    /// Tables `theta_i * s_i` and `theta_ij * s_i * s_j` over labels {0, 1}.
    pub fn to_model(&self) -> Result<PairwiseModel> {
        let n = self.fields.len();
        let unary = self
            .fields
            .iter()
            .map(|&h| vec![h * spin(0), h * spin(1)])
            .collect();
        let edges = self
            .couplings
            .iter()
            .map(|&(i, j, w)| {
                let t = (0..4).map(|k| w * spin(k / 2) * spin(k % 2)).collect();
                (i, j, t)
            })
            .collect();
        PairwiseModel::new(vec![2; n], unary, edges)
    }
}

/// Draw grid spin-glass parameters: fields first in variable order, then
/// couplings in [`GridShape::edges`] order, all from one seeded stream.
pub fn spin_glass_params(config: &SpinGlassConfig) -> Result<IsingParams> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let grid = config.grid();
    let f = config.field_strength;
    let c = config.coupling_strength;
    let fields = (0..grid.len())
        .map(|_| -f + 2.0 * f * rng.gen::<f64>())
        .collect();
    let couplings = grid
        .edges()
        .into_iter()
        .map(|(i, j)| {
            let u = rng.gen::<f64>();
            let w = match config.mode {
                CouplingMode::Attractive => c * u,
                CouplingMode::Mixed => -c + 2.0 * c * u,
            };
            (i, j, w)
        })
        .collect();
    Ok(IsingParams { fields, couplings })
}

pub fn gen_spin_glass(config: &SpinGlassConfig) -> Result<PairwiseModel> {
    spin_glass_params(config)?.to_model()
}

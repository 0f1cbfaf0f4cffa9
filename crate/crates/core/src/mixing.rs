//! Compound parameters and mixing matrices.
//!
//! A moment `μ_o` at length `L` is a topology-weighted sum of compound
//! parameters `Ψ_p = E[φ_o | Tree]`, each determined by the backbone of the
//! topology: the minimal subtree joining the root to the observed positions.
//! For PCFG-IE backbones are counted with a span DP over symbolic terms; for
//! dependency families topologies are enumerated and their root paths grouped
//! symbolically.
//!
//! Term grammar: `nil | O:• | O:◦ | T:<t> | (T:<t>,T:<t>)`, finalized as
//! `<t> [n3=<int>]` where `n3` is the folded root chain.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::topology::bracketing_counts;
use crate::model::{
    enumerate_topologies, BlockKind, Bracketing, DependencyTree, FamilyKind, ModelParams, Topology,
    TopologyKind, MAX_DEPENDENCY_LEN,
};
use crate::observations::{enumerate_observations, ObservationFamily, ObservationId, ObservationSpec, Projection};

/// Longest sentence handled by the backbone DP (counts stay within `u64`).
pub const MAX_BACKBONE_LEN: usize = 30;

/// Symbolic backbone over the constructors of the term grammar.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BackboneTerm {
    Nil,
    /// `O:•`, a designated observed leaf.
    Observed,
    /// `O:◦`, the projected leaf.
    Projected,
    /// `T:t`
    Chain(Box<BackboneTerm>),
    /// `(T:t1,T:t2)`
    Fork(Box<BackboneTerm>, Box<BackboneTerm>),
}

impl BackboneTerm {
    pub fn is_nil(&self) -> bool {
        matches!(self, BackboneTerm::Nil)
    }

    /// `O:◦` under zero or more `T:` links.
    pub fn is_projected_chain(&self) -> bool {
        match self {
            BackboneTerm::Projected => true,
            BackboneTerm::Chain(t) => t.is_projected_chain(),
            _ => false,
        }
    }

    pub fn observed_leaves(&self) -> usize {
        match self {
            BackboneTerm::Observed => 1,
            BackboneTerm::Nil | BackboneTerm::Projected => 0,
            BackboneTerm::Chain(t) => t.observed_leaves(),
            BackboneTerm::Fork(a, b) => a.observed_leaves() + b.observed_leaves(),
        }
    }

    pub fn has_projected(&self) -> bool {
        match self {
            BackboneTerm::Projected => true,
            BackboneTerm::Nil | BackboneTerm::Observed => false,
            BackboneTerm::Chain(t) => t.has_projected(),
            BackboneTerm::Fork(a, b) => a.has_projected() || b.has_projected(),
        }
    }

    fn chain(t: BackboneTerm) -> Self {
        BackboneTerm::Chain(Box::new(t))
    }

    fn fork(a: BackboneTerm, b: BackboneTerm) -> Self {
        BackboneTerm::Fork(Box::new(a), Box::new(b))
    }
}

impl fmt::Display for BackboneTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackboneTerm::Nil => f.write_str("nil"),
            BackboneTerm::Observed => f.write_str("O:•"),
            BackboneTerm::Projected => f.write_str("O:◦"),
            BackboneTerm::Chain(t) => write!(f, "T:{t}"),
            BackboneTerm::Fork(a, b) => write!(f, "(T:{a},T:{b})"),
        }
    }
}

/// Joins the terms of two sibling spans. A projected chain always goes to
/// the left, since its side does not change the compound parameter.
pub fn combine(t1: &BackboneTerm, t2: &BackboneTerm) -> BackboneTerm {
    match (t1.is_nil(), t2.is_nil()) {
        (false, false) if t2.is_projected_chain() => BackboneTerm::fork(t2.clone(), t1.clone()),
        (false, false) => BackboneTerm::fork(t1.clone(), t2.clone()),
        (false, true) => BackboneTerm::chain(t1.clone()),
        (true, false) => BackboneTerm::chain(t2.clone()),
        (true, true) => BackboneTerm::Nil,
    }
}

/// Base term of word position `p` (0-based).
fn leaf_term(id: &ObservationId, p: usize) -> BackboneTerm {
    if id.observed.contains(&p) {
        BackboneTerm::Observed
    } else if id.projected == Some(p) {
        BackboneTerm::Projected
    } else {
        BackboneTerm::Nil
    }
}

/// Strips the root chain into its length.
fn finalize(mut t: BackboneTerm) -> CompoundTerm {
    let mut n3 = 0;
    while let BackboneTerm::Chain(inner) = t {
        t = *inner;
        n3 += 1;
    }
    CompoundTerm::Backbone { core: t, n3 }
}

/// Dependency arc direction; `Any` when left and right share one matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arc {
    Left,
    Right,
    Any,
}

impl Arc {
    fn symbol(self) -> &'static str {
        match self {
            Arc::Left => "Al",
            Arc::Right => "Ar",
            Arc::Any => "A",
        }
    }
}

/// Paths of a dependency backbone: root to the meeting node `c`, then `c` to
/// the first and (for pairs) second observed word. Arcs are listed top-down.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DependencyTerm {
    pub root: Vec<Arc>,
    pub first: Vec<Arc>,
    pub second: Option<Vec<Arc>>,
}

/// Product of the path matrices, written left to right.
fn path_string(path: &[Arc]) -> String {
    path.iter().rev().map(|a| a.symbol()).collect::<Vec<_>>().join(" ")
}

impl fmt::Display for DependencyTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lead = |p: &[Arc]| if p.is_empty() { String::new() } else { format!("{} ", path_string(p)) };
        let first = lead(&self.first);
        let root = lead(&self.root);
        match &self.second {
            None => write!(f, "{first}{root}pi"),
            Some(second) if second.is_empty() => write!(f, "{first}diag({root}pi)"),
            Some(second) => write!(f, "{first}diag({root}pi) ({})^T", path_string(second)),
        }
    }
}

/// A finalized compound-parameter name, one per mixing-matrix column.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompoundTerm {
    Backbone { core: BackboneTerm, n3: usize },
    Dependency(DependencyTerm),
}

impl CompoundTerm {
    /// `(n1, n2, n3)` of a two-leaf constituency backbone without projection.
    pub fn pair_exponents(&self) -> Option<(usize, usize, usize)> {
        fn depth(t: &BackboneTerm) -> Option<usize> {
            match t {
                BackboneTerm::Observed => Some(0),
                BackboneTerm::Chain(inner) => depth(inner).map(|n| n + 1),
                _ => None,
            }
        }
        match self {
            CompoundTerm::Backbone { core: BackboneTerm::Fork(a, b), n3 } => {
                Some((depth(a)? + 1, depth(b)? + 1, *n3))
            }
            _ => None,
        }
    }

    pub fn has_projected(&self) -> bool {
        matches!(self, CompoundTerm::Backbone { core, .. } if core.has_projected())
    }
}

impl fmt::Display for CompoundTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompoundTerm::Backbone { core, n3 } => write!(f, "{core} [n3={n3}]"),
            CompoundTerm::Dependency(t) => t.fmt(f),
        }
    }
}

fn check_positions(id: &ObservationId, len: usize) -> Result<()> {
    if len == 0 || id.max_position() >= len {
        return Err(Error::InvalidParams(format!("observation {id} does not fit length {len}")));
    }
    Ok(())
}

/// Multiset of finalized backbones of `id` over all bracketings of `len`
/// words, with topology counts.
pub fn backbone_dp(id: &ObservationId, len: usize) -> Result<BTreeMap<CompoundTerm, u64>> {
    check_positions(id, len)?;
    if len > MAX_BACKBONE_LEN {
        return Err(Error::EnumerationTooLarge(format!(
            "backbone DP refused for L = {len} > {MAX_BACKBONE_LEN}"
        )));
    }
    // chart[i][w - 1] holds H(i, i + w)
    let mut chart: Vec<Vec<HashMap<BackboneTerm, u64>>> = vec![Vec::with_capacity(len); len];
    for (i, row) in chart.iter_mut().enumerate() {
        row.push(HashMap::from([(leaf_term(id, i), 1)]));
    }
    for w in 2..=len {
        for i in 0..=len - w {
            let mut cell: HashMap<BackboneTerm, u64> = HashMap::new();
            for a in 1..w {
                let left = &chart[i][a - 1];
                let right = &chart[i + a][w - a - 1];
                for (t1, n1) in left {
                    for (t2, n2) in right {
                        *cell.entry(combine(t1, t2)).or_default() += n1 * n2;
                    }
                }
            }
            chart[i].push(cell);
        }
    }
    let mut out = BTreeMap::new();
    for (t, n) in chart[0].pop().expect("root cell") {
        *out.entry(finalize(t)).or_default() += n;
    }
    Ok(out)
}

/// Finalized backbone of `id` in a single bracketing.
pub fn backbone_of_bracketing(b: &Bracketing, id: &ObservationId) -> Result<CompoundTerm> {
    check_positions(id, b.len())?;
    fn go(b: &Bracketing, idx: usize, id: &ObservationId) -> BackboneTerm {
        let (i, j) = b.spans()[idx];
        match b.splits()[idx] {
            None => leaf_term(id, i),
            Some(m) => {
                let right = b.index_of((m, j)).expect("right child span");
                combine(&go(b, idx + 1, id), &go(b, right, id))
            }
        }
    }
    Ok(finalize(go(b, 0, id)))
}

/// Dependency backbone of `id` in tree `t`, canonicalized for `kind`.
pub fn backbone_of_dependency_tree(kind: FamilyKind, t: &DependencyTree, id: &ObservationId) -> Result<CompoundTerm> {
    check_positions(id, t.len())?;
    if !kind.is_dependency() {
        return Err(Error::Unsupported(format!("{kind} is not a dependency family")));
    }
    if id.order() > 2 || id.projected.is_some() {
        return Err(Error::Unsupported(format!("dependency mixing of observation {id}")));
    }
    let arcs = |path: &[usize]| -> Vec<Arc> {
        path.windows(2)
            .map(|w| match kind {
                FamilyKind::DepI if w[1] < w[0] => Arc::Left,
                FamilyKind::DepI => Arc::Right,
                _ => Arc::Any,
            })
            .collect()
    };
    let p1 = t.path_from_root(id.observed[0]);
    let p2 = id.observed.get(1).map(|&j| t.path_from_root(j));
    let shared = match &p2 {
        Some(p2) => p1.iter().zip(p2).take_while(|(a, b)| a == b).count(),
        None => p1.len(),
    };
    let mut root = arcs(&p1[..shared]);
    if kind == FamilyKind::DepIes {
        // π is stationary, so the root path acts as the identity
        root.clear();
    }
    Ok(CompoundTerm::Dependency(DependencyTerm {
        root,
        first: arcs(&p1[shared - 1..]),
        second: p2.map(|p2| arcs(&p2[shared - 1..])),
    }))
}

/// Compound-parameter multiset of one observation row.
pub fn row_terms(kind: FamilyKind, id: &ObservationId, len: usize) -> Result<BTreeMap<CompoundTerm, u64>> {
    match kind {
        FamilyKind::PcfgIe => {
            if id.order() > 2 {
                return Err(Error::Unsupported(format!("mixing of order-{} observations", id.order())));
            }
            backbone_dp(id, len)
        }
        FamilyKind::DepI | FamilyKind::DepIe | FamilyKind::DepIes => {
            check_positions(id, len)?;
            if len > MAX_DEPENDENCY_LEN {
                return Err(Error::EnumerationTooLarge(format!(
                    "dependency mixing refused for L = {len} > {MAX_DEPENDENCY_LEN}"
                )));
            }
            let mut out = BTreeMap::new();
            for t in enumerate_topologies(TopologyKind::Dependency, len)? {
                let Topology::Dependency(tree) = t else { unreachable!("dependency enumeration") };
                *out.entry(backbone_of_dependency_tree(kind, &tree, id)?).or_default() += 1;
            }
            Ok(out)
        }
        other => Err(Error::Unsupported(format!("mixing matrices for {other}"))),
    }
}

/// Per-state value of a backbone subterm rooted at a node in state `s`.
enum Value {
    /// `k` scalars.
    Scalar(DVector<f64>),
    /// Column `s` is the vector for state `s` (`d × k`).
    One(DMatrix<f64>),
    /// One `d × d` matrix per state.
    Two(Vec<DMatrix<f64>>),
}

/// Moves a value from a child node up one `T` link to its parent.
fn lift(v: Value, tm: &DMatrix<f64>) -> Value {
    match v {
        Value::Scalar(v) => Value::Scalar(tm.tr_mul(&v)),
        Value::One(v) => Value::One(v * tm),
        Value::Two(slices) => {
            let d = slices[0].nrows();
            Value::Two(
                (0..tm.ncols())
                    .map(|s| {
                        let mut acc = DMatrix::zeros(d, d);
                        for (c, m) in slices.iter().enumerate() {
                            acc += m * tm[(c, s)];
                        }
                        acc
                    })
                    .collect(),
            )
        }
    }
}

fn eval_term(t: &BackboneTerm, o: &DMatrix<f64>, tm: &DMatrix<f64>, eta: Option<&DVector<f64>>) -> Result<Value> {
    Ok(match t {
        BackboneTerm::Nil => Value::Scalar(DVector::from_element(tm.ncols(), 1.0)),
        BackboneTerm::Observed => Value::One(o.clone()),
        BackboneTerm::Projected => {
            let eta = eta.ok_or_else(|| Error::MissingData("term has a projected leaf but no η".into()))?;
            if eta.len() != o.nrows() {
                return Err(Error::Dimension(format!("η has length {}, expected {}", eta.len(), o.nrows())));
            }
            Value::Scalar(o.tr_mul(eta))
        }
        BackboneTerm::Chain(inner) => lift(eval_term(inner, o, tm, eta)?, tm),
        BackboneTerm::Fork(a, b) => {
            let k = tm.ncols();
            match (lift(eval_term(a, o, tm, eta)?, tm), lift(eval_term(b, o, tm, eta)?, tm)) {
                (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(x.component_mul(&y)),
                (Value::Scalar(x), Value::One(v)) | (Value::One(v), Value::Scalar(x)) => {
                    Value::One(v * DMatrix::from_diagonal(&x))
                }
                (Value::One(u), Value::One(v)) => {
                    Value::Two((0..k).map(|s| u.column(s) * v.column(s).transpose()).collect())
                }
                (Value::Scalar(x), Value::Two(m)) | (Value::Two(m), Value::Scalar(x)) => {
                    Value::Two(m.into_iter().enumerate().map(|(s, m)| m * x[s]).collect())
                }
                _ => return Err(Error::Unsupported("backbones with more than two observed leaves".into())),
            }
        }
    })
}

fn path_matrix(path: &[Arc], left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    let d = left.nrows();
    path.iter().fold(DMatrix::identity(d, d), |acc, a| {
        let step = if *a == Arc::Left { left } else { right };
        step * acc
    })
}

/// Evaluates a compound parameter at `params`: a `d × d` matrix for pair
/// terms, a `d × 1` column for single-leaf terms.
pub fn eval_compound(term: &CompoundTerm, params: &ModelParams, eta: Option<&DVector<f64>>) -> Result<DMatrix<f64>> {
    let kind = params.family().kind;
    match term {
        CompoundTerm::Backbone { core, n3 } => {
            if kind != FamilyKind::PcfgIe {
                return Err(Error::Unsupported(format!("backbone terms are evaluated for pcfg-ie, not {kind}")));
            }
            let o = params.block(BlockKind::O);
            let tm = params.block(BlockKind::T);
            let mut w = params.pi();
            for _ in 0..*n3 {
                w = tm * w;
            }
            Ok(match eval_term(core, o, tm, eta)? {
                Value::Scalar(v) => DMatrix::from_element(1, 1, v.dot(&w)),
                Value::One(v) => DMatrix::from_column_slice(v.nrows(), 1, (v * w).as_slice()),
                Value::Two(slices) => {
                    let d = o.nrows();
                    slices.iter().zip(w.iter()).fold(DMatrix::zeros(d, d), |acc, (m, &ws)| acc + m * ws)
                }
            })
        }
        CompoundTerm::Dependency(t) => {
            if !kind.is_dependency() {
                return Err(Error::Unsupported(format!("dependency terms are evaluated for dependency families, not {kind}")));
            }
            let (left, right) = params.dependency_arguments();
            let w = path_matrix(&t.root, left, right) * params.pi();
            let p1 = path_matrix(&t.first, left, right);
            Ok(match &t.second {
                None => DMatrix::from_column_slice(p1.nrows(), 1, (p1 * w).as_slice()),
                Some(second) => p1 * DMatrix::from_diagonal(&w) * path_matrix(second, left, right).transpose(),
            })
        }
    }
}

/// Append-only map from canonical terms to column ids.
#[derive(Clone, Debug, Default)]
pub struct TermRegistry {
    terms: Vec<CompoundTerm>,
    index: HashMap<CompoundTerm, usize>,
}

impl TermRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Column of `term`, assigned on first sight.
    pub fn compound_match(&mut self, term: &CompoundTerm) -> usize {
        if let Some(&c) = self.index.get(term) {
            return c;
        }
        let c = self.terms.len();
        self.terms.push(term.clone());
        self.index.insert(term.clone(), c);
        c
    }

    pub fn get(&self, term: &CompoundTerm) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn terms(&self) -> &[CompoundTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// One mixing-matrix row: an observation at one length, without its η tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixingRow {
    pub len: usize,
    pub id: ObservationId,
}

impl MixingRow {
    /// `L:obs`, with a bare `eta` marking the projected position.
    pub fn label(&self) -> String {
        let eta = if self.id.projected.is_some() { "eta" } else { "" };
        format!("{}:{}{eta}", self.len, self.id)
    }
}

/// Mixing matrix with exact entries `counts / totals` (topology counts over
/// `|Trees_L|`), stored sparsely per row.
#[derive(Clone, Debug)]
pub struct MixingMatrix {
    pub family: FamilyKind,
    pub observations: ObservationFamily,
    pub lengths: Vec<usize>,
    pub rows: Vec<MixingRow>,
    pub registry: TermRegistry,
    /// `(column, count)` pairs of each row, sorted by column.
    pub counts: Vec<Vec<(usize, u64)>>,
    /// `|Trees_L|` of each row.
    pub totals: Vec<u64>,
}

fn tree_total(kind: FamilyKind, len: usize) -> Result<u64> {
    match kind.topology_kind() {
        TopologyKind::Constituency => Ok(bracketing_counts(len)[len]),
        other => crate::model::tree_count(other, len),
    }
}

/// Row observations of `obs` at `len` with η tags removed.
pub fn row_observations(obs: ObservationFamily, len: usize) -> Vec<ObservationId> {
    let projections = if obs.is_thin() { vec![Projection { tag: String::new(), eta: DVector::zeros(1) }] } else { vec![] };
    let spec = ObservationSpec { family: obs, projections };
    enumerate_observations(&spec, len)
        .into_iter()
        .map(|id| ObservationId { eta: None, ..id })
        .collect()
}

/// Builds the mixing matrix of `obs` for `kind` over `lengths`. Rows are
/// computed in parallel; columns are registered in row order.
pub fn mixing_matrix(kind: FamilyKind, obs: ObservationFamily, lengths: &[usize]) -> Result<MixingMatrix> {
    if lengths.is_empty() {
        return Err(Error::InvalidParams("no sentence lengths given".into()));
    }
    let rows: Vec<MixingRow> = lengths
        .iter()
        .flat_map(|&len| row_observations(obs, len).into_iter().map(move |id| MixingRow { len, id }))
        .collect();
    let per_row: Vec<BTreeMap<CompoundTerm, u64>> =
        rows.par_iter().map(|r| row_terms(kind, &r.id, r.len)).collect::<Result<_>>()?;
    let mut registry = TermRegistry::new();
    let mut counts = Vec::with_capacity(rows.len());
    for terms in &per_row {
        let mut row: Vec<(usize, u64)> = terms.iter().map(|(t, &n)| (registry.compound_match(t), n)).collect();
        row.sort_unstable();
        counts.push(row);
    }
    let totals = rows.iter().map(|r| tree_total(kind, r.len)).collect::<Result<_>>()?;
    Ok(MixingMatrix { family: kind, observations: obs, lengths: lengths.to_vec(), rows, registry, counts, totals })
}

/// Formats `x` with `sig` significant digits, trailing zeros dropped.
pub fn format_significant(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    if !(-5..=15).contains(&magnitude) {
        return format!("{:.*e}", sig.saturating_sub(1), x);
    }
    let decimals = (sig as i64 - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingEntry {
    pub row: usize,
    pub col: usize,
    pub count: u64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingFile {
    pub family: FamilyKind,
    pub observations: ObservationFamily,
    pub lengths: Vec<usize>,
    pub rows: Vec<String>,
    /// `|Trees_L|` per row.
    pub totals: Vec<u64>,
    /// Term registry in column order.
    pub columns: Vec<String>,
    pub entries: Vec<MixingEntry>,
}

impl MixingMatrix {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.registry.len()
    }

    pub fn columns(&self) -> &[CompoundTerm] {
        self.registry.terms()
    }

    pub fn column_of(&self, term: &CompoundTerm) -> Option<usize> {
        self.registry.get(term)
    }

    pub fn row_of(&self, len: usize, id: &ObservationId) -> Option<usize> {
        let bare = ObservationId { eta: None, ..id.clone() };
        self.rows.iter().position(|r| r.len == len && r.id == bare)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols());
        for (r, row) in self.counts.iter().enumerate() {
            for &(c, n) in row {
                m[(r, c)] = n as f64 / self.totals[r] as f64;
            }
        }
        m
    }

    /// Rows whose integer counts do not add up to `|Trees_L|`.
    pub fn row_sum_violations(&self) -> Vec<usize> {
        self.counts
            .iter()
            .zip(&self.totals)
            .enumerate()
            .filter(|(_, (row, &total))| row.iter().map(|&(_, n)| n).sum::<u64>() != total)
            .map(|(r, _)| r)
            .collect()
    }

    /// Sub-matrix of the rows at one length, restricted to its nonzero columns.
    pub fn restrict(&self, lengths: &[usize]) -> Result<MixingMatrix> {
        let mut registry = TermRegistry::new();
        let mut rows = Vec::new();
        let mut counts = Vec::new();
        let mut totals = Vec::new();
        for (r, row) in self.rows.iter().enumerate() {
            if !lengths.contains(&row.len) {
                continue;
            }
            rows.push(row.clone());
            totals.push(self.totals[r]);
            counts.push(
                self.counts[r]
                    .iter()
                    .map(|&(c, n)| (registry.compound_match(&self.columns()[c]), n))
                    .collect(),
            );
        }
        if rows.is_empty() {
            return Err(Error::MissingData(format!("no mixing rows at lengths {lengths:?}")));
        }
        Ok(MixingMatrix {
            family: self.family,
            observations: self.observations,
            lengths: lengths.to_vec(),
            rows,
            registry,
            counts,
            totals,
        })
    }

    /// All compound parameters at `params`, in column order.
    pub fn compound_values(&self, params: &ModelParams, eta: Option<&DVector<f64>>) -> Result<Vec<DMatrix<f64>>> {
        self.columns().iter().map(|t| eval_compound(t, params, eta)).collect()
    }

    /// CSV with rows `L:obs` and columns the canonical term strings.
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let mut out = String::from("row");
        for t in self.columns() {
            out.push(',');
            out.push_str(&quote(&t.to_string()));
        }
        out.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            let mut values = vec![0.0; self.ncols()];
            for &(c, n) in &self.counts[r] {
                values[c] = n as f64 / self.totals[r] as f64;
            }
            out.push_str(&row.label());
            for v in values {
                out.push(',');
                out.push_str(&format_significant(v, 12));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_file(&self) -> MixingFile {
        let entries = self
            .counts
            .iter()
            .enumerate()
            .flat_map(|(r, row)| {
                row.iter().map(move |&(c, n)| MixingEntry {
                    row: r,
                    col: c,
                    count: n,
                    value: n as f64 / self.totals[r] as f64,
                })
            })
            .collect();
        MixingFile {
            family: self.family,
            observations: self.observations,
            lengths: self.lengths.clone(),
            rows: self.rows.iter().map(MixingRow::label).collect(),
            totals: self.totals.clone(),
            columns: self.columns().iter().map(|t| t.to_string()).collect(),
            entries,
        }
    }
}

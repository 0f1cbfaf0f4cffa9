//! Hypergraph encoding of `Σ_{x, z}` for every model family, with
//! inside/outside passes, exact moments and the Jacobian of the moment map.
//!
//! Nodes are created bottom-up, so node ids are a topological order: every
//! hyperedge points from a head to two tails with smaller ids. Node 0 is END
//! (`α = 1`) and the last node is START. A hyperpath from START fixes a
//! topology, every latent state and every word; its weight is `P(x, z)` with
//! the uniform topology prior folded into the START edges.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{BlockKind, FamilyKind, ModelFamily, ModelParams, TopologyKind};
use crate::observations::{coordinate_factors, enumerate_observations, Moment, ObservationId, ObservationSpec, ObservedMoments};

/// Longest sentence accepted by [`build_hypergraph`].
pub const MAX_HYPERGRAPH_LEN: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub head: usize,
    pub tails: [usize; 2],
    /// Raw parameter index whose value multiplies the edge weight.
    pub param: Option<usize>,
    /// Constant factor (topology prior on START edges, 1 elsewhere).
    pub scale: f64,
    /// `(position, word)` generated by this edge.
    pub emit: Option<(usize, usize)>,
}

/// Per-position word weights; `None` means the position is summed out.
pub type Factors = [Option<DVector<f64>>];

#[derive(Clone, Debug)]
pub struct Hypergraph {
    family: ModelFamily,
    len: usize,
    labels: Vec<String>,
    edges: Vec<Edge>,
    by_head: Vec<Range<usize>>,
    tree_count: f64,
}

pub const END: usize = 0;

struct Builder {
    labels: Vec<String>,
    edges: Vec<Edge>,
    by_head: Vec<Range<usize>>,
    ids: HashMap<String, usize>,
}

impl Builder {
    fn new() -> Self {
        let mut b = Builder { labels: Vec::new(), edges: Vec::new(), by_head: Vec::new(), ids: HashMap::new() };
        b.open("END".into());
        b
    }

    /// Starts a new node; its edges must be added before the next `open`.
    fn open(&mut self, label: String) -> usize {
        let id = self.labels.len();
        self.ids.insert(label.clone(), id);
        self.labels.push(label);
        let at = self.edges.len();
        self.by_head.push(at..at);
        id
    }

    fn id(&self, label: &str) -> usize {
        *self.ids.get(label).unwrap_or_else(|| panic!("node {label} used before creation"))
    }

    fn edge(&mut self, tails: [usize; 2], param: Option<usize>, scale: f64, emit: Option<(usize, usize)>) {
        let head = self.labels.len() - 1;
        debug_assert!(tails[0] < head && tails[1] < head);
        self.edges.push(Edge { head, tails, param, scale, emit });
        self.by_head[head].end = self.edges.len();
    }
}

/// Builds the hypergraph of `family` over sentences of length `len`.
pub fn build_hypergraph(family: ModelFamily, len: usize) -> Result<Hypergraph> {
    if len == 0 {
        return Err(Error::InvalidParams("sentence length must be at least 1".into()));
    }
    if len > MAX_HYPERGRAPH_LEN {
        return Err(Error::EnumerationTooLarge(format!(
            "hypergraph refused for L = {len} > {MAX_HYPERGRAPH_LEN}"
        )));
    }
    let tree_count = match family.kind.topology_kind() {
        TopologyKind::Constituency => crate::model::topology::bracketing_counts(len)[len] as f64,
        TopologyKind::Chain => 1.0,
        TopologyKind::Dependency => {
            // one word type makes hyperpaths and trees coincide
            let unit = ModelFamily::dependency(family.kind, 1)?;
            build_with_count(unit, len, 1.0).path_count()
        }
    };
    Ok(build_with_count(family, len, tree_count))
}

fn build_with_count(family: ModelFamily, len: usize, tree_count: f64) -> Hypergraph {
    let mut b = Builder::new();
    match family.kind.topology_kind() {
        TopologyKind::Constituency => build_constituency(&mut b, family, len, tree_count),
        TopologyKind::Dependency => build_dependency(&mut b, family, len, tree_count),
        TopologyKind::Chain => build_chain(&mut b, family, len),
    }
    Hypergraph { family, len, labels: b.labels, edges: b.edges, by_head: b.by_head, tree_count }
}

fn build_constituency(b: &mut Builder, family: ModelFamily, len: usize, count: f64) {
    let k = family.states();
    let d = family.d;
    let factored = family.kind != FamilyKind::Pcfg;
    let (t1, t2) = match family.kind {
        FamilyKind::PcfgI => (BlockKind::T1, BlockKind::T2),
        _ => (BlockKind::T, BlockKind::T),
    };
    for width in 1..=len {
        for i in 0..=len - width {
            let j = i + width;
            for s in 0..k {
                b.open(format!("span({i},{j},{s})"));
                if width == 1 {
                    for w in 0..d {
                        b.edge([END, END], Some(family.raw_index(BlockKind::O, w, s)), 1.0, Some((i, w)));
                    }
                    continue;
                }
                for m in i + 1..j {
                    if factored {
                        let left = b.id(&format!("left({i},{m},{s})"));
                        let right = b.id(&format!("right({m},{j},{s})"));
                        b.edge([left, right], None, 1.0, None);
                    } else {
                        for s1 in 0..k {
                            for s2 in 0..k {
                                let left = b.id(&format!("span({i},{m},{s1})"));
                                let right = b.id(&format!("span({m},{j},{s2})"));
                                let p = family.raw_index(BlockKind::B, s1 * k + s2, s);
                                b.edge([left, right], Some(p), 1.0, None);
                            }
                        }
                    }
                }
            }
            if factored && width < len {
                // child slots: parent state s picks the child's state through T1 / T2
                for (side, block) in [("left", t1), ("right", t2)] {
                    for s in 0..k {
                        b.open(format!("{side}({i},{j},{s})"));
                        for c in 0..k {
                            let child = b.id(&format!("span({i},{j},{c})"));
                            b.edge([child, END], Some(family.raw_index(block, c, s)), 1.0, None);
                        }
                    }
                }
            }
        }
    }
    b.open("START".into());
    for s in 0..k {
        let root = b.id(&format!("span(0,{len},{s})"));
        b.edge([root, END], Some(family.raw_index(BlockKind::Pi, s, 0)), 1.0 / count, None);
    }
}

fn build_chain(b: &mut Builder, family: ModelFamily, len: usize) {
    let k = family.states();
    let d = family.d;
    for i in (0..len).rev() {
        for s in 0..k {
            b.open(format!("emit({i},{s})"));
            for w in 0..d {
                b.edge([END, END], Some(family.raw_index(BlockKind::O, w, s)), 1.0, Some((i, w)));
            }
            let emit = b.id(&format!("emit({i},{s})"));
            let rest = if i + 1 < len {
                b.open(format!("next({i},{s})"));
                match family.kind {
                    FamilyKind::Hmm => {
                        for t in 0..k {
                            let to = b.id(&format!("state({},{t})", i + 1));
                            b.edge([to, END], Some(family.raw_index(BlockKind::T, t, s)), 1.0, None);
                        }
                    }
                    _ => {
                        let to = b.id(&format!("state({},{s})", i + 1));
                        b.edge([to, END], None, 1.0, None);
                    }
                }
                b.id(&format!("next({i},{s})"))
            } else {
                END
            };
            b.open(format!("state({i},{s})"));
            b.edge([emit, rest], None, 1.0, None);
        }
    }
    b.open("START".into());
    for s in 0..k {
        let first = b.id(&format!("state(0,{s})"));
        b.edge([first, END], Some(family.raw_index(BlockKind::Pi, s, 0)), 1.0, None);
    }
}

/// Eisner's split-head chart with a word attached to every head. Each arc is
/// built by exactly one incomplete item, which also emits the dependent's word.
fn build_dependency(b: &mut Builder, family: ModelFamily, len: usize, count: f64) {
    let d = family.d;
    let (left_block, right_block) = match family.kind {
        FamilyKind::DepI => (BlockKind::ALeft, BlockKind::ARight),
        _ => (BlockKind::A, BlockKind::A),
    };
    let leaf = |s: usize, w: usize| format!("leaf({s},{w})");
    // complete right span headed at s, complete left span headed at t
    let cr = |s: usize, t: usize, w: usize| if s == t { leaf(s, w) } else { format!("cr({s},{t},{w})") };
    let cl = |s: usize, t: usize, w: usize| if s == t { leaf(s, w) } else { format!("cl({s},{t},{w})") };
    for s in 0..len {
        for w in 0..d {
            b.open(leaf(s, w));
            b.edge([END, END], None, 1.0, None);
        }
    }
    for width in 1..len {
        for s in 0..len - width {
            let t = s + width;
            for ws in 0..d {
                for wt in 0..d {
                    b.open(format!("ir({s},{t},{ws},{wt})"));
                    for r in s..t {
                        let tails = [b.id(&cr(s, r, ws)), b.id(&cl(r + 1, t, wt))];
                        b.edge(tails, Some(family.raw_index(right_block, wt, ws)), 1.0, Some((t, wt)));
                    }
                    b.open(format!("il({s},{t},{ws},{wt})"));
                    for r in s..t {
                        let tails = [b.id(&cr(s, r, ws)), b.id(&cl(r + 1, t, wt))];
                        b.edge(tails, Some(family.raw_index(left_block, ws, wt)), 1.0, Some((s, ws)));
                    }
                }
            }
        }
        for s in 0..len - width {
            let t = s + width;
            for w in 0..d {
                b.open(cr(s, t, w));
                for r in s + 1..=t {
                    for wr in 0..d {
                        let tails = [b.id(&format!("ir({s},{r},{w},{wr})")), b.id(&cr(r, t, wr))];
                        b.edge(tails, None, 1.0, None);
                    }
                }
                b.open(cl(s, t, w));
                for r in s..t {
                    for wr in 0..d {
                        let tails = [b.id(&cl(s, r, wr)), b.id(&format!("il({r},{t},{wr},{w})"))];
                        b.edge(tails, None, 1.0, None);
                    }
                }
            }
        }
    }
    b.open("START".into());
    for h in 0..len {
        for w in 0..d {
            let tails = [b.id(&cl(0, h, w)), b.id(&cr(h, len - 1, w))];
            b.edge(tails, Some(family.raw_index(BlockKind::Pi, w, 0)), 1.0 / count, Some((h, w)));
        }
    }
}

impl Hypergraph {
    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn start(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn label(&self, node: usize) -> &str {
        &self.labels[node]
    }

    pub fn incoming(&self, node: usize) -> &[Edge] {
        &self.edges[self.by_head[node].clone()]
    }

    /// Number of topologies, the normalizer on the START edges.
    pub fn tree_count(&self) -> f64 {
        self.tree_count
    }

    fn weight(&self, e: &Edge, theta: &[f64], factors: &Factors) -> f64 {
        let mut w = e.scale;
        if let Some(p) = e.param {
            w *= theta[p];
        }
        if let Some((pos, word)) = e.emit {
            if let Some(f) = &factors[pos] {
                w *= f[word];
            }
        }
        w
    }

    /// Inside scores under raw parameters `theta` and edge factors built from
    /// the per-position word weights.
    pub fn inside(&self, theta: &[f64], factors: &Factors) -> Vec<f64> {
        let mut alpha = vec![0.0; self.num_nodes()];
        alpha[END] = 1.0;
        for a in 1..self.num_nodes() {
            alpha[a] = self
                .incoming(a)
                .iter()
                .map(|e| self.weight(e, theta, factors) * alpha[e.tails[0]] * alpha[e.tails[1]])
                .sum();
        }
        alpha
    }

    /// Outside scores for the same weighting.
    pub fn outside(&self, theta: &[f64], factors: &Factors, alpha: &[f64]) -> Vec<f64> {
        let mut beta = vec![0.0; self.num_nodes()];
        beta[self.start()] = 1.0;
        for a in (1..self.num_nodes()).rev() {
            if beta[a] == 0.0 {
                continue;
            }
            for e in self.incoming(a) {
                let w = self.weight(e, theta, factors) * beta[a];
                let [b, c] = e.tails;
                beta[b] += w * alpha[c];
                beta[c] += w * alpha[b];
            }
        }
        beta
    }

    /// `α(START)` and its gradient with respect to every raw parameter.
    pub fn value_and_gradient(&self, theta: &[f64], factors: &Factors) -> (f64, Vec<f64>) {
        let alpha = self.inside(theta, factors);
        let beta = self.outside(theta, factors, &alpha);
        let mut grad = vec![0.0; theta.len()];
        for e in &self.edges {
            if let Some(p) = e.param {
                let mut f = e.scale;
                if let Some((pos, word)) = e.emit {
                    if let Some(v) = &factors[pos] {
                        f *= v[word];
                    }
                }
                grad[p] += f * beta[e.head] * alpha[e.tails[0]] * alpha[e.tails[1]];
            }
        }
        (alpha[self.start()], grad)
    }

    /// Number of hyperpaths from START, counting every edge with weight 1.
    pub fn path_count(&self) -> f64 {
        let mut count = vec![0.0; self.num_nodes()];
        count[END] = 1.0;
        for a in 1..self.num_nodes() {
            count[a] = self.incoming(a).iter().map(|e| count[e.tails[0]] * count[e.tails[1]]).sum();
        }
        count[self.start()]
    }

    /// Line-oriented listing of nodes and edges.
    pub fn dump(&self) -> String {
        let names = raw_parameter_names(self.family);
        let mut out = String::new();
        let _ = writeln!(out, "# {} L={} nodes={} edges={}", self.family, self.len, self.num_nodes(), self.edges.len());
        for (id, label) in self.labels.iter().enumerate() {
            let _ = writeln!(out, "node {id} {label}");
        }
        for e in &self.edges {
            let param = e.param.map_or("-".to_string(), |p| names[p].clone());
            let emit = e.emit.map_or("-".to_string(), |(p, w)| format!("{}:{}", p + 1, w + 1));
            let _ = writeln!(
                out,
                "edge {} -> {} {} param={} scale={} emit={}",
                e.head, e.tails[0], e.tails[1], param, e.scale, emit
            );
        }
        out
    }
}

/// Name of every raw parameter, e.g. `O[2,0]`.
pub fn raw_parameter_names(family: ModelFamily) -> Vec<String> {
    let mut names = vec![String::new(); family.raw_len()];
    for &b in family.layout() {
        let (r, c) = family.block_shape(b);
        for col in 0..c {
            for row in 0..r {
                names[family.raw_index(b, row, col)] = format!("{}[{row},{col}]", b.name());
            }
        }
    }
    names
}

fn check_len_for(spec: &ObservationSpec, params: &ModelParams) -> Result<()> {
    for p in &spec.projections {
        if p.eta.len() != params.family().d {
            return Err(Error::Dimension(format!(
                "projection {} has length {}, expected d = {}",
                p.tag,
                p.eta.len(),
                params.family().d
            )));
        }
    }
    Ok(())
}

/// `E_θ[φ]` for every observation of `spec` at length `len`, one inside pass
/// per moment coordinate.
pub fn exact_moments(params: &ModelParams, spec: &ObservationSpec, len: usize) -> Result<ObservedMoments> {
    check_len_for(spec, params)?;
    let h = build_hypergraph(params.family(), len)?;
    let theta = params.raw_vector();
    let d = params.family().d;
    let ids = enumerate_observations(spec, len);
    let moments = ids
        .par_iter()
        .map(|id| {
            let mut m = Moment::zeros(id.order(), d);
            for (c, v) in m.values.iter_mut().enumerate() {
                let factors = coordinate_factors(spec, id, c, len, d)?;
                *v = h.inside(&theta, &factors)[h.start()];
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = ObservedMoments::new(d, spec.projections.clone());
    for (id, m) in ids.into_iter().zip(moments) {
        out.push(len, id, m);
    }
    Ok(out)
}

/// [`exact_moments`] over several lengths, concatenated in the given order.
pub fn exact_moments_range(params: &ModelParams, spec: &ObservationSpec, lengths: &[usize]) -> Result<ObservedMoments> {
    let mut out = ObservedMoments::new(params.family().d, spec.projections.clone());
    for &len in lengths {
        out.extend(exact_moments(params, spec, len)?);
    }
    Ok(out)
}

/// One Jacobian row label: sentence length, observation and flat coordinate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowLabel {
    pub len: usize,
    pub id: ObservationId,
    pub coordinate: usize,
}

/// Raw-parameter gradients of every moment coordinate, with row labels.
pub fn raw_jacobian(
    params: &ModelParams,
    spec: &ObservationSpec,
    lengths: &[usize],
) -> Result<(Vec<RowLabel>, DMatrix<f64>)> {
    check_len_for(spec, params)?;
    let family = params.family();
    let d = family.d;
    let theta = params.raw_vector();
    let mut rows: Vec<RowLabel> = Vec::new();
    let mut graphs = HashMap::new();
    for &len in lengths {
        if let std::collections::hash_map::Entry::Vacant(e) = graphs.entry(len) {
            e.insert(build_hypergraph(family, len)?);
        }
        for id in enumerate_observations(spec, len) {
            for coordinate in 0..d.pow(id.order() as u32) {
                rows.push(RowLabel { len, id: id.clone(), coordinate });
            }
        }
    }
    let grads = rows
        .par_iter()
        .map(|r| {
            let factors = coordinate_factors(spec, &r.id, r.coordinate, r.len, d)?;
            Ok(graphs[&r.len].value_and_gradient(&theta, &factors).1)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = theta.len();
    let j = DMatrix::from_fn(rows.len(), n, |i, p| grads[i][p]);
    Ok((rows, j))
}

/// Converts raw partials into partials along the free coordinates: within a
/// stochastic column, moving a free entry up moves the last entry down. For
/// a stationary `π` the induced change `dπ/dA` is added.
pub fn free_coordinate_jacobian(params: &ModelParams, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let family = params.family();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(family.free_len());
    let dpi = if family.kind == FamilyKind::DepIes { Some(stationary_sensitivity(params)?) } else { None };
    let pi_off = family.raw_offset(BlockKind::Pi);
    for &b in family.layout() {
        if family.is_derived(b) {
            continue;
        }
        let (r, c) = family.block_shape(b);
        for col in 0..c {
            let last = family.raw_index(b, r - 1, col);
            for row in 0..r - 1 {
                let mut v = raw.column(family.raw_index(b, row, col)) - raw.column(last);
                if let (Some(g), BlockKind::A) = (&dpi, b) {
                    // dπ/dA_free = -π_col (G e_row - G e_last)
                    let pi_c = params.pi()[col];
                    let dp = (g.column(row) - g.column(r - 1)) * (-pi_c);
                    for (i, di) in dp.iter().enumerate() {
                        v += raw.column(pi_off + i) * *di;
                    }
                }
                cols.push(v);
            }
        }
    }
    Ok(DMatrix::from_columns(&cols).resize_horizontally(cols.len(), 0.0))
}

/// Pseudoinverse `G` of `[A - I; 1ᵀ]`. A perturbation `dA` moves the
/// stationary distribution by `-G [dA π; 0]`.
fn stationary_sensitivity(params: &ModelParams) -> Result<DMatrix<f64>> {
    let a = params.block(BlockKind::A);
    let d = a.nrows();
    let mut aug = DMatrix::zeros(d + 1, d);
    aug.view_mut((0, 0), (d, d)).copy_from(&(a - DMatrix::identity(d, d)));
    aug.row_mut(d).fill(1.0);
    let g = crate::spectral::pseudoinverse(&aug);
    let sv = crate::spectral::singular_values(&aug);
    if sv.last().copied().unwrap_or(0.0) <= 1e-10 * sv[0] {
        return Err(Error::Reducible("stationary distribution is not locally unique".into()));
    }
    Ok(g.columns(0, d).into_owned())
}

/// Jacobian of the moments over `lengths` with respect to the free
/// coordinates of `params` (see [`ModelFamily::free_coordinate_names`]).
pub fn jacobian(params: &ModelParams, spec: &ObservationSpec, lengths: &[usize]) -> Result<DMatrix<f64>> {
    let (_, raw) = raw_jacobian(params, spec, lengths)?;
    free_coordinate_jacobian(params, &raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::brute_force_moments;
    use crate::model::{enumerate_topologies, marginal_prob, Sentence};
    use crate::observations::{ObservationFamily, Projection};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(kind: FamilyKind, k: usize, d: usize, seed: u64) -> ModelParams {
        let fam = ModelFamily::new(kind, k, d).unwrap();
        ModelParams::random(fam, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn none(len: usize) -> Vec<Option<DVector<f64>>> {
        vec![None; len]
    }

    #[test]
    fn single_path_pcfg() {
        let fam = ModelFamily::new(FamilyKind::Pcfg, 1, 1).unwrap();
        let h = build_hypergraph(fam, 2).unwrap();
        assert_eq!(h.path_count(), 1.0);
        let p = ModelParams::random(fam, &mut ChaCha8Rng::seed_from_u64(0));
        let theta = p.raw_vector();
        let alpha = h.inside(&theta, &none(2));
        assert_eq!(alpha[h.start()], 1.0);
        let beta = h.outside(&theta, &none(2), &alpha);
        for a in 1..h.num_nodes() {
            assert!((alpha[a] * beta[a] - 1.0).abs() < 1e-15, "{}", h.label(a));
        }
    }

    #[test]
    fn path_counts_match_enumeration() {
        let fam = ModelFamily::new(FamilyKind::Pcfg, 1, 2).unwrap();
        assert_eq!(build_hypergraph(fam, 3).unwrap().path_count(), 16.0);
        // paths = topologies × d^L × k^(latent nodes)
        let fam = ModelFamily::new(FamilyKind::PcfgIe, 2, 2).unwrap();
        assert_eq!(build_hypergraph(fam, 3).unwrap().path_count(), 2.0 * 8.0 * 32.0);
        for (len, trees) in [(1, 1.0), (2, 2.0), (3, 7.0), (4, 30.0), (5, 143.0)] {
            let fam = ModelFamily::dependency(FamilyKind::DepIe, 2).unwrap();
            let h = build_hypergraph(fam, len).unwrap();
            assert_eq!(h.tree_count(), trees);
            assert_eq!(h.path_count(), trees * 2f64.powi(len as i32));
        }
        let fam = ModelFamily::new(FamilyKind::Hmm, 2, 3).unwrap();
        assert_eq!(build_hypergraph(fam, 3).unwrap().path_count(), 27.0 * 8.0);
        let fam = ModelFamily::new(FamilyKind::Lcm, 2, 3).unwrap();
        assert_eq!(build_hypergraph(fam, 3).unwrap().path_count(), 27.0 * 2.0);
    }

    #[test]
    fn total_probability_is_one() {
        for kind in FamilyKind::ALL {
            for len in 1..=5 {
                let p = params(kind, 2, 3, len as u64);
                let h = build_hypergraph(p.family(), len).unwrap();
                let total = h.inside(&p.raw_vector(), &none(len))[h.start()];
                assert!((total - 1.0).abs() < 1e-12, "{kind} L={len}: {total}");
            }
        }
    }

    #[test]
    fn indicator_weighting_is_a_marginal() {
        for kind in FamilyKind::ALL {
            let p = params(kind, 2, 2, 11);
            let h = build_hypergraph(p.family(), 3).unwrap();
            for t in 0..2 {
                let mut f = none(3);
                let mut e = DVector::zeros(2);
                e[t] = 1.0;
                f[0] = Some(e);
                let got = h.inside(&p.raw_vector(), &f)[h.start()];
                let want: f64 = Sentence::all(3, 2)
                    .filter(|x| x.words()[0] == t)
                    .map(|x| marginal_prob(&p, &x).unwrap())
                    .sum();
                assert!((got - want).abs() < 1e-13, "{kind}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn sentence_probability_matches_marginal() {
        for kind in FamilyKind::ALL {
            let p = params(kind, 2, 2, 12);
            for len in 1..=4 {
                let h = build_hypergraph(p.family(), len).unwrap();
                for x in Sentence::all(len, 2) {
                    let f: Vec<_> = x
                        .words()
                        .iter()
                        .map(|&w| {
                            let mut e = DVector::zeros(2);
                            e[w] = 1.0;
                            Some(e)
                        })
                        .collect();
                    let got = h.inside(&p.raw_vector(), &f)[h.start()];
                    let want = marginal_prob(&p, &x).unwrap();
                    assert!((got - want).abs() < 1e-14, "{kind} {x}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn outside_cut_invariant() {
        // every path uses exactly one START edge and one edge into each root-span child
        let p = params(FamilyKind::Pcfg, 2, 2, 13);
        let h = build_hypergraph(p.family(), 3).unwrap();
        let theta = p.raw_vector();
        let f = none(3);
        let alpha = h.inside(&theta, &f);
        let beta = h.outside(&theta, &f, &alpha);
        assert_eq!(beta[h.start()], 1.0);
        assert_eq!(alpha[END], 1.0);
        // cut through the emission edges of position 2
        let cut: f64 = h
            .edges()
            .iter()
            .filter(|e| matches!(e.emit, Some((1, _))))
            .map(|e| h.weight(e, &theta, &f) * beta[e.head] * alpha[e.tails[0]] * alpha[e.tails[1]])
            .sum();
        assert!((cut - alpha[h.start()]).abs() < 1e-14);
        // node marginals on the root spans sum to the total
        let roots: f64 = (0..2).map(|s| {
            let id = h.labels.iter().position(|l| l == &format!("span(0,3,{s})")).unwrap();
            alpha[id] * beta[id]
        }).sum();
        assert!((roots - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dependency_hypergraph_matches_enumeration() {
        // each enumerated tree must be generated once: compare P(x) per sentence at L = 4
        let p = params(FamilyKind::DepI, 0, 2, 14);
        assert_eq!(enumerate_topologies(TopologyKind::Dependency, 4).unwrap().len(), 30);
        let h = build_hypergraph(p.family(), 4).unwrap();
        for x in Sentence::all(4, 2) {
            let f: Vec<_> = x.words().iter().map(|&w| Some(DVector::from_fn(2, |i, _| (i == w) as u8 as f64))).collect();
            let got = h.inside(&p.raw_vector(), &f)[h.start()];
            assert!((got - marginal_prob(&p, &x).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_moments_match_brute_force() {
        let specs = [
            ObservationSpec::plain(ObservationFamily::AllPairs).unwrap(),
            ObservationSpec::plain(ObservationFamily::AllTriples).unwrap(),
            ObservationSpec::new(ObservationFamily::AllThinTriples, vec![Projection::random(2, 3)]).unwrap(),
        ];
        for kind in FamilyKind::ALL {
            let p = params(kind, 2, 2, 15);
            for spec in &specs {
                for len in 2..=3 {
                    let a = exact_moments(&p, spec, len).unwrap();
                    let b = brute_force_moments(&p, spec, len).unwrap();
                    assert!(a.max_abs_diff(&b).unwrap() < 1e-13, "{kind} {:?}", spec.family);
                }
            }
        }
    }

    #[test]
    fn hmm_pair_closed_form() {
        let p = params(FamilyKind::Hmm, 2, 3, 16);
        let spec = ObservationSpec::plain(ObservationFamily::Pairs).unwrap();
        let m = exact_moments(&p, &spec, 4).unwrap();
        let o = p.block(BlockKind::O);
        let t = p.block(BlockKind::T);
        let want = o * DMatrix::from_diagonal(&p.pi()) * t.transpose() * o.transpose();
        let got = m.get(4, &ObservationId::pair(0, 1)).unwrap().as_matrix();
        assert!((got - want).amax() < 1e-14);
    }

    #[test]
    fn dep_ies_closed_forms() {
        let fam = ModelFamily::dependency(FamilyKind::DepIes, 3).unwrap();
        let p = ModelParams::random(fam, &mut ChaCha8Rng::seed_from_u64(17));
        let a = p.block(BlockKind::A).clone();
        let dg = DMatrix::from_diagonal(&p.pi());
        let at = a.transpose();
        let pairs = ObservationSpec::plain(ObservationFamily::AllPairs).unwrap();
        let m2 = exact_moments(&p, &pairs, 2).unwrap();
        let want2 = (&dg * &at + &a * &dg) / 2.0;
        assert!((m2.get(2, &ObservationId::pair(0, 1)).unwrap().as_matrix() - want2).amax() < 1e-14);
        let m3 = exact_moments(&p, &pairs, 3).unwrap();
        let want12 = (&dg * &at * 3.0 + &dg * &at * &at + &a * &dg * 2.0 + &a * &dg * &at) / 7.0;
        assert!((m3.get(3, &ObservationId::pair(0, 1)).unwrap().as_matrix() - want12).amax() < 1e-14);
        let first = ObservationSpec::plain(ObservationFamily::FirstMoment).unwrap();
        for len in 1..=4 {
            let m1 = exact_moments(&p, &first, len).unwrap();
            assert!((m1.entries[0].moment.as_vector() - p.pi()).amax() < 1e-14);
        }
    }

    fn finite_difference(p: &ModelParams, spec: &ObservationSpec, lengths: &[usize], step: f64) -> DMatrix<f64> {
        let fam = p.family();
        let theta = p.vectorize();
        let eval = |v: &DVector<f64>| {
            let mut q = ModelParams::unvectorize(fam, v.as_slice()).unwrap();
            if fam.kind == FamilyKind::DepIes {
                // keep π stationary under the perturbed A
                let pi = crate::model::stationary_distribution(q.block(BlockKind::A)).unwrap();
                q = ModelParams::from_named(fam, vec![(BlockKind::Pi, DMatrix::from_column_slice(pi.len(), 1, pi.as_slice())), (BlockKind::A, q.block(BlockKind::A).clone())]).unwrap();
            }
            let m = exact_moments_range(&q, spec, lengths).unwrap();
            DVector::from_iterator(
                m.entries.iter().map(|e| e.moment.values.len()).sum(),
                m.entries.iter().flat_map(|e| e.moment.values.clone()),
            )
        };
        let cols: Vec<_> = (0..theta.len())
            .map(|i| {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[i] += step;
                down[i] -= step;
                (eval(&up) - eval(&down)) / (2.0 * step)
            })
            .collect();
        DMatrix::from_columns(&cols)
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let spec = ObservationSpec::plain(ObservationFamily::AllPairs).unwrap();
        for kind in FamilyKind::ALL {
            let p = params(kind, 2, 2, 18);
            let j = jacobian(&p, &spec, &[3]).unwrap();
            let fd = finite_difference(&p, &spec, &[3], 1e-5);
            assert_eq!(j.shape(), fd.shape());
            let err = (&j - &fd).amax() / j.amax().max(1e-12);
            assert!(err < 1e-6, "{kind}: {err}");
        }
    }

    #[test]
    fn euler_homogeneity() {
        // every path carries one π entry, so Σ_{i ∈ π} θ_i ∂μ/∂θ_i = μ
        let p = params(FamilyKind::PcfgIe, 1, 2, 19);
        let spec = ObservationSpec::plain(ObservationFamily::Pairs).unwrap();
        let (rows, raw) = raw_jacobian(&p, &spec, &[2]).unwrap();
        let m = exact_moments(&p, &spec, 2).unwrap();
        let theta = p.raw_vector();
        let fam = p.family();
        let o_off = fam.raw_offset(BlockKind::O);
        for (i, r) in rows.iter().enumerate() {
            let val = m.get(2, &r.id).unwrap().values[r.coordinate];
            let pi_part = raw[(i, 0)] * theta[0];
            assert!((pi_part - val).abs() < 1e-14);
            // two emissions per sentence: O has degree 2
            let o_part: f64 = (0..2).map(|w| raw[(i, o_off + w)] * theta[o_off + w]).sum();
            assert!((o_part - 2.0 * val).abs() < 1e-14);
        }
    }

    #[test]
    fn unused_parameter_has_zero_derivative() {
        // position 1 of an L=2 HMM never sees T, so the first-moment row ignores it
        let p = params(FamilyKind::Hmm, 2, 2, 20);
        let spec = ObservationSpec::plain(ObservationFamily::FirstMoment).unwrap();
        let (_, raw) = raw_jacobian(&p, &spec, &[1]).unwrap();
        let t_off = p.family().raw_offset(BlockKind::T);
        for i in 0..raw.nrows() {
            for c in t_off..t_off + 4 {
                assert_eq!(raw[(i, c)], 0.0);
            }
        }
    }

    #[test]
    fn jacobian_is_deterministic_and_stacks() {
        let p = params(FamilyKind::PcfgIe, 2, 2, 21);
        let spec = ObservationSpec::plain(ObservationFamily::AllPairs).unwrap();
        let a = jacobian(&p, &spec, &[2, 3]).unwrap();
        let b = jacobian(&p, &spec, &[2, 3]).unwrap();
        assert_eq!(a, b);
        let j2 = jacobian(&p, &spec, &[2]).unwrap();
        let j3 = jacobian(&p, &spec, &[3]).unwrap();
        assert_eq!(a.rows(0, j2.nrows()), j2);
        assert_eq!(a.rows(j2.nrows(), j3.nrows()), j3);
    }

    #[test]
    fn dump_lists_everything() {
        let fam = ModelFamily::new(FamilyKind::Hmm, 1, 2).unwrap();
        let h = build_hypergraph(fam, 2).unwrap();
        let text = h.dump();
        assert_eq!(text.lines().filter(|l| l.starts_with("node ")).count(), h.num_nodes());
        assert_eq!(text.lines().filter(|l| l.starts_with("edge ")).count(), h.edges().len());
        assert!(text.contains("param=O[1,0] scale=1 emit=2:2"));
    }

    #[test]
    fn guards() {
        let fam = ModelFamily::new(FamilyKind::Hmm, 1, 2).unwrap();
        assert!(build_hypergraph(fam, 0).is_err());
        assert!(matches!(build_hypergraph(fam, 100), Err(Error::EnumerationTooLarge(_))));
    }
}

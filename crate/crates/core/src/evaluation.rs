//! Permutation-invariant comparison of parameters and brute-force moment oracles.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{marginal_prob, BlockKind, ModelParams, Sentence};
use crate::observations::{enumerate_observations, eval_phi, ObservationSpec, ObservedMoments};

/// Largest `k` for which every permutation is tried.
pub const EXACT_MATCH_MAX_K: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub block: String,
    pub max_abs: f64,
    pub frobenius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// `permutation[s]` is the estimated state matched to true state `s`.
    pub permutation: Vec<usize>,
    pub blocks: Vec<BlockError>,
    /// Largest `max_abs` over blocks.
    pub error: f64,
    /// Whether the permutation search was exhaustive.
    pub exact: bool,
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        // next lexicographic permutation
        let Some(i) = (1..k).rev().find(|&i| current[i - 1] < current[i]) else {
            break;
        };
        let j = (i..k).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
    }
    out
}

/// Relabels hidden states: state `s` of the result is state `perm[s]` of `params`.
pub fn permute_states(params: &ModelParams, perm: &[usize]) -> Result<ModelParams> {
    let family = params.family();
    let k = family.states();
    if perm.len() != k {
        return Err(Error::Dimension(format!("permutation of length {} for {k} states", perm.len())));
    }
    if family.k.is_none() {
        return Ok(params.clone());
    }
    let mut blocks = Vec::new();
    for &b in family.layout() {
        let m = params.block(b);
        let out = match b {
            BlockKind::Pi => DMatrix::from_fn(k, 1, |s, _| m[(perm[s], 0)]),
            BlockKind::T | BlockKind::T1 | BlockKind::T2 => {
                DMatrix::from_fn(k, k, |a, c| m[(perm[a], perm[c])])
            }
            BlockKind::B => DMatrix::from_fn(k * k, k, |ab, c| {
                m[(perm[ab / k] * k + perm[ab % k], perm[c])]
            }),
            BlockKind::O => DMatrix::from_fn(m.nrows(), k, |w, s| m[(w, perm[s])]),
            BlockKind::A | BlockKind::ALeft | BlockKind::ARight => m.clone(),
        };
        blocks.push(out);
    }
    ModelParams::new_unchecked(family, blocks)
}

fn compare(est: &ModelParams, truth: &ModelParams) -> Vec<BlockError> {
    truth
        .family()
        .layout()
        .iter()
        .map(|&b| {
            let diff = est.block(b) - truth.block(b);
            BlockError { block: b.name().to_string(), max_abs: diff.amax(), frobenius: diff.norm() }
        })
        .collect()
}

fn worst(blocks: &[BlockError]) -> f64 {
    blocks.iter().map(|b| b.max_abs).fold(0.0, f64::max)
}

/// Compares an estimate against the truth after the best relabeling of
/// hidden states. Dependency families are compared directly.
pub fn match_params(est: &ModelParams, truth: &ModelParams) -> Result<MatchReport> {
    let family = truth.family();
    if est.family() != family {
        return Err(Error::Dimension(format!("comparing {} against {}", est.family(), family)));
    }
    let k = family.states();
    if family.k.is_none() {
        let blocks = compare(est, truth);
        return Ok(MatchReport { permutation: (0..k).collect(), error: worst(&blocks), blocks, exact: true });
    }
    let (candidates, exact) = if k <= EXACT_MATCH_MAX_K {
        (permutations(k), true)
    } else {
        (vec![greedy_permutation(est, truth)], false)
    };
    let mut best: Option<MatchReport> = None;
    for perm in candidates {
        let blocks = compare(&permute_states(est, &perm)?, truth);
        let error = worst(&blocks);
        if best.as_ref().is_none_or(|b| error < b.error) {
            best = Some(MatchReport { permutation: perm, blocks, error, exact });
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// Greedy assignment on the state-indexed columns of `O` (or `π` when absent).
fn greedy_permutation(est: &ModelParams, truth: &ModelParams) -> Vec<usize> {
    let (e, t) = match (est.get(BlockKind::O), truth.get(BlockKind::O)) {
        (Some(e), Some(t)) => (e.clone(), t.clone()),
        _ => (est.block(BlockKind::Pi).transpose(), truth.block(BlockKind::Pi).transpose()),
    };
    let k = t.ncols();
    let mut cost: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
    for s in 0..k {
        for r in 0..k {
            cost.push(((e.column(r) - t.column(s)).norm(), s, r));
        }
    }
    cost.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (_, s, r) in cost {
        if perm[s] == usize::MAX && !used[r] {
            perm[s] = r;
            used[r] = true;
        }
    }
    perm
}

/// Matches the columns of `a` to those of `b` up to per-column scaling.
/// Returns `perm` with `a[:, perm[j]] ≈ s_j b[:, j]` and the largest relative
/// residual `‖s a_i - b_j‖ / ‖b_j‖` over matched pairs.
pub fn match_columns_up_to_scale(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let k = b.ncols();
    let residual = |i: usize, j: usize| {
        let ai = a.column(i);
        let bj = b.column(j);
        let denom = ai.dot(&ai);
        let s = if denom > 0.0 { ai.dot(&bj) / denom } else { 0.0 };
        (ai * s - bj).norm() / bj.norm().max(f64::MIN_POSITIVE)
    };
    let table: Vec<Vec<f64>> = (0..a.ncols()).map(|i| (0..k).map(|j| residual(i, j)).collect()).collect();
    if a.ncols() != k {
        return ((0..k).collect(), f64::INFINITY);
    }
    if k <= EXACT_MATCH_MAX_K {
        let mut best = (Vec::new(), f64::INFINITY);
        for perm in permutations(k) {
            let err = (0..k).map(|j| table[perm[j]][j]).fold(0.0, f64::max);
            if err < best.1 {
                best = (perm, err);
            }
        }
        return best;
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, row) in table.iter().enumerate() {
        for (j, &r) in row.iter().enumerate() {
            pairs.push((r, i, j));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; k];
    let mut err: f64 = 0.0;
    for (r, i, j) in pairs {
        if perm[j] == usize::MAX && !used[i] {
            perm[j] = i;
            used[i] = true;
            err = err.max(r);
        }
    }
    (perm, err)
}

/// `E[φ]` by summing `P(x) φ(x)` over every sentence of length `len`, with
/// `P(x)` itself a literal sum over topologies and latent states.
pub fn brute_force_moments(params: &ModelParams, spec: &ObservationSpec, len: usize) -> Result<ObservedMoments> {
    let family = params.family();
    let d = family.d;
    if len > 4 || family.states() > 3 || d > 3 {
        return Err(Error::EnumerationTooLarge(format!(
            "brute-force moments need L <= 4 and k, d <= 3 (got L = {len}, {family})"
        )));
    }
    let ids = enumerate_observations(spec, len);
    let mut out = ObservedMoments::new(d, spec.projections.clone());
    let mut acc: Vec<_> = ids.iter().map(|id| crate::observations::Moment::zeros(id.order(), d)).collect();
    for x in Sentence::all(len, d) {
        let p = marginal_prob(params, &x)?;
        if p == 0.0 {
            continue;
        }
        for (id, m) in ids.iter().zip(acc.iter_mut()) {
            let phi = eval_phi(spec, id, &x, d)?;
            for (a, v) in m.values.iter_mut().zip(&phi.values) {
                *a += p * v;
            }
        }
    }
    for (id, m) in ids.into_iter().zip(acc) {
        out.push(len, id, m);
    }
    Ok(out)
}

//! Joint and marginal probabilities by direct enumeration, and exact sampling.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::topology::bracketing_counts;
use super::{enumerate_topologies, tree_count, BlockKind, FamilyKind, ModelParams, Topology};
use crate::error::{Error, Result};

/// Largest number of (topology, state assignment) pairs `marginal_prob` will visit.
const MAX_MARGINAL_TERMS: f64 = 5e7;

/// A sentence as 0-based word indices. Text form uses 1-based ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence(pub Vec<usize>);

impl Sentence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn words(&self) -> &[usize] {
        &self.0
    }

    pub fn check(&self, d: usize) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Dimension("empty sentence".into()));
        }
        if let Some(w) = self.0.iter().find(|&&w| w >= d) {
            return Err(Error::Dimension(format!("word id {} exceeds d = {d}", w + 1)));
        }
        Ok(())
    }

    /// Every sentence of length `len` over `d` words, in lexicographic order.
    pub fn all(len: usize, d: usize) -> impl Iterator<Item = Sentence> {
        let total = d.pow(len as u32);
        (0..total).map(move |mut code| {
            let mut words = vec![0; len];
            for slot in words.iter_mut().rev() {
                *slot = code % d;
                code /= d;
            }
            Sentence(words)
        })
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, w) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}", w + 1)?;
        }
        Ok(())
    }
}

impl FromStr for Sentence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let words = s
            .split_whitespace()
            .map(|tok| match tok.parse::<usize>() {
                Ok(w) if w >= 1 => Ok(w - 1),
                _ => Err(Error::Parse(format!("bad word id `{tok}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if words.is_empty() {
            return Err(Error::Parse("empty sentence line".into()));
        }
        Ok(Sentence(words))
    }
}

/// A topology together with the values of its latent nodes: one state per
/// span (preorder) for constituency trees, one per position for chains, and
/// none for dependency trees, whose nodes are the words themselves.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Derivation {
    pub topology: Topology,
    pub states: Vec<usize>,
}

/// `P(x, z)` including the uniform topology prior.
pub fn joint_prob(params: &ModelParams, x: &Sentence, z: &Derivation) -> Result<f64> {
    let kind = params.family().kind.topology_kind();
    let count = tree_count(kind, x.len())? as f64;
    joint_with_count(params, x, z, count)
}

fn joint_with_count(params: &ModelParams, x: &Sentence, z: &Derivation, count: f64) -> Result<f64> {
    let family = params.family();
    x.check(family.d)?;
    if z.topology.len() != x.len() {
        return Err(Error::Dimension(format!(
            "topology over {} words, sentence has {}",
            z.topology.len(),
            x.len()
        )));
    }
    if z.topology.kind() != family.kind.topology_kind() {
        return Err(Error::Dimension(format!("topology kind does not match {}", family.kind)));
    }
    let k = family.states();
    if z.states.iter().any(|&s| s >= k) {
        return Err(Error::Dimension(format!("state index exceeds k = {k}")));
    }
    let pi = params.block(BlockKind::Pi);
    let w = x.words();
    let p = match &z.topology {
        Topology::Constituency(b) => {
            if z.states.len() != b.spans().len() {
                return Err(Error::Dimension("one state per span required".into()));
            }
            let o = params.block(BlockKind::O);
            let bmat = params.production_matrix().expect("constituency family");
            let s = &z.states;
            let mut p = pi[(s[0], 0)];
            for (idx, (&(_, j), split)) in b.spans().iter().zip(b.splits()).enumerate() {
                if let Some(m) = split {
                    let left = idx + 1;
                    let right = b.index_of((*m, j)).expect("right child span");
                    p *= bmat[(s[left] * k + s[right], s[idx])];
                }
            }
            for (i, &word) in w.iter().enumerate() {
                p *= o[(word, s[b.preterminal(i)])];
            }
            p / count
        }
        Topology::Dependency(t) => {
            if !z.states.is_empty() {
                return Err(Error::Dimension("dependency derivations carry no states".into()));
            }
            let (left, right) = params.dependency_arguments();
            let mut p = pi[(w[t.root()], 0)];
            for (h, dep) in t.edges() {
                let a = if dep < h { left } else { right };
                p *= a[(w[dep], w[h])];
            }
            p / count
        }
        Topology::Chain(_) => {
            if z.states.len() != w.len() {
                return Err(Error::Dimension("one state per position required".into()));
            }
            let o = params.block(BlockKind::O);
            let s = &z.states;
            let mut p = pi[(s[0], 0)] * o[(w[0], s[0])];
            for i in 1..w.len() {
                let step = match family.kind {
                    FamilyKind::Hmm => params.block(BlockKind::T)[(s[i], s[i - 1])],
                    _ => {
                        if s[i] == s[i - 1] {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                p *= step * o[(w[i], s[i])];
            }
            p
        }
    };
    Ok(p)
}

/// `P(x)` by summing [`joint_prob`] over every topology and latent assignment.
pub fn marginal_prob(params: &ModelParams, x: &Sentence) -> Result<f64> {
    let family = params.family();
    x.check(family.d)?;
    let kind = family.kind.topology_kind();
    let topologies = enumerate_topologies(kind, x.len())?;
    let count = topologies.len() as f64;
    let k = family.states();
    let mut total = 0.0;
    for t in topologies {
        let slots = match &t {
            Topology::Constituency(b) => b.spans().len(),
            Topology::Dependency(_) => 0,
            Topology::Chain(l) => *l,
        };
        if count * (k as f64).powi(slots as i32) > MAX_MARGINAL_TERMS {
            return Err(Error::EnumerationTooLarge(format!(
                "{} latent assignments per topology at L = {}",
                (k as f64).powi(slots as i32),
                x.len()
            )));
        }
        let mut z = Derivation { topology: t, states: vec![0; slots] };
        loop {
            total += joint_with_count(params, x, &z, count)?;
            if !advance(&mut z.states, k) {
                break;
            }
        }
    }
    Ok(total)
}

/// Odometer increment; returns false after the last assignment.
fn advance(states: &mut [usize], k: usize) -> bool {
    for s in states.iter_mut().rev() {
        *s += 1;
        if *s < k {
            return true;
        }
        *s = 0;
    }
    false
}

fn categorical<R: Rng + ?Sized>(m: &DMatrix<f64>, col: usize, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let rows = m.nrows();
    for r in 0..rows {
        acc += m[(r, col)];
        if u < acc {
            return r;
        }
    }
    // rounding left u above the final cumulative sum
    (0..rows).rev().find(|&r| m[(r, col)] > 0.0).unwrap_or(rows - 1)
}

/// Draws sentences of a fixed length exactly from `P(x)`.
pub struct Sampler<'a> {
    params: &'a ModelParams,
    len: usize,
    production: Option<DMatrix<f64>>,
    bracket_counts: Vec<u64>,
    dependency_trees: Vec<Topology>,
}

impl<'a> Sampler<'a> {
    pub fn new(params: &'a ModelParams, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidParams("sentence length must be at least 1".into()));
        }
        let kind = params.family().kind;
        let dependency_trees = if kind.is_dependency() {
            enumerate_topologies(kind.topology_kind(), len)?
        } else {
            Vec::new()
        };
        Ok(Sampler {
            params,
            len,
            production: params.production_matrix(),
            bracket_counts: bracketing_counts(len),
            dependency_trees,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sentence {
        let family = self.params.family();
        let pi = self.params.block(BlockKind::Pi);
        let mut words = vec![0; self.len];
        match family.kind {
            FamilyKind::Pcfg | FamilyKind::PcfgI | FamilyKind::PcfgIe => {
                let root = categorical(pi, 0, rng);
                self.sample_span(0, self.len, root, &mut words, rng);
            }
            FamilyKind::DepI | FamilyKind::DepIe | FamilyKind::DepIes => {
                let idx = rng.random_range(0..self.dependency_trees.len());
                let Topology::Dependency(tree) = &self.dependency_trees[idx] else {
                    unreachable!("dependency enumeration yields dependency trees")
                };
                let (left, right) = self.params.dependency_arguments();
                // parents precede children along each root path
                let mut order: Vec<usize> = (0..self.len).collect();
                order.sort_by_key(|&i| tree.path_from_root(i).len());
                for i in order {
                    words[i] = match tree.heads()[i] {
                        None => categorical(pi, 0, rng),
                        Some(h) => {
                            let a = if i < h { left } else { right };
                            categorical(a, words[h], rng)
                        }
                    };
                }
            }
            FamilyKind::Hmm | FamilyKind::Lcm => {
                let o = self.params.block(BlockKind::O);
                let mut s = categorical(pi, 0, rng);
                for (i, w) in words.iter_mut().enumerate() {
                    if i > 0 && family.kind == FamilyKind::Hmm {
                        s = categorical(self.params.block(BlockKind::T), s, rng);
                    }
                    *w = categorical(o, s, rng);
                }
            }
        }
        Sentence(words)
    }

    fn sample_span<R: Rng + ?Sized>(
        &self,
        i: usize,
        j: usize,
        state: usize,
        words: &mut [usize],
        rng: &mut R,
    ) {
        if j - i == 1 {
            words[i] = categorical(self.params.block(BlockKind::O), state, rng);
            return;
        }
        // uniform topology: split at m with probability n(m-i) n(j-m) / n(j-i)
        let c = &self.bracket_counts;
        let total = c[j - i] as f64;
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut split = j - 1;
        for m in i + 1..j {
            acc += (c[m - i] * c[j - m]) as f64;
            if u < acc {
                split = m;
                break;
            }
        }
        let k = self.params.family().states();
        let b = self.production.as_ref().expect("constituency production");
        let pair = categorical(b, state, rng);
        self.sample_span(i, split, pair / k, words, rng);
        self.sample_span(split, j, pair % k, words, rng);
    }
}

/// One exact draw from `P(x)` at length `len`, deterministic in `seed`.
pub fn sample_sentence(params: &ModelParams, len: usize, seed: u64) -> Result<Sentence> {
    let sampler = Sampler::new(params, len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample(&mut rng))
}

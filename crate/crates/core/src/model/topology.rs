use crate::error::{Error, Result};

/// Longest sentence for which constituency topologies are enumerated.
pub const MAX_CONSTITUENCY_LEN: usize = 12;
/// Longest sentence for which dependency topologies are enumerated.
pub const MAX_DEPENDENCY_LEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Constituency,
    Dependency,
    /// The single left-to-right chain used by HMMs and latent class models.
    Chain,
}

/// A binary bracketing of `[0, len]`. Spans are stored in preorder, so the
/// root `(0, len)` comes first and each internal span is followed by its left
/// child's subtree.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bracketing {
    len: usize,
    spans: Vec<(usize, usize)>,
    splits: Vec<Option<usize>>,
}

impl Bracketing {
    /// Builds a bracketing from `(start, end, split)` triples in preorder.
    pub fn from_preorder(len: usize, nodes: Vec<((usize, usize), Option<usize>)>) -> Result<Self> {
        let (spans, splits): (Vec<_>, Vec<_>) = nodes.into_iter().unzip();
        let b = Bracketing { len, spans, splits };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<()> {
        if self.spans.first() != Some(&(0, self.len)) {
            return Err(Error::InvalidParams("bracketing must start at the root span".into()));
        }
        if self.spans.len() != 2 * self.len - 1 {
            return Err(Error::InvalidParams(format!(
                "a bracketing of length {} has {} spans, got {}",
                self.len,
                2 * self.len - 1,
                self.spans.len()
            )));
        }
        for (&(i, j), split) in self.spans.iter().zip(&self.splits) {
            match split {
                Some(m) if !(i < *m && *m < j) => {
                    return Err(Error::InvalidParams(format!("split {m} outside ({i}, {j})")))
                }
                None if j - i != 1 => {
                    return Err(Error::InvalidParams(format!("span ({i}, {j}) has no split")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn splits(&self) -> &[Option<usize>] {
        &self.splits
    }

    pub fn index_of(&self, span: (usize, usize)) -> Option<usize> {
        self.spans.iter().position(|&s| s == span)
    }

    /// Index of the preterminal span `(i, i + 1)` covering word `i` (0-based).
    pub fn preterminal(&self, i: usize) -> usize {
        self.index_of((i, i + 1)).expect("every word has a preterminal")
    }
}

/// A projective dependency tree. `heads[i]` is the head of word `i`, `None` for the root.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DependencyTree {
    heads: Vec<Option<usize>>,
}

impl DependencyTree {
    pub fn new(heads: Vec<Option<usize>>) -> Result<Self> {
        let t = DependencyTree { heads };
        if t.heads.iter().filter(|h| h.is_none()).count() != 1 {
            return Err(Error::InvalidParams("dependency tree needs exactly one root".into()));
        }
        if t.heads.iter().flatten().any(|&h| h >= t.heads.len()) {
            return Err(Error::InvalidParams("head index out of range".into()));
        }
        if !t.is_acyclic() {
            return Err(Error::InvalidParams("dependency edges contain a cycle".into()));
        }
        if !t.is_projective() {
            return Err(Error::InvalidParams("dependency tree is not projective".into()));
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn heads(&self) -> &[Option<usize>] {
        &self.heads
    }

    pub fn root(&self) -> usize {
        self.heads.iter().position(|h| h.is_none()).expect("validated root")
    }

    /// Directed edges `(head, dependent)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.heads
            .iter()
            .enumerate()
            .filter_map(|(dep, h)| h.map(|h| (h, dep)))
    }

    /// Path of ancestors from the root down to `i`, inclusive.
    pub fn path_from_root(&self, i: usize) -> Vec<usize> {
        let mut path = vec![i];
        let mut cur = i;
        while let Some(h) = self.heads[cur] {
            path.push(h);
            cur = h;
        }
        path.reverse();
        path
    }

    pub fn dominates(&self, ancestor: usize, mut node: usize) -> bool {
        loop {
            if node == ancestor {
                return true;
            }
            match self.heads[node] {
                Some(h) => node = h,
                None => return false,
            }
        }
    }

    fn is_acyclic(&self) -> bool {
        let n = self.heads.len();
        (0..n).all(|start| {
            let mut cur = start;
            for _ in 0..=n {
                match self.heads[cur] {
                    Some(h) => cur = h,
                    None => return true,
                }
            }
            false
        })
    }

    /// Every word strictly between a head and its dependent is dominated by the head.
    fn is_projective(&self) -> bool {
        self.edges().all(|(h, dep)| {
            let (lo, hi) = if h < dep { (h, dep) } else { (dep, h) };
            (lo + 1..hi).all(|m| self.dominates(h, m))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Topology {
    Constituency(Bracketing),
    Dependency(DependencyTree),
    Chain(usize),
}

impl Topology {
    pub fn len(&self) -> usize {
        match self {
            Topology::Constituency(b) => b.len(),
            Topology::Dependency(t) => t.len(),
            Topology::Chain(l) => *l,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TopologyKind {
        match self {
            Topology::Constituency(_) => TopologyKind::Constituency,
            Topology::Dependency(_) => TopologyKind::Dependency,
            Topology::Chain(_) => TopologyKind::Chain,
        }
    }
}

/// All topologies of the given kind over `len` words, without duplicates.
pub fn enumerate_topologies(kind: TopologyKind, len: usize) -> Result<Vec<Topology>> {
    if len == 0 {
        return Err(Error::InvalidParams("sentence length must be at least 1".into()));
    }
    match kind {
        TopologyKind::Constituency => {
            if len > MAX_CONSTITUENCY_LEN {
                return Err(Error::EnumerationTooLarge(format!(
                    "constituency enumeration refused for L = {len} > {MAX_CONSTITUENCY_LEN}"
                )));
            }
            Ok(bracketings(0, len)
                .into_iter()
                .map(|nodes| {
                    let (spans, splits) = nodes.into_iter().unzip();
                    Topology::Constituency(Bracketing { len, spans, splits })
                })
                .collect())
        }
        TopologyKind::Dependency => {
            if len > MAX_DEPENDENCY_LEN {
                return Err(Error::EnumerationTooLarge(format!(
                    "dependency enumeration refused for L = {len} > {MAX_DEPENDENCY_LEN}"
                )));
            }
            Ok(dependency_trees(len).into_iter().map(Topology::Dependency).collect())
        }
        TopologyKind::Chain => Ok(vec![Topology::Chain(len)]),
    }
}

/// Number of topologies. Constituency counts use the split recurrence;
/// dependency counts come from enumeration.
pub fn tree_count(kind: TopologyKind, len: usize) -> Result<u64> {
    match kind {
        TopologyKind::Constituency => Ok(bracketing_counts(len)[len]),
        TopologyKind::Dependency => Ok(enumerate_topologies(kind, len)?.len() as u64),
        TopologyKind::Chain => Ok(1),
    }
}

/// `counts[w]` is the number of binary bracketings over `w` words.
pub(crate) fn bracketing_counts(len: usize) -> Vec<u64> {
    let mut counts = vec![0u64; len.max(1) + 1];
    counts[1] = 1;
    for w in 2..=len {
        counts[w] = (1..w).map(|a| counts[a] * counts[w - a]).sum();
    }
    counts
}

type Node = ((usize, usize), Option<usize>);

fn bracketings(i: usize, j: usize) -> Vec<Vec<Node>> {
    if j - i == 1 {
        return vec![vec![((i, j), None)]];
    }
    let mut out = Vec::new();
    for m in i + 1..j {
        let left = bracketings(i, m);
        let right = bracketings(m, j);
        for l in &left {
            for r in &right {
                let mut nodes = Vec::with_capacity(1 + l.len() + r.len());
                nodes.push(((i, j), Some(m)));
                nodes.extend_from_slice(l);
                nodes.extend_from_slice(r);
                out.push(nodes);
            }
        }
    }
    out
}

/// Backtracks over head assignments with a single root, keeping the acyclic
/// projective ones.
fn dependency_trees(len: usize) -> Vec<DependencyTree> {
    fn go(pos: usize, heads: &mut Vec<Option<usize>>, has_root: bool, out: &mut Vec<DependencyTree>) {
        let len = heads.len();
        if pos == len {
            if has_root {
                let t = DependencyTree { heads: heads.clone() };
                if t.is_acyclic() && t.is_projective() {
                    out.push(t);
                }
            }
            return;
        }
        if !has_root {
            heads[pos] = None;
            go(pos + 1, heads, true, out);
        }
        for h in 0..len {
            if h != pos {
                heads[pos] = Some(h);
                go(pos + 1, heads, has_root, out);
            }
        }
        heads[pos] = None;
    }
    let mut out = Vec::new();
    go(0, &mut vec![None; len], false, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn catalan(n: u64) -> u64 {
        // C(n) = (2n)! / ((n+1)! n!) computed incrementally
        let mut c = 1u64;
        for i in 0..n {
            c = c * 2 * (2 * i + 1) / (i + 2);
        }
        c
    }

    #[test]
    fn constituency_counts() {
        let count = |l| enumerate_topologies(TopologyKind::Constituency, l).unwrap().len();
        assert_eq!(count(1), 1);
        assert_eq!(count(2), 1);
        assert_eq!(count(3), 2);
        assert_eq!(count(4), 5);
        for l in 1..=8 {
            assert_eq!(count(l) as u64, catalan(l as u64 - 1), "L = {l}");
            assert_eq!(tree_count(TopologyKind::Constituency, l).unwrap(), catalan(l as u64 - 1));
        }
    }

    #[test]
    fn dependency_counts() {
        let count = |l| enumerate_topologies(TopologyKind::Dependency, l).unwrap().len();
        assert_eq!(count(1), 1);
        assert_eq!(count(2), 2);
        assert_eq!(count(3), 7);
        assert_eq!(count(4), 30);
        assert_eq!(count(5), 143);
    }

    #[test]
    fn dependency_l3_is_the_seven_trees() {
        let trees: HashSet<Vec<Option<usize>>> = enumerate_topologies(TopologyKind::Dependency, 3)
            .unwrap()
            .into_iter()
            .map(|t| match t {
                Topology::Dependency(t) => t.heads().to_vec(),
                _ => unreachable!(),
            })
            .collect();
        // the two excluded arborescences send the middle root's grandchild across it
        assert!(!trees.contains(&vec![Some(1), None, Some(0)]));
        assert!(!trees.contains(&vec![Some(2), None, Some(1)]));
        assert!(trees.contains(&vec![None, Some(2), Some(0)]));
        assert!(trees.contains(&vec![Some(1), None, Some(1)]));
        assert_eq!(trees.len(), 7);
    }

    #[test]
    fn enumeration_is_duplicate_free() {
        for l in 1..=6 {
            let all = enumerate_topologies(TopologyKind::Constituency, l).unwrap();
            let set: HashSet<_> = all.iter().collect();
            assert_eq!(set.len(), all.len());
        }
        let all = enumerate_topologies(TopologyKind::Dependency, 5).unwrap();
        let set: HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), all.len());
    }

    #[test]
    fn guards() {
        assert!(matches!(
            enumerate_topologies(TopologyKind::Constituency, 13),
            Err(Error::EnumerationTooLarge(_))
        ));
        assert!(matches!(
            enumerate_topologies(TopologyKind::Dependency, 9),
            Err(Error::EnumerationTooLarge(_))
        ));
        assert!(enumerate_topologies(TopologyKind::Chain, 0).is_err());
    }

    #[test]
    fn bracketing_invariants() {
        for t in enumerate_topologies(TopologyKind::Constituency, 5).unwrap() {
            let Topology::Constituency(b) = t else { unreachable!() };
            assert_eq!(b.spans()[0], (0, 5));
            b.check().unwrap();
            for i in 0..5 {
                let _ = b.preterminal(i);
            }
        }
    }

    #[test]
    fn non_projective_tree_rejected() {
        // 0 -> 2 and 1 -> 3 cross
        let err = DependencyTree::new(vec![None, Some(0), Some(0), Some(1)]).unwrap_err();
        assert!(err.to_string().contains("projective"));
        assert!(DependencyTree::new(vec![None, None]).is_err());
        assert!(DependencyTree::new(vec![Some(1), Some(0), None]).is_err());
    }
}

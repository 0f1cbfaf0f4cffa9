//! Model families, their parameter spaces and the free-coordinate parameterization.
//!
//! Every parameter block is stored as a column-stochastic matrix; the initial
//! distribution is a single-column block. Blocks are laid out in a fixed
//! per-family order (see [`ModelFamily::layout`]), and the *raw* parameter
//! vector concatenates the blocks column by column. Hypergraph edges index into
//! that raw vector.

mod io;
mod prob;
pub(crate) mod topology;

pub use io::ParamFile;
pub use prob::{joint_prob, marginal_prob, sample_sentence, Derivation, Sampler, Sentence};
pub use topology::{
    enumerate_topologies, tree_count, Bracketing, DependencyTree, Topology, TopologyKind,
    MAX_CONSTITUENCY_LEN, MAX_DEPENDENCY_LEN,
};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on column sums of stored parameters.
pub const COLUMN_SUM_TOL: f64 = 1e-12;

/// Tolerance on `A pi = pi` for the stationary dependency family.
pub const STATIONARY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Pcfg,
    PcfgI,
    PcfgIe,
    DepI,
    DepIe,
    DepIes,
    Hmm,
    Lcm,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 8] = [
        FamilyKind::Pcfg,
        FamilyKind::PcfgI,
        FamilyKind::PcfgIe,
        FamilyKind::DepI,
        FamilyKind::DepIe,
        FamilyKind::DepIes,
        FamilyKind::Hmm,
        FamilyKind::Lcm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Pcfg => "pcfg",
            FamilyKind::PcfgI => "pcfg-i",
            FamilyKind::PcfgIe => "pcfg-ie",
            FamilyKind::DepI => "dep-i",
            FamilyKind::DepIe => "dep-ie",
            FamilyKind::DepIes => "dep-ies",
            FamilyKind::Hmm => "hmm",
            FamilyKind::Lcm => "lcm",
        }
    }

    pub fn is_dependency(self) -> bool {
        matches!(self, FamilyKind::DepI | FamilyKind::DepIe | FamilyKind::DepIes)
    }

    pub fn is_constituency(self) -> bool {
        matches!(self, FamilyKind::Pcfg | FamilyKind::PcfgI | FamilyKind::PcfgIe)
    }

    pub fn topology_kind(self) -> TopologyKind {
        if self.is_constituency() {
            TopologyKind::Constituency
        } else if self.is_dependency() {
            TopologyKind::Dependency
        } else {
            TopologyKind::Chain
        }
    }

    /// Parameter blocks in storage order.
    pub fn layout(self) -> &'static [BlockKind] {
        use BlockKind::*;
        match self {
            FamilyKind::Pcfg => &[Pi, B, O],
            FamilyKind::PcfgI => &[Pi, T1, T2, O],
            FamilyKind::PcfgIe => &[Pi, T, O],
            FamilyKind::DepI => &[Pi, ALeft, ARight],
            FamilyKind::DepIe | FamilyKind::DepIes => &[Pi, A],
            FamilyKind::Hmm => &[Pi, T, O],
            FamilyKind::Lcm => &[Pi, O],
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        FamilyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::Parse(format!("unknown model family `{s}`")))
    }
}

/// One column-stochastic parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Pi,
    B,
    T,
    T1,
    T2,
    O,
    A,
    ALeft,
    ARight,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Pi => "pi",
            BlockKind::B => "B",
            BlockKind::T => "T",
            BlockKind::T1 => "T1",
            BlockKind::T2 => "T2",
            BlockKind::O => "O",
            BlockKind::A => "A",
            BlockKind::ALeft => "A_left",
            BlockKind::ARight => "A_right",
        }
    }
}

/// A model family together with its dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelFamily {
    pub kind: FamilyKind,
    /// Hidden-state count; `None` for dependency families, whose states are words.
    pub k: Option<usize>,
    pub d: usize,
}

impl ModelFamily {
    pub fn new(kind: FamilyKind, k: usize, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParams("d must be at least 1".into()));
        }
        if kind.is_dependency() {
            return Ok(ModelFamily { kind, k: None, d });
        }
        if k == 0 {
            return Err(Error::InvalidParams("k must be at least 1".into()));
        }
        Ok(ModelFamily { kind, k: Some(k), d })
    }

    pub fn dependency(kind: FamilyKind, d: usize) -> Result<Self> {
        Self::new(kind, 0, d)
    }

    /// Number of values a tree node takes: `k` for hidden-state models, `d` otherwise.
    pub fn states(&self) -> usize {
        self.k.unwrap_or(self.d)
    }

    pub fn layout(&self) -> &'static [BlockKind] {
        self.kind.layout()
    }

    pub fn block_shape(&self, block: BlockKind) -> (usize, usize) {
        let k = self.states();
        let d = self.d;
        match block {
            BlockKind::Pi => (k, 1),
            BlockKind::B => (k * k, k),
            BlockKind::T | BlockKind::T1 | BlockKind::T2 => (k, k),
            BlockKind::O => (d, k),
            BlockKind::A | BlockKind::ALeft | BlockKind::ARight => (d, d),
        }
    }

    /// Whether a block is a function of the others rather than a free parameter.
    pub fn is_derived(&self, block: BlockKind) -> bool {
        self.kind == FamilyKind::DepIes && block == BlockKind::Pi
    }

    /// Length of the raw parameter vector (all stored probabilities).
    pub fn raw_len(&self) -> usize {
        self.layout()
            .iter()
            .map(|&b| {
                let (r, c) = self.block_shape(b);
                r * c
            })
            .sum()
    }

    /// Offset of `block` within the raw parameter vector.
    pub fn raw_offset(&self, block: BlockKind) -> usize {
        let mut off = 0;
        for &b in self.layout() {
            if b == block {
                return off;
            }
            let (r, c) = self.block_shape(b);
            off += r * c;
        }
        panic!("block {} not in the {} layout", block.name(), self.kind);
    }

    /// Raw index of entry `(row, col)` of `block`.
    pub fn raw_index(&self, block: BlockKind, row: usize, col: usize) -> usize {
        let (rows, _) = self.block_shape(block);
        self.raw_offset(block) + col * rows + row
    }

    /// Number of free coordinates: each stochastic column of length `m`
    /// contributes `m - 1`, and derived blocks contribute nothing.
    pub fn free_len(&self) -> usize {
        self.layout()
            .iter()
            .filter(|&&b| !self.is_derived(b))
            .map(|&b| {
                let (r, c) = self.block_shape(b);
                (r - 1) * c
            })
            .sum()
    }

    /// Human-readable name of each free coordinate, e.g. `T[0,1]`.
    pub fn free_coordinate_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.free_len());
        for &b in self.layout() {
            if self.is_derived(b) {
                continue;
            }
            let (r, c) = self.block_shape(b);
            for col in 0..c {
                for row in 0..r - 1 {
                    names.push(format!("{}[{},{}]", b.name(), row, col));
                }
            }
        }
        names
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.k {
            Some(k) => write!(f, "{}(k={}, d={})", self.kind, k, self.d),
            None => write!(f, "{}(d={})", self.kind, self.d),
        }
    }
}

/// Parameters of one model, as column-stochastic blocks in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    family: ModelFamily,
    blocks: Vec<DMatrix<f64>>,
}

impl ModelParams {
    /// Builds parameters from blocks given in layout order and validates them.
    pub fn new(family: ModelFamily, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let params = Self::new_unchecked(family, blocks)?;
        params.validate()?;
        Ok(params)
    }

    /// Checks shapes only. Used for intermediate estimates that may leave the simplex.
    pub fn new_unchecked(family: ModelFamily, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let layout = family.layout();
        if blocks.len() != layout.len() {
            return Err(Error::Dimension(format!(
                "{} expects {} blocks, got {}",
                family.kind,
                layout.len(),
                blocks.len()
            )));
        }
        for (&b, m) in layout.iter().zip(&blocks) {
            let want = family.block_shape(b);
            if m.shape() != want {
                return Err(Error::Dimension(format!(
                    "block {} has shape {:?}, expected {:?}",
                    b.name(),
                    m.shape(),
                    want
                )));
            }
        }
        Ok(ModelParams { family, blocks })
    }

    /// Builds parameters from named blocks in any order.
    pub fn from_named(family: ModelFamily, named: Vec<(BlockKind, DMatrix<f64>)>) -> Result<Self> {
        let mut blocks = Vec::with_capacity(family.layout().len());
        for &b in family.layout() {
            let m = named
                .iter()
                .find(|(k, _)| *k == b)
                .map(|(_, m)| m.clone())
                .ok_or_else(|| Error::InvalidParams(format!("missing block {}", b.name())))?;
            blocks.push(m);
        }
        Self::new(family, blocks)
    }

    /// Draws every stochastic column from the flat Dirichlet. For the stationary
    /// dependency family `pi` is then set to the stationary distribution of `A`.
    pub fn random<R: Rng + ?Sized>(family: ModelFamily, rng: &mut R) -> Self {
        loop {
            let mut blocks: Vec<DMatrix<f64>> = family
                .layout()
                .iter()
                .map(|&b| {
                    let (r, c) = family.block_shape(b);
                    random_stochastic(r, c, rng)
                })
                .collect();
            if family.kind == FamilyKind::DepIes {
                match stationary_distribution(&blocks[1]) {
                    Ok(pi) => blocks[0] = DMatrix::from_column_slice(pi.len(), 1, pi.as_slice()),
                    Err(_) => continue,
                }
            }
            return ModelParams { family, blocks };
        }
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn get(&self, block: BlockKind) -> Option<&DMatrix<f64>> {
        self.family
            .layout()
            .iter()
            .position(|&b| b == block)
            .map(|i| &self.blocks[i])
    }

    /// Panics if the block is not part of this family's layout.
    pub fn block(&self, block: BlockKind) -> &DMatrix<f64> {
        self.get(block)
            .unwrap_or_else(|| panic!("{} has no block {}", self.family.kind, block.name()))
    }

    pub fn pi(&self) -> DVector<f64> {
        self.block(BlockKind::Pi).column(0).into_owned()
    }

    /// Left-argument and right-argument transition matrices of a dependency model.
    pub fn dependency_arguments(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match self.family.kind {
            FamilyKind::DepI => (self.block(BlockKind::ALeft), self.block(BlockKind::ARight)),
            FamilyKind::DepIe | FamilyKind::DepIes => {
                let a = self.block(BlockKind::A);
                (a, a)
            }
            other => panic!("{other} is not a dependency family"),
        }
    }

    /// Left and right child transitions of a factorized constituency model.
    pub fn child_transitions(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        match self.family.kind {
            FamilyKind::PcfgI => Some((self.block(BlockKind::T1), self.block(BlockKind::T2))),
            FamilyKind::PcfgIe => {
                let t = self.block(BlockKind::T);
                Some((t, t))
            }
            _ => None,
        }
    }

    /// The `k^2 x k` binary production matrix; materialized as a columnwise
    /// tensor product for the factorized families.
    pub fn production_matrix(&self) -> Option<DMatrix<f64>> {
        match self.family.kind {
            FamilyKind::Pcfg => Some(self.block(BlockKind::B).clone()),
            FamilyKind::PcfgI | FamilyKind::PcfgIe => {
                let (t1, t2) = self.child_transitions()?;
                Some(columnwise_tensor(t1, t2))
            }
            _ => None,
        }
    }

    /// Reports the first violated invariant.
    pub fn validate(&self) -> Result<()> {
        for (&b, m) in self.family.layout().iter().zip(&self.blocks) {
            for (c, col) in m.column_iter().enumerate() {
                if let Some(v) = col.iter().find(|v| !(0.0..=1.0).contains(*v) || v.is_nan()) {
                    return Err(Error::InvalidParams(format!(
                        "{} column {c} has entry {v} outside [0, 1]",
                        b.name()
                    )));
                }
                let s: f64 = col.sum();
                if (s - 1.0).abs() > COLUMN_SUM_TOL {
                    return Err(Error::InvalidParams(format!(
                        "{} column {c} sums to {s}, not 1",
                        b.name()
                    )));
                }
            }
        }
        if self.family.kind == FamilyKind::DepIes {
            let pi = self.pi();
            let resid = (self.block(BlockKind::A) * &pi - &pi).amax();
            if resid > STATIONARY_TOL {
                return Err(Error::InvalidParams(format!(
                    "pi is not stationary under A (|A pi - pi|_inf = {resid:e})"
                )));
            }
        }
        Ok(())
    }

    /// All stored probabilities, block by block, column-major.
    pub fn raw_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.family.raw_len());
        for m in &self.blocks {
            v.extend_from_slice(m.as_slice());
        }
        v
    }

    /// Free coordinates: every column entry except the last row's.
    pub fn vectorize(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.family.free_len());
        for (&b, m) in self.family.layout().iter().zip(&self.blocks) {
            if self.family.is_derived(b) {
                continue;
            }
            for col in m.column_iter() {
                v.extend(col.iter().take(col.len() - 1));
            }
        }
        DVector::from_vec(v)
    }

    /// Inverse of [`ModelParams::vectorize`]. Rejects vectors whose implied
    /// entries leave `[0, 1]`.
    pub fn unvectorize(family: ModelFamily, theta: &[f64]) -> Result<Self> {
        if theta.len() != family.free_len() {
            return Err(Error::Dimension(format!(
                "{} has {} free coordinates, got {}",
                family,
                family.free_len(),
                theta.len()
            )));
        }
        let mut blocks = Vec::with_capacity(family.layout().len());
        let mut pos = 0;
        for &b in family.layout() {
            let (r, c) = family.block_shape(b);
            if family.is_derived(b) {
                blocks.push(DMatrix::zeros(r, c));
                continue;
            }
            let mut m = DMatrix::zeros(r, c);
            for col in 0..c {
                let mut last = 1.0;
                for row in 0..r - 1 {
                    let v = theta[pos];
                    pos += 1;
                    m[(row, col)] = v;
                    last -= v;
                }
                // entries within rounding of zero are snapped
                if last.abs() < 1e-15 {
                    last = 0.0;
                }
                m[(r - 1, col)] = last;
            }
            blocks.push(m);
        }
        if family.kind == FamilyKind::DepIes {
            let pi = stationary_distribution(&blocks[1])?;
            blocks[0] = DMatrix::from_column_slice(pi.len(), 1, pi.as_slice());
        }
        let params = ModelParams::new_unchecked(family, blocks)?;
        for (&b, m) in family.layout().iter().zip(&params.blocks) {
            if let Some(v) = m.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidParams(format!(
                    "free vector implies {} entry {v} outside [0, 1]",
                    b.name()
                )));
            }
        }
        Ok(params)
    }
}

/// `(A ⊗col B)[(i1 * m + i2), j] = A[i1, j] * B[i2, j]` with 0-based indices.
pub fn columnwise_tensor(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.shape(), b.shape(), "columnwise tensor needs equal shapes");
    let (m, n) = a.shape();
    DMatrix::from_fn(m * m, n, |r, j| a[(r / m, j)] * b[(r % m, j)])
}

/// Matrix with independent flat-Dirichlet columns.
pub fn random_stochastic<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        let draws: Vec<f64> = (0..rows).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        for (r, v) in draws.into_iter().enumerate() {
            m[(r, c)] = v / total;
        }
        // force an exact unit column sum on the last entry
        let head: f64 = (0..rows - 1).map(|r| m[(r, c)]).sum();
        m[(rows - 1, c)] = (1.0 - head).max(0.0);
    }
    m
}

/// Unique stationary distribution of a column-stochastic matrix.
///
/// Fails when the null space of `A - I` is more than one-dimensional, which
/// happens for reducible chains such as the identity.
pub fn stationary_distribution(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::Dimension(format!("A is {}x{}, not square", d, a.ncols())));
    }
    if d == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let shifted = a - DMatrix::identity(d, d);
    let dec = crate::spectral::svd(&shifted);
    let sv = &dec.singular_values;
    // nullity > 1 means the second smallest singular value also vanishes
    let scale = sv[0].max(1.0);
    if sv[d - 2] <= 1e-10 * scale {
        return Err(Error::Reducible(
            "stationary distribution is not unique; perturb A to make it irreducible".into(),
        ));
    }
    let null = dec.v.column(d - 1).into_owned();
    let total: f64 = null.sum();
    if total.abs() < 1e-300 {
        return Err(Error::Reducible("null vector of A - I sums to zero".into()));
    }
    let mut pi = null / total;
    for v in pi.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-9 {
                return Err(Error::Reducible(format!(
                    "null vector of A - I has a negative entry {v}"
                )));
            }
            *v = 0.0;
        }
    }
    let total: f64 = pi.sum();
    Ok(pi / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn free_counts() {
        let f = ModelFamily::new(FamilyKind::PcfgIe, 2, 2).unwrap();
        assert_eq!(f.free_len(), 5);
        let f = ModelFamily::dependency(FamilyKind::DepIes, 2).unwrap();
        assert_eq!(f.free_len(), 2);
        let f = ModelFamily::new(FamilyKind::Pcfg, 2, 3).unwrap();
        assert_eq!(f.free_len(), 1 + 2 * 3 + 2 * 2);
        let f = ModelFamily::dependency(FamilyKind::DepI, 3).unwrap();
        assert_eq!(f.free_len(), 2 + 6 + 6);
    }

    #[test]
    fn dependency_family_has_no_k() {
        let f = ModelFamily::new(FamilyKind::DepIe, 5, 3).unwrap();
        assert_eq!(f.k, None);
        assert_eq!(f.states(), 3);
        assert!(ModelFamily::new(FamilyKind::Hmm, 0, 3).is_err());
        assert!(ModelFamily::new(FamilyKind::Hmm, 2, 0).is_err());
    }

    #[test]
    fn parse_family_names() {
        assert_eq!("PCFG_IE".parse::<FamilyKind>().unwrap(), FamilyKind::PcfgIe);
        assert_eq!("dep-ies".parse::<FamilyKind>().unwrap(), FamilyKind::DepIes);
        assert!("pcfg-x".parse::<FamilyKind>().is_err());
    }

    #[test]
    fn random_params_are_valid() {
        let mut r = rng();
        for kind in FamilyKind::ALL {
            let f = ModelFamily::new(kind, 3, 2).unwrap();
            let p = ModelParams::random(f, &mut r);
            p.validate().unwrap();
        }
    }

    #[test]
    fn vectorize_round_trip() {
        let mut r = rng();
        for kind in FamilyKind::ALL {
            let f = ModelFamily::new(kind, 2, 3).unwrap();
            let p = ModelParams::random(f, &mut r);
            let v = p.vectorize();
            assert_eq!(v.len(), f.free_len());
            let q = ModelParams::unvectorize(f, v.as_slice()).unwrap();
            // the dropped entry comes back as 1 - (sum of the others)
            let tol = if kind == FamilyKind::DepIes { 1e-12 } else { 1e-15 };
            for (a, b) in p.blocks().iter().zip(q.blocks()) {
                assert!((a - b).amax() < tol);
            }
        }
    }

    #[test]
    fn unvectorize_rejects_out_of_simplex() {
        let f = ModelFamily::new(FamilyKind::Lcm, 2, 2).unwrap();
        // pi free coord 1.5 implies a negative last entry
        assert!(ModelParams::unvectorize(f, &[1.5, 0.5, 0.5]).is_err());
        assert!(ModelParams::unvectorize(f, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn validate_reports_bad_column() {
        let f = ModelFamily::new(FamilyKind::Lcm, 2, 2).unwrap();
        let pi = DMatrix::from_column_slice(2, 1, &[0.5, 0.6]);
        let o = DMatrix::identity(2, 2);
        let err = ModelParams::new(f, vec![pi, o]).unwrap_err();
        assert!(err.to_string().contains("pi column 0"));
    }

    #[test]
    fn stationary_doubly_stochastic_is_uniform() {
        let a = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.3, 0.2, 0.5, 0.5, 0.3, 0.2]);
        let pi = stationary_distribution(&a).unwrap();
        for v in pi.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_matches_power_iteration() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8]);
        let pi = stationary_distribution(&a).unwrap();
        assert!((&a * &pi - &pi).amax() < 1e-12);
        // independent route: iterate the chain long enough to converge
        let mut p = DVector::from_vec(vec![0.5, 0.5]);
        for _ in 0..2000 {
            p = &a * p;
        }
        assert!((p - &pi).amax() < 1e-12);
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_of_identity_is_an_error() {
        let err = stationary_distribution(&DMatrix::identity(3, 3)).unwrap_err();
        assert!(matches!(err, Error::Reducible(_)));
    }

    #[test]
    fn columnwise_tensor_layout() {
        let t = DMatrix::from_row_slice(2, 2, &[0.3, 0.6, 0.7, 0.4]);
        let b = columnwise_tensor(&t, &t);
        assert_eq!(b.shape(), (4, 2));
        // row (i1, i2) = i1 * 2 + i2
        assert!((b[(1, 0)] - 0.3 * 0.7).abs() < 1e-15);
        assert!((b[(2, 1)] - 0.4 * 0.6).abs() < 1e-15);
        for c in 0..2 {
            assert!((b.column(c).sum() - 1.0).abs() < 1e-15);
        }
    }
}

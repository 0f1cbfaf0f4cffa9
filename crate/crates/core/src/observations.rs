//! Observation functions over sentences and the moments they induce.
//!
//! Conventions:
//! - `Pairs` is `x_1 ⊗ x_2` only; `AllPairs` is every `x_i ⊗ x_j` with `i < j`.
//! - `Triples` is the full tensor `x_1 ⊗ x_2 ⊗ x_3`; `AllTriples` covers every `i < j < k`.
//! - `AllThinTriples{η}` takes every unordered triple `{i, j, k}` and each
//!   choice of projected position, with the two observed positions in
//!   increasing order. At `L = 3` that is `123η`, `132η` and `231η`.
//!   `ThinTriples{η}` is the same three contractions of the first triple only.
//! - `FirstMoment` is `x_1`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sentence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationFamily {
    Pairs,
    AllPairs,
    ThinTriples,
    Triples,
    AllThinTriples,
    AllTriples,
    FirstMoment,
}

impl ObservationFamily {
    pub const ALL: [ObservationFamily; 7] = [
        ObservationFamily::Pairs,
        ObservationFamily::AllPairs,
        ObservationFamily::ThinTriples,
        ObservationFamily::Triples,
        ObservationFamily::AllThinTriples,
        ObservationFamily::AllTriples,
        ObservationFamily::FirstMoment,
    ];

    /// The six families used in identifiability tables.
    pub const TABLE: [ObservationFamily; 6] = [
        ObservationFamily::Pairs,
        ObservationFamily::AllPairs,
        ObservationFamily::ThinTriples,
        ObservationFamily::Triples,
        ObservationFamily::AllThinTriples,
        ObservationFamily::AllTriples,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObservationFamily::Pairs => "pairs",
            ObservationFamily::AllPairs => "all-pairs",
            ObservationFamily::ThinTriples => "thin-triples",
            ObservationFamily::Triples => "triples",
            ObservationFamily::AllThinTriples => "all-thin-triples",
            ObservationFamily::AllTriples => "all-triples",
            ObservationFamily::FirstMoment => "first-moment",
        }
    }

    pub fn is_thin(self) -> bool {
        matches!(self, ObservationFamily::ThinTriples | ObservationFamily::AllThinTriples)
    }

    /// Number of distinct positions each observation touches.
    pub fn arity(self) -> usize {
        match self {
            ObservationFamily::FirstMoment => 1,
            ObservationFamily::Pairs | ObservationFamily::AllPairs => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for ObservationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObservationFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        ObservationFamily::ALL
            .into_iter()
            .find(|f| f.name().replace('-', "") == norm)
            .ok_or_else(|| Error::Parse(format!("unknown observation family `{s}`")))
    }
}

/// A projection vector applied to one position of a thin triple.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub tag: String,
    pub eta: DVector<f64>,
}

impl Projection {
    pub fn ones(d: usize) -> Self {
        Projection { tag: "1".into(), eta: DVector::from_element(d, 1.0) }
    }

    /// The standard basis vector `e_i` (1-based `i`).
    pub fn basis(d: usize, i: usize) -> Self {
        let mut eta = DVector::zeros(d);
        eta[i - 1] = 1.0;
        Projection { tag: format!("e{i}"), eta }
    }

    /// `τ` drawn uniformly from `[0, 1]^d`.
    pub fn random(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = DVector::from_fn(d, |_, _| rng.random::<f64>());
        Projection { tag: "tau".into(), eta }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSpec {
    pub family: ObservationFamily,
    pub projections: Vec<Projection>,
}

impl ObservationSpec {
    pub fn new(family: ObservationFamily, projections: Vec<Projection>) -> Result<Self> {
        if family.is_thin() && projections.is_empty() {
            return Err(Error::InvalidParams(format!("{family} needs at least one projection")));
        }
        if !family.is_thin() && !projections.is_empty() {
            return Err(Error::InvalidParams(format!("{family} takes no projection")));
        }
        let d = projections.first().map(|p| p.eta.len());
        if projections.iter().any(|p| Some(p.eta.len()) != d) {
            return Err(Error::Dimension("projections have different lengths".into()));
        }
        for (i, p) in projections.iter().enumerate() {
            if projections[..i].iter().any(|q| q.tag == p.tag) {
                return Err(Error::InvalidParams(format!("duplicate projection tag `{}`", p.tag)));
            }
        }
        Ok(ObservationSpec { family, projections })
    }

    /// Full-tensor or pair family, no projection.
    pub fn plain(family: ObservationFamily) -> Result<Self> {
        Self::new(family, Vec::new())
    }

    /// Default spec for a family at vocabulary size `d`, as used by the
    /// identifiability tables: thin families project with `e_1` and also
    /// observe the `η = 1` contractions, which are the induced pairs.
    pub fn table_default(family: ObservationFamily, d: usize) -> Self {
        let projections =
            if family.is_thin() { vec![Projection::basis(d, 1), Projection::ones(d)] } else { vec![] };
        ObservationSpec { family, projections }
    }

    /// Thin family observed at `η = 1` and a seeded random `η = τ`.
    pub fn ones_and_tau(family: ObservationFamily, d: usize, seed: u64) -> Result<Self> {
        Self::new(family, vec![Projection::ones(d), Projection::random(d, seed)])
    }

    pub fn projection(&self, tag: &str) -> Option<&Projection> {
        self.projections.iter().find(|p| p.tag == tag)
    }
}

/// One observation matrix: observed positions (0-based, increasing) and,
/// for thin triples, the projected position and its projection tag.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObservationId {
    pub observed: Vec<usize>,
    pub projected: Option<usize>,
    pub eta: Option<String>,
}

impl ObservationId {
    pub fn pair(i: usize, j: usize) -> Self {
        ObservationId { observed: vec![i, j], projected: None, eta: None }
    }

    pub fn thin(i: usize, j: usize, k: usize, eta: &str) -> Self {
        ObservationId { observed: vec![i, j], projected: Some(k), eta: Some(eta.to_string()) }
    }

    /// Order of the moment tensor.
    pub fn order(&self) -> usize {
        self.observed.len()
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed.iter().copied().chain(self.projected)
    }

    pub fn max_position(&self) -> usize {
        self.positions().max().unwrap_or(0)
    }

    /// Same positions with a different projection tag.
    pub fn with_eta(&self, tag: &str) -> Self {
        ObservationId { eta: self.projected.map(|_| tag.to_string()), ..self.clone() }
    }
}

impl fmt::Display for ObservationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pos: Vec<usize> = self.positions().map(|p| p + 1).collect();
        if pos.iter().all(|&p| p < 10) {
            for p in &pos {
                write!(f, "{p}")?;
            }
        } else {
            let joined: Vec<String> = pos.iter().map(|p| p.to_string()).collect();
            f.write_str(&joined.join("_"))?;
        }
        if let Some(tag) = &self.eta {
            write!(f, "eta{tag}")?;
        }
        Ok(())
    }
}

impl FromStr for ObservationId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (pos_part, eta) = match s.split_once("eta") {
            Some((p, tag)) => (p, Some(tag.to_string())),
            None => (s, None),
        };
        let bad = || Error::Parse(format!("bad observation id `{s}`"));
        let pos: Vec<usize> = if pos_part.contains('_') {
            pos_part.split('_').map(|t| t.parse::<usize>().map_err(|_| bad())).collect::<Result<_>>()?
        } else {
            pos_part
                .chars()
                .map(|c| c.to_digit(10).map(|v| v as usize).ok_or_else(bad))
                .collect::<Result<_>>()?
        };
        if pos.is_empty() || pos.contains(&0) {
            return Err(bad());
        }
        let mut pos: Vec<usize> = pos.into_iter().map(|p| p - 1).collect();
        let projected = if eta.is_some() { pos.pop() } else { None };
        if eta.is_some() && (projected.is_none() || pos.len() != 2) {
            return Err(bad());
        }
        Ok(ObservationId { observed: pos, projected, eta })
    }
}

/// Observation ids of `spec` at sentence length `len`. Lengths below the
/// family's arity give an empty list.
pub fn enumerate_observations(spec: &ObservationSpec, len: usize) -> Vec<ObservationId> {
    let fam = spec.family;
    if len < fam.arity() {
        return Vec::new();
    }
    let plain = |observed: Vec<usize>| ObservationId { observed, projected: None, eta: None };
    match fam {
        ObservationFamily::FirstMoment => vec![plain(vec![0])],
        ObservationFamily::Pairs => vec![plain(vec![0, 1])],
        ObservationFamily::Triples => vec![plain(vec![0, 1, 2])],
        ObservationFamily::AllPairs => {
            let mut out = Vec::new();
            for i in 0..len {
                for j in i + 1..len {
                    out.push(plain(vec![i, j]));
                }
            }
            out
        }
        ObservationFamily::AllTriples => {
            let mut out = Vec::new();
            for i in 0..len {
                for j in i + 1..len {
                    for k in j + 1..len {
                        out.push(plain(vec![i, j, k]));
                    }
                }
            }
            out
        }
        ObservationFamily::ThinTriples => spec
            .projections
            .iter()
            .flat_map(|p| {
                [
                    ObservationId::thin(0, 1, 2, &p.tag),
                    ObservationId::thin(0, 2, 1, &p.tag),
                    ObservationId::thin(1, 2, 0, &p.tag),
                ]
            })
            .collect(),
        ObservationFamily::AllThinTriples => {
            let mut out = Vec::new();
            for p in &spec.projections {
                let mut block = Vec::new();
                for i in 0..len {
                    for j in i + 1..len {
                        for k in j + 1..len {
                            block.push(ObservationId::thin(i, j, k, &p.tag));
                            block.push(ObservationId::thin(i, k, j, &p.tag));
                            block.push(ObservationId::thin(j, k, i, &p.tag));
                        }
                    }
                }
                block.sort();
                out.extend(block);
            }
            out
        }
    }
}

/// A dense moment tensor of order 1, 2 or 3 over `d` words, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Moment {
    pub order: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl Moment {
    pub fn zeros(order: usize, d: usize) -> Self {
        Moment { order, d, values: vec![0.0; d.pow(order as u32)] }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let d = m.nrows();
        Moment { order: 2, d, values: m.transpose().as_slice().to_vec() }
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.order, 2, "moment of order {} is not a matrix", self.order);
        DMatrix::from_row_slice(self.d, self.d, &self.values)
    }

    pub fn as_vector(&self) -> DVector<f64> {
        assert_eq!(self.order, 1, "moment of order {} is not a vector", self.order);
        DVector::from_column_slice(&self.values)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Flat row-major index of a word tuple.
    pub fn index(&self, words: &[usize]) -> usize {
        words.iter().fold(0, |acc, &w| acc * self.d + w)
    }

    /// Contracts the last slot of an order-3 tensor against `eta`.
    pub fn contract_last(&self, eta: &DVector<f64>) -> Moment {
        assert_eq!(self.order, 3);
        let d = self.d;
        let mut out = Moment::zeros(2, d);
        for ab in 0..d * d {
            out.values[ab] = (0..d).map(|c| self.values[ab * d + c] * eta[c]).sum();
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Moment) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-position factors of one coordinate of one observation: `Some(v)` means
/// the word at that position is weighted by `v[word]`.
pub fn coordinate_factors(
    spec: &ObservationSpec,
    id: &ObservationId,
    coordinate: usize,
    len: usize,
    d: usize,
) -> Result<Vec<Option<DVector<f64>>>> {
    let mut factors: Vec<Option<DVector<f64>>> = vec![None; len];
    let mut rest = coordinate;
    for &p in id.observed.iter().rev() {
        let w = rest % d;
        rest /= d;
        let mut v = DVector::zeros(d);
        v[w] = 1.0;
        factors[p] = Some(v);
    }
    if let Some(k) = id.projected {
        let tag = id.eta.as_deref().unwrap_or_default();
        let proj = spec
            .projection(tag)
            .ok_or_else(|| Error::InvalidParams(format!("unknown projection `{tag}`")))?;
        factors[k] = Some(proj.eta.clone());
    }
    Ok(factors)
}

/// `φ_o(x)`: a one-hot outer product, scaled by `η·x_k` for thin triples.
pub fn eval_phi(spec: &ObservationSpec, id: &ObservationId, x: &Sentence, d: usize) -> Result<Moment> {
    x.check(d)?;
    if id.max_position() >= x.len() {
        return Err(Error::Dimension(format!(
            "observation {id} reaches past a sentence of length {}",
            x.len()
        )));
    }
    let mut m = Moment::zeros(id.order(), d);
    let words: Vec<usize> = id.observed.iter().map(|&p| x.words()[p]).collect();
    let scale = match id.projected {
        Some(k) => {
            let tag = id.eta.as_deref().unwrap_or_default();
            let proj = spec
                .projection(tag)
                .ok_or_else(|| Error::InvalidParams(format!("unknown projection `{tag}`")))?;
            proj.eta[x.words()[k]]
        }
        None => 1.0,
    };
    let idx = m.index(&words);
    m.values[idx] = scale;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentEntry {
    pub len: usize,
    pub id: ObservationId,
    pub moment: Moment,
}

/// Moments for a set of observations, grouped by sentence length.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedMoments {
    pub d: usize,
    pub projections: Vec<Projection>,
    pub entries: Vec<MomentEntry>,
}

impl ObservedMoments {
    pub fn new(d: usize, projections: Vec<Projection>) -> Self {
        ObservedMoments { d, projections, entries: Vec::new() }
    }

    pub fn push(&mut self, len: usize, id: ObservationId, moment: Moment) {
        self.entries.push(MomentEntry { len, id, moment });
    }

    pub fn get(&self, len: usize, id: &ObservationId) -> Option<&Moment> {
        self.entries.iter().find(|e| e.len == len && &e.id == id).map(|e| &e.moment)
    }

    pub fn lengths(&self) -> Vec<usize> {
        let mut ls: Vec<usize> = self.entries.iter().map(|e| e.len).collect();
        ls.sort_unstable();
        ls.dedup();
        ls
    }

    pub fn extend(&mut self, other: ObservedMoments) {
        for p in other.projections {
            if !self.projections.iter().any(|q| q.tag == p.tag) {
                self.projections.push(p);
            }
        }
        self.entries.extend(other.entries);
    }

    pub fn max_abs_diff(&self, other: &ObservedMoments) -> Result<f64> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Dimension("moment sets have different sizes".into()));
        }
        let mut worst: f64 = 0.0;
        for e in &self.entries {
            let o = other
                .get(e.len, &e.id)
                .ok_or_else(|| Error::MissingData(format!("no {} at L = {}", e.id, e.len)))?;
            worst = worst.max(e.moment.max_abs_diff(o));
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> MomentsFile {
        MomentsFile {
            d: self.d,
            projections: self
                .projections
                .iter()
                .map(|p| (p.tag.clone(), p.eta.iter().copied().collect()))
                .collect(),
            moments: self.entries.iter().map(MomentRecord::from_entry).collect(),
        }
    }

    pub fn from_json(file: &MomentsFile) -> Result<Self> {
        let projections = file
            .projections
            .iter()
            .map(|(tag, v)| Projection { tag: tag.clone(), eta: DVector::from_vec(v.clone()) })
            .collect();
        let mut out = ObservedMoments::new(file.d, projections);
        for rec in &file.moments {
            let id: ObservationId = rec.obs.parse()?;
            out.push(rec.len, id, rec.to_moment(file.d)?);
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: MomentsFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_json(&file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentsFile {
    pub d: usize,
    #[serde(default)]
    pub projections: BTreeMap<String, Vec<f64>>,
    pub moments: Vec<MomentRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentRecord {
    #[serde(rename = "L")]
    pub len: usize,
    pub obs: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor: Option<Vec<Vec<Vec<f64>>>>,
}

impl MomentRecord {
    fn from_entry(e: &MomentEntry) -> Self {
        let d = e.moment.d;
        let v = &e.moment.values;
        let mut rec =
            MomentRecord { len: e.len, obs: e.id.to_string(), vector: None, matrix: None, tensor: None };
        match e.moment.order {
            1 => rec.vector = Some(v.clone()),
            2 => rec.matrix = Some(v.chunks(d).map(<[f64]>::to_vec).collect()),
            _ => {
                rec.tensor = Some(
                    v.chunks(d * d)
                        .map(|slab| slab.chunks(d).map(<[f64]>::to_vec).collect())
                        .collect(),
                )
            }
        }
        rec
    }

    fn to_moment(&self, d: usize) -> Result<Moment> {
        let (order, values): (usize, Vec<f64>) = if let Some(v) = &self.vector {
            (1, v.clone())
        } else if let Some(m) = &self.matrix {
            (2, m.iter().flatten().copied().collect())
        } else if let Some(t) = &self.tensor {
            (3, t.iter().flatten().flatten().copied().collect())
        } else {
            return Err(Error::Parse(format!("moment {} has no values", self.obs)));
        };
        if values.len() != d.pow(order as u32) {
            return Err(Error::Dimension(format!("moment {} has {} values", self.obs, values.len())));
        }
        Ok(Moment { order, d, values })
    }
}

/// Plug-in estimate of `E[φ]` from sentences grouped by length.
pub fn empirical_moments(
    samples: &BTreeMap<usize, Vec<Sentence>>,
    spec: &ObservationSpec,
    lengths: &[usize],
    d: usize,
) -> Result<ObservedMoments> {
    let mut out = ObservedMoments::new(d, spec.projections.clone());
    for &len in lengths {
        let group = samples
            .get(&len)
            .filter(|g| !g.is_empty())
            .ok_or_else(|| Error::MissingData(format!("no sample sentences of length {len}")))?;
        for id in enumerate_observations(spec, len) {
            let mut acc = Moment::zeros(id.order(), d);
            for x in group {
                let phi = eval_phi(spec, &id, x, d)?;
                for (a, v) in acc.values.iter_mut().zip(&phi.values) {
                    *a += v;
                }
            }
            let n = group.len() as f64;
            acc.values.iter_mut().for_each(|v| *v /= n);
            out.push(len, id, acc);
        }
    }
    Ok(out)
}

/// Groups a corpus by sentence length.
pub fn group_by_length(corpus: impl IntoIterator<Item = Sentence>) -> BTreeMap<usize, Vec<Sentence>> {
    let mut map: BTreeMap<usize, Vec<Sentence>> = BTreeMap::new();
    for s in corpus {
        map.entry(s.len()).or_default().push(s);
    }
    map
}

/// Reads a corpus: one sentence per line, space-separated 1-based word ids.
/// Blank lines and lines starting with `#` are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<Sentence>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(str::parse)
        .collect()
}

pub fn write_corpus(path: &Path, corpus: &[Sentence]) -> Result<()> {
    let mut text = String::new();
    for s in corpus {
        text.push_str(&s.to_string());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

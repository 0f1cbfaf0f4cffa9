//! Randomized local-identifiability check: draw interior parameters, build
//! the Jacobian of the moment map and compare its numerical rank with the
//! number of free parameters.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::jacobian;
use crate::model::{ModelFamily, ModelParams};
use crate::observations::{enumerate_observations, ObservationSpec};
use crate::spectral::singular_values;

/// Relative rank tolerance: `τ = max(m, n) · σ_max · RANK_RTOL`.
pub const RANK_RTOL: f64 = 1e-10;
/// Minimum `σ_rank / σ_{rank+1}` for a rank to count as resolved.
pub const MIN_GAP_RATIO: f64 = 1e3;
pub const DEFAULT_DRAWS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Answer {
    Yes,
    No,
    Indeterminate,
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Answer::Yes => "yes",
            Answer::No => "no",
            Answer::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankInfo {
    pub rank: usize,
    pub tolerance: f64,
    /// `σ_rank / σ_{rank+1}`; infinite when either side is missing or zero.
    pub gap_ratio: f64,
    pub indeterminate: bool,
}

/// Numerical rank of a matrix with the given (descending) singular values.
pub fn numerical_rank(sv: &[f64], m: usize, n: usize) -> RankInfo {
    let top = sv.first().copied().unwrap_or(0.0);
    let tolerance = m.max(n) as f64 * top * RANK_RTOL;
    let rank = sv.iter().filter(|&&s| s > tolerance).count();
    let gap_ratio = match (rank.checked_sub(1).map(|i| sv[i]), sv.get(rank)) {
        (Some(above), Some(&below)) if below > 0.0 => above / below,
        _ => f64::INFINITY,
    };
    RankInfo { rank, tolerance, gap_ratio, indeterminate: gap_ratio < MIN_GAP_RATIO }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityVerdict {
    pub family: String,
    pub k: Option<usize>,
    pub d: usize,
    pub observations: String,
    pub projections: Vec<String>,
    pub lengths: Vec<usize>,
    pub answer: Answer,
    pub rank: usize,
    /// Free parameter count.
    pub n: usize,
    /// Moment count (Jacobian rows).
    pub m: usize,
    /// Singular values of the maximal-rank draw, descending.
    pub singular_values: Vec<f64>,
    /// `σ_rank / σ_{rank+1}` of that draw; `None` when unbounded.
    pub gap_ratio: Option<f64>,
    pub draws: usize,
    pub per_draw_ranks: Vec<usize>,
    pub seed: u64,
}

impl IdentifiabilityVerdict {
    pub fn deficiency(&self) -> usize {
        self.n - self.rank
    }
}

/// Checks local identifiability of `family` from the moments of `spec`,
/// stacked over `lengths`, using `draws` random interior parameters.
///
/// The reported rank is the largest over draws (the generic rank). The
/// answer is indeterminate when that draw's singular-value gap is too small
/// to separate signal from rounding.
pub fn check_identifiability(
    family: ModelFamily,
    spec: &ObservationSpec,
    lengths: &[usize],
    seed: u64,
    draws: usize,
) -> Result<IdentifiabilityVerdict> {
    if draws == 0 {
        return Err(Error::InvalidParams("at least one random draw is required".into()));
    }
    let m_rows: usize = lengths
        .iter()
        .flat_map(|&l| enumerate_observations(spec, l))
        .map(|id| family.d.pow(id.order() as u32))
        .sum();
    if lengths.is_empty() {
        return Err(Error::InvalidParams("no sentence lengths given".into()));
    }
    let n = family.free_len();
    let mut best: Option<(RankInfo, Vec<f64>)> = None;
    let mut per_draw_ranks = Vec::with_capacity(draws);
    // no moments at these lengths: the empty Jacobian has rank 0
    let draws_run = if m_rows == 0 { 0 } else { draws };
    if m_rows == 0 {
        best = Some((numerical_rank(&[], 0, n), Vec::new()));
    }
    for draw in 0..draws_run {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(draw as u64);
        let params = ModelParams::random(family, &mut rng);
        let j = jacobian(&params, spec, lengths)?;
        let sv = singular_values(&j);
        let info = numerical_rank(&sv, j.nrows(), j.ncols());
        per_draw_ranks.push(info.rank);
        if best.as_ref().is_none_or(|(b, _)| info.rank > b.rank) {
            best = Some((info, sv));
        }
    }
    let (info, sv) = best.expect("at least one draw");
    let answer = if info.indeterminate {
        Answer::Indeterminate
    } else if info.rank == n {
        Answer::Yes
    } else {
        Answer::No
    };
    Ok(IdentifiabilityVerdict {
        family: family.kind.name().to_string(),
        k: family.k,
        d: family.d,
        observations: spec.family.name().to_string(),
        projections: spec.projections.iter().map(|p| p.tag.clone()).collect(),
        lengths: lengths.to_vec(),
        answer,
        rank: info.rank,
        n,
        m: m_rows,
        singular_values: sv,
        gap_ratio: info.gap_ratio.is_finite().then_some(info.gap_ratio),
        draws,
        per_draw_ranks,
        seed,
    })
}

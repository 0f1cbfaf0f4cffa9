//! Parameter recovery from moments: unmixing compound parameters through the
//! pseudoinverse of a mixing matrix, then spectral decomposition.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::exact_moments;
use crate::mixing::{BackboneTerm, CompoundTerm, MixingMatrix};
use crate::model::{stationary_distribution, BlockKind, FamilyKind, ModelFamily, ModelParams};
use crate::observations::{ObservationFamily, ObservationId, ObservationSpec, ObservedMoments};
use crate::spectral::{
    decompose, eigen_decompose, imaginary_residue, normalize_columns_to_stochastic, project_to_stochastic,
    pseudoinverse, CMatrix, DecomposeResult,
};

/// Relative residual above which `e_p` is outside the row space of `M`.
pub const ROWSPACE_TOL: f64 = 1e-8;
/// Relative imaginary residue tolerated when reassembling a real matrix.
pub const REALNESS_TOL: f64 = 1e-8;
/// Default validation tolerance for DEP-IES root candidates on exact moments.
pub const DEP_IES_TOL: f64 = 1e-6;
/// Largest vocabulary for the DEP-IES root search (`2^d` assignments).
pub const MAX_ROOT_SEARCH_D: usize = 8;
/// Entries of a recovered `π` at or below this are treated as zero.
pub const MIN_PI: f64 = 1e-12;

/// Conditioning of a Decompose call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeReport {
    pub eigenvalues_re: Vec<f64>,
    pub eigenvalues_im: Vec<f64>,
    pub separation: f64,
    pub min_sv_projected: f64,
    pub min_sv_eigenvectors: f64,
    pub imag_residue: f64,
}

impl From<&DecomposeResult> for DecomposeReport {
    fn from(r: &DecomposeResult) -> Self {
        DecomposeReport {
            eigenvalues_re: r.eigenvalues.iter().map(|c| c.re).collect(),
            eigenvalues_im: r.eigenvalues.iter().map(|c| c.im).collect(),
            separation: r.separation,
            min_sv_projected: r.min_sv_projected,
            min_sv_eigenvectors: r.min_sv_eigenvectors,
            imag_residue: r.imag_residue,
        }
    }
}

/// One assignment of quadratic roots in the DEP-IES estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootCandidate {
    /// `+` for `(-1 + √(1+4γ))/2`, `-` for the other root, per eigenvalue.
    pub signs: String,
    #[serde(skip)]
    pub a: DMatrix<f64>,
    pub imag_residue: f64,
    /// Largest `|1ᵀa_j - 1|`.
    pub column_sum_error: f64,
    /// Largest deviation of the closed-form moments from the inputs.
    pub refit_residual: f64,
    pub valid: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub estimator: String,
    pub lengths: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeReport>,
    /// Largest relative row-space residual of the unmixed columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rowspace_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roots: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub root_candidates: Vec<RootCandidate>,
    /// Smallest singular value of the recovered transition matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_sv_transition: Option<f64>,
    /// Largest `|raw - projected|` over all blocks.
    pub projection_change: f64,
    /// Largest deviation of the refit moments from the inputs.
    pub refit_residual: f64,
    /// Blocks before projection onto the simplex, as rows.
    pub raw: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RecoveredParams {
    pub params: ModelParams,
    /// Hidden states are recovered only up to a common relabeling.
    pub permutation_ambiguous: bool,
    pub diagnostics: Diagnostics,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn as_column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Moments of the mixing rows stacked as `rows × d^order`, row-major per
/// moment. Thin rows are read at projection `tag`.
pub fn stack_moments(mm: &MixingMatrix, moments: &ObservedMoments, tag: Option<&str>) -> Result<DMatrix<f64>> {
    let mut out: Option<DMatrix<f64>> = None;
    for (r, row) in mm.rows.iter().enumerate() {
        let id = match (row.id.projected, tag) {
            (Some(_), Some(t)) => row.id.with_eta(t),
            (Some(_), None) => return Err(Error::MissingData("thin rows need a projection tag".into())),
            (None, _) => row.id.clone(),
        };
        let m = moments
            .get(row.len, &id)
            .ok_or_else(|| Error::MissingData(format!("no moment {id} at L = {}", row.len)))?;
        let out = out.get_or_insert_with(|| DMatrix::zeros(mm.nrows(), m.values.len()));
        if m.values.len() != out.ncols() {
            return Err(Error::Dimension(format!("moment {id} has {} entries", m.values.len())));
        }
        out.row_mut(r).copy_from_slice(&m.values);
    }
    out.ok_or_else(|| Error::MissingData("mixing matrix has no rows".into()))
}

/// Result of unmixing: one row of compound-parameter entries per wanted column.
#[derive(Clone, Debug)]
pub struct Unmixed {
    pub values: DMatrix<f64>,
    /// Relative row-space residual of each wanted `e_p`.
    pub residuals: Vec<f64>,
}

/// `Ψ_p = (M† μ)_p` for each wanted column, after checking that `e_p` lies
/// in the row space of `M`.
pub fn unmix(mm: &MixingMatrix, stacked: &DMatrix<f64>, wanted: &[usize]) -> Result<Unmixed> {
    if stacked.nrows() != mm.nrows() {
        return Err(Error::Dimension(format!(
            "{} stacked moments for {} mixing rows",
            stacked.nrows(),
            mm.nrows()
        )));
    }
    let m = mm.to_dense();
    let pinv = pseudoinverse(&m);
    let mut residuals = Vec::with_capacity(wanted.len());
    for &p in wanted {
        if p >= mm.ncols() {
            return Err(Error::Dimension(format!("column {p} of {}", mm.ncols())));
        }
        // (M† M) e_p is the projection of e_p onto the row space
        let mut proj = &pinv * m.column(p);
        proj[p] -= 1.0;
        let residual = proj.norm();
        if residual > ROWSPACE_TOL {
            return Err(Error::NotInRowSpace(format!(
                "column {p} `{}` (residual {residual:e})",
                mm.columns()[p]
            )));
        }
        residuals.push(residual);
    }
    let mut values = DMatrix::zeros(wanted.len(), stacked.ncols());
    for (i, &p) in wanted.iter().enumerate() {
        values.row_mut(i).copy_from(&(pinv.row(p) * stacked));
    }
    Ok(Unmixed { values, residuals })
}

/// Reshapes a row of `d^2` row-major entries into a `d × d` matrix.
pub fn entries_to_matrix(entries: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, entries)
}

/// `Ψ_1`, `Ψ_2`, `Ψ_3` of the length-3 thin-triple system, in that order:
/// `A diag(T diag(π) Aᵀη) Aᵀ`, `A diag(π) Tᵀ diag(Aᵀη) Aᵀ`, `A diag(Aᵀη) T diag(π) Aᵀ`.
pub fn thin_triple_terms() -> [CompoundTerm; 3] {
    let dot = || BackboneTerm::Observed;
    let circ = || BackboneTerm::Projected;
    let fork = |a, b| BackboneTerm::Fork(Box::new(a), Box::new(b));
    [
        CompoundTerm::Backbone { core: fork(circ(), fork(dot(), dot())), n3: 0 },
        CompoundTerm::Backbone { core: fork(dot(), fork(circ(), dot())), n3: 0 },
        CompoundTerm::Backbone { core: fork(fork(circ(), dot()), dot()), n3: 0 },
    ]
}

/// `(π, T, O)` up to the permutation carried by `a_pi = A Π`, from
/// `Ψ_{2;1} = A diag(π) Tᵀ Aᵀ`. Returned unprojected.
pub fn recover_pi_t_o_from_a(a_pi: &DMatrix<f64>, psi2_ones: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let d = a_pi.nrows();
    if psi2_ones.shape() != (d, d) {
        return Err(Error::Dimension(format!("Ψ is {:?}, expected {d}x{d}", psi2_ones.shape())));
    }
    let ap = pseudoinverse(a_pi);
    let pi = &ap * psi2_ones * DVector::from_element(d, 1.0);
    if let Some(i) = pi.iter().position(|&p| p <= MIN_PI) {
        return Err(Error::IllConditioned(format!("recovered π has a nonpositive entry at {i}: {:e}", pi[i])));
    }
    let inv_pi = DMatrix::from_diagonal(&pi.map(|p| 1.0 / p));
    let t = &ap * psi2_ones.transpose() * ap.transpose() * inv_pi;
    let t_inv = t
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::IllConditioned("recovered T is singular".into()))?;
    let o = a_pi * t_inv;
    Ok((pi, t, o))
}

/// Projects the raw blocks and records how far they moved.
fn finish(
    family: ModelFamily,
    raw: Vec<(BlockKind, DMatrix<f64>)>,
    diagnostics: &mut Diagnostics,
) -> Result<ModelParams> {
    let mut projected = Vec::with_capacity(raw.len());
    for (b, m) in raw {
        let p = project_to_stochastic(&m);
        diagnostics.projection_change = diagnostics.projection_change.max((&p - &m).amax());
        diagnostics.raw.insert(b.name().to_string(), rows(&m));
        projected.push((b, p));
    }
    ModelParams::from_named(family, projected)
}

/// Largest deviation of `exact_moments(params)` from the inputs, over the
/// entries present in both.
fn refit_residual(params: &ModelParams, moments: &ObservedMoments, obs: ObservationFamily, lengths: &[usize]) -> Result<f64> {
    let spec = ObservationSpec::new(obs, if obs.is_thin() { moments.projections.clone() } else { vec![] })?;
    let mut worst: f64 = 0.0;
    for &len in lengths {
        for e in exact_moments(params, &spec, len)?.entries {
            if let Some(m) = moments.get(len, &e.id) {
                worst = worst.max(m.max_abs_diff(&e.moment));
            }
        }
    }
    Ok(worst)
}

/// PCFG-IE from thin-triple moments at projections `ones_tag` (`η = 1`) and
/// `tau_tag` (`η = τ`), unmixed through `mm`.
pub fn estimate_pcfg_ie(
    moments: &ObservedMoments,
    mm: &MixingMatrix,
    k: usize,
    ones_tag: &str,
    tau_tag: &str,
) -> Result<RecoveredParams> {
    if mm.family != FamilyKind::PcfgIe || !mm.observations.is_thin() {
        return Err(Error::Unsupported(format!(
            "the PCFG-IE estimator needs a pcfg-ie thin-triple mixing matrix, got {} {}",
            mm.family, mm.observations
        )));
    }
    let d = moments.d;
    let family = ModelFamily::new(FamilyKind::PcfgIe, k, d)?;
    let tau = moments
        .projections
        .iter()
        .find(|p| p.tag == tau_tag)
        .ok_or_else(|| Error::MissingData(format!("no projection `{tau_tag}`")))?;
    let psi2 = &thin_triple_terms()[1];
    let col = mm
        .column_of(psi2)
        .ok_or_else(|| Error::NotInRowSpace(format!("mixing matrix has no column `{psi2}`")))?;
    let ones = stack_moments(mm, moments, Some(ones_tag))?;
    let taus = stack_moments(mm, moments, Some(tau_tag))?;
    let mut both = DMatrix::zeros(ones.nrows(), 2 * d * d);
    both.columns_mut(0, d * d).copy_from(&ones);
    both.columns_mut(d * d, d * d).copy_from(&taus);
    let un = unmix(mm, &both, &[col])?;
    let row: Vec<f64> = un.values.row(0).iter().copied().collect();
    let psi_ones = entries_to_matrix(&row[..d * d], d);
    let psi_tau = entries_to_matrix(&row[d * d..], d);

    let dec = decompose(&psi_ones.transpose(), &psi_tau.transpose(), k)?;
    let a_pi = normalize_columns_to_stochastic(&dec.recovered)?;
    let (pi, t, o) = recover_pi_t_o_from_a(&a_pi, &psi_ones)?;
    let mut diagnostics = Diagnostics {
        estimator: "pcfg-ie".into(),
        lengths: mm.lengths.clone(),
        tau: Some(tau.eta.iter().copied().collect()),
        decompose: Some(DecomposeReport::from(&dec)),
        rowspace_residual: un.residuals.first().copied(),
        min_sv_transition: crate::spectral::singular_values(&t).last().copied(),
        ..Default::default()
    };
    let params = finish(family, vec![(BlockKind::Pi, as_column(&pi)), (BlockKind::T, t), (BlockKind::O, o)], &mut diagnostics)?;
    diagnostics.refit_residual = refit_residual(&params, moments, mm.observations, &moments.lengths())?;
    Ok(RecoveredParams { params, permutation_ambiguous: true, diagnostics })
}

fn pair_moment(moments: &ObservedMoments, len: usize, i: usize, j: usize) -> Result<DMatrix<f64>> {
    let id = ObservationId::pair(i, j);
    moments
        .get(len, &id)
        .map(|m| m.as_matrix())
        .ok_or_else(|| Error::MissingData(format!("no moment {id} at L = {len}")))
}

/// Closed-form DEP-IES moments at `L = 3` (`μ12`, `μ13`) and `L = 2` (`μ̃12`).
pub fn dep_ies_closed_forms(a: &DMatrix<f64>, pi: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let dm = DMatrix::from_diagonal(pi);
    let at = a.transpose();
    let da = &dm * &at;
    let ad = a * &dm;
    let mu12 = (&da * 3.0 + &da * &at + &ad * 2.0 + &ad * &at) / 7.0;
    let mu13 = (&da * 2.0 + &da * &at + &ad * &at + &ad * 2.0 + a * &ad) / 7.0;
    let mu12_short = (&da + &ad) / 2.0;
    (mu12, mu13, mu12_short)
}

struct DepIesInputs {
    mu1: DVector<f64>,
    mu12: DMatrix<f64>,
    mu13: DMatrix<f64>,
    mu12_short: DMatrix<f64>,
}

fn dep_ies_inputs(moments: &ObservedMoments) -> Result<DepIesInputs> {
    let mu12 = pair_moment(moments, 3, 0, 1)?;
    let mu13 = pair_moment(moments, 3, 0, 2)?;
    let mu12_short = pair_moment(moments, 2, 0, 1)?;
    let first = ObservationId { observed: vec![0], projected: None, eta: None };
    let mu1 = match moments.get(3, &first).or_else(|| moments.get(2, &first)) {
        Some(m) => m.as_vector(),
        // the row marginal of μ12 is E[x1]
        None => &mu12 * DVector::from_element(moments.d, 1.0),
    };
    Ok(DepIesInputs { mu1, mu12, mu13, mu12_short })
}

/// Every assignment of quadratic roots, or only the principal one when
/// `principal_only`, scored against the inputs.
fn root_candidates(inputs: &DepIesInputs, tol: f64, principal_only: bool) -> Result<Vec<RootCandidate>> {
    let d = inputs.mu1.len();
    if let Some(i) = inputs.mu1.iter().position(|&p| p <= MIN_PI) {
        return Err(Error::IllConditioned(format!("μ1 has a nonpositive entry at {i}")));
    }
    let inv = DMatrix::from_diagonal(&inputs.mu1.map(|p| 1.0 / p));
    let g = ((&inputs.mu13 - &inputs.mu12) * 7.0 + &inputs.mu12_short * 2.0) * inv;
    let (gammas, q) = eigen_decompose(&g)?;
    let q_inv: CMatrix = q
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned("AA + A is not diagonalizable".into()))?;
    let sqrt_terms: Vec<Complex<f64>> = gammas.iter().map(|g| (Complex::new(1.0, 0.0) + g * 4.0).sqrt()).collect();
    let masks: Vec<usize> = if principal_only {
        vec![0]
    } else {
        if d > MAX_ROOT_SEARCH_D {
            return Err(Error::RootSelection(format!("root search refused for d = {d} > {MAX_ROOT_SEARCH_D}")));
        }
        (0..1usize << d).collect()
    };
    let ones = DVector::from_element(d, 1.0);
    let mut out = Vec::with_capacity(masks.len());
    for mask in masks {
        let lambdas: Vec<Complex<f64>> = (0..d)
            .map(|i| {
                let s = if mask >> i & 1 == 1 { -sqrt_terms[i] } else { sqrt_terms[i] };
                (s - 1.0) / 2.0
            })
            .collect();
        let a_c = &q * CMatrix::from_diagonal(&DVector::from_vec(lambdas)) * &q_inv;
        let imag = imaginary_residue(&a_c);
        let a = a_c.map(|c| c.re);
        let column_sum_error = (a.tr_mul(&ones) - &ones).amax();
        let (m12, m13, m12s) = dep_ies_closed_forms(&a, &inputs.mu1);
        let refit = (m12 - &inputs.mu12).amax().max((m13 - &inputs.mu13).amax()).max((m12s - &inputs.mu12_short).amax());
        let signs = (0..d).map(|i| if mask >> i & 1 == 1 { '-' } else { '+' }).collect();
        out.push(RootCandidate {
            signs,
            a,
            imag_residue: imag,
            column_sum_error,
            refit_residual: refit,
            valid: imag <= REALNESS_TOL && column_sum_error <= tol && refit <= tol,
        });
    }
    Ok(out)
}

/// All `2^d` root assignments of the DEP-IES estimator with their scores.
pub fn dep_ies_root_candidates(moments: &ObservedMoments, tol: f64) -> Result<Vec<RootCandidate>> {
    root_candidates(&dep_ies_inputs(moments)?, tol, false)
}

/// DEP-IES from `μ1`, `μ12`, `μ13` at `L = 3` and `μ̃12` at `L = 2`.
///
/// The principal root `(-1 + √(1+4γ))/2` is tried first; if the reassembled
/// `A` fails validation at `tol`, all root assignments are searched.
pub fn estimate_dep_ies(moments: &ObservedMoments, tol: f64) -> Result<RecoveredParams> {
    let inputs = dep_ies_inputs(moments)?;
    let d = inputs.mu1.len();
    let family = ModelFamily::dependency(FamilyKind::DepIes, d)?;
    let mut notes = Vec::new();
    let principal = root_candidates(&inputs, tol, true)?.remove(0);
    let (chosen, searched) = if principal.valid {
        (principal, Vec::new())
    } else {
        notes.push("principal roots failed validation; searched all root assignments".to_string());
        let all = root_candidates(&inputs, tol, false)?;
        let mut valid: Vec<&RootCandidate> = all.iter().filter(|c| c.valid).collect();
        valid.sort_by(|a, b| a.refit_residual.total_cmp(&b.refit_residual));
        let chosen = match valid.as_slice() {
            [] => {
                return Err(Error::RootSelection(format!(
                    "no root assignment yields a real stochastic A (best refit residual {:e})",
                    all.iter().map(|c| c.refit_residual).fold(f64::INFINITY, f64::min)
                )))
            }
            [only] => (*only).clone(),
            [best, next, ..] if next.refit_residual > 10.0 * best.refit_residual => (*best).clone(),
            [best, next, ..] => {
                return Err(Error::RootSelection(format!(
                    "ambiguous roots {} and {}: A = {:?} or A = {:?}",
                    best.signs,
                    next.signs,
                    rows(&best.a),
                    rows(&next.a)
                )))
            }
        };
        (chosen, all)
    };
    let mut diagnostics = Diagnostics {
        estimator: "dep-ies".into(),
        lengths: vec![2, 3],
        roots: Some(chosen.signs.clone()),
        root_candidates: searched,
        notes,
        ..Default::default()
    };
    let pi = inputs.mu1.clone();
    let mut params = finish(
        family,
        vec![(BlockKind::Pi, as_column(&(&pi / pi.sum()))), (BlockKind::A, chosen.a.clone())],
        &mut diagnostics,
    );
    if params.is_err() {
        // noisy μ1 is not exactly stationary under the projected A
        let a = project_to_stochastic(&chosen.a);
        let stationary = stationary_distribution(&a)?;
        diagnostics.notes.push("π replaced by the stationary distribution of the projected A".into());
        params = ModelParams::from_named(family, vec![(BlockKind::Pi, as_column(&stationary)), (BlockKind::A, a)]);
    }
    let params = params?;
    let (m12, m13, m12s) = dep_ies_closed_forms(params.block(BlockKind::A), &params.pi());
    diagnostics.refit_residual = (m12 - &inputs.mu12)
        .amax()
        .max((m13 - &inputs.mu13).amax())
        .max((m12s - &inputs.mu12_short).amax());
    Ok(RecoveredParams { params, permutation_ambiguous: false, diagnostics })
}

/// HMM from pair moments at one length `L ≥ 3`: Decompose with
/// `X = μ12 = O diag(π) Tᵀ Oᵀ` and `Y = μ23 = O diag(Tπ) Tᵀ Oᵀ`, whose
/// eigenvalues are `(Tπ)_i / π_i`.
pub fn estimate_hmm_allpairs(moments: &ObservedMoments, k: usize) -> Result<RecoveredParams> {
    let d = moments.d;
    let family = ModelFamily::new(FamilyKind::Hmm, k, d)?;
    let len = moments
        .lengths()
        .into_iter()
        .find(|&l| l >= 3 && moments.get(l, &ObservationId::pair(0, 1)).is_some() && moments.get(l, &ObservationId::pair(1, 2)).is_some())
        .ok_or_else(|| Error::MissingData("HMM estimation needs μ12 and μ23 at some L ≥ 3".into()))?;
    let mu12 = pair_moment(moments, len, 0, 1)?;
    let mu23 = pair_moment(moments, len, 1, 2)?;
    let dec = decompose(&mu12, &mu23, k)?;
    let o = normalize_columns_to_stochastic(&dec.recovered)?;
    let op = pseudoinverse(&o);
    let pi = &op * &mu12 * DVector::from_element(d, 1.0);
    if let Some(i) = pi.iter().position(|&p| p <= MIN_PI) {
        return Err(Error::IllConditioned(format!("recovered π has a nonpositive entry at {i}: {:e}", pi[i])));
    }
    let inv_pi = DMatrix::from_diagonal(&pi.map(|p| 1.0 / p));
    let t = (inv_pi * &op * &mu12 * op.transpose()).transpose();
    let mut diagnostics = Diagnostics {
        estimator: "hmm-allpairs".into(),
        lengths: vec![len],
        decompose: Some(DecomposeReport::from(&dec)),
        min_sv_transition: crate::spectral::singular_values(&t).last().copied(),
        ..Default::default()
    };
    let params = finish(family, vec![(BlockKind::Pi, as_column(&pi)), (BlockKind::T, t), (BlockKind::O, o)], &mut diagnostics)?;
    diagnostics.refit_residual = refit_residual(&params, moments, ObservationFamily::AllPairs, &[len])?;
    Ok(RecoveredParams { params, permutation_ambiguous: true, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::match_params;
    use crate::hypergraph::exact_moments_range;
    use crate::mixing::mixing_matrix;
    use crate::observations::Projection;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(kind: FamilyKind, k: usize, d: usize, seed: u64) -> ModelParams {
        let fam = if kind.is_dependency() {
            ModelFamily::dependency(kind, d).unwrap()
        } else {
            ModelFamily::new(kind, k, d).unwrap()
        };
        ModelParams::random(fam, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn thin_moments(p: &ModelParams, lengths: &[usize], seed: u64) -> ObservedMoments {
        let d = p.family().d;
        let spec = ObservationSpec::ones_and_tau(ObservationFamily::AllThinTriples, d, seed).unwrap();
        exact_moments_range(p, &spec, lengths).unwrap()
    }

    #[test]
    fn identity_mixing_unmixes_to_moments() {
        let mm = mixing_matrix(FamilyKind::PcfgIe, ObservationFamily::Pairs, &[2]).unwrap();
        assert_eq!(mm.to_dense(), DMatrix::identity(1, 1));
        let mu = DMatrix::from_row_slice(1, 4, &[0.1, 0.2, 0.3, 0.4]);
        let un = unmix(&mm, &mu, &[0]).unwrap();
        assert!((un.values - mu).amax() < 1e-15);
    }

    #[test]
    fn unmix_l3_recovers_psi() {
        let p = random(FamilyKind::PcfgIe, 2, 3, 3);
        let mu = thin_moments(&p, &[3], 4);
        let mm = mixing_matrix(FamilyKind::PcfgIe, ObservationFamily::AllThinTriples, &[3]).unwrap();
        let tau = mu.projections[1].eta.clone();
        let stacked = stack_moments(&mm, &mu, Some("tau")).unwrap();
        let cols: Vec<usize> = thin_triple_terms().iter().map(|t| mm.column_of(t).unwrap()).collect();
        let un = unmix(&mm, &stacked, &cols).unwrap();
        for (i, t) in thin_triple_terms().iter().enumerate() {
            let want = crate::mixing::eval_compound(t, &p, Some(&tau)).unwrap();
            let got = entries_to_matrix(&un.values.row(i).iter().copied().collect::<Vec<_>>(), 3);
            assert!((got - want).amax() < 1e-12);
        }
    }

    #[test]
    fn stacked_unmix_agrees_with_l3() {
        let p = random(FamilyKind::PcfgIe, 2, 2, 8);
        let mu = thin_moments(&p, &[3, 4, 5, 6], 9);
        let psi2 = &thin_triple_terms()[1];
        let mut got = Vec::new();
        for lengths in [vec![3], vec![1, 2, 3, 4, 5, 6]] {
            let mm = mixing_matrix(FamilyKind::PcfgIe, ObservationFamily::AllThinTriples, &lengths).unwrap();
            let stacked = stack_moments(&mm, &mu, Some("1")).unwrap();
            got.push(unmix(&mm, &stacked, &[mm.column_of(psi2).unwrap()]).unwrap().values);
        }
        let want = crate::mixing::eval_compound(psi2, &p, Some(&DVector::from_element(2, 1.0))).unwrap();
        for g in got {
            assert!((entries_to_matrix(g.as_slice(), 2) - &want).amax() < 1e-12);
        }
    }

    #[test]
    fn unmix_rejects_columns_outside_row_space() {
        // at L = 4 alone the pair system has more columns than rows
        let mm = mixing_matrix(FamilyKind::PcfgIe, ObservationFamily::AllPairs, &[4]).unwrap();
        let m = mm.to_dense();
        let stacked = DMatrix::zeros(mm.nrows(), 1);
        let outside = (0..mm.ncols()).find(|&p| unmix(&mm, &stacked, &[p]).is_err());
        assert!(m.ncols() > m.nrows());
        let p = outside.expect("some column is not identifiable");
        assert!(matches!(unmix(&mm, &stacked, &[p]), Err(Error::NotInRowSpace(_))));
    }

    #[test]
    fn pcfg_ie_round_trip() {
        for (k, d, lengths) in [(2, 3, vec![3]), (2, 2, vec![3]), (2, 3, vec![1, 2, 3, 4, 5, 6]), (3, 4, vec![3])] {
            for seed in 0..3 {
                let p = random(FamilyKind::PcfgIe, k, d, 100 + seed);
                let mu = thin_moments(&p, &lengths, seed);
                let mm = mixing_matrix(FamilyKind::PcfgIe, ObservationFamily::AllThinTriples, &lengths).unwrap();
                let est = estimate_pcfg_ie(&mu, &mm, k, "1", "tau").unwrap();
                let report = match_params(&est.params, &p).unwrap();
                assert!(report.error < 1e-7, "k={k} d={d} {lengths:?}: {}", report.error);
                assert!(est.diagnostics.refit_residual < 1e-9);
                assert!(est.permutation_ambiguous);
            }
        }
    }

    #[test]
    fn pcfg_ie_degenerate_inputs_fail() {
        let p = random(FamilyKind::PcfgIe, 2, 3, 1);
        let spec = ObservationSpec::new(
            ObservationFamily::AllThinTriples,
            vec![Projection::ones(3), Projection { tag: "tau".into(), eta: DVector::from_element(3, 0.4) }],
        )
        .unwrap();
        let mu = exact_moments_range(&p, &spec, &[3]).unwrap();
        let mm = mixing_matrix(FamilyKind::PcfgIe, ObservationFamily::AllThinTriples, &[3]).unwrap();
        assert!(matches!(estimate_pcfg_ie(&mu, &mm, 2, "1", "tau"), Err(Error::IllConditioned(_))));
        // identical emission columns leave A with rank one
        let fam = p.family();
        let o = DMatrix::from_row_slice(3, 2, &[0.2, 0.2, 0.3, 0.3, 0.5, 0.5]);
        let q = ModelParams::from_named(
            fam,
            vec![(BlockKind::Pi, p.block(BlockKind::Pi).clone()), (BlockKind::T, p.block(BlockKind::T).clone()), (BlockKind::O, o)],
        )
        .unwrap();
        let mu = thin_moments(&q, &[3], 2);
        assert!(matches!(estimate_pcfg_ie(&mu, &mm, 2, "1", "tau"), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn recover_from_exact_a() {
        for seed in 0..10 {
            let p = random(FamilyKind::PcfgIe, 2, 3, 12 + seed);
            let a = p.block(BlockKind::O) * p.block(BlockKind::T);
            let psi = crate::mixing::eval_compound(&thin_triple_terms()[1], &p, Some(&DVector::from_element(3, 1.0))).unwrap();
            let (pi, t, o) = recover_pi_t_o_from_a(&a, &psi).unwrap();
            assert!((pi - p.pi()).amax() < 1e-10);
            assert!((&t - p.block(BlockKind::T)).amax() < 1e-10);
            // O = A T^{-1} amplifies rounding by the conditioning of T
            let smin = crate::spectral::singular_values(p.block(BlockKind::T))[1];
            let err = (&o - p.block(BlockKind::O)).amax();
            assert!(err < 1e-10 || err < 1e-13 / (smin * smin), "seed {seed}: {err:e} at σ_min {smin:e}");
            if smin > 0.1 {
                assert!(err < 1e-10);
            }
        }
        // k = 1: π = 1, T = 1, O = A
        let a = DMatrix::from_column_slice(3, 1, &[0.2, 0.3, 0.5]);
        let psi = &a * a.transpose();
        let (pi, t, o) = recover_pi_t_o_from_a(&a, &psi).unwrap();
        assert!((pi[0] - 1.0).abs() < 1e-12 && (t[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((o - a).amax() < 1e-12);
    }

    fn dep_moments(p: &ModelParams) -> ObservedMoments {
        let spec = ObservationSpec::plain(ObservationFamily::AllPairs).unwrap();
        let mut mu = exact_moments_range(p, &spec, &[2, 3]).unwrap();
        let first = ObservationSpec::plain(ObservationFamily::FirstMoment).unwrap();
        mu.extend(exact_moments(p, &first, 3).unwrap());
        mu
    }

    #[test]
    fn quadratic_roots() {
        let root = |g: f64| (-1.0 + (1.0 + 4.0 * g).sqrt()) / 2.0;
        let other = |g: f64| (-1.0 - (1.0 + 4.0 * g).sqrt()) / 2.0;
        assert_eq!((root(2.0), other(2.0)), (1.0, -2.0));
        assert_eq!((root(0.0), other(0.0)), (0.0, -1.0));
    }

    #[test]
    fn dep_ies_round_trip() {
        for d in [2, 3, 4] {
            for seed in 0..5 {
                let p = random(FamilyKind::DepIes, 0, d, 200 + seed);
                let est = estimate_dep_ies(&dep_moments(&p), DEP_IES_TOL).unwrap();
                let err = (est.params.block(BlockKind::A) - p.block(BlockKind::A)).amax();
                assert!(err < 1e-7, "d={d}: {err}");
                assert!((est.params.pi() - p.pi()).amax() < 1e-14);
                let roots = est.diagnostics.roots.unwrap();
                // the principal root fails only for an eigenvalue with real part below -1/2
                if roots.contains('-') {
                    assert!(!est.diagnostics.root_candidates.is_empty());
                }
            }
        }
    }

    #[test]
    fn dep_ies_complex_spectrum() {
        let eps = 0.1;
        let perm = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let a = perm * (1.0 - eps) + DMatrix::from_element(3, 3, eps / 3.0);
        let (eig, _) = eigen_decompose(&a).unwrap();
        assert!(eig.iter().any(|l| l.im.abs() > 0.1));
        let pi = DMatrix::from_element(3, 1, 1.0 / 3.0);
        let fam = ModelFamily::dependency(FamilyKind::DepIes, 3).unwrap();
        let p = ModelParams::from_named(fam, vec![(BlockKind::Pi, pi), (BlockKind::A, a.clone())]).unwrap();
        let est = estimate_dep_ies(&dep_moments(&p), DEP_IES_TOL).unwrap();
        assert!((est.params.block(BlockKind::A) - a).amax() < 1e-6);
        let cands = dep_ies_root_candidates(&dep_moments(&p), DEP_IES_TOL).unwrap();
        assert!(cands[0].imag_residue < 1e-9);
    }

    #[test]
    fn dep_ies_root_search_counts() {
        let mut unique = 0;
        for seed in 0..20 {
            let p = random(FamilyKind::DepIes, 0, 3, 300 + seed);
            let cands = dep_ies_root_candidates(&dep_moments(&p), DEP_IES_TOL).unwrap();
            assert_eq!(cands.len(), 8);
            if cands.iter().filter(|c| c.valid).count() == 1 {
                unique += 1;
            }
        }
        assert_eq!(unique, 20);
    }

    #[test]
    fn dep_ies_missing_inputs() {
        let p = random(FamilyKind::DepIes, 0, 2, 1);
        let spec = ObservationSpec::plain(ObservationFamily::AllPairs).unwrap();
        let mu = exact_moments_range(&p, &spec, &[3]).unwrap();
        assert!(matches!(estimate_dep_ies(&mu, DEP_IES_TOL), Err(Error::MissingData(_))));
        // without a first moment μ1 comes from the row marginal of μ12
        let mu = exact_moments_range(&p, &spec, &[2, 3]).unwrap();
        let est = estimate_dep_ies(&mu, DEP_IES_TOL).unwrap();
        assert!((est.params.pi() - p.pi()).amax() < 1e-12);
    }

    #[test]
    fn hmm_round_trip() {
        let spec = ObservationSpec::plain(ObservationFamily::AllPairs).unwrap();
        for seed in 0..5 {
            let p = random(FamilyKind::Hmm, 2, 3, 400 + seed);
            let mu = exact_moments(&p, &spec, 4).unwrap();
            let est = estimate_hmm_allpairs(&mu, 2).unwrap();
            let report = match_params(&est.params, &p).unwrap();
            assert!(report.error < 1e-7, "{}", report.error);
            // eigenvalues are (Tπ)_i / π_i up to order
            let t = p.block(BlockKind::T);
            let pi = p.pi();
            let mut want: Vec<f64> = (t * &pi).component_div(&pi).iter().copied().collect();
            let mut got = est.diagnostics.decompose.unwrap().eigenvalues_re;
            want.sort_by(f64::total_cmp);
            got.sort_by(f64::total_cmp);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hmm_identity_transition_fails() {
        let p = random(FamilyKind::Hmm, 2, 3, 5);
        let fam = p.family();
        let q = ModelParams::from_named(
            fam,
            vec![(BlockKind::Pi, p.block(BlockKind::Pi).clone()), (BlockKind::T, DMatrix::identity(2, 2)), (BlockKind::O, p.block(BlockKind::O).clone())],
        )
        .unwrap();
        let spec = ObservationSpec::plain(ObservationFamily::AllPairs).unwrap();
        let mu = exact_moments(&q, &spec, 4).unwrap();
        assert!(matches!(estimate_hmm_allpairs(&mu, 2), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn diagnostics_serialize() {
        let p = random(FamilyKind::PcfgIe, 2, 2, 7);
        let mu = thin_moments(&p, &[3], 1);
        let mm = mixing_matrix(FamilyKind::PcfgIe, ObservationFamily::AllThinTriples, &[3]).unwrap();
        let est = estimate_pcfg_ie(&mu, &mm, 2, "1", "tau").unwrap();
        let text = serde_json::to_string(&est.diagnostics).unwrap();
        assert!(text.contains("\"estimator\":\"pcfg-ie\""));
        assert!(text.contains("\"raw\""));
    }
}

//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use latent_unmix::estimators::{estimate_dep_ies, estimate_hmm_allpairs, estimate_pcfg_ie, Diagnostics, DEP_IES_TOL};
use latent_unmix::evaluation::{match_params, MatchReport};
use latent_unmix::hypergraph::{build_hypergraph, exact_moments_range};
use latent_unmix::identifiability::{check_identifiability, numerical_rank, Answer, IdentifiabilityVerdict};
use latent_unmix::mixing::{mixing_matrix, MixingFile};
use latent_unmix::model::{FamilyKind, ModelFamily, ModelParams, ParamFile, Sampler, Sentence};
use latent_unmix::observations::{
    empirical_moments, group_by_length, read_corpus, ObservationFamily, ObservationSpec, ObservedMoments, Projection,
};
use latent_unmix::spectral::singular_values;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{comment_header, emit, envelope, to_json, usage};
use crate::{CheckArgs, EstimateArgs, EtaMode, EvalArgs, Format, HypergraphArgs, LengthArgs, MixingArgs, SimulateArgs, ValidateArgs};

type Result<T> = anyhow::Result<T>;

pub fn model_family(kind: FamilyKind, k: usize, d: usize) -> latent_unmix::Result<ModelFamily> {
    if kind.is_dependency() {
        ModelFamily::dependency(kind, d)
    } else {
        ModelFamily::new(kind, k, d)
    }
}

fn resolve_lengths(l: &LengthArgs, default_min: usize, default_max: usize) -> Result<Vec<usize>> {
    if let Some(len) = l.l {
        if len == 0 {
            return Err(usage("--L must be at least 1"));
        }
        return Ok(vec![len]);
    }
    let lo = l.l_min.unwrap_or(default_min);
    let hi = l.l_max.unwrap_or(default_max.max(lo));
    if lo == 0 || lo > hi {
        return Err(usage(format!("bad length range {lo}..={hi}")));
    }
    Ok((lo..=hi).collect())
}

fn observation_spec(obs: ObservationFamily, d: usize, mode: EtaMode, seed: u64) -> latent_unmix::Result<ObservationSpec> {
    if !obs.is_thin() {
        return ObservationSpec::plain(obs);
    }
    match mode {
        EtaMode::Table => Ok(ObservationSpec::table_default(obs, d)),
        EtaMode::Ones => ObservationSpec::new(obs, vec![Projection::ones(d)]),
        EtaMode::Random => ObservationSpec::new(obs, vec![Projection::random(d, seed)]),
        EtaMode::Both => ObservationSpec::ones_and_tau(obs, d, seed),
    }
}

fn join_lengths(ls: &[usize]) -> String {
    ls.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub fn check(a: &CheckArgs) -> Result<()> {
    if a.table {
        return check_table(a);
    }
    let (&[kind], &[obs]) = (a.family.as_slice(), a.obs.as_slice()) else {
        return Err(usage("a single check takes exactly one --family and one --obs (use --table to sweep)"));
    };
    let lengths = resolve_lengths(&a.lengths, 3, 3)?;
    let family = model_family(kind, a.k, a.d)?;
    let spec = observation_spec(obs, a.d, a.eta_mode, a.seed)?;
    let v = check_identifiability(family, &spec, &lengths, a.seed, a.draws)?;
    let text = match a.format {
        Format::Json => to_json(&envelope("check", a, &v))?,
        Format::Csv => {
            let mut s = comment_header("check", a)?;
            s.push_str("family,k,d,observations,lengths,answer,rank,n,m,gap_ratio\n");
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                v.family,
                v.k.map_or(String::new(), |k| k.to_string()),
                v.d,
                v.observations,
                join_lengths(&v.lengths),
                v.answer,
                v.rank,
                v.n,
                v.m,
                v.gap_ratio.map_or("inf".to_string(), |g| format!("{g:e}"))
            );
            s
        }
    };
    emit(a.out.as_deref(), &text)
}

#[derive(Serialize)]
struct CellAnswer {
    #[serde(rename = "L")]
    len: usize,
    answer: Option<Answer>,
    rank: Option<usize>,
    n: Option<usize>,
    error: Option<String>,
}

#[derive(Serialize)]
struct TableCell {
    family: FamilyKind,
    observations: ObservationFamily,
    seed: u64,
    /// Smallest swept length answered `yes`.
    threshold: Option<usize>,
    answers: Vec<CellAnswer>,
}

#[derive(Serialize)]
struct TableResult {
    lengths: Vec<usize>,
    cells: Vec<TableCell>,
}

fn cell_answer(len: usize, r: latent_unmix::Result<IdentifiabilityVerdict>) -> CellAnswer {
    match r {
        Ok(v) => CellAnswer { len, answer: Some(v.answer), rank: Some(v.rank), n: Some(v.n), error: None },
        Err(e) => CellAnswer { len, answer: None, rank: None, n: None, error: Some(format!("{}: {e}", e.category())) },
    }
}

fn check_table(a: &CheckArgs) -> Result<()> {
    let lengths = resolve_lengths(&a.lengths, 1, 6)?;
    let obs: Vec<ObservationFamily> = if a.obs.is_empty() { ObservationFamily::TABLE.to_vec() } else { a.obs.clone() };
    let cells: Vec<(usize, FamilyKind, ObservationFamily)> = a
        .family
        .iter()
        .flat_map(|&f| obs.iter().map(move |&o| (f, o)))
        .enumerate()
        .map(|(i, (f, o))| (i, f, o))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| lengths.iter().map(move |&l| (c, l))).collect();
    let answers: Vec<CellAnswer> = jobs
        .par_iter()
        .map(|&(c, len)| {
            let (i, kind, o) = cells[c];
            let seed = a.seed.wrapping_add(i as u64);
            let r = model_family(kind, a.k, a.d)
                .and_then(|fam| Ok((fam, observation_spec(o, a.d, a.eta_mode, seed)?)))
                .and_then(|(fam, spec)| check_identifiability(fam, &spec, &[len], seed, a.draws));
            cell_answer(len, r)
        })
        .collect();
    let mut answers = answers.into_iter();
    let table: Vec<TableCell> = cells
        .iter()
        .map(|&(i, family, observations)| {
            let answers: Vec<CellAnswer> = answers.by_ref().take(lengths.len()).collect();
            let threshold = answers.iter().find(|x| x.answer == Some(Answer::Yes)).map(|x| x.len);
            TableCell { family, observations, seed: a.seed.wrapping_add(i as u64), threshold, answers }
        })
        .collect();
    let text = match a.format {
        Format::Json => to_json(&envelope("check", a, TableResult { lengths: lengths.clone(), cells: table }))?,
        Format::Csv => {
            let mut s = comment_header("check", a)?;
            let _ = writeln!(s, "family,k,d,{}", obs.iter().map(|o| o.name()).collect::<Vec<_>>().join(","));
            for chunk in table.chunks(obs.len()) {
                let kind = chunk[0].family;
                let k = if kind.is_dependency() { String::new() } else { a.k.to_string() };
                let cols: Vec<String> = chunk
                    .iter()
                    .map(|c| c.threshold.map_or("none".to_string(), |l| format!(">={l}")))
                    .collect();
                let _ = writeln!(s, "{kind},{k},{},{}", a.d, cols.join(","));
            }
            s
        }
    };
    emit(a.out.as_deref(), &text)
}

#[derive(Serialize)]
struct MixingResult<'a> {
    rows: usize,
    columns: usize,
    rank: Option<usize>,
    row_sum_violations: Vec<usize>,
    matrix: &'a MixingFile,
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn mixing(a: &MixingArgs) -> Result<()> {
    let lengths = resolve_lengths(&a.lengths, 3, 3)?;
    let mm = mixing_matrix(a.family, a.obs, &lengths)?;
    let rank = if a.no_rank {
        None
    } else {
        let dense = mm.to_dense();
        Some(numerical_rank(&singular_values(&dense), dense.nrows(), dense.ncols()).rank)
    };
    let violations = mm.row_sum_violations();
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "mixing {} {} L={}: {} rows x {} columns",
        a.family,
        a.obs,
        join_lengths(&lengths),
        mm.nrows(),
        mm.ncols()
    );
    if let Some(r) = rank {
        let _ = writeln!(summary, "rank {r}");
    }
    let _ = writeln!(summary, "row sums exact: {}/{}", mm.nrows() - violations.len(), mm.nrows());
    if let Some(prefix) = &a.out {
        let mut csv = comment_header("mixing", a)?;
        csv.push_str(&mm.to_csv());
        emit(Some(&with_extension(prefix, "csv")), &csv)?;
        let file = mm.to_file();
        let result = MixingResult { rows: mm.nrows(), columns: mm.ncols(), rank, row_sum_violations: violations, matrix: &file };
        emit(Some(&with_extension(prefix, "json")), &to_json(&envelope("mixing", a, result))?)?;
    }
    emit(None, &summary)
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let params = match (&a.input, a.family) {
        (Some(p), _) => ParamFile::read(p)?.to_params()?,
        (None, Some(kind)) => {
            let family = model_family(kind, a.k, a.d)?;
            ModelParams::random(family, &mut ChaCha8Rng::seed_from_u64(a.seed))
        }
        (None, None) => return Err(usage("simulate needs --in or --family")),
    };
    let lengths = resolve_lengths(&a.lengths, 3, 3)?;
    let groups: Vec<Vec<Sentence>> = lengths
        .par_iter()
        .map(|&len| {
            let sampler = Sampler::new(&params, len)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            rng.set_stream(len as u64 + 1);
            Ok((0..a.samples).map(|_| sampler.sample(&mut rng)).collect())
        })
        .collect::<latent_unmix::Result<_>>()?;
    let mut text = comment_header("simulate", a)?;
    for s in groups.iter().flatten() {
        let _ = writeln!(text, "{s}");
    }
    emit(Some(&a.out), &text)?;
    if let Some(p) = &a.params_out {
        emit(Some(p), &to_json(&ParamFile::from_params(&params))?)?;
    }
    Ok(())
}

/// Reads parameters from a parameter file or from the `result.params` of an
/// estimate output.
fn read_params(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::Error::new(e).context(format!("reading {}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let inner = value.pointer("/result/params").or_else(|| value.get("params")).unwrap_or(&value);
    let file: ParamFile = serde_json::from_value(inner.clone())?;
    Ok(file.to_params()?)
}

enum Source {
    Exact(ModelParams),
    Corpus(BTreeMap<usize, Vec<Sentence>>),
}

impl Source {
    fn load(path: &Path) -> Result<Source> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::Error::new(e).context(format!("reading {}", path.display())))?;
        if text.trim_start().starts_with('{') {
            Ok(Source::Exact(read_params(path)?))
        } else {
            Ok(Source::Corpus(group_by_length(read_corpus(path)?)))
        }
    }

    fn moments(&self, spec: &ObservationSpec, lengths: &[usize], d: usize) -> latent_unmix::Result<ObservedMoments> {
        match self {
            Source::Exact(p) => exact_moments_range(p, spec, lengths),
            Source::Corpus(g) => empirical_moments(g, spec, lengths, d),
        }
    }

    fn min_samples(&self, lengths: &[usize]) -> Option<usize> {
        match self {
            Source::Exact(_) => None,
            Source::Corpus(g) => lengths.iter().map(|l| g.get(l).map_or(0, Vec::len)).min(),
        }
    }
}

#[derive(Serialize)]
struct EstimateResult {
    source: &'static str,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    samples: BTreeMap<usize, usize>,
    params: ParamFile,
    permutation_ambiguous: bool,
    diagnostics: Diagnostics,
    #[serde(rename = "match", skip_serializing_if = "Option::is_none")]
    matched: Option<MatchReport>,
}

pub fn estimate(a: &EstimateArgs) -> Result<()> {
    let source = Source::load(&a.input)?;
    let d = match (&source, a.d) {
        (Source::Exact(p), Some(d)) if d != p.family().d => {
            return Err(usage(format!("--d {d} disagrees with the parameter file (d = {})", p.family().d)))
        }
        (Source::Exact(p), _) => p.family().d,
        (Source::Corpus(_), Some(d)) => d,
        (Source::Corpus(g), None) => g.values().flatten().flat_map(|s| s.words().iter().copied()).max().map_or(0, |w| w + 1),
    };
    if let Source::Corpus(g) = &source {
        for s in g.values().flatten() {
            s.check(d)?;
        }
    }
    let k = a.k.or(match &source {
        Source::Exact(p) => p.family().k,
        Source::Corpus(_) => None,
    });
    let need_k = || k.ok_or_else(|| usage(format!("{} estimation needs --k", a.family)));
    let recovered = match a.family {
        FamilyKind::PcfgIe => {
            if a.eta_mode != EtaMode::Both {
                return Err(usage("pcfg-ie estimation needs both η = 1 and η = τ (--eta-mode both)"));
            }
            let k = need_k()?;
            let lengths: Vec<usize> = resolve_lengths(&a.lengths, 3, 3)?.into_iter().filter(|&l| l >= 3).collect();
            if lengths.is_empty() {
                return Err(usage("pcfg-ie estimation needs a length L ≥ 3"));
            }
            let obs = ObservationFamily::AllThinTriples;
            let spec = ObservationSpec::ones_and_tau(obs, d, a.seed)?;
            let moments = source.moments(&spec, &lengths, d)?;
            let mm = mixing_matrix(FamilyKind::PcfgIe, obs, &lengths)?;
            estimate_pcfg_ie(&moments, &mm, k, "1", "tau")?
        }
        FamilyKind::DepIes => {
            let mut moments = source.moments(&ObservationSpec::plain(ObservationFamily::AllPairs)?, &[2, 3], d)?;
            moments.extend(source.moments(&ObservationSpec::plain(ObservationFamily::FirstMoment)?, &[3], d)?);
            let tol = a.tol.unwrap_or_else(|| match source.min_samples(&[2, 3]) {
                Some(n) => DEP_IES_TOL.max(10.0 / (n as f64).sqrt()),
                None => DEP_IES_TOL,
            });
            estimate_dep_ies(&moments, tol)?
        }
        FamilyKind::Hmm => {
            let k = need_k()?;
            let lengths = resolve_lengths(&a.lengths, 3, 3)?;
            let moments = source.moments(&ObservationSpec::plain(ObservationFamily::AllPairs)?, &lengths, d)?;
            estimate_hmm_allpairs(&moments, k)?
        }
        other => {
            return Err(latent_unmix::Error::Unsupported(format!(
                "no estimator for {other}; available: pcfg-ie, dep-ies, hmm"
            ))
            .into())
        }
    };
    let matched = match &a.truth {
        Some(p) => Some(match_params(&recovered.params, &read_params(p)?)?),
        None => None,
    };
    let (source_name, samples) = match &source {
        Source::Exact(_) => ("exact", BTreeMap::new()),
        Source::Corpus(g) => ("empirical", g.iter().map(|(&l, v)| (l, v.len())).collect()),
    };
    let result = EstimateResult {
        source: source_name,
        samples,
        params: ParamFile::from_params(&recovered.params),
        permutation_ambiguous: recovered.permutation_ambiguous,
        diagnostics: recovered.diagnostics,
        matched,
    };
    emit(a.out.as_deref(), &to_json(&envelope("estimate", a, result))?)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let report = match_params(&read_params(&a.input)?, &read_params(&a.truth)?)?;
    emit(a.out.as_deref(), &to_json(&envelope("eval", a, report))?)
}

#[derive(Serialize)]
struct ValidateResult {
    valid: bool,
    family: FamilyKind,
    k: Option<usize>,
    d: usize,
    free_parameters: usize,
}

pub fn validate(a: &ValidateArgs) -> Result<()> {
    let p = read_params(&a.input)?;
    let f = p.family();
    let result = ValidateResult { valid: true, family: f.kind, k: f.k, d: f.d, free_parameters: f.free_len() };
    emit(None, &to_json(&envelope("validate", a, result))?)
}

pub fn hypergraph(a: &HypergraphArgs) -> Result<()> {
    let g = build_hypergraph(model_family(a.family, a.k, a.d)?, a.l)?;
    let mut text = comment_header("hypergraph", a)?;
    text.push_str(&g.dump());
    emit(a.out.as_deref(), &text)
}

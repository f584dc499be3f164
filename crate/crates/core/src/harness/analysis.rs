//! Aggregation and statistics over persisted round records.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{Matrix4, Vector4};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::Scene;
use crate::error::{Error, Result};
use crate::langgen::InputLanguage;
use crate::metrics::{convergence_score, mean_similarity, normalized_edit_distance, pearson};
use crate::rng::rng_for;
use crate::trainer::RoundRecord;

const BOOTSTRAP_STREAM: u64 = 0x424f_4f54;

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(samples: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("bootstrap needs samples"));
    }
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 samples".into()));
    }
    if !(0.0 < level && level < 1.0) || resamples == 0 {
        return Err(Error::InvalidArgument("level must be in (0,1) and resamples positive".into()));
    }
    if samples.iter().all(|x| *x == samples[0]) {
        return Ok((samples[0], samples[0]));
    }
    let n = samples.len();
    let mut rng = rng_for(seed, &[BOOTSTRAP_STREAM]);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&means, alpha), quantile(&means, 1.0 - alpha)))
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Average ranks (1-based) with ties sharing the mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    pearson(&ranks(xs), &ranks(ys))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageBin {
    pub language_id: String,
    pub structure: f64,
    pub bin: usize,
}

/// Equal-count bins by structure rank, ties broken by id; returned in rank order.
pub fn bin_languages(languages: &[(String, f64)], n_bins: usize) -> Result<Vec<LanguageBin>> {
    if n_bins == 0 || n_bins > languages.len() {
        return Err(Error::InvalidArgument(format!(
            "{n_bins} bins for {} languages",
            languages.len()
        )));
    }
    let mut sorted: Vec<&(String, f64)> = languages.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let n = sorted.len();
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(rank, (id, s))| LanguageBin {
            language_id: id.clone(),
            structure: *s,
            bin: rank * n_bins / n,
        })
        .collect())
}

/// Distinct `(language_id, structure)` pairs in first-seen order.
pub fn languages_in(records: &[RoundRecord]) -> Vec<(String, f64)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in records {
        if seen.insert(r.language_id.clone()) {
            out.push((r.language_id.clone(), r.structure));
        }
    }
    out
}

fn at_round<'a>(records: &'a [RoundRecord], language: &str, round: usize) -> Vec<&'a RoundRecord> {
    records
        .iter()
        .filter(|r| r.language_id == language && r.round == round)
        .collect()
}

/// Agreement between agents of one language on the held-out scenes.
pub fn compute_convergence(records: &[RoundRecord], language: &str, round: usize) -> Result<f64> {
    let rows = at_round(records, language, round);
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no records for language {language} at round {round}"
        )));
    }
    let scenes: Vec<Scene> = rows[0].generalization.iter().map(|p| p.scene()).collect();
    let mut per_scene = Vec::with_capacity(scenes.len());
    for (k, scene) in scenes.iter().enumerate() {
        let labels = rows
            .iter()
            .map(|r| {
                r.generalization
                    .get(k)
                    .filter(|p| p.scene() == *scene)
                    .map(|p| p.label.as_str())
                    .ok_or_else(|| Error::InvalidArgument("agents disagree on the test scenes".into()))
            })
            .collect::<Result<Vec<&str>>>()?;
        per_scene.push(labels);
    }
    convergence_score(&per_scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    ProductionSimilarity,
    GeneralizationScore,
    GuessingAccuracy,
}

impl Measure {
    pub const ALL: [Measure; 3] = [
        Measure::ProductionSimilarity,
        Measure::GeneralizationScore,
        Measure::GuessingAccuracy,
    ];

    pub fn of(self, r: &RoundRecord) -> f64 {
        match self {
            Measure::ProductionSimilarity => r.production_similarity,
            Measure::GeneralizationScore => r.generalization_score,
            Measure::GuessingAccuracy => r.guessing_accuracy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::ProductionSimilarity => "production_similarity",
            Measure::GeneralizationScore => "generalization_score",
            Measure::GuessingAccuracy => "guessing_accuracy",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown measure {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub bins: usize,
    pub resamples: usize,
    pub ci_level: f64,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            bins: 5,
            resamples: 2000,
            ci_level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Per-(language, round) aggregate over agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub language_id: String,
    pub structure: f64,
    pub bin: usize,
    pub round: usize,
    pub agents: usize,
    pub production_similarity: Estimate,
    pub generalization_score: Estimate,
    pub guessing_accuracy: Estimate,
    /// Absent with fewer than two agents.
    pub convergence: Option<f64>,
}

fn estimate(xs: &[f64], opts: &AnalysisOptions, seed: u64) -> Result<Estimate> {
    let m = mean(xs);
    let (ci_low, ci_high) = if xs.len() >= 2 {
        bootstrap_ci(xs, opts.resamples, opts.ci_level, seed)?
    } else {
        (m, m)
    };
    Ok(Estimate {
        mean: m,
        ci_low,
        ci_high,
    })
}

/// Rows ordered by language (structure rank) then round.
pub fn summarize(records: &[RoundRecord], opts: &AnalysisOptions) -> Result<Vec<SummaryRow>> {
    let langs = languages_in(records);
    if langs.is_empty() {
        return Err(Error::Empty("no records to summarize"));
    }
    let n_bins = opts.bins.min(langs.len());
    let bins = bin_languages(&langs, n_bins)?;
    let mut grouped: BTreeMap<(&str, usize), Vec<&RoundRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.language_id.as_str(), r.round)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (li, lb) in bins.iter().enumerate() {
        let rounds: Vec<usize> = grouped
            .keys()
            .filter(|(id, _)| *id == lb.language_id)
            .map(|(_, r)| *r)
            .collect();
        for round in rounds {
            let group = &grouped[&(lb.language_id.as_str(), round)];
            let seed_for = |m: usize| crate::rng::derive_seed(opts.seed, &[li as u64, round as u64, m as u64]);
            let values = |m: Measure| group.iter().map(|r| m.of(r)).collect::<Vec<f64>>();
            let convergence = if group.len() >= 2 {
                Some(compute_convergence(records, &lb.language_id, round)?)
            } else {
                None
            };
            rows.push(SummaryRow {
                language_id: lb.language_id.clone(),
                structure: lb.structure,
                bin: lb.bin,
                round,
                agents: group.len(),
                production_similarity: estimate(&values(Measure::ProductionSimilarity), opts, seed_for(0))?,
                generalization_score: estimate(&values(Measure::GeneralizationScore), opts, seed_for(1))?,
                guessing_accuracy: estimate(&values(Measure::GuessingAccuracy), opts, seed_for(2))?,
                convergence,
            });
        }
    }
    Ok(rows)
}

/// OLS fit of `measure ~ 1 + s + r + s·r` with `s` the structure score and `r`
/// the log round, both centered and scaled to unit (population) standard
/// deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub measure: Measure,
    pub intercept: f64,
    pub structure: f64,
    pub log_round: f64,
    pub interaction: f64,
    pub intercept_ci: (f64, f64),
    pub structure_ci: (f64, f64),
    pub log_round_ci: (f64, f64),
    pub interaction_ci: (f64, f64),
    pub observations: usize,
    pub clusters: usize,
}

struct Standardizer {
    mean: f64,
    sd: f64,
}

impl Standardizer {
    fn fit(xs: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = xs.clone().count() as f64;
        let mean = xs.clone().sum::<f64>() / n;
        let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (var > 0.0).then(|| Standardizer { mean, sd: var.sqrt() })
    }

    fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }
}

#[derive(Default, Clone)]
struct Normal {
    xtx: Matrix4<f64>,
    xty: Vector4<f64>,
}

impl Normal {
    fn add(&mut self, row: &Vector4<f64>, y: f64, weight: f64) {
        self.xtx += row * row.transpose() * weight;
        self.xty += row * (y * weight);
    }

    fn solve(&self) -> Result<Vector4<f64>> {
        let scale = self.xtx.diagonal().max().max(1.0);
        let chol = (self.xtx / scale)
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("normal matrix is not positive definite".into()))?;
        let diag_min = chol.l().diagonal().min();
        if diag_min < 1e-10 {
            return Err(Error::RankDeficient(format!("pivot {diag_min:e}")));
        }
        Ok(chol.solve(&(self.xty / scale)))
    }
}

pub fn fit_trend(records: &[RoundRecord], measure: Measure, opts: &AnalysisOptions) -> Result<TrendFit> {
    let langs: BTreeSet<&str> = records.iter().map(|r| r.language_id.as_str()).collect();
    let rounds: BTreeSet<usize> = records.iter().map(|r| r.round).collect();
    if langs.len() < 2 || rounds.len() < 2 {
        return Err(Error::RankDeficient(
            "trend fit needs at least 2 languages and 2 rounds".into(),
        ));
    }
    let s_std = Standardizer::fit(records.iter().map(|r| r.structure))
        .ok_or_else(|| Error::RankDeficient("structure is constant".into()))?;
    let r_std = Standardizer::fit(records.iter().map(|r| (r.round as f64).ln()))
        .ok_or_else(|| Error::RankDeficient("round is constant".into()))?;

    // clusters are agents: (language, agent_index)
    let mut cluster_of: HashMap<(&str, usize), usize> = HashMap::new();
    let mut clusters: Vec<Normal> = Vec::new();
    for r in records {
        let next = cluster_of.len();
        let c = *cluster_of.entry((r.language_id.as_str(), r.agent_index)).or_insert(next);
        if c == clusters.len() {
            clusters.push(Normal::default());
        }
        let s = s_std.apply(r.structure);
        let t = r_std.apply((r.round as f64).ln());
        clusters[c].add(&Vector4::new(1.0, s, t, s * t), measure.of(r), 1.0);
    }
    let mut total = Normal::default();
    for c in &clusters {
        total.xtx += c.xtx;
        total.xty += c.xty;
    }
    let beta = total.solve()?;

    let mut rng = rng_for(opts.seed, &[BOOTSTRAP_STREAM, 0x4f4c53]);
    let k = clusters.len();
    let mut draws: [Vec<f64>; 4] = Default::default();
    for _ in 0..opts.resamples {
        let mut boot = Normal::default();
        for _ in 0..k {
            let c = &clusters[rng.random_range(0..k)];
            boot.xtx += c.xtx;
            boot.xty += c.xty;
        }
        // a resample can miss every language but one
        if let Ok(b) = boot.solve() {
            for (d, v) in draws.iter_mut().zip(b.iter()) {
                d.push(*v);
            }
        }
    }
    let alpha = (1.0 - opts.ci_level) / 2.0;
    let ci = |d: &mut Vec<f64>, point: f64| {
        if d.is_empty() {
            return (point, point);
        }
        d.sort_by(f64::total_cmp);
        (quantile(d, alpha), quantile(d, 1.0 - alpha))
    };
    Ok(TrendFit {
        measure,
        intercept: beta[0],
        structure: beta[1],
        log_round: beta[2],
        interaction: beta[3],
        intercept_ci: ci(&mut draws[0], beta[0]),
        structure_ci: ci(&mut draws[1], beta[1]),
        log_round_ci: ci(&mut draws[2], beta[2]),
        interaction_ci: ci(&mut draws[3], beta[3]),
        observations: records.len(),
        clusters: k,
    })
}

/// External labels per `(language_id, scene)`, e.g. human productions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProductions {
    pub labels: BTreeMap<String, BTreeMap<Scene, String>>,
}

impl ReferenceProductions {
    pub fn insert(&mut self, language: &str, scene: Scene, label: impl Into<String>) {
        self.labels
            .entry(language.to_string())
            .or_default()
            .insert(scene, label.into());
    }

    /// The input language's own labels.
    pub fn from_language(lang: &InputLanguage) -> Self {
        let mut refs = ReferenceProductions::default();
        for it in lang.items() {
            refs.insert(lang.id(), it.scene, it.label.as_str());
        }
        refs
    }

    /// Final-round productions of a population, taking each scene's label
    /// from the first agent (by agent index) that produced it.
    pub fn from_records(records: &[RoundRecord], round: usize) -> Self {
        let mut refs = ReferenceProductions::default();
        let mut rows: Vec<&RoundRecord> = records.iter().filter(|r| r.round == round).collect();
        rows.sort_by_key(|r| (r.language_id.clone(), r.agent_index));
        for r in rows {
            for p in r.memorization.iter().chain(&r.generalization) {
                let entry = refs.labels.entry(r.language_id.clone()).or_default();
                entry.entry(p.scene()).or_insert_with(|| p.label.clone());
            }
        }
        refs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCurvePoint {
    pub language_id: String,
    pub structure: f64,
    pub round: usize,
    pub memorization_similarity: Option<f64>,
    pub generalization_similarity: Option<f64>,
    /// Fraction of produced scenes that have a reference label.
    pub coverage: f64,
}

/// Mean similarity of agent productions to reference labels, per language
/// and round, separately for training and held-out scenes.
pub fn compare_to_reference(records: &[RoundRecord], refs: &ReferenceProductions) -> Vec<ReferenceCurvePoint> {
    let mut grouped: BTreeMap<(String, usize), Vec<&RoundRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.language_id.clone(), r.round)).or_default().push(r);
    }
    let empty = BTreeMap::new();
    let mut out = Vec::new();
    for ((lang, round), rows) in grouped {
        let table = refs.labels.get(&lang).unwrap_or(&empty);
        let (mut covered, mut total) = (0usize, 0usize);
        let mut sim = |pick: fn(&RoundRecord) -> &Vec<crate::trainer::Production>| {
            let pairs: Vec<(&str, &str)> = rows
                .iter()
                .flat_map(|r| pick(r).iter())
                .filter_map(|p| {
                    total += 1;
                    table.get(&p.scene()).map(|gold| {
                        covered += 1;
                        (p.label.as_str(), gold.as_str())
                    })
                })
                .collect();
            mean_similarity(pairs).ok()
        };
        let memorization_similarity = sim(|r| &r.memorization);
        let generalization_similarity = sim(|r| &r.generalization);
        let coverage = if total == 0 { 0.0 } else { covered as f64 / total as f64 };
        if coverage < 1.0 {
            log::warn!("reference covers {:.1}% of scenes for {lang}", 100.0 * coverage);
        }
        out.push(ReferenceCurvePoint {
            structure: rows[0].structure,
            language_id: lang,
            round,
            memorization_similarity,
            generalization_similarity,
            coverage,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnalysisRow {
    pub language_id: String,
    pub structure: f64,
    pub productions: usize,
    pub imperfect: usize,
    pub error_rate: f64,
    /// Mean `1 - normalized edit distance` to the gold label among imperfect
    /// reproductions; `None` when every reproduction was exact.
    pub imperfect_similarity: Option<f64>,
}

/// Memorization errors at `round`: how close the wrong reproductions still are.
pub fn memorization_errors(records: &[RoundRecord], languages: &[InputLanguage], round: usize) -> Result<Vec<ErrorAnalysisRow>> {
    let mut out = Vec::new();
    for lang in languages {
        let rows = at_round(records, lang.id(), round);
        if rows.is_empty() {
            continue;
        }
        let pairs: Vec<(&str, &str)> = rows
            .iter()
            .flat_map(|r| r.memorization.iter())
            .map(|p| {
                lang.label_of(p.scene())
                    .map(|gold| (p.label.as_str(), gold.as_str()))
                    .ok_or_else(|| Error::InvalidArgument(format!("{} has no label for {}", lang.id(), p.scene())))
            })
            .collect::<Result<_>>()?;
        out.push(error_row(lang.id(), lang.structure().value(), &pairs));
    }
    Ok(out)
}

pub fn error_row(language_id: &str, structure: f64, pairs: &[(&str, &str)]) -> ErrorAnalysisRow {
    let wrong: Vec<f64> = pairs
        .iter()
        .filter(|(p, g)| p != g)
        .map(|(p, g)| 1.0 - normalized_edit_distance(p, g))
        .collect();
    ErrorAnalysisRow {
        language_id: language_id.to_string(),
        structure,
        productions: pairs.len(),
        imperfect: wrong.len(),
        error_rate: if pairs.is_empty() { 0.0 } else { wrong.len() as f64 / pairs.len() as f64 },
        imperfect_similarity: (!wrong.is_empty()).then(|| mean(&wrong)),
    }
}

//! Experiment orchestration over a language suite and agent population.

pub mod analysis;
pub mod export;

use std::collections::BTreeSet;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{validate_language, AngleDiffMode};
use crate::error::{Error, Result};
use crate::langgen::InputLanguage;
use crate::metrics::{generalization_score, mean_similarity};
use crate::rng::derive_seed;
use crate::trainer::{train_agent, RoundRecord, TrainerConfig};

pub use analysis::{
    bin_languages, bootstrap_ci, compare_to_reference, compute_convergence, fit_trend, memorization_errors, spearman,
    summarize, AnalysisOptions, ErrorAnalysisRow, Estimate, LanguageBin, Measure, ReferenceCurvePoint,
    ReferenceProductions, SummaryRow, TrendFit,
};

const AGENT_STREAM: u64 = 0x4147_454e;

/// Seed of agent `agent_index` learning language `language_index`.
pub fn agent_seed(master_seed: u64, language_index: usize, agent_index: usize) -> u64 {
    derive_seed(master_seed, &[AGENT_STREAM, language_index as u64, agent_index as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub languages: Vec<InputLanguage>,
    pub agents_per_language: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub trainer: TrainerConfig,
    pub analysis: AnalysisOptions,
}

impl ExperimentConfig {
    pub fn new(languages: Vec<InputLanguage>) -> Self {
        ExperimentConfig {
            languages,
            agents_per_language: 100,
            master_seed: 0,
            workers: 1,
            out_dir: None,
            trainer: TrainerConfig::default(),
            analysis: AnalysisOptions::default(),
        }
    }

    pub fn rounds(&self) -> usize {
        self.trainer.rounds
    }

    pub fn angle_mode(&self) -> AngleDiffMode {
        self.trainer.angle_mode
    }

    pub fn validate(&self) -> Result<()> {
        if self.languages.is_empty() {
            return Err(Error::Empty("experiment needs at least one language"));
        }
        if self.agents_per_language < 2 {
            return Err(Error::InvalidArgument(format!(
                "agents_per_language must be at least 2, got {}",
                self.agents_per_language
            )));
        }
        if self.analysis.resamples < 100 {
            return Err(Error::InvalidArgument(format!(
                "bootstrap resamples must be at least 100, got {}",
                self.analysis.resamples
            )));
        }
        if self.workers == 0 || self.trainer.rounds == 0 {
            return Err(Error::InvalidArgument("workers and rounds must be positive".into()));
        }
        let mut ids = BTreeSet::new();
        for lang in &self.languages {
            if !ids.insert(lang.id()) {
                return Err(Error::InvalidArgument(format!("duplicate language id {}", lang.id())));
            }
            validate_language(lang).into_result()?;
        }
        self.trainer.agent.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFailure {
    pub language_id: String,
    pub agent_index: usize,
    pub agent_seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Ordered by language (suite order), agent, round.
    pub records: Vec<RoundRecord>,
    pub summary: Vec<SummaryRow>,
    pub trends: Vec<TrendFit>,
    pub failures: Vec<AgentFailure>,
}

/// Trains every agent; a failing agent is reported and its records dropped.
pub fn train_population(config: &ExperimentConfig) -> Result<(Vec<RoundRecord>, Vec<AgentFailure>)> {
    config.validate()?;
    let tasks: Vec<(usize, usize)> = (0..config.languages.len())
        .flat_map(|l| (0..config.agents_per_language).map(move |a| (l, a)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<(usize, usize, u64, Result<Vec<RoundRecord>>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(l, a)| {
                let seed = agent_seed(config.master_seed, l, a);
                let lang = &config.languages[l];
                log::debug!("training {} agent {a}", lang.id());
                (l, a, seed, train_agent(lang, &config.trainer, a, seed))
            })
            .collect()
    });
    let mut records = Vec::with_capacity(tasks.len() * config.trainer.rounds);
    let mut failures = Vec::new();
    for (l, a, seed, outcome) in outcomes {
        match outcome {
            Ok(rs) => records.extend(rs),
            Err(e) => {
                let language_id = config.languages[l].id().to_string();
                log::error!("{language_id} agent {a} failed: {e}");
                failures.push(AgentFailure {
                    language_id,
                    agent_index: a,
                    agent_seed: seed,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok((records, failures))
}

/// Summary rows and one trend fit per measure. Fits that are not
/// identifiable (e.g. a single language) are skipped with a warning.
pub fn analyze(records: &[RoundRecord], opts: &AnalysisOptions) -> Result<(Vec<SummaryRow>, Vec<TrendFit>)> {
    let summary = summarize(records, opts)?;
    let mut trends = Vec::new();
    for m in Measure::ALL {
        match fit_trend(records, m, opts) {
            Ok(t) => trends.push(t),
            Err(Error::RankDeficient(why)) => log::warn!("no trend for {}: {why}", m.name()),
            Err(e) => return Err(e),
        }
    }
    Ok((summary, trends))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let (records, failures) = train_population(config)?;
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("every agent failed ({} failures)", failures.len())));
    }
    let opts = AnalysisOptions {
        seed: config.master_seed,
        ..config.analysis
    };
    let (summary, trends) = analyze(&records, &opts)?;
    let result = ExperimentResult {
        records,
        summary,
        trends,
        failures,
    };
    if let Some(dir) = &config.out_dir {
        export::write_all(&result, dir)?;
    }
    Ok(result)
}

/// A stored metric that disagrees with its recomputation from the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMismatch {
    pub language_id: String,
    pub agent_index: usize,
    pub round: usize,
    pub field: &'static str,
    pub stored: f64,
    pub recomputed: f64,
}

/// Recomputes production similarity and generalization score of every
/// record from its produced labels.
pub fn verify_records(
    records: &[RoundRecord],
    languages: &[InputLanguage],
    mode: AngleDiffMode,
    tolerance: f64,
) -> Result<Vec<RecordMismatch>> {
    let mut out = Vec::new();
    for r in records {
        let lang = languages
            .iter()
            .find(|l| l.id() == r.language_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no language {} for stored records", r.language_id)))?;
        let pairs = r
            .memorization
            .iter()
            .map(|p| {
                lang.label_of(p.scene())
                    .map(|gold| (p.label.as_str(), gold.as_str()))
                    .ok_or_else(|| Error::InvalidArgument(format!("{} has no label for {}", lang.id(), p.scene())))
            })
            .collect::<Result<Vec<_>>>()?;
        let prod = mean_similarity(pairs)?;
        let train: Vec<_> = r.memorization.iter().map(|p| (p.scene(), p.label.as_str())).collect();
        let test: Vec<_> = r.generalization.iter().map(|p| (p.scene(), p.label.as_str())).collect();
        let gen = generalization_score(&train, &test, mode)?;
        for (field, stored, recomputed) in [
            ("production_similarity", r.production_similarity, prod),
            ("generalization_score", r.generalization_score, gen.value),
        ] {
            if (stored - recomputed).abs() > tolerance {
                out.push(RecordMismatch {
                    language_id: r.language_id.clone(),
                    agent_index: r.agent_index,
                    round: r.round,
                    field,
                    stored,
                    recomputed,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;

//! In-context learning protocol: prompts built from a language's training
//! items, one stateless completion call per scene, and the same memorization
//! and generalization measures used for the neural agents.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Alphabet, AngleDiffMode, Scene, MAX_LABEL_LEN};
use crate::error::{Error, Result};
use crate::harness::analysis::{error_row, ErrorAnalysisRow};
use crate::langgen::{GeneratorSpec, InputLanguage, Split};
use crate::metrics::{generalization_score, mean_similarity, GeneralizationScore};

pub const CONTEXT_LINES: usize = 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    Memorization,
    Generalization,
}

/// Context triples in canonical scene order plus the query scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub context: Vec<(Scene, String)>,
    pub query: Scene,
}

pub fn render_line(scene: Scene, label: &str) -> String {
    format!("shape {}, angle {}: {label}", scene.shape(), scene.angle())
}

pub fn render_query(scene: Scene) -> String {
    format!("shape {}, angle {}:", scene.shape(), scene.angle())
}

impl PromptSpec {
    pub fn new(lang: &InputLanguage, query: Scene, mode: QueryMode) -> Result<Self> {
        let item = lang
            .item(query)
            .ok_or_else(|| Error::InvalidArgument(format!("{query} is not a scene of {}", lang.id())))?;
        let expected = match mode {
            QueryMode::Memorization => Split::Train,
            QueryMode::Generalization => Split::Test,
        };
        if item.split != expected {
            return Err(Error::InvalidArgument(format!(
                "{query} is a {} scene of {}, not usable for a {mode:?} query",
                item.split.as_str(),
                lang.id()
            )));
        }
        let mut context: Vec<(Scene, String)> = lang
            .train_items()
            .map(|it| (it.scene, it.label.as_str().to_string()))
            .collect();
        context.sort_by_key(|(s, _)| *s);
        if context.len() != CONTEXT_LINES {
            return Err(Error::InvalidArgument(format!(
                "{} has {} training items, prompts need {CONTEXT_LINES}",
                lang.id(),
                context.len()
            )));
        }
        Ok(PromptSpec { context, query })
    }

    /// One line per context triple, then the query line ending at the colon.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (scene, label) in &self.context {
            out.push_str(&render_line(*scene, label));
            out.push('\n');
        }
        out.push_str(&render_query(self.query));
        out
    }
}

pub fn build_prompt(lang: &InputLanguage, query: Scene, mode: QueryMode) -> Result<String> {
    Ok(PromptSpec::new(lang, query, mode)?.render())
}

/// The scene named by a prompt's final line.
pub fn parse_query(prompt: &str) -> Result<Scene> {
    let last = prompt.lines().last().unwrap_or("");
    let bad = || Error::Parse {
        path: "<prompt>".into(),
        line: prompt.lines().count(),
        message: format!("not a query line: {last:?}"),
    };
    let rest = last.strip_prefix("shape ").ok_or_else(bad)?;
    let rest = rest.strip_suffix(':').ok_or_else(bad)?;
    let (shape, angle) = rest.split_once(", angle ").ok_or_else(bad)?;
    Scene::new(shape.parse().map_err(|_| bad())?, angle.parse().map_err(|_| bad())?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCompletion {
    pub label: String,
    /// Text followed the first token.
    pub trailing_text: bool,
    /// Characters outside the language alphabet, kept in the label.
    pub foreign_chars: Vec<char>,
}

pub fn parse_completion(text: &str, alphabet: Option<&Alphabet>) -> Result<ParsedCompletion> {
    let trimmed = text.trim();
    let mut tokens = trimmed.split_whitespace();
    let label = tokens.next().ok_or_else(|| Error::InvalidLabel {
        label: text.to_string(),
        reason: "empty completion".into(),
    })?;
    if label.chars().count() > MAX_LABEL_LEN {
        return Err(Error::InvalidLabel {
            label: label.to_string(),
            reason: format!("longer than {MAX_LABEL_LEN} characters"),
        });
    }
    let mut foreign_chars: Vec<char> = alphabet
        .map(|a| label.chars().filter(|c| !a.contains(*c)).collect())
        .unwrap_or_default();
    foreign_chars.dedup();
    Ok(ParsedCompletion {
        label: label.to_string(),
        trailing_text: tokens.next().is_some(),
        foreign_chars,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub temperature: f64,
    pub max_tokens: usize,
}

/// A text-completion service. Calls take `&self`, so nothing from one call
/// can be fed into the next through the backend.
pub trait CompletionBackend: Sync {
    fn name(&self) -> &str;

    fn supports_zero_temperature(&self) -> bool {
        true
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String>;
}

/// Answers with the language's own label for the query scene.
#[derive(Debug, Clone)]
pub struct GoldEcho {
    pub language: InputLanguage,
}

impl CompletionBackend for GoldEcho {
    fn name(&self) -> &str {
        "gold-echo"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        let scene = parse_query(request.prompt)?;
        self.language
            .label_of(scene)
            .map(|l| format!(" {l}\n"))
            .ok_or_else(|| Error::Backend(format!("no gold label for {scene}")))
    }
}

/// Applies the compositional rule of a generator spec.
#[derive(Debug, Clone)]
pub struct RuleFollowing {
    pub spec: GeneratorSpec,
}

impl CompletionBackend for RuleFollowing {
    fn name(&self) -> &str {
        "rule-following"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        let scene = parse_query(request.prompt)?;
        let shape = &self.spec.shape_morphemes[usize::from(scene.shape() - 1)];
        let angle = self
            .spec
            .angle_morphemes
            .iter()
            .find(|(a, _)| *a == scene.angle())
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Backend(format!("rule has no morpheme for angle {}", scene.angle())))?;
        Ok(format!(" {shape}{}{angle}", self.spec.separator))
    }
}

#[derive(Debug, Clone)]
pub struct Constant(pub String);

impl CompletionBackend for Constant {
    fn name(&self) -> &str {
        "constant"
    }

    fn complete(&self, _: &CompletionRequest<'_>) -> Result<String> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IclConfig {
    pub temperature: f64,
    pub max_attempts: usize,
    pub max_tokens: usize,
    /// Requests in flight at once.
    pub concurrency: usize,
    pub angle_mode: AngleDiffMode,
}

impl Default for IclConfig {
    fn default() -> Self {
        IclConfig {
            temperature: 0.0,
            max_attempts: 3,
            max_tokens: 16,
            concurrency: 1,
            angle_mode: AngleDiffMode::Circular,
        }
    }
}

impl IclConfig {
    pub fn validate_for(&self, backend: &dyn CompletionBackend) -> Result<()> {
        if self.temperature != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sampling temperature must be 0, got {}",
                self.temperature
            )));
        }
        if !backend.supports_zero_temperature() {
            return Err(Error::InvalidArgument(format!(
                "backend {} cannot sample at temperature 0",
                backend.name()
            )));
        }
        if self.max_attempts == 0 || self.concurrency == 0 {
            return Err(Error::InvalidArgument("attempts and concurrency must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclRecord {
    pub language_id: String,
    pub shape: u8,
    pub angle: u16,
    pub mode: QueryMode,
    pub gold: String,
    /// `None` when every attempt failed or the completion was unusable.
    pub label: Option<String>,
    pub trailing_text: bool,
    pub foreign_chars: Vec<char>,
    pub attempts: usize,
    pub error: Option<String>,
}

impl IclRecord {
    pub fn scene(&self) -> Scene {
        Scene::new(self.shape, self.angle).expect("records are built from valid scenes")
    }
}

/// Queries one scene, retrying backend failures up to `max_attempts` times.
pub fn query_scene(
    lang: &InputLanguage,
    scene: Scene,
    mode: QueryMode,
    backend: &dyn CompletionBackend,
    config: &IclConfig,
) -> Result<IclRecord> {
    let prompt = build_prompt(lang, scene, mode)?;
    let gold = lang.label_of(scene).map(|l| l.as_str().to_string()).unwrap_or_default();
    let request = CompletionRequest {
        prompt: &prompt,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };
    let mut record = IclRecord {
        language_id: lang.id().to_string(),
        shape: scene.shape(),
        angle: scene.angle(),
        mode,
        gold,
        label: None,
        trailing_text: false,
        foreign_chars: vec![],
        attempts: 0,
        error: None,
    };
    while record.attempts < config.max_attempts {
        record.attempts += 1;
        match backend.complete(&request) {
            Ok(text) => {
                match parse_completion(&text, Some(lang.alphabet())) {
                    Ok(p) => {
                        record.label = Some(p.label);
                        record.trailing_text = p.trailing_text;
                        record.foreign_chars = p.foreign_chars;
                        record.error = None;
                    }
                    Err(e) => record.error = Some(e.to_string()),
                }
                break;
            }
            Err(e) => {
                log::warn!("{} attempt {} for {scene}: {e}", backend.name(), record.attempts);
                record.error = Some(e.to_string());
            }
        }
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclReport {
    pub language_id: String,
    pub structure: f64,
    pub backend: String,
    /// Training scenes then held-out scenes, each in canonical order.
    pub records: Vec<IclRecord>,
    /// Fraction of scenes with a usable completion.
    pub coverage: f64,
    pub production_similarity: Option<f64>,
    pub memorization_error_rate: Option<f64>,
    pub generalization: Option<GeneralizationScore>,
    pub error_analysis: ErrorAnalysisRow,
}

pub fn run_icl_eval(lang: &InputLanguage, backend: &dyn CompletionBackend, config: &IclConfig) -> Result<IclReport> {
    config.validate_for(backend)?;
    let queries: Vec<(Scene, QueryMode)> = lang
        .train_scenes()
        .into_iter()
        .map(|s| (s, QueryMode::Memorization))
        .chain(lang.test_scenes().into_iter().map(|s| (s, QueryMode::Generalization)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let records = pool.install(|| {
        queries
            .par_iter()
            .map(|&(s, m)| query_scene(lang, s, m, backend, config))
            .collect::<Result<Vec<_>>>()
    })?;
    score_records(lang, backend.name(), records, config.angle_mode)
}

/// Aggregates per-scene records; missing scenes are left out of every measure.
pub fn score_records(
    lang: &InputLanguage,
    backend: &str,
    records: Vec<IclRecord>,
    mode: AngleDiffMode,
) -> Result<IclReport> {
    let answered = records.iter().filter(|r| r.label.is_some()).count();
    let coverage = if records.is_empty() { 0.0 } else { answered as f64 / records.len() as f64 };
    if coverage < 1.0 {
        log::warn!("{backend} answered {answered} of {} scenes for {}", records.len(), lang.id());
    }
    let produced = |m: QueryMode| {
        records
            .iter()
            .filter(move |r| r.mode == m)
            .filter_map(|r| r.label.as_deref().map(|l| (r, l)))
    };
    let mem_pairs: Vec<(&str, &str)> = produced(QueryMode::Memorization)
        .map(|(r, l)| (l, r.gold.as_str()))
        .collect();
    let production_similarity = mean_similarity(mem_pairs.iter().copied()).ok();
    let error_analysis = error_row(lang.id(), lang.structure().value(), &mem_pairs);
    let memorization_error_rate = (!mem_pairs.is_empty()).then_some(error_analysis.error_rate);
    let train: Vec<(Scene, &str)> = produced(QueryMode::Memorization).map(|(r, l)| (r.scene(), l)).collect();
    let test: Vec<(Scene, &str)> = produced(QueryMode::Generalization).map(|(r, l)| (r.scene(), l)).collect();
    let generalization = if train.is_empty() || test.is_empty() {
        None
    } else {
        Some(generalization_score(&train, &test, mode)?)
    };
    Ok(IclReport {
        language_id: lang.id().to_string(),
        structure: lang.structure().value(),
        backend: backend.to_string(),
        records,
        coverage,
        production_similarity,
        memorization_error_rate,
        generalization,
        error_analysis,
    })
}

mod http;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use langlab::harness::{
    self, analysis, export, AnalysisOptions, ExperimentConfig, ReferenceProductions,
};
use langlab::icl::{self, CompletionBackend, Constant, GoldEcho, IclConfig, RuleFollowing};
use langlab::langgen::{default_targets, load_language, save_language, synthesize_suite, GeneratorSpec};
use langlab::trainer::RoundRecord;
use langlab::{AngleDiffMode, InputLanguage};

#[derive(Parser, Debug)]
#[command(name = "langlab", version, about = "Train neural learners on miniature artificial languages")]
struct Cli {
    /// Master seed for synthesis and training.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory (each command has its own default).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value_t = 100)]
    rounds: usize,
    /// Agents per language.
    #[arg(long, global = true, default_value_t = 100)]
    agents: usize,
    #[arg(long, global = true, default_value = "circular")]
    angle_mode: AngleDiffMode,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a language suite and save one file per language.
    GenLangs {
        /// Number of evenly spaced structure targets.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Explicit ascending targets instead of `--count`.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<f64>>,
    },
    /// Train agent populations and write records and summaries.
    Train {
        /// Language files or directories of `.lang` files.
        #[arg(long, required = true, num_args = 1..)]
        langs: Vec<PathBuf>,
        /// Hidden, embedding and encoder output size.
        #[arg(long, default_value_t = 50)]
        hidden: usize,
    },
    /// Recompute stored metrics from the produced labels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Languages of the run; defaults to `<run>/languages`.
        #[arg(long, num_args = 1..)]
        langs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1e-12)]
        tolerance: f64,
    },
    /// Summaries, trend fits, error analysis and reference comparison.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 5)]
        bins: usize,
        #[arg(long, default_value_t = 2000)]
        resamples: usize,
        #[arg(long, default_value_t = 0.95)]
        ci_level: f64,
        /// Another run on the same languages whose final productions serve as reference labels.
        #[arg(long)]
        reference_run: Option<PathBuf>,
    },
    /// Evaluate a completion backend with the in-context protocol.
    Icl {
        #[arg(long, required = true, num_args = 1..)]
        langs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Backend::GoldEcho)]
        backend: Backend,
        /// Reply of the constant backend.
        #[arg(long, default_value = "tup")]
        constant: String,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Backend {
    /// Answers with the gold label.
    GoldEcho,
    /// Applies the default compositional rule.
    Rule,
    Constant,
    /// Endpoint from LANGLAB_COMPLETION_URL (key: LANGLAB_COMPLETION_KEY, model: LANGLAB_COMPLETION_MODEL).
    Http,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match &cli.command {
        Command::GenLangs { count, targets } => {
            let out = cli.out.clone().unwrap_or_else(|| "langs".into());
            let spec = GeneratorSpec {
                angle_mode: cli.angle_mode,
                ..GeneratorSpec::default()
            };
            let targets = match targets {
                Some(t) => t.clone(),
                None => default_targets(&spec, *count)?,
            };
            let suite = synthesize_suite(&spec, &targets, cli.seed)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for lang in &suite {
                let path = out.join(format!("{}.lang", lang.id()));
                save_language(lang, &path)?;
                println!("{}\t{:.4}\t{}", lang.id(), lang.structure().value(), path.display());
            }
        }
        Command::Train { langs, hidden } => {
            let out = cli.out.clone().unwrap_or_else(|| "run".into());
            let languages = load_languages(langs)?;
            let mut config = ExperimentConfig::new(languages);
            config.agents_per_language = cli.agents;
            config.master_seed = cli.seed;
            config.workers = workers;
            config.trainer.rounds = cli.rounds;
            config.trainer.angle_mode = cli.angle_mode;
            config.trainer.agent = langlab::neuralnet::AgentConfig::with_dims(*hidden);
            config.out_dir = Some(out.clone());
            let result = harness::run_experiment(&config)?;
            let lang_dir = out.join("languages");
            std::fs::create_dir_all(&lang_dir).with_context(|| format!("creating {}", lang_dir.display()))?;
            for lang in &config.languages {
                save_language(lang, &lang_dir.join(format!("{}.lang", lang.id())))?;
            }
            println!(
                "{} records, {} summary rows, {} failed agents -> {}",
                result.records.len(),
                result.summary.len(),
                result.failures.len(),
                out.display()
            );
            for f in &result.failures {
                eprintln!("failed: {} agent {}: {}", f.language_id, f.agent_index, f.message);
            }
        }
        Command::Eval { run, langs, tolerance } => {
            let records = read_run(run)?;
            let languages = run_languages(run, langs)?;
            let mismatches = harness::verify_records(&records, &languages, cli.angle_mode, *tolerance)?;
            for m in &mismatches {
                println!(
                    "{} agent {} round {} {}: stored {} recomputed {}",
                    m.language_id, m.agent_index, m.round, m.field, m.stored, m.recomputed
                );
            }
            println!("checked {} records, {} mismatches", records.len(), mismatches.len());
            if !mismatches.is_empty() {
                bail!("stored metrics disagree with recomputation");
            }
        }
        Command::Analyze {
            run,
            bins,
            resamples,
            ci_level,
            reference_run,
        } => analyze(&cli, run, *bins, *resamples, *ci_level, reference_run.as_deref())?,
        Command::Icl {
            langs,
            backend,
            constant,
            concurrency,
        } => {
            let out = cli.out.clone().unwrap_or_else(|| "icl".into());
            let languages = load_languages(langs)?;
            let config = IclConfig {
                concurrency: *concurrency,
                angle_mode: cli.angle_mode,
                ..IclConfig::default()
            };
            let http = match backend {
                Backend::Http => Some(http::HttpBackend::from_env()?),
                _ => None,
            };
            let mut reports = Vec::new();
            for lang in &languages {
                let gold = GoldEcho { language: lang.clone() };
                let rule = RuleFollowing {
                    spec: GeneratorSpec::default(),
                };
                let fixed = Constant(constant.clone());
                let b: &dyn CompletionBackend = match backend {
                    Backend::GoldEcho => &gold,
                    Backend::Rule => &rule,
                    Backend::Constant => &fixed,
                    Backend::Http => http.as_ref().expect("built above"),
                };
                let report = icl::run_icl_eval(lang, b, &config)?;
                println!(
                    "{}\tstructure {:.4}\tcoverage {:.3}\terror rate {}\tgeneralization {}",
                    lang.id(),
                    report.structure,
                    report.coverage,
                    fmt_opt(report.memorization_error_rate),
                    fmt_opt(report.generalization.map(|g| g.value)),
                );
                reports.push(report);
            }
            let records: Vec<_> = reports.iter().flat_map(|r| r.records.iter().cloned()).collect();
            export::write_jsonl(&records, &out.join("icl_records.jsonl"))?;
            export::write_jsonl(&reports, &out.join("icl_reports.jsonl"))?;
            let errors: Vec<_> = reports.iter().map(|r| r.error_analysis.clone()).collect();
            export::write_error_analysis(&errors, &out.join("error_analysis.csv"))?;
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn analyze(
    cli: &Cli,
    run: &Path,
    bins: usize,
    resamples: usize,
    ci_level: f64,
    reference_run: Option<&Path>,
) -> Result<()> {
    if resamples < 100 {
        bail!("--resamples must be at least 100");
    }
    let out = cli.out.clone().unwrap_or_else(|| run.to_path_buf());
    let records = read_run(run)?;
    let opts = AnalysisOptions {
        bins,
        resamples,
        ci_level,
        seed: cli.seed,
    };
    let (summary, trends) = harness::analyze(&records, &opts)?;
    export::write_analysis(&summary, &trends, &out)?;
    let languages = analysis::languages_in(&records);
    let rounds: std::collections::BTreeSet<usize> = records.iter().map(|r| r.round).collect();
    println!(
        "summary: {} rows ({} languages x {} rounds) -> {}",
        summary.len(),
        languages.len(),
        rounds.len(),
        out.join(export::SUMMARY_FILE).display()
    );
    for t in &trends {
        println!(
            "{}: structure {:+.4} [{:+.4}, {:+.4}], log_round {:+.4}, interaction {:+.4}",
            t.measure.name(),
            t.structure,
            t.structure_ci.0,
            t.structure_ci.1,
            t.log_round,
            t.interaction
        );
    }
    let last = *rounds.last().expect("records are non-empty");
    let lang_dir = run.join("languages");
    if lang_dir.is_dir() {
        let langs = load_languages(&[lang_dir])?;
        let rows = harness::memorization_errors(&records, &langs, last)?;
        export::write_error_analysis(&rows, &out.join("error_analysis.csv"))?;
    }
    if let Some(reference) = reference_run {
        let refs = ReferenceProductions::from_records(&read_run(reference)?, last);
        let curve = harness::compare_to_reference(&records, &refs);
        export::write_reference_curves(&curve, &out.join("reference.csv"))?;
    }
    Ok(())
}

fn read_run(run: &Path) -> Result<Vec<RoundRecord>> {
    let path = run.join(export::RECORDS_FILE);
    let records = export::read_records(&path)?;
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    Ok(records)
}

fn run_languages(run: &Path, langs: &[PathBuf]) -> Result<Vec<InputLanguage>> {
    if langs.is_empty() {
        load_languages(&[run.join("languages")])
    } else {
        load_languages(langs)
    }
}

/// Files as given; directories contribute their `.lang` files in name order.
fn load_languages(paths: &[PathBuf]) -> Result<Vec<InputLanguage>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "lang"))
                .collect();
            found.sort();
            if found.is_empty() {
                bail!("{} contains no .lang files", p.display());
            }
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    files
        .iter()
        .map(|f| load_language(f).map_err(anyhow::Error::from))
        .collect()
}

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::analysis::{error_row, ranks};
use super::*;
use crate::domain::Scene;
use crate::langgen::{synthesize_suite, GeneratorSpec};
use crate::rng::rng_for;
use crate::trainer::Production;

fn opts() -> AnalysisOptions {
    AnalysisOptions {
        resamples: 500,
        ..AnalysisOptions::default()
    }
}

fn record(lang: &str, structure: f64, agent: usize, round: usize, value: f64) -> RoundRecord {
    RoundRecord {
        language_id: lang.into(),
        structure,
        agent_index: agent,
        agent_seed: agent as u64,
        round,
        production_similarity: value,
        generalization_score: value,
        generalization_degenerate: false,
        guessing_accuracy: value,
        exposure_loss: 0.0,
        guessing_loss: 0.0,
        production_loss: 0.0,
        memorization: vec![],
        generalization: vec![],
    }
}

fn prod(shape: u8, angle: u16, label: &str) -> Production {
    Production {
        shape,
        angle,
        label: label.into(),
    }
}

#[test]
fn bootstrap_constant_and_containment() {
    assert_eq!(bootstrap_ci(&[0.4; 10], 200, 0.95, 1).unwrap(), (0.4, 0.4));
    let xs = [0.1, 0.5, 0.2, 0.9, 0.3, 0.7];
    let (lo, hi) = bootstrap_ci(&xs, 1000, 0.95, 1).unwrap();
    let m = analysis::mean(&xs);
    assert!(lo <= m && m <= hi);
    assert_eq!(bootstrap_ci(&xs, 1000, 0.95, 1).unwrap(), (lo, hi));
    assert!(bootstrap_ci(&[], 100, 0.95, 1).is_err());
    assert!(bootstrap_ci(&[1.0], 100, 0.95, 1).is_err());
}

#[test]
fn bootstrap_half_width_matches_normal_theory() {
    let mut rng = rng_for(3, &[]);
    let xs: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
    let (lo, hi) = bootstrap_ci(&xs, 2000, 0.95, 9).unwrap();
    let half = (hi - lo) / 2.0;
    let expected = 1.96 / 1000f64.sqrt();
    assert!((half - expected).abs() < 0.3 * expected, "{half}");
}

#[test]
fn spearman_uses_average_ranks() {
    assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]).unwrap();
    assert!((rho - 1.0).abs() < 1e-12);
    let rho = spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
    assert!((rho + 1.0).abs() < 1e-12);
}

#[test]
fn bins_have_equal_counts() {
    let langs: Vec<(String, f64)> = (0..10).map(|i| (format!("l{i}"), 1.0 - i as f64 / 10.0)).collect();
    let bins = bin_languages(&langs, 5).unwrap();
    for b in 0..5 {
        assert_eq!(bins.iter().filter(|x| x.bin == b).count(), 2);
    }
    assert_eq!(bins[0].language_id, "l9");
    assert_eq!(bins[9].bin, 4);

    let five = bin_languages(&langs[..5], 5).unwrap();
    assert!(five.iter().enumerate().all(|(i, b)| b.bin == i));
    assert!(bin_languages(&langs[..4], 5).is_err());

    let tied = vec![("b".to_string(), 0.5), ("a".to_string(), 0.5)];
    let bins = bin_languages(&tied, 2).unwrap();
    assert_eq!((bins[0].language_id.as_str(), bins[0].bin), ("a", 0));
}

#[test]
fn convergence_over_records() {
    let mut rs = vec![record("x", 0.5, 0, 1, 0.0), record("x", 0.5, 1, 1, 0.0)];
    rs[0].generalization = vec![prod(1, 30, "ab"), prod(2, 45, "cd")];
    rs[1].generalization = rs[0].generalization.clone();
    assert_eq!(compute_convergence(&rs, "x", 1).unwrap(), 1.0);
    rs[1].generalization = vec![prod(1, 30, "ax"), prod(2, 45, "xd")];
    assert!((compute_convergence(&rs, "x", 1).unwrap() - 0.5).abs() < 1e-15);
    assert!(compute_convergence(&rs, "x", 2).is_err());
    assert!(compute_convergence(&rs[..1], "x", 1).is_err());
}

fn trend_fixture(f: impl Fn(f64, f64) -> f64) -> Vec<RoundRecord> {
    // structures and rounds chosen so the z-scores are easy to state
    let structures = [0.2, 0.4, 0.6, 0.8];
    let rounds = [1usize, 2, 4, 8];
    let s_mean = 0.5;
    let s_sd = (0.05f64).sqrt();
    let lr_mean = 2f64.ln() * 1.5;
    let lr_sd = (2f64.ln()) * (1.25f64).sqrt();
    let mut out = Vec::new();
    for (l, s) in structures.iter().enumerate() {
        for agent in 0..3 {
            for r in rounds {
                let sz = (s - s_mean) / s_sd;
                let tz = ((r as f64).ln() - lr_mean) / lr_sd;
                out.push(record(&format!("l{l}"), *s, agent, r, f(sz, tz)));
            }
        }
    }
    out
}

#[test]
fn trend_recovers_structure_slope() {
    let rs = trend_fixture(|s, _| 0.1 * s);
    let fit = fit_trend(&rs, Measure::GeneralizationScore, &opts()).unwrap();
    assert!((fit.structure - 0.1).abs() < 1e-9, "{fit:?}");
    for v in [fit.intercept, fit.log_round, fit.interaction] {
        assert!(v.abs() < 1e-9, "{fit:?}");
    }
    assert_eq!(fit.clusters, 12);
}

#[test]
fn trend_recovers_interaction() {
    let rs = trend_fixture(|s, t| 0.3 + 0.25 * s * t);
    let fit = fit_trend(&rs, Measure::ProductionSimilarity, &opts()).unwrap();
    assert!((fit.interaction - 0.25).abs() < 1e-9, "{fit:?}");
    assert!((fit.intercept - 0.3).abs() < 1e-9);
    assert!(fit.structure.abs() < 1e-9 && fit.log_round.abs() < 1e-9);
    assert!(fit.interaction_ci.0 <= 0.25 && 0.25 <= fit.interaction_ci.1);
}

#[test]
fn trend_needs_two_languages_and_rounds() {
    let rs: Vec<_> = trend_fixture(|s, _| s).into_iter().filter(|r| r.language_id == "l0").collect();
    assert!(matches!(
        fit_trend(&rs, Measure::GeneralizationScore, &opts()),
        Err(Error::RankDeficient(_))
    ));
    let rs: Vec<_> = trend_fixture(|s, _| s).into_iter().filter(|r| r.round == 4).collect();
    assert!(matches!(
        fit_trend(&rs, Measure::GeneralizationScore, &opts()),
        Err(Error::RankDeficient(_))
    ));
}

#[test]
fn error_rows_only_count_imperfect_reproductions() {
    let row = error_row("x", 0.5, &[("abc", "abc"), ("abd", "abc"), ("zzz", "abc")]);
    assert_eq!((row.productions, row.imperfect), (3, 2));
    assert!((row.error_rate - 2.0 / 3.0).abs() < 1e-15);
    assert!((row.imperfect_similarity.unwrap() - (2.0 / 3.0) / 2.0).abs() < 1e-15);
    assert_eq!(error_row("x", 0.5, &[("a", "a")]).imperfect_similarity, None);
}

fn toy_languages() -> Vec<InputLanguage> {
    let spec = GeneratorSpec::default();
    synthesize_suite(&spec, &[0.2, 0.9], 5).unwrap()
}

fn toy_config(workers: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(toy_languages());
    c.agents_per_language = 3;
    c.trainer.rounds = 5;
    c.workers = workers;
    c.master_seed = 11;
    c.analysis.resamples = 200;
    c
}

#[test]
fn config_validation() {
    let mut c = toy_config(1);
    assert!(c.validate().is_ok());
    c.agents_per_language = 1;
    assert!(c.validate().is_err());
    let mut c = toy_config(1);
    c.analysis.resamples = 99;
    assert!(c.validate().is_err());
    let mut c = toy_config(1);
    c.languages.push(c.languages[0].clone());
    assert!(c.validate().is_err());
    assert!(ExperimentConfig::new(vec![]).validate().is_err());
}

#[test]
fn agent_seeds_are_distinct_and_stable() {
    let seeds: std::collections::BTreeSet<u64> =
        (0..10).flat_map(|l| (0..20).map(move |a| agent_seed(42, l, a))).collect();
    assert_eq!(seeds.len(), 200);
    assert_eq!(agent_seed(42, 3, 7), agent_seed(42, 3, 7));
}

#[test]
fn toy_experiment_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = toy_config(2);
    c.out_dir = Some(dir.path().to_path_buf());
    let result = run_experiment(&c).unwrap();
    assert_eq!(result.records.len(), 30);
    assert!(result.failures.is_empty());
    let keys: Vec<_> = result
        .records
        .iter()
        .map(|r| (r.language_id.clone(), r.agent_index, r.round))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(result.summary.len(), 10);
    assert!(result.summary.iter().all(|r| r.agents == 3 && r.convergence.is_some()));
    assert_eq!(result.trends.len(), 3);

    let stored = export::read_records(&dir.path().join(export::RECORDS_FILE)).unwrap();
    assert_eq!(stored, result.records);
    let mismatches = verify_records(&stored, &c.languages, c.angle_mode(), 1e-12).unwrap();
    assert!(mismatches.is_empty(), "{mismatches:?}");

    // summary means equal recomputation from the raw records
    let rows: Vec<export::SummaryCsvRow> = export::read_csv(&dir.path().join(export::SUMMARY_FILE)).unwrap();
    for row in &rows {
        let xs: Vec<f64> = stored
            .iter()
            .filter(|r| r.language_id == row.language_id && r.round == row.round)
            .map(|r| r.generalization_score)
            .collect();
        assert!((analysis::mean(&xs) - row.generalization_score_mean).abs() < 1e-12);
        let conv = compute_convergence(&stored, &row.language_id, row.round).unwrap();
        assert!((conv - row.convergence.unwrap()).abs() < 1e-12);
    }

    // re-export is byte-identical
    let before = std::fs::read(dir.path().join(export::PLOT_FILE)).unwrap();
    export::write_all(&result, dir.path()).unwrap();
    assert_eq!(before, std::fs::read(dir.path().join(export::PLOT_FILE)).unwrap());
}

#[test]
fn failing_agents_are_isolated() {
    let mut c = toy_config(1);
    c.trainer.agent.learning_rate = f64::NAN;
    assert!(run_experiment(&c).is_err());
    // an absurd step size overflows the parameters during training
    c.trainer.agent.learning_rate = 1e308;
    let (records, failures) = train_population(&c).unwrap();
    assert!(records.is_empty());
    assert_eq!(failures.len(), 6);
    assert!(failures.iter().all(|f| f.message.contains("non-finite")), "{failures:?}");
    assert!(run_experiment(&c).is_err());
}

#[test]
fn reference_equal_to_input_reproduces_production_curve() {
    let mut c = toy_config(1);
    c.languages.truncate(1);
    c.agents_per_language = 2;
    c.trainer.rounds = 3;
    let (records, _) = train_population(&c).unwrap();
    let refs = ReferenceProductions::from_language(&c.languages[0]);
    let curve = compare_to_reference(&records, &refs);
    assert_eq!(curve.len(), 3);
    for p in &curve {
        let xs: Vec<f64> = records
            .iter()
            .filter(|r| r.round == p.round)
            .map(|r| r.production_similarity)
            .collect();
        assert!((p.memorization_similarity.unwrap() - analysis::mean(&xs)).abs() < 1e-12);
        assert_eq!(p.coverage, 1.0);
    }

    let mut unrelated = ReferenceProductions::default();
    for it in c.languages[0].items() {
        unrelated.insert(c.languages[0].id(), it.scene, "zzzzzzzzzzzzzzzz");
    }
    for p in compare_to_reference(&records, &unrelated) {
        assert!(p.memorization_similarity.unwrap() < 0.1);
        assert!(p.generalization_similarity.unwrap() < 0.1);
    }

    let mut partial = ReferenceProductions::default();
    partial.insert(c.languages[0].id(), Scene::new(1, 30).unwrap(), "x");
    let p = &compare_to_reference(&records, &partial)[0];
    assert!(p.coverage < 0.1);
}

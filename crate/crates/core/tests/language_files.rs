mod common;

use common::{check_golden, golden_path};
use langlab::langgen::{
    default_targets, generate_compositional, language_to_string, load_language, parse_language, save_language,
    split_scenes, synthesize_suite, GeneratorSpec,
};
use langlab::{AngleDiffMode, Scene};

#[test]
fn compositional_language_matches_golden() {
    let lang = generate_compositional(&GeneratorSpec::default(), 1).unwrap();
    check_golden("compositional_seed1.lang", &language_to_string(&lang));
    let loaded = load_language(&golden_path("compositional_seed1.lang")).unwrap();
    assert_eq!(loaded, lang);
}

#[test]
fn hand_written_file_loads_with_matching_structure() {
    let lang = load_language(&golden_path("three_items.lang")).unwrap();
    assert_eq!(lang.items().len(), 3);
    let recomputed = lang.recompute_structure(AngleDiffMode::Circular).unwrap().value();
    assert!((recomputed - lang.structure().value()).abs() < 1e-12);
    assert!((recomputed - 0.866_025_403_784).abs() < 1e-6);
}

#[test]
fn suite_round_trips_through_files() {
    let spec = GeneratorSpec::default();
    let suite = synthesize_suite(&spec, &[0.1, 0.5, 0.9], 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for lang in &suite {
        let path = dir.path().join(format!("{}.lang", lang.id()));
        save_language(lang, &path).unwrap();
        assert_eq!(&load_language(&path).unwrap(), lang);
    }
}

#[test]
fn missing_file_names_the_path() {
    let err = load_language(std::path::Path::new("/nonexistent/x.lang")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/x.lang"));
}

#[test]
fn missing_alphabet_is_rejected() {
    let text = std::fs::read_to_string(golden_path("three_items.lang")).unwrap();
    let without: String = text.lines().filter(|l| !l.starts_with("alphabet")).map(|l| format!("{l}\n")).collect();
    let err = parse_language(&without, "mem.lang").unwrap_err().to_string();
    assert!(err.contains("alphabet"), "{err}");
}

#[test]
fn default_suite_is_strictly_increasing_and_reproducible() {
    let spec = GeneratorSpec::default();
    let targets = default_targets(&spec, 10).unwrap();
    let a = synthesize_suite(&spec, &targets, 42).unwrap();
    let scores: Vec<f64> = a.iter().map(|l| l.structure().value()).collect();
    for w in scores.windows(2) {
        assert!(w[1] > w[0], "{scores:?}");
    }
    for (lang, t) in a.iter().zip(&targets) {
        let s = lang.recompute_structure(spec.angle_mode).unwrap().value();
        assert!((s - t).abs() <= spec.tolerance, "{} {s} vs {t}", lang.id());
    }
    let b = synthesize_suite(&spec, &targets, 42).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(language_to_string(x), language_to_string(y));
    }
}

#[test]
fn splits_cover_every_shape_for_many_seeds() {
    let grid = Scene::default_grid();
    for seed in 0..1000 {
        let (train, test) = split_scenes(&grid, seed).unwrap();
        assert_eq!((train.len(), test.len()), (23, 13));
        for shape in 1..=4 {
            assert!(test.iter().any(|s| s.shape() == shape), "seed {seed}");
            assert!(train.iter().any(|s| s.shape() == shape), "seed {seed}");
        }
    }
}

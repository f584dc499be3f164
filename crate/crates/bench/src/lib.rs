//! Fixtures shared by the benchmarks.

use langlab::langgen::{synthesize_language, GeneratorSpec};
use langlab::InputLanguage;

/// A mid-structure language from the default generator.
pub fn fixture_language() -> InputLanguage {
    synthesize_language(&GeneratorSpec::default().with_target(0.5), 17, "bench").expect("default spec reaches 0.5")
}

/// Label pairs of mixed length drawn from the fixture language.
pub fn label_pairs() -> Vec<(String, String)> {
    let lang = fixture_language();
    let labels: Vec<String> = lang.items().iter().map(|it| it.label.as_str().to_string()).collect();
    labels
        .iter()
        .zip(labels.iter().rev())
        .map(|(a, b)| (a.clone(), b.clone()))
        .collect()
}

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use langlab::metrics::{generalization_score, levenshtein, topographic_similarity};
use langlab::AngleDiffMode;
use langlab_bench::{fixture_language, label_pairs};

fn metrics(c: &mut Criterion) {
    let pairs = label_pairs();
    c.bench_function("levenshtein/36 pairs", |b| {
        b.iter(|| pairs.iter().map(|(x, y)| levenshtein(black_box(x), black_box(y))).sum::<usize>())
    });

    let lang = fixture_language();
    c.bench_function("topographic_similarity/23 items", |b| {
        b.iter(|| topographic_similarity(black_box(&lang), AngleDiffMode::Circular).unwrap())
    });

    let train: Vec<_> = lang.train_items().map(|it| (it.scene, it.label.as_str())).collect();
    let test: Vec<_> = lang.test_items().map(|it| (it.scene, it.label.as_str())).collect();
    c.bench_function("generalization_score/13x23", |b| {
        b.iter(|| generalization_score(black_box(&train), black_box(&test), AngleDiffMode::Circular).unwrap())
    });
}

criterion_group!(benches, metrics);
criterion_main!(benches);

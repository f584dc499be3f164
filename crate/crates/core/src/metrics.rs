//! Edit-distance and correlation measures: production similarity, structure
//! score (topographic similarity), generalization and convergence scores.

use serde::{Deserialize, Serialize};

use crate::domain::{semantic_difference, AngleDiffMode, Scene};
use crate::error::{Error, Result};
use crate::langgen::InputLanguage;

/// Unit-cost insert/delete/substitute distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            let sub = diag + usize::from(ca != cb);
            row[j + 1] = sub.min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[b.len()]
}

/// Levenshtein distance divided by the longer length; in `[0, 1]`.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        static WARNED: std::sync::Once = std::sync::Once::new();
        WARNED.call_once(|| log::warn!("normalized edit distance of two empty strings taken as 0"));
        return 0.0;
    }
    levenshtein(a, b) as f64 / longest as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedProduction {
    pub scene: Scene,
    pub produced: String,
    pub reference: String,
}

/// Mean of `1 - normalized_edit_distance(produced, reference)`.
pub fn production_similarity(pairs: &[PairedProduction]) -> Result<f64> {
    mean_similarity(pairs.iter().map(|p| (p.produced.as_str(), p.reference.as_str())))
}

/// [`production_similarity`] over borrowed `(produced, reference)` pairs.
pub fn mean_similarity<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (produced, reference) in pairs {
        total += 1.0 - normalized_edit_distance(produced, reference);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("production similarity needs at least one pair"));
    }
    Ok(total / n as f64)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "pearson inputs differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs at least 3 observations, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the inputs has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StructureScore(pub f64);

impl StructureScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Correlation over all unordered pairs between semantic difference and
/// normalized edit distance.
pub fn topographic_similarity_of<S: AsRef<str>>(
    items: &[(Scene, S)],
    mode: AngleDiffMode,
) -> Result<StructureScore> {
    if items.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "topographic similarity needs at least 3 items, got {}",
            items.len()
        )));
    }
    let pairs = items.len() * (items.len() - 1) / 2;
    let mut sem = Vec::with_capacity(pairs);
    let mut edit = Vec::with_capacity(pairs);
    for (i, (sa, la)) in items.iter().enumerate() {
        for (sb, lb) in &items[i + 1..] {
            sem.push(semantic_difference(*sa, *sb, mode));
            edit.push(normalized_edit_distance(la.as_ref(), lb.as_ref()));
        }
    }
    pearson(&sem, &edit).map(StructureScore)
}

/// Structure score of a language, measured on its training items.
pub fn topographic_similarity(lang: &InputLanguage, mode: AngleDiffMode) -> Result<StructureScore> {
    let items: Vec<(Scene, &str)> = lang
        .train_items()
        .map(|it| (it.scene, it.label.as_str()))
        .collect();
    topographic_similarity_of(&items, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationScore {
    pub value: f64,
    /// Set when the correlation was undefined (zero variance) and mapped to 0.
    pub degenerate: bool,
}

/// Correlation over every (test, train) cross pair between scene difference
/// and label distance.
pub fn generalization_score<A: AsRef<str>, B: AsRef<str>>(
    train: &[(Scene, A)],
    test: &[(Scene, B)],
    mode: AngleDiffMode,
) -> Result<GeneralizationScore> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("generalization score needs train and test items"));
    }
    let n = train.len() * test.len();
    let mut sem = Vec::with_capacity(n);
    let mut edit = Vec::with_capacity(n);
    for (ts, tl) in test {
        for (rs, rl) in train {
            sem.push(semantic_difference(*ts, *rs, mode));
            edit.push(normalized_edit_distance(tl.as_ref(), rl.as_ref()));
        }
    }
    match pearson(&sem, &edit) {
        Ok(value) => Ok(GeneralizationScore {
            value,
            degenerate: false,
        }),
        Err(Error::UndefinedCorrelation(_)) => Ok(GeneralizationScore {
            value: 0.0,
            degenerate: true,
        }),
        Err(e) => Err(e),
    }
}

/// `labels[scene][agent]`; one minus the mean pairwise distance between agents.
pub fn convergence_score<S: AsRef<str>>(labels: &[Vec<S>]) -> Result<f64> {
    let first = labels
        .first()
        .ok_or(Error::Empty("convergence score needs at least one scene"))?;
    let k = first.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "convergence score needs at least 2 agents, got {k}"
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for per_scene in labels {
        if per_scene.len() != k {
            return Err(Error::InvalidArgument(
                "every scene needs a label from every agent".into(),
            ));
        }
        for (i, a) in per_scene.iter().enumerate() {
            for b in &per_scene[i + 1..] {
                total += normalized_edit_distance(a.as_ref(), b.as_ref());
                count += 1;
            }
        }
    }
    Ok(1.0 - total / count as f64)
}

//! Input languages: the two-slot compositional generator, seeded degradation
//! toward a target structure score, the 23/13 scene split and the text file
//! format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{AngleDiffMode, Alphabet, Label, Scene, DEFAULT_ANGLES};
use crate::error::{Error, Result};
use crate::metrics::{topographic_similarity, StructureScore};
use crate::rng::{derive_seed, rng_for};

pub const TRAIN_SIZE: usize = 23;
pub const TEST_SIZE: usize = 13;
pub const LANGUAGE_SIZE: usize = TRAIN_SIZE + TEST_SIZE;

const SPLIT_STREAM: u64 = 0x5350_4c49;
const DEGRADE_STREAM: u64 = 0x4445_4752;
const SUITE_STREAM: u64 = 0x5355_4954;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageItem {
    pub scene: Scene,
    pub label: Label,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputLanguage {
    id: String,
    alphabet: Alphabet,
    items: Vec<LanguageItem>,
    structure: StructureScore,
    seed: u64,
}

impl InputLanguage {
    /// Builds a language and computes its structure score over the training items.
    pub fn new(
        id: impl Into<String>,
        alphabet: Alphabet,
        mut items: Vec<LanguageItem>,
        seed: u64,
        mode: AngleDiffMode,
    ) -> Result<Self> {
        items.sort_by_key(|it| it.scene);
        let mut lang = InputLanguage {
            id: id.into(),
            alphabet,
            items,
            structure: StructureScore(f64::NAN),
            seed,
        };
        lang.structure = topographic_similarity(&lang, mode)?;
        Ok(lang)
    }

    /// Assembles a language with a caller-supplied structure score (used by the loader).
    pub fn from_parts(
        id: impl Into<String>,
        alphabet: Alphabet,
        mut items: Vec<LanguageItem>,
        structure: StructureScore,
        seed: u64,
    ) -> Self {
        items.sort_by_key(|it| it.scene);
        InputLanguage {
            id: id.into(),
            alphabet,
            items,
            structure,
            seed,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn items(&self) -> &[LanguageItem] {
        &self.items
    }

    pub fn structure(&self) -> StructureScore {
        self.structure
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn train_items(&self) -> impl Iterator<Item = &LanguageItem> {
        self.items.iter().filter(|it| it.split == Split::Train)
    }

    pub fn test_items(&self) -> impl Iterator<Item = &LanguageItem> {
        self.items.iter().filter(|it| it.split == Split::Test)
    }

    pub fn train_scenes(&self) -> Vec<Scene> {
        self.train_items().map(|it| it.scene).collect()
    }

    pub fn test_scenes(&self) -> Vec<Scene> {
        self.test_items().map(|it| it.scene).collect()
    }

    pub fn label_of(&self, scene: Scene) -> Option<&Label> {
        self.items
            .binary_search_by_key(&scene, |it| it.scene)
            .ok()
            .map(|i| &self.items[i].label)
    }

    pub fn item(&self, scene: Scene) -> Option<&LanguageItem> {
        self.items
            .binary_search_by_key(&scene, |it| it.scene)
            .ok()
            .map(|i| &self.items[i])
    }

    pub fn recompute_structure(&self, mode: AngleDiffMode) -> Result<StructureScore> {
        topographic_similarity(self, mode)
    }

    fn with_labels(&self, labels: Vec<Label>, mode: AngleDiffMode) -> Result<Self> {
        let items = self
            .items
            .iter()
            .zip(labels)
            .map(|(it, label)| LanguageItem {
                label,
                ..it.clone()
            })
            .collect();
        InputLanguage::new(self.id.clone(), self.alphabet.clone(), items, self.seed, mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub target_structure: f64,
    pub tolerance: f64,
    pub shape_morphemes: [String; 4],
    /// `(angle, morpheme)`; the angles define the meaning grid.
    pub angle_morphemes: Vec<(u16, String)>,
    pub separator: char,
    /// Restarts allowed before giving up on a target.
    pub max_attempts: usize,
    pub angle_mode: AngleDiffMode,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        let angle_morphemes = ["koo", "ko", "kao", "kpa", "pa", "twa", "eowo", "owo", "oo"];
        GeneratorSpec {
            target_structure: 0.5,
            tolerance: 0.03,
            shape_morphemes: ["tup", "wef", "nif", "smu"].map(String::from),
            angle_morphemes: DEFAULT_ANGLES
                .iter()
                .zip(angle_morphemes)
                .map(|(a, m)| (*a, m.to_string()))
                .collect(),
            separator: '-',
            max_attempts: 2000,
            angle_mode: AngleDiffMode::Circular,
        }
    }
}

impl GeneratorSpec {
    pub fn with_target(&self, target: f64) -> Self {
        GeneratorSpec {
            target_structure: target,
            ..self.clone()
        }
    }

    pub fn scenes(&self) -> Result<Vec<Scene>> {
        let mut out = Vec::new();
        for shape in 1..=4u8 {
            for (angle, _) in &self.angle_morphemes {
                out.push(Scene::new(shape, *angle)?);
            }
        }
        Ok(out)
    }

    fn alphabet(&self) -> Result<Alphabet> {
        Alphabet::new(
            self.shape_morphemes
                .iter()
                .chain(self.angle_morphemes.iter().map(|(_, m)| m))
                .flat_map(|m| m.chars())
                .chain(std::iter::once(self.separator)),
        )
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        let distinct = |ms: Vec<&String>, what: &str| -> Result<()> {
            let set: BTreeSet<&String> = ms.iter().copied().collect();
            if set.len() != ms.len() {
                return Err(Error::InvalidArgument(format!("{what} morphemes collide")));
            }
            if ms.iter().any(|m| m.is_empty() || m.contains(self.separator)) {
                return Err(Error::InvalidArgument(format!(
                    "{what} morphemes must be non-empty and free of the separator"
                )));
            }
            Ok(())
        };
        distinct(self.shape_morphemes.iter().collect(), "shape")?;
        distinct(self.angle_morphemes.iter().map(|(_, m)| m).collect(), "angle")?;
        let angles: BTreeSet<u16> = self.angle_morphemes.iter().map(|(a, _)| *a).collect();
        if angles.len() != self.angle_morphemes.len() {
            return Err(Error::InvalidArgument("angle listed twice".into()));
        }
        Ok(())
    }
}

/// Seeded 23/13 partition of the 36 scenes with every shape in both halves.
pub fn split_scenes(all: &[Scene], seed: u64) -> Result<(Vec<Scene>, Vec<Scene>)> {
    if all.len() != LANGUAGE_SIZE {
        return Err(Error::InvalidArgument(format!(
            "split needs exactly {LANGUAGE_SIZE} scenes, got {}",
            all.len()
        )));
    }
    let shapes: BTreeSet<u8> = all.iter().map(Scene::shape).collect();
    let coverable = shapes.len() <= TEST_SIZE
        && shapes
            .iter()
            .all(|s| all.iter().filter(|sc| sc.shape() == *s).count() >= 2);
    if !coverable {
        return Err(Error::InvalidArgument(
            "scenes cannot be split with every shape on both sides".into(),
        ));
    }
    let mut rng = rng_for(seed, &[SPLIT_STREAM]);
    let mut order = all.to_vec();
    loop {
        order.shuffle(&mut rng);
        let (test, train) = order.split_at(TEST_SIZE);
        let covers = |side: &[Scene]| {
            shapes
                .iter()
                .all(|s| side.iter().any(|sc| sc.shape() == *s))
        };
        if covers(test) && covers(train) {
            let mut train = train.to_vec();
            let mut test = test.to_vec();
            train.sort();
            test.sort();
            return Ok((train, test));
        }
    }
}

/// Every label is `shape morpheme + separator + angle morpheme`.
pub fn generate_compositional(spec: &GeneratorSpec, seed: u64) -> Result<InputLanguage> {
    spec.validate()?;
    let alphabet = spec.alphabet()?;
    let scenes = spec.scenes()?;
    let (train, _) = split_scenes(&scenes, seed)?;
    let train: BTreeSet<Scene> = train.into_iter().collect();
    let mut items = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let shape = &spec.shape_morphemes[usize::from(scene.shape() - 1)];
        let angle = spec
            .angle_morphemes
            .iter()
            .find(|(a, _)| *a == scene.angle())
            .map(|(_, m)| m)
            .expect("scene grid built from the angle list");
        let label = Label::in_alphabet(format!("{shape}{}{angle}", spec.separator), &alphabet)?;
        let split = if train.contains(&scene) {
            Split::Train
        } else {
            Split::Test
        };
        items.push(LanguageItem { scene, label, split });
    }
    InputLanguage::new(format!("comp-{seed:016x}"), alphabet, items, seed, spec.angle_mode)
}

/// Random label replacements and label swaps, restarted from `lang` until the
/// training-set structure lands within `target ± tolerance`.
pub fn degrade(lang: &InputLanguage, spec: &GeneratorSpec, seed: u64) -> Result<InputLanguage> {
    let target = spec.target_structure;
    let tol = spec.tolerance;
    let start = lang.recompute_structure(spec.angle_mode)?.value();
    if (start - target).abs() <= tol {
        return Ok(InputLanguage { seed, ..lang.clone() });
    }
    if start < target - tol {
        return Err(Error::UnreachableTarget {
            target,
            attempts: 0,
        });
    }
    let letters: Vec<char> = lang.alphabet().chars().filter(|c| *c != spec.separator).collect();
    let lengths: Vec<usize> = lang.items().iter().map(|it| it.label.len()).collect();
    if letters.is_empty() {
        return Err(Error::InvalidArgument("alphabet has no letters".into()));
    }
    let mut rng = rng_for(seed, &[DEGRADE_STREAM]);
    let n = lang.items().len();
    let max_steps = 8 * n;
    for _ in 0..spec.max_attempts {
        let mut labels: Vec<Label> = lang.items().iter().map(|it| it.label.clone()).collect();
        for _ in 0..max_steps {
            if rng.random_bool(0.5) {
                let i = rng.random_range(0..n);
                let len = *lengths.choose(&mut rng).expect("non-empty language");
                let s: String = (0..len)
                    .map(|_| *letters.choose(&mut rng).expect("letters checked"))
                    .collect();
                labels[i] = Label::new(s)?;
            } else {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                labels.swap(i, j);
            }
            let candidate = lang.with_labels(labels.clone(), spec.angle_mode);
            let s = match candidate {
                Ok(c) => c,
                // every training label identical; keep mutating
                Err(Error::UndefinedCorrelation(_)) => continue,
                Err(e) => return Err(e),
            };
            let value = s.structure().value();
            if (value - target).abs() <= tol {
                return Ok(InputLanguage { seed, ..s });
            }
            if value < target - tol {
                break;
            }
        }
    }
    Err(Error::UnreachableTarget {
        target,
        attempts: spec.max_attempts,
    })
}

/// Compositional generation followed by degradation, both driven by `seed`.
pub fn synthesize_language(spec: &GeneratorSpec, seed: u64, id: &str) -> Result<InputLanguage> {
    let base = generate_compositional(spec, seed)?;
    Ok(degrade(&base, spec, seed)?.with_id(id))
}

/// Structure of the compositional language over all 36 scenes; the top of the
/// reachable range.
pub fn max_structure(spec: &GeneratorSpec) -> Result<f64> {
    let base = generate_compositional(spec, 0)?;
    let items: Vec<(Scene, &str)> = base
        .items()
        .iter()
        .map(|it| (it.scene, it.label.as_str()))
        .collect();
    Ok(crate::metrics::topographic_similarity_of(&items, spec.angle_mode)?.value())
}

/// `count` targets evenly spanning `[0.05, max_structure]`.
pub fn default_targets(spec: &GeneratorSpec, count: usize) -> Result<Vec<f64>> {
    let hi = max_structure(spec)?;
    let lo = 0.05;
    Ok(match count {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    })
}

/// One language per target, each from its own sub-seed of `master_seed`.
pub fn synthesize_suite(
    spec: &GeneratorSpec,
    targets: &[f64],
    master_seed: u64,
) -> Result<Vec<InputLanguage>> {
    if targets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("targets must be sorted ascending".into()));
    }
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let seed = derive_seed(master_seed, &[SUITE_STREAM, i as u64]);
            synthesize_language(&spec.with_target(t), seed, &format!("lang{i:02}"))
        })
        .collect()
}

pub fn language_to_string(lang: &InputLanguage) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "id {}", lang.id);
    let _ = writeln!(out, "alphabet {}", lang.alphabet);
    let _ = writeln!(out, "seed {}", lang.seed);
    let _ = writeln!(out, "structure {}", lang.structure.value());
    for it in &lang.items {
        let _ = writeln!(
            out,
            "shape {} angle {} label {} split {}",
            it.scene.shape(),
            it.scene.angle(),
            it.label,
            it.split.as_str()
        );
    }
    out
}

pub fn parse_language(text: &str, origin: &str) -> Result<InputLanguage> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut id = None;
    let mut alphabet = None;
    let mut seed = None;
    let mut structure = None;
    let mut items = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        let rest = rest.trim();
        match key {
            "id" => id = Some(rest.to_string()),
            "alphabet" => {
                alphabet = Some(Alphabet::new(rest.chars()).map_err(|e| err(lineno, e.to_string()))?)
            }
            "seed" => {
                seed = Some(
                    rest.parse::<u64>()
                        .map_err(|e| err(lineno, format!("seed: {e}")))?,
                )
            }
            "structure" => {
                structure = Some(
                    rest.parse::<f64>()
                        .map_err(|e| err(lineno, format!("structure: {e}")))?,
                )
            }
            "shape" => items.push(parse_item(line).map_err(|m| err(lineno, m))?),
            other => return Err(err(lineno, format!("unknown field {other:?}"))),
        }
    }
    let missing = |field: &str| err(0, format!("missing {field:?} field"));
    Ok(InputLanguage::from_parts(
        id.ok_or_else(|| missing("id"))?,
        alphabet.ok_or_else(|| missing("alphabet"))?,
        items,
        StructureScore(structure.ok_or_else(|| missing("structure"))?),
        seed.ok_or_else(|| missing("seed"))?,
    ))
}

fn parse_item(line: &str) -> std::result::Result<LanguageItem, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let [k_shape, shape, k_angle, angle, k_label, label, k_split, split] = fields[..] else {
        return Err(format!(
            "expected `shape <s> angle <a> label <string> split <train|test>`, got {} fields",
            fields.len()
        ));
    };
    for (got, want) in [(k_shape, "shape"), (k_angle, "angle"), (k_label, "label"), (k_split, "split")] {
        if got != want {
            return Err(format!("expected field {want:?}, found {got:?}"));
        }
    }
    let shape: u8 = shape.parse().map_err(|e| format!("shape: {e}"))?;
    let angle: u16 = angle.parse().map_err(|e| format!("angle: {e}"))?;
    let scene = Scene::new(shape, angle).map_err(|e| e.to_string())?;
    let label = Label::new(label).map_err(|e| e.to_string())?;
    let split = match split {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(format!("split must be train or test, got {other:?}")),
    };
    Ok(LanguageItem { scene, label, split })
}

pub fn save_language(lang: &InputLanguage, path: &Path) -> Result<()> {
    std::fs::write(path, language_to_string(lang)).map_err(|e| Error::io(path, e))
}

pub fn load_language(path: &Path) -> Result<InputLanguage> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_language(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_language;

    #[test]
    fn tup_oo() {
        let lang = generate_compositional(&GeneratorSpec::default(), 1).unwrap();
        let s = Scene::new(1, 360).unwrap();
        assert_eq!(lang.label_of(s).unwrap().as_str(), "tup-oo");
        for it in lang.items().iter().filter(|it| it.scene.shape() == 1) {
            assert!(it.label.as_str().starts_with("tup-"), "{}", it.label);
        }
        assert!(validate_language(&lang).passed());
    }

    #[test]
    fn compositional_structure_is_high() {
        let spec = GeneratorSpec::default();
        let max = max_structure(&spec).unwrap();
        assert!(max >= 0.85, "{max}");
        for seed in 0..20 {
            let lang = generate_compositional(&spec, seed).unwrap();
            assert!(lang.structure().value() >= 0.85);
            assert!((lang.structure().value() - max).abs() <= spec.tolerance);
        }
    }

    #[test]
    fn morpheme_collision_is_an_error() {
        let mut spec = GeneratorSpec::default();
        spec.shape_morphemes[1] = "tup".into();
        assert!(generate_compositional(&spec, 0).is_err());
    }

    #[test]
    fn split_examples() {
        let grid = Scene::default_grid();
        let a = split_scenes(&grid, 3).unwrap();
        assert_eq!(a, split_scenes(&grid, 3).unwrap());
        assert_eq!((a.0.len(), a.1.len()), (TRAIN_SIZE, TEST_SIZE));
        for seed in 0..1000 {
            let (train, test) = split_scenes(&grid, seed).unwrap();
            for shape in 1..=4 {
                assert!(test.iter().any(|s| s.shape() == shape));
                assert!(train.iter().any(|s| s.shape() == shape));
            }
            let mut all: Vec<Scene> = train.into_iter().chain(test).collect();
            all.sort();
            assert_eq!(all, grid);
        }
        assert!(split_scenes(&grid[..35], 0).is_err());
    }

    #[test]
    fn degrade_at_maximum_is_identity() {
        let spec = GeneratorSpec::default();
        let lang = generate_compositional(&spec, 5).unwrap();
        let same = degrade(&lang, &spec.with_target(lang.structure().value()), 5).unwrap();
        assert_eq!(same, lang);
    }

    #[test]
    fn degrade_to_zero() {
        let spec = GeneratorSpec::default().with_target(0.0);
        let spec = GeneratorSpec { tolerance: 0.05, ..spec };
        let lang = generate_compositional(&spec, 9).unwrap();
        let low = degrade(&lang, &spec, 9).unwrap();
        let s = low.recompute_structure(AngleDiffMode::Circular).unwrap().value();
        assert!(s.abs() <= 0.05, "{s}");
        assert!((s - low.structure().value()).abs() < 1e-9);
        assert!(validate_language(&low).passed());
    }

    #[test]
    fn degrade_above_maximum_fails() {
        let spec = GeneratorSpec::default();
        let lang = generate_compositional(&spec, 2).unwrap();
        let err = degrade(&lang, &spec.with_target(1.5), 2).unwrap_err();
        assert!(matches!(err, Error::UnreachableTarget { .. }));
    }

    #[test]
    fn suite_sizes_and_duplicates() {
        let spec = GeneratorSpec::default();
        let one = synthesize_suite(&spec, &[0.5], 1).unwrap();
        assert_eq!(one.len(), 1);
        let dup = synthesize_suite(&spec, &[0.4, 0.4], 1).unwrap();
        assert_ne!(dup[0].items(), dup[1].items());
        for l in &dup {
            assert!((l.structure().value() - 0.4).abs() <= spec.tolerance);
        }
        assert!(synthesize_suite(&spec, &[0.5, 0.4], 1).is_err());
    }

    #[test]
    fn missing_alphabet_is_a_parse_error() {
        let text = "id x\nseed 1\nstructure 0.5\nshape 1 angle 90 label aa split train\n";
        let err = parse_language(text, "mem").unwrap_err();
        assert!(err.to_string().contains("alphabet"), "{err}");
    }

    #[test]
    fn malformed_item_reports_line() {
        let text = "id x\nalphabet ab\nseed 1\nstructure 0.5\nshape 1 angle 90 label aa\n";
        match parse_language(text, "mem").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 5),
            e => panic!("{e}"),
        }
    }
}

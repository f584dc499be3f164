//! Meanings, labels and the semantic-difference kernel shared by every metric.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langgen::InputLanguage;

pub const NUM_SHAPES: u8 = 4;
pub const ANGLE_STEP: u16 = 15;
pub const MAX_LABEL_LEN: usize = 16;
pub const SCENE_DIM: usize = 6;

/// Angles attested in the example tables; the 36-scene default meaning grid is
/// every shape crossed with these.
pub const DEFAULT_ANGLES: [u16; 9] = [30, 45, 60, 135, 150, 225, 315, 330, 360];

/// A shape (1..=4) moving at an angle in degrees, `0 < angle <= 360`, on a 15° grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawScene", into = "RawScene")]
pub struct Scene {
    shape: u8,
    angle: u16,
}

#[derive(Serialize, Deserialize)]
struct RawScene {
    shape: u8,
    angle: u16,
}

impl TryFrom<RawScene> for Scene {
    type Error = Error;
    fn try_from(raw: RawScene) -> Result<Self> {
        Scene::new(raw.shape, raw.angle)
    }
}

impl From<Scene> for RawScene {
    fn from(s: Scene) -> Self {
        RawScene {
            shape: s.shape,
            angle: s.angle,
        }
    }
}

impl Scene {
    pub fn new(shape: u8, angle: u16) -> Result<Self> {
        if !(1..=NUM_SHAPES).contains(&shape) {
            return Err(Error::InvalidScene(format!("shape {shape} not in 1..=4")));
        }
        if angle == 0 || angle > 360 || !angle.is_multiple_of(ANGLE_STEP) {
            return Err(Error::InvalidScene(format!(
                "angle {angle} must be a multiple of {ANGLE_STEP} in (0, 360]"
            )));
        }
        Ok(Scene { shape, angle })
    }

    pub fn shape(&self) -> u8 {
        self.shape
    }

    pub fn angle(&self) -> u16 {
        self.angle
    }

    /// All 96 scenes on the 15° grid.
    pub fn full_grid() -> Vec<Scene> {
        (1..=NUM_SHAPES)
            .flat_map(|s| {
                (1..=360 / ANGLE_STEP).map(move |k| Scene {
                    shape: s,
                    angle: k * ANGLE_STEP,
                })
            })
            .collect()
    }

    /// The 36 scenes (4 shapes × [`DEFAULT_ANGLES`]) that make up a language.
    pub fn default_grid() -> Vec<Scene> {
        (1..=NUM_SHAPES)
            .flat_map(|s| DEFAULT_ANGLES.iter().map(move |&a| Scene { shape: s, angle: a }))
            .collect()
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(shape {}, {}°)", self.shape, self.angle)
    }
}

/// One-hot shape followed by `sin(angle)`, `cos(angle)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneVector(pub [f64; SCENE_DIM]);

impl SceneVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn encode_scene(scene: Scene) -> SceneVector {
    let mut v = [0.0; SCENE_DIM];
    v[usize::from(scene.shape - 1)] = 1.0;
    let rad = f64::from(scene.angle).to_radians();
    v[4] = rad.sin();
    v[5] = rad.cos();
    SceneVector(v)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleDiffMode {
    /// Shortest way round the circle; the angle term stays in `[0, 1]`.
    #[default]
    Circular,
    /// Plain `|a - b| / 180`.
    Literal,
}

impl std::str::FromStr for AngleDiffMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "circular" => Ok(AngleDiffMode::Circular),
            "literal" => Ok(AngleDiffMode::Literal),
            other => Err(Error::InvalidArgument(format!("unknown angle mode {other:?}"))),
        }
    }
}

impl fmt::Display for AngleDiffMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AngleDiffMode::Circular => "circular",
            AngleDiffMode::Literal => "literal",
        })
    }
}

/// Shape term (0 or 1) plus the angle difference over 180°.
pub fn semantic_difference(a: Scene, b: Scene, mode: AngleDiffMode) -> f64 {
    let shape_term = if a.shape == b.shape { 0.0 } else { 1.0 };
    let delta = (f64::from(a.angle) - f64::from(b.angle)).abs();
    let angle_delta = match mode {
        AngleDiffMode::Circular => delta.min(360.0 - delta),
        AngleDiffMode::Literal => delta,
    };
    shape_term + angle_delta / 180.0
}

/// Ordered set of characters a language may use.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Alphabet(BTreeSet<char>);

impl Alphabet {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let set: BTreeSet<char> = chars.into_iter().collect();
        if set.is_empty() {
            return Err(Error::InvalidArgument("empty alphabet".into()));
        }
        if let Some(bad) = set.iter().find(|c| !(c.is_alphabetic() || **c == '-')) {
            return Err(Error::InvalidArgument(format!(
                "alphabet character {bad:?} is neither a letter nor '-'"
            )));
        }
        Ok(Alphabet(set))
    }

    pub fn contains(&self, c: char) -> bool {
        self.0.contains(&c)
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|c| write!(f, "{c}"))
    }
}

/// A non-empty string of at most [`MAX_LABEL_LEN`] characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(s: impl Into<String>) -> Result<Self> {
        let s = s.into();
        let reason = if s.is_empty() {
            Some("empty".to_string())
        } else if s.chars().count() > MAX_LABEL_LEN {
            Some(format!("longer than {MAX_LABEL_LEN}"))
        } else if s.chars().any(char::is_whitespace) {
            Some("contains whitespace".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::InvalidLabel { label: s, reason }),
            None => Ok(Label(s)),
        }
    }

    /// Checks the label also uses only characters of `alphabet`.
    pub fn in_alphabet(s: impl Into<String>, alphabet: &Alphabet) -> Result<Self> {
        let label = Label::new(s)?;
        if let Some(c) = label.0.chars().find(|c| !alphabet.contains(*c)) {
            return Err(Error::InvalidLabel {
                label: label.0,
                reason: format!("character {c:?} not in alphabet"),
            });
        }
        Ok(label)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Label {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    DuplicateScene(Scene),
    EmptyLabel(Scene),
    AlphabetViolation { scene: Scene, ch: char },
    LabelTooLong(Scene),
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::DuplicateScene(s) => write!(f, "duplicate-scene {s}"),
            ValidationIssue::EmptyLabel(s) => write!(f, "empty-label {s}"),
            ValidationIssue::AlphabetViolation { scene, ch } => {
                write!(f, "alphabet-violation {scene}: {ch:?}")
            }
            ValidationIssue::LabelTooLong(s) => write!(f, "label-too-long {s}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            return Ok(());
        }
        let msg = self
            .issues
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InvalidArgument(format!("language failed validation: {msg}")))
    }
}

pub fn validate_language(lang: &InputLanguage) -> ValidationReport {
    let mut issues = Vec::new();
    let mut seen: BTreeMap<Scene, usize> = BTreeMap::new();
    for item in lang.items() {
        let count = seen.entry(item.scene).or_default();
        *count += 1;
        if *count == 2 {
            issues.push(ValidationIssue::DuplicateScene(item.scene));
        }
        let label = item.label.as_str();
        if label.is_empty() {
            issues.push(ValidationIssue::EmptyLabel(item.scene));
        }
        if label.chars().count() > MAX_LABEL_LEN {
            issues.push(ValidationIssue::LabelTooLong(item.scene));
        }
        if let Some(ch) = label.chars().find(|c| !lang.alphabet().contains(*c)) {
            issues.push(ValidationIssue::AlphabetViolation {
                scene: item.scene,
                ch,
            });
        }
    }
    ValidationReport { issues }
}

//! Neural learners for miniature artificial languages.
//!
//! The crate synthesizes input languages across a range of compositional
//! structure, trains recurrent learner agents through exposure, guessing and
//! production blocks, and measures memorization, systematic generalization
//! and agreement between agents.

pub mod domain;
pub mod error;
pub mod harness;
pub mod icl;
pub mod langgen;
pub mod metrics;
pub mod neuralnet;
pub mod rng;
pub mod trainer;

pub use domain::{encode_scene, semantic_difference, AngleDiffMode, Alphabet, Label, Scene, SceneVector};
pub use error::{Error, Result};
pub use langgen::{InputLanguage, LanguageItem, Split};

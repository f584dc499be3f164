//! The round protocol: exposure, guessing and production blocks followed by
//! the memorization and generalization tests.

use rand::seq::{index::sample, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{encode_scene, validate_language, AngleDiffMode, Scene, SceneVector};
use crate::error::{Error, Result};
use crate::langgen::InputLanguage;
use crate::metrics::{generalization_score, mean_similarity, GeneralizationScore};
use crate::neuralnet::{Agent, AgentConfig, Batch, BatchItem};
use crate::rng::rng_for;

const DISTRACTOR_STREAM: u64 = 0x4449_5354;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub agent: AgentConfig,
    pub rounds: usize,
    pub batch_size: usize,
    pub distractors: usize,
    pub angle_mode: AngleDiffMode,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            agent: AgentConfig::default(),
            rounds: 100,
            batch_size: 5,
            distractors: 3,
            angle_mode: AngleDiffMode::Circular,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Production {
    pub shape: u8,
    pub angle: u16,
    pub label: String,
}

impl Production {
    pub fn scene(&self) -> Scene {
        Scene::new(self.shape, self.angle).expect("productions are recorded for valid scenes")
    }
}

/// One agent's test outcome after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub language_id: String,
    pub structure: f64,
    pub agent_index: usize,
    pub agent_seed: u64,
    pub round: usize,
    pub production_similarity: f64,
    pub generalization_score: f64,
    pub generalization_degenerate: bool,
    pub guessing_accuracy: f64,
    pub exposure_loss: f64,
    pub guessing_loss: f64,
    pub production_loss: f64,
    pub memorization: Vec<Production>,
    pub generalization: Vec<Production>,
}

#[derive(Debug, Clone)]
pub struct TrainItem {
    pub scene: Scene,
    pub vector: SceneVector,
    pub label: String,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistractorSet {
    pub target: Scene,
    pub distractors: Vec<Scene>,
    /// Candidate order shown to the agent; contains the target once.
    pub candidates: Vec<Scene>,
    pub target_index: usize,
}

/// Distractors for `target` in `round`, a pure function of the language seed so
/// every agent on a language sees the same sets.
pub fn distractor_set(
    lang: &InputLanguage,
    round: usize,
    target: Scene,
    count: usize,
) -> Result<DistractorSet> {
    let train = lang.train_scenes();
    let pos = train
        .iter()
        .position(|s| *s == target)
        .ok_or_else(|| Error::InvalidArgument(format!("{target} is not a training scene")))?;
    let others: Vec<Scene> = train.iter().copied().filter(|s| *s != target).collect();
    if count > others.len() {
        return Err(Error::InvalidArgument(format!(
            "{count} distractors requested from {} scenes",
            others.len()
        )));
    }
    let mut rng = rng_for(lang.seed(), &[DISTRACTOR_STREAM, round as u64, pos as u64]);
    let distractors: Vec<Scene> = sample(&mut rng, others.len(), count)
        .into_iter()
        .map(|i| others[i])
        .collect();
    let target_index = rng.random_range(0..=count);
    let mut candidates = distractors.clone();
    candidates.insert(target_index, target);
    Ok(DistractorSet {
        target,
        distractors,
        candidates,
        target_index,
    })
}

/// Seeded item orders for the three blocks of one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    pub round: usize,
    pub exposure: Vec<usize>,
    pub guessing: Vec<usize>,
    pub production: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlockStats {
    pub mean_loss: f64,
    pub steps: usize,
    /// Minibatches of size 1 that had no negatives for the contrastive term.
    pub contrastive_skipped: usize,
    pub contrastive_evaluations: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GuessingStats {
    pub block: BlockStats,
    pub accuracy: f64,
}

/// An agent bound to a language.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub agent: Agent,
    pub config: TrainerConfig,
    lang: &'a InputLanguage,
    agent_index: usize,
    agent_seed: u64,
    train: Vec<TrainItem>,
    test: Vec<Scene>,
}

impl<'a> Trainer<'a> {
    pub fn new(lang: &'a InputLanguage, config: TrainerConfig, agent_index: usize, seed: u64) -> Result<Self> {
        validate_language(lang).into_result()?;
        if config.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let agent = Agent::new(config.agent.clone(), lang.alphabet(), seed)?;
        let train = lang
            .train_items()
            .map(|it| {
                Ok(TrainItem {
                    scene: it.scene,
                    vector: encode_scene(it.scene),
                    label: it.label.as_str().to_string(),
                    tokens: agent.encode_label(it.label.as_str())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if train.is_empty() {
            return Err(Error::Empty("language has no training items"));
        }
        Ok(Trainer {
            agent,
            config,
            lang,
            agent_index,
            agent_seed: seed,
            train,
            test: lang.test_scenes(),
        })
    }

    pub fn train_items(&self) -> &[TrainItem] {
        &self.train
    }

    pub fn plan_round(&mut self, round: usize) -> RoundPlan {
        let n = self.train.len();
        let rng = self.agent.rng();
        let mut order = || {
            let mut v: Vec<usize> = (0..n).collect();
            v.shuffle(rng);
            v
        };
        let exposure = order();
        let guessing = order();
        let production = order();
        RoundPlan {
            round,
            exposure,
            guessing,
            production,
        }
    }

    fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            items: idx
                .iter()
                .map(|&i| BatchItem {
                    scene: self.train[i].vector,
                    tokens: self.train[i].tokens.clone(),
                })
                .collect(),
        }
    }

    /// `L_gen + α·L_con` with in-batch negatives; one update per minibatch.
    pub fn run_exposure_block(&mut self, order: &[usize]) -> Result<BlockStats> {
        let alpha = self.config.agent.alpha_con;
        let mut stats = BlockStats::default();
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch = self.batch(chunk);
            let mut grads = self.agent.zero_grads();
            let mut loss = self.agent.token_cross_entropy_into(&batch, 1.0, &mut grads.0);
            if batch.len() >= 2 {
                loss += alpha * self.agent.ntxent_inbatch_into(&batch, alpha, &mut grads.0)?;
                stats.contrastive_evaluations += 1;
            } else {
                stats.contrastive_skipped += 1;
            }
            self.agent.adam_step(&grads)?;
            total += loss;
            stats.steps += 1;
        }
        stats.mean_loss = total / stats.steps.max(1) as f64;
        Ok(stats)
    }

    /// One trial per item: `L_gen` on the target pair plus `α ×` the
    /// candidate-selection loss against its distractor set.
    pub fn run_guessing_block(&mut self, round: usize, order: &[usize]) -> Result<GuessingStats> {
        let alpha = self.config.agent.alpha_con;
        let mut stats = GuessingStats::default();
        let mut total = 0.0;
        let mut correct = 0usize;
        for &i in order {
            let set = distractor_set(self.lang, round, self.train[i].scene, self.config.distractors)?;
            let candidates: Vec<SceneVector> = set.candidates.iter().map(|s| encode_scene(*s)).collect();
            let batch = self.batch(&[i]);
            let mut grads = self.agent.zero_grads();
            let gen = self.agent.token_cross_entropy_into(&batch, 1.0, &mut grads.0);
            let outcome = self.agent.candidate_contrastive_into(
                &self.train[i].tokens,
                &candidates,
                set.target_index,
                alpha,
                &mut grads.0,
            )?;
            stats.block.contrastive_evaluations += 1;
            if outcome.prediction == set.target_index {
                correct += 1;
            }
            self.agent.adam_step(&grads)?;
            total += gen + alpha * outcome.loss;
            stats.block.steps += 1;
        }
        stats.block.mean_loss = total / stats.block.steps.max(1) as f64;
        stats.accuracy = correct as f64 / stats.block.steps.max(1) as f64;
        Ok(stats)
    }

    /// Candidate-selection accuracy over every training item with no updates.
    pub fn evaluate_guessing(&self, round: usize) -> Result<f64> {
        let mut correct = 0usize;
        let mut scratch = self.agent.zero_grads();
        for it in &self.train {
            let set = distractor_set(self.lang, round, it.scene, self.config.distractors)?;
            let candidates: Vec<SceneVector> = set.candidates.iter().map(|s| encode_scene(*s)).collect();
            let outcome = self
                .agent
                .candidate_contrastive_into(&it.tokens, &candidates, set.target_index, 0.0, &mut scratch.0)?;
            if outcome.prediction == set.target_index {
                correct += 1;
            }
        }
        Ok(correct as f64 / self.train.len() as f64)
    }

    /// Generation-only training.
    pub fn run_production_block(&mut self, order: &[usize]) -> Result<BlockStats> {
        let mut stats = BlockStats::default();
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch = self.batch(chunk);
            let mut grads = self.agent.zero_grads();
            total += self.agent.token_cross_entropy_into(&batch, 1.0, &mut grads.0);
            self.agent.adam_step(&grads)?;
            stats.steps += 1;
        }
        stats.mean_loss = total / stats.steps.max(1) as f64;
        Ok(stats)
    }

    /// Greedy labels for the training scenes and their similarity to the
    /// input language. No parameter changes.
    pub fn memorization_test(&self) -> (Vec<Production>, f64) {
        let productions: Vec<Production> = self
            .train
            .iter()
            .map(|it| produce(&self.agent, it.scene))
            .collect();
        let sim = mean_similarity(
            productions
                .iter()
                .zip(&self.train)
                .map(|(p, it)| (p.label.as_str(), it.label.as_str())),
        )
        .expect("training set is non-empty");
        (productions, sim)
    }

    /// Greedy labels for the held-out scenes, scored against the agent's own
    /// memorization productions.
    pub fn generalization_test(&self, train_productions: &[Production]) -> Result<(Vec<Production>, GeneralizationScore)> {
        let productions: Vec<Production> = self.test.iter().map(|s| produce(&self.agent, *s)).collect();
        let train: Vec<(Scene, &str)> = train_productions
            .iter()
            .map(|p| (p.scene(), p.label.as_str()))
            .collect();
        let test: Vec<(Scene, &str)> = productions.iter().map(|p| (p.scene(), p.label.as_str())).collect();
        let score = generalization_score(&train, &test, self.config.angle_mode)?;
        Ok((productions, score))
    }

    pub fn run_round(&mut self, round: usize) -> Result<RoundRecord> {
        let plan = self.plan_round(round);
        let context = |e: Error, block: &str| match e {
            Error::NonFinite { context } => Error::NonFinite {
                context: format!("round {round}, {block} block: {context}"),
            },
            other => other,
        };
        let exposure = self.run_exposure_block(&plan.exposure).map_err(|e| context(e, "exposure"))?;
        let guessing = self
            .run_guessing_block(round, &plan.guessing)
            .map_err(|e| context(e, "guessing"))?;
        let production = self
            .run_production_block(&plan.production)
            .map_err(|e| context(e, "production"))?;
        let (memorization, production_similarity) = self.memorization_test();
        let (generalization, gen) = self.generalization_test(&memorization)?;
        Ok(RoundRecord {
            language_id: self.lang.id().to_string(),
            structure: self.lang.structure().value(),
            agent_index: self.agent_index,
            agent_seed: self.agent_seed,
            round,
            production_similarity,
            generalization_score: gen.value,
            generalization_degenerate: gen.degenerate,
            guessing_accuracy: guessing.accuracy,
            exposure_loss: exposure.mean_loss,
            guessing_loss: guessing.block.mean_loss,
            production_loss: production.mean_loss,
            memorization,
            generalization,
        })
    }
}

fn produce(agent: &Agent, scene: Scene) -> Production {
    let h = agent.encode(&encode_scene(scene));
    Production {
        shape: scene.shape(),
        angle: scene.angle(),
        label: agent.generate_label(&h).label,
    }
}

/// Trains one agent for `config.rounds` rounds, streaming each record to `sink`.
pub fn train_agent_with(
    lang: &InputLanguage,
    config: &TrainerConfig,
    agent_index: usize,
    seed: u64,
    mut sink: impl FnMut(RoundRecord),
) -> Result<Agent> {
    let mut trainer = Trainer::new(lang, config.clone(), agent_index, seed)?;
    for round in 1..=config.rounds {
        sink(trainer.run_round(round)?);
    }
    Ok(trainer.agent)
}

pub fn train_agent(lang: &InputLanguage, config: &TrainerConfig, agent_index: usize, seed: u64) -> Result<Vec<RoundRecord>> {
    let mut records = Vec::with_capacity(config.rounds);
    train_agent_with(lang, config, agent_index, seed, |r| records.push(r))?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langgen::{generate_compositional, synthesize_language, GeneratorSpec};

    fn lang() -> InputLanguage {
        synthesize_language(&GeneratorSpec::default().with_target(0.5), 4, "mid").unwrap()
    }

    fn small_config() -> TrainerConfig {
        TrainerConfig {
            agent: AgentConfig::with_dims(16),
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn blocks_cover_every_item_once() {
        let l = lang();
        let mut t = Trainer::new(&l, small_config(), 0, 1).unwrap();
        let plan = t.plan_round(1);
        for order in [&plan.exposure, &plan.guessing, &plan.production] {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..23).collect::<Vec<_>>());
        }
        let sizes: Vec<usize> = plan.exposure.chunks(5).map(<[usize]>::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 5, 3]);
        assert_ne!(plan, t.plan_round(2));
    }

    #[test]
    fn block_step_counts() {
        let l = lang();
        let mut t = Trainer::new(&l, small_config(), 0, 1).unwrap();
        let plan = t.plan_round(1);
        let e = t.run_exposure_block(&plan.exposure).unwrap();
        assert_eq!((e.steps, e.contrastive_evaluations, e.contrastive_skipped), (5, 5, 0));
        assert_eq!(t.agent.adam().step_count(), 5);
        let g = t.run_guessing_block(1, &plan.guessing).unwrap();
        assert_eq!((g.block.steps, g.block.contrastive_evaluations), (23, 23));
        let p = t.run_production_block(&plan.production).unwrap();
        assert_eq!((p.steps, p.contrastive_evaluations), (5, 0));
        assert_eq!(t.agent.adam().step_count(), 33);
    }

    #[test]
    fn size_one_tail_skips_the_contrastive_term() {
        let l = lang();
        let config = TrainerConfig {
            batch_size: 11,
            ..small_config()
        };
        let mut t = Trainer::new(&l, config, 0, 1).unwrap();
        let order: Vec<usize> = (0..23).collect();
        let e = t.run_exposure_block(&order).unwrap();
        assert_eq!((e.steps, e.contrastive_evaluations, e.contrastive_skipped), (3, 2, 1));
    }

    #[test]
    fn distractors_are_distinct_and_shared() {
        let l = lang();
        for (k, target) in l.train_scenes().into_iter().enumerate() {
            let d = distractor_set(&l, 7, target, 3).unwrap();
            let mut all = d.candidates.clone();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 4);
            assert_eq!(d.candidates[d.target_index], target);
            assert!(!d.distractors.contains(&target));
            assert_eq!(d, distractor_set(&l, 7, target, 3).unwrap(), "trial {k}");
        }
        assert!(distractor_set(&l, 1, l.test_scenes()[0], 3).is_err());
        assert!(distractor_set(&l, 1, l.train_scenes()[0], 23).is_err());
    }

    #[test]
    fn blocks_are_deterministic() {
        let l = lang();
        let run = || {
            let mut t = Trainer::new(&l, small_config(), 0, 9).unwrap();
            let plan = t.plan_round(1);
            t.run_exposure_block(&plan.exposure).unwrap();
            t.run_guessing_block(1, &plan.guessing).unwrap();
            t.agent
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn tests_leave_the_agent_untouched() {
        let l = lang();
        let mut t = Trainer::new(&l, small_config(), 0, 2).unwrap();
        let plan = t.plan_round(1);
        t.run_exposure_block(&plan.exposure).unwrap();
        let before = t.agent.clone();
        let sum = t.agent.checksum();
        let (mem, sim) = t.memorization_test();
        let (gen, score) = t.generalization_test(&mem).unwrap();
        assert_eq!(t.agent.checksum(), sum);
        assert_eq!(t.agent, before);
        assert_eq!((mem.len(), gen.len()), (23, 13));
        assert!((0.0..=1.0).contains(&sim));
        assert!((-1.0..=1.0).contains(&score.value));
    }

    #[test]
    fn records_per_round_and_replay() {
        let l = lang();
        let config = TrainerConfig {
            rounds: 4,
            ..small_config()
        };
        let a = train_agent(&l, &config, 2, 77).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a.iter().map(|r| r.round).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!(a.iter().all(|r| r.agent_index == 2 && r.agent_seed == 77 && r.language_id == "mid"));
        let b = train_agent(&l, &config, 2, 77).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn full_run_has_one_record_per_round() {
        let l = lang();
        let config = TrainerConfig {
            agent: AgentConfig::with_dims(4),
            ..TrainerConfig::default()
        };
        assert_eq!(train_agent(&l, &config, 0, 1).unwrap().len(), 100);
    }

    #[test]
    fn untrained_baselines() {
        let l = lang();
        let mut sims = Vec::new();
        let mut gens = Vec::new();
        let mut accs = Vec::new();
        for seed in 0..10 {
            let t = Trainer::new(&l, TrainerConfig::default(), 0, seed).unwrap();
            let (mem, sim) = t.memorization_test();
            sims.push(sim);
            gens.push(t.generalization_test(&mem).unwrap().1.value);
            let before = t.agent.checksum();
            accs.push(t.evaluate_guessing(1).unwrap());
            assert_eq!(t.agent.checksum(), before);
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean(&sims) < 0.3, "{sims:?}");
        // a random smooth encoder already maps nearby scenes to similar strings
        assert!(mean(&gens).abs() < 0.45, "{gens:?}");
        assert!((mean(&accs) - 0.25).abs() <= 0.1, "{accs:?}");
    }

    #[test]
    fn overfit_agent_reproduces_the_language() {
        let l = generate_compositional(&GeneratorSpec::default(), 1).unwrap();
        let mut t = Trainer::new(&l, TrainerConfig::default(), 0, 3).unwrap();
        let order: Vec<usize> = (0..23).collect();
        for _ in 0..150 {
            t.run_production_block(&order).unwrap();
        }
        assert_eq!(t.memorization_test().1, 1.0);
    }

    #[test]
    fn non_finite_loss_names_round_and_block() {
        let l = lang();
        let mut config = small_config();
        config.agent.learning_rate = 1e308;
        let err = train_agent(&l, &config, 0, 1).unwrap_err().to_string();
        assert!(err.contains("round 1") && err.contains("block"), "{err}");
    }
}

//! The learner agent: scene encoder, shared character embedding, generative
//! LSTM writer and contrastive LSTM reader, trained with Adam on hand-written
//! gradients.
//!
//! All parameters live in one flat buffer (see [`params::Layout`]). The
//! embedding block is the only character table: the writer's input layer, the
//! reader's input layer and the writer's output projection all read it.

mod adam;
mod cell;
pub mod checkpoint;
pub mod gradcheck;
mod losses;
pub mod params;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::domain::{Alphabet, SceneVector, MAX_LABEL_LEN};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub use adam::Adam;
pub use losses::{candidate_loss_from_latents, ntxent_from_latents, ContrastiveOutcome, LatentLoss};
pub use params::Layout;

use cell::{matvec_add, Lstm};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const SPECIALS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Cosine,
    Dot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub encoder_out_dim: usize,
    /// 2: `6 → H → H` with tanh between; 1: a single affine map.
    pub encoder_layers: usize,
    pub alpha_con: f64,
    pub temperature: f64,
    pub learning_rate: f64,
    pub max_decode_len: usize,
    pub similarity: Similarity,
    pub forget_bias: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden_dim: 50,
            embed_dim: 50,
            encoder_out_dim: 50,
            encoder_layers: 2,
            alpha_con: 0.1,
            temperature: 0.1,
            learning_rate: 1e-3,
            max_decode_len: MAX_LABEL_LEN,
            similarity: Similarity::Cosine,
            forget_bias: 1.0,
        }
    }
}

impl AgentConfig {
    pub fn with_dims(dim: usize) -> Self {
        AgentConfig {
            hidden_dim: dim,
            embed_dim: dim,
            encoder_out_dim: dim,
            ..AgentConfig::default()
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    pub fn validate(&self) -> Result<()> {
        let dims = [self.hidden_dim, self.embed_dim, self.encoder_out_dim];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        // h seeds the writer state and the output layer is the transposed embedding
        if dims.iter().any(|d| *d != self.hidden_dim) {
            return Err(Error::InvalidArgument(
                "hidden, embedding and encoder output sizes must agree".into(),
            ));
        }
        if !(self.temperature > 0.0) || !(self.alpha_con >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "temperature and learning rate must be positive, alpha_con non-negative".into(),
            ));
        }
        if !(1..=2).contains(&self.encoder_layers) || self.max_decode_len == 0 {
            return Err(Error::InvalidArgument("encoder_layers must be 1 or 2".into()));
        }
        Ok(())
    }
}

/// Token ids: PAD, BOS, EOS, then the alphabet in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    pub fn new(alphabet: &Alphabet) -> Self {
        Vocab {
            chars: alphabet.chars().collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.chars.len() + SPECIALS
    }

    pub fn encode(&self, label: &str) -> Result<Vec<usize>> {
        label
            .chars()
            .map(|c| {
                self.chars
                    .binary_search(&c)
                    .map(|i| i + SPECIALS)
                    .map_err(|_| Error::InvalidLabel {
                        label: label.to_string(),
                        reason: format!("character {c:?} not in vocabulary"),
                    })
            })
            .collect()
    }

    pub fn char_of(&self, token: usize) -> Option<char> {
        token.checked_sub(SPECIALS).and_then(|i| self.chars.get(i).copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub scene: SceneVector,
    /// Label characters as token ids, without BOS/EOS.
    pub tokens: Vec<usize>,
}

/// Ragged batch; sequences keep their own length so no PAD position ever
/// enters a loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub label: String,
    /// Decoding hit `max_decode_len` before EOS.
    pub truncated: bool,
}

/// Gradient buffer laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<f64>);

impl Grads {
    pub fn zeros(layout: &Layout) -> Self {
        Grads(vec![0.0; layout.total])
    }

    pub fn add_scaled(&mut self, other: &Grads, scale: f64) {
        cell::axpy(scale, &other.0, &mut self.0);
    }
}

/// Saved encoder activations for backprop.
pub(crate) struct EncoderCache {
    x: [f64; 6],
    hidden: Vec<f64>,
    out: Vec<f64>,
}

/// All learnable state of one agent plus optimizer moments and its RNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    config: AgentConfig,
    vocab: Vocab,
    layout: Layout,
    params: Vec<f64>,
    adam: Adam,
    rng: Rng,
}

impl Agent {
    /// He-initialized agent; bit-identical for equal `(config, alphabet, seed)`.
    pub fn new(config: AgentConfig, alphabet: &Alphabet, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = Vocab::new(alphabet);
        let layout = Layout::new(&config, vocab.size());
        let mut rng = Rng::seed_from_u64(seed);
        let params = layout.initialize(config.forget_bias, &mut rng);
        let adam = Adam::new(layout.total, config.learning_rate);
        Ok(Agent {
            config,
            vocab,
            layout,
            params,
            adam,
            rng,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }

    pub fn writer_input_embedding(&self) -> &[f64] {
        &self.params[self.layout.embedding.range()]
    }

    pub fn reader_input_embedding(&self) -> &[f64] {
        &self.params[self.layout.embedding.range()]
    }

    pub fn writer_output_weights(&self) -> &[f64] {
        &self.params[self.layout.embedding.range()]
    }

    pub fn writer_input_embedding_mut(&mut self) -> &mut [f64] {
        let r = self.layout.embedding.range();
        &mut self.params[r]
    }

    pub fn reader_input_embedding_mut(&mut self) -> &mut [f64] {
        let r = self.layout.embedding.range();
        &mut self.params[r]
    }

    pub fn writer_output_weights_mut(&mut self) -> &mut [f64] {
        let r = self.layout.embedding.range();
        &mut self.params[r]
    }

    /// FNV-1a over the parameter bits; cheap mutation detector.
    pub fn checksum(&self) -> u64 {
        self.params.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, p| {
            (h ^ p.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    pub fn encode_label(&self, label: &str) -> Result<Vec<usize>> {
        self.vocab.encode(label)
    }

    fn embedding_row(&self, token: usize) -> &[f64] {
        let h = self.layout.hidden;
        let start = self.layout.embedding.offset + token * h;
        &self.params[start..start + h]
    }

    pub(crate) fn encode_cached(&self, scene: &SceneVector) -> EncoderCache {
        let l = &self.layout;
        let p = &self.params;
        let h = l.hidden;
        let mut hidden = p[l.enc_b1.range()].to_vec();
        matvec_add(&p[l.enc_w1.range()], &scene.0, &mut hidden);
        let out = if l.two_layer_encoder() {
            hidden.iter_mut().for_each(|v| *v = v.tanh());
            let mut out = p[l.enc_b2.range()].to_vec();
            matvec_add(&p[l.enc_w2.range()], &hidden, &mut out);
            out
        } else {
            hidden.clone()
        };
        debug_assert_eq!(out.len(), h);
        EncoderCache {
            x: scene.0,
            hidden,
            out,
        }
    }

    pub(crate) fn encoder_backward(&self, cache: &EncoderCache, dout: &[f64], grads: &mut [f64]) {
        let l = &self.layout;
        let p = &self.params;
        if l.two_layer_encoder() {
            cell::outer_add(&mut grads[l.enc_w2.range()], dout, &cache.hidden);
            cell::axpy(1.0, dout, &mut grads[l.enc_b2.range()]);
            let mut dhidden = vec![0.0; l.hidden];
            cell::matvec_t_add(&p[l.enc_w2.range()], dout, &mut dhidden);
            for (d, a) in dhidden.iter_mut().zip(&cache.hidden) {
                *d *= 1.0 - a * a;
            }
            cell::outer_add(&mut grads[l.enc_w1.range()], &dhidden, &cache.x);
            cell::axpy(1.0, &dhidden, &mut grads[l.enc_b1.range()]);
        } else {
            cell::outer_add(&mut grads[l.enc_w1.range()], dout, &cache.x);
            cell::axpy(1.0, dout, &mut grads[l.enc_b1.range()]);
        }
    }

    /// Scene latent `h`.
    pub fn encode(&self, scene: &SceneVector) -> Vec<f64> {
        self.encode_cached(scene).out
    }

    fn writer(&self) -> Lstm<'_> {
        Lstm::view(&self.params, &self.layout.writer, self.layout.hidden)
    }

    fn reader(&self) -> Lstm<'_> {
        Lstm::view(&self.params, &self.layout.reader, self.layout.hidden)
    }

    /// Output-layer logits `E h + b` into `logits`.
    fn logits(&self, h: &[f64], logits: &mut [f64]) {
        logits.copy_from_slice(&self.params[self.layout.out_bias.range()]);
        matvec_add(&self.params[self.layout.embedding.range()], h, logits);
    }

    /// Greedy decoding from BOS with `h` as the writer's initial hidden state.
    pub fn generate_label(&self, h: &[f64]) -> Generation {
        self.decode(h, |logits| {
            // PAD and BOS are never valid outputs
            let mut best = EOS;
            for t in EOS + 1..logits.len() {
                if logits[t] > logits[best] {
                    best = t;
                }
            }
            best
        })
    }

    /// Ancestral sampling at the given softmax temperature.
    pub fn sample_label(&self, h: &[f64], temperature: f64, rng: &mut Rng) -> Generation {
        use rand::Rng as _;
        self.decode(h, |logits| {
            let max = logits[EOS..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits[EOS..]
                .iter()
                .map(|l| ((l - max) / temperature).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (k, w) in weights.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    return EOS + k;
                }
            }
            logits.len() - 1
        })
    }

    fn decode(&self, h0: &[f64], mut pick: impl FnMut(&[f64]) -> usize) -> Generation {
        let n = self.layout.hidden;
        let lstm = self.writer();
        let mut h = h0.to_vec();
        let mut c = vec![0.0; n];
        let (mut h_next, mut c_next) = (vec![0.0; n], vec![0.0; n]);
        let mut gates = vec![0.0; 4 * n];
        let mut logits = vec![0.0; self.layout.vocab];
        let mut token = BOS;
        let mut label = String::new();
        for _ in 0..self.config.max_decode_len {
            lstm.step(self.embedding_row(token), &h, &c, &mut gates, &mut c_next, &mut h_next);
            std::mem::swap(&mut h, &mut h_next);
            std::mem::swap(&mut c, &mut c_next);
            self.logits(&h, &mut logits);
            token = pick(&logits);
            if token == EOS {
                return Generation {
                    label,
                    truncated: false,
                };
            }
            label.push(self.vocab.char_of(token).expect("specials excluded by pick"));
        }
        Generation {
            label,
            truncated: true,
        }
    }

    /// Label latent `z`: the reader consumes BOS, the characters and EOS; its
    /// final hidden state is projected affinely.
    pub fn read_label(&self, label: &str) -> Result<Vec<f64>> {
        let tokens = self.vocab.encode(label)?;
        Ok(self.read_tokens(&tokens))
    }

    pub fn read_tokens(&self, tokens: &[usize]) -> Vec<f64> {
        let n = self.layout.hidden;
        let lstm = self.reader();
        let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
        let (mut h_next, mut c_next) = (vec![0.0; n], vec![0.0; n]);
        let mut gates = vec![0.0; 4 * n];
        for &t in std::iter::once(&BOS).chain(tokens).chain(std::iter::once(&EOS)) {
            lstm.step(self.embedding_row(t), &h, &c, &mut gates, &mut c_next, &mut h_next);
            std::mem::swap(&mut h, &mut h_next);
            std::mem::swap(&mut c, &mut c_next);
        }
        let mut z = self.params[self.layout.proj_b.range()].to_vec();
        matvec_add(&self.params[self.layout.proj_w.range()], &h, &mut z);
        z
    }

    /// One Adam update. Non-finite gradients abort without touching the state.
    pub fn adam_step(&mut self, grads: &Grads) -> Result<()> {
        if let Some(i) = grads.0.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!(
                    "gradient of {} (index {i}) at step {}",
                    self.layout.name_of(i),
                    self.adam.step_count() + 1
                ),
            });
        }
        self.adam.step(&mut self.params, &grads.0);
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("parameter {} (index {i}) after update", self.layout.name_of(i)),
            });
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> Grads {
        Grads::zeros(&self.layout)
    }
}

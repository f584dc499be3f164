//! Flat parameter storage. Every tensor lives at a fixed offset in one
//! `Vec<f64>`; gradients and Adam moments share the same layout.

use std::ops::Range;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::SCENE_DIM;
use crate::rng::Rng;

use super::AgentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmBlocks {
    /// `4H × D`, gate order input, forget, cell, output.
    pub wx: Block,
    pub wh: Block,
    pub bias: Block,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub hidden: usize,
    pub vocab: usize,
    pub enc_w1: Block,
    pub enc_b1: Block,
    /// Absent (zero-sized) for a single-layer encoder.
    pub enc_w2: Block,
    pub enc_b2: Block,
    /// `V × H`; the writer's and reader's input table and the writer's output weights.
    pub embedding: Block,
    pub out_bias: Block,
    pub writer: LstmBlocks,
    pub reader: LstmBlocks,
    pub proj_w: Block,
    pub proj_b: Block,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, rows: usize, cols: usize) -> Block {
        let b = Block {
            offset: self.0,
            rows,
            cols,
        };
        self.0 += rows * cols;
        b
    }

    fn lstm(&mut self, hidden: usize, input: usize) -> LstmBlocks {
        LstmBlocks {
            wx: self.take(4 * hidden, input),
            wh: self.take(4 * hidden, hidden),
            bias: self.take(4 * hidden, 1),
        }
    }
}

impl Layout {
    pub fn new(config: &AgentConfig, vocab: usize) -> Self {
        let h = config.hidden_dim;
        let mut c = Cursor(0);
        let (enc_w1, enc_b1, enc_w2, enc_b2) = if config.encoder_layers >= 2 {
            let w1 = c.take(h, SCENE_DIM);
            let b1 = c.take(h, 1);
            (w1, b1, c.take(h, h), c.take(h, 1))
        } else {
            let w1 = c.take(h, SCENE_DIM);
            let b1 = c.take(h, 1);
            (w1, b1, c.take(0, 0), c.take(0, 0))
        };
        let embedding = c.take(vocab, h);
        let out_bias = c.take(vocab, 1);
        let writer = c.lstm(h, h);
        let reader = c.lstm(h, h);
        let proj_w = c.take(h, h);
        let proj_b = c.take(h, 1);
        Layout {
            hidden: h,
            vocab,
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            embedding,
            out_bias,
            writer,
            reader,
            proj_w,
            proj_b,
            total: c.0,
        }
    }

    pub fn two_layer_encoder(&self) -> bool {
        !self.enc_w2.is_empty()
    }

    fn weights(&self) -> Vec<Block> {
        vec![
            self.enc_w1,
            self.enc_w2,
            self.embedding,
            self.writer.wx,
            self.writer.wh,
            self.reader.wx,
            self.reader.wh,
            self.proj_w,
        ]
    }

    /// He-normal weights (`var = 2 / fan_in`), zero biases, forget-gate biases
    /// set to `forget_bias`.
    pub fn initialize(&self, forget_bias: f64, rng: &mut Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.total];
        for block in self.weights() {
            if block.is_empty() {
                continue;
            }
            let std = (2.0 / block.cols as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[block.range()] {
                *p = normal.sample(rng);
            }
        }
        for lstm in [self.writer, self.reader] {
            let start = lstm.bias.offset + self.hidden;
            params[start..start + self.hidden].fill(forget_bias);
        }
        params
    }

    /// Human-readable name of the tensor owning flat index `i`.
    pub fn name_of(&self, i: usize) -> &'static str {
        let named = [
            (self.enc_w1, "encoder.w1"),
            (self.enc_b1, "encoder.b1"),
            (self.enc_w2, "encoder.w2"),
            (self.enc_b2, "encoder.b2"),
            (self.embedding, "embedding"),
            (self.out_bias, "writer.out_bias"),
            (self.writer.wx, "writer.wx"),
            (self.writer.wh, "writer.wh"),
            (self.writer.bias, "writer.bias"),
            (self.reader.wx, "reader.wx"),
            (self.reader.wh, "reader.wh"),
            (self.reader.bias, "reader.bias"),
            (self.proj_w, "reader.proj_w"),
            (self.proj_b, "reader.proj_b"),
        ];
        named
            .iter()
            .find(|(b, _)| b.range().contains(&i))
            .map_or("?", |(_, n)| n)
    }
}

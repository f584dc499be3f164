//! Losses with analytic gradients: teacher-forced token cross-entropy for the
//! writer, in-batch NTXent and candidate-set contrastive loss between scene
//! latents `h` and label latents `z`.

use crate::domain::SceneVector;
use crate::error::{Error, Result};

use super::cell::{self, LstmGrads, StepCache};
use super::params::LstmBlocks;
use super::{Agent, Batch, Similarity, BOS, EOS};

/// A loss value with gradients w.r.t. two groups of latents.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentLoss {
    pub loss: f64,
    pub d_first: Vec<Vec<f64>>,
    pub d_second: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveOutcome {
    pub loss: f64,
    /// Index of the most similar candidate.
    pub prediction: usize,
    /// Fewer than two candidates; the loss is zero and carries no gradient.
    pub degenerate: bool,
}

fn norm(v: &[f64]) -> f64 {
    cell::dot(v, v).sqrt().max(1e-12)
}

/// Similarity and its gradients w.r.t. both arguments.
fn similarity(kind: Similarity, a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    match kind {
        Similarity::Dot => (cell::dot(a, b), b.to_vec(), a.to_vec()),
        Similarity::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            let s = cell::dot(a, b) / (na * nb);
            let da = a
                .iter()
                .zip(b)
                .map(|(x, y)| y / (na * nb) - s * x / (na * na))
                .collect();
            let db = a
                .iter()
                .zip(b)
                .map(|(x, y)| x / (na * nb) - s * y / (nb * nb))
                .collect();
            (s, da, db)
        }
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Symmetric NTXent: row `i` of `sim(h_i, z_j) / τ` is a softmax over labels
/// with target `i`, column `j` a softmax over scenes with target `j`; the
/// two directions are averaged.
pub fn ntxent_from_latents(
    hs: &[Vec<f64>],
    zs: &[Vec<f64>],
    temperature: f64,
    kind: Similarity,
) -> Result<LatentLoss> {
    let b = hs.len();
    if b < 2 || zs.len() != b {
        return Err(Error::InvalidArgument(format!(
            "in-batch contrastive loss needs at least 2 aligned pairs, got {b}"
        )));
    }
    let mut sims = vec![vec![0.0; b]; b];
    let mut grads_h = vec![vec![Vec::new(); b]; b];
    let mut grads_z = vec![vec![Vec::new(); b]; b];
    for i in 0..b {
        for j in 0..b {
            let (s, dh, dz) = similarity(kind, &hs[i], &zs[j]);
            sims[i][j] = s / temperature;
            grads_h[i][j] = dh;
            grads_z[i][j] = dz;
        }
    }
    let mut loss = 0.0;
    let mut dsim = vec![vec![0.0; b]; b];
    let w = 0.5 / b as f64;
    for i in 0..b {
        let p = softmax(&sims[i]);
        loss -= p[i].ln();
        for j in 0..b {
            dsim[i][j] += w * (p[j] - f64::from(u8::from(i == j)));
        }
    }
    for j in 0..b {
        let col: Vec<f64> = (0..b).map(|i| sims[i][j]).collect();
        let p = softmax(&col);
        loss -= p[j].ln();
        for i in 0..b {
            dsim[i][j] += w * (p[i] - f64::from(u8::from(i == j)));
        }
    }
    loss *= w;
    let dim = hs[0].len();
    let mut d_first = vec![vec![0.0; dim]; b];
    let mut d_second = vec![vec![0.0; dim]; b];
    for i in 0..b {
        for j in 0..b {
            let g = dsim[i][j] / temperature;
            cell::axpy(g, &grads_h[i][j], &mut d_first[i]);
            cell::axpy(g, &grads_z[i][j], &mut d_second[j]);
        }
    }
    Ok(LatentLoss {
        loss,
        d_first,
        d_second,
    })
}

/// Cross-entropy of picking `target` among candidate scene latents for a
/// label latent `z`. `d_first` holds the single gradient w.r.t. `z`,
/// `d_second` one per candidate.
pub fn candidate_loss_from_latents(
    z: &[f64],
    candidates: &[Vec<f64>],
    target: usize,
    temperature: f64,
    kind: Similarity,
) -> Result<(ContrastiveOutcome, LatentLoss)> {
    if target >= candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} outside {} candidates",
            candidates.len()
        )));
    }
    let k = candidates.len();
    let parts: Vec<_> = candidates.iter().map(|h| similarity(kind, z, h)).collect();
    let logits: Vec<f64> = parts.iter().map(|(s, _, _)| s / temperature).collect();
    let mut prediction = 0;
    for (i, l) in logits.iter().enumerate() {
        if *l > logits[prediction] {
            prediction = i;
        }
    }
    if k < 2 {
        let outcome = ContrastiveOutcome {
            loss: 0.0,
            prediction,
            degenerate: true,
        };
        let zeros = LatentLoss {
            loss: 0.0,
            d_first: vec![vec![0.0; z.len()]],
            d_second: vec![vec![0.0; z.len()]; k],
        };
        return Ok((outcome, zeros));
    }
    let p = softmax(&logits);
    let loss = -p[target].ln();
    let mut dz = vec![0.0; z.len()];
    let mut dh = Vec::with_capacity(k);
    for (i, (_, gz, gh)) in parts.iter().enumerate() {
        let g = (p[i] - f64::from(u8::from(i == target))) / temperature;
        cell::axpy(g, gz, &mut dz);
        dh.push(gh.iter().map(|x| g * x).collect());
    }
    Ok((
        ContrastiveOutcome {
            loss,
            prediction,
            degenerate: false,
        },
        LatentLoss {
            loss,
            d_first: vec![dz],
            d_second: dh,
        },
    ))
}

fn lstm_grads<'a>(grads: &'a mut [f64], blocks: &LstmBlocks) -> LstmGrads<'a> {
    let region = &mut grads[blocks.wx.offset..blocks.bias.range().end];
    let (wx, rest) = region.split_at_mut(blocks.wx.len());
    let (wh, bias) = rest.split_at_mut(blocks.wh.len());
    LstmGrads { wx, wh, bias }
}

struct SeqTrace {
    inputs: Vec<usize>,
    steps: Vec<StepCache>,
}

impl Agent {
    fn run_cached(&self, blocks: &LstmBlocks, h0: &[f64], inputs: Vec<usize>) -> SeqTrace {
        let n = self.layout.hidden;
        let lstm = cell::Lstm::view(&self.params, blocks, n);
        let mut steps: Vec<StepCache> = Vec::with_capacity(inputs.len());
        let zeros = vec![0.0; n];
        for &tok in &inputs {
            let (h_prev, c_prev) = match steps.last() {
                Some(s) => (&s.h[..], &s.c[..]),
                None => (h0, &zeros[..]),
            };
            let step = StepCache::run(&lstm, self.embedding_row(tok), h_prev, c_prev);
            steps.push(step);
        }
        SeqTrace { inputs, steps }
    }

    /// BPTT given per-step output gradients (added before each step's
    /// backward). Returns the gradient w.r.t. the initial hidden state.
    fn backprop_sequence(
        &self,
        blocks: &LstmBlocks,
        trace: &SeqTrace,
        mut dh_out: impl FnMut(usize, &mut [f64], &mut [f64]),
        grads: &mut [f64],
    ) -> Vec<f64> {
        let n = self.layout.hidden;
        let lstm = cell::Lstm::view(&self.params, blocks, n);
        let mut dh = vec![0.0; n];
        let mut dc = vec![0.0; n];
        let mut dx = vec![0.0; n];
        let mut dpre = vec![0.0; 4 * n];
        for t in (0..trace.steps.len()).rev() {
            dh_out(t, &mut dh, grads);
            let tok = trace.inputs[t];
            dx.fill(0.0);
            let mut lg = lstm_grads(grads, blocks);
            cell::step_backward(
                &lstm,
                &mut lg,
                &trace.steps[t],
                self.embedding_row(tok),
                &mut dh,
                &mut dc,
                &mut dx,
                &mut dpre,
            );
            let row = self.layout.embedding.offset + tok * n;
            cell::axpy(1.0, &dx, &mut grads[row..row + n]);
        }
        dh
    }

    /// Teacher-forced writer pass over one label; adds `token_scale ×` the
    /// gradient of the summed token losses and returns `(sum, dL/dh0)`.
    fn writer_loss(&self, h0: &[f64], tokens: &[usize], token_scale: f64, grads: &mut [f64]) -> (f64, Vec<f64>) {
        let inputs: Vec<usize> = std::iter::once(BOS).chain(tokens.iter().copied()).collect();
        let targets: Vec<usize> = tokens.iter().copied().chain(std::iter::once(EOS)).collect();
        let trace = self.run_cached(&self.layout.writer, h0, inputs);
        let v = self.layout.vocab;
        let mut logits = vec![0.0; v];
        let mut probs = Vec::with_capacity(targets.len());
        let mut loss = 0.0;
        for (step, &target) in trace.steps.iter().zip(&targets) {
            self.logits(&step.h, &mut logits);
            let p = softmax(&logits);
            loss -= p[target].max(f64::MIN_POSITIVE).ln();
            probs.push(p);
        }
        let emb = self.layout.embedding;
        let out_bias = self.layout.out_bias;
        let dh0 = self.backprop_sequence(
            &self.layout.writer,
            &trace,
            |t, dh, grads| {
                let mut dlog = probs[t].clone();
                dlog[targets[t]] -= 1.0;
                dlog.iter_mut().for_each(|d| *d *= token_scale);
                cell::outer_add(&mut grads[emb.range()], &dlog, &trace.steps[t].h);
                cell::axpy(1.0, &dlog, &mut grads[out_bias.range()]);
                cell::matvec_t_add(&self.params[emb.range()], &dlog, dh);
            },
            grads,
        );
        (loss, dh0)
    }

    fn reader_cached(&self, tokens: &[usize]) -> (SeqTrace, Vec<f64>) {
        let inputs: Vec<usize> = std::iter::once(BOS)
            .chain(tokens.iter().copied())
            .chain(std::iter::once(EOS))
            .collect();
        let zeros = vec![0.0; self.layout.hidden];
        let trace = self.run_cached(&self.layout.reader, &zeros, inputs);
        let last = &trace.steps.last().expect("at least BOS and EOS").h;
        let mut z = self.params[self.layout.proj_b.range()].to_vec();
        cell::matvec_add(&self.params[self.layout.proj_w.range()], last, &mut z);
        (trace, z)
    }

    fn reader_backward(&self, trace: &SeqTrace, dz: &[f64], grads: &mut [f64]) {
        let l = &self.layout;
        let last = trace.steps.len() - 1;
        cell::outer_add(&mut grads[l.proj_w.range()], dz, &trace.steps[last].h);
        cell::axpy(1.0, dz, &mut grads[l.proj_b.range()]);
        let proj = &self.params[l.proj_w.range()];
        self.backprop_sequence(
            &l.reader,
            trace,
            |t, dh, _| {
                if t == last {
                    cell::matvec_t_add(proj, dz, dh);
                }
            },
            grads,
        );
    }

    /// Mean token cross-entropy over every predicted position (EOS included);
    /// `scale ×` its gradient is added to `grads`.
    pub fn token_cross_entropy_into(&self, batch: &Batch, scale: f64, grads: &mut [f64]) -> f64 {
        let total_tokens: usize = batch.items.iter().map(|it| it.tokens.len() + 1).sum();
        if total_tokens == 0 {
            return 0.0;
        }
        let token_scale = scale / total_tokens as f64;
        let mut loss = 0.0;
        for item in &batch.items {
            let enc = self.encode_cached(&item.scene);
            let (l, dh0) = self.writer_loss(&enc.out, &item.tokens, token_scale, grads);
            loss += l;
            self.encoder_backward(&enc, &dh0, grads);
        }
        loss / total_tokens as f64
    }

    /// In-batch NTXent between scene and label latents.
    pub fn ntxent_inbatch_into(&self, batch: &Batch, scale: f64, grads: &mut [f64]) -> Result<f64> {
        if batch.len() < 2 {
            return Err(Error::InvalidArgument(
                "in-batch contrastive loss needs a batch of at least 2".into(),
            ));
        }
        let encs: Vec<_> = batch.items.iter().map(|it| self.encode_cached(&it.scene)).collect();
        let reads: Vec<_> = batch.items.iter().map(|it| self.reader_cached(&it.tokens)).collect();
        let hs: Vec<Vec<f64>> = encs.iter().map(|e| e.out.clone()).collect();
        let zs: Vec<Vec<f64>> = reads.iter().map(|(_, z)| z.clone()).collect();
        let ll = ntxent_from_latents(&hs, &zs, self.config.temperature, self.config.similarity)?;
        for (enc, dh) in encs.iter().zip(&ll.d_first) {
            let dh: Vec<f64> = dh.iter().map(|d| d * scale).collect();
            self.encoder_backward(enc, &dh, grads);
        }
        for ((trace, _), dz) in reads.iter().zip(&ll.d_second) {
            let dz: Vec<f64> = dz.iter().map(|d| d * scale).collect();
            self.reader_backward(trace, &dz, grads);
        }
        Ok(ll.loss)
    }

    /// Contrastive selection of `candidates[target]` given a label.
    pub fn candidate_contrastive_into(
        &self,
        tokens: &[usize],
        candidates: &[SceneVector],
        target: usize,
        scale: f64,
        grads: &mut [f64],
    ) -> Result<ContrastiveOutcome> {
        let (trace, z) = self.reader_cached(tokens);
        let encs: Vec<_> = candidates.iter().map(|c| self.encode_cached(c)).collect();
        let hs: Vec<Vec<f64>> = encs.iter().map(|e| e.out.clone()).collect();
        let (outcome, ll) =
            candidate_loss_from_latents(&z, &hs, target, self.config.temperature, self.config.similarity)?;
        if outcome.degenerate {
            return Ok(outcome);
        }
        let dz: Vec<f64> = ll.d_first[0].iter().map(|d| d * scale).collect();
        self.reader_backward(&trace, &dz, grads);
        for (enc, dh) in encs.iter().zip(&ll.d_second) {
            let dh: Vec<f64> = dh.iter().map(|d| d * scale).collect();
            self.encoder_backward(enc, &dh, grads);
        }
        Ok(outcome)
    }

    pub fn token_cross_entropy(&self, batch: &Batch) -> (f64, super::Grads) {
        let mut g = self.zero_grads();
        let loss = self.token_cross_entropy_into(batch, 1.0, &mut g.0);
        (loss, g)
    }

    pub fn ntxent_inbatch(&self, batch: &Batch) -> Result<(f64, super::Grads)> {
        let mut g = self.zero_grads();
        let loss = self.ntxent_inbatch_into(batch, 1.0, &mut g.0)?;
        Ok((loss, g))
    }

    pub fn candidate_contrastive(
        &self,
        label: &str,
        candidates: &[SceneVector],
        target: usize,
    ) -> Result<(ContrastiveOutcome, super::Grads)> {
        let tokens = self.vocab.encode(label)?;
        let mut g = self.zero_grads();
        let outcome = self.candidate_contrastive_into(&tokens, candidates, target, 1.0, &mut g.0)?;
        Ok((outcome, g))
    }
}

//! Per-class character-level sequence generators for the two sequential
//! features: packet directions and binned TCP window sizes.
//!
//! One LSTM is trained per (class, feature). Training sequences are the
//! feature tracks of the class's flows with an end token appended; targets
//! are the same sequence shifted one step. Generation draws the first token
//! from the empirical first-step distribution, then samples from the LSTM's
//! softmax until the end token or the 20-packet cutoff.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use ntc_nn::loss::{softmax_cross_entropy, softmax_cross_entropy_backward};
use ntc_nn::{softmax_rows, Adam, AdamConfig, Archive, ArchiveError, Dense, DenseGrads, LstmCell, LstmGrads};

use crate::flow::{ClassId, FlowRecord, MAX_PACKETS};
use crate::ingest::Dataset;
use crate::seeds;

#[derive(Debug, Error)]
pub enum SeqGenError {
    #[error("class id {0} is not in the dataset")]
    ClassNotFound(usize),
    #[error("class {0} has no flows")]
    EmptyClass(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("archive error: {0}")]
    Archive(#[from] ArchiveError),
    #[error("corrupt model metadata: {0}")]
    BadMetadata(String),
}

/// Which sequential feature a generator models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeqFeatureKind {
    Direction,
    WindowSize,
}

/// A sequence vocabulary token. Directions use `Value(0)` / `Value(1)`;
/// window vocabularies hold the top-K exact values plus `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeqToken {
    Value(u32),
    Other,
    End,
}

/// Ordered token set with dense indices; `End` appears exactly once, last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqVocab {
    tokens: Vec<SeqToken>,
    #[serde(skip)]
    index: HashMap<SeqToken, usize>,
}

impl SeqVocab {
    fn from_tokens(tokens: Vec<SeqToken>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        SeqVocab { tokens, index }
    }

    /// The fixed direction vocabulary {0, 1, End}.
    pub fn directions() -> Self {
        Self::from_tokens(vec![SeqToken::Value(0), SeqToken::Value(1), SeqToken::End])
    }

    /// Window vocabulary: the `top_k` most frequent exact values (ties break
    /// toward the smaller value), then `Other`, then `End`.
    pub fn windows_from_flows<'a>(
        flows: impl Iterator<Item = &'a FlowRecord>,
        top_k: usize,
    ) -> Self {
        let mut counts: HashMap<u32, u64> = HashMap::new();
        for flow in flows {
            for p in flow.packets() {
                *counts.entry(p.tcp_window_size).or_insert(0) += 1;
            }
        }
        let mut by_freq: Vec<(u32, u64)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut tokens: Vec<SeqToken> = by_freq
            .into_iter()
            .take(top_k)
            .map(|(v, _)| SeqToken::Value(v))
            .collect();
        tokens.push(SeqToken::Other);
        tokens.push(SeqToken::End);
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[SeqToken] {
        &self.tokens
    }

    pub fn index_of(&self, token: SeqToken) -> Option<usize> {
        self.index.get(&token).copied()
    }

    pub fn end_index(&self) -> usize {
        self.index[&SeqToken::End]
    }

    /// Maps a raw window value to its token (`Other` when outside the top-K).
    pub fn window_token(&self, value: u32) -> SeqToken {
        if self.index.contains_key(&SeqToken::Value(value)) {
            SeqToken::Value(value)
        } else {
            SeqToken::Other
        }
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, i))
            .collect();
    }
}

/// Training corpus: per flow, the token-index sequence with `End` appended.
/// Training pairs are `(seq[t], seq[t+1])` — the target track is the input
/// shifted one step.
pub fn build_training_corpus(
    dataset: &Dataset,
    class: ClassId,
    kind: SeqFeatureKind,
    vocab: &SeqVocab,
) -> Result<Vec<Vec<usize>>, SeqGenError> {
    if class.0 >= dataset.class_count() {
        return Err(SeqGenError::ClassNotFound(class.0));
    }
    let mut corpus = Vec::new();
    for flow in dataset.flows_of_class(class) {
        let mut seq: Vec<usize> = flow
            .packets()
            .iter()
            .map(|p| {
                let token = match kind {
                    SeqFeatureKind::Direction => SeqToken::Value(u32::from(p.direction.bit())),
                    SeqFeatureKind::WindowSize => vocab.window_token(p.tcp_window_size),
                };
                vocab.index_of(token).expect("token in vocabulary")
            })
            .collect();
        seq.push(vocab.end_index());
        corpus.push(seq);
    }
    if corpus.is_empty() {
        return Err(SeqGenError::EmptyClass(
            dataset.label_name(class).to_string(),
        ));
    }
    Ok(corpus)
}

#[derive(Debug, Clone)]
pub struct SeqGenConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SeqGenConfig {
    fn default() -> Self {
        SeqGenConfig {
            hidden: 64,
            epochs: 30,
            lr: 1e-2,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// A trained per-(class, feature) generator.
#[derive(Debug, Clone)]
pub struct SeqGenModel {
    pub class: ClassId,
    pub kind: SeqFeatureKind,
    pub vocab: SeqVocab,
    cell: LstmCell,
    out: Dense,
    /// Categorical distribution of the first token (never `End`).
    first_step: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SeqGenMeta {
    class: usize,
    kind: SeqFeatureKind,
    vocab: SeqVocab,
    first_step: Vec<f64>,
}

/// Trains a generator on a token-index corpus. Returns the model and the
/// mean per-step cross-entropy after each epoch.
pub fn train_seqgen(
    class: ClassId,
    kind: SeqFeatureKind,
    vocab: &SeqVocab,
    corpus: &[Vec<usize>],
    config: &SeqGenConfig,
) -> Result<(SeqGenModel, Vec<f64>), SeqGenError> {
    if corpus.is_empty() {
        return Err(SeqGenError::EmptyCorpus);
    }
    let vocab_size = vocab.len();
    let end = vocab.end_index();

    // Empirical distribution of first tokens; End cannot start a sequence.
    let mut first_step = vec![0.0; vocab_size];
    for seq in corpus {
        first_step[seq[0]] += 1.0;
    }
    let total: f64 = first_step.iter().sum();
    for p in &mut first_step {
        *p /= total;
    }
    debug_assert_eq!(first_step[end], 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_tagged(config.seed, "seqgen-init", 0));
    let mut cell = LstmCell::new(&mut rng, vocab_size, config.hidden);
    let mut out = Dense::new(&mut rng, config.hidden, vocab_size);
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut shuffle_rng =
        ChaCha8Rng::seed_from_u64(seeds::derive_tagged(config.seed, "seqgen-shuffle", 0));

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut cell_grads = LstmGrads::zeros_like(&cell);
            let mut out_grads = DenseGrads::zeros_like(&out);
            let batch_steps: usize = batch.iter().map(|&i| corpus[i].len() - 1).sum();
            if batch_steps == 0 {
                continue;
            }
            let scale = 1.0 / batch_steps as f64;
            for &i in batch {
                let seq = &corpus[i];
                let steps = seq.len() - 1;
                let mut state = cell.zero_state();
                let mut caches = Vec::with_capacity(steps);
                let mut hidden = Array2::zeros((steps, config.hidden));
                for t in 0..steps {
                    let x = one_hot(vocab_size, seq[t]);
                    let (next, cache) = cell.forward_step(&x, &state);
                    hidden.row_mut(t).assign(&next.h);
                    caches.push(cache);
                    state = next;
                }
                let targets = &seq[1..];
                let logits = out.forward(&hidden);
                let (loss_sum, probs) = softmax_cross_entropy(&logits, targets);
                epoch_loss += loss_sum;
                epoch_steps += steps;

                let dlogits = softmax_cross_entropy_backward(&probs, targets, scale);
                let (dhidden, o_grads) = out.backward(&hidden, &dlogits);
                out_grads.accumulate(&o_grads);

                let mut dh = Array1::zeros(config.hidden);
                let mut dc = Array1::zeros(config.hidden);
                for t in (0..steps).rev() {
                    let dh_total = &dh + &dhidden.row(t);
                    let (_, dh_prev, dc_prev) =
                        cell.backward_step(&caches[t], &dh_total, &dc, &mut cell_grads);
                    dh = dh_prev;
                    dc = dc_prev;
                }
            }
            opt.begin_step();
            opt.update(cell.w.as_slice_mut().unwrap(), cell_grads.w.as_slice().unwrap())
                .expect("lstm weight shapes are stable");
            opt.update(cell.b.as_slice_mut().unwrap(), cell_grads.b.as_slice().unwrap())
                .expect("lstm bias shapes are stable");
            opt.update(out.w.as_slice_mut().unwrap(), out_grads.w.as_slice().unwrap())
                .expect("projection weight shapes are stable");
            opt.update(out.b.as_slice_mut().unwrap(), out_grads.b.as_slice().unwrap())
                .expect("projection bias shapes are stable");
        }
        epoch_losses.push(epoch_loss / epoch_steps.max(1) as f64);
    }

    Ok((
        SeqGenModel {
            class,
            kind,
            vocab: vocab.clone(),
            cell,
            out,
            first_step,
        },
        epoch_losses,
    ))
}

fn one_hot(len: usize, idx: usize) -> Array1<f64> {
    let mut x = Array1::zeros(len);
    x[idx] = 1.0;
    x
}

impl SeqGenModel {
    pub fn first_step_distribution(&self) -> &[f64] {
        &self.first_step
    }

    /// Samples one token track of length 1..=20; the end token is consumed,
    /// never returned.
    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> Vec<SeqToken> {
        let end = self.vocab.end_index();
        let first = draw_categorical(&self.first_step, rng);
        let mut tokens = vec![self.vocab.tokens()[first]];
        let mut state = self.cell.zero_state();
        let mut current = first;
        // At most 19 further steps after the first token.
        for _ in 0..(MAX_PACKETS - 1) {
            let x = one_hot(self.vocab.len(), current);
            let (next, _) = self.cell.forward_step(&x, &state);
            state = next;
            let mut logits = Array2::zeros((1, self.vocab.len()));
            logits
                .row_mut(0)
                .assign(&self.out.forward(&state.h.clone().insert_axis(ndarray::Axis(0))).row(0));
            softmax_rows(&mut logits);
            let probs: Vec<f64> = logits.row(0).to_vec();
            let next_token = draw_categorical(&probs, rng);
            if next_token == end {
                break;
            }
            tokens.push(self.vocab.tokens()[next_token]);
            current = next_token;
        }
        tokens
    }

    pub fn sample_sequence(&self, rng_seed: u64) -> Vec<SeqToken> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        self.sample_with(&mut rng)
    }

    /// Stores all parameters and metadata under `prefix` in the archive.
    pub fn write_archive(&self, archive: &mut Archive, prefix: &str) {
        archive.insert_array2(&format!("{prefix}.lstm.w"), &self.cell.w);
        archive.insert_array1(&format!("{prefix}.lstm.b"), &self.cell.b);
        archive.insert_array2(&format!("{prefix}.out.w"), &self.out.w);
        archive.insert_array1(&format!("{prefix}.out.b"), &self.out.b);
        let meta = SeqGenMeta {
            class: self.class.0,
            kind: self.kind,
            vocab: self.vocab.clone(),
            first_step: self.first_step.clone(),
        };
        archive.insert_bytes(
            &format!("{prefix}.meta"),
            serde_json::to_vec(&meta).expect("metadata serializes"),
        );
    }

    pub fn read_archive(archive: &Archive, prefix: &str) -> Result<Self, SeqGenError> {
        let w = archive.array2(&format!("{prefix}.lstm.w"))?;
        let b = archive.array1(&format!("{prefix}.lstm.b"))?;
        let out_w = archive.array2(&format!("{prefix}.out.w"))?;
        let out_b = archive.array1(&format!("{prefix}.out.b"))?;
        let meta: SeqGenMeta = serde_json::from_slice(archive.bytes(&format!("{prefix}.meta"))?)
            .map_err(|e| SeqGenError::BadMetadata(e.to_string()))?;
        let mut vocab = meta.vocab;
        vocab.rebuild_index();
        Ok(SeqGenModel {
            class: ClassId(meta.class),
            kind: meta.kind,
            vocab,
            cell: LstmCell::from_parts(w, b),
            out: Dense { w: out_w, b: out_b },
            first_step: meta.first_step,
        })
    }
}

fn draw_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Guard against rounding; fall back to the last positive-probability token.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("distribution has mass")
}

//! Transformer-encoder flow classifier.
//!
//! Input layer: word-embedding (flow-sentence mode) or a capped one-hot port
//! projection (baseline mode), concatenated with a projection of the three
//! numeric packet features to form the model dimension, plus sinusoidal
//! positional encoding. A stack of post-norm encoder blocks follows, then
//! masked global average pooling over non-pad positions and a dense head
//! ending in softmax.
//!
//! Padded positions are excluded from attention keys and from pooling, so a
//! flow's prediction is independent of how much padding it carries.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use ntc_nn::activation::{relu, relu_backward, tanh2, tanh2_backward};
use ntc_nn::loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_backward};
use ntc_nn::{
    positional_encoding, Adam, AdamConfig, Archive, ArchiveError, Dense, DenseGrads, Dropout,
    Embedding, EmbeddingGrads, LayerNorm, LayerNormCache, LayerNormGrads, MhaCache, MhaGrads,
    MultiHeadAttention,
};

use crate::fs_embedding::EncodedFlow;
use crate::seeds;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("flow encoding does not match the model's input mode")]
    EncodingMismatch,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("batch flows have inconsistent padded lengths")]
    RaggedBatch,
    #[error("archive error: {0}")]
    Archive(#[from] ArchiveError),
    #[error("corrupt model metadata: {0}")]
    BadMetadata(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputMode {
    FsEmbedding,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub blocks: usize,
    pub heads: usize,
    /// Model dimension; must be divisible by `heads` and by 4 (a quarter is
    /// reserved for the numeric-feature projection).
    pub model_dim: usize,
    /// Hidden widths of the pointwise feedforward (input and output are
    /// `model_dim`).
    pub ff_widths: Vec<usize>,
    /// Hidden widths of the dense head; the class layer is appended.
    pub head_widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    pub input_mode: InputMode,
}

impl ClassifierConfig {
    /// Published configuration A: 3 blocks, 4 heads, model dim 128.
    pub fn preset_a(input_mode: InputMode) -> Self {
        ClassifierConfig {
            blocks: 3,
            heads: 4,
            model_dim: 128,
            ff_widths: vec![4, 19],
            head_widths: vec![512, 256],
            epochs: 30,
            batch_size: 256,
            lr: 1e-3,
            dropout: 0.0,
            seed: 0,
            input_mode,
        }
    }

    /// Published configuration B: 3 blocks, 10 heads of size 32.
    pub fn preset_b(input_mode: InputMode) -> Self {
        ClassifierConfig {
            blocks: 3,
            heads: 10,
            model_dim: 320,
            ff_widths: vec![4, 19],
            head_widths: vec![512, 256],
            epochs: 30,
            batch_size: 256,
            lr: 1e-3,
            dropout: 0.0,
            seed: 0,
            input_mode,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(ClassifierError::InvalidConfig(format!(
                "head count {} must divide model dim {}",
                self.heads, self.model_dim
            )));
        }
        if self.model_dim % 4 != 0 {
            return Err(ClassifierError::InvalidConfig(format!(
                "model dim {} must be divisible by 4",
                self.model_dim
            )));
        }
        if self.blocks == 0 {
            return Err(ClassifierError::InvalidConfig("need at least one encoder block".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ClassifierError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ClassifierError::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Dense projection of implicit one-hot port blocks: two (cap+1)-wide port
/// one-hots plus a direction bit, realized by row gathering instead of
/// materializing the sparse input.
#[derive(Debug, Clone)]
struct OneHotProj {
    w: Array2<f64>,
    b: Array1<f64>,
    cap: usize,
}

struct OneHotProjGrads {
    w: Array2<f64>,
    b: Array1<f64>,
}

impl OneHotProj {
    fn new<R: Rng>(rng: &mut R, cap: usize, out: usize) -> Self {
        let width = 2 * (cap + 1) + 1;
        OneHotProj {
            w: ntc_nn::init::xavier_uniform(rng, width, out, width, out),
            b: Array1::zeros(out),
            cap,
        }
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn forward(&self, src: &[usize], dst: &[usize], dir: &[u8]) -> Array2<f64> {
        let out_dim = self.w.ncols();
        let dst_base = self.cap + 1;
        let dir_row = 2 * (self.cap + 1);
        let mut out = Array2::zeros((src.len(), out_dim));
        for i in 0..src.len() {
            let mut row = out.row_mut(i);
            row.assign(&self.b);
            row += &self.w.row(src[i]);
            row += &self.w.row(dst_base + dst[i]);
            if dir[i] == 1 {
                row += &self.w.row(dir_row);
            }
        }
        out
    }

    fn backward(&self, src: &[usize], dst: &[usize], dir: &[u8], gy: &Array2<f64>) -> OneHotProjGrads {
        let dst_base = self.cap + 1;
        let dir_row = 2 * (self.cap + 1);
        let mut w = Array2::zeros(self.w.dim());
        let mut b = Array1::zeros(self.b.len());
        for i in 0..src.len() {
            let g = gy.row(i);
            b += &g;
            let mut r = w.row_mut(src[i]);
            r += &g;
            let mut r = w.row_mut(dst_base + dst[i]);
            r += &g;
            if dir[i] == 1 {
                let mut r = w.row_mut(dir_row);
                r += &g;
            }
        }
        OneHotProjGrads { w, b }
    }
}

#[derive(Debug, Clone)]
enum InputLayer {
    Fs {
        words: Embedding,
        numeric: Dense,
    },
    OneHot {
        ports: OneHotProj,
        numeric: Dense,
    },
}

enum InputGrads {
    Fs(EmbeddingGrads, DenseGrads),
    OneHot(OneHotProjGrads, DenseGrads),
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    mha: MultiHeadAttention,
    ln1: LayerNorm,
    ff: Vec<Dense>,
    ln2: LayerNorm,
    dropout: Dropout,
}

struct BlockGrads {
    mha: MhaGrads,
    ln1: LayerNormGrads,
    ff: Vec<DenseGrads>,
    ln2: LayerNormGrads,
}

struct BlockCache {
    x: Array2<f64>,
    mha: MhaCache,
    attn_mask: Option<Array2<f64>>,
    ff_inputs: Vec<Array2<f64>>,
    ff_pres: Vec<Array2<f64>>,
    ff_mask: Option<Array2<f64>>,
    ln1: LayerNormCache,
    ln2: LayerNormCache,
}

impl EncoderBlock {
    fn new<R: Rng>(rng: &mut R, cfg: &ClassifierConfig) -> Self {
        let d = cfg.model_dim;
        let mut ff = Vec::new();
        let mut prev = d;
        for &w in &cfg.ff_widths {
            ff.push(Dense::new(rng, prev, w));
            prev = w;
        }
        ff.push(Dense::new(rng, prev, d));
        EncoderBlock {
            mha: MultiHeadAttention::new(rng, d, cfg.heads).expect("validated config"),
            ln1: LayerNorm::new(d),
            ff,
            ln2: LayerNorm::new(d),
            dropout: Dropout::new(cfg.dropout),
        }
    }

    fn param_count(&self) -> usize {
        self.mha.param_count()
            + self.ln1.param_count()
            + self.ff.iter().map(Dense::param_count).sum::<usize>()
            + self.ln2.param_count()
    }

    fn forward<R: Rng>(
        &self,
        x: Array2<f64>,
        seq: usize,
        valid: &[usize],
        rng: &mut Option<&mut R>,
    ) -> (Array2<f64>, BlockCache) {
        let (mut attn, mha_cache) = self.mha.forward(&x, seq, valid).expect("shapes fixed");
        let attn_mask = match rng {
            Some(r) if self.dropout.p > 0.0 => {
                let (dropped, mask) = self.dropout.forward(&attn, *r, true);
                attn = dropped;
                mask
            }
            _ => None,
        };
        let r1 = &x + &attn;
        let (n1, ln1_cache) = self.ln1.forward(&r1);

        let mut ff_inputs = Vec::with_capacity(self.ff.len());
        let mut ff_pres = Vec::with_capacity(self.ff.len());
        let mut h = n1.clone();
        let last = self.ff.len() - 1;
        for (i, layer) in self.ff.iter().enumerate() {
            ff_inputs.push(h.clone());
            let pre = layer.forward(&h);
            h = if i < last { relu(&pre) } else { pre.clone() };
            ff_pres.push(pre);
        }
        let ff_mask = match rng {
            Some(r) if self.dropout.p > 0.0 => {
                let (dropped, mask) = self.dropout.forward(&h, *r, true);
                h = dropped;
                mask
            }
            _ => None,
        };
        let r2 = &n1 + &h;
        let (n2, ln2_cache) = self.ln2.forward(&r2);
        (
            n2,
            BlockCache {
                x,
                mha: mha_cache,
                attn_mask,
                ff_inputs,
                ff_pres,
                ff_mask,
                ln1: ln1_cache,
                ln2: ln2_cache,
            },
        )
    }

    fn backward(&self, cache: &BlockCache, grad_out: &Array2<f64>) -> (Array2<f64>, BlockGrads) {
        let (d_r2, ln2_grads) = self.ln2.backward(&cache.ln2, grad_out);
        let mut d_ff_out = d_r2.clone();
        if cache.ff_mask.is_some() {
            d_ff_out = Dropout::backward(cache.ff_mask.as_ref(), &d_ff_out);
        }

        let mut ff_grads: Vec<Option<DenseGrads>> = (0..self.ff.len()).map(|_| None).collect();
        let mut g = d_ff_out;
        for i in (0..self.ff.len()).rev() {
            let (gx, grads) = self.ff[i].backward(&cache.ff_inputs[i], &g);
            ff_grads[i] = Some(grads);
            g = gx;
            if i > 0 {
                g = relu_backward(&cache.ff_pres[i - 1], &g);
            }
        }
        let d_n1 = &d_r2 + &g;

        let (d_r1, ln1_grads) = self.ln1.backward(&cache.ln1, &d_n1);
        let mut d_attn = d_r1.clone();
        if cache.attn_mask.is_some() {
            d_attn = Dropout::backward(cache.attn_mask.as_ref(), &d_attn);
        }
        let (d_x_attn, mha_grads) = self.mha.backward(&cache.x, &cache.mha, &d_attn);
        let dx = &d_r1 + &d_x_attn;
        (
            dx,
            BlockGrads {
                mha: mha_grads,
                ln1: ln1_grads,
                ff: ff_grads.into_iter().map(Option::unwrap).collect(),
                ln2: ln2_grads,
            },
        )
    }
}

/// The assembled classifier.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub cfg: ClassifierConfig,
    pub num_classes: usize,
    input: InputLayer,
    blocks: Vec<EncoderBlock>,
    head: Vec<Dense>,
}

/// Build-time description of the input vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputWidth {
    /// Word vocabulary size for flow-sentence mode.
    Vocab(usize),
    /// Port-table cap for one-hot mode.
    PortCap(usize),
}

/// One per-flow prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
}

struct ForwardCache {
    ids: Option<Vec<usize>>,
    src: Vec<usize>,
    dst: Vec<usize>,
    dir: Vec<u8>,
    numerics: Array2<f64>,
    blocks: Vec<BlockCache>,
    pooled_inputs: Vec<Array2<f64>>,
    pooled_pres: Vec<Array2<f64>>,
    last_block_out: Array2<f64>,
    valid: Vec<usize>,
    seq: usize,
}

struct ModelGrads {
    input: InputGrads,
    blocks: Vec<BlockGrads>,
    head: Vec<DenseGrads>,
}

/// Per-epoch statistics plus model/bookkeeping facts. Wall-clock stays out
/// of machine-readable reports.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    pub param_count: usize,
    pub epochs_run: usize,
    pub wall_clock_secs: f64,
}

impl ClassifierModel {
    /// Builds a model with deterministic seeded initialization.
    pub fn build(
        cfg: &ClassifierConfig,
        input_width: InputWidth,
        num_classes: usize,
    ) -> Result<Self, ClassifierError> {
        cfg.validate()?;
        match (cfg.input_mode, input_width) {
            (InputMode::FsEmbedding, InputWidth::Vocab(_)) => {}
            (InputMode::OneHot, InputWidth::PortCap(_)) => {}
            _ => {
                return Err(ClassifierError::InvalidConfig(
                    "input width kind does not match input mode".into(),
                ))
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_tagged(cfg.seed, "classifier-init", 0));
        let d = cfg.model_dim;
        let d_word = 3 * d / 4;
        let d_num = d / 4;
        let input = match input_width {
            InputWidth::Vocab(v) => InputLayer::Fs {
                words: Embedding::new(&mut rng, v, d_word),
                numeric: Dense::new(&mut rng, 3, d_num),
            },
            InputWidth::PortCap(cap) => InputLayer::OneHot {
                ports: OneHotProj::new(&mut rng, cap, d_word),
                numeric: Dense::new(&mut rng, 3, d_num),
            },
        };
        let blocks = (0..cfg.blocks)
            .map(|_| EncoderBlock::new(&mut rng, cfg))
            .collect();
        let mut head = Vec::new();
        let mut prev = d;
        for &w in &cfg.head_widths {
            head.push(Dense::new(&mut rng, prev, w));
            prev = w;
        }
        // Final layer at reduced gain keeps initial logits near zero, so an
        // untrained model predicts close to uniform.
        head.push(Dense::with_gain(&mut rng, prev, num_classes, 0.1));
        Ok(ClassifierModel {
            cfg: cfg.clone(),
            num_classes,
            input,
            blocks,
            head,
        })
    }

    /// Every parameter value in the fixed visitation order, for
    /// change-detection in tests.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match &self.input {
            InputLayer::Fs { words, numeric } => {
                out.extend(words.table.iter());
                out.extend(numeric.w.iter());
                out.extend(numeric.b.iter());
            }
            InputLayer::OneHot { ports, numeric } => {
                out.extend(ports.w.iter());
                out.extend(ports.b.iter());
                out.extend(numeric.w.iter());
                out.extend(numeric.b.iter());
            }
        }
        for b in &self.blocks {
            for d in [&b.mha.wq, &b.mha.wk, &b.mha.wv, &b.mha.wo] {
                out.extend(d.w.iter());
                out.extend(d.b.iter());
            }
            out.extend(b.ln1.gamma.iter());
            out.extend(b.ln1.beta.iter());
            for f in &b.ff {
                out.extend(f.w.iter());
                out.extend(f.b.iter());
            }
            out.extend(b.ln2.gamma.iter());
            out.extend(b.ln2.beta.iter());
        }
        for h in &self.head {
            out.extend(h.w.iter());
            out.extend(h.b.iter());
        }
        out
    }

    /// Exact parameter count by enumeration over every tensor.
    pub fn param_count(&self) -> usize {
        let input = match &self.input {
            InputLayer::Fs { words, numeric } => words.param_count() + numeric.param_count(),
            InputLayer::OneHot { ports, numeric } => ports.param_count() + numeric.param_count(),
        };
        input
            + self.blocks.iter().map(EncoderBlock::param_count).sum::<usize>()
            + self.head.iter().map(Dense::param_count).sum::<usize>()
    }

    pub fn input_mode(&self) -> InputMode {
        self.cfg.input_mode
    }

    fn assemble(
        &self,
        flows: &[&EncodedFlow],
    ) -> Result<(Option<Vec<usize>>, Vec<usize>, Vec<usize>, Vec<u8>, Array2<f64>, Vec<usize>, usize), ClassifierError>
    {
        let seq = match flows.first() {
            Some(EncodedFlow::Fs { tokens, .. }) => tokens.len(),
            Some(EncodedFlow::OneHot { src_buckets, .. }) => src_buckets.len(),
            None => return Err(ClassifierError::EmptyDataset),
        };
        let n = flows.len() * seq;
        let mut numerics = Array2::zeros((n, 3));
        let mut valid = Vec::with_capacity(flows.len());
        match self.cfg.input_mode {
            InputMode::FsEmbedding => {
                let mut ids = Vec::with_capacity(n);
                for (b, flow) in flows.iter().enumerate() {
                    match flow {
                        EncodedFlow::Fs {
                            tokens,
                            numerics: nums,
                            valid: v,
                        } => {
                            if tokens.len() != seq {
                                return Err(ClassifierError::RaggedBatch);
                            }
                            ids.extend_from_slice(tokens);
                            for (t, row) in nums.iter().enumerate() {
                                for (j, &x) in row.iter().enumerate() {
                                    numerics[[b * seq + t, j]] = x;
                                }
                            }
                            valid.push(*v);
                        }
                        _ => return Err(ClassifierError::EncodingMismatch),
                    }
                }
                Ok((Some(ids), Vec::new(), Vec::new(), Vec::new(), numerics, valid, seq))
            }
            InputMode::OneHot => {
                let mut src = Vec::with_capacity(n);
                let mut dst = Vec::with_capacity(n);
                let mut dir = Vec::with_capacity(n);
                for (b, flow) in flows.iter().enumerate() {
                    match flow {
                        EncodedFlow::OneHot {
                            src_buckets,
                            dst_buckets,
                            directions,
                            numerics: nums,
                            valid: v,
                        } => {
                            if src_buckets.len() != seq {
                                return Err(ClassifierError::RaggedBatch);
                            }
                            src.extend_from_slice(src_buckets);
                            dst.extend_from_slice(dst_buckets);
                            dir.extend_from_slice(directions);
                            for (t, row) in nums.iter().enumerate() {
                                for (j, &x) in row.iter().enumerate() {
                                    numerics[[b * seq + t, j]] = x;
                                }
                            }
                            valid.push(*v);
                        }
                        _ => return Err(ClassifierError::EncodingMismatch),
                    }
                }
                Ok((None, src, dst, dir, numerics, valid, seq))
            }
        }
    }

    fn forward<R: Rng>(
        &self,
        flows: &[&EncodedFlow],
        mut rng: Option<&mut R>,
    ) -> Result<(Array2<f64>, ForwardCache), ClassifierError> {
        let (ids, src, dst, dir, numerics, valid, seq) = self.assemble(flows)?;
        let d = self.cfg.model_dim;
        let d_word = 3 * d / 4;

        let word_part = match (&self.input, &ids) {
            (InputLayer::Fs { words, .. }, Some(ids)) => words.forward(ids),
            (InputLayer::OneHot { ports, .. }, None) => ports.forward(&src, &dst, &dir),
            _ => unreachable!("assemble enforces mode"),
        };
        let num_part = match &self.input {
            InputLayer::Fs { numeric, .. } | InputLayer::OneHot { numeric, .. } => {
                numeric.forward(&numerics)
            }
        };
        let n = word_part.nrows();
        let mut x = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d_word {
                x[[i, j]] = word_part[[i, j]];
            }
            for j in 0..(d - d_word) {
                x[[i, d_word + j]] = num_part[[i, j]];
            }
        }
        let pos = positional_encoding(seq, d);
        for b in 0..flows.len() {
            for t in 0..seq {
                for j in 0..d {
                    x[[b * seq + t, j]] += pos[[t, j]];
                }
            }
        }

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for block in &self.blocks {
            let (out, cache) = block.forward(h, seq, &valid, &mut rng);
            block_caches.push(cache);
            h = out;
        }
        let last_block_out = h;

        // Masked global average pooling over valid positions.
        let mut pooled = Array2::zeros((flows.len(), d));
        for (b, &v) in valid.iter().enumerate() {
            let inv = 1.0 / v as f64;
            for t in 0..v {
                for j in 0..d {
                    pooled[[b, j]] += last_block_out[[b * seq + t, j]] * inv;
                }
            }
        }

        let mut pooled_inputs = Vec::with_capacity(self.head.len());
        let mut pooled_pres = Vec::with_capacity(self.head.len());
        let last = self.head.len() - 1;
        let mut hh = pooled;
        for (i, layer) in self.head.iter().enumerate() {
            pooled_inputs.push(hh.clone());
            let pre = layer.forward(&hh);
            hh = if i < last { tanh2(&pre) } else { pre.clone() };
            pooled_pres.push(pre);
        }
        let logits = hh;

        Ok((
            logits,
            ForwardCache {
                ids,
                src,
                dst,
                dir,
                numerics,
                blocks: block_caches,
                pooled_inputs,
                pooled_pres,
                last_block_out,
                valid,
                seq,
            },
        ))
    }

    fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>) -> ModelGrads {
        let d = self.cfg.model_dim;
        let d_word = 3 * d / 4;
        let seq = cache.seq;

        // Head chain.
        let mut head_grads: Vec<Option<DenseGrads>> = (0..self.head.len()).map(|_| None).collect();
        let mut g = dlogits.clone();
        for i in (0..self.head.len()).rev() {
            let (gx, grads) = self.head[i].backward(&cache.pooled_inputs[i], &g);
            head_grads[i] = Some(grads);
            g = gx;
            if i > 0 {
                g = tanh2_backward(&cache.pooled_pres[i - 1], &g);
            }
        }
        let d_pooled = g;

        // Un-pool into the last block's output rows.
        let mut d_h = Array2::zeros(cache.last_block_out.dim());
        for (b, &v) in cache.valid.iter().enumerate() {
            let inv = 1.0 / v as f64;
            for t in 0..v {
                for j in 0..d {
                    d_h[[b * seq + t, j]] = d_pooled[[b, j]] * inv;
                }
            }
        }

        let mut block_grads: Vec<Option<BlockGrads>> =
            (0..self.blocks.len()).map(|_| None).collect();
        for i in (0..self.blocks.len()).rev() {
            let (dx, grads) = self.blocks[i].backward(&cache.blocks[i], &d_h);
            block_grads[i] = Some(grads);
            d_h = dx;
        }

        // Split the input gradient into word and numeric parts.
        let n = d_h.nrows();
        let mut d_word_part = Array2::zeros((n, d_word));
        let mut d_num_part = Array2::zeros((n, d - d_word));
        for i in 0..n {
            for j in 0..d_word {
                d_word_part[[i, j]] = d_h[[i, j]];
            }
            for j in 0..(d - d_word) {
                d_num_part[[i, j]] = d_h[[i, d_word + j]];
            }
        }

        let input = match &self.input {
            InputLayer::Fs { words, numeric } => {
                let ids = cache.ids.as_ref().expect("fs cache has ids");
                let w_grads = words.backward(ids, &d_word_part);
                let (_, n_grads) = numeric.backward(&cache.numerics, &d_num_part);
                InputGrads::Fs(w_grads, n_grads)
            }
            InputLayer::OneHot { ports, numeric } => {
                let p_grads = ports.backward(&cache.src, &cache.dst, &cache.dir, &d_word_part);
                let (_, n_grads) = numeric.backward(&cache.numerics, &d_num_part);
                InputGrads::OneHot(p_grads, n_grads)
            }
        };

        ModelGrads {
            input,
            blocks: block_grads.into_iter().map(Option::unwrap).collect(),
            head: head_grads.into_iter().map(Option::unwrap).collect(),
        }
    }

    /// All parameter tensors paired with their gradients, in the fixed Adam
    /// visitation order.
    fn apply_grads(&mut self, grads: &ModelGrads, opt: &mut Adam) {
        opt.begin_step();
        let up = |opt: &mut Adam, p: &mut Array2<f64>, g: &Array2<f64>| {
            opt.update(p.as_slice_mut().unwrap(), g.as_slice().unwrap())
                .expect("stable shapes");
        };
        let up1 = |opt: &mut Adam, p: &mut Array1<f64>, g: &Array1<f64>| {
            opt.update(p.as_slice_mut().unwrap(), g.as_slice().unwrap())
                .expect("stable shapes");
        };
        match (&mut self.input, &grads.input) {
            (InputLayer::Fs { words, numeric }, InputGrads::Fs(wg, ng)) => {
                up(opt, &mut words.table, &wg.table);
                up(opt, &mut numeric.w, &ng.w);
                up1(opt, &mut numeric.b, &ng.b);
            }
            (InputLayer::OneHot { ports, numeric }, InputGrads::OneHot(pg, ng)) => {
                up(opt, &mut ports.w, &pg.w);
                up1(opt, &mut ports.b, &pg.b);
                up(opt, &mut numeric.w, &ng.w);
                up1(opt, &mut numeric.b, &ng.b);
            }
            _ => unreachable!("gradients match the input layer"),
        }
        for (block, bg) in self.blocks.iter_mut().zip(&grads.blocks) {
            up(opt, &mut block.mha.wq.w, &bg.mha.wq.w);
            up1(opt, &mut block.mha.wq.b, &bg.mha.wq.b);
            up(opt, &mut block.mha.wk.w, &bg.mha.wk.w);
            up1(opt, &mut block.mha.wk.b, &bg.mha.wk.b);
            up(opt, &mut block.mha.wv.w, &bg.mha.wv.w);
            up1(opt, &mut block.mha.wv.b, &bg.mha.wv.b);
            up(opt, &mut block.mha.wo.w, &bg.mha.wo.w);
            up1(opt, &mut block.mha.wo.b, &bg.mha.wo.b);
            up1(opt, &mut block.ln1.gamma, &bg.ln1.gamma);
            up1(opt, &mut block.ln1.beta, &bg.ln1.beta);
            for (layer, lg) in block.ff.iter_mut().zip(&bg.ff) {
                up(opt, &mut layer.w, &lg.w);
                up1(opt, &mut layer.b, &lg.b);
            }
            up1(opt, &mut block.ln2.gamma, &bg.ln2.gamma);
            up1(opt, &mut block.ln2.beta, &bg.ln2.beta);
        }
        for (layer, lg) in self.head.iter_mut().zip(&grads.head) {
            up(opt, &mut layer.w, &lg.w);
            up1(opt, &mut layer.b, &lg.b);
        }
    }

    /// Predicts class distributions; flows are processed in fixed-size
    /// batches, output order matches input order.
    pub fn predict(&self, flows: &[EncodedFlow]) -> Result<Vec<Prediction>, ClassifierError> {
        let mut out = Vec::with_capacity(flows.len());
        for chunk in flows.chunks(self.cfg.batch_size.max(1)) {
            let refs: Vec<&EncodedFlow> = chunk.iter().collect();
            let (logits, _) = self.forward::<ChaCha8Rng>(&refs, None)?;
            let probs = softmax(&logits);
            for row in probs.rows() {
                let mut best = 0;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                out.push(Prediction {
                    probs: row.to_vec(),
                    label: best,
                });
            }
        }
        Ok(out)
    }

    /// Mean cross-entropy of a labeled set without updating parameters.
    pub fn mean_loss(&self, flows: &[EncodedFlow], labels: &[usize]) -> Result<f64, ClassifierError> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (chunk, lchunk) in flows
            .chunks(self.cfg.batch_size.max(1))
            .zip(labels.chunks(self.cfg.batch_size.max(1)))
        {
            let refs: Vec<&EncodedFlow> = chunk.iter().collect();
            let (logits, _) = self.forward::<ChaCha8Rng>(&refs, None)?;
            let (loss, _) = softmax_cross_entropy(&logits, lchunk);
            total += loss;
            count += lchunk.len();
        }
        Ok(total / count.max(1) as f64)
    }

    /// Stores every tensor plus config metadata under `prefix`.
    pub fn write_archive(&self, archive: &mut Archive, prefix: &str) {
        let meta = ModelMeta {
            cfg: self.cfg.clone(),
            num_classes: self.num_classes,
            input_width: match &self.input {
                InputLayer::Fs { words, .. } => ("vocab".to_string(), words.vocab_size()),
                InputLayer::OneHot { ports, .. } => ("port_cap".to_string(), ports.cap),
            },
        };
        archive.insert_bytes(
            &format!("{prefix}.meta"),
            serde_json::to_vec(&meta).expect("metadata serializes"),
        );
        match &self.input {
            InputLayer::Fs { words, numeric } => {
                archive.insert_array2(&format!("{prefix}.input.words"), &words.table);
                archive.insert_array2(&format!("{prefix}.input.numeric.w"), &numeric.w);
                archive.insert_array1(&format!("{prefix}.input.numeric.b"), &numeric.b);
            }
            InputLayer::OneHot { ports, numeric } => {
                archive.insert_array2(&format!("{prefix}.input.ports.w"), &ports.w);
                archive.insert_array1(&format!("{prefix}.input.ports.b"), &ports.b);
                archive.insert_array2(&format!("{prefix}.input.numeric.w"), &numeric.w);
                archive.insert_array1(&format!("{prefix}.input.numeric.b"), &numeric.b);
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("{prefix}.block{i}");
            archive.insert_array2(&format!("{p}.wq.w"), &b.mha.wq.w);
            archive.insert_array1(&format!("{p}.wq.b"), &b.mha.wq.b);
            archive.insert_array2(&format!("{p}.wk.w"), &b.mha.wk.w);
            archive.insert_array1(&format!("{p}.wk.b"), &b.mha.wk.b);
            archive.insert_array2(&format!("{p}.wv.w"), &b.mha.wv.w);
            archive.insert_array1(&format!("{p}.wv.b"), &b.mha.wv.b);
            archive.insert_array2(&format!("{p}.wo.w"), &b.mha.wo.w);
            archive.insert_array1(&format!("{p}.wo.b"), &b.mha.wo.b);
            archive.insert_array1(&format!("{p}.ln1.gamma"), &b.ln1.gamma);
            archive.insert_array1(&format!("{p}.ln1.beta"), &b.ln1.beta);
            for (j, f) in b.ff.iter().enumerate() {
                archive.insert_array2(&format!("{p}.ff{j}.w"), &f.w);
                archive.insert_array1(&format!("{p}.ff{j}.b"), &f.b);
            }
            archive.insert_array1(&format!("{p}.ln2.gamma"), &b.ln2.gamma);
            archive.insert_array1(&format!("{p}.ln2.beta"), &b.ln2.beta);
        }
        for (i, h) in self.head.iter().enumerate() {
            archive.insert_array2(&format!("{prefix}.head{i}.w"), &h.w);
            archive.insert_array1(&format!("{prefix}.head{i}.b"), &h.b);
        }
    }

    pub fn read_archive(archive: &Archive, prefix: &str) -> Result<Self, ClassifierError> {
        let meta: ModelMeta = serde_json::from_slice(archive.bytes(&format!("{prefix}.meta"))?)
            .map_err(|e| ClassifierError::BadMetadata(e.to_string()))?;
        let width = match meta.input_width.0.as_str() {
            "vocab" => InputWidth::Vocab(meta.input_width.1),
            "port_cap" => InputWidth::PortCap(meta.input_width.1),
            other => {
                return Err(ClassifierError::BadMetadata(format!(
                    "unknown input width kind {other}"
                )))
            }
        };
        let mut model = ClassifierModel::build(&meta.cfg, width, meta.num_classes)?;
        match &mut model.input {
            InputLayer::Fs { words, numeric } => {
                words.table = archive.array2(&format!("{prefix}.input.words"))?;
                numeric.w = archive.array2(&format!("{prefix}.input.numeric.w"))?;
                numeric.b = archive.array1(&format!("{prefix}.input.numeric.b"))?;
            }
            InputLayer::OneHot { ports, numeric } => {
                ports.w = archive.array2(&format!("{prefix}.input.ports.w"))?;
                ports.b = archive.array1(&format!("{prefix}.input.ports.b"))?;
                numeric.w = archive.array2(&format!("{prefix}.input.numeric.w"))?;
                numeric.b = archive.array1(&format!("{prefix}.input.numeric.b"))?;
            }
        }
        for (i, b) in model.blocks.iter_mut().enumerate() {
            let p = format!("{prefix}.block{i}");
            b.mha.wq.w = archive.array2(&format!("{p}.wq.w"))?;
            b.mha.wq.b = archive.array1(&format!("{p}.wq.b"))?;
            b.mha.wk.w = archive.array2(&format!("{p}.wk.w"))?;
            b.mha.wk.b = archive.array1(&format!("{p}.wk.b"))?;
            b.mha.wv.w = archive.array2(&format!("{p}.wv.w"))?;
            b.mha.wv.b = archive.array1(&format!("{p}.wv.b"))?;
            b.mha.wo.w = archive.array2(&format!("{p}.wo.w"))?;
            b.mha.wo.b = archive.array1(&format!("{p}.wo.b"))?;
            b.ln1.gamma = archive.array1(&format!("{p}.ln1.gamma"))?;
            b.ln1.beta = archive.array1(&format!("{p}.ln1.beta"))?;
            for (j, f) in b.ff.iter_mut().enumerate() {
                f.w = archive.array2(&format!("{p}.ff{j}.w"))?;
                f.b = archive.array1(&format!("{p}.ff{j}.b"))?;
            }
            b.ln2.gamma = archive.array1(&format!("{p}.ln2.gamma"))?;
            b.ln2.beta = archive.array1(&format!("{p}.ln2.beta"))?;
        }
        for (i, h) in model.head.iter_mut().enumerate() {
            h.w = archive.array2(&format!("{prefix}.head{i}.w"))?;
            h.b = archive.array1(&format!("{prefix}.head{i}.b"))?;
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    cfg: ClassifierConfig,
    num_classes: usize,
    input_width: (String, usize),
}

/// Trains with Adam on shuffled mini-batches. Per-epoch loss is the mean
/// cross-entropy over the epoch's batches; per-epoch accuracy is measured on
/// the same forward passes.
pub fn train(
    model: &mut ClassifierModel,
    flows: &[EncodedFlow],
    labels: &[usize],
) -> Result<TrainReport, ClassifierError> {
    if flows.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    assert_eq!(flows.len(), labels.len());
    let cfg = model.cfg.clone();
    let start = Instant::now();
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..flows.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut epoch_accuracy = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seeds::derive_tagged(
            cfg.seed,
            "classifier-shuffle",
            epoch as u64,
        ));
        order.shuffle(&mut shuffle_rng);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seeds::derive_tagged(
            cfg.seed,
            "classifier-dropout",
            epoch as u64,
        ));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&EncodedFlow> = batch.iter().map(|&i| &flows[i]).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = if cfg.dropout > 0.0 {
                model.forward(&refs, Some(&mut dropout_rng))?
            } else {
                model.forward::<ChaCha8Rng>(&refs, None)?
            };
            let (loss, probs) = softmax_cross_entropy(&logits, &targets);
            loss_sum += loss;
            for (row, &t) in logits.rows().into_iter().zip(targets.iter()) {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                if best == t {
                    correct += 1;
                }
            }
            let dlogits =
                softmax_cross_entropy_backward(&probs, &targets, 1.0 / targets.len() as f64);
            let grads = model.backward(&cache, &dlogits);
            model.apply_grads(&grads, &mut opt);
        }
        epoch_loss.push(loss_sum / flows.len() as f64);
        epoch_accuracy.push(correct as f64 / flows.len() as f64);
    }

    Ok(TrainReport {
        epoch_loss,
        epoch_accuracy,
        param_count: model.param_count(),
        epochs_run: cfg.epochs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Closed-form parameter count for a configuration, cross-checked in tests
/// against enumeration over a built model.
pub fn analytic_param_count(
    cfg: &ClassifierConfig,
    input_width: InputWidth,
    num_classes: usize,
) -> usize {
    let d = cfg.model_dim;
    let d_word = 3 * d / 4;
    let d_num = d / 4;
    let input = match input_width {
        InputWidth::Vocab(v) => v * d_word,
        InputWidth::PortCap(cap) => (2 * (cap + 1) + 1) * d_word + d_word,
    } + (3 * d_num + d_num);
    let mut per_block = 4 * (d * d + d) + 2 * (2 * d);
    let mut prev = d;
    for &w in &cfg.ff_widths {
        per_block += prev * w + w;
        prev = w;
    }
    per_block += prev * d + d;
    let mut head = 0;
    let mut prev = d;
    for &w in &cfg.head_widths {
        head += prev * w + w;
        prev = w;
    }
    head += prev * num_classes + num_classes;
    input + cfg.blocks * per_block + head
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(mode: InputMode) -> ClassifierConfig {
        ClassifierConfig {
            blocks: 2,
            heads: 2,
            model_dim: 16,
            ff_widths: vec![8],
            head_widths: vec![16, 8],
            epochs: 1,
            batch_size: 4,
            lr: 1e-3,
            dropout: 0.0,
            seed: 3,
            input_mode: mode,
        }
    }

    #[test]
    fn preset_a_builds() {
        let cfg = ClassifierConfig::preset_a(InputMode::FsEmbedding);
        assert_eq!((cfg.blocks, cfg.heads, cfg.model_dim), (3, 4, 128));
        assert!(ClassifierModel::build(&cfg, InputWidth::Vocab(100), 19).is_ok());
    }

    #[test]
    fn preset_b_builds() {
        let cfg = ClassifierConfig::preset_b(InputMode::FsEmbedding);
        assert_eq!((cfg.heads, cfg.model_dim / cfg.heads), (10, 32));
        assert!(ClassifierModel::build(&cfg, InputWidth::Vocab(100), 19).is_ok());
    }

    #[test]
    fn indivisible_heads_are_rejected() {
        let mut cfg = ClassifierConfig::preset_a(InputMode::FsEmbedding);
        cfg.heads = 5;
        assert!(matches!(
            ClassifierModel::build(&cfg, InputWidth::Vocab(10), 19),
            Err(ClassifierError::InvalidConfig(_))
        ));
    }

    #[test]
    fn param_count_matches_analytic_formula() {
        for (cfg, width, k) in [
            (small_cfg(InputMode::FsEmbedding), InputWidth::Vocab(37), 5),
            (small_cfg(InputMode::OneHot), InputWidth::PortCap(12), 5),
            (
                ClassifierConfig::preset_a(InputMode::FsEmbedding),
                InputWidth::Vocab(802),
                19,
            ),
        ] {
            let model = ClassifierModel::build(&cfg, width, k).unwrap();
            assert_eq!(model.param_count(), analytic_param_count(&cfg, width, k));
        }
    }

    #[test]
    fn fs_mode_uses_fewer_parameters_than_onehot() {
        // Default widths: vocabulary capped at 802 words vs a 1024-port
        // one-hot table.
        let cfg = ClassifierConfig::preset_a(InputMode::FsEmbedding);
        let fs = analytic_param_count(&cfg, InputWidth::Vocab(802), 19);
        let onehot = analytic_param_count(
            &ClassifierConfig::preset_a(InputMode::OneHot),
            InputWidth::PortCap(1024),
            19,
        );
        assert!(fs < onehot, "fs {fs} vs onehot {onehot}");
    }
}

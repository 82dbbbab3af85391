//! Minimal neural network substrate with explicit reverse-mode backward
//! passes for a fixed layer zoo: dense, embedding, LSTM cell, multi-head
//! self-attention, layer norm, softmax/cross-entropy, dropout, and Adam.
//!
//! There is no general autodiff graph; each layer exposes `forward` returning
//! whatever cache its `backward` needs, and models compose them explicitly.
//! All math is f64 and all randomness comes from caller-provided RNGs, so a
//! single run-level seed fixes every result.

pub mod activation;
pub mod adam;
pub mod archive;
pub mod attention;
pub mod dense;
pub mod dropout;
pub mod embedding;
pub mod error;
pub mod init;
pub mod layernorm;
pub mod loss;
pub mod lstm;

pub use adam::{Adam, AdamConfig};
pub use archive::{Archive, ArchiveError, Entry};
pub use attention::{positional_encoding, softmax_rows, MhaCache, MhaGrads, MultiHeadAttention};
pub use dense::{Dense, DenseGrads};
pub use dropout::Dropout;
pub use embedding::{Embedding, EmbeddingGrads};
pub use error::NnError;
pub use layernorm::{LayerNorm, LayerNormCache, LayerNormGrads};
pub use lstm::{LstmCell, LstmGrads, LstmState, LstmStepCache};

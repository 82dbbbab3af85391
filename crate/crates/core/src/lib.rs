//! Balancing imbalanced network-flow datasets and classifying them.
//!
//! The pipeline: load or synthesize labeled flow records, rebalance minority
//! classes by generating new flows (per-class LSTMs for the sequential
//! direction/window tracks, Gaussian KDE for the numerical features), encode
//! flows as word sequences with the flow-sentence embedding scheme, train a
//! transformer-encoder classifier, and evaluate with per-class metrics.

pub mod augment;
pub mod classifier;
pub mod eval;
pub mod flow;
pub mod fs_embedding;
pub mod ingest;
pub mod kde;
pub mod report;
pub mod seeds;
pub mod seqgen;
pub mod synth;

pub use flow::{ClassId, ClassLabel, Direction, FlowRecord, Origin, PacketFeatures};
pub use ingest::{Dataset, FileFormat};

//! Desk-scale interleaved audio-text dense retrieval.
//!
//! `braid-core` implements the full pipeline for retrieval over sequences
//! whose text and audio segments alternate: a validated data model with
//! canonical serialization, a deterministic synthetic benchmark generator,
//! a per-frame selector that prunes uninformative audio, a toy bi-encoder
//! with hand-derived gradients, InfoNCE training in two stages, rank-based
//! hard-negative mining, an exact embedding index, and an evaluation
//! harness (Recall@k, nDCG@k, perturbation/ablation/latency studies).
//!
//! Everything is deterministic under a fixed seed: identical configs
//! produce byte-identical datasets, checkpoints, and run files.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod mining;
pub mod pipeline;
pub mod retrieval;
pub mod seeded;
pub mod selector;
pub mod synth;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    AudioSegment, Benchmark, Corpus, InterleavedSequence, Qrels, RankedList, Segment,
    SegmentKind, SpanAnnotation, FRAME_MS,
};

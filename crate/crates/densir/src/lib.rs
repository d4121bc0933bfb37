//! Dense passage retrieval at desk scale.
//!
//! The crate trains a bag-of-tokens dual encoder for exact inner-product
//! retrieval, then improves it in a staged pipeline: a cross-encoder scorer
//! is trained on retrieved negatives, hard negatives for the dual encoder are
//! mined from the index and denoised by the cross-encoder, and unlabeled
//! questions are pseudo-labeled to augment the training set. Everything is
//! seeded and deterministic: two runs with the same configuration produce
//! byte-identical checkpoints, indexes and reports.
//!
//! Modules mirror the stages:
//!
//! * [`corpus`] — tokenization, collection/question/label types, TSV loaders
//!   and writers, and a synthetic corpus generator with a hidden truth table;
//! * [`encoder`] — the dual (two-tower) encoder and the cross-encoder pair
//!   scorer, forward/backward passes, and checkpoint files;
//! * [`training`] — softmax contrastive loss over in-batch or cross-batch
//!   negatives, binary cross-entropy for the scorer, Adam, the warmup/decay
//!   schedule, and the two training loops;
//! * [`index`] — exact inner-product flat index: build, search, binary file
//!   format, and ranked run files;
//! * [`mining`] — denoised hard-negative mining, the rank-bucket denoise
//!   report, pseudo-labeling, and retrieval-based negative pools;
//! * [`eval`] — MRR@k / Recall@k over run files and report files;
//! * [`pipeline`] — the four-step orchestration with manifests, resume, and
//!   the ablation harness;
//! * [`cli`] — the `densir` binary's argument parsing and subcommands.
//!
//! With the default `parallel` feature, batch-level work runs on rayon;
//! the sequential fallback (`--no-default-features`) produces bit-identical
//! output because all reductions happen in a fixed order (see [`exec`]).

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod index;
pub mod mining;
pub mod pipeline;
pub mod seeding;
pub mod training;

pub use error::{Error, Result};

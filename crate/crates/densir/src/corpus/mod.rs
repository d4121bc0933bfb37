//! Corpus types: passages, questions, relevance labels, and tokenization.
//!
//! A [`Collection`] owns the passages plus the [`TokenizerConfig`] they were
//! tokenized with; anything derived from it (checkpoints, indexes) must use
//! the same configuration, which the encoder and index layers verify.
//!
//! External text formats are line-oriented TSV (see [`io`]); the synthetic
//! corpus generator lives in [`synthetic`].

pub mod io;
pub mod synthetic;
pub mod tokenize;

use std::collections::{BTreeSet, HashMap};

use crate::{Error, Result};

/// Tokenizer settings shared by every artifact derived from a collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerConfig {
    /// Size of the hashed vocabulary; token ids are in `0..vocab_size`.
    pub vocab_size: u32,
    /// Maximum token count kept for a question.
    pub max_question_len: usize,
    /// Maximum token count kept for a passage.
    pub max_passage_len: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            vocab_size: 4096,
            max_question_len: 32,
            max_passage_len: 128,
        }
    }
}

impl TokenizerConfig {
    pub fn tokenize_question(&self, text: &str) -> Vec<u32> {
        tokenize::tokenize(text, self.max_question_len, self.vocab_size)
    }

    pub fn tokenize_passage(&self, text: &str) -> Vec<u32> {
        tokenize::tokenize(text, self.max_passage_len, self.vocab_size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: u64,
    pub text: String,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub id: u64,
    pub text: String,
    pub tokens: Vec<u32>,
}

/// Relevance labels for one question: the set of passage ids judged positive.
///
/// The same shape serves both the *labeled* qrels (what training sees) and
/// the *hidden truth table* of a synthetic corpus (a superset of the labels,
/// used only for evaluation and never fed to training code).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QRel {
    pub question_id: u64,
    pub positive_ids: BTreeSet<u64>,
}

/// Passages plus their tokenizer settings, with id lookup.
///
/// Invariants: passages are sorted ascending by id and ids are unique;
/// every passage has at least one token.
#[derive(Debug, Clone)]
pub struct Collection {
    passages: Vec<Passage>,
    tokenizer: TokenizerConfig,
    by_id: HashMap<u64, usize>,
}

impl Collection {
    /// Builds a collection, sorting by id. Fails on duplicate ids or a
    /// passage with no tokens.
    pub fn new(mut passages: Vec<Passage>, tokenizer: TokenizerConfig) -> Result<Self> {
        passages.sort_by_key(|p| p.id);
        for w in passages.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::invalid(format!("duplicate passage id {}", w[0].id)));
            }
        }
        for p in &passages {
            if p.tokens.is_empty() {
                return Err(Error::invalid(format!(
                    "passage {} has no tokens after tokenization",
                    p.id
                )));
            }
        }
        let by_id = passages
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id, i))
            .collect();
        Ok(Collection {
            passages,
            tokenizer,
            by_id,
        })
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Passage> {
        self.by_id.get(&id).map(|&i| &self.passages[i])
    }

    pub fn contains(&self, id: u64) -> bool {
        self.by_id.contains_key(&id)
    }

    /// Position of `id` in the sorted passage list.
    pub fn position(&self, id: u64) -> Option<usize> {
        self.by_id.get(&id).copied()
    }
}

/// Question id → positive passage ids, for O(1) label lookups.
pub type LabelMap = HashMap<u64, BTreeSet<u64>>;

pub fn label_map(qrels: &[QRel]) -> LabelMap {
    qrels
        .iter()
        .map(|q| (q.question_id, q.positive_ids.clone()))
        .collect()
}

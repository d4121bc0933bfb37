//! Synthetic retrieval corpus generator.
//!
//! The generator builds a corpus whose difficulty mimics a real passage
//! collection with incomplete labels:
//!
//! * The vocabulary is split into disjoint per-topic blocks. Passage tokens
//!   come mostly from the owning topic's block, with a small uniform noise
//!   rate, so topics are separable but overlapping.
//! * Passages arrive in *near-duplicate clusters*: a cluster has one base
//!   passage and up to [`MAX_CLUSTER_SIZE`]` - 1` variants, each a copy of
//!   the base with a fraction of positions resampled. The
//!   `unlabeled_positive_rate` (ρ) is the probability that each potential
//!   variant slot materializes — at ρ = 0 every cluster is a single passage,
//!   at ρ = 1 almost every cluster is full.
//! * Each cluster writes from its own *pool* of [`CLUSTER_POOL`] tokens —
//!   the vocabulary of the underlying document the cluster paraphrases. A
//!   topic's block is shuffled and partitioned into pools, so clusters of
//!   one topic stay lexically distinct (up to the uniform noise) and a few
//!   pool tokens identify a cluster among its two hundred topic-mates.
//!   Pools are recycled round-robin when a topic has more clusters than
//!   partitions, which only happens at small ρ.
//! * Every question is written from one *source* member of one cluster: its
//!   tokens are drawn from that passage (plus uniform noise). All members of
//!   the source cluster answer the question equally well. Labeled questions
//!   come in consecutive pairs about the same cluster — two independently
//!   worded phrasings, the way popular documents attract several distinct
//!   queries in a real log — so an evenly-spaced holdout split always leaves
//!   a sibling phrasing in training.
//!
//! The labels exported for training mark only the source passage as
//! positive; the full cluster is recorded in a separate **hidden truth
//! table**. The gap between the two is what makes retrieved negatives
//! unreliable: with ρ > 0 a top-ranked "negative" is often an unlabeled
//! duplicate of the positive. Training code must never read the truth table —
//! it exists to evaluate retrieval quality and to measure how much
//! false-negative contamination a mining policy lets through.
//!
//! Token ids and surface text are kept coherent: each token id is assigned a
//! unique term that hashes back to exactly that id, so writing the corpus to
//! TSV and re-tokenizing it reproduces the generated token sequences
//! byte-for-byte. Generation is a pure function of the spec: the same spec
//! yields identical corpora, call after call.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tokenize::fnv1a64;
use super::{Collection, Passage, QRel, Question, TokenizerConfig};
use crate::seeding;
use crate::{Error, Result};

/// Largest near-duplicate cluster (base passage plus 7 potential variants).
pub const MAX_CLUSTER_SIZE: usize = 8;
/// Distinct topic-block tokens in one cluster's writing pool (capped at the
/// block size for tiny vocabularies).
pub const CLUSTER_POOL: usize = 6;
/// Probability that a passage token is uniform noise instead of topical.
pub const PASSAGE_NOISE: f64 = 0.10;
/// Per-position probability that a cluster variant resamples the base token.
pub const MEMBER_MUTATION: f64 = 0.25;
/// Probability that a question token is uniform noise instead of drawn from
/// the source passage.
pub const QUESTION_NOISE: f64 = 0.10;
/// Smallest per-topic vocabulary block the generator accepts.
pub const MIN_TOPIC_BLOCK: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_topics: usize,
    pub passages_per_topic: usize,
    /// Labeled questions generated per topic.
    pub questions_per_topic: usize,
    /// Unlabeled questions generated across all topics (round-robin).
    pub unlabeled_questions: usize,
    pub tokens_per_passage: usize,
    /// ρ — see the module docs. 0 disables near-duplicates entirely.
    pub unlabeled_positive_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            num_topics: 10,
            passages_per_topic: 200,
            questions_per_topic: 50,
            unlabeled_questions: 500,
            tokens_per_passage: 24,
            unlabeled_positive_rate: 0.5,
        }
    }
}

/// A generated corpus. `truth` covers labeled questions first (in id order),
/// then unlabeled ones.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub collection: Collection,
    pub labeled_questions: Vec<Question>,
    pub qrels: Vec<QRel>,
    pub unlabeled_questions: Vec<Question>,
    /// Hidden truth table: full positive set per question (labeled and
    /// unlabeled). Evaluation-only; keep away from training code.
    pub truth: Vec<QRel>,
}

/// Assigns every token id in `0..vocab_size` a unique term that FNV-1a-hashes
/// back to it, by scanning the infinite candidate list `w0, w1, w2, …` and
/// keeping the first hit per id. Deterministic, so generated text re-tokenizes
/// to exactly the generated token ids.
pub fn term_table(vocab_size: u32) -> Vec<String> {
    assert!(vocab_size >= 2, "vocab_size must be at least 2");
    let v = vocab_size as usize;
    let mut table: Vec<Option<String>> = vec![None; v];
    let mut filled = 0usize;
    let mut n: u64 = 0;
    // Coupon-collector bound with an absurd safety margin; hitting it would
    // mean the hash is catastrophically non-uniform on this family.
    let cap = 1000 * (v as u64) + 10_000;
    while filled < v {
        assert!(n < cap, "term_table: could not reach every token id");
        let term = format!("w{n}");
        let slot = (fnv1a64(term.as_bytes()) % u64::from(vocab_size)) as usize;
        if table[slot].is_none() {
            table[slot] = Some(term);
            filled += 1;
        }
        n += 1;
    }
    table.into_iter().map(|t| t.unwrap()).collect()
}

fn draw_passage_token(rng: &mut ChaCha8Rng, pool: &[u32], vocab: u32) -> u32 {
    if rng.gen::<f64>() < PASSAGE_NOISE {
        rng.gen_range(0..vocab)
    } else {
        pool[rng.gen_range(0..pool.len())]
    }
}

/// Shuffles a topic's block and cuts it into disjoint cluster pools. Any
/// remainder shorter than a full pool is dropped; those tokens still occur
/// as uniform noise.
fn partition_block_into_pools(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> Vec<Vec<u32>> {
    let block = (hi - lo) as usize;
    let size = CLUSTER_POOL.min(block);
    let order = rand::seq::index::sample(rng, block, block).into_vec();
    order
        .chunks_exact(size)
        .map(|chunk| chunk.iter().map(|&i| lo + i as u32).collect())
        .collect()
}

fn render(tokens: &[u32], terms: &[String]) -> String {
    let words: Vec<&str> = tokens.iter().map(|&t| terms[t as usize].as_str()).collect();
    words.join(" ")
}

fn validate(spec: &SyntheticSpec, tokenizer: &TokenizerConfig) -> Result<()> {
    if spec.num_topics == 0 {
        return Err(Error::invalid("num_topics must be at least 1"));
    }
    if spec.passages_per_topic == 0 {
        return Err(Error::invalid("passages_per_topic must be at least 1"));
    }
    if spec.questions_per_topic == 0 {
        return Err(Error::invalid("questions_per_topic must be at least 1"));
    }
    if spec.tokens_per_passage < 4 || spec.tokens_per_passage > tokenizer.max_passage_len {
        return Err(Error::invalid(format!(
            "tokens_per_passage must be in 4..={}, got {}",
            tokenizer.max_passage_len, spec.tokens_per_passage
        )));
    }
    let rho = spec.unlabeled_positive_rate;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!(
            "unlabeled_positive_rate must be in [0, 1], got {rho}"
        )));
    }
    let block = tokenizer.vocab_size / spec.num_topics as u32;
    if block < MIN_TOPIC_BLOCK {
        return Err(Error::invalid(format!(
            "vocab_size {} is too small for {} topics (needs at least {} per topic)",
            tokenizer.vocab_size,
            spec.num_topics,
            MIN_TOPIC_BLOCK
        )));
    }
    Ok(())
}

/// Generates a corpus. Pure in `(spec, tokenizer)`.
pub fn generate(spec: &SyntheticSpec, tokenizer: TokenizerConfig) -> Result<SyntheticData> {
    validate(spec, &tokenizer)?;
    let vocab = tokenizer.vocab_size;
    let block = vocab / spec.num_topics as u32;
    let terms = term_table(vocab);
    let mut rng = seeding::rng(spec.seed);

    // Passages, cluster by cluster. Ids are assigned in generation order, so
    // a cluster occupies a contiguous id range.
    let mut passages: Vec<Passage> = Vec::with_capacity(spec.num_topics * spec.passages_per_topic);
    let mut clusters_by_topic: Vec<Vec<Vec<u64>>> = Vec::with_capacity(spec.num_topics);
    for topic in 0..spec.num_topics {
        let lo = topic as u32 * block;
        let hi = lo + block;
        let pools = partition_block_into_pools(&mut rng, lo, hi);
        let mut clusters = Vec::new();
        let mut remaining = spec.passages_per_topic;
        while remaining > 0 {
            let mut size = 1;
            for _ in 1..MAX_CLUSTER_SIZE {
                if rng.gen::<f64>() < spec.unlabeled_positive_rate {
                    size += 1;
                }
            }
            size = size.min(remaining);

            let pool = &pools[clusters.len() % pools.len()];
            let base: Vec<u32> = (0..spec.tokens_per_passage)
                .map(|_| draw_passage_token(&mut rng, pool, vocab))
                .collect();
            let mut member_ids = Vec::with_capacity(size);
            for member in 0..size {
                let tokens = if member == 0 {
                    base.clone()
                } else {
                    base.iter()
                        .map(|&tok| {
                            if rng.gen::<f64>() < MEMBER_MUTATION {
                                draw_passage_token(&mut rng, pool, vocab)
                            } else {
                                tok
                            }
                        })
                        .collect()
                };
                let id = passages.len() as u64;
                passages.push(Passage {
                    id,
                    text: render(&tokens, &terms),
                    tokens,
                });
                member_ids.push(id);
            }
            clusters.push(member_ids);
            remaining -= size;
        }
        clusters_by_topic.push(clusters);
    }

    let question_len = (spec.tokens_per_passage * 2 / 3).clamp(4, tokenizer.max_question_len);
    let draw_question = |rng: &mut ChaCha8Rng, source: &[u32]| -> Vec<u32> {
        (0..question_len)
            .map(|_| {
                if rng.gen::<f64>() < QUESTION_NOISE {
                    rng.gen_range(0..vocab)
                } else {
                    source[rng.gen_range(0..source.len())]
                }
            })
            .collect()
    };

    // Labeled questions: pairs of independent phrasings per cluster, clusters
    // within a topic visited round-robin; the labeled positive is the sampled
    // source member, the hidden truth is the whole cluster.
    let mut labeled_questions = Vec::new();
    let mut qrels = Vec::new();
    let mut truth = Vec::new();
    let mut next_qid: u64 = 0;
    for topic in 0..spec.num_topics {
        let clusters = &clusters_by_topic[topic];
        for j in 0..spec.questions_per_topic {
            let cluster = &clusters[(j / 2) % clusters.len()];
            let source_pid = cluster[rng.gen_range(0..cluster.len())];
            let source_tokens = &passages[source_pid as usize].tokens;
            let tokens = draw_question(&mut rng, source_tokens);
            labeled_questions.push(Question {
                id: next_qid,
                text: render(&tokens, &terms),
                tokens,
            });
            qrels.push(QRel {
                question_id: next_qid,
                positive_ids: BTreeSet::from([source_pid]),
            });
            truth.push(QRel {
                question_id: next_qid,
                positive_ids: cluster.iter().copied().collect(),
            });
            next_qid += 1;
        }
    }

    // Unlabeled questions: same recipe, topics and clusters visited
    // round-robin, no exported labels — but their truth is recorded for
    // evaluation.
    let mut unlabeled_questions = Vec::new();
    for u in 0..spec.unlabeled_questions {
        let topic = u % spec.num_topics;
        let clusters = &clusters_by_topic[topic];
        let cluster = &clusters[(u / spec.num_topics) % clusters.len()];
        let source_pid = cluster[rng.gen_range(0..cluster.len())];
        let source_tokens = &passages[source_pid as usize].tokens;
        let tokens = draw_question(&mut rng, source_tokens);
        unlabeled_questions.push(Question {
            id: next_qid,
            text: render(&tokens, &terms),
            tokens,
        });
        truth.push(QRel {
            question_id: next_qid,
            positive_ids: cluster.iter().copied().collect(),
        });
        next_qid += 1;
    }

    Ok(SyntheticData {
        collection: Collection::new(passages, tokenizer)?,
        labeled_questions,
        qrels,
        unlabeled_questions,
        truth,
    })
}

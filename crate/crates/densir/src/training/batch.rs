//! Contrastive batch loss with in-batch or cross-batch negatives over
//! simulated data-parallel workers.
//!
//! A batch is `workers[a][i]`: worker `a` holds `B` examples, each a question
//! with one positive passage and optional mined hard negatives. Every
//! worker's passages are encoded once and "all-gathered" — here a
//! deterministic rank-ordered concatenation (see [`gather_passages`]) — and
//! each question treats as candidates:
//!
//! * **in-batch**: the passages contributed by its own worker;
//! * **cross-batch**: the passages of *all* workers, so with `A` workers of
//!   `B` single-positive examples a question sees `A·B − 1` negatives
//!   instead of `B − 1`, at no extra encoding cost.
//!
//! From the candidate pool a question's denominator excludes its own labeled
//! positives wherever they appear (another question may share the same
//! positive), keeps each distinct passage once, and — switchable — includes
//! other questions' hard negatives. The loss is the mean softmax NLL of the
//! positive against the surviving negatives.
//!
//! Determinism: candidates are scored in a fixed global order, per-question
//! work is parallel but order-preserving, and all floating-point
//! accumulation happens in fixed sequential order (per worker, then a
//! rank-ordered fold), so results are bit-identical with and without the
//! `parallel` feature.

use std::collections::{HashMap, HashSet};

use crate::corpus::LabelMap;
use crate::encoder::dual::{dot, encode_tower, TowerCache};
use crate::encoder::{DualEncoderParams, Embedding, TowerParams};
use crate::exec;
use crate::training::loss::nll_loss;
use crate::training::NegativeScope;
use crate::{Error, Result};

/// One training example: a question, its positive passage, and the mined
/// hard negatives to train against (possibly empty).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub question_id: u64,
    pub question_tokens: Vec<u32>,
    pub positive_id: u64,
    pub positive_tokens: Vec<u32>,
    pub hard_negatives: Vec<(u64, Vec<u32>)>,
}

/// Per-worker block of passage embeddings, tagged with the worker's rank.
#[derive(Debug, Clone)]
pub struct WorkerBlock {
    pub rank: usize,
    pub embeddings: Vec<Embedding>,
}

/// Simulated all-gather: concatenates worker blocks in rank order,
/// independent of the order the blocks are supplied in. Ranks must be
/// exactly `0..blocks.len()` and all embeddings the same width.
pub fn gather_passages(mut blocks: Vec<WorkerBlock>) -> Result<Vec<Embedding>> {
    if blocks.is_empty() {
        return Err(Error::invalid("gather requires at least one worker block"));
    }
    blocks.sort_by_key(|b| b.rank);
    for (i, block) in blocks.iter().enumerate() {
        if block.rank != i {
            return Err(Error::invalid(format!(
                "worker ranks must be exactly 0..{}, found rank {} out of place",
                blocks.len(),
                block.rank
            )));
        }
    }
    let width = blocks
        .iter()
        .flat_map(|b| b.embeddings.first())
        .map(Vec::len)
        .next();
    let mut gathered = Vec::with_capacity(blocks.iter().map(|b| b.embeddings.len()).sum());
    for block in blocks {
        for e in block.embeddings {
            if Some(e.len()) != width {
                return Err(Error::dims(format!(
                    "gathered embedding width {} differs from {}",
                    e.len(),
                    width.unwrap_or(0)
                )));
            }
            gathered.push(e);
        }
    }
    Ok(gathered)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EntryKind {
    Positive,
    HardNegative,
}

/// One gathered candidate passage.
struct Entry {
    worker: usize,
    example: usize,
    kind: EntryKind,
    passage_id: u64,
    unique: usize,
}

/// Loss and gradients for one batch.
#[derive(Debug)]
pub struct BatchOutcome {
    /// Mean NLL over all questions in the batch.
    pub loss: f64,
    pub grads: DualEncoderParams,
    pub question_count: usize,
}

struct QuestionWork {
    loss: f64,
    /// dL/d(question embedding), already scaled by 1/N.
    g_question: Vec<f64>,
    /// (unique passage index, dL/d sim): passage-side gradient coefficients.
    coeffs: Vec<(usize, f64)>,
}

/// Computes the mean contrastive loss over the batch and its gradients with
/// respect to every dual-encoder parameter.
pub fn batch_loss(
    params: &DualEncoderParams,
    workers: &[Vec<TrainExample>],
    scope: NegativeScope,
    include_other_hard_negatives: bool,
    labels: &LabelMap,
) -> Result<BatchOutcome> {
    let vocab = params.dims.vocab_size;
    let n_workers = workers.len();
    let n_questions: usize = workers.iter().map(Vec::len).sum();
    if n_workers == 0 || n_questions == 0 {
        return Err(Error::invalid("batch contains no examples"));
    }

    // Collect candidate entries in global (rank-major) order, deduplicating
    // passage encodings by id.
    let mut unique_of_pid: HashMap<u64, usize> = HashMap::new();
    let mut unique_tokens: Vec<&[u32]> = Vec::new();
    let mut entries: Vec<Entry> = Vec::new();
    let mut worker_entry_ranges: Vec<std::ops::Range<usize>> = Vec::with_capacity(n_workers);
    let mut positive_entry: Vec<Vec<usize>> = Vec::with_capacity(n_workers);

    for (w, examples) in workers.iter().enumerate() {
        let start = entries.len();
        let mut positives = Vec::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            let u = intern(
                &mut unique_of_pid,
                &mut unique_tokens,
                ex.positive_id,
                &ex.positive_tokens,
            )?;
            positives.push(entries.len());
            entries.push(Entry {
                worker: w,
                example: i,
                kind: EntryKind::Positive,
                passage_id: ex.positive_id,
                unique: u,
            });
            for (pid, toks) in &ex.hard_negatives {
                let u = intern(&mut unique_of_pid, &mut unique_tokens, *pid, toks)?;
                entries.push(Entry {
                    worker: w,
                    example: i,
                    kind: EntryKind::HardNegative,
                    passage_id: *pid,
                    unique: u,
                });
            }
        }
        worker_entry_ranges.push(start..entries.len());
        positive_entry.push(positives);
    }

    // Phase A: encode unique passages and all questions (order-preserving,
    // parallel under the default feature).
    let passage_caches: Vec<TowerCache> =
        exec::try_map_ordered(&unique_tokens, |toks| encode_tower(&params.passage, toks, vocab))?;

    let mut question_offset = Vec::with_capacity(n_workers);
    let mut question_tokens: Vec<&[u32]> = Vec::with_capacity(n_questions);
    for examples in workers {
        question_offset.push(question_tokens.len());
        for ex in examples {
            question_tokens.push(&ex.question_tokens);
        }
    }
    let question_caches: Vec<TowerCache> =
        exec::try_map_ordered(&question_tokens, |toks| encode_tower(&params.question, toks, vocab))?;

    // Phase B: per-question similarity scoring and loss (parallel; each
    // question's arithmetic is self-contained and sequential).
    let flat: Vec<(usize, usize)> = workers
        .iter()
        .enumerate()
        .flat_map(|(w, ex)| (0..ex.len()).map(move |i| (w, i)))
        .collect();
    let inv_n = 1.0 / n_questions as f64;

    let works: Vec<Result<QuestionWork>> = exec::map_ordered(&flat, |&(w, i)| {
        let ex = &workers[w][i];
        let q_cache = &question_caches[question_offset[w] + i];
        let q_emb = &q_cache.output;

        let candidate_range = match scope {
            NegativeScope::InBatch => worker_entry_ranges[w].clone(),
            NegativeScope::CrossBatch => 0..entries.len(),
        };
        let own_positive = positive_entry[w][i];

        // The question's own labeled positives are masked wherever they
        // appear in the pool; each surviving distinct passage counts once.
        let empty = Default::default();
        let own_labels = labels.get(&ex.question_id).unwrap_or(&empty);
        let mut seen: HashSet<usize> = HashSet::new();
        let mut negative_uniques: Vec<usize> = Vec::new();
        for idx in candidate_range {
            let entry = &entries[idx];
            if idx == own_positive {
                continue;
            }
            if entry.passage_id == ex.positive_id || own_labels.contains(&entry.passage_id) {
                continue;
            }
            if entry.kind == EntryKind::HardNegative
                && !include_other_hard_negatives
                && (entry.worker, entry.example) != (w, i)
            {
                continue;
            }
            if seen.insert(entry.unique) {
                negative_uniques.push(entry.unique);
            }
        }
        if negative_uniques.is_empty() {
            return Err(Error::invalid(format!(
                "question {} has no negatives left in the batch after masking",
                ex.question_id
            )));
        }

        let sim_positive = dot(q_emb, &passage_caches[entries[own_positive].unique].output);
        let sim_negatives: Vec<f64> = negative_uniques
            .iter()
            .map(|&u| dot(q_emb, &passage_caches[u].output))
            .collect();
        let nll = nll_loss(sim_positive, &sim_negatives)?;

        // dL/d q_emb = Σ coeff · passage_emb (positive first, negatives in
        // candidate order), scaled by the batch mean factor here.
        let mut g_question = vec![0.0; q_emb.len()];
        let mut coeffs = Vec::with_capacity(1 + negative_uniques.len());
        coeffs.push((entries[own_positive].unique, nll.grad_positive));
        for (k, &u) in negative_uniques.iter().enumerate() {
            coeffs.push((u, nll.grad_negatives[k]));
        }
        for &(u, c) in &coeffs {
            let p_emb = &passage_caches[u].output;
            for (gq, &pe) in g_question.iter_mut().zip(p_emb) {
                *gq += c * inv_n * pe;
            }
        }

        Ok(QuestionWork {
            loss: nll.loss,
            g_question,
            coeffs,
        })
    });

    // Sequential reduction in question order: total loss and passage-output
    // gradients.
    let width = params.dims.d;
    let mut total_loss = 0.0;
    let mut passage_out_grads: Vec<Vec<f64>> = vec![vec![0.0; width]; passage_caches.len()];
    let mut question_out_grads: Vec<Vec<f64>> = Vec::with_capacity(n_questions);
    for (qi, work) in works.into_iter().enumerate() {
        let work = work?;
        total_loss += work.loss;
        let q_emb = &question_caches[qi].output;
        for &(u, c) in &work.coeffs {
            for (pg, &qe) in passage_out_grads[u].iter_mut().zip(q_emb) {
                *pg += c * inv_n * qe;
            }
        }
        question_out_grads.push(work.g_question);
    }
    total_loss *= inv_n;
    if !total_loss.is_finite() {
        return Err(Error::non_finite(format!("batch loss is {total_loss}")));
    }

    // Phase C: backpropagate through the towers. Question gradients are
    // accumulated per worker then folded in rank order; passage gradients
    // are accumulated over fixed contiguous chunks then folded in chunk
    // order. Identical structure (and therefore identical bits) in parallel
    // and sequential builds.
    let dims = params.dims;
    let question_worker_grads: Vec<TowerParams> = exec::map_indexed(n_workers, |w| {
        let mut buf = TowerParams::zeros(dims.vocab_size, dims.d_emb, dims.d);
        for (i, ex) in workers[w].iter().enumerate() {
            let flat_idx = question_offset[w] + i;
            crate::encoder::dual::tower_backward(
                &params.question,
                &ex.question_tokens,
                &question_caches[flat_idx],
                &question_out_grads[flat_idx],
                &mut buf,
            );
        }
        buf
    });

    let n_chunks = n_workers.min(passage_caches.len()).max(1);
    let chunk_len = passage_caches.len().div_ceil(n_chunks);
    let passage_chunk_grads: Vec<TowerParams> = exec::map_indexed(n_chunks, |c| {
        let mut buf = TowerParams::zeros(dims.vocab_size, dims.d_emb, dims.d);
        let lo = c * chunk_len;
        let hi = ((c + 1) * chunk_len).min(passage_caches.len());
        for u in lo..hi {
            crate::encoder::dual::tower_backward(
                &params.passage,
                unique_tokens[u],
                &passage_caches[u],
                &passage_out_grads[u],
                &mut buf,
            );
        }
        buf
    });

    let mut grads = params.zeros_like();
    for buf in &question_worker_grads {
        add_tower(&mut grads.question, buf);
    }
    for buf in &passage_chunk_grads {
        add_tower(&mut grads.passage, buf);
    }

    Ok(BatchOutcome {
        loss: total_loss,
        grads,
        question_count: n_questions,
    })
}

/// Interns a passage under its id, verifying that repeated appearances
/// carry identical token sequences.
fn intern<'a>(
    unique_of_pid: &mut HashMap<u64, usize>,
    unique_tokens: &mut Vec<&'a [u32]>,
    pid: u64,
    tokens: &'a [u32],
) -> Result<usize> {
    match unique_of_pid.get(&pid) {
        Some(&u) => {
            if unique_tokens[u] != tokens {
                return Err(Error::invalid(format!(
                    "passage id {pid} appears in the batch with two different token sequences"
                )));
            }
            Ok(u)
        }
        None => {
            let u = unique_tokens.len();
            unique_of_pid.insert(pid, u);
            unique_tokens.push(tokens);
            Ok(u)
        }
    }
}

fn add_tower(dst: &mut TowerParams, src: &TowerParams) {
    for (d, &s) in dst.embedding.data_mut().iter_mut().zip(src.embedding.data()) {
        *d += s;
    }
    for (d, &s) in dst
        .projection
        .data_mut()
        .iter_mut()
        .zip(src.projection.data())
    {
        *d += s;
    }
    for (d, &s) in dst.bias.iter_mut().zip(&src.bias) {
        *d += s;
    }
}

//! Two-tower (dual) encoder: forward, backward, and batch helpers.
//!
//! A tower encodes a token sequence by mean-pooling its token embeddings and
//! applying one affine layer with tanh:
//!
//! ```text
//! m = mean(E[t] for t in tokens)        (repeats count again)
//! y = tanh(Wᵀ m + b)
//! ```
//!
//! Question and passage towers are independent parameter sets. Relevance is
//! the raw dot product `q · p` — embeddings are deliberately *not* length
//! normalized, so the retrieval problem stays maximum inner product search.

use crate::encoder::{
    mean_embedding, validate_tokens, DualEncoderParams, Embedding, TowerParams,
};
use crate::exec;
use crate::{Error, Result};

/// Intermediate values needed by the backward pass.
#[derive(Debug, Clone)]
pub struct TowerCache {
    /// Mean-pooled token embedding.
    pub mean: Vec<f64>,
    /// Tower output (post-tanh).
    pub output: Embedding,
}

/// Forward pass of one tower, retaining what backward needs.
pub fn encode_tower(tower: &TowerParams, tokens: &[u32], vocab_size: u32) -> Result<TowerCache> {
    validate_tokens(tokens, vocab_size)?;
    let mean = mean_embedding(&tower.embedding, tokens);

    let mut z = tower.bias.clone();
    for (i, &mi) in mean.iter().enumerate() {
        for (zj, &w) in z.iter_mut().zip(tower.projection.row(i)) {
            *zj += mi * w;
        }
    }
    let output = z.into_iter().map(f64::tanh).collect();
    Ok(TowerCache { mean, output })
}

pub fn encode_question(params: &DualEncoderParams, tokens: &[u32]) -> Result<Embedding> {
    encode_tower(&params.question, tokens, params.dims.vocab_size).map(|c| c.output)
}

pub fn encode_passage(params: &DualEncoderParams, tokens: &[u32]) -> Result<Embedding> {
    encode_tower(&params.passage, tokens, params.dims.vocab_size).map(|c| c.output)
}

/// Accumulates gradients for one tower into `grads`, given the upstream
/// gradient w.r.t. the tower output. `tokens` and `cache` must come from the
/// matching [`encode_tower`] call. Repeated tokens accumulate repeatedly,
/// mirroring their repeated contribution to the mean.
pub fn tower_backward(
    tower: &TowerParams,
    tokens: &[u32],
    cache: &TowerCache,
    grad_output: &[f64],
    grads: &mut TowerParams,
) {
    let d_emb = tower.embedding.cols();

    // Through tanh: dL/dz = dL/dy · (1 − y²).
    let gz: Vec<f64> = grad_output
        .iter()
        .zip(&cache.output)
        .map(|(g, y)| g * (1.0 - y * y))
        .collect();

    for (gb, &g) in grads.bias.iter_mut().zip(&gz) {
        *gb += g;
    }

    // Projection gradient is the outer product mean ⊗ gz; the mean gradient
    // is W · gz, computed in the same sweep.
    let mut gmean = vec![0.0; d_emb];
    for (i, gm) in gmean.iter_mut().enumerate() {
        let mi = cache.mean[i];
        let w_row = tower.projection.row(i);
        let g_row = grads.projection.row_mut(i);
        let mut acc = 0.0;
        for ((gw, &w), &g) in g_row.iter_mut().zip(w_row).zip(&gz) {
            *gw += mi * g;
            acc += w * g;
        }
        *gm = acc;
    }

    let inv_len = 1.0 / tokens.len() as f64;
    for &t in tokens {
        let e_row = grads.embedding.row_mut(t as usize);
        for (ge, &gm) in e_row.iter_mut().zip(&gmean) {
            *ge += gm * inv_len;
        }
    }
}

/// Plain dot product; lengths must already agree.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relevance score of a question/passage embedding pair.
pub fn similarity(question: &[f64], passage: &[f64]) -> Result<f64> {
    if question.len() != passage.len() {
        return Err(Error::dims(format!(
            "similarity between vectors of width {} and {}",
            question.len(),
            passage.len()
        )));
    }
    Ok(dot(question, passage))
}

/// Encodes many passages, in input order (parallel under the default
/// feature; bit-identical either way).
pub fn encode_passages_batch(
    params: &DualEncoderParams,
    token_seqs: &[&[u32]],
) -> Result<Vec<Embedding>> {
    exec::try_map_ordered(token_seqs, |toks| encode_passage(params, toks))
}

/// Encodes many questions, in input order.
pub fn encode_questions_batch(
    params: &DualEncoderParams,
    token_seqs: &[&[u32]],
) -> Result<Vec<Embedding>> {
    exec::try_map_ordered(token_seqs, |toks| encode_question(params, toks))
}

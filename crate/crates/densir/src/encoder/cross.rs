//! Cross encoder: a pairwise question/passage scorer.
//!
//! Both token sequences are mean-pooled over a *shared* embedding table; the
//! pair is summarized by the feature vector
//!
//! ```text
//! f = [mq, mp, mq ⊙ mp, |mq − mp|]
//! ```
//!
//! followed by one tanh hidden layer and a scalar logit. The match score is
//! the logistic sigmoid of the logit, so scores live in (0, 1) and can be
//! thresholded directly (e.g. "below 0.1 = confident negative, above 0.9 =
//! confident positive").
//!
//! The interaction features (elementwise product and absolute difference)
//! are what make this model strictly stronger than the dual encoder on a
//! shortlist: it can compare the two texts position by position instead of
//! compressing each to a vector first.

use crate::encoder::{mean_embedding, validate_tokens, CrossEncoderParams};
use crate::exec;
use crate::Result;

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values retained for the backward pass.
#[derive(Debug, Clone)]
pub struct PairCache {
    mq: Vec<f64>,
    mp: Vec<f64>,
    features: Vec<f64>,
    hidden: Vec<f64>,
    pub logit: f64,
}

/// Forward pass producing the raw logit plus cached activations.
pub fn score_pair(
    params: &CrossEncoderParams,
    q_tokens: &[u32],
    p_tokens: &[u32],
) -> Result<PairCache> {
    validate_tokens(q_tokens, params.dims.vocab_size)?;
    validate_tokens(p_tokens, params.dims.vocab_size)?;
    let d_emb = params.dims.d_emb;
    let d_hidden = params.dims.d_hidden;

    let mq = mean_embedding(&params.embedding, q_tokens);
    let mp = mean_embedding(&params.embedding, p_tokens);

    let mut features = Vec::with_capacity(4 * d_emb);
    features.extend_from_slice(&mq);
    features.extend_from_slice(&mp);
    for i in 0..d_emb {
        features.push(mq[i] * mp[i]);
    }
    for i in 0..d_emb {
        features.push((mq[i] - mp[i]).abs());
    }

    let mut z = params.hidden_b.clone();
    for (i, &fi) in features.iter().enumerate() {
        for (zj, &w) in z.iter_mut().zip(params.hidden_w.row(i)) {
            *zj += fi * w;
        }
    }
    let hidden: Vec<f64> = z.into_iter().map(f64::tanh).collect();

    let mut logit = params.out_b[0];
    for j in 0..d_hidden {
        logit += params.out_w[j] * hidden[j];
    }

    Ok(PairCache {
        mq,
        mp,
        features,
        hidden,
        logit,
    })
}

/// Match probability in (0, 1).
pub fn score(params: &CrossEncoderParams, q_tokens: &[u32], p_tokens: &[u32]) -> Result<f64> {
    Ok(sigmoid(score_pair(params, q_tokens, p_tokens)?.logit))
}

/// Scores many pairs in input order (parallel under the default feature).
pub fn score_batch(
    params: &CrossEncoderParams,
    pairs: &[(&[u32], &[u32])],
) -> Result<Vec<f64>> {
    exec::try_map_ordered(pairs, |(q, p)| score(params, q, p))
}

/// Accumulates gradients of `d_logit · logit` into `grads`. The absolute
/// difference feature uses subgradient 0 at exactly zero, which is also what
/// a central finite difference measures there, so gradient checks stay exact
/// even for identical input pairs.
pub fn pair_backward(
    params: &CrossEncoderParams,
    q_tokens: &[u32],
    p_tokens: &[u32],
    cache: &PairCache,
    d_logit: f64,
    grads: &mut CrossEncoderParams,
) {
    let d_emb = params.dims.d_emb;
    let d_hidden = params.dims.d_hidden;

    grads.out_b[0] += d_logit;
    // gh = d_logit · out_w, then through tanh.
    let mut gz = vec![0.0; d_hidden];
    for j in 0..d_hidden {
        grads.out_w[j] += d_logit * cache.hidden[j];
        let h = cache.hidden[j];
        gz[j] = d_logit * params.out_w[j] * (1.0 - h * h);
    }

    for (gb, &g) in grads.hidden_b.iter_mut().zip(&gz) {
        *gb += g;
    }

    let mut g_features = vec![0.0; 4 * d_emb];
    for (i, gf) in g_features.iter_mut().enumerate() {
        let fi = cache.features[i];
        let w_row = params.hidden_w.row(i);
        let g_row = grads.hidden_w.row_mut(i);
        let mut acc = 0.0;
        for ((gw, &w), &g) in g_row.iter_mut().zip(w_row).zip(&gz) {
            *gw += fi * g;
            acc += w * g;
        }
        *gf = acc;
    }

    // Unpack feature gradients into the two pooled vectors.
    let mut gmq = vec![0.0; d_emb];
    let mut gmp = vec![0.0; d_emb];
    for i in 0..d_emb {
        let diff = cache.mq[i] - cache.mp[i];
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        gmq[i] = g_features[i] + g_features[2 * d_emb + i] * cache.mp[i]
            + g_features[3 * d_emb + i] * sign;
        gmp[i] = g_features[d_emb + i] + g_features[2 * d_emb + i] * cache.mq[i]
            - g_features[3 * d_emb + i] * sign;
    }

    let inv_q = 1.0 / q_tokens.len() as f64;
    for &t in q_tokens {
        let row = grads.embedding.row_mut(t as usize);
        for (ge, &g) in row.iter_mut().zip(&gmq) {
            *ge += g * inv_q;
        }
    }
    let inv_p = 1.0 / p_tokens.len() as f64;
    for &t in p_tokens {
        let row = grads.embedding.row_mut(t as usize);
        for (ge, &g) in row.iter_mut().zip(&gmp) {
            *ge += g * inv_p;
        }
    }
}

//! Loss functions: softmax contrastive NLL over similarity scores, and
//! binary cross-entropy over logits.
//!
//! Both are written in their numerically stable forms (log-sum-exp shift,
//! softplus of a negated absolute value) so that extreme scores cannot
//! overflow, and both return analytic gradients alongside the value.

use crate::encoder::cross::sigmoid;
use crate::{Error, Result};

/// Value and gradients of one contrastive term.
#[derive(Debug, Clone, PartialEq)]
pub struct NllOutcome {
    pub loss: f64,
    /// ∂loss/∂sim_positive = p₊ − 1 ≤ 0.
    pub grad_positive: f64,
    /// ∂loss/∂sim_negatives[i] = pᵢ ≥ 0, in input order.
    pub grad_negatives: Vec<f64>,
}

/// Softmax negative log-likelihood of the positive among the negatives:
///
/// ```text
/// loss = −log( e^{s₊} / (e^{s₊} + Σᵢ e^{sᵢ}) )
/// ```
///
/// With no negatives the loss is exactly 0 with zero gradient. Computed via
/// a max shift, so scores of any magnitude are safe. The probabilities are a
/// softmax, hence `grad_positive + Σ grad_negatives = 0`.
pub fn nll_loss(sim_positive: f64, sim_negatives: &[f64]) -> Result<NllOutcome> {
    if !sim_positive.is_finite() {
        return Err(Error::non_finite(format!(
            "positive similarity is {sim_positive}"
        )));
    }
    for (i, &s) in sim_negatives.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::non_finite(format!("negative similarity {i} is {s}")));
        }
    }

    let mut max = sim_positive;
    for &s in sim_negatives {
        max = max.max(s);
    }

    let exp_positive = (sim_positive - max).exp();
    let exp_negatives: Vec<f64> = sim_negatives.iter().map(|&s| (s - max).exp()).collect();
    // Fixed summation order: positive first, then negatives left to right.
    let mut denom = exp_positive;
    for &e in &exp_negatives {
        denom += e;
    }

    let loss = max + denom.ln() - sim_positive;
    let p_positive = exp_positive / denom;
    Ok(NllOutcome {
        loss,
        grad_positive: p_positive - 1.0,
        grad_negatives: exp_negatives.iter().map(|&e| e / denom).collect(),
    })
}

/// Value and gradient of one binary cross-entropy term.
#[derive(Debug, Clone, PartialEq)]
pub struct BceOutcome {
    pub loss: f64,
    /// ∂loss/∂logit = σ(logit) − label.
    pub grad_logit: f64,
    /// σ(logit), the model's probability for the positive class.
    pub probability: f64,
}

/// Binary cross-entropy measured on the raw logit:
///
/// ```text
/// loss = max(s, 0) − s·y + log(1 + e^{−|s|})
/// ```
///
/// which equals −[y·log σ(s) + (1−y)·log(1−σ(s))] but never overflows.
/// `label` must be exactly 0.0 or 1.0.
pub fn bce_loss(logit: f64, label: f64) -> Result<BceOutcome> {
    if !logit.is_finite() {
        return Err(Error::non_finite(format!("logit is {logit}")));
    }
    if label != 0.0 && label != 1.0 {
        return Err(Error::invalid(format!(
            "binary label must be 0 or 1, got {label}"
        )));
    }
    let loss = logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p();
    let probability = sigmoid(logit);
    Ok(BceOutcome {
        loss,
        grad_logit: probability - label,
        probability,
    })
}

//! Learning-rate schedule: linear warmup, then linear decay to zero.
//!
//! ```text
//! w = warmup_fraction · total_steps
//! lr(step) = peak · step / w                      for step ≤ w  (w > 0)
//! lr(step) = peak · (total − step) / (total − w)  otherwise
//! ```
//!
//! `lr(0) = 0` (when warmup > 0) and `lr(total) = 0`; the peak is reached
//! exactly at `step = w` when w is integral. Training loops therefore query
//! `lr_at(t + 1, total + 1, …)` for optimizer step t of `total`, so no
//! applied update ever uses a zero rate.

use crate::{Error, Result};

/// Learning rate at `step ∈ 0..=total_steps`. Pure; errors on out-of-range
/// arguments rather than clamping.
pub fn lr_at(step: u64, total_steps: u64, peak_lr: f64, warmup_fraction: f64) -> Result<f64> {
    if !peak_lr.is_finite() || peak_lr <= 0.0 {
        return Err(Error::invalid(format!("peak learning rate {peak_lr}")));
    }
    if !(0.0..=1.0).contains(&warmup_fraction) {
        return Err(Error::invalid(format!(
            "warmup fraction {warmup_fraction} outside [0, 1]"
        )));
    }
    if step > total_steps {
        return Err(Error::invalid(format!(
            "schedule step {step} past total {total_steps}"
        )));
    }
    let total = total_steps as f64;
    let s = step as f64;
    let w = warmup_fraction * total;
    if w > 0.0 && s <= w {
        // Ratio first: integral step counts give exact binary fractions,
        // which scale exactly when the ratio is a power of two.
        Ok(peak_lr * (s / w))
    } else if total > w {
        Ok(peak_lr * ((total - s) / (total - w)))
    } else {
        // warmup covers the entire schedule (or total = 0): flat at peak.
        Ok(peak_lr)
    }
}

//! Optimization: losses, Adam, the learning-rate schedule, contrastive
//! batch assembly over simulated data-parallel workers, and the two
//! training loops (dual encoder, cross encoder).
//!
//! Both trainers share the same skeleton: a seeded per-epoch shuffle, fixed
//! global batches of `workers × batch_size` examples, a warmup/decay
//! learning-rate schedule, and bias-corrected Adam. All randomness flows
//! from [`TrainConfig::seed`] through dedicated named streams, and every
//! reduction is a sequential fold, so a training run is reproducible to the
//! bit — including across the `parallel` feature.

pub mod adam;
pub mod batch;
pub mod cross_trainer;
pub mod dual_trainer;
pub mod loss;
pub mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use batch::{batch_loss, gather_passages, BatchOutcome, TrainExample, WorkerBlock};
pub use cross_trainer::{train_cross, CrossTrainData, CrossTrainQuestion};
pub use dual_trainer::{train_dual, DualTrainData};
pub use loss::{bce_loss, nll_loss, BceOutcome, NllOutcome};
pub use schedule::lr_at;

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// Which workers' gathered passages a question draws negatives from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeScope {
    /// Only the passages contributed by the question's own worker.
    InBatch,
    /// The concatenated passages of every worker: `A·B − 1` candidate
    /// negatives per question instead of `B − 1`.
    CrossBatch,
}

impl fmt::Display for NegativeScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NegativeScope::InBatch => write!(f, "in-batch"),
            NegativeScope::CrossBatch => write!(f, "cross-batch"),
        }
    }
}

impl std::str::FromStr for NegativeScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-batch" | "in_batch" => Ok(NegativeScope::InBatch),
            "cross-batch" | "cross_batch" => Ok(NegativeScope::CrossBatch),
            other => Err(Error::invalid(format!(
                "unknown negative scope '{other}' (expected 'in-batch' or 'cross-batch')"
            ))),
        }
    }
}

/// Hyperparameters shared by both training loops.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Number of simulated data-parallel workers (`A`).
    pub workers: usize,
    /// Examples per worker per step (`B`); the global batch is `A·B`.
    pub batch_size: usize,
    pub peak_lr: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_fraction: f64,
    /// Hard negatives sampled per example per epoch (dual), or negatives
    /// sampled per positive pair (cross).
    pub negatives_per_example: usize,
    pub scope: NegativeScope,
    /// Whether a question's denominator also includes hard negatives mined
    /// for *other* questions in scope.
    pub include_other_hard_negatives: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            workers: 4,
            batch_size: 8,
            peak_lr: 0.02,
            warmup_fraction: 0.1,
            negatives_per_example: 2,
            scope: NegativeScope::CrossBatch,
            include_other_hard_negatives: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(Error::invalid(format!(
                "peak_lr must be finite and positive, got {}",
                self.peak_lr
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid(format!(
                "warmup_fraction must lie in [0, 1], got {}",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    /// Global batch size `A·B`.
    pub fn global_batch(&self) -> usize {
        self.workers * self.batch_size
    }
}

/// One optimizer step's log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based step counter.
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Writes a loss log as TSV rows `step<TAB>lr<TAB>loss`, byte-deterministic
/// for a given input.
pub fn write_loss_log(path: &Path, log: &[StepRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in log {
        out.push_str(&format!("{}\t{}\t{}\n", rec.step, rec.lr, rec.loss));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_round_trips_through_strings() {
        for scope in [NegativeScope::InBatch, NegativeScope::CrossBatch] {
            let shown = scope.to_string();
            assert_eq!(shown.parse::<NegativeScope>().unwrap(), scope);
        }
        assert!("global".parse::<NegativeScope>().is_err());
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let good = TrainConfig::default();
        good.validate().unwrap();
        assert_eq!(good.global_batch(), 32);

        for bad in [
            TrainConfig { epochs: 0, ..good.clone() },
            TrainConfig { workers: 0, ..good.clone() },
            TrainConfig { batch_size: 0, ..good.clone() },
            TrainConfig { peak_lr: 0.0, ..good.clone() },
            TrainConfig { peak_lr: f64::NAN, ..good.clone() },
            TrainConfig { warmup_fraction: 1.5, ..good.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn loss_log_bytes_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.tsv");
        let log = vec![
            StepRecord { step: 1, lr: 0.0005, loss: 2.5 },
            StepRecord { step: 2, lr: 0.001, loss: 2.25 },
        ];
        write_loss_log(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1\t0.0005\t2.5\n2\t0.001\t2.25\n");
    }
}

//! Dual-encoder training loop.
//!
//! Each epoch reshuffles the examples and resamples every example's hard
//! negatives from its pool with a seeded per-epoch stream, then walks fixed
//! global batches of `workers × batch_size` examples (any remainder is
//! dropped for that epoch). Steps run [`batch_loss`] followed by one Adam
//! update at the scheduled learning rate.

use rand::seq::SliceRandom;

use crate::corpus::LabelMap;
use crate::encoder::DualEncoderParams;
use crate::seeding::stream_rng;
use crate::training::batch::{batch_loss, TrainExample};
use crate::training::schedule::lr_at;
use crate::training::{AdamConfig, AdamState, StepRecord, TrainConfig};
use crate::{Error, Result};

/// Training set for the dual encoder: examples plus the label map used to
/// mask every question's known positives out of its denominator.
#[derive(Debug, Clone)]
pub struct DualTrainData {
    pub examples: Vec<TrainExample>,
    pub labels: LabelMap,
}

/// Final parameters and the per-step loss log.
#[derive(Debug, Clone)]
pub struct DualTrainOutcome {
    pub params: DualEncoderParams,
    pub log: Vec<StepRecord>,
}

/// Trains `init` on `data` under `config`. Bit-reproducible for a given
/// (init, data, config) triple.
pub fn train_dual(
    init: DualEncoderParams,
    data: &DualTrainData,
    config: &TrainConfig,
) -> Result<DualTrainOutcome> {
    config.validate()?;
    let global = config.global_batch();
    if data.examples.len() < global {
        return Err(Error::invalid(format!(
            "need at least {global} examples for {} workers x {} batch size, got {}",
            config.workers,
            config.batch_size,
            data.examples.len()
        )));
    }

    let steps_per_epoch = data.examples.len() / global;
    let total_steps = (steps_per_epoch * config.epochs) as u64;
    let mut params = init;
    let mut adam = AdamState::new(&params, AdamConfig::default());
    let mut log = Vec::with_capacity(total_steps as usize);

    for epoch in 0..config.epochs {
        let mut rng = stream_rng(config.seed, "dual-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..data.examples.len()).collect();
        order.shuffle(&mut rng);

        for b in 0..steps_per_epoch {
            let slots = &order[b * global..(b + 1) * global];
            let mut workers: Vec<Vec<TrainExample>> = Vec::with_capacity(config.workers);
            for chunk in slots.chunks(config.batch_size) {
                let mut block = Vec::with_capacity(config.batch_size);
                for &idx in chunk {
                    block.push(subsample_hards(
                        &data.examples[idx],
                        config.negatives_per_example,
                        &mut rng,
                    ));
                }
                workers.push(block);
            }

            let step = adam.step_count() + 1;
            // Scheduled against total+1 so the final step keeps a nonzero
            // learning rate.
            let lr = lr_at(step, total_steps + 1, config.peak_lr, config.warmup_fraction)?;
            let outcome = batch_loss(
                &params,
                &workers,
                config.scope,
                config.include_other_hard_negatives,
                &data.labels,
            )?;
            adam.apply(&mut params, &outcome.grads, lr)?;
            log.push(StepRecord {
                step: step as usize,
                lr,
                loss: outcome.loss,
            });
        }
    }

    Ok(DualTrainOutcome { params, log })
}

/// Clones `example` keeping at most `cap` hard negatives, sampled without
/// replacement in pool order. Consumes randomness only when the pool
/// actually overflows the cap.
fn subsample_hards(
    example: &TrainExample,
    cap: usize,
    rng: &mut impl rand::Rng,
) -> TrainExample {
    let mut out = example.clone();
    if out.hard_negatives.len() > cap {
        let mut keep = rand::seq::index::sample(rng, out.hard_negatives.len(), cap).into_vec();
        keep.sort_unstable();
        out.hard_negatives = keep
            .into_iter()
            .map(|i| out.hard_negatives[i].clone())
            .collect();
    }
    out
}

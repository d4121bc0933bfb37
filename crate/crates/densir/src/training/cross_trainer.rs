//! Cross-encoder training loop.
//!
//! The cross encoder is a binary relevance classifier over
//! (question, passage) pairs. Each epoch pairs every question's labeled
//! positives with label 1 and a fresh seeded sample from its candidate
//! negative pool with label 0, shuffles, and walks global batches split
//! across simulated workers: each worker scores its share sequentially and
//! the per-worker gradient buffers are folded in rank order, mirroring the
//! dual trainer's determinism contract.

use rand::seq::SliceRandom;

use crate::corpus::Collection;
use crate::encoder::cross::{pair_backward, score_pair};
use crate::encoder::{CrossEncoderParams, ParamTensors};
use crate::exec;
use crate::seeding::stream_rng;
use crate::training::loss::bce_loss;
use crate::training::schedule::lr_at;
use crate::training::{AdamConfig, AdamState, StepRecord, TrainConfig};
use crate::{Error, Result};

/// One question's training material: its labeled positives and a
/// rank-ordered pool of candidate negative passage ids.
#[derive(Debug, Clone)]
pub struct CrossTrainQuestion {
    pub question_id: u64,
    pub question_tokens: Vec<u32>,
    pub positive_ids: Vec<u64>,
    pub negative_pool: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct CrossTrainData {
    pub questions: Vec<CrossTrainQuestion>,
}

/// Final parameters and the per-step loss log.
#[derive(Debug, Clone)]
pub struct CrossTrainOutcome {
    pub params: CrossEncoderParams,
    pub log: Vec<StepRecord>,
}

/// (question index, passage id, binary label) — one classification example.
type Pair = (usize, u64, f64);

/// Trains `init` on labeled pairs drawn from `data`, resolving passage
/// tokens through `collection`. `config.scope` is ignored — pair
/// classification has no negative denominator — but batching still uses
/// `workers × batch_size` pairs per step.
pub fn train_cross(
    init: CrossEncoderParams,
    data: &CrossTrainData,
    collection: &Collection,
    config: &TrainConfig,
) -> Result<CrossTrainOutcome> {
    config.validate()?;
    if data.questions.is_empty() {
        return Err(Error::invalid("cross-encoder training needs at least one question"));
    }
    for q in &data.questions {
        if q.positive_ids.is_empty() {
            return Err(Error::invalid(format!(
                "question {} has no labeled positives",
                q.question_id
            )));
        }
        for pid in q.positive_ids.iter().chain(q.negative_pool.iter()) {
            if !collection.contains(*pid) {
                return Err(Error::invalid(format!(
                    "question {} references unknown passage id {pid}",
                    q.question_id
                )));
            }
        }
    }

    let global = config.global_batch();
    // Pair count per epoch is fixed by the data shape, so the schedule can
    // be laid out up front.
    let pairs_per_epoch: usize = data
        .questions
        .iter()
        .map(|q| q.positive_ids.len() + q.negative_pool.len().min(config.negatives_per_example))
        .sum();
    let steps_per_epoch = pairs_per_epoch / global;
    if steps_per_epoch == 0 {
        return Err(Error::invalid(format!(
            "epoch yields only {pairs_per_epoch} pairs, fewer than one global batch of {global}"
        )));
    }
    let total_steps = (steps_per_epoch * config.epochs) as u64;

    let mut params = init;
    let mut adam = AdamState::new(&params, AdamConfig::default());
    let mut log = Vec::with_capacity(total_steps as usize);
    let inv_n = 1.0 / global as f64;

    for epoch in 0..config.epochs {
        let mut rng = stream_rng(config.seed, "cross-epoch", epoch as u64);
        let mut pairs: Vec<Pair> = Vec::with_capacity(pairs_per_epoch);
        for (qi, q) in data.questions.iter().enumerate() {
            for &pid in &q.positive_ids {
                pairs.push((qi, pid, 1.0));
            }
            let want = q.negative_pool.len().min(config.negatives_per_example);
            if want == q.negative_pool.len() {
                for &pid in &q.negative_pool {
                    pairs.push((qi, pid, 0.0));
                }
            } else {
                let mut keep =
                    rand::seq::index::sample(&mut rng, q.negative_pool.len(), want).into_vec();
                keep.sort_unstable();
                for i in keep {
                    pairs.push((qi, q.negative_pool[i], 0.0));
                }
            }
        }
        pairs.shuffle(&mut rng);

        for b in 0..steps_per_epoch {
            let batch = &pairs[b * global..(b + 1) * global];
            let step = adam.step_count() + 1;
            let lr = lr_at(step, total_steps + 1, config.peak_lr, config.warmup_fraction)?;

            // Each worker scores its contiguous share of the batch
            // sequentially; buffers fold in rank order.
            let shares: Vec<Result<(f64, CrossEncoderParams)>> =
                exec::map_indexed(config.workers, |w| {
                    let mut buf = params.zeros_like();
                    let mut loss_sum = 0.0;
                    for &(qi, pid, label) in
                        &batch[w * config.batch_size..(w + 1) * config.batch_size]
                    {
                        let q = &data.questions[qi];
                        let p_tokens = &collection
                            .get(pid)
                            .expect("pair ids validated above")
                            .tokens;
                        let cache = score_pair(&params, &q.question_tokens, p_tokens)?;
                        let bce = bce_loss(cache.logit, label)?;
                        loss_sum += bce.loss;
                        pair_backward(
                            &params,
                            &q.question_tokens,
                            p_tokens,
                            &cache,
                            bce.grad_logit * inv_n,
                            &mut buf,
                        );
                    }
                    Ok((loss_sum, buf))
                });

            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for share in shares {
                let (l, buf) = share?;
                loss += l;
                for (dst, src) in grads.tensors_mut().into_iter().zip(buf.tensors()) {
                    for (d, &s) in dst.iter_mut().zip(src.iter()) {
                        *d += s;
                    }
                }
            }
            loss *= inv_n;
            if !loss.is_finite() {
                return Err(Error::non_finite(format!("cross-encoder batch loss is {loss}")));
            }

            adam.apply(&mut params, &grads, lr)?;
            log.push(StepRecord {
                step: step as usize,
                lr,
                loss,
            });
        }
    }

    Ok(CrossTrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::encoder::cross::score;
    use crate::encoder::{CrossDims, ParamTensors};

    fn dims() -> CrossDims {
        CrossDims {
            vocab_size: 32,
            d_emb: 8,
            d_hidden: 8,
        }
    }

    /// Separable toy task: relevant pairs share a token block with the
    /// question, negatives come from the opposite block.
    fn toy() -> (CrossTrainData, Collection) {
        let tok = |lo: u32, salt: u32| -> Vec<u32> {
            (0..5).map(|j| lo + ((salt + j * 3) % 16)).collect()
        };
        let mut passages = Vec::new();
        let mut questions = Vec::new();
        for i in 0..12u64 {
            let lo = if i % 2 == 0 { 0 } else { 16 };
            let other = 16 - lo;
            passages.push(Passage {
                id: 100 + i,
                text: String::new(),
                tokens: tok(lo, i as u32 * 5 + 1),
            });
            passages.push(Passage {
                id: 200 + i,
                text: String::new(),
                tokens: tok(other, i as u32 * 5 + 2),
            });
            questions.push(CrossTrainQuestion {
                question_id: i,
                question_tokens: tok(lo, i as u32 * 5),
                positive_ids: vec![100 + i],
                negative_pool: vec![200 + i],
            });
        }
        let tokenizer = crate::corpus::TokenizerConfig {
            vocab_size: 32,
            ..Default::default()
        };
        (
            CrossTrainData { questions },
            Collection::new(passages, tokenizer).unwrap(),
        )
    }

    fn config() -> TrainConfig {
        TrainConfig {
            epochs: 60,
            workers: 2,
            batch_size: 4,
            peak_lr: 0.05,
            warmup_fraction: 0.1,
            negatives_per_example: 1,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_a_separable_pair_task() {
        let (data, collection) = toy();
        let out = train_cross(
            CrossEncoderParams::init(dims(), 1),
            &data,
            &collection,
            &config(),
        )
        .unwrap();
        let last = out.log.last().unwrap().loss;
        assert!(last < 0.1, "final BCE {last} too high");

        for q in &data.questions {
            let pos = score(
                &out.params,
                &q.question_tokens,
                &collection.get(q.positive_ids[0]).unwrap().tokens,
            )
            .unwrap();
            let neg = score(
                &out.params,
                &q.question_tokens,
                &collection.get(q.negative_pool[0]).unwrap().tokens,
            )
            .unwrap();
            assert!(
                pos > 0.5 && neg < 0.5,
                "question {}: positive {pos}, negative {neg}",
                q.question_id
            );
        }
    }

    #[test]
    fn runs_are_bit_identical() {
        let (data, collection) = toy();
        let cfg = config();
        let a = train_cross(CrossEncoderParams::init(dims(), 2), &data, &collection, &cfg)
            .unwrap();
        let b = train_cross(CrossEncoderParams::init(dims(), 2), &data, &collection, &cfg)
            .unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn unknown_passage_ids_are_rejected() {
        let (mut data, collection) = toy();
        data.questions[0].negative_pool.push(999);
        let err = train_cross(
            CrossEncoderParams::init(dims(), 3),
            &data,
            &collection,
            &config(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown passage id 999"), "{err}");
    }

    #[test]
    fn questions_without_positives_are_rejected() {
        let (mut data, collection) = toy();
        data.questions[3].positive_ids.clear();
        let err = train_cross(
            CrossEncoderParams::init(dims(), 4),
            &data,
            &collection,
            &config(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("no labeled positives"), "{err}");
    }

    #[test]
    fn too_small_epochs_are_rejected() {
        let (data, collection) = toy();
        let mut cfg = config();
        cfg.workers = 8;
        cfg.batch_size = 8; // 64 > 24 pairs per epoch
        let err = train_cross(
            CrossEncoderParams::init(dims(), 5),
            &data,
            &collection,
            &cfg,
        )
        .unwrap_err();
        assert!(err.to_string().contains("fewer than one global batch"), "{err}");
    }

    #[test]
    fn parameters_actually_move() {
        let (data, collection) = toy();
        let init = CrossEncoderParams::init(dims(), 6);
        let mut cfg = config();
        cfg.epochs = 1;
        let out = train_cross(init.clone(), &data, &collection, &cfg).unwrap();
        let moved = init
            .tensors()
            .iter()
            .zip(out.params.tensors().iter())
            .any(|(a, b)| a != b);
        assert!(moved);
    }
}

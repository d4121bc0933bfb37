//! Strategy ablation and parameter sweeps over the training pipeline.
//!
//! [`run_ablation`] trains one model per training strategy under a shared
//! budget and evaluates them on the same holdout, repeating over a seed set
//! and reporting per-strategy medians — single runs at this scale are
//! noisy. Each seed gets its own pipeline directory (`seed-<s>/` under the
//! configured output directory); the two extra variants are trained with
//! the *same* derived seeds as their pipeline counterparts so that each
//! comparison flips exactly one ingredient:
//!
//! * `in-batch` shares STEP 1's initialization and batch schedule and
//!   changes only the negative scope;
//! * `hard-undenoised` mines with the same sampling streams as STEP 3 and
//!   trains with STEP 3's seeds, so its negative lists are supersets of
//!   the denoised ones and everything else is equal.
//!
//! The sweeps are single-seed one-factor scans: [`sweep_negative_counts`]
//! varies the number of batch negatives per question (by varying the
//! global batch size), [`sweep_augmented_fractions`] varies how much of
//! the unlabeled pool STEP 4 consumes. Both write one metrics row per
//! point and persist every trained variant for inspection.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::config::PipelineConfig;
use super::{
    check_or_write_manifest, dual_examples, materialize_data, train_dual_stage,
    try_load_dual_step, Layout, LockGuard, PipelineData, SEED_INIT_MD0, SEED_INIT_MD1,
    SEED_INIT_MD2, SEED_LABEL, SEED_MINE, SEED_TRAIN_MD0, SEED_TRAIN_MD1, SEED_TRAIN_MD2,
};
use crate::corpus::Question;
use crate::encoder::checkpoint::{load_cross, DualCheckpoint};
use crate::eval::{evaluate, MetricSpec};
use crate::index::{run_search, write_run, FlatIndex};
use crate::mining::{
    load_hard_negatives, pseudo_label, select_undenoised_negatives, write_hard_negatives,
    MiningConfig,
};
use crate::seeding::mix_seed;
use crate::training::{DualTrainData, NegativeScope};
use crate::{Error, Result};

/// The five training strategies compared by the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Batch negatives scoped to each worker's own batch.
    InBatch,
    /// Batch negatives shared across all workers (the STEP 1 model).
    CrossBatch,
    /// Mined hard negatives without the cross-encoder filter.
    HardUndenoised,
    /// Mined hard negatives with denoising (the STEP 3 model).
    HardDenoised,
    /// Denoised hard negatives plus pseudo-labeled data (the STEP 4 model).
    Augmented,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::InBatch,
        Strategy::CrossBatch,
        Strategy::HardUndenoised,
        Strategy::HardDenoised,
        Strategy::Augmented,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::InBatch => "in-batch",
            Strategy::CrossBatch => "cross-batch",
            Strategy::HardUndenoised => "hard-undenoised",
            Strategy::HardDenoised => "hard-denoised",
            Strategy::Augmented => "augmented",
        }
    }

    /// How many pipeline steps the strategy's artifacts depend on.
    fn required_steps(self) -> u8 {
        match self {
            Strategy::InBatch | Strategy::CrossBatch | Strategy::HardUndenoised => 1,
            Strategy::HardDenoised => 3,
            Strategy::Augmented => 4,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "in-batch" => Ok(Strategy::InBatch),
            "cross-batch" => Ok(Strategy::CrossBatch),
            "hard-undenoised" => Ok(Strategy::HardUndenoised),
            "hard-denoised" => Ok(Strategy::HardDenoised),
            "augmented" => Ok(Strategy::Augmented),
            other => Err(Error::invalid(format!(
                "unknown strategy '{other}' (expected one of: in-batch, cross-batch, \
                 hard-undenoised, hard-denoised, augmented)"
            ))),
        }
    }
}

/// Parses a comma-separated strategy list, e.g. `in-batch,cross-batch`.
pub fn parse_strategy_list(s: &str) -> Result<Vec<Strategy>> {
    let strategies: Vec<Strategy> = s
        .split(',')
        .filter(|part| !part.trim().is_empty())
        .map(Strategy::from_str)
        .collect::<Result<_>>()?;
    if strategies.is_empty() {
        return Err(Error::invalid("strategy list is empty"));
    }
    Ok(strategies)
}

#[derive(Debug, Clone)]
pub struct AblationConfig {
    /// Template for the per-seed runs; `out_dir` is the parent directory
    /// and `seed`/`steps` are overridden per seed and strategy set.
    pub pipeline: PipelineConfig,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    /// Headline metric reported per strategy.
    pub metric: MetricSpec,
}

impl AblationConfig {
    /// Default suite: all five strategies, MRR@10, five consecutive seeds
    /// starting at the pipeline seed.
    pub fn new(pipeline: PipelineConfig) -> Self {
        let base = pipeline.seed;
        AblationConfig {
            pipeline,
            seeds: (base..base + 5).collect(),
            strategies: Strategy::ALL.to_vec(),
            metric: MetricSpec::Mrr { k: 10 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::invalid("ablation needs at least one seed"));
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid("ablation needs at least one strategy"));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return Err(Error::invalid(format!("strategy '{s}' listed twice")));
            }
        }
        let mut seen = Vec::new();
        for &seed in &self.seeds {
            if seen.contains(&seed) {
                return Err(Error::invalid(format!("seed {seed} listed twice")));
            }
            seen.push(seed);
        }
        Ok(())
    }
}

/// Per-strategy results: one metric value per seed, in seed order.
///
/// Each strategy is scored against two label sets with different jobs. The
/// `labeled` numbers use the sparse training qrels (one marked passage per
/// question) — the only evaluation a real benchmark offers, and the one
/// where contaminated hard negatives visibly hurt: training against an
/// unlabeled duplicate demotes exactly the passages the sparse labels ask
/// for. The `truth` numbers use the hidden truth table, where every cluster
/// member counts; they measure absolute retrieval quality but are nearly
/// blind to within-cluster demotion, since a sibling passage answers in the
/// demoted one's place. Strategy comparisons should read `labeled`; quality
/// claims should read `truth`.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub strategy: Strategy,
    /// Metric against the training labels.
    pub labeled: Vec<f64>,
    /// Metric against the hidden truth table; empty when the data has none.
    pub truth: Vec<f64>,
}

impl AblationRow {
    pub fn median_labeled(&self) -> f64 {
        median(&self.labeled)
    }

    pub fn median_truth(&self) -> Option<f64> {
        if self.truth.is_empty() {
            None
        } else {
            Some(median(&self.truth))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub metric: MetricSpec,
    pub seeds: Vec<u64>,
    /// One row per requested strategy, in request order.
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, strategy: Strategy) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }
}

fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

/// Loads a trained dual stage that the per-seed pipeline run must have
/// produced.
fn load_stage(ckpt: &Path, loss: &Path, index: &Path) -> Result<(DualCheckpoint, FlatIndex)> {
    try_load_dual_step(ckpt, loss, index).ok_or_else(|| {
        Error::invalid(format!(
            "expected pipeline artifact {} is missing or invalid",
            ckpt.display()
        ))
    })
}

/// Returns the checkpoint and index for one strategy, training the
/// in-batch / undenoised variants on demand (and reusing them on resume).
fn strategy_model(
    config: &PipelineConfig,
    layout: &Layout,
    data: &PipelineData,
    strategy: Strategy,
) -> Result<(DualCheckpoint, FlatIndex)> {
    let dir = layout.ablation_dir();
    match strategy {
        Strategy::CrossBatch => load_stage(&layout.md0(), &layout.md0_loss(), &layout.md0_index()),
        Strategy::HardDenoised => load_stage(&layout.md1(), &layout.md1_loss(), &layout.md1_index()),
        Strategy::Augmented => load_stage(&layout.md2(), &layout.md2_loss(), &layout.md2_index()),
        Strategy::InBatch => {
            let ckpt = dir.join("inbatch.ckpt");
            let loss = dir.join("inbatch.loss.tsv");
            let index = dir.join("inbatch.index");
            if let Some(found) = try_load_dual_step(&ckpt, &loss, &index) {
                return Ok(found);
            }
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut step_config = config.step1.clone();
            step_config.scope = NegativeScope::InBatch;
            let examples =
                dual_examples(&data.train_questions, &data.labels, &data.collection, None)?;
            train_dual_stage(
                config,
                DualTrainData {
                    examples,
                    labels: data.labels.clone(),
                },
                &step_config,
                SEED_INIT_MD0,
                SEED_TRAIN_MD0,
                &data.collection,
                &ckpt,
                &loss,
                &index,
            )
        }
        Strategy::HardUndenoised => {
            let negatives_path = dir.join("undenoised_negatives.tsv");
            let ckpt = dir.join("undenoised.ckpt");
            let loss = dir.join("undenoised.loss.tsv");
            let index = dir.join("undenoised.index");
            if load_hard_negatives(&negatives_path).is_ok() {
                if let Some(found) = try_load_dual_step(&ckpt, &loss, &index) {
                    return Ok(found);
                }
            }
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let (md0, index0) =
                load_stage(&layout.md0(), &layout.md0_loss(), &layout.md0_index())?;
            let mining = MiningConfig {
                seed: mix_seed(config.seed, SEED_MINE),
                ..config.mining.clone()
            };
            let entries = select_undenoised_negatives(
                &md0,
                &index0,
                &data.train_questions,
                &data.labels,
                &mining,
            )?;
            write_hard_negatives(&negatives_path, &entries)?;
            let hard: HashMap<u64, Vec<u64>> = entries
                .into_iter()
                .map(|e| (e.question_id, e.negative_ids))
                .collect();
            let examples = dual_examples(
                &data.train_questions,
                &data.labels,
                &data.collection,
                Some(&hard),
            )?;
            train_dual_stage(
                config,
                DualTrainData {
                    examples,
                    labels: data.labels.clone(),
                },
                &config.step3,
                SEED_INIT_MD1,
                SEED_TRAIN_MD1,
                &data.collection,
                &ckpt,
                &loss,
                &index,
            )
        }
    }
}

/// Evaluates one strategy's model on the holdout, persisting its run file
/// under `ablation/`, and returns (labeled value, truth value).
fn evaluate_strategy(
    config: &PipelineConfig,
    layout: &Layout,
    data: &PipelineData,
    strategy: Strategy,
    metric: MetricSpec,
) -> Result<(f64, Option<f64>)> {
    let (ckpt, index) = strategy_model(config, layout, data, strategy)?;
    let k = config.eval.run_k.max(metric.k());
    let run = run_search(&index, &ckpt.params, data.eval_questions(), k)?;
    let dir = layout.ablation_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_run(&dir.join(format!("{strategy}.run.tsv")), &run)?;
    let labeled = evaluate(&run, &data.labels, metric)?.mean;
    let truth = match &data.truth {
        Some(t) => Some(evaluate(&run, t, metric)?.mean),
        None => None,
    };
    Ok((labeled, truth))
}

/// The per-seed output directory of an ablation run.
pub fn seed_dir(parent: &Path, seed: u64) -> PathBuf {
    parent.join(format!("seed-{seed}"))
}

/// Trains and evaluates every requested strategy over every seed, writes
/// `ablation.tsv` under the parent output directory, and returns the
/// report. Per-seed pipelines resume from their own directories, so an
/// interrupted suite picks up where it stopped.
pub fn run_ablation(config: &AblationConfig) -> Result<AblationReport> {
    config.validate()?;
    let steps = config
        .strategies
        .iter()
        .map(|s| s.required_steps())
        .max()
        .expect("strategies is non-empty");

    let mut rows: Vec<AblationRow> = config
        .strategies
        .iter()
        .map(|&strategy| AblationRow {
            strategy,
            labeled: Vec::new(),
            truth: Vec::new(),
        })
        .collect();

    for &seed in &config.seeds {
        let sub = PipelineConfig {
            out_dir: seed_dir(&config.pipeline.out_dir, seed),
            seed,
            steps,
            ..config.pipeline.clone()
        };
        super::run_pipeline(&sub)?;

        let layout = Layout::new(&sub.out_dir);
        let _lock = LockGuard::acquire(&layout)?;
        let data = materialize_data(&sub, &layout)?;
        for row in &mut rows {
            let (labeled, truth) =
                evaluate_strategy(&sub, &layout, &data, row.strategy, config.metric)?;
            row.labeled.push(labeled);
            if let Some(value) = truth {
                row.truth.push(value);
            }
        }
    }

    let report = AblationReport {
        metric: config.metric,
        seeds: config.seeds.clone(),
        rows,
    };
    write_ablation_report(&config.pipeline.out_dir.join("ablation.tsv"), &report)?;
    Ok(report)
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// The swept parameter's value at this point.
    pub value: f64,
    pub labeled: f64,
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Name of the swept parameter (`negatives` or `augmented-fraction`).
    pub parameter: String,
    pub metric: MetricSpec,
    pub rows: Vec<SweepRow>,
}

/// Prepares a sweep directory: lock, manifest, data, `sweeps/` dir.
/// Returns the data and the guard keeping the directory locked.
fn open_sweep_dir(config: &PipelineConfig, layout: &Layout) -> Result<(PipelineData, LockGuard)> {
    fs::create_dir_all(layout.root()).map_err(|e| Error::io(layout.root(), e))?;
    let lock = LockGuard::acquire(layout)?;
    check_or_write_manifest(layout, config)?;
    let data = materialize_data(config, layout).map_err(Error::in_step("data"))?;
    let dir = layout.root().join("sweeps");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok((data, lock))
}

fn evaluate_sweep_point(
    config: &PipelineConfig,
    data: &PipelineData,
    metric: MetricSpec,
    ckpt: &DualCheckpoint,
    index: &FlatIndex,
    run_path: &Path,
) -> Result<(f64, Option<f64>)> {
    let k = config.eval.run_k.max(metric.k());
    let run = run_search(index, &ckpt.params, data.eval_questions(), k)?;
    write_run(run_path, &run)?;
    let labeled = evaluate(&run, &data.labels, metric)?.mean;
    let truth = match &data.truth {
        Some(t) => Some(evaluate(&run, t, metric)?.mean),
        None => None,
    };
    Ok((labeled, truth))
}

/// Trains one cross-batch model per negative count (global batch size =
/// count + 1) and evaluates each on the holdout — the random-negatives
/// sweep. Counts must be one less than a multiple of the step-1 worker
/// count so the per-worker batch divides evenly. Single-seed; writes
/// `sweep_negatives.tsv` under the output directory.
pub fn sweep_negative_counts(
    config: &PipelineConfig,
    counts: &[usize],
    metric: MetricSpec,
) -> Result<SweepReport> {
    config.validate()?;
    if counts.is_empty() {
        return Err(Error::invalid("negative-count sweep needs at least one count"));
    }
    let workers = config.step1.workers;
    for &count in counts {
        if count == 0 || (count + 1) % workers != 0 {
            return Err(Error::invalid(format!(
                "negative count {count} needs count+1 divisible by {workers} workers"
            )));
        }
    }

    let layout = Layout::new(&config.out_dir);
    let (data, _lock) = open_sweep_dir(config, &layout)?;
    let examples = dual_examples(&data.train_questions, &data.labels, &data.collection, None)?;

    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        let dir = layout.root().join("sweeps");
        let ckpt_path = dir.join(format!("negatives-{count}.ckpt"));
        let loss_path = dir.join(format!("negatives-{count}.loss.tsv"));
        let index_path = dir.join(format!("negatives-{count}.index"));
        let stage = match try_load_dual_step(&ckpt_path, &loss_path, &index_path) {
            Some(found) => found,
            None => {
                let mut step_config = config.step1.clone();
                step_config.batch_size = (count + 1) / workers;
                train_dual_stage(
                    config,
                    DualTrainData {
                        examples: examples.clone(),
                        labels: data.labels.clone(),
                    },
                    &step_config,
                    SEED_INIT_MD0,
                    SEED_TRAIN_MD0,
                    &data.collection,
                    &ckpt_path,
                    &loss_path,
                    &index_path,
                )?
            }
        };
        let (labeled, truth) = evaluate_sweep_point(
            config,
            &data,
            metric,
            &stage.0,
            &stage.1,
            &dir.join(format!("negatives-{count}.run.tsv")),
        )?;
        rows.push(SweepRow {
            value: count as f64,
            labeled,
            truth,
        });
    }

    let report = SweepReport {
        parameter: "negatives".to_string(),
        metric,
        rows,
    };
    write_sweep_report(&layout.root().join("sweep_negatives.tsv"), &report)?;
    Ok(report)
}

/// Trains one STEP 4 model per augmented-data fraction and evaluates each
/// on the holdout — the augmentation-size sweep. Fraction `f` keeps the
/// first `⌊f·N⌋` unlabeled questions by ascending id; pseudo-labeling uses
/// per-question streams, so a subset's labels agree with the full set's.
/// Requires (and will run) pipeline steps 1–3 in the output directory.
/// Writes `sweep_augmented.tsv`.
pub fn sweep_augmented_fractions(
    config: &PipelineConfig,
    fractions: &[f64],
    metric: MetricSpec,
) -> Result<SweepReport> {
    config.validate()?;
    if fractions.is_empty() {
        return Err(Error::invalid("augmented-data sweep needs at least one fraction"));
    }
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::invalid(format!(
                "augmented fraction {f} is outside [0, 1]"
            )));
        }
    }

    let mut base = config.clone();
    base.steps = 3;
    super::run_pipeline(&base)?;

    let layout = Layout::new(&config.out_dir);
    let (data, _lock) = open_sweep_dir(config, &layout)?;
    let (md1, index1) = load_stage(&layout.md1(), &layout.md1_loss(), &layout.md1_index())?;
    let mc = load_cross(&layout.mc())?;
    let hard: HashMap<u64, Vec<u64>> = load_hard_negatives(&layout.hard_negatives())?
        .into_iter()
        .map(|e| (e.question_id, e.negative_ids))
        .collect();
    let mining = MiningConfig {
        seed: mix_seed(config.seed, SEED_LABEL),
        ..config.mining.clone()
    };

    let mut unlabeled = data.unlabeled_questions.clone();
    unlabeled.sort_by_key(|q| q.id);

    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let dir = layout.root().join("sweeps");
        let ckpt_path = dir.join(format!("augmented-{fraction}.ckpt"));
        let loss_path = dir.join(format!("augmented-{fraction}.loss.tsv"));
        let index_path = dir.join(format!("augmented-{fraction}.index"));
        let stage = match try_load_dual_step(&ckpt_path, &loss_path, &index_path) {
            Some(found) => found,
            None => {
                let take = (unlabeled.len() as f64 * fraction).floor() as usize;
                let subset: Vec<Question> = unlabeled[..take].to_vec();
                let augmented = if subset.is_empty() {
                    Vec::new()
                } else {
                    pseudo_label(&md1, &mc, &index1, &subset, &data.collection, &mining)?
                };

                let mut examples = dual_examples(
                    &data.train_questions,
                    &data.labels,
                    &data.collection,
                    Some(&hard),
                )?;
                let mut labels = data.labels.clone();
                let by_id: HashMap<u64, &Question> =
                    subset.iter().map(|q| (q.id, q)).collect();
                for ex in &augmented {
                    let question = by_id[&ex.question_id];
                    let mut hard_negatives = Vec::with_capacity(ex.negative_ids.len());
                    for &pid in &ex.negative_ids {
                        let tokens = data
                            .collection
                            .get(pid)
                            .map(|p| p.tokens.clone())
                            .ok_or_else(|| {
                                Error::invalid(format!("passage {pid} is not in the collection"))
                            })?;
                        hard_negatives.push((pid, tokens));
                    }
                    let positive_tokens = data
                        .collection
                        .get(ex.positive_id)
                        .map(|p| p.tokens.clone())
                        .ok_or_else(|| {
                            Error::invalid(format!(
                                "passage {} is not in the collection",
                                ex.positive_id
                            ))
                        })?;
                    examples.push(crate::training::TrainExample {
                        question_id: ex.question_id,
                        question_tokens: question.tokens.clone(),
                        positive_id: ex.positive_id,
                        positive_tokens,
                        hard_negatives,
                    });
                    labels.insert(
                        ex.question_id,
                        std::collections::BTreeSet::from([ex.positive_id]),
                    );
                }
                train_dual_stage(
                    config,
                    DualTrainData { examples, labels },
                    &config.step4,
                    SEED_INIT_MD2,
                    SEED_TRAIN_MD2,
                    &data.collection,
                    &ckpt_path,
                    &loss_path,
                    &index_path,
                )?
            }
        };
        let (labeled, truth) = evaluate_sweep_point(
            config,
            &data,
            metric,
            &stage.0,
            &stage.1,
            &dir.join(format!("augmented-{fraction}.run.tsv")),
        )?;
        rows.push(SweepRow {
            value: fraction,
            labeled,
            truth,
        });
    }

    let report = SweepReport {
        parameter: "augmented-fraction".to_string(),
        metric,
        rows,
    };
    write_sweep_report(&layout.root().join("sweep_augmented.tsv"), &report)?;
    Ok(report)
}

fn join_values(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes an ablation report: one line per strategy and evaluation target,
/// `strategy<TAB>metric<TAB>target<TAB>median<TAB>per-seed values`.
pub fn write_ablation_report(path: &Path, report: &AblationReport) -> Result<()> {
    let mut out = String::new();
    for row in &report.rows {
        out.push_str(&format!(
            "{}\t{}\tlabeled\t{}\t{}\n",
            row.strategy,
            report.metric,
            row.median_labeled(),
            join_values(&row.labeled),
        ));
        if let Some(median) = row.median_truth() {
            out.push_str(&format!(
                "{}\t{}\ttruth\t{}\t{}\n",
                row.strategy,
                report.metric,
                median,
                join_values(&row.truth),
            ));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One parsed line of an ablation report file.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationFileRow {
    pub strategy: Strategy,
    pub metric: MetricSpec,
    /// `labeled` or `truth`.
    pub target: String,
    pub median: f64,
    pub values: Vec<f64>,
}

pub fn load_ablation_report(path: &Path) -> Result<Vec<AblationFileRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse(path, line_no, "expected 5 tab-separated fields"));
        }
        let strategy = fields[0]
            .parse()
            .map_err(|e| Error::parse(path, line_no, format!("{e}")))?;
        let metric = fields[1]
            .parse()
            .map_err(|e| Error::parse(path, line_no, format!("{e}")))?;
        let target = match fields[2] {
            "labeled" | "truth" => fields[2].to_string(),
            other => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("unknown target '{other}'"),
                ))
            }
        };
        let median: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, line_no, "bad median"))?;
        let values = fields[4]
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| Error::parse(path, line_no, "bad value list"))?;
        rows.push(AblationFileRow {
            strategy,
            metric,
            target,
            median,
            values,
        });
    }
    Ok(rows)
}

/// Writes a sweep report: `parameter<TAB>value<TAB>metric<TAB>labeled` plus
/// a trailing truth column when the data has a truth table.
pub fn write_sweep_report(path: &Path, report: &SweepReport) -> Result<()> {
    let mut out = String::new();
    for row in &report.rows {
        match row.truth {
            Some(truth) => out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                report.parameter, row.value, report.metric, row.labeled, truth,
            )),
            None => out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                report.parameter, row.value, report.metric, row.labeled,
            )),
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::super::tests::read;
    use super::*;
    use crate::corpus::synthetic::SyntheticSpec;
    use crate::pipeline::config::{DataConfig, ModelConfig};
    use tempfile::tempdir;

    fn tiny_ablation(out_dir: &Path) -> AblationConfig {
        let mut pipeline = PipelineConfig::default();
        pipeline.out_dir = out_dir.to_path_buf();
        pipeline.seed = 5;
        pipeline.data = DataConfig::Synthetic(SyntheticSpec {
            seed: 0,
            num_topics: 2,
            passages_per_topic: 12,
            questions_per_topic: 8,
            unlabeled_questions: 6,
            tokens_per_passage: 8,
            unlabeled_positive_rate: 0.5,
        });
        pipeline.model = ModelConfig {
            vocab_size: 64,
            max_question_len: 8,
            max_passage_len: 16,
            d_emb: 8,
            d: 8,
            d_hidden: 4,
        };
        for cfg in [
            &mut pipeline.step1,
            &mut pipeline.step2,
            &mut pipeline.step3,
            &mut pipeline.step4,
        ] {
            cfg.epochs = 2;
            cfg.workers = 2;
            cfg.batch_size = 4;
            cfg.peak_lr = 0.1;
        }
        pipeline.mining = MiningConfig {
            top_k: 10,
            max_negatives_per_question: 4,
            sample_pool: 8,
            ..MiningConfig::default()
        };
        pipeline.eval.run_k = 10;
        pipeline.eval.metrics = crate::eval::parse_metric_list("mrr@10,recall@5").unwrap();
        let mut config = AblationConfig::new(pipeline);
        config.seeds = vec![5, 6];
        config
    }

    #[test]
    fn ablation_covers_every_strategy_and_seed() {
        let dir = tempdir().unwrap();
        let config = tiny_ablation(&dir.path().join("ab"));
        let report = run_ablation(&config).unwrap();
        assert_eq!(report.rows.len(), 5);
        assert_eq!(report.seeds, vec![5, 6]);
        for row in &report.rows {
            assert_eq!(row.labeled.len(), 2, "{}", row.strategy);
            assert_eq!(row.truth.len(), 2, "{}", row.strategy);
            for v in row.labeled.iter().chain(&row.truth) {
                assert!((0.0..=1.0).contains(v));
            }
            assert!(row.median_truth().is_some());
        }
        // Per-seed pipeline directories and the report file exist.
        assert!(seed_dir(&config.pipeline.out_dir, 5).join("step4").is_dir());
        assert!(config.pipeline.out_dir.join("ablation.tsv").exists());

        // Variant artifacts live under the seed's ablation directory.
        let ab = Layout::new(seed_dir(&config.pipeline.out_dir, 5)).ablation_dir();
        for name in [
            "inbatch.ckpt",
            "undenoised.ckpt",
            "undenoised_negatives.tsv",
            "in-batch.run.tsv",
            "augmented.run.tsv",
        ] {
            assert!(ab.join(name).exists(), "missing {name}");
        }
    }

    #[test]
    fn ablation_report_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ablation.tsv");
        let report = AblationReport {
            metric: MetricSpec::Mrr { k: 10 },
            seeds: vec![1, 2, 3],
            rows: vec![
                AblationRow {
                    strategy: Strategy::CrossBatch,
                    labeled: vec![0.5, 0.25, 0.75],
                    truth: vec![0.5, 0.5, 1.0],
                },
                AblationRow {
                    strategy: Strategy::InBatch,
                    labeled: vec![0.25, 0.25, 0.5],
                    truth: vec![],
                },
            ],
        };
        write_ablation_report(&path, &report).unwrap();
        assert_eq!(
            String::from_utf8(read(&path)).unwrap(),
            "cross-batch\tmrr@10\tlabeled\t0.5\t0.5,0.25,0.75\n\
             cross-batch\tmrr@10\ttruth\t0.5\t0.5,0.5,1\n\
             in-batch\tmrr@10\tlabeled\t0.25\t0.25,0.25,0.5\n"
        );
        let rows = load_ablation_report(&path).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].strategy, Strategy::CrossBatch);
        assert_eq!(rows[0].median, 0.5);
        assert_eq!(rows[1].target, "truth");
        assert_eq!(rows[2].values, vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn undenoised_negatives_are_supersets_of_denoised() {
        let dir = tempdir().unwrap();
        let mut config = tiny_ablation(&dir.path().join("ab"));
        config.seeds = vec![5];
        config.strategies = vec![Strategy::HardDenoised, Strategy::HardUndenoised];
        // Enough training that the retriever puts near-duplicates of the
        // answer into the top k and the cross encoder scores some of them
        // above the negative threshold — otherwise there is nothing to
        // filter and the contrast being tested never materializes.
        config.pipeline.step1.epochs = 12;
        config.pipeline.step2.epochs = 12;
        config.pipeline.step2.peak_lr = 0.3;
        run_ablation(&config).unwrap();
        let layout = Layout::new(seed_dir(&config.pipeline.out_dir, 5));
        let denoised = load_hard_negatives(&layout.hard_negatives()).unwrap();
        let undenoised =
            load_hard_negatives(&layout.ablation_dir().join("undenoised_negatives.tsv")).unwrap();
        assert_eq!(denoised.len(), undenoised.len());
        let mut filtered_any = false;
        for (d, u) in denoised.iter().zip(&undenoised) {
            assert_eq!(d.question_id, u.question_id);
            assert!(
                d.negative_ids.iter().all(|id| u.negative_ids.contains(id)),
                "question {}: denoised list is not a subset",
                d.question_id
            );
            filtered_any |= d.negative_ids.len() < u.negative_ids.len();
        }
        assert!(filtered_any, "denoising should remove something on this corpus");
    }

    #[test]
    fn negative_count_sweep_trains_one_model_per_point() {
        let dir = tempdir().unwrap();
        let config = tiny_ablation(&dir.path().join("sweep")).pipeline;
        let report =
            sweep_negative_counts(&config, &[3, 7], MetricSpec::Mrr { k: 10 }).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].value, 3.0);
        assert_eq!(report.rows[1].value, 7.0);
        assert!(report.rows.iter().all(|r| r.truth.is_some()));
        let sweeps = config.out_dir.join("sweeps");
        assert!(sweeps.join("negatives-3.ckpt").exists());
        assert!(sweeps.join("negatives-7.index").exists());
        assert!(config.out_dir.join("sweep_negatives.tsv").exists());

        // Counts that don't divide into whole per-worker batches fail.
        let err = sweep_negative_counts(&config, &[4], MetricSpec::Mrr { k: 10 }).unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn augmented_fraction_sweep_reuses_pipeline_artifacts() {
        let dir = tempdir().unwrap();
        let config = tiny_ablation(&dir.path().join("sweep")).pipeline;
        let report =
            sweep_augmented_fractions(&config, &[0.0, 1.0], MetricSpec::Mrr { k: 10 }).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].value, 0.0);
        assert_eq!(report.rows[1].value, 1.0);
        // Steps 1–3 ran in the same directory.
        let layout = Layout::new(&config.out_dir);
        assert!(layout.md1().exists());
        assert!(!layout.md2().exists(), "the sweep must not run step 4 itself");
        let sweeps = config.out_dir.join("sweeps");
        assert!(sweeps.join("augmented-0.ckpt").exists());
        assert!(sweeps.join("augmented-1.ckpt").exists());

        // Fraction 1.0 with the pipeline's own seeds reproduces what a full
        // STEP 4 run would train: byte-compare against a real steps=4 run
        // in a fresh directory.
        let mut full = config.clone();
        full.out_dir = dir.path().join("full");
        full.steps = 4;
        super::super::run_pipeline(&full).unwrap();
        let lf = Layout::new(&full.out_dir);
        assert_eq!(
            read(&sweeps.join("augmented-1.ckpt")),
            read(&lf.md2()),
            "fraction-1 sweep point should equal the pipeline's md2"
        );
    }

    #[test]
    fn strategy_parsing_round_trips() {
        for s in Strategy::ALL {
            assert_eq!(s.label().parse::<Strategy>().unwrap(), s);
        }
        assert!("warm".parse::<Strategy>().is_err());
        let list = parse_strategy_list("in-batch, cross-batch").unwrap();
        assert_eq!(list, vec![Strategy::InBatch, Strategy::CrossBatch]);
        assert!(parse_strategy_list("").is_err());
    }

    #[test]
    fn median_handles_even_and_odd_lengths() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn config_validation_rejects_duplicates() {
        let dir = tempdir().unwrap();
        let mut config = tiny_ablation(dir.path());
        config.seeds = vec![1, 1];
        assert!(config.validate().is_err());
        config.seeds = vec![1];
        config.strategies = vec![Strategy::InBatch, Strategy::InBatch];
        assert!(config.validate().is_err());
    }
}

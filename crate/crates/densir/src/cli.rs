//! Command-line interface: one subcommand per library operation.
//!
//! Every subcommand reads and writes the documented file formats, so the
//! whole pipeline can be driven step by step from a shell — `gen-data` →
//! `train-dual` → `build-index` → `search` → `train-cross` →
//! `mine-negatives` → `augment` → `evaluate` — or in one shot via
//! `pipeline`. `ablation` runs the strategy comparison and the parameter
//! sweeps.
//!
//! Exit codes: 0 on success, 2 for usage errors (unknown or malformed
//! flags, courtesy of clap), 1 for runtime failures with a one-line
//! diagnostic on stderr.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::io::{
    load_labels, load_passages, load_qrels, load_questions, write_labels, write_passages,
    write_questions,
};
use crate::corpus::synthetic::{generate, SyntheticSpec};
use crate::corpus::{label_map, LabelMap, TokenizerConfig};
use crate::encoder::checkpoint::{load_cross, load_dual, save_cross, save_dual, DualCheckpoint};
use crate::encoder::{CrossDims, CrossEncoderParams, DualDims, DualEncoderParams};
use crate::eval::{evaluate_all, parse_metric_list, write_report, MetricSpec};
use crate::index::{load_run, run_search, write_run, FlatIndex};
use crate::mining::{
    load_hard_negatives, mine_hard_negatives, negative_pools, pseudo_label,
    select_undenoised_negatives, write_augmented, write_denoise_report, write_hard_negatives,
    MiningConfig,
};
use crate::pipeline::ablation::{AblationConfig, Strategy};
use crate::pipeline::{
    self, dual_examples, parse_train_config_file, run_ablation, run_pipeline,
    sweep_augmented_fractions, sweep_negative_counts, PipelineConfig,
};
use crate::seeding::mix_seed;
use crate::training::{
    train_cross, train_dual, write_loss_log, CrossTrainData, CrossTrainQuestion, DualTrainData,
    NegativeScope, TrainConfig,
};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "densir")]
#[command(about = "Dense passage retrieval: train, index, mine, augment, evaluate")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with a hidden truth table
    GenData(GenDataArgs),
    /// Train a dual encoder on labeled questions
    TrainDual(TrainDualArgs),
    /// Train the cross-encoder scorer on labeled positives and retrieved negatives
    TrainCross(TrainCrossArgs),
    /// Encode a passage collection into a flat inner-product index
    BuildIndex(BuildIndexArgs),
    /// Retrieve the top-k passages for each question
    Search(SearchArgs),
    /// Mine denoised hard negatives from the index
    MineNegatives(MineNegativesArgs),
    /// Pseudo-label unlabeled questions as extra training data
    Augment(AugmentArgs),
    /// Score a run file against relevance labels
    Evaluate(EvaluateArgs),
    /// Run the four-step training pipeline end to end
    Pipeline(PipelineArgs),
    /// Compare training strategies over several seeds, or sweep a parameter
    Ablation(AblationArgs),
}

/// Tokenizer settings; must match across every artifact of one corpus.
#[derive(Args, Debug)]
struct TokenizerArgs {
    /// Hashed vocabulary size
    #[arg(long, default_value_t = 4096)]
    vocab_size: u32,
    /// Maximum tokens kept per question
    #[arg(long, default_value_t = 32)]
    max_question_len: usize,
    /// Maximum tokens kept per passage
    #[arg(long, default_value_t = 128)]
    max_passage_len: usize,
}

impl TokenizerArgs {
    fn build(&self) -> TokenizerConfig {
        TokenizerConfig {
            vocab_size: self.vocab_size,
            max_question_len: self.max_question_len,
            max_passage_len: self.max_passage_len,
        }
    }
}

/// Training settings: a key=value file under `--config`, individual flags
/// override file values.
#[derive(Args, Debug)]
struct TrainArgs {
    /// Training settings file (line-oriented key=value)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Simulated data-parallel workers
    #[arg(long)]
    workers: Option<usize>,
    /// Examples per worker per step
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    peak_lr: Option<f64>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    /// Hard negatives per example (dual) or negatives per positive (cross)
    #[arg(long)]
    negatives_per_example: Option<usize>,
    /// Negative scope: in-batch or cross-batch
    #[arg(long, value_parser = parse_scope)]
    scope: Option<NegativeScope>,
    /// Seed for initialization and batch shuffling
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_scope(s: &str) -> std::result::Result<NegativeScope, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl TrainArgs {
    fn build(&self, base: TrainConfig) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => parse_train_config_file(path, base)?,
            None => base,
        };
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.peak_lr {
            cfg.peak_lr = v;
        }
        if let Some(v) = self.warmup_fraction {
            cfg.warmup_fraction = v;
        }
        if let Some(v) = self.negatives_per_example {
            cfg.negatives_per_example = v;
        }
        if let Some(v) = self.scope {
            cfg.scope = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Mining thresholds and sampling settings.
#[derive(Args, Debug)]
struct MiningArgs {
    /// Retrieval depth candidates are drawn from
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    /// Candidates scoring at or above this are dropped as likely positives
    #[arg(long, default_value_t = 0.1)]
    negative_threshold: f64,
    /// A pseudo positive must score strictly above this
    #[arg(long, default_value_t = 0.9)]
    positive_threshold: f64,
    /// Negatives sampled per question
    #[arg(long, default_value_t = 8)]
    max_negatives_per_question: usize,
    /// Sampling draws from the first this-many surviving candidates
    #[arg(long, default_value_t = 8)]
    sample_pool: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl MiningArgs {
    fn build(&self) -> Result<MiningConfig> {
        let config = MiningConfig {
            top_k: self.top_k,
            negative_threshold: self.negative_threshold,
            positive_threshold: self.positive_threshold,
            seed: self.seed,
            max_negatives_per_question: self.max_negatives_per_question,
            sample_pool: self.sample_pool,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Directory the corpus files are written into
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    topics: usize,
    #[arg(long, default_value_t = 200)]
    passages_per_topic: usize,
    /// Labeled questions per topic
    #[arg(long, default_value_t = 50)]
    questions_per_topic: usize,
    /// Unlabeled questions across all topics
    #[arg(long, default_value_t = 500)]
    unlabeled: usize,
    #[arg(long, default_value_t = 24)]
    tokens_per_passage: usize,
    /// Probability weight of near-duplicate cluster growth (ρ)
    #[arg(long, default_value_t = 0.5)]
    duplicate_rate: f64,
    #[command(flatten)]
    tokenizer: TokenizerArgs,
}

#[derive(Args, Debug)]
struct TrainDualArgs {
    #[arg(long)]
    passages: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    /// Relevance labels (qrels TSV)
    #[arg(long)]
    labels: PathBuf,
    /// Mined hard negatives to train against (optional)
    #[arg(long)]
    hard_negatives: Option<PathBuf>,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Per-step loss log output (optional)
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// Token embedding width
    #[arg(long, default_value_t = 32)]
    d_emb: usize,
    /// Retrieval embedding width
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[command(flatten)]
    tokenizer: TokenizerArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct TrainCrossArgs {
    #[arg(long)]
    passages: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    /// Relevance labels (qrels TSV)
    #[arg(long)]
    labels: PathBuf,
    /// Negative pools file (same format as hard negatives)
    #[arg(long, conflicts_with = "run")]
    pools: Option<PathBuf>,
    /// Run file to derive negative pools from (top-k minus labeled positives)
    #[arg(long, required_unless_present = "pools")]
    run: Option<PathBuf>,
    /// Pool depth when deriving from --run
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Per-step loss log output (optional)
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// Token embedding width
    #[arg(long, default_value_t = 32)]
    d_emb: usize,
    /// Hidden layer width
    #[arg(long, default_value_t = 32)]
    d_hidden: usize,
    #[command(flatten)]
    tokenizer: TokenizerArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct BuildIndexArgs {
    /// Dual-encoder checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    passages: PathBuf,
    /// Index output path
    #[arg(long)]
    out: PathBuf,
    /// Maximum tokens kept per passage
    #[arg(long, default_value_t = 128)]
    max_passage_len: usize,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    /// Dual-encoder checkpoint (must be the one the index was built from)
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    /// Results per question
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Run file output path
    #[arg(long)]
    out: PathBuf,
    /// Maximum tokens kept per question
    #[arg(long, default_value_t = 32)]
    max_question_len: usize,
}

#[derive(Args, Debug)]
struct MineNegativesArgs {
    /// Dual-encoder checkpoint (must be the one the index was built from)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cross-encoder checkpoint used for denoising
    #[arg(long, required_unless_present = "no_denoise")]
    cross: Option<PathBuf>,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    /// Relevance labels (qrels TSV)
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    passages: PathBuf,
    /// Hard negatives output path
    #[arg(long)]
    out: PathBuf,
    /// Denoise report output (optional)
    #[arg(long)]
    report: Option<PathBuf>,
    /// Skip the cross-encoder filter (ablation contrast)
    #[arg(long)]
    no_denoise: bool,
    #[command(flatten)]
    tokenizer: TokenizerArgs,
    #[command(flatten)]
    mining: MiningArgs,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Dual-encoder checkpoint (must be the one the index was built from)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cross-encoder checkpoint used for labeling
    #[arg(long)]
    cross: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Unlabeled questions
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    passages: PathBuf,
    /// Augmented examples output path
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tokenizer: TokenizerArgs,
    #[command(flatten)]
    mining: MiningArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Run file to score
    #[arg(long)]
    run: PathBuf,
    /// Relevance labels (qrels TSV)
    #[arg(long)]
    labels: PathBuf,
    /// Comma-separated metric list, e.g. mrr@10,recall@5
    #[arg(long, default_value = "mrr@10,recall@5,recall@100")]
    metrics: String,
    /// Also write the report to this path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Pipeline configuration file (key=value)
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Run only steps 1..=N
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    steps: Option<u8>,
}

#[derive(Args, Debug)]
struct AblationArgs {
    /// Pipeline configuration file (key=value)
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated seeds (default: five consecutive from the config seed)
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated strategy list (default: all five)
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    strategies: Option<Vec<Strategy>>,
    /// Headline metric
    #[arg(long, default_value = "mrr@10", value_parser = parse_metric)]
    metric: MetricSpec,
    /// Sweep batch negatives per question instead (comma-separated counts)
    #[arg(long, value_delimiter = ',')]
    sweep_negatives: Option<Vec<usize>>,
    /// Sweep the fraction of unlabeled data used (comma-separated in [0,1])
    #[arg(long, value_delimiter = ',')]
    sweep_augmented: Option<Vec<f64>>,
}

fn parse_metric(s: &str) -> std::result::Result<MetricSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `argv` and runs the selected subcommand, returning the process
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData(args) => gen_data(args),
        Command::TrainDual(args) => cmd_train_dual(args),
        Command::TrainCross(args) => cmd_train_cross(args),
        Command::BuildIndex(args) => build_index(args),
        Command::Search(args) => search(args),
        Command::MineNegatives(args) => mine_negatives(args),
        Command::Augment(args) => augment(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Ablation(args) => cmd_ablation(args),
    }
}

fn create_parent_dirs(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        seed: args.seed,
        num_topics: args.topics,
        passages_per_topic: args.passages_per_topic,
        questions_per_topic: args.questions_per_topic,
        unlabeled_questions: args.unlabeled,
        tokens_per_passage: args.tokens_per_passage,
        unlabeled_positive_rate: args.duplicate_rate,
    };
    let data = generate(&spec, args.tokenizer.build())?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    write_passages(&args.out_dir.join("passages.tsv"), data.collection.passages())?;
    write_questions(&args.out_dir.join("questions.tsv"), &data.labeled_questions)?;
    write_labels(&args.out_dir.join("qrels.tsv"), &data.qrels)?;
    write_questions(
        &args.out_dir.join("unlabeled_questions.tsv"),
        &data.unlabeled_questions,
    )?;
    write_labels(&args.out_dir.join("truth.tsv"), &data.truth)?;
    println!(
        "wrote {} passages, {} labeled questions, {} unlabeled questions to {}",
        data.collection.passages().len(),
        data.labeled_questions.len(),
        data.unlabeled_questions.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn load_hard_map(path: &Path) -> Result<HashMap<u64, Vec<u64>>> {
    Ok(load_hard_negatives(path)?
        .into_iter()
        .map(|e| (e.question_id, e.negative_ids))
        .collect())
}

fn cmd_train_dual(args: TrainDualArgs) -> Result<()> {
    let config = args.train.build(TrainConfig::default())?;
    let tokenizer = args.tokenizer.build();
    let collection = load_passages(&args.passages, tokenizer)?;
    let questions = load_questions(&args.questions, &tokenizer)?;
    let question_ids = questions.iter().map(|q| q.id).collect();
    let labels = label_map(&load_qrels(&args.labels, &collection, &question_ids)?);
    let hard = match &args.hard_negatives {
        Some(path) => Some(load_hard_map(path)?),
        None => None,
    };
    let examples = dual_examples(&questions, &labels, &collection, hard.as_ref())?;

    let dims = DualDims {
        vocab_size: tokenizer.vocab_size,
        d_emb: args.d_emb,
        d: args.d,
    };
    let init = DualEncoderParams::init(dims, mix_seed(config.seed, 1));
    let outcome = train_dual(init, &DualTrainData { examples, labels }, &config)?;
    if let Some(path) = &args.loss_log {
        create_parent_dirs(path)?;
        write_loss_log(path, &outcome.log)?;
    }
    create_parent_dirs(&args.out)?;
    let fingerprint = save_dual(&args.out, &outcome.params)?;
    println!("saved {} (fingerprint {fingerprint})", args.out.display());
    Ok(())
}

fn cmd_train_cross(args: TrainCrossArgs) -> Result<()> {
    let config = args.train.build(TrainConfig::default())?;
    let tokenizer = args.tokenizer.build();
    let collection = load_passages(&args.passages, tokenizer)?;
    let questions = load_questions(&args.questions, &tokenizer)?;
    let question_ids = questions.iter().map(|q| q.id).collect();
    let labels = label_map(&load_qrels(&args.labels, &collection, &question_ids)?);

    let pools: HashMap<u64, Vec<u64>> = match (&args.pools, &args.run) {
        (Some(path), None) => load_hard_map(path)?,
        (None, Some(path)) => {
            let run = load_run(path)?;
            negative_pools(&run, &labels, args.top_k).into_iter().collect()
        }
        _ => unreachable!("clap enforces exactly one of --pools/--run"),
    };

    let mut train_questions = Vec::with_capacity(questions.len());
    for q in &questions {
        let positives = labels
            .get(&q.id)
            .ok_or_else(|| Error::invalid(format!("question {} has no label entry", q.id)))?;
        train_questions.push(CrossTrainQuestion {
            question_id: q.id,
            question_tokens: q.tokens.clone(),
            positive_ids: positives.iter().copied().collect(),
            negative_pool: pools.get(&q.id).cloned().unwrap_or_default(),
        });
    }

    let dims = CrossDims {
        vocab_size: tokenizer.vocab_size,
        d_emb: args.d_emb,
        d_hidden: args.d_hidden,
    };
    let init = CrossEncoderParams::init(dims, mix_seed(config.seed, 1));
    let outcome = train_cross(
        init,
        &CrossTrainData {
            questions: train_questions,
        },
        &collection,
        &config,
    )?;
    if let Some(path) = &args.loss_log {
        create_parent_dirs(path)?;
        write_loss_log(path, &outcome.log)?;
    }
    create_parent_dirs(&args.out)?;
    let fingerprint = save_cross(&args.out, &outcome.params)?;
    println!("saved {} (fingerprint {fingerprint})", args.out.display());
    Ok(())
}

fn build_index(args: BuildIndexArgs) -> Result<()> {
    let checkpoint = load_dual(&args.checkpoint)?;
    let tokenizer = TokenizerConfig {
        vocab_size: checkpoint.params.dims.vocab_size,
        max_passage_len: args.max_passage_len,
        ..TokenizerConfig::default()
    };
    let collection = load_passages(&args.passages, tokenizer)?;
    create_parent_dirs(&args.out)?;
    FlatIndex::build(&checkpoint, &collection)?.save(&args.out)?;
    println!(
        "indexed {} passages into {}",
        collection.passages().len(),
        args.out.display()
    );
    Ok(())
}

/// Loads an index/checkpoint pair, refusing mismatched fingerprints.
fn load_paired(index: &Path, checkpoint: &Path) -> Result<(FlatIndex, DualCheckpoint)> {
    let index = FlatIndex::load(index)?;
    let checkpoint = load_dual(checkpoint)?;
    if index.fingerprint() != checkpoint.fingerprint {
        return Err(Error::FingerprintMismatch {
            index_fingerprint: index.fingerprint().to_string(),
            checkpoint_fingerprint: checkpoint.fingerprint.clone(),
        });
    }
    Ok((index, checkpoint))
}

fn search(args: SearchArgs) -> Result<()> {
    let (index, checkpoint) = load_paired(&args.index, &args.checkpoint)?;
    let tokenizer = TokenizerConfig {
        vocab_size: checkpoint.params.dims.vocab_size,
        max_question_len: args.max_question_len,
        ..TokenizerConfig::default()
    };
    let questions = load_questions(&args.questions, &tokenizer)?;
    let run = run_search(&index, &checkpoint.params, &questions, args.k as usize)?;
    create_parent_dirs(&args.out)?;
    write_run(&args.out, &run)?;
    println!(
        "searched {} questions at k={} into {}",
        questions.len(),
        args.k,
        args.out.display()
    );
    Ok(())
}

fn mine_negatives(args: MineNegativesArgs) -> Result<()> {
    let config = args.mining.build()?;
    let tokenizer = args.tokenizer.build();
    let collection = load_passages(&args.passages, tokenizer)?;
    let questions = load_questions(&args.questions, &tokenizer)?;
    let question_ids = questions.iter().map(|q| q.id).collect();
    let labels = label_map(&load_qrels(&args.labels, &collection, &question_ids)?);
    let (index, dual) = load_paired(&args.index, &args.checkpoint)?;

    create_parent_dirs(&args.out)?;
    if args.no_denoise {
        let entries = select_undenoised_negatives(&dual, &index, &questions, &labels, &config)?;
        write_hard_negatives(&args.out, &entries)?;
        println!(
            "mined negatives for {} questions into {} (no denoising)",
            entries.len(),
            args.out.display()
        );
        return Ok(());
    }

    let cross_path = args.cross.as_ref().expect("clap requires --cross when denoising");
    let cross = load_cross(cross_path)?;
    let (entries, report) =
        mine_hard_negatives(&dual, &cross, &index, &questions, &labels, &collection, &config)?;
    write_hard_negatives(&args.out, &entries)?;
    if let Some(path) = &args.report {
        create_parent_dirs(path)?;
        write_denoise_report(path, &report)?;
    }
    if report.questions_without_negatives > 0 {
        eprintln!(
            "warning: {} questions were left without negatives after denoising",
            report.questions_without_negatives
        );
    }
    println!(
        "mined negatives for {} questions into {}",
        entries.len(),
        args.out.display()
    );
    Ok(())
}

fn augment(args: AugmentArgs) -> Result<()> {
    let config = args.mining.build()?;
    let tokenizer = args.tokenizer.build();
    let collection = load_passages(&args.passages, tokenizer)?;
    let questions = load_questions(&args.questions, &tokenizer)?;
    let (index, dual) = load_paired(&args.index, &args.checkpoint)?;
    let cross = load_cross(&args.cross)?;
    let augmented = pseudo_label(&dual, &cross, &index, &questions, &collection, &config)?;
    create_parent_dirs(&args.out)?;
    write_augmented(&args.out, &augmented)?;
    println!(
        "pseudo-labeled {} of {} questions into {}",
        augmented.len(),
        questions.len(),
        args.out.display()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let run = load_run(&args.run)?;
    let labels: LabelMap = label_map(&load_labels(&args.labels)?);
    let metrics = parse_metric_list(&args.metrics)?;
    let reports = evaluate_all(&run, &labels, &metrics)?;
    for report in &reports {
        println!(
            "{}\t{}\t{}",
            report.metric, report.mean, report.num_questions
        );
    }
    if let Some(path) = &args.out {
        create_parent_dirs(path)?;
        write_report(path, &reports)?;
    }
    Ok(())
}

fn load_pipeline_config(
    path: &Path,
    out_dir: &Option<PathBuf>,
    seed: Option<u64>,
) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::from_file(path)?;
    if let Some(dir) = out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    let mut config = load_pipeline_config(&args.config, &args.out_dir, args.seed)?;
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    let outcome = run_pipeline(&config)?;
    for step in 1..=config.steps {
        let status = if outcome.ran.contains(&step) {
            "trained"
        } else {
            "reused"
        };
        println!("step{step}: {status}");
    }
    if let Some(count) = outcome.questions_without_negatives {
        if count > 0 {
            eprintln!("warning: {count} questions were left without negatives after denoising");
        }
    }
    for report in &outcome.reports_labeled {
        println!("{}\tlabeled\t{}", report.metric, report.mean);
    }
    for report in &outcome.reports_truth {
        println!("{}\ttruth\t{}", report.metric, report.mean);
    }
    println!("artifacts in {} (fingerprint {})", outcome.out_dir.display(), outcome.fingerprint);
    Ok(())
}

fn cmd_ablation(args: AblationArgs) -> Result<()> {
    let pipeline = load_pipeline_config(&args.config, &args.out_dir, None)?;

    let sweeping = args.sweep_negatives.is_some() || args.sweep_augmented.is_some();
    if sweeping {
        if let Some(counts) = &args.sweep_negatives {
            let report = sweep_negative_counts(&pipeline, counts, args.metric)?;
            for row in &report.rows {
                match row.truth {
                    Some(truth) => println!(
                        "{}\t{}\t{}\tlabeled\t{}\ttruth\t{}",
                        report.parameter, row.value, report.metric, row.labeled, truth
                    ),
                    None => println!(
                        "{}\t{}\t{}\tlabeled\t{}",
                        report.parameter, row.value, report.metric, row.labeled
                    ),
                }
            }
        }
        if let Some(fractions) = &args.sweep_augmented {
            let report = sweep_augmented_fractions(&pipeline, fractions, args.metric)?;
            for row in &report.rows {
                match row.truth {
                    Some(truth) => println!(
                        "{}\t{}\t{}\tlabeled\t{}\ttruth\t{}",
                        report.parameter, row.value, report.metric, row.labeled, truth
                    ),
                    None => println!(
                        "{}\t{}\t{}\tlabeled\t{}",
                        report.parameter, row.value, report.metric, row.labeled
                    ),
                }
            }
        }
        return Ok(());
    }

    let mut config = AblationConfig::new(pipeline);
    config.metric = args.metric;
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    if let Some(strategies) = args.strategies {
        config.strategies = strategies;
    }
    let report = run_ablation(&config)?;
    for row in &report.rows {
        println!(
            "{}\t{}\tlabeled\t{}",
            row.strategy,
            report.metric,
            row.median_labeled()
        );
        if let Some(median) = row.median_truth() {
            println!("{}\t{}\ttruth\t{}", row.strategy, report.metric, median);
        }
    }
    println!(
        "report in {}",
        pipeline::Layout::new(&config.pipeline.out_dir)
            .root()
            .join("ablation.tsv")
            .display()
    );
    Ok(())
}

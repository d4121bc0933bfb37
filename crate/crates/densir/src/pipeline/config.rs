//! Pipeline configuration: typed settings, the line-oriented `key=value`
//! file format, and the canonical fingerprint that guards resumable output
//! directories.
//!
//! A config file holds `key = value` lines (full-line `#` comments and blank
//! lines allowed). Keys are namespaced: bare keys (`seed`, `steps`,
//! `out_dir`), `data.*` for the corpus source, `model.*` for encoder and
//! tokenizer dimensions, `step1.`–`step4.` for the four training stages,
//! `mining.*`, and `eval.*`. Every key is optional; unknown or duplicate
//! keys are errors so typos cannot silently fall back to defaults.
//!
//! The **fingerprint** is a SHA-256 digest of the resolved configuration in
//! a canonical key order. It deliberately excludes `out_dir` (moving a run
//! directory does not invalidate it) and `steps` (running `steps = 1` and
//! later `steps = 4` must reuse the step-1 artifacts, not reject them).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::corpus::synthetic::SyntheticSpec;
use crate::corpus::TokenizerConfig;
use crate::encoder::{CrossDims, DualDims};
use crate::eval::{parse_metric_list, MetricSpec};
use crate::mining::MiningConfig;
use crate::training::TrainConfig;
use crate::{Error, Result};

/// Where the corpus comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataConfig {
    /// Generate a synthetic corpus. The spec's own `seed` field is ignored;
    /// the pipeline derives it from the global seed.
    Synthetic(SyntheticSpec),
    /// Load corpus files in the formats of the corpus module.
    Files {
        passages: PathBuf,
        questions: PathBuf,
        labels: PathBuf,
        /// Unlabeled questions for pseudo-labeling; omit to skip
        /// augmentation input (STEP 4 then trains on labeled data alone).
        unlabeled: Option<PathBuf>,
        /// Hidden truth table for evaluation; omit to evaluate against the
        /// training labels.
        truth: Option<PathBuf>,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticSpec::default())
    }
}

/// Encoder and tokenizer dimensions shared by every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: u32,
    pub max_question_len: usize,
    pub max_passage_len: usize,
    /// Embedding width of both encoders.
    pub d_emb: usize,
    /// Dual-encoder output dimension.
    pub d: usize,
    /// Cross-encoder hidden width.
    pub d_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 4096,
            max_question_len: 32,
            max_passage_len: 128,
            d_emb: 32,
            d: 32,
            d_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig {
            vocab_size: self.vocab_size,
            max_question_len: self.max_question_len,
            max_passage_len: self.max_passage_len,
        }
    }

    pub fn dual_dims(&self) -> DualDims {
        DualDims {
            vocab_size: self.vocab_size,
            d_emb: self.d_emb,
            d: self.d,
        }
    }

    pub fn cross_dims(&self) -> CrossDims {
        CrossDims {
            vocab_size: self.vocab_size,
            d_emb: self.d_emb,
            d_hidden: self.d_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::config("model.vocab_size must be at least 2"));
        }
        if self.max_question_len == 0 || self.max_passage_len == 0 {
            return Err(Error::config("token length limits must be at least 1"));
        }
        if self.d_emb == 0 || self.d == 0 || self.d_hidden == 0 {
            return Err(Error::config("encoder dimensions must be at least 1"));
        }
        Ok(())
    }
}

/// Final-evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub metrics: Vec<MetricSpec>,
    /// Retrieval depth of the final run file.
    pub run_k: usize,
    /// Fraction of labeled questions held out of all training for the final
    /// evaluation. Zero means evaluate on the training questions.
    pub holdout_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: vec![
                MetricSpec::Mrr { k: 10 },
                MetricSpec::Recall { k: 5 },
                MetricSpec::Recall { k: 100 },
            ],
            run_k: 100,
            holdout_fraction: 0.2,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(Error::config("eval.metrics must name at least one metric"));
        }
        if self.run_k == 0 {
            return Err(Error::config("eval.run_k must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config(format!(
                "eval.holdout_fraction must lie in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

/// Everything a pipeline run needs. Per-step seeds are derived from `seed`
/// at run time; the `seed` fields inside the step and mining configs are
/// ignored here.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Run steps `1..=steps` (1 = M_D⁽⁰⁾ only, 4 = full pipeline).
    pub steps: u8,
    pub data: DataConfig,
    pub model: ModelConfig,
    /// STEP 1: dual encoder M_D⁽⁰⁾, batch negatives only.
    pub step1: TrainConfig,
    /// STEP 2: cross encoder M_C on pointwise pairs.
    pub step2: TrainConfig,
    /// STEP 3: dual encoder M_D⁽¹⁾ with denoised hard negatives.
    pub step3: TrainConfig,
    /// STEP 4: dual encoder M_D⁽²⁾ on labeled plus pseudo-labeled data.
    pub step4: TrainConfig,
    pub mining: MiningConfig,
    pub eval: EvalConfig,
}

/// Per-step training defaults. The step-1 config disables hard negatives;
/// the later steps follow the paper's 1-positive-to-4-negatives ratio.
pub fn default_step_config(step: u8) -> TrainConfig {
    let base = TrainConfig {
        epochs: 40,
        workers: 4,
        batch_size: 8,
        peak_lr: 0.03,
        warmup_fraction: 0.1,
        negatives_per_example: 4,
        ..TrainConfig::default()
    };
    match step {
        // The first retriever stops well before convergence: it only has to
        // rank candidate pools for mining, and leaving headroom is what lets
        // the later stages show their gains. It trains purely on batch
        // negatives.
        1 => TrainConfig {
            epochs: 8,
            negatives_per_example: 0,
            ..base
        },
        // The cross encoder saturates its pair classification task in a few
        // passes; training it longer makes it memorize the training pairs
        // and lose the score margin between unlabeled duplicates and true
        // negatives that denoising and pseudo-labeling depend on.
        2 => TrainConfig { epochs: 4, ..base },
        _ => base,
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            out_dir: PathBuf::new(),
            seed: 0,
            steps: 4,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            step1: default_step_config(1),
            step2: default_step_config(2),
            step3: default_step_config(3),
            step4: default_step_config(4),
            mining: MiningConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::config("out_dir is required"));
        }
        if !(1..=4).contains(&self.steps) {
            return Err(Error::config(format!(
                "steps must lie in 1..=4, got {}",
                self.steps
            )));
        }
        if let DataConfig::Synthetic(spec) = &self.data {
            if !(0.0..=1.0).contains(&spec.unlabeled_positive_rate) {
                return Err(Error::config(format!(
                    "data.unlabeled_positive_rate must lie in [0, 1], got {}",
                    spec.unlabeled_positive_rate
                )));
            }
        }
        self.model.validate()?;
        for (name, cfg) in [
            ("step1", &self.step1),
            ("step2", &self.step2),
            ("step3", &self.step3),
            ("step4", &self.step4),
        ] {
            cfg.validate()
                .map_err(|e| Error::config(format!("{name}: {e}")))?;
        }
        self.mining
            .validate()
            .map_err(|e| Error::config(format!("mining: {e}")))?;
        self.eval.validate()
    }

    /// Parses a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_at(&text, path)
    }

    fn from_str_at(text: &str, path: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(text, path)?;
        let mut config = PipelineConfig::default();

        if let Some(dir) = kv.take_raw("out_dir") {
            config.out_dir = PathBuf::from(dir);
        }
        config.seed = kv.take("seed")?.unwrap_or(config.seed);
        config.steps = kv.take("steps")?.unwrap_or(config.steps);

        config.data = take_data(&mut kv)?;
        take_model(&mut kv, &mut config.model)?;
        for (prefix, cfg) in [
            ("step1", &mut config.step1),
            ("step2", &mut config.step2),
            ("step3", &mut config.step3),
            ("step4", &mut config.step4),
        ] {
            take_train(&mut kv, prefix, cfg)?;
        }
        take_mining(&mut kv, &mut config.mining)?;
        take_eval(&mut kv, &mut config.eval)?;

        kv.finish()?;
        Ok(config)
    }

    /// The resolved configuration in canonical form: every fingerprinted
    /// key, fixed order, one `key = value` per line.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        match &self.data {
            DataConfig::Synthetic(spec) => {
                let _ = writeln!(s, "data.source = synthetic");
                let _ = writeln!(s, "data.topics = {}", spec.num_topics);
                let _ = writeln!(s, "data.passages_per_topic = {}", spec.passages_per_topic);
                let _ = writeln!(s, "data.questions_per_topic = {}", spec.questions_per_topic);
                let _ = writeln!(s, "data.unlabeled_questions = {}", spec.unlabeled_questions);
                let _ = writeln!(s, "data.tokens_per_passage = {}", spec.tokens_per_passage);
                let _ = writeln!(
                    s,
                    "data.unlabeled_positive_rate = {}",
                    spec.unlabeled_positive_rate
                );
            }
            DataConfig::Files {
                passages,
                questions,
                labels,
                unlabeled,
                truth,
            } => {
                let _ = writeln!(s, "data.source = files");
                let _ = writeln!(s, "data.passages = {}", passages.display());
                let _ = writeln!(s, "data.questions = {}", questions.display());
                let _ = writeln!(s, "data.labels = {}", labels.display());
                if let Some(p) = unlabeled {
                    let _ = writeln!(s, "data.unlabeled = {}", p.display());
                }
                if let Some(p) = truth {
                    let _ = writeln!(s, "data.truth = {}", p.display());
                }
            }
        }
        let m = &self.model;
        let _ = writeln!(s, "model.vocab_size = {}", m.vocab_size);
        let _ = writeln!(s, "model.max_question_len = {}", m.max_question_len);
        let _ = writeln!(s, "model.max_passage_len = {}", m.max_passage_len);
        let _ = writeln!(s, "model.d_emb = {}", m.d_emb);
        let _ = writeln!(s, "model.d = {}", m.d);
        let _ = writeln!(s, "model.d_hidden = {}", m.d_hidden);
        for (prefix, cfg) in [
            ("step1", &self.step1),
            ("step2", &self.step2),
            ("step3", &self.step3),
            ("step4", &self.step4),
        ] {
            let _ = writeln!(s, "{prefix}.epochs = {}", cfg.epochs);
            let _ = writeln!(s, "{prefix}.workers = {}", cfg.workers);
            let _ = writeln!(s, "{prefix}.batch_size = {}", cfg.batch_size);
            let _ = writeln!(s, "{prefix}.peak_lr = {}", cfg.peak_lr);
            let _ = writeln!(s, "{prefix}.warmup_fraction = {}", cfg.warmup_fraction);
            let _ = writeln!(
                s,
                "{prefix}.negatives_per_example = {}",
                cfg.negatives_per_example
            );
            let _ = writeln!(s, "{prefix}.scope = {}", cfg.scope);
            let _ = writeln!(
                s,
                "{prefix}.include_other_hard_negatives = {}",
                cfg.include_other_hard_negatives
            );
        }
        let mi = &self.mining;
        let _ = writeln!(s, "mining.top_k = {}", mi.top_k);
        let _ = writeln!(s, "mining.negative_threshold = {}", mi.negative_threshold);
        let _ = writeln!(s, "mining.positive_threshold = {}", mi.positive_threshold);
        let _ = writeln!(
            s,
            "mining.max_negatives_per_question = {}",
            mi.max_negatives_per_question
        );
        let _ = writeln!(s, "mining.sample_pool = {}", mi.sample_pool);
        let e = &self.eval;
        let metrics: Vec<String> = e.metrics.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "eval.metrics = {}", metrics.join(","));
        let _ = writeln!(s, "eval.run_k = {}", e.run_k);
        let _ = writeln!(s, "eval.holdout_fraction = {}", e.holdout_fraction);
        s
    }

    /// SHA-256 of [`canonical`](Self::canonical); identifies a run's
    /// artifacts for resume checks.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

/// Parsed `key = value` lines with line numbers, consumed key by key so
/// leftovers can be reported as unknown.
struct KeyValues {
    path: PathBuf,
    entries: HashMap<String, (usize, String)>,
}

impl KeyValues {
    fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries: HashMap<String, (usize, String)> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(path, line_no, "expected 'key = value'")
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(Error::parse(path, line_no, "empty key or value"));
            }
            if let Some((first_line, _)) = entries.get(&key) {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("key '{key}' already set on line {first_line}"),
                ));
            }
            entries.insert(key, (line_no, value));
        }
        Ok(KeyValues {
            path: path.to_path_buf(),
            entries,
        })
    }

    fn take_raw(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, value)) => value.parse().map(Some).map_err(|_| {
                Error::parse(
                    &self.path,
                    line,
                    format!("bad value '{value}' for key '{key}'"),
                )
            }),
        }
    }

    /// Like [`take`](Self::take) but through a fallible converter, for
    /// values with custom parsers.
    fn take_with<T>(
        &mut self,
        key: &str,
        convert: impl FnOnce(&str) -> Result<T>,
    ) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, value)) => convert(&value).map(Some).map_err(|e| {
                Error::parse(
                    &self.path,
                    line,
                    format!("bad value '{value}' for key '{key}': {e}"),
                )
            }),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self
            .entries
            .iter()
            .min_by_key(|(_, (line, _))| *line)
            .map(|(k, v)| (k.clone(), v.clone()))
        {
            return Err(Error::parse(
                &self.path,
                line,
                format!("unknown key '{key}'"),
            ));
        }
        Ok(())
    }
}

fn take_data(kv: &mut KeyValues) -> Result<DataConfig> {
    let source = kv.take_raw("data.source").unwrap_or_else(|| "synthetic".into());
    match source.as_str() {
        "synthetic" => {
            let mut spec = SyntheticSpec::default();
            spec.num_topics = kv.take("data.topics")?.unwrap_or(spec.num_topics);
            spec.passages_per_topic = kv
                .take("data.passages_per_topic")?
                .unwrap_or(spec.passages_per_topic);
            spec.questions_per_topic = kv
                .take("data.questions_per_topic")?
                .unwrap_or(spec.questions_per_topic);
            spec.unlabeled_questions = kv
                .take("data.unlabeled_questions")?
                .unwrap_or(spec.unlabeled_questions);
            spec.tokens_per_passage = kv
                .take("data.tokens_per_passage")?
                .unwrap_or(spec.tokens_per_passage);
            spec.unlabeled_positive_rate = kv
                .take("data.unlabeled_positive_rate")?
                .unwrap_or(spec.unlabeled_positive_rate);
            Ok(DataConfig::Synthetic(spec))
        }
        "files" => {
            let require = |kv: &mut KeyValues, key: &str| -> Result<PathBuf> {
                kv.take_raw(key)
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::config(format!("data.source = files requires {key}")))
            };
            Ok(DataConfig::Files {
                passages: require(kv, "data.passages")?,
                questions: require(kv, "data.questions")?,
                labels: require(kv, "data.labels")?,
                unlabeled: kv.take_raw("data.unlabeled").map(PathBuf::from),
                truth: kv.take_raw("data.truth").map(PathBuf::from),
            })
        }
        other => Err(Error::config(format!(
            "data.source must be 'synthetic' or 'files', got '{other}'"
        ))),
    }
}

fn take_model(kv: &mut KeyValues, model: &mut ModelConfig) -> Result<()> {
    model.vocab_size = kv.take("model.vocab_size")?.unwrap_or(model.vocab_size);
    model.max_question_len = kv
        .take("model.max_question_len")?
        .unwrap_or(model.max_question_len);
    model.max_passage_len = kv
        .take("model.max_passage_len")?
        .unwrap_or(model.max_passage_len);
    model.d_emb = kv.take("model.d_emb")?.unwrap_or(model.d_emb);
    model.d = kv.take("model.d")?.unwrap_or(model.d);
    model.d_hidden = kv.take("model.d_hidden")?.unwrap_or(model.d_hidden);
    Ok(())
}

/// Reads `{prefix}.{field}` keys into `cfg`. Also used with an empty prefix
/// by the CLI's standalone training commands.
fn take_train(kv: &mut KeyValues, prefix: &str, cfg: &mut TrainConfig) -> Result<()> {
    let key = |field: &str| {
        if prefix.is_empty() {
            field.to_string()
        } else {
            format!("{prefix}.{field}")
        }
    };
    cfg.epochs = kv.take(&key("epochs"))?.unwrap_or(cfg.epochs);
    cfg.workers = kv.take(&key("workers"))?.unwrap_or(cfg.workers);
    cfg.batch_size = kv.take(&key("batch_size"))?.unwrap_or(cfg.batch_size);
    cfg.peak_lr = kv.take(&key("peak_lr"))?.unwrap_or(cfg.peak_lr);
    cfg.warmup_fraction = kv
        .take(&key("warmup_fraction"))?
        .unwrap_or(cfg.warmup_fraction);
    cfg.negatives_per_example = kv
        .take(&key("negatives_per_example"))?
        .unwrap_or(cfg.negatives_per_example);
    cfg.scope = kv.take(&key("scope"))?.unwrap_or(cfg.scope);
    cfg.include_other_hard_negatives = kv
        .take(&key("include_other_hard_negatives"))?
        .unwrap_or(cfg.include_other_hard_negatives);
    Ok(())
}

fn take_mining(kv: &mut KeyValues, mining: &mut MiningConfig) -> Result<()> {
    mining.top_k = kv.take("mining.top_k")?.unwrap_or(mining.top_k);
    mining.negative_threshold = kv
        .take("mining.negative_threshold")?
        .unwrap_or(mining.negative_threshold);
    mining.positive_threshold = kv
        .take("mining.positive_threshold")?
        .unwrap_or(mining.positive_threshold);
    mining.max_negatives_per_question = kv
        .take("mining.max_negatives_per_question")?
        .unwrap_or(mining.max_negatives_per_question);
    mining.sample_pool = kv.take("mining.sample_pool")?.unwrap_or(mining.sample_pool);
    Ok(())
}

fn take_eval(kv: &mut KeyValues, eval: &mut EvalConfig) -> Result<()> {
    if let Some(metrics) = kv.take_with("eval.metrics", parse_metric_list)? {
        eval.metrics = metrics;
    }
    eval.run_k = kv.take("eval.run_k")?.unwrap_or(eval.run_k);
    eval.holdout_fraction = kv
        .take("eval.holdout_fraction")?
        .unwrap_or(eval.holdout_fraction);
    Ok(())
}

/// Parses a standalone training config file (unprefixed `key = value`
/// lines) on top of `base`. Used by the CLI's train commands.
pub fn parse_train_config_file(path: &Path, base: TrainConfig) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kv = KeyValues::parse(&text, path)?;
    let mut cfg = base;
    take_train(&mut kv, "", &mut cfg)?;
    kv.finish()?;
    Ok(cfg)
}

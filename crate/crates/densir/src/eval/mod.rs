//! Retrieval quality metrics: MRR@k and Recall@k over run results and
//! binary relevance labels.
//!
//! Relevance is binary membership in the label set for a question;
//! passages retrieved but absent from the labels count as non-relevant.
//! The same code path evaluates against labeled qrels and against a hidden
//! truth table — they differ only in which label file is supplied.
//!
//! Report files are TSV `metric<TAB>k<TAB>value<TAB>num_questions`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::corpus::LabelMap;
use crate::index::RunResult;
use crate::{Error, Result};

/// A metric request: which statistic at which cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricSpec {
    /// Mean reciprocal rank of the first relevant passage in the top k.
    Mrr { k: usize },
    /// Fraction of questions with at least one relevant passage in the top k.
    Recall { k: usize },
}

impl MetricSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MetricSpec::Mrr { .. } => "mrr",
            MetricSpec::Recall { .. } => "recall",
        }
    }

    pub fn k(&self) -> usize {
        match self {
            MetricSpec::Mrr { k } | MetricSpec::Recall { k } => *k,
        }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name(), self.k())
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    /// Accepts `mrr@K`, `recall@K`, and the shorthand `r@K`,
    /// case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, k_str) = lower.split_once('@').ok_or_else(|| {
            Error::invalid(format!("metric '{s}' must look like 'mrr@10' or 'recall@50'"))
        })?;
        let k: usize = k_str
            .parse()
            .map_err(|_| Error::invalid(format!("metric '{s}' has invalid cutoff '{k_str}'")))?;
        if k == 0 {
            return Err(Error::invalid(format!("metric '{s}' has cutoff 0, need k >= 1")));
        }
        match name {
            "mrr" => Ok(MetricSpec::Mrr { k }),
            "recall" | "r" => Ok(MetricSpec::Recall { k }),
            other => Err(Error::invalid(format!(
                "unknown metric '{other}' (expected 'mrr' or 'recall')"
            ))),
        }
    }
}

/// Parses a comma-separated metric list such as `mrr@10,r@5,recall@50`.
pub fn parse_metric_list(s: &str) -> Result<Vec<MetricSpec>> {
    let specs: Vec<MetricSpec> = s
        .split(',')
        .filter(|part| !part.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if specs.is_empty() {
        return Err(Error::invalid("metric list is empty"));
    }
    Ok(specs)
}

/// One evaluated metric: per-question values and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: MetricSpec,
    /// `(question_id, value)` sorted by ascending question id.
    pub per_question: Vec<(u64, f64)>,
    /// Arithmetic mean of the per-question values.
    pub mean: f64,
    pub num_questions: usize,
}

/// Evaluates one metric over the run. Every run question must have a label
/// entry; question order in the run does not affect the result.
pub fn evaluate(run: &[RunResult], labels: &LabelMap, metric: MetricSpec) -> Result<EvalReport> {
    if run.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty run"));
    }
    let mut seen = HashSet::with_capacity(run.len());
    let mut per_question = Vec::with_capacity(run.len());
    for res in run {
        if !seen.insert(res.question_id) {
            return Err(Error::invalid(format!(
                "question {} appears twice in the run",
                res.question_id
            )));
        }
        let relevant = labels.get(&res.question_id).ok_or_else(|| {
            Error::invalid(format!(
                "question {} appears in the run but has no relevance labels",
                res.question_id
            ))
        })?;
        let top = &res.hits[..res.hits.len().min(metric.k())];
        let value = match metric {
            MetricSpec::Mrr { .. } => top
                .iter()
                .position(|h| relevant.contains(&h.passage_id))
                .map_or(0.0, |i| 1.0 / (i + 1) as f64),
            MetricSpec::Recall { .. } => {
                if top.iter().any(|h| relevant.contains(&h.passage_id)) {
                    1.0
                } else {
                    0.0
                }
            }
        };
        per_question.push((res.question_id, value));
    }

    // Mean over ascending question id, so the aggregate is bit-identical
    // regardless of run-file ordering.
    per_question.sort_unstable_by_key(|&(qid, _)| qid);
    let mut sum = 0.0;
    for &(_, v) in &per_question {
        sum += v;
    }
    let num_questions = per_question.len();
    Ok(EvalReport {
        metric,
        mean: sum / num_questions as f64,
        per_question,
        num_questions,
    })
}

/// Evaluates several metrics over one run.
pub fn evaluate_all(
    run: &[RunResult],
    labels: &LabelMap,
    metrics: &[MetricSpec],
) -> Result<Vec<EvalReport>> {
    metrics.iter().map(|&m| evaluate(run, labels, m)).collect()
}

/// Writes reports as TSV `metric<TAB>k<TAB>value<TAB>num_questions`,
/// byte-deterministic.
pub fn write_report(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.metric.name(),
            r.metric.k(),
            r.mean,
            r.num_questions
        ));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One row of a report file (aggregates only — per-question values are not
/// persisted).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: MetricSpec,
    pub value: f64,
    pub num_questions: usize,
}

/// Reads a report file written by [`write_report`].
pub fn load_report(path: &Path) -> Result<Vec<ReportRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                "expected 'metric<TAB>k<TAB>value<TAB>num_questions'",
            ));
        }
        let metric: MetricSpec = format!("{}@{}", fields[0], fields[1])
            .parse()
            .map_err(|e| Error::parse(path, lineno, format!("{e}")))?;
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("invalid value '{}'", fields[2])))?;
        let num_questions: usize = fields[3].parse().map_err(|_| {
            Error::parse(path, lineno, format!("invalid question count '{}'", fields[3]))
        })?;
        rows.push(ReportRow {
            metric,
            value,
            num_questions,
        });
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "report file is empty"));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::SearchHit;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn run_of(qid: u64, pids: &[u64]) -> RunResult {
        RunResult {
            question_id: qid,
            hits: pids
                .iter()
                .enumerate()
                .map(|(i, &pid)| SearchHit {
                    passage_id: pid,
                    score: 10.0 - i as f64,
                })
                .collect(),
        }
    }

    fn labels_of(entries: &[(u64, &[u64])]) -> LabelMap {
        entries
            .iter()
            .map(|&(qid, pids)| (qid, pids.iter().copied().collect::<BTreeSet<u64>>()))
            .collect()
    }

    #[test]
    fn metric_parsing_round_trips() {
        assert_eq!("mrr@10".parse::<MetricSpec>().unwrap(), MetricSpec::Mrr { k: 10 });
        assert_eq!("MRR@10".parse::<MetricSpec>().unwrap(), MetricSpec::Mrr { k: 10 });
        assert_eq!("r@50".parse::<MetricSpec>().unwrap(), MetricSpec::Recall { k: 50 });
        assert_eq!(
            "recall@5".parse::<MetricSpec>().unwrap(),
            MetricSpec::Recall { k: 5 }
        );
        assert_eq!(MetricSpec::Mrr { k: 10 }.to_string(), "mrr@10");
        assert_eq!(MetricSpec::Recall { k: 5 }.to_string(), "recall@5");

        for bad in ["mrr", "map@10", "mrr@0", "mrr@x", ""] {
            assert!(bad.parse::<MetricSpec>().is_err(), "{bad}");
        }

        let list = parse_metric_list("mrr@10, r@5,recall@50").unwrap();
        assert_eq!(list.len(), 3);
        assert!(parse_metric_list("").is_err());
    }

    #[test]
    fn first_relevant_at_rank_three_scores_one_third() {
        let run = vec![run_of(1, &[50, 51, 52, 53])];
        let labels = labels_of(&[(1, &[52])]);
        let report = evaluate(&run, &labels, MetricSpec::Mrr { k: 10 }).unwrap();
        assert_eq!(report.mean, 1.0 / 3.0);
        assert_eq!(report.per_question, vec![(1, 1.0 / 3.0)]);
    }

    #[test]
    fn relevant_below_cutoff_scores_zero() {
        // Relevant passage at rank 11 with k=10.
        let pids: Vec<u64> = (0..11).collect();
        let run = vec![run_of(1, &pids)];
        let labels = labels_of(&[(1, &[10])]);
        let mrr = evaluate(&run, &labels, MetricSpec::Mrr { k: 10 }).unwrap();
        assert_eq!(mrr.mean, 0.0);
        let recall = evaluate(&run, &labels, MetricSpec::Recall { k: 10 }).unwrap();
        assert_eq!(recall.mean, 0.0);
        // At k=11 both see it.
        let mrr11 = evaluate(&run, &labels, MetricSpec::Mrr { k: 11 }).unwrap();
        assert_eq!(mrr11.mean, 1.0 / 11.0);
    }

    #[test]
    fn mean_of_ranks_one_and_two_is_three_quarters() {
        let run = vec![run_of(1, &[7, 8]), run_of(2, &[7, 8])];
        let labels = labels_of(&[(1, &[7]), (2, &[8])]);
        let report = evaluate(&run, &labels, MetricSpec::Mrr { k: 10 }).unwrap();
        assert_eq!(report.mean, 0.75);
    }

    #[test]
    fn recall_counts_question_fraction() {
        // 3 questions, relevant found in top-5 for 2 of them -> 2/3.
        let run = vec![
            run_of(1, &[10, 11, 12, 13, 14]),
            run_of(2, &[20, 21, 22, 23, 24]),
            run_of(3, &[30, 31, 32, 33, 34]),
        ];
        let labels = labels_of(&[(1, &[12]), (2, &[99]), (3, &[34])]);
        let report = evaluate(&run, &labels, MetricSpec::Recall { k: 5 }).unwrap();
        assert_eq!(report.mean, 2.0 / 3.0);
        assert_eq!(
            report.per_question,
            vec![(1, 1.0), (2, 0.0), (3, 1.0)]
        );
    }

    #[test]
    fn identity_run_scores_one_everywhere() {
        let run = vec![run_of(1, &[10]), run_of(2, &[20])];
        let labels = labels_of(&[(1, &[10]), (2, &[20])]);
        for metric in [MetricSpec::Mrr { k: 10 }, MetricSpec::Recall { k: 1 }] {
            let report = evaluate(&run, &labels, metric).unwrap();
            assert_eq!(report.mean, 1.0, "{metric}");
        }
    }

    #[test]
    fn question_order_does_not_change_the_report() {
        let forward = vec![run_of(1, &[10, 11]), run_of(2, &[11, 10]), run_of(3, &[12])];
        let backward: Vec<RunResult> = forward.iter().rev().cloned().collect();
        let labels = labels_of(&[(1, &[11]), (2, &[11]), (3, &[99])]);
        let a = evaluate(&forward, &labels, MetricSpec::Mrr { k: 10 }).unwrap();
        let b = evaluate(&backward, &labels, MetricSpec::Mrr { k: 10 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_labels_and_duplicates_are_errors() {
        let run = vec![run_of(1, &[10])];
        let labels = labels_of(&[(2, &[10])]);
        let err = evaluate(&run, &labels, MetricSpec::Mrr { k: 10 }).unwrap_err();
        assert!(err.to_string().contains("no relevance labels"), "{err}");

        let dup = vec![run_of(1, &[10]), run_of(1, &[11])];
        let labels = labels_of(&[(1, &[10])]);
        let err = evaluate(&dup, &labels, MetricSpec::Mrr { k: 10 }).unwrap_err();
        assert!(err.to_string().contains("appears twice"), "{err}");

        assert!(evaluate(&[], &labels, MetricSpec::Mrr { k: 10 }).is_err());
    }

    #[test]
    fn report_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.tsv");
        let run = vec![run_of(1, &[50, 51, 52, 53])];
        let labels = labels_of(&[(1, &[52])]);
        let reports = evaluate_all(
            &run,
            &labels,
            &[MetricSpec::Mrr { k: 10 }, MetricSpec::Recall { k: 2 }],
        )
        .unwrap();
        write_report(&path, &reports).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("mrr\t10\t{}\t1\nrecall\t2\t0\t1\n", 1.0 / 3.0));

        let rows = load_report(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].metric, MetricSpec::Mrr { k: 10 });
        assert_eq!(rows[0].value, 1.0 / 3.0);
        assert_eq!(rows[1].metric, MetricSpec::Recall { k: 2 });
        assert_eq!(rows[1].value, 0.0);
    }

    #[test]
    fn report_loader_rejects_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.tsv");
        for (content, needle) in [
            ("", "empty"),
            ("mrr\t10\t0.5\n", "expected"),
            ("map\t10\t0.5\t3\n", "unknown metric"),
            ("mrr\t10\tx\t3\n", "invalid value"),
            ("mrr\t10\t0.5\tx\n", "invalid question count"),
        ] {
            fs::write(&path, content).unwrap();
            let err = load_report(&path).unwrap_err();
            assert!(err.to_string().contains(needle), "content {content:?}: {err}");
        }
    }

    proptest! {
        /// For any run and labels, MRR@k <= Recall@k per question and in
        /// aggregate, and both are non-decreasing in k.
        #[test]
        fn mrr_bounded_by_recall_and_monotone_in_k(
            seed in 0u64..500,
            n_questions in 1usize..8,
            depth in 1usize..12,
        ) {
            use rand::Rng;
            let mut rng = crate::seeding::rng(seed);
            let mut run = Vec::new();
            let mut labels = LabelMap::new();
            for qid in 0..n_questions as u64 {
                let mut pids: Vec<u64> = (0..depth as u64).map(|i| qid * 100 + i).collect();
                // Random relevant subset, possibly empty.
                let mut relevant = BTreeSet::new();
                for &pid in &pids {
                    if rng.gen_bool(0.3) {
                        relevant.insert(pid);
                    }
                }
                // Sometimes a relevant passage the run never retrieves.
                if rng.gen_bool(0.5) {
                    relevant.insert(qid * 100 + 99);
                }
                // Shuffle retrieval order.
                for i in (1..pids.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    pids.swap(i, j);
                }
                run.push(run_of(qid, &pids));
                labels.insert(qid, relevant);
            }

            let mut prev_mrr = 0.0;
            let mut prev_recall = 0.0;
            for k in 1..=depth + 2 {
                let mrr = evaluate(&run, &labels, MetricSpec::Mrr { k }).unwrap();
                let recall = evaluate(&run, &labels, MetricSpec::Recall { k }).unwrap();
                for (m, r) in mrr.per_question.iter().zip(recall.per_question.iter()) {
                    prop_assert!(m.1 <= r.1 + 1e-15);
                    prop_assert!((0.0..=1.0).contains(&m.1));
                    prop_assert!((0.0..=1.0).contains(&r.1));
                }
                prop_assert!(mrr.mean <= recall.mean + 1e-15);
                prop_assert!(mrr.mean + 1e-15 >= prev_mrr);
                prop_assert!(recall.mean + 1e-15 >= prev_recall);
                prev_mrr = mrr.mean;
                prev_recall = recall.mean;
            }
        }
    }
}

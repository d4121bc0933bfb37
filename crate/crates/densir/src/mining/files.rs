//! On-disk formats for mining outputs.
//!
//! All three files are headerless TSV, one record per line, ordered by
//! ascending question id (or ascending bucket for the denoising report):
//!
//! * hard negatives: `question_id \t comma-separated-passage-ids` — the id
//!   list may be empty;
//! * augmented examples: `question_id \t positive_id \t
//!   comma-separated-negative-ids \t positive_score`;
//! * denoising report: `lo-hi \t candidates \t filtered \t fraction`.
//!
//! Scores are printed with Rust's shortest round-trip float formatting, so
//! a write/load cycle reproduces the in-memory values exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{AugmentedExample, DenoiseBucket, DenoiseReport, HardNegativeEntry};
use crate::{Error, Result};

fn join_ids(ids: &[u64]) -> String {
    let mut out = String::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&id.to_string());
    }
    out
}

fn parse_ids(path: &Path, line_no: usize, field: &str) -> Result<Vec<u64>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for part in field.split(',') {
        let id: u64 = part.parse().map_err(|_| {
            Error::parse(path, line_no, format!("bad passage id {part:?}"))
        })?;
        if ids.contains(&id) {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate passage id {id}"),
            ));
        }
        ids.push(id);
    }
    Ok(ids)
}

fn check_ascending(path: &Path, line_no: usize, prev: Option<u64>, qid: u64) -> Result<()> {
    if let Some(p) = prev {
        if qid <= p {
            return Err(Error::parse(
                path,
                line_no,
                format!("question id {qid} out of order after {p}"),
            ));
        }
    }
    Ok(())
}

pub fn write_hard_negatives(path: &Path, entries: &[HardNegativeEntry]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        writeln!(w, "{}\t{}", e.question_id, join_ids(&e.negative_ids))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_hard_negatives(path: &Path) -> Result<Vec<HardNegativeEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut prev = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 2 tab-separated fields, got {}", fields.len()),
            ));
        }
        let qid: u64 = fields[0].parse().map_err(|_| {
            Error::parse(path, line_no, format!("bad question id {:?}", fields[0]))
        })?;
        check_ascending(path, line_no, prev, qid)?;
        prev = Some(qid);
        entries.push(HardNegativeEntry {
            question_id: qid,
            negative_ids: parse_ids(path, line_no, fields[1])?,
        });
    }
    Ok(entries)
}

pub fn write_augmented(path: &Path, examples: &[AugmentedExample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            ex.question_id,
            ex.positive_id,
            join_ids(&ex.negative_ids),
            ex.positive_score
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_augmented(path: &Path) -> Result<Vec<AugmentedExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    let mut prev = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let qid: u64 = fields[0].parse().map_err(|_| {
            Error::parse(path, line_no, format!("bad question id {:?}", fields[0]))
        })?;
        check_ascending(path, line_no, prev, qid)?;
        prev = Some(qid);
        let positive_id: u64 = fields[1].parse().map_err(|_| {
            Error::parse(path, line_no, format!("bad positive id {:?}", fields[1]))
        })?;
        let negative_ids = parse_ids(path, line_no, fields[2])?;
        if negative_ids.contains(&positive_id) {
            return Err(Error::parse(
                path,
                line_no,
                format!("positive {positive_id} listed among its own negatives"),
            ));
        }
        let positive_score: f64 = fields[3].parse().map_err(|_| {
            Error::parse(path, line_no, format!("bad score {:?}", fields[3]))
        })?;
        if !(positive_score > 0.0 && positive_score <= 1.0) {
            return Err(Error::parse(
                path,
                line_no,
                format!("score {positive_score} outside (0, 1]"),
            ));
        }
        examples.push(AugmentedExample {
            question_id: qid,
            positive_id,
            negative_ids,
            positive_score,
        });
    }
    Ok(examples)
}

pub fn write_denoise_report(path: &Path, report: &DenoiseReport) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for b in &report.buckets {
        writeln!(
            w,
            "{}-{}\t{}\t{}\t{}",
            b.lo,
            b.hi,
            b.candidates,
            b.filtered,
            b.fraction()
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads back the per-bucket rows of a denoising report. The
/// questions-without-negatives count is surfaced at mining time, not
/// stored in the file.
pub fn load_denoise_report(path: &Path) -> Result<Vec<DenoiseBucket>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut buckets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let (lo_s, hi_s) = fields[0].split_once('-').ok_or_else(|| {
            Error::parse(path, line_no, format!("bad rank bucket {:?}", fields[0]))
        })?;
        let lo: usize = lo_s.parse().map_err(|_| {
            Error::parse(path, line_no, format!("bad bucket start {lo_s:?}"))
        })?;
        let hi: usize = hi_s.parse().map_err(|_| {
            Error::parse(path, line_no, format!("bad bucket end {hi_s:?}"))
        })?;
        if lo == 0 || hi < lo {
            return Err(Error::parse(
                path,
                line_no,
                format!("bucket {lo}-{hi} is not a valid 1-based rank range"),
            ));
        }
        let candidates: usize = fields[1].parse().map_err(|_| {
            Error::parse(path, line_no, format!("bad candidate count {:?}", fields[1]))
        })?;
        let filtered: usize = fields[2].parse().map_err(|_| {
            Error::parse(path, line_no, format!("bad filtered count {:?}", fields[2]))
        })?;
        if filtered > candidates {
            return Err(Error::parse(
                path,
                line_no,
                format!("filtered {filtered} exceeds candidates {candidates}"),
            ));
        }
        let fraction: f64 = fields[3].parse().map_err(|_| {
            Error::parse(path, line_no, format!("bad fraction {:?}", fields[3]))
        })?;
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::parse(
                path,
                line_no,
                format!("fraction {fraction} outside [0, 1]"),
            ));
        }
        buckets.push(DenoiseBucket {
            lo,
            hi,
            candidates,
            filtered,
        });
    }
    Ok(buckets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn entry(qid: u64, ids: &[u64]) -> HardNegativeEntry {
        HardNegativeEntry {
            question_id: qid,
            negative_ids: ids.to_vec(),
        }
    }

    #[test]
    fn hard_negatives_round_trip_with_exact_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("hn.tsv");
        let entries = vec![entry(1, &[5, 3, 9]), entry(2, &[]), entry(7, &[4])];
        write_hard_negatives(&path, &entries).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "1\t5,3,9\n2\t\n7\t4\n"
        );
        assert_eq!(load_hard_negatives(&path).unwrap(), entries);
    }

    #[test]
    fn hard_negative_loader_rejects_malformed_files() {
        let dir = tempdir().unwrap();
        let cases = [
            ("three\tfields\there", "field count"),
            ("x\t1,2", "bad qid"),
            ("1\t1,x", "bad pid"),
            ("1\t2,2", "duplicate pid"),
            ("2\t1\n1\t3", "descending qid"),
            ("2\t1\n2\t3", "duplicate qid"),
        ];
        for (i, (text, what)) in cases.iter().enumerate() {
            let path = dir.path().join(format!("bad{i}.tsv"));
            fs::write(&path, format!("{text}\n")).unwrap();
            assert!(load_hard_negatives(&path).is_err(), "{what}");
        }
    }

    #[test]
    fn augmented_round_trip_with_exact_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("aug.tsv");
        let examples = vec![
            AugmentedExample {
                question_id: 3,
                positive_id: 11,
                negative_ids: vec![2, 8],
                positive_score: 0.96875,
            },
            AugmentedExample {
                question_id: 5,
                positive_id: 1,
                negative_ids: vec![],
                positive_score: 0.953,
            },
        ];
        write_augmented(&path, &examples).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "3\t11\t2,8\t0.96875\n5\t1\t\t0.953\n"
        );
        assert_eq!(load_augmented(&path).unwrap(), examples);
    }

    #[test]
    fn augmented_loader_rejects_malformed_files() {
        let dir = tempdir().unwrap();
        let cases = [
            ("1\t2\t3", "field count"),
            ("1\t2\t3,4\tnan", "non-numeric score parses as NaN"),
            ("1\t2\t3\t1.5", "score above one"),
            ("1\t2\t3\t0", "score zero"),
            ("1\t2\t2,4\t0.95", "positive among negatives"),
            ("5\t2\t\t0.95\n4\t3\t\t0.95", "descending qid"),
        ];
        for (i, (text, what)) in cases.iter().enumerate() {
            let path = dir.path().join(format!("bad{i}.tsv"));
            fs::write(&path, format!("{text}\n")).unwrap();
            assert!(load_augmented(&path).is_err(), "{what}");
        }
    }

    #[test]
    fn denoise_report_round_trips_and_formats_fractions() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("report.tsv");
        let report = DenoiseReport {
            buckets: vec![
                DenoiseBucket { lo: 1, hi: 10, candidates: 8, filtered: 4 },
                DenoiseBucket { lo: 11, hi: 20, candidates: 0, filtered: 0 },
            ],
            questions_without_negatives: 3,
        };
        write_denoise_report(&path, &report).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "1-10\t8\t4\t0.5\n11-20\t0\t0\t0\n"
        );
        assert_eq!(load_denoise_report(&path).unwrap(), report.buckets);
    }

    #[test]
    fn denoise_loader_rejects_malformed_files() {
        let dir = tempdir().unwrap();
        let cases = [
            ("1-10\t8\t4", "field count"),
            ("10\t8\t4\t0.5", "missing dash"),
            ("0-10\t8\t4\t0.5", "zero-based bucket"),
            ("10-1\t8\t4\t0.5", "inverted bucket"),
            ("1-10\t4\t8\t0.5", "filtered exceeds candidates"),
            ("1-10\t8\t4\t1.5", "fraction above one"),
        ];
        for (i, (text, what)) in cases.iter().enumerate() {
            let path = dir.path().join(format!("bad{i}.tsv"));
            fs::write(&path, format!("{text}\n")).unwrap();
            assert!(load_denoise_report(&path).is_err(), "{what}");
        }
    }

    #[test]
    fn empty_files_load_as_empty() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.tsv");
        fs::write(&path, "").unwrap();
        assert!(load_hard_negatives(&path).unwrap().is_empty());
        assert!(load_augmented(&path).unwrap().is_empty());
        assert!(load_denoise_report(&path).unwrap().is_empty());
    }
}

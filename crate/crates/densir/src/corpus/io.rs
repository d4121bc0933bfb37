//! Line-oriented TSV readers and writers for corpus artifacts.
//!
//! * passages / questions: `id<TAB>text`
//! * relevance labels (qrels, hidden truth tables, mined hard negatives):
//!   `question_id<TAB>comma-separated passage ids`
//!
//! Readers are strict — blank lines, duplicate ids, unparsable numbers and
//! dangling references are errors that name the file and 1-based line — so
//! that a corrupt artifact fails loudly instead of skewing a run. Writers
//! emit `\n` line endings and sets in ascending id order, making files
//! byte-deterministic for identical inputs.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Collection, Passage, QRel, Question, TokenizerConfig};
use crate::{Error, Result};

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        lines.push(line.map_err(|e| Error::io(path, e))?);
    }
    Ok(lines)
}

fn parse_u64(path: &Path, line_no: usize, field: &str, what: &str) -> Result<u64> {
    field
        .parse::<u64>()
        .map_err(|_| Error::parse(path, line_no, format!("invalid {what} '{field}'")))
}

/// Parses one `id<TAB>text` record per line.
fn load_id_text(path: &Path, what: &str) -> Result<Vec<(u64, String)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            return Err(Error::parse(path, line_no, "empty line"));
        }
        let (id_field, text) = line.split_once('\t').ok_or_else(|| {
            Error::parse(path, line_no, format!("expected '{what}_id<TAB>text'"))
        })?;
        let id = parse_u64(path, line_no, id_field, &format!("{what} id"))?;
        if !seen.insert(id) {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate {what} id {id}"),
            ));
        }
        out.push((id, text.to_string()));
    }
    Ok(out)
}

/// Loads and tokenizes a passage file into a [`Collection`].
pub fn load_passages(path: &Path, tokenizer: TokenizerConfig) -> Result<Collection> {
    let mut passages = Vec::new();
    for (id, text) in load_id_text(path, "passage")? {
        let tokens = tokenizer.tokenize_passage(&text);
        if tokens.is_empty() {
            return Err(Error::invalid(format!(
                "{}: passage {id} has no tokens after tokenization",
                path.display()
            )));
        }
        passages.push(Passage { id, text, tokens });
    }
    Collection::new(passages, tokenizer)
}

/// Loads and tokenizes a question file.
pub fn load_questions(path: &Path, tokenizer: &TokenizerConfig) -> Result<Vec<Question>> {
    let mut questions = Vec::new();
    for (id, text) in load_id_text(path, "question")? {
        let tokens = tokenizer.tokenize_question(&text);
        if tokens.is_empty() {
            return Err(Error::invalid(format!(
                "{}: question {id} has no tokens after tokenization",
                path.display()
            )));
        }
        questions.push(Question { id, text, tokens });
    }
    Ok(questions)
}

/// Parses a label file (`question_id<TAB>comma-separated passage ids`)
/// without referential checks. Used for evaluation inputs, where labels may
/// mention questions or passages outside the current working set.
pub fn load_labels(path: &Path) -> Result<Vec<QRel>> {
    let mut out: Vec<QRel> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            return Err(Error::parse(path, line_no, "empty line"));
        }
        let (qid_field, ids_field) = line.split_once('\t').ok_or_else(|| {
            Error::parse(
                path,
                line_no,
                "expected 'question_id<TAB>comma-separated passage ids'",
            )
        })?;
        let question_id = parse_u64(path, line_no, qid_field, "question id")?;
        if !seen.insert(question_id) {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate question id {question_id}"),
            ));
        }
        let mut positive_ids = BTreeSet::new();
        for field in ids_field.split(',') {
            let pid = parse_u64(path, line_no, field, "passage id")?;
            if !positive_ids.insert(pid) {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("passage id {pid} listed twice"),
                ));
            }
        }
        if positive_ids.is_empty() {
            return Err(Error::parse(path, line_no, "no passage ids"));
        }
        out.push(QRel {
            question_id,
            positive_ids,
        });
    }
    Ok(out)
}

/// Loads relevance labels and verifies referential integrity: every passage
/// id must exist in `collection` and every question id in `question_ids`.
pub fn load_qrels(
    path: &Path,
    collection: &Collection,
    question_ids: &HashSet<u64>,
) -> Result<Vec<QRel>> {
    let qrels = load_labels(path)?;
    for (i, qrel) in qrels.iter().enumerate() {
        let line_no = i + 1;
        if !question_ids.contains(&qrel.question_id) {
            return Err(Error::parse(
                path,
                line_no,
                format!("unknown question id {}", qrel.question_id),
            ));
        }
        for &pid in &qrel.positive_ids {
            if !collection.contains(pid) {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("unknown passage id {pid}"),
                ));
            }
        }
    }
    Ok(qrels)
}

fn open_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_id_text(path: &Path, records: impl Iterator<Item = (u64, String)>) -> Result<()> {
    let mut w = open_writer(path)?;
    for (id, text) in records {
        debug_assert!(
            !text.contains('\t') && !text.contains('\n'),
            "text fields must not contain tabs or newlines"
        );
        writeln!(w, "{id}\t{text}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_passages(path: &Path, passages: &[Passage]) -> Result<()> {
    write_id_text(path, passages.iter().map(|p| (p.id, p.text.clone())))
}

pub fn write_questions(path: &Path, questions: &[Question]) -> Result<()> {
    write_id_text(path, questions.iter().map(|q| (q.id, q.text.clone())))
}

/// Writes a label file; ids within a question are emitted in ascending order.
pub fn write_labels(path: &Path, qrels: &[QRel]) -> Result<()> {
    let mut w = open_writer(path)?;
    for qrel in qrels {
        let ids: Vec<String> = qrel.positive_ids.iter().map(u64::to_string).collect();
        writeln!(w, "{}\t{}", qrel.question_id, ids.join(","))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

//! Exact maximum-inner-product retrieval over a flat matrix of passage
//! embeddings.
//!
//! The index is a dense `M × d` matrix with an aligned, strictly ascending
//! passage id list. Search is an exhaustive scan — every query is scored
//! against every row in double precision and ranked by descending dot
//! product with ties broken by ascending id — so results are exactly
//! reproducible and directly checkable against a brute-force oracle.
//!
//! On disk the matrix is stored in single precision; in memory it stays
//! double. The byte layout (all integers little-endian) is:
//!
//! ```text
//! magic      8  b"DNSIDX01"
//! version    4  u32 (currently 1)
//! d          4  u32
//! M          8  u64
//! fp_len     4  u32, then fp_len bytes of checkpoint fingerprint (hex)
//! checksum  32  SHA-256 over payload ++ ids
//! payload    M·d·4  f32 row-major
//! ids        M·8    u64
//! ```
//!
//! Run files are TSV `question_id<TAB>passage_id<TAB>rank<TAB>score` with
//! rank starting at 1, grouped by question.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{Collection, Question};
use crate::encoder::checkpoint::DualCheckpoint;
use crate::encoder::dual::{dot, encode_passage, encode_question};
use crate::encoder::DualEncoderParams;
use crate::exec;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DNSIDX01";
const VERSION: u32 = 1;

/// One retrieved passage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub passage_id: u64,
    pub score: f64,
}

/// Ranked retrieval output for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub question_id: u64,
    /// Descending score, ties broken by ascending passage id.
    pub hits: Vec<SearchHit>,
}

/// Immutable exact-search index. Concurrent searches are safe: all state is
/// read-only after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    d: usize,
    ids: Vec<u64>,
    /// Row-major `M × d`.
    data: Vec<f64>,
    /// Fingerprint of the dual-encoder checkpoint the rows came from.
    fingerprint: String,
}

impl FlatIndex {
    /// Assembles an index from explicit rows. Ids must be strictly
    /// ascending; every value must be finite.
    pub fn from_rows(ids: Vec<u64>, rows: Vec<Vec<f64>>, fingerprint: String) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::dims(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        if rows.is_empty() {
            return Err(Error::invalid("index must hold at least one row"));
        }
        for w in ids.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid(format!(
                    "index ids must be strictly ascending, saw {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::dims("index rows must have at least one column"));
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for (row, id) in rows.iter().zip(&ids) {
            if row.len() != d {
                return Err(Error::dims(format!(
                    "row for passage {id} has {} columns, expected {d}",
                    row.len()
                )));
            }
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::non_finite(format!(
                        "row for passage {id} contains {v}"
                    )));
                }
                data.push(v);
            }
        }
        Ok(FlatIndex {
            d,
            ids,
            data,
            fingerprint,
        })
    }

    /// Encodes every passage of `collection` with the checkpoint's
    /// parameters; row i is the standalone `encode_passage` of passage i.
    pub fn build(checkpoint: &DualCheckpoint, collection: &Collection) -> Result<Self> {
        Self::build_from_params(&checkpoint.params, &checkpoint.fingerprint, collection)
    }

    /// As [`FlatIndex::build`] but from raw parameters plus an explicit
    /// fingerprint string.
    pub fn build_from_params(
        params: &DualEncoderParams,
        fingerprint: &str,
        collection: &Collection,
    ) -> Result<Self> {
        if collection.is_empty() {
            return Err(Error::invalid("cannot index an empty collection"));
        }
        let rows = exec::try_map_ordered(collection.passages(), |p| {
            encode_passage(params, &p.tokens).map_err(|e| {
                Error::invalid(format!("failed to encode passage {}: {e}", p.id))
            })
        })?;
        let ids = collection.passages().iter().map(|p| p.id).collect();
        FlatIndex::from_rows(ids, rows, fingerprint.to_string())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Exact top-k by dot product over all rows, descending score, ties
    /// broken by ascending passage id. Returns `min(k, M)` hits.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<SearchHit>> {
        if query.len() != self.d {
            return Err(Error::dims(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.d
            )));
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if let Some(v) = query.iter().find(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("query contains {v}")));
        }

        let mut hits: Vec<SearchHit> = Vec::with_capacity(self.len());
        for (i, &id) in self.ids.iter().enumerate() {
            let score = dot(query, self.row(i));
            if !score.is_finite() {
                return Err(Error::non_finite(format!(
                    "similarity against passage {id} is {score}"
                )));
            }
            hits.push(SearchHit {
                passage_id: id,
                score,
            });
        }
        hits.sort_unstable_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("scores validated finite")
                .then_with(|| a.passage_id.cmp(&b.passage_id))
        });
        hits.truncate(k.min(self.len()));
        Ok(hits)
    }

    /// Serializes the index. Values are rounded to single precision; every
    /// value must stay finite at that width.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            let narrow = v as f32;
            if !narrow.is_finite() {
                return Err(Error::non_finite(format!(
                    "value {v} does not fit single precision"
                )));
            }
            payload.extend_from_slice(&narrow.to_le_bytes());
        }
        let mut id_bytes = Vec::with_capacity(self.ids.len() * 8);
        for &id in &self.ids {
            id_bytes.extend_from_slice(&id.to_le_bytes());
        }

        let mut hasher = Sha256::new();
        hasher.update(&payload);
        hasher.update(&id_bytes);
        let checksum = hasher.finalize();

        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.d as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.fingerprint.len() as u32).to_le_bytes());
        bytes.extend_from_slice(self.fingerprint.as_bytes());
        bytes.extend_from_slice(&checksum);
        bytes.extend_from_slice(&payload);
        bytes.extend_from_slice(&id_bytes);

        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads an index written by [`FlatIndex::save`], verifying magic,
    /// version, checksum, finiteness, and id ordering.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes, path);

        let magic = r.take(8, "magic string")?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: "an index file",
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                kind: "index",
                found: version,
                supported: VERSION,
            });
        }
        let d = r.u32("dimension")? as usize;
        let m = r.u64("row count")? as usize;
        if d == 0 || m == 0 {
            return Err(Error::parse(
                path,
                0,
                format!("index declares {m} rows of dimension {d}"),
            ));
        }
        let fp_len = r.u32("fingerprint length")? as usize;
        let fp_bytes = r.take(fp_len, "fingerprint")?;
        let fingerprint = String::from_utf8(fp_bytes.to_vec())
            .map_err(|_| Error::parse(path, 0, "fingerprint is not UTF-8"))?;
        let stored_checksum = r.take(32, "checksum")?.to_vec();
        let payload = r.take(m * d * 4, "embedding payload")?;
        let id_bytes = r.take(m * 8, "id list")?;
        r.finish()?;

        let mut hasher = Sha256::new();
        hasher.update(payload);
        hasher.update(id_bytes);
        if hasher.finalize().as_slice() != stored_checksum {
            return Err(Error::ChecksumMismatch {
                path: path.to_path_buf(),
            });
        }

        let mut data = Vec::with_capacity(m * d);
        for chunk in payload.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
            if !v.is_finite() {
                return Err(Error::non_finite(format!(
                    "index {} contains a non-finite embedding value",
                    path.display()
                )));
            }
            data.push(v as f64);
        }
        let mut ids = Vec::with_capacity(m);
        for chunk in id_bytes.chunks_exact(8) {
            ids.push(u64::from_le_bytes(chunk.try_into().expect("chunk of 8")));
        }
        for w in ids.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::parse(
                    path,
                    0,
                    format!("index ids are not strictly ascending: {} then {}", w[0], w[1]),
                ));
            }
        }

        Ok(FlatIndex {
            d,
            ids,
            data,
            fingerprint,
        })
    }
}

/// Positioned binary reader producing truncation errors that name what was
/// being read.
struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        ByteReader { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                context: context.to_string(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, context: &str) -> Result<u32> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, context: &str) -> Result<u64> {
        let b = self.take(8, context)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::parse(
                self.path,
                0,
                format!(
                    "{} trailing bytes after the id list",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        Ok(())
    }
}

/// Retrieves the top `k` passages for every question, in input order
/// (parallel per question under the default feature).
pub fn run_search(
    index: &FlatIndex,
    params: &DualEncoderParams,
    questions: &[Question],
    k: usize,
) -> Result<Vec<RunResult>> {
    exec::try_map_ordered(questions, |q| {
        let emb = encode_question(params, &q.tokens).map_err(|e| {
            Error::invalid(format!("failed to encode question {}: {e}", q.id))
        })?;
        let hits = index.search(&emb, k)?;
        Ok(RunResult {
            question_id: q.id,
            hits,
        })
    })
}

/// Writes run results as TSV `question_id<TAB>passage_id<TAB>rank<TAB>score`
/// with ranks from 1, byte-deterministic.
pub fn write_run(path: &Path, results: &[RunResult]) -> Result<()> {
    let mut out = String::new();
    for res in results {
        for (i, hit) in res.hits.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                res.question_id,
                hit.passage_id,
                i + 1,
                hit.score
            ));
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a run file, validating per-question rank contiguity, descending
/// scores, and id uniqueness. Questions must appear in contiguous blocks.
pub fn load_run(path: &Path) -> Result<Vec<RunResult>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut results: Vec<RunResult> = Vec::new();
    let mut finished: HashSet<u64> = HashSet::new();
    let mut seen_pids: HashSet<u64> = HashSet::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            return Err(Error::parse(path, lineno, "empty line"));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                "expected 'question_id<TAB>passage_id<TAB>rank<TAB>score'",
            ));
        }
        let qid: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("invalid question id '{}'", fields[0])))?;
        let pid: u64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("invalid passage id '{}'", fields[1])))?;
        let rank: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("invalid rank '{}'", fields[2])))?;
        let score: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("invalid score '{}'", fields[3])))?;
        if !score.is_finite() {
            return Err(Error::parse(path, lineno, format!("non-finite score {score}")));
        }

        let start_new = match results.last() {
            Some(last) => last.question_id != qid,
            None => true,
        };
        if start_new {
            if !finished.insert(qid) {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("rows for question {qid} are not contiguous"),
                ));
            }
            if rank != 1 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("question {qid} starts at rank {rank}, expected 1"),
                ));
            }
            seen_pids.clear();
            results.push(RunResult {
                question_id: qid,
                hits: Vec::new(),
            });
        }

        let current = results.last_mut().expect("pushed above");
        if !start_new {
            if rank != current.hits.len() + 1 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!(
                        "question {qid} has rank {rank} after rank {}",
                        current.hits.len()
                    ),
                ));
            }
            let prev = current.hits.last().expect("non-empty in this branch");
            if score > prev.score {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("score {score} increases after {}", prev.score),
                ));
            }
        }
        if !seen_pids.insert(pid) {
            return Err(Error::parse(
                path,
                lineno,
                format!("question {qid} retrieves passage {pid} twice"),
            ));
        }
        current.hits.push(SearchHit {
            passage_id: pid,
            score,
        });
    }

    if results.is_empty() {
        return Err(Error::parse(path, 0, "run file is empty"));
    }
    Ok(results)
}

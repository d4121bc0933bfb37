//! Encoders: parameter containers, initialization, and the shared
//! tensor-list view the optimizer works on.
//!
//! Two models live here:
//!
//! * [`dual`] — a two-tower encoder mapping questions and passages into the
//!   same vector space; relevance is the plain dot product (no
//!   normalization), so retrieval is maximum inner product search.
//! * [`cross`] — a pairwise scorer that sees question and passage together
//!   and emits a match probability in (0, 1). Too slow to rank a whole
//!   collection, precise enough to judge a shortlist.
//!
//! All math is f64. Parameters are plain `Vec<f64>`-backed matrices; a model
//! exposes its tensors in a fixed documented order through [`ParamTensors`],
//! which is the order used by the optimizer, the checkpoint format, and
//! initialization. Keep the three in sync when changing any layout.

pub mod checkpoint;
pub mod cross;
pub mod dual;

use rand::Rng;

use crate::seeding;
use crate::{Error, Result};

/// A dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// An encoder output vector.
pub type Embedding = Vec<f64>;

pub(crate) fn validate_tokens(tokens: &[u32], vocab_size: u32) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::invalid("cannot encode an empty token sequence"));
    }
    for &t in tokens {
        if t >= vocab_size {
            return Err(Error::invalid(format!(
                "token id {t} out of range for vocab size {vocab_size}"
            )));
        }
    }
    Ok(())
}

/// Mean of the embedding rows selected by `tokens` (repeats count again).
/// Tokens must be pre-validated.
pub(crate) fn mean_embedding(table: &Matrix, tokens: &[u32]) -> Vec<f64> {
    let mut mean = vec![0.0; table.cols()];
    for &t in tokens {
        for (m, &e) in mean.iter_mut().zip(table.row(t as usize)) {
            *m += e;
        }
    }
    let inv_len = 1.0 / tokens.len() as f64;
    for m in &mut mean {
        *m *= inv_len;
    }
    mean
}

/// Uniform init half-width for all weight matrices.
pub const INIT_SCALE: f64 = 0.1;

/// Shape of a dual encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DualDims {
    pub vocab_size: u32,
    /// Token embedding width.
    pub d_emb: usize,
    /// Output embedding width (the retrieval space).
    pub d: usize,
}

/// Shape of a cross encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossDims {
    pub vocab_size: u32,
    pub d_emb: usize,
    pub d_hidden: usize,
}

/// One tower: token embedding table, projection, bias. The tower encodes a
/// token sequence as `tanh(Wᵀ · mean(embeddings) + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams {
    /// vocab_size × d_emb.
    pub embedding: Matrix,
    /// d_emb × d.
    pub projection: Matrix,
    /// d.
    pub bias: Vec<f64>,
}

impl TowerParams {
    pub fn zeros(vocab_size: u32, d_emb: usize, d: usize) -> Self {
        TowerParams {
            embedding: Matrix::zeros(vocab_size as usize, d_emb),
            projection: Matrix::zeros(d_emb, d),
            bias: vec![0.0; d],
        }
    }
}

/// Question tower + passage tower. The towers share nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoderParams {
    pub dims: DualDims,
    pub question: TowerParams,
    pub passage: TowerParams,
}

impl DualEncoderParams {
    /// Seeded init: weights uniform in ±[`INIT_SCALE`], biases zero. Draw
    /// order is the [`ParamTensors`] tensor order, element order within each
    /// tensor, and is part of the reproducibility contract.
    pub fn init(dims: DualDims, seed: u64) -> Self {
        let mut rng = seeding::rng(seed);
        let mut params = Self::zeros(dims);
        for tensor in [
            &mut params.question.embedding.data,
            &mut params.question.projection.data,
            &mut params.passage.embedding.data,
            &mut params.passage.projection.data,
        ] {
            for w in tensor.iter_mut() {
                *w = rng.gen_range(-INIT_SCALE..INIT_SCALE);
            }
        }
        params
    }

    pub fn zeros(dims: DualDims) -> Self {
        DualEncoderParams {
            dims,
            question: TowerParams::zeros(dims.vocab_size, dims.d_emb, dims.d),
            passage: TowerParams::zeros(dims.vocab_size, dims.d_emb, dims.d),
        }
    }

    /// A zero-filled gradient buffer of the same shape.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }
}

/// Cross encoder: shared token embedding, one hidden layer over pair
/// features, scalar output logit.
///
/// For mean-pooled vectors `mq`, `mp` the pair feature is
/// `[mq, mp, mq ⊙ mp, |mq − mp|]` (4·d_emb wide), followed by
/// `h = tanh(Wₕᵀ f + bₕ)` and `logit = w·h + b`; the match score is the
/// logistic sigmoid of the logit.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEncoderParams {
    pub dims: CrossDims,
    /// vocab_size × d_emb, shared by both sides of the pair.
    pub embedding: Matrix,
    /// 4·d_emb × d_hidden.
    pub hidden_w: Matrix,
    /// d_hidden.
    pub hidden_b: Vec<f64>,
    /// d_hidden.
    pub out_w: Vec<f64>,
    /// Length 1: the output bias.
    pub out_b: Vec<f64>,
}

impl CrossEncoderParams {
    pub fn init(dims: CrossDims, seed: u64) -> Self {
        let mut rng = seeding::rng(seed);
        let mut params = Self::zeros(dims);
        for tensor in [
            &mut params.embedding.data,
            &mut params.hidden_w.data,
            &mut params.out_w,
        ] {
            for w in tensor.iter_mut() {
                *w = rng.gen_range(-INIT_SCALE..INIT_SCALE);
            }
        }
        params
    }

    pub fn zeros(dims: CrossDims) -> Self {
        CrossEncoderParams {
            dims,
            embedding: Matrix::zeros(dims.vocab_size as usize, dims.d_emb),
            hidden_w: Matrix::zeros(4 * dims.d_emb, dims.d_hidden),
            hidden_b: vec![0.0; dims.d_hidden],
            out_w: vec![0.0; dims.d_hidden],
            out_b: vec![0.0; 1],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }
}

/// Flat view of a model's parameters as an ordered list of tensors.
///
/// The order is fixed per model and shared by Adam state, checkpoints and
/// initialization:
///
/// * dual: question embedding, question projection, question bias,
///   passage embedding, passage projection, passage bias;
/// * cross: embedding, hidden weights, hidden bias, output weights,
///   output bias.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamTensors for DualEncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.question.embedding.data(),
            self.question.projection.data(),
            &self.question.bias,
            self.passage.embedding.data(),
            self.passage.projection.data(),
            &self.passage.bias,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.question.embedding.data_mut(),
            self.question.projection.data_mut(),
            &mut self.question.bias,
            self.passage.embedding.data_mut(),
            self.passage.projection.data_mut(),
            &mut self.passage.bias,
        ]
    }
}

impl ParamTensors for CrossEncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.embedding.data(),
            self.hidden_w.data(),
            &self.hidden_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.embedding.data_mut(),
            self.hidden_w.data_mut(),
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }
}

/// Lets plain vectors stand in for a model in optimizer unit tests.
impl ParamTensors for Vec<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

//! Per-token input vectors: word embedding, UPOS embedding and sinusoidal
//! positional encoding, concatenated in that order.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView1};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deptree::UPOS_TAGS;
use crate::error::{Error, Result};

pub const UNK: &str = "<UNK>";
pub const PAD: &str = "<PAD>";

/// Half-width of the uniform range used for random embedding rows.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    pub vectors: Array2<f64>,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn from_parts(vocab: Vec<String>, vectors: Array2<f64>, trainable: bool) -> Result<Self> {
        if vectors.nrows() != vocab.len() {
            return Err(Error::argument(format!(
                "{} vocabulary entries but {} vectors",
                vocab.len(),
                vectors.nrows()
            )));
        }
        if vectors.ncols() == 0 {
            return Err(Error::argument("embedding dimension must be positive"));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::argument(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        if !index.contains_key(UNK) {
            return Err(Error::argument("vocabulary lacks <UNK>"));
        }
        Ok(EmbeddingTable {
            vocab,
            index,
            vectors,
            trainable,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn unk_id(&self) -> usize {
        self.index[UNK]
    }

    /// Id of `token`, or of `<UNK>` when it is out of vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or_else(|| self.unk_id())
    }

    pub fn row(&self, id: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(id)
    }
}

fn with_reserved(mut vocab: Vec<String>) -> Vec<String> {
    for reserved in [UNK, PAD] {
        if !vocab.iter().any(|w| w == reserved) {
            vocab.push(reserved.to_string());
        }
    }
    vocab
}

/// Builds a table with entries drawn uniformly from `[-0.1, 0.1]`.
/// `<UNK>` and `<PAD>` are appended if missing; `<PAD>` is zero.
pub fn init_random_table(vocab: &[String], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if vocab.is_empty() {
        return Err(Error::argument("cannot build an embedding table for an empty vocabulary"));
    }
    let vocab = with_reserved(vocab.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-INIT_RANGE, INIT_RANGE).expect("valid range");
    let mut vectors = Array2::from_shape_simple_fn((vocab.len(), dim), || dist.sample(&mut rng));
    let pad = vocab.iter().position(|w| w == PAD).expect("reserved entry");
    vectors.row_mut(pad).fill(0.0);
    EmbeddingTable::from_parts(vocab, vectors, true)
}

/// Reads the word2vec text format: an optional `<count> <dim>` header, then
/// one token per line followed by its components.
///
/// `<UNK>` becomes the mean of all loaded vectors and `<PAD>` is zero.
pub fn load_word_vectors(text: &str) -> Result<EmbeddingTable> {
    let mut vocab = Vec::new();
    let mut data = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen = HashMap::new();

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            dim = Some(fields[1].parse().expect("checked"));
            continue;
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format {
                line: line_no,
                message: format!("bad component for {:?}: {e}", fields[0]),
            })?;
        match dim {
            Some(d) if d != values.len() => {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("{:?} has {} components, expected {}", fields[0], values.len(), d),
                })
            }
            None if values.is_empty() => {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("{:?} has no components", fields[0]),
                })
            }
            _ => dim = Some(values.len()),
        }
        let token = fields[0].to_string();
        if token == UNK || token == PAD {
            return Err(Error::Format {
                line: line_no,
                message: format!("reserved token {token} in vector file"),
            });
        }
        if let Some(first) = seen.insert(token.clone(), line_no) {
            return Err(Error::Format {
                line: line_no,
                message: format!("duplicate token {token:?} (first seen on line {first})"),
            });
        }
        vocab.push(token);
        data.extend(values);
    }

    let dim = dim.filter(|_| !vocab.is_empty()).ok_or_else(|| Error::Format {
        line: text.lines().count(),
        message: "no vectors in file".into(),
    })?;
    let n = vocab.len();
    let loaded = Array2::from_shape_vec((n, dim), data).expect("rows checked");
    let mean = loaded.mean_axis(ndarray::Axis(0)).expect("nonempty");

    let mut vectors = Array2::zeros((n + 2, dim));
    vectors.slice_mut(s![..n, ..]).assign(&loaded);
    vectors.row_mut(n).assign(&mean);
    EmbeddingTable::from_parts(with_reserved(vocab), vectors, true)
}

/// Table over the 17 UPOS tags (plus reserved entries).
pub fn upos_vocab() -> Vec<String> {
    UPOS_TAGS.iter().map(|t| t.to_string()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionMode {
    None,
    Sequential,
    Tree,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionalConfig {
    pub mode: PositionMode,
    pub dim: usize,
    /// The wavelength constant `M`.
    pub base: f64,
}

impl Default for PositionalConfig {
    fn default() -> Self {
        PositionalConfig {
            mode: PositionMode::None,
            dim: 64,
            base: 10_000.0,
        }
    }
}

impl PositionalConfig {
    pub fn new(mode: PositionMode, dim: usize, base: f64) -> Result<Self> {
        let cfg = PositionalConfig { mode, dim, base };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return Err(Error::argument(format!(
                "positional dimension must be positive and even, got {}",
                self.dim
            )));
        }
        if self.base.is_nan() || self.base <= 1.0 {
            return Err(Error::argument(format!("positional base must exceed 1, got {}", self.base)));
        }
        Ok(())
    }

    /// Width contributed to the input row (0 when disabled).
    pub fn active_dim(&self) -> usize {
        match self.mode {
            PositionMode::None => 0,
            _ => self.dim,
        }
    }
}

fn sinusoid(value: usize, dim: usize, base: f64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let v = value as f64;
    for i in 0..dim / 2 {
        let angle = v / base.powf(2.0 * i as f64 / dim as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    out
}

/// Sinusoidal encoding of a sequence position.
pub fn sinusoidal_pe(position: usize, config: &PositionalConfig) -> Vec<f64> {
    sinusoid(position, config.dim, config.base)
}

/// The same closed form evaluated at a dependency-tree level index.
pub fn tree_pe(level: usize, config: &PositionalConfig) -> Vec<f64> {
    sinusoid(level, config.dim, config.base)
}

/// Where the word segment of each row comes from.
#[derive(Clone, Copy, Debug)]
pub enum WordInput<'a> {
    Table(&'a EmbeddingTable),
    /// Precomputed frozen vectors of this width, supplied per sentence.
    Contextual(usize),
    Disabled,
}

impl WordInput<'_> {
    pub fn dim(&self) -> usize {
        match self {
            WordInput::Table(t) => t.dim(),
            WordInput::Contextual(d) => *d,
            WordInput::Disabled => 0,
        }
    }
}

/// Raw per-token features of one sentence, before any table lookup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceFeatures {
    pub sentence_id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<usize>>,
    #[serde(skip)]
    pub contextual: Option<Array2<f64>>,
}

impl SentenceFeatures {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSentence {
    pub sentence_id: String,
    /// `T x (word_dim + pos_dim + pe_dim)`.
    pub matrix: Array2<f64>,
    /// Empty when the word segment is disabled or contextual.
    pub word_ids: Vec<usize>,
    /// Empty when POS embeddings are disabled.
    pub pos_ids: Vec<usize>,
    /// Level indices feeding the positional segment in tree mode.
    pub levels: Option<Vec<usize>>,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub pe_dim: usize,
}

/// Builds input matrices from shared, read-only tables.
#[derive(Clone, Copy, Debug)]
pub struct Encoder<'a> {
    pub words: WordInput<'a>,
    pub pos: Option<&'a EmbeddingTable>,
    pub positional: &'a PositionalConfig,
    pub uncased: bool,
}

impl Encoder<'_> {
    pub fn input_dim(&self) -> usize {
        self.words.dim() + self.pos.map_or(0, |p| p.dim()) + self.positional.active_dim()
    }

    pub fn encode(&self, features: &SentenceFeatures) -> Result<EncodedSentence> {
        let t_len = features.len();
        let id = &features.sentence_id;
        let mismatch = |what: &str, n: usize| {
            Error::argument(format!("sentence {id}: {n} {what} for {t_len} tokens"))
        };

        let word_dim = self.words.dim();
        let pos_dim = self.pos.map_or(0, |p| p.dim());
        let pe_dim = self.positional.active_dim();
        let mut matrix = Array2::zeros((t_len, word_dim + pos_dim + pe_dim));

        let mut word_ids = Vec::new();
        match (&features.contextual, self.words) {
            (_, WordInput::Disabled) => {}
            (Some(ctx), words) => {
                if ctx.nrows() != t_len {
                    return Err(mismatch("contextual vectors", ctx.nrows()));
                }
                if ctx.ncols() != words.dim() {
                    return Err(Error::argument(format!(
                        "sentence {id}: contextual vectors have dimension {}, expected {}",
                        ctx.ncols(),
                        words.dim()
                    )));
                }
                if ctx.iter().any(|v| !v.is_finite()) {
                    return Err(Error::argument(format!("sentence {id}: non-finite contextual vector")));
                }
                matrix.slice_mut(s![.., ..word_dim]).assign(ctx);
            }
            (None, WordInput::Table(table)) => {
                for (t, token) in features.tokens.iter().enumerate() {
                    let wid = if self.uncased {
                        table.id(&token.to_lowercase())
                    } else {
                        table.id(token)
                    };
                    matrix.slice_mut(s![t, ..word_dim]).assign(&table.row(wid));
                    word_ids.push(wid);
                }
            }
            (None, WordInput::Contextual(_)) => {
                return Err(Error::argument(format!("sentence {id}: no contextual vectors supplied")));
            }
        }

        let mut pos_ids = Vec::new();
        if let Some(table) = self.pos {
            let tags = features
                .pos_tags
                .as_ref()
                .ok_or_else(|| Error::argument(format!("sentence {id}: POS tags required")))?;
            if tags.len() != t_len {
                return Err(mismatch("POS tags", tags.len()));
            }
            for (t, tag) in tags.iter().enumerate() {
                let pid = table.get(tag).unwrap_or_else(|| {
                    log::warn!("sentence {id}: POS tag {tag:?} not in table, using {UNK}");
                    table.unk_id()
                });
                matrix
                    .slice_mut(s![t, word_dim..word_dim + pos_dim])
                    .assign(&table.row(pid));
                pos_ids.push(pid);
            }
        }

        let mut levels = None;
        let offset = word_dim + pos_dim;
        match self.positional.mode {
            PositionMode::None => {}
            PositionMode::Sequential => {
                for t in 0..t_len {
                    let pe = sinusoidal_pe(t, self.positional);
                    matrix.slice_mut(s![t, offset..]).assign(&ArrayView1::from(&pe));
                }
            }
            PositionMode::Tree => {
                let lv = features
                    .levels
                    .as_ref()
                    .ok_or_else(|| Error::argument(format!("sentence {id}: tree level indices required")))?;
                if lv.len() != t_len {
                    return Err(mismatch("level indices", lv.len()));
                }
                for (t, &level) in lv.iter().enumerate() {
                    let pe = tree_pe(level, self.positional);
                    matrix.slice_mut(s![t, offset..]).assign(&ArrayView1::from(&pe));
                }
                levels = Some(lv.clone());
            }
        }

        Ok(EncodedSentence {
            sentence_id: id.clone(),
            matrix,
            word_ids,
            pos_ids,
            levels,
            word_dim,
            pos_dim,
            pe_dim,
        })
    }
}

/// Frozen per-sentence vectors from JSON-lines
/// `{"sentence_id": ..., "vectors": [[...], ...]}`.
pub fn load_contextual_vectors(text: &str) -> Result<HashMap<String, Array2<f64>>> {
    #[derive(Deserialize)]
    struct Record {
        sentence_id: String,
        vectors: Vec<Vec<f64>>,
    }
    let mut out = HashMap::new();
    let mut dim: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Format { line: i + 1, message };
        let rec: Record = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        let rows = rec.vectors.len();
        let cols = rec.vectors.first().map_or(0, Vec::len);
        if cols == 0 || rec.vectors.iter().any(|r| r.len() != cols) {
            return Err(fail(format!("sentence {}: ragged or empty vectors", rec.sentence_id)));
        }
        if *dim.get_or_insert(cols) != cols {
            return Err(fail(format!(
                "sentence {}: dimension {cols} differs from earlier {}",
                rec.sentence_id,
                dim.unwrap_or(0)
            )));
        }
        let m = Array2::from_shape_vec((rows, cols), rec.vectors.concat()).expect("rectangular");
        if out.insert(rec.sentence_id.clone(), m).is_some() {
            return Err(fail(format!("duplicate sentence id {}", rec.sentence_id)));
        }
    }
    Ok(out)
}

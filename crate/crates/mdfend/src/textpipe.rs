//! Text → fixed-length token-id sequences with validity masks, and the
//! trainable embedding table that maps ids to vectors.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::NewsItem;
use crate::error::{Error, Result};
use crate::mat::Mat;

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;

pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<cls>", "<sep>", "<unk>"];

/// Token → id map with four reserved ids (0=PAD, 1=CLS, 2=SEP, 3=UNK).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    fn reserved() -> Self {
        let tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, ids }
    }

    /// Rebuilds a vocabulary from its id-ordered token list (as stored in a
    /// checkpoint).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED_TOKENS.len()
            || tokens[..4] != RESERVED_TOKENS.map(String::from)
        {
            return Err(Error::InvalidArgument(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut ids = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id_of(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Builds a vocabulary over the corpus contents. Tokens with frequency
/// ≥ `min_count` get ids in descending-frequency order after the reserved
/// ids; ties break lexicographically.
pub fn build_vocab(items: &[NewsItem], min_count: usize) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::InvalidArgument("min_count must be >= 1".into()));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for item in items {
        for tok in tokenize(&item.content) {
            *freq.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> =
        freq.into_iter().filter(|(_, c)| *c >= min_count).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut vocab = Vocabulary::reserved();
    for (tok, _) in ranked {
        let id = vocab.tokens.len();
        vocab.ids.insert(tok.clone(), id);
        vocab.tokens.push(tok);
    }
    Ok(vocab)
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF      // CJK Unified Ideographs
        | 0x3400..=0x4DBF    // Extension A
        | 0xF900..=0xFAFF    // Compatibility Ideographs
        | 0x20000..=0x2FFFF  // Extensions B..F
    )
}

/// Deterministic segmentation: contiguous runs of letters/digits are one
/// token, each CJK codepoint is its own token, any other non-space symbol
/// is a single-character token. Everything is lowercased.
pub fn tokenize(content: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in content.chars().flat_map(char::to_lowercase) {
        if is_cjk(c) {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            run.push(c);
        } else {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    tokens
}

/// Fixed-length id sequence with a ones-prefix validity mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
}

impl TokenSequence {
    /// Number of valid positions (CLS and SEP included).
    pub fn length(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }
}

/// CLS + the first `max_len - 2` token ids (UNK when out of vocabulary) +
/// SEP, padded with PAD.
pub fn encode(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    if max_len < 2 {
        return Err(Error::InvalidArgument("max_len must be >= 2".into()));
    }
    let keep = tokens.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    for tok in &tokens[..keep] {
        ids.push(vocab.id_of(tok));
    }
    ids.push(SEP);
    let valid = ids.len();
    ids.resize(max_len, PAD);
    let mut mask = vec![1u8; valid];
    mask.resize(max_len, 0);
    Ok(TokenSequence { ids, mask })
}

/// V × d embedding matrix with the PAD row pinned to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    mat: Mat,
}

impl EmbeddingTable {
    /// Seeded random table: rows uniform(±√(1/d)) like the affine weights
    /// they feed, PAD row zero.
    pub fn random(vocab_size: usize, dim: usize, rng: &mut ChaCha20Rng) -> Self {
        let bound = (1.0 / dim as f64).sqrt();
        let mut mat = Mat::zeros(vocab_size, dim);
        for r in 1..vocab_size {
            for c in 0..dim {
                mat.set(r, c, rng.random_range(-bound..bound));
            }
        }
        EmbeddingTable { mat }
    }

    pub fn from_mat(mat: Mat) -> Self {
        let mut table = EmbeddingTable { mat };
        table.zero_pad_row();
        table
    }

    pub fn vocab_size(&self) -> usize {
        self.mat.rows()
    }

    pub fn dim(&self) -> usize {
        self.mat.cols()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.mat.row(id)
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        self.mat.data_mut()
    }

    /// Re-pins the PAD row to exactly zero.
    pub fn zero_pad_row(&mut self) {
        for v in self.mat.row_mut(PAD) {
            *v = 0.0;
        }
    }
}

/// Gathers embedding rows for a sequence: row t of the result equals the
/// table row for ids[t].
pub fn embed(seq: &TokenSequence, table: &EmbeddingTable) -> Result<Mat> {
    let mut out = Mat::zeros(seq.max_len(), table.dim());
    for (t, &id) in seq.ids.iter().enumerate() {
        if id >= table.vocab_size() {
            return Err(Error::IdOutOfRange {
                id,
                vocab_size: table.vocab_size(),
            });
        }
        out.row_mut(t).copy_from_slice(table.row(id));
    }
    Ok(out)
}

/// Loads a word-vector text file (`token v1 .. vd` per line). Vocabulary
/// tokens found in the file take their vectors from it; missing tokens get
/// seeded-random rows; the PAD row is zeroed. Every line must carry exactly
/// `dim` values.
pub fn load_pretrained_vectors(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path)?;
    let display = path.display().to_string();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut table = EmbeddingTable::random(vocab.size(), dim, &mut rng);
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tok = parts.next().ok_or_else(|| Error::MalformedRecord {
            path: display.clone(),
            line: lineno,
            msg: "missing token".into(),
        })?;
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| Error::MalformedRecord {
                    path: display.clone(),
                    line: lineno,
                    msg: format!("bad float {p:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::MalformedRecord {
                path: display.clone(),
                line: lineno,
                msg: format!("expected {dim} values, got {}", values.len()),
            });
        }
        if let Some(&id) = vocab.ids.get(tok) {
            if id != PAD {
                table.mat.row_mut(id).copy_from_slice(&values);
            }
        }
    }
    table.zero_pad_row();
    Ok(table)
}

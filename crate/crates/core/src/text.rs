//! Comment text to initial edge embedding: tokenisation, the word vector
//! table, and a three-branch text CNN.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Segment, Tape, Tensor, Var};
use crate::error::{GasError, Result};
use crate::init::glorot;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Shortest sequence fed to the CNN; shorter comments are PAD-extended.
pub const MIN_SEQ_LEN: usize = 5;

/// Token ↔ id map with per-token corpus counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// Vocabulary holding only PAD and UNK.
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            counts: Vec::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    /// Returns the id of `token`, adding it if absent.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        self.counts.push(0);
        id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Adds one occurrence of every id in `seq` to the counts.
    pub fn count(&mut self, seq: &[usize]) {
        for &id in seq {
            self.counts[id] += 1;
        }
    }

    /// Unigram probabilities from the counts; PAD and UNK excluded unless
    /// counted. All zeros when nothing was counted.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return vec![0.0; self.len()];
        }
        self.counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }
}

/// Lowercase, whitespace-split, map to ids with unknown tokens as UNK.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    text.split_whitespace()
        .map(|t| vocab.id(&t.to_lowercase()).unwrap_or(UNK))
        .collect()
}

/// Same mapping for an already-split token list.
pub fn map_tokens<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| vocab.id(&t.as_ref().to_lowercase()).unwrap_or(UNK))
        .collect()
}

/// `|V| × d0` word vectors. Row [`PAD`] is all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }
}

/// Result of [`load_embeddings`]: the vocabulary, the table and any warnings.
#[derive(Debug)]
pub struct LoadedEmbeddings {
    pub vocab: Vocabulary,
    pub table: EmbeddingTable,
    pub warnings: Vec<String>,
}

/// Reads `token v1 … v_d` lines. `default_dim` is used only when the file
/// has no vectors at all.
pub fn load_embeddings(path: impl AsRef<Path>, default_dim: usize) -> Result<LoadedEmbeddings> {
    let f = std::fs::File::open(path)?;
    read_embeddings(BufReader::new(f), default_dim)
}

pub fn read_embeddings<R: BufRead>(reader: R, default_dim: usize) -> Result<LoadedEmbeddings> {
    let mut vocab = Vocabulary::new();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(), Vec::new()];
    let mut dim: Option<usize> = None;
    let mut warnings = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = ln + 1;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| GasError::Parse {
                    line: lineno,
                    msg: format!("bad float `{p}`: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if values.is_empty() => {
                return Err(GasError::Parse {
                    line: lineno,
                    msg: "token without a vector".into(),
                })
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(GasError::Parse {
                    line: lineno,
                    msg: format!("expected {d} values, found {}", values.len()),
                })
            }
            Some(_) => {}
        }
        let token = token.to_lowercase();
        if token == PAD_TOKEN {
            warnings.push(format!("line {lineno}: vector for reserved PAD ignored"));
            continue;
        }
        match vocab.id(&token) {
            Some(id) => {
                warnings.push(format!("line {lineno}: duplicate token `{token}`, last wins"));
                rows[id] = values;
            }
            None => {
                vocab.insert(&token);
                rows.push(values);
            }
        }
    }
    let d = dim.unwrap_or(default_dim);
    if dim.is_none() {
        warnings.push("embedding file is empty; vocabulary holds only PAD and UNK".into());
    }
    for r in rows.iter_mut() {
        if r.is_empty() {
            *r = vec![0.0; d];
        }
    }
    rows[PAD] = vec![0.0; d];
    for w in &warnings {
        warn!("{w}");
    }
    let matrix = Tensor::from_rows(&rows)?;
    Ok(LoadedEmbeddings {
        vocab,
        table: EmbeddingTable { matrix },
        warnings,
    })
}

/// Writes a table in the same text format (PAD row omitted).
pub fn write_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    for id in 0..vocab.len() {
        if id == PAD {
            continue;
        }
        out.push_str(vocab.token(id));
        for v in table.vector(id) {
            write!(out, " {v}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Adds every token of `corpus` missing from `vocab` with a uniform random
/// vector of scale `scale`, growing the table to match.
pub fn extend_vocabulary<S: AsRef<str>>(
    vocab: &mut Vocabulary,
    table: &mut EmbeddingTable,
    corpus: &[Vec<S>],
    rng: &mut ChaCha8Rng,
    scale: f64,
) -> usize {
    let d = table.dim();
    let mut data = table.matrix.data().to_vec();
    let before = vocab.len();
    for seq in corpus {
        for t in seq {
            let t = t.as_ref().to_lowercase();
            if vocab.id(&t).is_none() {
                vocab.insert(&t);
                data.extend((0..d).map(|_| rng.random_range(-scale..scale)));
            }
        }
    }
    table.matrix = Tensor::matrix(vocab.len(), d, data).expect("sized");
    vocab.len() - before
}

/// Vocabulary and word vectors covering `corpus`: vectors from `loaded`
/// when given (dimension taken from the file), random uniform vectors of
/// scale 0.1 and size `dim` for everything else.
pub fn word_table_for<S: AsRef<str>>(
    corpus: &[Vec<S>],
    loaded: Option<LoadedEmbeddings>,
    dim: usize,
    seed: u64,
) -> (Vocabulary, EmbeddingTable) {
    let (mut vocab, mut table) = match loaded {
        Some(l) => (l.vocab, l.table),
        None => (
            Vocabulary::new(),
            EmbeddingTable {
                matrix: Tensor::zeros(&[2, dim]),
            },
        ),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    extend_vocabulary(&mut vocab, &mut table, corpus, &mut rng, 0.1);
    (vocab, table)
}

/// Filter banks for widths 3, 4 and 5 (configurable), `filters` each.
#[derive(Clone, Debug, PartialEq)]
pub struct TextCnnParams {
    pub widths: Vec<usize>,
    pub filters: usize,
    pub banks: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

pub const DEFAULT_WIDTHS: [usize; 3] = [3, 4, 5];
pub const DEFAULT_FILTERS: usize = 128;

impl TextCnnParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        word_dim: usize,
        widths: &[usize],
        filters: usize,
    ) -> Self {
        let mut banks = Vec::new();
        let mut biases = Vec::new();
        for &w in widths {
            let t = glorot(rng, w * word_dim, filters)
                .reshape(vec![w, word_dim, filters])
                .expect("sized");
            banks.push(store.add(format!("textcnn.w{w}.filters"), t));
            biases.push(store.add(format!("textcnn.w{w}.bias"), Tensor::zeros(&[filters])));
        }
        TextCnnParams {
            widths: widths.to_vec(),
            filters,
            banks,
            biases,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.widths.len() * self.filters
    }

    pub fn min_len(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1).max(MIN_SEQ_LEN)
    }

    /// Encodes a batch of id sequences into an `n × output_dim` matrix.
    /// Sequences are truncated to `max_tokens` and PAD-extended to the
    /// minimum length; max-pooling only sees windows inside that length.
    pub fn encode(&self, tape: &mut Tape, table: Var, seqs: &[&[usize]], max_tokens: usize) -> Result<Var> {
        let min_len = self.min_len();
        let mut ids = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        for s in seqs {
            let s = &s[..s.len().min(max_tokens.max(1))];
            let start = ids.len();
            ids.extend_from_slice(s);
            while ids.len() - start < min_len {
                ids.push(PAD);
            }
            segments.push(Segment {
                start,
                len: ids.len() - start,
            });
        }
        let x = tape.gather(table, &ids)?;
        let mut parts = Vec::with_capacity(self.widths.len());
        for ((&w, &bank), &bias) in self.widths.iter().zip(&self.banks).zip(&self.biases) {
            let f = tape.param(bank);
            let b = tape.param(bias);
            parts.push(tape.seq_conv_maxpool(x, f, b, w, &segments)?);
        }
        if seqs.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[0, self.output_dim()])));
        }
        tape.concat(&parts)
    }
}

/// Encodes one comment outside of training.
pub fn textcnn_encode(
    tokens: &[usize],
    table: &EmbeddingTable,
    store: &ParamStore,
    params: &TextCnnParams,
    max_tokens: usize,
) -> Result<Tensor> {
    let mut tape = Tape::with_params(store);
    let t = tape.constant(table.matrix.clone());
    let out = params.encode(&mut tape, t, &[tokens], max_tokens)?;
    let v = tape.value(out).clone();
    v.reshape(vec![params.output_dim()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn vocab_of(words: &[&str]) -> Vocabulary {
        let mut v = Vocabulary::new();
        for w in words {
            v.insert(w);
        }
        v
    }

    #[test]
    fn tokenize_examples() {
        let v = vocab_of(&["add", "my", "vx"]);
        assert!(tokenize("", &v).is_empty());
        assert_eq!(
            tokenize("Add my VX", &v),
            vec![v.id("add").unwrap(), v.id("my").unwrap(), v.id("vx").unwrap()]
        );
        assert_eq!(tokenize("add  zzz", &v), vec![v.id("add").unwrap(), UNK]);
        assert_ne!(PAD, UNK);
    }

    #[test]
    fn load_counts_and_shapes() {
        let e = read_embeddings("a 1 2 3\nb 4 5 6\n".as_bytes(), 8).unwrap();
        assert_eq!(e.vocab.len(), 4);
        assert_eq!(e.table.matrix.shape(), &[4, 3]);
        assert_eq!(e.table.vector(PAD), &[0.0; 3]);
        assert_eq!(e.table.vector(e.vocab.id("b").unwrap()), &[4., 5., 6.]);
        assert!(e.warnings.is_empty());
    }

    #[test]
    fn load_duplicate_last_wins_with_warning() {
        let e = read_embeddings("a 1 2\nb 0 0\na 7 8\n".as_bytes(), 8).unwrap();
        assert_eq!(e.vocab.len(), 4);
        assert_eq!(e.table.vector(e.vocab.id("a").unwrap()), &[7., 8.]);
        assert_eq!(e.warnings.len(), 1);
    }

    #[test]
    fn load_empty_file_is_valid_but_warned() {
        let e = read_embeddings("".as_bytes(), 5).unwrap();
        assert_eq!(e.vocab.len(), 2);
        assert_eq!(e.table.matrix.shape(), &[2, 5]);
        assert_eq!(e.warnings.len(), 1);
    }

    #[test]
    fn load_inconsistent_dimension_reports_line() {
        let err = read_embeddings("a 1 2\nb 1 2\nc 1\n".as_bytes(), 5).unwrap_err();
        assert!(matches!(err, GasError::Parse { line: 3, .. }), "{err}");
    }

    fn toy_cnn(d: usize, filters: usize, widths: &[usize]) -> (ParamStore, TextCnnParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = TextCnnParams::init(&mut store, &mut rng, d, widths, filters);
        (store, p)
    }

    fn table(rows: usize, d: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = crate::init::uniform(&mut rng, &[rows, d], 1.0);
        m.data_mut()[..d].fill(0.0);
        EmbeddingTable { matrix: m }
    }

    #[test]
    fn default_output_dim_is_384() {
        let (_, p) = toy_cnn(8, DEFAULT_FILTERS, &DEFAULT_WIDTHS);
        assert_eq!(p.output_dim(), 384);
    }

    #[test]
    fn empty_comment_encodes_to_zero() {
        let (store, p) = toy_cnn(4, 6, &DEFAULT_WIDTHS);
        let t = table(10, 4, 1);
        let out = textcnn_encode(&[], &t, &store, &p, 64).unwrap();
        assert_eq!(out.data(), &[0.0; 18]);
    }

    #[test]
    fn single_token_matches_hand_convolution() {
        // one 3-wide bank with 2 filters over [w, PAD, PAD, PAD, PAD]:
        // the best window is either [w, PAD, PAD] (= w · first block) or an
        // all-PAD window (= 0) so the max is max(relu(w·F0 + b), relu(b)).
        let d = 2;
        let (mut store, p) = toy_cnn(d, 2, &[3]);
        let f = Tensor::new(vec![3, d, 2], vec![1.0, -1.0, 0.5, 2.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0]).unwrap();
        store.set(p.banks[0], f).unwrap();
        store.set(p.biases[0], Tensor::vector(vec![0.1, -0.2])).unwrap();
        let mut t = table(3, d, 2);
        t.matrix.data_mut()[2 * d..3 * d].copy_from_slice(&[2.0, 1.0]);
        let out = textcnn_encode(&[2], &t, &store, &p, 64).unwrap();
        let f0 = 2.0 * 1.0 + 1.0 * 0.5 + 0.1;
        let f1 = (-2.0 + 1.0 * 2.0 - 0.2f64).max(-0.2).max(0.0);
        assert_eq!(out.data(), &[f0, f1]);
    }

    #[test]
    fn encoding_is_deterministic_and_pad_invariant() {
        let (store, p) = toy_cnn(4, 5, &DEFAULT_WIDTHS);
        let t = table(12, 4, 4);
        let seq = [3usize, 7, 2, 9, 4, 4, 11];
        let a = textcnn_encode(&seq, &t, &store, &p, 64).unwrap();
        let b = textcnn_encode(&seq, &t, &store, &p, 64).unwrap();
        assert_eq!(a, b);
        let short = [3usize, 7];
        let mut padded = short.to_vec();
        padded.extend_from_slice(&[PAD; 3]);
        let c = textcnn_encode(&short, &t, &store, &p, 64).unwrap();
        let d = textcnn_encode(&padded, &t, &store, &p, 64).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn encoding_is_order_sensitive() {
        let (store, p) = toy_cnn(4, 5, &DEFAULT_WIDTHS);
        let t = table(12, 4, 5);
        let a = textcnn_encode(&[3, 7, 2, 9, 4, 5], &t, &store, &p, 64).unwrap();
        let b = textcnn_encode(&[7, 3, 2, 9, 4, 5], &t, &store, &p, 64).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn truncates_to_max_tokens() {
        let (store, p) = toy_cnn(4, 5, &DEFAULT_WIDTHS);
        let t = table(12, 4, 6);
        let a = textcnn_encode(&[3, 7, 2, 9, 4, 5, 8], &t, &store, &p, 5).unwrap();
        let b = textcnn_encode(&[3, 7, 2, 9, 4], &t, &store, &p, 64).unwrap();
        assert_eq!(a, b);
    }
}

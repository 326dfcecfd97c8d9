//! Dataset ingestion: tokenization, the tab-separated dataset format,
//! vocabulary construction, word2vec vectors and unknown-word initialization.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Variance assumed when a per-dimension variance over covered words is degenerate.
pub const VARIANCE_FLOOR: f64 = 1e-4;
/// Per-dimension variance used when no word is covered by pretrained vectors.
pub const RANDOM_EMBEDDING_VARIANCE: f64 = 0.01;
pub const PAD_TOKEN: &str = "<pad>";

/// Normalizes and tokenizes one sentence.
///
/// Steps, in order: characters outside `[A-Za-z0-9(),!?'` + "`" + `]` become spaces;
/// the clitics `'s 've n't 're 'd 'll` are split off; `, ! ( ) ?` are
/// surrounded by spaces; whitespace is collapsed; the result is lowercased and
/// split on spaces.
pub fn clean_text(raw: &str) -> Vec<String> {
    let mut s: String = raw
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "(),!?'`".contains(c) {
                c
            } else {
                ' '
            }
        })
        .collect();
    for clitic in ["'s", "'ve", "n't", "'re", "'d", "'ll"] {
        s = s.replace(clitic, &format!(" {clitic}"));
    }
    for punct in [",", "!", "(", ")", "?"] {
        s = s.replace(punct, &format!(" {punct} "));
    }
    s.to_lowercase().split_whitespace().map(str::to_string).collect()
}

/// One tokenized example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub label: usize,
}

/// An example encoded against a [`Vocabulary`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    /// The corpus ships a test split.
    Standard,
    /// No test split; evaluation is by cross-validation.
    CrossValidation,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn split_kind(&self) -> SplitKind {
        if self.test.is_empty() {
            SplitKind::CrossValidation
        } else {
            SplitKind::Standard
        }
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    /// Every example: train, then dev, then test.
    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|l| l == name)
    }
}

/// Loads `label<TAB>text` files. Labels are numbered in order of first
/// appearance in the training file; dev and test may only use those labels.
pub fn load_dataset(train: &Path, dev: Option<&Path>, test: Option<&Path>) -> Result<Dataset> {
    let mut labels = LabelMap::default();
    let mut dataset = Dataset {
        train: read_labeled_lines(train, &mut labels, true)?,
        ..Dataset::default()
    };
    if let Some(path) = dev {
        dataset.dev = read_labeled_lines(path, &mut labels, false)?;
    }
    if let Some(path) = test {
        dataset.test = read_labeled_lines(path, &mut labels, false)?;
    }
    dataset.label_names = labels.names;
    Ok(dataset)
}

#[derive(Default)]
struct LabelMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

fn read_labeled_lines(path: &Path, labels: &mut LabelMap, may_add: bool) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut reader = BufReader::new(file);
    let mut examples = Vec::new();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let read = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if read == 0 {
            break;
        }
        line_no += 1;
        let line = String::from_utf8_lossy(&buf);
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        let parse_error = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_error("expected `label<TAB>text`".into()))?;
        let label = label.trim();
        if label.is_empty() {
            return Err(parse_error("empty label".into()));
        }
        let index = match labels.index.get(label) {
            Some(&i) => i,
            None if may_add => {
                let i = labels.names.len();
                labels.names.push(label.to_string());
                labels.index.insert(label.to_string(), i);
                i
            }
            None => return Err(parse_error(format!("label `{label}` does not occur in the training file"))),
        };
        examples.push(Example {
            tokens: clean_text(text),
            label: index,
        });
    }
    Ok(examples)
}

/// Token to row index map. Row 0 is the padding token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Indexes tokens in order of first appearance across train, dev and test.
    pub fn build(dataset: &Dataset) -> Self {
        Self::from_sentences(dataset.examples().map(|e| e.tokens.as_slice()))
    }

    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut vocab = Self {
            tokens: vec![PAD_TOKEN.to_string()],
            index: HashMap::new(),
        };
        for sentence in sentences {
            for token in sentence {
                if !vocab.index.contains_key(token) {
                    vocab.index.insert(token.clone(), vocab.tokens.len());
                    vocab.tokens.push(token.clone());
                }
            }
        }
        vocab
    }

    /// Rebuilds a vocabulary from its token list (without the padding entry).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut vocab = Self {
            tokens: vec![PAD_TOKEN.to_string()],
            index: HashMap::new(),
        };
        for token in tokens {
            if token == PAD_TOKEN || vocab.index.contains_key(&token) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token `{token}`")));
            }
            vocab.index.insert(token.clone(), vocab.tokens.len());
            vocab.tokens.push(token);
        }
        Ok(vocab)
    }

    /// Number of real tokens, `|V|`.
    pub fn len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Embedding rows needed: `|V| + 1`.
    pub fn rows(&self) -> usize {
        self.tokens.len()
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// Real tokens in index order (index 1 first).
    pub fn tokens(&self) -> &[String] {
        &self.tokens[1..]
    }

    /// Tokens missing from the vocabulary map to the padding row.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index(t).unwrap_or(0)).collect()
    }

    pub fn encode_examples(&self, examples: &[Example]) -> Vec<Sample> {
        examples
            .iter()
            .map(|e| Sample {
                tokens: self.encode(&e.tokens),
                label: e.label,
            })
            .collect()
    }

    /// SHA-256 over the tokens in index order, newline separated.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for token in self.tokens() {
            hasher.update(token.as_bytes());
            hasher.update(b"\n");
        }
        hasher.finalize().into()
    }
}

/// Summary statistics of a dataset: classes, mean length, size, vocabulary, coverage, test size.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub classes: usize,
    pub average_length: f64,
    pub size: usize,
    pub vocabulary: usize,
    pub pretrained_coverage: Option<usize>,
    pub test_size: Option<usize>,
    pub empty_sentences: usize,
}

impl DatasetStats {
    pub fn compute(dataset: &Dataset, vocab: &Vocabulary, table: Option<&EmbeddingTable>) -> Self {
        let total_tokens: usize = dataset.examples().map(|e| e.tokens.len()).sum();
        let size = dataset.len();
        Self {
            classes: dataset.num_classes(),
            average_length: if size == 0 { 0.0 } else { total_tokens as f64 / size as f64 },
            size,
            vocabulary: vocab.len(),
            pretrained_coverage: table.map(EmbeddingTable::coverage),
            test_size: match dataset.split_kind() {
                SplitKind::Standard => Some(dataset.test.len()),
                SplitKind::CrossValidation => None,
            },
            empty_sentences: dataset.examples().filter(|e| e.tokens.is_empty()).count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Word2VecFormat {
    Binary,
    Text,
}

impl std::str::FromStr for Word2VecFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(Self::Binary),
            "text" | "txt" => Ok(Self::Text),
            other => Err(Error::InvalidArgument(format!("unknown word2vec format `{other}`"))),
        }
    }
}

impl std::fmt::Display for Word2VecFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Binary => "binary",
            Self::Text => "text",
        })
    }
}

/// Pretrained vectors for the vocabulary words found in a word2vec file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    file_words: usize,
}

impl EmbeddingTable {
    /// A table covering no words, for randomly initialized variants.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
            file_words: 0,
        }
    }

    pub fn from_vectors(dim: usize, vectors: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut table = Self::empty(dim);
        for (word, v) in vectors {
            if v.len() != dim {
                return Err(Error::EmbeddingDimension {
                    expected: dim,
                    found: v.len(),
                });
            }
            table.file_words += 1;
            table.vectors.entry(word).or_insert(v);
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vocabulary words with a pretrained vector, `|V_pre|`.
    pub fn coverage(&self) -> usize {
        self.vectors.len()
    }

    /// Words listed in the source file.
    pub fn file_words(&self) -> usize {
        self.file_words
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

/// Streams a word2vec file, keeping only vectors of words in `vocab`.
pub fn load_word2vec(path: &Path, format: Word2VecFormat, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_word2vec(BufReader::with_capacity(1 << 20, file), format, vocab, path)
}

pub fn read_word2vec<R: BufRead>(
    reader: R,
    format: Word2VecFormat,
    vocab: &Vocabulary,
    path: &Path,
) -> Result<EmbeddingTable> {
    let mut reader = CountingReader { inner: reader, offset: 0 };
    let fail = |offset: u64, message: String| Error::Word2Vec {
        path: path.to_path_buf(),
        offset,
        message,
    };

    let mut header = Vec::new();
    reader
        .read_until(b'\n', &mut header)
        .map_err(|e| fail(0, e.to_string()))?;
    let header_text = String::from_utf8_lossy(&header);
    let mut fields = header_text.split_whitespace().map(str::parse::<usize>);
    let (count, dim) = match (fields.next(), fields.next(), fields.next()) {
        (Some(Ok(c)), Some(Ok(d)), None) if d > 0 => (c, d),
        _ => return Err(fail(0, format!("bad header `{}`", header_text.trim()))),
    };

    let mut table = EmbeddingTable::empty(dim);
    table.file_words = count;
    let mut raw = vec![0u8; dim * 4];
    let mut line = Vec::new();
    for _ in 0..count {
        let record_start = reader.offset;
        match format {
            Word2VecFormat::Binary => {
                let word = read_binary_word(&mut reader).map_err(|e| fail(record_start, e))?;
                let body_start = reader.offset;
                reader
                    .read_exact(&mut raw)
                    .map_err(|_| fail(body_start, format!("truncated vector for `{word}`")))?;
                if vocab.index(&word).is_some() && !table.vectors.contains_key(&word) {
                    let v = raw
                        .chunks_exact(4)
                        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                        .collect();
                    table.vectors.insert(word, v);
                }
            }
            Word2VecFormat::Text => {
                line.clear();
                let read = reader
                    .read_until(b'\n', &mut line)
                    .map_err(|e| fail(record_start, e.to_string()))?;
                if read == 0 {
                    return Err(fail(record_start, "truncated file: fewer records than the header declares".into()));
                }
                let text = String::from_utf8_lossy(&line);
                let mut parts = text.split_whitespace();
                let word = parts
                    .next()
                    .ok_or_else(|| fail(record_start, "empty record".into()))?;
                if vocab.index(word).is_none() || table.vectors.contains_key(word) {
                    if parts.count() != dim {
                        return Err(fail(record_start, format!("record for `{word}` does not have {dim} values")));
                    }
                    continue;
                }
                let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
                let values = values.map_err(|e| fail(record_start, format!("bad value for `{word}`: {e}")))?;
                if values.len() != dim {
                    return Err(fail(
                        record_start,
                        format!("record for `{word}` has {} values, header says {dim}", values.len()),
                    ));
                }
                table.vectors.insert(word.to_string(), values);
            }
        }
    }
    Ok(table)
}

fn read_binary_word<R: BufRead>(reader: &mut CountingReader<R>) -> std::result::Result<String, String> {
    let mut bytes = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        if reader.read(&mut byte).map_err(|e| e.to_string())? == 0 {
            return Err("truncated file: fewer records than the header declares".into());
        }
        match byte[0] {
            b'\n' if bytes.is_empty() => continue,
            b' ' => break,
            b => bytes.push(b),
        }
    }
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: BufRead> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

impl<R: BufRead> BufRead for CountingReader<R> {
    fn fill_buf(&mut self) -> std::io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.offset += amt as u64;
        self.inner.consume(amt);
    }
}

/// Writes vectors in the word2vec binary layout (32-bit little-endian floats,
/// one newline after each vector).
pub fn write_word2vec_binary<W: Write>(mut out: W, dim: usize, vectors: &[(String, Vec<f64>)]) -> std::io::Result<()> {
    writeln!(out, "{} {}", vectors.len(), dim)?;
    for (word, v) in vectors {
        out.write_all(word.as_bytes())?;
        out.write_all(b" ")?;
        for &x in v {
            out.write_all(&(x as f32).to_le_bytes())?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Completes the embedding matrix `(|V| + 1, d)`.
///
/// Covered words take their pretrained vectors. Every other word draws each
/// dimension `j` from `Normal(mean_j, var_j)`, the moments of the covered
/// vectors in that dimension (population variance, floored at
/// [`VARIANCE_FLOOR`]). With no coverage the draw is `Normal(0, 0.01)`.
/// Row 0 (padding) is zero.
pub fn init_unknown_words(vocab: &Vocabulary, table: &EmbeddingTable, rng: &mut Rng) -> Tensor {
    let d = table.dim();
    let covered: Vec<&[f64]> = vocab.tokens().iter().filter_map(|t| table.get(t)).collect();
    let (mean, std) = if covered.is_empty() {
        (vec![0.0; d], vec![RANDOM_EMBEDDING_VARIANCE.sqrt(); d])
    } else {
        unknown_word_moments(&covered, d)
    };

    let mut out = Tensor::zeros(&[vocab.rows(), d]);
    let data = out.data_mut();
    for (i, token) in vocab.tokens().iter().enumerate() {
        let row = &mut data[(i + 1) * d..(i + 2) * d];
        match table.get(token) {
            Some(v) => row.copy_from_slice(v),
            None => {
                for j in 0..d {
                    row[j] = rng.normal(mean[j], std[j]);
                }
            }
        }
    }
    out
}

/// Per-dimension mean and standard deviation (from floored population variance).
fn unknown_word_moments(covered: &[&[f64]], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = covered.len() as f64;
    let mut mean = vec![0.0; d];
    for v in covered {
        for (m, x) in mean.iter_mut().zip(*v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for v in covered {
        for j in 0..d {
            var[j] += (v[j] - mean[j]).powi(2);
        }
    }
    let std = var.into_iter().map(|s| (s / n).max(VARIANCE_FLOOR).sqrt()).collect();
    (mean, std)
}

/// Token matrix of a mini-batch, right-padded with token 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceBatch {
    pub width: usize,
    pub tokens: Vec<usize>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
}

impl SentenceBatch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.tokens[i * self.width..(i + 1) * self.width]
    }
}

/// Pads every sentence to `max(longest sentence, min_len)`.
pub fn pad_batch(sentences: &[&[usize]], min_len: usize) -> SentenceBatch {
    let width = sentences.iter().map(|s| s.len()).max().unwrap_or(0).max(min_len);
    let mut tokens = Vec::with_capacity(width * sentences.len());
    for s in sentences {
        tokens.extend_from_slice(s);
        tokens.resize(tokens.len() + width - s.len(), 0);
    }
    SentenceBatch {
        width,
        tokens,
        lengths: sentences.iter().map(|s| s.len()).collect(),
        labels: Vec::new(),
    }
}

pub fn pad_samples(samples: &[&Sample], min_len: usize) -> SentenceBatch {
    let sentences: Vec<&[usize]> = samples.iter().map(|s| s.tokens.as_slice()).collect();
    let mut batch = pad_batch(&sentences, min_len);
    batch.labels = samples.iter().map(|s| s.label).collect();
    batch
}

/// Right-pads a single sentence with token 0 to at least `min_len`.
pub fn pad_sentence(tokens: &[usize], min_len: usize) -> Vec<usize> {
    let mut out = tokens.to_vec();
    if out.len() < min_len {
        out.resize(min_len, 0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn clean_text_examples() {
        assert_eq!(
            clean_text("A turgid little history lesson, humorless and dull"),
            toks(&["a", "turgid", "little", "history", "lesson", ",", "humorless", "and", "dull"])
        );
        assert!(clean_text("").is_empty());
        assert_eq!(clean_text("doesn't"), toks(&["does", "n't"]));
        assert_eq!(clean_text("It's (really) GOOD!?"), toks(&["it", "'s", "(", "really", ")", "good", "!", "?"]));
        assert_eq!(clean_text("we'll've -- \"x\""), toks(&["we", "'ll", "'ve", "x"]));
    }

    #[test]
    fn vocabulary_is_stable() {
        let sentences = [toks(&["b", "a", "b"]), toks(&["c", "a"])];
        let v1 = Vocabulary::from_sentences(sentences.iter().map(Vec::as_slice));
        let v2 = Vocabulary::from_sentences(sentences.iter().map(Vec::as_slice));
        assert_eq!(v1, v2);
        assert_eq!(v1.len(), 3);
        assert_eq!(v1.index("b"), Some(1));
        assert_eq!(v1.index("c"), Some(3));
        assert_eq!(v1.token(0), Some(PAD_TOKEN));
        assert_eq!(v1.content_hash(), v2.content_hash());
        assert_eq!(Vocabulary::from_tokens(v1.tokens().to_vec()).unwrap(), v1);
    }

    fn write(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    #[test]
    fn load_dataset_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "train.tsv", "neg\tbad movie\npos\tgood film!\n\nneg\tawful\n");
        let test = write(dir.path(), "test.tsv", "pos\tfine\n");
        let ds = load_dataset(&train, None, Some(&test)).unwrap();
        assert_eq!(ds.label_names, vec!["neg", "pos"]);
        assert_eq!(ds.train.len(), 3);
        assert_eq!(ds.train[1].tokens, toks(&["good", "film", "!"]));
        assert_eq!(ds.split_kind(), SplitKind::Standard);

        let single = write(dir.path(), "one.tsv", "x\thello\n");
        let ds = load_dataset(&single, None, None).unwrap();
        assert_eq!((ds.len(), ds.num_classes()), (1, 1));
        assert_eq!(ds.split_kind(), SplitKind::CrossValidation);

        let bad = write(dir.path(), "bad.tsv", "a\tfine\nno tab here\n");
        match load_dataset(&bad, None, None).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        let unknown = write(dir.path(), "unk.tsv", "zzz\twho\n");
        assert!(matches!(load_dataset(&train, None, Some(&unknown)), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn stats_of_small_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "t.tsv", "a\tx y\nb\tx z w\n");
        let ds = load_dataset(&train, None, None).unwrap();
        let vocab = Vocabulary::build(&ds);
        let stats = DatasetStats::compute(&ds, &vocab, None);
        assert_eq!(stats.classes, 2);
        assert_eq!(stats.size, 2);
        assert_eq!(stats.vocabulary, 4);
        assert_eq!(stats.average_length, 2.5);
        assert_eq!(stats.test_size, None);
    }

    fn fixture_vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(toks(words)).unwrap()
    }

    #[test]
    fn binary_word2vec_fixture() {
        let mut buf = Vec::new();
        write_word2vec_binary(&mut buf, 3, &[("a".into(), vec![1.0, 2.0, 3.0]), ("b".into(), vec![4.0, 5.0, 6.0])]).unwrap();
        let vocab = fixture_vocab(&["a", "b", "c"]);
        let table = read_word2vec(Cursor::new(&buf), Word2VecFormat::Binary, &vocab, Path::new("mem")).unwrap();
        assert_eq!(table.dim(), 3);
        assert_eq!(table.coverage(), 2);
        assert_eq!(table.get("b"), Some(&[4.0, 5.0, 6.0][..]));

        let disjoint = fixture_vocab(&["q"]);
        let table = read_word2vec(Cursor::new(&buf), Word2VecFormat::Binary, &disjoint, Path::new("mem")).unwrap();
        assert_eq!(table.coverage(), 0);

        // without the optional newline separators
        let mut compact = b"2 3\n".to_vec();
        for (w, v) in [("a", [1f32, 2., 3.]), ("b", [4., 5., 6.])] {
            compact.extend_from_slice(w.as_bytes());
            compact.push(b' ');
            v.iter().for_each(|x| compact.extend_from_slice(&x.to_le_bytes()));
        }
        let table = read_word2vec(Cursor::new(&compact), Word2VecFormat::Binary, &vocab, Path::new("mem")).unwrap();
        assert_eq!(table.get("a"), Some(&[1.0, 2.0, 3.0][..]));
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let mut buf = Vec::new();
        write_word2vec_binary(&mut buf, 3, &[("a".into(), vec![1.0, 2.0, 3.0]), ("b".into(), vec![4.0, 5.0, 6.0])]).unwrap();
        buf.truncate(buf.len() - 6);
        let vocab = fixture_vocab(&["a", "b"]);
        match read_word2vec(Cursor::new(&buf), Word2VecFormat::Binary, &vocab, Path::new("mem")).unwrap_err() {
            // header 4 bytes, record "a " + 12 + "\n" = 15, then "b " -> vector starts at 21
            Error::Word2Vec { offset, .. } => assert_eq!(offset, 21),
            e => panic!("unexpected {e}"),
        }
        assert!(read_word2vec(Cursor::new(b"two 3\n"), Word2VecFormat::Binary, &vocab, Path::new("mem")).is_err());
    }

    #[test]
    fn text_word2vec_fixture_and_dimension_check() {
        let text = "2 3\na 1 2 3\nb 4 5 6\n";
        let vocab = fixture_vocab(&["a", "b"]);
        let table = read_word2vec(Cursor::new(text), Word2VecFormat::Text, &vocab, Path::new("mem")).unwrap();
        assert_eq!(table.get("a"), Some(&[1.0, 2.0, 3.0][..]));
        let bad = "2 3\na 1 2\nb 4 5 6\n";
        assert!(matches!(
            read_word2vec(Cursor::new(bad), Word2VecFormat::Text, &vocab, Path::new("mem")),
            Err(Error::Word2Vec { offset: 4, .. })
        ));
        let short = "3 3\na 1 2 3\n";
        assert!(read_word2vec(Cursor::new(short), Word2VecFormat::Text, &vocab, Path::new("mem")).is_err());
    }

    #[test]
    fn unknown_words_follow_covered_moments() {
        let vocab = fixture_vocab(&["p", "q", "u1", "u2"]);
        let table = EmbeddingTable::from_vectors(2, [("p".into(), vec![1.0, 1.0]), ("q".into(), vec![3.0, 3.0])]).unwrap();
        let (mean, std) = unknown_word_moments(&[&[1.0, 1.0], &[3.0, 3.0]], 2);
        assert_eq!(mean, vec![2.0, 2.0]);
        assert_eq!(std, vec![1.0, 1.0]);

        let m = init_unknown_words(&vocab, &table, &mut Rng::new(1));
        assert_eq!(m.shape(), &[5, 2]);
        assert_eq!(&m.data()[0..2], &[0.0, 0.0]);
        assert_eq!(&m.data()[2..4], &[1.0, 1.0]);
        assert_eq!(&m.data()[4..6], &[3.0, 3.0]);
    }

    #[test]
    fn single_covered_word_uses_variance_floor() {
        let (_, std) = unknown_word_moments(&[&[0.5, -0.5]], 2);
        assert_eq!(std, vec![VARIANCE_FLOOR.sqrt(); 2]);
    }

    #[test]
    fn generated_unknowns_match_requested_moments() {
        let words: Vec<String> = (0..100_000).map(|i| format!("w{i}")).collect();
        let mut all = vec!["p".to_string(), "q".to_string()];
        all.extend(words);
        let vocab = Vocabulary::from_tokens(all).unwrap();
        let table = EmbeddingTable::from_vectors(1, [("p".into(), vec![1.0]), ("q".into(), vec![3.0])]).unwrap();
        let m = init_unknown_words(&vocab, &table, &mut Rng::new(2));
        let draws = &m.data()[3..];
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - 2.0).abs() / 2.0 < 0.05, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn no_coverage_falls_back_to_small_normal() {
        let vocab = fixture_vocab(&["x", "y"]);
        let m = init_unknown_words(&vocab, &EmbeddingTable::empty(4), &mut Rng::new(3));
        assert_eq!(m.shape(), &[3, 4]);
        assert!(m.data()[4..].iter().all(|x| x.abs() < 1.0 && *x != 0.0));
    }

    #[test]
    fn pad_batch_cases() {
        let a: &[usize] = &[1, 2];
        let b: &[usize] = &[3];
        let batch = pad_batch(&[a, b], 1);
        assert_eq!(batch.width, 2);
        assert_eq!(batch.lengths, vec![2, 1]);
        assert_eq!(batch.row(1), &[3, 0]);

        let batch = pad_batch(&[a, b], 5);
        assert_eq!(batch.width, 5);
        assert_eq!(batch.row(0), &[1, 2, 0, 0, 0]);

        let c: &[usize] = &[4, 5];
        let batch = pad_batch(&[a, c], 2);
        assert_eq!(batch.tokens, vec![1, 2, 4, 5]);
    }
}

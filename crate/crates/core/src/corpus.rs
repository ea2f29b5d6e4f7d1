//! Corpus ingestion: tokenisation, vocabularies, bag-of-words vectors,
//! TF-IDF weights, word embeddings and the on-disk corpus archive.
//!
//! Archive layout (one directory per corpus):
//!
//! | file        | contents                                              |
//! |-------------|-------------------------------------------------------|
//! | `vocab.tsv` | `word<TAB>docFreq` per line, in vocabulary order        |
//! | `bow.tsv`   | `docIndex<TAB>wordIndex<TAB>count` sparse triplets      |
//! | `labels.tsv`| `docIndex<TAB>docId<TAB>label` (empty label if unknown) |
//! | `meta.json` | counts, filter settings, stop-list hash, split indices |

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// English stop words removed during tokenisation unless a custom list is given.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "aren", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "couldn", "d", "did", "didn", "do", "does", "doesn", "doing", "don",
    "down", "during", "each", "few", "for", "from", "further", "had", "hadn", "has", "hasn",
    "have", "haven", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his",
    "how", "i", "if", "in", "into", "is", "isn", "it", "its", "itself", "just", "ll", "m", "ma",
    "me", "mightn", "more", "most", "mustn", "my", "myself", "needn", "no", "nor", "not", "now",
    "o", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out",
    "over", "own", "re", "s", "same", "shan", "she", "should", "shouldn", "so", "some", "such",
    "t", "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there",
    "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "ve",
    "very", "was", "wasn", "we", "were", "weren", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "won", "wouldn", "y", "you", "your", "yours",
    "yourself", "yourselves",
];

/// A tokenised document.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: Option<usize>,
}

/// Lowercases, strips non-alphanumeric characters and removes stop words.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    stopwords: HashSet<String>,
    stoplist_hash: String,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::with_stopwords(DEFAULT_STOPWORDS.iter().map(|s| s.to_string()))
    }
}

impl Tokenizer {
    pub fn with_stopwords(words: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = words.into_iter().map(|w| w.to_lowercase()).collect();
        let joined = set.iter().cloned().collect::<Vec<_>>().join("\n");
        Self {
            stoplist_hash: digest::sha256_hex(joined.as_bytes()),
            stopwords: set.into_iter().collect(),
        }
    }

    /// Reads one stop word per line; blank lines and `#` comments are skipped.
    pub fn from_stopword_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::with_stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from),
        ))
    }

    pub fn stoplist_hash(&self) -> &str {
        &self.stoplist_hash
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let cleaned: String = text
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect::<String>()
            .to_lowercase();
        cleaned
            .split_whitespace()
            .filter(|t| !self.stopwords.contains(*t))
            .map(String::from)
            .collect()
    }
}

/// Anything that can answer "does this word have an embedding?".
pub trait WordSource {
    fn contains_word(&self, word: &str) -> bool;
}

impl WordSource for HashSet<String> {
    fn contains_word(&self, word: &str) -> bool {
        self.contains(word)
    }
}

impl<T: Scalar> WordSource for EmbeddingTable<T> {
    fn contains_word(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }
}

/// Ordered, duplicate-free word list with its inverse index.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    doc_freq: Option<Vec<usize>>,
}

impl Vocabulary {
    /// Builds a vocabulary from words; duplicates are rejected.
    pub fn new(words: Vec<String>, doc_freq: Option<Vec<usize>>) -> Result<Self> {
        if let Some(df) = &doc_freq {
            if df.len() != words.len() {
                return Err(Error::Shape(format!(
                    "{} words but {} document frequencies",
                    words.len(),
                    df.len()
                )));
            }
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self {
            words,
            index,
            doc_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn doc_freq(&self) -> Option<&[usize]> {
        self.doc_freq.as_deref()
    }

    pub fn hash(&self) -> String {
        digest::sha256_hex(self.words.join("\n").as_bytes())
    }
}

/// Keeps words with `docFreq > min_df`, `docFreq < max_df_frac · |docs|` and an
/// embedding in `embeddings`. The result is sorted lexicographically.
pub fn build_vocabulary(
    docs: &[Document],
    min_df: usize,
    max_df_frac: f64,
    embeddings: &dyn WordSource,
) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(Error::InvalidArgument("no documents".into()));
    }
    if !(max_df_frac > 0.0 && max_df_frac <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "max_df_frac must be in (0, 1], got {max_df_frac}"
        )));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let unique: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for w in unique {
            *df.entry(w).or_default() += 1;
        }
    }
    let max_df = max_df_frac * docs.len() as f64;
    let (words, freqs): (Vec<String>, Vec<usize>) = df
        .into_iter()
        .filter(|&(w, f)| f > min_df && (f as f64) < max_df && embeddings.contains_word(w))
        .map(|(w, f)| (w.to_string(), f))
        .unzip();
    if words.is_empty() {
        return Err(Error::EmptyVocabulary {
            filters: format!(
                "docFreq > {min_df}, docFreq < {max_df_frac} x {} docs, present in embeddings",
                docs.len()
            ),
        });
    }
    Vocabulary::new(words, Some(freqs))
}

/// Sorted set union of several vocabularies. Document frequencies are not
/// meaningful across corpora and are dropped.
pub fn unite_vocabularies(vocabs: &[&Vocabulary]) -> Result<Vocabulary> {
    if vocabs.is_empty() {
        return Err(Error::InvalidArgument("no vocabularies to unite".into()));
    }
    let set: BTreeSet<&str> = vocabs
        .iter()
        .flat_map(|v| v.words.iter().map(String::as_str))
        .collect();
    Vocabulary::new(set.into_iter().map(String::from).collect(), None)
}

/// Sparse count vector, entries sorted by word index, no zero counts stored.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BowVector {
    dim: usize,
    entries: Vec<(u32, u32)>,
}

impl BowVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds from (word, count) pairs; repeated words are summed.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, u32)>) -> Result<Self> {
        let mut map: BTreeMap<u32, u32> = BTreeMap::new();
        for (w, c) in pairs {
            if w >= dim {
                return Err(Error::Shape(format!("word index {w} out of range {dim}")));
            }
            if c > 0 {
                *map.entry(w as u32).or_default() += c;
            }
        }
        Ok(Self {
            dim,
            entries: map.into_iter().collect(),
        })
    }

    pub fn from_dense(counts: &[u32]) -> Self {
        Self {
            dim: counts.len(),
            entries: counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| (i as u32, c))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// (word, count) pairs with positive count.
    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn get(&self, word: usize) -> u32 {
        match self.entries.binary_search_by_key(&(word as u32), |&(w, _)| w) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0,
        }
    }

    /// Document length `l`: the total token count.
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self) -> Vec<u32> {
        let mut out = vec![0; self.dim];
        for &(w, c) in &self.entries {
            out[w as usize] = c;
        }
        out
    }

    /// Expands the multiset into one word id per token occurrence.
    pub fn occurrences(&self) -> Vec<usize> {
        self.entries
            .iter()
            .flat_map(|&(w, c)| std::iter::repeat_n(w as usize, c as usize))
            .collect()
    }
}

/// Result of mapping a document onto a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct BowConversion {
    pub bow: BowVector,
    /// Tokens that were not in the vocabulary.
    pub oov_tokens: usize,
}

impl BowConversion {
    /// True when no token survived; the caller decides whether to drop the document.
    pub fn all_oov(&self) -> bool {
        self.bow.is_empty()
    }
}

pub fn to_bow(doc: &Document, vocab: &Vocabulary) -> Result<BowConversion> {
    if doc.tokens.is_empty() {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }
    let mut oov = 0;
    let mut ids = Vec::with_capacity(doc.tokens.len());
    for t in &doc.tokens {
        match vocab.id(t) {
            Some(i) => ids.push((i, 1)),
            None => oov += 1,
        }
    }
    Ok(BowConversion {
        bow: BowVector::from_pairs(vocab.len(), ids)?,
        oov_tokens: oov,
    })
}

/// Dense word vectors, one row per word.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Rejects zero rows since cosine similarity is undefined for them.
    pub fn new(words: Vec<String>, vectors: Array2<T>) -> Result<Self> {
        if words.len() != vectors.nrows() {
            return Err(Error::Shape(format!(
                "{} words but {} embedding rows",
                words.len(),
                vectors.nrows()
            )));
        }
        for (row, v) in vectors.rows().into_iter().enumerate() {
            if v.iter().all(|x| x.is_zero()) {
                return Err(Error::ZeroNorm { side: "embedding", row });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding row {row}")));
            }
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Self {
            words,
            index,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &Array2<T> {
        &self.vectors
    }

    pub fn row(&self, id: usize) -> ndarray::ArrayView1<'_, T> {
        self.vectors.row(id)
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Rows gathered by index, e.g. the embedding slice of a truncated topic.
    pub fn select(&self, ids: &[usize]) -> Array2<T> {
        self.vectors.select(ndarray::Axis(0), ids)
    }

    /// Content hash over words and vector bits.
    pub fn hash(&self) -> String {
        let mut bytes = Vec::new();
        for (w, row) in self.words.iter().zip(self.vectors.rows()) {
            bytes.extend_from_slice(w.as_bytes());
            bytes.push(0);
            for x in row {
                bytes.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        digest::sha256_hex(&bytes)
    }

    /// Re-orders rows to match `vocab`; every vocabulary word must be present.
    pub fn aligned_to(&self, vocab: &Vocabulary) -> Result<Self> {
        let ids = vocab
            .words()
            .iter()
            .map(|w| self.id(w).ok_or_else(|| Error::MissingEmbedding(w.clone())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vocab.words().to_vec(), self.select(&ids))
    }
}

/// Word set of an embedding file without parsing the vectors.
pub fn embedding_words(path: &Path) -> Result<HashSet<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(w) = line.split_whitespace().next() {
            out.insert(w.to_string());
        }
    }
    Ok(out)
}

/// Parses `word f1 … fL` lines. With a vocabulary the table follows vocabulary
/// order and must cover every word; without one rows keep file order.
pub fn load_embeddings<T: Scalar>(path: &Path, vocab: Option<&Vocabulary>) -> Result<EmbeddingTable<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dim: Option<usize> = None;
    let mut words = Vec::new();
    let mut flat: Vec<T> = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        if let Some(v) = vocab {
            if v.id(word).is_none() {
                continue;
            }
        }
        let values = parts
            .map(|s| {
                s.parse::<f64>()
                    .map(T::lit)
                    .map_err(|e| Error::parse("embedding", format!("line {}", lineno + 1), e))
            })
            .collect::<Result<Vec<T>>>()?;
        if values.is_empty() {
            return Err(Error::parse(
                "embedding",
                format!("line {}", lineno + 1),
                "word without vector",
            ));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::EmbeddingDimension {
                    line: lineno + 1,
                    expected: d,
                    found: values.len(),
                })
            }
            _ => {}
        }
        if !seen.insert(word.to_string()) {
            continue;
        }
        words.push(word.to_string());
        flat.extend(values);
    }
    let dim = dim.unwrap_or(0);
    let table = EmbeddingTable::new(
        words,
        Array2::from_shape_vec((flat.len() / dim.max(1), dim), flat)
            .map_err(|e| Error::Shape(e.to_string()))?,
    )?;
    match vocab {
        Some(v) => table.aligned_to(v),
        None => Ok(table),
    }
}

/// Per-document TF-IDF weights aligned with each document's `entries()`:
/// `tf · ln(N / df)` with raw counts and no smoothing.
pub fn tfidf_weights(corpus: &Corpus) -> Vec<Vec<f64>> {
    tfidf_for(&corpus.docs, corpus.vocabulary.len())
}

pub(crate) fn tfidf_for(docs: &[BowVector], vocab_size: usize) -> Vec<Vec<f64>> {
    let n = docs.len() as f64;
    let mut df = vec![0usize; vocab_size];
    for d in docs {
        for &(w, _) in d.entries() {
            df[w as usize] += 1;
        }
    }
    docs.iter()
        .map(|d| {
            d.entries()
                .iter()
                .map(|&(w, c)| c as f64 * (n / df[w as usize] as f64).ln())
                .collect()
        })
        .collect()
}

/// Counts reported by [`Corpus::from_documents`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub input_docs: usize,
    pub kept_docs: usize,
    /// Ids of documents with no in-vocabulary token.
    pub dropped: Vec<String>,
    pub oov_tokens: usize,
}

/// Bag-of-words corpus over a fixed vocabulary with a train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocabulary: Vocabulary,
    pub ids: Vec<String>,
    pub docs: Vec<BowVector>,
    pub labels: Vec<Option<usize>>,
    pub label_names: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Corpus {
    /// Converts documents, dropping those with no in-vocabulary token. All
    /// documents start in the training split.
    pub fn from_documents(
        docs: &[Document],
        vocabulary: Vocabulary,
        label_names: Vec<String>,
    ) -> Result<(Self, PreprocessSummary)> {
        let mut summary = PreprocessSummary {
            input_docs: docs.len(),
            ..Default::default()
        };
        let mut corpus = Corpus {
            vocabulary,
            ids: Vec::new(),
            docs: Vec::new(),
            labels: Vec::new(),
            label_names,
            train: Vec::new(),
            test: Vec::new(),
        };
        for d in docs {
            if d.tokens.is_empty() {
                summary.dropped.push(d.id.clone());
                continue;
            }
            let conv = to_bow(d, &corpus.vocabulary)?;
            summary.oov_tokens += conv.oov_tokens;
            if conv.all_oov() {
                summary.dropped.push(d.id.clone());
                continue;
            }
            corpus.ids.push(d.id.clone());
            corpus.docs.push(conv.bow);
            corpus.labels.push(d.label);
        }
        summary.kept_docs = corpus.docs.len();
        corpus.train = (0..corpus.docs.len()).collect();
        corpus.validate()?;
        Ok((corpus, summary))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vocabulary.len();
        if self.ids.len() != self.docs.len() || self.labels.len() != self.docs.len() {
            return Err(Error::Shape("ids/docs/labels lengths differ".into()));
        }
        if let Some(d) = self.docs.iter().find(|d| d.dim() != v) {
            return Err(Error::Shape(format!("bow of length {} over vocabulary {v}", d.dim())));
        }
        if let Some(l) = self.labels.iter().flatten().find(|&&l| l >= self.num_labels()) {
            return Err(Error::InvalidArgument(format!("label {l} out of range")));
        }
        let train: HashSet<_> = self.train.iter().collect();
        if self.test.iter().any(|i| train.contains(i)) {
            return Err(Error::InvalidArgument("train and test splits overlap".into()));
        }
        if self.train.iter().chain(&self.test).any(|&i| i >= self.docs.len()) {
            return Err(Error::InvalidArgument("split index out of range".into()));
        }
        Ok(())
    }

    /// Same documents re-indexed onto a (super-)vocabulary such as a union.
    pub fn reindexed(&self, vocabulary: &Vocabulary) -> Result<Self> {
        let docs = self
            .docs
            .iter()
            .map(|d| {
                let pairs = d
                    .entries()
                    .iter()
                    .map(|&(w, c)| {
                        let word = self.vocabulary.word(w as usize);
                        vocabulary
                            .id(word)
                            .map(|i| (i, c))
                            .ok_or_else(|| Error::InvalidArgument(format!("{word:?} missing from target vocabulary")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                BowVector::from_pairs(vocabulary.len(), pairs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            vocabulary: vocabulary.clone(),
            docs,
            ..self.clone()
        })
    }

    pub fn subset_docs(&self, idx: &[usize]) -> Vec<&BowVector> {
        idx.iter().map(|&i| &self.docs[i]).collect()
    }

    /// Content hash over vocabulary, counts, labels and split.
    pub fn hash(&self) -> String {
        let mut s = self.vocabulary.hash();
        for (i, d) in self.docs.iter().enumerate() {
            s.push_str(&format!("|{i}:{:?}:{:?}", d.entries(), self.labels[i]));
        }
        s.push_str(&format!("|train{:?}|test{:?}", self.train, self.test));
        digest::sha256_hex(s.as_bytes())
    }

    /// Writes the archive directory described in the module docs.
    pub fn write_archive(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: &mut dyn FnMut(&mut BufWriter<File>) -> std::io::Result<()>| {
            let path = dir.join(name);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(f);
            body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
        };
        write("vocab.tsv", &mut |w| {
            for (i, word) in self.vocabulary.words().iter().enumerate() {
                match self.vocabulary.doc_freq() {
                    Some(df) => writeln!(w, "{word}\t{}", df[i])?,
                    None => writeln!(w, "{word}\t")?,
                }
            }
            Ok(())
        })?;
        write("bow.tsv", &mut |w| {
            for (i, d) in self.docs.iter().enumerate() {
                for &(word, c) in d.entries() {
                    writeln!(w, "{i}\t{word}\t{c}")?;
                }
            }
            Ok(())
        })?;
        write("labels.tsv", &mut |w| {
            for (i, (id, l)) in self.ids.iter().zip(&self.labels).enumerate() {
                match l {
                    Some(l) => writeln!(w, "{i}\t{id}\t{l}")?,
                    None => writeln!(w, "{i}\t{id}\t")?,
                }
            }
            Ok(())
        })?;
        let meta = ArchiveMeta {
            num_docs: self.len(),
            vocab_size: self.vocabulary.len(),
            label_names: self.label_names.clone(),
            train: self.train.clone(),
            test: self.test.clone(),
            corpus_hash: self.hash(),
            extra,
        };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn read_archive(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        let meta: ArchiveMeta = serde_json::from_str(&read("meta.json")?)?;

        let mut words = Vec::new();
        let mut dfs = Vec::new();
        for (n, line) in read("vocab.tsv")?.lines().enumerate() {
            let (w, df) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse("vocab.tsv", n + 1, "expected word<TAB>docFreq"))?;
            words.push(w.to_string());
            dfs.push(if df.is_empty() {
                None
            } else {
                Some(df.parse::<usize>().map_err(|e| Error::parse("vocab.tsv", n + 1, e))?)
            });
        }
        let doc_freq = dfs.iter().copied().collect::<Option<Vec<_>>>();
        let vocabulary = Vocabulary::new(words, doc_freq)?;

        let mut per_doc: Vec<Vec<(usize, u32)>> = vec![Vec::new(); meta.num_docs];
        for (n, line) in read("bow.tsv")?.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let [d, w, c] = f[..] else {
                return Err(Error::parse("bow.tsv", n + 1, "expected three fields"));
            };
            let p = |s: &str| s.parse::<usize>().map_err(|e| Error::parse("bow.tsv", n + 1, e));
            let d = p(d)?;
            if d >= meta.num_docs {
                return Err(Error::parse("bow.tsv", n + 1, "document index out of range"));
            }
            per_doc[d].push((p(w)?, p(c)? as u32));
        }
        let docs = per_doc
            .into_iter()
            .map(|pairs| BowVector::from_pairs(vocabulary.len(), pairs))
            .collect::<Result<Vec<_>>>()?;

        let mut ids = vec![String::new(); meta.num_docs];
        let mut labels = vec![None; meta.num_docs];
        for (n, line) in read("labels.tsv")?.lines().enumerate() {
            let f: Vec<&str> = line.splitn(3, '\t').collect();
            let [i, id, l] = f[..] else {
                return Err(Error::parse("labels.tsv", n + 1, "expected three fields"));
            };
            let i: usize = i.parse().map_err(|e| Error::parse("labels.tsv", n + 1, e))?;
            if i >= meta.num_docs {
                return Err(Error::parse("labels.tsv", n + 1, "document index out of range"));
            }
            ids[i] = id.to_string();
            if !l.is_empty() {
                labels[i] = Some(l.parse().map_err(|e| Error::parse("labels.tsv", n + 1, e))?);
            }
        }
        let corpus = Corpus {
            vocabulary,
            ids,
            docs,
            labels,
            label_names: meta.label_names,
            train: meta.train,
            test: meta.test,
        };
        corpus.validate()?;
        Ok((corpus, meta.extra))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveMeta {
    num_docs: usize,
    vocab_size: usize,
    label_names: Vec<String>,
    train: Vec<usize>,
    test: Vec<usize>,
    corpus_hash: String,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Seeded random partition with `round(ratio · N)` training documents,
/// clamped so both sides are non-empty.
pub fn split_train_test(corpus: &Corpus, ratio: f64, seed: u64) -> Result<Corpus> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("cannot split a corpus of {n} documents")));
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Corpus {
        train,
        test,
        ..corpus.clone()
    })
}

/// One input record: `{"id": str, "text": str, "label": str|int}`.
#[derive(Debug, Clone, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub label: Option<RawLabel>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(untagged)]
pub enum RawLabel {
    Int(i64),
    Str(String),
}

impl std::fmt::Display for RawLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RawLabel::Int(i) => write!(f, "{i}"),
            RawLabel::Str(s) => f.write_str(s),
        }
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RawDocument>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse("jsonl", format!("{}:{}", path.display(), n + 1), e))?,
        );
    }
    Ok(out)
}

/// Tokenises raw records and maps labels to dense ids (sorted label order).
/// Returns the documents and the label names.
pub fn tokenize_documents(raw: &[RawDocument], tokenizer: &Tokenizer) -> (Vec<Document>, Vec<String>) {
    let labels: BTreeSet<&RawLabel> = raw.iter().filter_map(|r| r.label.as_ref()).collect();
    let names: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
    let lookup: HashMap<&RawLabel, usize> = labels.into_iter().enumerate().map(|(i, l)| (l, i)).collect();
    let docs = raw
        .iter()
        .map(|r| Document {
            id: r.id.clone(),
            tokens: tokenizer.tokenize(&r.text),
            label: r.label.as_ref().map(|l| lookup[l]),
        })
        .collect();
    (docs, names)
}

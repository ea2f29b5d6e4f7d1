//! Word-level document augmentation over bag-of-words vectors.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BowVector, Corpus, EmbeddingTable};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugmentKind {
    RandomDrop,
    RandomInsertion,
    RandomToSimilar,
    HighestToSimilar,
    LowestToSimilar,
    RandomToDissimilar,
    HighestToDissimilar,
    LowestToDissimilar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Similar,
    Dissimilar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Selection {
    Random,
    Highest,
    Lowest,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 8] = [
        AugmentKind::RandomDrop,
        AugmentKind::RandomInsertion,
        AugmentKind::RandomToSimilar,
        AugmentKind::HighestToSimilar,
        AugmentKind::LowestToSimilar,
        AugmentKind::RandomToDissimilar,
        AugmentKind::HighestToDissimilar,
        AugmentKind::LowestToDissimilar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::RandomDrop => "RandomDrop",
            AugmentKind::RandomInsertion => "RandomInsertion",
            AugmentKind::RandomToSimilar => "RandomToSimilar",
            AugmentKind::HighestToSimilar => "HighestToSimilar",
            AugmentKind::LowestToSimilar => "LowestToSimilar",
            AugmentKind::RandomToDissimilar => "RandomToDissimilar",
            AugmentKind::HighestToDissimilar => "HighestToDissimilar",
            AugmentKind::LowestToDissimilar => "LowestToDissimilar",
        }
    }

    /// Replacement direction, `None` for drop and insertion.
    pub fn direction(self) -> Option<Direction> {
        use AugmentKind::*;
        match self {
            RandomDrop | RandomInsertion => None,
            RandomToSimilar | HighestToSimilar | LowestToSimilar => Some(Direction::Similar),
            RandomToDissimilar | HighestToDissimilar | LowestToDissimilar => Some(Direction::Dissimilar),
        }
    }

    fn selection(self) -> Selection {
        use AugmentKind::*;
        match self {
            HighestToSimilar | HighestToDissimilar => Selection::Highest,
            LowestToSimilar | LowestToDissimilar => Selection::Lowest,
            _ => Selection::Random,
        }
    }

    /// Whether the kind ranks words by TF-IDF.
    pub fn needs_tfidf(self) -> bool {
        self.selection() != Selection::Random
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentKind {
    type Err = Error;

    /// Accepts `HighestToSimilar`, `highest-to-similar`, `highest_to_similar`.
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .flat_map(char::to_lowercase)
            .collect();
        Self::ALL
            .into_iter()
            .find(|k| k.name().to_lowercase() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub kind: AugmentKind,
    /// Fraction of the document length to perturb, in `(0, 1]`.
    pub beta: f64,
    /// Neighbour pool size for replacements.
    pub top_words: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            kind: AugmentKind::HighestToSimilar,
            beta: 0.5,
            top_words: 20,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidArgument(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        if self.top_words == 0 {
            return Err(Error::InvalidArgument("top_words must be at least 1".into()));
        }
        Ok(())
    }
}

/// `⌈β · l⌉`.
pub fn num_perturbed(beta: f64, doc_len: usize) -> usize {
    (beta * doc_len as f64).ceil() as usize
}

/// Top-`k` neighbours of `word` by cosine similarity (descending for
/// [`Direction::Similar`], ascending otherwise), excluding the word itself.
pub fn word_neighbors<T: Scalar>(
    word: usize,
    embeddings: &EmbeddingTable<T>,
    k: usize,
    direction: Direction,
) -> Vec<usize> {
    let norms = row_norms(embeddings);
    let ranked = ranked_by_cosine(word, embeddings, &norms);
    match direction {
        Direction::Similar => ranked.iter().take(k).map(|&(_, j)| j).collect(),
        Direction::Dissimilar => ranked_ascending(&ranked).take(k).collect(),
    }
}

fn row_norms<T: Scalar>(embeddings: &EmbeddingTable<T>) -> Vec<f64> {
    embeddings
        .vectors()
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).as_f64().sqrt())
        .collect()
}

/// Other words sorted by descending cosine, ties by index.
fn ranked_by_cosine<T: Scalar>(word: usize, embeddings: &EmbeddingTable<T>, norms: &[f64]) -> Vec<(f64, usize)> {
    let q = embeddings.row(word);
    let mut sims: Vec<(f64, usize)> = (0..embeddings.len())
        .filter(|&j| j != word)
        .map(|j| (q.dot(&embeddings.row(j)).as_f64() / (norms[word] * norms[j]), j))
        .collect();
    sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    sims
}

/// Ascending by cosine with ties still broken by the smaller index.
fn ranked_ascending(desc: &[(f64, usize)]) -> impl Iterator<Item = usize> + '_ {
    let mut asc: Vec<(f64, usize)> = desc.to_vec();
    asc.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    asc.into_iter().map(|(_, j)| j)
}

/// Precomputed similar and dissimilar neighbour lists for every word.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTables {
    pub k: usize,
    pub embedding_hash: String,
    similar: Vec<Vec<u32>>,
    dissimilar: Vec<Vec<u32>>,
}

impl NeighborTables {
    pub fn build<T: Scalar>(embeddings: &EmbeddingTable<T>, k: usize) -> Self {
        let norms = row_norms(embeddings);
        let (similar, dissimilar): (Vec<Vec<u32>>, Vec<Vec<u32>>) = (0..embeddings.len())
            .into_par_iter()
            .map(|w| {
                let ranked = ranked_by_cosine(w, embeddings, &norms);
                let sim = ranked.iter().take(k).map(|&(_, j)| j as u32).collect();
                let dis = ranked_ascending(&ranked).take(k).map(|j| j as u32).collect();
                (sim, dis)
            })
            .unzip();
        Self {
            k,
            embedding_hash: embeddings.hash(),
            similar,
            dissimilar,
        }
    }

    pub fn len(&self) -> usize {
        self.similar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.similar.is_empty()
    }

    pub fn get(&self, word: usize, direction: Direction) -> &[u32] {
        match direction {
            Direction::Similar => &self.similar[word],
            Direction::Dissimilar => &self.dissimilar[word],
        }
    }

    /// Cache file name keyed by embedding hash, pool size and direction.
    pub fn cache_path(dir: &Path, embedding_hash: &str, k: usize, direction: Direction) -> PathBuf {
        let tag = match direction {
            Direction::Similar => "sim",
            Direction::Dissimilar => "dis",
        };
        dir.join(format!("neighbors-{}-k{k}-{tag}.tsv", &embedding_hash[..16.min(embedding_hash.len())]))
    }

    /// Loads both tables from `dir` when cached, otherwise builds and stores them.
    pub fn load_or_build<T: Scalar>(dir: &Path, embeddings: &EmbeddingTable<T>, k: usize) -> Result<Self> {
        let hash = embeddings.hash();
        let sim_path = Self::cache_path(dir, &hash, k, Direction::Similar);
        let dis_path = Self::cache_path(dir, &hash, k, Direction::Dissimilar);
        if sim_path.exists() && dis_path.exists() {
            let similar = read_lists(&sim_path, embeddings.len())?;
            let dissimilar = read_lists(&dis_path, embeddings.len())?;
            return Ok(Self {
                k,
                embedding_hash: hash,
                similar,
                dissimilar,
            });
        }
        let tables = Self::build(embeddings, k);
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_lists(&sim_path, &tables.similar)?;
        write_lists(&dis_path, &tables.dissimilar)?;
        Ok(tables)
    }
}

fn write_lists(path: &Path, lists: &[Vec<u32>]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, l) in lists.iter().enumerate() {
        let ids: Vec<String> = l.iter().map(u32::to_string).collect();
        writeln!(w, "{i}\t{}", ids.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_lists(path: &Path, expected: usize) -> Result<Vec<Vec<u32>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lists = Vec::with_capacity(expected);
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let loc = format!("{}:{}", path.display(), n + 1);
        let (_, ids) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse("neighbor cache", &loc, "missing tab"))?;
        let list = ids
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u32>().map_err(|e| Error::parse("neighbor cache", &loc, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        lists.push(list);
    }
    if lists.len() != expected {
        return Err(Error::parse(
            "neighbor cache",
            path.display().to_string(),
            format!("{} rows, expected {expected}", lists.len()),
        ));
    }
    Ok(lists)
}

/// Degenerate situations encountered while augmenting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentFlag {
    /// Dropping `n` tokens would empty the document; all but one were dropped.
    DropClamped { requested: usize, dropped: usize },
    /// A word had no neighbours and was kept.
    NoNeighbors { word: usize },
    /// Output equals input.
    Unchanged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub bow: BowVector,
    /// Token occurrences actually dropped, inserted or replaced.
    pub perturbed: usize,
    pub flags: Vec<AugmentFlag>,
}

/// Applies `cfg.kind` with a generator seeded from `cfg.seed`.
pub fn augment_bow(
    x: &BowVector,
    cfg: &AugmentConfig,
    tfidf: Option<&[f64]>,
    neighbors: &NeighborTables,
) -> Result<Augmented> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    augment_bow_with_rng(x, cfg, tfidf, neighbors, &mut rng)
}

/// As [`augment_bow`] but drawing from a caller-owned generator.
/// `tfidf` is aligned with `x.entries()`.
pub fn augment_bow_with_rng<R: Rng + ?Sized>(
    x: &BowVector,
    cfg: &AugmentConfig,
    tfidf: Option<&[f64]>,
    neighbors: &NeighborTables,
    rng: &mut R,
) -> Result<Augmented> {
    cfg.validate()?;
    let len = x.total() as usize;
    if len == 0 {
        return Err(Error::EmptyDocument("bag of words".into()));
    }
    if neighbors.len() != x.dim() {
        return Err(Error::Shape(format!(
            "neighbor tables cover {} words, document has dimension {}",
            neighbors.len(),
            x.dim()
        )));
    }
    let n = num_perturbed(cfg.beta, len);
    let mut counts = x.to_dense();
    let mut flags = Vec::new();
    let occurrences = x.occurrences();

    let perturbed = match cfg.kind {
        AugmentKind::RandomDrop => {
            let m = n.min(len - 1);
            if m < n {
                flags.push(AugmentFlag::DropClamped {
                    requested: n,
                    dropped: m,
                });
            }
            for pos in sample(rng, len, m) {
                counts[occurrences[pos]] -= 1;
            }
            m
        }
        AugmentKind::RandomInsertion => {
            for _ in 0..n {
                counts[rng.random_range(0..x.dim())] += 1;
            }
            n
        }
        kind => {
            let n = n.min(len);
            let direction = kind.direction().expect("replacement kind");
            let selected: Vec<usize> = match kind.selection() {
                Selection::Random => sample(rng, len, n).into_iter().map(|p| occurrences[p]).collect(),
                sel => {
                    let weights = tfidf.ok_or_else(|| {
                        Error::InvalidArgument(format!("{kind} needs TF-IDF weights"))
                    })?;
                    if weights.len() != x.entries().len() {
                        return Err(Error::Shape(format!(
                            "{} TF-IDF weights for {} distinct words",
                            weights.len(),
                            x.entries().len()
                        )));
                    }
                    ranked_occurrences(x, weights, sel == Selection::Highest, n)
                }
            };
            for w in selected {
                let pool = neighbors.get(w, direction);
                let pool = &pool[..cfg.top_words.min(pool.len())];
                if pool.is_empty() {
                    flags.push(AugmentFlag::NoNeighbors { word: w });
                    continue;
                }
                counts[w] -= 1;
                counts[pool[rng.random_range(0..pool.len())] as usize] += 1;
            }
            n
        }
    };
    let bow = BowVector::from_dense(&counts);
    if bow == *x {
        flags.push(AugmentFlag::Unchanged);
    }
    Ok(Augmented { bow, perturbed, flags })
}

/// First `n` token occurrences walking distinct words in TF-IDF order.
fn ranked_occurrences(x: &BowVector, weights: &[f64], highest: bool, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.entries().len()).collect();
    order.sort_by(|&a, &b| {
        let c = weights[a].total_cmp(&weights[b]);
        let c = if highest { c.reverse() } else { c };
        c.then(a.cmp(&b))
    });
    order
        .into_iter()
        .flat_map(|e| {
            let (w, c) = x.entries()[e];
            std::iter::repeat_n(w as usize, c as usize)
        })
        .take(n)
        .collect()
}

/// Inverse document frequencies `ln(N / df)`; words absent from the
/// reference documents get `ln N`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable(Vec<f64>);

impl IdfTable {
    pub fn from_docs(docs: &[BowVector], vocab_size: usize) -> Self {
        let mut df = vec![0usize; vocab_size];
        for d in docs {
            for &(w, _) in d.entries() {
                df[w as usize] += 1;
            }
        }
        let n = docs.len().max(1) as f64;
        Self(df.into_iter().map(|d| (n / d.max(1) as f64).ln()).collect())
    }

    /// TF-IDF weights aligned with `x.entries()`.
    pub fn weights(&self, x: &BowVector) -> Vec<f64> {
        x.entries().iter().map(|&(w, c)| c as f64 * self.0[w as usize]).collect()
    }
}

/// Noisy copy of a corpus plus the operators applied to each document.
#[derive(Debug, Clone)]
pub struct NoisyCorpus {
    pub corpus: Corpus,
    pub traces: Vec<Vec<AugmentKind>>,
    pub flags: Vec<Vec<AugmentFlag>>,
}

/// Transforms every document by a random composition of one to three
/// operators drawn uniformly from [`AugmentKind::ALL`], each perturbing
/// `⌈strength · l⌉` words of the current document.
pub fn make_noisy_corpus(
    corpus: &Corpus,
    strength: f64,
    seed: u64,
    top_words: usize,
    neighbors: &NeighborTables,
) -> Result<NoisyCorpus> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::InvalidArgument(format!("strength must be in (0, 1], got {strength}")));
    }
    let idf = IdfTable::from_docs(&corpus.docs, corpus.vocabulary.len());
    let results: Vec<Result<(BowVector, Vec<AugmentKind>, Vec<AugmentFlag>)>> = corpus
        .docs
        .par_iter()
        .enumerate()
        .map(|(i, doc)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let steps = rng.random_range(1..=3);
            let kinds: Vec<AugmentKind> = (0..steps)
                .map(|_| AugmentKind::ALL[rng.random_range(0..AugmentKind::ALL.len())])
                .collect();
            let mut current = doc.clone();
            let mut flags = Vec::new();
            for &kind in &kinds {
                let cfg = AugmentConfig {
                    kind,
                    beta: strength,
                    top_words,
                    seed,
                };
                let weights = idf.weights(&current);
                let out = augment_bow_with_rng(&current, &cfg, Some(&weights), neighbors, &mut rng)?;
                flags.extend(out.flags);
                current = out.bow;
            }
            Ok((current, kinds, flags))
        })
        .collect();
    let mut noisy = corpus.clone();
    let mut traces = Vec::with_capacity(results.len());
    let mut all_flags = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let (bow, kinds, flags) = r?;
        noisy.docs[i] = bow;
        traces.push(kinds);
        all_flags.push(flags);
    }
    Ok(NoisyCorpus {
        corpus: noisy,
        traces,
        flags: all_flags,
    })
}

//! Seeded synthetic corpora with known latent structure, used by tests,
//! benchmarks and the demo commands.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{split_train_test, BowVector, Corpus, EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};

/// Two domains over one vocabulary. Each theme owns a block of source words
/// and a block of target words; every target word sits close to one source
/// word in embedding space. Background words are shared by both domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftConfig {
    pub themes: usize,
    pub words_per_theme: usize,
    pub background_words: usize,
    pub docs_per_domain: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token comes from the document's theme.
    pub theme_share: f64,
    /// Probability that a theme token is drawn from the other domain's block.
    pub crossover: f64,
    pub embedding_dim: usize,
    /// Spread of word vectors around their theme centre.
    pub theme_spread: f64,
    /// Distance between a target word and its source counterpart.
    pub pair_spread: f64,
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for DomainShiftConfig {
    fn default() -> Self {
        Self {
            themes: 4,
            words_per_theme: 30,
            background_words: 60,
            docs_per_domain: 1000,
            min_len: 80,
            max_len: 150,
            theme_share: 0.5,
            crossover: 0.0,
            embedding_dim: 50,
            theme_spread: 0.6,
            pair_spread: 0.15,
            train_ratio: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DomainPair {
    pub source: Corpus,
    pub target: Corpus,
    pub embeddings: EmbeddingTable<f64>,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn word_weights(rng: &mut ChaCha8Rng, n: usize) -> Result<WeightedIndex<f64>> {
    let w: Vec<f64> = (0..n).map(|i| rng.random_range(0.5..1.5) / (1.0 + i as f64).sqrt()).collect();
    WeightedIndex::new(w).map_err(|e| Error::InvalidArgument(e.to_string()))
}

impl DomainShiftConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.themes >= 2
            && self.words_per_theme >= 2
            && self.docs_per_domain >= 2
            && (1..=self.max_len).contains(&self.min_len)
            && (0.0..=1.0).contains(&self.theme_share)
            && (0.0..=1.0).contains(&self.crossover)
            && self.embedding_dim >= 2
            && (self.background_words > 0 || self.theme_share == 1.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid synthetic corpus settings: {self:?}")))
        }
    }

    fn source_word(&self, theme: usize, i: usize) -> usize {
        theme * 2 * self.words_per_theme + i
    }

    fn target_word(&self, theme: usize, i: usize) -> usize {
        self.source_word(theme, i) + self.words_per_theme
    }

    fn vocab_size(&self) -> usize {
        self.themes * 2 * self.words_per_theme + self.background_words
    }
}

/// Generates the source and target corpora, each split into train and test.
pub fn domain_shift(cfg: &DomainShiftConfig) -> Result<DomainPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let v = cfg.vocab_size();
    let mut words = vec![String::new(); v];
    for t in 0..cfg.themes {
        for i in 0..cfg.words_per_theme {
            words[cfg.source_word(t, i)] = format!("src{t}_{i}");
            words[cfg.target_word(t, i)] = format!("tgt{t}_{i}");
        }
    }
    let bg0 = cfg.themes * 2 * cfg.words_per_theme;
    for i in 0..cfg.background_words {
        words[bg0 + i] = format!("bg_{i}");
    }

    let dim = cfg.embedding_dim;
    let mut vectors = Array2::<f64>::zeros((v, dim));
    for t in 0..cfg.themes {
        let centre = unit_gaussian(&mut rng, dim);
        for i in 0..cfg.words_per_theme {
            let own = unit_gaussian(&mut rng, dim);
            let twin = unit_gaussian(&mut rng, dim);
            for d in 0..dim {
                let s = centre[d] + cfg.theme_spread * own[d];
                vectors[[cfg.source_word(t, i), d]] = s;
                vectors[[cfg.target_word(t, i), d]] = s + cfg.pair_spread * twin[d];
            }
        }
    }
    for i in 0..cfg.background_words {
        let u = unit_gaussian(&mut rng, dim);
        vectors.row_mut(bg0 + i).assign(&ndarray::Array1::from(u));
    }
    let embeddings = EmbeddingTable::new(words.clone(), vectors)?;

    let source_pick: Vec<WeightedIndex<f64>> = (0..cfg.themes)
        .map(|_| word_weights(&mut rng, cfg.words_per_theme))
        .collect::<Result<_>>()?;
    let target_pick: Vec<WeightedIndex<f64>> = (0..cfg.themes)
        .map(|_| word_weights(&mut rng, cfg.words_per_theme))
        .collect::<Result<_>>()?;
    let background = if cfg.background_words > 0 {
        Some(word_weights(&mut rng, cfg.background_words)?)
    } else {
        None
    };

    let make = |target: bool, rng: &mut ChaCha8Rng| -> Result<(Vec<BowVector>, Vec<Option<usize>>)> {
        let mut docs = Vec::with_capacity(cfg.docs_per_domain);
        let mut labels = Vec::with_capacity(cfg.docs_per_domain);
        for d in 0..cfg.docs_per_domain {
            let theme = d % cfg.themes;
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let mut counts = vec![0u32; v];
            for _ in 0..len {
                let w = match &background {
                    Some(bg) if !rng.random_bool(cfg.theme_share) => bg0 + bg.sample(rng),
                    _ => {
                        let other = rng.random_bool(cfg.crossover);
                        if target != other {
                            cfg.target_word(theme, target_pick[theme].sample(rng))
                        } else {
                            cfg.source_word(theme, source_pick[theme].sample(rng))
                        }
                    }
                };
                counts[w] += 1;
            }
            docs.push(BowVector::from_dense(&counts));
            labels.push(Some(theme));
        }
        Ok((docs, labels))
    };
    let (src_docs, src_labels) = make(false, &mut rng)?;
    let (tgt_docs, tgt_labels) = make(true, &mut rng)?;

    let doc_freq = |docs: &[BowVector]| -> Vec<usize> {
        let mut df = vec![0usize; v];
        for d in docs {
            for &(w, _) in d.entries() {
                df[w as usize] += 1;
            }
        }
        df
    };
    let label_names: Vec<String> = (0..cfg.themes).map(|t| format!("theme{t}")).collect();
    let build = |prefix: &str, docs: Vec<BowVector>, labels: Vec<Option<usize>>, seed: u64| -> Result<Corpus> {
        let vocabulary = Vocabulary::new(words.clone(), Some(doc_freq(&docs)))?;
        let corpus = Corpus {
            vocabulary,
            ids: (0..docs.len()).map(|i| format!("{prefix}{i}")).collect(),
            train: (0..docs.len()).collect(),
            test: Vec::new(),
            docs,
            labels,
            label_names: label_names.clone(),
        };
        corpus.validate()?;
        split_train_test(&corpus, cfg.train_ratio, seed)
    };
    Ok(DomainPair {
        source: build("s", src_docs, src_labels, cfg.seed)?,
        target: build("t", tgt_docs, tgt_labels, cfg.seed.wrapping_add(1))?,
        embeddings,
    })
}

/// Documents drawn from disjoint word blocks, one block per label, with
/// embeddings clustered by block.
pub fn block_corpus(blocks: usize, words_per_block: usize, docs: usize, len: usize, seed: u64) -> Result<(Corpus, EmbeddingTable<f64>)> {
    let cfg = DomainShiftConfig {
        themes: blocks,
        words_per_theme: words_per_block,
        background_words: 0,
        docs_per_domain: docs,
        min_len: len,
        max_len: len,
        theme_share: 1.0,
        crossover: 0.0,
        seed,
        ..Default::default()
    };
    let pair = domain_shift(&cfg)?;
    Ok((pair.source, pair.embeddings))
}

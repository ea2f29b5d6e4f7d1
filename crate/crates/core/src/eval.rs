//! Evaluation of topical representations: random-forest classification
//! accuracy, top-topic purity and NMI, internal NPMI coherence, transfer
//! evaluation and paired t-tests.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{BowVector, Corpus};
use crate::error::{Error, Result};
use crate::ntm::{infer_corpus, NtmParams};
use crate::scalar::Scalar;
use crate::topical::{topics_from_decoder, TopicSet};

/// Number of candidate features examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureRule {
    Sqrt,
    All,
    Count(usize),
}

impl FeatureRule {
    fn resolve(self, features: usize) -> usize {
        let n = match self {
            FeatureRule::Sqrt => (features as f64).sqrt().round() as usize,
            FeatureRule::All => features,
            FeatureRule::Count(n) => n,
        };
        n.clamp(1, features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub features_per_split: FeatureRule,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RandomForestConfig {
    fn default() -> Self {
        Self {
            trees: 10,
            max_depth: 8,
            features_per_split: FeatureRule::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART tree with Gini impurity.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

struct TreeBuilder<'a, R> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    classes: usize,
    max_depth: usize,
    mtry: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn build(&mut self, idx: &[usize], depth: usize) -> usize {
        let mut counts = vec![0usize; self.classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf(majority(&counts)));
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.max_depth || pure || idx.len() < 2 {
            return slot;
        }
        let Some((feature, threshold)) = self.best_split(idx, &counts) else {
            return slot;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[[i, feature]] <= threshold);
        let left = self.build(&l, depth + 1);
        let right = self.build(&r, depth + 1);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }

    /// Lowest weighted Gini over midpoints of the sampled features.
    fn best_split(&mut self, idx: &[usize], counts: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        let parent = gini(counts, n);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut features: Vec<usize> = sample(self.rng, self.x.ncols(), self.mtry).into_vec();
        features.sort_unstable();
        for f in features {
            let mut order: Vec<(f64, usize)> = idx.iter().map(|&i| (self.x[[i, f]], self.y[i])).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0usize; self.classes];
            for k in 0..n - 1 {
                left[order[k].1] += 1;
                if order[k].0 == order[k + 1].0 {
                    continue;
                }
                let nl = k + 1;
                let right: Vec<usize> = counts.iter().zip(&left).map(|(&c, &l)| c - l).collect();
                let score = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
                if best.is_none_or(|(b, _, _)| score < b) {
                    best = Some((score, f, (order[k].0 + order[k + 1].0) / 2.0));
                }
            }
        }
        best.filter(|&(s, _, _)| s < parent - 1e-12).map(|(_, f, t)| (f, t))
    }
}

impl DecisionTree {
    pub fn fit<R: Rng>(x: &Array2<f64>, y: &[usize], idx: &[usize], classes: usize, max_depth: usize, mtry: usize, rng: &mut R) -> Self {
        let mut b = TreeBuilder {
            x,
            y,
            classes,
            max_depth,
            mtry: mtry.clamp(1, x.ncols().max(1)),
            rng,
            nodes: Vec::new(),
        };
        b.build(idx, 0);
        Self { nodes: b.nodes }
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    classes: usize,
}

impl RandomForest {
    /// Trees are grown in parallel, each from its own generator stream.
    pub fn fit(x: &Array2<f64>, y: &[usize], classes: usize, cfg: &RandomForestConfig) -> Result<Self> {
        if cfg.trees == 0 || cfg.max_depth == 0 {
            return Err(Error::InvalidArgument("trees and max_depth must be positive".into()));
        }
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::Shape(format!("{} rows for {} labels", x.nrows(), y.len())));
        }
        let mtry = cfg.features_per_split.resolve(x.ncols());
        let trees = (0..cfg.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(t as u64);
                let n = y.len();
                let idx: Vec<usize> = if cfg.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit(x, y, &idx, classes, cfg.max_depth, mtry, &mut rng)
            })
            .collect();
        Ok(Self { trees, classes })
    }

    /// Majority vote, ties to the smaller class.
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut votes = vec![0usize; self.classes];
        for t in &self.trees {
            votes[t.predict(row)] += 1;
        }
        majority(&votes)
    }
}

fn to_f64<T: Scalar>(z: ArrayView2<'_, T>) -> Array2<f64> {
    z.mapv(|x| x.as_f64())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    /// Training labels had a single class; the classifier is constant.
    pub single_class: bool,
}

/// Random-forest accuracy on the test representations.
pub fn classify_ca<T: Scalar>(
    train_z: ArrayView2<'_, T>,
    train_labels: &[usize],
    test_z: ArrayView2<'_, T>,
    test_labels: &[usize],
    cfg: &RandomForestConfig,
) -> Result<Accuracy> {
    if train_z.ncols() != test_z.ncols() {
        return Err(Error::Shape("train and test representations differ in width".into()));
    }
    if test_z.nrows() != test_labels.len() || test_labels.is_empty() {
        return Err(Error::Shape(format!("{} test rows for {} labels", test_z.nrows(), test_labels.len())));
    }
    let classes = train_labels.iter().chain(test_labels).max().map_or(1, |m| m + 1);
    let single_class = train_labels.iter().all(|&l| Some(&l) == train_labels.first());
    let forest = RandomForest::fit(&to_f64(train_z), train_labels, classes, cfg)?;
    let test = to_f64(test_z);
    let correct = test
        .rows()
        .into_iter()
        .zip(test_labels)
        .filter(|(row, &l)| forest.predict(row.as_slice().expect("standard layout")) == l)
        .count();
    Ok(Accuracy {
        accuracy: correct as f64 / test_labels.len() as f64,
        single_class,
    })
}

/// Index of the largest entry per row, ties to the smaller index.
pub fn top_topic_assign<T: Scalar>(z: ArrayView2<'_, T>) -> Vec<usize> {
    z.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (k, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Purity and NMI (arithmetic-mean normalisation, natural logs, `0/0 = 0`).
pub fn purity_nmi(clusters: &[usize], labels: &[usize]) -> Result<(f64, f64)> {
    if clusters.len() != labels.len() || clusters.is_empty() {
        return Err(Error::Shape(format!("{} clusters for {} labels", clusters.len(), labels.len())));
    }
    let kc = clusters.iter().max().unwrap() + 1;
    let kl = labels.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; kl]; kc];
    for (&c, &l) in clusters.iter().zip(labels) {
        table[c][l] += 1;
    }
    let n = clusters.len() as f64;
    let purity = table.iter().map(|r| *r.iter().max().unwrap()).sum::<usize>() as f64 / n;
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let cols: Vec<f64> = (0..kl).map(|l| table.iter().map(|r| r[l]).sum::<usize>() as f64).collect();
    let entropy = |m: &[f64]| -> f64 { m.iter().filter(|&&x| x > 0.0).map(|&x| -(x / n) * (x / n).ln()).sum() };
    let mut mi = 0.0;
    for (c, r) in table.iter().enumerate() {
        for (l, &count) in r.iter().enumerate() {
            if count > 0 {
                let joint = count as f64 / n;
                mi += joint * (joint * n * n / (rows[c] * cols[l])).ln();
            }
        }
    }
    let denom = (entropy(&rows) + entropy(&cols)) / 2.0;
    let nmi = if denom <= 0.0 { 0.0 } else { (mi / denom).clamp(0.0, 1.0) };
    Ok((purity, nmi))
}

/// NPMI of one word pair from boolean document frequencies.
pub fn pair_npmi(df_i: usize, df_j: usize, df_ij: usize, docs: usize) -> f64 {
    if df_ij == 0 {
        return -1.0;
    }
    if df_ij == docs {
        return 1.0;
    }
    let n = docs as f64;
    let pij = df_ij as f64 / n + 1e-12;
    let (pi, pj) = (df_i as f64 / n, df_j as f64 / n);
    ((pij.ln() - (pi * pj).ln()) / -pij.ln()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpmiReport {
    pub per_topic: Vec<f64>,
    /// Mean over the best `fraction` of topics.
    pub mean_top: f64,
    pub fraction: f64,
}

/// Internal NPMI over each topic's `top_words` heaviest words, with `docs`
/// as the reference corpus.
pub fn npmi<T: Scalar>(topics: &TopicSet<T>, docs: &[BowVector], top_words: usize, fraction: f64) -> Result<NpmiReport> {
    if top_words < 2 || top_words > topics.vocab_size() {
        return Err(Error::InvalidArgument(format!(
            "top_words must be in 2..={}, got {top_words}",
            topics.vocab_size()
        )));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if docs.is_empty() {
        return Err(Error::InvalidArgument("NPMI needs at least one reference document".into()));
    }
    let per_topic: Vec<f64> = (0..topics.num_topics())
        .map(|k| {
            let words = topics.top_words(k, top_words);
            let present: Vec<Vec<bool>> = docs
                .iter()
                .map(|d| words.iter().map(|&w| d.get(w) > 0).collect())
                .collect();
            let df: Vec<usize> = (0..words.len()).map(|a| present.iter().filter(|p| p[a]).count()).collect();
            let mut total = 0.0;
            let mut pairs = 0;
            for a in 0..words.len() {
                for b in a + 1..words.len() {
                    let co = present.iter().filter(|p| p[a] && p[b]).count();
                    total += pair_npmi(df[a], df[b], co, docs.len());
                    pairs += 1;
                }
            }
            total / pairs as f64
        })
        .collect();
    let mut sorted = per_topic.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let keep = ((fraction * sorted.len() as f64).ceil() as usize).max(1);
    let mean_top = sorted[..keep].iter().sum::<f64>() / keep as f64;
    Ok(NpmiReport {
        per_topic,
        mean_top,
        fraction,
    })
}

/// Outcome of a two-sided paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
    /// The differences have (numerically) zero variance.
    pub degenerate: bool,
}

pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs two equal-length samples of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd <= 1e-12 * mean.abs().max(1.0) {
        return Ok(TTest {
            t: None,
            p: None,
            significant: false,
            degenerate: true,
        });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest {
        t: Some(t),
        p: Some(p),
        significant: p < alpha,
        degenerate: false,
    })
}

/// Settings shared by in-domain and transfer evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub forest: RandomForestConfig,
    /// Words per topic for NPMI; `None` skips NPMI.
    pub npmi_top_words: Option<usize>,
    /// Fraction of the most coherent topics averaged.
    pub npmi_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            forest: RandomForestConfig::default(),
            npmi_top_words: Some(10),
            npmi_fraction: 0.5,
        }
    }
}

/// Metrics of one model on one corpus, as fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: String,
    pub ca: f64,
    pub tp: f64,
    pub tn: f64,
    /// Internal NPMI, computed on the evaluated corpus.
    pub npmi: Option<f64>,
    pub ca_single_class: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub corpus_hash: String,
    pub model_hashes: Vec<String>,
    pub num_topics: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus: String,
    pub ca: Summary,
    pub tp: Summary,
    pub tn: Summary,
    pub npmi: Option<Summary>,
    #[serde(rename = "perSeed")]
    pub per_seed: Vec<RunMetrics>,
    pub meta: EvalMeta,
}

impl EvalReport {
    pub fn from_runs(corpus: &str, runs: Vec<RunMetrics>, meta: EvalMeta) -> Self {
        let pick = |f: fn(&RunMetrics) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
        let npmi: Option<Vec<f64>> = runs.iter().map(|r| r.npmi).collect();
        Self {
            corpus: corpus.to_string(),
            ca: pick(|r| r.ca),
            tp: pick(|r| r.tp),
            tn: pick(|r| r.tn),
            npmi: npmi.filter(|v| !v.is_empty()).map(|v| Summary::of(&v)),
            per_seed: runs,
            meta,
        }
    }
}

/// Aligned text table with `mean±std` percentages (NPMI as a raw score).
pub fn format_table(reports: &[EvalReport]) -> String {
    let pct = |s: &Summary| format!("{:.1}±{:.1}", 100.0 * s.mean, 100.0 * s.std);
    let width = reports.iter().map(|r| r.corpus.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>11}  {:>11}  {:>11}  {:>13}", "corpus", "CA", "TP", "TN", "NPMI(int)");
    for r in reports {
        let npmi = r
            .npmi
            .map_or_else(|| "-".to_string(), |s| format!("{:.3}±{:.3}", s.mean, s.std));
        let _ = writeln!(
            out,
            "{:<width$}  {:>11}  {:>11}  {:>11}  {:>13}",
            r.corpus,
            pct(&r.ca),
            pct(&r.tp),
            pct(&r.tn),
            npmi
        );
    }
    out
}

fn labelled(corpus: &Corpus, idx: &[usize]) -> (Vec<usize>, Vec<usize>) {
    idx.iter()
        .filter_map(|&i| corpus.labels[i].map(|l| (i, l)))
        .unzip()
}

/// CA, TP and TN of `params` on a corpus's own train/test split. The model
/// is only read.
pub fn evaluate<T: Scalar>(params: &NtmParams<T>, corpus: &Corpus, run: &str, cfg: &EvalConfig) -> Result<RunMetrics> {
    if corpus.vocabulary.len() != params.vocab_size() {
        return Err(Error::VocabularyMismatch {
            expected: params.vocab_size(),
            found: corpus.vocabulary.len(),
        });
    }
    let (train_idx, train_y) = labelled(corpus, &corpus.train);
    let (test_idx, test_y) = labelled(corpus, &corpus.test);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::InvalidArgument(
            "evaluation needs labelled documents in both train and test splits".into(),
        ));
    }
    let train_z = infer_corpus(params, corpus, &train_idx)?;
    let test_z = infer_corpus(params, corpus, &test_idx)?;
    let ca = classify_ca(train_z.view(), &train_y, test_z.view(), &test_y, &cfg.forest)?;
    let (tp, tn) = purity_nmi(&top_topic_assign(test_z.view()), &test_y)?;
    let npmi_score = match cfg.npmi_top_words {
        Some(n) => {
            let topics = topics_from_decoder(params.decoder_weight())?;
            Some(npmi(&topics, &corpus.docs, n.min(params.vocab_size()), cfg.npmi_fraction)?.mean_top)
        }
        None => None,
    };
    Ok(RunMetrics {
        run: run.to_string(),
        ca: ca.accuracy,
        tp,
        tn,
        npmi: npmi_score,
        ca_single_class: ca.single_class,
    })
}

/// Evaluates a source-trained model on each target without updating it.
/// Targets must share the model's (united) vocabulary.
pub fn transfer_eval<T: Scalar>(
    params: &NtmParams<T>,
    targets: &[(&str, &Corpus)],
    run: &str,
    cfg: &EvalConfig,
) -> Result<Vec<RunMetrics>> {
    targets.iter().map(|(name, c)| {
        evaluate(params, c, run, cfg).map_err(|e| match e {
            Error::VocabularyMismatch { .. } => Error::VocabularyMismatch {
                expected: params.vocab_size(),
                found: c.vocabulary.len(),
            },
            other => Error::InvalidArgument(format!("target {name}: {other}")),
        })
    }).collect()
}

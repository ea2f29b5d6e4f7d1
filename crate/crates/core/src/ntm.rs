//! Gaussian VAE topic model with a linear softmax decoder, trained on the
//! negative ELBO plus an optional TopicalOT regulariser between each document
//! and an augmented copy of it.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_bow_with_rng, AugmentConfig, IdfTable, NeighborTables};
use crate::corpus::{BowVector, Corpus, EmbeddingTable};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::ot::SinkhornConfig;
use crate::scalar::{softmax, softmax_into, Scalar};
use crate::topical::greg_loss;

/// Affine layer `y = x Wᵀ + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (out + inp) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((out, inp), |_| T::lit(rng.random_range(-limit..limit))),
            bias: Array1::zeros(out),
        }
    }

    fn forward(&self, x: &Array2<T>) -> Array2<T> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `∂/∂x`.
    fn backward(&self, x: &Array2<T>, dy: &Array2<T>, grad: &mut Dense<T>) -> Array2<T> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

/// Encoder `V → H → H → (μ, log σ²)` and decoder `K → V`.
#[derive(Debug, Clone, PartialEq)]
pub struct NtmParams<T> {
    pub enc1: Dense<T>,
    pub enc2: Dense<T>,
    pub mean: Dense<T>,
    pub logvar: Dense<T>,
    /// Decoder; its `V × K` weight defines the topics.
    pub dec: Dense<T>,
}

impl<T: Scalar> NtmParams<T> {
    pub fn init<R: Rng + ?Sized>(vocab: usize, topics: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            enc1: Dense::glorot(hidden, vocab, rng),
            enc2: Dense::glorot(hidden, hidden, rng),
            mean: Dense::glorot(topics, hidden, rng),
            logvar: Dense::glorot(topics, hidden, rng),
            dec: Dense::glorot(vocab, topics, rng),
        }
    }

    pub fn zeros(vocab: usize, topics: usize, hidden: usize) -> Self {
        Self {
            enc1: Dense::zeros(hidden, vocab),
            enc2: Dense::zeros(hidden, hidden),
            mean: Dense::zeros(topics, hidden),
            logvar: Dense::zeros(topics, hidden),
            dec: Dense::zeros(vocab, topics),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab_size(), self.num_topics(), self.hidden())
    }

    pub fn vocab_size(&self) -> usize {
        self.enc1.weight.ncols()
    }

    pub fn num_topics(&self) -> usize {
        self.mean.weight.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.enc1.weight.nrows()
    }

    pub fn decoder_weight(&self) -> ArrayView2<'_, T> {
        self.dec.weight.view()
    }

    pub fn layers(&self) -> [&Dense<T>; 5] {
        [&self.enc1, &self.enc2, &self.mean, &self.logvar, &self.dec]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense<T>; 5] {
        [&mut self.enc1, &mut self.enc2, &mut self.mean, &mut self.logvar, &mut self.dec]
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Every parameter in checkpoint order.
    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.layers()
            .into_iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn num_values(&self) -> usize {
        self.layers().iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

/// Intermediate activations of the encoder for one batch.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    freq: Array2<T>,
    a1: Array2<T>,
    h1: Array2<T>,
    a2: Array2<T>,
    h2: Array2<T>,
    pub mu: Array2<T>,
    pub logvar: Array2<T>,
}

fn softplus<T: Scalar>(a: T) -> T {
    a.max(T::zero()) + (-a.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

fn softmax_rows<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros(x.dim());
    for (src, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        let row = src.to_vec();
        let mut buf = vec![T::zero(); row.len()];
        softmax_into(&row, &mut buf);
        dst.assign(&Array1::from(buf));
    }
    out
}

/// `Z ∘ (dZ − ⟨Z, dZ⟩)` row-wise.
fn softmax_rows_backward<T: Scalar>(z: &Array2<T>, dz: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros(z.dim());
    for ((zr, dr), mut o) in z.rows().into_iter().zip(dz.rows()).zip(out.rows_mut()) {
        let inner = zr.dot(&dr);
        for ((o, &p), &g) in o.iter_mut().zip(zr).zip(dr) {
            *o = p * (g - inner);
        }
    }
    out
}

fn check_finite<T: Scalar>(m: &Array2<T>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

impl<T: Scalar> NtmParams<T> {
    /// Encodes count rows (each normalised to frequencies).
    pub fn encoder_forward(&self, counts: &Array2<T>) -> Result<EncoderCache<T>> {
        if counts.ncols() != self.vocab_size() {
            return Err(Error::VocabularyMismatch {
                expected: self.vocab_size(),
                found: counts.ncols(),
            });
        }
        let totals = counts.sum_axis(Axis(1));
        if totals.iter().any(|t| !(*t > T::zero())) {
            return Err(Error::EmptyDocument("batch row".into()));
        }
        let freq = counts / &totals.insert_axis(Axis(1));
        let a1 = self.enc1.forward(&freq);
        let h1 = a1.mapv(softplus);
        let a2 = self.enc2.forward(&h1);
        let h2 = a2.mapv(softplus);
        let mu = self.mean.forward(&h2);
        let logvar = self.logvar.forward(&h2);
        check_finite(&mu, "encoder mean")?;
        check_finite(&logvar, "encoder log-variance")?;
        Ok(EncoderCache {
            freq,
            a1,
            h1,
            a2,
            h2,
            mu,
            logvar,
        })
    }

    /// Backpropagates `∂/∂μ` and optionally `∂/∂log σ²` into `grad`.
    pub fn encoder_backward(
        &self,
        cache: &EncoderCache<T>,
        dmu: &Array2<T>,
        dlogvar: Option<&Array2<T>>,
        grad: &mut NtmParams<T>,
    ) {
        let mut dh2 = self.mean.backward(&cache.h2, dmu, &mut grad.mean);
        if let Some(dlv) = dlogvar {
            dh2 += &self.logvar.backward(&cache.h2, dlv, &mut grad.logvar);
        }
        let da2 = dh2 * &cache.a2.mapv(sigmoid);
        let dh1 = self.enc2.backward(&cache.h1, &da2, &mut grad.enc2);
        let da1 = dh1 * &cache.a1.mapv(sigmoid);
        self.enc1.backward(&cache.freq, &da1, &mut grad.enc1);
    }
}

/// Forward pass of the batch negative ELBO.
#[derive(Debug, Clone)]
pub struct ElboForward<T> {
    pub encoder: EncoderCache<T>,
    pub noise: Array2<T>,
    /// Topical representations `softmax(μ + σ ∘ η)`.
    pub z: Array2<T>,
    counts: Array2<T>,
    probs: Array2<T>,
    /// Mean over the batch of reconstruction loss plus KL.
    pub loss: T,
    pub reconstruction: Vec<T>,
    pub kl: Vec<T>,
}

/// Batch forward pass with reparameterisation noise `noise` (`B × K`).
pub fn elbo_forward<T: Scalar>(params: &NtmParams<T>, counts: &Array2<T>, noise: &Array2<T>) -> Result<ElboForward<T>> {
    let encoder = params.encoder_forward(counts)?;
    if noise.dim() != encoder.mu.dim() {
        return Err(Error::Shape(format!("noise {:?} for means {:?}", noise.dim(), encoder.mu.dim())));
    }
    let z_raw = &encoder.mu + &(encoder.logvar.mapv(|l| (l / T::lit(2.0)).exp()) * noise);
    let z = softmax_rows(&z_raw);
    let logits = params.dec.forward(&z);
    let batch = counts.nrows();
    let mut probs = Array2::zeros(logits.dim());
    let mut reconstruction = Vec::with_capacity(batch);
    for i in 0..batch {
        let row = logits.row(i);
        let lse = crate::scalar::log_sum_exp(row.len(), |v| row[v]);
        let mut rec = T::zero();
        for (v, &c) in counts.row(i).iter().enumerate() {
            if !c.is_zero() {
                rec -= c * (row[v] - lse);
            }
            probs[[i, v]] = (row[v] - lse).exp();
        }
        reconstruction.push(rec);
    }
    let kl: Vec<T> = encoder
        .mu
        .rows()
        .into_iter()
        .zip(encoder.logvar.rows())
        .map(|(m, l)| {
            m.iter()
                .zip(l)
                .map(|(&m, &l)| m * m + l.exp() - l - T::one())
                .sum::<T>()
                / T::lit(2.0)
        })
        .collect();
    let loss = reconstruction.iter().zip(&kl).map(|(&r, &k)| r + k).sum::<T>() / T::lit(batch as f64);
    if !loss.is_finite() {
        return Err(Error::NonFinite("ELBO loss".into()));
    }
    Ok(ElboForward {
        encoder,
        noise: noise.clone(),
        z,
        counts: counts.clone(),
        probs,
        loss,
        reconstruction,
        kl,
    })
}

/// Gradient of `fwd.loss` (plus `⟨extra_dz, Z⟩` when given) for every parameter.
pub fn elbo_backward<T: Scalar>(
    params: &NtmParams<T>,
    fwd: &ElboForward<T>,
    extra_dz: Option<&Array2<T>>,
) -> NtmParams<T> {
    let mut grad = params.zeros_like();
    let b = T::lit(fwd.counts.nrows() as f64);
    let totals = fwd.counts.sum_axis(Axis(1)).insert_axis(Axis(1));
    let dlogits = (&fwd.probs * &totals - &fwd.counts) / b;
    let mut dz = params.dec.backward(&fwd.z, &dlogits, &mut grad.dec);
    if let Some(extra) = extra_dz {
        dz += extra;
    }
    let dzr = softmax_rows_backward(&fwd.z, &dz);
    let enc = &fwd.encoder;
    let dmu = &dzr + &(&enc.mu / b);
    let half = T::lit(0.5);
    let sigma = enc.logvar.mapv(|l| (l * half).exp());
    let dlogvar = &dzr * &fwd.noise * &sigma * half + &enc.logvar.mapv(|l| (l.exp() - T::one()) * half / b);
    params.encoder_backward(enc, &dmu, Some(&dlogvar), &mut grad);
    grad
}

/// Batch negative ELBO and its parameter gradient.
pub fn elbo_batch<T: Scalar>(params: &NtmParams<T>, counts: &Array2<T>, noise: &Array2<T>) -> Result<(T, NtmParams<T>)> {
    let fwd = elbo_forward(params, counts, noise)?;
    let grad = elbo_backward(params, &fwd, None);
    Ok((fwd.loss, grad))
}

/// Dense `B × V` count matrix.
pub fn count_matrix<T: Scalar>(docs: &[&BowVector], vocab: usize) -> Array2<T> {
    let mut m = Array2::zeros((docs.len(), vocab));
    for (i, d) in docs.iter().enumerate() {
        for &(w, c) in d.entries() {
            m[[i, w as usize]] = T::lit(c as f64);
        }
    }
    m
}

/// Standard-normal `rows × cols` matrix.
pub fn sample_noise<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncodeMode {
    Sample,
    Mean,
}

/// Single-document encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding<T> {
    pub z_raw: Vec<T>,
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
}

/// `zRaw = μ + σ ∘ η` in sample mode, `μ` in mean mode.
pub fn encode<T: Scalar>(x: &BowVector, params: &NtmParams<T>, mode: EncodeMode, rng: &mut dyn RngCore) -> Result<Encoding<T>> {
    let cache = params.encoder_forward(&count_matrix(&[x], params.vocab_size()))?;
    let mu = cache.mu.row(0).to_vec();
    let logvar = cache.logvar.row(0).to_vec();
    let z_raw = match mode {
        EncodeMode::Mean => mu.clone(),
        EncodeMode::Sample => mu
            .iter()
            .zip(&logvar)
            .map(|(&m, &l)| m + (l / T::lit(2.0)).exp() * T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect(),
    };
    Ok(Encoding { z_raw, mu, logvar })
}

/// Softmax of an unnormalised encoding.
pub fn topical_rep<T: Scalar>(z_raw: &[T]) -> Vec<T> {
    softmax(z_raw)
}

/// `Σ_v x_v log softmax(W z + b)_v`.
pub fn decode_loglik<T: Scalar>(x: &BowVector, z: ArrayView1<'_, T>, params: &NtmParams<T>) -> Result<T> {
    if x.dim() != params.vocab_size() || z.len() != params.num_topics() {
        return Err(Error::Shape(format!(
            "document of dimension {} and representation of {} for a {}×{} decoder",
            x.dim(),
            z.len(),
            params.vocab_size(),
            params.num_topics()
        )));
    }
    let logits = params.dec.weight.dot(&z) + &params.dec.bias;
    let lse = crate::scalar::log_sum_exp(logits.len(), |v| logits[v]);
    Ok(x.entries().iter().map(|&(w, c)| T::lit(c as f64) * (logits[w as usize] - lse)).sum())
}

/// `½ Σ (μ² + σ² − log σ² − 1)`.
pub fn gaussian_kl<T: Scalar>(mu: &[T], logvar: &[T]) -> T {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &l)| m * m + l.exp() - l - T::one())
        .sum::<T>()
        / T::lit(2.0)
}

/// Single-document negative ELBO with one reparameterised sample.
pub fn elbo_loss<T: Scalar>(x: &BowVector, params: &NtmParams<T>, rng: &mut dyn RngCore) -> Result<(T, NtmParams<T>)> {
    let noise = sample_noise(1, params.num_topics(), rng);
    elbo_batch(params, &count_matrix(&[x], params.vocab_size()), &noise)
}

/// Pieces a backbone supplies to the regularised training objective.
pub trait BackboneHook<T: Scalar> {
    fn encode(&self, x: &BowVector, mode: EncodeMode, rng: &mut dyn RngCore) -> Result<Encoding<T>>;
    fn decode_loglik(&self, x: &BowVector, z: ArrayView1<'_, T>) -> Result<T>;
    fn prior_divergence(&self, encoding: &Encoding<T>) -> T;
}

impl<T: Scalar> BackboneHook<T> for NtmParams<T> {
    fn encode(&self, x: &BowVector, mode: EncodeMode, rng: &mut dyn RngCore) -> Result<Encoding<T>> {
        encode(x, self, mode, rng)
    }

    fn decode_loglik(&self, x: &BowVector, z: ArrayView1<'_, T>) -> Result<T> {
        decode_loglik(x, z, self)
    }

    fn prior_divergence(&self, encoding: &Encoding<T>) -> T {
        gaussian_kl(&encoding.mu, &encoding.logvar)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    m: NtmParams<T>,
    v: NtmParams<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &NtmParams<T>, learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut NtmParams<T>, grad: &NtmParams<T>) {
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grad.values())
            .zip(self.m.values_mut())
            .zip(self.v.values_mut())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_topics: usize,
    pub hidden: usize,
    /// Weight of the TopicalOT regulariser; `0` trains the plain backbone.
    pub gamma: f64,
    pub augment: AugmentConfig,
    pub sinkhorn: SinkhornConfig<f64>,
    /// Words kept per topic when building the topic cost matrix.
    pub top_words: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Train for exactly this many optimiser steps, ignoring `epochs`.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_topics: 50,
            hidden: 200,
            gamma: 300.0,
            augment: AugmentConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            top_words: 20,
            batch_size: 200,
            learning_rate: 1e-3,
            epochs: 100,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_topics == 0 || self.hidden == 0 {
            return bad("num_topics and hidden must be positive".into());
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be a finite value >= 0, got {}", self.gamma));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.top_words == 0 {
            return bad("top_words must be at least 1".into());
        }
        self.augment.validate()?;
        self.sinkhorn.validate()
    }

    pub fn sinkhorn_as<T: Scalar>(&self) -> SinkhornConfig<T> {
        SinkhornConfig {
            lambda: T::lit(self.sinkhorn.lambda),
            max_iters: self.sinkhorn.max_iters,
            stop_threshold: T::lit(self.sinkhorn.stop_threshold),
        }
    }
}

/// Independent generator streams so that disabling the regulariser leaves
/// initialisation, batch order and reparameterisation noise untouched.
pub struct TrainRngs {
    pub init: ChaCha8Rng,
    pub data: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub augment: ChaCha8Rng,
}

impl TrainRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            init: stream(0),
            data: stream(1),
            noise: stream(2),
            augment: stream(3),
        }
    }
}

/// Training-document order for one epoch.
pub fn epoch_order<R: Rng + ?Sized>(train: &[usize], rng: &mut R) -> Vec<usize> {
    let mut order = train.to_vec();
    order.shuffle(rng);
    order
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    /// Batch-mean negative ELBO.
    pub elbo: f64,
    /// Batch-mean TopicalOT term before weighting by gamma.
    pub greg: f64,
    pub total: f64,
    pub sinkhorn_nonconverged: usize,
    /// Largest marginal error over the converged plans of this step.
    pub max_marginal_violation: f64,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    /// Final parameters, or the last finite ones when training diverged.
    pub params: NtmParams<T>,
    pub log: Vec<StepLog>,
    pub diverged: Option<Error>,
    pub optimizer: &'static str,
}

/// Trains on `corpus.train`. `embeddings` must be aligned with the corpus
/// vocabulary; neighbour tables are built on demand when `gamma > 0`.
pub fn train<T: Scalar>(corpus: &Corpus, cfg: &TrainConfig, embeddings: &EmbeddingTable<T>) -> Result<TrainOutcome<T>> {
    train_with(corpus, cfg, embeddings, None, |_| {})
}

pub fn train_with<T: Scalar>(
    corpus: &Corpus,
    cfg: &TrainConfig,
    embeddings: &EmbeddingTable<T>,
    neighbors: Option<&NeighborTables>,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    corpus.validate()?;
    let vocab = corpus.vocabulary.len();
    if embeddings.words() != corpus.vocabulary.words() {
        return Err(Error::VocabularyMismatch {
            expected: vocab,
            found: embeddings.len(),
        });
    }
    if corpus.train.is_empty() {
        return Err(Error::InvalidArgument("corpus has no training documents".into()));
    }
    let greg_on = cfg.gamma > 0.0;
    if greg_on && cfg.top_words > vocab {
        return Err(Error::InvalidArgument(format!(
            "top_words {} exceeds vocabulary size {vocab}",
            cfg.top_words
        )));
    }
    let built;
    let tables = match (greg_on, neighbors) {
        (false, _) => None,
        (true, Some(t)) => Some(t),
        (true, None) => {
            built = NeighborTables::build(embeddings, cfg.augment.top_words);
            Some(&built)
        }
    };
    let train_docs: Vec<BowVector> = corpus.train.iter().map(|&i| corpus.docs[i].clone()).collect();
    let idf = IdfTable::from_docs(&train_docs, vocab);

    let mut rngs = TrainRngs::new(cfg.seed);
    let mut params = NtmParams::<T>::init(vocab, cfg.num_topics, cfg.hidden, &mut rngs.init);
    let mut adam = Adam::new(&params, T::lit(cfg.learning_rate));
    let sinkhorn_cfg = cfg.sinkhorn_as::<T>();
    let gamma = T::lit(cfg.gamma);
    let mut log = Vec::new();
    let mut step = 0usize;

    let epochs = if cfg.max_steps.is_some() { usize::MAX } else { cfg.epochs };
    'epochs: for epoch in 0..epochs {
        let order = epoch_order(&corpus.train, &mut rngs.data);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let started = Instant::now();
            let docs: Vec<&BowVector> = chunk.iter().map(|&i| &corpus.docs[i]).collect();
            let counts = count_matrix::<T>(&docs, vocab);
            let noise = sample_noise::<T, _>(docs.len(), cfg.num_topics, &mut rngs.noise);
            let fwd = match elbo_forward(&params, &counts, &noise) {
                Ok(f) => f,
                Err(e) => return diverged(params, log, step, e),
            };

            let (grad, greg, nonconverged, violation) = if greg_on {
                let tables = tables.expect("tables built when regularising");
                let augmented = docs
                    .iter()
                    .map(|d| {
                        let weights = idf.weights(d);
                        augment_bow_with_rng(d, &cfg.augment, Some(&weights), tables, &mut rngs.augment).map(|a| a.bow)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let aug_refs: Vec<&BowVector> = augmented.iter().collect();
                let aug_cache = match params.encoder_forward(&count_matrix::<T>(&aug_refs, vocab)) {
                    Ok(c) => c,
                    Err(e) => return diverged(params, log, step, e),
                };
                let z_aug = softmax_rows(&aug_cache.mu);
                let z_src = softmax_rows(&fwd.encoder.mu);
                let out = match greg_loss(
                    z_src.view(),
                    z_aug.view(),
                    params.decoder_weight(),
                    embeddings,
                    cfg.top_words,
                    &sinkhorn_cfg,
                ) {
                    Ok(o) => o,
                    Err(e @ Error::NonFinite(_)) => return diverged(params, log, step, e),
                    Err(e) => return Err(e),
                };
                let mut grad = elbo_backward(&params, &fwd, None);
                let dz = out.grad_zs.mapv(|x| x * gamma);
                let dmu = softmax_rows_backward(&z_src, &dz);
                params.encoder_backward(&fwd.encoder, &dmu, None, &mut grad);
                grad.dec.weight.scaled_add(gamma, &out.grad_w);
                let dz_aug = out.grad_zaug.mapv(|x| x * gamma);
                let dmu_aug = softmax_rows_backward(&z_aug, &dz_aug);
                params.encoder_backward(&aug_cache, &dmu_aug, None, &mut grad);
                (grad, out.loss, out.nonconverged, out.max_violation)
            } else {
                (elbo_backward(&params, &fwd, None), T::zero(), 0, T::zero())
            };

            let total = fwd.loss + gamma * greg;
            if !total.is_finite() || !grad.is_finite() {
                return diverged(params, log, step, Error::NonFinite(format!("loss {total}")));
            }
            let previous = params.clone();
            adam.step(&mut params, &grad);
            if !params.is_finite() {
                return diverged(previous, log, step, Error::NonFinite("parameters".into()));
            }
            let entry = StepLog {
                step,
                epoch,
                elbo: fwd.loss.as_f64(),
                greg: greg.as_f64(),
                total: total.as_f64(),
                sinkhorn_nonconverged: nonconverged,
                max_marginal_violation: violation.as_f64(),
                seconds: started.elapsed().as_secs_f64(),
            };
            on_step(&entry);
            log.push(entry);
            step += 1;
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        diverged: None,
        optimizer: "adam",
    })
}

fn diverged<T: Scalar>(params: NtmParams<T>, log: Vec<StepLog>, step: usize, e: Error) -> Result<TrainOutcome<T>> {
    Ok(TrainOutcome {
        params,
        log,
        diverged: Some(Error::Diverged {
            step,
            detail: e.to_string(),
        }),
        optimizer: "adam",
    })
}

/// Mean-mode representations, one row per document.
pub fn infer<T: Scalar>(params: &NtmParams<T>, docs: &[&BowVector]) -> Result<Array2<T>> {
    if let Some(d) = docs.iter().find(|d| d.dim() != params.vocab_size()) {
        return Err(Error::VocabularyMismatch {
            expected: params.vocab_size(),
            found: d.dim(),
        });
    }
    let mut out = Array2::zeros((docs.len(), params.num_topics()));
    for (c, chunk) in docs.chunks(512).enumerate() {
        let cache = params.encoder_forward(&count_matrix(chunk, params.vocab_size()))?;
        let z = softmax_rows(&cache.mu);
        out.slice_mut(ndarray::s![c * 512..c * 512 + chunk.len(), ..]).assign(&z);
    }
    Ok(out)
}

/// Representations of the documents at `idx`.
pub fn infer_corpus<T: Scalar>(params: &NtmParams<T>, corpus: &Corpus, idx: &[usize]) -> Result<Array2<T>> {
    if corpus.vocabulary.len() != params.vocab_size() {
        return Err(Error::VocabularyMismatch {
            expected: params.vocab_size(),
            found: corpus.vocabulary.len(),
        });
    }
    infer(params, &corpus.subset_docs(idx))
}

const MAGIC: &[u8; 8] = b"GREGNTM\0";
const FORMAT_VERSION: u32 = 1;

/// Parameters plus the vocabulary hash they were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: NtmParams<T>,
    pub vocab_hash: String,
}

impl<T: Scalar> Checkpoint<T> {
    /// Header (magic, version, V, K, H, vocabulary hash) then every
    /// parameter as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(64 + 8 * p.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for d in [p.vocab_size(), p.num_topics(), p.hidden()] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let hash = self.vocab_hash.as_bytes();
        out.extend_from_slice(&(hash.len() as u32).to_le_bytes());
        out.extend_from_slice(hash);
        for x in p.values() {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("{origin}: {m}"));
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(bad("truncated"));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        }
        let hash_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let vocab_hash = String::from_utf8(take(hash_len)?.to_vec()).map_err(|_| bad("bad vocabulary hash"))?;
        let mut params = NtmParams::zeros(dims[0], dims[1], dims[2]);
        let n = params.num_values();
        let body = take(8 * n)?;
        for (slot, chunk) in params.values_mut().zip(body.chunks_exact(8)) {
            *slot = T::lit(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { params, vocab_hash })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    /// Fails unless the checkpoint was trained on `vocab_hash`.
    pub fn check_vocabulary(&self, vocab_hash: &str, vocab_len: usize) -> Result<()> {
        if self.params.vocab_size() != vocab_len || self.vocab_hash != vocab_hash {
            return Err(Error::VocabularyMismatch {
                expected: self.params.vocab_size(),
                found: vocab_len,
            });
        }
        Ok(())
    }
}

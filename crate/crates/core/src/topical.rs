//! Topics as word distributions, the topic-to-topic cost matrix built from
//! word-embedding OT, and the document-level TopicalOT loss.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ot::{
    cosine_cost, exact_ot, sinkhorn, sinkhorn_grad, CostMatrix, DiscreteDistribution, SinkhornConfig,
};
use crate::scalar::{centre, softmax, Scalar};

/// `K` topics over `V` words, one stochastic row per topic.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicSet<T> {
    weights: Array2<T>,
}

impl<T: Scalar> TopicSet<T> {
    pub fn new(weights: Array2<T>) -> Result<Self> {
        for (k, row) in weights.rows().into_iter().enumerate() {
            let s: T = row.sum();
            if row.iter().any(|&x| x < T::zero() || !x.is_finite()) || (s - T::one()).abs() > T::lit(1e-6) {
                return Err(Error::InvalidArgument(format!("topic {k} is not a distribution (sum {s})")));
            }
        }
        Ok(Self { weights })
    }

    pub fn num_topics(&self) -> usize {
        self.weights.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.ncols()
    }

    pub fn topic(&self, k: usize) -> ArrayView1<'_, T> {
        self.weights.row(k)
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.weights
    }

    /// The `n` heaviest words of topic `k`, ties to the smaller index.
    pub fn top_words(&self, k: usize, n: usize) -> Vec<usize> {
        top_indices(self.topic(k), n)
    }
}

fn top_indices<T: Scalar>(w: ArrayView1<'_, T>, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Column-wise softmax of a `V × K` decoder weight.
pub fn topics_from_decoder<T: Scalar>(w: ArrayView2<'_, T>) -> Result<TopicSet<T>> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("decoder weights".into()));
    }
    let mut weights = Array2::zeros((w.ncols(), w.nrows()));
    for (k, col) in w.columns().into_iter().enumerate() {
        let p = softmax(&col.to_vec());
        weights.row_mut(k).assign(&Array1::from(p));
    }
    Ok(TopicSet { weights })
}

/// One topic restricted to its heaviest words and renormalised.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedTopic<T> {
    /// Word ids by decreasing weight.
    pub words: Vec<usize>,
    pub weights: Vec<T>,
    /// Weight of the kept words before renormalisation.
    pub mass: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedTopicSet<T> {
    pub topics: Vec<TruncatedTopic<T>>,
}

impl<T> TruncatedTopicSet<T> {
    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }
}

/// Keeps the `top` heaviest words of each topic (ties to the smaller index).
pub fn truncate_topics<T: Scalar>(topics: &TopicSet<T>, top: usize) -> Result<TruncatedTopicSet<T>> {
    if top == 0 || top > topics.vocab_size() {
        return Err(Error::InvalidArgument(format!(
            "top words must be in 1..={}, got {top}",
            topics.vocab_size()
        )));
    }
    let topics = (0..topics.num_topics())
        .map(|k| {
            let row = topics.topic(k);
            let words = top_indices(row, top);
            let mass: T = words.iter().map(|&w| row[w]).sum();
            TruncatedTopic {
                weights: words.iter().map(|&w| row[w] / mass).collect(),
                words,
                mass,
            }
        })
        .collect();
    Ok(TruncatedTopicSet { topics })
}

/// Centred OT duals of one topic pair; the gradient of the pair's cost with
/// respect to each topic's truncated weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDuals<T> {
    pub k1: usize,
    pub k2: usize,
    pub wrt_first: Vec<T>,
    pub wrt_second: Vec<T>,
}

/// Symmetric `K × K` topic cost matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DocCostMatrix<T> {
    pub cost: CostMatrix<T>,
    /// Upper-triangle pairs in row-major order.
    pub pairs: Vec<PairDuals<T>>,
    /// Largest marginal error over the per-pair plans.
    pub max_violation: T,
}

impl<T: Scalar> DocCostMatrix<T> {
    pub fn num_topics(&self) -> usize {
        self.cost.shape().0
    }

    fn check_invariants(&self) -> Result<()> {
        let k = self.num_topics();
        for i in 0..k {
            if !self.cost[(i, i)].is_zero() {
                return Err(Error::InvalidArgument(format!("topic cost diagonal {i} is nonzero")));
            }
            for j in i + 1..k {
                if (self.cost[(i, j)] - self.cost[(j, i)]).abs() > T::lit(1e-9) {
                    return Err(Error::InvalidArgument(format!("topic cost not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// Exact OT between every pair of truncated topics, with `1 − cos` word costs.
pub fn doc_cost_matrix<T: Scalar>(
    topics: &TruncatedTopicSet<T>,
    embeddings: &EmbeddingTable<T>,
) -> Result<DocCostMatrix<T>> {
    let k = topics.len();
    let vectors = embeddings.vectors();
    if let Some(w) = topics.topics.iter().flat_map(|t| &t.words).find(|&&w| w >= vectors.nrows()) {
        return Err(Error::Shape(format!(
            "topic word {w} has no embedding row (table has {})",
            vectors.nrows()
        )));
    }
    let slices: Vec<Array2<T>> = topics.topics.iter().map(|t| vectors.select(Axis(0), &t.words)).collect();
    let index: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let solved: Vec<Result<(T, T, PairDuals<T>)>> = index
        .par_iter()
        .map(|&(k1, k2)| {
            let wrap = |e: Error| Error::TopicPair {
                k1,
                k2,
                source: Box::new(e),
            };
            let cost = cosine_cost(slices[k1].view(), slices[k2].view()).map_err(wrap)?;
            let a = DiscreteDistribution::new(topics.topics[k1].weights.clone()).map_err(wrap)?;
            let b = DiscreteDistribution::new(topics.topics[k2].weights.clone()).map_err(wrap)?;
            let plan = exact_ot(&a, &b, &cost).map_err(wrap)?;
            let (mut u, mut v) = plan.duals;
            centre(&mut u);
            centre(&mut v);
            Ok((
                plan.objective,
                plan.marginal_violation,
                PairDuals {
                    k1,
                    k2,
                    wrt_first: u,
                    wrt_second: v,
                },
            ))
        })
        .collect();
    let mut matrix = Array2::zeros((k, k));
    let mut pairs = Vec::with_capacity(index.len());
    let mut max_violation = T::zero();
    for r in solved {
        let (obj, viol, duals) = r?;
        matrix[[duals.k1, duals.k2]] = obj;
        matrix[[duals.k2, duals.k1]] = obj;
        max_violation = max_violation.max(viol);
        pairs.push(duals);
    }
    let out = DocCostMatrix {
        cost: CostMatrix::new(matrix)?,
        pairs,
        max_violation,
    };
    out.check_invariants()?;
    Ok(out)
}

fn simplex_point<T: Scalar>(z: ArrayView1<'_, T>) -> Result<DiscreteDistribution<T>> {
    DiscreteDistribution::new(z.to_vec())
}

/// Sinkhorn TopicalOT between two topical representations.
pub fn topical_ot_distance<T: Scalar>(
    za: ArrayView1<'_, T>,
    zb: ArrayView1<'_, T>,
    md: &DocCostMatrix<T>,
    cfg: &SinkhornConfig<T>,
) -> Result<T> {
    Ok(sinkhorn(&simplex_point(za)?, &simplex_point(zb)?, &md.cost, cfg)?.objective)
}

/// Exact TopicalOT, used for evaluation.
pub fn topical_ot_distance_exact<T: Scalar>(
    za: ArrayView1<'_, T>,
    zb: ArrayView1<'_, T>,
    md: &DocCostMatrix<T>,
) -> Result<T> {
    Ok(exact_ot(&simplex_point(za)?, &simplex_point(zb)?, &md.cost)?.objective)
}

/// Batch TopicalOT loss and its gradients.
#[derive(Debug, Clone)]
pub struct GregOutput<T> {
    /// Mean Sinkhorn objective over converged pairs.
    pub loss: T,
    pub grad_zs: Array2<T>,
    pub grad_zaug: Array2<T>,
    /// Gradient with respect to the `V × K` decoder weight.
    pub grad_w: Array2<T>,
    /// Pairs excluded from the mean because Sinkhorn did not converge.
    pub nonconverged: usize,
    /// Largest marginal error over every plan used, topic pairs included.
    pub max_violation: T,
    pub doc_cost: DocCostMatrix<T>,
}

/// `mean_i sinkhorn(zs_i, zaug_i; M^d)` with `M^d` rebuilt from the decoder
/// weight `w` (`V × K`). The top-word sets are held fixed when
/// differentiating through the topics.
pub fn greg_loss<T: Scalar>(
    zs: ArrayView2<'_, T>,
    zaug: ArrayView2<'_, T>,
    w: ArrayView2<'_, T>,
    embeddings: &EmbeddingTable<T>,
    top: usize,
    cfg: &SinkhornConfig<T>,
) -> Result<GregOutput<T>> {
    if zs.dim() != zaug.dim() || zs.ncols() != w.ncols() {
        return Err(Error::Shape(format!(
            "representations {:?} and {:?} with decoder {:?}",
            zs.dim(),
            zaug.dim(),
            w.dim()
        )));
    }
    let (batch, k) = zs.dim();
    let topics = topics_from_decoder(w)?;
    let truncated = truncate_topics(&topics, top)?;
    let doc_cost = doc_cost_matrix(&truncated, embeddings)?;

    let solved: Vec<Result<Option<(T, T, crate::ot::PlanGradient<T>)>>> = (0..batch)
        .into_par_iter()
        .map(|i| {
            let plan = sinkhorn(&simplex_point(zs.row(i))?, &simplex_point(zaug.row(i))?, &doc_cost.cost, cfg)?;
            if !plan.converged {
                return Ok(None);
            }
            let grad = sinkhorn_grad(&plan, &doc_cost.cost)?;
            Ok(Some((plan.objective, plan.marginal_violation, grad)))
        })
        .collect();

    let mut grad_zs = Array2::zeros((batch, k));
    let mut grad_zaug = Array2::zeros((batch, k));
    let mut grad_cost = Array2::<T>::zeros((k, k));
    let mut total = T::zero();
    let mut used = 0usize;
    let mut max_violation = doc_cost.max_violation;
    let mut kept = Vec::with_capacity(batch);
    for (i, r) in solved.into_iter().enumerate() {
        if let Some((obj, viol, g)) = r? {
            total += obj;
            used += 1;
            max_violation = max_violation.max(viol);
            kept.push((i, g));
        }
    }
    let nonconverged = batch - used;
    let mut grad_w = Array2::zeros(w.dim());
    if used == 0 {
        return Ok(GregOutput {
            loss: T::zero(),
            grad_zs,
            grad_zaug,
            grad_w,
            nonconverged,
            max_violation,
            doc_cost,
        });
    }
    let scale = T::one() / T::lit(used as f64);
    for (i, g) in kept {
        grad_zs.row_mut(i).assign(&Array1::from(g.wrt_a).mapv(|x| x * scale));
        grad_zaug.row_mut(i).assign(&Array1::from(g.wrt_b).mapv(|x| x * scale));
        grad_cost.scaled_add(scale, &g.wrt_cost);
    }

    // Each off-diagonal pair feeds two symmetric entries of M^d.
    let mut grad_truncated: Vec<Vec<T>> = truncated.topics.iter().map(|t| vec![T::zero(); t.words.len()]).collect();
    for p in &doc_cost.pairs {
        let g = grad_cost[[p.k1, p.k2]] + grad_cost[[p.k2, p.k1]];
        for (acc, &d) in grad_truncated[p.k1].iter_mut().zip(&p.wrt_first) {
            *acc += g * d;
        }
        for (acc, &d) in grad_truncated[p.k2].iter_mut().zip(&p.wrt_second) {
            *acc += g * d;
        }
    }
    // On the kept words the truncated topic is a softmax of those weights.
    for (topic, (t, g)) in truncated.topics.iter().zip(&grad_truncated).enumerate() {
        let inner: T = t.weights.iter().zip(g).map(|(&p, &x)| p * x).sum();
        for ((&word, &p), &x) in t.words.iter().zip(&t.weights).zip(g) {
            grad_w[[word, topic]] = p * (x - inner);
        }
    }

    Ok(GregOutput {
        loss: total * scale,
        grad_zs,
        grad_zaug,
        grad_w,
        nonconverged,
        max_violation,
        doc_cost,
    })
}

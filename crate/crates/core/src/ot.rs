//! Discrete optimal transport: cosine ground costs, an exact transportation
//! simplex solver, entropic Sinkhorn iterations and their gradients.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{centre, log_sum_exp, Scalar};

/// Nonnegative ground-cost matrix between two supports.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T>(Array2<T>);

impl<T: Scalar> CostMatrix<T> {
    pub fn new(entries: Array2<T>) -> Result<Self> {
        if let Some(x) = entries.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("cost matrix entry {x}")));
        }
        if entries.iter().any(|&x| x < T::zero()) {
            return Err(Error::InvalidArgument("cost matrix has negative entries".into()));
        }
        Ok(Self(entries))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(Array2::zeros((rows, cols)))
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.0.view()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn into_inner(self) -> Array2<T> {
        self.0
    }

    pub fn max(&self) -> T {
        self.0.iter().copied().fold(T::zero(), T::max)
    }

    /// Same matrix with rows and columns permuted: `out[i][j] = self[perm[i]][perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(Array2::from_shape_fn(self.0.dim(), |(i, j)| self.0[[perm[i], perm[j]]]))
    }
}

impl<T> std::ops::Index<(usize, usize)> for CostMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.0[[i, j]]
    }
}

/// `1 − cos(a_i, b_j)` for every row pair, clamped into `[0, 2]`.
pub fn cosine_cost<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Result<CostMatrix<T>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "vector dimensions differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let norms = |m: ArrayView2<'_, T>, side: &'static str| -> Result<Vec<T>> {
        m.rows()
            .into_iter()
            .enumerate()
            .map(|(row, r)| {
                let n = r.dot(&r).sqrt();
                if n.is_zero() || !n.is_finite() {
                    Err(Error::ZeroNorm { side, row })
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    let na = norms(a, "left")?;
    let nb = norms(b, "right")?;
    let dots = a.dot(&b.t());
    let two = T::lit(2.0);
    Ok(CostMatrix(Array2::from_shape_fn(dots.dim(), |(i, j)| {
        (T::one() - dots[[i, j]] / (na[i] * nb[j])).max(T::zero()).min(two)
    })))
}

/// Probability vector over an indexed support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution<T> {
    weights: Vec<T>,
}

impl<T: Scalar> DiscreteDistribution<T> {
    /// Requires nonnegative weights summing to one within `1e-9` (`1e-5` for f32).
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("distribution weights".into()));
        }
        if weights.iter().any(|&w| w < T::zero()) {
            return Err(Error::InvalidArgument("negative weight in distribution".into()));
        }
        let sum: T = weights.iter().copied().sum();
        let tol = T::lit(1e-9).max(T::lit(10.0) * T::epsilon() * T::lit(weights.len() as f64));
        if (sum - T::one()).abs() > tol {
            return Err(Error::NotNormalized { sum: sum.as_f64() });
        }
        Ok(Self { weights })
    }

    /// Normalises nonnegative masses to sum one.
    pub fn from_masses(masses: &[T]) -> Result<Self> {
        let sum: T = masses.iter().copied().sum();
        if !(sum > T::zero()) {
            return Err(Error::InvalidArgument("total mass must be positive".into()));
        }
        Self::new(masses.iter().map(|&m| m / sum).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![T::one() / T::lit(n as f64); n],
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            weights: perm.iter().map(|&p| self.weights[p]).collect(),
        }
    }
}

/// Coupling of two distributions plus the solver state needed for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<T> {
    pub matrix: Array2<T>,
    /// `⟨P, M⟩`.
    pub objective: T,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute row- or column-sum error against the input marginals.
    pub marginal_violation: T,
    /// Exact solver: LP duals `(u, v)`. Sinkhorn: scaling potentials `(f, g)`.
    pub duals: (Vec<T>, Vec<T>),
    /// Entropic coefficient for Sinkhorn plans, `None` for exact plans.
    pub epsilon: Option<T>,
}

impl<T: Scalar> TransportPlan<T> {
    pub fn row_sums(&self) -> Vec<T> {
        self.matrix.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        self.matrix.columns().into_iter().map(|c| c.sum()).collect()
    }
}

fn marginal_violation<T: Scalar>(p: &Array2<T>, a: &[T], b: &[T]) -> T {
    let rows = p.rows().into_iter().zip(a).map(|(r, &ai)| (r.sum() - ai).abs());
    let cols = p.columns().into_iter().zip(b).map(|(c, &bj)| (c.sum() - bj).abs());
    rows.chain(cols).fold(T::zero(), T::max)
}

fn check_shapes<T: Scalar>(
    a: &DiscreteDistribution<T>,
    b: &DiscreteDistribution<T>,
    cost: &CostMatrix<T>,
) -> Result<()> {
    if cost.shape() != (a.len(), b.len()) {
        return Err(Error::Shape(format!(
            "cost matrix is {:?} but marginals have lengths ({}, {})",
            cost.shape(),
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn support<T: Scalar>(w: &[T]) -> Vec<usize> {
    (0..w.len()).filter(|&i| w[i] > T::zero()).collect()
}

/// Exact OT by the transportation simplex. The returned duals satisfy
/// `u_i + v_j ≤ M_ij` everywhere with equality on the plan's support.
pub fn exact_ot<T: Scalar>(
    a: &DiscreteDistribution<T>,
    b: &DiscreteDistribution<T>,
    cost: &CostMatrix<T>,
) -> Result<TransportPlan<T>> {
    check_shapes(a, b, cost)?;
    let rows = support(a.weights());
    let cols = support(b.weights());
    let sub_cost = cost.0.select(ndarray::Axis(0), &rows).select(ndarray::Axis(1), &cols);
    let sa: Vec<T> = rows.iter().map(|&i| a.weights()[i]).collect();
    let sb: Vec<T> = cols.iter().map(|&j| b.weights()[j]).collect();

    let solved = TransportationSimplex::new(&sub_cost, &sa, &sb).solve()?;

    let (n, m) = cost.shape();
    let mut matrix = Array2::zeros((n, m));
    for (si, &i) in rows.iter().enumerate() {
        for (sj, &j) in cols.iter().enumerate() {
            matrix[[i, j]] = solved.flow[[si, sj]];
        }
    }
    // Duals on trimmed atoms: the largest values keeping dual feasibility.
    let mut v = vec![T::zero(); m];
    for (sj, &j) in cols.iter().enumerate() {
        v[j] = solved.v[sj];
    }
    let mut u = vec![T::zero(); n];
    for (si, &i) in rows.iter().enumerate() {
        u[i] = solved.u[si];
    }
    for i in (0..n).filter(|i| !rows.contains(i)) {
        u[i] = cols
            .iter()
            .map(|&j| cost[(i, j)] - v[j])
            .fold(T::infinity(), T::min);
    }
    for j in (0..m).filter(|j| !cols.contains(j)) {
        v[j] = (0..n).map(|i| cost[(i, j)] - u[i]).fold(T::infinity(), T::min);
    }
    let objective = (&matrix * &cost.0).sum();
    Ok(TransportPlan {
        marginal_violation: marginal_violation(&matrix, a.weights(), b.weights()),
        matrix,
        objective,
        converged: true,
        iterations: solved.pivots,
        duals: (u, v),
        epsilon: None,
    })
}

struct Solved<T> {
    flow: Array2<T>,
    u: Vec<T>,
    v: Vec<T>,
    pivots: usize,
}

/// Dense transportation simplex over a spanning-tree basis of `n + m − 1` cells.
struct TransportationSimplex<'a, T> {
    cost: &'a Array2<T>,
    supply: &'a [T],
    demand: &'a [T],
    basic: Vec<(usize, usize)>,
    flow: Array2<T>,
}

impl<'a, T: Scalar> TransportationSimplex<'a, T> {
    fn new(cost: &'a Array2<T>, supply: &'a [T], demand: &'a [T]) -> Self {
        let (n, m) = cost.dim();
        // Northwest-corner start; always yields a spanning tree.
        let mut ra = supply.to_vec();
        let mut rb = demand.to_vec();
        let mut flow = Array2::zeros((n, m));
        let mut basic = Vec::with_capacity(n + m - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = ra[i].min(rb[j]).max(T::zero());
            flow[[i, j]] = x;
            basic.push((i, j));
            ra[i] -= x;
            rb[j] -= x;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if i == n - 1 {
                j += 1;
            } else if j == m - 1 || ra[i] <= rb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self {
            cost,
            supply,
            demand,
            basic,
            flow,
        }
    }

    fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let (n, m) = self.cost.dim();
        let mut by_row = vec![Vec::new(); n];
        let mut by_col = vec![Vec::new(); m];
        for (k, &(i, j)) in self.basic.iter().enumerate() {
            by_row[i].push(k);
            by_col[j].push(k);
        }
        (by_row, by_col)
    }

    fn duals(&self) -> (Vec<T>, Vec<T>) {
        let (n, m) = self.cost.dim();
        let (by_row, by_col) = self.adjacency();
        let mut u = vec![None; n];
        let mut v = vec![None; m];
        u[0] = Some(T::zero());
        // Nodes: rows are 0..n, columns n..n+m.
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            if node < n {
                let ui = u[node].unwrap();
                for &k in &by_row[node] {
                    let (_, j) = self.basic[k];
                    if v[j].is_none() {
                        v[j] = Some(self.cost[[node, j]] - ui);
                        stack.push(n + j);
                    }
                }
            } else {
                let j = node - n;
                let vj = v[j].unwrap();
                for &k in &by_col[j] {
                    let (i, _) = self.basic[k];
                    if u[i].is_none() {
                        u[i] = Some(self.cost[[i, j]] - vj);
                        stack.push(i);
                    }
                }
            }
        }
        (
            u.into_iter().map(|x| x.expect("basis spans all rows")).collect(),
            v.into_iter().map(|x| x.expect("basis spans all columns")).collect(),
        )
    }

    /// Basic cells on the tree path from row `p` to column `q`, in path order.
    fn tree_path(&self, p: usize, q: usize) -> Vec<usize> {
        let (n, m) = self.cost.dim();
        let (by_row, by_col) = self.adjacency();
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n + m];
        let mut seen = vec![false; n + m];
        seen[p] = true;
        let mut queue = std::collections::VecDeque::from([p]);
        while let Some(node) = queue.pop_front() {
            if node == n + q {
                break;
            }
            let edges = if node < n { &by_row[node] } else { &by_col[node - n] };
            for &k in edges {
                let (i, j) = self.basic[k];
                let next = if node < n { n + j } else { i };
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = n + q;
        while node != p {
            let (prev, k) = parent[node].expect("basis is a spanning tree");
            path.push(k);
            node = prev;
        }
        path.reverse();
        path
    }

    fn solve(mut self) -> Result<Solved<T>> {
        let (n, m) = self.cost.dim();
        let scale = self.cost.iter().copied().fold(T::one(), |acc, c| acc.max(c.abs()));
        let tol = T::tolerance() * scale;
        let dantzig_limit = 20 * n * m + 100;
        let hard_limit = 200 * n * m + 1000;
        let mut pivots = 0;
        let mut in_basis = Array2::from_elem((n, m), false);
        for &(i, j) in &self.basic {
            in_basis[[i, j]] = true;
        }
        loop {
            let (u, v) = self.duals();
            let mut entering = None;
            let mut best = -tol;
            'scan: for i in 0..n {
                for j in 0..m {
                    if in_basis[[i, j]] {
                        continue;
                    }
                    let r = self.cost[[i, j]] - u[i] - v[j];
                    if r < best {
                        best = r;
                        entering = Some((i, j));
                        // Past the Dantzig budget fall back to Bland's rule.
                        if pivots >= dantzig_limit {
                            break 'scan;
                        }
                    }
                }
            }
            let Some((p, q)) = entering else {
                let flow = self.tree_flow();
                return Ok(Solved { flow, u, v, pivots });
            };
            if pivots >= hard_limit {
                return Err(Error::InvalidArgument(format!(
                    "transportation simplex did not terminate after {pivots} pivots"
                )));
            }
            let path = self.tree_path(p, q);
            // Odd positions along the path (0-based even) lose flow.
            let mut theta = T::infinity();
            let mut leaving = usize::MAX;
            for (pos, &k) in path.iter().enumerate().filter(|(pos, _)| pos % 2 == 0) {
                let (i, j) = self.basic[k];
                let x = self.flow[[i, j]];
                if x < theta || (x == theta && (i, j) < self.basic[leaving]) {
                    theta = x;
                    leaving = k;
                }
                let _ = pos;
            }
            for (pos, &k) in path.iter().enumerate() {
                let (i, j) = self.basic[k];
                if pos % 2 == 0 {
                    self.flow[[i, j]] -= theta;
                } else {
                    self.flow[[i, j]] += theta;
                }
            }
            let (li, lj) = self.basic[leaving];
            self.flow[[li, lj]] = T::zero();
            in_basis[[li, lj]] = false;
            self.flow[[p, q]] = theta;
            in_basis[[p, q]] = true;
            self.basic[leaving] = (p, q);
            pivots += 1;
        }
    }

    /// Recomputes basic flows from the marginals by peeling tree leaves,
    /// removing drift accumulated over pivots.
    fn tree_flow(&self) -> Array2<T> {
        let (n, m) = self.cost.dim();
        let mut residual: Vec<T> = self.supply.iter().chain(self.demand).copied().collect();
        let mut degree = vec![0usize; n + m];
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n + m];
        for (k, &(i, j)) in self.basic.iter().enumerate() {
            degree[i] += 1;
            degree[n + j] += 1;
            incident[i].push(k);
            incident[n + j].push(k);
        }
        let mut done = vec![false; self.basic.len()];
        let mut flow = Array2::zeros((n, m));
        let mut leaves: Vec<usize> = (0..n + m).filter(|&x| degree[x] == 1).collect();
        while let Some(node) = leaves.pop() {
            if degree[node] != 1 {
                continue;
            }
            let Some(&k) = incident[node].iter().find(|&&k| !done[k]) else { continue };
            done[k] = true;
            let (i, j) = self.basic[k];
            let other = if node < n { n + j } else { i };
            let x = residual[node].max(T::zero());
            flow[[i, j]] = x;
            residual[other] -= x;
            degree[node] -= 1;
            degree[other] -= 1;
            if degree[other] == 1 {
                leaves.push(other);
            }
        }
        flow
    }
}

/// Sinkhorn settings; `lambda` is the inverse of the entropic coefficient.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SinkhornConfig<T> {
    pub lambda: T,
    pub max_iters: usize,
    /// Stop once the largest marginal error falls below this.
    pub stop_threshold: T,
}

impl<T: Scalar> Default for SinkhornConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::lit(100.0),
            max_iters: 5000,
            stop_threshold: T::lit(0.005),
        }
    }
}

impl<T: Scalar> SinkhornConfig<T> {
    pub fn epsilon(&self) -> T {
        T::one() / self.lambda
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > T::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.stop_threshold > T::zero()) {
            return Err(Error::InvalidArgument("stop_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Plain-domain scaling is used when every kernel entry stays above `exp(-30)`.
const PLAIN_DOMAIN_LIMIT: f64 = 30.0;

/// Entropic OT by alternating scaling. A plan that misses the stop threshold
/// within `max_iters` is returned with `converged == false`.
pub fn sinkhorn<T: Scalar>(
    a: &DiscreteDistribution<T>,
    b: &DiscreteDistribution<T>,
    cost: &CostMatrix<T>,
    cfg: &SinkhornConfig<T>,
) -> Result<TransportPlan<T>> {
    check_shapes(a, b, cost)?;
    cfg.validate()?;
    let eps = cfg.epsilon();
    let rows = support(a.weights());
    let cols = support(b.weights());
    let sub = cost.0.select(ndarray::Axis(0), &rows).select(ndarray::Axis(1), &cols);
    let sa: Vec<T> = rows.iter().map(|&i| a.weights()[i]).collect();
    let sb: Vec<T> = cols.iter().map(|&j| b.weights()[j]).collect();

    let max_cost = sub.iter().copied().fold(T::zero(), T::max);
    let state = if max_cost / eps < T::lit(PLAIN_DOMAIN_LIMIT) {
        plain_scaling(&sub, &sa, &sb, eps, cfg).or_else(|| Some(log_scaling(&sub, &sa, &sb, eps, cfg)))
    } else {
        Some(log_scaling(&sub, &sa, &sb, eps, cfg))
    }
    .expect("log-domain scaling always returns");

    let (n, m) = cost.shape();
    let mut matrix = Array2::zeros((n, m));
    for (si, &i) in rows.iter().enumerate() {
        for (sj, &j) in cols.iter().enumerate() {
            matrix[[i, j]] = ((state.f[si] + state.g[sj] - sub[[si, sj]]) / eps).exp();
        }
    }
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); m];
    for (sj, &j) in cols.iter().enumerate() {
        g[j] = state.g[sj];
    }
    for (si, &i) in rows.iter().enumerate() {
        f[i] = state.f[si];
    }
    // Potentials on trimmed atoms via the soft c-transform.
    for i in (0..n).filter(|i| !rows.contains(i)) {
        f[i] = -eps * log_sum_exp(cols.len(), |s| (g[cols[s]] - cost[(i, cols[s])]) / eps);
    }
    for j in (0..m).filter(|j| !cols.contains(j)) {
        g[j] = -eps * log_sum_exp(rows.len(), |s| (f[rows[s]] - cost[(rows[s], j)]) / eps);
    }
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sinkhorn plan".into()));
    }
    let objective = (&matrix * &cost.0).sum();
    Ok(TransportPlan {
        marginal_violation: marginal_violation(&matrix, a.weights(), b.weights()),
        matrix,
        objective,
        converged: state.converged,
        iterations: state.iterations,
        duals: (f, g),
        epsilon: Some(eps),
    })
}

struct ScalingState<T> {
    f: Vec<T>,
    g: Vec<T>,
    iterations: usize,
    converged: bool,
}

fn plain_scaling<T: Scalar>(
    cost: &Array2<T>,
    a: &[T],
    b: &[T],
    eps: T,
    cfg: &SinkhornConfig<T>,
) -> Option<ScalingState<T>> {
    let kernel = cost.mapv(|c| (-c / eps).exp());
    let (n, m) = kernel.dim();
    let mut u = vec![T::one(); n];
    let mut v = vec![T::one(); m];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        for i in 0..n {
            let kv: T = (0..m).map(|j| kernel[[i, j]] * v[j]).sum();
            u[i] = a[i] / kv;
        }
        for j in 0..m {
            let ku: T = (0..n).map(|i| kernel[[i, j]] * u[i]).sum();
            v[j] = b[j] / ku;
        }
        if u.iter().chain(&v).any(|x| !x.is_finite() || x.is_zero()) {
            return None;
        }
        let violation = (0..n)
            .map(|i| ((0..m).map(|j| u[i] * kernel[[i, j]] * v[j]).sum::<T>() - a[i]).abs())
            .fold(T::zero(), T::max);
        if violation < cfg.stop_threshold {
            converged = true;
            break;
        }
    }
    Some(ScalingState {
        f: u.iter().map(|&x| eps * x.ln()).collect(),
        g: v.iter().map(|&x| eps * x.ln()).collect(),
        iterations,
        converged,
    })
}

fn log_scaling<T: Scalar>(
    cost: &Array2<T>,
    a: &[T],
    b: &[T],
    eps: T,
    cfg: &SinkhornConfig<T>,
) -> ScalingState<T> {
    let (n, m) = cost.dim();
    let log_a: Vec<T> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<T> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); m];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        for i in 0..n {
            f[i] = eps * log_a[i] - eps * log_sum_exp(m, |j| (g[j] - cost[[i, j]]) / eps);
        }
        for j in 0..m {
            g[j] = eps * log_b[j] - eps * log_sum_exp(n, |i| (f[i] - cost[[i, j]]) / eps);
        }
        let violation = (0..n)
            .map(|i| {
                let s: T = (0..m).map(|j| ((f[i] + g[j] - cost[[i, j]]) / eps).exp()).sum();
                (s - a[i]).abs()
            })
            .fold(T::zero(), T::max);
        if violation < cfg.stop_threshold {
            converged = true;
            break;
        }
    }
    ScalingState {
        f,
        g,
        iterations,
        converged,
    }
}

/// Outcome of [`sinkhorn_batch`]; individual failures never abort the batch.
#[derive(Debug)]
pub struct BatchOutcome<T> {
    pub plans: Vec<Result<TransportPlan<T>>>,
    pub nonconverged: usize,
    pub failed: usize,
}

/// Solves `sinkhorn(a[i], b[i], cost)` for every pair in parallel.
pub fn sinkhorn_batch<T: Scalar>(
    a: &[DiscreteDistribution<T>],
    b: &[DiscreteDistribution<T>],
    cost: &CostMatrix<T>,
    cfg: &SinkhornConfig<T>,
) -> Result<BatchOutcome<T>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("batch sizes differ: {} vs {}", a.len(), b.len())));
    }
    let plans: Vec<Result<TransportPlan<T>>> = a
        .par_iter()
        .zip(b.par_iter())
        .map(|(x, y)| sinkhorn(x, y, cost, cfg))
        .collect();
    let failed = plans.iter().filter(|p| p.is_err()).count();
    let nonconverged = plans
        .iter()
        .filter(|p| matches!(p, Ok(plan) if !plan.converged))
        .count();
    Ok(BatchOutcome {
        plans,
        nonconverged,
        failed,
    })
}

/// Gradients of a plan's objective `⟨P, M⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanGradient<T> {
    /// Centred to sum to zero: only directions within the simplex are meaningful.
    pub wrt_a: Vec<T>,
    pub wrt_b: Vec<T>,
    pub wrt_cost: Array2<T>,
}

/// Gradient of `⟨P, M⟩` for a converged plan.
///
/// For Sinkhorn plans this differentiates through the scaling fixed point:
/// with `r = P1`, `c = Pᵀ1` and `α = (P∘M)1`, `β = (P∘M)ᵀ1`, the adjoint
/// `(x, y)` solves `[diag r, P; Pᵀ, diag c] (x, y) = (α, β)` and
///
/// * `∂/∂a = x`, `∂/∂b = y` (centred),
/// * `∂/∂M_ij = P_ij + P_ij (x_i + y_j − M_ij) / ε`.
///
/// Exact plans use the LP duals and `∂/∂M = P`.
pub fn sinkhorn_grad<T: Scalar>(plan: &TransportPlan<T>, cost: &CostMatrix<T>) -> Result<PlanGradient<T>> {
    if !plan.converged {
        return Err(Error::NotConverged);
    }
    if plan.matrix.dim() != cost.shape() {
        return Err(Error::Shape("plan and cost shapes differ".into()));
    }
    let Some(eps) = plan.epsilon else {
        let (mut u, mut v) = plan.duals.clone();
        centre(&mut u);
        centre(&mut v);
        return Ok(PlanGradient {
            wrt_a: u,
            wrt_b: v,
            wrt_cost: plan.matrix.clone(),
        });
    };

    let p = &plan.matrix;
    let (n, m) = p.dim();
    let rows: Vec<usize> = (0..n).filter(|&i| p.row(i).sum() > T::zero()).collect();
    let cols: Vec<usize> = (0..m).filter(|&j| p.column(j).sum() > T::zero()).collect();
    let sp = p.select(ndarray::Axis(0), &rows).select(ndarray::Axis(1), &cols);
    let sm = cost.0.select(ndarray::Axis(0), &rows).select(ndarray::Axis(1), &cols);
    let (sn, smm) = sp.dim();
    let r: Vec<T> = sp.rows().into_iter().map(|x| x.sum()).collect();
    let c: Vec<T> = sp.columns().into_iter().map(|x| x.sum()).collect();
    let pm = &sp * &sm;
    let alpha: Vec<T> = pm.rows().into_iter().map(|x| x.sum()).collect();
    let beta: Vec<T> = pm.columns().into_iter().map(|x| x.sum()).collect();

    // Schur complement on y with the gauge fixed by y_last = 0.
    let mut y = vec![T::zero(); smm];
    if smm > 1 {
        let k = smm - 1;
        let mut schur = Array2::zeros((k, k));
        let mut rhs = vec![T::zero(); k];
        for j in 0..k {
            rhs[j] = beta[j] - (0..sn).map(|i| sp[[i, j]] * alpha[i] / r[i]).sum::<T>();
            for l in 0..k {
                let cross: T = (0..sn).map(|i| sp[[i, j]] * sp[[i, l]] / r[i]).sum();
                schur[[j, l]] = if j == l { c[j] - cross } else { -cross };
            }
        }
        let sol = solve_dense(schur, rhs)?;
        y[..k].copy_from_slice(&sol);
    }
    let x: Vec<T> = (0..sn)
        .map(|i| (alpha[i] - (0..smm).map(|j| sp[[i, j]] * y[j]).sum::<T>()) / r[i])
        .collect();

    let mut wrt_a = vec![T::zero(); n];
    let mut wrt_b = vec![T::zero(); m];
    let mut wrt_cost = p.clone();
    for (si, &i) in rows.iter().enumerate() {
        wrt_a[i] = x[si];
        for (sj, &j) in cols.iter().enumerate() {
            wrt_cost[[i, j]] += sp[[si, sj]] * (x[si] + y[sj] - sm[[si, sj]]) / eps;
        }
    }
    for (sj, &j) in cols.iter().enumerate() {
        wrt_b[j] = y[sj];
    }
    centre_on(&mut wrt_a, &rows);
    centre_on(&mut wrt_b, &cols);
    Ok(PlanGradient {
        wrt_a,
        wrt_b,
        wrt_cost,
    })
}

fn centre_on<T: Scalar>(v: &mut [T], idx: &[usize]) {
    let mut sub: Vec<T> = idx.iter().map(|&i| v[i]).collect();
    centre(&mut sub);
    v.iter_mut().for_each(|x| *x = T::zero());
    for (&i, s) in idx.iter().zip(sub) {
        v[i] = s;
    }
}

/// Gaussian elimination with partial pivoting.
fn solve_dense<T: Scalar>(mut a: Array2<T>, mut b: Vec<T>) -> Result<Vec<T>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[[x, col]].abs().partial_cmp(&a[[y, col]].abs()).unwrap())
            .unwrap();
        if a[[pivot, col]].abs() <= T::min_positive_value() {
            return Err(Error::NonFinite("singular adjoint system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
            }
            b.swap(pivot, col);
        }
        let d = a[[col, col]];
        for row in col + 1..n {
            let factor = a[[row, col]] / d;
            if factor.is_zero() {
                continue;
            }
            for k in col..n {
                let v = a[[col, k]];
                a[[row, k]] -= factor * v;
            }
            let bc = b[col];
            b[row] -= factor * bc;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let s: T = (row + 1..n).map(|k| a[[row, k]] * x[k]).sum();
        x[row] = (b[row] - s) / a[[row, row]];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adjoint solution".into()));
    }
    Ok(x)
}

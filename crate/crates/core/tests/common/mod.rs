//! Independent reference implementations used by the integration suites.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Minimum cost over all basic feasible solutions of the transportation
/// polytope, found by enumerating every spanning tree of the bipartite graph.
pub fn lp_oracle(a: &[f64], b: &[f64], cost: &Array2<f64>) -> f64 {
    let (n, m) = (a.len(), b.len());
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(n + m - 1);
    let mut parent: Vec<usize> = (0..n + m).collect();
    enumerate(&edges, 0, n + m - 1, &mut chosen, &mut parent, &mut |tree| {
        if let Some(flow) = tree_solution(a, b, tree) {
            let c: f64 = tree.iter().zip(&flow).map(|(&(i, j), x)| cost[[i, j]] * x).sum();
            best = best.min(c);
        }
    });
    best
}

fn find(parent: &[usize], mut x: usize) -> usize {
    while parent[x] != x {
        x = parent[x];
    }
    x
}

fn enumerate(
    edges: &[(usize, usize)],
    next: usize,
    need: usize,
    chosen: &mut Vec<(usize, usize)>,
    parent: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[(usize, usize)]),
) {
    if chosen.len() == need {
        visit(chosen);
        return;
    }
    if edges.len() - next < need - chosen.len() {
        return;
    }
    // Column nodes follow the row nodes.
    let rows = edges[edges.len() - 1].0 + 1;
    let (i, j) = edges[next];
    let (ri, rj) = (find(parent, i), find(parent, rows + j));
    if ri != rj {
        let saved = parent.clone();
        parent[ri] = rj;
        chosen.push((i, j));
        enumerate(edges, next + 1, need, chosen, parent, visit);
        chosen.pop();
        *parent = saved;
    }
    enumerate(edges, next + 1, need, chosen, parent, visit);
}

/// Flows on a spanning tree from leaf peeling; `None` when infeasible.
fn tree_solution(a: &[f64], b: &[f64], tree: &[(usize, usize)]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut residual: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut degree = vec![0usize; residual.len()];
    for &(i, j) in tree {
        degree[i] += 1;
        degree[n + j] += 1;
    }
    let mut flow = vec![f64::NAN; tree.len()];
    let mut remaining = tree.len();
    while remaining > 0 {
        let (k, leaf) = tree
            .iter()
            .enumerate()
            .filter(|(k, _)| flow[*k].is_nan())
            .find_map(|(k, &(i, j))| {
                if degree[i] == 1 {
                    Some((k, i))
                } else if degree[n + j] == 1 {
                    Some((k, n + j))
                } else {
                    None
                }
            })?;
        let (i, j) = tree[k];
        let other = if leaf == i { n + j } else { i };
        let x = residual[leaf];
        if x < -1e-12 {
            return None;
        }
        flow[k] = x;
        residual[other] -= x;
        degree[i] -= 1;
        degree[n + j] -= 1;
        remaining -= 1;
    }
    Some(flow)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize, allow_zeros: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if allow_zeros && rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.05..1.0)
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

pub fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..1.0))
}

/// Spanning-tree count of the complete bipartite graph.
pub fn tree_count(n: usize, m: usize) -> f64 {
    (n as f64).powi(m as i32 - 1) * (m as f64).powi(n as i32 - 1)
}

/// Purity and NMI straight from the definitions, over a contingency table
/// `table[cluster][class]`.
pub fn contingency_oracle(table: &[Vec<usize>]) -> (f64, f64) {
    let total: usize = table.iter().flatten().sum();
    let n = total as f64;
    let purity = table.iter().map(|r| *r.iter().max().unwrap_or(&0)).sum::<usize>() as f64 / n;
    let classes = table.first().map_or(0, |r| r.len());
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let col: Vec<f64> = (0..classes)
        .map(|c| table.iter().map(|r| r[c]).sum::<usize>() as f64)
        .collect();
    let entropy = |xs: &[f64]| -> f64 {
        xs.iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| -(x / n) * (x / n).ln())
            .sum()
    };
    let mut mi = 0.0;
    for (k, r) in table.iter().enumerate() {
        for (c, &cnt) in r.iter().enumerate() {
            if cnt > 0 {
                let p = cnt as f64 / n;
                mi += p * (p / ((row[k] / n) * (col[c] / n))).ln();
            }
        }
    }
    let denom = (entropy(&row) + entropy(&col)) / 2.0;
    let nmi = if denom == 0.0 { 0.0 } else { mi / denom };
    (purity, nmi)
}

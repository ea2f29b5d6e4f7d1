mod common;

use common::{lp_oracle, random_cost, random_simplex, tree_count};
use greg_core::ot::{
    cosine_cost, exact_ot, sinkhorn, sinkhorn_grad, CostMatrix, DiscreteDistribution, SinkhornConfig,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist(w: &[f64]) -> DiscreteDistribution<f64> {
    DiscreteDistribution::new(w.to_vec()).unwrap()
}

#[test]
fn exact_matches_tree_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let (n, m) = loop {
            let n = rng.random_range(1..=5);
            let m = rng.random_range(1..=5);
            if tree_count(n, m) <= 5000.0 {
                break (n, m);
            }
        };
        let a = random_simplex(&mut rng, n, true);
        let b = random_simplex(&mut rng, m, true);
        let c = random_cost(&mut rng, n, m);
        let plan = exact_ot(&dist(&a), &dist(&b), &CostMatrix::new(c.clone()).unwrap()).unwrap();
        let oracle = lp_oracle(&a, &b, &c);
        assert!((plan.objective - oracle).abs() < 1e-8, "{} vs {}", plan.objective, oracle);
        assert!(plan.marginal_violation < 1e-9);
    }
}

#[test]
fn exact_duals_certify_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let m = rng.random_range(1..=20);
        let a = random_simplex(&mut rng, n, true);
        let b = random_simplex(&mut rng, m, true);
        let c = random_cost(&mut rng, n, m);
        let plan = exact_ot(&dist(&a), &dist(&b), &CostMatrix::new(c.clone()).unwrap()).unwrap();
        let (u, v) = &plan.duals;
        for i in 0..n {
            for j in 0..m {
                let reduced = c[[i, j]] - u[i] - v[j];
                assert!(reduced > -1e-9, "dual infeasible at ({i},{j}): {reduced}");
                if plan.matrix[[i, j]] > 1e-12 {
                    assert!(reduced.abs() < 1e-9);
                }
            }
        }
        let dual: f64 = u.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>()
            + v.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dual - plan.objective).abs() < 1e-9);
    }
}

fn tight(lambda: f64) -> SinkhornConfig<f64> {
    SinkhornConfig {
        lambda,
        max_iters: 200_000,
        stop_threshold: 1e-14,
    }
}

fn objective(a: &[f64], b: &[f64], c: &Array2<f64>, lambda: f64) -> f64 {
    let plan = sinkhorn(&dist(a), &dist(b), &CostMatrix::new(c.clone()).unwrap(), &tight(lambda)).unwrap();
    assert!(plan.converged);
    plan.objective
}

#[test]
fn sinkhorn_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = 1e-6;
    for &lambda in &[10.0, 100.0] {
        for _ in 0..5 {
            let n = rng.random_range(2..=5);
            let m = rng.random_range(2..=5);
            let a = random_simplex(&mut rng, n, false);
            let b = random_simplex(&mut rng, m, false);
            let c = random_cost(&mut rng, n, m);
            let cm = CostMatrix::new(c.clone()).unwrap();
            let plan = sinkhorn(&dist(&a), &dist(&b), &cm, &tight(lambda)).unwrap();
            let g = sinkhorn_grad(&plan, &cm).unwrap();
            for i in 0..n {
                // Tangent direction e_i - 1/n keeps the marginal on the simplex.
                let shift = |s: f64| -> Vec<f64> {
                    (0..n).map(|k| a[k] + s * ((k == i) as u8 as f64 - 1.0 / n as f64)).collect()
                };
                let fd = (objective(&shift(h), &b, &c, lambda) - objective(&shift(-h), &b, &c, lambda)) / (2.0 * h);
                let an: f64 = (0..n).map(|k| g.wrt_a[k] * ((k == i) as u8 as f64 - 1.0 / n as f64)).sum();
                assert!((fd - an).abs() < 1e-4, "a[{i}] lambda {lambda}: fd {fd} analytic {an}");
            }
            for j in 0..m {
                let shift = |s: f64| -> Vec<f64> {
                    (0..m).map(|k| b[k] + s * ((k == j) as u8 as f64 - 1.0 / m as f64)).collect()
                };
                let fd = (objective(&a, &shift(h), &c, lambda) - objective(&a, &shift(-h), &c, lambda)) / (2.0 * h);
                let an: f64 = (0..m).map(|k| g.wrt_b[k] * ((k == j) as u8 as f64 - 1.0 / m as f64)).sum();
                assert!((fd - an).abs() < 1e-4, "b[{j}] lambda {lambda}: fd {fd} analytic {an}");
            }
            for i in 0..n {
                for j in 0..m {
                    let mut cp = c.clone();
                    cp[[i, j]] += h;
                    let mut cn = c.clone();
                    cn[[i, j]] -= h;
                    let fd = (objective(&a, &b, &cp, lambda) - objective(&a, &b, &cn, lambda)) / (2.0 * h);
                    let an = g.wrt_cost[[i, j]];
                    assert!((fd - an).abs() < 1e-4, "M[{i},{j}] lambda {lambda}: fd {fd} analytic {an}");
                }
            }
        }
    }
}

fn arb_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, usize, usize)> {
    (1usize..6, 1usize..6).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(0.01f64..1.0, m),
            prop::collection::vec(0.0f64..1.0, n * m),
            Just(n),
            Just(m),
        )
    })
}

fn normalise(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

proptest! {
    #[test]
    fn plans_are_nonnegative_couplings((a, b, c, n, m) in arb_instance()) {
        let a = normalise(&a);
        let b = normalise(&b);
        let cm = CostMatrix::new(Array2::from_shape_vec((n, m), c).unwrap()).unwrap();
        let cfg = SinkhornConfig { lambda: 20.0, max_iters: 20_000, stop_threshold: 1e-9 };
        let exact = exact_ot(&dist(&a), &dist(&b), &cm).unwrap();
        let soft = sinkhorn(&dist(&a), &dist(&b), &cm, &cfg).unwrap();
        prop_assert!(exact.matrix.iter().all(|&x| x >= 0.0));
        prop_assert!(soft.matrix.iter().all(|&x| x >= 0.0));
        prop_assert!(exact.marginal_violation < 1e-9);
        prop_assert!(soft.converged);
        prop_assert!(soft.marginal_violation < 1e-9);
        // The entropic plan is feasible, so it cannot beat the exact optimum.
        prop_assert!(soft.objective >= exact.objective - 1e-9);
    }

    #[test]
    fn exact_objective_is_symmetric_under_transpose((a, b, c, n, m) in arb_instance()) {
        let a = normalise(&a);
        let b = normalise(&b);
        let c = Array2::from_shape_vec((n, m), c).unwrap();
        let forward = exact_ot(&dist(&a), &dist(&b), &CostMatrix::new(c.clone()).unwrap()).unwrap();
        let back = exact_ot(&dist(&b), &dist(&a), &CostMatrix::new(c.t().to_owned()).unwrap()).unwrap();
        prop_assert!((forward.objective - back.objective).abs() < 1e-9);
    }

    #[test]
    fn cosine_cost_is_bounded(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..6)) {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let e = Array2::from_shape_vec((rows.len(), 3), flat).unwrap();
        prop_assume!(e.rows().into_iter().all(|r| r.dot(&r) > 1e-6));
        let c = cosine_cost(e.view(), e.view()).unwrap();
        for i in 0..rows.len() {
            prop_assert!(c[(i, i)].abs() < 1e-12);
            for j in 0..rows.len() {
                prop_assert!((0.0..=2.0).contains(&c[(i, j)]));
                prop_assert!((c[(i, j)] - c[(j, i)]).abs() < 1e-12);
            }
        }
    }
}

use std::sync::Arc;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqreg::oracle::*;
use vqreg::*;

fn tiny(n: usize, k: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, k), |_| rng.random_range(0.0..1.0));
    let y = Array2::from_shape_fn((n, d), |_| rng.random_range(0.0..1.0));
    Dataset::new(x, y, seed, "tiny").unwrap()
}

fn plan_value(lp: &LpInstance, plan: &Array2<f64>) -> f64 {
    lp.c.iter().zip(plan.iter()).map(|(c, p)| c * p).sum()
}

#[test]
fn independent_coupling_is_feasible() {
    for seed in 0..5 {
        let ds = tiny(7, 2, 2, seed);
        let grid = QuantileGrid::new(3, 2).unwrap();
        let lp = build_primal_lp(&ds, &grid).unwrap();
        let x = Array1::from_elem(grid.len() * ds.len(), 1.0 / (grid.len() * ds.len()) as f64);
        assert!(lp.constraint_residual(&x) < 1e-12);
    }
}

#[test]
fn relaxed_dual_brackets_the_lp_value() {
    // any (ψ, β) gives an upper bound, and at the optimum the gap is at most ε log N
    for seed in 0..6 {
        let ds = tiny(6, 1, 1, seed);
        let grid = QuantileGrid::new(3, 1).unwrap();
        let lp = build_primal_lp(&ds, &grid).unwrap();
        let sol = solve_lp_exact(&lp).unwrap();
        let eps = 0.01;
        let cfg = SolverConfig {
            epsilon: eps,
            iterations: 20_000,
            learning_rate: suggested_learning_rate(eps, 6, 3, ds.x().view()),
            batch_n: 6,
            batch_t: 3,
            lr_patience_iters: 100_000,
            ..Default::default()
        };
        let fit = fit_linear_vqr(&ds, &grid, &cfg).unwrap();
        let f = relaxed_dual_objective(&fit.solution.psi, &fit.solution.beta, &ds, &grid, eps, None).unwrap();
        assert!(f >= sol.value - 1e-9, "seed {seed}: dual {f} below LP {}", sol.value);
        assert!(f <= sol.value + eps * 6f64.ln() + 1e-3, "seed {seed}: dual {f}, LP {}", sol.value);
    }
}

#[test]
fn unconditional_lp_plan_is_the_sorting_coupling_in_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [1usize, 3, 8, 10] {
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ds = Dataset::unconditional(Array2::from_shape_vec((n, 1), y.clone()).unwrap(), 0, "y").unwrap();
        for t in [1usize, 2, 4] {
            let grid = QuantileGrid::new(t, 1).unwrap();
            let lp = build_primal_lp(&ds, &grid).unwrap();
            let sol = solve_lp_exact(&lp).unwrap();
            let sorted = sorting_coupling(&y, t).unwrap();
            assert!((sol.value - plan_value(&lp, &sorted)).abs() < 1e-9, "n {n}, t {t}");
            let plan = plan_from_solution(&sol, t, n).unwrap();
            let a = plan_barycentres(&plan, ds.y()).unwrap();
            let b = plan_barycentres(&sorted, ds.y()).unwrap();
            assert!((a - b).iter().all(|v| v.abs() < 1e-9));
        }
    }
}

#[test]
fn sorting_coupling_decodes_to_empirical_quantiles() {
    let y = [3.0, 1.0, 4.0, 2.0];
    let plan = sorting_coupling(&y, 4).unwrap();
    let q = plan_barycentres(&plan, &Array2::from_shape_vec((4, 1), y.to_vec()).unwrap()).unwrap();
    assert_eq!(q.column(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    let grid = Arc::new(QuantileGrid::new(4, 1).unwrap());
    let cvqf = DiscreteCvqf::new(grid, q, None).unwrap();
    assert_eq!(metrics::monotonicity_violations(&cvqf), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lp_solution_is_feasible_and_dominates(seed in 0u64..10_000, n in 1usize..7, t in 1usize..4, d in 1usize..3, k in 0usize..3) {
        let ds = tiny(n, k, d, seed);
        let grid = QuantileGrid::new(t, d).unwrap();
        let lp = build_primal_lp(&ds, &grid).unwrap();
        let sol = solve_lp_exact(&lp).unwrap();
        prop_assert!(lp.constraint_residual(&sol.x) < 1e-9);
        prop_assert!(sol.x.iter().all(|&v| v >= 0.0));
        let independent = Array2::from_elem((grid.len(), n), 1.0 / (grid.len() * n) as f64);
        prop_assert!(sol.value >= plan_value(&lp, &independent) - 1e-9);
        if k == 0 && d == 1 {
            let y: Vec<f64> = ds.y().column(0).to_vec();
            let sorted = sorting_coupling(&y, t).unwrap();
            prop_assert!((sol.value - plan_value(&lp, &sorted)).abs() < 1e-9);
        }
    }
}

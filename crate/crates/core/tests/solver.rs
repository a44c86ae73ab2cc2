use std::sync::Arc;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqreg::datasets::gen_mvn;
use vqreg::embedding::{embed_backward, embed_forward};
use vqreg::solver::{batch_objective, fit_dual, objective_gradients, recover_phi, sample_batch};
use vqreg::*;

fn random_instance(n: usize, k: usize, d: usize, t: usize, seed: u64) -> (Dataset, QuantileGrid, Array1<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let ds = Dataset::new(x, y, seed, "random").unwrap();
    let grid = QuantileGrid::new(t, d).unwrap();
    let psi = Array1::from_shape_fn(n, |_| rng.random_range(-0.3..0.3));
    let beta = Array2::from_shape_fn((grid.len(), k), |_| rng.random_range(-0.3..0.3));
    (ds, grid, psi, beta)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    // gauge directions give analytic zeros that differences only match to rounding
    num / den.max(1e-6)
}

/// Central differences of the batch loss with respect to the batch's own ψ and β.
fn batch_fd(ds: &Dataset, grid: &QuantileGrid, psi: &Array1<f64>, beta: &Array2<f64>, batch: &solver::Batch, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let h = 1e-5;
    let loss = |p: &Array1<f64>, b: &Array2<f64>| objective_gradients(p, b, ds, grid, batch, eps, None).unwrap().loss;
    let mut gp = Vec::new();
    for &j in &batch.data {
        let (mut a, mut b) = (psi.clone(), psi.clone());
        a[j] += h;
        b[j] -= h;
        gp.push((loss(&a, beta) - loss(&b, beta)) / (2.0 * h));
    }
    let mut gb = Vec::new();
    for &i in &batch.levels {
        for c in 0..beta.ncols() {
            let (mut a, mut b) = (beta.clone(), beta.clone());
            a[[i, c]] += h;
            b[[i, c]] -= h;
            gb.push((loss(psi, &a) - loss(psi, &b)) / (2.0 * h));
        }
    }
    (gp, gb)
}

#[test]
fn solver_gradients_match_central_differences() {
    for seed in 0..6 {
        let (ds, grid, psi, beta) = random_instance(30, 2, 2, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (bn, bt) in [(30, 16), (12, 7)] {
            let batch = sample_batch(&mut rng, ds.len(), grid.len(), bn, bt).unwrap();
            let eval = objective_gradients(&psi, &beta, &ds, &grid, &batch, 0.1, None).unwrap();
            let (gp, gb) = batch_fd(&ds, &grid, &psi, &beta, &batch, 0.1);
            let e_psi = rel_err(eval.grad_psi.as_slice().unwrap(), &gp);
            let analytic_beta: Vec<f64> = eval.grad_beta.iter().copied().collect();
            let e_beta = rel_err(&analytic_beta, &gb);
            assert!(e_psi <= 1e-4, "psi rel err {e_psi} (seed {seed}, batch {bn}x{bt})");
            assert!(e_beta <= 1e-4, "beta rel err {e_beta} (seed {seed}, batch {bn}x{bt})");
        }
    }
}

#[test]
fn full_batch_loss_is_the_objective() {
    let (ds, grid, psi, beta) = random_instance(20, 1, 2, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = sample_batch(&mut rng, 20, 9, 20, 9).unwrap();
    let eval = objective_gradients(&psi, &beta, &ds, &grid, &batch, 0.05, None).unwrap();
    let exact = relaxed_dual_objective(&psi, &beta, &ds, &grid, 0.05, None).unwrap();
    assert!((eval.loss - exact).abs() < 1e-12 * exact.abs().max(1.0));
}

#[test]
fn small_eps_objective_stays_finite() {
    let (ds, grid, mut psi, beta) = random_instance(10, 1, 1, 4, 9);
    psi *= 100.0;
    let v = relaxed_dual_objective(&psi, &beta, &ds, &grid, 1e-3, None).unwrap();
    assert!(v.is_finite());
}

/// Chain rule through the embedding against central differences in θ.
#[test]
fn end_to_end_embedding_gradient() {
    let (ds, grid, psi, _) = random_instance(25, 2, 2, 3, 11);
    let mut spec = EmbeddingSpec::new(2, vec![4, 4], 3);
    spec.seed = 3;
    let mut emb = Embedding::init(spec).unwrap();
    emb.fit_standardization(ds.x().view());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let beta = Array2::from_shape_fn((grid.len(), 3), |_| rng.random_range(-0.5..0.5));
    let eps = 0.2;
    let levels = grid.levels().view();
    let loss_at = |e: &Embedding| {
        let (g, _) = embed_forward(e, ds.x().view()).unwrap();
        batch_objective(levels, ds.y().view(), g.view(), beta.view(), psi.view(), eps, ds.len(), false)
            .unwrap()
            .loss
    };
    let (g, cache) = embed_forward(&emb, ds.x().view()).unwrap();
    let eval = batch_objective(levels, ds.y().view(), g.view(), beta.view(), psi.view(), eps, ds.len(), true).unwrap();
    let (grads, _) = embed_backward(&emb, &cache, eval.grad_features.as_ref().unwrap().view()).unwrap();
    let analytic = grads.to_flat();
    let theta = emb.params.to_flat();
    assert!(theta.len() <= 200, "{} parameters", theta.len());
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(theta.len());
    for p in 0..theta.len() {
        let mut a = emb.clone();
        let mut b = emb.clone();
        let mut ta = theta.clone();
        let mut tb = theta.clone();
        ta[p] += h;
        tb[p] -= h;
        a.set_params_flat(&ta).unwrap();
        b.set_params_flat(&tb).unwrap();
        numeric.push((loss_at(&a) - loss_at(&b)) / (2.0 * h));
    }
    let err = rel_err(&analytic, &numeric);
    assert!(err <= 1e-3, "end-to-end rel err {err}");
}

#[test]
fn frozen_identity_embedding_reproduces_linear_fit() {
    let (ds, _) = gen_mvn(300, 2, 2, 1).unwrap();
    let grid = QuantileGrid::new(5, 2).unwrap();
    let cfg = SolverConfig {
        iterations: 60,
        batch_n: 100,
        batch_t: 10,
        learning_rate: 0.5,
        epsilon: 0.05,
        ..Default::default()
    };
    let lin = fit_linear_vqr(&ds, &grid, &cfg).unwrap();
    let ident = fit_dual(&ds, &grid, &cfg, Some(Embedding::identity(2))).unwrap();
    for (a, b) in lin.solution.psi.iter().zip(ident.solution.psi.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in lin.solution.beta.iter().zip(ident.solution.beta.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    let g = Arc::new(grid);
    let qa = evaluate_cvqf(&lin.solution, &[0.2, -0.1], &g, CvqfDecoder::Barycentric).unwrap();
    let qb = evaluate_cvqf(&ident.solution, &[0.2, -0.1], &g, CvqfDecoder::Barycentric).unwrap();
    assert!((qa.values() - qb.values()).iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn fits_are_deterministic() {
    let (ds, _) = gen_mvn(200, 1, 1, 5).unwrap();
    let grid = QuantileGrid::new(8, 1).unwrap();
    let cfg = SolverConfig {
        iterations: 50,
        batch_n: 50,
        batch_t: 4,
        seed: 7,
        ..Default::default()
    };
    let a = fit_linear_vqr(&ds, &grid, &cfg).unwrap();
    let b = fit_linear_vqr(&ds, &grid, &cfg).unwrap();
    assert_eq!(a.solution, b.solution);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn full_batch_descent_decreases_objective() {
    let (ds, grid, mut psi, mut beta) = random_instance(20, 1, 1, 6, 3);
    let eps = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = sample_batch(&mut rng, 20, 6, 20, 6).unwrap();
    let mut prev = relaxed_dual_objective(&psi, &beta, &ds, &grid, eps, None).unwrap();
    for _ in 0..50 {
        let ev = objective_gradients(&psi, &beta, &ds, &grid, &batch, eps, None).unwrap();
        // backtracking until the step decreases the objective
        let mut step = 1.0;
        loop {
            let p = &psi - &(&ev.grad_psi * step);
            let b = &beta - &(&ev.grad_beta * step);
            let v = relaxed_dual_objective(&p, &b, &ds, &grid, eps, None).unwrap();
            if v <= prev {
                psi = p;
                beta = b;
                prev = v;
                break;
            }
            step *= 0.5;
            assert!(step > 1e-12, "no descent step found");
        }
    }
}

#[test]
fn degenerate_sizes_fit() {
    let one = Dataset::new(Array2::from_elem((1, 1), 0.3), Array2::from_elem((1, 1), 2.0), 0, "one").unwrap();
    let grid = QuantileGrid::new(3, 1).unwrap();
    let cfg = SolverConfig {
        iterations: 5,
        ..Default::default()
    }
    .clamped_to(1, 3);
    let fit = fit_linear_vqr(&one, &grid, &cfg).unwrap();
    assert!(fit.solution.phi.iter().all(|v| v.is_finite()));
    let (ds, _) = gen_mvn(20, 1, 1, 0).unwrap();
    let g1 = QuantileGrid::new(1, 1).unwrap();
    let fit = fit_linear_vqr(&ds, &g1, &cfg.clamped_to(20, 1)).unwrap();
    assert_eq!(fit.solution.beta.nrows(), 1);
}

#[test]
fn phi_matches_direct_logsumexp() {
    let (ds, grid, psi, beta) = random_instance(15, 1, 2, 3, 8);
    let eps = 0.05;
    let phi = recover_phi(&psi, &beta, &ds, &grid, eps, None).unwrap();
    for i in 0..grid.len() {
        let u = grid.level(i);
        let s: Vec<f64> = (0..ds.len())
            .map(|j| {
                u.dot(&ds.y().row(j)) - beta.row(i).dot(&ds.x().row(j)) - psi[j]
            })
            .collect();
        let direct = solver::logsumexp_stable(&s, eps).unwrap() + eps * (grid.len() as f64).ln();
        assert!((phi[i] - direct).abs() < 1e-12, "row {i}");
    }
}

fn short_fit(seed: u64) -> (DualSolution, Arc<QuantileGrid>) {
    let (ds, _) = gen_mvn(200, 1, 2, seed).unwrap();
    let grid = Arc::new(QuantileGrid::new(4, 2).unwrap());
    let cfg = SolverConfig {
        iterations: 40,
        batch_n: 200,
        batch_t: 16,
        learning_rate: 0.2,
        epsilon: 0.05,
        ..Default::default()
    };
    (fit_linear_vqr(&ds, &grid, &cfg).unwrap().solution, grid)
}

#[test]
fn phi_normalisations_decode_identically() {
    let (sol, grid) = short_fit(1);
    let mut shifted = sol.clone();
    let c = sol.epsilon * (grid.len() as f64).ln();
    shifted.phi.mapv_inplace(|v| v - c);
    for x in [0.0, 0.7] {
        let a = evaluate_cvqf(&sol, &[x], &grid, CvqfDecoder::FiniteDifference).unwrap();
        let b = evaluate_cvqf(&shifted, &[x], &grid, CvqfDecoder::FiniteDifference).unwrap();
        assert!((a.values() - b.values()).iter().all(|v| v.abs() < 1e-10));
    }
}

#[test]
fn psi_gauge_leaves_decoding_unchanged() {
    let (ds, _) = gen_mvn(200, 1, 2, 1).unwrap();
    let (sol, grid) = short_fit(1);
    let c = 0.37;
    let psi = sol.psi.mapv(|v| v + c);
    let phi = recover_phi(&psi, &sol.beta, &ds, &grid, sol.epsilon, None).unwrap();
    for (a, b) in phi.iter().zip(sol.phi.iter()) {
        assert!((a - (b - c)).abs() < 1e-10);
    }
    let mut moved = sol.clone();
    moved.psi = psi;
    moved.phi = phi;
    for decoder in [CvqfDecoder::FiniteDifference, CvqfDecoder::Barycentric] {
        let a = evaluate_cvqf(&sol, &[0.4], &grid, decoder).unwrap();
        let b = evaluate_cvqf(&moved, &[0.4], &grid, decoder).unwrap();
        assert!((a.values() - b.values()).iter().all(|v| v.abs() < 1e-9));
    }
}

#[test]
fn beta_shift_with_compensating_psi_is_a_symmetry() {
    let (ds, grid, psi, beta) = random_instance(12, 2, 1, 5, 21);
    let shift = [0.3, -0.8];
    let beta2 = beta.mapv(|v| v) + &ndarray::arr1(&shift).insert_axis(ndarray::Axis(0));
    let psi2 = Array1::from_shape_fn(12, |j| psi[j] - ds.x().row(j).dot(&ndarray::arr1(&shift)));
    let a = relaxed_dual_objective(&psi, &beta, &ds, &grid, 0.1, None).unwrap();
    let b = relaxed_dual_objective(&psi2, &beta2, &ds, &grid, 0.1, None).unwrap();
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_is_midpoint_convex(seed in 0u64..1000, eps in 0.01f64..1.0) {
        let (ds, grid, p1, b1) = random_instance(10, 2, 2, 3, seed);
        let (_, _, p2, b2) = random_instance(10, 2, 2, 3, seed + 5000);
        let f = |p: &Array1<f64>, b: &Array2<f64>| relaxed_dual_objective(p, b, &ds, &grid, eps, None).unwrap();
        let pm = (&p1 + &p2) * 0.5;
        let bm = (&b1 + &b2) * 0.5;
        prop_assert!(f(&pm, &bm) <= 0.5 * (f(&p1, &b1) + f(&p2, &b2)) + 1e-9);
    }

    #[test]
    fn psi_constant_is_a_symmetry(seed in 0u64..1000, c in -2.0f64..2.0) {
        let (ds, grid, psi, beta) = random_instance(8, 1, 2, 2, seed);
        let a = relaxed_dual_objective(&psi, &beta, &ds, &grid, 0.1, None).unwrap();
        let b = relaxed_dual_objective(&psi.mapv(|v| v + c), &beta, &ds, &grid, 0.1, None).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn small_instance_gradients(seed in 0u64..1000, n in 1usize..12, t in 1usize..5, eps in 0.05f64..1.0) {
        let (ds, grid, psi, beta) = random_instance(n, 1, 1, t, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = sample_batch(&mut rng, n, t, n, t).unwrap();
        let eval = objective_gradients(&psi, &beta, &ds, &grid, &batch, eps, None).unwrap();
        let (gp, gb) = batch_fd(&ds, &grid, &psi, &beta, &batch, eps);
        prop_assert!(rel_err(eval.grad_psi.as_slice().unwrap(), &gp) <= 1e-4);
        let analytic: Vec<f64> = eval.grad_beta.iter().copied().collect();
        prop_assert!(rel_err(&analytic, &gb) <= 1e-4);
    }
}

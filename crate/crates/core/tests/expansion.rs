use largen_sigma::expansion::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeSet;

#[test]
fn forest_counts_match_known_sequence() {
    let known = [1usize, 1, 2, 7, 38, 291, 2932, 36961];
    for (n, &c) in known.iter().enumerate() {
        assert_eq!(enumerate_forests(n).unwrap().len(), c, "n = {n}");
    }
}

#[test]
fn spanning_trees_follow_cayley() {
    for n in 2..=6usize {
        let trees = enumerate_forests(n).unwrap().into_iter().filter(|f| f.is_spanning_tree()).count();
        assert_eq!(trees, n.pow(n as u32 - 2));
    }
    assert!(enumerate_forests(MAX_FOREST_LABELS + 1).is_err());
}

#[test]
fn forests_are_distinct_and_acyclic() {
    let all = enumerate_forests(5).unwrap();
    let set: BTreeSet<_> = all.iter().cloned().collect();
    assert_eq!(set.len(), all.len());
    for f in &all {
        assert!(Forest::new(f.n, f.edges.clone()).is_ok());
    }
    assert!(Forest::new(3, vec![(0, 1), (1, 2), (0, 2)]).is_err());
}

#[test]
fn effective_parameter_takes_path_minimum() {
    let f = Forest::new(5, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
    let h = [0.9, 0.3, 0.6];
    assert_eq!(effective_parameter(&f, &h, 0, 3), 0.3);
    assert_eq!(effective_parameter(&f, &h, 2, 3), 0.6);
    assert_eq!(effective_parameter(&f, &h, 0, 4), 0.0);
}

#[test]
fn ordered_cube_integration_is_exact_for_min() {
    // ∫ min(h1, h2, h3) over the unit cube = 1/4.
    let v = integrate_cube_by_orderings(3, 4, |h| h.iter().copied().fold(1.0, f64::min));
    assert!((v - 0.25).abs() < 1e-14);
    let v = integrate_cube_by_orderings(2, 10, |h| (h[0] * h[1]).exp());
    let expect = 1.317_902_151_454_403_9;
    assert!((v - expect).abs() < 1e-12, "{v}");
}

fn coeffs(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n * (n - 1) / 2).map(|_| rng.gen::<f64>() * 1.6 - 0.8).collect()
}

#[test]
fn forest_formula_on_closed_form_functions() {
    for n in 2..=4usize {
        let fns = [
            TestFunction::Exponential { n, coeffs: coeffs(n, n as u64) },
            TestFunction::ProductLinear { n, coeffs: coeffs(n, 10 + n as u64) },
            TestFunction::PowerOfSum { n, k: 2 },
            TestFunction::PowerOfSum { n, k: 5 },
        ];
        for f in &fns {
            let c = verify_forest_formula(f, 12).unwrap();
            assert!(c.residual < 1e-8, "{f:?}: {c:?}");
        }
    }
}

fn toy_kernel(blocks: usize, per_block: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let n = blocks * per_block;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
    let k = &b * b.transpose() * 0.3;
    (k, (0..n).map(|i| i / per_block).collect())
}

#[test]
fn forest_formula_on_gaussian_toy() {
    for blocks in [2usize, 3, 4] {
        let (k, bo) = toy_kernel(blocks, 2, blocks as u64);
        let toy = GaussianToy::new(k, bo).unwrap();
        let c = verify_forest_formula(&toy, 10).unwrap();
        assert!(c.residual < 1e-8, "{blocks}: {c:?}");
        let h = vec![1.0; blocks * (blocks - 1) / 2];
        assert!((c.lhs - toy.value(&h).unwrap()).abs() < 1e-14);
    }
}

#[test]
fn gaussian_toy_partials_match_finite_differences() {
    let (k, bo) = toy_kernel(3, 2, 7);
    let toy = GaussianToy::new(k, bo).unwrap();
    let x = [0.4, 0.7, 0.2];
    let d = 1e-5;
    let shift = |i: usize, s: f64| {
        let mut y = x;
        y[i] += s;
        y
    };
    let fd = (toy.value(&shift(1, d)).unwrap() - toy.value(&shift(1, -d)).unwrap()) / (2.0 * d);
    assert!((toy.mixed_partial(&x, &[1]) - fd).abs() < 1e-8);
    let fd2 = |i: usize, j: usize| {
        let f = |a: f64, b: f64| {
            let mut y = x;
            y[i] += a;
            y[j] += b;
            toy.value(&y).unwrap()
        };
        (f(d, d) - f(d, -d) - f(-d, d) + f(-d, -d)) / (4.0 * d * d)
    };
    assert!((toy.mixed_partial(&x, &[0, 2]) - fd2(0, 2)).abs() < 1e-5);
}

#[test]
fn first_forest_l_shape_survivors_are_spanning_trees() {
    let squares = [(0, 0), (1, 0), (0, 1)];
    let c = verify_first_forest_formula(&squares, &[0, 0, 0], 8).unwrap();
    assert!((c.total - 1.0).abs() < 1e-12);
    assert_eq!(c.surviving.len(), 3);
    assert!(c.surviving.iter().all(|f| f.is_spanning_tree()));
    assert!(c.clusters_match);
}

#[test]
fn first_forest_respects_components() {
    // Two touching components and a straight chain.
    let squares = [(0, 0), (1, 0), (2, 0), (3, 0), (3, 1)];
    let comp = [0, 0, 0, 1, 1];
    let c = verify_first_forest_formula(&squares, &comp, 8).unwrap();
    assert!((c.total - 1.0).abs() < 1e-12, "{c:?}");
    assert!(c.clusters_match);
    // Chain 0-1-2 has one spanning tree, pair 3-4 one: one surviving forest.
    assert_eq!(c.surviving.len(), 1);
    assert!(verify_first_forest_formula(&squares, &comp[..3], 8).is_err());
}

#[test]
fn positivity_decomposition_reconstructs_interpolation() {
    let (k, bo) = toy_kernel(4, 2, 3);
    let f = Forest::new(4, vec![(0, 1), (1, 2), (1, 3)]).unwrap();
    let h = [0.7, 0.2, 0.45];
    let terms = positivity_decomposition(&k, &bo, &f, &h).unwrap();
    let mut sum = DMatrix::zeros(k.nrows(), k.ncols());
    for (w, t) in &terms {
        assert!(*w >= 0.0);
        let min = nalgebra::SymmetricEigen::new(t.clone()).eigenvalues.min();
        assert!(min >= -1e-12);
        sum += t * *w;
    }
    let direct = interpolate_inf_rule(&k, &bo, &f, &h);
    assert!((sum - direct).amax() < 1e-10);
    assert!(positivity_decomposition(&k, &bo, &f, &[0.5]).is_err());
    assert!(positivity_decomposition(&k, &bo, &f, &[0.5, 1.5, 0.1]).is_err());
}

#[test]
fn simplex_integral_matches_volume_and_moments() {
    // Volume 1/k!, and ∫_0^1 (1 − t)^3 = 1/4.
    assert!((simplex_integral(&[0, 0, 0]) - 1.0 / 6.0).abs() < 1e-15);
    assert!((simplex_integral(&[3]) - 0.25).abs() < 1e-15);
    let quad = integrate_cube_by_orderings(2, 8, |h| {
        let (lo, hi) = (h[0].min(h[1]), h[0].max(h[1]));
        (1.0 - lo).powi(2) * (1.0 - hi)
    });
    assert!((2.0 * simplex_integral(&[2, 1]) - quad).abs() < 1e-14);
}

#[test]
fn mayer_complete_graph_values() {
    let mut fact = 1.0;
    for q in 1..=6usize {
        if q > 1 {
            fact *= (q - 1) as f64;
        }
        let g = OverlapGraph::complete(q).unwrap();
        let expect = if q % 2 == 1 { fact } else { -fact };
        assert_eq!(mayer_connectivity(&g), expect, "q = {q}");
        let t = mayer_tree_formula(&g).unwrap();
        assert!((t - expect).abs() < 1e-6 * expect.abs().max(1.0), "q = {q}: {t}");
    }
}

#[test]
fn mayer_disconnected_overlaps_vanish() {
    let g = OverlapGraph::new(4, [(0, 1), (2, 3)]).unwrap();
    assert_eq!(mayer_connectivity(&g), 0.0);
    assert!(mayer_tree_formula(&g).unwrap().abs() < 1e-12);
    assert!(OverlapGraph::complete(MAX_MAYER_POLYMERS + 1).is_err());
    let big = OverlapGraph::complete(MAX_TREE_FORMULA_POLYMERS + 1).unwrap();
    assert!(mayer_tree_formula(&big).is_err());
}

#[test]
fn overlap_graph_from_square_sets() {
    let p: Vec<BTreeSet<(i64, i64)>> = vec![
        [(0, 0), (1, 0)].into_iter().collect(),
        [(1, 0), (2, 0)].into_iter().collect(),
        [(5, 5)].into_iter().collect(),
    ];
    let g = OverlapGraph::from_polymers(&p).unwrap();
    assert_eq!(g.edges, BTreeSet::from([(0, 1)]));
}

#[test]
fn polyomino_counts_containing_a_square() {
    let levels = polyominoes_containing_origin(6).unwrap();
    let counts: Vec<usize> = levels.iter().map(|l| l.len()).collect();
    assert_eq!(counts, vec![1, 4, 18, 76, 315, 1296]);
    assert!(polyominoes_containing_origin(MAX_POLYOMINO_SIZE + 1).is_err());
}

#[test]
fn activity_sum_limits() {
    let s = polymer_activity_sum(0.0, 4, true).unwrap();
    assert_eq!(s.total(), 0.0);
    let rho = 0.01;
    let s = polymer_activity_sum(rho, 2, false).unwrap();
    let x = rho * std::f64::consts::E;
    assert!((s.exhaustive - 4.0 * x * x).abs() < 1e-16);
    assert!(s.tail_bound > 0.0);
    assert!(polymer_activity_sum(-1.0, 2, true).is_err());
}

#[test]
fn activity_threshold_satisfies_bound() {
    let t = activity_threshold(6, true).unwrap();
    assert!(t.rho > 0.0 && t.total() <= 0.5);
    let above = polymer_activity_sum(t.rho * (1.0 + 1e-9), 6, true).unwrap();
    assert!(above.total() > 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mayer_routes_agree(q in 2usize..6, mask in 0u32..(1 << 10)) {
        let edges: Vec<(usize, usize)> = pairs(q).into_iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, e)| e).collect();
        let g = OverlapGraph::new(q, edges).unwrap();
        let t = mayer_tree_formula(&g).unwrap();
        prop_assert!((t - mayer_connectivity(&g)).abs() < 1e-6);
    }

    #[test]
    fn pair_index_is_bijective(n in 2usize..9) {
        let all = pairs(n);
        for (k, &(i, j)) in all.iter().enumerate() {
            prop_assert_eq!(pair_index(n, i, j), k);
            prop_assert_eq!(pair_index(n, j, i), k);
        }
    }

    #[test]
    fn positivity_terms_sum_to_inf_rule(h0 in 0.0f64..1.0, h1 in 0.0f64..1.0, h2 in 0.0f64..1.0, seed in 0u64..100) {
        let (k, bo) = toy_kernel(4, 2, seed);
        let f = Forest::new(4, vec![(0, 1), (2, 3), (1, 2)]).unwrap();
        let h = [h0, h1, h2];
        let terms = positivity_decomposition(&k, &bo, &f, &h).unwrap();
        let sum = terms.iter().fold(DMatrix::zeros(8, 8), |acc, (w, t)| acc + t * *w);
        prop_assert!((sum - interpolate_inf_rule(&k, &bo, &f, &h)).amax() < 1e-10);
    }
}

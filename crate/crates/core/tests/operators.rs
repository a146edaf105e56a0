use largen_sigma::model::{params_for_mass, ModelParams, Regulator};
use largen_sigma::kernels::{LatticeKernel, RadialKernelTable};
use largen_sigma::operators::*;
use largen_sigma::regions::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeSet;

fn params(big_n: u64) -> ModelParams {
    params_for_mass(0.5, 1.0, big_n, Regulator::Exponential).unwrap()
}

fn random_field(geom: LatticeGeometry, amp: f64, seed: u64) -> FieldConfig {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = geom.layout().num_sites();
    FieldConfig::new(geom, (0..n).map(|_| amp * (rng.gen::<f64>() - 0.5)).collect()).unwrap()
}

fn setup(seed: u64, amp: f64) -> (ModelParams, FieldConfig, DiscretizedOperator) {
    let p = params(100);
    let g = LatticeGeometry::new(2, 2).unwrap();
    let f = random_field(g, amp, seed);
    let table = propagator_table(p.m, &g.layout()).unwrap();
    let a = build_a(&f, &p, &table).unwrap();
    (p, f, a)
}

fn complex_random(n: usize, scale: f64, seed: u64) -> DiscretizedOperator {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| {
        Complex64::new(scale * (rng.gen::<f64>() - 0.5), scale * (rng.gen::<f64>() - 0.5))
    });
    DiscretizedOperator::new(m, 1.0)
}

#[test]
fn kernel_entries_follow_convention() {
    let (p, f, a) = setup(1, 4.0);
    let layout = f.geometry.layout();
    let table = propagator_table(p.m, &layout).unwrap();
    let (i, j) = (3, 11);
    let (xi, xj) = (layout.site_lattice(i), layout.site_lattice(j));
    let expect = table.at(xi.0 - xj.0, xi.1 - xj.1) * p.g * f.tau[j];
    assert!((a.kernel(i, j).re - expect).abs() < 1e-15);
}

#[test]
fn grid_step_mismatch_is_rejected() {
    let p = params(100);
    let f = FieldConfig::zero(LatticeGeometry::new(1, 2).unwrap());
    let coarse = RadialKernelTable::propagator(p.m, 1.0, 4).unwrap();
    assert!(build_a(&f, &p, &coarse).is_err());
}

#[test]
fn power_norm_matches_svd() {
    for seed in 0..5 {
        let (_, _, a) = setup(seed, 6.0);
        let pw = operator_norm(&a).unwrap();
        let svd = operator_norm_dense(&a);
        assert!((pw - svd).abs() <= 1e-8 * svd, "{pw} vs {svd}");
        let c = complex_random(20, 1.0, seed);
        let pw = operator_norm(&c).unwrap();
        let svd = operator_norm_dense(&c);
        assert!((pw - svd).abs() <= 1e-8 * svd, "{pw} vs {svd}");
    }
}

#[test]
fn regularized_determinants_match_trace_formula() {
    for seed in 0..4 {
        let k = complex_random(24, 0.3, 10 + seed);
        let ln1 = ln_det_lu(&k.matrix).unwrap();
        let tr1 = k.trace();
        let tr2 = k.compose(&k).trace();
        let d1 = ln1.exp();
        let d2 = (ln1 - tr1).exp();
        let d3 = (ln1 - tr1 + 0.5 * tr2).exp();
        for (order, expect) in [(1, d1), (2, d2), (3, d3)] {
            let got = det_reg(&k, order).unwrap();
            assert!((got - expect).norm() <= 1e-10 * expect.norm(), "order {order}: {got} vs {expect}");
        }
    }
}

#[test]
fn singular_determinant_is_reported() {
    let k = DiscretizedOperator::from_real(&DMatrix::from_diagonal_element(3, 3, -1.0), 1.0);
    assert!(matches!(det_reg(&k, 2), Err(largen_sigma::Error::Singular(_))));
    assert!(det_reg(&k, 0).is_err());
}

#[test]
fn spectrum_of_a_is_real() {
    for seed in 0..4 {
        let (_, _, a) = setup(seed, 8.0);
        assert!(spectrum_imaginary_defect(&a).unwrap() < 1e-8);
    }
}

fn split_blocks(a: DiscretizedOperator, geom: &LatticeGeometry, large: &[Square]) -> ABlocks {
    let set: BTreeSet<Square> = large.iter().copied().collect();
    ABlocks::split(a, &geom.layout(), &set)
}

#[test]
fn blocks_recombine() {
    let (_, f, a) = setup(3, 5.0);
    let b = split_blocks(a.clone(), &f.geometry, &[(0, 0), (-1, 1)]);
    let sum = b.a_s.add(&b.a_double_prime());
    assert!((&sum.matrix - &a.matrix).iter().all(|z| z.norm() < 1e-15));
    assert!(b.a_s.compose(&b.a_l).matrix.iter().all(|z| z.norm() < 1e-15));
}

#[test]
fn determinant_split_identities() {
    for seed in 0..4 {
        let (p, f, a) = setup(seed, 6.0);
        let blocks = split_blocks(a, &f.geometry, &[(0, 0), (1, -2)]);
        let mass = f.mass_of(f.masses.keys());
        let r = det_split_identity(&blocks, &p, mass).unwrap();
        assert!(r.residual() < 1e-10, "{r:?}");
    }
}

#[test]
fn d_operator_modulus_identity() {
    let (p, f, a) = setup(7, 6.0);
    let blocks = split_blocks(a, &f.geometry, &[(0, 0)]);
    let r = d_decomposition(&blocks, &p, f.mass_of(f.masses.keys())).unwrap();
    assert!(r.modulus_identity_residual < 1e-10, "{r:?}");
    assert!(r.d_minus_norm >= 0.0 && r.tr_d_minus_sq <= r.d_minus_norm.powi(2) * 64.0);
}

#[test]
fn trace_projection_on_psd_operator() {
    let (_, f, a) = setup(2, 6.0);
    let psd = a.adjoint().compose(&a);
    let layout = f.geometry.layout();
    let mask = layout.mask(|s| s.0 >= 0);
    for r in 1..5 {
        let (lhs, rhs) = trace_projection_inequality(&psd, &mask, r).unwrap();
        if r == 1 {
            assert!((lhs - rhs).abs() <= 1e-12 * rhs);
        }
        assert!(lhs <= rhs * (1.0 + 1e-12), "r={r}: {lhs} > {rhs}");
    }
}

#[test]
fn cubic_trace_bound_holds() {
    for seed in 0..4 {
        let (_, f, a) = setup(seed, 6.0);
        let b = split_blocks(a, &f.geometry, &[(1, 1)]);
        let (lhs, rhs) = cubic_trace_bound(&b.a_s).unwrap();
        assert!(lhs <= rhs * (1.0 + 1e-12));
    }
}

#[test]
fn link_norm_decays_with_distance() {
    let p = params(100);
    let g = LatticeGeometry::new(4, 2).unwrap();
    let layout = g.layout();
    let f = FieldConfig::new(g, vec![1.0; layout.num_sites()]).unwrap();
    let table = propagator_table(p.m, &layout).unwrap();
    let a = build_a(&f, &p, &table).unwrap();
    let near = derived_link_norm(&a, &layout, ((-4, 0), (-2, 0))).unwrap();
    let far = derived_link_norm(&a, &layout, ((-4, 0), (3, 0))).unwrap();
    assert!(far < near * (-p.m * 4.0).exp());
    assert!(derived_link_norm(&a, &layout, ((0, 0), (0, 0))).is_err());
}

#[test]
fn link_sum_of_single_link_is_scaled_norm() {
    let (_, f, a) = setup(4, 6.0);
    let layout = f.geometry.layout();
    let link = ((-2, -2), (1, 1));
    let base = derived_link_norm(&a, &layout, link).unwrap();
    let alpha = Complex64::from_polar(3.0, 0.7);
    let s = link_sum_norm(&a, &layout, &[link], &[alpha]).unwrap();
    assert!((s - 3.0 * base).abs() < 1e-9 * s);
    assert!(link_sum_norm(&a, &layout, &[link], &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn norm_is_homogeneous(seed in 0u64..1000, c in 0.1f64..10.0, phase in 0.0f64..6.28) {
        let k = complex_random(12, 1.0, seed);
        let z = Complex64::from_polar(c, phase);
        let lhs = operator_norm(&k.scale(z)).unwrap();
        let rhs = c * operator_norm(&k).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs);
    }

    #[test]
    fn det1_is_multiplicative_on_block_diagonal(seed in 0u64..1000) {
        let a = complex_random(6, 0.5, seed);
        let b = complex_random(5, 0.5, seed + 7);
        let mut m = DMatrix::zeros(11, 11);
        m.view_mut((0, 0), (6, 6)).copy_from(&a.matrix);
        m.view_mut((6, 6), (5, 5)).copy_from(&b.matrix);
        let joint = ln_det_reg(&DiscretizedOperator::new(m, 1.0), 2).unwrap();
        let sep = ln_det_reg(&a, 2).unwrap() + ln_det_reg(&b, 2).unwrap();
        prop_assert!(((joint - sep).exp() - 1.0).norm() < 1e-10);
    }

    #[test]
    fn norm_dominates_trace_ratio(seed in 0u64..1000) {
        let k = complex_random(10, 1.0, seed);
        let norm = operator_norm(&k).unwrap();
        prop_assert!(k.hilbert_schmidt_sq() <= 10.0 * norm * norm * (1.0 + 1e-10));
        prop_assert!(k.hilbert_schmidt_sq() >= norm * norm * (1.0 - 1e-10));
    }
}

#[test]
fn lu_route_for_regularized_determinants_matches_eigenvalues() {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    for order in 1..=4u32 {
        let k = DiscretizedOperator::new(
            CMatrix::from_fn(12, 12, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.3),
            1.0,
        );
        let eig = ln_det_reg(&k, order).unwrap();
        let lu = ln_det_reg_lu(&k, order).unwrap();
        assert!((eig.re - lu.re).abs() < 1e-12, "order {order}: {eig} vs {lu}");
        let turns = (eig.im - lu.im) / (2.0 * std::f64::consts::PI);
        assert!((turns - turns.round()).abs() < 1e-12);
    }
    assert!(ln_det_reg_lu(&DiscretizedOperator::new(CMatrix::zeros(2, 2), 1.0), 0).is_err());
}

use largen_sigma::covariance::*;
use largen_sigma::kernels::CutoffSpec;
use largen_sigma::model::{derive_params, params_for_mass, ModelParams, Regulator};
use largen_sigma::regions::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};

fn params() -> ModelParams {
    params_for_mass(0.5, 1.0, 1_000_000, Regulator::Exponential).unwrap()
}

fn context(n: usize, padding: usize) -> (LatticeGeometry, CovarianceContext) {
    let g = LatticeGeometry::new(n, 2).unwrap();
    let ctx = CovarianceContext::new(
        &params(),
        PaddedDomain::new(&g, padding).unwrap(),
        &CutoffSpec::default(),
        PolarizationMode::Full,
    )
    .unwrap();
    (g, ctx)
}

fn regions(g: &LatticeGeometry, large: &[Square], m: f64) -> RegionSet {
    let mut labels: BTreeMap<Square, SquareLabel> = g.squares().into_iter().map(|s| (s, SquareLabel::Small)).collect();
    for s in large {
        labels.insert(*s, SquareLabel::Large(1));
    }
    build_regions(&LSAssignment::from_labels(labels), g, m).unwrap()
}

fn eigs(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = nalgebra::SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

#[test]
fn trivial_mode_gives_identity() {
    let g = LatticeGeometry::new(1, 2).unwrap();
    let ctx = CovarianceContext::new(
        &params(),
        PaddedDomain::new(&g, 1).unwrap(),
        &CutoffSpec::degenerate(),
        PolarizationMode::Off,
    )
    .unwrap();
    let n = ctx.dim();
    assert!((&ctx.c0 - DMatrix::<f64>::identity(n, n)).amax() < 1e-14);
}

#[test]
fn c0_spectrum_in_unit_interval() {
    let (_, ctx) = context(2, 1);
    let ev = eigs(&ctx.c0);
    assert!(ev[0] > 0.0 && *ev.last().unwrap() <= 1.0 + 1e-12);
    assert!((&ctx.c0 - ctx.c0.transpose()).amax() < 1e-14);
}

#[test]
fn c0_decays_at_twice_the_mass() {
    let (_, ctx) = context(3, 1);
    let p = params();
    let om = &ctx.domain.omega;
    let w = om.cell_weight();
    let idx: BTreeMap<(i64, i64), usize> = (0..om.num_sites()).map(|k| (om.site_lattice(k), k)).collect();
    let origin = idx[&(-6, 0)];
    let mut ratios = Vec::new();
    for d in 2..12 {
        let r = 0.5 * d as f64;
        let c = ctx.c0[(origin, idx[&(-6 + d, 0)])] / w;
        ratios.push(c.abs() * (2.0 * p.m * r).exp());
    }
    let first = ratios[0];
    assert!(ratios.iter().all(|&x| x <= 3.0 * first), "{ratios:?}");
}

#[test]
fn empty_gamma_gives_c0_and_unit_z() {
    let (g, ctx) = context(2, 1);
    let r = regions(&g, &[], 1.0);
    let set = ctx.build_cgamma(&r).unwrap();
    assert_eq!(set.neumann_terms, 0);
    assert!((&set.cgamma.matrix - &set.c0.matrix).iter().all(|z| z.norm() < 1e-12));
    let z = ctx.compute_zgamma(&set, &r).unwrap();
    assert!(z.ln_z.abs() < 1e-10 && z.ln_z_local == 0.0);
}

#[test]
fn direct_and_neumann_routes_agree() {
    let (g, ctx) = context(2, 2);
    let r = regions(&g, &[(0, 0), (-1, 0)], 1.5);
    let set = ctx.build_cgamma(&r).unwrap();
    assert!(set.neumann_residual < 1e-8, "{}", set.neumann_residual);
    assert!(set.neumann_terms > 1);
    assert!(eigs(&set.cgamma.matrix.map(|z| z.re))[0] > 0.0);
}

#[test]
fn separated_components_factorize() {
    let (g, ctx) = context(3, 1);
    let r = regions(&g, &[(-3, -3), (2, 2)], 1.0);
    assert_eq!(r.components.len(), 2);
    let set = ctx.build_cgamma(&r).unwrap();
    assert!(set.factorization_residual < 1e-10, "{}", set.factorization_residual);
    let z = ctx.compute_zgamma(&set, &r).unwrap();
    assert!(z.factorization_residual < 1e-8, "{z:?}");
    assert!(z.ln_z >= 0.0);
}

#[test]
fn z_routes_agree_and_scale_with_volume() {
    let (g, ctx) = context(2, 2);
    let r = regions(&g, &[(0, 0)], 1.5);
    let set = ctx.build_cgamma(&r).unwrap();
    let z = ctx.compute_zgamma(&set, &r).unwrap();
    assert!((z.ln_z - z.ln_z_local).abs() < 1e-8 * z.ln_z.max(1.0));
    // −½ ln(1 − (1−ε)k) ≤ −½ ln ε per site.
    let sites = set.gamma_mask.iter().filter(|&&b| b).count() as f64;
    assert!(z.ln_z <= -0.5 * params().epsilon.ln() * sites);
    assert!(z.volume_constant > 0.0);
}

#[test]
fn delta_c_identities_and_signs() {
    let (g, ctx) = context(2, 2);
    let r = regions(&g, &[(0, 0), (1, 1)], 1.5);
    let dc = ctx.build_delta_c(&r).unwrap();
    assert!(dc.eq_residual < 1e-8, "{}", dc.eq_residual);
    assert!(dc.dc1_max_eig <= 1e-10);
    assert!(dc.dc3_max_eig <= 1.0 + ctx.pi0);
    let s_norm = eigs(&ctx.one_plus_pi).last().copied().unwrap();
    assert!(dc.dc4_norm <= params().epsilon * s_norm * (1.0 + 1e-10));
    assert_eq!(ctx.delta_c_total(&r).unwrap(), dc.total());
}

#[test]
fn delta_c_without_large_field() {
    let (g, ctx) = context(1, 1);
    let r = regions(&g, &[], 1.0);
    let dc = ctx.build_delta_c(&r).unwrap();
    assert!(dc.terms[3].amax() == 0.0 && dc.terms[0].amax() == 0.0 && dc.terms[1].amax() == 0.0);
    assert!(dc.eq_residual < 1e-10);
}

#[test]
fn gamma_outside_padding_is_rejected() {
    let (g, ctx) = context(2, 0);
    let r = regions(&g, &[(-2, -2)], 2.0);
    assert!(ctx.build_cgamma(&r).is_err());
}

#[test]
fn identity_sampler_variance() {
    let n = 3;
    let count = 20_000;
    let s = sample_gaussian(&DMatrix::identity(n, n), 11, count).unwrap();
    for k in 0..n {
        let var: f64 = s.iter().map(|v| v[k] * v[k]).sum::<f64>() / count as f64;
        let se = (2.0 / count as f64).sqrt();
        assert!((var - 1.0).abs() < 5.0 * se, "{var}");
    }
}

#[test]
fn sampler_reproduces_c0_entries() {
    let (_, ctx) = context(1, 1);
    let c = ctx.domain.restrict_to_lambda(&ctx.c0) / ctx.cell_weight();
    let count = 20_000;
    let s = sample_gaussian(&c, 5, count).unwrap();
    for &(a, b) in &[(0usize, 0usize), (0, 1), (2, 9)] {
        let prod: Vec<f64> = s.iter().map(|v| v[a] * v[b]).collect();
        let mean = prod.iter().sum::<f64>() / count as f64;
        let var = prod.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count as f64 - 1.0);
        let se = (var / count as f64).sqrt();
        assert!((mean - c[(a, b)]).abs() < 5.0 * se, "({a},{b}): {mean} vs {}", c[(a, b)]);
    }
}

#[test]
fn sampler_is_deterministic() {
    let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    assert_eq!(sample_gaussian(&c, 9, 50).unwrap(), sample_gaussian(&c, 9, 50).unwrap());
    assert!(sample_gaussian(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 0, 1).is_err());
}

#[test]
fn neumann_doubling_matches_inverse() {
    let x = DMatrix::from_row_slice(3, 3, &[0.3, 0.1, 0.0, 0.2, 0.4, 0.1, 0.0, 0.1, 0.5]);
    let (s, _) = neumann_sum(&x, 1e-14).unwrap();
    let inv = (DMatrix::<f64>::identity(3, 3) - &x).try_inverse().unwrap();
    assert!((s - inv).amax() < 1e-12);
}

#[test]
fn single_square_normalization() {
    for n in [10_000u64, 1_000_000] {
        let p = derive_params(1.0, 1.0, n, Regulator::Exponential).unwrap();
        let z = single_square_z(&p, &CutoffSpec::default(), 2, 2, 4000, 3).unwrap();
        assert!(z.deviation() <= z.bound, "{z:?}");
    }
}

#[test]
fn prop8_terms_are_finite_for_mixed_configuration() {
    let p = derive_params(1.0, 1.0, 1_000_000, Regulator::Exponential).unwrap().with_corridor(1.0).unwrap();
    let g = LatticeGeometry::new(2, 2).unwrap();
    let ctx = CovarianceContext::new(&p, PaddedDomain::new(&g, 2).unwrap(), &CutoffSpec::default(), PolarizationMode::Full)
        .unwrap();
    let c = ctx.domain.restrict_to_lambda(&ctx.c0);
    let mut f = sample_fields(&c, ctx.cell_weight(), g, 2, 1).unwrap().remove(0);
    let layout = g.layout();
    let target = 1.5 * p.n_f64().powf(1.0 / 6.0) / p.lambda_k();
    let sites = layout.sites_of((0, 0)).unwrap();
    let mass = f.mass_of([(0, 0)].iter());
    let scale = (target / mass).sqrt();
    let mut tau = f.tau.clone();
    for k in sites {
        tau[k] *= scale;
    }
    f = FieldConfig::new(g, tau).unwrap();
    let a = classify_squares(&f, &p);
    assert_eq!(a.labels[&(0, 0)], SquareLabel::Large(1));
    let r = build_regions(&a, &g, p.corridor_m).unwrap();
    let f_w = largen_sigma::operators::propagator_matrix(&p, &g).unwrap();
    let rep = prop8_assembly(&ctx, &f, &a, &r, &f_w).unwrap();
    assert!(rep.ln_lhs().is_finite() && rep.fitted_constant.is_finite());
    assert!(rep.ln_z >= 0.0 && rep.ln_theta <= 0.0);
    assert!((rep.mass_l - target).abs() < 1e-9 * target);
    let large: BTreeSet<Square> = r.lambda_l.clone();
    assert_eq!(large.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cgamma_dominates_c0(i in -2i64..2, j in -2i64..2, m in 0.5f64..2.0) {
        let (g, ctx) = context(2, 2);
        let r = regions(&g, &[(i, j)], m);
        let set = ctx.build_cgamma(&r).unwrap();
        let diff = set.cgamma_correction.matrix.map(|z| z.re);
        prop_assert!(eigs(&diff)[0] >= -1e-10);
        prop_assert!(set.neumann_residual < 1e-8);
        let z = ctx.compute_zgamma(&set, &r).unwrap();
        prop_assert!(z.ln_z >= -1e-12);
    }
}

use largen_sigma::kernels::{radial_propagator, CutoffSpec, LatticeKernel};
use largen_sigma::model::{derive_params, ModelParams, Regulator};
use largen_sigma::operators::{build_a_from_matrix, ln_det_reg, propagator_matrix, propagator_table};
use largen_sigma::regions::{FieldConfig, LatticeGeometry};
use largen_sigma::twopoint::*;
use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn params(n: u64) -> ModelParams {
    derive_params(1.0, 1.0, n, Regulator::Exponential).unwrap()
}

fn geometry() -> LatticeGeometry {
    LatticeGeometry::new(1, 3).unwrap()
}

fn random_field(g: LatticeGeometry, amp: f64, seed: u64) -> FieldConfig {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = g.layout().num_sites();
    FieldConfig::new(g, (0..n).map(|_| amp * (rng.gen::<f64>() - 0.5)).collect()).unwrap()
}

#[test]
fn zero_field_gives_free_resolvent() {
    let p = params(10_000);
    let g = geometry();
    let layout = g.layout();
    let f = FieldConfig::zero(g);
    let table = propagator_table(p.m, &layout).unwrap();
    for &(x, y) in &[(0usize, 0usize), (2, 30), (17, 5)] {
        let e = resolvent_kernel_entry(&f, &p, &g, x, y).unwrap();
        let (a, b) = (layout.site_lattice(x), layout.site_lattice(y));
        assert!((e - Complex64::new(table.at(a.0 - b.0, a.1 - b.1), 0.0)).norm() < 1e-13);
        let r = resolvent_kernel_entry(&f, &p, &g, y, x).unwrap();
        assert_eq!(e, r);
    }
    assert!(resolvent_kernel_entry(&f, &p, &g, 0, 10_000).is_err());
}

#[test]
fn constant_shift_matches_eigen_oracle() {
    let p = params(100);
    let g = geometry();
    let w = g.layout().cell_weight();
    let t = 3.0;
    let n = g.layout().num_sites();
    let f = FieldConfig::new(g, vec![t; n]).unwrap();
    let f_w = propagator_matrix(&p, &g).unwrap();
    let eig = SymmetricEigen::new(f_w.clone());
    let shift = Complex64::new(0.0, p.g * t);
    for &(x, y) in &[(0usize, 0usize), (4, 21), (35, 1)] {
        let mut oracle = Complex64::new(0.0, 0.0);
        for k in 0..n {
            let l = eig.eigenvalues[k];
            oracle += eig.eigenvectors[(x, k)] * l / (1.0 + shift * l) * eig.eigenvectors[(y, k)];
        }
        oracle /= w;
        let e = resolvent_kernel_entry(&f, &p, &g, x, y).unwrap();
        assert!((e - oracle).norm() < 1e-10 * oracle.norm(), "{e} vs {oracle}");
    }
}

#[test]
fn row_and_column_solves_agree() {
    let p = params(100);
    let g = geometry();
    let f = random_field(g, 40.0, 3);
    let f_w = propagator_matrix(&p, &g).unwrap();
    let sys = ResolventSystem::new(&f_w, &f.tau, p.g, g.layout().cell_weight()).unwrap();
    let row = sys.row(&f_w, 7).unwrap();
    for y in [0usize, 7, 20, 35] {
        let col = sys.column(&f_w, y).unwrap();
        assert!((row[y] - col[7]).norm() < 1e-12 * col[7].norm());
    }
}

#[test]
fn zero_field_weight_is_one() {
    let p = params(10_000);
    let w = sample_weight(&FieldConfig::zero(geometry()), &p, &geometry()).unwrap();
    assert_eq!(w.value(), Complex64::new(1.0, 0.0));
}

#[test]
fn lu_determinant_matches_eigenvalue_oracle() {
    let p = params(100);
    let g = geometry();
    let f_w = propagator_matrix(&p, &g).unwrap();
    let w = g.layout().cell_weight();
    for (seed, amp) in [(1u64, 10.0), (2, 60.0), (3, 300.0)] {
        let f = random_field(g, amp, seed);
        let sys = ResolventSystem::new(&f_w, &f.tau, p.g, w).unwrap();
        let a = build_a_from_matrix(&f_w, &f.tau, p.g, w);
        let k = a.scale(Complex64::i());
        let oracle = ln_det_reg(&k, 3).unwrap();
        let lu = sys.ln_det3().unwrap();
        assert!((lu - oracle).norm() < 1e-10 * oracle.norm().max(1e-3), "{lu} vs {oracle}");
    }
}

#[test]
fn small_field_weight_follows_cubic_term() {
    let p = params(1_000_000);
    let g = geometry();
    let f_w = propagator_matrix(&p, &g).unwrap();
    let w = g.layout().cell_weight();
    let f = random_field(g, 40.0, 9);
    let a = build_a_from_matrix(&f_w, &f.tau, p.g, w);
    let tr3 = a.compose(&a).compose(&a).trace();
    // ln det₃(1 + iA) ≈ Tr(iA)³/3 = −i Tr A³ / 3.
    let cubic = -0.5 * p.n_f64() * (-Complex64::i() * tr3 / 3.0);
    let ws = sample_weight(&f, &p, &g).unwrap();
    assert!((ws.value() - cubic.exp()).norm() < 1e-3, "{} vs {cubic}", ws.ln_weight);
    // The remainder is led by the quartic term −(N/2)(−Tr(iA)⁴/4) = N Tr A⁴ / 8.
    let a2 = a.compose(&a);
    let quartic = p.n_f64() * a2.compose(&a2).trace() / 8.0;
    let rest = ws.ln_weight - cubic;
    assert!((rest - quartic).norm() < 0.1 * quartic.norm(), "{rest} vs {quartic}");
    assert!(ws.magnitude() > 0.0 && ws.phase().abs() < std::f64::consts::PI);
}

#[test]
fn propagator_shape_fit_recovers_mass() {
    let m = 0.3;
    let r: Vec<f64> = (2..10).map(|k| 0.5 * k as f64).collect();
    let v: Vec<f64> = r.iter().map(|&x| 2.5 * radial_propagator(m, x).unwrap()).collect();
    let se = vec![0.0; r.len()];
    let fit = fit_propagator_mass(&r, &v, &se, 0.5).unwrap();
    assert!((fit.mass / m - 1.0).abs() < 1e-6, "{fit:?}");
    assert!((fit.log_amplitude - 2.5f64.ln()).abs() < 1e-6);
    assert!(fit.r_squared > 0.999_999);
    assert!(fit_propagator_mass(&r[..2], &v[..2], &se[..2], m).is_err());
}

fn small_config(samples: usize) -> SamplerConfig {
    SamplerConfig {
        n_samples: samples,
        window: Some((0.5, 1.5)),
        shards: 2,
        ..Default::default()
    }
}

#[test]
fn free_field_estimator_is_exact() {
    let p = params(10_000).free();
    let g = LatticeGeometry::new(1, 2).unwrap();
    let r = estimate_s2(&p, &g, &CutoffSpec::default(), &small_config(40)).unwrap();
    for (s, e) in r.separations.iter().zip(&r.estimates) {
        assert!((e.re - radial_propagator(p.m, *s).unwrap()).abs() < 1e-12 * e.re);
        assert_eq!(e.im, 0.0);
    }
    assert!((r.ratio() - 1.0).abs() < 0.05);
    assert_eq!(r.sign_diagnostic, 1.0);
    assert_eq!(r.sample_count, 40);
}

#[test]
fn interacting_estimator_properties() {
    let p = params(1000);
    let g = LatticeGeometry::new(1, 2).unwrap();
    let cfg = small_config(400);
    let r = estimate_s2(&p, &g, &CutoffSpec::default(), &cfg).unwrap();
    assert!(r.sign_diagnostic >= SIGN_ABORT_THRESHOLD);
    assert!(r.symmetry_defect() < 3.0, "{}", r.symmetry_defect());
    assert!(r.imaginary_defect() < 4.0, "{}", r.imaginary_defect());
    assert!(r.normalization_defect() < 3.0, "{}", r.normalization_defect());
    assert!(r.fitted_mprime > 0.0);
    assert!(r.estimates[0].re > r.estimates.last().unwrap().re);
    let again = estimate_s2(&p, &g, &CutoffSpec::default(), &cfg).unwrap();
    assert_eq!(r, again);
    assert_eq!(r.csv().lines().count(), r.separations.len() + 1);
}

#[test]
fn sampler_config_is_validated() {
    let p = params(1000);
    let g = LatticeGeometry::new(1, 2).unwrap();
    let mut cfg = small_config(400);
    cfg.batches = 10;
    assert!(estimate_s2(&p, &g, &CutoffSpec::default(), &cfg).is_err());
    let mut cfg = small_config(400);
    cfg.window = Some((5.0, 6.0));
    assert!(estimate_s2(&p, &g, &CutoffSpec::default(), &cfg).is_err());
}

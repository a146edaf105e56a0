use largen_sigma::kernels::*;
use largen_sigma::model::{params_for_mass, Regulator};
use proptest::prelude::*;
use std::f64::consts::PI;

/// F(0) = (1/4π) ∫ du/(u e^u + m²), trapezoid in t = ln u.
fn f0_oracle(m: f64) -> f64 {
    let (a, b, n) = (-80.0f64, 4.5f64, 200_000);
    let dt = (b - a) / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        let t = a + i as f64 * dt;
        let u = t.exp();
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        s += w * u / (u * u.exp() + m * m);
    }
    s * dt / (4.0 * PI)
}

/// Exact decay rate μ of F: μ² e^{−μ²} = m².
fn true_rate(m: f64) -> f64 {
    let mut x = m * m;
    for _ in 0..50 {
        let g = x * (-x).exp() - m * m;
        let dg = (1.0 - x) * (-x).exp();
        x -= g / dg;
    }
    x.sqrt()
}

#[test]
fn propagator_origin_matches_radial_oracle() {
    let k = propagator_kernel(0.1, 0.25, 10.0).unwrap();
    let oracle = f0_oracle(0.1);
    assert!((k.get(0, 0) - oracle).abs() / oracle < 1e-6, "{} vs {}", k.get(0, 0), oracle);
    let radial = radial_propagator(0.1, 0.0).unwrap();
    assert!((radial - oracle).abs() / oracle < 1e-9);
}

#[test]
fn propagator_fft_matches_hankel_route() {
    let m = 0.1;
    let k = propagator_kernel(m, 0.25, 80.0).unwrap();
    for (i, j) in [(1, 0), (4, 3), (12, 5), (40, 0), (100, 100)] {
        let r = 0.25 * ((i * i + j * j) as f64).sqrt();
        let radial = radial_propagator(m, r).unwrap();
        let fft = k.get(i, j);
        assert!((fft - radial).abs() / radial < 1e-6, "r={r}: {fft} vs {radial}");
    }
}

#[test]
fn propagator_positive_with_mass_sum_rule() {
    let m = 0.15;
    let he = 8.0 / m;
    let k = propagator_kernel(m, 0.25, he).unwrap();
    assert!(k.values.iter().all(|&v| v > 0.0));
    assert!(k.fitted_decay_rate >= 0.95 * m);
    assert!((k.fitted_decay_rate / true_rate(m) - 1.0).abs() < 0.05);
    // Σ F h² over the full plane is 1/m²; the table covers all but e^{−8} of it.
    let s: f64 = k.values.iter().sum::<f64>() * 0.0625;
    assert!((s * m * m - 1.0).abs() < 0.01, "{}", s * m * m);
}

#[test]
fn propagator_lattice_symmetry() {
    let k = propagator_kernel(0.15, 0.25, 10.0).unwrap();
    assert!(k.point_group_asymmetry() < 1e-8);
}

#[test]
fn propagator_rejects_coarse_grid_and_small_box() {
    assert!(propagator_kernel(0.1, 0.5, 10.0).is_err());
    assert!(propagator_kernel(0.1, 0.25, 5.0).is_err());
    assert!(propagator_kernel(1.5, 0.25, 10.0).is_err());
}

#[test]
fn unregulated_bubble_closed_form() {
    let v = polarization_momentum_mode(0.0, 1.0, 0.1, BubbleMode::Unregulated).unwrap();
    let exact = 1.0 / (8.0 * PI * 0.01);
    assert!((v - exact).abs() / exact < 1e-6, "{v} vs {exact}");
}

#[test]
fn regulated_bubble_constant_near_one() {
    let p = params_for_mass(0.1, 1.0, 100, Regulator::Exponential).unwrap();
    let pi0 = polarization_momentum(0.0, &p).unwrap();
    let c_pi = pi0 * 8.0 * PI * p.m2() / p.lambda_k();
    assert!((0.8..=1.2).contains(&c_pi), "C_pi = {c_pi}");
    let mut prev = pi0;
    for p2 in [1e-4, 1e-3, 0.01, 0.04, 0.1, 0.5, 2.0] {
        let v = polarization_momentum(p2, &p).unwrap();
        assert!(v < prev, "not decreasing at p2={p2}");
        prev = v;
    }
}

#[test]
fn fft_bubble_agrees_with_quadrature() {
    let p = params_for_mass(0.1, 1.0, 100, Regulator::Exponential).unwrap();
    let (_, pi0_fft) = sqrt_one_plus_pi_kernel_with_pi0(&p, SqrtSign::Plus, 0.25, 10.0).unwrap();
    let pi0 = polarization_momentum(0.0, &p).unwrap();
    assert!((pi0_fft - pi0).abs() / pi0 < 1e-6, "{pi0_fft} vs {pi0}");
}

#[test]
fn polarization_decays_at_twice_the_rate() {
    let m = 0.15;
    let p = params_for_mass(m, 1.0, 100, Regulator::Exponential).unwrap();
    let k = polarization_kernel(&p, 0.25, 8.0 / m).unwrap();
    assert!(k.fitted_decay_rate >= 2.0 * m * 0.9, "{}", k.fitted_decay_rate);
}

#[test]
fn sqrt_kernels_form_inverse_pair() {
    let p = params_for_mass(0.5, 1.0, 100, Regulator::Exponential).unwrap();
    let h = 0.25;
    let plus = sqrt_one_plus_pi_kernel(&p, SqrtSign::Plus, h, 16.0).unwrap();
    let minus = sqrt_one_plus_pi_kernel(&p, SqrtSign::Minus, h, 16.0).unwrap();
    // (δ + s₊) ∗ (δ + s₋) − δ = s₊ + s₋ + s₊ ∗ s₋.
    let n = plus.n_half as i64;
    let mut worst = 0.0f64;
    for xi in -8..=8i64 {
        for xj in -8..=8i64 {
            let mut conv = 0.0;
            for yi in -n..=n {
                for yj in -n..=n {
                    conv += plus.get(yi, yj) * minus.get(xi - yi, xj - yj);
                }
            }
            let r = plus.get(xi, xj) + minus.get(xi, xj) + conv * h * h;
            worst = worst.max(r.abs());
        }
    }
    assert!(worst < 1e-6, "sup residual {worst}");
}

#[test]
fn cutoff_symbol_at_zero_and_radial_agreement() {
    let spec = CutoffSpec::default();
    let ck = cutoff_inverse_kernel(&spec, 0.125, 30.0).unwrap();
    let k = &ck.kernel;
    let s: f64 = k.values.iter().sum::<f64>() * 0.125 * 0.125;
    assert!((s - 1.0).abs() < 1e-9, "{s}");
    // The symbol decays only like p⁻⁴: the lattice misses (1/4π) p_N⁻² of it.
    let p_nyquist = PI / 0.125;
    let tail = 1.0 / (4.0 * PI * p_nyquist * p_nyquist);
    for (i, j) in [(0, 0), (3, 4), (8, 0), (20, 15)] {
        let r = 0.125 * ((i * i + j * j) as f64).sqrt();
        let radial = cutoff_kernel_radial(1.0, r);
        assert!((k.get(i, j) - radial).abs() < 1.1 * tail, "r={r}: {} vs {radial}", k.get(i, j));
    }
}

#[test]
fn cutoff_leaked_mass_matches_radial_oracle() {
    let ck = cutoff_inverse_kernel(&CutoffSpec::default(), 0.0625, 10.0).unwrap();
    let (mut inner, mut outer) = (0.0, 0.0);
    let dr = 1e-4;
    for i in 0..200_000 {
        let r = (i as f64 + 0.5) * dr;
        let v = 2.0 * PI * r * cutoff_kernel_radial(1.0, r).abs() * dr;
        if r > 1.0 {
            outer += v;
        } else {
            inner += v;
        }
    }
    let oracle = outer / (inner + outer);
    assert!((ck.mass_outside_unit - oracle).abs() < 0.01, "{} vs {oracle}", ck.mass_outside_unit);
    assert!(ck.mass_outside_unit > 0.5);
}

#[test]
fn degenerate_cutoff_is_delta() {
    let ck = cutoff_inverse_kernel(&CutoffSpec::degenerate(), 0.25, 4.0).unwrap();
    assert_eq!(ck.mass_outside_unit, 0.0);
    let k = &ck.kernel;
    assert!((k.get(0, 0) * 0.0625 - 1.0).abs() < 1e-15);
    assert_eq!(k.values.iter().filter(|&&v| v != 0.0).count(), 1);
}

#[test]
fn cutoff_spec_bounds() {
    assert!(CutoffSpec::quartic(0.5, 2.0, 3.0).is_err());
    assert!(CutoffSpec::quartic(0.5, 2.0, 1.0).is_ok());
}

#[test]
fn enforced_cutoff_compact_and_positive() {
    let h = 0.125;
    let e = EnforcedCutoff::new(&CutoffSpec::default(), h);
    let reach = e.reach();
    let mut total = 0.0;
    for i in -reach..=reach {
        for j in -reach..=reach {
            let r = h * ((i * i + j * j) as f64).sqrt();
            if r >= 1.0 {
                assert_eq!(e.at(i, j), 0.0);
            }
            total += e.at(i, j) * h * h;
        }
    }
    assert!((total - 1.0).abs() < 1e-13);
    for a in 0..40 {
        for b in 0..=a {
            let (px, py) = (0.4 * a as f64, 0.4 * b as f64);
            let mut sym = 0.0;
            for i in -reach..=reach {
                for j in -reach..=reach {
                    sym += e.at(i, j) * (h * (px * i as f64 + py * j as f64)).cos() * h * h;
                }
            }
            assert!(sym > 0.0 && sym <= 1.0 + 1e-12, "p=({px},{py}) symbol {sym}");
        }
    }
}

#[test]
fn cutoff_power_integral_scaling() {
    for r in 1..=40u32 {
        let v = cutoff_power_integral(r).unwrap();
        let rf = r as f64;
        let exact = PI * PI.sqrt() * (libm::lgamma(rf - 0.5) - libm::lgamma(rf)).exp() / 2.0;
        assert!((v - exact).abs() / exact < 1e-9, "r={r}");
        assert!(v * rf.sqrt() < 5.0);
    }
}

#[test]
fn cache_round_trip() {
    let k = propagator_kernel(0.15, 0.25, 10.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.kcache");
    k.write_cache(&path, "abc123").unwrap();
    let (back, hash) = SampledKernel::read_cache(&path).unwrap();
    assert_eq!(hash, "abc123");
    assert_eq!(back, k);
    std::fs::write(&path, b"kind=x\n").unwrap();
    assert!(SampledKernel::read_cache(&path).is_err());
}

#[test]
fn radial_table_matches_function() {
    let t = RadialKernelTable::build(0.5, 6, |r| Ok((-r).exp())).unwrap();
    assert!((t.at(3, -4) - (-2.5f64).exp()).abs() < 1e-15);
    assert_eq!(t.at(5, 0), t.at(0, -5));
    assert_eq!(t.at(5, 0), t.at(3, 4));
}

proptest! {
    #[test]
    fn fit_recovers_planted_decay(rate in 0.02f64..1.5, power in -1.0f64..1.5, amp in -3.0f64..3.0) {
        let r: Vec<f64> = (0..60).map(|i| 2.0 + 0.25 * i as f64).collect();
        let v: Vec<f64> = r.iter().map(|r| (amp - rate * r - power * r.ln()).exp()).collect();
        let f = fit_decay(&r, &v).unwrap();
        prop_assert!((f.rate - rate).abs() < 1e-8);
        prop_assert!((f.power - power).abs() < 1e-7);
        prop_assert!(f.rms_residual < 1e-9);
    }

    #[test]
    fn cutoff_kernel_scaling(c in 0.5f64..2.0, r in 0.0f64..3.0) {
        let direct = cutoff_kernel_radial(c, r);
        let scaled = cutoff_kernel_radial(1.0, r * c.powf(-0.25)) / c.sqrt();
        prop_assert!((direct - scaled).abs() < 1e-14);
    }

    #[test]
    fn taper_in_unit_interval(r in 0.0f64..1.5) {
        let w = compact_taper(r);
        prop_assert!((0.0..=1.0).contains(&w));
    }
}

use largen_sigma::model::{derive_params, params_for_mass, Regulator};
use largen_sigma::regions::*;
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};

fn geometry(n: usize) -> LatticeGeometry {
    LatticeGeometry::new(n, 2).unwrap()
}

fn labels_from(geom: &LatticeGeometry, large: &[(Square, u32)]) -> LSAssignment {
    let mut labels: BTreeMap<Square, SquareLabel> = geom.squares().into_iter().map(|s| (s, SquareLabel::Small)).collect();
    for &(s, n) in large {
        labels.insert(s, SquareLabel::Large(n));
    }
    LSAssignment::from_labels(labels)
}

#[test]
fn zero_field_is_all_small() {
    let g = geometry(2);
    let p = derive_params(1.0, 1.0, 10_000, Regulator::Exponential).unwrap();
    let a = classify_squares(&FieldConfig::zero(g), &p);
    assert!(a.labels.values().all(|l| *l == SquareLabel::Small));
    assert!(a.weights.values().all(|w| w.theta_s == 1.0));
}

#[test]
fn lower_window_edge_has_zero_large_weight() {
    let big_n = 1e6f64;
    let x = 0.75 * big_n.powf(1.0 / 6.0);
    let w = theta_weights(x, big_n, n_max(x, big_n));
    assert_eq!(w.theta_s, 1.0);
    assert!(w.theta_n.iter().all(|&t| t == 0.0));
}

#[test]
fn level_two_square_matches_direct_window_check() {
    let g = geometry(1);
    let p = params_for_mass(0.1, 1.0, 4096, Regulator::Exponential).unwrap();
    let big_n = 4096f64;
    let mass = 2.0 * big_n.powf(2.0 / 6.0) / p.lambda_k();
    let mut masses = BTreeMap::new();
    masses.insert((0, 0), mass);
    let f = FieldConfig::from_square_masses(g, &masses).unwrap();
    let a = classify_squares(&f, &p);
    assert_eq!(a.labels[&(0, 0)], SquareLabel::Large(2));
    let x = p.lambda_k() * f.masses[&(0, 0)];
    let admissible: Vec<u32> = (1..6)
        .filter(|&n| 1.25 * big_n.powf((n + 1) as f64 / 6.0) > x && x >= 0.75 * big_n.powf(n as f64 / 6.0))
        .collect();
    assert_eq!(admissible, vec![2]);
}

#[test]
fn field_masses_match_sites() {
    let g = geometry(2);
    let layout = g.layout();
    let tau: Vec<f64> = (0..layout.num_sites()).map(|k| (k as f64 * 0.37).sin()).collect();
    let f = FieldConfig::new(g, tau.clone()).unwrap();
    for (sq, m) in &f.masses {
        let direct: f64 = (0..layout.num_sites())
            .filter(|&k| layout.square_of_site(k) == *sq)
            .map(|k| tau[k] * tau[k] * 0.25)
            .sum();
        assert!((m - direct).abs() < 1e-12);
    }
    assert!(FieldConfig::new(g, vec![0.0; 3]).is_err());
}

#[test]
fn field_file_round_trip() {
    let g = geometry(1);
    let f = FieldConfig::new(g, (0..16).map(|k| k as f64 - 3.5).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tau.field");
    f.write(&path).unwrap();
    assert_eq!(FieldConfig::read(&path).unwrap(), f);
}

#[test]
fn empty_large_region() {
    let g = geometry(3);
    let r = build_regions(&labels_from(&g, &[]), &g, 2.0).unwrap();
    assert!(r.gamma.is_empty() && r.big_gamma.is_empty() && r.big_gamma_e.is_empty());
    assert!(r.components.is_empty() && r.e_components.is_empty());
}

#[test]
fn single_square_corridor_brute_force() {
    let g = geometry(8);
    let m = 3.0;
    let r = build_regions(&labels_from(&g, &[((0, 0), 1)]), &g, m).unwrap();
    let mut expect = BTreeSet::new();
    for i in -8..8i64 {
        for j in -8..8i64 {
            let dx = (i.abs() - 1).max(0) as f64;
            let dy = (j.abs() - 1).max(0) as f64;
            if dx * dx + dy * dy <= m * m {
                expect.insert((i, j));
            }
        }
    }
    assert_eq!(r.big_gamma, expect);
    assert!(r.big_gamma.len() < 81 && r.big_gamma.contains(&(4, 0)) && !r.big_gamma.contains(&(4, 4)));
}

#[test]
fn link_threshold_brute_force() {
    let g = geometry(8);
    let m = 3.0;
    // dist((−4,0),(2,0)) = 5 = 2M − 1.
    let near = build_regions(&labels_from(&g, &[((-4, 0), 1), ((2, 0), 1)]), &g, m).unwrap();
    assert_eq!(near.components.len(), 1);
    assert!(link_witness((-4, 0), (2, 0), &g.squares(), 2.0 * m).is_some());
    // dist((−5,0),(5,0)) = 9 = 2M + 3.
    let far = build_regions(&labels_from(&g, &[((-5, 0), 1), ((5, 0), 1)]), &g, m).unwrap();
    assert_eq!(far.components.len(), 2);
    assert!(link_witness((-5, 0), (5, 0), &g.squares(), 2.0 * m).is_none());
}

#[test]
fn e_links_use_levels() {
    let g = geometry(8);
    let m = 2.0;
    // dist = 9 > 2M but ≤ (2+3)M.
    let r = build_regions(&labels_from(&g, &[((-5, 0), 2), ((5, 0), 3)]), &g, m).unwrap();
    assert_eq!(r.components.len(), 2);
    assert_eq!(r.e_components.len(), 1);
}

#[test]
fn suppression_trivial_without_large_squares() {
    let g = geometry(2);
    let p = derive_params(1.0, 1.0, 1_000_000, Regulator::Exponential).unwrap();
    let a = labels_from(&g, &[]);
    let r = build_regions(&a, &g, 2.0).unwrap();
    let s = large_field_suppression(&a, &r, &FieldConfig::zero(g), &p);
    assert_eq!((s.ln_lhs, s.ln_rhs), (0.0, 0.0));
    assert!(s.holds);
}

#[test]
fn suppression_scan_over_n_reports_direction() {
    let g = geometry(3);
    for big_n in [1e2f64, 1e6, 1e12, 1e18] {
        let p = params_for_mass(0.1, 1.0, big_n as u64, Regulator::Exponential).unwrap();
        let mut masses = BTreeMap::new();
        masses.insert((0, 0), 2.0 * big_n.powf(1.0 / 6.0) / p.lambda_k());
        let f = FieldConfig::from_square_masses(g, &masses).unwrap();
        let a = classify_squares(&f, &p);
        let r = build_regions(&a, &g, 1.0).unwrap();
        let s = large_field_suppression(&a, &r, &f, &p);
        assert_eq!(s.holds, s.ln_lhs <= s.ln_rhs);
        assert!(s.ln_product < 0.0);
    }
}

fn arb_assignment(n: i64) -> impl Strategy<Value = Vec<(Square, u32)>> {
    prop::collection::vec(((-n..n, -n..n), 1u32..4), 0..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn partition_of_unity(x in 0.0f64..1e9, log_n in 0.3f64..8.0) {
        let big_n = 10f64.powf(log_n);
        let w = theta_weights(x, big_n, n_max(x, big_n));
        prop_assert!((w.total() - 1.0).abs() < 1e-12);
    }

    // Windows n and n+2 are disjoint once (5/4) N^{1/6} ≤ (3/4) N^{2/6}, i.e. N ≥ (5/3)^6.
    #[test]
    fn at_most_two_consecutive_windows(x in 0.0f64..1e9, log_n in 1.34f64..8.0) {
        let big_n = 10f64.powf(log_n);
        let w = theta_weights(x, big_n, n_max(x, big_n));
        let nonzero: Vec<usize> = w.theta_n.iter().enumerate().filter(|(_, t)| **t != 0.0).map(|(k, _)| k).collect();
        prop_assert!(nonzero.len() <= 2);
        if nonzero.len() == 2 {
            prop_assert_eq!(nonzero[1], nonzero[0] + 1);
        }
        for (k, t) in w.theta_n.iter().enumerate() {
            let n = (k + 1) as f64;
            if *t > 0.0 {
                prop_assert!(1.25 * big_n.powf((n + 1.0) / 6.0) > x && x >= 0.75 * big_n.powf(n / 6.0));
            }
        }
        if w.theta_s > 0.0 {
            prop_assert!(x < 1.25 * big_n.powf(1.0 / 6.0));
        }
    }

    #[test]
    fn step_is_monotone(a in -0.3f64..0.3, b in -0.3f64..0.3) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(smooth_step(lo) <= smooth_step(hi));
        prop_assert!((smooth_step(a) + smooth_step(-a) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn region_invariants(large in arb_assignment(5), m in 0.5f64..3.0) {
        let g = geometry(5);
        let a = labels_from(&g, &large);
        let r = build_regions(&a, &g, m).unwrap();
        // Nesting Λ_l ⊆ γ∩Λ ⊆ Γ ⊆ Γᵉ.
        let gamma_in = r.gamma_in(&g);
        prop_assert!(r.lambda_l.is_subset(&gamma_in));
        prop_assert!(gamma_in.is_subset(&r.big_gamma));
        prop_assert!(r.big_gamma.is_subset(&r.big_gamma_e));
        // One-to-one component maps and disjoint unions.
        prop_assert_eq!(r.components.len(), r.components.iter().filter(|c| !c.gamma.is_empty()).count());
        let mut seen = BTreeSet::new();
        for c in &r.components {
            for s in &c.big_gamma {
                prop_assert!(seen.insert(*s));
            }
        }
        prop_assert_eq!(&seen, &r.big_gamma);
        let mut seen_e = BTreeSet::new();
        for c in &r.e_components {
            for s in &c.big_gamma_e {
                prop_assert!(seen_e.insert(*s));
            }
        }
        prop_assert_eq!(&seen_e, &r.big_gamma_e);
        prop_assert!(r.e_components.len() <= r.components.len());
        prop_assert!(r.components.len() <= r.l_components.len());
        // Corridor width by brute-force pairwise distances.
        let outside: Vec<Square> = g.squares().into_iter().filter(|s| !r.big_gamma.contains(s)).collect();
        for &x in &r.gamma {
            for &y in &outside {
                prop_assert!(square_distance(x, y) >= m / 2.0 - 2f64.sqrt() - 1e-12);
            }
        }
        prop_assert!(r.corridor_gap(&g) >= m / 2.0 - 2f64.sqrt() - 1e-12);
    }
}

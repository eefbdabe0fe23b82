use proptest::prelude::*;
use simpleray::config::RunConfig;
use simpleray::formats::GridData;
use simpleray::gauge::{act, GaugeElement};
use simpleray::geodesics::{boundary_distance_on, hamiltonian, inflow, shoot, InflowGrid, ShootOptions};
use simpleray::norms::{triple_distance, NormGrid};
use simpleray::recovery::loglog_slope;
use simpleray::registry;
use simpleray::wkb::{trace_coefficients, DnRecord, Provenance};
use simpleray::xray::{xray, Field, Sinogram};
use simpleray::{CoefficientTriple, Point, ScalarField, C64};
use std::f64::consts::PI;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

fn pts() -> Vec<Point> {
    vec![Point::new(0.1, 0.2), Point::new(-0.5, 0.4), Point::new(0.7, -0.3), Point::new(0.0, -0.9)]
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn geodesics_conserve_energy_and_reverse(alpha in 0.0..2.0 * PI, beta in -1.3..1.3f64) {
        let g = registry::metric("gauss1+perturb:3,0.05").unwrap();
        let (z, w) = inflow(&g, 1.0, alpha, beta);
        let a = shoot(&g, &z, &w, &ShootOptions::new(1.0)).unwrap();
        for s in &a.samples {
            let y = [s.x[0], s.x[1], s.xi[0], s.xi[1]];
            prop_assert!((hamiltonian(&g, &y) - 0.5).abs() < 1e-9);
        }
        let back = shoot(&g, &a.exit_point, &(-a.exit_xi), &ShootOptions::new(1.0)).unwrap();
        prop_assert!((back.exit_point - z).norm() < 1e-7);
    }

    #[test]
    fn boundary_distance_triangle_inequality(a in 0.0..2.0 * PI, b in 0.3..2.0f64, c in 0.3..2.0f64) {
        let g = registry::metric("gauss1").unwrap();
        let d = |x: f64, y: f64| boundary_distance_on(&g, x, y, 1.0, 1e-3).unwrap();
        let (x, y, z) = (a, a + b, a + b + c);
        prop_assert!(d(x, z) <= d(x, y) + d(y, z) + 1e-6);
        prop_assert!((d(x, y) - d(y, x)).abs() < 1e-6);
    }

    #[test]
    fn gauge_action_is_a_group_action(s1 in 0u64..1000, s2 in 0u64..1000, e1 in 0.0..0.05f64, e2 in 0.0..0.05f64) {
        let t = CoefficientTriple::from_ids("gauss1", "rot:0.3", "bump:1,0,0.1,0.1").unwrap();
        let (h, k) = (GaugeElement::random(s1, e1), GaugeElement::random(s2, e2));
        let a = act(&h, &act(&k, &t));
        let b = act(&h.compose(&k), &t);
        for p in pts() {
            prop_assert!((a.g.eval(&p) - b.g.eval(&p)).norm() < 1e-10);
            prop_assert!((a.b.eval(&p) - b.b.eval(&p)).norm() < 1e-7);
            prop_assert!((a.q.eval(&p) - b.q.eval(&p)).abs() < 1e-10);
        }
    }

    #[test]
    fn registry_perturbations_stay_positive(seed in 0u64..10_000, eps in 0.0..0.2f64) {
        let g = registry::metric(&format!("gauss1+perturb:{seed},{eps}")).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let p = Point::new(-1.15 + 2.3 * i as f64 / 11.0, -1.15 + 2.3 * j as f64 / 11.0);
                if p.norm() <= 1.15 {
                    prop_assert!(g.eval(&p).symmetric_eigenvalues().min() > 0.0);
                }
            }
        }
    }

    #[test]
    fn loglog_slope_recovers_exponent(mu in 0.05..2.0f64, c in 0.1..10.0f64) {
        let x = [1e-5, 1e-4, 1e-3, 1e-2];
        let y: Vec<f64> = x.iter().map(|v: &f64| c * v.powf(mu)).collect();
        prop_assert!((loglog_slope(&x, &y).0 - mu).abs() < 1e-9);
    }

    #[test]
    fn trace_c0_is_affine_in_normal_jets(h1 in -1.0..1.0f64, b0 in -1.0..1.0f64, w in -0.6..0.6f64) {
        let t = CoefficientTriple::from_ids("gauss1", "rot:0.3", "const:0.5").unwrap();
        let base = simpleray::recovery::true_boundary_jets(&t, 8).unwrap()[0];
        let c = |h1: f64, b0: f64| trace_coefficients(&simpleray::charts::BoundaryJets { h1, b0, ..base }, w).unwrap().c0;
        let mid = c(0.5 * h1, 0.5 * b0);
        let ends = (c(h1, b0) + c(0.0, 0.0)) * 0.5;
        prop_assert!((mid - ends).norm() < 1e-9 * (1.0 + mid.norm()));
    }
}

proptest! {
    #![proptest_config(cases(8))]

    #[test]
    fn xray_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, x0 in -0.4..0.4f64) {
        let g = registry::metric("gauss1").unwrap();
        let grid = InflowGrid::new(&g, 1.0, 12, 6, 0.05);
        let f1 = registry::potential(&format!("bump:1,{x0},0.1,0.05")).unwrap();
        let f2 = registry::potential("lin:0.3,-0.2").unwrap();
        let (c1, c2) = (f1.clone(), f2.clone());
        let sum = ScalarField::new("sum", move |p| a * c1.eval(p) + b * c2.eval(p));
        let s = xray(&g, Field::Scalar(&sum), &grid);
        let s1 = xray(&g, Field::Scalar(&f1), &grid);
        let s2 = xray(&g, Field::Scalar(&f2), &grid);
        for k in 0..s.values.len() {
            prop_assert!((s.values[k] - a * s1.values[k] - b * s2.values[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn distance_vanishes_only_on_identical_triples(eps in 0.01..0.5f64) {
        let t = CoefficientTriple::from_ids("gauss1", "rot:0.3", "const:0.5").unwrap();
        let u = CoefficientTriple::from_ids("gauss1", "rot:0.3", &format!("const:{}", 0.5 + eps)).unwrap();
        let grid = NormGrid { n: 17, ..NormGrid::default() };
        let (dg, db, dq) = triple_distance(&t, &u, &grid);
        prop_assert!(dg == 0.0 && db == 0.0);
        prop_assert!((dq - eps).abs() < 1e-12);
    }

    #[test]
    fn grid_files_round_trip(nx in 2usize..9, ny in 2usize..9, ncomp in 1usize..4, seed in any::<u64>()) {
        let mut gd = GridData::new(nx, ny, ncomp, [-1.2, 1.2, -1.1, 1.3]);
        let mut s = seed;
        for v in gd.data.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = f64::from_bits(s >> 2);
        }
        let back = GridData::from_bytes(&gd.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), gd.to_bytes());
    }

    #[test]
    fn sinogram_and_dn_files_round_trip(v in proptest::collection::vec(-1e3..1e3f64, 18)) {
        let g = registry::metric("euclid").unwrap();
        let grid = InflowGrid::new(&g, 1.0, 6, 3, 0.05);
        let valid: Vec<bool> = v.iter().map(|x| *x > -900.0).collect();
        let s = Sinogram::from_grid(&grid, 1, "euclid", v.clone(), valid);
        prop_assert_eq!(Sinogram::from_bytes(&s.to_bytes()).unwrap(), s);
        let mut d = DnRecord::zeros(vec![0.0, 0.5, 1.0], (0..6).map(|k| k as f64).collect(), Provenance::Wkb);
        for (k, x) in d.trace.iter_mut().enumerate() {
            *x = C64::new(v[k], -v[17 - k]);
        }
        prop_assert_eq!(DnRecord::from_bytes(&d.to_bytes()).unwrap().to_bytes(), d.to_bytes());
    }

    #[test]
    fn run_config_round_trips(seed in 0..i64::MAX as u64, n in 4usize..200, mu in 0.1..1.0f64) {
        let mut c = RunConfig { seed, ..RunConfig::default() };
        c.rays.n_alpha = n;
        c.holder.mu = mu;
        let back = RunConfig::parse(&c.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
        prop_assert_eq!(back, c);
    }
}

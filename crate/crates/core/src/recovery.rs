//! Inverse pipeline: boundary jets from local DN asymptotics, sinograms of `b` and `q` from exit
//! traces of global probes, linearized interior metric recovery, and Hölder experiments.

mod boundary;
mod experiment;
mod interior;
mod sinogram;

pub use boundary::*;
pub use experiment::*;
pub use interior::*;
pub use sinogram::*;

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Weighted real least squares `min ‖W(Ax − y)‖`, with the 2-norm condition number of `WA`.
pub(crate) fn weighted_lsq(a: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let aw = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)] * w[r]);
    let yw = y.component_mul(w);
    let svd = aw.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) {
        return Err(Error::IllConditioned(f64::INFINITY));
    }
    let x = svd.solve(&yw, 0.0).map_err(|e| Error::Insufficient(e.to_string()))?;
    Ok((x, smax / smin))
}

/// Least-squares slope and its standard error for `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let se = if pts.len() > 2 {
        let rss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesics::InflowGrid;
    use crate::norms::{triple_distance, NormGrid};
    use crate::wkb::ProbeConfig;
    use crate::xray::RayCache;
    use crate::{CoefficientTriple, Point};

    #[test]
    fn loglog_slope_of_power_law() {
        let x = [1e-4, 1e-3, 1e-2, 1e-1];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.7)).collect();
        let (s, se) = loglog_slope(&x, &y);
        assert!((s - 0.7).abs() < 1e-12 && se < 1e-10);
    }

    #[test]
    fn weighted_lsq_recovers_consistent_solution() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let w = DVector::from_vec(vec![1.0, 2.0, 0.5, 1.0]);
        let (x, cond) = weighted_lsq(&a, &y, &w).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
        assert!(cond > 1.0);
    }

    #[test]
    fn noise_free_boundary_jet_matches_truth() {
        let t = CoefficientTriple::from_ids("gauss1", "rot:0.3", "const:0.5").unwrap();
        let design = BoundaryDesign::default();
        let data = boundary_data(&t, &design, stage_lambdas(0.0), 0.0, 1).unwrap();
        let jet = recover_boundary_jet(&data).unwrap();
        let e = jet.errors(&true_boundary_jets(&t, design.n_b).unwrap()).unwrap();
        assert!(e.h0 < 1e-4 && e.h1 < 1e-3 && e.b0 < 1e-3, "{e:?}");
        assert!(e.h2 < 5e-2 && e.b1 < 5e-2 && e.q0 < 5e-2, "{e:?}");
        assert_eq!(jet.flagged(), 0);
    }

    #[test]
    fn identical_triples_give_zero_sinograms() {
        let t = CoefficientTriple::from_ids("gauss1", "rot:0.3", "const:0.5").unwrap();
        let grid = InflowGrid::new(&t.g, 1.15, 6, 3, 0.05);
        let design = SinogramDesign::default();
        let (d, r) = exit_trace_pair(&t, &t, &grid, &design);
        let b = extract_b_sinogram(&d, &r, &grid, &design, "gauss1").unwrap();
        let q = extract_q_sinogram(&d, &r, &grid, "gauss1", None).unwrap();
        assert!(b.valid.iter().all(|&v| v) && q.valid.iter().all(|&v| v));
        assert!(b.values.iter().chain(&q.values).all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn eta_correction_removes_covector_from_q_sinogram() {
        let t = CoefficientTriple::from_ids("gauss1", "rot:0.3+bump:0.2,0.1,0.2,0.08", "const:0.2").unwrap();
        let tt = CoefficientTriple::from_ids("gauss1", "rot:0.3", "const:0.2").unwrap();
        let grid = InflowGrid::new(&t.g, 1.15, 8, 3, 0.3);
        let design = SinogramDesign::default();
        let (d, r) = exit_trace_pair(&t, &tt, &grid, &design);
        let eta = exit_traces(&t, &grid, &design, Some(&r));
        let q = extract_q_sinogram(&d, &r, &grid, "gauss1", Some((&eta, &r))).unwrap();
        let raw = extract_q_sinogram(&d, &r, &grid, "gauss1", None).unwrap();
        let size = |s: &crate::xray::Sinogram| s.values.iter().zip(&s.valid).filter(|p| *p.1).map(|p| p.0.abs()).fold(0.0, f64::max);
        assert!(size(&q) < 1e-9, "{}", size(&q));
        assert!(size(&raw) > 1e-3);
    }

    #[test]
    fn arrival_time_matches_boundary_distance() {
        let t = CoefficientTriple::euclid();
        let z = Point::new(-1.15, 0.0);
        let probe = ProbeConfig::global(100.0, z, crate::Vec2::new(1.0, 0.0));
        let a = dn_arrival_distance(&t, &probe).unwrap();
        assert!((a.rho - 2.0).abs() < 1e-2, "{a:?}");
        assert!(a.alpha_out.abs() < 1e-3);
        let t = CoefficientTriple::from_ids("gauss1", "rot:0.3", "zero").unwrap();
        let probe = ProbeConfig::global(100.0, Point::new(-1.15, 0.3), crate::Vec2::new(1.0, 0.0));
        let a = dn_arrival_distance(&t, &probe).unwrap();
        let d = crate::geodesics::boundary_distance_on(&t.g, a.alpha_in, a.alpha_out, 1.0, 1e-3).unwrap();
        assert!((a.rho - d).abs() < 1e-2 * d, "{a:?} vs {d}");
    }

    #[test]
    fn distance_table_of_reference_metric_is_reference() {
        let g = crate::registry::metric("gauss1").unwrap();
        let grid = InflowGrid::new(&g, 1.0, 8, 4, 0.05);
        let cache = RayCache::new(&g, &grid, 2e-3);
        let table = distance_table(&g, &cache);
        let mut n = 0;
        for (r, r0) in table.rho.iter().zip(&table.reference) {
            if let (Some(r), Some(r0)) = (r, r0) {
                assert!((r - r0).abs() < 2e-3 * r0, "{r} vs {r0}");
                n += 1;
            }
        }
        assert!(n > 20);
    }

    #[test]
    fn blend_agrees_with_truth_near_boundary() {
        let t = CoefficientTriple::from_ids("gauss1", "rot:0.3", "const:0.5").unwrap();
        let tt = CoefficientTriple::from_ids("euclid", "zero", "zero").unwrap();
        let (m, info) = modify_near_boundary(&tt, &t, 1e-8, 8.0, 0.9).unwrap();
        assert!((info.depth - 0.1).abs() < 1e-12 && !info.clipped);
        let near = Point::new(0.0, 0.95);
        let deep = Point::new(0.3, 0.0);
        assert!((m.g.eval(&near) - t.g.eval(&near)).norm() < 1e-14);
        assert!((m.b.eval(&near) - t.b.eval(&near)).norm() < 1e-14);
        assert!((m.g.eval(&deep) - tt.g.eval(&deep)).norm() < 1e-14);
        assert!((m.q.eval(&deep) - tt.q.eval(&deep)).abs() < 1e-14);
        let (_, info) = modify_near_boundary(&tt, &t, 1e-4, 8.0, 0.9).unwrap();
        assert!(info.clipped && info.depth == MAX_BLEND_DEPTH);
        let (_, same) = modify_near_boundary(&t, &t, 1e-4, 8.0, 0.9).unwrap();
        assert_eq!(same.change_c2, 0.0);
    }

    #[test]
    fn holder_family_and_alignment_floor() {
        let cfg = HolderConfig::default();
        assert_eq!(cfg.blend_exponent(), 5.0);
        assert_eq!(cfg.hash(), HolderConfig::default().hash());
        assert_ne!(cfg.hash(), HolderConfig { mu: 0.8, ..HolderConfig::default() }.hash());
        let t = cfg.base().unwrap();
        let grid = NormGrid::default();
        let (g, b, q) = triple_distance(&t, &align_gauge(&t, &cfg.member(0.0).unwrap()).unwrap(), &grid);
        assert!(g < 1e-4 && b < 1e-6 && q < 1e-12, "{g} {b} {q}");
        let (g1, b1, q1) = triple_distance(&t, &cfg.member(0.1).unwrap(), &grid);
        let (g2, b2, q2) = triple_distance(&t, &cfg.member(0.2).unwrap(), &grid);
        assert!((g2 / g1 - 2.0).abs() < 1e-6 && (b2 / b1 - 2.0).abs() < 1e-6 && (q2 / q1 - 2.0).abs() < 1e-6);
    }
}

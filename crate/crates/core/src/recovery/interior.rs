//! Boundary distances and the linearized interior metric problem, plus the near-boundary blend
//! of a triple towards the recovered coefficients.

use crate::geodesics::boundary_distance_on;
use crate::norms::{ck_norm, NormGrid};
use crate::wkb::{chi1, trace_times, wrap, ProbeConfig, RayFamily};
use crate::xray::{invert_xray, GridTensor, ImageGrid, Inversion, RayCache, Sinogram};
use crate::{CoefficientTriple, CovectorField, Error, MetricField, Point, Result, ScalarField};
use rayon::prelude::*;

/// Boundary distances `ρ_g(z, z′)` between the endpoints of the reference geodesics of an inflow
/// grid, together with the reference lengths `ρ_{g₀}`.
#[derive(Clone, Debug)]
pub struct DistanceTable {
    pub alpha_in: Vec<f64>,
    pub alpha_out: Vec<f64>,
    pub rho: Vec<Option<f64>>,
    pub reference: Vec<Option<f64>>,
}

/// Distances for `g` between the entry and exit points of the `g₀`-rays of `cache`.
pub fn distance_table(g: &MetricField, cache: &RayCache) -> DistanceTable {
    let r = cache.grid.radius;
    let rows: Vec<(f64, f64, Option<f64>, Option<f64>)> = cache
        .grid
        .nodes
        .par_iter()
        .zip(&cache.rays)
        .map(|(n, ray)| {
            let Some(ray) = ray else { return (n.alpha, n.alpha, None, None) };
            let last = ray.pts.last().expect("ray samples");
            let out = last[1].atan2(last[0]);
            if wrap(out - n.alpha).abs() < 1e-6 {
                return (n.alpha, out, None, None);
            }
            let rho = boundary_distance_on(g, n.alpha, out, r, 1e-3).ok();
            (n.alpha, out, rho, Some(ray.length))
        })
        .collect();
    DistanceTable {
        alpha_in: rows.iter().map(|r| r.0).collect(),
        alpha_out: rows.iter().map(|r| r.1).collect(),
        rho: rows.iter().map(|r| r.2).collect(),
        reference: rows.iter().map(|r| r.3).collect(),
    }
}

/// Linearized travel-time sinogram `2(ρ_g − ρ_{g₀}) ≈ I_{g₀}(g − g₀)` and its inversion.
pub struct InteriorRecovery {
    pub sinogram: Sinogram,
    pub inversion: Inversion,
}

pub fn recover_metric_interior(
    table: &DistanceTable,
    g0: &MetricField,
    cache: &RayCache,
    img: &ImageGrid,
    radius: f64,
    max_iter: usize,
) -> Result<InteriorRecovery> {
    if table.rho.len() != cache.rays.len() {
        return Err(Error::GridMismatch("distance table and ray cache differ".into()));
    }
    let mut values = vec![0.0; table.rho.len()];
    let mut valid = vec![false; table.rho.len()];
    for k in 0..values.len() {
        if let (Some(a), Some(b)) = (table.rho[k], table.reference[k]) {
            values[k] = 2.0 * (a - b);
            valid[k] = true;
        }
    }
    let sinogram = Sinogram::from_grid(&cache.grid, 2, g0.id(), values, valid);
    let inversion = invert_xray(g0, &sinogram, cache, img, radius, max_iter)?;
    Ok(InteriorRecovery { sinogram, inversion })
}

/// Distance between the launch point of the central ray of a global probe and its exit point,
/// read off the arrival time of the exit trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArrivalDistance {
    pub alpha_in: f64,
    pub alpha_out: f64,
    pub rho: f64,
}

pub fn dn_arrival_distance(t: &CoefficientTriple, probe: &ProbeConfig) -> Result<ArrivalDistance> {
    let fam = RayFamily::global(t, probe, 9, 0.016)?;
    let ex = fam.exit()?;
    let (mut m0, mut m1) = (0.0, 0.0);
    for tt in trace_times(probe.lambda, probe.t_end) {
        let w = fam.exit_trace(&ex, tt).norm_sqr();
        m0 += w;
        m1 += w * tt;
    }
    if !(m0 > 0.0) {
        return Err(Error::Insufficient("no arrival within the recording window".into()));
    }
    Ok(ArrivalDistance { alpha_in: fam.alpha[fam.n_s() / 2], alpha_out: ex.alpha, rho: m1 / m0 - probe.t0 })
}

/// Outcome of the near-boundary blend.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Modification {
    /// Depth `δ^{1/M}` of the agreement band.
    pub depth: f64,
    pub clipped: bool,
    /// `‖g̃₁ − g̃‖_{C²}` and the reference scale `δ^{μ/2}`.
    pub change_c2: f64,
    pub predicted: f64,
}

/// Largest agreement depth for which the blend stays inside the boundary collar.
pub const MAX_BLEND_DEPTH: f64 = 0.3;

/// `g̃₁ = g̃ + χ(ρ/δ^{1/M})(g − g̃)` with `ρ = 1 − |x|`, `χ = 1` on `ρ ≤ 1` and `0` on `ρ ≥ 2`,
/// and the same blend for `b` and `q`.
pub fn modify_near_boundary(
    t_tilde: &CoefficientTriple,
    t: &CoefficientTriple,
    delta: f64,
    m_exp: f64,
    mu: f64,
) -> Result<(CoefficientTriple, Modification)> {
    if !(delta > 0.0) || !(m_exp > 0.0) {
        return Err(Error::Insufficient("blend needs δ > 0 and M > 0".into()));
    }
    let mut depth = delta.powf(1.0 / m_exp);
    let clipped = depth > MAX_BLEND_DEPTH;
    if clipped {
        log::warn!("blend depth {depth:.3} exceeds the collar, clipped to {MAX_BLEND_DEPTH}");
        depth = MAX_BLEND_DEPTH;
    }
    let r = t.domain.boundary_radius;
    let chi = move |x: &Point| chi1((r - x.norm()).max(0.0) / (2.0 * depth))[0];
    let (g1, g2) = (t_tilde.g.clone(), t.g.clone());
    let g = MetricField::new(format!("blend({},{})", g1.id(), g2.id()), move |x| {
        let a = g1.eval(x);
        a + (g2.eval(x) - a) * chi(x)
    });
    let (b1, b2) = (t_tilde.b.clone(), t.b.clone());
    let b = CovectorField::new(format!("blend({},{})", b1.id(), b2.id()), move |x| {
        let a = b1.eval(x);
        a + (b2.eval(x) - a) * chi(x)
    });
    let (q1, q2) = (t_tilde.q.clone(), t.q.clone());
    let q = ScalarField::new(format!("blend({},{})", q1.id(), q2.id()), move |x| {
        let a = q1.eval(x);
        a + (q2.eval(x) - a) * chi(x)
    });
    let out = CoefficientTriple { g, b, q, domain: t_tilde.domain };
    let diff = |x: &Point| -> Vec<f64> {
        let m = out.g.eval(x) - t_tilde.g.eval(x);
        vec![m[(0, 0)], m[(0, 1)], m[(1, 1)]]
    };
    let change_c2 = ck_norm(&diff, 2, &NormGrid::default());
    Ok((out.clone(), Modification { depth, clipped, change_c2, predicted: delta.powf(mu / 2.0) }))
}

/// Relative error of the recovered order-2 field against the solenoidal part of the truth.
pub fn interior_error(rec: &InteriorRecovery, truth: &GridTensor, radius: f64) -> f64 {
    rec.inversion.field.relative_error(truth, radius)
}

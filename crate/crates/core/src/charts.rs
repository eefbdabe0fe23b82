//! Ray-parametrized charts: boundary normal coordinates and semi-geodesic coordinates from an
//! exterior point.
//!
//! Both charts tabulate a one-parameter family of unit-speed geodesics `x(s, τ)` together with
//! the variation field `∂x/∂s` on a uniform `(s, τ)` grid and interpolate with six-point
//! Lagrange stencils.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{fd4, MetricField};
use crate::geodesics::{rk4_var, State};
use crate::linalg::{fornberg, lagrange_stencil, lagrange_stencil_deriv, lagrange_stencil_periodic};
use crate::manifold::CoefficientTriple;
use crate::{Mat2, Point, Vec2};

/// Tabulated geodesic family.
#[derive(Clone, Debug)]
pub struct RayTable {
    pub n_s: usize,
    pub n_t: usize,
    pub s0: f64,
    pub ds: f64,
    pub dt: f64,
    pub periodic: bool,
    /// `(x, ξ, ∂x/∂s, ∂ξ/∂s)` per node, index `i * n_t + k`.
    pub states: Vec<(State, State)>,
}

impl RayTable {
    pub fn build(
        g: &MetricField,
        n_s: usize,
        s0: f64,
        ds: f64,
        periodic: bool,
        n_t: usize,
        dt: f64,
        init: impl Fn(f64) -> (State, State) + Sync,
    ) -> Self {
        let rows: Vec<Vec<(State, State)>> = (0..n_s)
            .into_par_iter()
            .map(|i| {
                let (mut y, mut d) = init(s0 + i as f64 * ds);
                let mut row = Vec::with_capacity(n_t);
                row.push((y, d));
                for _ in 1..n_t {
                    (y, d) = rk4_var(g, &y, &d, dt);
                    row.push((y, d));
                }
                row
            })
            .collect();
        Self { n_s, n_t, s0, ds, dt, periodic, states: rows.into_iter().flatten().collect() }
    }

    pub fn node(&self, i: usize, k: usize) -> &(State, State) {
        &self.states[i * self.n_t + k]
    }

    fn s_stencil(&self, s: f64, deriv: bool) -> (Vec<usize>, [f64; 6]) {
        let f = (s - self.s0) / self.ds;
        let (start, w) = match (self.periodic, deriv) {
            (true, false) => lagrange_stencil_periodic::<6>(f),
            (false, false) => lagrange_stencil::<6>(f, self.n_s),
            (p, true) => lagrange_stencil_deriv::<6>(f, self.n_s, p),
        };
        let n = self.n_s as isize;
        ((0..6).map(|a| (start + a).rem_euclid(n) as usize).collect(), w)
    }

    /// Interpolated `(x, ξ, ∂x/∂s, ∂ξ/∂s)` at `(s, τ)`.
    pub fn eval(&self, s: f64, tau: f64) -> (State, State) {
        let (is, ws) = self.s_stencil(s, false);
        let (kt, wt) = lagrange_stencil::<6>(tau / self.dt, self.n_t);
        let mut y = [0.0; 4];
        let mut d = [0.0; 4];
        for (a, &i) in is.iter().enumerate() {
            for (b, wtb) in wt.iter().enumerate() {
                let (ny, nd) = self.node(i, (kt + b as isize) as usize);
                let w = ws[a] * wtb;
                for c in 0..4 {
                    y[c] += w * ny[c];
                    d[c] += w * nd[c];
                }
            }
        }
        (y, d)
    }

    pub fn point(&self, s: f64, tau: f64) -> Point {
        let (y, _) = self.eval(s, tau);
        Point::new(y[0], y[1])
    }

    /// `∂x/∂(s, τ)` at an interpolated point.
    pub fn jacobian(&self, g: &MetricField, s: f64, tau: f64) -> Mat2 {
        let (y, d) = self.eval(s, tau);
        let x = Point::new(y[0], y[1]);
        let v = g.inverse(&x) * Vec2::new(y[2], y[3]);
        Mat2::new(d[0], v[0], d[1], v[1])
    }

    pub fn tau_max(&self) -> f64 {
        (self.n_t - 1) as f64 * self.dt
    }

    pub fn s_max(&self) -> f64 {
        self.s0 + (self.n_s - 1) as f64 * self.ds
    }

    /// Newton inversion of `x(s, τ) = p` from a starting guess.
    pub fn invert(&self, g: &MetricField, p: &Point, guess: (f64, f64)) -> Result<(f64, f64)> {
        let (mut s, mut tau) = guess;
        for _ in 0..50 {
            let x = self.point(s, tau);
            let r = p - x;
            if r.norm() < 1e-13 {
                return Ok((s, tau));
            }
            let j = self.jacobian(g, s, tau);
            let det = j.determinant();
            if det.abs() < 1e-12 {
                return Err(Error::SingularJacobian { x: p[0], y: p[1] });
            }
            let step = crate::fields::inv2(&j) * r;
            let lim = 0.2;
            let scale = (lim / step.norm().max(1e-300)).min(1.0);
            s += step[0] * scale;
            tau += step[1] * scale;
            if !self.periodic {
                s = s.clamp(self.s0, self.s_max());
            }
            tau = tau.clamp(0.0, self.tau_max());
        }
        let r = (p - self.point(s, tau)).norm();
        if r < 1e-9 {
            Ok((s, tau))
        } else {
            Err(Error::SingularJacobian { x: p[0], y: p[1] })
        }
    }
}

/// Boundary normal coordinates `(x′, xⁿ)` on a collar of `∂Ω`: `x′ = α − α₀` is the boundary
/// angle (Euclidean arclength on the unit circle) and `xⁿ` the `g`-distance to `∂Ω`.
#[derive(Clone, Debug)]
pub struct BoundaryNormalChart {
    pub alpha0: f64,
    pub valid_depth: f64,
    pub table: RayTable,
    g: MetricField,
}

/// Inward unit conormal covector `−ν` at angle `alpha` of the circle of radius `r`.
pub fn inward_conormal(g: &MetricField, r: f64, alpha: f64) -> Vec2 {
    let n = Vec2::new(alpha.cos(), alpha.sin());
    let z = n * r;
    -n / n.dot(&(g.inverse(&z) * n)).sqrt()
}

impl BoundaryNormalChart {
    pub const DEFAULT_SAMPLES: usize = 512;
    pub const DEFAULT_DT: f64 = 2.5e-3;

    pub fn build(g: &MetricField, alpha0: f64, depth: f64) -> Result<Self> {
        Self::build_with(g, alpha0, depth, Self::DEFAULT_SAMPLES, Self::DEFAULT_DT, 1.0)
    }

    pub fn build_with(g: &MetricField, alpha0: f64, depth: f64, n_s: usize, dt: f64, radius: f64) -> Result<Self> {
        let n_t = (depth / dt).ceil() as usize + 7;
        let ds = 2.0 * std::f64::consts::PI / n_s as f64;
        let table = RayTable::build(g, n_s, 0.0, ds, true, n_t, dt, |s| {
            let a = alpha0 + s;
            let z = Point::new(a.cos(), a.sin()) * radius;
            let w = inward_conormal(g, radius, a);
            let dz = Vec2::new(-a.sin(), a.cos()) * radius;
            let dw = fd4(|p: &Point| inward_conormal(g, radius, p[0]), &Point::new(a, 0.0), 0, 1e-4);
            ([z[0], z[1], w[0], w[1]], [dz[0], dz[1], dw[0], dw[1]])
        });
        // focal collapse: first depth where the s-variation shrinks below 20% of its boundary size
        let mut valid = table.tau_max();
        'outer: for k in 0..n_t {
            for i in 0..n_s {
                let (y0, d0) = table.node(i, 0);
                let (y, d) = table.node(i, k);
                let j0 = (Mat2::new(d0[0], y0[2], d0[1], y0[3])).determinant().abs();
                let jk = (Mat2::new(d[0], y[2], d[1], y[3])).determinant().abs();
                if jk < 0.2 * j0 {
                    valid = k as f64 * dt * 0.8;
                    break 'outer;
                }
            }
        }
        if valid < depth.min(0.05) {
            return Err(Error::ChartCollapse { depth: valid });
        }
        Ok(Self { alpha0, valid_depth: valid.min(depth), table, g: g.clone() })
    }

    pub fn map(&self, xp: f64, xn: f64) -> Point {
        self.table.point(xp, xn)
    }

    pub fn jacobian(&self, xp: f64, xn: f64) -> Mat2 {
        self.table.jacobian(&self.g, xp, xn)
    }

    pub fn inverse(&self, p: &Point) -> Result<(f64, f64)> {
        let a = p[1].atan2(p[0]) - self.alpha0;
        let guess = (a.rem_euclid(2.0 * std::f64::consts::PI), (1.0 - p.norm()).max(0.0));
        self.table.invert(&self.g, p, guess)
    }

    /// Metric components `Jᵀ g J` in chart coordinates.
    pub fn chart_metric(&self, xp: f64, xn: f64) -> Mat2 {
        let j = self.jacobian(xp, xn);
        j.transpose() * self.g.eval(&self.map(xp, xn)) * j
    }

    fn node_metric(&self, i: usize, k: usize) -> Mat2 {
        let (y, d) = self.table.node(i, k);
        let x = Point::new(y[0], y[1]);
        let v = self.g.inverse(&x) * Vec2::new(y[2], y[3]);
        let j = Mat2::new(d[0], v[0], d[1], v[1]);
        j.transpose() * self.g.eval(&x) * j
    }

    fn node_jac(&self, i: usize, k: usize) -> (Point, Mat2) {
        let (y, d) = self.table.node(i, k);
        let x = Point::new(y[0], y[1]);
        let v = self.g.inverse(&x) * Vec2::new(y[2], y[3]);
        (x, Mat2::new(d[0], v[0], d[1], v[1]))
    }

    /// Boundary jets of the triple at table column `i` (boundary angle `α₀ + i ds`), in the
    /// normal gauge `b_n = 0`.
    pub fn jets_at_node(&self, t: &CoefficientTriple, i: usize) -> BoundaryJets {
        let n = self.table.n_s;
        let dt = self.table.dt;
        let ds = self.table.ds;
        let depth_nodes: Vec<f64> = (0..7).map(|k| k as f64 * dt).collect();
        let wy = fornberg(0.0, &depth_nodes, 2);
        // per column: h, b_α, b_n along depth
        let col = |ii: usize| -> ([f64; 7], [f64; 7], [f64; 7]) {
            let mut h = [0.0; 7];
            let mut ba = [0.0; 7];
            let mut bn = [0.0; 7];
            for k in 0..7 {
                let m = self.node_metric(ii, k);
                h[k] = 1.0 / m[(0, 0)];
                let (x, j) = self.node_jac(ii, k);
                let bc = j.transpose() * t.b.eval(&x);
                ba[k] = bc[0];
                bn[k] = bc[1];
            }
            (h, ba, bn)
        };
        let dy = |f: &[f64; 7], order: usize| -> f64 { (0..7).map(|k| wy[order][k] * f[k]).sum() };
        let offs: [isize; 5] = [-2, -1, 0, 1, 2];
        let cols: Vec<_> = offs.iter().map(|o| col((i as isize + o).rem_euclid(n as isize) as usize)).collect();
        let d1 = |v: &[f64; 5]| (8.0 * (v[3] - v[1]) - (v[4] - v[0])) / (12.0 * ds);
        let d2 = |v: &[f64; 5]| (-(v[4] + v[0]) + 16.0 * (v[3] + v[1]) - 30.0 * v[2]) / (12.0 * ds * ds);
        let h0: [f64; 5] = std::array::from_fn(|a| cols[a].0[0]);
        let h1: [f64; 5] = std::array::from_fn(|a| dy(&cols[a].0, 1));
        let b0: [f64; 5] = std::array::from_fn(|a| cols[a].1[0]);
        let bn0: [f64; 5] = std::array::from_fn(|a| cols[a].2[0]);
        let (hc, bac, _) = &cols[2];
        let z = self.table.node(i, 0).0;
        BoundaryJets {
            alpha: self.alpha0 + i as f64 * ds,
            h0: hc[0],
            h0x: d1(&h0),
            h0xx: d2(&h0),
            h1: h1[2],
            h1x: d1(&h1),
            h2: dy(hc, 2),
            b0: bac[0],
            b0x: d1(&b0),
            b1: dy(bac, 1) - d1(&bn0),
            q0: t.q.eval(&Point::new(z[0], z[1])),
        }
    }
}

/// Boundary jets in boundary normal coordinates, `h = g^{x′x′}`, `β = b_{x′}` in the gauge
/// `b_n = 0`; `x` subscripts are `∂/∂x′`, numeric suffixes count normal derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoundaryJets {
    pub alpha: f64,
    pub h0: f64,
    pub h0x: f64,
    pub h0xx: f64,
    pub h1: f64,
    pub h1x: f64,
    pub h2: f64,
    pub b0: f64,
    pub b0x: f64,
    pub b1: f64,
    pub q0: f64,
}

impl BoundaryJets {
    pub fn to_array(&self) -> [f64; 10] {
        [self.h0, self.h0x, self.h0xx, self.h1, self.h1x, self.h2, self.b0, self.b0x, self.b1, self.q0]
    }
}

/// Semi-geodesic coordinates `(ψ, xⁿ)` from an exterior point `z₀`: `ψ` is the `g`-angle of the
/// initial direction (measured from the direction towards the origin) and `xⁿ = ρ_g(·, z₀)`.
#[derive(Clone, Debug)]
pub struct SemiGeodesicChart {
    pub z0: Point,
    pub table: RayTable,
    /// `g`-orthonormal frame at `z₀`: towards the origin, and its rotation.
    pub frame: (Vec2, Vec2),
    g: MetricField,
}

impl SemiGeodesicChart {
    /// Rays covering the disk of radius `cover_radius`, integrated to arclength `length`.
    pub fn build(g: &MetricField, z0: &Point, cover_radius: f64, length: f64, n_s: usize, dt: f64) -> Result<Self> {
        if z0.norm() <= cover_radius {
            return Err(Error::Domain { x: z0[0], y: z0[1], radius: cover_radius });
        }
        let gm = g.eval(z0);
        let e0 = -z0 / z0.norm();
        let e0 = e0 / e0.dot(&(gm * e0)).sqrt();
        let e1 = Vec2::new(-e0[1], e0[0]);
        let e1 = e1 - e0 * e0.dot(&(gm * e1));
        let e1 = e1 / e1.dot(&(gm * e1)).sqrt();
        let psi_max = ((cover_radius + 0.05) / z0.norm()).min(1.0).asin() * 1.25;
        let psi_max = psi_max.min(std::f64::consts::FRAC_PI_2 - 1e-3);
        let ds = 2.0 * psi_max / (n_s - 1) as f64;
        let n_t = (length / dt).ceil() as usize + 1;
        let init = |psi: f64| {
            let v = e0 * psi.cos() + e1 * psi.sin();
            let dv = -e0 * psi.sin() + e1 * psi.cos();
            let w = gm * v;
            let dw = gm * dv;
            ([z0[0], z0[1], w[0], w[1]], [0.0, 0.0, dw[0], dw[1]])
        };
        let table = RayTable::build(g, n_s, -psi_max, ds, false, n_t, dt, init);
        Ok(Self { z0: *z0, table, frame: (e0, e1), g: g.clone() })
    }

    pub fn map(&self, psi: f64, xn: f64) -> Point {
        self.table.point(psi, xn)
    }

    pub fn inverse(&self, p: &Point) -> Result<(f64, f64)> {
        let gm = self.g.eval(&self.z0);
        let d = p - self.z0;
        let dist = d.dot(&(gm * d)).sqrt();
        let psi = (d.dot(&(gm * self.frame.1))).atan2(d.dot(&(gm * self.frame.0)));
        self.table.invert(&self.g, p, (psi, dist))
    }

    /// The phase `φ(x) = ρ_g(x, z₀)`.
    pub fn phase(&self, p: &Point) -> Result<f64> {
        Ok(self.inverse(p)?.1)
    }

    /// `∇φ = ξ` at `p`.
    pub fn phase_gradient(&self, p: &Point) -> Result<Vec2> {
        let (s, tau) = self.inverse(p)?;
        let (y, _) = self.table.eval(s, tau);
        Ok(Vec2::new(y[2], y[3]))
    }
}

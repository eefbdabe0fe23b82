//! Hamiltonian geodesic flow, boundary distance, the inflow manifold `Γ₋` and simplicity checks.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::MetricField;
use crate::manifold::Domain;
use crate::{Point, Vec2};

/// Phase-space state `(x, ξ)`.
pub type State = [f64; 4];

fn pack(x: &Point, xi: &Vec2) -> State {
    [x[0], x[1], xi[0], xi[1]]
}

pub fn rhs(g: &MetricField, y: &State) -> State {
    let (v, dxi) = g.hamilton_rhs(&Point::new(y[0], y[1]), &Vec2::new(y[2], y[3]));
    [v[0], v[1], dxi[0], dxi[1]]
}

fn axpy(y: &State, a: f64, k: &State) -> State {
    [y[0] + a * k[0], y[1] + a * k[1], y[2] + a * k[2], y[3] + a * k[3]]
}

pub fn rk4(g: &MetricField, y: &State, h: f64) -> State {
    let k1 = rhs(g, y);
    let k2 = rhs(g, &axpy(y, h / 2.0, &k1));
    let k3 = rhs(g, &axpy(y, h / 2.0, &k2));
    let k4 = rhs(g, &axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Linearized flow: directional derivative of the right-hand side by a central difference.
fn rhs_var(g: &MetricField, y: &State, d: &State) -> State {
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return [0.0; 4];
    }
    let eps = 1e-6 / n;
    let a = rhs(g, &axpy(y, eps, d));
    let b = rhs(g, &axpy(y, -eps, d));
    [0, 1, 2, 3].map(|i| (a[i] - b[i]) / (2.0 * eps))
}

/// One RK4 step of the flow together with a tangent vector `(δx, δξ)`.
pub fn rk4_var(g: &MetricField, y: &State, d: &State, h: f64) -> (State, State) {
    let k1 = rhs(g, y);
    let l1 = rhs_var(g, y, d);
    let (y2, d2) = (axpy(y, h / 2.0, &k1), axpy(d, h / 2.0, &l1));
    let k2 = rhs(g, &y2);
    let l2 = rhs_var(g, &y2, &d2);
    let (y3, d3) = (axpy(y, h / 2.0, &k2), axpy(d, h / 2.0, &l2));
    let k3 = rhs(g, &y3);
    let l3 = rhs_var(g, &y3, &d3);
    let (y4, d4) = (axpy(y, h, &k3), axpy(d, h, &l3));
    let k4 = rhs(g, &y4);
    let l4 = rhs_var(g, &y4, &d4);
    let mut yo = *y;
    let mut dout = *d;
    for i in 0..4 {
        yo[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        dout[i] += h / 6.0 * (l1[i] + 2.0 * l2[i] + 2.0 * l3[i] + l4[i]);
    }
    (yo, dout)
}

pub fn hamiltonian(g: &MetricField, y: &State) -> f64 {
    let xi = Vec2::new(y[2], y[3]);
    0.5 * xi.dot(&(g.inverse(&Point::new(y[0], y[1])) * xi))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoSample {
    pub t: f64,
    pub x: Point,
    pub xi: Vec2,
}

/// A sampled unit-speed geodesic from an inflow point to its exit.
#[derive(Clone, Debug)]
pub struct Geodesic {
    pub samples: Vec<GeoSample>,
    pub entry: (Point, Vec2),
    pub exit_point: Point,
    pub exit_xi: Vec2,
    pub exit_time: f64,
    pub converged: bool,
    /// Tangent vector `(δx, δξ)` at exit when a variation was integrated.
    pub exit_variation: Option<State>,
}

#[derive(Clone, Copy, Debug)]
pub struct ShootOptions {
    pub step: f64,
    pub max_steps: usize,
    /// Radius of the circle at which the ray starts and exits.
    pub radius: f64,
    pub record: bool,
}

impl ShootOptions {
    /// Default step `1e-3 × diameter` on the circle of radius `radius`.
    pub fn new(radius: f64) -> Self {
        Self { step: 2e-3 * radius, max_steps: 200_000, radius, record: true }
    }
    pub fn step(mut self, h: f64) -> Self {
        self.step = h;
        self
    }
    pub fn record(mut self, record: bool) -> Self {
        self.record = record;
        self
    }
}

fn radius_of(y: &State) -> f64 {
    (y[0] * y[0] + y[1] * y[1]).sqrt()
}

/// Integrate from `(z, ω)` until the ray leaves the circle of `opts.radius`; the exit time is
/// located by bisection on the last step length.
pub fn shoot(g: &MetricField, z: &Point, omega: &Vec2, opts: &ShootOptions) -> Result<Geodesic> {
    shoot_impl(g, z, omega, None, opts)
}

/// As [`shoot`], also integrating the linearized flow from the tangent vector `var`.
pub fn shoot_with_variation(g: &MetricField, z: &Point, omega: &Vec2, var: &State, opts: &ShootOptions) -> Result<Geodesic> {
    shoot_impl(g, z, omega, Some(*var), opts)
}

fn shoot_impl(g: &MetricField, z: &Point, omega: &Vec2, var: Option<State>, opts: &ShootOptions) -> Result<Geodesic> {
    let r = opts.radius;
    let h = opts.step;
    let mut y = pack(z, omega);
    let mut d = var.unwrap_or([0.0; 4]);
    let mut t = 0.0;
    let mut samples = Vec::new();
    let push = |s: &mut Vec<GeoSample>, t: f64, y: &State| {
        s.push(GeoSample { t, x: Point::new(y[0], y[1]), xi: Vec2::new(y[2], y[3]) })
    };
    if opts.record {
        push(&mut samples, t, &y);
    }
    let step = |y: &State, d: &State, h: f64| -> (State, State) {
        match var {
            Some(_) => rk4_var(g, y, d, h),
            None => (rk4(g, y, h), *d),
        }
    };
    // the start sits on the circle; leave it before testing for exit
    let mut inside_once = false;
    for n in 0..opts.max_steps {
        let (yn, dn) = step(&y, &d, h);
        if !yn.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { steps: n });
        }
        let rn = radius_of(&yn);
        if rn < r * (1.0 - 1e-12) {
            inside_once = true;
        }
        if inside_once && rn >= r {
            // bisection on sub-step s ∈ (0, h]
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > 1e-13 {
                let mid = 0.5 * (lo + hi);
                if radius_of(&step(&y, &d, mid).0) >= r {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let s = 0.5 * (lo + hi);
            let (ye, de) = step(&y, &d, s);
            t += s;
            if opts.record {
                push(&mut samples, t, &ye);
            }
            return Ok(Geodesic {
                samples,
                entry: (*z, *omega),
                exit_point: Point::new(ye[0], ye[1]),
                exit_xi: Vec2::new(ye[2], ye[3]),
                exit_time: t,
                converged: true,
                exit_variation: var.map(|_| de),
            });
        }
        if !inside_once && n > 4 {
            // never entered: tangential or outgoing
            return Err(Error::Diverged { steps: n });
        }
        y = yn;
        d = dn;
        t += h;
        if opts.record {
            push(&mut samples, t, &y);
        }
    }
    Err(Error::Diverged { steps: opts.max_steps })
}

/// Integrate `n` fixed steps of length `h`, returning all `n + 1` states.
pub fn integrate_fixed(g: &MetricField, z: &Point, xi: &Vec2, h: f64, n: usize) -> Vec<State> {
    let mut y = pack(z, xi);
    let mut out = Vec::with_capacity(n + 1);
    out.push(y);
    for _ in 0..n {
        y = rk4(g, &y, h);
        out.push(y);
    }
    out
}

/// `g`-orthonormal frame at a point of the circle of radius `r` at angle `alpha`: inward unit
/// normal vector and counter-clockwise unit tangent vector.
pub fn boundary_frame(g: &MetricField, r: f64, alpha: f64) -> (Vec2, Vec2) {
    let z = Point::new(alpha.cos(), alpha.sin()) * r;
    let gm = g.eval(&z);
    let gi = g.inverse(&z);
    let nu = Vec2::new(alpha.cos(), alpha.sin());
    let nsharp = gi * nu / nu.dot(&(gi * nu)).sqrt();
    let n_in = -nsharp;
    let tan = Vec2::new(-alpha.sin(), alpha.cos());
    let tperp = tan - n_in * n_in.dot(&(gm * tan));
    (n_in, tperp / tperp.dot(&(gm * tperp)).sqrt())
}

/// Inflow point and unit covector for boundary angle `alpha` and inflow angle `beta` measured
/// from the inward normal.
pub fn inflow(g: &MetricField, r: f64, alpha: f64, beta: f64) -> (Point, Vec2) {
    let z = Point::new(alpha.cos(), alpha.sin()) * r;
    let (n, tau) = boundary_frame(g, r, alpha);
    let v = n * beta.cos() + tau * beta.sin();
    (z, g.eval(&z) * v)
}

/// `d(z, ω)/dβ` as a phase-space tangent vector.
pub fn inflow_beta_derivative(g: &MetricField, r: f64, alpha: f64, beta: f64) -> State {
    let z = Point::new(alpha.cos(), alpha.sin()) * r;
    let (n, tau) = boundary_frame(g, r, alpha);
    let dv = -n * beta.sin() + tau * beta.cos();
    let dw = g.eval(&z) * dv;
    [0.0, 0.0, dw[0], dw[1]]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InflowNode {
    pub alpha: f64,
    pub beta: f64,
    pub z: Point,
    pub omega: Vec2,
    /// `dμ = |⟨ω, ν⟩| dS_z dS_ω` for this cell.
    pub weight: f64,
}

/// Tensor grid over `Γ₋` of the circle of radius `radius`.
#[derive(Clone, Debug)]
pub struct InflowGrid {
    pub n_alpha: usize,
    pub n_beta: usize,
    pub delta_beta: f64,
    pub radius: f64,
    pub nodes: Vec<InflowNode>,
}

impl InflowGrid {
    pub const DEFAULT_DELTA_BETA: f64 = 0.02;

    pub fn new(g: &MetricField, radius: f64, n_alpha: usize, n_beta: usize, delta_beta: f64) -> Self {
        let da = 2.0 * PI / n_alpha as f64;
        let db = (PI - 2.0 * delta_beta) / n_beta as f64;
        let nodes = (0..n_alpha * n_beta)
            .map(|k| {
                let (i, j) = (k / n_beta, k % n_beta);
                let alpha = i as f64 * da;
                let beta = -PI / 2.0 + delta_beta + (j as f64 + 0.5) * db;
                let (z, omega) = inflow(g, radius, alpha, beta);
                let tan = Vec2::new(-alpha.sin(), alpha.cos()) * radius;
                let ds = tan.dot(&(g.eval(&z) * tan)).sqrt();
                InflowNode { alpha, beta, z, omega, weight: beta.cos() * ds * da * db }
            })
            .collect();
        Self { n_alpha, n_beta, delta_beta, radius, nodes }
    }

    /// Default 96×96 grid on `∂Ω₁`.
    pub fn default_for(g: &MetricField, domain: &Domain) -> Self {
        Self::new(g, domain.extended_radius, 96, 96, Self::DEFAULT_DELTA_BETA)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_measure(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Exit angle and its derivative with respect to the inflow angle.
fn exit_angle(g: &MetricField, r: f64, alpha: f64, beta: f64, h: f64) -> Result<(f64, f64, Geodesic)> {
    let (z, w) = inflow(g, r, alpha, beta);
    let var = inflow_beta_derivative(g, r, alpha, beta);
    let geo = shoot_with_variation(g, &z, &w, &var, &ShootOptions::new(r).step(h).record(false))?;
    let d = geo.exit_variation.unwrap();
    let x = geo.exit_point;
    let v = g.inverse(&x) * geo.exit_xi;
    let xhat = x / x.norm();
    let dx = Vec2::new(d[0], d[1]);
    let dt = -xhat.dot(&dx) / xhat.dot(&v);
    let dz = dx + v * dt;
    let a = x[1].atan2(x[0]);
    Ok((a, Vec2::new(-a.sin(), a.cos()).dot(&dz) / x.norm(), geo))
}

/// Length of the geodesic joining the boundary points at angles `a` and `b` on the circle of
/// radius `domain.boundary_radius`.
pub fn boundary_distance(g: &MetricField, a: f64, b: f64, domain: &Domain) -> Result<f64> {
    boundary_distance_on(g, a, b, domain.boundary_radius, 1e-3)
}

pub fn boundary_distance_on(g: &MetricField, a: f64, b: f64, r: f64, h: f64) -> Result<f64> {
    if wrap(b - a).abs() < 1e-12 {
        return Err(Error::Insufficient("boundary distance needs distinct points".into()));
    }
    let za = Point::new(a.cos(), a.sin()) * r;
    let zb = Point::new(b.cos(), b.sin()) * r;
    let dir = (zb - za).normalize();
    let (n, tau) = (-za / r, Vec2::new(-a.sin(), a.cos()));
    let lim = PI / 2.0 - 1e-6;
    let mut beta = dir.dot(&tau).atan2(dir.dot(&n)).clamp(-lim, lim);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..30 {
        let (ea, dea, geo) = exit_angle(g, r, a, beta, h)?;
        let f = wrap(ea - b);
        if f.abs() < best.0 {
            best = (f.abs(), geo.exit_time);
        }
        if f.abs() < 1e-11 {
            return Ok(geo.exit_time);
        }
        if dea.abs() < 1e-12 {
            break;
        }
        let nb = beta - f / dea;
        if !(nb.abs() < lim) {
            break;
        }
        beta = nb;
    }
    // fallback: golden section on |exit mismatch| over a bracket around the best guess
    let mis = |bt: f64| exit_angle(g, r, a, bt, h).map(|(e, _, geo)| (wrap(e - b).abs(), geo.exit_time));
    let (mut lo, mut hi) = (-lim, lim);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - gr * (hi - lo);
    let mut d = lo + gr * (hi - lo);
    let (mut fc, mut fd) = (mis(c)?, mis(d)?);
    for _ in 0..200 {
        if fc.0 < fd.0 {
            hi = d;
            d = c;
            fd = fc;
            c = hi - gr * (hi - lo);
            fc = mis(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + gr * (hi - lo);
            fd = mis(d)?;
        }
        let cur = if fc.0 < fd.0 { fc } else { fd };
        if cur.0 < best.0 {
            best = cur;
        }
        if best.0 < 1e-10 || hi - lo < 1e-14 {
            break;
        }
    }
    if best.0 < 1e-8 {
        Ok(best.1)
    } else {
        Err(Error::Shooting { residual: best.0 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimplicityReport {
    pub boundary_convexity_min: f64,
    pub min_jacobi: f64,
    pub is_simple: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct SimplicityOptions {
    pub convexity_threshold: f64,
    pub jacobi_threshold: f64,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub t_min: f64,
    pub step: f64,
}

impl Default for SimplicityOptions {
    fn default() -> Self {
        Self { convexity_threshold: 1e-3, jacobi_threshold: 1e-3, n_alpha: 24, n_beta: 25, t_min: 0.05, step: 4e-3 }
    }
}

/// Geodesic curvature of the boundary circle with respect to the inward normal.
pub fn boundary_curvature(g: &MetricField, r: f64, alpha: f64) -> f64 {
    let z = Point::new(alpha.cos(), alpha.sin()) * r;
    let t = Vec2::new(-alpha.sin(), alpha.cos()) * r;
    let acc0 = -z;
    let gam = g.christoffel(&z);
    let mut acc = acc0;
    for (k, gk) in gam.iter().enumerate() {
        for i in 0..2 {
            for j in 0..2 {
                acc[k] += gk[i][j] * t[i] * t[j];
            }
        }
    }
    let gm = g.eval(&z);
    let (n, _) = boundary_frame(g, r, alpha);
    let tt = t.dot(&(gm * t));
    n.dot(&(gm * acc)) / tt
}

/// Convexity of `∂Ω` and absence of conjugate points along a fan of rays.
pub fn simplicity_check(g: &MetricField, domain: &Domain, opts: &SimplicityOptions) -> SimplicityReport {
    let r = domain.boundary_radius;
    let conv = (0..4 * opts.n_alpha)
        .map(|i| boundary_curvature(g, r, 2.0 * PI * i as f64 / (4 * opts.n_alpha) as f64))
        .fold(f64::INFINITY, f64::min);
    let rays: Vec<(f64, f64)> = (0..opts.n_alpha * opts.n_beta)
        .map(|k| {
            let a = 2.0 * PI * (k / opts.n_beta) as f64 / opts.n_alpha as f64;
            let b = -PI / 2.0 + 0.05 + (PI - 0.1) * (k % opts.n_beta) as f64 / (opts.n_beta - 1) as f64;
            (a, b)
        })
        .collect();
    let jac = rays
        .par_iter()
        .map(|&(a, b)| min_normalized_jacobi(g, r, a, b, opts.t_min, opts.step))
        .reduce(|| f64::INFINITY, f64::min);
    SimplicityReport {
        boundary_convexity_min: conv,
        min_jacobi: jac,
        is_simple: conv > opts.convexity_threshold && jac > opts.jacobi_threshold,
    }
}

/// `min_t J(t)/t` for the normal Jacobi field with `J(0) = 0`, `J'(0) = 1` along one ray;
/// negative once a conjugate point is passed.
pub fn min_normalized_jacobi(g: &MetricField, r: f64, alpha: f64, beta: f64, t_min: f64, h: f64) -> f64 {
    let (z, w) = inflow(g, r, alpha, beta);
    let mut y = pack(&z, &w);
    let mut d = inflow_beta_derivative(g, r, alpha, beta);
    let unit_perp = |x: &Point, xi: &Vec2| {
        let gm = g.eval(x);
        let v = g.inverse(x) * xi;
        let perp = Vec2::new(-v[1], v[0]);
        let perp = perp - v * v.dot(&(gm * perp));
        (gm * perp) / perp.dot(&(gm * perp)).sqrt()
    };
    // orient the normal so that J'(0) = +1
    let sign = unit_perp(&z, &w).dot(&(g.inverse(&z) * Vec2::new(d[2], d[3]))).signum();
    let mut t = 0.0;
    let mut best = f64::INFINITY;
    for _ in 0..200_000 {
        let (yn, dn) = rk4_var(g, &y, &d, h);
        t += h;
        y = yn;
        d = dn;
        let x = Point::new(y[0], y[1]);
        if x.norm() > r {
            break;
        }
        let j = sign * unit_perp(&x, &Vec2::new(y[2], y[3])).dot(&Vec2::new(d[0], d[1]));
        if t >= t_min {
            best = best.min(j / t);
        }
    }
    best
}

/// `sup_t |x(t) − x̃(t)| + |ξ(t) − ξ̃(t)|` for the two flows from the same initial data.
pub fn flow_continuity_gap(g: &MetricField, gt: &MetricField, z: &Point, omega: &Vec2, r: f64) -> Result<f64> {
    let opts = ShootOptions::new(r).record(false);
    let t_end = shoot(g, z, omega, &opts)?.exit_time.min(shoot(gt, z, omega, &opts)?.exit_time);
    let n = ((t_end / opts.step).ceil() as usize).max(2);
    let h = t_end / n as f64;
    let a = integrate_fixed(g, z, omega, h, n);
    let b = integrate_fixed(gt, z, omega, h, n);
    Ok(a.iter()
        .zip(&b)
        .map(|(p, q)| {
            Vec2::new(p[0] - q[0], p[1] - q[1]).norm() + Vec2::new(p[2] - q[2], p[3] - q[3]).norm()
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    fn opts() -> ShootOptions {
        ShootOptions::new(1.0)
    }

    #[test]
    fn euclid_diameter() {
        let g = MetricField::euclid();
        let geo = shoot(&g, &Point::new(-1.0, 0.0), &Vec2::new(1.0, 0.0), &opts()).unwrap();
        assert!((geo.exit_point - Point::new(1.0, 0.0)).norm() < 1e-10);
        assert!((geo.exit_time - 2.0).abs() < 1e-10);
    }

    #[test]
    fn conformal_scaling_doubles_length() {
        let g = registry::metric("conformal:2").unwrap();
        // unit covector for 4δ along x is ξ = (2, 0)
        let geo = shoot(&g, &Point::new(-1.0, 0.0), &Vec2::new(2.0, 0.0), &opts()).unwrap();
        assert!((geo.exit_point - Point::new(1.0, 0.0)).norm() < 1e-10);
        assert!((geo.exit_time - 4.0).abs() < 1e-10);
    }

    #[test]
    fn gauss1_step_refinement_and_energy() {
        let g = registry::metric("gauss1").unwrap();
        let (z, w) = inflow(&g, 1.0, PI, 0.3);
        let a = shoot(&g, &z, &w, &opts().step(2e-3)).unwrap();
        let b = shoot(&g, &z, &w, &opts().step(5e-4)).unwrap();
        assert!((a.exit_point - b.exit_point).norm() < 1e-8);
        assert!((a.exit_time - b.exit_time).abs() < 1e-8);
        for s in &a.samples {
            let h = hamiltonian(&g, &[s.x[0], s.x[1], s.xi[0], s.xi[1]]);
            assert!((h - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn reversibility() {
        let g = registry::metric("gauss1+perturb:2,0.05").unwrap();
        let (z, w) = inflow(&g, 1.0, 0.4, -0.7);
        let a = shoot(&g, &z, &w, &opts()).unwrap();
        let back = shoot(&g, &a.exit_point, &(-a.exit_xi), &opts()).unwrap();
        assert!((back.exit_point - z).norm() < 1e-7);
    }

    #[test]
    fn euclid_boundary_distances() {
        let g = MetricField::euclid();
        let d = Domain::default();
        assert!((boundary_distance(&g, 0.0, PI, &d).unwrap() - 2.0).abs() < 1e-8);
        assert!((boundary_distance(&g, 0.0, PI / 2.0, &d).unwrap() - 2f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn santalo_measure_euclid() {
        let g = MetricField::euclid();
        let grid = InflowGrid::new(&g, 1.0, 64, 64, 0.02);
        let exact = 2.0 * PI * 2.0 * (PI / 2.0 - 0.02).sin();
        assert!((grid.total_measure() - exact).abs() < 1e-4 * exact);
        for n in &grid.nodes {
            let nu = Vec2::new(n.alpha.cos(), n.alpha.sin());
            assert!(n.omega.dot(&nu) < 0.0);
            assert!((n.omega.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn euclid_is_simple_and_trap_is_not() {
        let d = Domain::default();
        let o = SimplicityOptions::default();
        let r = simplicity_check(&MetricField::euclid(), &d, &o);
        assert!(r.is_simple && (r.boundary_convexity_min - 1.0).abs() < 1e-6 && (r.min_jacobi - 1.0).abs() < 1e-6);
        let r = simplicity_check(&registry::metric("trap:0.9").unwrap(), &d, &o);
        assert!(!r.is_simple, "{r:?}");
    }

    #[test]
    fn flow_gap_vanishes_for_identical_metrics() {
        let g = registry::metric("gauss1").unwrap();
        let (z, w) = inflow(&g, 1.0, 1.0, 0.2);
        assert!(flow_continuity_gap(&g, &g, &z, &w, 1.0).unwrap() < 1e-14);
    }
}

//! The disk domain, coefficient triples, pointwise differential operators and the conservative
//! discretization of `P` on logically rectangular grids.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{CovectorField, MetricField, ScalarField};
use crate::{Mat2, Point, Vec2, C64};

/// The unit disk `Ω` inside the extended disk `Ω₁`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub boundary_radius: f64,
    pub extended_radius: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Self { boundary_radius: 1.0, extended_radius: 1.15 }
    }
}

impl Domain {
    pub fn new(boundary_radius: f64, extended_radius: f64) -> Result<Self> {
        if !(boundary_radius > 0.0 && extended_radius > boundary_radius) {
            return Err(Error::Insufficient(format!(
                "extended radius {extended_radius} must exceed boundary radius {boundary_radius}"
            )));
        }
        Ok(Self { boundary_radius, extended_radius })
    }

    pub fn boundary_point(&self, alpha: f64) -> Point {
        Point::new(alpha.cos(), alpha.sin()) * self.boundary_radius
    }

    /// Boundary tangent `dz/dα`.
    pub fn boundary_tangent(&self, alpha: f64) -> Vec2 {
        Vec2::new(-alpha.sin(), alpha.cos()) * self.boundary_radius
    }

    /// Outward unit conormal at the boundary point of angle `alpha`, normalized so `g^{ij}ν_iν_j = 1`.
    pub fn conormal(&self, g: &MetricField, alpha: f64) -> Vec2 {
        let n = Vec2::new(alpha.cos(), alpha.sin());
        let gi = g.inverse(&self.boundary_point(alpha));
        n / n.dot(&(gi * n)).sqrt()
    }

    pub fn in_extended(&self, x: &Point) -> Result<()> {
        if x.norm() > self.extended_radius * (1.0 + 1e-12) || !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain { x: x[0], y: x[1], radius: self.extended_radius });
        }
        Ok(())
    }

    pub fn inside(&self, x: &Point) -> bool {
        x.norm() < self.boundary_radius
    }
}

/// The coefficient triple `(g, b, q)` on `Ω₁`.
#[derive(Clone, Debug)]
pub struct CoefficientTriple {
    pub g: MetricField,
    pub b: CovectorField,
    pub q: ScalarField,
    pub domain: Domain,
}

impl CoefficientTriple {
    pub fn new(g: MetricField, b: CovectorField, q: ScalarField) -> Self {
        Self { g, b, q, domain: Domain::default() }
    }

    /// Build from registry ids.
    pub fn from_ids(metric: &str, covector: &str, potential: &str) -> Result<Self> {
        Ok(Self::new(crate::registry::metric(metric)?, crate::registry::covector(covector)?, crate::registry::potential(potential)?))
    }

    pub fn euclid() -> Self {
        Self::new(MetricField::euclid(), CovectorField::zero(), ScalarField::zero())
    }

    pub fn label(&self) -> String {
        format!("{} | {} | {}", self.g.id(), self.b.id(), self.q.id())
    }

    /// Coefficients of `P` at `x` in a general coordinate system, as needed by the discretization.
    pub fn local(&self, x: &Point) -> LocalCoefficients {
        let gi = self.g.inverse(x);
        LocalCoefficients { sqrt_g: self.g.det(x).sqrt(), ginv: gi, b: self.b.eval(x), q: self.q.eval(x) }
    }
}

/// Laplace–Beltrami `Δ_g u = g^{ij}∂_i∂_j u + (1/√G)∂_j(√G g^{ij}) ∂_i u` at `x`.
pub fn laplace_beltrami(g: &MetricField, u: &ScalarField, x: &Point, domain: &Domain) -> Result<f64> {
    domain.in_extended(x)?;
    let gi = g.inverse(x);
    let h = u.hess(x);
    let c = g.divergence_vector(x);
    Ok((gi.component_mul(&h)).sum() + c.dot(&u.grad(x)))
}

/// Lower-order coefficients of `P` written as `-Δ_g + B·∇ + Q` with `B = 2i b♯`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedBq {
    /// `2 b♯`, the imaginary part of `B`.
    pub b_vec: Vec2,
    /// `q + |b|²_g`
    pub q_re: f64,
    /// `div_g b♯`
    pub q_im: f64,
}

pub fn derived_bq(t: &CoefficientTriple, x: &Point) -> Result<DerivedBq> {
    t.domain.in_extended(x)?;
    let gi = t.g.inverse(x);
    let b = t.b.eval(x);
    let sharp = gi * b;
    let jac = t.b.jacobian(x);
    let div = t.g.divergence_vector(x).dot(&b) + (gi * jac).trace();
    Ok(DerivedBq { b_vec: 2.0 * sharp, q_re: t.q.eval(x) + b.dot(&sharp), q_im: div })
}

/// Coefficients at one point of a coordinate chart: `√G`, `G^{-1}`, `b` (chart components) and `q`.
#[derive(Clone, Copy, Debug)]
pub struct LocalCoefficients {
    pub sqrt_g: f64,
    pub ginv: Mat2,
    pub b: Vec2,
    pub q: f64,
}

impl LocalCoefficients {
    /// Express Cartesian coefficients in logical coordinates `ξ` with `x = x(ξ)` and jacobian
    /// `jac = ∂x/∂ξ`.
    pub fn pull_back(&self, jac: &Mat2) -> Self {
        let ji = crate::fields::inv2(jac);
        Self {
            sqrt_g: self.sqrt_g * jac.determinant().abs(),
            ginv: ji * self.ginv * ji.transpose(),
            b: jac.transpose() * self.b,
            q: self.q,
        }
    }
}

/// Conservative, exactly self-adjoint second-order discretization of `P` on a logically
/// rectangular `n1 × n2` grid, optionally periodic in the second index.
///
/// The scheme is the variational derivative of the discrete energy
/// `Σ_faces √G G^{kk} |D_k u|² + Σ_corners 2 √G G^{12} Re(C_1 u · conj C_2 u)` with magnetic
/// differences `D_k u = δ_k u − i b_k ū`, so `⟨Pu, v⟩ = ⟨u, Pv⟩` holds in the `√G`-weighted inner
/// product for every pair of grid functions.
#[derive(Clone, Debug)]
pub struct StencilOperator {
    pub n1: usize,
    pub n2: usize,
    pub periodic2: bool,
    pub d1: f64,
    pub d2: f64,
    pub sqrt_g: Vec<f64>,
    pub q: Vec<f64>,
    inv_sqrt_g: Vec<f64>,
    f1_a: Vec<f64>,
    f1_b: Vec<f64>,
    f2_a: Vec<f64>,
    f2_b: Vec<f64>,
    c_a: Vec<f64>,
    c_b: Vec<[f64; 2]>,
    /// When set, row 0 is a single pole node shared by all `n2` copies, with this cell mass.
    pub pole_mass: Option<f64>,
}

impl StencilOperator {
    /// Sample coefficients via `coeff(ξ1, ξ2)`, node `(i, j)` sitting at
    /// `(origin.0 + i d1, origin.1 + j d2)`.
    pub fn build(
        n1: usize,
        n2: usize,
        periodic2: bool,
        origin: (f64, f64),
        d: (f64, f64),
        coeff: impl Fn(f64, f64) -> LocalCoefficients + Sync,
    ) -> Self {
        let (d1, d2) = d;
        let m2 = if periodic2 { n2 } else { n2 - 1 };
        let at = |a: f64, b: f64| coeff(origin.0 + a * d1, origin.1 + b * d2);
        let nodes: Vec<LocalCoefficients> =
            (0..n1 * n2).into_par_iter().map(|k| at((k / n2) as f64, (k % n2) as f64)).collect();
        let f1: Vec<LocalCoefficients> = (0..(n1 - 1) * n2)
            .into_par_iter()
            .map(|k| at((k / n2) as f64 + 0.5, (k % n2) as f64))
            .collect();
        let f2: Vec<LocalCoefficients> =
            (0..n1 * m2).into_par_iter().map(|k| at((k / m2) as f64, (k % m2) as f64 + 0.5)).collect();
        let cr: Vec<LocalCoefficients> = (0..(n1 - 1) * m2)
            .into_par_iter()
            .map(|k| at((k / m2) as f64 + 0.5, (k % m2) as f64 + 0.5))
            .collect();
        Self {
            n1,
            n2,
            periodic2,
            d1,
            d2,
            sqrt_g: nodes.iter().map(|c| c.sqrt_g).collect(),
            q: nodes.iter().map(|c| c.q).collect(),
            inv_sqrt_g: nodes.iter().map(|c| if c.sqrt_g > 0.0 { 1.0 / c.sqrt_g } else { 0.0 }).collect(),
            f1_a: f1.iter().map(|c| c.sqrt_g * c.ginv[(0, 0)]).collect(),
            f1_b: f1.iter().map(|c| c.b[0]).collect(),
            f2_a: f2.iter().map(|c| c.sqrt_g * c.ginv[(1, 1)]).collect(),
            f2_b: f2.iter().map(|c| c.b[1]).collect(),
            c_a: cr.iter().map(|c| c.sqrt_g * c.ginv[(0, 1)]).collect(),
            c_b: cr.iter().map(|c| [c.b[0], c.b[1]]).collect(),
            pole_mass: None,
        }
    }

    /// Treat row 0 as a coordinate pole (polar grids): the copies are tied and the cell mass
    /// replaces the vanishing `√G`.
    pub fn with_pole(mut self, mass: f64) -> Self {
        self.pole_mass = Some(mass);
        self
    }

    /// Quadrature weight of node `k` in the discrete inner product.
    pub fn weight(&self, k: usize) -> f64 {
        match self.pole_mass {
            Some(m) if k < self.n2 => m / self.n2 as f64,
            _ => self.sqrt_g[k],
        }
    }

    fn m2(&self) -> usize {
        if self.periodic2 {
            self.n2
        } else {
            self.n2 - 1
        }
    }

    #[inline]
    fn up2(&self, j: usize) -> usize {
        if j + 1 == self.n2 {
            0
        } else {
            j + 1
        }
    }

    /// Largest eigenvalue bound of `P - q` (Gershgorin on the principal part), used for the CFL limit.
    pub fn spectral_bound(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                let k = i * self.n2 + j;
                let mut s = 0.0;
                if i + 1 < self.n1 {
                    s += self.f1_a[i * self.n2 + j] / (self.d1 * self.d1);
                }
                if i > 0 {
                    s += self.f1_a[(i - 1) * self.n2 + j] / (self.d1 * self.d1);
                }
                let m2 = self.m2();
                if j < m2 {
                    s += self.f2_a[i * m2 + j] / (self.d2 * self.d2);
                }
                let jm = if j > 0 { Some(j - 1) } else if self.periodic2 { Some(self.n2 - 1) } else { None };
                if let Some(jm) = jm {
                    s += self.f2_a[i * m2 + jm] / (self.d2 * self.d2);
                }
                if self.sqrt_g[k] > 0.0 {
                    best = best.max(2.0 * s / self.sqrt_g[k]);
                }
            }
        }
        if let Some(m) = self.pole_mass {
            let s: f64 = self.f1_a[..self.n2].iter().sum::<f64>() / (self.d1 * self.d1);
            best = best.max(2.0 * s / m);
        }
        best
    }

    /// `out = P u` at every node. Node values on Dirichlet rows are the caller's concern.
    pub fn apply(&self, u: &[C64], out: &mut [C64], scratch: &mut OperatorScratch) {
        let (n1, n2, m2) = (self.n1, self.n2, self.m2());
        let (r1, r2) = (1.0 / self.d1, 1.0 / self.d2);
        let iu = C64::i();
        scratch.resize(n1, n2, m2);
        scratch.f1.par_chunks_mut(n2).enumerate().for_each(|(i, row)| {
            for (j, f) in row.iter_mut().enumerate() {
                let (a, b) = (u[i * n2 + j], u[(i + 1) * n2 + j]);
                let k = i * n2 + j;
                *f = ((b - a) * r1 - iu * self.f1_b[k] * 0.5 * (a + b)) * self.f1_a[k];
            }
        });
        scratch.f2.par_chunks_mut(m2).enumerate().for_each(|(i, row)| {
            for (j, f) in row.iter_mut().enumerate() {
                let (a, b) = (u[i * n2 + j], u[i * n2 + self.up2(j)]);
                let k = i * m2 + j;
                *f = ((b - a) * r2 - iu * self.f2_b[k] * 0.5 * (a + b)) * self.f2_a[k];
            }
        });
        scratch.c.par_chunks_mut(m2).enumerate().for_each(|(i, row)| {
            for (j, f) in row.iter_mut().enumerate() {
                let k = i * m2 + j;
                let jp = self.up2(j);
                let (a00, a10, a01, a11) = (u[i * n2 + j], u[(i + 1) * n2 + j], u[i * n2 + jp], u[(i + 1) * n2 + jp]);
                let avg = 0.25 * (a00 + a10 + a01 + a11);
                let [b1, b2] = self.c_b[k];
                let c1 = (a10 + a11 - a00 - a01) * (0.5 * r1) - iu * b1 * avg;
                let c2 = (a01 + a11 - a00 - a10) * (0.5 * r2) - iu * b2 * avg;
                *f = [c1 * self.c_a[k], c2 * self.c_a[k]];
            }
        });
        let (f1, f2, cf) = (&scratch.f1, &scratch.f2, &scratch.c);
        out.par_chunks_mut(n2).enumerate().for_each(|(i, row)| {
            for (j, o) in row.iter_mut().enumerate() {
                let mut s = C64::new(0.0, 0.0);
                if i + 1 < n1 {
                    let k = i * n2 + j;
                    s += C64::new(-r1, 0.5 * self.f1_b[k]) * f1[k];
                }
                if i > 0 {
                    let k = (i - 1) * n2 + j;
                    s += C64::new(r1, 0.5 * self.f1_b[k]) * f1[k];
                }
                let jm = if j > 0 { Some(j - 1) } else if self.periodic2 { Some(n2 - 1) } else { None };
                if j < m2 {
                    let k = i * m2 + j;
                    s += C64::new(-r2, 0.5 * self.f2_b[k]) * f2[k];
                }
                if let Some(jm) = jm {
                    let k = i * m2 + jm;
                    s += C64::new(r2, 0.5 * self.f2_b[k]) * f2[k];
                }
                // corners (ic, jc) with this node at offset (di, dj)
                for (ic, di) in [(i.wrapping_sub(1), 1.0), (i, -1.0)] {
                    if ic >= n1 - 1 {
                        continue;
                    }
                    let jcs = [(jm, 1.0), (if j < m2 { Some(j) } else { None }, -1.0)];
                    for (jc, dj) in jcs {
                        let Some(jc) = jc else { continue };
                        let k = ic * m2 + jc;
                        let [b1, b2] = self.c_b[k];
                        let w1 = C64::new(0.5 * di * r1, 0.25 * b1);
                        let w2 = C64::new(0.5 * dj * r2, 0.25 * b2);
                        s += w1 * cf[k][1] + w2 * cf[k][0];
                    }
                }
                let k = i * n2 + j;
                *o = if i == 0 && self.pole_mass.is_some() { s } else { s * self.inv_sqrt_g[k] + u[k] * self.q[k] };
            }
        });
        if let Some(m) = self.pole_mass {
            let total: C64 = out[..n2].iter().sum();
            for j in 0..n2 {
                out[j] = total / m + u[j] * self.q[j];
            }
        }
    }
}

/// Reusable buffers for [`StencilOperator::apply`].
#[derive(Default, Debug, Clone)]
pub struct OperatorScratch {
    f1: Vec<C64>,
    f2: Vec<C64>,
    c: Vec<[C64; 2]>,
}

impl OperatorScratch {
    fn resize(&mut self, n1: usize, n2: usize, m2: usize) {
        let z = C64::new(0.0, 0.0);
        self.f1.resize((n1 - 1) * n2, z);
        self.f2.resize(n1 * m2, z);
        self.c.resize((n1 - 1) * m2, [z, z]);
    }
}

/// A uniform Cartesian grid with `ghost` layers on each side of an `nx × ny` interior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartesianGrid {
    pub nx: usize,
    pub ny: usize,
    pub ghost: usize,
    /// Coordinates of interior node `(0, 0)`.
    pub origin: Point,
    pub h: f64,
}

impl CartesianGrid {
    pub fn total(&self) -> (usize, usize) {
        (self.nx + 2 * self.ghost, self.ny + 2 * self.ghost)
    }
    /// Coordinates of storage node `(i, j)` (ghosts included, `i` along x).
    pub fn node(&self, i: usize, j: usize) -> Point {
        self.origin + Vec2::new(i as f64 - self.ghost as f64, j as f64 - self.ghost as f64) * self.h
    }
    pub fn sample(&self, f: impl Fn(&Point) -> C64) -> Vec<C64> {
        let (tx, ty) = self.total();
        (0..tx * ty).map(|k| f(&self.node(k / ty, k % ty))).collect()
    }
}

/// `P u` at the interior nodes of a Cartesian grid; `u` holds all storage nodes (x-major).
pub fn apply_p(t: &CoefficientTriple, grid: &CartesianGrid, u: &[C64]) -> Result<Vec<C64>> {
    let (tx, ty) = grid.total();
    if grid.ghost < 1 || u.len() != tx * ty || grid.nx == 0 || grid.ny == 0 {
        return Err(Error::GridMismatch(format!(
            "expected {}x{} samples with at least one ghost layer, got {}",
            tx,
            ty,
            u.len()
        )));
    }
    let o = grid.node(0, 0);
    let op = StencilOperator::build(tx, ty, false, (o[0], o[1]), (grid.h, grid.h), |x, y| t.local(&Point::new(x, y)));
    let mut out = vec![C64::new(0.0, 0.0); u.len()];
    op.apply(u, &mut out, &mut OperatorScratch::default());
    let g = grid.ghost;
    Ok((g..g + grid.nx).flat_map(|i| (g..g + grid.ny).map(move |j| (i, j))).map(|(i, j)| out[i * ty + j]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    fn rich_lb(g: &MetricField, u: &ScalarField, x: &Point) -> f64 {
        // independent oracle: divergence form (1/√G)∂_j(√G g^{ij}∂_i u) by nested central differences
        let flux = |p: &Point, h: f64| -> Vec2 {
            let du = Vec2::new(
                (u.eval(&(p + Vec2::new(h, 0.0))) - u.eval(&(p - Vec2::new(h, 0.0)))) / (2.0 * h),
                (u.eval(&(p + Vec2::new(0.0, h))) - u.eval(&(p - Vec2::new(0.0, h)))) / (2.0 * h),
            );
            g.inverse(p) * du * g.det(p).sqrt()
        };
        let lb = |h: f64| {
            let fx = (flux(&(x + Vec2::new(h, 0.0)), h)[0] - flux(&(x - Vec2::new(h, 0.0)), h)[0]) / (2.0 * h);
            let fy = (flux(&(x + Vec2::new(0.0, h)), h)[1] - flux(&(x - Vec2::new(0.0, h)), h)[1]) / (2.0 * h);
            (fx + fy) / g.det(x).sqrt()
        };
        (4.0 * lb(5e-4) - lb(1e-3)) / 3.0
    }

    #[test]
    fn laplacian_trivial_cases() {
        let d = Domain::default();
        let u = ScalarField::new("r2", |p| p.norm_squared()).with_grad(|p| 2.0 * p);
        let x = Point::new(0.2, -0.3);
        assert!((laplace_beltrami(&MetricField::euclid(), &u, &x, &d).unwrap() - 4.0).abs() < 1e-6);
        let c = registry::metric("conformal:3").unwrap();
        assert!((laplace_beltrami(&c, &u, &x, &d).unwrap() - 4.0 / 9.0).abs() < 1e-6);
        assert!(laplace_beltrami(&c, &u, &Point::new(1.2, 0.0), &d).is_err());
    }

    #[test]
    fn laplacian_gauss1_matches_difference_oracle() {
        let g = registry::metric("gauss1").unwrap();
        let u = ScalarField::new("x", |p| p[0]);
        let x = Point::new(0.3, 0.1);
        let v = laplace_beltrami(&g, &u, &x, &Domain::default()).unwrap();
        assert!((v - rich_lb(&g, &u, &x)).abs() < 1e-6, "{v}");
    }

    #[test]
    fn derived_bq_cases() {
        let t = CoefficientTriple::from_ids("euclid", "const:0.7,0", "const:2").unwrap();
        let d = derived_bq(&t, &Point::new(0.1, 0.2)).unwrap();
        assert!((d.b_vec - Vec2::new(1.4, 0.0)).norm() < 1e-14);
        assert!((d.q_re - (2.0 + 0.49)).abs() < 1e-14);
        assert!(d.q_im.abs() < 1e-12);

        // oracle: divergence of √G g^{ij} b_i by central differences
        let t = CoefficientTriple::from_ids("gauss1", "xy", "zero").unwrap();
        let x = Point::new(0.2, -0.4);
        let d = derived_bq(&t, &x).unwrap();
        let w = |p: &Point| t.g.inverse(p) * t.b.eval(p) * t.g.det(p).sqrt();
        let h = 1e-4;
        let div = ((w(&(x + Vec2::new(h, 0.0)))[0] - w(&(x - Vec2::new(h, 0.0)))[0])
            + (w(&(x + Vec2::new(0.0, h)))[1] - w(&(x - Vec2::new(0.0, h)))[1]))
            / (2.0 * h)
            / t.g.det(&x).sqrt();
        assert!((d.q_im - div).abs() < 1e-7);
        let b = t.b.eval(&x);
        assert!((d.q_re - b.dot(&(t.g.inverse(&x) * b))).abs() < 1e-14);
    }

    fn grid(n: usize) -> CartesianGrid {
        let h = 1.0 / n as f64;
        CartesianGrid { nx: n, ny: n, ghost: 2, origin: Point::new(-0.5, -0.5), h }
    }

    #[test]
    fn constants_map_to_q_u() {
        let t = CoefficientTriple::from_ids("gauss1", "zero", "bump:1,0,0,0.1").unwrap();
        let gr = grid(16);
        let u = gr.sample(|_| C64::new(2.0, 0.0));
        let pu = apply_p(&t, &gr, &u).unwrap();
        for i in 0..gr.nx {
            for j in 0..gr.ny {
                let x = gr.node(i + 2, j + 2);
                assert!((pu[i * gr.ny + j] - 2.0 * t.q.eval(&x)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn plane_wave_symbol() {
        let k = Vec2::new(2.0, -1.0);
        let bq = (Vec2::new(0.3, 0.5), 1.5);
        let t = CoefficientTriple::from_ids("euclid", "const:0.3,0.5", "const:1.5").unwrap();
        let mut errs = Vec::new();
        for n in [32, 64] {
            let gr = grid(n);
            let u = gr.sample(|p| C64::from_polar(1.0, k.dot(p)));
            let pu = apply_p(&t, &gr, &u).unwrap();
            let sym = (k - bq.0).norm_squared() + bq.1;
            let mut e: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let x = gr.node(i + 2, j + 2);
                    e = e.max((pu[i * n + j] - sym * C64::from_polar(1.0, k.dot(&x))).norm());
                }
            }
            errs.push(e);
        }
        assert!(errs[0] < 2e-2, "{errs:?}");
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
    }

    /// Independent dense assembly of the energy form, then `P = W^{-1} ∂E/∂conj(v)`.
    fn dense(op_t: &CoefficientTriple, gr: &CartesianGrid) -> Vec<Vec<C64>> {
        let (tx, ty) = gr.total();
        let n = tx * ty;
        let h = gr.h;
        let mut m = vec![vec![C64::new(0.0, 0.0); n]; n];
        let idx = |i: usize, j: usize| i * ty + j;
        let iu = C64::i();
        // each discrete derivative is a list of (node, weight); E = Σ a conj(Dv) D u
        let mut add = |a: f64, dl: &[(usize, C64)], dr: &[(usize, C64)]| {
            for &(p, wp) in dl {
                for &(r, wr) in dr {
                    m[p][r] += a * wp.conj() * wr;
                }
            }
        };
        let at = |p: Point| op_t.local(&p);
        for i in 0..tx {
            for j in 0..ty {
                let p = gr.node(i, j);
                if i + 1 < tx {
                    let c = at(p + Vec2::new(h / 2.0, 0.0));
                    let d = [(idx(i + 1, j), 1.0 / h - iu * c.b[0] / 2.0), (idx(i, j), -1.0 / h - iu * c.b[0] / 2.0)];
                    add(c.sqrt_g * c.ginv[(0, 0)], &d, &d);
                }
                if j + 1 < ty {
                    let c = at(p + Vec2::new(0.0, h / 2.0));
                    let d = [(idx(i, j + 1), 1.0 / h - iu * c.b[1] / 2.0), (idx(i, j), -1.0 / h - iu * c.b[1] / 2.0)];
                    add(c.sqrt_g * c.ginv[(1, 1)], &d, &d);
                }
                if i + 1 < tx && j + 1 < ty {
                    let c = at(p + Vec2::new(h / 2.0, h / 2.0));
                    let nodes = [(i, j, -1.0, -1.0), (i + 1, j, 1.0, -1.0), (i, j + 1, -1.0, 1.0), (i + 1, j + 1, 1.0, 1.0)];
                    let d1: Vec<_> =
                        nodes.iter().map(|&(a, b, s, _)| (idx(a, b), s / (2.0 * h) - iu * c.b[0] / 4.0)).collect();
                    let d2: Vec<_> =
                        nodes.iter().map(|&(a, b, _, s)| (idx(a, b), s / (2.0 * h) - iu * c.b[1] / 4.0)).collect();
                    let a = c.sqrt_g * c.ginv[(0, 1)];
                    add(a, &d1, &d2);
                    add(a, &d2, &d1);
                }
            }
        }
        for i in 0..tx {
            for j in 0..ty {
                let c = at(gr.node(i, j));
                for v in m[idx(i, j)].iter_mut() {
                    *v /= c.sqrt_g;
                }
                m[idx(i, j)][idx(i, j)] += c.q;
            }
        }
        m
    }

    #[test]
    fn matches_dense_assembly() {
        let t = CoefficientTriple::from_ids("gauss1+perturb:3,0.1", "bump:0.8,0.1,0,0.2", "bump:1,0,0.1,0.1").unwrap();
        let gr = CartesianGrid { nx: 6, ny: 5, ghost: 2, origin: Point::new(-0.3, -0.2), h: 0.1 };
        let u = gr.sample(|p| C64::new((3.0 * p[0]).sin() + p[1], p[0] * p[1] * p[1]));
        let pu = apply_p(&t, &gr, &u).unwrap();
        let m = dense(&t, &gr);
        let (_, ty) = gr.total();
        for i in 0..gr.nx {
            for j in 0..gr.ny {
                let row = &m[(i + 2) * ty + j + 2];
                let want: C64 = row.iter().zip(&u).map(|(a, b)| a * b).sum();
                assert!((pu[i * gr.ny + j] - want).norm() < 1e-10 * (1.0 + want.norm()));
            }
        }
    }

    #[test]
    fn discrete_operator_is_symmetric() {
        let t = CoefficientTriple::from_ids("gauss1+perturb:5,0.1", "rot:0.7", "bump:1,0,0.1,0.1").unwrap();
        let n = 24;
        let op = StencilOperator::build(n, n, false, (-0.6, -0.6), (0.05, 0.05), |x, y| t.local(&Point::new(x, y)));
        let bump = |k: usize, s: f64| {
            let (i, j) = ((k / n) as f64, (k % n) as f64);
            let r = ((i - 11.5).powi(2) + (j - 11.5).powi(2)) / 64.0;
            if r < 1.0 {
                C64::new((1.0 - r).powi(3), s * (1.0 - r).powi(4) * i)
            } else {
                C64::new(0.0, 0.0)
            }
        };
        let u: Vec<C64> = (0..n * n).map(|k| bump(k, 0.3)).collect();
        let v: Vec<C64> = (0..n * n).map(|k| bump(k, -0.7) * (k as f64 * 0.01).cos()).collect();
        let mut pu = vec![C64::new(0.0, 0.0); n * n];
        let mut pv = pu.clone();
        let mut s = OperatorScratch::default();
        op.apply(&u, &mut pu, &mut s);
        op.apply(&v, &mut pv, &mut s);
        let ip = |a: &[C64], b: &[C64]| -> C64 { (0..n * n).map(|k| a[k] * b[k].conj() * op.sqrt_g[k]).sum() };
        let (l, r) = (ip(&pu, &v), ip(&u, &pv));
        assert!((l - r).norm() < 1e-10 * l.norm());
    }
}

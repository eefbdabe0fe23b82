//! Geodesic X-ray transforms of functions, covectors and symmetric 2-tensors, backprojection,
//! solenoidal projection and normal-operator inversion.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{fd4, CovectorField, MetricField, ScalarField};
use crate::formats::{read_all, write_atomic, Reader, Writer, SINO_MAGIC};
use crate::geodesics::{boundary_frame, integrate_fixed, shoot, InflowGrid, ShootOptions};
use crate::linalg::{cgls, conjugate_gradient, simpson_weights, CgReport};
use crate::{Mat2, Point, Vec2};

/// Symmetric 2-tensor field `f_ij`.
#[derive(Clone)]
pub struct TensorField2 {
    id: String,
    eval: Arc<dyn Fn(&Point) -> Mat2 + Send + Sync>,
}

impl std::fmt::Debug for TensorField2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TensorField2").field("id", &self.id).finish()
    }
}

impl TensorField2 {
    pub fn new(id: impl Into<String>, eval: impl Fn(&Point) -> Mat2 + Send + Sync + 'static) -> Self {
        Self { id: id.into(), eval: Arc::new(eval) }
    }
    pub fn id(&self) -> &str {
        &self.id
    }
    /// Symmetrized value.
    pub fn eval(&self, x: &Point) -> Mat2 {
        let m = (self.eval)(x);
        (m + m.transpose()) * 0.5
    }
}

/// Input to the ray transform.
#[derive(Clone, Copy, Debug)]
pub enum Field<'a> {
    Scalar(&'a ScalarField),
    Covector(&'a CovectorField),
    Tensor(&'a TensorField2),
}

impl Field<'_> {
    pub fn order(&self) -> u8 {
        match self {
            Field::Scalar(_) => 0,
            Field::Covector(_) => 1,
            Field::Tensor(_) => 2,
        }
    }
    /// `f`, `f_i v^i` or `f_ij v^i v^j`.
    pub fn integrand(&self, x: &Point, v: &Vec2) -> f64 {
        match self {
            Field::Scalar(f) => f.eval(x),
            Field::Covector(b) => b.eval(x).dot(v),
            Field::Tensor(t) => v.dot(&(t.eval(x) * v)),
        }
    }
}

/// Symmetrized covariant derivative `(dˢv)_ij = ½(∇_i v_j + ∇_j v_i)` of a vector field `v^i`.
pub fn sym_diff(g: &MetricField, v: &CovectorField) -> TensorField2 {
    let (g, v) = (g.clone(), v.clone());
    TensorField2::new(format!("dsym({})", v.id()), move |x| {
        let lower = |p: &Point| g.eval(p) * v.eval(p);
        let d0 = fd4(lower, x, 0, 1e-3);
        let d1 = fd4(lower, x, 1, 1e-3);
        // jac(i, j) = ∂_i v_j
        let jac = Mat2::from_rows(&[d0.transpose(), d1.transpose()]);
        let vl = lower(x);
        let gam = g.christoffel(x);
        let mut out = (jac + jac.transpose()) * 0.5;
        for i in 0..2 {
            for j in 0..2 {
                for (k, gk) in gam.iter().enumerate() {
                    out[(i, j)] -= gk[i][j] * vl[k];
                }
            }
        }
        out
    })
}

/// Quadrature samples `(x, ẋ, weight)` along one ray.
#[derive(Clone, Debug, Default)]
pub struct RaySamples {
    pub pts: Vec<[f64; 5]>,
    pub length: f64,
}

/// Rays of an inflow grid traced once, with composite Simpson weights on equispaced nodes.
#[derive(Clone, Debug)]
pub struct RayCache {
    pub grid: InflowGrid,
    pub rays: Vec<Option<RaySamples>>,
    pub step: f64,
    pub metric_id: String,
}

impl RayCache {
    /// Default quadrature spacing along rays.
    pub const DEFAULT_STEP: f64 = 0.01;

    pub fn new(g: &MetricField, grid: &InflowGrid, step: f64) -> Self {
        let r = grid.radius;
        let rays = grid
            .nodes
            .par_iter()
            .map(|n| {
                let geo = shoot(g, &n.z, &n.omega, &ShootOptions::new(r).record(false)).ok()?;
                let l = geo.exit_time;
                let m = ((l / step).ceil() as usize).max(2).div_ceil(2) * 2;
                let h = l / m as f64;
                let states = integrate_fixed(g, &n.z, &n.omega, h, m);
                let w = simpson_weights(m, h);
                let pts = states
                    .iter()
                    .zip(&w)
                    .map(|(y, wk)| {
                        let x = Point::new(y[0], y[1]);
                        let v = g.inverse(&x) * Vec2::new(y[2], y[3]);
                        [y[0], y[1], v[0], v[1], *wk]
                    })
                    .collect();
                Some(RaySamples { pts, length: l })
            })
            .collect();
        Self { grid: grid.clone(), rays, step, metric_id: g.id().to_string() }
    }

    pub fn transform(&self, f: Field<'_>) -> Sinogram {
        let values: Vec<f64> = self
            .rays
            .par_iter()
            .map(|r| match r {
                Some(r) => r
                    .pts
                    .iter()
                    .map(|p| p[4] * f.integrand(&Point::new(p[0], p[1]), &Vec2::new(p[2], p[3])))
                    .sum(),
                None => 0.0,
            })
            .collect();
        Sinogram::from_grid(&self.grid, f.order(), &self.metric_id, values, self.rays.iter().map(Option::is_some).collect())
    }
}

/// Ray-transform data on `Γ₋` with its `dμ` weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub n_alpha: usize,
    pub n_beta: usize,
    pub delta_beta: f64,
    pub radius: f64,
    pub order: u8,
    pub metric_id: String,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

pub fn id_hash(id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

impl Sinogram {
    pub fn from_grid(grid: &InflowGrid, order: u8, metric_id: &str, values: Vec<f64>, valid: Vec<bool>) -> Self {
        Self {
            n_alpha: grid.n_alpha,
            n_beta: grid.n_beta,
            delta_beta: grid.delta_beta,
            radius: grid.radius,
            order,
            metric_id: metric_id.to_string(),
            alpha: grid.nodes.iter().map(|n| n.alpha).collect(),
            beta: grid.nodes.iter().map(|n| n.beta).collect(),
            weights: grid.nodes.iter().map(|n| n.weight).collect(),
            values,
            valid,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], ..self.clone() }
    }

    /// `(Σ μ s²)^{1/2}` over valid nodes.
    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// `⟨s, t⟩_{dμ}`.
    pub fn inner(&self, other: &Sinogram) -> f64 {
        (0..self.values.len())
            .filter(|&k| self.valid[k] && other.valid[k])
            .map(|k| self.weights[k] * self.values[k] * other.values[k])
            .sum()
    }

    pub fn sub(&self, other: &Sinogram) -> Result<Sinogram> {
        if self.values.len() != other.values.len() {
            return Err(Error::GridMismatch("sinogram sizes differ".into()));
        }
        let mut out = self.clone();
        for k in 0..out.values.len() {
            out.values[k] -= other.values[k];
            out.valid[k] = self.valid[k] && other.valid[k];
        }
        Ok(out)
    }

    /// Relative `L²(dμ)` distance `‖self − other‖ / ‖other‖`.
    pub fn relative_error(&self, other: &Sinogram) -> Result<f64> {
        Ok(self.sub(other)?.norm() / other.norm().max(1e-300))
    }

    /// Bilinear interpolation in `(α, β)`; zero outside the `β` range.
    pub fn interp(&self, alpha: f64, beta: f64) -> f64 {
        let da = 2.0 * PI / self.n_alpha as f64;
        let db = (PI - 2.0 * self.delta_beta) / self.n_beta as f64;
        let fb = (beta - (-PI / 2.0 + self.delta_beta)) / db - 0.5;
        if fb < -0.5 || fb > self.n_beta as f64 - 0.5 {
            return 0.0;
        }
        let fb = fb.clamp(0.0, (self.n_beta - 1) as f64);
        let fa = alpha.rem_euclid(2.0 * PI) / da;
        let (ia, ib) = (fa.floor() as usize, (fb.floor() as usize).min(self.n_beta.saturating_sub(2)));
        let (ta, tb) = (fa - ia as f64, fb - ib as f64);
        let at = |i: usize, j: usize| {
            let k = (i % self.n_alpha) * self.n_beta + j;
            if self.valid[k] {
                self.values[k]
            } else {
                0.0
            }
        };
        let j1 = (ib + 1).min(self.n_beta - 1);
        (1.0 - ta) * ((1.0 - tb) * at(ia, ib) + tb * at(ia, j1)) + ta * ((1.0 - tb) * at(ia + 1, ib) + tb * at(ia + 1, j1))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(SINO_MAGIC);
        w.u32(self.n_alpha as u32);
        w.u32(self.n_beta as u32);
        w.u32(self.order as u32);
        w.u64(id_hash(&self.metric_id));
        w.str(&self.metric_id);
        w.f64(self.delta_beta);
        w.f64(self.radius);
        w.f64s(&self.alpha);
        w.f64s(&self.beta);
        w.f64s(&self.weights);
        w.f64s(&self.values);
        for v in &self.valid {
            w.u32(*v as u32);
        }
        w.into_bytes()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, SINO_MAGIC)?;
        let n_alpha = r.u32()? as usize;
        let n_beta = r.u32()? as usize;
        let order = r.u32()?;
        if order > 2 {
            return Err(Error::Format(format!("tensor order {order}")));
        }
        let hash = r.u64()?;
        let metric_id = r.str()?;
        if hash != id_hash(&metric_id) {
            return Err(Error::Format("metric id hash mismatch".into()));
        }
        let delta_beta = r.f64()?;
        let radius = r.f64()?;
        let n = n_alpha * n_beta;
        let alpha = r.f64s(n)?;
        let beta = r.f64s(n)?;
        let weights = r.f64s(n)?;
        let values = r.f64s(n)?;
        let valid = (0..n).map(|_| r.u32().map(|v| v != 0)).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self { n_alpha, n_beta, delta_beta, radius, order: order as u8, metric_id, alpha, beta, weights, values, valid })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_all(path)?)
    }
}

/// `I_g f` on `grid` with the default quadrature spacing.
pub fn xray(g: &MetricField, f: Field<'_>, grid: &InflowGrid) -> Sinogram {
    RayCache::new(g, grid, RayCache::DEFAULT_STEP).transform(f)
}

/// Uniform node grid on `[-w, w]²` carrying bilinear tensor fields.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageGrid {
    pub n: usize,
    pub half_width: f64,
}

impl ImageGrid {
    pub fn new(n: usize, half_width: f64) -> Self {
        Self { n, half_width }
    }
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }
    pub fn node(&self, i: usize, j: usize) -> Point {
        Point::new(-self.half_width + i as f64 * self.h(), -self.half_width + j as f64 * self.h())
    }
    pub fn len(&self) -> usize {
        self.n * self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    /// Bilinear stencil: four `(node index, weight)` pairs, or `None` outside the grid.
    pub fn stencil(&self, x: &Point) -> Option<[(usize, f64); 4]> {
        let h = self.h();
        let fx = (x[0] + self.half_width) / h;
        let fy = (x[1] + self.half_width) / h;
        if fx < 0.0 || fy < 0.0 || fx > (self.n - 1) as f64 || fy > (self.n - 1) as f64 {
            return None;
        }
        let i = (fx.floor() as usize).min(self.n - 2);
        let j = (fy.floor() as usize).min(self.n - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let k = i * self.n + j;
        Some([
            (k, (1.0 - tx) * (1.0 - ty)),
            (k + 1, (1.0 - tx) * ty),
            (k + self.n, tx * (1.0 - ty)),
            (k + self.n + 1, tx * ty),
        ])
    }
}

/// Number of independent components for a tensor order.
pub fn ncomp(order: u8) -> usize {
    match order {
        0 => 1,
        1 => 2,
        _ => 3,
    }
}

/// Contraction weights of the components `[f]`, `[f_1, f_2]` or `[f_11, f_12, f_22]` with `v`.
fn contraction(order: u8, v: &Vec2) -> [f64; 3] {
    match order {
        0 => [1.0, 0.0, 0.0],
        1 => [v[0], v[1], 0.0],
        _ => [v[0] * v[0], 2.0 * v[0] * v[1], v[1] * v[1]],
    }
}

/// Bilinear tensor field on an [`ImageGrid`]; component-major node values.
#[derive(Clone, Debug, PartialEq)]
pub struct GridTensor {
    pub grid: ImageGrid,
    pub order: u8,
    pub data: Vec<f64>,
}

impl GridTensor {
    pub fn zeros(grid: ImageGrid, order: u8) -> Self {
        Self { grid, order, data: vec![0.0; grid.len() * ncomp(order)] }
    }

    pub fn sample(grid: ImageGrid, f: Field<'_>) -> Self {
        let mut out = Self::zeros(grid, f.order());
        let n = grid.len();
        for i in 0..grid.n {
            for j in 0..grid.n {
                let x = grid.node(i, j);
                let k = i * grid.n + j;
                match f {
                    Field::Scalar(s) => out.data[k] = s.eval(&x),
                    Field::Covector(b) => {
                        let v = b.eval(&x);
                        out.data[k] = v[0];
                        out.data[n + k] = v[1];
                    }
                    Field::Tensor(t) => {
                        let m = t.eval(&x);
                        out.data[k] = m[(0, 0)];
                        out.data[n + k] = m[(0, 1)];
                        out.data[2 * n + k] = m[(1, 1)];
                    }
                }
            }
        }
        out
    }

    /// Same samples as a grid file (components `xx, xy, yy` for order 2).
    pub fn to_grid_data(&self) -> crate::formats::GridData {
        let (n, hw, nc) = (self.grid.n, self.grid.half_width, ncomp(self.order));
        let mut gd = crate::formats::GridData::new(n, n, nc, [-hw, hw, -hw, hw]);
        for c in 0..nc {
            for i in 0..n {
                for j in 0..n {
                    let k = gd.index(c, i, j);
                    gd.data[k] = self.data[c * n * n + i * n + j];
                }
            }
        }
        gd
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Components at `x` by bilinear interpolation (zero outside the grid).
    pub fn eval(&self, x: &Point) -> [f64; 3] {
        let mut out = [0.0; 3];
        if let Some(st) = self.grid.stencil(x) {
            let n = self.grid.len();
            for (c, o) in out.iter_mut().enumerate().take(ncomp(self.order)) {
                *o = st.iter().map(|(k, w)| w * self.data[c * n + k]).sum();
            }
        }
        out
    }

    /// Euclidean-component `L²` norm over nodes with `|x| < radius`.
    pub fn norm_in(&self, radius: f64) -> f64 {
        let n = self.grid.len();
        let h2 = self.grid.h().powi(2);
        let mult = [1.0, 2.0, 1.0];
        let mut s = 0.0;
        for k in 0..n {
            if self.grid.node(k / self.grid.n, k % self.grid.n).norm() < radius {
                for c in 0..ncomp(self.order) {
                    let m = if self.order == 2 { mult[c] } else { 1.0 };
                    s += m * self.data[c * n + k].powi(2) * h2;
                }
            }
        }
        s.sqrt()
    }

    pub fn sub(&self, other: &GridTensor) -> GridTensor {
        GridTensor { data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(), ..self.clone() }
    }

    pub fn relative_error(&self, truth: &GridTensor, radius: f64) -> f64 {
        self.sub(truth).norm_in(radius) / truth.norm_in(radius).max(1e-300)
    }
}

impl RayCache {
    /// Ray transform of a bilinear grid field.
    pub fn forward_grid(&self, grid: &ImageGrid, order: u8, data: &[f64]) -> Vec<f64> {
        let n = grid.len();
        let nc = ncomp(order);
        self.rays
            .par_iter()
            .map(|r| {
                let Some(r) = r else { return 0.0 };
                let mut s = 0.0;
                for p in &r.pts {
                    let Some(st) = grid.stencil(&Point::new(p[0], p[1])) else { continue };
                    let c = contraction(order, &Vec2::new(p[2], p[3]));
                    let mut v = 0.0;
                    for (ci, cw) in c.iter().enumerate().take(nc) {
                        for (k, w) in &st {
                            v += cw * w * data[ci * n + k];
                        }
                    }
                    s += p[4] * v;
                }
                s
            })
            .collect()
    }

    /// Transpose of [`RayCache::forward_grid`] applied to per-ray values.
    pub fn transpose_grid(&self, grid: &ImageGrid, order: u8, ray_values: &[f64]) -> Vec<f64> {
        let n = grid.len();
        let nc = ncomp(order);
        self.rays
            .par_iter()
            .zip(ray_values.par_iter())
            .fold(
                || vec![0.0; n * nc],
                |mut acc, (r, val)| {
                    if let Some(r) = r {
                        if *val != 0.0 {
                            for p in &r.pts {
                                let Some(st) = grid.stencil(&Point::new(p[0], p[1])) else { continue };
                                let c = contraction(order, &Vec2::new(p[2], p[3]));
                                for (ci, cw) in c.iter().enumerate().take(nc) {
                                    for (k, w) in &st {
                                        acc[ci * n + k] += val * p[4] * cw * w;
                                    }
                                }
                            }
                        }
                    }
                    acc
                },
            )
            .reduce(
                || vec![0.0; n * nc],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x += y;
                    }
                    a
                },
            )
    }
}

/// Pointwise backprojection `(I*s)(x) = ∫_{S_x} s(γ_{x,ω}) ω^{⊗m} dω` on the nodes of `img`
/// inside the circle of the sinogram, with `n_dir` directions per point.
pub fn adjoint_xray(g: &MetricField, s: &Sinogram, img: &ImageGrid, n_dir: usize) -> GridTensor {
    let mut out = GridTensor::zeros(*img, s.order);
    let r = s.radius;
    let n = img.len();
    let opts = ShootOptions::new(r).record(false).step(4e-3);
    let vals: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|k| {
            let x = img.node(k / img.n, k % img.n);
            let mut acc = [0.0; 3];
            if x.norm() >= r * (1.0 - 1e-9) {
                return acc;
            }
            let gm = g.eval(&x);
            // g-orthonormal frame at x
            let e0 = Vec2::new(1.0, 0.0) / gm[(0, 0)].sqrt();
            let e1 = Vec2::new(0.0, 1.0) - e0 * e0.dot(&(gm * Vec2::new(0.0, 1.0)));
            let e1 = e1 / e1.dot(&(gm * e1)).sqrt();
            let dw = 2.0 * PI / n_dir as f64;
            for d in 0..n_dir {
                let th = (d as f64 + 0.5) * dw;
                let v = e0 * th.cos() + e1 * th.sin();
                // trace backwards to the inflow point
                let Ok(geo) = shoot_from_interior(g, &x, &(-(gm * v)), &opts) else { continue };
                let z = geo.0;
                let w_in = -geo.1;
                let alpha = z[1].atan2(z[0]);
                let (nn, tt) = boundary_frame(g, r, alpha);
                let gz = g.eval(&z);
                let vin = g.inverse(&z) * w_in;
                let beta = vin.dot(&(gz * tt)).atan2(vin.dot(&(gz * nn)));
                let sv = s.interp(alpha, beta);
                let c = contraction(s.order, &v);
                for (a, ca) in acc.iter_mut().zip(c) {
                    *a += sv * ca * dw;
                }
            }
            acc
        })
        .collect();
    for (k, v) in vals.iter().enumerate() {
        for c in 0..ncomp(s.order) {
            out.data[c * n + k] = v[c];
        }
    }
    out
}

/// Integrate from an interior point until the circle of `opts.radius`; returns the exit point and covector.
fn shoot_from_interior(g: &MetricField, x: &Point, xi: &Vec2, opts: &ShootOptions) -> Result<(Point, Vec2)> {
    let mut y = [x[0], x[1], xi[0], xi[1]];
    let r = opts.radius;
    for n in 0..opts.max_steps {
        let yn = crate::geodesics::rk4(g, &y, opts.step);
        if (yn[0] * yn[0] + yn[1] * yn[1]).sqrt() >= r {
            let (mut lo, mut hi) = (0.0, opts.step);
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                let ym = crate::geodesics::rk4(g, &y, mid);
                if (ym[0] * ym[0] + ym[1] * ym[1]).sqrt() >= r {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let ye = crate::geodesics::rk4(g, &y, 0.5 * (lo + hi));
            return Ok((Point::new(ye[0], ye[1]), Vec2::new(ye[2], ye[3])));
        }
        if !yn.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { steps: n });
        }
        y = yn;
    }
    Err(Error::Diverged { steps: opts.max_steps })
}

/// Result of a solenoidal projection.
#[derive(Clone, Debug)]
pub struct Projection {
    pub solenoidal: GridTensor,
    /// Potential `θ` (order 1) or `v^i` (order 2) on the grid nodes.
    pub potential: Vec<f64>,
    /// `‖DᵀW fˢ‖ / ‖DᵀW f‖`.
    pub divergence_residual: f64,
    pub cg: CgReport,
}

/// Discrete potential operator `D` (gradient or symmetrized covariant derivative) on the nodes,
/// with the metric weights `W` of the `L²(dV_g)` tensor inner product.
struct PotentialOp {
    grid: ImageGrid,
    order: u8,
    mask: Vec<bool>,
    ginv: Vec<Mat2>,
    gmat: Vec<Mat2>,
    sqrt_g: Vec<f64>,
    gamma: Vec<[[[f64; 2]; 2]; 2]>,
}

impl PotentialOp {
    fn new(g: &MetricField, grid: ImageGrid, order: u8, radius: f64) -> Self {
        let n = grid.len();
        let pts: Vec<Point> = (0..n).map(|k| grid.node(k / grid.n, k % grid.n)).collect();
        Self {
            grid,
            order,
            mask: pts.iter().map(|p| p.norm() < radius).collect(),
            ginv: pts.iter().map(|p| g.inverse(p)).collect(),
            gmat: pts.iter().map(|p| g.eval(p)).collect(),
            sqrt_g: pts.iter().map(|p| g.det(p).sqrt()).collect(),
            gamma: if order == 2 { pts.par_iter().map(|p| g.christoffel(p)).collect() } else { Vec::new() },
        }
    }

    fn n_pot(&self) -> usize {
        self.grid.len() * if self.order == 1 { 1 } else { 2 }
    }

    /// Central difference of node array `u` at node `(i, j)` in direction `dir`; zero beyond the grid.
    fn diff(&self, u: &[f64], i: usize, j: usize, dir: usize) -> f64 {
        let n = self.grid.n;
        let h = self.grid.h();
        let get = |a: isize, b: isize| -> f64 {
            if a < 0 || b < 0 || a >= n as isize || b >= n as isize {
                0.0
            } else {
                u[a as usize * n + b as usize]
            }
        };
        let (i, j) = (i as isize, j as isize);
        if dir == 0 {
            (get(i + 1, j) - get(i - 1, j)) / (2.0 * h)
        } else {
            (get(i, j + 1) - get(i, j - 1)) / (2.0 * h)
        }
    }

    /// `D p` for potential dofs `p` (masked).
    fn apply(&self, p: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let nn = self.grid.n;
        let masked: Vec<f64> =
            p.iter().enumerate().map(|(k, v)| if self.mask[k % n] { *v } else { 0.0 }).collect();
        if self.order == 1 {
            let mut out = vec![0.0; 2 * n];
            for k in 0..n {
                let (i, j) = (k / nn, k % nn);
                out[k] = self.diff(&masked, i, j, 0);
                out[n + k] = self.diff(&masked, i, j, 1);
            }
            out
        } else {
            // lower the vector field, then symmetrized covariant derivative
            let mut low = vec![0.0; 2 * n];
            for k in 0..n {
                let v = self.gmat[k] * Vec2::new(masked[k], masked[n + k]);
                low[k] = v[0];
                low[n + k] = v[1];
            }
            let mut out = vec![0.0; 3 * n];
            for k in 0..n {
                let (i, j) = (k / nn, k % nn);
                let d = |c: usize, dir: usize| self.diff(&low[c * n..(c + 1) * n], i, j, dir);
                let vl = [low[k], low[n + k]];
                let gm = &self.gamma[k];
                let cs = |a: usize, b: usize| gm[0][a][b] * vl[0] + gm[1][a][b] * vl[1];
                out[k] = d(0, 0) - cs(0, 0);
                out[n + k] = 0.5 * (d(1, 0) + d(0, 1)) - cs(0, 1);
                out[2 * n + k] = d(1, 1) - cs(1, 1);
            }
            out
        }
    }

    /// Exact transpose of [`PotentialOp::apply`].
    fn apply_t(&self, f: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let nn = self.grid.n;
        let h = self.grid.h();
        // transpose of a central difference: (Dᵀu)_m = (u_{m-1} − u_{m+1}) / 2h
        let diff_t = |u: &[f64], out: &mut [f64], dir: usize| {
            for k in 0..n {
                let (i, j) = (k / nn, k % nn);
                let (a, b) = if dir == 0 { (i, nn) } else { (j, 1) };
                let mut s = 0.0;
                if a > 0 {
                    s += u[k - b];
                }
                if a + 1 < nn {
                    s -= u[k + b];
                }
                out[k] += s / (2.0 * h);
            }
        };
        let mut out = vec![0.0; self.n_pot()];
        if self.order == 1 {
            let (o, _) = out.split_at_mut(n);
            diff_t(&f[..n], o, 0);
            diff_t(&f[n..], o, 1);
        } else {
            let mut low = vec![0.0; 2 * n];
            {
                let (l0, l1) = low.split_at_mut(n);
                diff_t(&f[..n], l0, 0);
                let half: Vec<f64> = f[n..2 * n].iter().map(|v| 0.5 * v).collect();
                diff_t(&half, l1, 0);
                diff_t(&half, l0, 1);
                diff_t(&f[2 * n..], l1, 1);
            }
            for k in 0..n {
                let gm = &self.gamma[k];
                let (f11, f12, f22) = (f[k], f[n + k], f[2 * n + k]);
                for c in 0..2 {
                    low[c * n + k] -= gm[c][0][0] * f11 + gm[c][0][1] * f12 + gm[c][1][1] * f22;
                }
            }
            for k in 0..n {
                let v = self.gmat[k].transpose() * Vec2::new(low[k], low[n + k]);
                out[k] = v[0];
                out[n + k] = v[1];
            }
        }
        for (k, o) in out.iter_mut().enumerate() {
            if !self.mask[k % n] {
                *o = 0.0;
            }
        }
        out
    }

    /// Metric weighting `W f` (`√G g^{ia} g^{jb}` contraction, node area omitted).
    fn weight(&self, f: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; f.len()];
        for k in 0..n {
            let gi = self.ginv[k];
            let sg = self.sqrt_g[k];
            if self.order == 1 {
                let v = gi * Vec2::new(f[k], f[n + k]) * sg;
                out[k] = v[0];
                out[n + k] = v[1];
            } else {
                let m = Mat2::new(f[k], f[n + k], f[n + k], f[2 * n + k]);
                let a = gi * m * gi * sg;
                out[k] = a[(0, 0)];
                out[n + k] = 2.0 * a[(0, 1)];
                out[2 * n + k] = a[(1, 1)];
            }
        }
        out
    }
}

/// Split `f = fˢ + D p` with `p` vanishing outside the disk of `radius`, by conjugate gradients
/// on `DᵀWD p = DᵀW f`.
pub fn solenoidal_project(g: &MetricField, f: &GridTensor, radius: f64) -> Result<Projection> {
    if f.order == 0 {
        return Err(Error::Insufficient("solenoidal projection needs tensor order 1 or 2".into()));
    }
    let op = PotentialOp::new(g, f.grid, f.order, radius);
    let rhs = op.apply_t(&op.weight(&f.data));
    let mut p = vec![0.0; op.n_pot()];
    let rep = conjugate_gradient(
        |x, out| {
            let y = op.apply_t(&op.weight(&op.apply(x)));
            out.copy_from_slice(&y);
        },
        &rhs,
        &mut p,
        1e-11,
        20_000,
    );
    let dp = op.apply(&p);
    let fs = GridTensor { data: f.data.iter().zip(&dp).map(|(a, b)| a - b).collect(), ..f.clone() };
    let res = op.apply_t(&op.weight(&fs.data));
    let rn = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = res.iter().map(|v| v * v).sum::<f64>().sqrt() / rn.max(1e-300);
    if !rep.converged && residual > 1e-6 {
        return Err(Error::NoConvergence { iterations: rep.iterations, residual });
    }
    Ok(Projection { solenoidal: fs, potential: p, divergence_residual: if rn == 0.0 { 0.0 } else { residual }, cg: rep })
}

/// `⟨f, h⟩` in the metric-weighted grid inner product used by the projection.
pub fn weighted_inner(g: &MetricField, f: &GridTensor, h: &GridTensor) -> f64 {
    let op = PotentialOp::new(g, f.grid, f.order.max(1), 0.0);
    let wf = if f.order == 0 {
        f.data.iter().enumerate().map(|(k, v)| v * op.sqrt_g[k]).collect()
    } else {
        op.weight(&f.data)
    };
    wf.iter().zip(&h.data).map(|(a, b)| a * b).sum::<f64>() * f.grid.h().powi(2)
}

/// Potential part `D p` of a projection, as a grid tensor.
pub fn potential_part(g: &MetricField, f: &GridTensor, p: &[f64], radius: f64) -> GridTensor {
    let op = PotentialOp::new(g, f.grid, f.order, radius);
    GridTensor { data: op.apply(p), ..f.clone() }
}

/// Power-iteration estimate of `‖I_g‖` from the node `L²` norm (Euclidean components) to `L²(dμ)`,
/// using the bilinear grid model.
pub fn operator_norm(cache: &RayCache, img: &ImageGrid, order: u8, iters: usize) -> f64 {
    let n = img.len() * ncomp(order);
    let h2 = img.h().powi(2);
    let mult: Vec<f64> = (0..n)
        .map(|k| if order == 2 && k / img.len() == 1 { 2.0 } else { 1.0 })
        .collect();
    let mu: Vec<f64> = cache.grid.nodes.iter().map(|nd| nd.weight).collect();
    let mut x: Vec<f64> = (0..n).map(|k| 1.0 + 0.1 * ((k * 7919) % 13) as f64).collect();
    let mut est = 0.0;
    for _ in 0..iters {
        let xn = x.iter().zip(&mult).map(|(a, m)| m * a * a).sum::<f64>().sqrt() * h2.sqrt();
        x.iter_mut().for_each(|v| *v /= xn);
        let y = cache.forward_grid(img, order, &x);
        est = y.iter().zip(&mu).map(|(a, m)| m * a * a).sum::<f64>().sqrt();
        // gradient of ‖Ix‖² in the weighted node inner product
        let yw: Vec<f64> = y.iter().zip(&mu).map(|(a, m)| a * m).collect();
        x = cache.transpose_grid(img, order, &yw).iter().zip(&mult).map(|(a, m)| a / (m * h2)).collect();
    }
    est
}

#[derive(Clone, Debug)]
pub struct Inversion {
    /// Raw least-squares reconstruction.
    pub raw: GridTensor,
    /// Reported field: the solenoidal part for orders 1 and 2, the raw field for order 0.
    pub field: GridTensor,
    pub cg: CgReport,
}

/// CGNE inversion of the normal operator on the unknown nodes inside `radius`.
pub fn invert_xray(g: &MetricField, s: &Sinogram, cache: &RayCache, img: &ImageGrid, radius: f64, max_iter: usize) -> Result<Inversion> {
    if s.values.len() != cache.rays.len() {
        return Err(Error::GridMismatch("sinogram and ray cache sizes differ".into()));
    }
    let order = s.order;
    let n = img.len();
    let nc = ncomp(order);
    let mask: Vec<bool> = (0..n).map(|k| img.node(k / img.n, k % img.n).norm() < radius).collect();
    let sw: Vec<f64> = (0..s.values.len()).map(|k| if s.valid[k] { s.weights[k].sqrt() } else { 0.0 }).collect();
    let b: Vec<f64> = s.values.iter().zip(&sw).map(|(v, w)| v * w).collect();
    let forward = |x: &[f64]| -> Vec<f64> {
        let xm: Vec<f64> = x.iter().enumerate().map(|(k, v)| if mask[k % n] { *v } else { 0.0 }).collect();
        cache.forward_grid(img, order, &xm).iter().zip(&sw).map(|(a, w)| a * w).collect()
    };
    let adjoint = |y: &[f64]| -> Vec<f64> {
        let yw: Vec<f64> = y.iter().zip(&sw).map(|(a, w)| a * w).collect();
        let mut t = cache.transpose_grid(img, order, &yw);
        for (k, v) in t.iter_mut().enumerate() {
            if !mask[k % n] {
                *v = 0.0;
            }
        }
        t
    };
    let (x, rep) = cgls(forward, adjoint, &b, n * nc, 1e-6, max_iter);
    let raw = GridTensor { grid: *img, order, data: x };
    let field = if order == 0 { raw.clone() } else { solenoidal_project(g, &raw, radius)?.solenoidal };
    Ok(Inversion { raw, field, cg: rep })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    #[test]
    fn chord_length_and_exact_integrand() {
        let g = MetricField::euclid();
        let grid = InflowGrid::new(&g, 1.0, 4, 3, 0.02);
        let s = xray(&g, Field::Scalar(&ScalarField::constant(1.0)), &grid);
        // middle β node is the diameter
        assert!((s.values[1] - 2.0).abs() < 1e-10);
        let dh = CovectorField::new("dh", |x| {
            let c = (1.0 - x.norm_squared()).max(0.0);
            -4.0 * c * x
        });
        let s = xray(&g, Field::Covector(&dh), &grid);
        assert!(s.values.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn gaussian_offset_ray_matches_dense_trapezoid() {
        let g = MetricField::euclid();
        let f = ScalarField::new("bump", |x| (-x.norm_squared() / (2.0 * 0.04)).exp());
        // ray x2 = 0.3 entering from the left
        let z = Point::new(-(1.0f64 - 0.09).sqrt(), 0.3);
        let geo = shoot(&g, &z, &Vec2::new(1.0, 0.0), &ShootOptions::new(1.0)).unwrap();
        let l = geo.exit_time;
        let m = ((l / 0.01).ceil() as usize).div_ceil(2) * 2;
        let w = simpson_weights(m, l / m as f64);
        let simpson: f64 = (0..=m).map(|k| w[k] * f.eval(&(z + Vec2::new(k as f64 * l / m as f64, 0.0)))).sum();
        let n = 1_000_000;
        let h = l / n as f64;
        let trap: f64 = (0..=n)
            .map(|k| {
                let c = if k == 0 || k == n { 0.5 } else { 1.0 };
                c * f.eval(&(z + Vec2::new(k as f64 * h, 0.0)))
            })
            .sum::<f64>()
            * h;
        assert!((simpson - trap).abs() < 1e-8);
    }

    #[test]
    fn sym_diff_trivial_cases() {
        let g = MetricField::euclid();
        let c = sym_diff(&g, &CovectorField::new("c", |_| Vec2::new(1.0, 2.0)));
        assert!(c.eval(&Point::new(0.2, 0.1)).norm() < 1e-12);
        let lin = sym_diff(&g, &CovectorField::new("x", |x| *x));
        assert!((lin.eval(&Point::new(0.2, 0.1)) - Mat2::identity()).norm() < 1e-10);
    }

    #[test]
    fn sym_diff_matches_christoffel_oracle() {
        let g = registry::metric("gauss1").unwrap();
        let v = registry::vector_field("vfield:3").unwrap();
        let x = Point::new(0.2, -0.3);
        let got = sym_diff(&g, &v).eval(&x);
        // oracle: ∇_i v_j = g_jk (∂_i v^k + Γ^k_il v^l) with step 1e-5 central differences
        let h = 1e-5;
        let dv = |i: usize| {
            let mut e = Vec2::zeros();
            e[i] = h;
            (v.eval(&(x + e)) - v.eval(&(x - e))) / (2.0 * h)
        };
        let gam = g.christoffel(&x);
        let vv = v.eval(&x);
        let gm = g.eval(&x);
        let mut cov = Mat2::zeros();
        for i in 0..2 {
            let mut up = dv(i);
            for k in 0..2 {
                for l in 0..2 {
                    up[k] += gam[k][i][l] * vv[l];
                }
            }
            let low = gm * up;
            for j in 0..2 {
                cov[(i, j)] = low[j];
            }
        }
        let want = (cov + cov.transpose()) * 0.5;
        assert!((got - want).norm() < 1e-7, "{got} {want}");
    }

    #[test]
    fn grid_export_matches_nodes() {
        let img = ImageGrid::new(9, 1.1);
        let b = registry::covector("rot:0.3").unwrap();
        let f = GridTensor::sample(img, Field::Covector(&b));
        let gd = f.to_grid_data();
        for (i, j) in [(0, 0), (3, 7), (8, 2)] {
            let x = img.node(i, j);
            assert!((gd.node(i, j) - x).norm() < 1e-15);
            assert_eq!(gd.get(1, i, j), b.eval(&x)[1]);
        }
    }

    #[test]
    fn sinogram_roundtrip() {
        let g = MetricField::euclid();
        let grid = InflowGrid::new(&g, 1.15, 6, 5, 0.02);
        let s = xray(&g, Field::Scalar(&ScalarField::constant(1.0)), &grid);
        assert_eq!(Sinogram::from_bytes(&s.to_bytes()).unwrap(), s);
    }

    #[test]
    fn backprojection_of_ones_is_full_circle() {
        let g = MetricField::euclid();
        let grid = InflowGrid::new(&g, 1.15, 16, 16, 0.02);
        let mut s = xray(&g, Field::Scalar(&ScalarField::constant(0.0)), &grid);
        s.values.iter_mut().for_each(|v| *v = 1.0);
        let img = ImageGrid::new(5, 1.0);
        let a = adjoint_xray(&g, &s, &img, 64);
        assert!((a.component(0)[12] - 2.0 * PI).abs() < 1e-9);
        let z = adjoint_xray(&g, &s.zeros_like(), &img, 16);
        assert!(z.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn projection_kills_potential_fields() {
        let g = registry::metric("gauss1").unwrap();
        let img = ImageGrid::new(33, 1.15);
        let th = ScalarField::new("th", |x| (1.0 - x.norm_squared()).max(0.0).powi(3) * (1.0 + x[0]));
        let dth = CovectorField::new("dth", move |x| th.grad(x));
        let f = GridTensor::sample(img, Field::Covector(&dth));
        let p = solenoidal_project(&g, &f, 1.0).unwrap();
        assert!(p.solenoidal.norm_in(1.0) < 5e-2 * f.norm_in(1.0));
        assert!(p.divergence_residual < 1e-8);
    }
}

//! Coefficient fields: metric, covector and scalar fields on the extended domain.
//!
//! Fields are immutable closures behind `Arc`, so they are cheap to clone and safe to evaluate
//! from many threads. Derivatives are analytic when the constructor supplies them and fourth
//! order central differences otherwise.

use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use crate::{Mat2, Point, Vec2};

/// Step used by the fourth-order difference stencils.
pub const FD_STEP: f64 = 1e-3;

/// Fourth-order central difference of `f` at `x` in direction `dir`.
pub fn fd4<T, F>(f: F, x: &Point, dir: usize, h: f64) -> T
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
    F: Fn(&Point) -> T,
{
    let mut e = Point::zeros();
    e[dir] = h;
    let f1 = f(&(x + e));
    let f_1 = f(&(x - e));
    let f2 = f(&(x + 2.0 * e));
    let f_2 = f(&(x - 2.0 * e));
    ((f1 - f_1) * 8.0 - (f2 - f_2)) * (1.0 / (12.0 * h))
}

type MatFn = dyn Fn(&Point) -> Mat2 + Send + Sync;
type MatGradFn = dyn Fn(&Point) -> [Mat2; 2] + Send + Sync;
type VecFn = dyn Fn(&Point) -> Vec2 + Send + Sync;
type ScalarFn = dyn Fn(&Point) -> f64 + Send + Sync;

/// Symmetric positive-definite 2-tensor field `g_ij`.
#[derive(Clone)]
pub struct MetricField {
    id: String,
    eval: Arc<MatFn>,
    grad: Option<Arc<MatGradFn>>,
    /// Declared smoothness order `k`; metadata only.
    pub smoothness_order: u32,
}

impl std::fmt::Debug for MetricField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricField").field("id", &self.id).finish()
    }
}

impl MetricField {
    pub fn new(id: impl Into<String>, eval: impl Fn(&Point) -> Mat2 + Send + Sync + 'static) -> Self {
        Self { id: id.into(), eval: Arc::new(eval), grad: None, smoothness_order: 8 }
    }

    pub fn with_grad(mut self, grad: impl Fn(&Point) -> [Mat2; 2] + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn euclid() -> Self {
        Self::new("euclid", |_| Mat2::identity()).with_grad(|_| [Mat2::zeros(); 2])
    }

    /// Conformal metric `n(x)^2 δ_ij` from a factor and its gradient.
    pub fn conformal(
        id: impl Into<String>,
        n: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        dn: impl Fn(&Point) -> Vec2 + Send + Sync + 'static,
    ) -> Self {
        let n = Arc::new(n);
        let n2 = n.clone();
        Self::new(id, move |x| {
            let v = n(x);
            Mat2::identity() * (v * v)
        })
        .with_grad(move |x| {
            let v = n2(x);
            let d = dn(x);
            [Mat2::identity() * (2.0 * v * d[0]), Mat2::identity() * (2.0 * v * d[1])]
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn eval(&self, x: &Point) -> Mat2 {
        (self.eval)(x)
    }

    pub fn inverse(&self, x: &Point) -> Mat2 {
        inv2(&self.eval(x))
    }

    pub fn det(&self, x: &Point) -> f64 {
        self.eval(x).determinant()
    }

    /// `[∂_1 g, ∂_2 g]`.
    pub fn grad(&self, x: &Point) -> [Mat2; 2] {
        match &self.grad {
            Some(g) => g(x),
            None => [fd4(|p| self.eval(p), x, 0, FD_STEP), fd4(|p| self.eval(p), x, 1, FD_STEP)],
        }
    }

    /// `hess[k][l] = ∂_k ∂_l g`.
    pub fn hess(&self, x: &Point) -> [[Mat2; 2]; 2] {
        let d0 = fd4(|p| self.grad(p)[0], x, 0, FD_STEP);
        let d1 = fd4(|p| self.grad(p)[1], x, 1, FD_STEP);
        let d01 = fd4(|p| self.grad(p)[0], x, 1, FD_STEP);
        let d10 = fd4(|p| self.grad(p)[1], x, 0, FD_STEP);
        let m = (d01 + d10) * 0.5;
        [[d0, m], [m, d1]]
    }

    /// `[∂_1 g^{-1}, ∂_2 g^{-1}]`.
    pub fn inverse_grad(&self, x: &Point) -> [Mat2; 2] {
        let gi = self.inverse(x);
        let dg = self.grad(x);
        [-gi * dg[0] * gi, -gi * dg[1] * gi]
    }

    /// Christoffel symbols `Γ^k_ij`, indexed `[k][i][j]`.
    pub fn christoffel(&self, x: &Point) -> [[[f64; 2]; 2]; 2] {
        let gi = self.inverse(x);
        let dg = self.grad(x);
        let mut gamma = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for l in 0..2 {
                        s += gi[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    gamma[k][i][j] = 0.5 * s;
                }
            }
        }
        gamma
    }

    /// Vector `c^i = (1/√det g) ∂_j(√det g g^{ij})`, the first-order part of Laplace–Beltrami.
    pub fn divergence_vector(&self, x: &Point) -> Vec2 {
        let gi = self.inverse(x);
        let dg = self.grad(x);
        let mut c = Vec2::zeros();
        for j in 0..2 {
            let dlog = 0.5 * (gi * dg[j]).trace();
            let dgi = -gi * dg[j] * gi;
            for i in 0..2 {
                c[i] += dlog * gi[(i, j)] + dgi[(i, j)];
            }
        }
        c
    }

    /// Unit-speed Hamiltonian right-hand side for `H = g^{ij} ξ_i ξ_j / 2`.
    pub fn hamilton_rhs(&self, x: &Point, xi: &Vec2) -> (Vec2, Vec2) {
        let gi = self.inverse(x);
        let v = gi * xi;
        let dg = self.grad(x);
        let f = Vec2::new(0.5 * v.dot(&(dg[0] * v)), 0.5 * v.dot(&(dg[1] * v)));
        (v, f)
    }

    /// `g + eps * h` with `h` another symmetric tensor field.
    pub fn add_scaled(&self, other: &MetricField, eps: f64) -> MetricField {
        let (a, b) = (self.clone(), other.clone());
        let (a2, b2) = (self.clone(), other.clone());
        let id = format!("{}+{}*{}", self.id, eps, other.id);
        MetricField::new(id, move |x| a.eval(x) + b.eval(x) * eps).with_grad(move |x| {
            let ga = a2.grad(x);
            let gb = b2.grad(x);
            [ga[0] + gb[0] * eps, ga[1] + gb[1] * eps]
        })
    }

    /// Minimum eigenvalue of `g` over the given sample points.
    pub fn min_eigenvalue(&self, points: &[Point]) -> f64 {
        points
            .iter()
            .map(|p| {
                let m = self.eval(p);
                let tr = m.trace();
                let det = m.determinant();
                0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt())
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Covector field `b_j dx^j`.
#[derive(Clone)]
pub struct CovectorField {
    id: String,
    eval: Arc<VecFn>,
}

impl std::fmt::Debug for CovectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CovectorField").field("id", &self.id).finish()
    }
}

impl CovectorField {
    pub fn new(id: impl Into<String>, eval: impl Fn(&Point) -> Vec2 + Send + Sync + 'static) -> Self {
        Self { id: id.into(), eval: Arc::new(eval) }
    }

    pub fn zero() -> Self {
        Self::new("zero", |_| Vec2::zeros())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn eval(&self, x: &Point) -> Vec2 {
        (self.eval)(x)
    }

    /// `jac[(k, j)] = ∂_k b_j`.
    pub fn jacobian(&self, x: &Point) -> Mat2 {
        let d0 = fd4(|p| self.eval(p), x, 0, FD_STEP);
        let d1 = fd4(|p| self.eval(p), x, 1, FD_STEP);
        Mat2::new(d0[0], d0[1], d1[0], d1[1])
    }

    pub fn add_scaled(&self, other: &CovectorField, eps: f64) -> CovectorField {
        let (a, b) = (self.clone(), other.clone());
        CovectorField::new(format!("{}+{}*{}", self.id, eps, other.id), move |x| a.eval(x) + b.eval(x) * eps)
    }

    /// `b - dθ`.
    pub fn minus_differential(&self, theta: &ScalarField) -> CovectorField {
        let (a, t) = (self.clone(), theta.clone());
        CovectorField::new(format!("{}-d({})", self.id, theta.id()), move |x| a.eval(x) - t.grad(x))
    }
}

/// Scalar field.
#[derive(Clone)]
pub struct ScalarField {
    id: String,
    eval: Arc<ScalarFn>,
    grad: Option<Arc<VecFn>>,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField").field("id", &self.id).finish()
    }
}

impl ScalarField {
    pub fn new(id: impl Into<String>, eval: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        Self { id: id.into(), eval: Arc::new(eval), grad: None }
    }

    pub fn with_grad(mut self, grad: impl Fn(&Point) -> Vec2 + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn zero() -> Self {
        Self::new("zero", |_| 0.0).with_grad(|_| Vec2::zeros())
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const:{c}"), move |_| c).with_grad(|_| Vec2::zeros())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn eval(&self, x: &Point) -> f64 {
        (self.eval)(x)
    }

    pub fn grad(&self, x: &Point) -> Vec2 {
        match &self.grad {
            Some(g) => g(x),
            None => Vec2::new(fd4(|p| self.eval(p), x, 0, FD_STEP), fd4(|p| self.eval(p), x, 1, FD_STEP)),
        }
    }

    pub fn hess(&self, x: &Point) -> Mat2 {
        let d0 = fd4(|p| self.grad(p), x, 0, FD_STEP);
        let d1 = fd4(|p| self.grad(p), x, 1, FD_STEP);
        let off = 0.5 * (d0[1] + d1[0]);
        Mat2::new(d0[0], off, off, d1[1])
    }

    pub fn add_scaled(&self, other: &ScalarField, eps: f64) -> ScalarField {
        let (a, b) = (self.clone(), other.clone());
        ScalarField::new(format!("{}+{}*{}", self.id, eps, other.id), move |x| a.eval(x) + eps * b.eval(x))
    }

    pub fn scaled(&self, s: f64) -> ScalarField {
        let a = self.clone();
        ScalarField::new(format!("{}*{}", s, self.id), move |x| s * a.eval(x))
    }
}

/// Inverse of a 2×2 matrix by the adjugate formula.
pub fn inv2(m: &Mat2) -> Mat2 {
    let det = m.determinant();
    Mat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fd4_is_exact_for_quartics() {
        let f = |p: &Point| p[0].powi(4) + p[0] * p[1];
        let x = Point::new(0.3, -0.2);
        let d = fd4(f, &x, 0, 0.1);
        assert_relative_eq!(d, 4.0 * 0.027 - 0.2, epsilon = 1e-12);
    }

    #[test]
    fn inverse_times_metric_is_identity() {
        let g = MetricField::new("t", |x: &Point| Mat2::new(2.0 + x[0], 0.3, 0.3, 1.5));
        let x = Point::new(0.1, 0.4);
        let e = g.inverse(&x) * g.eval(&x) - Mat2::identity();
        assert!(e.norm() < 1e-12);
    }

    #[test]
    fn analytic_and_numeric_gradients_agree() {
        let g = MetricField::conformal(
            "c",
            |x: &Point| 1.0 + 0.3 * (-(x.norm_squared()) / 0.2).exp(),
            |x: &Point| x * (-0.3 * 2.0 / 0.2 * (-(x.norm_squared()) / 0.2).exp()),
        );
        let x = Point::new(0.2, -0.4);
        let a = g.grad(&x);
        let n0 = fd4(|p| g.eval(p), &x, 0, FD_STEP);
        assert!((a[0] - n0).norm() < 1e-10);
    }
}

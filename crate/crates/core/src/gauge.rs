//! The boundary-fixing gauge group `(g, b, q) ↦ (φ*g, φ*b − dθ, φ*q)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::charts::BoundaryNormalChart;
use crate::error::{Error, Result};
use crate::fields::{fd4, CovectorField, MetricField, ScalarField};
use crate::formats::GridData;
use crate::manifold::CoefficientTriple;
use crate::{Mat2, Point, Vec2};

type MapFn = dyn Fn(&Point) -> Point + Send + Sync;
type JacFn = dyn Fn(&Point) -> Mat2 + Send + Sync;

/// A diffeomorphism `φ` fixing `∂Ω` paired with a function `θ` vanishing on `∂Ω`.
#[derive(Clone)]
pub struct GaugeElement {
    diffeo: Arc<MapFn>,
    jac: Option<Arc<JacFn>>,
    pub theta: ScalarField,
}

impl std::fmt::Debug for GaugeElement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaugeElement").field("theta", &self.theta.id()).finish()
    }
}

/// Random trigonometric polynomial with a few low modes and its gradient.
#[derive(Clone, Debug)]
struct TrigPoly(Vec<[f64; 4]>);

impl TrigPoly {
    fn new(rng: &mut ChaCha8Rng, n: usize) -> Self {
        Self(
            (0..n)
                .map(|_| {
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..6.3)]
                })
                .collect(),
        )
    }
    fn value(&self, x: &Point) -> f64 {
        self.0.iter().map(|m| m[0] * (m[1] * x[0] + m[2] * x[1] + m[3]).cos()).sum()
    }
    fn grad(&self, x: &Point) -> Vec2 {
        self.0.iter().map(|m| Vec2::new(m[1], m[2]) * (-m[0] * (m[1] * x[0] + m[2] * x[1] + m[3]).sin())).sum()
    }
}

impl GaugeElement {
    pub fn new(diffeo: impl Fn(&Point) -> Point + Send + Sync + 'static, theta: ScalarField) -> Self {
        Self { diffeo: Arc::new(diffeo), jac: None, theta }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&Point) -> Mat2 + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }

    pub fn identity() -> Self {
        Self::new(|x| *x, ScalarField::zero()).with_jacobian(|_| Mat2::identity())
    }

    /// Pure `θ`-gauge with `φ = Id`.
    pub fn theta_only(theta: ScalarField) -> Self {
        Self { theta, ..Self::identity() }
    }

    /// `φ(x) = x + ε(1 − |x|²) w(x)`, `θ = ε(1 − |x|²) s(x)` with random smooth `w`, `s`.
    pub fn random(seed: u64, eps: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = TrigPoly::new(&mut rng, 3);
        let w2 = TrigPoly::new(&mut rng, 3);
        let s = TrigPoly::new(&mut rng, 3);
        let (a1, a2) = (w1.clone(), w2.clone());
        let (b1, b2) = (w1, w2);
        let s2 = s.clone();
        let theta = ScalarField::new(format!("gauge-theta:{seed},{eps}"), move |x| eps * (1.0 - x.norm_squared()) * s.value(x))
            .with_grad(move |x| eps * ((1.0 - x.norm_squared()) * s2.grad(x) - 2.0 * x * s2.value(x)));
        Self::new(move |x| x + eps * (1.0 - x.norm_squared()) * Vec2::new(a1.value(x), a2.value(x)), theta).with_jacobian(
            move |x| {
                let c = 1.0 - x.norm_squared();
                let w = Vec2::new(b1.value(x), b2.value(x));
                let gw = Mat2::from_rows(&[b1.grad(x).transpose(), b2.grad(x).transpose()]);
                Mat2::identity() + eps * (c * gw - 2.0 * w * x.transpose())
            },
        )
    }

    pub fn map(&self, x: &Point) -> Point {
        (self.diffeo)(x)
    }

    /// `∂φ^i/∂x^j`.
    pub fn jacobian(&self, x: &Point) -> Mat2 {
        match &self.jac {
            Some(j) => j(x),
            None => {
                let c0 = fd4(|p: &Point| (self.diffeo)(p), x, 0, 1e-4);
                let c1 = fd4(|p: &Point| (self.diffeo)(p), x, 1, 1e-4);
                Mat2::from_columns(&[c0, c1])
            }
        }
    }

    /// The element `c` with `act(c, t) = act(self, act(k, t))`: diffeo `k∘self`,
    /// `θ = θ_k∘self + θ_self`.
    pub fn compose(&self, k: &GaugeElement) -> GaugeElement {
        let (h1, h2, k1, k2) = (self.clone(), self.clone(), k.clone(), k.clone());
        let (h3, k3, h4, k4) = (self.clone(), k.clone(), self.clone(), k.clone());
        let theta = ScalarField::new("composed", move |x| k3.theta.eval(&h3.map(x)) + h3.theta.eval(x))
            .with_grad(move |x| h4.jacobian(x).transpose() * k4.theta.grad(&h4.map(x)) + h4.theta.grad(x));
        GaugeElement::new(move |x| k1.map(&h1.map(x)), theta)
            .with_jacobian(move |x| k2.jacobian(&h2.map(x)) * h2.jacobian(x))
    }

    /// Pointwise Newton inverse: `φ⁻¹`, `θ' = −θ∘φ⁻¹`.
    pub fn inverse(&self) -> GaugeElement {
        let f = self.clone();
        let inv = move |y: &Point| -> Point {
            let mut x = *y;
            for _ in 0..50 {
                let r = f.map(&x) - y;
                if r.norm() < 1e-15 {
                    break;
                }
                x -= crate::fields::inv2(&f.jacobian(&x)) * r;
            }
            x
        };
        let (f2, inv2) = (self.clone(), inv.clone());
        let (f3, inv3) = (self.clone(), inv.clone());
        let theta = ScalarField::new("inverse", move |y| -f2.theta.eval(&inv2(y))).with_grad(move |y| {
            let x = inv3(y);
            let ji = crate::fields::inv2(&f3.jacobian(&x));
            -(ji.transpose() * f3.theta.grad(&x))
        });
        let (f4, inv4) = (self.clone(), inv.clone());
        GaugeElement::new(inv, theta).with_jacobian(move |y| crate::fields::inv2(&f4.jacobian(&inv4(y))))
    }

    /// Largest `|φ(z) − z|` and `|θ(z)|` over boundary samples.
    pub fn boundary_defect(&self, n: usize) -> (f64, f64) {
        (0..n).fold((0.0f64, 0.0f64), |acc, k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let z = Point::new(a.cos(), a.sin());
            (acc.0.max((self.map(&z) - z).norm()), acc.1.max(self.theta.eval(&z).abs()))
        })
    }

    /// Tabulate `(φ¹, φ², θ)` on a grid.
    pub fn to_grid(&self, nx: usize, ny: usize, bbox: [f64; 4]) -> GridData {
        GridData::sample(nx, ny, 3, bbox, |p| {
            let m = self.map(p);
            vec![m[0], m[1], self.theta.eval(p)]
        })
    }

    /// Gauge element interpolated from a `(φ¹, φ², θ)` grid.
    pub fn from_grid(grid: GridData) -> Result<Self> {
        if grid.ncomp != 3 {
            return Err(Error::Format(format!("gauge grid needs 3 components, found {}", grid.ncomp)));
        }
        let g2 = grid.clone();
        Ok(Self::new(
            move |p| {
                let v = grid.interp(p);
                Point::new(v[0], v[1])
            },
            ScalarField::new("grid-theta", move |p| g2.interp(p)[2]),
        ))
    }
}

/// `φ*g`.
pub fn pullback_metric(g: &MetricField, phi: &GaugeElement) -> MetricField {
    let (g, phi) = (g.clone(), phi.clone());
    MetricField::new(format!("pullback({})", g.id()), move |x| {
        let j = phi.jacobian(x);
        j.transpose() * g.eval(&phi.map(x)) * j
    })
}

/// `φ*b`.
pub fn pullback_covector(b: &CovectorField, phi: &GaugeElement) -> CovectorField {
    let (b, phi) = (b.clone(), phi.clone());
    CovectorField::new(format!("pullback({})", b.id()), move |x| phi.jacobian(x).transpose() * b.eval(&phi.map(x)))
}

/// `φ*q`.
pub fn pullback_scalar(q: &ScalarField, phi: &GaugeElement) -> ScalarField {
    let (q, phi) = (q.clone(), phi.clone());
    ScalarField::new(format!("pullback({})", q.id()), move |x| q.eval(&phi.map(x)))
}

/// `(φ*g, φ*b − dθ, φ*q)`.
pub fn act(gauge: &GaugeElement, t: &CoefficientTriple) -> CoefficientTriple {
    CoefficientTriple {
        g: pullback_metric(&t.g, gauge),
        b: pullback_covector(&t.b, gauge).minus_differential(&gauge.theta),
        q: pullback_scalar(&t.q, gauge),
        domain: t.domain,
    }
}

/// Smooth step equal to 1 on `[0, a]`, 0 on `[b, ∞)`.
pub fn cutoff(s: f64, a: f64, b: f64) -> f64 {
    if s <= a {
        1.0
    } else if s >= b {
        0.0
    } else {
        let u = (s - a) / (b - a);
        // C³ polynomial step
        1.0 - u.powi(4) * (35.0 - 84.0 * u + 70.0 * u * u - 20.0 * u * u * u)
    }
}

/// `φ = φ₁∘φ₂⁻¹` near `∂Ω` (φ₁, φ₂ the boundary normal charts of `g` and `g̃`), blended to the
/// identity between depths `valid_depth/4` and `valid_depth/2`.
pub fn build_phi(g: &MetricField, gt: &MetricField) -> Result<GaugeElement> {
    let c1 = Arc::new(BoundaryNormalChart::build(g, 0.0, 0.3)?);
    let c2 = Arc::new(BoundaryNormalChart::build(gt, 0.0, 0.3)?);
    Ok(chart_transition(c1, c2))
}

/// `φ₁∘φ₂⁻¹` for two boundary normal charts, blended to the identity.
pub fn chart_transition(c1: Arc<BoundaryNormalChart>, c2: Arc<BoundaryNormalChart>) -> GaugeElement {
    let d = c1.valid_depth.min(c2.valid_depth);
    GaugeElement::new(
        move |x| {
            if x.norm() < 1.0 - 2.0 * d {
                return *x;
            }
            match c2.inverse(x) {
                Ok((xp, xn)) if xn < d / 2.0 => x + (c1.map(xp, xn) - x) * cutoff(xn, d / 4.0, d / 2.0),
                _ => *x,
            }
        },
        ScalarField::zero(),
    )
}

/// `θ(x′, xⁿ) = ∫₀^{xⁿ} (b̃ₙ − bₙ)(x′, s) ds` in the chart, multiplied by a cutoff in `xⁿ`.
pub fn build_theta(b: &CovectorField, bt: &CovectorField, chart: Arc<BoundaryNormalChart>) -> ScalarField {
    let (b, bt) = (b.clone(), bt.clone());
    let d = chart.valid_depth;
    let (gx, gw) = gauss_legendre16();
    ScalarField::new("theta", move |p| {
        if p.norm() < 1.0 - 2.0 * d || p.norm() > 1.0 {
            return 0.0;
        }
        let Ok((xp, xn)) = chart.inverse(p) else { return 0.0 };
        if xn >= d {
            return 0.0;
        }
        let mut s = 0.0;
        for (xi, wi) in gx.iter().zip(&gw) {
            let y = 0.5 * xn * (xi + 1.0);
            let x = chart.map(xp, y);
            let v = chart.jacobian(xp, y).column(1).into_owned();
            s += 0.5 * xn * wi * (bt.eval(&x) - b.eval(&x)).dot(&v);
        }
        s * cutoff(xn, d / 2.0, d)
    })
}

/// 16-point Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre16() -> ([f64; 16], [f64; 16]) {
    let half = [
        (0.0950125098376374, 0.1894506104550685),
        (0.2816035507792589, 0.1826034150449236),
        (0.4580167776572274, 0.1691565193950025),
        (0.6178762444026438, 0.1495959888165767),
        (0.755404408355003, 0.1246289712555339),
        (0.8656312023878318, 0.0951585116824928),
        (0.9445750230732326, 0.0622535239386479),
        (0.9894009349916499, 0.0271524594117541),
    ];
    let mut x = [0.0; 16];
    let mut w = [0.0; 16];
    for (k, (a, b)) in half.iter().enumerate() {
        x[2 * k] = -a;
        x[2 * k + 1] = *a;
        w[2 * k] = *b;
        w[2 * k + 1] = *b;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    fn pts() -> Vec<Point> {
        vec![Point::new(0.1, 0.2), Point::new(-0.5, 0.4), Point::new(0.7, -0.3), Point::new(0.0, -0.9)]
    }

    #[test]
    fn identity_gauge_is_trivial() {
        let t = CoefficientTriple::from_ids("gauss1", "rot:0.3", "bump:1,0,0,0.2").unwrap();
        let s = act(&GaugeElement::identity(), &t);
        for p in pts() {
            assert!((s.g.eval(&p) - t.g.eval(&p)).norm() < 1e-15);
            assert!((s.b.eval(&p) - t.b.eval(&p)).norm() < 1e-15);
            assert_eq!(s.q.eval(&p), t.q.eval(&p));
        }
    }

    #[test]
    fn random_gauge_fixes_boundary() {
        let k = GaugeElement::random(11, 0.05);
        let (dphi, dth) = k.boundary_defect(64);
        assert!(dphi < 1e-12 && dth < 1e-12);
        // analytic jacobian matches differences
        for p in pts() {
            let c0 = fd4(|x: &Point| k.map(x), &p, 0, 1e-4);
            let c1 = fd4(|x: &Point| k.map(x), &p, 1, 1e-4);
            assert!((Mat2::from_columns(&[c0, c1]) - k.jacobian(&p)).norm() < 1e-10);
        }
    }

    #[test]
    fn theta_gauge_changes_only_b() {
        let t = CoefficientTriple::from_ids("gauss1", "rot:0.3", "const:1").unwrap();
        let th = ScalarField::new("th", |x| (1.0 - x.norm_squared()) * x[0])
            .with_grad(|x| Vec2::new(1.0 - x.norm_squared() - 2.0 * x[0] * x[0], -2.0 * x[0] * x[1]));
        let s = act(&GaugeElement::theta_only(th.clone()), &t);
        for p in pts() {
            assert!((s.g.eval(&p) - t.g.eval(&p)).norm() < 1e-15);
            assert!((s.b.eval(&p) - (t.b.eval(&p) - th.grad(&p))).norm() < 1e-15);
        }
    }

    #[test]
    fn group_action_composes() {
        let t = CoefficientTriple::from_ids("gauss1", "bump:0.5,0.2,0,0.2", "bump:1,0,0.1,0.1").unwrap();
        let (h, k) = (GaugeElement::random(1, 0.04), GaugeElement::random(2, 0.03));
        let a = act(&h, &act(&k, &t));
        let b = act(&h.compose(&k), &t);
        for p in pts() {
            assert!((a.g.eval(&p) - b.g.eval(&p)).norm() < 1e-12);
            assert!((a.b.eval(&p) - b.b.eval(&p)).norm() < 1e-8);
            assert!((a.q.eval(&p) - b.q.eval(&p)).abs() < 1e-12);
        }
        let back = act(&k.inverse(), &act(&k, &t));
        for p in pts() {
            assert!((back.g.eval(&p) - t.g.eval(&p)).norm() < 1e-8);
            assert!((back.b.eval(&p) - t.b.eval(&p)).norm() < 1e-8);
            assert!((back.q.eval(&p) - t.q.eval(&p)).abs() < 1e-8);
        }
    }

    #[test]
    fn closed_form_pullback_of_euclid() {
        // φ(x) = x + ε(1 − |x|²)(1, 0): J = I + ε(−2x₁, −2x₂; 0, 0), φ*δ = JᵀJ
        let eps = 0.05;
        let phi = GaugeElement::new(move |x| x + Vec2::new(eps * (1.0 - x.norm_squared()), 0.0), ScalarField::zero());
        let g = pullback_metric(&MetricField::euclid(), &phi);
        for p in pts() {
            let j = Mat2::new(1.0 - 2.0 * eps * p[0], -2.0 * eps * p[1], 0.0, 1.0);
            assert!((g.eval(&p) - j.transpose() * j).norm() < 1e-10);
        }
    }

    #[test]
    fn build_phi_recovers_known_diffeo() {
        let phi0 = GaugeElement::random(5, 0.02);
        let gt = pullback_metric(&MetricField::euclid(), &phi0);
        let phi = build_phi(&MetricField::euclid(), &gt).unwrap();
        for k in 0..12 {
            let a = 0.5 * k as f64;
            for r in [0.99, 0.97, 0.95] {
                let p = Point::new(a.cos(), a.sin()) * r;
                assert!((phi.map(&p) - phi0.map(&p)).norm() < 1e-4);
            }
        }
    }

    #[test]
    fn theta_aligns_normal_components() {
        let g = registry::metric("gauss1").unwrap();
        let chart = Arc::new(BoundaryNormalChart::build(&g, 0.0, 0.3).unwrap());
        let b = registry::covector("rot:-1").unwrap();
        let bt = registry::covector("rot:-1+gradbump:0.3,0.2,-0.1,0.3+const:0.1,0.2").unwrap();
        let th = build_theta(&b, &bt, chart.clone());
        let moved = bt.minus_differential(&th);
        for &(xp, xn) in &[(0.3, 0.02), (2.0, 0.05), (5.0, 0.08)] {
            let x = chart.map(xp, xn);
            let v = chart.jacobian(xp, xn).column(1).into_owned();
            assert!((moved.eval(&x).dot(&v) - b.eval(&x).dot(&v)).abs() < 1e-6);
        }
        let z = Point::new(0.0, 1.0);
        assert!(th.eval(&z).abs() < 1e-12);
    }
}

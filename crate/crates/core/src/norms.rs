//! Finite-difference `Cᵏ` norms on the fixed Cartesian sampling of the unit disk, and the
//! interpolation inequality between them.

use crate::{CoefficientTriple, CovectorField, Error, MetricField, Point, Result, ScalarField};

/// Uniform sampling of `[-r, r]²` restricted to the closed disk of radius `r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormGrid {
    pub n: usize,
    pub radius: f64,
    /// Step of the difference stencils.
    pub h: f64,
}

impl Default for NormGrid {
    fn default() -> Self {
        Self { n: 65, radius: 1.0, h: 1.0 / 64.0 }
    }
}

impl NormGrid {
    pub fn points(&self) -> Vec<Point> {
        let d = 2.0 * self.radius / (self.n - 1) as f64;
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                let p = Point::new(-self.radius + i as f64 * d, -self.radius + j as f64 * d);
                if p.norm() <= self.radius + 1e-12 {
                    out.push(p);
                }
            }
        }
        out
    }
}

fn binomial(m: usize, j: usize) -> f64 {
    (0..j).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// Central difference `δ_x^a δ_y^b f / h^{a+b}` at `x`, componentwise.
pub fn partial(f: &dyn Fn(&Point) -> Vec<f64>, x: &Point, a: usize, b: usize, h: f64) -> Vec<f64> {
    let mut out: Option<Vec<f64>> = None;
    for i in 0..=a {
        for j in 0..=b {
            let w = binomial(a, i) * binomial(b, j) * if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            let p = x + Point::new((a as f64 / 2.0 - i as f64) * h, (b as f64 / 2.0 - j as f64) * h);
            let v = f(&p);
            let acc = out.get_or_insert_with(|| vec![0.0; v.len()]);
            for (o, vi) in acc.iter_mut().zip(v) {
                *o += w * vi;
            }
        }
    }
    let s = h.powi((a + b) as i32);
    out.unwrap_or_default().into_iter().map(|v| v / s).collect()
}

/// `‖f‖_{Cᵏ} = max_{|α| ≤ k} sup_x |∂^α f(x)|` over all components.
pub fn ck_norm(f: &dyn Fn(&Point) -> Vec<f64>, k: usize, grid: &NormGrid) -> f64 {
    let pts = grid.points();
    let mut best = 0.0f64;
    for order in 0..=k {
        for a in 0..=order {
            let b = order - a;
            for p in &pts {
                for v in partial(f, p, a, b, grid.h) {
                    best = best.max(v.abs());
                }
            }
        }
    }
    best
}

pub fn scalar_components(f: &ScalarField) -> impl Fn(&Point) -> Vec<f64> + '_ {
    move |x| vec![f.eval(x)]
}

pub fn covector_components(f: &CovectorField) -> impl Fn(&Point) -> Vec<f64> + '_ {
    move |x| {
        let v = f.eval(x);
        vec![v[0], v[1]]
    }
}

pub fn metric_components(f: &MetricField) -> impl Fn(&Point) -> Vec<f64> + '_ {
    move |x| {
        let m = f.eval(x);
        vec![m[(0, 0)], m[(0, 1)], m[(1, 1)]]
    }
}

/// Differences `(‖g − g̃‖_{C²}, ‖b − b̃‖_{C¹}, ‖q − q̃‖_{C⁰})` of two triples.
pub fn triple_distance(t: &CoefficientTriple, u: &CoefficientTriple, grid: &NormGrid) -> (f64, f64, f64) {
    let dg = |x: &Point| -> Vec<f64> {
        let m = t.g.eval(x) - u.g.eval(x);
        vec![m[(0, 0)], m[(0, 1)], m[(1, 1)]]
    };
    let db = |x: &Point| -> Vec<f64> {
        let v = t.b.eval(x) - u.b.eval(x);
        vec![v[0], v[1]]
    };
    let dq = |x: &Point| -> Vec<f64> { vec![t.q.eval(x) - u.q.eval(x)] };
    (ck_norm(&dg, 2, grid), ck_norm(&db, 1, grid), ck_norm(&dq, 0, grid))
}

/// Outcome of the interpolation check `‖f‖_{Cᵗ} ≤ C ‖f‖_{C^{t₁}}^{1−θ} ‖f‖_{C^{t₂}}^θ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpCheck {
    pub t: usize,
    pub norm_t: f64,
    pub norm_t1: f64,
    pub norm_t2: f64,
    /// Smallest admissible constant `C` on this sample.
    pub constant: f64,
}

/// Norms for the interpolation inequality at the integer `t = (1 − θ)t₁ + θt₂`.
pub fn ck_interp_norm(
    f: &dyn Fn(&Point) -> Vec<f64>,
    t1: usize,
    t2: usize,
    theta: f64,
    grid: &NormGrid,
) -> Result<InterpCheck> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Insufficient(format!("θ = {theta} must lie in [0, 1]")));
    }
    let tf = (1.0 - theta) * t1 as f64 + theta * t2 as f64;
    let t = tf.round() as usize;
    if (tf - t as f64).abs() > 1e-9 {
        return Err(Error::Insufficient(format!("interpolated order {tf} is not an integer")));
    }
    if t1.max(t2) > 4 {
        return Err(Error::Insufficient(format!("derivative order {} unavailable", t1.max(t2))));
    }
    let (norm_t, norm_t1, norm_t2) = (ck_norm(f, t, grid), ck_norm(f, t1, grid), ck_norm(f, t2, grid));
    let denom = norm_t1.powf(1.0 - theta) * norm_t2.powf(theta);
    let constant = if denom > 0.0 { norm_t / denom } else { 0.0 };
    Ok(InterpCheck { t, norm_t, norm_t1, norm_t2, constant })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_has_equal_norms() {
        let f = |_: &Point| vec![-2.5];
        let c = ck_interp_norm(&f, 0, 2, 0.5, &NormGrid::default()).unwrap();
        assert_eq!((c.norm_t, c.norm_t1, c.norm_t2), (2.5, 2.5, 2.5));
        assert!((c.constant - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sine_norms_scale_with_frequency() {
        let k = 3.0;
        let f = move |x: &Point| vec![(k * x[0]).sin()];
        let g = NormGrid { h: 1e-3, ..NormGrid::default() };
        let c = ck_interp_norm(&f, 0, 2, 0.5, &g).unwrap();
        assert!((c.norm_t2 - k * k).abs() < 1e-3 * k * k);
        assert!((c.norm_t - k).abs() < 1e-2 * k);
        assert!((c.norm_t1 - 1.0).abs() < 1e-3);
        assert!(c.constant <= 1.0 + 1e-3);
    }

    #[test]
    fn bump_fields_satisfy_interpolation() {
        for id in ["bump:1,0.2,0.1,0.05", "bump:0.3,-0.4,0.2,0.1", "lin:1,2"] {
            let q = crate::registry::potential(id).unwrap();
            let f = scalar_components(&q);
            let c = ck_interp_norm(&f, 0, 2, 0.5, &NormGrid::default()).unwrap();
            assert!(c.constant <= 10.0, "{id}: {c:?}");
        }
    }

    #[test]
    fn triple_distance_vanishes_on_identical_triples() {
        let t = CoefficientTriple::from_ids("gauss1", "rot:0.3", "const:1").unwrap();
        assert_eq!(triple_distance(&t, &t.clone(), &NormGrid::default()), (0.0, 0.0, 0.0));
    }
}

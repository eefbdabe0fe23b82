//! Built-in analytic coefficient registry.
//!
//! Ids are `+`-separated sums of terms. Metric terms:
//!
//! | id | field |
//! |----|-------|
//! | `euclid` | `δ_ij` |
//! | `conformal:c` | `c² δ_ij` |
//! | `gauss1` | `(1 + 0.3 e^{-|x|²/0.2})² δ_ij` |
//! | `gauss:a,s2[,x0,y0]` | `(1 + a e^{-|x-x0|²/s2})² δ_ij` |
//! | `trap:a` | `(1 + a e^{-|x|²/0.08})² δ_ij`, a strong lens |
//! | `perturb:seed,eps` | `eps · S(x)`, smooth random symmetric trig tensor |
//! | `tbump:a,x0,y0,s2` | `a e^{-|x-x0|²/s2} δ_ij` |
//! | `grid:path` | bicubic interpolation of a grid file |
//!
//! A metric id starting with an additive term (`perturb`, `tbump`) is taken relative to `euclid`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fields::{CovectorField, MetricField, ScalarField};
use crate::formats::GridData;
use crate::xray::TensorField2;
use crate::{Mat2, Point, Vec2};

fn args(id: &str, term: &str, n_min: usize, n_max: usize) -> Result<Vec<f64>> {
    let body = term.split_once(':').map(|(_, b)| b).unwrap_or("");
    let vals: std::result::Result<Vec<f64>, _> =
        body.split(',').filter(|s| !s.is_empty()).map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| Error::BadId { id: id.to_string(), reason: e.to_string() })?;
    if vals.len() < n_min || vals.len() > n_max {
        return Err(Error::BadId {
            id: id.to_string(),
            reason: format!("`{term}` expects {n_min}..={n_max} arguments, got {}", vals.len()),
        });
    }
    Ok(vals)
}

fn head(term: &str) -> &str {
    term.split(':').next().unwrap_or(term)
}

/// Gaussian bump `a e^{-|x-c|²/s2}` with its gradient.
#[derive(Clone, Copy, Debug)]
pub struct Bump {
    pub amp: f64,
    pub center: Point,
    pub s2: f64,
}

impl Bump {
    pub fn value(&self, x: &Point) -> f64 {
        self.amp * (-(x - self.center).norm_squared() / self.s2).exp()
    }
    pub fn grad(&self, x: &Point) -> Vec2 {
        (x - self.center) * (-2.0 / self.s2 * self.value(x))
    }
    pub fn hess(&self, x: &Point) -> Mat2 {
        let d = x - self.center;
        let v = self.value(x);
        (d * d.transpose() * (4.0 / (self.s2 * self.s2)) - Mat2::identity() * (2.0 / self.s2)) * v
    }
}

fn conformal_bump(id: &str, b: Bump) -> MetricField {
    MetricField::conformal(id, move |x| 1.0 + b.value(x), move |x| b.grad(x))
}

/// Smooth random symmetric tensor `S(x)` for the `perturb` family.
#[derive(Clone, Debug)]
pub struct TrigTensor {
    modes: Vec<[f64; 5]>, // component, amp, kx, ky, phase
}

impl TrigTensor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut modes = Vec::new();
        for comp in 0..3 {
            for _ in 0..4 {
                let amp = rng.gen_range(-1.0..1.0) * 0.25;
                let kx = rng.gen_range(-2.0..2.0);
                let ky = rng.gen_range(-2.0..2.0);
                let ph = rng.gen_range(0.0..2.0 * PI);
                modes.push([comp as f64, amp, kx, ky, ph]);
            }
        }
        Self { modes }
    }

    pub fn eval(&self, x: &Point) -> Mat2 {
        let mut c = [0.0; 3];
        for m in &self.modes {
            c[m[0] as usize] += m[1] * (m[2] * x[0] + m[3] * x[1] + m[4]).cos();
        }
        Mat2::new(c[0], c[1], c[1], c[2])
    }

    pub fn grad(&self, x: &Point) -> [Mat2; 2] {
        let mut c = [[0.0; 3]; 2];
        for m in &self.modes {
            let s = -m[1] * (m[2] * x[0] + m[3] * x[1] + m[4]).sin();
            c[0][m[0] as usize] += s * m[2];
            c[1][m[0] as usize] += s * m[3];
        }
        [Mat2::new(c[0][0], c[0][1], c[0][1], c[0][2]), Mat2::new(c[1][0], c[1][1], c[1][1], c[1][2])]
    }
}

enum MetricTerm {
    Base(MetricField),
    Additive(MetricField),
}

fn metric_term(id: &str, term: &str) -> Result<MetricTerm> {
    Ok(match head(term) {
        "euclid" => MetricTerm::Base(MetricField::euclid()),
        "conformal" => {
            let c = args(id, term, 1, 1)?[0];
            if c <= 0.0 {
                return Err(Error::BadId { id: id.into(), reason: "conformal factor must be positive".into() });
            }
            MetricTerm::Base(MetricField::conformal(term, move |_| c, |_| Vec2::zeros()))
        }
        "gauss1" => MetricTerm::Base(conformal_bump(term, Bump { amp: 0.3, center: Point::zeros(), s2: 0.2 })),
        "gauss" => {
            let a = args(id, term, 2, 4)?;
            let center = if a.len() == 4 { Point::new(a[2], a[3]) } else { Point::zeros() };
            MetricTerm::Base(conformal_bump(term, Bump { amp: a[0], center, s2: a[1] }))
        }
        "trap" => {
            let a = args(id, term, 1, 1)?[0];
            MetricTerm::Base(conformal_bump(term, Bump { amp: a, center: Point::zeros(), s2: 0.08 }))
        }
        "perturb" => {
            let a = args(id, term, 2, 2)?;
            let t = TrigTensor::new(a[0] as u64);
            let eps = a[1];
            let t2 = t.clone();
            MetricTerm::Additive(
                MetricField::new(term, move |x| t.eval(x) * eps).with_grad(move |x| {
                    let g = t2.grad(x);
                    [g[0] * eps, g[1] * eps]
                }),
            )
        }
        "tbump" => {
            let a = args(id, term, 4, 4)?;
            let b = Bump { amp: a[0], center: Point::new(a[1], a[2]), s2: a[3] };
            MetricTerm::Additive(MetricField::new(term, move |x| Mat2::identity() * b.value(x)).with_grad(move |x| {
                let g = b.grad(x);
                [Mat2::identity() * g[0], Mat2::identity() * g[1]]
            }))
        }
        "grid" => {
            let path = term.split_once(':').map(|(_, p)| p).unwrap_or("");
            let grid = GridData::read_path(path)?;
            if grid.ncomp != 3 {
                return Err(Error::Format(format!("metric grid needs 3 components, found {}", grid.ncomp)));
            }
            MetricTerm::Base(MetricField::new(term, move |x| {
                let c = grid.interp(x);
                Mat2::new(c[0], c[1], c[1], c[2])
            }))
        }
        _ => return Err(Error::UnknownId(id.to_string())),
    })
}

/// Resolve a metric registry id.
pub fn metric(id: &str) -> Result<MetricField> {
    let mut acc: Option<MetricField> = None;
    for term in id.split('+').map(str::trim) {
        let t = metric_term(id, term)?;
        acc = Some(match (acc, t) {
            (None, MetricTerm::Base(m)) => m,
            (None, MetricTerm::Additive(m)) => MetricField::euclid().add_scaled(&m, 1.0),
            (Some(a), MetricTerm::Additive(m)) | (Some(a), MetricTerm::Base(m)) => a.add_scaled(&m, 1.0),
        });
    }
    let mut m = acc.ok_or_else(|| Error::UnknownId(id.to_string()))?;
    m = rename_metric(m, id);
    Ok(m)
}

fn rename_metric(m: MetricField, id: &str) -> MetricField {
    let (a, b) = (m.clone(), m);
    MetricField::new(id, move |x| a.eval(x)).with_grad(move |x| b.grad(x))
}

/// Resolve a covector registry id.
///
/// Terms: `zero`, `const:bx,by`, `rot:β` (= β(-y, x)), `xy` (= (xy, 0)),
/// `bump:a,x0,y0,s2` (divergence-free, curl of a gaussian stream function),
/// `gradbump:a,x0,y0,s2` (exact, the differential of a gaussian), `lin:a,b,c,d`.
pub fn covector(id: &str) -> Result<CovectorField> {
    let mut terms = Vec::new();
    for term in id.split('+').map(str::trim) {
        let f: Box<dyn Fn(&Point) -> Vec2 + Send + Sync> = match head(term) {
            "zero" => Box::new(|_| Vec2::zeros()),
            "const" => {
                let a = args(id, term, 2, 2)?;
                Box::new(move |_| Vec2::new(a[0], a[1]))
            }
            "rot" => {
                let b = args(id, term, 1, 1)?[0];
                Box::new(move |x| Vec2::new(-b * x[1], b * x[0]))
            }
            "xy" => Box::new(|x| Vec2::new(x[0] * x[1], 0.0)),
            "lin" => {
                let a = args(id, term, 4, 4)?;
                Box::new(move |x| Vec2::new(a[0] * x[0] + a[1] * x[1], a[2] * x[0] + a[3] * x[1]))
            }
            "bump" => {
                let a = args(id, term, 4, 4)?;
                let b = Bump { amp: a[0], center: Point::new(a[1], a[2]), s2: a[3] };
                Box::new(move |x| {
                    let g = b.grad(x);
                    Vec2::new(g[1], -g[0])
                })
            }
            "gradbump" => {
                let a = args(id, term, 4, 4)?;
                let b = Bump { amp: a[0], center: Point::new(a[1], a[2]), s2: a[3] };
                Box::new(move |x| b.grad(x))
            }
            "grid" => {
                let path = term.split_once(':').map(|(_, p)| p).unwrap_or("");
                let grid = GridData::read_path(path)?;
                if grid.ncomp != 2 {
                    return Err(Error::Format(format!("covector grid needs 2 components, found {}", grid.ncomp)));
                }
                Box::new(move |x| {
                    let c = grid.interp(x);
                    Vec2::new(c[0], c[1])
                })
            }
            _ => return Err(Error::UnknownId(id.to_string())),
        };
        terms.push(f);
    }
    Ok(CovectorField::new(id, move |x| terms.iter().map(|f| f(x)).sum()))
}

/// Resolve a potential registry id: `zero`, `const:q`, `bump:a,x0,y0,s2`, `lin:a,b`, `grid:path`.
pub fn potential(id: &str) -> Result<ScalarField> {
    let mut terms: Vec<(Box<dyn Fn(&Point) -> f64 + Send + Sync>, Box<dyn Fn(&Point) -> Vec2 + Send + Sync>)> =
        Vec::new();
    let mut analytic = true;
    for term in id.split('+').map(str::trim) {
        match head(term) {
            "zero" => terms.push((Box::new(|_| 0.0), Box::new(|_| Vec2::zeros()))),
            "const" => {
                let c = args(id, term, 1, 1)?[0];
                terms.push((Box::new(move |_| c), Box::new(|_| Vec2::zeros())));
            }
            "lin" => {
                let a = args(id, term, 2, 2)?;
                let (a0, a1) = (a[0], a[1]);
                terms.push((Box::new(move |x| a0 * x[0] + a1 * x[1]), Box::new(move |_| Vec2::new(a0, a1))));
            }
            "bump" => {
                let a = args(id, term, 4, 4)?;
                let b = Bump { amp: a[0], center: Point::new(a[1], a[2]), s2: a[3] };
                terms.push((Box::new(move |x| b.value(x)), Box::new(move |x| b.grad(x))));
            }
            "grid" => {
                let path = term.split_once(':').map(|(_, p)| p).unwrap_or("");
                let grid = GridData::read_path(path)?;
                if grid.ncomp != 1 {
                    return Err(Error::Format(format!("potential grid needs 1 component, found {}", grid.ncomp)));
                }
                analytic = false;
                terms.push((Box::new(move |x| grid.interp(x)[0]), Box::new(|_| Vec2::zeros())));
            }
            _ => return Err(Error::UnknownId(id.to_string())),
        }
    }
    let terms = std::sync::Arc::new(terms);
    let t2 = terms.clone();
    let f = ScalarField::new(id, move |x| terms.iter().map(|(f, _)| f(x)).sum());
    Ok(if analytic { f.with_grad(move |x| t2.iter().map(|(_, g)| g(x)).sum()) } else { f })
}

/// Resolve a symmetric 2-tensor id: `zero`, `iso:a,x0,y0,s2` (a gaussian times `δ_ij`),
/// `airy:a,x0,y0,s2` (Euclidean divergence-free, `ε ∇²ψ εᵀ` of a gaussian `ψ`).
pub fn tensor(id: &str) -> Result<TensorField2> {
    let mut terms: Vec<Box<dyn Fn(&Point) -> Mat2 + Send + Sync>> = Vec::new();
    for term in id.split('+').map(str::trim) {
        match head(term) {
            "zero" => terms.push(Box::new(|_| Mat2::zeros())),
            "iso" => {
                let a = args(id, term, 4, 4)?;
                let b = Bump { amp: a[0], center: Point::new(a[1], a[2]), s2: a[3] };
                terms.push(Box::new(move |x| Mat2::identity() * b.value(x)));
            }
            "airy" => {
                let a = args(id, term, 4, 4)?;
                let b = Bump { amp: a[0], center: Point::new(a[1], a[2]), s2: a[3] };
                terms.push(Box::new(move |x| {
                    let h = b.hess(x);
                    Mat2::new(h[(1, 1)], -h[(0, 1)], -h[(0, 1)], h[(0, 0)])
                }));
            }
            _ => return Err(Error::UnknownId(id.to_string())),
        }
    }
    Ok(TensorField2::new(id, move |x| terms.iter().map(|f| f(x)).sum()))
}

/// Vector fields vanishing outside the unit disk, `v = (1-|x|²)_+^4 w(x)`, used by the ray-transform
/// kernel checks. Ids `vfield:0` … `vfield:4`.
pub fn vector_field(id: &str) -> Result<CovectorField> {
    let k = args(id, id, 1, 1)?[0] as usize;
    if head(id) != "vfield" || k > 4 {
        return Err(Error::UnknownId(id.to_string()));
    }
    Ok(CovectorField::new(id, move |x| {
        let s = (1.0 - x.norm_squared()).max(0.0);
        let c = s.powi(4);
        let w = match k {
            0 => Vec2::new(1.0, 0.0),
            1 => Vec2::new(x[1], -x[0]),
            2 => Vec2::new(x[0] * x[0], x[0] * x[1]),
            3 => Vec2::new((2.0 * x[1]).sin(), (3.0 * x[0]).cos()),
            _ => Vec2::new(1.0, x[1]) * x[0].exp(),
        };
        w * c
    }))
}

//! Geometric-optics solutions `u = e^{iλ(t−φ)}(A₀ + A₁/λ)` of the magnetic wave equation,
//! synthetic DN traces, and closed-form trace coefficients from boundary jets.
//!
//! Phases and amplitudes live on a tabulated ray family `x(s, τ)`: unit-speed geodesics that leave
//! `∂Ω` at `τ = 0` along `dφ`, so `φ(x(s, τ)) = φ₀(s) + τ`. In these coordinates the transport
//! operator is `2(∂_t + ∂_τ) − 2i b_τ + Δφ` and both amplitudes reduce to quadratures along rays.

use std::f64::consts::PI;
use std::path::Path;

use crate::charts::{inward_conormal, BoundaryJets, RayTable, SemiGeodesicChart};
use crate::error::{Error, Result};
use crate::fields::{inv2, MetricField};
use crate::formats::{read_all, write_atomic, Reader, Writer, DN_MAGIC};
use crate::geodesics::{shoot, ShootOptions, State};
use crate::linalg::fornberg;
use crate::manifold::CoefficientTriple;
use crate::{Mat2, Point, Vec2, C64};

/// Cutoff profiles. `c3` is the only one: a septic smoothstep plateau, `C³` across its transition.
pub const CHI_PROFILES: &[&str] = &["c3"];

/// One-dimensional plateau `χ₁(s)`: 1 for `|s| ≤ ½`, 0 for `|s| ≥ 1`, with derivatives up to order 2.
pub fn chi1(s: f64) -> [f64; 3] {
    let a = s.abs();
    if a <= 0.5 {
        return [1.0, 0.0, 0.0];
    }
    if a >= 1.0 {
        return [0.0, 0.0, 0.0];
    }
    let u = 2.0 * (1.0 - a);
    let (u2, u3) = (u * u, u * u * u);
    let v = u2 * u2 * (35.0 - 84.0 * u + 70.0 * u2 - 20.0 * u3);
    let dv = 140.0 * u3 * (1.0 - u).powi(3);
    let ddv = 420.0 * u2 * (1.0 - u).powi(2) * (1.0 - 2.0 * u);
    // du/ds = −2 sign(s)
    let sg = s.signum();
    [v, -2.0 * sg * dv, 4.0 * ddv]
}

/// Wrap an angle difference to `(−π, π]`.
pub fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProbeKind {
    /// Planar boundary phase `φ|∂Ω = ω′ (α − α₀)`.
    Local,
    /// Phase `ρ_g(·, z₀)` with `z₀` outside `Ω̄`, central ray along `omega0` at `z₀`.
    Global { z0: Point, omega0: Vec2 },
}

/// Boundary source `f = e^{iλ(t − φ)} χ(t, α)` together with its WKB parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub lambda: f64,
    pub t0: f64,
    /// Length `ε` of the source window `[0, ε]`.
    pub eps: f64,
    /// Cutoff radius `ε′`, in time and in boundary angle.
    pub eps_cut: f64,
    /// End of the recording window.
    pub t_end: f64,
    pub alpha0: f64,
    /// Tangential frequency `ω′` (per radian of boundary angle).
    pub omega_t: f64,
    /// Amplitude order `N` (0 or 1).
    pub order: u8,
    pub chi: String,
    pub kind: ProbeKind,
}

impl ProbeConfig {
    pub fn local(lambda: f64, alpha0: f64, omega_t: f64) -> Self {
        Self {
            lambda,
            t0: 0.25,
            eps: 0.5,
            eps_cut: 0.2,
            t_end: 0.5,
            alpha0,
            omega_t,
            order: 1,
            chi: "c3".into(),
            kind: ProbeKind::Local,
        }
    }

    pub fn global(lambda: f64, z0: Point, omega0: Vec2) -> Self {
        Self { kind: ProbeKind::Global { z0, omega0 }, omega_t: 0.0, t_end: 4.0, ..Self::local(lambda, 0.0, 0.0) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Insufficient(format!("probe: {m}")));
        if !(self.lambda > 0.0) {
            return bad("λ must be positive");
        }
        if !(0.0 < self.t0 && self.t0 < self.eps) {
            return bad("need 0 < t₀ < ε");
        }
        if !(self.eps_cut > 0.0 && self.eps_cut < self.t0.min(self.eps - self.t0)) {
            return bad("need 0 < ε′ < min(t₀, ε − t₀)");
        }
        if self.order > 1 {
            return bad("amplitude order must be 0 or 1");
        }
        if !CHI_PROFILES.contains(&self.chi.as_str()) {
            return Err(Error::UnknownId(self.chi.clone()));
        }
        Ok(())
    }

    /// `χ(t, α)` and its derivatives `[χ, χ_t, χ_α, χ_tt, χ_tα, χ_αα]`, with the spatial factor
    /// centred at `center`.
    pub fn chi_jet(&self, t: f64, alpha: f64, center: f64) -> [f64; 6] {
        let e = self.eps_cut;
        let a = chi1((t - self.t0) / e);
        let b = chi1(wrap(alpha - center) / e);
        [a[0] * b[0], a[1] * b[0] / e, a[0] * b[1] / e, a[2] * b[0] / (e * e), a[1] * b[1] / (e * e), a[0] * b[2] / (e * e)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Wkb,
    Fdtd,
}

/// Sampled DN trace `Λf` on a time × boundary-angle grid (time-major).
#[derive(Clone, Debug, PartialEq)]
pub struct DnRecord {
    pub times: Vec<f64>,
    pub alphas: Vec<f64>,
    pub trace: Vec<C64>,
    pub probe: Option<ProbeConfig>,
    /// `‖f‖_{H¹}` of the source over `[0, T] × ∂Ω`.
    pub source_norm: f64,
    pub provenance: Provenance,
}

impl DnRecord {
    pub fn zeros(times: Vec<f64>, alphas: Vec<f64>, provenance: Provenance) -> Self {
        let n = times.len() * alphas.len();
        Self { times, alphas, trace: vec![C64::new(0.0, 0.0); n], probe: None, source_norm: 0.0, provenance }
    }

    pub fn at(&self, it: usize, ia: usize) -> C64 {
        self.trace[it * self.alphas.len() + ia]
    }

    /// Discrete `L²([0,T] × ∂Ω)` norm (rectangle rule on the sample grid).
    pub fn l2_norm(&self) -> f64 {
        let dt = if self.times.len() > 1 { self.times[1] - self.times[0] } else { 1.0 };
        let da = if self.alphas.len() > 1 { (self.alphas[1] - self.alphas[0]).abs() } else { 1.0 };
        (self.trace.iter().map(|z| z.norm_sqr()).sum::<f64>() * dt * da).sqrt()
    }

    pub fn diff_norm(&self, other: &DnRecord) -> Result<f64> {
        if self.times.len() != other.times.len() || self.alphas.len() != other.alphas.len() {
            return Err(Error::GridMismatch("DN records sampled on different grids".into()));
        }
        let d = DnRecord {
            trace: self.trace.iter().zip(&other.trace).map(|(a, b)| a - b).collect(),
            ..self.clone()
        };
        Ok(d.l2_norm())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(DN_MAGIC);
        w.u32(self.times.len() as u32);
        w.u32(self.alphas.len() as u32);
        w.u32(match self.provenance {
            Provenance::Wkb => 0,
            Provenance::Fdtd => 1,
        });
        w.f64(self.source_norm);
        match &self.probe {
            None => w.u32(0),
            Some(p) => {
                w.u32(1);
                for v in [p.lambda, p.t0, p.eps, p.eps_cut, p.t_end, p.alpha0, p.omega_t] {
                    w.f64(v);
                }
                w.u32(p.order as u32);
                w.str(&p.chi);
                match &p.kind {
                    ProbeKind::Local => w.u32(0),
                    ProbeKind::Global { z0, omega0 } => {
                        w.u32(1);
                        w.f64s(&[z0[0], z0[1], omega0[0], omega0[1]]);
                    }
                }
            }
        }
        w.f64s(&self.times);
        w.f64s(&self.alphas);
        let flat: Vec<f64> = self.trace.iter().flat_map(|z| [z.re, z.im]).collect();
        w.f64s(&flat);
        w.into_bytes()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, DN_MAGIC)?;
        let nt = r.u32()? as usize;
        let na = r.u32()? as usize;
        let provenance = match r.u32()? {
            0 => Provenance::Wkb,
            1 => Provenance::Fdtd,
            p => return Err(Error::Format(format!("unknown provenance tag {p}"))),
        };
        let source_norm = r.f64()?;
        let probe = match r.u32()? {
            0 => None,
            1 => {
                let v: Vec<f64> = (0..7).map(|_| r.f64()).collect::<Result<_>>()?;
                let order = r.u32()? as u8;
                let chi = r.str()?;
                let kind = match r.u32()? {
                    0 => ProbeKind::Local,
                    1 => {
                        let z = r.f64s(4)?;
                        ProbeKind::Global { z0: Point::new(z[0], z[1]), omega0: Vec2::new(z[2], z[3]) }
                    }
                    k => return Err(Error::Format(format!("unknown probe kind {k}"))),
                };
                Some(ProbeConfig {
                    lambda: v[0],
                    t0: v[1],
                    eps: v[2],
                    eps_cut: v[3],
                    t_end: v[4],
                    alpha0: v[5],
                    omega_t: v[6],
                    order,
                    chi,
                    kind,
                })
            }
            f => return Err(Error::Format(format!("bad probe flag {f}"))),
        };
        let times = r.f64s(nt)?;
        let alphas = r.f64s(na)?;
        let flat = r.f64s(2 * nt * na)?;
        r.finish()?;
        let trace = flat.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
        Ok(Self { times, alphas, trace, probe, source_norm, provenance })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_all(path)?)
    }
}

/// Uniform-grid finite differences with a 7-point window (one-sided near the ends).
struct Fd {
    n: usize,
    h: f64,
    /// Per node: window start and weights for first and second derivatives.
    w: Vec<(usize, [f64; 7], [f64; 7])>,
}

impl Fd {
    fn new(n: usize, h: f64, periodic: bool) -> Self {
        let m = n.min(7);
        let w = (0..n)
            .map(|i| {
                let start = if periodic { i as isize - 3 } else { (i as isize - 3).clamp(0, (n - m) as isize) };
                let nodes: Vec<f64> = (0..m).map(|a| (start + a as isize - i as isize) as f64).collect();
                let c = fornberg(0.0, &nodes, 2.min(m - 1));
                let mut w1 = [0.0; 7];
                let mut w2 = [0.0; 7];
                for a in 0..m {
                    w1[a] = c[1][a] / h;
                    if m > 2 {
                        w2[a] = c[2][a] / (h * h);
                    }
                }
                (start.rem_euclid(n as isize) as usize, w1, w2)
            })
            .collect();
        Self { n, h, w }
    }

    fn apply<T>(&self, f: impl Fn(usize) -> T, i: usize, order: usize) -> T
    where
        T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
    {
        let (start, w1, w2) = &self.w[i];
        let w = if order == 1 { w1 } else { w2 };
        let mut s = T::default();
        for (a, wa) in w.iter().enumerate().take(self.n.min(7)) {
            s = s + f((start + a) % self.n) * *wa;
        }
        s
    }

    /// Fourth-order cumulative integral `∫₀^{x_k} f`.
    fn cumulative<T>(&self, f: &[T]) -> Vec<T>
    where
        T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
    {
        let n = f.len();
        let mut out = vec![T::default(); n];
        if n < 4 {
            for k in 1..n {
                out[k] = out[k - 1] + (f[k - 1] + f[k]) * (0.5 * self.h);
            }
            return out;
        }
        let c = self.h / 24.0;
        for k in 0..n - 1 {
            let inc = if k == 0 {
                f[0] * 9.0 + f[1] * 19.0 + f[2] * -5.0 + f[3]
            } else if k == n - 2 {
                f[n - 4] + f[n - 3] * -5.0 + f[n - 2] * 19.0 + f[n - 1] * 9.0
            } else {
                f[k - 1] * -1.0 + f[k] * 13.0 + f[k + 1] * 13.0 + f[k + 2] * -1.0
            };
            out[k + 1] = out[k] + inc * c;
        }
        out
    }
}

/// Chart data at one ray-family node.
#[derive(Clone, Copy, Debug, Default)]
pub struct NodeChart {
    pub x: Point,
    /// `∂x/∂(s, τ)`.
    pub jac: Mat2,
    /// Inverse metric in `(s, τ)`.
    pub ginv: Mat2,
    /// `√det` of the chart metric.
    pub sqrt_g: f64,
    /// Chart components of `b`.
    pub b: Vec2,
    pub q: f64,
}

/// Tabulated geometric-optics solution on a ray family.
#[derive(Clone, Debug)]
pub struct RayFamily {
    pub table: RayTable,
    pub probe: ProbeConfig,
    /// Phase and boundary angle at `τ = 0` per `s` node.
    pub phi0: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Centre of the spatial cutoff (boundary angle).
    pub chi_center: f64,
    pub nodes: Vec<NodeChart>,
    /// `[E, E_s, E_τ, E_ss, E_sτ, E_ττ]` per node.
    pub e_jet: Vec<[C64; 6]>,
    /// Coefficients of `(∂²_t + P)A₀` against the cutoff jet `[χ, χ_T, χ_s, χ_TT, χ_Ts, χ_ss]`.
    pub r: Vec<[C64; 6]>,
    /// `K_k = ∫₀^τ i r_k / (2E)`, so that `A₁ = E Σ_k K_k ∂^kχ`.
    pub k: Vec<[C64; 6]>,
    /// Largest valid `τ` per `s` node (before focal collapse).
    pub tau_valid: Vec<f64>,
    triple: CoefficientTriple,
}

/// Unit covector with tangential part `ω′ dα` at angle `alpha` of the unit circle, pointing inward.
pub fn local_covector(g: &MetricField, alpha: f64, omega_t: f64) -> Result<Vec2> {
    let z = Point::new(alpha.cos(), alpha.sin());
    let gi = g.inverse(&z);
    let a = Vec2::new(-alpha.sin(), alpha.cos());
    let n = Vec2::new(alpha.cos(), alpha.sin());
    let (nn, an, aa) = (n.dot(&(gi * n)), a.dot(&(gi * n)), a.dot(&(gi * a)));
    let disc = (omega_t * an).powi(2) - nn * (omega_t * omega_t * aa - 1.0);
    if disc <= 0.0 {
        return Err(Error::Glancing { norm: omega_t * omega_t * (aa - an * an / nn) });
    }
    let c = (-omega_t * an - disc.sqrt()) / nn;
    Ok(a * omega_t + n * c)
}

/// March a state until it first crosses the circle of radius `r` (entering when `inward`).
fn march_to_circle(g: &MetricField, y0: &State, r: f64, inward: bool, h: f64, max_len: f64) -> Result<(State, f64)> {
    let inside = |y: &State| (y[0] * y[0] + y[1] * y[1]).sqrt() < r;
    let mut y = *y0;
    let mut t = 0.0;
    let steps = (max_len / h).ceil() as usize;
    for n in 0..steps {
        let yn = crate::geodesics::rk4(g, &y, h);
        if inside(&yn) == inward && inside(&y) != inward {
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > 1e-14 {
                let mid = 0.5 * (lo + hi);
                if inside(&crate::geodesics::rk4(g, &y, mid)) == inward {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let s = 0.5 * (lo + hi);
            return Ok((crate::geodesics::rk4(g, &y, s), t + s));
        }
        if !yn.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { steps: n });
        }
        y = yn;
        t += h;
    }
    Err(Error::Diverged { steps })
}

fn node_chart(t: &CoefficientTriple, y: &State, d: &State) -> NodeChart {
    let x = Point::new(y[0], y[1]);
    let gi = t.g.inverse(&x);
    let v = gi * Vec2::new(y[2], y[3]);
    let jac = Mat2::new(d[0], v[0], d[1], v[1]);
    let ji = inv2(&jac);
    NodeChart {
        x,
        jac,
        ginv: ji * gi * ji.transpose(),
        sqrt_g: t.g.det(&x).sqrt() * jac.determinant().abs(),
        b: jac.transpose() * t.b.eval(&x),
        q: t.q.eval(&x),
    }
}

/// Jet `[F, F_s, F_τ, F_ss, F_sτ, F_ττ]` of `F = E χ(t − τ, s)` from the jets of `E` and of `χ`
/// in `(T, s)` variables `[χ, χ_T, χ_s, χ_TT, χ_Ts, χ_ss]`.
fn product_jet(e: &[C64; 6], x: &[C64; 6]) -> [C64; 6] {
    let [e0, es, et, ess, est, ett] = *e;
    let [c, ct, cs, ctt, cts, css] = *x;
    [
        e0 * c,
        es * c + e0 * cs,
        et * c - e0 * ct,
        ess * c + es * cs * 2.0 + e0 * css,
        est * c - es * ct + et * cs - e0 * cts,
        ett * c - et * ct * 2.0 + e0 * ctt,
    ]
}

impl RayFamily {
    pub const DT: f64 = 2.5e-3;

    /// Local family: `s` is the boundary angle of the launch point, covering the cutoff window.
    pub fn local(t: &CoefficientTriple, probe: &ProbeConfig, depth: f64) -> Result<Self> {
        probe.validate()?;
        let ds = 4e-3;
        let half = ((probe.eps_cut + 6.0 * ds) / ds).ceil() as usize;
        let n_s = 2 * half + 1;
        let s0 = probe.alpha0 - half as f64 * ds;
        for i in 0..n_s {
            local_covector(&t.g, s0 + i as f64 * ds, probe.omega_t)?;
        }
        let g = t.g.clone();
        let w = probe.omega_t;
        let init = |s: f64| {
            let st = |a: f64| -> [f64; 4] {
                let xi = local_covector(&g, a, w).unwrap_or_else(|_| Vec2::zeros());
                [a.cos(), a.sin(), xi[0], xi[1]]
            };
            let h = 1e-4;
            let (p1, m1, p2, m2) = (st(s + h), st(s - h), st(s + 2.0 * h), st(s - 2.0 * h));
            let d: [f64; 4] = std::array::from_fn(|c| (8.0 * (p1[c] - m1[c]) - (p2[c] - m2[c])) / (12.0 * h));
            (st(s), d)
        };
        let n_t = (depth / Self::DT).ceil() as usize + 8;
        let table = RayTable::build(&t.g, n_s, s0, ds, false, n_t, Self::DT, init);
        let phi0 = (0..n_s).map(|i| w * wrap(s0 + i as f64 * ds - probe.alpha0)).collect();
        let alpha = (0..n_s).map(|i| s0 + i as f64 * ds).collect();
        Ok(Self::assemble(t, probe.clone(), table, phi0, alpha, probe.alpha0))
    }

    /// Global family: narrow fan of rays from `z₀` around `omega0`, tabulated from their entry into `Ω`.
    pub fn global(t: &CoefficientTriple, probe: &ProbeConfig, n_s: usize, fan: f64) -> Result<Self> {
        probe.validate()?;
        let ProbeKind::Global { z0, omega0 } = probe.kind.clone() else {
            return Err(Error::Insufficient("global family needs a global probe".into()));
        };
        if z0.norm() <= t.domain.boundary_radius {
            return Err(Error::Domain { x: z0[0], y: z0[1], radius: t.domain.boundary_radius });
        }
        let g = t.g.clone();
        let gz = g.inverse(&z0);
        let e0 = omega0 / omega0.dot(&(gz * omega0)).sqrt();
        let perp = Vec2::new(-e0[1], e0[0]);
        let e1 = perp - e0 * (perp.dot(&(gz * e0)));
        let e1 = e1 / e1.dot(&(gz * e1)).sqrt();
        let r = t.domain.boundary_radius;
        let entry = |psi: f64| -> Result<(State, f64)> {
            let xi = e0 * psi.cos() + e1 * psi.sin();
            march_to_circle(&g, &[z0[0], z0[1], xi[0], xi[1]], r, true, 2e-3, 10.0)
        };
        let ds = fan / (n_s - 1).max(1) as f64;
        let s0 = -0.5 * fan;
        let mut states = Vec::with_capacity(n_s);
        let mut phi0 = Vec::with_capacity(n_s);
        for i in 0..n_s {
            let s = s0 + i as f64 * ds;
            let (y, tt) = entry(s)?;
            let h = 1e-4;
            let f = |a: f64| entry(a).map(|v| v.0);
            let (p1, m1, p2, m2) = (f(s + h)?, f(s - h)?, f(s + 2.0 * h)?, f(s - 2.0 * h)?);
            let d: [f64; 4] = std::array::from_fn(|c| (8.0 * (p1[c] - m1[c]) - (p2[c] - m2[c])) / (12.0 * h));
            states.push((y, d));
            phi0.push(tt);
        }
        // length of the longest chord plus margin
        let mut len: f64 = 0.0;
        for (y, _) in &states {
            let geo = shoot(&g, &Point::new(y[0], y[1]), &Vec2::new(y[2], y[3]), &ShootOptions::new(r).record(false))?;
            len = len.max(geo.exit_time);
        }
        let n_t = (len / Self::DT).ceil() as usize + 10;
        let table = RayTable::build(&t.g, n_s, s0, ds, false, n_t, Self::DT, |s| {
            let i = (((s - s0) / ds).round() as usize).min(n_s - 1);
            states[i]
        });
        let alpha: Vec<f64> = states.iter().map(|(y, _)| y[1].atan2(y[0])).collect();
        let center = alpha[n_s / 2];
        Ok(Self::assemble(t, probe.clone(), table, phi0, alpha, center))
    }

    fn assemble(t: &CoefficientTriple, probe: ProbeConfig, table: RayTable, phi0: Vec<f64>, alpha: Vec<f64>, chi_center: f64) -> Self {
        let (n_s, n_t) = (table.n_s, table.n_t);
        let idx = |i: usize, k: usize| i * n_t + k;
        let nodes: Vec<NodeChart> = table.states.iter().map(|(y, d)| node_chart(t, y, d)).collect();
        let fs = Fd::new(n_s, table.ds, false);
        let ft = Fd::new(n_t, table.dt, false);
        // flux densities √G g^{ij} and √G g^{ij} b_j
        let flux = |n: &NodeChart| -> [f64; 5] {
            let m = n.ginv * n.sqrt_g;
            let fb = m * n.b;
            [m[(0, 0)], m[(0, 1)], m[(1, 1)], fb[0], fb[1]]
        };
        let fl: Vec<[f64; 5]> = nodes.iter().map(flux).collect();
        let dsf = |c: usize, i: usize, k: usize| fs.apply(|a| fl[idx(a, k)][c], i, 1);
        let dtf = |c: usize, i: usize, k: usize| ft.apply(|b| fl[idx(i, b)][c], k, 1);
        // phase of E: cumulative ∫ b_τ
        let mut e0 = vec![C64::new(0.0, 0.0); n_s * n_t];
        let mut tau_valid = vec![table.tau_max(); n_s];
        for i in 0..n_s {
            let bt: Vec<f64> = (0..n_t).map(|k| nodes[idx(i, k)].b[1]).collect();
            let ph = ft.cumulative(&bt);
            let j0 = nodes[idx(i, 0)].sqrt_g;
            for k in 0..n_t {
                let jk = nodes[idx(i, k)].sqrt_g;
                if jk < 0.2 * j0 && tau_valid[i] == table.tau_max() {
                    tau_valid[i] = 0.8 * k as f64 * table.dt;
                }
                e0[idx(i, k)] = C64::from_polar((j0 / jk).sqrt(), ph[k]);
            }
        }
        let mut e_jet = vec![[C64::new(0.0, 0.0); 6]; n_s * n_t];
        let et: Vec<C64> = (0..n_s * n_t).map(|m| ft.apply(|b| e0[(m / n_t) * n_t + b], m % n_t, 1)).collect();
        for i in 0..n_s {
            for k in 0..n_t {
                let es = fs.apply(|a| e0[idx(a, k)], i, 1);
                let ess = fs.apply(|a| e0[idx(a, k)], i, 2);
                let ett = ft.apply(|b| e0[idx(i, b)], k, 2);
                let est = fs.apply(|a| et[idx(a, k)], i, 1);
                e_jet[idx(i, k)] = [e0[idx(i, k)], es, et[idx(i, k)], ess, est, ett];
            }
        }
        let iu = C64::i();
        let mut r = vec![[C64::new(0.0, 0.0); 6]; n_s * n_t];
        for i in 0..n_s {
            for k in 0..n_t {
                let n = &nodes[idx(i, k)];
                let beta = Vec2::new(dsf(0, i, k) + dtf(1, i, k), dsf(1, i, k) + dtf(2, i, k)) / n.sqrt_g;
                let divb = (dsf(3, i, k) + dtf(4, i, k)) / n.sqrt_g;
                let bsharp = n.ginv * n.b;
                let v = iu * divb + n.b.dot(&bsharp) + n.q;
                let e = &e_jet[idx(i, k)];
                for (c, rc) in r[idx(i, k)].iter_mut().enumerate() {
                    let mut x = [C64::new(0.0, 0.0); 6];
                    x[c] = C64::new(1.0, 0.0);
                    let f = product_jet(e, &x);
                    let (fs_, ft_) = (f[1], f[2]);
                    let lap = f[3] * n.ginv[(0, 0)] + f[4] * (2.0 * n.ginv[(0, 1)]) + f[5] * n.ginv[(1, 1)]
                        + fs_ * beta[0]
                        + ft_ * beta[1];
                    let pf = -lap + iu * 2.0 * (fs_ * bsharp[0] + ft_ * bsharp[1]) + f[0] * v;
                    *rc = e[0] * x[3] + pf;
                }
            }
        }
        let mut kk = vec![[C64::new(0.0, 0.0); 6]; n_s * n_t];
        for i in 0..n_s {
            for c in 0..6 {
                let f: Vec<C64> = (0..n_t).map(|k| iu * r[idx(i, k)][c] / (e0[idx(i, k)] * 2.0)).collect();
                let cum = ft.cumulative(&f);
                for k in 0..n_t {
                    kk[idx(i, k)][c] = cum[k];
                }
            }
        }
        Self { table, probe, phi0, alpha, chi_center, nodes, e_jet, r, k: kk, tau_valid, triple: t.clone() }
    }

    pub fn n_s(&self) -> usize {
        self.table.n_s
    }
    pub fn n_t(&self) -> usize {
        self.table.n_t
    }
    pub fn s_value(&self, i: usize) -> f64 {
        self.table.s0 + i as f64 * self.table.ds
    }
    fn idx(&self, i: usize, k: usize) -> usize {
        i * self.table.n_t + k
    }

    /// Cutoff jet in `(T, s)` variables at launch node `i`, by the chain rule through `α(s)`.
    pub fn chi_jet_node(&self, big_t: f64, i: usize) -> [C64; 6] {
        let fs = Fd::new(self.n_s(), self.table.ds, false);
        let a1 = fs.apply(|a| self.alpha[a], i, 1);
        let a2 = fs.apply(|a| self.alpha[a], i, 2);
        let j = self.probe.chi_jet(big_t, self.alpha[i], self.chi_center);
        let c = |v: f64| C64::new(v, 0.0);
        [c(j[0]), c(j[1]), c(j[2] * a1), c(j[3]), c(j[4] * a1), c(j[5] * a1 * a1 + j[2] * a2)]
    }

    /// `(A₀, A₁)` at node `(i, k)` and time `t`.
    pub fn amplitudes_node(&self, t: f64, i: usize, k: usize) -> (C64, C64) {
        let tau = k as f64 * self.table.dt;
        let x = self.chi_jet_node(t - tau, i);
        let m = self.idx(i, k);
        let e = self.e_jet[m][0];
        let a1: C64 = (0..6).map(|c| self.k[m][c] * x[c]).sum::<C64>() * e;
        (e * x[0], a1)
    }

    /// `u_wkb` at node `(i, k)`.
    pub fn u_node(&self, t: f64, i: usize, k: usize) -> C64 {
        let (a0, a1) = self.amplitudes_node(t, i, k);
        let phi = self.phi0[i] + k as f64 * self.table.dt;
        let a = if self.probe.order >= 1 { a0 + a1 / self.probe.lambda } else { a0 };
        C64::from_polar(1.0, self.probe.lambda * (t - phi)) * a
    }

    pub fn triple(&self) -> &CoefficientTriple {
        &self.triple
    }
}

/// Pairing `⟨ν, w⟩_g` of a Cartesian covector `nu` with chart components `w` through the chart inverse metric.
fn pair(nc: &NodeChart, nu: &Vec2, w: [C64; 2]) -> C64 {
    let v = nc.ginv * (nc.jac.transpose() * nu);
    w[0] * v[0] + w[1] * v[1]
}

/// Quantities of the ray family at the exit of the central ray.
#[derive(Clone, Debug)]
pub struct ExitData {
    pub alpha: f64,
    pub tau: f64,
    pub phi: f64,
    pub point: Point,
    /// `⟨ν, dφ⟩_g` with the outward conormal.
    pub nu_dphi: f64,
    /// `E`-jet and `K`-table at the exit point.
    pub e_jet: [C64; 6],
    pub k: [C64; 6],
    chart: NodeChart,
    /// `E(s_i, τ_e(s_i))` and `τ_e(s_i)` on the seven central rays.
    e_rays: [C64; 7],
    tau_rays: [f64; 7],
    /// `∂_τ E_r` of the reflected family at the boundary, and its chart.
    er_tau: C64,
    chart_r: NodeChart,
    nu: Vec2,
}

impl RayFamily {
    /// Outward unit conormal at the boundary point `x`.
    fn outward(&self, x: &Point) -> Vec2 {
        -inward_conormal(&self.triple.g, x.norm(), x[1].atan2(x[0]))
    }

    /// DN trace `Λf(t)` at launch node `i` on the source patch.
    pub fn boundary_trace(&self, t: f64, i: usize) -> C64 {
        let nc = &self.nodes[self.idx(i, 0)];
        let nu = self.outward(&nc.x);
        let lam = self.probe.lambda;
        let x = self.chi_jet_node(t, i);
        let f = product_jet(&self.e_jet[self.idx(i, 0)], &x);
        let fs = Fd::new(self.n_s(), self.table.ds, false);
        let dphi_s = fs.apply(|a| self.phi0[a], i, 1);
        let one = C64::new(1.0, 0.0);
        let nu_dphi = pair(nc, &nu, [one * dphi_s, one]);
        let nu_da0 = pair(nc, &nu, [f[1], f[2]]);
        let r: C64 = (0..6).map(|c| self.r[self.idx(i, 0)][c] * x[c]).sum();
        let nu_da1 = pair(nc, &nu, [C64::new(0.0, 0.0), C64::i() * r * 0.5]);
        let nu_b = pair(nc, &nu, [one * nc.b[0], one * nc.b[1]]);
        let mut m = -C64::i() * lam * nu_dphi * x[0] + nu_da0 - C64::i() * nu_b * x[0];
        if self.probe.order >= 1 {
            m += nu_da1 / lam;
        }
        C64::from_polar(1.0, lam * (t - self.phi0[i])) * m
    }

    /// Eikonal residual `|dφ|²_g − 1` at node `(i, k)`.
    pub fn eikonal_residual(&self, i: usize, k: usize) -> f64 {
        let fs = Fd::new(self.n_s(), self.table.ds, false);
        let d = Vec2::new(fs.apply(|a| self.phi0[a], i, 1), 1.0);
        let nc = &self.nodes[self.idx(i, k)];
        d.dot(&(nc.ginv * d)) - 1.0
    }

    /// Transport residual `|L E| / |E|` on the plateau, `L = 2∂_τ − 2i b_τ + Δφ`, at node `(i, k)`.
    pub fn transport_residual(&self, i: usize, k: usize) -> f64 {
        let ft = Fd::new(self.n_t(), self.table.dt, false);
        let fs = Fd::new(self.n_s(), self.table.ds, false);
        let flux = |a: usize, b: usize| {
            let nc = &self.nodes[self.idx(a, b)];
            let dphi = Vec2::new(fs.apply(|c| self.phi0[c], a, 1), 1.0);
            nc.ginv * dphi * nc.sqrt_g
        };
        let nc = &self.nodes[self.idx(i, k)];
        let lap_phi = (fs.apply(|a| flux(a, k)[0], i, 1) + ft.apply(|b| flux(i, b)[1], k, 1)) / nc.sqrt_g;
        let e = self.e_jet[self.idx(i, k)];
        let l = e[2] * 2.0 - C64::i() * 2.0 * nc.b[1] * e[0] + e[0] * lap_phi;
        l.norm() / e[0].norm()
    }

    /// Transport residual of `A₁`: `|i L A₁ + (∂²_t + P) A₀|` at node `(i, k)` for a cutoff jet `x`,
    /// relative to `|(∂²_t + P)A₀|`.
    pub fn transport1_residual(&self, i: usize, k: usize, x: &[C64; 6]) -> f64 {
        let ft = Fd::new(self.n_t(), self.table.dt, false);
        let m = self.idx(i, k);
        let w = |b: usize| -> C64 { (0..6).map(|c| self.k[self.idx(i, b)][c] * x[c]).sum() };
        // along a characteristic T = t − τ is fixed, so L(E w) = 2E ∂_τ w
        let lw = self.e_jet[m][0] * ft.apply(w, k, 1) * 2.0;
        let r: C64 = (0..6).map(|c| self.r[m][c] * x[c]).sum();
        (C64::i() * lw + r).norm() / r.norm().max(1e-300)
    }

    fn interp_tau<const N: usize>(&self, f: impl Fn(usize) -> [C64; N], tau: f64) -> [C64; N] {
        let (start, w) = crate::linalg::lagrange_stencil::<6>(tau / self.table.dt, self.n_t());
        let mut out = [C64::new(0.0, 0.0); N];
        for (b, wb) in w.iter().enumerate() {
            let v = f((start + b as isize) as usize);
            for c in 0..N {
                out[c] += v[c] * *wb;
            }
        }
        out
    }

    /// Exit of ray `i` through `∂Ω`: `τ_e` with `|x(s_i, τ_e)| = 1`.
    fn exit_tau(&self, i: usize) -> Result<f64> {
        let r = self.triple.domain.boundary_radius;
        let s = self.s_value(i);
        let k0 = (2..self.n_t())
            .find(|&k| self.nodes[self.idx(i, k)].x.norm() >= r)
            .ok_or(Error::Insufficient("ray does not leave the domain within the table".into()))?;
        let (mut lo, mut hi) = ((k0 - 1) as f64 * self.table.dt, k0 as f64 * self.table.dt);
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if self.table.point(s, mid).norm() >= r {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Exit data of the central ray together with the reflected family at the exit point.
    pub fn exit(&self) -> Result<ExitData> {
        let n_s = self.n_s();
        if n_s < 7 {
            return Err(Error::Insufficient("exit data needs at least 7 rays".into()));
        }
        let ic = n_s / 2;
        let t = &self.triple;
        let mut tau_rays = [0.0; 7];
        let mut e_rays = [C64::new(0.0, 0.0); 7];
        let mut reflected = [[0.0; 4]; 7];
        for (a, i) in (ic - 3..=ic + 3).enumerate() {
            let te = self.exit_tau(i)?;
            tau_rays[a] = te;
            e_rays[a] = self.interp_tau(|b| [self.e_jet[self.idx(i, b)][0]], te)[0];
            let (y, _) = self.table.eval(self.s_value(i), te);
            let x = Point::new(y[0], y[1]);
            let nu = self.outward(&x);
            let xi = Vec2::new(y[2], y[3]);
            let xr = xi - nu * (2.0 * nu.dot(&(t.g.inverse(&x) * xi)));
            reflected[a] = [y[0], y[1], xr[0], xr[1]];
        }
        let tau = tau_rays[3];
        let (y, d) = self.table.eval(self.s_value(ic), tau);
        let chart = node_chart(t, &y, &d);
        let point = chart.x;
        let nu = self.outward(&point);
        let e_jet = self.interp_tau(|b| self.e_jet[self.idx(ic, b)], tau);
        let k = self.interp_tau(|b| self.k[self.idx(ic, b)], tau);
        let fs = Fd::new(n_s, self.table.ds, false);
        let dphi_s = fs.apply(|a| self.phi0[a], ic, 1);
        let one = C64::new(1.0, 0.0);
        let nu_dphi = pair(&chart, &nu, [one * dphi_s, one]).re;
        // reflected central ray with its s-variation
        let f7 = Fd::new(7, self.table.ds, false);
        let dr: [f64; 4] = std::array::from_fn(|c| f7.apply(|a| reflected[a][c], 3, 1));
        let rt = RayTable::build(&t.g, 1, 0.0, 1.0, false, 8, self.table.dt, |_| (reflected[3], dr));
        let jr: Vec<f64> = (0..8).map(|b| node_chart(t, &rt.states[b].0, &rt.states[b].1).sqrt_g).collect();
        let f8 = Fd::new(8, self.table.dt, false);
        let lap_psi = f8.apply(|b| jr[b], 0, 1) / jr[0];
        let chart_r = node_chart(t, &rt.states[0].0, &rt.states[0].1);
        let er_tau = C64::i() * chart_r.b[1] - lap_psi * 0.5;
        let alpha = point[1].atan2(point[0]);
        if wrap(alpha - self.chi_center).abs() < self.probe.eps_cut {
            return Err(Error::PatchOverlap);
        }
        Ok(ExitData {
            alpha,
            tau,
            phi: self.phi0[ic] + tau,
            point,
            nu_dphi,
            e_jet,
            k,
            chart,
            e_rays,
            tau_rays,
            er_tau,
            chart_r,
            nu,
        })
    }

    /// DN trace at the exit point at time `t` (incident plus singly reflected wave, `u|_V = 0`).
    pub fn exit_trace(&self, ex: &ExitData, t: f64) -> C64 {
        let ic = self.n_s() / 2;
        let lam = self.probe.lambda;
        let x = self.chi_jet_node(t - ex.tau, ic);
        let f = product_jet(&ex.e_jet, &x);
        let a0 = f[0];
        let a1: C64 = (0..6).map(|c| ex.k[c] * x[c]).sum::<C64>() * ex.e_jet[0];
        let nu_da0 = pair(&ex.chart, &ex.nu, [f[1], f[2]]);
        // incident amplitude along the exit patch as a function of the ray label
        let a0inc: [C64; 7] =
            std::array::from_fn(|a| ex.e_rays[a] * self.chi_jet_node(t - ex.tau_rays[a], ic - 3 + a)[0]);
        let f7 = Fd::new(7, self.table.ds, false);
        let da0_ds = f7.apply(|a| a0inc[a], 3, 1);
        let da0_dt = ex.e_rays[3] * x[1];
        let db0 = [-da0_ds, -ex.er_tau * a0 + da0_dt];
        let nu_db0 = pair(&ex.chart_r, &ex.nu, db0);
        let amp = if self.probe.order >= 1 { a0 + a1 / lam } else { a0 };
        let m = -C64::i() * 2.0 * lam * ex.nu_dphi * amp + nu_da0 + nu_db0;
        C64::from_polar(1.0, lam * (t - ex.phi)) * m
    }

    /// Source `f(t, α)` on the launch patch (zero outside the cutoff).
    pub fn source(&self, t: f64, alpha: f64) -> C64 {
        let p = &self.probe;
        let chi = p.chi_jet(t, alpha, self.chi_center)[0];
        if chi == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let phi = match p.kind {
            ProbeKind::Local => p.omega_t * wrap(alpha - p.alpha0),
            ProbeKind::Global { .. } => self.phi0_at_alpha(alpha),
        };
        C64::from_polar(chi, p.lambda * (t - phi))
    }

    /// Boundary phase at angle `alpha` by interpolation of `φ₀` against the launch angles.
    fn phi0_at_alpha(&self, alpha: f64) -> f64 {
        let n = self.n_s();
        let a: Vec<f64> = self.alpha.iter().map(|v| wrap(v - self.chi_center)).collect();
        let x = wrap(alpha - self.chi_center);
        let (lo, hi) = if a[0] < a[n - 1] { (0, n - 1) } else { (n - 1, 0) };
        if x <= a[lo].min(a[hi]) || x >= a[lo].max(a[hi]) {
            let j = if (x - a[lo]).abs() < (x - a[hi]).abs() { lo } else { hi };
            return self.phi0[j];
        }
        let j = (0..n - 1).find(|&j| (a[j] - x) * (a[j + 1] - x) <= 0.0).unwrap_or(0);
        let w = (x - a[j]) / (a[j + 1] - a[j]);
        self.phi0[j] * (1.0 - w) + self.phi0[j + 1] * w
    }
}

/// `‖f‖_{H¹([0,T] × ∂Ω)}` of `f = e^{iλ(t − φ_b(α))} χ(t, α)` by quadrature.
pub fn source_h1_norm(fam: &RayFamily, t_end: f64) -> f64 {
    let p = &fam.probe;
    let nt = 400;
    let na = 400;
    let (dt, da) = (t_end / nt as f64, 2.0 * p.eps_cut / na as f64);
    let lam = p.lambda;
    let mut s = 0.0;
    for i in 0..=nt {
        for j in 0..=na {
            let t = i as f64 * dt;
            let a = fam.chi_center - p.eps_cut + j as f64 * da;
            let h = 1e-5;
            let f = fam.source(t, a);
            let ft = (fam.source(t + h, a) - fam.source(t - h, a)) / (2.0 * h);
            let fa = (fam.source(t, a + h) - fam.source(t, a - h)) / (2.0 * h);
            s += (f.norm_sqr() + ft.norm_sqr() + fa.norm_sqr()) * dt * da;
        }
    }
    let _ = lam;
    s.sqrt()
}

/// Sample times for a trace with `λ`: at least eight per period.
pub fn trace_times(lambda: f64, t_end: f64) -> Vec<f64> {
    let n = ((8.0 * lambda * t_end / (2.0 * PI)).ceil() as usize).max(64);
    (0..=n).map(|k| k as f64 * t_end / n as f64).collect()
}

/// Synthetic DN record: the geometric-optics trace up to order `N` on the source patch (local
/// probes) or at the exit point of the central ray (global probes).
pub fn synth_dn(t: &CoefficientTriple, probe: &ProbeConfig) -> Result<DnRecord> {
    let times = trace_times(probe.lambda, probe.t_end);
    match probe.kind {
        ProbeKind::Local => {
            let fam = RayFamily::local(t, probe, 10.0 * RayFamily::DT)?;
            let alphas: Vec<f64> = fam.alpha.clone();
            let mut rec = DnRecord::zeros(times.clone(), alphas, Provenance::Wkb);
            for (it, &tt) in times.iter().enumerate() {
                for i in 0..fam.n_s() {
                    rec.trace[it * fam.n_s() + i] = fam.boundary_trace(tt, i);
                }
            }
            rec.source_norm = source_h1_norm(&fam, probe.t_end);
            rec.probe = Some(probe.clone());
            Ok(rec)
        }
        ProbeKind::Global { .. } => {
            let fam = RayFamily::global(t, probe, 9, 0.016)?;
            let ex = fam.exit()?;
            let mut rec = DnRecord::zeros(times.clone(), vec![ex.alpha], Provenance::Wkb);
            for (it, &tt) in times.iter().enumerate() {
                rec.trace[it] = fam.exit_trace(&ex, tt);
            }
            rec.source_norm = source_h1_norm(&fam, probe.t_end);
            rec.probe = Some(probe.clone());
            Ok(rec)
        }
    }
}

/// Plateau trace coefficients `Λf / f = iλ p₁ + c₀ + c₋₁/λ + O(λ⁻²)` of a local probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceCoefficients {
    pub p1: f64,
    pub c0: C64,
    pub cm1: C64,
}

/// Closed-form trace coefficients from boundary jets for tangential frequency `omega`.
pub fn trace_coefficients(j: &BoundaryJets, omega: f64) -> Result<TraceCoefficients> {
    let w = omega;
    let (h0, h0x, h0xx, h1, h1x, h2) = (j.h0, j.h0x, j.h0xx, j.h1, j.h1x, j.h2);
    let (b0, b0x, b1, q0) = (j.b0, j.b0x, j.b1, j.q0);
    let s = 1.0 - h0 * w * w;
    if s <= 0.0 {
        return Err(Error::Glancing { norm: h0 * w * w });
    }
    let p1 = s.sqrt();
    let p1x = -h0x * w * w / (2.0 * p1);
    let p1xx = -h0xx * w * w / (2.0 * p1) - h0x * h0x * w.powi(4) / (4.0 * p1.powi(3));
    let num = -(h1 * w * w + 2.0 * h0 * w * p1x);
    let den = 2.0 * p1;
    let p2 = num / den;
    let num_x = -(h1x * w * w + 2.0 * h0x * w * p1x + 2.0 * h0 * w * p1xx);
    let p2x = (num_x * den - num * 2.0 * p1x) / (den * den);
    let p3 = -(h2 * w * w + 4.0 * h1 * w * p1x + 2.0 * h0 * p1x * p1x + 2.0 * h0 * w * p2x + 2.0 * p2 * p2) / (2.0 * p1);
    let lap0 = p2 + h0x * w / 2.0 - h1 * p1 / (2.0 * h0);
    let lap_y = h0 * p1xx + p3 + h1x * w / 2.0 + h0x * p1x / 2.0 - (h2 / (2.0 * h0) - h1 * h1 / (2.0 * h0 * h0)) * p1
        - h1 * p2 / (2.0 * h0);
    let iu = C64::i();
    let a1 = (iu * 2.0 * h0 * b0 * w - lap0) / (2.0 * p1);
    let lap0x = p2x + h0xx * w / 2.0 - (h1x * p1 + h1 * p1x) / (2.0 * h0) + h1 * p1 * h0x / (2.0 * h0 * h0);
    let a1x = (iu * 2.0 * (h0x * b0 + h0 * b0x) * w - lap0x) / (2.0 * p1) - a1 * p1x / p1;
    let a2 = (-(a1x * h0 * w + a1 * p2) * 2.0 + iu * 2.0 * (h1 * b0 * w + h0 * b1 * w + h0 * b0 * p1x)
        + iu * 2.0 * h0 * b0 * w * a1
        - lap_y
        - a1 * lap0)
        / (2.0 * p1);
    let pa0 = -a2 + a1 * (h1 / (2.0 * h0)) + iu * (h0x * b0 / 2.0 + h0 * b0x) + h0 * b0 * b0 + q0;
    Ok(TraceCoefficients { p1, c0: -a1, cm1: -iu * pa0 / (2.0 * p1) })
}

/// Local eikonal solution `φ|∂Ω = ω′(α − α₀)` by ray tracing, as a ray family of depth `depth`.
pub fn solve_eikonal_local(t: &CoefficientTriple, probe: &ProbeConfig, depth: f64) -> Result<RayFamily> {
    RayFamily::local(t, probe, depth)
}

/// Distance function `ρ_g(·, z₀)` through semi-geodesic coordinates.
pub fn solve_eikonal_global(t: &CoefficientTriple, z0: &Point) -> Result<SemiGeodesicChart> {
    let d = &t.domain;
    if z0.norm() <= d.boundary_radius {
        return Err(Error::Domain { x: z0[0], y: z0[1], radius: d.boundary_radius });
    }
    SemiGeodesicChart::build(&t.g, z0, d.boundary_radius, z0.norm() + 2.5 * d.boundary_radius, 256, 2.5e-3)
}

//! Full-wave leapfrog solver for `(∂²_t + P) u = 0` on polar grids, with Dirichlet data on the
//! unit circle and the DN trace read off the solution.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::manifold::{LocalCoefficients, OperatorScratch, StencilOperator};
use crate::wkb::{wrap, DnRecord, ProbeConfig, Provenance, RayFamily};
use crate::{CoefficientTriple, Error, Mat2, Point, Result, Vec2, C64};

/// Part of the unit disk covered by the grid. Inner and lateral edges carry `u = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    /// Full disk with a pole at the origin.
    Disk,
    /// `r_min ≤ r ≤ 1`.
    Annulus { r_min: f64 },
    /// `r_min ≤ r ≤ 1`, `|θ − center| ≤ half_width`.
    Sector { r_min: f64, center: f64, half_width: f64 },
}

/// Logically rectangular polar grid: node `(i, j)` sits at `r = r0 + i dr`, `θ = θ0 + j dθ`,
/// with the last radial row on `∂Ω`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverGrid {
    pub region: Region,
    pub n_r: usize,
    pub n_theta: usize,
    pub r0: f64,
    pub dr: f64,
    pub theta0: f64,
    pub dtheta: f64,
}

impl SolverGrid {
    pub fn new(region: Region, n_r: usize, n_theta: usize) -> Result<Self> {
        if n_r < 4 || n_theta < 4 {
            return Err(Error::GridMismatch(format!("grid {n_r} × {n_theta} is too small")));
        }
        let (r0, theta0, dtheta) = match region {
            Region::Disk => (0.0, 0.0, 2.0 * PI / n_theta as f64),
            Region::Annulus { r_min } => (r_min, 0.0, 2.0 * PI / n_theta as f64),
            Region::Sector { r_min, center, half_width } => {
                (r_min, center - half_width, 2.0 * half_width / (n_theta - 1) as f64)
            }
        };
        if !(0.0..1.0).contains(&r0) {
            return Err(Error::GridMismatch(format!("inner radius {r0} must lie in [0, 1)")));
        }
        Ok(Self { region, n_r, n_theta, r0, dr: (1.0 - r0) / (n_r - 1) as f64, theta0, dtheta })
    }

    pub fn periodic(&self) -> bool {
        !matches!(self.region, Region::Sector { .. })
    }
    pub fn len(&self) -> usize {
        self.n_r * self.n_theta
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn r(&self, i: usize) -> f64 {
        self.r0 + i as f64 * self.dr
    }
    pub fn theta(&self, j: usize) -> f64 {
        self.theta0 + j as f64 * self.dtheta
    }
    pub fn node(&self, i: usize, j: usize) -> Point {
        let (r, th) = (self.r(i), self.theta(j));
        Point::new(r * th.cos(), r * th.sin())
    }
    /// Boundary angles of the outer row.
    pub fn alphas(&self) -> Vec<f64> {
        (0..self.n_theta).map(|j| self.theta(j)).collect()
    }

    /// Nodes on which the leapfrog update runs (everything except Dirichlet rows and columns).
    fn is_free(&self, i: usize, j: usize) -> bool {
        let lateral = !self.periodic() && (j == 0 || j + 1 == self.n_theta);
        let inner = i == 0 && !matches!(self.region, Region::Disk);
        !(lateral || inner || i + 1 == self.n_r)
    }

    /// Bicubic interpolation of a grid function at `x` (zero outside the covered region).
    pub fn interpolate(&self, u: &[C64], x: &Point) -> C64 {
        let r = x.norm();
        let fi = (r - self.r0) / self.dr;
        let th = x[1].atan2(x[0]);
        let fj = if self.periodic() {
            (th - self.theta0).rem_euclid(2.0 * PI) / self.dtheta
        } else {
            wrap(th - self.theta0 - PI) / self.dtheta + PI / self.dtheta
        };
        if fi < 0.0 || fi > (self.n_r - 1) as f64 || (!self.periodic() && (fj < 0.0 || fj > (self.n_theta - 1) as f64)) {
            return C64::new(0.0, 0.0);
        }
        let (si, wi) = crate::linalg::lagrange_stencil::<4>(fi, self.n_r);
        let (sj, wj) = if self.periodic() {
            crate::linalg::lagrange_stencil_periodic::<4>(fj)
        } else {
            crate::linalg::lagrange_stencil::<4>(fj, self.n_theta)
        };
        let n = self.n_theta as isize;
        let mut out = C64::new(0.0, 0.0);
        for (a, wa) in wi.iter().enumerate() {
            let i = (si + a as isize) as usize;
            for (b, wb) in wj.iter().enumerate() {
                let j = (sj + b as isize).rem_euclid(n) as usize;
                out += u[i * self.n_theta + j] * (wa * wb);
            }
        }
        out
    }
}

/// Coefficients of `P` in polar coordinates `(r, θ)`.
pub fn polar_coefficients(t: &CoefficientTriple, r: f64, th: f64) -> LocalCoefficients {
    let x = Point::new(r * th.cos(), r * th.sin());
    if r == 0.0 {
        return LocalCoefficients { sqrt_g: 0.0, ginv: Mat2::zeros(), b: Vec2::zeros(), q: t.q.eval(&x) };
    }
    let jac = Mat2::new(th.cos(), -r * th.sin(), th.sin(), r * th.cos());
    t.local(&x).pull_back(&jac)
}

/// Discrete `P` on `grid`.
pub fn polar_operator(t: &CoefficientTriple, grid: &SolverGrid) -> StencilOperator {
    let op = StencilOperator::build(
        grid.n_r,
        grid.n_theta,
        grid.periodic(),
        (grid.r0, grid.theta0),
        (grid.dr, grid.dtheta),
        |r, th| polar_coefficients(t, r, th),
    );
    match grid.region {
        Region::Disk => {
            let mass = PI * (0.5 * grid.dr).powi(2) * t.g.det(&Point::zeros()).sqrt() / (grid.dr * grid.dtheta);
            op.with_pole(mass)
        }
        _ => op,
    }
}

/// Time-stepping parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdtdConfig {
    pub t_end: f64,
    /// Fraction of the stability limit used for `dt`.
    pub cfl: f64,
    /// Record the DN trace every this many steps.
    pub record_stride: usize,
    /// Upper bound on the step, used to put several runs on one time grid.
    pub dt: Option<f64>,
}

impl FdtdConfig {
    pub fn new(t_end: f64) -> Self {
        Self { t_end, cfl: 0.8, record_stride: 1, dt: None }
    }

    /// Config whose step is stable for every triple in `ts` on `grid`.
    pub fn shared(t_end: f64, grid: &SolverGrid, ts: &[&CoefficientTriple]) -> Self {
        let dt = ts.iter().map(|t| stable_dt(&polar_operator(t, grid), 0.8)).fold(f64::INFINITY, f64::min);
        Self { dt: Some(dt), ..Self::new(t_end) }
    }
}

/// Result of a leapfrog run.
#[derive(Clone, Debug)]
pub struct FdtdRun {
    pub grid: SolverGrid,
    pub dt: f64,
    pub steps: usize,
    pub dn: DnRecord,
    /// Solution at `t_end`.
    pub u_final: Vec<C64>,
}

/// Stable time step for `op` (leapfrog bound `dt² ρ(P) ≤ 4`, scaled by `cfl`).
pub fn stable_dt(op: &StencilOperator, cfl: f64) -> f64 {
    let qmax = op.q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    cfl * 2.0 / (op.spectral_bound() + qmax).sqrt()
}

/// DN trace `⟨ν, du⟩_g − i⟨ν, b⟩u` along the outer row.
fn dn_row(grid: &SolverGrid, coeffs: &[LocalCoefficients], u: &[C64], out: &mut [C64]) {
    let (n, m) = (grid.n_r, grid.n_theta);
    let row = |i: usize, j: usize| u[i * m + j];
    for (j, o) in out.iter_mut().enumerate() {
        let ur = (row(n - 1, j) * 3.0 - row(n - 2, j) * 4.0 + row(n - 3, j)) / (2.0 * grid.dr);
        let ut = if grid.periodic() {
            (row(n - 1, (j + 1) % m) - row(n - 1, (j + m - 1) % m)) / (2.0 * grid.dtheta)
        } else if j == 0 {
            (row(n - 1, 1) - row(n - 1, 0)) / grid.dtheta
        } else if j + 1 == m {
            (row(n - 1, j) - row(n - 1, j - 1)) / grid.dtheta
        } else {
            (row(n - 1, j + 1) - row(n - 1, j - 1)) / (2.0 * grid.dtheta)
        };
        let c = &coeffs[j];
        let norm = c.ginv[(0, 0)].sqrt();
        let nu_du = (ur * c.ginv[(0, 0)] + ut * c.ginv[(0, 1)]) / norm;
        let nu_b = (c.ginv[(0, 0)] * c.b[0] + c.ginv[(0, 1)] * c.b[1]) / norm;
        *o = nu_du - C64::i() * nu_b * row(n - 1, j);
    }
}

/// Leapfrog core: advances `(u_prev, u)` with Dirichlet data `bc(t, α)` on the outer row.
/// `observe(step, t, u)` runs after every step (and once at `t = 0`).
fn leapfrog(
    op: &StencilOperator,
    grid: &SolverGrid,
    bc: &(dyn Fn(f64, f64) -> C64 + Sync),
    mut u_prev: Vec<C64>,
    mut u: Vec<C64>,
    dt: f64,
    steps: usize,
    mut observe: impl FnMut(usize, f64, &[C64]),
) -> Result<Vec<C64>> {
    let m = grid.n_theta;
    let free: Vec<bool> = (0..grid.len()).map(|k| grid.is_free(k / m, k % m)).collect();
    let mut pu = vec![C64::new(0.0, 0.0); grid.len()];
    let mut scratch = OperatorScratch::default();
    let alphas = grid.alphas();
    observe(0, 0.0, &u);
    for n in 1..=steps {
        let t = n as f64 * dt;
        op.apply(&u, &mut pu, &mut scratch);
        u_prev.par_iter_mut().zip(u.par_iter()).zip(pu.par_iter()).zip(free.par_iter()).for_each(
            |(((up, &uc), &p), &f)| {
                *up = if f { uc * 2.0 - *up - p * (dt * dt) } else { C64::new(0.0, 0.0) };
            },
        );
        std::mem::swap(&mut u_prev, &mut u);
        let base = (grid.n_r - 1) * m;
        for (j, a) in alphas.iter().enumerate() {
            let lateral = !grid.periodic() && (j == 0 || j + 1 == m);
            u[base + j] = if lateral { C64::new(0.0, 0.0) } else { bc(t, *a) };
        }
        if n % 64 == 0 && !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step: n });
        }
        observe(n, t, &u);
    }
    Ok(u)
}

/// Solve with zero initial data and boundary source `f(t, α)` up to `cfg.t_end`, recording the DN trace.
pub fn fdtd_solve(
    t: &CoefficientTriple,
    grid: &SolverGrid,
    f: &(dyn Fn(f64, f64) -> C64 + Sync),
    cfg: &FdtdConfig,
) -> Result<FdtdRun> {
    let op = polar_operator(t, grid);
    let dt_max = cfg.dt.unwrap_or_else(|| stable_dt(&op, cfg.cfl));
    let steps = (cfg.t_end / dt_max - 1e-9).ceil().max(1.0) as usize;
    let dt = cfg.t_end / steps as f64;
    let bound = 2.0 / (op.spectral_bound() + op.q.iter().fold(0.0f64, |m, v| m.max(v.abs()))).sqrt();
    if dt > bound {
        return Err(Error::Cfl { dt, bound });
    }
    let m = grid.n_theta;
    let coeffs: Vec<LocalCoefficients> = grid.alphas().iter().map(|&a| polar_coefficients(t, 1.0, a)).collect();
    let stride = cfg.record_stride.max(1);
    let times: Vec<f64> = (0..=steps).step_by(stride).map(|n| n as f64 * dt).collect();
    let mut dn = DnRecord::zeros(times, grid.alphas(), Provenance::Fdtd);
    let mut row = vec![C64::new(0.0, 0.0); m];
    let mut u0 = vec![C64::new(0.0, 0.0); grid.len()];
    let base = (grid.n_r - 1) * m;
    for j in 0..m {
        let lateral = !grid.periodic() && (j == 0 || j + 1 == m);
        if !lateral {
            u0[base + j] = f(0.0, grid.theta(j));
        }
    }
    let u_final = leapfrog(&op, grid, f, u0.clone(), u0, dt, steps, |n, _, u| {
        if n % stride == 0 {
            dn_row(grid, &coeffs, u, &mut row);
            let it = n / stride;
            dn.trace[it * m..(it + 1) * m].copy_from_slice(&row);
        }
    })?;
    Ok(FdtdRun { grid: *grid, dt, steps, dn, u_final })
}

/// Discrete energy drift `max_n |E_n − E_0| / E_0` over `steps` leapfrog steps from a smooth
/// initial bump with homogeneous boundary data; the scheme conserves the staggered energy exactly.
pub fn energy_check(t: &CoefficientTriple, grid: &SolverGrid, steps: usize) -> Result<f64> {
    let op = polar_operator(t, grid);
    let dt = stable_dt(&op, 0.8);
    let m = grid.n_theta;
    let bump = |x: &Point| {
        let d = x - Point::new(0.2, -0.1);
        C64::from_polar((-d.norm_squared() / 0.02).exp(), 3.0 * x[0])
    };
    let mut u0 = vec![C64::new(0.0, 0.0); grid.len()];
    for k in 0..grid.len() {
        if grid.is_free(k / m, k % m) {
            u0[k] = bump(&grid.node(k / m, k % m));
        }
    }
    let weights: Vec<f64> = (0..grid.len()).map(|k| op.weight(k)).collect();
    let inner = |a: &[C64], b: &[C64]| -> f64 { (0..a.len()).map(|k| (a[k] * b[k].conj()).re * weights[k]).sum() };
    let mut pu = vec![C64::new(0.0, 0.0); grid.len()];
    let mut scratch = OperatorScratch::default();
    let mut prev = u0.clone();
    let mut energies = Vec::new();
    let zero = |_: f64, _: f64| C64::new(0.0, 0.0);
    // staggered energy ‖(uⁿ − uⁿ⁻¹)/dt‖² + Re⟨P uⁿ, uⁿ⁻¹⟩
    leapfrog(&op, grid, &zero, u0.clone(), u0, dt, steps, |n, _, u| {
        if n > 0 {
            let v: Vec<C64> = u.iter().zip(&prev).map(|(a, b)| (a - b) / dt).collect();
            op.apply(u, &mut pu, &mut scratch);
            energies.push(inner(&v, &v) + inner(&pu, &prev));
        }
        prev.copy_from_slice(u);
    })?;
    let e0 = energies[0];
    Ok(energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs())
}

/// Boundary source of a local probe, as a closure of `(t, α)`.
pub fn probe_source(t: &CoefficientTriple, probe: &ProbeConfig) -> Result<impl Fn(f64, f64) -> C64 + Sync> {
    let fam = RayFamily::local(t, probe, 0.02)?;
    Ok(move |tt: f64, a: f64| fam.source(tt, a))
}

/// Relative DN gap `max_f ‖(Λ₁ − Λ₂) f‖ / ‖f‖` over a dictionary of local probes, both maps
/// computed by the leapfrog solver on `grid`.
pub fn dn_operator_gap(
    t1: &CoefficientTriple,
    t2: &CoefficientTriple,
    grid: &SolverGrid,
    probes: &[ProbeConfig],
) -> Result<f64> {
    let mut gap = 0.0f64;
    for p in probes {
        let cfg = FdtdConfig::shared(p.t_end, grid, &[t1, t2]);
        let src = probe_source(t1, p)?;
        let a = fdtd_solve(t1, grid, &src, &cfg)?;
        let b = fdtd_solve(t2, grid, &src, &cfg)?;
        let d = a.dn.diff_norm(&b.dn)? / a.dn.l2_norm().max(1e-300);
        gap = gap.max(d);
    }
    Ok(gap)
}

/// Leapfrog solution at `t_end` extrapolated from grids `grid` and its refinement by two
/// (`(4u_{h/2} − u_h)/3`), on the nodes of `grid`. Both runs use the same Courant number.
pub fn richardson_solution(
    t: &CoefficientTriple,
    grid: &SolverGrid,
    f: &(dyn Fn(f64, f64) -> C64 + Sync),
    t_end: f64,
) -> Result<Vec<C64>> {
    let fine = SolverGrid::new(grid.region, 2 * grid.n_r - 1, 2 * grid.n_theta - if grid.periodic() { 0 } else { 1 })?;
    let dt = stable_dt(&polar_operator(t, &fine), 0.8) * 2.0;
    let steps = (t_end / dt - 1e-9).ceil() as usize;
    let dt = t_end / steps as f64;
    let mut cfg = FdtdConfig::new(t_end);
    cfg.record_stride = usize::MAX;
    cfg.dt = Some(dt);
    let coarse = fdtd_solve(t, grid, f, &cfg)?;
    cfg.dt = Some(0.5 * dt);
    let fine_run = fdtd_solve(t, &fine, f, &cfg)?;
    if fine_run.steps != 2 * coarse.steps {
        return Err(Error::GridMismatch("refined run is not on the halved time grid".into()));
    }
    let mf = fine.n_theta;
    Ok((0..grid.len())
        .map(|k| {
            let (i, j) = (k / grid.n_theta, k % grid.n_theta);
            (fine_run.u_final[2 * i * mf + 2 * j] * 4.0 - coarse.u_final[k]) / 3.0
        })
        .collect())
}

/// `‖u_fdtd − u_wkb‖_{L²}` and `‖u_fdtd‖_{L²}` at the end of the recording window of a local probe,
/// over the ray tube of the probe, with the reference computed on a sector grid of spacing
/// about `h` and Richardson-extrapolated.
pub fn wkb_discrepancy(t: &CoefficientTriple, probe: &ProbeConfig, h: f64) -> Result<(f64, f64)> {
    let depth = probe.t_end - probe.t0 + probe.eps_cut + 0.05;
    let fam = RayFamily::local(t, probe, depth)?;
    let r_min = 1.0 - depth - 0.1;
    let half_width = probe.eps_cut + 0.1 + 0.3 * depth;
    let region = Region::Sector { r_min, center: probe.alpha0, half_width };
    let n_r = ((1.0 - r_min) / h).ceil() as usize + 1;
    let n_theta = (2.0 * half_width * 0.5 * (1.0 + r_min) / h).ceil() as usize + 1;
    let grid = SolverGrid::new(region, n_r, n_theta)?;
    let src = |tt: f64, a: f64| fam.source(tt, a);
    let u = richardson_solution(t, &grid, &src, probe.t_end)?;
    let mut err = 0.0;
    let mut norm = 0.0;
    let dt_tab = fam.table.dt;
    let ds = fam.table.ds;
    for i in 0..fam.n_s() {
        for k in 0..fam.n_t() {
            let node = &fam.nodes[i * fam.n_t() + k];
            if (k as f64) * dt_tab > depth {
                continue;
            }
            let w = node.sqrt_g * ds * dt_tab;
            let uf = grid.interpolate(&u, &node.x);
            err += (uf - fam.u_node(probe.t_end, i, k)).norm_sqr() * w;
            norm += uf.norm_sqr() * w;
        }
    }
    Ok((err.sqrt(), norm.sqrt()))
}

/// Standard probe dictionary: 4 boundary locations × `λ ∈ {16, 32, 64}` × 2 tangential frequencies.
pub fn probe_dictionary() -> Vec<ProbeConfig> {
    let mut out = Vec::new();
    for k in 0..4 {
        let a = 0.3 + k as f64 * PI / 2.0;
        for lam in [16.0, 32.0, 64.0] {
            for w in [0.0, 0.35] {
                out.push(ProbeConfig::local(lam, a, w));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse(t: f64) -> f64 {
        let s = (t - 0.5) / 0.35;
        if s.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - s * s).powi(4) * (6.0 * t).sin()
        }
    }

    /// Independent radial solver for `u_tt = r⁻¹(r u_r)_r − V(r) u`, `u(1, t) = f(t)`, returning the
    /// boundary derivative `u_r(1, t)` on `times`.
    fn radial_reference(v: impl Fn(f64) -> f64, n: usize, times: &[f64]) -> Vec<f64> {
        let h = 1.0 / n as f64;
        let r: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let vv: Vec<f64> = r.iter().map(|&x| v(x)).collect();
        let t_end = *times.last().unwrap();
        let dt = 0.25 * h;
        let steps = (t_end / dt).ceil() as usize;
        let dt = t_end / steps as f64;
        let accel = |u: &[f64]| -> Vec<f64> {
            let mut a = vec![0.0; n + 1];
            a[0] = 4.0 * (u[1] - u[0]) / (h * h) - vv[0] * u[0];
            for i in 1..n {
                let (rp, rm) = (r[i] + 0.5 * h, r[i] - 0.5 * h);
                a[i] = (rp * (u[i + 1] - u[i]) - rm * (u[i] - u[i - 1])) / (r[i] * h * h) - vv[i] * u[i];
            }
            a
        };
        // velocity Verlet with boundary value imposed each step
        let mut u = vec![0.0; n + 1];
        let mut w = vec![0.0; n + 1];
        let mut out = Vec::new();
        let mut next = 0;
        let deriv = |u: &[f64]| (3.0 * u[n] - 4.0 * u[n - 1] + u[n - 2]) / (2.0 * h);
        for k in 0..=steps {
            let tk = k as f64 * dt;
            while next < times.len() && (times[next] - tk).abs() < 0.5 * dt {
                out.push(deriv(&u));
                next += 1;
            }
            if k == steps {
                break;
            }
            let a = accel(&u);
            for i in 0..n {
                w[i] += 0.5 * dt * a[i];
                u[i] += dt * w[i];
            }
            u[n] = pulse(tk + dt);
            let a = accel(&u);
            for i in 0..n {
                w[i] += 0.5 * dt * a[i];
            }
        }
        out
    }

    fn radial_error(n_r: usize) -> f64 {
        let t = CoefficientTriple::from_ids("euclid", "rot:0.5", "const:1").unwrap();
        let grid = SolverGrid::new(Region::Disk, n_r, 8).unwrap();
        let f = |tt: f64, _: f64| C64::new(pulse(tt), 0.0);
        let run = fdtd_solve(&t, &grid, &f, &FdtdConfig::new(1.2)).unwrap();
        let reference = radial_reference(|r| 0.25 * r * r + 1.0, 4000, &run.dn.times);
        let mut num = 0.0;
        let mut den = 0.0;
        for (it, &rv) in reference.iter().enumerate() {
            for ia in 0..8 {
                num += (run.dn.at(it, ia) - rv).norm_sqr();
                den += rv * rv;
            }
        }
        (num / den).sqrt()
    }

    #[test]
    fn radial_problem_matches_one_dimensional_reference() {
        let e1 = radial_error(101);
        let e2 = radial_error(201);
        assert!(e2 < 5e-3, "{e1} {e2}");
        assert!(e1 / e2 > 3.0, "{e1} {e2}");
    }

    #[test]
    fn leapfrog_conserves_discrete_energy() {
        let t = CoefficientTriple::from_ids("gauss1", "lin:0.3,-0.2,0.5,0.1", "bump:0.5,0.2,0.3,0.1").unwrap();
        let disk = SolverGrid::new(Region::Disk, 40, 32).unwrap();
        assert!(energy_check(&t, &disk, 400).unwrap() < 1e-10);
        let ann = SolverGrid::new(Region::Annulus { r_min: 0.3 }, 40, 96).unwrap();
        assert!(energy_check(&t, &ann, 400).unwrap() < 1e-10);
    }

    #[test]
    fn operator_is_symmetric_with_pole() {
        let t = CoefficientTriple::from_ids("gauss1", "lin:0.3,-0.2,0.5,0.1", "const:0.4").unwrap();
        let grid = SolverGrid::new(Region::Disk, 12, 16).unwrap();
        let op = polar_operator(&t, &grid);
        let m = grid.n_theta;
        let mk = |seed: f64| -> Vec<C64> {
            let mut u: Vec<C64> = (0..grid.len()).map(|k| C64::new((k as f64 * seed).sin(), (k as f64 * 0.7 * seed).cos())).collect();
            let p = u[0];
            u[..m].iter_mut().for_each(|v| *v = p);
            u
        };
        let (u, v) = (mk(1.3), mk(0.37));
        let mut pu = vec![C64::new(0.0, 0.0); grid.len()];
        let mut pv = pu.clone();
        let mut sc = OperatorScratch::default();
        op.apply(&u, &mut pu, &mut sc);
        op.apply(&v, &mut pv, &mut sc);
        let inner = |a: &[C64], b: &[C64]| -> C64 { (0..grid.len()).map(|k| a[k] * b[k].conj() * op.weight(k)).sum() };
        let (a, b) = (inner(&pu, &v), inner(&u, &pv));
        assert!((a - b).norm() < 1e-10 * a.norm(), "{a} {b}");
    }

    #[test]
    fn interpolation_reproduces_smooth_fields() {
        let grid = SolverGrid::new(Region::Annulus { r_min: 0.4 }, 61, 128).unwrap();
        let f = |x: &Point| C64::new(x[0] * x[1] + x[0], (2.0 * x[1]).sin());
        let m = grid.n_theta;
        let u: Vec<C64> = (0..grid.len()).map(|k| f(&grid.node(k / m, k % m))).collect();
        for p in [Point::new(0.5, 0.3), Point::new(-0.7, -0.2), Point::new(0.1, -0.8)] {
            assert!((grid.interpolate(&u, &p) - f(&p)).norm() < 1e-5);
        }
        assert_eq!(grid.interpolate(&u, &Point::new(0.1, 0.1)), C64::new(0.0, 0.0));
    }
}

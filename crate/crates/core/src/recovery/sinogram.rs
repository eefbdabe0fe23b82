//! Sinograms of `b − b̃` and `q − q̃` from exit traces of global probes whose central rays are the
//! rays of an inflow grid.

use crate::geodesics::{integrate_fixed, InflowGrid};
use crate::wkb::{ProbeConfig, RayFamily};
use crate::xray::Sinogram;
use crate::{CoefficientTriple, Error, Result, C64};
use rayon::prelude::*;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub struct SinogramDesign {
    /// Frequencies of the sweep; the fit model has as many terms.
    pub lambdas: Vec<f64>,
    /// Rays per family and angular width of the fan.
    pub n_s: usize,
    pub fan: f64,
    /// Rays whose exit phase exceeds this bound are flagged as ambiguous.
    pub phase_limit: f64,
}

impl Default for SinogramDesign {
    fn default() -> Self {
        Self { lambdas: vec![200.0, 400.0, 800.0], n_s: 9, fan: 0.016, phase_limit: 0.9 * PI }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExitSample {
    /// The ray does not enter `Ω`.
    Miss,
    /// The probe could not be synthesized (near-glancing rays, overlapping patches).
    Failed(String),
    /// DN trace at the exit point, at time `t₀ + τ_exit`, per sweep frequency.
    Hit { time: f64, alpha: f64, values: Vec<C64> },
}

/// Exit traces over an inflow grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitTraces {
    pub lambdas: Vec<f64>,
    pub samples: Vec<ExitSample>,
}

fn misses_domain(t: &CoefficientTriple, z: &crate::Point, omega: &crate::Vec2) -> bool {
    let r = t.domain.boundary_radius;
    let len = 2.0 * z.norm() + 1.0;
    let h = 5e-3;
    let states = integrate_fixed(&t.g, z, omega, h, (len / h) as usize);
    let mut prev = z.norm();
    for y in &states {
        let rad = (y[0] * y[0] + y[1] * y[1]).sqrt();
        if rad < r + 1e-3 {
            return false;
        }
        if rad > prev && rad > z.norm() {
            break;
        }
        prev = rad;
    }
    true
}

/// Exit traces of `t` for the probes launched along each grid ray. With `times`, the traces are
/// sampled at those times (one per ray) instead of at `t₀ + τ_exit` of `t`.
pub fn exit_traces(
    t: &CoefficientTriple,
    grid: &InflowGrid,
    design: &SinogramDesign,
    times: Option<&ExitTraces>,
) -> ExitTraces {
    let samples = grid
        .nodes
        .par_iter()
        .enumerate()
        .map(|(k, n)| {
            if misses_domain(t, &n.z, &n.omega) {
                return ExitSample::Miss;
            }
            let forced = times.and_then(|r| match &r.samples[k] {
                ExitSample::Hit { time, .. } => Some(*time),
                _ => None,
            });
            let probe = ProbeConfig::global(design.lambdas[0], n.z, n.omega);
            let run = || -> Result<ExitSample> {
                let mut fam = RayFamily::global(t, &probe, design.n_s, design.fan)?;
                let ex = fam.exit()?;
                let time = forced.unwrap_or(probe.t0 + ex.tau);
                let values = design
                    .lambdas
                    .iter()
                    .map(|&l| {
                        fam.probe.lambda = l;
                        fam.exit_trace(&ex, time)
                    })
                    .collect();
                Ok(ExitSample::Hit { time, alpha: ex.alpha, values })
            };
            run().unwrap_or_else(|e| ExitSample::Failed(e.to_string()))
        })
        .collect();
    ExitTraces { lambdas: design.lambdas.clone(), samples }
}

/// Exit traces of the reference `t̃` and of `t` at matching times.
pub fn exit_trace_pair(
    t: &CoefficientTriple,
    reference: &CoefficientTriple,
    grid: &InflowGrid,
    design: &SinogramDesign,
) -> (ExitTraces, ExitTraces) {
    let r = exit_traces(reference, grid, design, None);
    let d = exit_traces(t, grid, design, Some(&r));
    (d, r)
}

/// Coefficient `c₀` of `v(λ) = c₀ + c₁/λ + …` interpolated over the sweep.
fn extrapolate(lambdas: &[f64], v: &[C64]) -> C64 {
    let n = lambdas.len();
    let a = nalgebra::DMatrix::from_fn(n, n, |r, c| lambdas[r].powi(-(c as i32)));
    let inv = a.try_inverse().expect("distinct sweep frequencies");
    (0..n).map(|c| v[c] * inv[(0, c)]).sum()
}

/// `log(Λ/Λ̃)` per sweep frequency on rays hit by both traces.
fn log_ratios(data: &ExitTraces, reference: &ExitTraces, k: usize) -> Option<std::result::Result<Vec<C64>, ()>> {
    match (&data.samples[k], &reference.samples[k]) {
        (ExitSample::Miss, ExitSample::Miss) => None,
        (ExitSample::Hit { values: a, .. }, ExitSample::Hit { values: b, .. }) => {
            Some(Ok(a.iter().zip(b).map(|(x, y)| (x / y).ln()).collect()))
        }
        _ => Some(Err(())),
    }
}

fn check(data: &ExitTraces, reference: &ExitTraces, grid: &InflowGrid) -> Result<()> {
    if data.lambdas.len() < 3 {
        return Err(Error::Insufficient(format!("λ sweep of {} frequencies, need 3", data.lambdas.len())));
    }
    if data.lambdas != reference.lambdas || data.samples.len() != grid.len() || reference.samples.len() != grid.len() {
        return Err(Error::GridMismatch("exit traces and inflow grid disagree".into()));
    }
    Ok(())
}

/// Order-1 sinogram of `b − b̃`: the phase of `Λ/Λ̃` at the exit, extrapolated in `λ`. Rays missing
/// `Ω` carry zero (the fields agree outside `Ω`); rays with an ambiguous phase are flagged.
pub fn extract_b_sinogram(
    data: &ExitTraces,
    reference: &ExitTraces,
    grid: &InflowGrid,
    design: &SinogramDesign,
    metric_id: &str,
) -> Result<Sinogram> {
    check(data, reference, grid)?;
    let mut values = vec![0.0; grid.len()];
    let mut valid = vec![true; grid.len()];
    for k in 0..grid.len() {
        match log_ratios(data, reference, k) {
            None => {}
            Some(Err(())) => valid[k] = false,
            Some(Ok(l)) => {
                if l.iter().any(|v| v.im.abs() > design.phase_limit) {
                    valid[k] = false;
                    continue;
                }
                let ph: Vec<C64> = l.iter().map(|v| C64::new(v.im, 0.0)).collect();
                values[k] = extrapolate(&data.lambdas, &ph).re;
            }
        }
    }
    Ok(Sinogram::from_grid(grid, 1, metric_id, values, valid))
}

/// Order-0 sinogram of `q − q̃`: `(2/i) λ log(Λ/Λ̃)` extrapolated in `λ`. When `b ≠ b̃`, `eta`
/// supplies exit traces of `(g̃, b_rec, q̃)` and `(g̃, b̃, q̃)` built from the recovered covector, and
/// their log ratio is subtracted first.
pub fn extract_q_sinogram(
    data: &ExitTraces,
    reference: &ExitTraces,
    grid: &InflowGrid,
    metric_id: &str,
    eta: Option<(&ExitTraces, &ExitTraces)>,
) -> Result<Sinogram> {
    check(data, reference, grid)?;
    if let Some((a, b)) = eta {
        check(a, b, grid)?;
        if a.lambdas != data.lambdas {
            return Err(Error::GridMismatch("correction traces use another λ sweep".into()));
        }
    }
    let mut values = vec![0.0; grid.len()];
    let mut valid = vec![true; grid.len()];
    for k in 0..grid.len() {
        match log_ratios(data, reference, k) {
            None => {}
            Some(Err(())) => valid[k] = false,
            Some(Ok(mut l)) => {
                if let Some((a, b)) = eta {
                    match log_ratios(a, b, k) {
                        Some(Ok(c)) => l.iter_mut().zip(c).for_each(|(x, y)| *x -= y),
                        None => {}
                        Some(Err(())) => {
                            valid[k] = false;
                            continue;
                        }
                    }
                }
                let v: Vec<C64> = l.iter().zip(&data.lambdas).map(|(x, lam)| x * (-2.0 * C64::i() * lam)).collect();
                values[k] = extrapolate(&data.lambdas, &v).re;
            }
        }
    }
    Ok(Sinogram::from_grid(grid, 0, metric_id, values, valid))
}

//! Boundary jets of `(g, b, q)` from the plateau asymptotics `Λf/f = iλp₁ + c₀ + c₋₁/λ` of local
//! probes, recovered in three stages at decreasing frequencies.

use super::weighted_lsq;
use crate::charts::{BoundaryJets, BoundaryNormalChart};
use crate::wkb::{trace_coefficients, DnRecord, ProbeConfig, Provenance, RayFamily, TraceCoefficients};
use crate::{CoefficientTriple, Error, Result, C64};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::PI;

/// Probe layout for boundary recovery.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryDesign {
    /// Equispaced boundary samples.
    pub n_b: usize,
    /// Tangential frequencies `ω′` of the probes at each sample (per radian of boundary angle).
    pub directions: Vec<f64>,
    /// Fourier modes kept when differentiating recovered boundary functions.
    pub modes: usize,
    /// Multipliers of the stage frequency forming the `λ` sweep.
    pub sweep: Vec<f64>,
    pub plateau_samples: usize,
    /// Samples whose moment system is worse conditioned are flagged.
    pub cond_limit: f64,
}

impl Default for BoundaryDesign {
    fn default() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            n_b: 48,
            directions: vec![0.0, s, -s, 0.5],
            modes: 10,
            sweep: vec![1.0, 1.5, 2.0],
            plateau_samples: 16,
            cond_limit: 1e6,
        }
    }
}

impl BoundaryDesign {
    pub fn alphas(&self) -> Vec<f64> {
        (0..self.n_b).map(|j| 2.0 * PI * j as f64 / self.n_b as f64).collect()
    }
}

/// Stage frequencies `δ⁻¹, δ^{-1/2}, δ^{-1/4}` balancing the trace error `δ` against the order of
/// each coefficient; noise-free data uses fixed moderate frequencies.
pub fn stage_lambdas(delta: f64) -> [f64; 3] {
    if delta > 0.0 {
        [1.0 / delta, delta.powf(-0.5), delta.powf(-0.25)].map(|l| l.max(1.0))
    } else {
        [400.0, 100.0, 30.0]
    }
}

/// DN records of every (sample, direction, stage, sweep) probe, restricted to the plateau of the
/// cutoff at the sample point.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    pub design: BoundaryDesign,
    pub lambdas: [f64; 3],
    /// Injected trace error `δ` (relative to `λ`, the `H¹` scale of the source).
    pub noise: f64,
    pub records: Vec<DnRecord>,
}

impl BoundaryData {
    fn index(&self, j: usize, d: usize, stage: usize, k: usize) -> usize {
        let (nd, ns) = (self.design.directions.len(), self.design.sweep.len());
        ((j * nd + d) * 3 + stage) * ns + k
    }

    pub fn record(&self, j: usize, d: usize, stage: usize, k: usize) -> &DnRecord {
        &self.records[self.index(j, d, stage, k)]
    }

    /// Plateau average of `Λf / f`.
    pub fn ratio(&self, j: usize, d: usize, stage: usize, k: usize) -> C64 {
        let rec = self.record(j, d, stage, k);
        let lam = rec.probe.as_ref().map_or(0.0, |p| p.lambda);
        let n = rec.times.len() as f64;
        rec.times.iter().enumerate().map(|(it, &t)| rec.at(it, 0) * C64::from_polar(1.0, -lam * t)).sum::<C64>() / n
    }

    fn lambda(&self, stage: usize, k: usize) -> f64 {
        self.lambdas[stage] * self.design.sweep[k]
    }
}

/// Synthesize boundary data from `t` with geometric-optics traces of order 1, adding complex
/// Gaussian noise of size `noise·λ` per trace sample when `noise > 0`.
pub fn boundary_data(
    t: &CoefficientTriple,
    design: &BoundaryDesign,
    lambdas: [f64; 3],
    noise: f64,
    seed: u64,
) -> Result<BoundaryData> {
    let alphas = design.alphas();
    let nd = design.directions.len();
    let per_sample: Vec<Result<Vec<DnRecord>>> = alphas
        .par_iter()
        .enumerate()
        .map(|(j, &a)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let mut out = Vec::with_capacity(nd * 3 * design.sweep.len());
            for &w in &design.directions {
                let probe = ProbeConfig::local(lambdas[0], a, w);
                let mut fam = RayFamily::local(t, &probe, 10.0 * RayFamily::DT)?;
                let ic = fam.n_s() / 2;
                let half = 0.4 * probe.eps_cut;
                let np = design.plateau_samples;
                let times: Vec<f64> =
                    (0..np).map(|k| probe.t0 - half + 2.0 * half * k as f64 / (np - 1).max(1) as f64).collect();
                for &ls in &lambdas {
                    for &m in &design.sweep {
                        let lam = ls * m;
                        fam.probe.lambda = lam;
                        let mut rec = DnRecord::zeros(times.clone(), vec![fam.alpha[ic]], Provenance::Wkb);
                        for (it, &tt) in times.iter().enumerate() {
                            let mut v = fam.boundary_trace(tt, ic);
                            if noise > 0.0 {
                                let (re, im): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                                v += C64::new(re, im) * (noise * lam / 2f64.sqrt());
                            }
                            rec.trace[it] = v;
                        }
                        rec.probe = Some(ProbeConfig { lambda: lam, ..probe.clone() });
                        out.push(rec);
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut records = Vec::with_capacity(alphas.len() * nd * 3 * design.sweep.len());
    for r in per_sample {
        records.extend(r?);
    }
    Ok(BoundaryData { design: design.clone(), lambdas, noise, records })
}

/// Recovered boundary values at one sample, in boundary normal coordinates `(α, xⁿ)`:
/// `h = g^{αα}` with its normal derivatives, the tangential covector component with its normal
/// derivative, and the potential.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySample {
    pub alpha: f64,
    pub h0: f64,
    pub h1: f64,
    pub h2: f64,
    pub b0: f64,
    pub b1: f64,
    pub q0: f64,
    /// Fitted trace coefficients per probe direction.
    pub coeffs: Vec<TraceCoefficients>,
    /// Condition numbers of the stage moment systems.
    pub cond: [f64; 3],
    /// RMS residuals of the stage moment systems.
    pub resid: [f64; 3],
    pub flagged: bool,
}

impl BoundarySample {
    /// `g_αα` on the boundary.
    pub fn g_tan(&self) -> f64 {
        1.0 / self.h0
    }
    pub fn dn_g_tan(&self) -> f64 {
        -self.h1 / (self.h0 * self.h0)
    }
    pub fn dnn_g_tan(&self) -> f64 {
        2.0 * self.h1 * self.h1 / self.h0.powi(3) - self.h2 / (self.h0 * self.h0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryJet {
    pub samples: Vec<BoundarySample>,
    /// Stages completed (1 to 3).
    pub stages: usize,
}

/// Maximum absolute deviations from the true jets, per recovered quantity.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JetErrors {
    pub h0: f64,
    pub h1: f64,
    pub h2: f64,
    pub b0: f64,
    pub b1: f64,
    pub q0: f64,
}

impl BoundaryJet {
    pub fn errors(&self, truth: &[BoundaryJets]) -> Result<JetErrors> {
        if truth.len() != self.samples.len() {
            return Err(Error::GridMismatch(format!("{} samples against {} true jets", self.samples.len(), truth.len())));
        }
        let mut e = JetErrors::default();
        for (s, j) in self.samples.iter().zip(truth) {
            e.h0 = e.h0.max((s.h0 - j.h0).abs());
            e.h1 = e.h1.max((s.h1 - j.h1).abs());
            e.h2 = e.h2.max((s.h2 - j.h2).abs());
            e.b0 = e.b0.max((s.b0 - j.b0).abs());
            e.b1 = e.b1.max((s.b1 - j.b1).abs());
            e.q0 = e.q0.max((s.q0 - j.q0).abs());
        }
        Ok(e)
    }

    pub fn flagged(&self) -> usize {
        self.samples.iter().filter(|s| s.flagged).count()
    }
}

/// True boundary jets of `t` at `n_b` equispaced boundary angles.
pub fn true_boundary_jets(t: &CoefficientTriple, n_b: usize) -> Result<Vec<BoundaryJets>> {
    let k = BoundaryNormalChart::DEFAULT_SAMPLES.div_ceil(n_b);
    let chart = BoundaryNormalChart::build_with(&t.g, 0.0, 0.05, n_b * k, BoundaryNormalChart::DEFAULT_DT, 1.0)?;
    Ok((0..n_b).map(|j| chart.jets_at_node(t, j * k)).collect())
}

/// Truncated Fourier series of periodic samples: values, first and second derivatives.
pub fn fourier_smooth(v: &[f64], modes: usize) -> [Vec<f64>; 3] {
    let n = v.len();
    let kmax = modes.min((n - 1) / 2);
    let ang = |k: usize, j: usize| 2.0 * PI * (k * j) as f64 / n as f64;
    let coef: Vec<(f64, f64)> = (0..=kmax)
        .map(|k| {
            let (mut a, mut b) = (0.0, 0.0);
            for (j, x) in v.iter().enumerate() {
                a += x * ang(k, j).cos();
                b += x * ang(k, j).sin();
            }
            let s = if k == 0 { 1.0 } else { 2.0 } / n as f64;
            (a * s, b * s)
        })
        .collect();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for j in 0..n {
        for (k, &(a, b)) in coef.iter().enumerate() {
            let (c, s) = (ang(k, j).cos(), ang(k, j).sin());
            let kf = k as f64;
            out[0][j] += a * c + b * s;
            out[1][j] += kf * (b * c - a * s);
            out[2][j] -= kf * kf * (a * c + b * s);
        }
    }
    out
}

fn complex_rows(vals: &[C64]) -> DVector<f64> {
    DVector::from_iterator(2 * vals.len(), vals.iter().flat_map(|v| [v.re, v.im]))
}

/// Stage 0: `p₁` per direction from the `λ¹` coefficient, then `h₀ = g^{αα}` from the moment
/// system `1 − p₁² = h₀ ω′²`.
pub fn recover_boundary_metric(data: &BoundaryData) -> Result<BoundaryJet> {
    let d = &data.design;
    let ns = d.sweep.len();
    let samples = d
        .alphas()
        .into_iter()
        .enumerate()
        .map(|(j, alpha)| {
            let mut coeffs = Vec::with_capacity(d.directions.len());
            for di in 0..d.directions.len() {
                // unknowns [p₁, Re c₀, Im c₀, Re c₋₁, Im c₋₁]
                let mut a = DMatrix::zeros(2 * ns, 5);
                let mut w = DVector::zeros(2 * ns);
                let m: Vec<C64> = (0..ns).map(|k| data.ratio(j, di, 0, k)).collect();
                for k in 0..ns {
                    let l = data.lambda(0, k);
                    a[(2 * k, 1)] = 1.0;
                    a[(2 * k, 3)] = 1.0 / l;
                    a[(2 * k + 1, 0)] = l;
                    a[(2 * k + 1, 2)] = 1.0;
                    a[(2 * k + 1, 4)] = 1.0 / l;
                    w[2 * k] = 1.0 / l;
                    w[2 * k + 1] = 1.0 / l;
                }
                let (x, _) = weighted_lsq(&a, &complex_rows(&m), &w)?;
                coeffs.push(TraceCoefficients { p1: x[0], c0: C64::new(x[1], x[2]), cm1: C64::new(x[3], x[4]) });
            }
            let a = DMatrix::from_iterator(d.directions.len(), 1, d.directions.iter().map(|w| w * w));
            let y = DVector::from_iterator(d.directions.len(), coeffs.iter().map(|c| 1.0 - c.p1 * c.p1));
            let (x, cond) = weighted_lsq(&a, &y, &DVector::repeat(d.directions.len(), 1.0))?;
            let resid = ((&a * &x - &y).norm_squared() / y.len() as f64).sqrt();
            Ok(BoundarySample {
                alpha,
                h0: x[0],
                h1: 0.0,
                h2: 0.0,
                b0: 0.0,
                b1: 0.0,
                q0: 0.0,
                coeffs,
                cond: [cond, 0.0, 0.0],
                resid: [resid, 0.0, 0.0],
                flagged: cond > d.cond_limit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundaryJet { samples, stages: 1 })
}

/// Tangentially smoothed jets from the recovered stages.
fn smoothed_jets(jet: &BoundaryJet, modes: usize) -> Vec<BoundaryJets> {
    let col = |f: fn(&BoundarySample) -> f64| fourier_smooth(&jet.samples.iter().map(f).collect::<Vec<_>>(), modes);
    let h0 = col(|s| s.h0);
    let h1 = col(|s| s.h1);
    let b0 = col(|s| s.b0);
    jet.samples
        .iter()
        .enumerate()
        .map(|(j, s)| BoundaryJets {
            alpha: s.alpha,
            h0: h0[0][j],
            h0x: h0[1][j],
            h0xx: h0[2][j],
            h1: h1[0][j],
            h1x: h1[1][j],
            h2: s.h2,
            b0: b0[0][j],
            b0x: b0[1][j],
            b1: s.b1,
            q0: s.q0,
        })
        .collect()
}

/// Solve `Σ xᵤ basisᵤ(ω) = meas(ω) − base(ω)` over the directions, where `coef(jets, ω)` is affine
/// in the unknown jet entries set by `set`.
fn affine_moment_solve(
    base: &BoundaryJets,
    directions: &[f64],
    meas: &[C64],
    n_unknowns: usize,
    set: impl Fn(&mut BoundaryJets, usize, f64),
    coef: impl Fn(&TraceCoefficients) -> C64,
) -> Result<(Vec<f64>, f64, f64)> {
    let eval = |x: &[f64], w: f64| -> Result<C64> {
        let mut j = *base;
        for (u, &v) in x.iter().enumerate() {
            set(&mut j, u, v);
        }
        Ok(coef(&trace_coefficients(&j, w)?))
    };
    let zero = vec![0.0; n_unknowns];
    let mut a = DMatrix::zeros(2 * directions.len(), n_unknowns);
    let mut y = Vec::with_capacity(directions.len());
    for (r, &w) in directions.iter().enumerate() {
        let c0 = eval(&zero, w)?;
        y.push(meas[r] - c0);
        for u in 0..n_unknowns {
            let mut e = zero.clone();
            e[u] = 1.0;
            let d = eval(&e, w)? - c0;
            a[(2 * r, u)] = d.re;
            a[(2 * r + 1, u)] = d.im;
        }
    }
    let y = complex_rows(&y);
    let (x, cond) = weighted_lsq(&a, &y, &DVector::repeat(y.len(), 1.0))?;
    let resid = ((&a * &x - &y).norm_squared() / y.len() as f64).sqrt();
    Ok((x.iter().copied().collect(), cond, resid))
}

/// Stage 1: `c₀` per direction with `p₁` fixed, then `(∂ₙh, b_α)` from the moment system.
pub fn recover_boundary_jet1(data: &BoundaryData, jet0: &BoundaryJet) -> Result<BoundaryJet> {
    let d = &data.design;
    let ns = d.sweep.len();
    let base = smoothed_jets(jet0, d.modes);
    let mut out = jet0.clone();
    for (j, s) in out.samples.iter_mut().enumerate() {
        for (di, c) in s.coeffs.iter_mut().enumerate() {
            // unknowns [Re c₀, Im c₀, Re c₋₁, Im c₋₁]
            let mut a = DMatrix::zeros(2 * ns, 4);
            let mut w = DVector::zeros(2 * ns);
            let mut m = Vec::with_capacity(ns);
            for k in 0..ns {
                let l = data.lambda(1, k);
                m.push(data.ratio(j, di, 1, k) - C64::new(0.0, l * c.p1));
                a[(2 * k, 0)] = 1.0;
                a[(2 * k, 2)] = 1.0 / l;
                a[(2 * k + 1, 1)] = 1.0;
                a[(2 * k + 1, 3)] = 1.0 / l;
                w[2 * k] = 1.0 / l;
                w[2 * k + 1] = 1.0 / l;
            }
            let (x, _) = weighted_lsq(&a, &complex_rows(&m), &w)?;
            c.c0 = C64::new(x[0], x[1]);
            c.cm1 = C64::new(x[2], x[3]);
        }
        let meas: Vec<C64> = s.coeffs.iter().map(|c| c.c0).collect();
        let (x, cond, resid) = affine_moment_solve(
            &base[j],
            &d.directions,
            &meas,
            2,
            |jj, u, v| match u {
                0 => jj.h1 = v,
                _ => jj.b0 = v,
            },
            |c| c.c0,
        )?;
        s.h1 = x[0];
        s.b0 = x[1];
        s.cond[1] = cond;
        s.resid[1] = resid;
        s.flagged |= cond > d.cond_limit;
    }
    out.stages = 2;
    Ok(out)
}

/// Stage 2: `c₋₁` per direction with `p₁, c₀` fixed, then `(∂ₙ²h, ∂ₙb_α, q)` from the moment
/// system (the `ω′ = 0` probe carries the `q` plus second-determinant combination).
pub fn recover_boundary_jet2(data: &BoundaryData, jet1: &BoundaryJet) -> Result<BoundaryJet> {
    if jet1.stages < 2 {
        return Err(Error::Insufficient("second boundary stage needs the first".into()));
    }
    let d = &data.design;
    let ns = d.sweep.len();
    let base = smoothed_jets(jet1, d.modes);
    let mut out = jet1.clone();
    for (j, s) in out.samples.iter_mut().enumerate() {
        for (di, c) in s.coeffs.iter_mut().enumerate() {
            let (mut num, mut den) = (C64::new(0.0, 0.0), 0.0);
            for k in 0..ns {
                let l = data.lambda(2, k);
                let y = (data.ratio(j, di, 2, k) - C64::new(0.0, l * c.p1) - c.c0) * l;
                let w = 1.0 / (l * l * l * l);
                num += y * w;
                den += w;
            }
            c.cm1 = num / den;
        }
        let meas: Vec<C64> = s.coeffs.iter().map(|c| c.cm1).collect();
        let (x, cond, resid) = affine_moment_solve(
            &base[j],
            &d.directions,
            &meas,
            3,
            |jj, u, v| match u {
                0 => jj.h2 = v,
                1 => jj.b1 = v,
                _ => jj.q0 = v,
            },
            |c| c.cm1,
        )?;
        s.h2 = x[0];
        s.b1 = x[1];
        s.q0 = x[2];
        s.cond[2] = cond;
        s.resid[2] = resid;
        s.flagged |= cond > d.cond_limit;
    }
    out.stages = 3;
    Ok(out)
}

/// All three boundary stages.
pub fn recover_boundary_jet(data: &BoundaryData) -> Result<BoundaryJet> {
    let j0 = recover_boundary_metric(data)?;
    let j1 = recover_boundary_jet1(data, &j0)?;
    recover_boundary_jet2(data, &j1)
}

/// Boundary-jet recovery under injected trace noise `δ`: errors against the true jets, averaged
/// over independent noise realizations.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadePoint {
    pub delta: f64,
    pub lambdas: [f64; 3],
    pub errors: JetErrors,
    pub max_cond: f64,
    pub flagged: usize,
}

pub fn boundary_cascade(
    t: &CoefficientTriple,
    design: &BoundaryDesign,
    deltas: &[f64],
    seeds: &[u64],
) -> Result<Vec<CascadePoint>> {
    if seeds.is_empty() {
        return Err(Error::Insufficient("noise cascade needs at least one seed".into()));
    }
    let truth = true_boundary_jets(t, design.n_b)?;
    deltas
        .iter()
        .map(|&delta| {
            let lambdas = stage_lambdas(delta);
            let mut acc = JetErrors::default();
            let (mut max_cond, mut flagged) = (0.0f64, 0);
            for &seed in seeds {
                let data = boundary_data(t, design, lambdas, delta, seed)?;
                let jet = recover_boundary_jet(&data)?;
                let e = jet.errors(&truth)?;
                acc.h0 += e.h0;
                acc.h1 += e.h1;
                acc.h2 += e.h2;
                acc.b0 += e.b0;
                acc.b1 += e.b1;
                acc.q0 += e.q0;
                max_cond = jet.samples.iter().flat_map(|s| s.cond).fold(max_cond, f64::max);
                flagged += jet.flagged();
            }
            let n = seeds.len() as f64;
            let errors = JetErrors {
                h0: acc.h0 / n,
                h1: acc.h1 / n,
                h2: acc.h2 / n,
                b0: acc.b0 / n,
                b1: acc.b1 / n,
                q0: acc.q0 / n,
            };
            log::info!("boundary cascade δ = {delta:.1e}: max condition {max_cond:.2e}");
            Ok(CascadePoint { delta, lambdas, errors, max_cond, flagged })
        })
        .collect()
}

//! Hölder experiment: DN gaps and gauge-aligned coefficient distances along a family of triples
//! converging to a base triple, with the recovery stages run at the measured data error.

use super::{boundary_cascade, loglog_slope, BoundaryDesign, JetErrors};
use crate::charts::BoundaryNormalChart;
use crate::gauge::{act, build_phi, build_theta, GaugeElement};
use crate::norms::{triple_distance, NormGrid};
use crate::registry;
use crate::wavesolver::{fdtd_solve, polar_operator, probe_dictionary, probe_source, stable_dt, FdtdConfig, FdtdRun, Region, SolverGrid};
use crate::wkb::ProbeConfig;
use crate::{CoefficientTriple, CovectorField, Error, MetricField, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// Version tag of the probe dictionary used for DN gaps.
pub const PROBE_DICTIONARY: &str = "local-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolderConfig {
    pub metric: String,
    pub covector: String,
    pub potential: String,
    /// Additive perturbations; the family is `t + ε (δg, δb, δq)`.
    pub metric_perturbation: String,
    pub covector_perturbation: String,
    pub potential_perturbation: String,
    pub eps: Vec<f64>,
    pub n_r: usize,
    pub n_theta: usize,
    pub r_min: f64,
    /// Recording window of the dictionary probes.
    pub probe_t_end: f64,
    /// Noise realizations per boundary-stage run.
    pub seeds: Vec<u64>,
    pub n_b: usize,
    /// Sobolev order `m` and target exponent `μ` fixing the blend exponent `M = 2m/μ`.
    pub m: u32,
    pub mu: f64,
    pub c_kappa: f64,
    pub c1: f64,
}

impl Default for HolderConfig {
    fn default() -> Self {
        Self {
            metric: "gauss1".into(),
            covector: "rot:0.3".into(),
            potential: "const:0.5".into(),
            metric_perturbation: "tbump:0.5,0.76,0.25,0.01".into(),
            covector_perturbation: "bump:0.05,-0.2,0.78,0.01".into(),
            potential_perturbation: "bump:2,-0.76,-0.25,0.01".into(),
            eps: vec![0.2, 0.1, 0.05, 0.025],
            n_r: 128,
            n_theta: 256,
            r_min: 0.4,
            probe_t_end: 0.8,
            seeds: (1..=6).collect(),
            n_b: 48,
            m: 2,
            mu: 0.9,
            c_kappa: 1.0,
            c1: 8.0,
        }
    }
}

impl HolderConfig {
    /// Blend exponent `M = ⌈2m/μ⌉`.
    pub fn blend_exponent(&self) -> f64 {
        (2.0 * self.m as f64 / self.mu).ceil()
    }

    pub fn hash(&self) -> String {
        let d = Sha256::digest(format!("{self:?}").as_bytes());
        d.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn base(&self) -> Result<CoefficientTriple> {
        CoefficientTriple::from_ids(&self.metric, &self.covector, &self.potential)
    }

    /// `t + ε (δg, δb, δq)`.
    pub fn member(&self, eps: f64) -> Result<CoefficientTriple> {
        let t = self.base()?;
        if eps == 0.0 {
            return Ok(t);
        }
        let dg = registry::metric(&self.metric_perturbation)?.add_scaled(&MetricField::euclid(), -1.0);
        let db: CovectorField = registry::covector(&self.covector_perturbation)?;
        let dq = registry::potential(&self.potential_perturbation)?;
        Ok(CoefficientTriple { g: t.g.add_scaled(&dg, eps), b: t.b.add_scaled(&db, eps), q: t.q.add_scaled(&dq, eps), domain: t.domain })
    }

    fn probes(&self) -> Vec<ProbeConfig> {
        probe_dictionary().into_iter().map(|p| ProbeConfig { t_end: self.probe_t_end, ..p }).collect()
    }
}

/// Gauge element aligning `t̃` with `t` near the boundary: the boundary normal chart transition
/// followed by the phase making the normal covector components agree.
pub fn align_gauge(t: &CoefficientTriple, t_tilde: &CoefficientTriple) -> Result<CoefficientTriple> {
    let phi = build_phi(&t_tilde.g, &t.g)?;
    let moved = act(&phi, t_tilde);
    let chart = Arc::new(BoundaryNormalChart::build(&t.g, 0.0, 0.3)?);
    let theta = build_theta(&t.b, &moved.b, chart);
    Ok(act(&GaugeElement::theta_only(theta), &moved))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderRow {
    pub eps: f64,
    pub delta: f64,
    /// `‖g − g̃_*‖_{C²}`, `‖b − b̃_*‖_{C¹}`, `‖q − q̃_*‖_{C⁰}` after alignment.
    pub err_g: f64,
    pub err_b: f64,
    pub err_q: f64,
    /// Boundary-stage errors of `(h₀, b_α, q)` recovered at data error `δ`.
    pub stage_g: f64,
    pub stage_b: f64,
    pub stage_q: f64,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Slope {
    pub value: f64,
    /// Two standard errors of the fit.
    pub band: f64,
}

impl Slope {
    fn fit(x: &[f64], y: &[f64]) -> Self {
        let (value, se) = loglog_slope(x, y);
        Self { value, band: 2.0 * se }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub probe_dictionary: String,
    pub rows: Vec<HolderRow>,
    pub mu_g: Slope,
    pub mu_b: Slope,
    pub mu_q: Slope,
    pub stage_mu_g: Slope,
    pub stage_mu_b: Slope,
    pub stage_mu_q: Slope,
    pub gauge: String,
    pub blend_exponent: f64,
    pub caveat: String,
}

impl ExperimentReport {
    pub fn monotone(&self) -> bool {
        self.mu_g.value >= self.mu_b.value && self.mu_b.value >= self.mu_q.value
    }
}

fn reference_runs(t: &CoefficientTriple, grid: &SolverGrid, probes: &[ProbeConfig], dt: f64) -> Result<Vec<FdtdRun>> {
    probes
        .iter()
        .map(|p| {
            let src = probe_source(t, p)?;
            fdtd_solve(t, grid, &src, &FdtdConfig { dt: Some(dt), ..FdtdConfig::new(p.t_end) })
        })
        .collect()
}

/// `max_f ‖(Λ − Λ̃) f‖ / ‖Λ f‖` against precomputed runs of the base triple.
fn gap_against(
    base: &CoefficientTriple,
    reference: &[FdtdRun],
    t: &CoefficientTriple,
    grid: &SolverGrid,
    probes: &[ProbeConfig],
    dt: f64,
) -> Result<f64> {
    let mut gap = 0.0f64;
    for (p, r) in probes.iter().zip(reference) {
        let src = probe_source(base, p)?;
        let run = fdtd_solve(t, grid, &src, &FdtdConfig { dt: Some(dt), ..FdtdConfig::new(p.t_end) })?;
        gap = gap.max(run.dn.diff_norm(&r.dn)? / r.dn.l2_norm().max(1e-300));
    }
    Ok(gap)
}

pub fn holder_experiment(cfg: &HolderConfig) -> Result<ExperimentReport> {
    if cfg.eps.len() < 4 {
        return Err(Error::Insufficient(format!("Hölder fit needs at least 4 ε values, got {}", cfg.eps.len())));
    }
    let base = cfg.base()?;
    let members: Vec<CoefficientTriple> = cfg.eps.iter().map(|&e| cfg.member(e)).collect::<Result<_>>()?;
    let grid = SolverGrid::new(Region::Annulus { r_min: cfg.r_min }, cfg.n_r, cfg.n_theta)?;
    let probes = cfg.probes();
    let dt = std::iter::once(&base)
        .chain(&members)
        .map(|t| stable_dt(&polar_operator(t, &grid), 0.8))
        .fold(f64::INFINITY, f64::min);
    let reference = reference_runs(&base, &grid, &probes, dt)?;
    let design = BoundaryDesign { n_b: cfg.n_b, ..BoundaryDesign::default() };
    let norm_grid = NormGrid::default();
    let mut rows = Vec::with_capacity(cfg.eps.len() + 1);
    for (eps, t) in std::iter::once((0.0, &base)).chain(cfg.eps.iter().copied().zip(&members)) {
        let run = || -> Result<HolderRow> {
            let delta = if eps == 0.0 { 0.0 } else { gap_against(&base, &reference, t, &grid, &probes, dt)? };
            let aligned = align_gauge(&base, t)?;
            let (err_g, err_b, err_q) = triple_distance(&base, &aligned, &norm_grid);
            let stage = boundary_cascade(t, &design, &[delta], &cfg.seeds)?;
            let e: JetErrors = stage[0].errors;
            log::info!("Hölder ε = {eps}: δ = {delta:.3e}, errors {err_g:.3e} {err_b:.3e} {err_q:.3e}");
            Ok(HolderRow { eps, delta, err_g, err_b, err_q, stage_g: e.h0, stage_b: e.b0, stage_q: e.q0, failure: None })
        };
        rows.push(run().unwrap_or_else(|e| HolderRow {
            eps,
            delta: f64::NAN,
            err_g: f64::NAN,
            err_b: f64::NAN,
            err_q: f64::NAN,
            stage_g: f64::NAN,
            stage_b: f64::NAN,
            stage_q: f64::NAN,
            failure: Some(e.to_string()),
        }));
    }
    let ok: Vec<&HolderRow> = rows.iter().filter(|r| r.failure.is_none() && r.eps > 0.0).collect();
    if ok.len() < 4 {
        return Err(Error::Insufficient(format!("only {} successful ε values", ok.len())));
    }
    let d: Vec<f64> = ok.iter().map(|r| r.delta).collect();
    let col = |f: fn(&HolderRow) -> f64| -> Vec<f64> { ok.iter().map(|r| f(r)).collect() };
    Ok(ExperimentReport {
        config_hash: cfg.hash(),
        probe_dictionary: PROBE_DICTIONARY.into(),
        mu_g: Slope::fit(&d, &col(|r| r.err_g)),
        mu_b: Slope::fit(&d, &col(|r| r.err_b)),
        mu_q: Slope::fit(&d, &col(|r| r.err_q)),
        stage_mu_g: Slope::fit(&d, &col(|r| r.stage_g)),
        stage_mu_b: Slope::fit(&d, &col(|r| r.stage_b)),
        stage_mu_q: Slope::fit(&d, &col(|r| r.stage_q)),
        rows,
        gauge: "boundary normal chart transition φ, then normal-component phase θ".into(),
        blend_exponent: cfg.blend_exponent(),
        caveat: "δ is the relative DN gap over a finite probe dictionary and may underestimate the operator norm".into(),
    })
}

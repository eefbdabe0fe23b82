//! Subcommand bodies. Each writes its artifacts into the run directory.

use crate::artifacts::{Plot, Run};
use anyhow::{Context, Result};
use serde::Serialize;
use simpleray::config::{RunConfig, TripleSpec};
use simpleray::gauge::{act, GaugeElement};
use simpleray::geodesics::{boundary_distance, hamiltonian, inflow, shoot, InflowGrid, ShootOptions};
use simpleray::recovery::{self as rec, BoundaryDesign};
use simpleray::wavesolver::{dn_operator_gap, fdtd_solve, probe_source, FdtdConfig, Region, SolverGrid};
use simpleray::wkb::{source_h1_norm, synth_dn, DnRecord, RayFamily};
use simpleray::xray::{invert_xray, solenoidal_project, xray, Field, GridTensor, ImageGrid, Inversion, RayCache, Sinogram};
use simpleray::{registry, CoefficientTriple, Error};
use std::f64::consts::PI;

fn inflow_grid(cfg: &RunConfig, t: &CoefficientTriple, radius: f64) -> InflowGrid {
    InflowGrid::new(&t.g, radius, cfg.rays.n_alpha, cfg.rays.n_beta, cfg.rays.delta_beta)
}

fn image(cfg: &RunConfig) -> ImageGrid {
    ImageGrid::new(cfg.rays.image_n, cfg.domain.extended_radius)
}

fn solver_grid(cfg: &RunConfig) -> Result<SolverGrid> {
    Ok(SolverGrid::new(Region::Annulus { r_min: cfg.solver.r_min }, cfg.solver.n_r, cfg.solver.n_theta)?)
}

fn sinogram_rows(s: &Sinogram) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..s.values.len()).map(|k| vec![s.alpha[k], s.beta[k], s.values[k], f64::from(u8::from(s.valid[k]))])
}

fn write_sinogram(run: &mut Run, stem: &str, s: &Sinogram) -> Result<()> {
    run.bytes(&format!("{stem}.sino"), &s.to_bytes())?;
    run.csv(&format!("{stem}.csv"), &["alpha", "beta", "value", "valid"], sinogram_rows(s))
}

fn write_dn(run: &mut Run, stem: &str, dn: &DnRecord) -> Result<()> {
    run.bytes(&format!("{stem}.dn"), &dn.to_bytes())?;
    let m = dn.alphas.len();
    let rows = dn
        .times
        .iter()
        .enumerate()
        .flat_map(move |(it, &t)| dn.alphas.iter().enumerate().map(move |(ia, &a)| (it, ia, t, a)))
        .map(|(it, ia, t, a)| {
            let v = dn.trace[it * m + ia];
            vec![t, a, v.re, v.im]
        });
    run.csv(&format!("{stem}.csv"), &["t", "alpha", "re", "im"], rows)
}

fn write_field(run: &mut Run, stem: &str, f: &GridTensor) -> Result<()> {
    let gd = f.to_grid_data();
    run.bytes(&format!("{stem}.grid"), &gd.to_bytes())?;
    let names: &[&str] = match f.order {
        0 => &["x", "y", "f"],
        1 => &["x", "y", "f_x", "f_y"],
        _ => &["x", "y", "f_xx", "f_xy", "f_yy"],
    };
    let rows = (0..gd.nx).flat_map(|i| (0..gd.ny).map(move |j| (i, j))).map(|(i, j)| {
        let x = gd.node(i, j);
        let mut r = vec![x[0], x[1]];
        r.extend((0..gd.ncomp).map(|c| gd.get(c, i, j)));
        r
    });
    run.csv(&format!("{stem}.csv"), names, rows)
}

fn write_cg(run: &mut Run, stem: &str, inv: &Inversion) -> Result<()> {
    run.csv(&format!("{stem}.csv"), &["iteration", "residual"], inv.cg.history.iter().enumerate().map(|(k, r)| vec![k as f64, *r]))?;
    run.plot(Plot { csv: format!("{stem}.csv"), x: "iteration".into(), ys: vec!["residual".into()], log: false });
    Ok(())
}

pub fn shoot_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let t = cfg.triple()?;
    let r = cfg.domain.boundary_radius;
    let (z, w) = inflow(&t.g, r, cfg.shoot.alpha, cfg.shoot.beta);
    let geo = shoot(&t.g, &z, &w, &ShootOptions::new(r))?;
    run.csv(
        "geodesic.csv",
        &["t", "x", "y", "xi_x", "xi_y", "energy"],
        geo.samples.iter().map(|s| vec![s.t, s.x[0], s.x[1], s.xi[0], s.xi[1], hamiltonian(&t.g, &[s.x[0], s.x[1], s.xi[0], s.xi[1]])]),
    )?;
    run.plot(Plot { csv: "geodesic.csv".into(), x: "x".into(), ys: vec!["y".into()], log: false });
    #[derive(Serialize)]
    struct Summary {
        entry: [f64; 2],
        exit: [f64; 2],
        exit_time: f64,
        converged: bool,
    }
    run.json(
        "summary.json",
        &Summary { entry: [z[0], z[1]], exit: [geo.exit_point[0], geo.exit_point[1]], exit_time: geo.exit_time, converged: geo.converged },
    )
}

pub fn distance_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let t = cfg.triple()?;
    let a = cfg.shoot.alpha;
    let d = boundary_distance(&t.g, a, cfg.shoot.alpha_out, &t.domain)?;
    let n = cfg.rays.n_alpha;
    let rows: Vec<Vec<f64>> = (1..n)
        .map(|k| {
            let b = a + 2.0 * PI * k as f64 / n as f64;
            vec![b, boundary_distance(&t.g, a, b, &t.domain).unwrap_or(f64::NAN)]
        })
        .collect();
    run.csv("distances.csv", &["alpha_out", "distance"], rows)?;
    run.plot(Plot { csv: "distances.csv".into(), x: "alpha_out".into(), ys: vec!["distance".into()], log: false });
    run.json("summary.json", &serde_json::json!({ "alpha": a, "alpha_out": cfg.shoot.alpha_out, "distance": d }))
}

pub fn xray_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let t = cfg.triple()?;
    let grid = inflow_grid(cfg, &t, cfg.domain.boundary_radius);
    let cache = RayCache::new(&t.g, &grid, cfg.rays.step);
    let id = &cfg.field.id;
    let s = match cfg.field.order {
        0 => cache.transform(Field::Scalar(&registry::potential(id)?)),
        1 => cache.transform(Field::Covector(&registry::covector(id)?)),
        _ => cache.transform(Field::Tensor(&registry::tensor(id)?)),
    };
    write_sinogram(run, "sinogram", &s)?;
    run.json("summary.json", &serde_json::json!({ "order": s.order, "metric": s.metric_id, "rays": s.values.len(), "l2_norm": s.norm() }))
}

pub fn invert_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let path = cfg.sinogram.as_ref().context("invert needs `sinogram = <path>` in the config")?;
    let s = Sinogram::read(path)?;
    let t = cfg.triple()?;
    if s.metric_id != t.g.id() {
        return Err(Error::GridMismatch(format!("sinogram was taken for metric `{}`, config names `{}`", s.metric_id, t.g.id())).into());
    }
    let grid = InflowGrid::new(&t.g, s.radius, s.n_alpha, s.n_beta, s.delta_beta);
    let cache = RayCache::new(&t.g, &grid, cfg.rays.step);
    let inv = invert_xray(&t.g, &s, &cache, &image(cfg), s.radius, cfg.rays.max_iter)?;
    write_field(run, "field", &inv.field)?;
    write_cg(run, "cg", &inv)?;
    run.json(
        "summary.json",
        &serde_json::json!({ "order": s.order, "iterations": inv.cg.iterations, "relative_residual": inv.cg.relative_residual, "converged": inv.cg.converged }),
    )
}

pub fn wavesolve_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let t = cfg.triple()?;
    let grid = solver_grid(cfg)?;
    let p = cfg.probe.probe();
    let src = probe_source(&t, &p)?;
    let mut out = fdtd_solve(&t, &grid, &src, &FdtdConfig::new(p.t_end))?;
    out.dn.source_norm = source_h1_norm(&RayFamily::local(&t, &p, 0.02)?, p.t_end);
    write_dn(run, "dn", &out.dn)?;
    run.json("summary.json", &serde_json::json!({ "dt": out.dt, "steps": out.steps, "dn_l2": out.dn.l2_norm(), "source_norm": out.dn.source_norm }))
}

pub fn synth_dn_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let t = cfg.triple()?;
    let dn = synth_dn(&t, &cfg.probe.probe())?;
    write_dn(run, "dn", &dn)?;
    run.json("summary.json", &serde_json::json!({ "dn_l2": dn.l2_norm(), "source_norm": dn.source_norm }))
}

pub fn gauge_check_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let t = cfg.triple()?;
    let grid = solver_grid(cfg)?;
    let probes = [cfg.probe.probe()];
    let mut rows = vec![];
    for k in 0..3u64 {
        let seed = cfg.seed.wrapping_mul(3).wrapping_add(k);
        let moved = act(&GaugeElement::random(seed, 0.15), &t);
        rows.push(vec![seed as f64, dn_operator_gap(&t, &moved, &grid, &probes)?]);
    }
    let worst = rows.iter().map(|r| r[1]).fold(0.0, f64::max);
    run.csv("gauge_gaps.csv", &["gauge_seed", "relative_gap"], rows)?;
    run.json("summary.json", &serde_json::json!({ "max_relative_gap": worst, "grid": [grid.n_r, grid.n_theta] }))
}

pub fn boundary_jet_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let t = cfg.triple()?;
    let design = BoundaryDesign { n_b: cfg.recovery.n_b, ..BoundaryDesign::default() };
    let pts = rec::boundary_cascade(&t, &design, &cfg.recovery.deltas, &cfg.recovery.seeds)?;
    let header = ["delta", "h0", "h1", "h2", "b0", "b1", "q0", "max_cond", "flagged"];
    let rows = pts.iter().map(|p| {
        let e = p.errors;
        vec![p.delta, e.h0, e.h1, e.h2, e.b0, e.b1, e.q0, p.max_cond, p.flagged as f64]
    });
    run.csv("cascade.csv", &header, rows)?;
    run.plot(Plot { csv: "cascade.csv".into(), x: "delta".into(), ys: vec!["h0".into(), "b0".into(), "q0".into()], log: true });
    let d: Vec<f64> = pts.iter().map(|p| p.delta).collect();
    let slope = |f: fn(&rec::JetErrors) -> f64| rec::loglog_slope(&d, &pts.iter().map(|p| f(&p.errors)).collect::<Vec<_>>());
    let (g, b, q) = (slope(|e| e.h0), slope(|e| e.b0), slope(|e| e.q0));
    run.json(
        "summary.json",
        &serde_json::json!({ "slope_g": g.0, "slope_b": b.0, "slope_q": q.0, "se": [g.1, b.1, q.1], "monotone": g.0 >= b.0 && b.0 >= q.0 }),
    )
}

pub fn distance_table_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let t = cfg.triple()?;
    let r = cfg.reference()?;
    let grid = inflow_grid(cfg, &r, cfg.domain.boundary_radius);
    let cache = RayCache::new(&r.g, &grid, cfg.rays.step);
    let table = rec::distance_table(&t.g, &cache);
    let rows = (0..table.rho.len()).map(|k| {
        vec![table.alpha_in[k], table.alpha_out[k], table.rho[k].unwrap_or(f64::NAN), table.reference[k].unwrap_or(f64::NAN)]
    });
    run.csv("distance_table.csv", &["alpha_in", "alpha_out", "rho", "rho_reference"], rows)?;
    let interior = rec::recover_metric_interior(&table, &r.g, &cache, &image(cfg), cfg.domain.boundary_radius, cfg.rays.max_iter)?;
    write_sinogram(run, "travel_time_sinogram", &interior.sinogram)?;
    write_field(run, "metric_update", &interior.inversion.field)?;
    write_cg(run, "cg", &interior.inversion)
}

/// Exit traces of `triple` against `reference` plus the forward transform of the true difference.
fn sinogram_pair(cfg: &RunConfig, order: u8) -> Result<(Sinogram, Sinogram)> {
    let t = cfg.triple()?;
    let r = cfg.reference()?;
    let grid = inflow_grid(cfg, &r, cfg.domain.extended_radius);
    let design = rec::SinogramDesign::default();
    let (data, refs) = rec::exit_trace_pair(&t, &r, &grid, &design);
    if order == 1 {
        let s = rec::extract_b_sinogram(&data, &refs, &grid, &design, r.g.id())?;
        let diff = t.b.add_scaled(&r.b, -1.0);
        return Ok((s, xray(&r.g, Field::Covector(&diff), &grid)));
    }
    let eta = if cfg.reference.as_ref().map(|s| &s.covector) != Some(&cfg.triple.covector) {
        let spec = TripleSpec { metric: r.g.id().into(), covector: t.b.id().into(), potential: r.q.id().into() };
        Some(rec::exit_traces(&spec.resolve(&cfg.domain)?, &grid, &design, Some(&refs)))
    } else {
        None
    };
    let s = rec::extract_q_sinogram(&data, &refs, &grid, r.g.id(), eta.as_ref().map(|e| (e, &refs)))?;
    let diff = t.q.add_scaled(&r.q, -1.0);
    Ok((s, xray(&r.g, Field::Scalar(&diff), &grid)))
}

pub fn sinogram_cmd(cfg: &RunConfig, run: &mut Run, order: u8) -> Result<()> {
    let (s, truth) = sinogram_pair(cfg, order)?;
    let stem = if order == 1 { "b_sinogram" } else { "q_sinogram" };
    write_sinogram(run, stem, &s)?;
    write_sinogram(run, &format!("{stem}_forward"), &truth)?;
    let invalid = s.valid.iter().filter(|v| !**v).count();
    run.json("summary.json", &serde_json::json!({ "relative_error": s.relative_error(&truth)?, "invalid_rays": invalid, "rays": s.values.len() }))
}

pub fn pipeline_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let t = cfg.triple()?;
    let r = cfg.reference()?;
    let delta = *cfg.recovery.deltas.first().context("pipeline needs a noise level in recovery.deltas")?;
    let design = BoundaryDesign { n_b: cfg.recovery.n_b, ..BoundaryDesign::default() };
    let jet = rec::boundary_cascade(&t, &design, &[delta], &cfg.recovery.seeds)?.remove(0);
    let grid = inflow_grid(cfg, &r, cfg.domain.extended_radius);
    let cache = RayCache::new(&r.g, &grid, cfg.rays.step);
    let img = image(cfg);
    let radius = cfg.domain.extended_radius;
    let mut stages = vec![];
    for order in [1u8, 0] {
        let (s, _) = sinogram_pair(cfg, order)?;
        let inv = invert_xray(&r.g, &s, &cache, &img, radius, cfg.rays.max_iter)?;
        let truth = if order == 1 {
            let d = t.b.add_scaled(&r.b, -1.0);
            solenoidal_project(&r.g, &GridTensor::sample(img, Field::Covector(&d)), radius)?.solenoidal
        } else {
            GridTensor::sample(img, Field::Scalar(&t.q.add_scaled(&r.q, -1.0)))
        };
        let stem = if order == 1 { "b_difference" } else { "q_difference" };
        write_field(run, stem, &inv.field)?;
        stages.push(inv.field.relative_error(&truth, cfg.domain.boundary_radius));
    }
    let bgrid = inflow_grid(cfg, &r, cfg.domain.boundary_radius);
    let bcache = RayCache::new(&r.g, &bgrid, cfg.rays.step);
    let table = rec::distance_table(&t.g, &bcache);
    let interior = rec::recover_metric_interior(&table, &r.g, &bcache, &img, cfg.domain.boundary_radius, cfg.rays.max_iter)?;
    write_field(run, "metric_update", &interior.inversion.field)?;
    let e = jet.errors;
    run.json(
        "summary.json",
        &serde_json::json!({
            "delta": delta,
            "boundary_jet": { "h0": e.h0, "h1": e.h1, "h2": e.h2, "b0": e.b0, "b1": e.b1, "q0": e.q0, "flagged": jet.flagged },
            "b_solenoidal_relative_error": stages[0],
            "q_relative_error": stages[1],
            "metric_cg_iterations": interior.inversion.cg.iterations,
        }),
    )
}

pub fn holder_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let report = rec::holder_experiment(&cfg.holder)?;
    let rows = report.rows.iter().map(|r| vec![r.eps, r.delta, r.err_g, r.err_b, r.err_q, r.stage_g, r.stage_b, r.stage_q]);
    run.csv("holder.csv", &["eps", "delta", "err_g", "err_b", "err_q", "stage_g", "stage_b", "stage_q"], rows)?;
    run.plot(Plot { csv: "holder.csv".into(), x: "delta".into(), ys: vec!["err_g".into(), "err_b".into(), "err_q".into()], log: true });
    run.plot(Plot { csv: "holder.csv".into(), x: "delta".into(), ys: vec!["stage_g".into(), "stage_b".into(), "stage_q".into()], log: true });
    run.json("report.json", &report)?;
    if !report.monotone() {
        log::warn!("fitted exponents are not monotone: {:.3} {:.3} {:.3}", report.mu_g.value, report.mu_b.value, report.mu_q.value);
    }
    for r in report.rows.iter().filter(|r| r.failure.is_some()) {
        log::warn!("ε = {} failed: {}", r.eps, r.failure.as_deref().unwrap_or_default());
    }
    println!(
        "μ̂_g = {:.3} ± {:.3}, μ̂_b = {:.3} ± {:.3}, μ̂_q = {:.3} ± {:.3}",
        report.mu_g.value, report.mu_g.band, report.mu_b.value, report.mu_b.band, report.mu_q.value, report.mu_q.band
    );
    Ok(())
}

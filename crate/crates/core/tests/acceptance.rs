//! Acceptance suite. Runs each criterion at its stated tolerance and prints one line per
//! criterion. Pass criterion numbers as arguments to run a subset.

use simpleray::formats::GridData;
use simpleray::gauge::{act, GaugeElement};
use simpleray::geodesics::InflowGrid;
use simpleray::recovery::*;
use simpleray::wavesolver::{fdtd_solve, probe_source, wkb_discrepancy, FdtdConfig, Region, SolverGrid};
use simpleray::wkb::{DnRecord, ProbeConfig};
use simpleray::xray::*;
use simpleray::{registry, CoefficientTriple, Domain};
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn triple(m: &str, b: &str, q: &str) -> CoefficientTriple {
    CoefficientTriple::from_ids(m, b, q).unwrap()
}

/// DN traces of `t` and of three gauge-equivalent triples on one grid: worst relative gap.
fn gauge_gap(triples: &[CoefficientTriple], n_r: usize, n_theta: usize) -> f64 {
    let grid = SolverGrid::new(Region::Annulus { r_min: 0.4 }, n_r, n_theta).unwrap();
    let mut p = ProbeConfig::local(16.0, 0.5, 0.2);
    p.t_end = 0.6;
    let mut worst = 0.0f64;
    for t in triples {
        let src = probe_source(t, &p).unwrap();
        let moved: Vec<_> = (1..=3).map(|seed| act(&GaugeElement::random(seed, 0.15), t)).collect();
        let cfg = FdtdConfig::shared(p.t_end, &grid, &[t, &moved[0], &moved[1], &moved[2]]);
        let a = fdtd_solve(t, &grid, &src, &cfg).unwrap();
        for m in &moved {
            let b = fdtd_solve(m, &grid, &src, &cfg).unwrap();
            worst = worst.max(a.dn.diff_norm(&b.dn).unwrap() / a.dn.l2_norm());
        }
    }
    worst
}

fn criterion_1() -> Outcome {
    let triples = [
        triple("gauss1", "lin:0.3,-0.2,0.5,0.1", "bump:0.5,0.8,0.3,0.1"),
        triple("euclid", "rot:0.6", "const:0.5"),
        triple("gauss:0.2,0.1,0.3,-0.2+perturb:7,0.05", "bump:0.3,-0.1,0.2,0.08", "lin:0.4,-0.3"),
    ];
    let coarse = gauge_gap(&triples, 256, 512);
    let fine = gauge_gap(&triples, 512, 1024);
    outcome(
        coarse <= 1e-2 && coarse / fine >= 3.0,
        format!("gap {coarse:.2e} at 256×512 (≤ 1e-2), {fine:.2e} at 512×1024, ratio {:.1} (≥ 3)", coarse / fine),
    )
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    for mid in ["euclid", "gauss1"] {
        let g = registry::metric(mid).unwrap();
        let grid = InflowGrid::default_for(&g, &Domain::default());
        let cache = RayCache::new(&g, &grid, RayCache::DEFAULT_STEP);
        let img = ImageGrid::new(64, 1.15);
        let norm = operator_norm(&cache, &img, 2, 20);
        for k in 0..5 {
            let v = registry::vector_field(&format!("vfield:{k}")).unwrap();
            let s = cache.transform(Field::Tensor(&sym_diff(&g, &v)));
            let vg = GridTensor::sample(img, Field::Covector(&v));
            worst = worst.max(s.norm() / (norm * vg.norm_in(2.0)));
        }
    }
    outcome(worst <= 1e-4, format!("max ‖I dˢv‖/(‖I‖‖v‖) = {worst:.2e} over 5 fields × 2 metrics (≤ 1e-4)"))
}

fn criterion_3() -> Outcome {
    let f0 = registry::potential("bump:1,0.2,-0.1,0.06").unwrap();
    let f1 = registry::covector("bump:0.3,-0.1,0.2,0.08").unwrap();
    let f2 = registry::tensor("airy:0.05,0.1,0.0,0.1").unwrap();
    let limits = [0.05, 0.08, 0.10];
    let mut pass = true;
    let mut parts = vec![];
    for mid in ["euclid", "gauss1"] {
        let g = registry::metric(mid).unwrap();
        let grid = InflowGrid::default_for(&g, &Domain::default());
        let cache = RayCache::new(&g, &grid, RayCache::DEFAULT_STEP);
        let img = ImageGrid::new(64, 1.15);
        for (f, lim) in [Field::Scalar(&f0), Field::Covector(&f1), Field::Tensor(&f2)].into_iter().zip(limits) {
            let s = cache.transform(f);
            let inv = invert_xray(&g, &s, &cache, &img, 1.0, 300).unwrap();
            let truth = GridTensor::sample(img, f);
            let truth = if f.order() == 0 { truth } else { solenoidal_project(&g, &truth, 1.0).unwrap().solenoidal };
            let err = inv.field.relative_error(&truth, 1.0);
            pass &= err <= lim;
            parts.push(format!("{mid}/{} {:.1}%", f.order(), 100.0 * err));
        }
    }
    outcome(pass, format!("{} (limits 5/8/10%)", parts.join(", ")))
}

fn criterion_4() -> Outcome {
    let lambdas = [16.0, 32.0, 64.0, 128.0];
    let mut pass = true;
    let mut parts = vec![];
    for t in [triple("euclid", "const:0.4,-0.3", "zero"), triple("gauss1", "lin:0.3,-0.2,0.5,0.1", "bump:0.5,0.8,0.3,0.1")] {
        let errs: Vec<f64> = lambdas
            .iter()
            .map(|&lam| {
                let mut p = ProbeConfig::local(lam, 0.7, 0.0);
                p.eps_cut = 1.0;
                p.t0 = 1.02;
                p.eps = 2.1;
                p.t_end = 0.3;
                wkb_discrepancy(&t, &p, 0.25 / lam).unwrap().0
            })
            .collect();
        let (slope, _) = loglog_slope(&lambdas, &errs);
        pass &= slope <= -1.5;
        parts.push(format!("{} slope {slope:.2}", t.g.id()));
    }
    outcome(pass, format!("{} (≤ -1.5)", parts.join(", ")))
}

fn criterion_5() -> Outcome {
    let t = triple("gauss1", "lin:0.3,-0.2,0.5,0.1", "bump:0.5,0.8,0.3,0.1");
    let deltas = [1e-2, 1e-3, 1e-4, 1e-5];
    let seeds: Vec<u64> = (1..=6).collect();
    let pts = boundary_cascade(&t, &BoundaryDesign::default(), &deltas, &seeds).unwrap();
    let slope = |f: fn(&JetErrors) -> f64| loglog_slope(&deltas, &pts.iter().map(|p| f(&p.errors)).collect::<Vec<_>>()).0;
    let (sg, sb, sq) = (slope(|e| e.h0), slope(|e| e.b0), slope(|e| e.q0));
    outcome(
        sg >= 0.8 && sb >= 0.4 && sq >= 0.2 && sg >= sb && sb >= sq,
        format!("slopes g {sg:.2} (≥ 0.8), b {sb:.2} (≥ 0.4), q {sq:.2} (≥ 0.2)"),
    )
}

fn criterion_6() -> Outcome {
    let base = triple("gauss1", "rot:0.3", "const:0.2");
    let tb = triple("gauss1", "rot:0.3+bump:0.3,0.1,0.2,0.08", "const:0.2");
    let tq = triple("gauss1", "rot:0.3", "const:0.2+bump:0.5,0.1,0.2,0.08");
    let grid = InflowGrid::new(&base.g, 1.15, 32, 16, 0.02);
    let d = SinogramDesign::default();
    let (db, r) = exit_trace_pair(&tb, &base, &grid, &d);
    let sb = extract_b_sinogram(&db, &r, &grid, &d, base.g.id()).unwrap();
    let dq = exit_traces(&tq, &grid, &d, Some(&r));
    let sq = extract_q_sinogram(&dq, &r, &grid, base.g.id(), None).unwrap();
    let xb = xray(&base.g, Field::Covector(&registry::covector("bump:0.3,0.1,0.2,0.08").unwrap()), &grid);
    let xq = xray(&base.g, Field::Scalar(&registry::potential("bump:0.5,0.1,0.2,0.08").unwrap()), &grid);
    let (eb, eq) = (sb.relative_error(&xb).unwrap(), sq.relative_error(&xq).unwrap());
    let invalid = sb.valid.iter().chain(&sq.valid).filter(|v| !**v).count();
    outcome(eb <= 0.02 && eq <= 0.03, format!("b {:.2}% (≤ 2%), q {:.2}% (≤ 3%), {invalid} invalid rays", 100.0 * eb, 100.0 * eq))
}

fn criterion_7() -> Outcome {
    let r = holder_experiment(&HolderConfig::default()).unwrap();
    let zero = &r.rows[0];
    let floor = zero.err_g < 1e-4 && zero.err_b < 1e-6 && zero.err_q < 1e-12;
    let (g, b, q) = (r.mu_g.value, r.mu_b.value, r.mu_q.value);
    let bounded = [g, b, q].iter().all(|m| *m <= 1.1);
    outcome(
        floor && bounded && g >= 0.8 && b >= 0.4 && q >= 0.2,
        format!(
            "μ̂ g {g:.3}±{:.3}, b {b:.3}±{:.3}, q {q:.3}±{:.3} (≥ 0.8/0.4/0.2, ≤ 1.1); ε = 0 errors {:.1e}/{:.1e}/{:.1e}",
            r.mu_g.band, r.mu_b.band, r.mu_q.band, zero.err_g, zero.err_b, zero.err_q
        ),
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut checks = vec![];
    let t = triple("gauss1", "rot:0.3", "const:0.5");
    let design = BoundaryDesign { n_b: 8, ..BoundaryDesign::default() };
    let bytes = |seed| -> Vec<u8> {
        let data = boundary_data(&t, &design, stage_lambdas(1e-3), 1e-3, seed).unwrap();
        data.records.iter().flat_map(|r| r.to_bytes()).collect()
    };
    let first = bytes(5);
    checks.push(("noisy boundary data", first == bytes(5) && first != bytes(6)));

    let grid = InflowGrid::new(&t.g, 1.0, 16, 8, 0.05);
    let s = xray(&t.g, Field::Covector(&t.b), &grid);
    checks.push(("sinogram", s.to_bytes() == xray(&t.g, Field::Covector(&t.b), &grid).to_bytes()));
    let path = dir.path().join("s.sino");
    s.write(&path).unwrap();
    checks.push(("sinogram file", Sinogram::read(&path).unwrap().to_bytes() == s.to_bytes()));

    let sg = SolverGrid::new(Region::Annulus { r_min: 0.6 }, 32, 64).unwrap();
    let p = ProbeConfig { t_end: 0.3, ..ProbeConfig::local(8.0, 0.0, 0.0) };
    let src = probe_source(&t, &p).unwrap();
    let run = || fdtd_solve(&t, &sg, &src, &FdtdConfig::new(p.t_end)).unwrap().dn;
    let dn = run();
    checks.push(("FDTD traces", dn.to_bytes() == run().to_bytes()));
    let path = dir.path().join("t.dn");
    dn.write(&path).unwrap();
    checks.push(("DN file", DnRecord::read(&path).unwrap().to_bytes() == dn.to_bytes()));

    let gd = GridData::sample(17, 13, 3, [-1.15, 1.15, -1.15, 1.15], |x| vec![x[0].sin(), x[1].exp(), x.norm() * 1e-300]);
    let path = dir.path().join("g.grid");
    gd.write(&path).unwrap();
    let back = GridData::read_path(path.to_str().unwrap()).unwrap();
    checks.push(("grid file", back.to_bytes() == gd.to_bytes() && back.data.iter().zip(&gd.data).all(|(a, b)| a.to_bits() == b.to_bits())));

    let a = act(&GaugeElement::random(9, 0.1), &t);
    let b = act(&GaugeElement::random(9, 0.1), &t);
    let x = simpleray::Point::new(0.3, -0.4);
    checks.push(("random gauge", a.g.eval(&x) == b.g.eval(&x) && a.b.eval(&x) == b.b.eval(&x)));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() { format!("{} determinism and round-trip checks bit-identical", checks.len()) } else { format!("differs: {}", failed.join(", ")) },
    )
}

fn main() {
    let budgets = [300u64, 60, 180 * 6, 600, 600, 300, 1800, 60];
    let runs: [fn() -> Outcome; 8] = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).filter(|k| (1..=8).contains(k)).collect();
    let mut failures = 0;
    let mut lines = vec![];
    for (k, run) in runs.iter().enumerate() {
        let n = k + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let o = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("error: {}", msg.unwrap_or_default()))
        });
        let el = t0.elapsed();
        let budget = Duration::from_secs(budgets[k]);
        let time = if el <= budget { "within budget" } else { "OVER budget" };
        let line = format!(
            "criterion {n}: {} | {} | {:.0} s, {time} of {} s",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            el.as_secs_f64(),
            budget.as_secs()
        );
        println!("{line}");
        lines.push(line);
        failures += usize::from(!o.pass);
    }
    println!("\nacceptance summary");
    for l in &lines {
        println!("  {l}");
    }
    if failures > 0 {
        std::process::exit(1);
    }
}

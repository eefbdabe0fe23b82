use criterion::{black_box, criterion_group, criterion_main, Criterion};
use simpleray::charts::BoundaryNormalChart;
use simpleray::geodesics::{inflow, shoot, InflowGrid, ShootOptions};
use simpleray::manifold::OperatorScratch;
use simpleray::wavesolver::{polar_operator, Region, SolverGrid};
use simpleray::wkb::trace_coefficients;
use simpleray::xray::{Field, RayCache};
use simpleray::{registry, CoefficientTriple, C64};

fn gauss1() -> CoefficientTriple {
    CoefficientTriple::from_ids("gauss1", "rot:0.3", "bump:0.5,0.2,0.1,0.2").unwrap()
}

fn geodesic(c: &mut Criterion) {
    let t = gauss1();
    let (z, w) = inflow(&t.g, 1.0, 0.3, 0.2);
    let opts = ShootOptions::new(1.0);
    c.bench_function("shoot_chord", |b| b.iter(|| shoot(&t.g, black_box(&z), black_box(&w), &opts).unwrap()));
}

fn xray_transform(c: &mut Criterion) {
    let t = gauss1();
    let grid = InflowGrid::new(&t.g, 1.0, 64, 32, 0.02);
    let f = registry::potential("bump:1,0.2,0.1,0.1").unwrap();
    c.bench_function("ray_cache_64x32", |b| b.iter(|| RayCache::new(&t.g, &grid, 2e-3)));
    let cache = RayCache::new(&t.g, &grid, 2e-3);
    c.bench_function("xray_cached_64x32", |b| b.iter(|| cache.transform(Field::Scalar(black_box(&f)))));
}

fn stencil(c: &mut Criterion) {
    let t = gauss1();
    let grid = SolverGrid::new(Region::Annulus { r_min: 0.4 }, 128, 256).unwrap();
    let op = polar_operator(&t, &grid);
    let n = op.n1 * op.n2;
    let u: Vec<C64> = (0..n).map(|k| C64::new((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos())).collect();
    let mut out = vec![C64::new(0.0, 0.0); n];
    let mut scratch = OperatorScratch::default();
    c.bench_function("stencil_apply_128x256", |b| b.iter(|| op.apply(black_box(&u), &mut out, &mut scratch)));
}

fn trace(c: &mut Criterion) {
    let t = gauss1();
    let chart = BoundaryNormalChart::build(&t.g, 0.0, 0.3).unwrap();
    let jets = chart.jets_at_node(&t, 0);
    c.bench_function("trace_coefficients", |b| b.iter(|| trace_coefficients(black_box(&jets), 0.2).unwrap()));
}

criterion_group!(benches, geodesic, xray_transform, stencil, trace);
criterion_main!(benches);

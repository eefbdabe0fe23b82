//! Small numerical kernels: Lagrange stencils, quadrature weights, Krylov solvers and fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Start index and weights of the `N`-point Lagrange stencil interpolating at fractional index
/// `f` on `0..n` nodes (stencil clamped to the valid range).
pub fn lagrange_stencil<const N: usize>(f: f64, n: usize) -> (isize, [f64; N]) {
    let base = f.floor() as isize - (N as isize / 2 - 1);
    let start = base.clamp(0, n as isize - N as isize);
    let mut w = [1.0; N];
    for (a, wa) in w.iter_mut().enumerate() {
        let xa = (start + a as isize) as f64;
        for b in 0..N {
            if b != a {
                let xb = (start + b as isize) as f64;
                *wa *= (f - xb) / (xa - xb);
            }
        }
    }
    (start, w)
}

/// Periodic variant: returned start may be negative or exceed `n`; callers wrap indices.
pub fn lagrange_stencil_periodic<const N: usize>(f: f64) -> (isize, [f64; N]) {
    let start = f.floor() as isize - (N as isize / 2 - 1);
    let mut w = [1.0; N];
    for (a, wa) in w.iter_mut().enumerate() {
        let xa = (start + a as isize) as f64;
        for b in 0..N {
            if b != a {
                let xb = (start + b as isize) as f64;
                *wa *= (f - xb) / (xa - xb);
            }
        }
    }
    (start, w)
}

/// Derivative weights of the same stencil.
pub fn lagrange_stencil_deriv<const N: usize>(f: f64, n: usize, periodic: bool) -> (isize, [f64; N]) {
    let start = if periodic {
        f.floor() as isize - (N as isize / 2 - 1)
    } else {
        (f.floor() as isize - (N as isize / 2 - 1)).clamp(0, n as isize - N as isize)
    };
    let mut w = [0.0; N];
    for (a, wa) in w.iter_mut().enumerate() {
        let xa = (start + a as isize) as f64;
        let mut denom = 1.0;
        for b in 0..N {
            if b != a {
                denom *= xa - (start + b as isize) as f64;
            }
        }
        let mut s = 0.0;
        for c in 0..N {
            if c == a {
                continue;
            }
            let mut p = 1.0;
            for b in 0..N {
                if b != a && b != c {
                    p *= f - (start + b as isize) as f64;
                }
            }
            s += p;
        }
        *wa = s / denom;
    }
    (start, w)
}

/// Composite Simpson weights for `n + 1` equispaced nodes with spacing `h` (`n` even); for odd
/// `n` the last interval uses the 3/8 rule on the final four nodes.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 2);
    let mut w = vec![0.0; n + 1];
    let m = if n % 2 == 0 { n } else { n - 3 };
    for i in (0..m).step_by(2) {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
    }
    if n % 2 == 1 {
        let s = 3.0 * h / 8.0;
        w[m] += s;
        w[m + 1] += 3.0 * s;
        w[m + 2] += 3.0 * s;
        w[m + 3] += s;
    }
    w
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    /// Residual norm after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive semi-definite operator.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgReport {
    let n = rhs.len();
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let bn = dot(rhs, rhs).sqrt().max(1e-300);
    let mut rr = dot(&r, &r);
    let mut history = vec![rr.sqrt() / bn];
    let mut ap = vec![0.0; n];
    let mut it = 0;
    while it < max_iter && rr.sqrt() / bn > tol {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let a = rr / pap;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        it += 1;
        history.push(rr.sqrt() / bn);
    }
    let rel = rr.sqrt() / bn;
    CgReport { iterations: it, relative_residual: rel, history, converged: rel <= tol }
}

/// CGNE/CGLS for `min ‖A x − b‖` given `A` and `Aᵀ`; the recorded residual is the normal-equation
/// residual `‖Aᵀ(b − A x)‖ / ‖Aᵀ b‖`, and the data misfit is monotone by construction.
pub fn cgls(
    forward: impl Fn(&[f64]) -> Vec<f64>,
    adjoint: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    n: usize,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, CgReport) {
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut s = adjoint(&r);
    let mut p = s.clone();
    let s0 = dot(&s, &s).sqrt().max(1e-300);
    let mut gamma = dot(&s, &s);
    let mut history = vec![dot(&r, &r).sqrt()];
    let mut it = 0;
    while it < max_iter && gamma.sqrt() / s0 > tol {
        let q = forward(&p);
        let qq = dot(&q, &q);
        if qq <= 0.0 {
            break;
        }
        let alpha = gamma / qq;
        for i in 0..n {
            x[i] += alpha * p[i];
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= alpha * qi;
        }
        s = adjoint(&r);
        let gn = dot(&s, &s);
        let beta = gn / gamma;
        gamma = gn;
        for i in 0..n {
            p[i] = s[i] + beta * p[i];
        }
        it += 1;
        history.push(dot(&r, &r).sqrt());
    }
    let rel = gamma.sqrt() / s0;
    (x, CgReport { iterations: it, relative_residual: rel, history, converged: rel <= tol })
}

/// Least-squares solve of a small dense system, returning the solution and the condition number.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smin <= 0.0 || !smin.is_finite() {
        return Err(Error::IllConditioned(f64::INFINITY));
    }
    let x = svd.solve(b, 0.0).map_err(|e| Error::Insufficient(e.to_string()))?;
    Ok((x, smax / smin))
}

/// Ordinary least-squares line `y = a + s x`; returns `(s, a, standard error of s)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let s = sxy / sxx;
    let a = my - s * mx;
    let res: f64 = x.iter().zip(y).map(|(a0, b)| (b - a - s * a0).powi(2)).sum();
    let se = if n > 2.0 { (res / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (s, a, se)
}

/// Slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (s, _, se) = linear_fit(&lx, &ly);
    (s, se)
}

/// Finite-difference weights (Fornberg) for derivatives `0..=m` at `x0` from arbitrary nodes;
/// `w[k][j]` multiplies `f(nodes[j])` in the `k`-th derivative.
pub fn fornberg(x0: f64, nodes: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagrange_reproduces_polynomials() {
        let f = |x: f64| 0.5 * x.powi(5) - x.powi(3) + 2.0;
        let df = |x: f64| 2.5 * x.powi(4) - 3.0 * x.powi(2);
        let nodes: Vec<f64> = (0..20).map(|i| f(i as f64)).collect();
        for t in [0.3, 7.61, 18.9] {
            let (s, w) = lagrange_stencil::<6>(t, 20);
            let v: f64 = (0..6).map(|a| w[a] * nodes[(s + a as isize) as usize]).sum();
            assert!((v - f(t)).abs() < 1e-9 * f(t).abs().max(1.0));
            let (s, w) = lagrange_stencil_deriv::<6>(t, 20, false);
            let d: f64 = (0..6).map(|a| w[a] * nodes[(s + a as isize) as usize]).sum();
            assert!((d - df(t)).abs() < 1e-8 * df(t).abs().max(1.0));
        }
    }

    #[test]
    fn fornberg_one_sided_weights() {
        // Oracle: weights solving the moment conditions Σ c_j x_j^k / k! = δ_km directly.
        let nodes: Vec<f64> = (0..7).map(|k| k as f64 * 0.1).collect();
        let w = fornberg(0.0, &nodes, 2);
        let v = nalgebra::DMatrix::from_fn(7, 7, |k, j| nodes[j].powi(k as i32) / (1..=k).product::<usize>() as f64);
        let lu = v.lu();
        for m in 0..=2 {
            let e = nalgebra::DVector::from_fn(7, |k, _| f64::from(u8::from(k == m)));
            let c = lu.solve(&e).unwrap();
            for j in 0..7 {
                assert!((w[m][j] - c[j]).abs() < 1e-8 * c.amax().max(1.0), "m={m} j={j}");
            }
        }
        let d1: f64 = nodes.iter().zip(&w[1]).map(|(x, c)| c * (1.3 * x).exp()).sum();
        assert!((d1 - 1.3).abs() < 2e-6);
    }

    #[test]
    fn simpson_integrates_cubics() {
        for n in [2, 6, 7, 9] {
            let h = 1.0 / n as f64;
            let w = simpson_weights(n, h);
            let s: f64 = w.iter().enumerate().map(|(i, wi)| wi * (i as f64 * h).powi(3)).sum();
            assert!((s - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let mut x = vec![0.0; 3];
        let rep = conjugate_gradient(
            |v, o| {
                for i in 0..3 {
                    o[i] = (0..3).map(|j| a[i][j] * v[j]).sum();
                }
            },
            &b,
            &mut x,
            1e-12,
            10,
        );
        assert!(rep.converged);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i][j] * x[j]).sum::<f64>() - b[i];
            assert!(r.abs() < 1e-10);
        }
    }

    #[test]
    fn cgls_residual_history_is_monotone() {
        let m = 8;
        let n = 5;
        let a: Vec<f64> = (0..m * n).map(|k| ((k * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let b: Vec<f64> = (0..m).map(|i| (i as f64).sin()).collect();
        let fw = |x: &[f64]| (0..m).map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum()).collect::<Vec<f64>>();
        let ad = |y: &[f64]| (0..n).map(|j| (0..m).map(|i| a[i * n + j] * y[i]).sum()).collect::<Vec<f64>>();
        let (_, rep) = cgls(fw, ad, &b, n, 1e-12, 50);
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn loglog_recovers_power() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.7)).collect();
        assert!((loglog_slope(&x, &y).0 + 1.7).abs() < 1e-12);
    }
}

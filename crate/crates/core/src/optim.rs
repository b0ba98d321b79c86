//! Derivative-free optimizers and a finite-difference Hessian.

/// Result of a one- or multi-dimensional maximization.
#[derive(Clone, Debug, PartialEq)]
pub struct Maximum<T> {
    pub arg: T,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Brent's method (golden section with parabolic steps) for the maximum of
/// `f` on `[a, b]`, stopping when the bracket is narrower than about `tol`.
pub fn brent_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> Maximum<f64> {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let mut g = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };
    let (mut a, mut b) = if a < b { (a, b) } else { (b, a) };
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0_f64, 0.0_f64);
    for it in 1..=max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() * 1e-3 + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return Maximum { arg: x, value: -fx, iterations: it, converged: true };
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = g(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    Maximum { arg: x, value: -fx, iterations: max_iter, converged: false }
}

/// Nelder–Mead maximization from `x0` with initial simplex offsets `step`.
///
/// Stops when every vertex lies within `tol` of the best one in each
/// coordinate and the value spread is below `tol`. `f` may return `-inf` (or
/// NaN) outside its domain.
pub fn nelder_mead_max<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    tol: f64,
    max_iter: usize,
) -> Maximum<Vec<f64>> {
    let d = x0.len();
    let mut g = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), g(x0)));
    for j in 0..d {
        let mut x = x0.to_vec();
        x[j] += step[j];
        let v = g(&x);
        simplex.push((x, v));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for it in 1..=max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        let spread_f = (simplex[d].1 - best.1).abs();
        if spread_x <= tol && (spread_f <= tol || !spread_f.is_finite() && spread_x == 0.0) {
            let (arg, v) = simplex.swap_remove(0);
            return Maximum { arg, value: -v, iterations: it, converged: true };
        }
        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64).collect();
        let along = |t: f64, worst: &[f64]| -> Vec<f64> { centroid.iter().zip(worst).map(|(c, w)| c + t * (w - c)).collect() };
        let worst = simplex[d].0.clone();
        let fworst = simplex[d].1;
        let xr = along(-alpha, &worst);
        let fr = g(&xr);
        if fr < simplex[0].1 {
            let xe = along(-gamma, &worst);
            let fe = g(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < fworst {
                let xc = along(-rho, &worst);
                let fc = g(&xc);
                (xc, fc)
            } else {
                let xc = along(rho, &worst);
                let fc = g(&xc);
                (xc, fc)
            };
            if fc < fworst.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for (x, v) in simplex.iter_mut().skip(1) {
                    for (xi, bi) in x.iter_mut().zip(&x0) {
                        *xi = bi + sigma * (*xi - bi);
                    }
                    *v = g(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (arg, v) = simplex.swap_remove(0);
    Maximum { arg, value: -v, iterations: max_iter, converged: false }
}

/// Central-difference Hessian of `f` at `theta` with per-coordinate steps `h`.
pub fn numerical_hessian<F: FnMut(&[f64]) -> f64>(mut f: F, theta: &[f64], h: &[f64]) -> Vec<Vec<f64>> {
    let d = theta.len();
    let mut hess = vec![vec![0.0; d]; d];
    let f0 = f(theta);
    let mut x = theta.to_vec();
    for i in 0..d {
        x[i] = theta[i] + h[i];
        let fp = f(&x);
        x[i] = theta[i] - h[i];
        let fm = f(&x);
        x[i] = theta[i];
        hess[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64, x: &mut Vec<f64>| {
                x[i] = theta[i] + si * h[i];
                x[j] = theta[j] + sj * h[j];
                let v = f(x);
                x[i] = theta[i];
                x[j] = theta[j];
                v
            };
            let v = (corner(1.0, 1.0, &mut x) - corner(1.0, -1.0, &mut x) - corner(-1.0, 1.0, &mut x)
                + corner(-1.0, -1.0, &mut x))
                / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

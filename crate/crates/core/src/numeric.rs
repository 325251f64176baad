//! Quadrature, interpolation and scalar root finding shared by the modules.

/// Five-point Gauss–Legendre rule on `[0, 1]`: `(node, weight)`.
pub const GAUSS5: [(f64, f64); 5] = [
    (0.046_910_077_030_668_0, 0.118_463_442_528_094_5),
    (0.230_765_344_947_158_5, 0.239_314_335_249_683_2),
    (0.5, 0.284_444_444_444_444_4),
    (0.769_234_655_052_841_5, 0.239_314_335_249_683_2),
    (0.953_089_922_969_332_0, 0.118_463_442_528_094_5),
];

/// Cubic Hermite interpolant on `[0, h]` at local coordinate `s ∈ [0,1]`:
/// returns `(value, derivative w.r.t. the original parameter)`.
#[inline]
pub fn hermite(y0: f64, d0: f64, y1: f64, d1: f64, h: f64, s: f64) -> (f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let value = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let g00 = 6.0 * s2 - 6.0 * s;
    let g10 = 3.0 * s2 - 4.0 * s + 1.0;
    let g01 = -6.0 * s2 + 6.0 * s;
    let g11 = 3.0 * s2 - 2.0 * s;
    let deriv = (g00 * y0 + g01 * y1) / h + g10 * d0 + g11 * d1;
    (value, deriv)
}

/// Weights of the derivative at `x0` of the Lagrange interpolant through
/// `nodes` (Fornberg's recursion, first derivative only).
pub fn derivative_weights(x0: f64, nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    // c[k][m]: weight of node k for derivative order m
    let mut c = vec![[0.0f64; 2]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|w| w[1]).collect()
}

/// Root of `f` on a sign-changing bracket `[a, b]` by Brent's method.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        if d.abs() > tol1 {
            b += d;
        } else {
            b += tol1.copysign(xm);
        }
        fb = f(b);
    }
    Some(b)
}

/// Minimizer of a unimodal function on `[a, b]` by golden-section search.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iter {
        if (b - a).abs() <= tol {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_degree_nine() {
        let s: f64 = GAUSS5.iter().map(|(x, w)| w * x.powi(9)).sum();
        assert!((s - 0.1).abs() < 1e-15);
    }

    #[test]
    fn hermite_reproduces_cubic() {
        let f = |t: f64| 2.0 * t * t * t - t + 0.5;
        let df = |t: f64| 6.0 * t * t - 1.0;
        let (a, h) = (0.3, 0.2);
        let (v, d) = hermite(f(a), df(a), f(a + h), df(a + h), h, 0.37);
        let t = a + 0.37 * h;
        assert!((v - f(t)).abs() < 1e-14);
        assert!((d - df(t)).abs() < 1e-13);
    }

    #[test]
    fn fornberg_weights_exact_on_quartic() {
        let nodes = [0.0, 0.1, 0.25, 0.3, 0.5];
        let w = derivative_weights(0.25, &nodes);
        let f = |x: f64| x.powi(4) - 2.0 * x;
        let d: f64 = nodes.iter().zip(&w).map(|(x, w)| w * f(*x)).sum();
        assert!((d - (4.0 * 0.25f64.powi(3) - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn brent_finds_cos_root() {
        let r = brent(|x| x.cos(), 1.0, 2.0, 1e-15, 100).unwrap();
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
        assert!(brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 100).is_none());
    }

    #[test]
    fn golden_finds_minimum() {
        let (x, _) = golden_min(|x| (x - 0.3).powi(2), -1.0, 2.0, 1e-10, 200);
        assert!((x - 0.3).abs() < 1e-8);
    }
}

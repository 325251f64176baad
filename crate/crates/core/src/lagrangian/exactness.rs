use serde::Serialize;

use super::{Curve, ExactLagrangian, Geometry, LagrangianKind, Surface, EXACTNESS_TOL};
use crate::error::{Error, Result};
use crate::numeric::{hermite, GAUSS5};

#[derive(Clone, Debug, Serialize)]
pub struct ExactnessReport {
    /// `max_i |ΔS_i − ∫ p dq|` over sample intervals.
    pub max_interval_residual: f64,
    /// Index of the worst interval.
    pub worst_interval: usize,
    /// `|∮ p dq|` over closed parameter loops.
    pub loop_residual: f64,
    pub arc_length: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Checks `ι*θ = dS` between consecutive samples and around closed loops.
pub fn verify_exactness(l: &ExactLagrangian) -> ExactnessReport {
    let (max_res, worst, loop_res, length) = match l.geometry() {
        Geometry::Curve(c) => curve_residuals(l, c),
        Geometry::Surface(s) => surface_residuals(s),
    };
    let tol = EXACTNESS_TOL * length.max(1e-12);
    ExactnessReport {
        max_interval_residual: max_res,
        worst_interval: worst,
        loop_residual: loop_res,
        arc_length: length,
        tol,
        pass: max_res <= tol && loop_res <= tol,
    }
}

fn curve_residuals(l: &ExactLagrangian, c: &Curve) -> (f64, usize, f64, f64) {
    let n = c.len();
    // graphs have a cheap exact evaluator; everything else is integrated on
    // the Hermite interpolant
    let exact = l.kind() == LagrangianKind::Graph;
    let mut max_res = 0.0f64;
    let mut worst = 0;
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = c.interval(i);
        let integral = if exact {
            let h = b.t - a.t;
            GAUSS5
                .iter()
                .map(|&(x, w)| {
                    let pt = l.eval(a.t + x * h).expect("graph evaluation");
                    w * pt.p * pt.dq * h
                })
                .sum()
        } else {
            c.interval_integral(i)
        };
        total += integral;
        // the closing interval returns to the anchor value, so it also
        // carries any loop defect
        let res = (b.s - a.s - integral).abs();
        if res > max_res {
            max_res = res;
            worst = i;
        }
    }
    (max_res, worst, total.abs(), c.arc_length())
}

fn edge_integral(
    (q0, p0, dq0, dp0): ([f64; 2], [f64; 2], [f64; 2], [f64; 2]),
    (q1, p1, dq1, dp1): ([f64; 2], [f64; 2], [f64; 2], [f64; 2]),
    h: f64,
) -> f64 {
    GAUSS5
        .iter()
        .map(|&(x, w)| {
            let mut acc = 0.0;
            for k in 0..2 {
                let (_, dq) = hermite(q0[k], dq0[k], q1[k], dq1[k], h, x);
                let (p, _) = hermite(p0[k], dp0[k], p1[k], dp1[k], h, x);
                acc += p * dq;
            }
            w * acc * h
        })
        .sum()
}

fn surface_residuals(s: &Surface) -> (f64, usize, f64, f64) {
    let m = s.m;
    let h = 1.0 / m as f64;
    let mut max_res = 0.0f64;
    let mut worst = 0;
    let mut loop_res = 0.0f64;
    let mut length = 0.0f64;
    for dir in 0..2 {
        for line in 0..m {
            let mut total = 0.0;
            for k in 0..m {
                let (i0, j0, i1, j1) = if dir == 0 { (k, line, k + 1, line) } else { (line, k, line, k + 1) };
                let a = s.at(i0, j0);
                let b = s.at(i1, j1);
                let mut qb = b.q;
                // closing edge crosses the period of the parameter torus
                let wrapped = k + 1 == m;
                if wrapped {
                    let da = [a.q[0] + a.dq[0][dir] * h, a.q[1] + a.dq[1][dir] * h];
                    for c in 0..2 {
                        qb[c] = da[c] + crate::linalg::circle_delta(da[c], b.q[c]);
                    }
                }
                let col = |x: &super::SurfaceSample| ([x.dq[0][dir], x.dq[1][dir]], [x.dp[0][dir], x.dp[1][dir]]);
                let (dqa, dpa) = col(a);
                let (dqb, dpb) = col(b);
                let integral = edge_integral((a.q, a.p, dqa, dpa), (qb, b.p, dqb, dpb), h);
                total += integral;
                length += ((qb[0] - a.q[0]).powi(2)
                    + (qb[1] - a.q[1]).powi(2)
                    + (b.p[0] - a.p[0]).powi(2)
                    + (b.p[1] - a.p[1]).powi(2))
                .sqrt();
                let r = (b.s - a.s - integral).abs();
                if r > max_res {
                    max_res = r;
                    worst = (dir * m + line) * m + k;
                }
            }
            loop_res = loop_res.max(total.abs());
        }
    }
    // per-line length scale: average over the 2m parameter loops
    (max_res, worst, loop_res, length / (2 * m) as f64)
}

/// `|∫_{ι∘c} θ − (S(c(1)) − S(c(0)))|` for a piecewise-linear parameter path `c`.
///
/// For curves only the first coordinate of each path vertex is used; the
/// path may wind around the parameter circle.
pub fn line_integral_check(l: &ExactLagrangian, path: &[[f64; 2]]) -> Result<f64> {
    if path.is_empty() {
        return Ok(0.0);
    }
    match l.geometry() {
        Geometry::Curve(c) => {
            let exact = l.has_exact_evaluator();
            let cheap = l.kind() == LagrangianKind::Graph;
            let s_at = |t: f64| -> Result<f64> {
                if exact {
                    Ok(l.eval(t)?.s)
                } else {
                    Ok(c.interpolate(t).s)
                }
            };
            let mut integral = 0.0;
            for w in path.windows(2) {
                let (ta, tb) = (w[0][0], w[1][0]);
                integral += if cheap { exact_between(l, ta, tb)? } else { c.integral_between(ta, tb) };
            }
            let ds = s_at(path[path.len() - 1][0])? - s_at(path[0][0])?;
            Ok((integral - ds).abs())
        }
        Geometry::Surface(_) => {
            if !l.has_exact_evaluator() {
                return Err(Error::Unsupported("line integrals on sampled surfaces".into()));
            }
            let mut integral = 0.0;
            for w in path.windows(2) {
                let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
                let pieces = ((d[0].abs().max(d[1].abs())) * 64.0).ceil().max(1.0) as usize;
                for k in 0..pieces {
                    for &(x, wt) in GAUSS5.iter() {
                        let f = (k as f64 + x) / pieces as f64;
                        let t = [w[0][0] + f * d[0], w[0][1] + f * d[1]];
                        let pt = l.eval_surface(t)?;
                        let mut acc = 0.0;
                        for i in 0..2 {
                            let dq = pt.dq[i][0] * d[0] + pt.dq[i][1] * d[1];
                            acc += pt.p[i] * dq;
                        }
                        integral += wt * acc / pieces as f64;
                    }
                }
            }
            let a = l.eval_surface(path[0])?.s;
            let b = l.eval_surface(path[path.len() - 1])?.s;
            Ok((integral - (b - a)).abs())
        }
    }
}

/// `∫ p dq` on `[ta, tb]` with the exact evaluator, split at sample nodes.
fn exact_between(l: &ExactLagrangian, ta: f64, tb: f64) -> Result<f64> {
    if tb < ta {
        return Ok(-exact_between(l, tb, ta)?);
    }
    let c = l.curve().expect("curve");
    let n = c.len();
    // roughly one Gauss panel per sample interval
    let pieces = (((tb - ta) * n as f64).ceil() as usize).max(1);
    let h = (tb - ta) / pieces as f64;
    let mut total = 0.0;
    for k in 0..pieces {
        let a = ta + k as f64 * h;
        for &(x, w) in GAUSS5.iter() {
            let pt = l.eval(a + x * h)?;
            total += w * pt.p * pt.dq * h;
        }
    }
    Ok(total)
}

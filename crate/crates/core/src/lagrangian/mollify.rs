use std::f64::consts::{PI, TAU};

use rustfft::{num_complex::Complex, FftPlanner};

use super::{integrate_primitive, verify_exactness, Curve, CurveSample, ExactLagrangian, EXACTNESS_TOL};
use crate::error::{Error, Result};
use crate::linalg::circle_delta;

/// A closed Lipschitz curve given by polygon vertices `(q, p)`, with `q`
/// lifted and the closing edge implied. The primitive is integrated exactly
/// along the polygon.
#[derive(Clone, Debug)]
pub struct LipschitzCurve {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub s: Vec<f64>,
    pub winding: i32,
}

impl LipschitzCurve {
    /// Polygon through the vertices; `q` may be reduced mod 1 or lifted.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        let n = points.len();
        if n < 3 {
            return Err(Error::Precondition("need at least 3 vertices".into()));
        }
        let mut q = Vec::with_capacity(n);
        q.push(points[0].0);
        for i in 1..n {
            let prev: f64 = q[i - 1];
            q.push(prev + circle_delta(prev, points[i].0));
        }
        let close = q[n - 1] + circle_delta(q[n - 1], points[0].0) - q[0];
        let winding = close.round();
        if (close - winding).abs() > 1e-9 {
            return Err(Error::NotClosed(format!("unwrapped loop increment {close}")));
        }
        let p: Vec<f64> = points.iter().map(|x| x.1).collect();
        let mut curve = LipschitzCurve { q, p, s: vec![0.0; n], winding: winding as i32 };
        for i in 1..n {
            let (dq, pm) = curve.edge(i - 1);
            curve.s[i] = curve.s[i - 1] + pm * dq;
        }
        Ok(curve)
    }

    /// Sample polygon of a sampled exact Lagrangian.
    pub fn from_lagrangian(l: &ExactLagrangian) -> Result<Self> {
        let c = l
            .curve()
            .ok_or_else(|| Error::Dimension("mollification is for curves".into()))?;
        let pts: Vec<(f64, f64)> = c.samples.iter().map(|s| (s.q, s.p)).collect();
        Self::from_points(&pts)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `(Δq, mean p)` of edge `i`; the last edge closes the loop.
    fn edge(&self, i: usize) -> (f64, f64) {
        let n = self.len();
        let (q1, p1) = if i + 1 < n {
            (self.q[i + 1], self.p[i + 1])
        } else {
            (self.q[0] + self.winding as f64, self.p[0])
        };
        (q1 - self.q[i], 0.5 * (self.p[i] + p1))
    }

    fn edge_length(&self, i: usize) -> f64 {
        let n = self.len();
        let (dq, _) = self.edge(i);
        let dp = self.p[(i + 1) % n] - self.p[i];
        dq.hypot(dp)
    }

    pub fn loop_integral(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let (dq, pm) = self.edge(i);
                pm * dq
            })
            .sum()
    }

    pub fn length(&self) -> f64 {
        (0..self.len()).map(|i| self.edge_length(i)).sum()
    }

    /// Polygon points over `q` as `(p, S)`. A vertical edge over `q`
    /// contributes its two end points.
    pub fn fiber(&self, q: f64) -> Vec<(f64, f64)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            let (dq, _) = self.edge(i);
            let p0 = self.p[i];
            let dp = self.p[(i + 1) % n] - p0;
            let (a, b) = (self.q[i].min(self.q[i] + dq), self.q[i].max(self.q[i] + dq));
            let k0 = (a - q).ceil() as i64;
            let k1 = (b - q).floor() as i64;
            for k in k0..=k1 {
                let x = q + k as f64;
                if dq == 0.0 {
                    out.push((p0, self.s[i]));
                    out.push((p0 + dp, self.s[i]));
                } else {
                    let f = (x - self.q[i]) / dq;
                    out.push((p0 + f * dp, self.s[i] + dq * f * (p0 + 0.5 * f * dp)));
                }
            }
        }
        out
    }

    /// `m` points at uniform arc length starting at vertex 0: `(q, p, S)`.
    fn uniform(&self, m: usize) -> Vec<(f64, f64, f64)> {
        let n = self.len();
        let total = self.length();
        let mut out = Vec::with_capacity(m);
        let mut edge = 0;
        let mut start = 0.0;
        let mut len = self.edge_length(0);
        for j in 0..m {
            let target = total * j as f64 / m as f64;
            while edge + 1 < n && start + len < target {
                start += len;
                edge += 1;
                len = self.edge_length(edge);
            }
            let f = if len > 0.0 { ((target - start) / len).clamp(0.0, 1.0) } else { 0.0 };
            let (dq, _) = self.edge(edge);
            let dp = self.p[(edge + 1) % n] - self.p[edge];
            let q = self.q[edge] + f * dq;
            let p = self.p[edge] + f * dp;
            let s = self.s[edge] + dq * f * (self.p[edge] + 0.5 * f * dp);
            out.push((q, p, s));
        }
        out
    }
}

/// Share of the Poisson kernel in the smoothing kernel.
pub const POISSON_WEIGHT: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct MollifyOptions {
    /// Uniform arc-length samples per level.
    pub resolution: usize,
    /// Widths are `2^-(first_exponent + k)` in normalized arc length.
    pub first_exponent: u32,
}

impl Default for MollifyOptions {
    fn default() -> Self {
        MollifyOptions { resolution: 4096, first_exponent: 5 }
    }
}

/// Smooth exact curves converging to a Lipschitz target with a common
/// Lipschitz constant.
#[derive(Clone, Debug)]
pub struct ApproxSequence {
    pub entries: Vec<ExactLagrangian>,
    pub widths: Vec<f64>,
    /// Lipschitz constant of each `ι_k` in the arc-length parameter.
    pub lipschitz: Vec<f64>,
    pub equilip_const: f64,
    /// `sup |(ι_k, S_k) − (ι, S)|` on the common parameter grid.
    pub sup_to_target: Vec<f64>,
    /// `sup |(ι_k, S_k) − (ι_{k−1}, S_{k−1})|`, one entry per level after the first.
    pub consecutive: Vec<f64>,
    /// Target samples on the common grid: `(q, p, S)`.
    pub limit: Vec<(f64, f64, f64)>,
    pub target: LipschitzCurve,
}

/// Periodic smoothing of the parametrization with widths
/// `2^-(first_exponent + k)`, `k = 0..levels`; each level is made exact by a
/// constant momentum correction and its primitive re-integrated. The kernel
/// is a Gaussian plus a `POISSON_WEIGHT` share of the Poisson kernel of the
/// same width; the Poisson tail keeps `dq` bounded away from zero along
/// vertical pieces of a target that is monotone over the base.
pub fn mollify_sequence(target: &LipschitzCurve, levels: usize, opts: &MollifyOptions) -> Result<ApproxSequence> {
    let length = target.length();
    let loop_res = target.loop_integral().abs();
    let tol = EXACTNESS_TOL * length.max(1e-12);
    if loop_res > tol {
        return Err(Error::NotExact { residual: loop_res, tol });
    }
    if target.winding == 0 {
        return Err(Error::Precondition("target loop must wind around the base".into()));
    }
    let m = opts.resolution;
    let w = target.winding as f64;
    let limit = target.uniform(m);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut xs: Vec<Complex<f64>> = limit
        .iter()
        .enumerate()
        .map(|(j, x)| Complex::new(x.0 - w * j as f64 / m as f64, 0.0))
        .collect();
    let mut ps: Vec<Complex<f64>> = limit.iter().map(|x| Complex::new(x.1, 0.0)).collect();
    fwd.process(&mut xs);
    fwd.process(&mut ps);
    let freq = |i: usize| -> f64 {
        if i <= m / 2 {
            i as f64
        } else {
            i as f64 - m as f64
        }
    };

    let mut seq = ApproxSequence {
        entries: Vec::new(),
        widths: Vec::new(),
        lipschitz: Vec::new(),
        equilip_const: 0.0,
        sup_to_target: Vec::new(),
        consecutive: Vec::new(),
        limit: limit.clone(),
        target: target.clone(),
    };
    let mut prev: Option<Vec<CurveSample>> = None;
    for k in 0..levels {
        let sigma = 0.5f64.powi((opts.first_exponent as usize + k) as i32);
        if sigma * (m as f64) < 2.0 {
            return Err(Error::Precondition(format!(
                "width {sigma} is below two grid spacings at resolution {m}"
            )));
        }
        let filtered = |c: &[Complex<f64>], deriv: bool| -> Vec<f64> {
            let mut buf: Vec<Complex<f64>> = c
                .iter()
                .enumerate()
                .map(|(i, z)| {
                    let f = freq(i);
                    let g = (1.0 - POISSON_WEIGHT) * (-2.0 * PI * PI * sigma * sigma * f * f).exp()
                        + POISSON_WEIGHT * (-TAU * sigma * f.abs()).exp();
                    let z = z * g;
                    if deriv {
                        // drop the unpaired Nyquist mode for the derivative
                        if m % 2 == 0 && i == m / 2 {
                            Complex::new(0.0, 0.0)
                        } else {
                            z * Complex::new(0.0, TAU * f)
                        }
                    } else {
                        z
                    }
                })
                .collect();
            inv.process(&mut buf);
            buf.iter().map(|z| z.re / m as f64).collect()
        };
        let x = filtered(&xs, false);
        let dx = filtered(&xs, true);
        let mut p = filtered(&ps, false);
        let dp = filtered(&ps, true);
        let dq: Vec<f64> = dx.iter().map(|d| d + w).collect();
        // make ∮ p dq vanish with a constant shift of p
        let loop_integral: f64 = p.iter().zip(&dq).map(|(a, b)| a * b).sum::<f64>() / m as f64;
        let shift = -loop_integral / w;
        for v in p.iter_mut() {
            *v += shift;
        }
        let samples: Vec<CurveSample> = (0..m)
            .map(|j| {
                let t = j as f64 / m as f64;
                CurveSample { t, q: x[j] + w * t, p: p[j], s: 0.0, dq: dq[j], dp: dp[j] }
            })
            .collect();
        let mut curve = Curve { samples, winding: target.winding };
        integrate_primitive(&mut curve);
        let entry = ExactLagrangian::from_curve(curve)?;
        let report = verify_exactness(&entry);
        if !report.pass {
            return Err(Error::NotExact {
                residual: report.max_interval_residual.max(report.loop_residual),
                tol: report.tol,
            });
        }
        let lip = entry.lipschitz_bound();
        if let Some(&last) = seq.lipschitz.last() {
            if lip > 2.0 * last {
                return Err(Error::EquiLipschitz { level: k, from: last, to: lip });
            }
        }
        let cs = &entry.curve().expect("curve").samples;
        let dist = |a: &[CurveSample], b: &dyn Fn(usize) -> (f64, f64, f64)| -> f64 {
            a.iter()
                .enumerate()
                .map(|(j, s)| {
                    let (q, p, sv) = b(j);
                    (s.q - q).abs().max((s.p - p).abs()).max((s.s - sv).abs())
                })
                .fold(0.0, f64::max)
        };
        seq.sup_to_target.push(dist(cs, &|j| limit[j]));
        if let Some(pv) = &prev {
            seq.consecutive.push(dist(cs, &|j| (pv[j].q, pv[j].p, pv[j].s)));
        }
        prev = Some(cs.clone());
        seq.widths.push(sigma);
        seq.lipschitz.push(lip);
        seq.entries.push(entry);
    }
    seq.equilip_const = seq.lipschitz.iter().cloned().fold(0.0, f64::max);
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tent(a: f64) -> LipschitzCurve {
        LipschitzCurve::from_points(&[(0.0, -a), (0.0, a), (0.25, a), (0.5, a), (0.5, -a), (0.75, -a)]).unwrap()
    }

    #[test]
    fn tent_fiber() {
        let c = tent(0.3);
        let f = c.fiber(0.1);
        assert_eq!(f.len(), 1);
        assert!((f[0].0 - 0.3).abs() < 1e-15 && (f[0].1 - 0.03).abs() < 1e-15);
        let v = c.fiber(0.5);
        assert!(v.iter().any(|x| (x.0 + 0.3).abs() < 1e-15) && v.iter().any(|x| (x.0 - 0.3).abs() < 1e-15));
        assert!(v.iter().all(|x| (x.1 - 0.15).abs() < 1e-15));
    }

    #[test]
    fn tent_polygon_primitive() {
        let c = tent(0.3);
        assert_eq!(c.winding, 1);
        assert!(c.loop_integral().abs() < 1e-15);
        assert!((c.s[3] - 0.15).abs() < 1e-15);
        assert!((c.length() - (1.0 + 4.0 * 0.3)).abs() < 1e-12);
    }

    #[test]
    fn tent_errors_halve() {
        let seq = mollify_sequence(&tent(0.3), 4, &MollifyOptions::default()).unwrap();
        for w in seq.sup_to_target.windows(2) {
            let r = w[1] / w[0];
            assert!(r > 0.4 && r < 0.6, "ratio {r}");
        }
        for w in seq.lipschitz.windows(2) {
            assert!(w[1] <= 2.0 * w[0]);
        }
    }

    #[test]
    fn non_exact_target_rejected() {
        let c = LipschitzCurve::from_points(&[(0.0, 1.0), (0.25, 1.0), (0.5, 1.0), (0.75, 1.0)]).unwrap();
        assert!(matches!(
            mollify_sequence(&c, 2, &MollifyOptions::default()),
            Err(Error::NotExact { .. })
        ));
    }
}

//! Wavefront of an exact Lagrangian: fibers `L ∩ T*_qM`, spectra, caustics,
//! Cerf-regular points and local sheet decompositions with crossing
//! functions `δ_ij = h_i − h_j`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lagrangian::{Curve, CurvePoint, ExactLagrangian, Geometry, Surface};
use crate::linalg;
use crate::numeric::brent;

/// Default separation below which two spectrum values count as equal.
pub const GAP_TOL: f64 = 1e-6;
/// Relative size of `dq/dt` (against the parameter speed) below which an
/// intersection is reported as tangential.
pub const TRANSVERSE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberPoint {
    /// Curve parameter, or surface parameters.
    pub t: [f64; 2],
    pub p: [f64; 2],
    /// Primitive value `h = S∘ι⁻¹`.
    pub h: f64,
    /// `dq/dt` for curves, `det(∂q/∂t)` for surfaces.
    pub jacobian: f64,
    /// Arc between consecutive folds containing `t` (curves only).
    pub arc: usize,
    /// Integer lift with `q(t) = q + lift` (first coordinate for curves).
    pub lift: i64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FiberData {
    pub q: [f64; 2],
    /// Sorted by `h`.
    pub points: Vec<FiberPoint>,
    pub transverse: bool,
    pub cerf_regular: bool,
    /// Smallest separation of consecutive spectrum values (infinite for a
    /// single point).
    pub min_gap: f64,
}

impl FiberData {
    pub fn spectrum(&self) -> Vec<f64> {
        self.points.iter().map(|x| x.h).collect()
    }
}

/// A fold point of the projection `π∘ι` (a zero of `dq/dt`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fold {
    pub t: f64,
    /// Base point reduced mod 1.
    pub q: f64,
    pub p: f64,
    pub h: f64,
    /// `d²q/dt²` at the fold; small values flag cusp-like degeneracy.
    pub curvature: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Crossing {
    pub i: usize,
    pub j: usize,
    pub q: f64,
    /// `dδ_ij/dq` by centered differences at the crossing.
    pub ddelta: f64,
    /// `φ_i − φ_j` at the crossing.
    pub dphi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Sheet {
    pub arc: usize,
    pub lift: i64,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub h: Vec<f64>,
}

/// Sheets of the front over a caustic-free interval.
#[derive(Clone, Debug, Serialize)]
pub struct SheetChart {
    pub interval: (f64, f64),
    pub qs: Vec<f64>,
    pub sheets: Vec<Sheet>,
    pub crossings: Vec<Crossing>,
    /// `max |dδ_ij − (φ_i − φ_j)|` over interior grid points.
    pub identity_residual: f64,
}

impl SheetChart {
    /// Chart from sheet samples on a common grid; crossings of `δ_ij` are
    /// located by linear interpolation between grid points.
    pub fn from_sheets(interval: (f64, f64), qs: Vec<f64>, sheets: Vec<Sheet>) -> Result<Self> {
        let mut chart = SheetChart { interval, qs, sheets, crossings: Vec::new(), identity_residual: 0.0 };
        chart.identity_residual = chart.identity_check();
        chart.crossings = chart.find_crossings(None)?;
        Ok(chart)
    }

    fn delta(&self, i: usize, j: usize, k: usize) -> f64 {
        self.sheets[i].h[k] - self.sheets[j].h[k]
    }

    fn identity_check(&self) -> f64 {
        let n = self.qs.len();
        let mut worst = 0.0f64;
        for i in 0..self.sheets.len() {
            for j in i + 1..self.sheets.len() {
                for k in 1..n.saturating_sub(1) {
                    let dd = (self.delta(i, j, k + 1) - self.delta(i, j, k - 1)) / (self.qs[k + 1] - self.qs[k - 1]);
                    let dphi = self.sheets[i].p[k] - self.sheets[j].p[k];
                    worst = worst.max((dd - dphi).abs());
                }
            }
        }
        worst
    }

    fn find_crossings(&self, refine: Option<&dyn Fn(usize, f64) -> Option<(f64, f64)>>) -> Result<Vec<Crossing>> {
        let n = self.qs.len();
        let mut out = Vec::new();
        let scale = self
            .sheets
            .iter()
            .flat_map(|s| s.h.iter())
            .fold(0.0f64, |m, h| m.max(h.abs()))
            .max(1.0);
        for i in 0..self.sheets.len() {
            for j in i + 1..self.sheets.len() {
                if (0..n).all(|k| self.delta(i, j, k).abs() <= 1e-12 * scale) {
                    return Err(Error::DegenerateCrossing { i, j });
                }
                for k in 0..n - 1 {
                    let (d0, d1) = (self.delta(i, j, k), self.delta(i, j, k + 1));
                    if d0 == 0.0 || d0.signum() == d1.signum() {
                        continue;
                    }
                    let (qa, qb) = (self.qs[k], self.qs[k + 1]);
                    let q = match refine {
                        Some(ev) => brent(
                            |x| match (ev(i, x), ev(j, x)) {
                                (Some(a), Some(b)) => a.1 - b.1,
                                _ => f64::NAN,
                            },
                            qa,
                            qb,
                            1e-13,
                            100,
                        )
                        .filter(|x| x.is_finite())
                        .unwrap_or(qa + (qb - qa) * d0 / (d0 - d1)),
                        None => qa + (qb - qa) * d0 / (d0 - d1),
                    };
                    let (ddelta, dphi) = match refine {
                        Some(ev) => {
                            let e = 1e-6 * (qb - qa).max(1e-9);
                            let dd = |x: f64| ev(i, x).zip(ev(j, x)).map(|(a, b)| a.1 - b.1);
                            let ddelta = match (dd(q + e), dd(q - e)) {
                                (Some(a), Some(b)) => (a - b) / (2.0 * e),
                                _ => (d1 - d0) / (qb - qa),
                            };
                            let dphi = ev(i, q).zip(ev(j, q)).map(|(a, b)| a.0 - b.0).unwrap_or(f64::NAN);
                            (ddelta, dphi)
                        }
                        None => {
                            let f = (q - qa) / (qb - qa);
                            let pi = self.sheets[i].p[k] * (1.0 - f) + self.sheets[i].p[k + 1] * f;
                            let pj = self.sheets[j].p[k] * (1.0 - f) + self.sheets[j].p[k + 1] * f;
                            ((d1 - d0) / (qb - qa), pi - pj)
                        }
                    };
                    out.push(Crossing { i, j, q, ddelta, dphi });
                }
            }
        }
        out.sort_by(|a, b| a.q.total_cmp(&b.q));
        Ok(out)
    }
}

/// Precomputed front data of a Lagrangian: fold parameters and arcs.
pub struct Front<'a> {
    l: &'a ExactLagrangian,
    folds: Vec<Fold>,
    /// Surface caustic points (2-d only).
    caustic_points: Vec<[f64; 2]>,
}

impl<'a> Front<'a> {
    pub fn new(l: &'a ExactLagrangian) -> Result<Self> {
        match l.geometry() {
            Geometry::Curve(c) => {
                let folds = find_folds(l, c)?;
                Ok(Front { l, folds, caustic_points: Vec::new() })
            }
            Geometry::Surface(s) => Ok(Front { l, folds: Vec::new(), caustic_points: surface_caustics(s) }),
        }
    }

    pub fn lagrangian(&self) -> &ExactLagrangian {
        self.l
    }

    pub fn folds(&self) -> &[Fold] {
        &self.folds
    }

    /// Caustic base points of a surface, located per grid row and column.
    pub fn caustic_points(&self) -> &[[f64; 2]] {
        &self.caustic_points
    }

    /// Number of arcs between folds (one when there are none).
    pub fn arc_count(&self) -> usize {
        self.folds.len().max(1)
    }

    /// Arc index of parameter `t`.
    pub fn arc_of(&self, t: f64) -> usize {
        let m = self.folds.len();
        if m == 0 {
            return 0;
        }
        let t = t.rem_euclid(1.0);
        let k = self.folds.partition_point(|f| f.t <= t);
        if k == 0 {
            m - 1
        } else {
            k - 1
        }
    }

    /// Consecutive folds in parameter order; each pair bounds an arc.
    pub fn fold_pairs(&self) -> Vec<(usize, usize)> {
        let m = self.folds.len();
        (0..m).map(|i| (i, (i + 1) % m)).collect()
    }

    /// Caustic base values (folds projected to the base, sorted).
    pub fn caustic_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.folds.iter().map(|f| f.q).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// All intersection points of `L` with the fiber over `q`.
    pub fn fiber(&self, q: [f64; 2], gap_tol: f64) -> Result<FiberData> {
        let mut points = match self.l.geometry() {
            Geometry::Curve(c) => self.curve_fiber(c, q[0])?,
            Geometry::Surface(s) => surface_fiber(self.l, s, [q[0].rem_euclid(1.0), q[1].rem_euclid(1.0)])?,
        };
        points.sort_by(|a, b| a.h.total_cmp(&b.h));
        let transverse = points.iter().all(|x| {
            let speed = match self.l.geometry() {
                Geometry::Curve(_) => x.jacobian.hypot(self.dp_at(x.t[0])),
                Geometry::Surface(_) => 1.0,
            };
            x.jacobian.abs() > TRANSVERSE_TOL * speed.max(1e-300)
        });
        let min_gap = points.windows(2).map(|w| w[1].h - w[0].h).fold(f64::INFINITY, f64::min);
        Ok(FiberData { q, cerf_regular: transverse && min_gap > gap_tol, transverse, min_gap, points })
    }

    fn dp_at(&self, t: f64) -> f64 {
        match self.l.geometry() {
            Geometry::Curve(c) => c.interpolate(t).dp,
            _ => 0.0,
        }
    }

    fn point_at(&self, c: &Curve, t: f64) -> CurvePoint {
        if self.l.has_exact_evaluator() {
            if let Ok(pt) = self.l.eval(t) {
                return pt;
            }
        }
        c.interpolate(t)
    }

    fn curve_fiber(&self, c: &Curve, q: f64) -> Result<Vec<FiberPoint>> {
        let q = q.rem_euclid(1.0);
        let mut ts = Vec::new();
        for i in 0..c.len() {
            let iv = c.interval(i);
            hermite_roots(&iv, q, &mut ts);
        }
        ts.sort_by(|a: &f64, b| a.total_cmp(b));
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        if ts.len() > 1 && (ts[0] + 1.0 - ts[ts.len() - 1]).abs() < 1e-12 {
            ts.pop();
        }
        let mut out = Vec::with_capacity(ts.len());
        for t0 in ts {
            let pt = self.polish(c, t0, q);
            let t = pt.t;
            let tt = t.rem_euclid(1.0);
            let lift = (pt.q - q).round() as i64 - ((t - tt).round() as i64) * c.winding as i64;
            out.push(FiberPoint {
                t: [tt, 0.0],
                p: [pt.p, 0.0],
                h: pt.s,
                jacobian: pt.dq,
                arc: self.arc_of(tt),
                lift,
            });
        }
        Ok(out)
    }

    /// Newton refinement on the exact evaluator, kept inside a small window;
    /// returns the point at the refined parameter.
    fn polish(&self, c: &Curve, t0: f64, q: f64) -> CurvePoint {
        if !self.l.has_exact_evaluator() {
            return c.interpolate(t0);
        }
        let target = {
            let pt = c.interpolate(t0);
            q + (pt.q - q).round()
        };
        let mut t = t0;
        let window = 1e-3;
        for _ in 0..8 {
            let Ok(pt) = self.l.eval(t) else { return c.interpolate(t0) };
            let f = pt.q - target;
            if f.abs() < 1e-13 || pt.dq == 0.0 {
                return pt;
            }
            let next = t - f / pt.dq;
            if (next - t0).abs() > window || !next.is_finite() {
                return self.point_at(c, t0);
            }
            t = next;
        }
        self.point_at(c, t)
    }

    /// Spectrum `{h(x) : x ∈ L ∩ T*_qM}`, sorted.
    pub fn spectrum(&self, q: [f64; 2]) -> Result<Vec<f64>> {
        Ok(self.fiber(q, GAP_TOL)?.spectrum())
    }

    /// Whether `h` separates the fiber over `q` by more than `gap_tol`.
    pub fn cerf_regular(&self, q: [f64; 2], gap_tol: f64) -> Result<bool> {
        let f = self.fiber(q, gap_tol)?;
        if !f.transverse {
            return Err(Error::OnCaustic { q: q[..self.l.dim()].to_vec() });
        }
        Ok(f.cerf_regular)
    }

    /// Sheets over `[a, b]` tracked by parameter continuity on `samples` grid
    /// points, with the crossing set of each `δ_ij`.
    pub fn sheet_decomposition(&self, a: f64, b: f64, samples: usize) -> Result<SheetChart> {
        let c = self
            .l
            .curve()
            .ok_or_else(|| Error::Unsupported("sheet decomposition is one dimensional".into()))?;
        if !(b > a) || samples < 3 {
            return Err(Error::Precondition("need a nonempty interval and at least 3 samples".into()));
        }
        for f in &self.folds {
            for k in -1..=1 {
                let x = f.q + k as f64;
                if x >= a && x <= b {
                    return Err(Error::Precondition(format!("interval contains the caustic value {}", f.q)));
                }
            }
        }
        let qs: Vec<f64> = (0..samples).map(|k| a + (b - a) * k as f64 / (samples - 1) as f64).collect();
        let fibers = qs
            .par_iter()
            .map(|&q| self.curve_fiber(c, q))
            .collect::<Result<Vec<_>>>()?;
        // lifts shift by one when q wraps past 0; undo so keys stay stable
        let key = |x: &FiberPoint, q: f64| (x.arc, x.lift + q.div_euclid(1.0) as i64);
        let mut keys: Vec<(usize, i64)> = fibers[0].iter().map(|x| key(x, qs[0])).collect();
        keys.sort();
        let mut sheets: Vec<Sheet> = keys
            .iter()
            .map(|&(arc, lift)| Sheet { arc, lift, t: Vec::new(), p: Vec::new(), h: Vec::new() })
            .collect();
        for (k, fib) in fibers.iter().enumerate() {
            if fib.len() != sheets.len() {
                return Err(Error::SheetTracking(format!(
                    "fiber multiplicity changes from {} to {} at q = {}",
                    sheets.len(),
                    fib.len(),
                    qs[k]
                )));
            }
            for sh in sheets.iter_mut() {
                let pt = fib
                    .iter()
                    .find(|x| key(x, qs[k]) == (sh.arc, sh.lift))
                    .ok_or_else(|| Error::SheetTracking(format!("sheet ({}, {}) lost at q = {}", sh.arc, sh.lift, qs[k])))?;
                sh.t.push(pt.t[0]);
                sh.p.push(pt.p[0]);
                sh.h.push(pt.h);
            }
        }
        let mut chart = SheetChart { interval: (a, b), qs, sheets, crossings: Vec::new(), identity_residual: 0.0 };
        chart.identity_residual = chart.identity_check();
        let sheet_keys: Vec<(usize, i64)> = chart.sheets.iter().map(|s| (s.arc, s.lift)).collect();
        let eval = |i: usize, q: f64| -> Option<(f64, f64)> {
            let fib = self.curve_fiber(c, q).ok()?;
            fib.iter().find(|x| key(x, q) == sheet_keys[i]).map(|x| (x.p[0], x.h))
        };
        chart.crossings = chart.find_crossings(Some(&eval))?;
        Ok(chart)
    }

    /// Front table: `q [q2] sheet_index p [p2] h cerf_flag` per fiber point.
    pub fn dump(&self, grid: usize) -> Result<String> {
        let dim = self.l.dim();
        let mut out = String::new();
        if dim == 1 {
            out.push_str("# q sheet_index p h cerf_flag\n");
        } else {
            out.push_str("# q1 q2 sheet_index p1 p2 h cerf_flag\n");
        }
        let qs: Vec<[f64; 2]> = if dim == 1 {
            (0..grid).map(|i| [i as f64 / grid as f64, 0.0]).collect()
        } else {
            (0..grid * grid)
                .map(|k| [(k % grid) as f64 / grid as f64, (k / grid) as f64 / grid as f64])
                .collect()
        };
        let fibers = qs.par_iter().map(|&q| self.fiber(q, GAP_TOL)).collect::<Result<Vec<_>>>()?;
        for f in &fibers {
            for (i, x) in f.points.iter().enumerate() {
                let flag = f.cerf_regular as u8;
                if dim == 1 {
                    let _ = writeln!(out, "{:.12} {} {:.12e} {:.12e} {}", f.q[0], i, x.p[0], x.h, flag);
                } else {
                    let _ = writeln!(
                        out,
                        "{:.12} {:.12} {} {:.12e} {:.12e} {:.12e} {}",
                        f.q[0], f.q[1], i, x.p[0], x.p[1], x.h, flag
                    );
                }
            }
        }
        Ok(out)
    }
}

/// Roots of `q(t) = target (mod 1)` inside one Hermite interval.
fn hermite_roots(iv: &(CurvePoint, CurvePoint), target: f64, out: &mut Vec<f64>) {
    let (a, b) = iv;
    let h = b.t - a.t;
    if h <= 0.0 {
        return;
    }
    let qf = |s: f64| crate::numeric::hermite(a.q, a.dq, b.q, b.dq, h, s);
    // dq/ds is quadratic: split at its zeros so each piece is monotone
    let d0 = a.dq;
    let dm = qf(0.5).1;
    let d1 = b.dq;
    let c2 = 2.0 * (d0 + d1) - 4.0 * dm;
    let c1 = 4.0 * dm - 3.0 * d0 - d1;
    let c0 = d0;
    let mut cuts = vec![0.0];
    for r in quadratic_roots(c2, c1, c0) {
        if r > 0.0 && r < 1.0 {
            cuts.push(r);
        }
    }
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    for w in cuts.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let (q0, q1) = (qf(s0).0, qf(s1).0);
        let (lo, hi) = if q0 <= q1 { (q0, q1) } else { (q1, q0) };
        let kmin = (lo - target).ceil() as i64;
        let kmax = (hi - target).floor() as i64;
        for k in kmin..=kmax {
            let y = target + k as f64;
            let f = |s: f64| qf(s).0 - y;
            let s = if f(s0) == 0.0 {
                Some(s0)
            } else if f(s1) == 0.0 {
                Some(s1)
            } else {
                brent(f, s0, s1, 1e-15, 200)
            };
            if let Some(s) = s {
                out.push(a.t + s * h);
            }
        }
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() < 1e-14 * scale {
        if b.abs() < 1e-300 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    let qq = -0.5 * (b + b.signum() * sq);
    let mut r = vec![qq / a];
    if qq != 0.0 {
        r.push(c / qq);
    }
    r
}

fn find_folds(l: &ExactLagrangian, c: &Curve) -> Result<Vec<Fold>> {
    let exact = l.has_exact_evaluator();
    let dq_at = |t: f64| -> f64 {
        if exact {
            l.eval(t).map(|p| p.dq).unwrap_or_else(|_| c.interpolate(t).dq)
        } else {
            c.interpolate(t).dq
        }
    };
    let mut ts = Vec::new();
    for i in 0..c.len() {
        let (a, b) = c.interval(i);
        let h = b.t - a.t;
        let dq = |s: f64| crate::numeric::hermite(a.q, a.dq, b.q, b.dq, h, s).1;
        // sign changes of dq at the ends and at an interior extremum of dq
        let c2 = 2.0 * (a.dq + b.dq) - 4.0 * dq(0.5);
        let c1 = 4.0 * dq(0.5) - 3.0 * a.dq - b.dq;
        let mut cuts = vec![0.0, 1.0];
        if c2 != 0.0 {
            let s = -c1 / (2.0 * c2);
            if s > 0.0 && s < 1.0 {
                cuts.push(s);
            }
        }
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            let (d0, d1) = (dq(w[0]), dq(w[1]));
            if d0 == 0.0 && w[0] == 0.0 {
                ts.push(a.t);
                continue;
            }
            if d0.signum() != d1.signum() && d1 != 0.0 {
                let (ta, tb) = (a.t + w[0] * h, a.t + w[1] * h);
                let r = brent(&dq_at, ta, tb, 1e-14, 200)
                    .or_else(|| brent(|t| dq((t - a.t) / h), ta, tb, 1e-14, 200));
                if let Some(t) = r {
                    ts.push(t.rem_euclid(1.0));
                }
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|x, y| (*x - *y).abs() < 1e-11);
    let scale = c.samples.iter().map(|s| s.dq.abs()).fold(0.0, f64::max).max(1e-300);
    let mut folds = Vec::with_capacity(ts.len());
    for t in ts {
        let pt = if exact { l.eval(t)? } else { c.interpolate(t) };
        let e = 1e-6;
        let curvature = (dq_at(t + e) - dq_at(t - e)) / (2.0 * e);
        folds.push(Fold {
            t,
            q: pt.q.rem_euclid(1.0),
            p: pt.p,
            h: pt.s,
            curvature,
            degenerate: curvature.abs() < 1e-6 * scale,
        });
    }
    Ok(folds)
}

/// Caustics of a surface: sign changes of `det ∂q/∂t` along grid rows and
/// columns, located by linear interpolation and projected to the base.
fn surface_caustics(s: &Surface) -> Vec<[f64; 2]> {
    let m = s.m;
    let det = |x: &crate::lagrangian::SurfaceSample| x.dq[0][0] * x.dq[1][1] - x.dq[0][1] * x.dq[1][0];
    let mut out = Vec::new();
    for j in 0..m {
        for i in 0..m {
            let a = s.at(i, j);
            for (b, _) in [(s.at(i + 1, j), 0), (s.at(i, j + 1), 1)] {
                let (da, db) = (det(a), det(b));
                if da.signum() != db.signum() {
                    let f = da / (da - db);
                    let q = [0, 1].map(|c| {
                        let qb = a.q[c] + linalg::circle_delta(a.q[c], b.q[c]);
                        (a.q[c] + f * (qb - a.q[c])).rem_euclid(1.0)
                    });
                    out.push(q);
                }
            }
        }
    }
    out
}

/// Fiber of a surface over `q` by Newton iteration from every grid cell
/// whose image box contains a lift of `q`.
fn surface_fiber(l: &ExactLagrangian, s: &Surface, q: [f64; 2]) -> Result<Vec<FiberPoint>> {
    let m = s.m;
    let h = 1.0 / m as f64;
    let mut roots: Vec<[f64; 2]> = Vec::new();
    let exact = l.has_exact_evaluator();
    for j in 0..m {
        for i in 0..m {
            let a = s.at(i, j);
            let corners = [a, s.at(i + 1, j), s.at(i, j + 1), s.at(i + 1, j + 1)];
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for x in corners {
                for c in 0..2 {
                    let v = a.q[c] + linalg::circle_delta(a.q[c], x.q[c]);
                    lo[c] = lo[c].min(v);
                    hi[c] = hi[c].max(v);
                }
            }
            let pad = [0.25 * (hi[0] - lo[0]) + 1e-9, 0.25 * (hi[1] - lo[1]) + 1e-9];
            let mut lifts = [[0i64; 2]; 2];
            let mut any = true;
            for c in 0..2 {
                let kmin = (lo[c] - pad[c] - q[c]).ceil() as i64;
                let kmax = (hi[c] + pad[c] - q[c]).floor() as i64;
                if kmin > kmax {
                    any = false;
                }
                lifts[c] = [kmin, kmax];
            }
            if !any {
                continue;
            }
            for k0 in lifts[0][0]..=lifts[0][1] {
                for k1 in lifts[1][0]..=lifts[1][1] {
                    let target = [q[0] + k0 as f64, q[1] + k1 as f64];
                    let t0 = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                    if let Some(t) = newton_surface(l, s, t0, target, a, exact) {
                        // keep roots inside this cell (with a small margin) to avoid duplicates
                        let inside = (0..2).all(|c| {
                            let lo = [i, j][c] as f64 * h - 1e-9;
                            t[c] >= lo && t[c] < lo + h + 2e-9
                        });
                        if inside {
                            let tt = [t[0].rem_euclid(1.0), t[1].rem_euclid(1.0)];
                            if !roots.iter().any(|r| linalg::torus_dist(r, &tt) < 1e-9) {
                                roots.push(tt);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for t in roots {
        let pt = if exact { l.eval_surface(t)? } else { bilinear(s, t) };
        let det = pt.dq[0][0] * pt.dq[1][1] - pt.dq[0][1] * pt.dq[1][0];
        out.push(FiberPoint { t, p: pt.p, h: pt.s, jacobian: det, arc: 0, lift: 0 });
    }
    Ok(out)
}

fn newton_surface(
    l: &ExactLagrangian,
    s: &Surface,
    t0: [f64; 2],
    target: [f64; 2],
    anchor: &crate::lagrangian::SurfaceSample,
    exact: bool,
) -> Option<[f64; 2]> {
    let mut t = t0;
    let h = 1.0 / s.m as f64;
    for _ in 0..30 {
        let pt = if exact { l.eval_surface(t).ok()? } else { bilinear(s, t) };
        let qv = [0, 1].map(|c| anchor.q[c] + linalg::circle_delta(anchor.q[c], pt.q[c]));
        let f = [qv[0] - target[0], qv[1] - target[1]];
        if f[0].abs().max(f[1].abs()) < 1e-13 {
            return Some(t);
        }
        let step = linalg::solve(pt.dq, f, 2)?;
        t = [t[0] - step[0], t[1] - step[1]];
        if (t[0] - t0[0]).abs() > 2.0 * h || (t[1] - t0[1]).abs() > 2.0 * h {
            return None;
        }
    }
    None
}

/// Bilinear interpolation of a sampled surface (values and Jacobians).
fn bilinear(s: &Surface, t: [f64; 2]) -> crate::lagrangian::SurfaceSample {
    let m = s.m as f64;
    let x = t[0].rem_euclid(1.0) * m;
    let y = t[1].rem_euclid(1.0) * m;
    let (i, j) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - i as f64, y - j as f64);
    let c = [s.at(i, j), s.at(i + 1, j), s.at(i, j + 1), s.at(i + 1, j + 1)];
    let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
    let mut out = *c[0];
    out.t = t;
    out.s = 0.0;
    out.q = [0.0; 2];
    out.p = [0.0; 2];
    out.dq = [[0.0; 2]; 2];
    out.dp = [[0.0; 2]; 2];
    for k in 0..4 {
        out.s += w[k] * c[k].s;
        for a in 0..2 {
            let qk = c[0].q[a] + linalg::circle_delta(c[0].q[a], c[k].q[a]);
            out.q[a] += w[k] * qk;
            out.p[a] += w[k] * c[k].p[a];
            for b in 0..2 {
                out.dq[a][b] += w[k] * c[k].dq[a][b];
                out.dp[a][b] += w[k] * c[k].dp[a][b];
            }
        }
    }
    out
}

/// Fiber over `q` (convenience wrapper building a [`Front`]).
pub fn fiber_intersections(l: &ExactLagrangian, q: [f64; 2], gap_tol: f64) -> Result<FiberData> {
    Front::new(l)?.fiber(q, gap_tol)
}

pub fn spectrum(l: &ExactLagrangian, q: [f64; 2]) -> Result<Vec<f64>> {
    Front::new(l)?.spectrum(q)
}

pub fn caustics(l: &ExactLagrangian) -> Result<Vec<Fold>> {
    Ok(Front::new(l)?.folds)
}

pub fn cerf_regular(l: &ExactLagrangian, q: [f64; 2], gap_tol: f64) -> Result<bool> {
    Front::new(l)?.cerf_regular(q, gap_tol)
}

pub fn sheet_decomposition(l: &ExactLagrangian, a: f64, b: f64, samples: usize) -> Result<SheetChart> {
    Front::new(l)?.sheet_decomposition(a, b, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::{PeriodicFunction, SymbolicFn};
    use crate::hamiltonian::HamiltonianSpec;
    use crate::lagrangian::FlowOptions;

    fn sine_graph() -> ExactLagrangian {
        let v = PeriodicFunction::Symbolic(SymbolicFn::parse("0.1*sin(2*pi*q)", 1).unwrap());
        ExactLagrangian::from_function(v, 256).unwrap()
    }

    fn whorl() -> ExactLagrangian {
        let h = HamiltonianSpec::parse("p^2/2 + cos(2*pi*q)", 1).unwrap();
        ExactLagrangian::from_flow(PeriodicFunction::zero(1), &h, 3.0, 3000, &FlowOptions::default()).unwrap()
    }

    #[test]
    fn zero_section_fiber() {
        let l = ExactLagrangian::from_graph(1, 64, &[0.0; 64]).unwrap();
        let f = fiber_intersections(&l, [0.37, 0.0], GAP_TOL).unwrap();
        assert_eq!(f.points.len(), 1);
        assert_eq!(f.points[0].p[0], 0.0);
        assert_eq!(f.points[0].h, 0.0);
        assert!(f.cerf_regular);
    }

    #[test]
    fn graph_fiber_value() {
        let l = sine_graph();
        let f = fiber_intersections(&l, [0.25, 0.0], GAP_TOL).unwrap();
        assert_eq!(f.points.len(), 1);
        assert!((f.points[0].h - 0.1).abs() < 1e-14);
        assert!(caustics(&l).unwrap().is_empty());
        let chart = sheet_decomposition(&l, 0.1, 0.9, 33).unwrap();
        assert_eq!(chart.sheets.len(), 1);
        assert!(chart.crossings.is_empty());
    }

    #[test]
    fn whorled_pendulum_front() {
        let l = whorl();
        let front = Front::new(&l).unwrap();
        let folds = front.folds();
        assert!(folds.len() >= 2 && folds.len() % 2 == 0, "{} folds", folds.len());
        // the flow of an even potential from the zero section is odd: q ↦ −q
        for f in folds {
            let mirror = (1.0 - f.q).rem_euclid(1.0);
            assert!(
                folds.iter().any(|g| linalg::circle_delta(g.q, mirror).abs() < 1e-8),
                "fold at {} has no mirror",
                f.q
            );
        }
        let counts: Vec<usize> = (0..64)
            .map(|k| front.fiber([(k as f64 + 0.5) / 64.0, 0.0], GAP_TOL).unwrap().points.len())
            .collect();
        assert!(counts.iter().any(|&c| c >= 3));
        assert!(counts.iter().all(|&c| c % 2 == 1));
    }

    #[test]
    fn synthetic_identical_sheets_rejected() {
        let qs: Vec<f64> = (0..11).map(|k| k as f64 * 0.1).collect();
        let sheet = |c: f64| Sheet {
            arc: 0,
            lift: 0,
            t: qs.clone(),
            p: vec![0.0; 11],
            h: vec![c; 11],
        };
        assert!(matches!(
            SheetChart::from_sheets((0.0, 1.0), qs.clone(), vec![sheet(0.5), sheet(0.5)]),
            Err(Error::DegenerateCrossing { i: 0, j: 1 })
        ));
        let chart = SheetChart::from_sheets((0.0, 1.0), qs.clone(), vec![sheet(0.5), sheet(0.7)]).unwrap();
        assert!(chart.crossings.is_empty());
    }

    #[test]
    fn quadratic_roots_both() {
        let mut r = quadratic_roots(1.0, -3.0, 2.0);
        r.sort_by(f64::total_cmp);
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 2.0).abs() < 1e-15);
    }
}

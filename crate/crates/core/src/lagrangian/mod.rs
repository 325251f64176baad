//! Exact Lagrangians `ι: N → T*T^n` with Liouville primitives `S`
//! (`ι*θ = dS`, `θ = p·dq`).
//!
//! Curves (n = 1) are sampled on the parameter circle `t ∈ [0,1)` and carry
//! tangent vectors so that the primitive and line integrals can be evaluated
//! with Hermite accuracy between samples. Surfaces (n = 2) are sampled on a
//! uniform parameter grid.

mod exactness;
pub mod io;
mod mollify;

use rayon::prelude::*;

pub use exactness::{line_integral_check, verify_exactness, ExactnessReport};
pub use mollify::{mollify_sequence, ApproxSequence, LipschitzCurve, MollifyOptions};

use crate::error::{Error, Result};
use crate::fourier::{PeriodicFunction, TrigSeries};
use crate::hamiltonian::{HamiltonianSpec, Tangent};
use crate::numeric::{self, GAUSS5};

/// Relative exactness tolerance (multiplies arc length).
pub const EXACTNESS_TOL: f64 = 1e-6;
/// Minimum points per dimension for grid-sampled graphs.
pub const MIN_GRAPH_GRID: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveSample {
    pub t: f64,
    /// Lifted base coordinate: `q(t + 1) = q(t) + winding`.
    pub q: f64,
    pub p: f64,
    pub s: f64,
    pub dq: f64,
    pub dp: f64,
}

/// Point of a curve together with its parameter derivative.
pub type CurvePoint = CurveSample;

#[derive(Clone, Debug)]
pub struct Curve {
    pub samples: Vec<CurveSample>,
    pub winding: i32,
}

impl Curve {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Endpoints of interval `i`, with the closing interval lifted by one period.
    pub fn interval(&self, i: usize) -> (CurveSample, CurveSample) {
        let a = self.samples[i];
        let b = if i + 1 < self.samples.len() {
            self.samples[i + 1]
        } else {
            let mut b = self.samples[0];
            b.t += 1.0;
            b.q += self.winding as f64;
            b
        };
        (a, b)
    }

    /// Interval index containing `t` (taken mod 1) and the lift `t - t_i`.
    fn locate(&self, t: f64) -> (usize, f64) {
        let tr = t.rem_euclid(1.0);
        let k = self.samples.partition_point(|s| s.t <= tr);
        let (i, tau) = if k == 0 {
            let last = self.samples.len() - 1;
            (last, tr + 1.0 - self.samples[last].t)
        } else {
            (k - 1, tr - self.samples[k - 1].t)
        };
        (i, tau)
    }

    /// Hermite interpolation at parameter `t` (lifted consistently with `t`).
    pub fn interpolate(&self, t: f64) -> CurvePoint {
        let periods = (t - t.rem_euclid(1.0)).round();
        let (i, tau) = self.locate(t);
        let mut pt = Self::hermite_in(&self.interval(i), tau);
        pt.t = t;
        pt.q += periods * self.winding as f64;
        pt
    }

    fn hermite_in((a, b): &(CurveSample, CurveSample), tau: f64) -> CurvePoint {
        let h = b.t - a.t;
        let s = (tau / h).clamp(0.0, 1.0);
        let (q, dq) = numeric::hermite(a.q, a.dq, b.q, b.dq, h, s);
        let (p, dp) = numeric::hermite(a.p, a.dp, b.p, b.dp, h, s);
        let (sv, _) = numeric::hermite(a.s, a.p * a.dq, b.s, b.p * b.dq, h, s);
        CurveSample { t: a.t + tau, q, p, s: sv, dq, dp }
    }

    /// `∫ p dq` over interval `i` (Gauss rule on the Hermite interpolants).
    pub fn interval_integral(&self, i: usize) -> f64 {
        let iv = self.interval(i);
        let h = iv.1.t - iv.0.t;
        GAUSS5
            .iter()
            .map(|&(x, w)| {
                let pt = Self::hermite_in(&iv, x * h);
                w * pt.p * pt.dq * h
            })
            .sum()
    }

    /// `∫ p dq` between parameters `ta ≤ tb` along the interpolated curve.
    pub fn integral_between(&self, ta: f64, tb: f64) -> f64 {
        if tb <= ta {
            return -self.integral_between(tb, ta);
        }
        let mut total = 0.0;
        let mut t = ta;
        while t < tb {
            let (i, tau) = self.locate(t);
            let iv = self.interval(i);
            let h = iv.1.t - iv.0.t;
            let end_tau = (tau + (tb - t)).min(h);
            let span = end_tau - tau;
            if span <= 0.0 {
                // t sits on a sample boundary up to rounding
                t += 1e-15_f64.max(t.abs() * f64::EPSILON);
                continue;
            }
            total += GAUSS5
                .iter()
                .map(|&(x, w)| {
                    let pt = Self::hermite_in(&iv, tau + x * span);
                    w * pt.p * pt.dq * span
                })
                .sum::<f64>();
            t += span;
        }
        total
    }

    pub fn arc_length(&self) -> f64 {
        (0..self.len()).map(|i| self.interval_arc_length(i)).sum()
    }

    fn interval_arc_length(&self, i: usize) -> f64 {
        let iv = self.interval(i);
        let h = iv.1.t - iv.0.t;
        GAUSS5
            .iter()
            .map(|&(x, w)| {
                let pt = Self::hermite_in(&iv, x * h);
                w * pt.dq.hypot(pt.dp) * h
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub t: [f64; 2],
    pub q: [f64; 2],
    pub p: [f64; 2],
    pub s: f64,
    /// `dq[i][j] = ∂q_i/∂t_j`
    pub dq: [[f64; 2]; 2],
    pub dp: [[f64; 2]; 2],
}

/// Two-dimensional Lagrangian sampled on an `m × m` parameter grid,
/// row-major with `t1` fastest.
#[derive(Clone, Debug)]
pub struct Surface {
    pub m: usize,
    pub samples: Vec<SurfaceSample>,
}

impl Surface {
    pub fn at(&self, i: usize, j: usize) -> &SurfaceSample {
        &self.samples[(j % self.m) * self.m + (i % self.m)]
    }
}

#[derive(Clone, Debug)]
pub enum Geometry {
    Curve(Curve),
    Surface(Surface),
}

/// A Hamiltonian flow applied to the Lagrangian: `steps` steps of size `time/steps`.
#[derive(Clone, Debug)]
pub struct FlowStage {
    pub hamiltonian: HamiltonianSpec,
    pub time: f64,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub enum Base {
    /// Graph of `dv`, parametrized by the base point; primitive `v`.
    Graph(PeriodicFunction),
    /// Sampled curve, evaluated by Hermite interpolation.
    Parametric(Curve),
    /// Sampled surface without an evaluator.
    SampledSurface,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LagrangianKind {
    Graph,
    Parametric,
    Flowed,
}

impl LagrangianKind {
    pub fn code(self) -> &'static str {
        match self {
            LagrangianKind::Graph => "graph",
            LagrangianKind::Parametric => "parametric",
            LagrangianKind::Flowed => "flowed",
        }
    }
}

/// Options for building flowed Lagrangians.
#[derive(Clone, Debug)]
pub struct FlowOptions {
    /// Initial uniform parameter samples (1-d).
    pub initial_samples: usize,
    /// Arc spacing bound as a fraction of total length.
    pub arc_fraction: f64,
    /// Maximum tangent turning between consecutive samples (radians).
    pub max_turn: f64,
    /// Sample budget for adaptive resampling.
    pub budget: usize,
    /// Parameter grid per dimension for surfaces.
    pub surface_grid: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            initial_samples: 1024,
            arc_fraction: 1.0 / 1024.0,
            max_turn: 0.25,
            budget: 1 << 20,
            surface_grid: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExactLagrangian {
    dim: usize,
    base: Base,
    stages: Vec<FlowStage>,
    /// Raw primitive at the anchor sample `t = 0`, subtracted from every value.
    offset: f64,
    geometry: Geometry,
    lipschitz_bound: f64,
    pmax: f64,
}

impl ExactLagrangian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> LagrangianKind {
        if !self.stages.is_empty() {
            LagrangianKind::Flowed
        } else if matches!(self.base, Base::Graph(_)) {
            LagrangianKind::Graph
        } else {
            LagrangianKind::Parametric
        }
    }

    pub fn base(&self) -> &Base {
        &self.base
    }

    pub fn stages(&self) -> &[FlowStage] {
        &self.stages
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn curve(&self) -> Option<&Curve> {
        match &self.geometry {
            Geometry::Curve(c) => Some(c),
            _ => None,
        }
    }

    pub fn surface(&self) -> Option<&Surface> {
        match &self.geometry {
            Geometry::Surface(s) => Some(s),
            _ => None,
        }
    }

    /// Certified bound on `|dι/dt|` over the samples.
    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    /// `max |p|` over the samples.
    pub fn pmax(&self) -> f64 {
        self.pmax
    }

    /// Raw primitive value at the anchor (before normalization).
    pub fn anchor_offset(&self) -> f64 {
        self.offset
    }

    /// The generating function `v` when the Lagrangian is (a flow of) a graph.
    pub fn graph_function(&self) -> Option<&PeriodicFunction> {
        match &self.base {
            Base::Graph(v) => Some(v),
            _ => None,
        }
    }

    /// Whether [`Self::eval`] is exact (re-integrates from the generator)
    /// rather than interpolated.
    pub fn has_exact_evaluator(&self) -> bool {
        matches!(self.base, Base::Graph(_))
    }

    /// Point of the curve at parameter `t`, lifted consistently with `t`.
    pub fn eval(&self, t: f64) -> Result<CurvePoint> {
        if self.dim != 1 {
            return Err(Error::Dimension("eval(t) is defined for curves".into()));
        }
        let mut pt = match &self.base {
            Base::Graph(v) => {
                let x = [t, 0.0];
                CurveSample {
                    t,
                    q: t,
                    p: v.grad(&x)[0],
                    s: v.value(&x),
                    dq: 1.0,
                    dp: v.hessian(&x)[0][0],
                }
            }
            Base::Parametric(c) => c.interpolate(t),
            Base::SampledSurface => unreachable!("surfaces are two dimensional"),
        };
        let mut q = [pt.q, 0.0];
        let mut p = [pt.p, 0.0];
        let mut tan = [Tangent { dq: [pt.dq, 0.0], dp: [pt.dp, 0.0] }];
        for st in &self.stages {
            if st.steps == 0 || st.time == 0.0 {
                continue;
            }
            let dt = st.time / st.steps as f64;
            pt.s += st.hamiltonian.flow_tangents(&mut q, &mut p, &mut tan, dt, st.steps)?;
        }
        pt.q = q[0];
        pt.p = p[0];
        pt.dq = tan[0].dq[0];
        pt.dp = tan[0].dp[0];
        pt.s -= self.offset;
        Ok(pt)
    }

    /// Point of the surface at parameter `t` (exact evaluators only).
    pub fn eval_surface(&self, t: [f64; 2]) -> Result<SurfaceSample> {
        let Base::Graph(v) = &self.base else {
            return Err(Error::Unsupported(
                "surface evaluation needs a graph generator".into(),
            ));
        };
        if self.dim != 2 {
            return Err(Error::Dimension("eval_surface is defined for surfaces".into()));
        }
        let mut sample = surface_graph_point(v, t);
        let mut tan = [
            Tangent { dq: [sample.dq[0][0], sample.dq[1][0]], dp: [sample.dp[0][0], sample.dp[1][0]] },
            Tangent { dq: [sample.dq[0][1], sample.dq[1][1]], dp: [sample.dp[0][1], sample.dp[1][1]] },
        ];
        for st in &self.stages {
            if st.steps == 0 || st.time == 0.0 {
                continue;
            }
            let dt = st.time / st.steps as f64;
            sample.s += st.hamiltonian.flow_tangents(&mut sample.q, &mut sample.p, &mut tan, dt, st.steps)?;
        }
        for j in 0..2 {
            for i in 0..2 {
                sample.dq[i][j] = tan[j].dq[i];
                sample.dp[i][j] = tan[j].dp[i];
            }
        }
        sample.s -= self.offset;
        Ok(sample)
    }

    /// Graph `Γ_dv` from samples of `v` on the uniform grid (`n` per dimension),
    /// differentiated spectrally.
    pub fn from_graph(dim: usize, n: usize, values: &[f64]) -> Result<Self> {
        if n < MIN_GRAPH_GRID {
            return Err(Error::GridTooCoarse { got: n, need: MIN_GRAPH_GRID });
        }
        let v = PeriodicFunction::Trig(TrigSeries::from_samples(dim, n, values)?);
        Self::from_function(v, n)
    }

    /// Graph `Γ_dv` of a smooth periodic function, sampled `n` per dimension.
    pub fn from_function(v: PeriodicFunction, n: usize) -> Result<Self> {
        if n < MIN_GRAPH_GRID {
            return Err(Error::GridTooCoarse { got: n, need: MIN_GRAPH_GRID });
        }
        let dim = v.dim();
        let mut l = ExactLagrangian {
            dim,
            base: Base::Graph(v),
            stages: Vec::new(),
            offset: 0.0,
            geometry: Geometry::Curve(Curve { samples: Vec::new(), winding: 1 }),
            lipschitz_bound: 0.0,
            pmax: 0.0,
        };
        if dim == 1 {
            let ts: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            l.set_offset_from_anchor()?;
            let samples = ts.iter().map(|&t| l.eval(t)).collect::<Result<Vec<_>>>()?;
            l.geometry = Geometry::Curve(Curve { samples, winding: 1 });
        } else {
            l.set_offset_from_anchor()?;
            l.geometry = Geometry::Surface(l.sample_surface(n)?);
        }
        l.refresh_bounds();
        Ok(l)
    }

    /// `φ_H^T(Γ_dv)` with the primitive transported along each trajectory.
    pub fn from_flow(
        v: PeriodicFunction,
        h: &HamiltonianSpec,
        time: f64,
        steps: usize,
        opts: &FlowOptions,
    ) -> Result<Self> {
        if time < 0.0 || !time.is_finite() {
            return Err(Error::Precondition(format!("flow time must be ≥ 0, got {time}")));
        }
        if v.dim() != h.dim() {
            return Err(Error::Dimension("generator and Hamiltonian dimensions differ".into()));
        }
        if time == 0.0 || steps == 0 {
            let n = if v.dim() == 1 { opts.initial_samples } else { opts.surface_grid };
            return Self::from_function(v, n);
        }
        let dim = v.dim();
        let mut l = ExactLagrangian {
            dim,
            base: Base::Graph(v),
            stages: Vec::new(),
            offset: 0.0,
            geometry: Geometry::Curve(Curve { samples: Vec::new(), winding: 1 }),
            lipschitz_bound: 0.0,
            pmax: 0.0,
        };
        {
            l.stages.push(FlowStage { hamiltonian: h.clone(), time, steps });
        }
        l.resample(opts)?;
        Ok(l)
    }

    /// Applies a further flow stage; for curves the result is resampled.
    pub fn flowed(&self, h: &HamiltonianSpec, time: f64, steps: usize, opts: &FlowOptions) -> Result<Self> {
        if h.dim() != self.dim {
            return Err(Error::Dimension("Hamiltonian dimension differs".into()));
        }
        if matches!(self.base, Base::SampledSurface) {
            return Err(Error::Unsupported("flowing a sampled surface".into()));
        }
        let mut l = self.clone();
        if time > 0.0 && steps > 0 {
            l.stages.push(FlowStage { hamiltonian: h.clone(), time, steps });
        }
        // keep the anchor of the original parametrization
        l.offset = 0.0;
        l.resample(opts)?;
        Ok(l)
    }

    fn set_offset_from_anchor(&mut self) -> Result<()> {
        self.offset = 0.0;
        self.offset = if self.dim == 1 {
            self.eval(0.0)?.s
        } else {
            self.eval_surface([0.0, 0.0])?.s
        };
        Ok(())
    }

    fn sample_surface(&self, m: usize) -> Result<Surface> {
        let samples = (0..m * m)
            .into_par_iter()
            .map(|k| {
                let t = [(k % m) as f64 / m as f64, (k / m) as f64 / m as f64];
                self.eval_surface(t)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Surface { m, samples })
    }

    fn resample(&mut self, opts: &FlowOptions) -> Result<()> {
        self.set_offset_from_anchor()?;
        if self.dim == 2 {
            self.geometry = Geometry::Surface(self.sample_surface(opts.surface_grid)?);
            self.refresh_bounds();
            return Ok(());
        }
        let winding = match &self.base {
            Base::Parametric(c) => c.winding,
            _ => 1,
        };
        let n0 = opts.initial_samples.max(8);
        let mut ts: Vec<f64> = (0..n0).map(|i| i as f64 / n0 as f64).collect();
        // keep the base's own sample parameters so interpolation nodes are hit
        if let Base::Parametric(c) = &self.base {
            ts = c.samples.iter().map(|s| s.t).collect();
        }
        let mut samples: Vec<CurveSample> = ts
            .par_iter()
            .map(|&t| self.eval(t))
            .collect::<Result<Vec<_>>>()?;
        loop {
            let curve = Curve { samples, winding };
            let n = curve.len();
            let chords: Vec<f64> = (0..n)
                .map(|i| {
                    let (a, b) = curve.interval(i);
                    (b.q - a.q).hypot(b.p - a.p)
                })
                .collect();
            let length: f64 = chords.iter().sum();
            let eps = opts.arc_fraction * length;
            let mut mids = Vec::new();
            for (i, &chord) in chords.iter().enumerate() {
                let (a, b) = curve.interval(i);
                let turn = turning_angle(a.dq, a.dp, b.dq, b.dp);
                if (chord > eps || turn > opts.max_turn) && b.t - a.t > 1e-13 {
                    mids.push(0.5 * (a.t + b.t));
                }
            }
            samples = curve.samples;
            if mids.is_empty() {
                break;
            }
            if samples.len() + mids.len() > opts.budget {
                return Err(Error::ResamplingBudget { budget: opts.budget });
            }
            let new: Vec<CurveSample> = mids
                .par_iter()
                .map(|&t| {
                    // the closing interval's midpoint can exceed 1
                    let tt = if t >= 1.0 { t - 1.0 } else { t };
                    self.eval(tt)
                })
                .collect::<Result<Vec<_>>>()?;
            samples.extend(new);
            samples.sort_by(|a, b| a.t.total_cmp(&b.t));
        }
        self.geometry = Geometry::Curve(Curve { samples, winding });
        self.refresh_bounds();
        Ok(())
    }

    fn refresh_bounds(&mut self) {
        let (lip, pmax) = match &self.geometry {
            Geometry::Curve(c) => c.samples.iter().fold((0.0f64, 0.0f64), |(l, m), s| {
                (l.max(s.dq.hypot(s.dp)), m.max(s.p.abs()))
            }),
            Geometry::Surface(s) => s.samples.iter().fold((0.0f64, 0.0f64), |(l, m), x| {
                let mut fro = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        fro += x.dq[i][j] * x.dq[i][j] + x.dp[i][j] * x.dp[i][j];
                    }
                }
                (l.max(fro.sqrt()), m.max(x.p[0].hypot(x.p[1])))
            }),
        };
        self.lipschitz_bound = lip;
        self.pmax = pmax;
    }

    /// Curve reconstructed from `(t, q, p)` samples on the parameter circle:
    /// tangents by five-point differences, primitive by integrating `p dq`
    /// from the anchor `S(t_0) = 0`.
    pub fn from_parametric(points: &[(f64, f64, f64)]) -> Result<Self> {
        let curve = curve_from_points(points)?;
        let length = curve.arc_length();
        let loop_integral: f64 = (0..curve.len()).map(|i| curve.interval_integral(i)).sum();
        let tol = EXACTNESS_TOL * length.max(1e-12);
        if loop_integral.abs() > tol {
            return Err(Error::NotExact { residual: loop_integral.abs(), tol });
        }
        let mut l = ExactLagrangian {
            dim: 1,
            base: Base::Parametric(curve.clone()),
            stages: Vec::new(),
            offset: 0.0,
            geometry: Geometry::Curve(curve),
            lipschitz_bound: 0.0,
            pmax: 0.0,
        };
        l.refresh_bounds();
        Ok(l)
    }

    /// Curve from fully specified samples (primitive and tangents included),
    /// evaluated by interpolation. Used by readers and by mollification.
    pub fn from_curve(curve: Curve) -> Result<Self> {
        if curve.len() < 4 {
            return Err(Error::Precondition("need at least 4 samples".into()));
        }
        let mut l = ExactLagrangian {
            dim: 1,
            base: Base::Parametric(curve.clone()),
            stages: Vec::new(),
            offset: 0.0,
            geometry: Geometry::Curve(curve),
            lipschitz_bound: 0.0,
            pmax: 0.0,
        };
        l.refresh_bounds();
        Ok(l)
    }

    /// Surface from grid samples; no evaluator is attached.
    pub fn from_surface(surface: Surface) -> Result<Self> {
        let mut l = ExactLagrangian {
            dim: 2,
            base: Base::SampledSurface,
            stages: Vec::new(),
            offset: 0.0,
            geometry: Geometry::Surface(surface),
            lipschitz_bound: 0.0,
            pmax: 0.0,
        };
        l.refresh_bounds();
        Ok(l)
    }

    /// Same Lagrangian with samples placed at uniform arc-length spacing.
    pub fn resampled_uniform_speed(&self, m: usize) -> Result<Self> {
        let curve = self
            .curve()
            .ok_or_else(|| Error::Dimension("uniform-speed resampling is for curves".into()))?;
        let n = curve.len();
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for i in 0..n {
            let prev = *cum.last().unwrap();
            cum.push(prev + curve.interval_arc_length(i));
        }
        let total = cum[n];
        let mut ts = Vec::with_capacity(m);
        for k in 0..m {
            let target = total * k as f64 / m as f64;
            let i = cum.partition_point(|&c| c <= target).saturating_sub(1).min(n - 1);
            let (a, b) = curve.interval(i);
            let frac = if cum[i + 1] > cum[i] {
                (target - cum[i]) / (cum[i + 1] - cum[i])
            } else {
                0.0
            };
            ts.push(a.t + frac * (b.t - a.t));
        }
        ts[0] = 0.0;
        let samples = ts
            .par_iter()
            .map(|&t| if self.has_exact_evaluator() { self.eval(t) } else { Ok(curve.interpolate(t)) })
            .collect::<Result<Vec<_>>>()?;
        let mut l = self.clone();
        l.geometry = Geometry::Curve(Curve { samples, winding: curve.winding });
        l.refresh_bounds();
        Ok(l)
    }

    /// Image under `(q, p) ↦ (q, p + dw(q))`, with primitive `S + w∘π`.
    pub fn momentum_shifted(&self, w: &PeriodicFunction) -> Result<Self> {
        match &self.geometry {
            Geometry::Curve(c) => {
                let samples = c
                    .samples
                    .iter()
                    .map(|s| {
                        let x = [s.q, 0.0];
                        CurveSample {
                            p: s.p + w.grad(&x)[0],
                            s: s.s + w.value(&x),
                            dp: s.dp + w.hessian(&x)[0][0] * s.dq,
                            ..*s
                        }
                    })
                    .collect();
                Self::from_curve(Curve { samples, winding: c.winding })
            }
            Geometry::Surface(sf) => {
                let samples = sf
                    .samples
                    .iter()
                    .map(|s| {
                        let g = w.grad(&s.q);
                        let hs = w.hessian(&s.q);
                        let mut dp = s.dp;
                        for i in 0..2 {
                            for j in 0..2 {
                                dp[i][j] += (0..2).map(|k| hs[i][k] * s.dq[k][j]).sum::<f64>();
                            }
                        }
                        SurfaceSample {
                            p: [s.p[0] + g[0], s.p[1] + g[1]],
                            s: s.s + w.value(&s.q),
                            dp,
                            ..*s
                        }
                    })
                    .collect();
                Self::from_surface(Surface { m: sf.m, samples })
            }
        }
    }

    /// All sample points as `(q mod 1, p)` pairs.
    pub fn points(&self) -> Vec<([f64; 2], [f64; 2])> {
        match &self.geometry {
            Geometry::Curve(c) => c
                .samples
                .iter()
                .map(|s| ([s.q.rem_euclid(1.0), 0.0], [s.p, 0.0]))
                .collect(),
            Geometry::Surface(sf) => sf
                .samples
                .iter()
                .map(|s| ([s.q[0].rem_euclid(1.0), s.q[1].rem_euclid(1.0)], s.p))
                .collect(),
        }
    }

    /// Primitive values aligned with [`Self::points`].
    pub fn primitive_values(&self) -> Vec<f64> {
        match &self.geometry {
            Geometry::Curve(c) => c.samples.iter().map(|s| s.s).collect(),
            Geometry::Surface(sf) => sf.samples.iter().map(|s| s.s).collect(),
        }
    }

    /// Diameter-like scale used for proportional tolerances: extent of the
    /// sample cloud in `(q, p)` (torus diameter in the base).
    pub fn diameter(&self) -> f64 {
        let pts = self.points();
        let n = self.dim;
        let mut pr = 0.0f64;
        for i in 0..n {
            let lo = pts.iter().map(|x| x.1[i]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|x| x.1[i]).fold(f64::NEG_INFINITY, f64::max);
            pr += (hi - lo).powi(2);
        }
        let base = 0.5 * (n as f64).sqrt();
        (base * base + pr).sqrt()
    }
}

fn surface_graph_point(v: &PeriodicFunction, t: [f64; 2]) -> SurfaceSample {
    let g = v.grad(&t);
    let hs = v.hessian(&t);
    SurfaceSample {
        t,
        q: t,
        p: g,
        s: v.value(&t),
        dq: [[1.0, 0.0], [0.0, 1.0]],
        dp: hs,
    }
}

fn turning_angle(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let na = ax.hypot(ay);
    let nb = bx.hypot(by);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let cross = ax * by - ay * bx;
    let dot = ax * bx + ay * by;
    cross.atan2(dot).abs()
}

/// Builds a curve from `(t, q, p)` samples with five-point tangents and the
/// primitive integrated from `S(t_0) = 0`.
pub(crate) fn curve_from_points(points: &[(f64, f64, f64)]) -> Result<Curve> {
    let n = points.len();
    if n < 5 {
        return Err(Error::Precondition("need at least 5 samples".into()));
    }
    for w in points.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::Precondition("parameters must increase strictly".into()));
        }
    }
    if points[0].0 < 0.0 || points[n - 1].0 >= 1.0 {
        return Err(Error::Precondition("parameters must lie in [0, 1)".into()));
    }
    // unwrap q by continuity
    let mut q = Vec::with_capacity(n);
    q.push(points[0].1);
    for i in 1..n {
        let prev: f64 = q[i - 1];
        q.push(prev + crate::linalg::circle_delta(prev, points[i].1));
    }
    let close = q[n - 1] + crate::linalg::circle_delta(q[n - 1], points[0].1);
    let winding_f = close - q[0];
    let winding = winding_f.round();
    if (winding_f - winding).abs() > 1e-9 {
        return Err(Error::NotClosed(format!("unwrapped loop increment {winding_f}")));
    }
    let winding = winding as i32;
    // periodic extension for difference stencils
    let ext = |k: isize| -> (f64, f64, f64) {
        let nn = n as isize;
        let wraps = k.div_euclid(nn);
        let idx = k.rem_euclid(nn) as usize;
        (
            points[idx].0 + wraps as f64,
            q[idx] + (wraps * winding as isize) as f64,
            points[idx].2,
        )
    };
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let ii = i as isize;
        let nodes: Vec<(f64, f64, f64)> = (ii - 2..=ii + 2).map(ext).collect();
        let ts: Vec<f64> = nodes.iter().map(|x| x.0).collect();
        let w = numeric::derivative_weights(points[i].0, &ts);
        let dq: f64 = w.iter().zip(&nodes).map(|(w, x)| w * x.1).sum();
        let dp: f64 = w.iter().zip(&nodes).map(|(w, x)| w * x.2).sum();
        samples.push(CurveSample { t: points[i].0, q: q[i], p: points[i].2, s: 0.0, dq, dp });
    }
    let mut curve = Curve { samples, winding };
    integrate_primitive(&mut curve);
    Ok(curve)
}

/// Fills `s` by cumulative integration of `p dq`, anchored at `S(t_0) = 0`.
pub(crate) fn integrate_primitive(curve: &mut Curve) {
    let n = curve.len();
    curve.samples[0].s = 0.0;
    for i in 0..n - 1 {
        let inc = curve.interval_integral(i);
        curve.samples[i + 1].s = curve.samples[i].s + inc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::SymbolicFn;
    use std::f64::consts::{PI, TAU};

    fn sym(src: &str) -> PeriodicFunction {
        PeriodicFunction::Symbolic(SymbolicFn::parse(src, 1).unwrap())
    }

    #[test]
    fn zero_section() {
        let l = ExactLagrangian::from_graph(1, 64, &[0.0; 64]).unwrap();
        assert_eq!(l.kind(), LagrangianKind::Graph);
        assert_eq!(l.pmax(), 0.0);
        assert!(l.curve().unwrap().samples.iter().all(|s| s.s == 0.0 && s.p == 0.0));
    }

    #[test]
    fn coarse_grid_rejected() {
        assert!(matches!(
            ExactLagrangian::from_graph(1, 32, &[0.0; 32]),
            Err(Error::GridTooCoarse { got: 32, need: 64 })
        ));
    }

    #[test]
    fn graph_of_sine() {
        let n = 128;
        let vals: Vec<f64> = (0..n).map(|j| 0.1 * (TAU * j as f64 / n as f64).sin()).collect();
        let l = ExactLagrangian::from_graph(1, n, &vals).unwrap();
        let c = l.curve().unwrap();
        assert!((c.samples[0].p - 0.2 * PI).abs() < 1e-12);
        assert!(c.samples[0].s.abs() < 1e-15);
        let lp: f64 = (0..c.len()).map(|i| c.interval_integral(i)).sum();
        assert!(lp.abs() < 1e-12);
        assert!((l.pmax() - 0.2 * PI).abs() < 1e-9);
    }

    #[test]
    fn zero_time_flow_is_the_graph() {
        let h = HamiltonianSpec::parse("p^2/2 + cos(2*pi*q)", 1).unwrap();
        let v = sym("0.1*sin(2*pi*q)");
        let a = ExactLagrangian::from_flow(v.clone(), &h, 0.0, 100, &FlowOptions::default()).unwrap();
        let b = ExactLagrangian::from_function(v, 1024).unwrap();
        assert_eq!(a.kind(), LagrangianKind::Graph);
        let (ca, cb) = (a.curve().unwrap(), b.curve().unwrap());
        assert_eq!(ca.len(), cb.len());
        for (x, y) in ca.samples.iter().zip(&cb.samples) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn parametric_circle_primitive_matches_antiderivative() {
        let n = 256;
        let pts: Vec<(f64, f64, f64)> = (0..n)
            .map(|j| {
                let t = j as f64 / n as f64;
                (t, t, (TAU * t).sin())
            })
            .collect();
        let l = ExactLagrangian::from_parametric(&pts).unwrap();
        for s in &l.curve().unwrap().samples {
            let exact = (1.0 - (TAU * s.t).cos()) / TAU;
            assert!((s.s - exact).abs() < 1e-9, "t={} {} vs {}", s.t, s.s, exact);
        }
    }

    #[test]
    fn non_exact_loop_rejected_with_residual() {
        let n = 64;
        let pts: Vec<(f64, f64, f64)> = (0..n).map(|j| (j as f64 / n as f64, j as f64 / n as f64, 1.0)).collect();
        match ExactLagrangian::from_parametric(&pts) {
            Err(Error::NotExact { residual, .. }) => assert!((residual - 1.0).abs() < 1e-12),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn zero_loop_has_zero_primitive() {
        let n = 64;
        let pts: Vec<(f64, f64, f64)> = (0..n).map(|j| (j as f64 / n as f64, j as f64 / n as f64, 0.0)).collect();
        let l = ExactLagrangian::from_parametric(&pts).unwrap();
        assert!(l.curve().unwrap().samples.iter().all(|s| s.s == 0.0));
    }

    #[test]
    fn short_pendulum_flow_stays_a_graph() {
        let h = HamiltonianSpec::parse("p^2/2 + cos(2*pi*q)", 1).unwrap();
        let l = ExactLagrangian::from_flow(PeriodicFunction::zero(1), &h, 0.2, 200, &FlowOptions::default()).unwrap();
        let c = l.curve().unwrap();
        assert!(c.samples.iter().all(|s| s.dq > 0.0));
        assert_eq!(c.winding, 1);
    }

    #[test]
    fn surface_graph() {
        let v = PeriodicFunction::Symbolic(
            SymbolicFn::parse("0.1*sin(2*pi*q1)*cos(2*pi*q2)", 2).unwrap(),
        );
        let l = ExactLagrangian::from_function(v, 64).unwrap();
        let s = l.surface().unwrap();
        assert_eq!(s.samples.len(), 64 * 64);
        let x = s.at(16, 0);
        assert!((x.p[0] - 0.0).abs() < 1e-12);
        assert!((x.s - 0.1).abs() < 1e-12);
    }
}

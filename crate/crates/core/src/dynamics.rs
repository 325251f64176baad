//! Flow-based set operations: maximal invariant sets by trimming, energy
//! level membership, Lipschitz graph tests, and the invariant-set checks
//! built on them.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::front::Front;
use crate::hamiltonian::{CotangentPoint, HamiltonianSpec};
use crate::lagrangian::{ApproxSequence, ExactLagrangian, Geometry, LipschitzCurve};
use crate::linalg::circle_delta;
use crate::selector::{self, SelectorFunction};
use crate::weakkam::{subsolution_check, LaxOleinik, SubsolutionReport};

/// Relative energy tolerance: `e_tol = E_TOL_REL · (range of H on L)`.
pub const E_TOL_REL: f64 = 1e-3;
/// Relative invariance tolerance: `inv_tol = INV_TOL_REL · diameter`.
pub const INV_TOL_REL: f64 = 1e-3;
/// Re-anchoring energy tolerance relative to `e_tol`.
pub const MATCH_TOL_REL: f64 = 1e-3;

/// Samples of a subset of `T*T^n` with the local sample spacing at each point.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub dim: usize,
    pub points: Vec<CotangentPoint>,
    pub spacing: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Samples of a Lagrangian; spacing is the larger distance to the
    /// parameter neighbours.
    pub fn from_lagrangian(l: &ExactLagrangian) -> Self {
        let dim = l.dim();
        let points: Vec<CotangentPoint> = l.points().into_iter().map(|(q, p)| CotangentPoint::new(dim, q, p)).collect();
        let spacing = match l.geometry() {
            Geometry::Curve(_) => {
                let m = points.len();
                (0..m)
                    .map(|i| {
                        let a = points[(i + m - 1) % m].distance(&points[i]);
                        let b = points[i].distance(&points[(i + 1) % m]);
                        a.max(b)
                    })
                    .collect()
            }
            Geometry::Surface(sf) => {
                let m = sf.m;
                (0..m * m)
                    .map(|k| {
                        let (i, j) = (k % m, k / m);
                        [((i + 1) % m, j), ((i + m - 1) % m, j), (i, (j + 1) % m), (i, (j + m - 1) % m)]
                            .iter()
                            .map(|&(a, b)| points[k].distance(&points[a + m * b]))
                            .fold(0.0, f64::max)
                    })
                    .collect()
            }
        };
        SampleSet { dim, points, spacing }
    }

    /// Graph `{(q_k, g_k)}` over the uniform grid with `n` points per
    /// dimension; points with `keep[k] == false` are dropped.
    pub fn from_graph(dim: usize, n: usize, grads: &[[f64; 2]], keep: Option<&[bool]>) -> Self {
        let len = selector::grid_len(dim, n);
        let all: Vec<CotangentPoint> =
            (0..len).map(|k| CotangentPoint::new(dim, selector::grid_point(dim, n, k), grads[k])).collect();
        let mut points = Vec::new();
        let mut spacing = Vec::new();
        for k in 0..len {
            if keep.is_some_and(|m| !m[k]) {
                continue;
            }
            let s = selector::neighbors(dim, n, k)
                .into_iter()
                .map(|j| all[k].distance(&all[j]))
                .fold(0.0, f64::max);
            points.push(all[k]);
            spacing.push(s);
        }
        SampleSet { dim, points, spacing }
    }

    /// Polygon of a Lipschitz curve, subdivided so that consecutive samples
    /// are at most `max_step` apart.
    pub fn from_polygon(c: &LipschitzCurve, max_step: f64) -> Self {
        let m = c.len();
        let mut raw = Vec::new();
        for i in 0..m {
            let j = (i + 1) % m;
            let dq = if j == 0 { c.q[0] + c.winding as f64 - c.q[i] } else { c.q[j] - c.q[i] };
            let dp = c.p[j] - c.p[i];
            let k = ((dq.hypot(dp) / max_step).ceil() as usize).max(1);
            for s in 0..k {
                let u = s as f64 / k as f64;
                raw.push(CotangentPoint::new_1d(c.q[i] + u * dq, c.p[i] + u * dp));
            }
        }
        let r = raw.len();
        let spacing = (0..r)
            .map(|i| raw[(i + r - 1) % r].distance(&raw[i]).max(raw[i].distance(&raw[(i + 1) % r])))
            .collect();
        SampleSet { dim: 1, points: raw, spacing }
    }

    /// Image under `(q, p) ↦ (q, p + dw(q))`.
    pub fn momentum_shifted(&self, dw: impl Fn(&[f64; 2]) -> [f64; 2]) -> Self {
        let points: Vec<CotangentPoint> = self
            .points
            .iter()
            .map(|x| {
                let g = dw(&x.q);
                CotangentPoint::new(self.dim, x.q, [x.p[0] + g[0], x.p[1] + g[1]])
            })
            .collect();
        SampleSet { dim: self.dim, points, spacing: self.spacing.clone() }
    }

    fn energies(&self, h: &HamiltonianSpec) -> Vec<f64> {
        self.points.par_iter().map(|x| h.at(x)).collect()
    }
}

/// Uniform hash grid over `T^n × R^n`; cells are cubes of side `1/m`.
struct SpatialHash {
    dim: usize,
    m: i64,
    cells: HashMap<[i64; 4], Vec<u32>>,
}

impl SpatialHash {
    fn new(dim: usize, points: &[CotangentPoint], cell: f64) -> Self {
        let m = ((1.0 / cell.max(1e-9)).floor() as i64).clamp(1, 1 << 16);
        let mut h = SpatialHash { dim, m, cells: HashMap::new() };
        for (i, x) in points.iter().enumerate() {
            h.cells.entry(h.key(x)).or_default().push(i as u32);
        }
        h
    }

    fn key(&self, x: &CotangentPoint) -> [i64; 4] {
        let m = self.m as f64;
        let mut k = [0i64; 4];
        for i in 0..self.dim {
            k[i] = ((x.q[i] * m).floor() as i64).rem_euclid(self.m);
            k[2 + i] = (x.p[i] * m).floor() as i64;
        }
        k
    }

    /// Calls `f(j)` for every stored index in cells meeting the ball of
    /// radius `r` around `x`.
    fn visit(&self, x: &CotangentPoint, r: f64, mut f: impl FnMut(usize)) {
        let c = self.key(x);
        let reach = (r * self.m as f64).ceil() as i64;
        // absolute cell indices along a periodic axis, each at most once
        let qcells = |center: i64| -> Vec<i64> {
            if 2 * reach + 1 >= self.m {
                (0..self.m).collect()
            } else {
                (-reach..=reach).map(|a| (center + a).rem_euclid(self.m)).collect()
            }
        };
        let dp: Vec<i64> = (-reach..=reach).collect();
        let zero = vec![0i64];
        let q1 = qcells(c[0]);
        let q2 = if self.dim == 2 { qcells(c[1]) } else { zero.clone() };
        let p2 = if self.dim == 2 { &dp } else { &zero };
        let mut key = c;
        for &a in &q1 {
            key[0] = a;
            for &b in &q2 {
                key[1] = b;
                for &d in &dp {
                    key[2] = c[2] + d;
                    for &e in p2 {
                        key[3] = c[3] + e;
                        if let Some(v) = self.cells.get(&key) {
                            for &j in v {
                                f(j as usize);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrimOptions {
    pub horizon: f64,
    /// Tube radius as a multiple of the local sample spacing.
    pub tube_factor: f64,
    /// Uniform tube radius overriding the spacing rule.
    pub tube_radius: Option<f64>,
    /// Energy tolerance; defaults to `E_TOL_REL` times the range of H.
    pub e_tol: Option<f64>,
    /// Flow time between re-anchorings.
    pub anchor: f64,
    /// Integrator steps per anchor interval.
    pub substeps: usize,
    /// Largest energy drift along a re-anchored orbit; defaults to
    /// `MATCH_TOL_REL · e_tol`.
    pub match_tol: Option<f64>,
}

impl Default for TrimOptions {
    fn default() -> Self {
        TrimOptions { horizon: 100.0, tube_factor: 3.0, tube_radius: None, e_tol: None, anchor: 0.1, substeps: 10, match_tol: None }
    }
}

/// Outcome of trimming a sample set to its maximal invariant subset.
#[derive(Clone, Debug)]
pub struct InvariantSetEstimate {
    pub dim: usize,
    pub level: f64,
    /// Seeds: samples with `|H − a| ≤ e_tol`.
    pub seeds: Vec<CotangentPoint>,
    /// Time each seed stayed in the tube (both directions), capped at twice the horizon.
    pub survived: Vec<f64>,
    /// Seeds that survived the horizon.
    pub samples: Vec<CotangentPoint>,
    pub horizon: f64,
    pub tube_radius: f64,
    pub e_tol: f64,
    /// Survivor set unchanged when the horizon doubles.
    pub converged: bool,
}

impl InvariantSetEstimate {
    /// Survivors of a shorter horizon `t ≤ 2·horizon`.
    pub fn survivors_at(&self, t: f64) -> Vec<CotangentPoint> {
        self.seeds
            .iter()
            .zip(&self.survived)
            .filter(|(_, &s)| s >= t - 1e-9)
            .map(|(x, _)| *x)
            .collect()
    }

    /// Rows `q [q2] p [p2] survived_horizon`, one per seed.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        if self.dim == 1 {
            writeln!(w, "# q p survived_horizon")?;
        } else {
            writeln!(w, "# q q2 p p2 survived_horizon")?;
        }
        for (x, s) in self.seeds.iter().zip(&self.survived) {
            if self.dim == 1 {
                writeln!(w, "{:.12e} {:.12e} {:.6e}", x.q[0], x.p[0], s)?;
            } else {
                writeln!(w, "{:.12e} {:.12e} {:.12e} {:.12e} {:.6e}", x.q[0], x.q[1], x.p[0], x.p[1], s)?;
            }
        }
        Ok(())
    }
}

fn flow_point(h: &HamiltonianSpec, x: &CotangentPoint, time: f64, steps: usize) -> Option<CotangentPoint> {
    let mut q = x.q;
    let mut p = x.p;
    let dt = time / steps as f64;
    for _ in 0..steps {
        h.step_lifted(&mut q, &mut p, dt).ok()?;
    }
    if p.iter().all(|v| v.is_finite()) && q.iter().all(|v| v.is_finite()) {
        Some(CotangentPoint::new(x.dim, q, p))
    } else {
        None
    }
}

/// `I*_a` of a sampled set: seeds on the energy band are flowed in both
/// directions and re-anchored to the nearest seed after each anchor
/// interval; a seed is discarded on the first step that leaves the tube.
pub fn maximal_invariant_set(
    set: &SampleSet,
    h: &HamiltonianSpec,
    a: f64,
    opts: &TrimOptions,
) -> Result<InvariantSetEstimate> {
    if set.dim != h.dim() {
        return Err(Error::Dimension("sample set and Hamiltonian dimensions differ".into()));
    }
    if !(opts.horizon > 0.0 && opts.anchor > 0.0 && opts.substeps > 0) {
        return Err(Error::Precondition("horizon, anchor interval and substeps must be positive".into()));
    }
    let energy = set.energies(h);
    let (lo, hi) = energy.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
    let e_tol = opts.e_tol.unwrap_or_else(|| (E_TOL_REL * (hi - lo)).max(1e-12));
    let idx: Vec<usize> = (0..set.len()).filter(|&i| (energy[i] - a).abs() <= e_tol).collect();
    if idx.is_empty() {
        return Err(Error::EmptySeeds { a });
    }
    let seeds: Vec<CotangentPoint> = idx.iter().map(|&i| set.points[i]).collect();
    let level: Vec<f64> = idx.iter().map(|&i| energy[i]).collect();
    let match_tol = opts.match_tol.unwrap_or(MATCH_TOL_REL * e_tol);
    let radius: Vec<f64> = idx
        .iter()
        .map(|&i| opts.tube_radius.unwrap_or(opts.tube_factor * set.spacing[i]).max(1e-12))
        .collect();
    let r_max = radius.iter().cloned().fold(0.0, f64::max);
    let grid = SpatialHash::new(set.dim, &seeds, r_max);
    let anchor = |x: &CotangentPoint, e: f64| -> Option<u32> {
        let mut best: Option<(f64, usize)> = None;
        grid.visit(x, r_max, |j| {
            let d = x.distance(&seeds[j]);
            if d <= radius[j] && (level[j] - e).abs() <= match_tol && best.is_none_or(|(bd, bj)| d < bd || (d == bd && j < bj)) {
                best = Some((d, j));
            }
        });
        best.map(|(_, j)| j as u32)
    };
    let succ = |sign: f64| -> Vec<Option<u32>> {
        seeds
            .par_iter()
            .zip(&level)
            .map(|(x, &e)| flow_point(h, x, sign * opts.anchor, opts.substeps).and_then(|y| anchor(&y, e)))
            .collect()
    };
    let fwd = succ(1.0);
    let bwd = succ(-1.0);
    let kmax = (2.0 * opts.horizon / opts.anchor).ceil() as usize;
    let life = |map: &[Option<u32>]| -> Vec<usize> {
        (0..seeds.len())
            .into_par_iter()
            .map(|i| {
                let mut c = i;
                let mut k = 0;
                while k < kmax {
                    match map[c] {
                        Some(j) if (level[j as usize] - level[i]).abs() <= match_tol => {
                            c = j as usize;
                            k += 1;
                        }
                        _ => break,
                    }
                }
                k
            })
            .collect()
    };
    let lf = life(&fwd);
    let lb = life(&bwd);
    let survived: Vec<f64> = lf.iter().zip(&lb).map(|(a, b)| (*a.min(b)) as f64 * opts.anchor).collect();
    let converged = !survived.iter().any(|&s| s >= opts.horizon - 1e-9 && s < 2.0 * opts.horizon - 1e-9);
    let mut est = InvariantSetEstimate {
        dim: set.dim,
        level: a,
        seeds,
        survived,
        samples: Vec::new(),
        horizon: opts.horizon,
        tube_radius: r_max,
        e_tol,
        converged,
    };
    est.samples = est.survivors_at(opts.horizon);
    debug_assert!(est.samples.iter().all(|x| (h.at(x) - a).abs() <= e_tol));
    Ok(est)
}

/// Hausdorff distance between finite subsets of `T*T^n`; zero for two
/// empty sets and infinite when exactly one is empty.
pub fn hausdorff(a: &[CotangentPoint], b: &[CotangentPoint]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        _ => {}
    }
    let one = |x: &[CotangentPoint], y: &[CotangentPoint]| {
        x.par_iter()
            .map(|p| y.iter().map(|q| p.distance(q)).fold(f64::INFINITY, f64::min))
            .reduce(|| 0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

/// Points with the fibre coordinate dropped; grid-step comparisons are made
/// on these.
pub fn base_projection(points: &[CotangentPoint]) -> Vec<CotangentPoint> {
    points.iter().map(|x| CotangentPoint::new(x.dim, x.q, [0.0; 2])).collect()
}

/// Hausdorff distance between the base projections of two sets.
pub fn base_hausdorff(a: &[CotangentPoint], b: &[CotangentPoint]) -> f64 {
    hausdorff(&base_projection(a), &base_projection(b))
}

/// Groups of points linked by chains of steps at most `link` long.
pub fn clusters(points: &[CotangentPoint], link: f64) -> Vec<Vec<CotangentPoint>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if points[i].distance(&points[j]) <= link {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<CotangentPoint>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        let g = *slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(points[i]);
    }
    groups
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyLevel {
    /// The common energy, when the deviation is within tolerance.
    pub e: Option<f64>,
    pub mean: f64,
    pub max_deviation: f64,
    pub tol: f64,
    /// `H − mean` at each sample.
    #[serde(skip)]
    pub profile: Vec<f64>,
}

/// Whether `H` is constant on the samples up to `tol`.
pub fn energy_level_check(set: &SampleSet, h: &HamiltonianSpec, tol: f64) -> EnergyLevel {
    let energy = set.energies(h);
    let mean = energy.iter().sum::<f64>() / energy.len().max(1) as f64;
    let profile: Vec<f64> = energy.iter().map(|e| e - mean).collect();
    let max_deviation = profile.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    EnergyLevel { e: (max_deviation <= tol).then_some(mean), mean, max_deviation, tol, profile }
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphTest {
    pub is_graph: bool,
    /// Largest difference quotient of the bin-averaged momentum.
    pub lipschitz: f64,
    pub max_multiplicity: usize,
    /// Fraction of base bins containing a sample.
    pub coverage: f64,
}

/// Bins the base projection on the grid with `n` cells per axis and counts
/// momentum clusters per bin.
pub fn graph_test(set: &SampleSet, n: usize) -> GraphTest {
    let dim = set.dim;
    let len = selector::grid_len(dim, n);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); len];
    for (i, x) in set.points.iter().enumerate() {
        let c = |v: f64| ((v * n as f64).floor() as i64).rem_euclid(n as i64) as usize;
        let b = if dim == 1 { c(x.q[0]) } else { c(x.q[0]) + n * c(x.q[1]) };
        bins[b].push(i);
    }
    let mut p_lo = [f64::INFINITY; 2];
    let mut p_hi = [f64::NEG_INFINITY; 2];
    for x in &set.points {
        for i in 0..dim {
            p_lo[i] = p_lo[i].min(x.p[i]);
            p_hi[i] = p_hi[i].max(x.p[i]);
        }
    }
    let range = (0..dim).map(|i| (p_hi[i] - p_lo[i]).powi(2)).sum::<f64>().sqrt();
    let gap = 0.1 * range + 1e-9;
    let pd = |a: &CotangentPoint, b: &CotangentPoint| (0..dim).map(|i| (a.p[i] - b.p[i]).powi(2)).sum::<f64>().sqrt();
    let mut max_mult = 0;
    let mut occupied = 0;
    let mut means: Vec<Option<CotangentPoint>> = vec![None; len];
    for (b, members) in bins.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        occupied += 1;
        let pts: Vec<CotangentPoint> = members.iter().map(|&i| set.points[i]).collect();
        let mult = if dim == 1 {
            let mut ps: Vec<f64> = pts.iter().map(|x| x.p[0]).collect();
            ps.sort_by(f64::total_cmp);
            1 + ps.windows(2).filter(|w| w[1] - w[0] > gap).count()
        } else {
            let mut parent: Vec<usize> = (0..pts.len()).collect();
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    if pd(&pts[i], &pts[j]) <= gap {
                        let (mut a, mut c) = (i, j);
                        while parent[a] != a {
                            a = parent[a];
                        }
                        while parent[c] != c {
                            c = parent[c];
                        }
                        parent[a.max(c)] = a.min(c);
                    }
                }
            }
            (0..pts.len()).filter(|&i| parent[i] == i).count()
        };
        max_mult = max_mult.max(mult);
        // bin mean with the base coordinate unwrapped around the first member
        let base = pts[0];
        let mut q = [0.0; 2];
        let mut p = [0.0; 2];
        for x in &pts {
            for i in 0..dim {
                q[i] += base.q[i] + circle_delta(base.q[i], x.q[i]);
                p[i] += x.p[i];
            }
        }
        let k = pts.len() as f64;
        means[b] = Some(CotangentPoint::new(dim, [q[0] / k, q[1] / k], [p[0] / k, p[1] / k]));
    }
    let mut lip = 0.0f64;
    for b in 0..len {
        let Some(x) = means[b] else { continue };
        for j in selector::neighbors(dim, n, b) {
            let Some(y) = means[j] else { continue };
            let dq = crate::linalg::torus_dist(&x.q[..dim], &y.q[..dim]);
            if dq > 0.0 {
                lip = lip.max(pd(&x, &y) / dq);
            }
        }
    }
    let coverage = occupied as f64 / len as f64;
    GraphTest { is_graph: occupied == len && max_mult == 1 && lip.is_finite(), lipschitz: lip, max_multiplicity: max_mult, coverage }
}

#[derive(Clone, Debug, Serialize)]
pub struct Theorem15Report {
    pub horizon: f64,
    /// Largest distance from a transported sample to the set.
    pub defect: f64,
    /// The defect exceeded the search radius and is only a lower bound.
    pub defect_is_lower_bound: bool,
    pub inv_tol: f64,
    pub invariant: bool,
    pub energy: EnergyLevel,
    pub graph: GraphTest,
    /// Vacuous when the set is not invariant.
    pub pass: bool,
}

/// Distance from `x` to the sampled set: to the polyline through the
/// samples for curves, to the nearest sample otherwise. `None` when
/// nothing lies within `r`.
fn distance_to_set(x: &CotangentPoint, set: &SampleSet, grid: &SpatialHash, curve: bool, r: f64) -> Option<f64> {
    let mut best = f64::INFINITY;
    let m = set.len();
    grid.visit(x, r, |j| {
        let a = set.points[j];
        best = best.min(x.distance(&a));
        if curve {
            for k in [(j + m - 1) % m, (j + 1) % m] {
                let b = set.points[k];
                // segment in coordinates unwrapped around `a`
                let bq = circle_delta(a.q[0], b.q[0]);
                let bp = b.p[0] - a.p[0];
                let xq = circle_delta(a.q[0], x.q[0]);
                let xp = x.p[0] - a.p[0];
                let len2 = bq * bq + bp * bp;
                if len2 > 0.0 {
                    let s = ((xq * bq + xp * bp) / len2).clamp(0.0, 1.0);
                    best = best.min((xq - s * bq).hypot(xp - s * bp));
                }
            }
        }
    });
    (best <= r).then_some(best)
}

/// Flow-invariance defect of a Lagrangian over `[0, horizon]`; when it is
/// within `inv_tol`, the set must lie on one energy level and be a graph.
pub fn verify_theorem_1_5(l: &ExactLagrangian, h: &HamiltonianSpec, horizon: f64, bins: usize) -> Result<Theorem15Report> {
    if l.dim() != h.dim() {
        return Err(Error::Dimension("Lagrangian and Hamiltonian dimensions differ".into()));
    }
    let set = SampleSet::from_lagrangian(l);
    let inv_tol = INV_TOL_REL * l.diameter();
    let curve = matches!(l.geometry(), Geometry::Curve(_));
    let max_spacing = set.spacing.iter().cloned().fold(0.0, f64::max);
    let r = (10.0 * inv_tol).max(2.0 * max_spacing);
    let grid = SpatialHash::new(set.dim, &set.points, r);
    let probes = 256.min(set.len());
    let dt = 0.01;
    let steps = (horizon / dt).ceil().max(1.0) as usize;
    let check_every = 10;
    let worst: Vec<(f64, bool)> = (0..probes)
        .into_par_iter()
        .map(|k| {
            let x = set.points[k * set.len() / probes];
            let mut q = x.q;
            let mut p = x.p;
            let mut worst = 0.0f64;
            for s in 1..=steps {
                if h.step_lifted(&mut q, &mut p, horizon / steps as f64).is_err() {
                    return (r, true);
                }
                if s % check_every == 0 || s == steps {
                    let y = CotangentPoint::new(x.dim, q, p);
                    match distance_to_set(&y, &set, &grid, curve, r) {
                        Some(d) => worst = worst.max(d),
                        None => return (r, true),
                    }
                }
            }
            (worst, false)
        })
        .collect();
    let defect = worst.iter().map(|w| w.0).fold(0.0, f64::max);
    let lower = worst.iter().any(|w| w.1);
    let invariant = !lower && defect <= inv_tol;
    let energy = energy_level_check(&set, h, 10.0 * inv_tol);
    let graph = graph_test(&set, bins);
    let pass = !invariant || (energy.e.is_some() && graph.is_graph);
    Ok(Theorem15Report { horizon, defect, defect_is_lower_bound: lower, inv_tol, invariant, energy, graph, pass })
}

#[derive(Clone, Debug)]
pub struct Theorem63Options {
    pub n: usize,
    pub trim: TrimOptions,
    /// Time of each of the two smoothing Lax–Oleinik steps.
    pub smooth_time: f64,
    pub sub_tol: f64,
}

impl Default for Theorem63Options {
    fn default() -> Self {
        Theorem63Options { n: 512, trim: TrimOptions::default(), smooth_time: 0.05, sub_tol: 1e-2 }
    }
}

#[derive(Clone, Debug)]
pub struct Theorem63Report {
    pub a: f64,
    pub grid_step: f64,
    pub selector: SelectorFunction,
    pub subsolution: SubsolutionReport,
    /// Differential of the smoothed selector at the grid points.
    pub gamma: Vec<[f64; 2]>,
    pub gamma_set: InvariantSetEstimate,
    pub l_set: InvariantSetEstimate,
    /// Hausdorff distance between the base projections of the two sets.
    pub hausdorff: f64,
    pub pass: bool,
}

fn check_level_bound(set: &SampleSet, h: &HamiltonianSpec, a: f64) -> Result<()> {
    let energy = set.energies(h);
    let (lo, hi) = energy.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(x, y), &e| (x.min(e), y.max(e)));
    let e_tol = E_TOL_REL * (hi - lo);
    if hi > a + e_tol {
        return Err(Error::Precondition(format!("set reaches H = {hi} above the level {a}")));
    }
    Ok(())
}

fn pipeline(
    f: SelectorFunction,
    excluded: &[bool],
    lset: &SampleSet,
    h: &HamiltonianSpec,
    a: f64,
    opts: &Theorem63Options,
) -> Result<Theorem63Report> {
    let dim = f.dim;
    let n = f.n;
    let subsolution = subsolution_check(dim, n, &f.values, h, a, opts.sub_tol, Some(excluded));
    let op = LaxOleinik::new(h, n, opts.smooth_time)?;
    let g = op.backward(&op.forward(&f.values));
    let gamma = crate::weakkam::grid_gradient(dim, n, &g);
    let gset = SampleSet::from_graph(dim, n, &gamma, None);
    let gamma_set = maximal_invariant_set(&gset, h, a, &opts.trim)?;
    let l_set = maximal_invariant_set(lset, h, a, &opts.trim)?;
    let d = base_hausdorff(&gamma_set.samples, &l_set.samples);
    let grid_step = 1.0 / n as f64;
    let pass = subsolution.pass && gamma_set.converged && l_set.converged && d <= 2.0 * grid_step;
    Ok(Theorem63Report {
        a,
        grid_step,
        selector: f,
        subsolution,
        gamma,
        gamma_set,
        l_set,
        hausdorff: d,
        pass,
    })
}

/// Selector, subsolution check, double Lax–Oleinik smoothing and comparison
/// of `I*_a` for a smooth exact Lagrangian.
pub fn verify_theorem_6_3(
    l: &ExactLagrangian,
    h: &HamiltonianSpec,
    a: f64,
    opts: &Theorem63Options,
) -> Result<Theorem63Report> {
    let lset = match l.curve() {
        Some(c) => {
            // whole multiples of 2n keep graph samples on the base grid
            let m = 2 * opts.n * (c.arc_length() - 1e-9).ceil().max(1.0) as usize;
            SampleSet::from_lagrangian(&l.resampled_uniform_speed(m.max(c.len()))?)
        }
        None => SampleSet::from_lagrangian(l),
    };
    check_level_bound(&lset, h, a)?;
    let f = selector::level_selector(l, opts.n)?;
    let front = Front::new(l)?;
    let excluded = selector::collar_mask(&f, &front);
    pipeline(f, &excluded, &lset, h, a, opts)
}

/// As [`verify_theorem_6_3`] for a Lipschitz-exact curve given by a
/// mollified sequence; the selector is the generalized selector.
pub fn verify_theorem_6_3_generalized(
    seq: &ApproxSequence,
    h: &HamiltonianSpec,
    a: f64,
    opts: &Theorem63Options,
) -> Result<Theorem63Report> {
    let lset = SampleSet::from_polygon(&seq.target, 0.25 / opts.n as f64);
    check_level_bound(&lset, h, a)?;
    let g = selector::generalized_selector(seq, opts.n)?;
    let last = seq.entries.last().expect("nonempty sequence");
    let front = Front::new(last)?;
    let mut excluded = selector::collar_mask(&g.selector, &front);
    // kinks of the limit are excluded like caustics
    let n = opts.n;
    let hstep = 1.0 / n as f64;
    let slope = |k: usize| (g.selector.values[(k + 1) % n] - g.selector.values[k]) / hstep;
    for k in 0..n {
        if (slope(k) - slope((k + n - 1) % n)).abs() > selector::DIFF_TOL {
            for d in 0..=2 * selector::COLLAR_STEPS {
                excluded[(k + n + d - selector::COLLAR_STEPS) % n] = true;
            }
        }
    }
    pipeline(g.selector, &excluded, &lset, h, a, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::PeriodicFunction;
    use crate::lagrangian::FlowOptions;

    fn pendulum() -> HamiltonianSpec {
        HamiltonianSpec::parse("p^2/2 + cos(2*pi*q)", 1).unwrap()
    }

    fn zero_section(n: usize) -> ExactLagrangian {
        ExactLagrangian::from_function(PeriodicFunction::zero(1), n).unwrap()
    }

    #[test]
    fn zero_section_free_particle_all_survive() {
        let h = HamiltonianSpec::parse("p^2/2", 1).unwrap();
        let set = SampleSet::from_lagrangian(&zero_section(128));
        let est = maximal_invariant_set(&set, &h, 0.0, &TrimOptions::default()).unwrap();
        assert_eq!(est.samples.len(), 128);
        assert!(est.converged);
    }

    #[test]
    fn zero_section_pendulum_keeps_equilibrium() {
        let set = SampleSet::from_lagrangian(&zero_section(128));
        let est = maximal_invariant_set(&set, &pendulum(), 1.0, &TrimOptions::default()).unwrap();
        assert_eq!(est.samples.len(), 1);
        assert!(est.samples[0].q[0].abs() < 1e-12 && est.samples[0].p[0].abs() < 1e-12);
        assert!(maximal_invariant_set(&set, &pendulum(), 3.0, &TrimOptions::default()).is_err());
    }

    #[test]
    fn survivors_shrink_with_horizon() {
        let l = ExactLagrangian::from_flow(PeriodicFunction::zero(1), &pendulum(), 1.0, 1000, &FlowOptions::default())
            .unwrap();
        let set = SampleSet::from_lagrangian(&l);
        let opts = TrimOptions { e_tol: Some(0.05), ..Default::default() };
        let est = maximal_invariant_set(&set, &pendulum(), 1.0, &opts).unwrap();
        let mut last = usize::MAX;
        for t in [0.5, 1.0, 5.0, 20.0, 100.0, 200.0] {
            let k = est.survivors_at(t).len();
            assert!(k <= last);
            last = k;
        }
    }

    #[test]
    fn energy_and_graph_checks() {
        let zs = SampleSet::from_lagrangian(&zero_section(256));
        let free = HamiltonianSpec::parse("p^2/2", 1).unwrap();
        assert_eq!(energy_level_check(&zs, &free, 1e-9).e, Some(0.0));
        let e = energy_level_check(&zs, &pendulum(), 1e-3);
        assert!(e.e.is_none() && (e.max_deviation - 1.0).abs() < 1e-9);
        let g = graph_test(&zs, 128);
        assert!(g.is_graph && g.lipschitz == 0.0);

        let v = PeriodicFunction::Trig(crate::fourier::TrigSeries::from_modes_1d(0.0, &[(1, 0.05, 0.0)]));
        let gv = graph_test(&SampleSet::from_lagrangian(&ExactLagrangian::from_function(v, 1024).unwrap()), 256);
        let bound = 0.05 * (std::f64::consts::TAU).powi(2);
        assert!(gv.is_graph && (gv.lipschitz - bound).abs() < 0.02 * bound, "{gv:?}");

        let l = ExactLagrangian::from_flow(PeriodicFunction::zero(1), &pendulum(), 3.0, 3000, &FlowOptions::default())
            .unwrap();
        let gw = graph_test(&SampleSet::from_lagrangian(&l), 256);
        assert!(!gw.is_graph && gw.max_multiplicity >= 3, "{gw:?}");
    }

    #[test]
    fn theorem_1_5_cases() {
        let free = HamiltonianSpec::parse("p^2/2", 1).unwrap();
        let r = verify_theorem_1_5(&zero_section(256), &free, 5.0, 128).unwrap();
        assert!(r.invariant && r.pass && r.energy.e == Some(0.0) && r.graph.is_graph);

        let l = ExactLagrangian::from_flow(PeriodicFunction::zero(1), &pendulum(), 3.0, 3000, &FlowOptions::default())
            .unwrap();
        let r = verify_theorem_1_5(&l, &pendulum(), 2.0, 128).unwrap();
        assert!(!r.invariant && r.pass);

        let v = PeriodicFunction::Trig(crate::fourier::TrigSeries::from_modes_1d(0.0, &[(1, 0.1, 0.0)]));
        let gv = ExactLagrangian::from_function(v, 512).unwrap();
        let r = verify_theorem_1_5(&gv, &free, 2.0, 128).unwrap();
        assert!(!r.invariant && r.defect > 0.0);
    }

    #[test]
    fn theorem_6_3_whorled_pendulum() {
        let l = ExactLagrangian::from_flow(PeriodicFunction::zero(1), &pendulum(), 3.0, 3000, &FlowOptions::default())
            .unwrap();
        let r = verify_theorem_6_3(&l, &pendulum(), 1.0, &Theorem63Options::default()).unwrap();
        assert!(r.pass);
        assert!(verify_theorem_6_3(&l, &pendulum(), 0.5, &Theorem63Options::default()).is_err());
    }

    #[test]
    fn theorem_6_3_graph_input() {
        let v = PeriodicFunction::Trig(crate::fourier::TrigSeries::from_modes_1d(0.0, &[(1, 0.05, 0.0)]));
        let l = ExactLagrangian::from_function(v, 512).unwrap();
        let r = verify_theorem_6_3(&l, &pendulum(), 1.0, &Theorem63Options::default()).unwrap();
        assert!(r.pass, "{}", r.hausdorff);
        assert!(!r.gamma_set.samples.is_empty() && !r.l_set.samples.is_empty());
        let eq = [CotangentPoint::new_1d(0.0, 0.0)];
        assert!(base_hausdorff(&r.l_set.samples, &eq) <= 2.0 / 512.0);
    }

    #[test]
    fn hausdorff_and_clusters() {
        let a = [CotangentPoint::new_1d(0.0, 0.0), CotangentPoint::new_1d(0.999, 0.0)];
        let b = [CotangentPoint::new_1d(0.001, 0.0)];
        assert!((hausdorff(&a, &b) - 0.002).abs() < 1e-12);
        assert_eq!(clusters(&a, 0.0015).len(), 1);
        assert_eq!(hausdorff(&[], &[]), 0.0);
        assert!(hausdorff(&a, &[]).is_infinite());
    }
}

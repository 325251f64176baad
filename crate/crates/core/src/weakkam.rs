//! Weak-KAM solver: Lax–Oleinik iteration on a uniform grid of `T^n`, the
//! critical value, subsolution checks, Aubry and Mañé sets, and the inf-max
//! critical value over a family of exact graphs.

use std::f64::consts::TAU;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{self, maximal_invariant_set, SampleSet, TrimOptions};
use crate::error::{Error, Result};
use crate::hamiltonian::{CotangentPoint, HamiltonianSpec};
use crate::linalg;
use crate::numeric::golden_min;
use crate::selector::{grid_len, grid_point, neighbors};

/// Energy tolerance of the Aubry and Mañé sets.
pub const NUM_TOL: f64 = 1e-3;
/// Probe grid (per axis) for velocity bounds.
const PROBE: usize = 64;

/// Lax–Oleinik operators of time `dt` on the grid with `n` points per axis.
/// The one-step action from `q′` to `q` is tabulated once per midpoint on
/// the half grid and offset `o` of the velocity window.
#[derive(Clone, Debug)]
pub struct LaxOleinik {
    pub dim: usize,
    pub n: usize,
    pub dt: f64,
    /// Window radius in grid steps.
    pub radius: usize,
    /// Bound on `|p|` over `{H ≤ max_q H(q,0) + 1}`.
    pub p_bound: f64,
    pub v_max: f64,
    offsets: Vec<[i64; 2]>,
    cost: Vec<f64>,
}

fn probe_points(dim: usize) -> Vec<[f64; 2]> {
    (0..grid_len(dim, PROBE)).map(|k| grid_point(dim, PROBE, k)).collect()
}

fn directions(dim: usize) -> Vec<[f64; 2]> {
    if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..16).map(|k| [(TAU * k as f64 / 16.0).cos(), (TAU * k as f64 / 16.0).sin()]).collect()
    }
}

/// `ℓ(q, v) = sup_p (p·v − H(q, p))`.
pub fn legendre(h: &HamiltonianSpec, q: &[f64; 2], v: &[f64; 2]) -> Result<f64> {
    legendre_with_momentum(h, q, v).map(|x| x.0)
}

/// `ℓ(q, v)` together with the maximizing momentum.
pub fn legendre_with_momentum(h: &HamiltonianSpec, q: &[f64; 2], v: &[f64; 2]) -> Result<(f64, [f64; 2])> {
    let fail = || Error::Legendre { q: q[..h.dim()].to_vec(), v: v[..h.dim()].to_vec() };
    if h.is_mechanical() {
        let kin: f64 = v[..h.dim()].iter().map(|x| 0.5 * x * x).sum();
        return Ok((kin - h.potential(q), *v));
    }
    if h.dim() == 1 {
        let slope = |p: f64| h.gradient(q, &[p, 0.0]).1[0] - v[0];
        let (mut a, mut b) = (-1.0, 1.0);
        while slope(a) > 0.0 {
            a *= 2.0;
            if a < -1e8 {
                return Err(fail());
            }
        }
        while slope(b) < 0.0 {
            b *= 2.0;
            if b > 1e8 {
                return Err(fail());
            }
        }
        let g = |p: f64| h.value(q, &[p, 0.0]) - p * v[0];
        let (p, m) = golden_min(g, a, b, 1e-12 * (1.0 + b - a), 200);
        if !m.is_finite() || slope(p).abs() > 1e-6 * (1.0 + v[0].abs()) {
            return Err(fail());
        }
        return Ok((-m, [p, 0.0]));
    }
    // damped Newton on ∂_p H = v
    let phi = |p: &[f64; 2]| h.value(q, p) - p[0] * v[0] - p[1] * v[1];
    let mut p = [0.0; 2];
    let mut f = phi(&p);
    for _ in 0..100 {
        let gp = h.gradient(q, &p).1;
        let g = [gp[0] - v[0], gp[1] - v[1]];
        if g[0].hypot(g[1]) <= 1e-11 * (1.0 + v[0].hypot(v[1])) {
            return Ok((-f, p));
        }
        let step = linalg::solve(h.fiber_hessian(q, &p), g, 2).ok_or_else(fail)?;
        let mut t = 1.0;
        loop {
            let cand = [p[0] - t * step[0], p[1] - t * step[1]];
            let fc = phi(&cand);
            if fc <= f || t < 1e-12 {
                p = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    Err(fail())
}

/// Action over time `dt` from `mid − v·dt/2` to `mid + v·dt/2`: three-point
/// Gauss quadrature of `ℓ` along the segment, corrected by the leading-order
/// gain `dt³/24 · ∇_qH·H_pp·∇_qH` of the true minimizer over the segment.
fn path_action(h: &HamiltonianSpec, mid: &[f64; 2], v: &[f64; 2], dt: f64) -> Result<f64> {
    let r = (0.6f64).sqrt();
    let mut s = 0.0;
    let mut p_mid = [0.0; 2];
    for (x, w) in [(-r, 5.0 / 18.0), (0.0, 8.0 / 18.0), (r, 5.0 / 18.0)] {
        let q = [mid[0] + 0.5 * x * v[0] * dt, mid[1] + 0.5 * x * v[1] * dt];
        let (l, p) = legendre_with_momentum(h, &q, v)?;
        s += w * l;
        if x == 0.0 {
            p_mid = p;
        }
    }
    let g = h.gradient(mid, &p_mid).0;
    let c = h.fiber_hessian(mid, &p_mid);
    let quad: f64 = (0..h.dim()).flat_map(|i| (0..h.dim()).map(move |j| (i, j))).map(|(i, j)| g[i] * c[i][j] * g[j]).sum();
    Ok(dt * s - dt * dt * dt * quad / 24.0)
}

impl LaxOleinik {
    pub fn new(h: &HamiltonianSpec, n: usize, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt <= 0.5) {
            return Err(Error::Precondition(format!("time step {dt} outside (0, 0.5]")));
        }
        if n < 4 {
            return Err(Error::GridTooCoarse { got: n, need: 4 });
        }
        let dim = h.dim();
        let probes = probe_points(dim);
        let dirs = directions(dim);
        let top = probes.iter().map(|q| h.value(q, &[0.0; 2])).fold(f64::NEG_INFINITY, f64::max);
        let mut p_bound = 0.5;
        loop {
            let low = probes
                .iter()
                .flat_map(|q| dirs.iter().map(move |d| (q, d)))
                .map(|(q, d)| h.value(q, &[p_bound * d[0], p_bound * d[1]]))
                .fold(f64::INFINITY, f64::min);
            if low > top + 1.0 {
                break;
            }
            p_bound *= 2.0;
            if p_bound > 1e6 {
                return Err(Error::NotTonelli("H does not grow along some fiber".into()));
            }
        }
        let tonelli = h.tonelli_check(32, p_bound);
        if !tonelli.pass {
            return Err(Error::NotTonelli(format!(
                "fiber Hessian eigenvalue {:.3e}, growth ratios {:.3e} / {:.3e}",
                tonelli.min_hessian_eigenvalue, tonelli.superlinearity_ratio_half, tonelli.superlinearity_ratio
            )));
        }
        let mut v_max = 0.0f64;
        for q in &probes {
            for d in &dirs {
                for k in 0..=32 {
                    let r = p_bound * k as f64 / 32.0;
                    let gp = h.gradient(q, &[r * d[0], r * d[1]]).1;
                    v_max = v_max.max(gp[0].hypot(gp[1]));
                }
            }
        }
        let radius = ((v_max * dt * n as f64).ceil() as usize + 1).min((n - 1) / 2);
        let r = radius as i64;
        let offsets: Vec<[i64; 2]> = if dim == 1 {
            (-r..=r).map(|i| [i, 0]).collect()
        } else {
            (-r..=r)
                .flat_map(|j| (-r..=r).map(move |i| [i, j]))
                .filter(|o| o[0] * o[0] + o[1] * o[1] <= r * r)
                .collect()
        };
        let len = grid_len(dim, n);
        let scale = 1.0 / (n as f64 * dt);
        let hstep = 1.0 / n as f64;
        let cost = (0..len)
            .into_par_iter()
            .flat_map_iter(|j| {
                let base = grid_point(dim, n, j);
                offsets
                    .iter()
                    .map(move |o| {
                        // midpoints with the parity of `o` sit half a step off the grid
                        let mut mid = base;
                        for c in 0..dim {
                            mid[c] += 0.5 * hstep * o[c].rem_euclid(2) as f64;
                        }
                        let v = [o[0] as f64 * scale, o[1] as f64 * scale];
                        path_action(h, &mid, &v, dt)
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(LaxOleinik { dim, n, dt, radius, p_bound, v_max, offsets, cost })
    }

    pub fn len(&self) -> usize {
        grid_len(self.dim, self.n)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn shifted(&self, i: usize, o: &[i64; 2], sign: i64) -> usize {
        let n = self.n as i64;
        if self.dim == 1 {
            (i as i64 + sign * o[0]).rem_euclid(n) as usize
        } else {
            let x = (i as i64 % n + sign * o[0]).rem_euclid(n);
            let y = (i as i64 / n + sign * o[1]).rem_euclid(n);
            (x + n * y) as usize
        }
    }

    /// Table row of the midpoint between grid point `i` and its shift by
    /// `sign·o`.
    fn midpoint_row(&self, i: usize, o: &[i64; 2], sign: i64) -> usize {
        let n = self.n as i64;
        let half = |x: i64, oc: i64| ((2 * x + sign * oc).rem_euclid(2 * n) - oc.rem_euclid(2)) / 2;
        if self.dim == 1 {
            half(i as i64, o[0]) as usize
        } else {
            (half(i as i64 % n, o[0]) + n * half(i as i64 / n, o[1])) as usize
        }
    }

    /// `u′(q) = min_{q′} u(q′) + A_dt(q′, q)`.
    pub fn forward(&self, u: &[f64]) -> Vec<f64> {
        let m = self.offsets.len();
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                self.offsets
                    .iter()
                    .enumerate()
                    .map(|(k, o)| u[self.shifted(i, o, -1)] + self.cost[self.midpoint_row(i, o, -1) * m + k])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// `u′(q) = max_{q′} u(q′) − A_dt(q, q′)`.
    pub fn backward(&self, u: &[f64]) -> Vec<f64> {
        let m = self.offsets.len();
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                self.offsets
                    .iter()
                    .enumerate()
                    .map(|(k, o)| u[self.shifted(i, o, 1)] - self.cost[self.midpoint_row(i, o, 1) * m + k])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

/// One forward Lax–Oleinik step of time `dt`.
pub fn lax_oleinik_step(u: &[f64], h: &HamiltonianSpec, n: usize, dt: f64) -> Result<Vec<f64>> {
    let op = LaxOleinik::new(h, n, dt)?;
    if u.len() != op.len() {
        return Err(Error::Dimension(format!("grid function has {} values, grid has {}", u.len(), op.len())));
    }
    Ok(op.forward(u))
}

/// Periodic centered differences.
pub fn grid_gradient(dim: usize, n: usize, u: &[f64]) -> Vec<[f64; 2]> {
    let h = 1.0 / n as f64;
    (0..grid_len(dim, n))
        .map(|k| {
            let nb = neighbors(dim, n, k);
            let mut g = [0.0; 2];
            for c in 0..dim {
                g[c] = (u[nb[2 * c + 1]] - u[nb[2 * c]]) / (2.0 * h);
            }
            g
        })
        .collect()
}

/// Grid points where both one-sided slopes agree within `tol` on every
/// axis, at the point and at its axis neighbours.
pub fn smooth_mask(dim: usize, n: usize, u: &[f64], tol: f64) -> Vec<bool> {
    let h = 1.0 / n as f64;
    let len = grid_len(dim, n);
    let kink: Vec<bool> = (0..len)
        .map(|k| {
            let nb = neighbors(dim, n, k);
            (0..dim).any(|c| {
                let fwd = (u[nb[2 * c + 1]] - u[k]) / h;
                let bwd = (u[k] - u[nb[2 * c]]) / h;
                (fwd - bwd).abs() > tol
            })
        })
        .collect();
    (0..len).map(|k| !kink[k] && neighbors(dim, n, k).iter().all(|&j| !kink[j])).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SubsolutionReport {
    pub pass: bool,
    pub checked: usize,
    pub max_excess: f64,
    pub tol: f64,
    /// Grid indices with `H(q, dv(q)) > a + tol`.
    pub violations: Vec<usize>,
}

/// `H(q, dv(q)) ≤ a + tol` at the grid points not excluded, with `dv` by
/// centered differences.
pub fn subsolution_check(
    dim: usize,
    n: usize,
    v: &[f64],
    h: &HamiltonianSpec,
    a: f64,
    tol: f64,
    exclude: Option<&[bool]>,
) -> SubsolutionReport {
    let grad = grid_gradient(dim, n, v);
    let mut rep = SubsolutionReport { pass: true, checked: 0, max_excess: f64::NEG_INFINITY, tol, violations: Vec::new() };
    for (k, g) in grad.iter().enumerate() {
        if exclude.is_some_and(|m| m[k]) {
            continue;
        }
        rep.checked += 1;
        let excess = h.value(&grid_point(dim, n, k), g) - a;
        rep.max_excess = rep.max_excess.max(excess);
        if excess > tol {
            rep.violations.push(k);
        }
    }
    rep.pass = rep.violations.is_empty();
    rep
}

#[derive(Clone, Debug)]
pub struct CriticalOptions {
    pub n: usize,
    pub dt: f64,
    pub max_iters: usize,
    /// Bound on the per-unit-time oscillation of the step decrement.
    pub fp_tol: f64,
}

impl Default for CriticalOptions {
    fn default() -> Self {
        CriticalOptions { n: 1024, dt: 0.1, max_iters: 20000, fp_tol: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct CriticalValue {
    pub alpha: f64,
    /// Critical solution, normalized to minimum zero.
    pub u: Vec<f64>,
    /// Fixed-point defect `‖T u − u + α·dt‖∞ / dt` over the averaging window.
    pub residual: f64,
    pub iterations: usize,
}

/// Iterates the forward (or backward) operator from `u0` until the step
/// decrement is uniform, then averages it over a further third of the run
/// (the last quarter of all steps).
pub fn iterate_to_fixed_point(
    op: &LaxOleinik,
    u0: &[f64],
    backward: bool,
    max_iters: usize,
    fp_tol: f64,
) -> Result<CriticalValue> {
    let mut u = u0.to_vec();
    let mut decrements = Vec::new();
    let mut converged_at: Option<usize> = None;
    let mut tail_residual = 0.0f64;
    let mut residual = f64::INFINITY;
    for k in 0..max_iters {
        let next = if backward { op.backward(&u) } else { op.forward(&u) };
        let sign = if backward { -1.0 } else { 1.0 };
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for (a, b) in u.iter().zip(&next) {
            let d = sign * (a - b);
            lo = lo.min(d);
            hi = hi.max(d);
            sum += d;
        }
        decrements.push(sum / u.len() as f64);
        residual = 0.5 * (hi - lo) / op.dt;
        let floor = next.iter().cloned().fold(f64::INFINITY, f64::min);
        u = next.into_iter().map(|x| x - floor).collect();
        let steps = k + 1;
        match converged_at {
            None if steps >= 4 && residual <= fp_tol => converged_at = Some(steps),
            Some(c) => {
                tail_residual = tail_residual.max(residual);
                if steps >= c + c / 3 + 1 {
                    let tail = &decrements[c..];
                    let alpha = tail.iter().sum::<f64>() / tail.len() as f64 / op.dt;
                    return Ok(CriticalValue { alpha, u, residual: tail_residual, iterations: steps });
                }
            }
            None => {}
        }
    }
    Err(Error::NoConvergence { iters: max_iters, residual })
}

/// Critical value from the forward Lax–Oleinik iteration started at zero.
pub fn critical_value(h: &HamiltonianSpec, opts: &CriticalOptions) -> Result<CriticalValue> {
    let op = LaxOleinik::new(h, opts.n, opts.dt)?;
    iterate_to_fixed_point(&op, &vec![0.0; op.len()], false, opts.max_iters, opts.fp_tol)
}

/// `max{|p| : H(q, p) ≤ level}` over a base grid, scanning rays from
/// `p = 0` (16 directions in 2-d).
pub fn sublevel_momentum_bound(h: &HamiltonianSpec, level: f64) -> f64 {
    let dim = h.dim();
    let n = 64;
    let dirs: Vec<[f64; 2]> = if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..16).map(|k| (TAU * k as f64 / 16.0).sin_cos()).map(|(s, c)| [c, s]).collect()
    };
    let along = |q: &[f64; 2], d: &[f64; 2], r: f64| h.value(q, &[r * d[0], r * d[1]]);
    (0..grid_len(dim, n))
        .map(|k| {
            let q = grid_point(dim, n, k);
            dirs.iter()
                .map(|d| {
                    let mut hi = 1.0;
                    while along(&q, d, hi) <= level && hi < 1e6 {
                        hi *= 2.0;
                    }
                    // last sublevel crossing on a fine scan, refined by bisection
                    let m = 256;
                    let last = (0..=m).rev().find(|&i| along(&q, d, hi * i as f64 / m as f64) <= level);
                    match last {
                        None => 0.0,
                        Some(i) if i == m => hi,
                        Some(i) => {
                            let (mut a, mut b) = (hi * i as f64 / m as f64, hi * (i + 1) as f64 / m as f64);
                            for _ in 0..60 {
                                let c = 0.5 * (a + b);
                                if along(&q, d, c) <= level {
                                    a = c;
                                } else {
                                    b = c;
                                }
                            }
                            a
                        }
                    }
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Random low-mode trigonometric grid function.
pub fn random_initial(dim: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<([f64; 2], f64, f64)> = (0..6)
        .map(|_| {
            let k = [rng.gen_range(-3i32..=3) as f64, if dim == 2 { rng.gen_range(-3i32..=3) as f64 } else { 0.0 }];
            (k, rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2))
        })
        .collect();
    (0..grid_len(dim, n))
        .map(|i| {
            let q = grid_point(dim, n, i);
            modes
                .iter()
                .map(|(k, c, s)| {
                    let t = TAU * (k[0] * q[0] + k[1] * q[1]);
                    c * t.cos() + s * t.sin()
                })
                .sum()
        })
        .collect()
}

/// Graphs `Γ_dv` of `v = Σ c_j b_j` for a fixed list of trigonometric basis
/// functions `b_j`.
#[derive(Clone, Debug)]
pub struct GraphFamily {
    pub dim: usize,
    /// `(k, is_sine)` per parameter.
    pub basis: Vec<([i32; 2], bool)>,
}

impl GraphFamily {
    /// Seven parameters: cos/sin of modes 1..3 and cos of mode 4 in 1-d;
    /// the lowest seven terms in 2-d.
    pub fn standard(dim: usize) -> Self {
        let basis = if dim == 1 {
            vec![
                ([1, 0], false),
                ([1, 0], true),
                ([2, 0], false),
                ([2, 0], true),
                ([3, 0], false),
                ([3, 0], true),
                ([4, 0], false),
            ]
        } else {
            vec![
                ([1, 0], false),
                ([1, 0], true),
                ([0, 1], false),
                ([0, 1], true),
                ([1, 1], false),
                ([1, 1], true),
                ([1, -1], false),
            ]
        };
        GraphFamily { dim, basis }
    }

    /// The single graph `v ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        GraphFamily { dim, basis: Vec::new() }
    }

    fn gradient_table(&self, n: usize) -> Vec<Vec<[f64; 2]>> {
        (0..grid_len(self.dim, n))
            .map(|i| {
                let q = grid_point(self.dim, n, i);
                self.basis
                    .iter()
                    .map(|(k, sine)| {
                        let t = TAU * (k[0] as f64 * q[0] + k[1] as f64 * q[1]);
                        let d = if *sine { TAU * t.cos() } else { -TAU * t.sin() };
                        [d * k[0] as f64, d * k[1] as f64]
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InfMax {
    pub alpha_hat: f64,
    pub coefficients: Vec<f64>,
    pub evaluations: usize,
}

/// `min` over the family of `max_q H(q, dv(q))` on the grid, by coordinate
/// descent from zero and from `restarts` random starting points.
pub fn critical_value_infmax(h: &HamiltonianSpec, family: &GraphFamily, n: usize, restarts: usize, seed: u64) -> InfMax {
    let table = family.gradient_table(n);
    let dim = family.dim;
    let m = family.basis.len();
    let points: Vec<[f64; 2]> = (0..grid_len(dim, n)).map(|i| grid_point(dim, n, i)).collect();
    let objective = |c: &[f64]| -> f64 {
        points
            .par_iter()
            .zip(&table)
            .map(|(q, row)| {
                let mut p = [0.0; 2];
                for (cj, g) in c.iter().zip(row) {
                    p[0] += cj * g[0];
                    p[1] += cj * g[1];
                }
                h.value(q, &p)
            })
            .reduce(|| f64::NEG_INFINITY, f64::max)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evaluations = 0;
    let mut best = (f64::INFINITY, vec![0.0; m]);
    for r in 0..=restarts {
        let mut c: Vec<f64> = if r == 0 { vec![0.0; m] } else { (0..m).map(|_| rng.gen_range(-0.3..0.3)).collect() };
        let mut f = objective(&c);
        evaluations += 1;
        let mut step = 0.25;
        let mut sweeps = 0;
        while m > 0 && step > 1e-7 && sweeps < 4000 {
            sweeps += 1;
            let mut improved = false;
            for j in 0..m {
                for s in [1.0, -1.0] {
                    c[j] += s * step;
                    let g = objective(&c);
                    evaluations += 1;
                    if g < f {
                        f = g;
                        improved = true;
                        break;
                    }
                    c[j] -= s * step;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if f < best.0 {
            best = (f, c);
        }
    }
    InfMax { alpha_hat: best.0, coefficients: best.1, evaluations }
}

#[derive(Clone, Debug)]
pub struct WeakKamOptions {
    pub critical: CriticalOptions,
    /// Initializations per operator direction (the first is zero).
    pub inits: usize,
    pub seed: u64,
    pub num_tol: f64,
    pub trim: TrimOptions,
}

impl Default for WeakKamOptions {
    fn default() -> Self {
        WeakKamOptions {
            critical: CriticalOptions::default(),
            inits: 3,
            seed: 0,
            num_tol: NUM_TOL,
            trim: TrimOptions { horizon: 50.0, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug)]
pub struct WeakKamSolution {
    pub dim: usize,
    pub n: usize,
    pub u: Vec<f64>,
    pub alpha: f64,
    pub residual: f64,
    pub iterations: usize,
    /// Spread of the critical value over all initializations.
    pub alpha_spread: f64,
    /// Number of distinct critical subsolutions whose invariant sets were intersected.
    pub subsolutions: usize,
    /// Only one distinct subsolution was found, so Aubry and Mañé coincide.
    pub single_subsolution: bool,
    pub aubry_pts: Vec<CotangentPoint>,
    pub mane_pts: Vec<CotangentPoint>,
    /// Clusters of the Aubry set at two grid steps.
    pub aubry_components: usize,
    pub horizon: f64,
    /// Every trimming run stabilized under horizon doubling.
    pub converged: bool,
}

impl WeakKamSolution {
    /// Rows `q [q2] u du [du2] H(q,du)`.
    pub fn write_table<W: Write>(&self, h: &HamiltonianSpec, mut w: W) -> Result<()> {
        let grad = grid_gradient(self.dim, self.n, &self.u);
        if self.dim == 1 {
            writeln!(w, "# q u du H")?;
        } else {
            writeln!(w, "# q q2 u du du2 H")?;
        }
        for (k, g) in grad.iter().enumerate() {
            let q = grid_point(self.dim, self.n, k);
            let e = h.value(&q, g);
            if self.dim == 1 {
                writeln!(w, "{:.12e} {:.12e} {:.12e} {:.12e}", q[0], self.u[k], g[0], e)?;
            } else {
                writeln!(w, "{:.12e} {:.12e} {:.12e} {:.12e} {:.12e} {:.12e}", q[0], q[1], self.u[k], g[0], g[1], e)?;
            }
        }
        Ok(())
    }
}

fn base_distance(x: &CotangentPoint, y: &CotangentPoint) -> f64 {
    linalg::torus_dist(&x.q[..x.dim], &y.q[..y.dim])
}

/// Critical value and solution, then the Aubry set (intersection) and Mañé
/// set (union) of the maximal invariant sets of the graphs of the critical
/// subsolutions reached from several initializations of both operators.
pub fn weak_kam(h: &HamiltonianSpec, opts: &WeakKamOptions) -> Result<WeakKamSolution> {
    let c = &opts.critical;
    let op = LaxOleinik::new(h, c.n, c.dt)?;
    let dim = op.dim;
    let n = op.n;
    let len = op.len();
    let mut runs = Vec::new();
    for r in 0..opts.inits.max(1) {
        let u0 = if r == 0 { vec![0.0; len] } else { random_initial(dim, n, opts.seed.wrapping_add(r as u64)) };
        for backward in [false, true] {
            runs.push(iterate_to_fixed_point(&op, &u0, backward, c.max_iters, c.fp_tol)?);
        }
    }
    let main = runs[0].clone();
    let (lo, hi) = runs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.alpha), b.max(r.alpha)));
    let alpha = main.alpha;
    let kink_tol = 20.0 * (1.0 + op.p_bound) / n as f64;
    // distinct graphs, compared where both are smooth
    let mut graphs: Vec<(Vec<[f64; 2]>, Vec<bool>)> = Vec::new();
    for r in &runs {
        let g = grid_gradient(dim, n, &r.u);
        let mask = smooth_mask(dim, n, &r.u, kink_tol);
        let same = graphs.iter().any(|(g2, m2)| {
            (0..len).filter(|&k| mask[k] && m2[k]).all(|k| (0..dim).all(|i| (g[k][i] - g2[k][i]).abs() <= 1e-6))
        });
        if !same {
            graphs.push((g, mask));
        }
    }
    let trim = TrimOptions { e_tol: Some(opts.num_tol), ..opts.trim.clone() };
    let mut sets = Vec::new();
    for (g, mask) in &graphs {
        let s = SampleSet::from_graph(dim, n, g, Some(mask));
        sets.push(maximal_invariant_set(&s, h, alpha, &trim)?);
    }
    let link = 2.0 / n as f64 + 1e-12;
    // base points within two grid steps, momenta within one velocity step
    // of the kernel (below which fixed points of the discrete operator are
    // not resolved)
    let p_link = 1.0 / (n as f64 * c.dt) + 1e-12;
    let linked = |x: &CotangentPoint, y: &CotangentPoint| {
        base_distance(x, y) <= link && (0..dim).all(|i| (x.p[i] - y.p[i]).abs() <= p_link)
    };
    let aubry: Vec<CotangentPoint> = sets[0]
        .samples
        .iter()
        .filter(|x| sets[1..].iter().all(|s| s.samples.iter().any(|y| linked(x, y))))
        .copied()
        .collect();
    let mut mane: Vec<CotangentPoint> = Vec::new();
    for s in &sets {
        for x in &s.samples {
            if !mane.contains(x) {
                mane.push(*x);
            }
        }
    }
    let aubry_components = dynamics::clusters(&dynamics::base_projection(&aubry), link).len();
    Ok(WeakKamSolution {
        dim,
        n,
        u: main.u,
        alpha,
        residual: main.residual,
        iterations: main.iterations,
        alpha_spread: hi - lo,
        subsolutions: graphs.len(),
        single_subsolution: graphs.len() == 1,
        aubry_pts: aubry,
        mane_pts: mane,
        aubry_components,
        horizon: trim.horizon,
        converged: sets.iter().all(|s| s.converged),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pendulum() -> HamiltonianSpec {
        HamiltonianSpec::parse("p^2/2 + cos(2*pi*q)", 1).unwrap()
    }

    #[test]
    fn free_particle_zero_is_fixed() {
        let h = HamiltonianSpec::parse("p^2/2", 1).unwrap();
        let u = lax_oleinik_step(&vec![0.0; 128], &h, 128, 0.1).unwrap();
        assert!(u.iter().all(|x| x.abs() < 1e-15));
        let c = critical_value(&h, &CriticalOptions { n: 128, ..Default::default() }).unwrap();
        assert_eq!(c.alpha, 0.0);
    }

    #[test]
    fn legendre_of_nonmechanical_matches_closed_form() {
        // H = (p + c)²/2 gives ℓ(v) = v²/2 − c·v
        let h = HamiltonianSpec::parse("(p + 0.3)^2/2", 1).unwrap();
        for v in [-2.0, -0.1, 0.0, 0.7, 3.0] {
            let l = legendre(&h, &[0.2, 0.0], &[v, 0.0]).unwrap();
            assert!((l - (0.5 * v * v - 0.3 * v)).abs() < 1e-9, "{v}: {l}");
        }
        let h2 = HamiltonianSpec::parse("(p1 + 0.3)^2/2 + p2^2 + 0.1*p1*p2", 2).unwrap();
        let l = legendre(&h2, &[0.0, 0.0], &[0.5, -0.2]).unwrap();
        // sup_p p·v − H by brute force on a fine grid
        let mut best = f64::NEG_INFINITY;
        for i in -400..=400 {
            for j in -400..=400 {
                let p = [i as f64 * 0.005, j as f64 * 0.005];
                best = best.max(p[0] * 0.5 - p[1] * 0.2 - h2.value(&[0.0, 0.0], &p));
            }
        }
        assert!((l - best).abs() < 1e-4, "{l} vs {best}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let h = HamiltonianSpec::parse("-p^2", 1).unwrap();
        assert!(LaxOleinik::new(&h, 64, 0.1).is_err());
        assert!(LaxOleinik::new(&pendulum(), 64, 0.7).is_err());
    }

    #[test]
    fn momentum_bound_of_pendulum() {
        let b = sublevel_momentum_bound(&pendulum(), 2.0);
        assert!((b - 6f64.sqrt()).abs() < 1e-9, "{b}");
    }

    #[test]
    fn subsolution_examples() {
        let h = HamiltonianSpec::parse("p^2/2", 1).unwrap();
        assert!(subsolution_check(1, 256, &vec![0.0; 256], &h, 0.0, 1e-12, None).pass);
        let v: Vec<f64> = (0..256).map(|k| (TAU * k as f64 / 256.0).sin()).collect();
        let r = subsolution_check(1, 256, &v, &h, 0.0, 1e-3, None);
        assert!(!r.pass && !r.violations.is_empty());
    }

    #[test]
    fn infmax_examples() {
        let free = HamiltonianSpec::parse("p^2/2", 1).unwrap();
        let r = critical_value_infmax(&free, &GraphFamily::standard(1), 128, 2, 1);
        assert!(r.alpha_hat.abs() < 1e-12);
        let h = HamiltonianSpec::parse("p^2/2 + cos(2*pi*q) + 0.3*sin(2*pi*q)", 1).unwrap();
        let z = critical_value_infmax(&h, &GraphFamily::zero(1), 256, 3, 1);
        let top = (0..256).map(|k| h.value(&[k as f64 / 256.0, 0.0], &[0.0; 2])).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(z.alpha_hat, top);
    }

    #[test]
    fn pendulum_weak_kam() {
        let h = pendulum();
        let opts = WeakKamOptions::default();
        let s = weak_kam(&h, &opts).unwrap();
        assert!((s.alpha - 1.0).abs() < 1e-3, "{}", s.alpha);
        assert!(s.alpha_spread <= 1e-3);
        let eq = [CotangentPoint::new_1d(0.0, 0.0)];
        assert!(dynamics::base_hausdorff(&s.aubry_pts, &eq) <= 2.0 / 1024.0, "{:?}", s.aubry_pts);
        for x in &s.mane_pts {
            assert!((h.at(x) - s.alpha).abs() <= NUM_TOL);
        }
        assert!(s.aubry_pts.iter().all(|x| s.mane_pts.contains(x)));
        let mask: Vec<bool> = (0..1024).map(|k| k <= 2 || k >= 1022).collect();
        let r = subsolution_check(1, 1024, &s.u, &h, s.alpha, 1e-2, Some(&mask));
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn free_particle_aubry_is_zero_section() {
        let h = HamiltonianSpec::parse("p^2/2", 1).unwrap();
        let opts = WeakKamOptions { critical: CriticalOptions { n: 256, ..Default::default() }, ..Default::default() };
        let s = weak_kam(&h, &opts).unwrap();
        assert_eq!(s.alpha, 0.0);
        let zero: Vec<CotangentPoint> = (0..256).map(|k| CotangentPoint::new_1d(k as f64 / 256.0, 0.0)).collect();
        assert!(dynamics::base_hausdorff(&s.aubry_pts, &zero) <= 2.0 / 256.0);
        assert!(s.aubry_pts.iter().chain(&s.mane_pts).all(|x| x.p[0].abs() <= 1.0 / 25.6));
        assert!(s.aubry_pts.iter().all(|x| s.mane_pts.contains(x)));
    }

    #[test]
    fn double_well_has_two_aubry_points() {
        let h = HamiltonianSpec::parse("p^2/2 + cos(4*pi*q)", 1).unwrap();
        let s = weak_kam(&h, &WeakKamOptions::default()).unwrap();
        assert!((s.alpha - 1.0).abs() < 1e-3);
        assert_eq!(s.aubry_components, 2, "{:?}", s.aubry_pts);
        assert!(s.aubry_pts.iter().all(|x| s.mane_pts.contains(x)));
        assert!(s.mane_pts.iter().all(|x| (h.at(x) - s.alpha).abs() <= NUM_TOL));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn operator_properties(seed in 0u64..1000, c in -3.0f64..3.0) {
            let h = pendulum();
            let op = LaxOleinik::new(&h, 64, 0.1).unwrap();
            let u = random_initial(1, 64, seed);
            let w = random_initial(1, 64, seed + 7919);
            let tu = op.forward(&u);
            let tw = op.forward(&w);
            let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(sup(&tu, &tw) <= sup(&u, &w) + 1e-12);
            let shifted: Vec<f64> = u.iter().map(|x| x + c).collect();
            let ts = op.forward(&shifted);
            prop_assert!(ts.iter().zip(&tu).all(|(a, b)| (a - b - c).abs() <= 1e-12));
            let upper: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a.max(*b)).collect();
            let tup = op.forward(&upper);
            prop_assert!(tup.iter().zip(&tu).all(|(a, b)| a >= b));
        }
    }
}

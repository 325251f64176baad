//! Discrete action generating functions for `φ_H^T(Γ_dv)` and their
//! sublevel minimax values.
//!
//! With the Störmer–Verlet discrete Lagrangian
//! `L_d(a, b) = |b − a|²/(2Δt) − Δt (V(a) + V(b))/2`, the function
//! `G(q; x_0, …, x_{N−1}) = v(x_0) + Σ_k L_d(x_k, x_{k+1})`, `x_N = q`,
//! has as critical points exactly the Verlet orbits that start on `Γ_dv` and
//! end over `q`, with critical values equal to the transported primitive.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourier::PeriodicFunction;
use crate::front::{Front, GAP_TOL};
use crate::hamiltonian::HamiltonianSpec;
use crate::lagrangian::{ExactLagrangian, FlowOptions};
use crate::linalg;
use crate::persistence::{sublevel_persistence, Diagram, Lattice};

/// Largest number of variables evaluated on a lattice.
pub const MAX_LATTICE_VARS: usize = 3;

#[derive(Clone, Debug)]
pub struct DiscreteAction {
    dim: usize,
    q: [f64; 2],
    steps: usize,
    time: f64,
    dt: f64,
    h: HamiltonianSpec,
    v: PeriodicFunction,
    /// Half-width of the variable box around `q` in every coordinate.
    pub radius: f64,
}

/// A critical point of `G(q; ·)`: the broken trajectory and its value.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalPoint {
    pub xi: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Route {
    /// No variables: `G = v(q)`.
    Trivial,
    /// Union-find persistence on a variable lattice.
    Lattice,
    /// Enumeration of critical points by shooting.
    Enumeration,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralValue {
    /// Selected critical value (raw primitive units, not anchor-normalized).
    pub value: f64,
    /// Birth value of the essential class on the finest lattice used.
    pub lattice_value: Option<f64>,
    pub lattice_points: usize,
    /// Variables at the selected critical point.
    pub xi: Vec<f64>,
    pub route: Route,
    /// All critical values found (enumeration route), sorted.
    pub critical_values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LatticeOptions {
    pub points_per_axis: usize,
    /// Lattice refinements used to confirm the selected critical value.
    pub refinements: usize,
    /// Newton-polish the lattice minimizer to a critical point.
    pub polish: bool,
}

impl Default for LatticeOptions {
    fn default() -> Self {
        LatticeOptions { points_per_axis: 33, refinements: 1, polish: true }
    }
}

/// Builds `G(q; ·)` for `L = φ_H^T(Γ_dv)` with `N` Verlet steps.
pub fn build_discrete_action(
    h: &HamiltonianSpec,
    v: &PeriodicFunction,
    time: f64,
    steps: usize,
    q: [f64; 2],
) -> Result<DiscreteAction> {
    if h.dim() != v.dim() {
        return Err(Error::Dimension("Hamiltonian and generator dimensions differ".into()));
    }
    if time < 0.0 || !time.is_finite() {
        return Err(Error::Precondition(format!("flow time must be ≥ 0, got {time}")));
    }
    if time > 0.0 && steps == 0 {
        return Err(Error::Precondition("a positive flow time needs at least one step".into()));
    }
    if time > 0.0 && !h.is_mechanical() {
        return Err(Error::Unsupported(
            "discrete actions are built for H = |p|²/2 + V(q)".into(),
        ));
    }
    let dim = h.dim();
    let q = [q[0].rem_euclid(1.0), if dim == 2 { q[1].rem_euclid(1.0) } else { 0.0 }];
    let steps = if time == 0.0 { 0 } else { steps };
    let dt = if steps == 0 { 0.0 } else { time / steps as f64 };
    let radius = momentum_bound(h, v) * time + 3.0 * 0.5 * (dim as f64).sqrt();
    Ok(DiscreteAction { dim, q, steps, time, dt, h: h.clone(), v: v.clone(), radius })
}

/// `max |dv| + sqrt(2 osc V)`: bounds `|p|` along the flow of `Γ_dv`.
fn momentum_bound(h: &HamiltonianSpec, v: &PeriodicFunction) -> f64 {
    let m = 128;
    let mut pmax = 0.0f64;
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    let pts: Vec<[f64; 2]> = if v.dim() == 1 {
        (0..m).map(|i| [i as f64 / m as f64, 0.0]).collect()
    } else {
        (0..m * m).map(|k| [(k % m) as f64 / m as f64, (k / m) as f64 / m as f64]).collect()
    };
    for x in &pts {
        let g = v.grad(x);
        pmax = pmax.max(g[0].hypot(g[1]));
        let e = h.potential(x);
        vmin = vmin.min(e);
        vmax = vmax.max(e);
    }
    pmax + (2.0 * (vmax - vmin)).sqrt()
}

impl DiscreteAction {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> [f64; 2] {
        self.q
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Number of variables `d = n·N`.
    pub fn nvars(&self) -> usize {
        self.dim * self.steps
    }

    fn point(&self, xi: &[f64], k: usize) -> [f64; 2] {
        if k == self.steps {
            self.q
        } else {
            let mut x = [0.0; 2];
            x[..self.dim].copy_from_slice(&xi[k * self.dim..(k + 1) * self.dim]);
            x
        }
    }

    fn ld(&self, a: &[f64; 2], b: &[f64; 2]) -> f64 {
        let d2: f64 = (0..self.dim).map(|c| (b[c] - a[c]).powi(2)).sum();
        d2 / (2.0 * self.dt) - 0.5 * self.dt * (self.h.potential(a) + self.h.potential(b))
    }

    /// `G(q; ξ)`.
    pub fn value(&self, xi: &[f64]) -> f64 {
        if self.steps == 0 {
            return self.v.value(&self.q);
        }
        let mut g = self.v.value(&self.point(xi, 0));
        for k in 0..self.steps {
            g += self.ld(&self.point(xi, k), &self.point(xi, k + 1));
        }
        g
    }

    /// `∇_ξ G(q; ξ)`, the discrete first variation.
    pub fn gradient(&self, xi: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut g = vec![0.0; self.nvars()];
        if self.steps == 0 {
            return g;
        }
        let x0 = self.point(xi, 0);
        let dv = self.v.grad(&x0);
        for c in 0..n {
            g[c] += dv[c];
        }
        for k in 0..self.steps {
            let a = self.point(xi, k);
            let b = self.point(xi, k + 1);
            let va = self.h.potential_grad(&a);
            let vb = self.h.potential_grad(&b);
            for c in 0..n {
                let vel = (b[c] - a[c]) / self.dt;
                g[k * n + c] += -vel - 0.5 * self.dt * va[c];
                if k + 1 < self.steps {
                    g[(k + 1) * n + c] += vel - 0.5 * self.dt * vb[c];
                }
            }
        }
        g
    }

    /// Verlet orbit from `x0` with `p0 = dv(x0)`: positions `x_0..x_N`
    /// (lifted) and the accumulated action.
    pub fn orbit(&self, x0: [f64; 2]) -> (Vec<[f64; 2]>, f64) {
        let n = self.dim;
        let mut x = x0;
        let mut p = self.v.grad(&x0);
        let mut action = self.v.value(&x0);
        let mut out = vec![x];
        for _ in 0..self.steps {
            let g = self.h.potential_grad(&x);
            let mut half = [0.0; 2];
            let mut next = x;
            for c in 0..n {
                half[c] = p[c] - 0.5 * self.dt * g[c];
                next[c] = x[c] + self.dt * half[c];
            }
            action += self.ld(&x, &next);
            let g1 = self.h.potential_grad(&next);
            for c in 0..n {
                p[c] = half[c] - 0.5 * self.dt * g1[c];
            }
            x = next;
            out.push(x);
        }
        (out, action)
    }

    fn xi_from_orbit(&self, orbit: &[[f64; 2]]) -> Vec<f64> {
        let mut xi = Vec::with_capacity(self.nvars());
        for x in &orbit[..self.steps] {
            xi.extend_from_slice(&x[..self.dim]);
        }
        xi
    }

    /// The Lagrangian whose fibers are the critical points of `G`.
    pub fn shooting_lagrangian(&self) -> Result<ExactLagrangian> {
        ExactLagrangian::from_flow(self.v.clone(), &self.h, self.time, self.steps, &FlowOptions::default())
    }

    /// Critical points of `G(q; ·)` read off the fiber of the shooting
    /// Lagrangian over `q`: each fiber point is an orbit from `Γ_dv`, shifted
    /// by its lift so that it ends exactly at `q`.
    pub fn critical_points(&self, front: &Front) -> Result<Vec<CriticalPoint>> {
        let l = front.lagrangian();
        if self.steps == 0 {
            return Ok(vec![CriticalPoint { xi: Vec::new(), value: self.v.value(&self.q) }]);
        }
        let fiber = front.fiber(self.q, GAP_TOL)?;
        let mut out = Vec::with_capacity(fiber.points.len());
        for pt in &fiber.points {
            let mut x0 = [pt.t[0], pt.t[1]];
            if self.dim == 1 {
                x0[0] -= pt.lift as f64;
            } else {
                // surfaces: undo the lift of the end point in both coordinates
                let (orbit, _) = self.orbit(x0);
                let end = orbit[self.steps];
                for c in 0..2 {
                    x0[c] -= (end[c] - self.q[c]).round();
                }
            }
            let (orbit, _) = self.orbit(x0);
            let xi = self.xi_from_orbit(&orbit);
            out.push(CriticalPoint { value: pt.h + l.anchor_offset(), xi });
        }
        out.sort_by(|a, b| a.value.total_cmp(&b.value));
        Ok(out)
    }

    /// The minimax critical value of the fiber class: on a lattice by
    /// sublevel persistence (`d ≤ 3`), otherwise by enumeration of critical
    /// points through shooting.
    pub fn spectral_value(&self, opts: &LatticeOptions) -> Result<SpectralValue> {
        if self.steps == 0 {
            return Ok(SpectralValue {
                value: self.v.value(&self.q),
                lattice_value: None,
                lattice_points: 0,
                xi: Vec::new(),
                route: Route::Trivial,
                critical_values: vec![self.v.value(&self.q)],
            });
        }
        if self.nvars() <= MAX_LATTICE_VARS {
            return self.lattice_spectral_value(opts);
        }
        let l = self.shooting_lagrangian()?;
        let front = Front::new(&l)?;
        self.spectral_value_with(&front)
    }

    /// Enumeration route with a precomputed shooting front.
    pub fn spectral_value_with(&self, front: &Front) -> Result<SpectralValue> {
        let cps = self.critical_points(front)?;
        let best = cps
            .first()
            .ok_or_else(|| Error::Precondition("fiber has no critical points".into()))?;
        Ok(SpectralValue {
            value: best.value,
            lattice_value: None,
            lattice_points: 0,
            xi: best.xi.clone(),
            route: Route::Enumeration,
            critical_values: cps.iter().map(|c| c.value).collect(),
        })
    }

    /// Lattice of `m` points per axis over the variable box and `G` on it.
    pub fn lattice(&self, m: usize) -> (Lattice, Vec<f64>) {
        let d = self.nvars();
        let lat = Lattice::new(&vec![m; d]);
        let vals = (0..lat.len())
            .into_par_iter()
            .map(|k| self.value(&self.lattice_point(&lat, k)))
            .collect();
        (lat, vals)
    }

    pub fn lattice_point(&self, lat: &Lattice, k: usize) -> Vec<f64> {
        let m = lat.shape[0];
        lat.coords(k)
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let center = self.q[i % self.dim];
                center - self.radius + 2.0 * self.radius * c as f64 / (m - 1) as f64
            })
            .collect()
    }

    /// Persistence diagram of `G(q; ·)` on an `m`-point lattice.
    pub fn persistence(&self, m: usize) -> (Lattice, Vec<f64>, Diagram) {
        let (lat, vals) = self.lattice(m);
        let diag = sublevel_persistence(&lat, &vals);
        (lat, vals, diag)
    }

    fn lattice_spectral_value(&self, opts: &LatticeOptions) -> Result<SpectralValue> {
        let mut da = self.clone();
        let mut expanded = false;
        let mut m = opts.points_per_axis.max(3);
        let mut history: Vec<f64> = Vec::new();
        let mut last: Option<SpectralValue> = None;
        let mut level = 0;
        while level <= opts.refinements {
            let (lat, vals, diag) = da.persistence(m);
            if lat.on_boundary(diag.essential_vertex) {
                if expanded {
                    return Err(Error::BoxTooSmall);
                }
                expanded = true;
                da.radius *= 2.0;
                continue;
            }
            let x = da.lattice_point(&lat, diag.essential_vertex);
            let (xi, value) = if opts.polish { da.polish(x) } else { (x.clone(), vals[diag.essential_vertex]) };
            history.push(value);
            let sv = SpectralValue {
                value,
                lattice_value: Some(diag.essential_birth),
                lattice_points: lat.len(),
                xi,
                route: Route::Lattice,
                critical_values: Vec::new(),
            };
            if let Some(prev) = &last {
                if (prev.value - sv.value).abs() <= 1e-9 * (1.0 + sv.value.abs()) {
                    return Ok(sv);
                }
            }
            last = Some(sv);
            level += 1;
            m = 2 * m - 1;
        }
        if opts.refinements == 0 || !opts.polish {
            return Ok(last.expect("at least one lattice"));
        }
        let lo = history.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Err(Error::NotStabilized { lo, hi })
    }

    /// Damped Newton descent from `x` to a nearby local minimum of `G`.
    pub fn polish(&self, mut x: Vec<f64>) -> (Vec<f64>, f64) {
        let d = x.len();
        let mut fx = self.value(&x);
        for _ in 0..100 {
            let g = self.gradient(&x);
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn < 1e-13 * (1.0 + fx.abs()) {
                break;
            }
            // Hessian by centered differences of the analytic gradient
            let e = 1e-6;
            let mut hs = [[0.0f64; MAX_LATTICE_VARS]; MAX_LATTICE_VARS];
            for j in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += e;
                xm[j] -= e;
                let (gp, gm) = (self.gradient(&xp), self.gradient(&xm));
                for i in 0..d {
                    hs[i][j] = (gp[i] - gm[i]) / (2.0 * e);
                }
            }
            let mut rhs = [0.0; MAX_LATTICE_VARS];
            rhs[..d].copy_from_slice(&g);
            let newton = linalg::solve(hs, rhs, d)
                .map(|s| s[..d].to_vec())
                .filter(|s| s.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() > 0.0);
            let dir = newton.unwrap_or_else(|| g.clone());
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a - step * b).collect();
                let fnew = self.value(&xn);
                if fnew <= fx {
                    moved = (fx - fnew) > 0.0 || xn != x;
                    x = xn;
                    fx = fnew;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        (x, fx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::SymbolicFn;

    fn pendulum() -> HamiltonianSpec {
        HamiltonianSpec::parse("p^2/2 + cos(2*pi*q)", 1).unwrap()
    }

    #[test]
    fn zero_time_gives_v() {
        let v = PeriodicFunction::Symbolic(SymbolicFn::parse("0.1*sin(2*pi*q)", 1).unwrap());
        let da = build_discrete_action(&pendulum(), &v, 0.0, 1, [0.25, 0.0]).unwrap();
        assert_eq!(da.nvars(), 0);
        let sv = da.spectral_value(&LatticeOptions::default()).unwrap();
        assert!((sv.value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn free_particle_action() {
        // one free step from the zero section: the straight segment x0 = q
        let h = HamiltonianSpec::parse("p^2/2", 1).unwrap();
        let da = build_discrete_action(&h, &PeriodicFunction::zero(1), 1.0, 1, [0.3, 0.0]).unwrap();
        let sv = da.spectral_value(&LatticeOptions::default()).unwrap();
        assert!(sv.value.abs() < 1e-12);
        assert!((sv.xi[0] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_differences() {
        let v = PeriodicFunction::Symbolic(SymbolicFn::parse("0.2*cos(2*pi*q) - 0.05*sin(4*pi*q)", 1).unwrap());
        let da = build_discrete_action(&pendulum(), &v, 1.0, 10, [0.4, 0.0]).unwrap();
        let xi: Vec<f64> = (0..10).map(|k| 0.1 * k as f64 - 0.2).collect();
        let g = da.gradient(&xi);
        for j in 0..10 {
            let e = 1e-6;
            let mut a = xi.clone();
            let mut b = xi.clone();
            a[j] += e;
            b[j] -= e;
            let fd = (da.value(&a) - da.value(&b)) / (2.0 * e);
            assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn orbit_action_is_the_critical_value() {
        let da = build_discrete_action(&pendulum(), &PeriodicFunction::zero(1), 0.6, 12, [0.3, 0.0]).unwrap();
        let l = da.shooting_lagrangian().unwrap();
        let front = Front::new(&l).unwrap();
        for cp in da.critical_points(&front).unwrap() {
            assert!((da.value(&cp.xi) - cp.value).abs() < 1e-9);
            let g = da.gradient(&cp.xi);
            assert!(g.iter().all(|x| x.abs() < 1e-7), "{g:?}");
        }
    }
}

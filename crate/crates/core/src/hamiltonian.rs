//! Hamiltonians on `T*T^n` (n = 1, 2): evaluation, derivatives, Tonelli
//! diagnostics and symplectic time stepping.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{self, Compiled, Expr, Var};
use crate::linalg;

/// A point `(q, p)` of the cotangent bundle; `q` is kept reduced to `[0,1)^n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CotangentPoint {
    pub dim: usize,
    pub q: [f64; 2],
    pub p: [f64; 2],
}

impl CotangentPoint {
    pub fn new(dim: usize, q: [f64; 2], p: [f64; 2]) -> Self {
        let mut q = q;
        for qi in q.iter_mut().take(dim) {
            *qi = qi.rem_euclid(1.0);
            // rem_euclid can round up to exactly 1.0
            if *qi >= 1.0 {
                *qi = 0.0;
            }
        }
        CotangentPoint { dim, q, p }
    }

    pub fn new_1d(q: f64, p: f64) -> Self {
        Self::new(1, [q, 0.0], [p, 0.0])
    }

    /// Distance on `T^n × R^n` using the flat torus metric in the base.
    pub fn distance(&self, other: &CotangentPoint) -> f64 {
        let n = self.dim;
        let dq = linalg::torus_dist(&self.q[..n], &other.q[..n]);
        let dp: f64 = (0..n).map(|i| (self.p[i] - other.p[i]).powi(2)).sum();
        (dq * dq + dp).sqrt()
    }
}

/// Tangent vector `(δq, δp)` transported alongside a trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tangent {
    pub dq: [f64; 2],
    pub dp: [f64; 2],
}

/// Parsed Hamiltonian `H(q, p)` with compiled analytic derivatives.
#[derive(Clone, Debug)]
pub struct HamiltonianSpec {
    source: String,
    ast: Expr,
    dim: usize,
    value: Compiled,
    dq: Vec<Compiled>,
    dp: Vec<Compiled>,
    // second derivatives, row-major n×n
    hqq: Vec<Compiled>,
    hqp: Vec<Compiled>,
    hpp: Vec<Compiled>,
    mechanical: bool,
}

#[inline]
fn slots(q: &[f64; 2], p: &[f64; 2]) -> [f64; 4] {
    [q[0], q[1], p[0], p[1]]
}

impl HamiltonianSpec {
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        let ast = expr::parse(src, dim)?;
        Ok(Self::from_ast(src.trim().to_string(), ast, dim))
    }

    pub fn from_ast(source: String, ast: Expr, dim: usize) -> Self {
        let qv: Vec<Var> = (0..dim).map(Var::Q).collect();
        let pv: Vec<Var> = (0..dim).map(Var::P).collect();
        let dq_e: Vec<Expr> = qv.iter().map(|v| ast.derivative(*v)).collect();
        let dp_e: Vec<Expr> = pv.iter().map(|v| ast.derivative(*v)).collect();
        let mut hqq = Vec::new();
        let mut hqp = Vec::new();
        let mut hpp = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                hqq.push(Compiled::new(&dq_e[i].derivative(qv[j])));
                hqp.push(Compiled::new(&dq_e[i].derivative(pv[j])));
                hpp.push(Compiled::new(&dp_e[i].derivative(pv[j])));
            }
        }
        let mut h = HamiltonianSpec {
            source,
            value: Compiled::new(&ast),
            dq: dq_e.iter().map(Compiled::new).collect(),
            dp: dp_e.iter().map(Compiled::new).collect(),
            ast,
            dim,
            hqq,
            hqp,
            hpp,
            mechanical: false,
        };
        h.mechanical = h.detect_mechanical();
        h
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `H = |p|²/2 + V(q)`; such Hamiltonians are stepped by Störmer–Verlet.
    pub fn is_mechanical(&self) -> bool {
        self.mechanical
    }

    fn detect_mechanical(&self) -> bool {
        // deterministic probe points
        let mut state = 0x9e37_79b9_7f4a_7c15u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..32 {
            let q = [next(), next()];
            let p = [6.0 * next() - 3.0, 6.0 * next() - 3.0];
            let p = if self.dim == 1 { [p[0], 0.0] } else { p };
            let kinetic: f64 = p[..self.dim].iter().map(|x| 0.5 * x * x).sum();
            let h = self.value(&q, &p);
            let v = self.value(&q, &[0.0; 2]);
            if (h - v - kinetic).abs() > 1e-11 * (1.0 + h.abs()) {
                return false;
            }
        }
        true
    }

    #[inline]
    pub fn value(&self, q: &[f64; 2], p: &[f64; 2]) -> f64 {
        self.value.eval(&slots(q, p))
    }

    #[inline]
    pub fn at(&self, x: &CotangentPoint) -> f64 {
        self.value(&x.q, &x.p)
    }

    /// `(∂H/∂q, ∂H/∂p)`.
    #[inline]
    pub fn gradient(&self, q: &[f64; 2], p: &[f64; 2]) -> ([f64; 2], [f64; 2]) {
        let s = slots(q, p);
        let mut gq = [0.0; 2];
        let mut gp = [0.0; 2];
        for i in 0..self.dim {
            gq[i] = self.dq[i].eval(&s);
            gp[i] = self.dp[i].eval(&s);
        }
        (gq, gp)
    }

    /// Blocks `(H_qq, H_qp, H_pp)` of the Hessian, `H_qp[i][j] = ∂²H/∂q_i∂p_j`.
    pub fn hessian(&self, q: &[f64; 2], p: &[f64; 2]) -> ([[f64; 2]; 2], [[f64; 2]; 2], [[f64; 2]; 2]) {
        let s = slots(q, p);
        let n = self.dim;
        let mut a = [[0.0; 2]; 2];
        let mut b = [[0.0; 2]; 2];
        let mut c = [[0.0; 2]; 2];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = self.hqq[i * n + j].eval(&s);
                b[i][j] = self.hqp[i * n + j].eval(&s);
                c[i][j] = self.hpp[i * n + j].eval(&s);
            }
        }
        (a, b, c)
    }

    /// Fiberwise Hessian `∂²H/∂p²`.
    pub fn fiber_hessian(&self, q: &[f64; 2], p: &[f64; 2]) -> [[f64; 2]; 2] {
        let s = slots(q, p);
        let n = self.dim;
        let mut c = [[0.0; 2]; 2];
        for i in 0..n {
            for j in 0..n {
                c[i][j] = self.hpp[i * n + j].eval(&s);
            }
        }
        c
    }

    /// `V(q) = H(q, 0)`, meaningful for mechanical Hamiltonians.
    #[inline]
    pub fn potential(&self, q: &[f64; 2]) -> f64 {
        self.value(q, &[0.0; 2])
    }

    #[inline]
    pub fn potential_grad(&self, q: &[f64; 2]) -> [f64; 2] {
        let s = slots(q, &[0.0; 2]);
        let mut g = [0.0; 2];
        for i in 0..self.dim {
            g[i] = self.dq[i].eval(&s);
        }
        g
    }

    #[inline]
    pub fn potential_hessian(&self, q: &[f64; 2]) -> [[f64; 2]; 2] {
        let s = slots(q, &[0.0; 2]);
        let n = self.dim;
        let mut a = [[0.0; 2]; 2];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = self.hqq[i * n + j].eval(&s);
            }
        }
        a
    }

    /// `H ∘ φ⁻¹` for the exact symplectomorphism `φ(q, p) = (q, p + dw(q))`.
    pub fn momentum_shifted(&self, w: &Expr) -> Self {
        let mut ast = self.ast.clone();
        for i in 0..self.dim {
            let dw = w.derivative(Var::Q(i));
            let shifted = Expr::Sub(Box::new(Expr::Var(Var::P(i))), Box::new(dw));
            ast = expr::substitute(&ast, Var::P(i), &shifted);
        }
        Self::from_ast(ast.to_string(), ast, self.dim)
    }

    /// One step of the symplectic integrator on lifted coordinates (no
    /// reduction mod 1). Returns the increment of the Liouville primitive
    /// along the step, i.e. the exact discrete analogue of
    /// `∫ (p·∂H/∂p − H) dt` for the scheme in use.
    pub fn step_lifted(&self, q: &mut [f64; 2], p: &mut [f64; 2], dt: f64) -> Result<f64> {
        self.step_tangents(q, p, &mut [], dt)
    }

    /// As [`Self::step_lifted`], additionally transporting tangent vectors by
    /// the linearized step.
    pub fn step_tangents(
        &self,
        q: &mut [f64; 2],
        p: &mut [f64; 2],
        tangents: &mut [Tangent],
        dt: f64,
    ) -> Result<f64> {
        if dt == 0.0 || !dt.is_finite() {
            return Err(Error::InvalidStep(dt));
        }
        if self.mechanical {
            Ok(self.verlet(q, p, tangents, dt))
        } else {
            self.midpoint(q, p, tangents, dt)
        }
    }

    /// `steps` integrator steps of size `dt`; returns the accumulated action.
    /// Equivalent to repeated [`step_tangents`](Self::step_tangents), with
    /// potential evaluations shared between consecutive Verlet steps.
    pub fn flow_tangents(
        &self,
        q: &mut [f64; 2],
        p: &mut [f64; 2],
        tangents: &mut [Tangent],
        dt: f64,
        steps: usize,
    ) -> Result<f64> {
        if dt == 0.0 || !dt.is_finite() {
            return Err(Error::InvalidStep(dt));
        }
        if !self.mechanical {
            let mut s = 0.0;
            for _ in 0..steps {
                s += self.midpoint(q, p, tangents, dt)?;
            }
            return Ok(s);
        }
        let n = self.dim;
        let h = 0.5 * dt;
        let with_tan = !tangents.is_empty();
        let mut v0 = self.potential(q);
        let mut g0 = self.potential_grad(q);
        let mut a0 = if with_tan { self.potential_hessian(q) } else { [[0.0; 2]; 2] };
        let mut action = 0.0;
        for _ in 0..steps {
            for t in tangents.iter_mut() {
                for i in 0..n {
                    let s: f64 = (0..n).map(|j| a0[i][j] * t.dq[j]).sum();
                    t.dp[i] -= h * s;
                }
                for i in 0..n {
                    t.dq[i] += dt * t.dp[i];
                }
            }
            let mut kin = 0.0;
            for i in 0..n {
                p[i] -= h * g0[i];
                kin += 0.5 * p[i] * p[i];
                q[i] += dt * p[i];
            }
            let v1 = self.potential(q);
            let g1 = self.potential_grad(q);
            if with_tan {
                a0 = self.potential_hessian(q);
                for t in tangents.iter_mut() {
                    for i in 0..n {
                        let s: f64 = (0..n).map(|j| a0[i][j] * t.dq[j]).sum();
                        t.dp[i] -= h * s;
                    }
                }
            }
            for i in 0..n {
                p[i] -= h * g1[i];
            }
            action += dt * kin - h * (v0 + v1);
            v0 = v1;
            g0 = g1;
        }
        Ok(action)
    }

    fn verlet(&self, q: &mut [f64; 2], p: &mut [f64; 2], tangents: &mut [Tangent], dt: f64) -> f64 {
        let n = self.dim;
        let h = 0.5 * dt;
        let v0 = self.potential(q);
        let g0 = self.potential_grad(q);
        if !tangents.is_empty() {
            let a0 = self.potential_hessian(q);
            for t in tangents.iter_mut() {
                for i in 0..n {
                    let s: f64 = (0..n).map(|j| a0[i][j] * t.dq[j]).sum();
                    t.dp[i] -= h * s;
                }
                for i in 0..n {
                    t.dq[i] += dt * t.dp[i];
                }
            }
        }
        let mut kin = 0.0;
        for i in 0..n {
            p[i] -= h * g0[i];
            kin += 0.5 * p[i] * p[i];
            q[i] += dt * p[i];
        }
        let v1 = self.potential(q);
        let g1 = self.potential_grad(q);
        if !tangents.is_empty() {
            let a1 = self.potential_hessian(q);
            for t in tangents.iter_mut() {
                for i in 0..n {
                    let s: f64 = (0..n).map(|j| a1[i][j] * t.dq[j]).sum();
                    t.dp[i] -= h * s;
                }
            }
        }
        for i in 0..n {
            p[i] -= h * g1[i];
        }
        dt * kin - h * (v0 + v1)
    }

    /// Full phase-space Hessian in `[q; p]` ordering, size 2n.
    fn phase_hessian(&self, q: &[f64; 2], p: &[f64; 2]) -> [[f64; 4]; 4] {
        let n = self.dim;
        let (a, b, c) = self.hessian(q, p);
        let mut m = [[0.0; 4]; 4];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = a[i][j];
                m[i][n + j] = b[i][j];
                m[n + j][i] = b[i][j];
                m[n + i][n + j] = c[i][j];
            }
        }
        m
    }

    /// `J A` with `J = [[0, I], [-I, 0]]`.
    fn j_times(&self, a: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let n = self.dim;
        let mut m = [[0.0; 4]; 4];
        for i in 0..n {
            for c in 0..2 * n {
                m[i][c] = a[n + i][c];
                m[n + i][c] = -a[i][c];
            }
        }
        m
    }

    fn midpoint(
        &self,
        q: &mut [f64; 2],
        p: &mut [f64; 2],
        tangents: &mut [Tangent],
        dt: f64,
    ) -> Result<f64> {
        const TOL: f64 = 1e-12;
        const MAX_ITERS: usize = 50;
        let n = self.dim;
        let m2 = 2 * n;
        let h = 0.5 * dt;
        let z0 = [q[0], q[1], p[0], p[1]];
        let z0v = |k: usize| if k < n { z0[k] } else { z0[2 + k - n] };
        // m = (z0 + z1)/2 solves m = z0 + (dt/2) J ∇H(m)
        let (gq, gp) = self.gradient(q, p);
        let mut mq = [0.0; 2];
        let mut mp = [0.0; 2];
        for i in 0..n {
            mq[i] = q[i] + h * gp[i];
            mp[i] = p[i] - h * gq[i];
        }
        let mut residual = f64::INFINITY;
        let mut converged = false;
        for _ in 0..MAX_ITERS {
            let (gq, gp) = self.gradient(&mq, &mp);
            let mut f = [0.0; 4];
            for i in 0..n {
                f[i] = mq[i] - z0v(i) - h * gp[i];
                f[n + i] = mp[i] - z0v(n + i) + h * gq[i];
            }
            residual = f[..m2].iter().map(|x| x.abs()).fold(0.0, f64::max);
            let scale = 1.0 + mq[..n].iter().chain(&mp[..n]).map(|x| x.abs()).fold(0.0, f64::max);
            if residual <= TOL * scale {
                converged = true;
                break;
            }
            let ja = self.j_times(&self.phase_hessian(&mq, &mp));
            let mut jac = [[0.0; 4]; 4];
            for r in 0..m2 {
                for c in 0..m2 {
                    jac[r][c] = if r == c { 1.0 } else { 0.0 } - h * ja[r][c];
                }
            }
            let rhs = [-f[0], -f[1], -f[2], -f[3]];
            let Some(dz) = linalg::solve(jac, rhs, m2) else {
                break;
            };
            for i in 0..n {
                mq[i] += dz[i];
                mp[i] += dz[n + i];
            }
        }
        if !converged {
            return Err(Error::ImplicitSolve {
                iterations: MAX_ITERS,
                residual,
            });
        }
        if !tangents.is_empty() {
            let ja = self.j_times(&self.phase_hessian(&mq, &mp));
            let mut lhs = [[0.0; 4]; 4];
            let mut rhs_m = [[0.0; 4]; 4];
            for r in 0..m2 {
                for c in 0..m2 {
                    let id = if r == c { 1.0 } else { 0.0 };
                    lhs[r][c] = id - h * ja[r][c];
                    rhs_m[r][c] = id + h * ja[r][c];
                }
            }
            for t in tangents.iter_mut() {
                let mut dz = [0.0; 4];
                for i in 0..n {
                    dz[i] = t.dq[i];
                    dz[n + i] = t.dp[i];
                }
                let mut b = [0.0; 4];
                for r in 0..m2 {
                    b[r] = (0..m2).map(|c| rhs_m[r][c] * dz[c]).sum();
                }
                let out = linalg::solve(lhs, b, m2).ok_or(Error::ImplicitSolve {
                    iterations: MAX_ITERS,
                    residual: f64::NAN,
                })?;
                for i in 0..n {
                    t.dq[i] = out[i];
                    t.dp[i] = out[n + i];
                }
            }
        }
        let hm = self.value(&mq, &mp);
        let mut w = -dt * hm;
        for i in 0..n {
            let q1 = 2.0 * mq[i] - q[i];
            let p1 = 2.0 * mp[i] - p[i];
            w += mp[i] * (q1 - q[i]);
            q[i] = q1;
            p[i] = p1;
        }
        Ok(w)
    }

    /// One integrator step; the result has its base point reduced mod 1.
    /// Negative `dt` integrates backward.
    pub fn flow_step(&self, x: &CotangentPoint, dt: f64) -> Result<CotangentPoint> {
        if x.dim != self.dim {
            return Err(Error::Dimension(format!(
                "point has dim {}, Hamiltonian has dim {}",
                x.dim, self.dim
            )));
        }
        let mut q = x.q;
        let mut p = x.p;
        self.step_lifted(&mut q, &mut p, dt)?;
        Ok(CotangentPoint::new(self.dim, q, p))
    }

    /// Integrates `steps` steps of size `dt` on lifted coordinates and returns
    /// the accumulated primitive increment.
    pub fn flow_lifted(&self, q: &mut [f64; 2], p: &mut [f64; 2], dt: f64, steps: usize) -> Result<f64> {
        let mut s = 0.0;
        for _ in 0..steps {
            s += self.step_lifted(q, p, dt)?;
        }
        Ok(s)
    }

    /// Fiberwise convexity and superlinearity diagnostics on a sample grid.
    pub fn tonelli_check(&self, grid: usize, p_max: f64) -> TonelliReport {
        let n = self.dim;
        let grid = grid.max(2);
        // odd count so p = 0 is sampled
        let np = if grid % 2 == 0 { grid + 1 } else { grid };
        let p_at = |k: usize| -p_max + 2.0 * p_max * k as f64 / (np - 1) as f64;
        let q_points: Vec<[f64; 2]> = if n == 1 {
            (0..grid).map(|i| [i as f64 / grid as f64, 0.0]).collect()
        } else {
            (0..grid * grid)
                .map(|k| [(k % grid) as f64 / grid as f64, (k / grid) as f64 / grid as f64])
                .collect()
        };
        let p_points: Vec<[f64; 2]> = if n == 1 {
            (0..np).map(|k| [p_at(k), 0.0]).collect()
        } else {
            let m = np.min(33);
            let pa = |k: usize| -p_max + 2.0 * p_max * k as f64 / (m - 1) as f64;
            (0..m * m).map(|k| [pa(k % m), pa(k / m)]).collect()
        };
        let dirs: Vec<[f64; 2]> = if n == 1 {
            vec![[1.0, 0.0], [-1.0, 0.0]]
        } else {
            (0..16)
                .map(|k| {
                    let a = std::f64::consts::TAU * k as f64 / 16.0;
                    [a.cos(), a.sin()]
                })
                .collect()
        };
        let mut min_eig = f64::INFINITY;
        let mut ratio = f64::INFINITY;
        let mut ratio_half = f64::INFINITY;
        for q in &q_points {
            for p in &p_points {
                let c = self.fiber_hessian(q, p);
                let e = if n == 1 {
                    c[0][0]
                } else {
                    linalg::sym2_eigenvalues(c[0][0], 0.5 * (c[0][1] + c[1][0]), c[1][1]).0
                };
                min_eig = min_eig.min(e);
            }
            for d in &dirs {
                let far = [p_max * d[0], p_max * d[1]];
                let mid = [0.5 * p_max * d[0], 0.5 * p_max * d[1]];
                ratio = ratio.min(self.value(q, &far) / p_max);
                ratio_half = ratio_half.min(self.value(q, &mid) / (0.5 * p_max));
            }
        }
        let pass = min_eig > 1e-9 && ratio > 0.0 && ratio > ratio_half;
        TonelliReport {
            min_hessian_eigenvalue: min_eig,
            superlinearity_ratio: ratio,
            superlinearity_ratio_half: ratio_half,
            p_max,
            pass,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TonelliReport {
    pub min_hessian_eigenvalue: f64,
    /// `min H(q,p)/|p|` over the sphere `|p| = p_max`.
    pub superlinearity_ratio: f64,
    /// Same ratio at `|p| = p_max/2`; superlinear growth requires an increase.
    pub superlinearity_ratio_half: f64,
    pub p_max: f64,
    pub pass: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pendulum() -> HamiltonianSpec {
        HamiltonianSpec::parse("p^2/2 + cos(2*pi*q)", 1).unwrap()
    }

    #[test]
    fn tonelli_examples() {
        let r = pendulum().tonelli_check(64, 10.0);
        assert!(r.pass);
        assert!((r.min_hessian_eigenvalue - 1.0).abs() < 1e-12);
        let quartic = HamiltonianSpec::parse("p^4", 1).unwrap().tonelli_check(64, 10.0);
        assert!(!quartic.pass);
        assert!(quartic.min_hessian_eigenvalue.abs() < 1e-12);
        let concave = HamiltonianSpec::parse("-p^2", 1).unwrap().tonelli_check(64, 10.0);
        assert!(!concave.pass);
        assert!(concave.min_hessian_eigenvalue < 0.0);
    }

    #[test]
    fn multi_step_flow_matches_single_steps() {
        let h = pendulum();
        let (mut q, mut p) = ([0.1, 0.0], [0.3, 0.0]);
        let mut t = [Tangent { dq: [1.0, 0.0], dp: [0.0, 0.0] }];
        let mut s = 0.0;
        for _ in 0..50 {
            s += h.step_tangents(&mut q, &mut p, &mut t, 0.01).unwrap();
        }
        let (mut q2, mut p2) = ([0.1, 0.0], [0.3, 0.0]);
        let mut t2 = [Tangent { dq: [1.0, 0.0], dp: [0.0, 0.0] }];
        let s2 = h.flow_tangents(&mut q2, &mut p2, &mut t2, 0.01, 50).unwrap();
        assert_eq!((q, p, t, s), (q2, p2, t2, s2));
    }

    #[test]
    fn mechanical_detection() {
        assert!(pendulum().is_mechanical());
        assert!(HamiltonianSpec::parse("p1^2/2 + p2^2/2 + cos(2*pi*q1)", 2).unwrap().is_mechanical());
        assert!(!HamiltonianSpec::parse("p^2/2 + p*cos(2*pi*q)", 1).unwrap().is_mechanical());
        assert!(!HamiltonianSpec::parse("p^2 + cos(2*pi*q)", 1).unwrap().is_mechanical());
    }

    #[test]
    fn free_motion_step_is_exact() {
        let h = HamiltonianSpec::parse("p^2/2", 1).unwrap();
        let x = h.flow_step(&CotangentPoint::new_1d(0.0, 1.0), 0.1).unwrap();
        assert!((x.q[0] - 0.1).abs() < 1e-15);
        assert_eq!(x.p[0], 1.0);
    }

    #[test]
    fn equilibrium_is_fixed() {
        let h = pendulum();
        for dt in [1e-3, 0.1, 0.7] {
            let x = h.flow_step(&CotangentPoint::new_1d(0.0, 0.0), dt).unwrap();
            assert_eq!((x.q[0], x.p[0]), (0.0, 0.0));
        }
    }

    #[test]
    fn zero_step_rejected() {
        assert!(matches!(
            pendulum().flow_step(&CotangentPoint::new_1d(0.1, 0.0), 0.0),
            Err(Error::InvalidStep(_))
        ));
    }

    #[test]
    fn midpoint_primitive_matches_generating_identity() {
        // p1 dq1 - p0 dq0 = dW: check with finite differences in the initial point
        let h = HamiltonianSpec::parse("p^2/2 + 0.3*p*sin(2*pi*q) + cos(2*pi*q)", 1).unwrap();
        assert!(!h.is_mechanical());
        let dt = 0.05;
        let run = |q0: f64, p0: f64| {
            let mut q = [q0, 0.0];
            let mut p = [p0, 0.0];
            let w = h.step_lifted(&mut q, &mut p, dt).unwrap();
            (q[0], p[0], w)
        };
        let (q0, p0) = (0.21, 0.4);
        let eps = 1e-6;
        for (dq0, dp0) in [(eps, 0.0), (0.0, eps)] {
            let (qa, pa, wa) = run(q0 - dq0, p0 - dp0);
            let (qb, pb, wb) = run(q0 + dq0, p0 + dp0);
            let (_, p1, _) = run(q0, p0);
            let lhs = p1 * (qb - qa) - p0 * (2.0 * dq0);
            let _ = (pa, pb);
            assert!((lhs - (wb - wa)).abs() < 1e-9, "{lhs} vs {}", wb - wa);
        }
    }

    #[test]
    fn midpoint_tangent_matches_difference() {
        let h = HamiltonianSpec::parse("p^2/2 + 0.3*p*sin(2*pi*q) + cos(2*pi*q)", 1).unwrap();
        let dt = 0.05;
        let mut q = [0.3, 0.0];
        let mut p = [0.2, 0.0];
        let mut t = [Tangent { dq: [1.0, 0.0], dp: [0.5, 0.0] }];
        h.step_tangents(&mut q, &mut p, &mut t, dt).unwrap();
        let eps = 1e-6;
        let mut qa = [0.3 - eps, 0.0];
        let mut pa = [0.2 - 0.5 * eps, 0.0];
        let mut qb = [0.3 + eps, 0.0];
        let mut pb = [0.2 + 0.5 * eps, 0.0];
        h.step_lifted(&mut qa, &mut pa, dt).unwrap();
        h.step_lifted(&mut qb, &mut pb, dt).unwrap();
        assert!(((qb[0] - qa[0]) / (2.0 * eps) - t[0].dq[0]).abs() < 1e-7);
        assert!(((pb[0] - pa[0]) / (2.0 * eps) - t[0].dp[0]).abs() < 1e-7);
    }

    #[test]
    fn momentum_shift_composes() {
        let h = pendulum();
        let w = crate::expr::parse("0.1*sin(2*pi*q)", 1).unwrap();
        let hs = h.momentum_shifted(&w);
        let q = [0.37, 0.0];
        let dw = 0.1 * std::f64::consts::TAU * (std::f64::consts::TAU * 0.37).cos();
        let p = 0.8;
        assert!((hs.value(&q, &[p + dw, 0.0]) - h.value(&q, &[p, 0.0])).abs() < 1e-12);
    }
}

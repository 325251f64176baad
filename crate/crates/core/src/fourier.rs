//! Smooth periodic functions on `T^n`: truncated trigonometric series
//! (built from grid samples by FFT) or symbolic expressions in `q`.

use std::f64::consts::TAU;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::expr::{self, Compiled, Expr, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    pub k: [i32; 2],
    pub cos: f64,
    pub sin: f64,
}

/// `c0 + Σ cos·cos(2π k·q) + sin·sin(2π k·q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigSeries {
    pub dim: usize,
    pub constant: f64,
    pub modes: Vec<Mode>,
}

impl TrigSeries {
    pub fn zero(dim: usize) -> Self {
        TrigSeries { dim, constant: 0.0, modes: Vec::new() }
    }

    /// One-dimensional series from `(k, cos, sin)` triples.
    pub fn from_modes_1d(constant: f64, modes: &[(i32, f64, f64)]) -> Self {
        TrigSeries {
            dim: 1,
            constant,
            modes: modes
                .iter()
                .map(|&(k, c, s)| Mode { k: [k, 0], cos: c, sin: s })
                .collect(),
        }
    }

    /// Spectral interpolant of samples on the uniform grid `j/n` (per axis,
    /// row-major with the first coordinate fastest in 2-d).
    pub fn from_samples(dim: usize, n: usize, values: &[f64]) -> Result<Self> {
        let total = if dim == 1 { n } else { n * n };
        if values.len() != total {
            return Err(Error::Dimension(format!(
                "expected {total} samples, got {}",
                values.len()
            )));
        }
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let mut data: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        if dim == 1 {
            fft.process(&mut data);
        } else {
            for row in data.chunks_mut(n) {
                fft.process(row);
            }
            let mut col = vec![Complex::new(0.0, 0.0); n];
            for c in 0..n {
                for r in 0..n {
                    col[r] = data[r * n + c];
                }
                fft.process(&mut col);
                for r in 0..n {
                    data[r * n + c] = col[r];
                }
            }
        }
        let scale = 1.0 / total as f64;
        let freq = |i: usize| -> i32 {
            if i <= n / 2 {
                i as i32
            } else {
                i as i32 - n as i32
            }
        };
        let mut constant = 0.0;
        let mut modes = Vec::new();
        let max_abs = data.iter().map(|c| c.norm()).fold(0.0, f64::max) * scale;
        let cutoff = 1e-15 * max_abs.max(1e-300);
        for (idx, c) in data.iter().enumerate() {
            let c = c * scale;
            let (k1, k2) = if dim == 1 {
                (freq(idx), 0)
            } else {
                (freq(idx % n), freq(idx / n))
            };
            if k1 == 0 && k2 == 0 {
                constant = c.re;
                continue;
            }
            if c.norm() <= cutoff {
                continue;
            }
            // sum over all k of Re(c_k e^{2πik·q}) reproduces the real signal
            modes.push(Mode { k: [k1, k2], cos: c.re, sin: -c.im });
        }
        Ok(TrigSeries { dim, constant, modes })
    }

    #[inline]
    fn phase(&self, m: &Mode, q: &[f64; 2]) -> f64 {
        TAU * (m.k[0] as f64 * q[0] + if self.dim == 2 { m.k[1] as f64 * q[1] } else { 0.0 })
    }

    pub fn value(&self, q: &[f64; 2]) -> f64 {
        let mut s = self.constant;
        for m in &self.modes {
            let (sn, cs) = self.phase(m, q).sin_cos();
            s += m.cos * cs + m.sin * sn;
        }
        s
    }

    pub fn grad(&self, q: &[f64; 2]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for m in &self.modes {
            let (sn, cs) = self.phase(m, q).sin_cos();
            let d = -m.cos * sn + m.sin * cs;
            for i in 0..self.dim {
                g[i] += TAU * m.k[i] as f64 * d;
            }
        }
        g
    }

    pub fn hessian(&self, q: &[f64; 2]) -> [[f64; 2]; 2] {
        let mut h = [[0.0; 2]; 2];
        for m in &self.modes {
            let (sn, cs) = self.phase(m, q).sin_cos();
            let d2 = -(m.cos * cs + m.sin * sn);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    h[i][j] += TAU * TAU * (m.k[i] * m.k[j]) as f64 * d2;
                }
            }
        }
        h
    }
}

/// A symbolic function of `q` only, e.g. `0.1*sin(2*pi*q)`.
#[derive(Clone, Debug)]
pub struct SymbolicFn {
    pub dim: usize,
    pub expr: Expr,
    value: Compiled,
    grad: Vec<Compiled>,
    hess: Vec<Compiled>,
}

impl SymbolicFn {
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        let e = expr::parse(src, dim)?;
        Self::new(e, dim)
    }

    pub fn new(e: Expr, dim: usize) -> Result<Self> {
        for i in 0..dim {
            if e.depends_on(Var::P(i)) {
                return Err(Error::Precondition(
                    "periodic function must not depend on momenta".into(),
                ));
            }
        }
        let grad_e: Vec<Expr> = (0..dim).map(|i| e.derivative(Var::Q(i))).collect();
        let mut hess = Vec::new();
        for gi in &grad_e {
            for j in 0..dim {
                hess.push(Compiled::new(&gi.derivative(Var::Q(j))));
            }
        }
        let f = SymbolicFn {
            dim,
            value: Compiled::new(&e),
            grad: grad_e.iter().map(Compiled::new).collect(),
            hess,
            expr: e,
        };
        // periodicity probe
        for k in 0..7 {
            let x = 0.137 * k as f64 + 0.01;
            for i in 0..dim {
                let a = [x, 0.61 - 0.07 * k as f64, 0.0, 0.0];
                let mut b = a;
                b[i] += 1.0;
                let (fa, fb) = (f.value.eval(&a), f.value.eval(&b));
                if (fa - fb).abs() > 1e-9 * (1.0 + fa.abs()) {
                    return Err(Error::Precondition(format!(
                        "function '{}' is not 1-periodic in q{}",
                        f.expr,
                        i + 1
                    )));
                }
            }
        }
        Ok(f)
    }
}

/// Smooth periodic function with analytic derivatives.
#[derive(Clone, Debug)]
pub enum PeriodicFunction {
    Trig(TrigSeries),
    Symbolic(SymbolicFn),
}

impl PeriodicFunction {
    pub fn zero(dim: usize) -> Self {
        PeriodicFunction::Trig(TrigSeries::zero(dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            PeriodicFunction::Trig(t) => t.dim,
            PeriodicFunction::Symbolic(s) => s.dim,
        }
    }

    pub fn value(&self, q: &[f64; 2]) -> f64 {
        match self {
            PeriodicFunction::Trig(t) => t.value(q),
            PeriodicFunction::Symbolic(s) => s.value.eval(&[q[0], q[1], 0.0, 0.0]),
        }
    }

    pub fn grad(&self, q: &[f64; 2]) -> [f64; 2] {
        match self {
            PeriodicFunction::Trig(t) => t.grad(q),
            PeriodicFunction::Symbolic(s) => {
                let x = [q[0], q[1], 0.0, 0.0];
                let mut g = [0.0; 2];
                for (i, c) in s.grad.iter().enumerate() {
                    g[i] = c.eval(&x);
                }
                g
            }
        }
    }

    pub fn hessian(&self, q: &[f64; 2]) -> [[f64; 2]; 2] {
        match self {
            PeriodicFunction::Trig(t) => t.hessian(q),
            PeriodicFunction::Symbolic(s) => {
                let x = [q[0], q[1], 0.0, 0.0];
                let mut h = [[0.0; 2]; 2];
                for i in 0..s.dim {
                    for j in 0..s.dim {
                        h[i][j] = s.hess[i * s.dim + j].eval(&x);
                    }
                }
                h
            }
        }
    }

    /// Expression form, when one exists (symbolic functions and short series).
    pub fn to_expr(&self) -> Expr {
        match self {
            PeriodicFunction::Symbolic(s) => s.expr.clone(),
            PeriodicFunction::Trig(t) => {
                let mut e = Expr::Num(t.constant);
                for m in &t.modes {
                    let mut arg = Expr::Num(0.0);
                    for i in 0..t.dim {
                        if m.k[i] != 0 {
                            let term = Expr::Mul(
                                Box::new(Expr::Num(TAU * m.k[i] as f64)),
                                Box::new(Expr::Var(Var::Q(i))),
                            );
                            arg = Expr::Add(Box::new(arg), Box::new(term));
                        }
                    }
                    let c = Expr::Mul(
                        Box::new(Expr::Num(m.cos)),
                        Box::new(Expr::Call(expr::Func::Cos, Box::new(arg.clone()))),
                    );
                    let s = Expr::Mul(
                        Box::new(Expr::Num(m.sin)),
                        Box::new(Expr::Call(expr::Func::Sin, Box::new(arg))),
                    );
                    e = Expr::Add(Box::new(e), Box::new(Expr::Add(Box::new(c), Box::new(s))));
                }
                e
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_interpolation_recovers_trig_polynomial() {
        let n = 64;
        let f = |q: f64| 0.3 + 0.1 * (TAU * q).sin() - 0.05 * (3.0 * TAU * q).cos();
        let samples: Vec<f64> = (0..n).map(|j| f(j as f64 / n as f64)).collect();
        let t = TrigSeries::from_samples(1, n, &samples).unwrap();
        for x in [0.013, 0.5, 0.77] {
            assert!((t.value(&[x, 0.0]) - f(x)).abs() < 1e-13);
            let df = 0.1 * TAU * (TAU * x).cos() + 0.05 * 3.0 * TAU * (3.0 * TAU * x).sin();
            assert!((t.grad(&[x, 0.0])[0] - df).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_interpolation_2d() {
        let n = 16;
        let f = |a: f64, b: f64| (TAU * a).cos() * (TAU * b).sin() + 0.2 * (TAU * (a - 2.0 * b)).cos();
        let mut s = Vec::new();
        for r in 0..n {
            for c in 0..n {
                s.push(f(c as f64 / n as f64, r as f64 / n as f64));
            }
        }
        let t = TrigSeries::from_samples(2, n, &s).unwrap();
        let x = [0.31, 0.77];
        assert!((t.value(&x) - f(x[0], x[1])).abs() < 1e-13);
        let h = 1e-5;
        let fd = (f(x[0], x[1] + h) - f(x[0], x[1] - h)) / (2.0 * h);
        assert!((t.grad(&x)[1] - fd).abs() < 1e-8);
    }

    #[test]
    fn symbolic_requires_periodicity() {
        assert!(SymbolicFn::parse("0.1*sin(2*pi*q)", 1).is_ok());
        assert!(SymbolicFn::parse("q^2", 1).is_err());
        assert!(SymbolicFn::parse("p*q", 1).is_err());
    }

    #[test]
    fn series_to_expr_round_trip() {
        let t = TrigSeries::from_modes_1d(0.2, &[(1, 0.1, -0.3), (2, 0.0, 0.05)]);
        let f = PeriodicFunction::Trig(t.clone());
        let e = f.to_expr();
        let x = [0.417, 0.0];
        assert!((e.eval(&[x[0], 0.0, 0.0, 0.0]) - t.value(&x)).abs() < 1e-14);
    }
}

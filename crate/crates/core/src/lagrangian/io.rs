//! Plain-text Lagrangian files.
//!
//! ```text
//! dim 1 kind flowed
//! t q p S
//! ```
//!
//! Surfaces carry both parameters: `t1 t2 q1 q2 p1 p2 S`, with `t1` fastest.
//! Lines starting with `#` are comments; the loop closure is implied.

use std::io::{BufRead, Write};

use super::{curve_from_points, ExactLagrangian, Geometry, Surface, SurfaceSample};
use crate::error::{Error, Result};
use crate::linalg::circle_delta;
use crate::numeric::derivative_weights;

pub fn write_lagrangian<W: Write>(l: &ExactLagrangian, mut w: W) -> Result<()> {
    writeln!(w, "dim {} kind {}", l.dim(), l.kind().code())?;
    match l.geometry() {
        Geometry::Curve(c) => {
            writeln!(w, "# t q p S")?;
            for s in &c.samples {
                writeln!(w, "{:.17e} {:.17e} {:.17e} {:.17e}", s.t, s.q, s.p, s.s)?;
            }
        }
        Geometry::Surface(sf) => {
            writeln!(w, "# t1 t2 q1 q2 p1 p2 S")?;
            for s in &sf.samples {
                writeln!(
                    w,
                    "{:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
                    s.t[0], s.t[1], s.q[0], s.q[1], s.p[0], s.p[1], s.s
                )?;
            }
        }
    }
    Ok(())
}

/// Reads a file written by [`write_lagrangian`] (or by hand). Tangents are
/// rebuilt by five-point differences; primitive values are kept, shifted so
/// that the first row is the anchor.
pub fn read_lagrangian<R: BufRead>(r: R) -> Result<ExactLagrangian> {
    let mut dim = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fmt = |message: String| Error::Format { line: lineno + 1, message };
        if dim.is_none() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < 2 || toks[0] != "dim" {
                return Err(fmt("expected header `dim n kind K`".into()));
            }
            let d: usize = toks[1].parse().map_err(|_| fmt(format!("bad dimension '{}'", toks[1])))?;
            if d != 1 && d != 2 {
                return Err(fmt(format!("unsupported dimension {d}")));
            }
            dim = Some(d);
            continue;
        }
        let d = dim.unwrap();
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| fmt(format!("bad number '{t}'"))))
            .collect::<Result<Vec<f64>>>()?;
        let need = if d == 1 { 4 } else { 7 };
        if vals.len() != need {
            return Err(fmt(format!("expected {need} columns, got {}", vals.len())));
        }
        rows.push(vals);
    }
    let dim = dim.ok_or(Error::Format { line: 0, message: "missing header".into() })?;
    if dim == 1 {
        let pts: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r[0], r[1], r[2])).collect();
        let mut curve = curve_from_points(&pts)?;
        let s0 = rows[0][3];
        for (s, r) in curve.samples.iter_mut().zip(&rows) {
            s.s = r[3] - s0;
        }
        ExactLagrangian::from_curve(curve)
    } else {
        read_surface(&rows)
    }
}

fn read_surface(rows: &[Vec<f64>]) -> Result<ExactLagrangian> {
    let total = rows.len();
    let m = (total as f64).sqrt().round() as usize;
    if m * m != total || m < 5 {
        return Err(Error::Format { line: 0, message: format!("{total} rows do not form a square grid") });
    }
    let h = 1.0 / m as f64;
    let s0 = rows[0][6];
    let at = |i: usize, j: usize| &rows[(j % m) * m + (i % m)];
    let offsets: Vec<f64> = (-2..=2).map(|k| k as f64 * h).collect();
    let w = derivative_weights(0.0, &offsets);
    let mut samples = Vec::with_capacity(total);
    for j in 0..m {
        for i in 0..m {
            let r = at(i, j);
            let mut dq = [[0.0; 2]; 2];
            let mut dp = [[0.0; 2]; 2];
            for dir in 0..2 {
                for (k, wk) in w.iter().enumerate() {
                    let off = k as isize - 2;
                    let (ii, jj) = if dir == 0 {
                        ((i as isize + off).rem_euclid(m as isize) as usize, j)
                    } else {
                        (i, (j as isize + off).rem_euclid(m as isize) as usize)
                    };
                    let nb = at(ii, jj);
                    for c in 0..2 {
                        // lift the neighbour's base point next to the centre
                        let q = r[2 + c] + circle_delta(r[2 + c], nb[2 + c]);
                        dq[c][dir] += wk * q;
                        dp[c][dir] += wk * nb[4 + c];
                    }
                }
            }
            samples.push(SurfaceSample {
                t: [r[0], r[1]],
                q: [r[2], r[3]],
                p: [r[4], r[5]],
                s: r[6] - s0,
                dq,
                dp,
            });
        }
    }
    ExactLagrangian::from_surface(Surface { m, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::{PeriodicFunction, SymbolicFn};

    #[test]
    fn curve_round_trip() {
        let v = PeriodicFunction::Symbolic(SymbolicFn::parse("0.1*sin(2*pi*q)", 1).unwrap());
        let l = ExactLagrangian::from_function(v, 128).unwrap();
        let mut buf = Vec::new();
        write_lagrangian(&l, &mut buf).unwrap();
        let r = read_lagrangian(&buf[..]).unwrap();
        let (a, b) = (l.curve().unwrap(), r.curve().unwrap());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!((x.t, x.q, x.p, x.s), (y.t, y.q, y.p, y.s));
            assert!((x.dq - y.dq).abs() < 1e-5 && (x.dp - y.dp).abs() < 1e-3);
        }
    }

    #[test]
    fn bad_rows_name_the_line() {
        let src = "dim 1 kind graph\n0 0 0\n";
        match read_lagrangian(src.as_bytes()) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}

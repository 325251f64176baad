//! Graph selectors: discrete-action minimax values, selector assembly on a
//! base grid, verification, and generalized selectors of Lipschitz-exact
//! limits.

mod action;
mod generalized;
mod sections;

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::front::{FiberData, FiberPoint, Front, GAP_TOL};
use crate::lagrangian::ExactLagrangian;
use crate::linalg::{circle_delta, torus_dist};

pub use crate::hull::{convexify_fiber, FiberHull};
pub use action::{
    build_discrete_action, CriticalPoint, DiscreteAction, LatticeOptions, Route, SpectralValue, MAX_LATTICE_VARS,
};
pub use generalized::{def51_check, generalized_selector, level_selector, Def51Report, GeneralizedSelector, DIFF_TOL};
pub use sections::{selector_from_front, FrontSections};

/// Largest distance to the spectrum at which a value is snapped to it.
pub const SNAP_TOL: f64 = 1e-4;
/// Sup-distance between consecutive selectors accepted as convergence.
pub const CONV_TOL: f64 = 1e-3;
/// Tolerance for the selector residuals.
pub const C_TOL: f64 = 1e-3;
/// Collar half-width (grid steps) excluded around caustics and Maxwell points.
pub const COLLAR_STEPS: usize = 2;
/// Slack added to `max |p|` when certifying the Lipschitz constant.
pub const LIP_MARGIN: f64 = 1e-2;
/// Smallest selector grid per dimension.
pub const MIN_SELECTOR_GRID: usize = 256;
/// Half-width of the offset window used to certify Lipschitz constants on
/// two-dimensional grids.
const LIP_WINDOW_2D: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    /// Value read from the sheet `(arc, lift)` of the front.
    Sheet { arc: usize, lift: i64 },
    /// Raw minimax value kept without snapping.
    Minimax,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Sheet { arc, lift } => write!(f, "sheet:{arc}:{lift}"),
            Provenance::Minimax => write!(f, "minimax"),
        }
    }
}

/// A function sampled on the uniform grid `k/n` (`i + n·j` in 2-d).
#[derive(Clone, Debug, Serialize)]
pub struct SelectorFunction {
    pub dim: usize,
    pub n: usize,
    pub values: Vec<f64>,
    pub lipschitz_const: f64,
    pub lip_local: Vec<f64>,
    pub provenance: Vec<Provenance>,
    /// Points where the snap was ambiguous.
    pub flagged: Vec<bool>,
    /// Raw primitive value subtracted from all values.
    pub anchor: f64,
    /// Fiber point whose primitive value was selected.
    pub selected: Vec<Option<FiberPoint>>,
    /// Spectrum at each grid point.
    pub spectra: Vec<Vec<f64>>,
}

impl SelectorFunction {
    /// Assembles a selector and certifies its Lipschitz constant.
    pub fn new(
        dim: usize,
        n: usize,
        values: Vec<f64>,
        provenance: Vec<Provenance>,
        selected: Vec<Option<FiberPoint>>,
        spectra: Vec<Vec<f64>>,
        anchor: f64,
    ) -> Self {
        let (lipschitz_const, lip_local) = certified_lipschitz(dim, n, &values);
        let flagged = vec![false; values.len()];
        SelectorFunction { dim, n, values, lipschitz_const, lip_local, provenance, flagged, anchor, selected, spectra }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid_point(&self, k: usize) -> [f64; 2] {
        grid_point(self.dim, self.n, k)
    }

    /// Grid step.
    pub fn step(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// `sup |f − g|` over the common grid.
    pub fn sup_distance(&self, other: &SelectorFunction) -> Result<f64> {
        if self.dim != other.dim || self.n != other.n {
            return Err(Error::Dimension("selectors live on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// `max_k min_{s ∈ Spec} |f(q_k) − s|`.
    pub fn tightness(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.spectra)
            .map(|(f, sp)| sp.iter().map(|s| (f - s).abs()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }

    /// Indices where the provenance changes to the next grid point along
    /// some axis, or where the value is flagged.
    pub fn transitions(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| {
                self.flagged[k]
                    || neighbors(self.dim, self.n, k).iter().any(|&j| self.provenance[j] != self.provenance[k])
            })
            .collect()
    }

    /// Corners inside one sheet label (an arc that wraps the circle can be
    /// selected at two parameters): one-sided slopes both within
    /// `slope_bound` that differ by more than `20(1 + slope_bound)/n`.
    pub fn corners(&self, slope_bound: f64) -> Vec<usize> {
        let h = self.step();
        let tol = 20.0 * (1.0 + slope_bound) / self.n as f64;
        (0..self.len())
            .filter(|&k| {
                let nb = neighbors(self.dim, self.n, k);
                (0..self.dim).any(|c| {
                    let fwd = (self.values[nb[2 * c + 1]] - self.values[k]) / h;
                    let bwd = (self.values[k] - self.values[nb[2 * c]]) / h;
                    fwd.abs() <= slope_bound && bwd.abs() <= slope_bound && (fwd - bwd).abs() > tol
                })
            })
            .collect()
    }

    /// `q [q2] f provenance lip_local` rows.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        if self.dim == 1 {
            writeln!(w, "# q f provenance lip_local")?;
        } else {
            writeln!(w, "# q1 q2 f provenance lip_local")?;
        }
        for k in 0..self.len() {
            let q = self.grid_point(k);
            if self.dim == 1 {
                write!(w, "{:.17e}", q[0])?;
            } else {
                write!(w, "{:.17e} {:.17e}", q[0], q[1])?;
            }
            writeln!(w, " {:.17e} {} {:.17e}", self.values[k], self.provenance[k], self.lip_local[k])?;
        }
        Ok(())
    }

    /// JSON lines: the verification report (if any) first, then one object
    /// per grid point.
    pub fn write_jsonl<W: Write>(&self, mut w: W, report: Option<&SelectorReport>) -> Result<()> {
        if let Some(r) = report {
            writeln!(w, "{}", serde_json::json!({ "report": r }))?;
        }
        for k in 0..self.len() {
            let q = self.grid_point(k);
            let row = serde_json::json!({
                "q": &q[..self.dim],
                "f": self.values[k],
                "provenance": self.provenance[k],
                "lip_local": self.lip_local[k],
                "flagged": self.flagged[k],
            });
            writeln!(w, "{row}")?;
        }
        Ok(())
    }
}

pub(crate) fn grid_point(dim: usize, n: usize, k: usize) -> [f64; 2] {
    if dim == 1 {
        [k as f64 / n as f64, 0.0]
    } else {
        [(k % n) as f64 / n as f64, (k / n) as f64 / n as f64]
    }
}

pub(crate) fn grid_len(dim: usize, n: usize) -> usize {
    if dim == 1 {
        n
    } else {
        n * n
    }
}

/// Periodic axis neighbours of grid index `k`.
pub(crate) fn neighbors(dim: usize, n: usize, k: usize) -> Vec<usize> {
    if dim == 1 {
        vec![(k + n - 1) % n, (k + 1) % n]
    } else {
        let (i, j) = (k % n, k / n);
        vec![
            (i + n - 1) % n + n * j,
            (i + 1) % n + n * j,
            i + n * ((j + n - 1) % n),
            i + n * ((j + 1) % n),
        ]
    }
}

/// Largest difference quotient over grid pairs in flat-torus distance: all
/// consecutive pairs in 1-d (which bounds every pair), and all pairs within
/// an offset window in 2-d. Also returns the per-point maximum over pairs
/// containing the point.
pub(crate) fn certified_lipschitz(dim: usize, n: usize, values: &[f64]) -> (f64, Vec<f64>) {
    let h = 1.0 / n as f64;
    let local: Vec<f64> = if dim == 1 {
        let slope: Vec<f64> = (0..n).map(|k| (values[(k + 1) % n] - values[k]).abs() / h).collect();
        (0..n).map(|k| slope[k].max(slope[(k + n - 1) % n])).collect()
    } else {
        let r = LIP_WINDOW_2D.min(n / 2) as i64;
        let ni = n as i64;
        (0..n * n)
            .into_par_iter()
            .map(|k| {
                let (i, j) = ((k % n) as i64, (k / n) as i64);
                let mut best = 0.0f64;
                for dj in -r..=r {
                    for di in -r..=r {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let o = ((i + di).rem_euclid(ni) + ni * (j + dj).rem_euclid(ni)) as usize;
                        let d = h * ((di * di + dj * dj) as f64).sqrt();
                        best = best.max((values[o] - values[k]).abs() / d);
                    }
                }
                best
            })
            .collect()
    };
    (local.iter().cloned().fold(0.0, f64::max), local)
}

/// The selector `f_L` of a flowed graph on the uniform grid with `n` points
/// per dimension: the minimax critical value at each base point (read from
/// the discrete action when the flow is a single mechanical stage), snapped
/// to the spectrum of the front.
pub fn graph_selector(l: &ExactLagrangian, n: usize) -> Result<SelectorFunction> {
    let v = l
        .graph_function()
        .ok_or_else(|| Error::Unsupported("graph_selector needs a Lagrangian built from a graph".into()))?;
    if n < MIN_SELECTOR_GRID {
        return Err(Error::GridTooCoarse { got: n, need: MIN_SELECTOR_GRID });
    }
    let dim = l.dim();
    let front = Front::new(l)?;
    let stage = match l.stages() {
        [] => None,
        [s] if s.hamiltonian.is_mechanical() => Some(s),
        _ => None,
    };
    let rows = (0..grid_len(dim, n))
        .into_par_iter()
        .map(|k| -> Result<(f64, Provenance, bool, Option<FiberPoint>, Vec<f64>)> {
            let q = grid_point(dim, n, k);
            let fiber = front.fiber(q, GAP_TOL)?;
            let raw = match stage {
                Some(s) => {
                    let da = build_discrete_action(&s.hamiltonian, v, s.time, s.steps, q)?;
                    da.spectral_value_with(&front)?.value - l.anchor_offset()
                }
                None => fiber
                    .points
                    .first()
                    .map(|x| x.h)
                    .ok_or_else(|| Error::Precondition(format!("empty fiber over {q:?}")))?,
            };
            let (value, prov, flag, sel) = snap(raw, &fiber);
            Ok((value, prov, flag, sel, fiber.spectrum()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(rows.len());
    let mut provenance = Vec::with_capacity(rows.len());
    let mut flagged = Vec::with_capacity(rows.len());
    let mut selected = Vec::with_capacity(rows.len());
    let mut spectra = Vec::with_capacity(rows.len());
    for (f, p, fl, s, sp) in rows {
        values.push(f);
        provenance.push(p);
        flagged.push(fl);
        selected.push(s);
        spectra.push(sp);
    }
    let mut sel = SelectorFunction::new(dim, n, values, provenance, selected, spectra, l.anchor_offset());
    sel.flagged = flagged;
    Ok(sel)
}

/// Snaps `raw` to the unique spectrum value within `SNAP_TOL`; ambiguous or
/// missing matches keep the raw value.
fn snap(raw: f64, fiber: &FiberData) -> (f64, Provenance, bool, Option<FiberPoint>) {
    let close: Vec<&FiberPoint> = fiber.points.iter().filter(|x| (x.h - raw).abs() <= SNAP_TOL).collect();
    match close.as_slice() {
        [x] => (x.h, Provenance::Sheet { arc: x.arc, lift: x.lift }, false, Some((*x).clone())),
        [] => (raw, Provenance::Minimax, true, None),
        many => {
            let x = many
                .iter()
                .min_by(|a, b| (a.h - raw).abs().total_cmp(&(b.h - raw).abs()))
                .expect("nonempty");
            (raw, Provenance::Minimax, true, Some((*x).clone()))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectorReport {
    /// Grid points checked (outside the collars).
    pub checked: usize,
    pub excluded: usize,
    /// `max dist((q, df(q)), L)` over checked points.
    pub max_distance: f64,
    /// `max |f(q) − h(q, df(q))|`, taking the best fiber point whose
    /// momentum is within `C_TOL` of the nearest one.
    pub max_value_residual: f64,
    /// `max |f(q) − h|` on the recorded selected sheet.
    pub max_sheet_residual: f64,
    /// Grid point of the largest sheet residual.
    pub worst_sheet_point: Option<Vec<f64>>,
    pub lipschitz_const: f64,
    pub lipschitz_bound: f64,
    pub tightness: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Checks the defining properties of a graph selector on the grid of `f`,
/// away from collars of `COLLAR_STEPS` grid steps around caustics and
/// around Maxwell points (provenance changes, corners and flagged points).
pub fn verify_selector(f: &SelectorFunction, l: &ExactLagrangian) -> Result<SelectorReport> {
    if f.dim != l.dim() {
        return Err(Error::Dimension("selector and Lagrangian dimensions differ".into()));
    }
    let front = Front::new(l)?;
    let excluded = collar_mask(f, &front);
    let h = f.step();
    let n = f.n;
    let rows = (0..f.len())
        .into_par_iter()
        .filter(|&k| !excluded[k])
        .map(|k| -> Result<(usize, f64, f64, f64)> {
            let q = f.grid_point(k);
            let fiber = front.fiber(q, GAP_TOL)?;
            let df = centered_gradient(f, k, h, n);
            let nearest = fiber.points.iter().min_by(|a, b| pdist(a, df, f.dim).total_cmp(&pdist(b, df, f.dim)));
            let Some(x) = nearest else {
                return Ok((k, f64::INFINITY, f64::INFINITY, f64::INFINITY));
            };
            let dist = pdist(x, df, f.dim);
            // sheets whose momenta agree with df to C_TOL are equally good witnesses
            let value_res = fiber
                .points
                .iter()
                .filter(|y| pdist(y, df, f.dim) <= dist + C_TOL)
                .map(|y| (f.values[k] - y.h).abs())
                .fold(f64::INFINITY, f64::min);
            let sheet_res = match &f.selected[k] {
                Some(sel) => {
                    let on_sheet = fiber
                        .points
                        .iter()
                        .min_by(|a, b| torus_dist(&a.t[..f.dim], &sel.t[..f.dim]).total_cmp(&torus_dist(&b.t[..f.dim], &sel.t[..f.dim])))
                        .expect("nonempty fiber");
                    (f.values[k] - on_sheet.h).abs()
                }
                None => value_res,
            };
            Ok((k, dist, value_res, sheet_res))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rep = SelectorReport {
        checked: rows.len(),
        excluded: f.len() - rows.len(),
        max_distance: 0.0,
        max_value_residual: 0.0,
        max_sheet_residual: 0.0,
        worst_sheet_point: None,
        lipschitz_const: f.lipschitz_const,
        lipschitz_bound: l.pmax() + LIP_MARGIN,
        tightness: f.tightness(),
        tol: C_TOL,
        pass: false,
    };
    for (k, d, v, s) in rows {
        rep.max_distance = rep.max_distance.max(d);
        rep.max_value_residual = rep.max_value_residual.max(v);
        if rep.worst_sheet_point.is_none() || s > rep.max_sheet_residual {
            rep.worst_sheet_point = Some(f.grid_point(k)[..f.dim].to_vec());
            rep.max_sheet_residual = s;
        }
    }
    rep.pass = rep.max_distance <= C_TOL
        && rep.max_value_residual <= C_TOL
        && rep.max_sheet_residual <= C_TOL
        && rep.lipschitz_const <= rep.lipschitz_bound
        && rep.tightness <= SNAP_TOL;
    Ok(rep)
}

fn pdist(x: &FiberPoint, df: [f64; 2], dim: usize) -> f64 {
    (0..dim).map(|c| (x.p[c] - df[c]).powi(2)).sum::<f64>().sqrt()
}

/// Periodic centered differences of a grid function.
pub(crate) fn centered_gradient(f: &SelectorFunction, k: usize, h: f64, n: usize) -> [f64; 2] {
    let nb = neighbors(f.dim, n, k);
    let mut g = [0.0; 2];
    for c in 0..f.dim {
        g[c] = (f.values[nb[2 * c + 1]] - f.values[nb[2 * c]]) / (2.0 * h);
    }
    g
}

/// Grid points within `COLLAR_STEPS` steps of a caustic or of a Maxwell
/// point of `f` (provenance change or corner).
pub(crate) fn collar_mask(f: &SelectorFunction, front: &Front) -> Vec<bool> {
    let n = f.n;
    let h = f.step();
    let radius = COLLAR_STEPS as f64 * h + 1e-12;
    let mut mask = vec![false; f.len()];
    let mark = |center: [f64; 2], mask: &mut Vec<bool>| {
        if f.dim == 1 {
            let c = (center[0] * n as f64).round() as i64;
            for d in -(COLLAR_STEPS as i64) - 1..=COLLAR_STEPS as i64 + 1 {
                let k = (c + d).rem_euclid(n as i64) as usize;
                if circle_delta(center[0], f.grid_point(k)[0]).abs() <= radius {
                    mask[k] = true;
                }
            }
        } else {
            let ci = (center[0] * n as f64).round() as i64;
            let cj = (center[1] * n as f64).round() as i64;
            let r = COLLAR_STEPS as i64 + 1;
            for dj in -r..=r {
                for di in -r..=r {
                    let i = (ci + di).rem_euclid(n as i64) as usize;
                    let j = (cj + dj).rem_euclid(n as i64) as usize;
                    let k = i + n * j;
                    if torus_dist(&center, &f.grid_point(k)) <= radius {
                        mask[k] = true;
                    }
                }
            }
        }
    };
    for q in front.caustic_values() {
        mark([q, 0.0], &mut mask);
    }
    for c in front.caustic_points() {
        mark(*c, &mut mask);
    }
    for k in f.transitions() {
        mark(f.grid_point(k), &mut mask);
    }
    for k in f.corners(front.lagrangian().pmax() + LIP_MARGIN) {
        mark(f.grid_point(k), &mut mask);
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::{PeriodicFunction, SymbolicFn};
    use crate::hamiltonian::HamiltonianSpec;
    use crate::lagrangian::FlowOptions;

    fn sym(s: &str) -> PeriodicFunction {
        PeriodicFunction::Symbolic(SymbolicFn::parse(s, 1).unwrap())
    }

    #[test]
    fn graph_selector_of_a_graph_is_v() {
        let v = sym("0.1*sin(2*pi*q) + 0.03*cos(4*pi*q)");
        let l = ExactLagrangian::from_function(v.clone(), 256).unwrap();
        let f = graph_selector(&l, 256).unwrap();
        let v0 = v.value(&[0.0, 0.0]);
        for k in 0..256 {
            let q = f.grid_point(k);
            assert!((f.values[k] - (v.value(&q) - v0)).abs() < 1e-12);
        }
        let rep = verify_selector(&f, &l).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_eq!(rep.excluded, 0);
        assert!(rep.max_distance < 1e-3 && rep.max_sheet_residual < 1e-12);
    }

    #[test]
    fn coarse_grid_rejected() {
        let l = ExactLagrangian::from_function(PeriodicFunction::zero(1), 64).unwrap();
        assert!(matches!(graph_selector(&l, 64), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn whorled_selector_verifies() {
        let h = HamiltonianSpec::parse("p^2/2 + cos(2*pi*q)", 1).unwrap();
        let l = ExactLagrangian::from_flow(sym("0"), &h, 3.0, 3000, &FlowOptions::default()).unwrap();
        let f = graph_selector(&l, 512).unwrap();
        assert!(f.tightness() <= SNAP_TOL);
        let rep = verify_selector(&f, &l).unwrap();
        assert!(rep.pass, "{rep:?}");
        // a wrong sheet on an interval shows up as a sheet residual
        let mut bad = f.clone();
        let k0 = (0..bad.len())
            .find(|&k| bad.spectra[k].len() >= 3 && bad.provenance[k] != Provenance::Minimax && bad.transitions().iter().all(|&j| j.abs_diff(k) > 8))
            .expect("a multi-sheet point");
        for k in k0..k0 + 4 {
            let sp = &bad.spectra[k];
            bad.values[k] = sp[sp.len() - 1];
        }
        let rep = verify_selector(&bad, &l).unwrap();
        assert!(!rep.pass);
        assert!(rep.max_sheet_residual > 1e-2);
    }

    #[test]
    fn table_output_has_one_row_per_point() {
        let l = ExactLagrangian::from_function(sym("0.1*sin(2*pi*q)"), 256).unwrap();
        let f = graph_selector(&l, 256).unwrap();
        let mut buf = Vec::new();
        f.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 257);
        assert!(text.lines().nth(1).unwrap().contains("sheet:0:0"));
        let mut buf = Vec::new();
        f.write_jsonl(&mut buf, None).unwrap();
        let first: serde_json::Value = serde_json::from_str(String::from_utf8(buf).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(first["provenance"]["kind"], "sheet");
    }
}

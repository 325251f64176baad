//! Continuous sections of the front through its Maxwell points, assembled on
//! a closed chain of fibers over the base circle.

use rayon::prelude::*;

use super::{grid_point, Provenance, SelectorFunction};
use crate::error::{Error, Result};
use crate::front::{FiberData, Front, GAP_TOL};
use crate::lagrangian::ExactLagrangian;
use crate::linalg::circle_delta;

/// Largest number of candidate sections enumerated without calibration.
pub const MAX_CANDIDATES: usize = 64;

#[derive(Clone, Debug)]
pub struct FrontSections {
    pub candidates: Vec<SelectorFunction>,
    /// Index of the calibrated section.
    pub selected: Option<usize>,
    /// `max |f − ref|` of the calibrated section.
    pub calibration_error: Option<f64>,
    /// Enumeration stopped at `MAX_CANDIDATES`.
    pub truncated: bool,
}

impl FrontSections {
    /// The calibrated section, or the only candidate.
    pub fn unique(self) -> Result<SelectorFunction> {
        match (self.selected, self.candidates.len()) {
            (Some(i), _) => Ok(self.candidates.into_iter().nth(i).expect("selected index")),
            (None, 1) => Ok(self.candidates.into_iter().next().expect("one candidate")),
            (None, count) => Err(Error::AmbiguousSections { count }),
        }
    }
}

/// Layered graph: `edges[k][i]` lists successors of node `i` of layer `k`
/// in layer `k + 1 (mod n)`.
struct SectionGraph {
    fibers: Vec<FiberData>,
    edges: Vec<Vec<Vec<usize>>>,
}

impl SectionGraph {
    fn build(front: &Front, n: usize) -> Result<Self> {
        let fibers = (0..n)
            .into_par_iter()
            .map(|k| front.fiber(grid_point(1, n, k), GAP_TOL))
            .collect::<Result<Vec<_>>>()?;
        let mut edges = Vec::with_capacity(n);
        for k in 0..n {
            let (a, b) = (&fibers[k], &fibers[(k + 1) % n]);
            let cont = continuations(a, b);
            let mut out: Vec<Vec<usize>> = vec![Vec::new(); a.points.len()];
            for &(i, j) in &cont {
                out[i].push(j);
            }
            // a sign change of h_i − h_j between the layers is a crossing:
            // a section may switch there
            for x in 0..cont.len() {
                for y in 0..cont.len() {
                    let ((i, j), (i2, j2)) = (cont[x], cont[y]);
                    if i == i2 {
                        continue;
                    }
                    let before = a.points[i].h - a.points[i2].h;
                    let after = b.points[j].h - b.points[j2].h;
                    if before == 0.0 || after == 0.0 || before.signum() != after.signum() {
                        out[i].push(j2);
                    }
                }
            }
            for o in out.iter_mut() {
                o.sort_unstable();
                o.dedup();
            }
            edges.push(out);
        }
        Ok(SectionGraph { fibers, edges })
    }

    fn n(&self) -> usize {
        self.fibers.len()
    }

    /// `alive[k][i]`: node `(k, i)` reaches the start node `s` of layer 0
    /// after the last layer.
    fn alive_towards(&self, s: usize) -> Vec<Vec<bool>> {
        let n = self.n();
        let mut alive: Vec<Vec<bool>> = self.fibers.iter().map(|f| vec![false; f.points.len()]).collect();
        for i in 0..alive[n - 1].len() {
            alive[n - 1][i] = self.edges[n - 1][i].contains(&s);
        }
        for k in (0..n - 1).rev() {
            for i in 0..alive[k].len() {
                alive[k][i] = self.edges[k][i].iter().any(|&j| alive[k + 1][j]);
            }
        }
        alive
    }

    /// Closed path minimizing `max_k |h − reference_k|`.
    fn calibrated(&self, reference: &[f64]) -> Option<(Vec<usize>, f64)> {
        let n = self.n();
        let cost = |k: usize, i: usize| (self.fibers[k].points[i].h - reference[k]).abs();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for s in 0..self.fibers[0].points.len() {
            let alive = self.alive_towards(s);
            if !alive[0][s] {
                continue;
            }
            let mut val: Vec<Vec<f64>> = self.fibers.iter().map(|f| vec![f64::INFINITY; f.points.len()]).collect();
            let mut pred: Vec<Vec<usize>> = self.fibers.iter().map(|f| vec![usize::MAX; f.points.len()]).collect();
            val[0][s] = cost(0, s);
            for k in 0..n - 1 {
                for i in 0..val[k].len() {
                    if !val[k][i].is_finite() {
                        continue;
                    }
                    for &j in &self.edges[k][i] {
                        if !alive[k + 1][j] {
                            continue;
                        }
                        let c = val[k][i].max(cost(k + 1, j));
                        if c < val[k + 1][j] {
                            val[k + 1][j] = c;
                            pred[k + 1][j] = i;
                        }
                    }
                }
            }
            let end = (0..val[n - 1].len())
                .filter(|&i| alive[n - 1][i] && val[n - 1][i].is_finite())
                .min_by(|&a, &b| val[n - 1][a].total_cmp(&val[n - 1][b]));
            if let Some(mut i) = end {
                let c = val[n - 1][i];
                if best.as_ref().is_none_or(|b| c < b.1) {
                    let mut path = vec![0; n];
                    for k in (0..n).rev() {
                        path[k] = i;
                        if k > 0 {
                            i = pred[k][i];
                        }
                    }
                    best = Some((path, c));
                }
            }
        }
        best
    }

    /// All closed paths, up to `cap`.
    fn enumerate(&self, cap: usize) -> (Vec<Vec<usize>>, bool) {
        let n = self.n();
        let mut out = Vec::new();
        for s in 0..self.fibers[0].points.len() {
            let alive = self.alive_towards(s);
            if !alive[0][s] {
                continue;
            }
            // depth-first over live nodes; every branch closes
            let mut path = vec![s];
            let mut cursor = vec![0usize];
            while let Some(&c) = cursor.last() {
                let k = path.len() - 1;
                if k == n - 1 {
                    out.push(path.clone());
                    if out.len() >= cap {
                        return (out, true);
                    }
                    path.pop();
                    cursor.pop();
                    continue;
                }
                let succ: Vec<usize> =
                    self.edges[k][path[k]].iter().cloned().filter(|&j| alive[k + 1][j]).collect();
                if c < succ.len() {
                    *cursor.last_mut().expect("nonempty") += 1;
                    path.push(succ[c]);
                    cursor.push(0);
                } else {
                    path.pop();
                    cursor.pop();
                }
            }
        }
        (out, false)
    }

    fn section(&self, l: &ExactLagrangian, path: &[usize]) -> SelectorFunction {
        let n = self.n();
        let mut values = Vec::with_capacity(n);
        let mut provenance = Vec::with_capacity(n);
        let mut selected = Vec::with_capacity(n);
        for (k, &i) in path.iter().enumerate() {
            let x = &self.fibers[k].points[i];
            values.push(x.h);
            provenance.push(Provenance::Sheet { arc: x.arc, lift: x.lift });
            selected.push(Some(x.clone()));
        }
        let spectra = self.fibers.iter().map(|f| f.spectrum()).collect();
        SelectorFunction::new(1, n, values, provenance, selected, spectra, l.anchor_offset())
    }
}

/// Pairs `(i, j)` of points on the same arc that are mutually nearest in
/// the curve parameter.
fn continuations(a: &FiberData, b: &FiberData) -> Vec<(usize, usize)> {
    let nearest = |x: &FiberData, y: &FiberData, i: usize| -> Option<usize> {
        let p = &x.points[i];
        (0..y.points.len())
            .filter(|&j| y.points[j].arc == p.arc)
            .min_by(|&j, &k| {
                circle_delta(p.t[0], y.points[j].t[0])
                    .abs()
                    .total_cmp(&circle_delta(p.t[0], y.points[k].t[0]).abs())
            })
    };
    (0..a.points.len())
        .filter_map(|i| {
            let j = nearest(a, b, i)?;
            (nearest(b, a, j) == Some(i)).then_some((i, j))
        })
        .collect()
}

/// Continuous sections of the front of a curve on the grid `k/n`, following
/// sheets by parameter continuity and switching only where two spectrum
/// values cross. With a `calibration` (one value per grid point) the section
/// closest to it in sup-norm is selected; otherwise every candidate is
/// reported, up to `MAX_CANDIDATES`.
pub fn selector_from_front(l: &ExactLagrangian, n: usize, calibration: Option<&[f64]>) -> Result<FrontSections> {
    if l.dim() != 1 {
        return Err(Error::Dimension("sections are assembled over a one-dimensional base".into()));
    }
    if n < 8 {
        return Err(Error::GridTooCoarse { got: n, need: 8 });
    }
    if let Some(c) = calibration {
        if c.len() != n {
            return Err(Error::Dimension(format!("calibration has {} values for {n} grid points", c.len())));
        }
    }
    let front = Front::new(l)?;
    let graph = SectionGraph::build(&front, n)?;
    if graph.fibers.iter().any(|f| f.points.is_empty()) {
        return Err(Error::NoSection("a fiber of the front is empty".into()));
    }
    match calibration {
        Some(reference) => {
            let (path, err) = graph
                .calibrated(reference)
                .ok_or_else(|| Error::NoSection("no closed path through the continuation graph".into()))?;
            Ok(FrontSections {
                candidates: vec![graph.section(l, &path)],
                selected: Some(0),
                calibration_error: Some(err),
                truncated: false,
            })
        }
        None => {
            let (paths, truncated) = graph.enumerate(MAX_CANDIDATES);
            if paths.is_empty() {
                return Err(Error::NoSection("no closed path through the continuation graph".into()));
            }
            // paths that differ only in where they pass a tie give the same function
            let mut candidates: Vec<SelectorFunction> = Vec::new();
            for p in &paths {
                let c = graph.section(l, p);
                if !candidates.iter().any(|d| d.values == c.values) {
                    candidates.push(c);
                }
            }
            Ok(FrontSections { candidates, selected: None, calibration_error: None, truncated })
        }
    }
}

/// Section through the lowest point of every fiber where one exists, else
/// the closed section nearest to those lowest values.
pub(crate) fn lowest_section(l: &ExactLagrangian, n: usize) -> Result<SelectorFunction> {
    let front = Front::new(l)?;
    let graph = SectionGraph::build(&front, n)?;
    let mins = graph
        .fibers
        .iter()
        .enumerate()
        .map(|(k, f)| {
            f.points.first().map(|x| x.h).ok_or_else(|| Error::NoSection(format!("empty fiber at grid point {k}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let (path, _) = graph
        .calibrated(&mins)
        .ok_or_else(|| Error::NoSection("no closed path through the continuation graph".into()))?;
    Ok(graph.section(l, &path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::{PeriodicFunction, SymbolicFn};
    use crate::hamiltonian::HamiltonianSpec;
    use crate::lagrangian::FlowOptions;
    use crate::selector::graph_selector;

    #[test]
    fn graph_has_one_section() {
        let v = PeriodicFunction::Symbolic(SymbolicFn::parse("0.1*sin(2*pi*q)", 1).unwrap());
        let l = ExactLagrangian::from_function(v, 128).unwrap();
        let s = selector_from_front(&l, 64, None).unwrap();
        assert_eq!(s.candidates.len(), 1);
        let f = s.unique().unwrap();
        assert!((f.values[16] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn whorled_sections_match_graph_selector() {
        let h = HamiltonianSpec::parse("p^2/2 + cos(2*pi*q)", 1).unwrap();
        let l = ExactLagrangian::from_flow(PeriodicFunction::zero(1), &h, 3.0, 3000, &FlowOptions::default()).unwrap();
        let g = graph_selector(&l, 256).unwrap();
        let s = selector_from_front(&l, 256, Some(&g.values)).unwrap();
        assert!(s.calibration_error.unwrap() <= 1e-4);
        let f = s.unique().unwrap();
        assert!(f.sup_distance(&g).unwrap() <= 1e-4);
        let all = selector_from_front(&l, 256, None).unwrap();
        assert_eq!(all.candidates.len(), 1);
        assert!(all.candidates[0].sup_distance(&g).unwrap() <= 1e-4);
    }

    #[test]
    fn double_cover_reports_two_sections() {
        // q = 2t with p = a·sin(2πt): two sheets exchanging at q = 1/2
        let a = 0.2;
        let pts: Vec<(f64, f64, f64)> = (0..512)
            .map(|i| {
                let t = i as f64 / 512.0;
                (t, (2.0 * t).rem_euclid(1.0), a * (std::f64::consts::TAU * t).sin())
            })
            .collect();
        let l = ExactLagrangian::from_parametric(&pts).unwrap();
        let s = selector_from_front(&l, 64, None).unwrap();
        assert_eq!(s.candidates.len(), 2);
        assert!(!s.truncated);
        assert!(matches!(s.clone().unique(), Err(Error::AmbiguousSections { count: 2 })));
        let (lo, hi) = if s.candidates[0].values[0] < s.candidates[1].values[0] { (0, 1) } else { (1, 0) };
        for k in 0..64 {
            let sp = &s.candidates[lo].spectra[k];
            assert!((s.candidates[lo].values[k] - sp[0]).abs() < 1e-12);
            assert!((s.candidates[hi].values[k] - sp[sp.len() - 1]).abs() < 1e-12);
        }
    }
}

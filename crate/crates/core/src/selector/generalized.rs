//! Generalized selectors of Lipschitz-exact curves as uniform limits of the
//! selectors of smooth approximations.

use serde::Serialize;

use super::{graph_selector, sections, SelectorFunction, CONV_TOL, C_TOL};
use crate::error::{Error, Result};
use crate::hull::convexify_fiber;
use crate::lagrangian::{ApproxSequence, ExactLagrangian};

/// One-sided slopes closer than this count as a differentiability point.
pub const DIFF_TOL: f64 = 1e-2;
/// Half-width (grid steps) of the neighbourhood that must look smooth.
const DIFF_STEPS: usize = 2;

#[derive(Clone, Debug, Serialize)]
pub struct Def51Report {
    pub differentiable_points: usize,
    /// `max dist(df(q), hull of the fiber)` over differentiability points.
    pub max_hull_distance: f64,
    pub extremal_points: usize,
    /// `max |f(q) − h|` at points where `df(q)` is extremal in the hull.
    pub max_extremal_gap: f64,
    /// Grid indices of the extremal points.
    pub extremal_indices: Vec<usize>,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct GeneralizedSelector {
    /// Selector of the last level.
    pub selector: SelectorFunction,
    pub levels: Vec<SelectorFunction>,
    /// `sup |f_k − f_{k−1}|`.
    pub gaps: Vec<f64>,
    pub report: Def51Report,
}

/// Selector of a smooth exact Lagrangian: the graph selector when
/// available, otherwise the front section calibrated to the least spectrum
/// value.
pub fn level_selector(l: &ExactLagrangian, n: usize) -> Result<SelectorFunction> {
    if l.graph_function().is_some() {
        return graph_selector(l, n);
    }
    if n < 8 {
        return Err(Error::GridTooCoarse { got: n, need: 8 });
    }
    sections::lowest_section(l, n)
}

/// Limit of the level selectors of a mollified sequence on the grid `k/n`,
/// certified Cauchy at `CONV_TOL`, with the fiberwise-convexification
/// conditions checked against the target curve.
pub fn generalized_selector(seq: &ApproxSequence, n: usize) -> Result<GeneralizedSelector> {
    if seq.entries.len() < 2 {
        return Err(Error::Precondition("a convergence certificate needs at least two levels".into()));
    }
    let levels = seq.entries.iter().map(|l| level_selector(l, n)).collect::<Result<Vec<_>>>()?;
    let gaps = levels
        .windows(2)
        .map(|w| w[1].sup_distance(&w[0]))
        .collect::<Result<Vec<_>>>()?;
    if gaps.last().is_some_and(|&g| g >= CONV_TOL) {
        return Err(Error::NotCauchy { gaps, tol: CONV_TOL });
    }
    let selector = levels.last().expect("two levels").clone();
    let report = def51_check(&selector, seq);
    Ok(GeneralizedSelector { selector, levels, gaps, report })
}

/// Conditions (a) and (b) of a generalized selector at the grid points where
/// `f` looks differentiable.
pub fn def51_check(f: &SelectorFunction, seq: &ApproxSequence) -> Def51Report {
    let n = f.n;
    let h = 1.0 / n as f64;
    let slope = |k: usize| (f.values[(k + 1) % n] - f.values[k]) / h;
    let kink: Vec<bool> = (0..n).map(|k| (slope(k) - slope((k + n - 1) % n)).abs() > DIFF_TOL).collect();
    let smooth = |k: usize| (0..=2 * DIFF_STEPS).all(|d| !kink[(k + n + d - DIFF_STEPS) % n]);
    let mut rep = Def51Report {
        differentiable_points: 0,
        max_hull_distance: 0.0,
        extremal_points: 0,
        max_extremal_gap: 0.0,
        extremal_indices: Vec::new(),
        tol: C_TOL,
        pass: false,
    };
    for k in (0..n).filter(|&k| smooth(k)) {
        let q = k as f64 * h;
        let fiber = seq.target.fiber(q);
        if fiber.is_empty() {
            continue;
        }
        let df = (f.values[(k + 1) % n] - f.values[(k + n - 1) % n]) / (2.0 * h);
        let pts: Vec<[f64; 2]> = fiber.iter().map(|x| [x.0, 0.0]).collect();
        let hull = convexify_fiber(1, &pts);
        rep.differentiable_points += 1;
        rep.max_hull_distance = rep.max_hull_distance.max(hull.distance([df, 0.0]));
        let vertex = hull
            .vertices
            .iter()
            .map(|v| v[0])
            .min_by(|a, b| (a - df).abs().total_cmp(&(b - df).abs()))
            .expect("nonempty hull");
        if (vertex - df).abs() <= C_TOL {
            // fiber points within tolerance of (q, df(q))
            let gap = fiber
                .iter()
                .filter(|x| (x.0 - df).abs() <= C_TOL)
                .map(|x| (f.values[k] - x.1).abs())
                .fold(f64::INFINITY, f64::min);
            rep.extremal_points += 1;
            rep.extremal_indices.push(k);
            rep.max_extremal_gap = rep.max_extremal_gap.max(gap);
        }
    }
    rep.pass = rep.differentiable_points > 0 && rep.max_hull_distance <= C_TOL && rep.max_extremal_gap <= C_TOL;
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::HamiltonianSpec;
    use crate::lagrangian::{mollify_sequence, FlowOptions, LipschitzCurve, MollifyOptions};
    use crate::fourier::PeriodicFunction;

    #[test]
    fn tent_generalized_selector() {
        let a = 0.3;
        let target =
            LipschitzCurve::from_points(&[(0.0, -a), (0.0, a), (0.25, a), (0.5, a), (0.5, -a), (0.75, -a)]).unwrap();
        let seq = mollify_sequence(&target, 6, &MollifyOptions::default()).unwrap();
        let g = generalized_selector(&seq, 512).unwrap();
        assert!(g.report.pass, "{:?} gaps {:?}", g.report, g.gaps);
        // the limit is the tent function a·min(q, 1 − q) on [0, 1]
        for k in 0..512 {
            let q = k as f64 / 512.0;
            let tent = a * q.min(1.0 - q);
            assert!((g.selector.values[k] - tent).abs() < 2e-3, "{q}: {}", g.selector.values[k]);
        }
        assert!(g.report.extremal_points > 100);
    }

    #[test]
    fn mollified_whorl_tracks_smooth_selector() {
        let h = HamiltonianSpec::parse("p^2/2 + cos(2*pi*q)", 1).unwrap();
        let l = ExactLagrangian::from_flow(PeriodicFunction::zero(1), &h, 3.0, 3000, &FlowOptions::default()).unwrap();
        let smooth = graph_selector(&l, 512).unwrap();
        let target = LipschitzCurve::from_lagrangian(&l).unwrap();
        let opts = MollifyOptions { resolution: 1 << 14, first_exponent: 8 };
        let seq = mollify_sequence(&target, 4, &opts).unwrap();
        let g = generalized_selector(&seq, 512).unwrap();
        let d = g.selector.sup_distance(&smooth).unwrap();
        assert!(d <= 1e-3, "sup distance {d}, gaps {:?}", g.gaps);
        assert!(g.report.pass, "{:?}", g.report);
    }
}

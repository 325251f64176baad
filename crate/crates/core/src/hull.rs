//! Fiberwise convexification: convex hulls of fiber momenta and their
//! extremal points.

use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct FiberHull {
    pub dim: usize,
    /// Hull vertices in counter-clockwise order (2-d), or `[min, max]` (1-d).
    pub vertices: Vec<[f64; 2]>,
    /// Per input point: whether it is an extremal point of the hull.
    pub extremal: Vec<bool>,
}

impl FiberHull {
    /// Euclidean distance from `x` to the hull (zero inside).
    pub fn distance(&self, x: [f64; 2]) -> f64 {
        match (self.dim, self.vertices.len()) {
            (_, 0) => f64::INFINITY,
            (1, _) => {
                let (lo, hi) = (self.vertices[0][0], self.vertices[self.vertices.len() - 1][0]);
                (lo - x[0]).max(x[0] - hi).max(0.0)
            }
            (_, 1) => dist(x, self.vertices[0]),
            (_, 2) => seg_dist(x, self.vertices[0], self.vertices[1]),
            _ => {
                let n = self.vertices.len();
                let inside = (0..n).all(|i| cross(self.vertices[i], self.vertices[(i + 1) % n], x) >= -1e-15);
                if inside {
                    0.0
                } else {
                    (0..n)
                        .map(|i| seg_dist(x, self.vertices[i], self.vertices[(i + 1) % n]))
                        .fold(f64::INFINITY, f64::min)
                }
            }
        }
    }

    /// Whether `x` coincides with a hull vertex within `tol`.
    pub fn is_extremal_point(&self, x: [f64; 2], tol: f64) -> bool {
        self.vertices.iter().any(|v| dist(*v, x) <= tol)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn seg_dist(x: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return dist(x, a);
    }
    let s = (((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    dist(x, [a[0] + s * d[0], a[1] + s * d[1]])
}

/// Convex hull of the fiber momenta. Only the first coordinate is used in
/// dimension one.
pub fn convexify_fiber(dim: usize, points: &[[f64; 2]]) -> FiberHull {
    if points.is_empty() {
        return FiberHull { dim, vertices: Vec::new(), extremal: Vec::new() };
    }
    if dim == 1 {
        let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let extremal = points.iter().map(|p| p[0] == lo || p[0] == hi).collect();
        let vertices = if lo == hi { vec![[lo, 0.0]] } else { vec![[lo, 0.0], [hi, 0.0]] };
        return FiberHull { dim, vertices, extremal };
    }
    // Andrew's monotone chain; collinear points are dropped
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let vertices = if pts.len() < 3 {
        pts.clone()
    } else {
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        if lower.len() == 2 && lower[0] == lower[1] {
            lower.pop();
        }
        lower
    };
    let extremal = points.iter().map(|p| vertices.contains(p)).collect();
    FiberHull { dim, vertices, extremal }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_hull() {
        let h = convexify_fiber(1, &[[-1.0, 0.0], [0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(h.extremal, vec![true, false, true]);
        assert_eq!(h.distance([3.0, 0.0]), 1.0);
        assert_eq!(h.distance([0.5, 0.0]), 0.0);
    }

    #[test]
    fn single_point() {
        let h = convexify_fiber(2, &[[0.3, 0.4]]);
        assert_eq!(h.vertices, vec![[0.3, 0.4]]);
        assert_eq!(h.extremal, vec![true]);
    }

    #[test]
    fn triangle_with_interior_point() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.2, 0.2]];
        let h = convexify_fiber(2, &pts);
        assert_eq!(h.extremal, vec![true, true, true, false]);
        assert_eq!(h.distance([0.2, 0.2]), 0.0);
        assert!((h.distance([1.0, 1.0]) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn collinear_midpoint_not_extremal() {
        let h = convexify_fiber(2, &[[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]]);
        assert_eq!(h.extremal, vec![true, false, true]);
    }
}

//! Small dense helpers for systems of size ≤ 4.

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// Returns `None` for (numerically) singular systems.
pub fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N], n: usize) -> Option<[f64; N]> {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(piv, col);
        b.swap(piv, col);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = [0.0; N];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn sym2_eigenvalues(a: f64, b: f64, d: f64) -> (f64, f64) {
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - r, mean + r)
}

/// Flat-torus distance between two points of `[0,1)^n`.
pub fn torus_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).rem_euclid(1.0);
            let d = d.min(1.0 - d);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Signed shortest displacement `b - a` on the circle, in `[-1/2, 1/2)`.
pub fn circle_delta(a: f64, b: f64) -> f64 {
    (b - a + 0.5).rem_euclid(1.0) - 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = [[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let x = solve(a, [1.0, 2.0, 3.0], 3).unwrap();
        for r in 0..3 {
            let s: f64 = (0..3).map(|c| a[r][c] * x[c]).sum();
            assert!((s - [1.0, 2.0, 3.0][r]).abs() < 1e-14);
        }
        assert!(solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0], 2).is_none());
    }

    #[test]
    fn torus_distance_wraps() {
        assert!((torus_dist(&[0.05], &[0.95]) - 0.1).abs() < 1e-15);
        assert!((torus_dist(&[0.0, 0.9], &[0.0, 0.1]) - 0.2).abs() < 1e-15);
        assert!((circle_delta(0.95, 0.05) - 0.1).abs() < 1e-15);
    }
}

//! Zero-dimensional sublevel-set persistence of functions on box lattices,
//! by union-find over vertices sorted by value (elder rule).

use std::collections::VecDeque;

use serde::Serialize;

/// Rectangular lattice with axis-neighbour adjacency, first axis fastest.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub shape: Vec<usize>,
}

impl Lattice {
    pub fn new(shape: &[usize]) -> Self {
        Lattice { shape: shape.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        self.shape
            .iter()
            .map(|&m| {
                let c = idx % m;
                idx /= m;
                c
            })
            .collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (c, m) in coords.iter().zip(&self.shape) {
            idx += c * stride;
            stride *= m;
        }
        idx
    }

    pub fn neighbors(&self, idx: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut stride = 1;
        let mut rest = idx;
        for &m in &self.shape {
            let c = rest % m;
            rest /= m;
            if c > 0 {
                out.push(idx - stride);
            }
            if c + 1 < m {
                out.push(idx + stride);
            }
            stride *= m;
        }
    }

    /// Whether a vertex lies on the boundary of the box.
    pub fn on_boundary(&self, idx: usize) -> bool {
        self.coords(idx).iter().zip(&self.shape).any(|(&c, &m)| c == 0 || c + 1 == m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Pair {
    pub birth: f64,
    pub death: f64,
    pub birth_vertex: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Diagram {
    /// Finite pairs, in order of death.
    pub pairs: Vec<Pair>,
    /// Birth of the essential class and its vertex (the global minimum).
    pub essential_birth: f64,
    pub essential_vertex: usize,
}

impl Diagram {
    /// Number of components of the sublevel set `{f ≤ c}` implied by the pairs.
    pub fn betti0(&self, c: f64) -> usize {
        let finite = self.pairs.iter().filter(|p| p.birth <= c && p.death > c).count();
        finite + usize::from(self.essential_birth <= c)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Vertex order by value, ties broken by index.
fn order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

/// Sublevel persistence of `values` on `lattice`.
pub fn sublevel_persistence(lattice: &Lattice, values: &[f64]) -> Diagram {
    assert_eq!(lattice.len(), values.len());
    let n = values.len();
    let ord = order(values);
    let mut rank = vec![0usize; n];
    for (r, &v) in ord.iter().enumerate() {
        rank[v] = r;
    }
    let mut uf = UnionFind { parent: (0..n).collect() };
    // root → vertex of the oldest (lowest-rank) birth in the component
    let mut oldest: Vec<usize> = (0..n).collect();
    let mut alive = vec![false; n];
    let mut pairs = Vec::new();
    let mut nb = Vec::with_capacity(2 * lattice.shape.len());
    for &v in &ord {
        alive[v] = true;
        lattice.neighbors(v, &mut nb);
        for &u in &nb {
            if !alive[u] {
                continue;
            }
            let (ru, rv) = (uf.find(u), uf.find(v));
            if ru == rv {
                continue;
            }
            let (ou, ov) = (oldest[ru], oldest[rv]);
            // elder rule: the younger component dies at the current value
            let (young, old) = if rank[ou] < rank[ov] { (ov, ou) } else { (ou, ov) };
            if young != v || values[young] < values[v] {
                pairs.push(Pair { birth: values[young], death: values[v], birth_vertex: young });
            }
            uf.parent[ru] = rv;
            oldest[rv] = old;
        }
    }
    let min = ord[0];
    Diagram { pairs, essential_birth: values[min], essential_vertex: min }
}

/// Brute-force oracle: component counts of every sublevel set `{f ≤ c}` at
/// the given thresholds, by breadth-first search.
pub fn betti0_curve_bfs(lattice: &Lattice, values: &[f64], thresholds: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut nb = Vec::new();
    thresholds
        .iter()
        .map(|&c| {
            let mut seen = vec![false; n];
            let mut count = 0;
            let mut queue = VecDeque::new();
            for s in 0..n {
                if seen[s] || values[s] > c {
                    continue;
                }
                count += 1;
                seen[s] = true;
                queue.push_back(s);
                while let Some(x) = queue.pop_front() {
                    lattice.neighbors(x, &mut nb);
                    for &y in &nb {
                        if !seen[y] && values[y] <= c {
                            seen[y] = true;
                            queue.push_back(y);
                        }
                    }
                }
            }
            count
        })
        .collect()
}

/// Brute-force oracle for the selected value: the least threshold (among the
/// lattice values) whose sublevel set meets every component of the full
/// lattice, found by scanning thresholds in increasing order with a BFS each.
pub fn essential_value_bfs(lattice: &Lattice, values: &[f64]) -> f64 {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let full = betti0_curve_bfs(lattice, values, &[f64::INFINITY])[0];
    let comps = component_labels(lattice, values, f64::INFINITY);
    for &c in &distinct {
        let mut hit = vec![false; full];
        for (i, &v) in values.iter().enumerate() {
            if v <= c {
                hit[comps[i]] = true;
            }
        }
        if hit.iter().all(|&h| h) {
            return c;
        }
    }
    f64::INFINITY
}

fn component_labels(lattice: &Lattice, values: &[f64], c: f64) -> Vec<usize> {
    let n = values.len();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut nb = Vec::new();
    let mut queue = VecDeque::new();
    for s in 0..n {
        if label[s] != usize::MAX || values[s] > c {
            continue;
        }
        label[s] = next;
        queue.push_back(s);
        while let Some(x) = queue.pop_front() {
            lattice.neighbors(x, &mut nb);
            for &y in &nb {
                if label[y] == usize::MAX && values[y] <= c {
                    label[y] = next;
                    queue.push_back(y);
                }
            }
        }
        next += 1;
    }
    label
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_wells_on_a_line() {
        let vals = [3.0, 1.0, 2.5, 0.5, 4.0];
        let lat = Lattice::new(&[5]);
        let d = sublevel_persistence(&lat, &vals);
        assert_eq!(d.essential_birth, 0.5);
        assert_eq!(d.pairs, vec![Pair { birth: 1.0, death: 2.5, birth_vertex: 1 }]);
        let th = [0.0, 0.5, 1.0, 2.0, 2.5, 5.0];
        let bfs = betti0_curve_bfs(&lat, &vals, &th);
        let uf: Vec<usize> = th.iter().map(|&c| d.betti0(c)).collect();
        assert_eq!(bfs, uf);
        assert_eq!(essential_value_bfs(&lat, &vals), 0.5);
    }

    #[test]
    fn quadratic_bowl_minimum() {
        let m = 21;
        let lat = Lattice::new(&[m, m]);
        let vals: Vec<f64> = (0..m * m)
            .map(|k| {
                let c = lat.coords(k);
                let (x, y) = (c[0] as f64 / 10.0 - 1.0, c[1] as f64 / 10.0 - 1.0);
                x * x + y * y + 0.25
            })
            .collect();
        let d = sublevel_persistence(&lat, &vals);
        assert!((d.essential_birth - 0.25).abs() < 1e-15);
        assert!(d.pairs.is_empty());
        assert!(!lat.on_boundary(d.essential_vertex));
    }
}

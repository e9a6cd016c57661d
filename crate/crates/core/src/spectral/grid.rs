use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// `d = 1`: the simplex is a single point.
    Point,
    /// `d = 2`: nodes `(i/N, 1 - i/N)`, piecewise-linear interpolation.
    Segment,
    /// `d = 3`: barycentric lattice, linear interpolation on the sub-triangles.
    Triangle,
    /// `d ≥ 4`: low-discrepancy Dirichlet(1,…,1) nodes, nearest-node interpolation.
    Scattered,
}

/// Discretization of the positive unit simplex.
#[derive(Clone, Debug)]
pub struct SimplexGrid {
    d: usize,
    kind: GridKind,
    resolution: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    /// Row offsets of the triangular lattice (`d = 3`).
    offsets: Vec<usize>,
}

impl SimplexGrid {
    /// `resolution` is the number of subdivisions per edge for `d ≤ 3` and the
    /// number of interior nodes for `d ≥ 4`.
    pub fn new(d: usize, resolution: usize) -> Self {
        assert!(d >= 1, "dimension must be positive");
        match d {
            1 => Self { d, kind: GridKind::Point, resolution: 0, points: vec![1.0], weights: vec![1.0], offsets: vec![] },
            2 => Self::segment(resolution.max(2)),
            3 => Self::triangle(resolution.max(2)),
            _ => Self::scattered(d, resolution.max(d + 1)),
        }
    }

    pub fn default_for(d: usize) -> Self {
        match d {
            1 => Self::new(1, 0),
            2 => Self::new(2, 512),
            3 => Self::new(3, 48),
            _ => Self::new(d, 2000),
        }
    }

    fn segment(n: usize) -> Self {
        let mut points = Vec::with_capacity(2 * (n + 1));
        let mut weights = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let t = i as f64 / n as f64;
            points.extend([t, 1.0 - t]);
            weights.push(if i == 0 || i == n { 0.5 } else { 1.0 } / n as f64);
        }
        Self { d: 2, kind: GridKind::Segment, resolution: n, points, weights, offsets: vec![] }
    }

    fn triangle(n: usize) -> Self {
        let mut points = Vec::new();
        let mut offsets = Vec::with_capacity(n + 2);
        for i in 0..=n {
            offsets.push(points.len() / 3);
            for j in 0..=(n - i) {
                let k = n - i - j;
                points.extend([i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64]);
            }
        }
        offsets.push(points.len() / 3);
        let mut grid = Self { d: 3, kind: GridKind::Triangle, resolution: n, points, weights: vec![], offsets };
        // lumped mass: each node gets a third of every sub-triangle it touches
        let mut w = vec![0.0; grid.len()];
        for i in 0..n {
            for j in 0..(n - i) {
                for node in [grid.node(i, j), grid.node(i + 1, j), grid.node(i, j + 1)] {
                    w[node] += 1.0;
                }
                if i + j + 2 <= n {
                    for node in [grid.node(i + 1, j + 1), grid.node(i + 1, j), grid.node(i, j + 1)] {
                        w[node] += 1.0;
                    }
                }
            }
        }
        let total: f64 = w.iter().sum();
        grid.weights = w.into_iter().map(|x| x / total).collect();
        grid
    }

    fn scattered(d: usize, count: usize) -> Self {
        let mut points = Vec::with_capacity(d * (count + d + 1));
        for i in 0..d {
            points.extend((0..d).map(|j| if i == j { 1.0 } else { 0.0 }));
        }
        points.extend(std::iter::repeat_n(1.0 / d as f64, d));
        let primes = first_primes(d - 1);
        let mut u = vec![0.0; d + 1];
        for idx in 1..=count {
            u[0] = 0.0;
            for (m, &p) in primes.iter().enumerate() {
                u[m + 1] = radical_inverse(idx as u64, p);
            }
            u[d] = 1.0;
            u[1..d].sort_by(|a, b| a.partial_cmp(b).unwrap());
            points.extend((0..d).map(|j| u[j + 1] - u[j]));
        }
        let n = points.len() / d;
        Self { d, kind: GridKind::Scattered, resolution: count, points, weights: vec![1.0 / n as f64; n], offsets: vec![] }
    }

    fn node(&self, i: usize, j: usize) -> usize {
        self.offsets[i] + j
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Interpolation weights of the node values at the direction `y` (entries ≥ 0, Σ = 1).
    pub fn interpolation(&self, y: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        match self.kind {
            GridKind::Point => out.push((0, 1.0)),
            GridKind::Segment => {
                let n = self.resolution;
                let a = (y[0] * n as f64).clamp(0.0, n as f64);
                let i = (a.floor() as usize).min(n - 1);
                let f = a - i as f64;
                if f > 0.0 {
                    out.push((i + 1, f));
                }
                if f < 1.0 {
                    out.push((i, 1.0 - f));
                }
            }
            GridKind::Triangle => {
                let n = self.resolution as f64;
                let a = (y[0] * n).clamp(0.0, n);
                let b = (y[1] * n).clamp(0.0, n - a);
                let i = a.floor() as usize;
                let j = b.floor() as usize;
                if i + j >= self.resolution {
                    // only reachable exactly on a lattice node of the far edge
                    out.push((self.node(i, j), 1.0));
                    return;
                }
                let fa = a - i as f64;
                let fb = b - j as f64;
                let push = |out: &mut Vec<(usize, f64)>, node: usize, w: f64| {
                    if w > 0.0 {
                        out.push((node, w));
                    }
                };
                if fa + fb <= 1.0 {
                    push(out, self.node(i, j), 1.0 - fa - fb);
                    push(out, self.node(i + 1, j), fa);
                    push(out, self.node(i, j + 1), fb);
                } else {
                    push(out, self.node(i + 1, j + 1), fa + fb - 1.0);
                    push(out, self.node(i + 1, j), 1.0 - fb);
                    push(out, self.node(i, j + 1), 1.0 - fa);
                }
            }
            GridKind::Scattered => {
                let best = (0..self.len())
                    .min_by(|&p, &q| {
                        let dp: f64 = self.point(p).iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                        let dq: f64 = self.point(q).iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                        dp.partial_cmp(&dq).unwrap()
                    })
                    .unwrap();
                out.push((best, 1.0));
            }
        }
    }

    pub fn interpolate(&self, values: &[f64], y: &[f64]) -> f64 {
        let mut w = Vec::with_capacity(3);
        self.interpolation(y, &mut w);
        w.iter().map(|&(j, c)| c * values[j]).sum()
    }

    /// Off-grid directions used to measure the discretization error.
    pub fn test_points(&self) -> Vec<Vec<f64>> {
        match self.kind {
            GridKind::Point => vec![],
            GridKind::Segment => (0..self.resolution)
                .map(|i| {
                    let t = (i as f64 + 0.5) / self.resolution as f64;
                    vec![t, 1.0 - t]
                })
                .collect(),
            GridKind::Triangle => {
                let n = self.resolution;
                let mut out = Vec::new();
                for i in 0..n {
                    for j in 0..(n - i) {
                        let a = (i as f64 + 1.0 / 3.0) / n as f64;
                        let b = (j as f64 + 1.0 / 3.0) / n as f64;
                        out.push(vec![a, b, 1.0 - a - b]);
                    }
                }
                out
            }
            GridKind::Scattered => {
                let d = self.d;
                let primes = first_primes(d);
                (0..200u64)
                    .map(|idx| {
                        let mut u: Vec<f64> = std::iter::once(0.0)
                            .chain(primes[1..].iter().map(|&p| radical_inverse(idx + 7919, p)))
                            .chain(std::iter::once(1.0))
                            .collect();
                        u.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        (0..d).map(|j| u[j + 1] - u[j]).collect()
                    })
                    .collect()
            }
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut x = 0.0;
    while i > 0 {
        x += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    x
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut c = 2u64;
    while out.len() < n {
        if (2..c).take_while(|p| p * p <= c).all(|p| !c.is_multiple_of(p)) {
            out.push(c);
        }
        c += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_grid(g: &SimplexGrid) {
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(g.weights().iter().all(|&w| w > 0.0));
        for i in 0..g.len() {
            let p = g.point(i);
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grids_are_valid() {
        for (d, n) in [(1, 0), (2, 8), (3, 6), (4, 50), (5, 30)] {
            check_grid(&SimplexGrid::new(d, n));
        }
        assert_eq!(SimplexGrid::new(3, 4).len(), 15);
    }

    #[test]
    fn points_are_distinct() {
        for g in [SimplexGrid::new(3, 6), SimplexGrid::new(4, 60)] {
            for i in 0..g.len() {
                for j in 0..i {
                    let dist: f64 = g.point(i).iter().zip(g.point(j)).map(|(a, b)| (a - b).abs()).sum();
                    assert!(dist > 1e-9);
                }
            }
        }
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        for g in [SimplexGrid::new(2, 7), SimplexGrid::new(3, 5)] {
            let f = |p: &[f64]| 1.0 + 2.0 * p[0] - 0.5 * p[1];
            let values: Vec<f64> = (0..g.len()).map(|i| f(g.point(i))).collect();
            let mut probes = g.test_points();
            probes.extend((0..g.len()).map(|i| g.point(i).to_vec()));
            probes.push(if g.dim() == 2 { vec![1.0, 0.0] } else { vec![0.0, 0.0, 1.0] });
            probes.push(if g.dim() == 2 { vec![0.0, 1.0] } else { vec![0.3, 0.7, 0.0] });
            for y in probes {
                let mut w = Vec::new();
                g.interpolation(&y, &mut w);
                assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
                assert!((g.interpolate(&values, &y) - f(&y)).abs() < 1e-12, "{y:?}");
            }
        }
    }

    #[test]
    fn scattered_nearest_node() {
        let g = SimplexGrid::new(4, 40);
        let mut w = Vec::new();
        g.interpolation(&[1.0, 0.0, 0.0, 0.0], &mut w);
        assert_eq!(w, vec![(0, 1.0)]);
    }
}

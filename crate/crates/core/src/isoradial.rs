//! Rhombic (isoradial) grids built from two families of train-track angles,
//! Z-invariant weights and discrete massive exponentials.

use crate::elliptic::{mass_value, EllipticError, EllipticModulus};
use crate::graph::{Edge, WeightedGraph};
use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_4, PI};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("half-angle {0} violates the bounded-angle assumption")]
    AngleBound(f64),
    #[error("grid needs at least one rhombus")]
    Empty,
    #[error(transparent)]
    Elliptic(#[from] EllipticError),
}

/// Directed primal edge with its two rays: y − x = δe^{iᾱ} + δe^{iβ̄}, ᾱ < β̄ < ᾱ + π.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridEdge {
    pub from: usize,
    pub to: usize,
    pub abar: f64,
    pub bbar: f64,
    /// dual corner x + δe^{iᾱ} (right of x→y)
    pub right: (usize, usize),
    /// dual corner x + δe^{iβ̄} (left of x→y)
    pub left: (usize, usize),
}

impl GridEdge {
    pub fn half_angle(&self) -> f64 {
        0.5 * (self.bbar - self.abar)
    }
}

#[derive(Clone, Debug)]
pub struct IsoradialGrid {
    pub delta: f64,
    /// ray of the column train tracks, one per column of rhombi
    pub alphas: Vec<f64>,
    /// ray of the row train tracks, one per row of rhombi
    pub betas: Vec<f64>,
    /// primal vertices as rhombus corners (i, j) with i + j even
    pub vertices: Vec<(usize, usize)>,
    pub pos: Vec<[f64; 2]>,
    pub edges: Vec<GridEdge>,
    pub out: Vec<Vec<usize>>,
    corner_index: Vec<Option<usize>>,
}

impl IsoradialGrid {
    /// Corners 0..=w × 0..=h; the rhombus (i,j) has sides δe^{iαᵢ}, δe^{iβⱼ}.
    pub fn rhombic(delta: f64, alphas: Vec<f64>, betas: Vec<f64>, eps: f64) -> Result<Self, GridError> {
        let (w, h) = (alphas.len(), betas.len());
        if w == 0 || h == 0 {
            return Err(GridError::Empty);
        }
        for a in &alphas {
            for b in &betas {
                let t = 0.5 * (b - a);
                if !(t >= eps && t <= PI / 2.0 - eps) {
                    return Err(GridError::AngleBound(t));
                }
            }
        }
        let corner = |i: usize, j: usize| -> [f64; 2] {
            let mut p = [0.0, 0.0];
            for a in &alphas[..i] {
                p[0] += delta * a.cos();
                p[1] += delta * a.sin();
            }
            for b in &betas[..j] {
                p[0] += delta * b.cos();
                p[1] += delta * b.sin();
            }
            p
        };
        let mut corner_index = vec![None; (w + 1) * (h + 1)];
        let mut vertices = Vec::new();
        let mut pos = Vec::new();
        for j in 0..=h {
            for i in 0..=w {
                if (i + j) % 2 == 0 {
                    corner_index[j * (w + 1) + i] = Some(vertices.len());
                    vertices.push((i, j));
                    pos.push(corner(i, j));
                }
            }
        }
        let idx = |i: usize, j: usize| corner_index[j * (w + 1) + i].expect("primal corner");
        let mut edges = Vec::new();
        for j in 0..h {
            for i in 0..w {
                let (a, b) = (alphas[i], betas[j]);
                if (i + j) % 2 == 0 {
                    let (x, y) = (idx(i, j), idx(i + 1, j + 1));
                    edges.push(GridEdge { from: x, to: y, abar: a, bbar: b, right: (i + 1, j), left: (i, j + 1) });
                    edges.push(GridEdge { from: y, to: x, abar: a + PI, bbar: b + PI, right: (i, j + 1), left: (i + 1, j) });
                } else {
                    let (x, y) = (idx(i + 1, j), idx(i, j + 1));
                    edges.push(GridEdge { from: x, to: y, abar: b, bbar: a + PI, right: (i + 1, j + 1), left: (i, j) });
                    edges.push(GridEdge { from: y, to: x, abar: b + PI, bbar: a + 2.0 * PI, right: (i, j), left: (i + 1, j + 1) });
                }
            }
        }
        let mut out = vec![Vec::new(); vertices.len()];
        for (k, e) in edges.iter().enumerate() {
            out[e.from].push(k);
        }
        Ok(IsoradialGrid { delta, alphas, betas, vertices, pos, edges, out, corner_index })
    }

    /// Square lattice of spacing δ√2 (all half-angles π/4) with w × h rhombi.
    pub fn square(delta: f64, w: usize, h: usize) -> Result<Self, GridError> {
        Self::rhombic(delta, vec![-FRAC_PI_4; w], vec![FRAC_PI_4; h], 0.1)
    }

    pub fn n(&self) -> usize {
        self.vertices.len()
    }

    pub fn width(&self) -> usize {
        self.alphas.len()
    }

    pub fn height(&self) -> usize {
        self.betas.len()
    }

    pub fn vertex_at(&self, i: usize, j: usize) -> Option<usize> {
        if i > self.width() || j > self.height() {
            return None;
        }
        self.corner_index[j * (self.width() + 1) + i]
    }

    pub fn corner_pos(&self, i: usize, j: usize) -> [f64; 2] {
        let mut p = [0.0, 0.0];
        for a in &self.alphas[..i] {
            p[0] += self.delta * a.cos();
            p[1] += self.delta * a.sin();
        }
        for b in &self.betas[..j] {
            p[0] += self.delta * b.cos();
            p[1] += self.delta * b.sin();
        }
        p
    }

    /// Vertex with all four incident rhombi inside the grid.
    pub fn is_bulk(&self, x: usize) -> bool {
        self.out[x].len() == 4
    }

    /// Primal faces: 4-cycles around the inner dual corners (i + j odd).
    pub fn faces(&self) -> Vec<[usize; 4]> {
        let mut out = Vec::new();
        for j in 1..self.height() {
            for i in 1..self.width() {
                if (i + j) % 2 == 1 {
                    out.push([
                        self.vertex_at(i + 1, j).unwrap(),
                        self.vertex_at(i, j + 1).unwrap(),
                        self.vertex_at(i - 1, j).unwrap(),
                        self.vertex_at(i, j - 1).unwrap(),
                    ]);
                }
            }
        }
        out
    }

    pub fn edge_between(&self, x: usize, y: usize) -> Option<usize> {
        self.out[x].iter().copied().find(|&e| self.edges[e].to == y)
    }

    /// Primal vertex nearest to a point.
    pub fn nearest(&self, p: [f64; 2]) -> usize {
        (0..self.n())
            .min_by(|&a, &b| dist2(self.pos[a], p).partial_cmp(&dist2(self.pos[b], p)).unwrap())
            .unwrap()
    }

    /// Half-angles of the edges at x.
    pub fn half_angles(&self, x: usize) -> Vec<f64> {
        self.out[x].iter().map(|&e| self.edges[e].half_angle()).collect()
    }

    /// Half rhombus angles at the corner (i, j), one per incident rhombus.
    pub fn corner_half_angles(&self, i: usize, j: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            if i < di || j < dj || i - di >= self.width() || j - dj >= self.height() {
                continue;
            }
            let (a, b) = (i - di, j - dj);
            let half = 0.5 * (self.betas[b] - self.alphas[a]);
            out.push(if di == dj { half } else { 0.5 * PI - half });
        }
        out
    }

    /// T_δ(x) = Σ sin 2θ̄ / Σ tan θ̄.
    pub fn t_delta(&self, x: usize) -> f64 {
        let h = self.half_angles(x);
        h.iter().map(|t| (2.0 * t).sin()).sum::<f64>() / h.iter().map(|t| t.tan()).sum::<f64>()
    }
}

pub fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// c_xy = sc(θ_xy|k); m(x) = m²(x|k) from the incident half-angles.
pub fn z_invariant_weights(grid: &IsoradialGrid, m: &EllipticModulus) -> Result<WeightedGraph<f64>, GridError> {
    let mut sc_cache = std::collections::HashMap::new();
    let mut sc = |t: f64| *sc_cache.entry(t.to_bits()).or_insert_with(|| m.sc_bar(t));
    let edges: Vec<Edge<f64>> =
        grid.edges.iter().map(|e| Edge { from: e.from, to: e.to, c: sc(e.half_angle()) }).collect();
    let mut mass_cache = std::collections::HashMap::new();
    let mut mass = Vec::with_capacity(grid.n());
    for x in 0..grid.n() {
        let mut h = grid.half_angles(x);
        h.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let key: Vec<u64> = h.iter().map(|t| t.to_bits()).collect();
        let v = match mass_cache.get(&key) {
            Some(v) => *v,
            None => {
                let v = if m.k == 0.0 { 0.0 } else { mass_value(m, &h)? };
                mass_cache.insert(key, v);
                v
            }
        };
        mass.push(v);
    }
    Ok(WeightedGraph::new_unchecked(grid.n(), edges, mass, Some(grid.pos.clone())))
}

/// Single-step factor of the diamond exponential along a ray ᾱ:
/// dn((u−α)/2|k)/√k′. The step along ᾱ+π gives the reciprocal.
pub fn diamond_factor(m: &EllipticModulus, ubar: f64, ray: f64) -> f64 {
    let (u, a) = (m.abstract_angle(ubar), m.abstract_angle(ray));
    m.jacobi(0.5 * (u - a)).dn / m.kp.sqrt()
}

/// e_(x,y)(u−2K−2iK′|k) for a single edge.
pub fn exponential_edge_factor(m: &EllipticModulus, ubar: f64, e: &GridEdge) -> f64 {
    diamond_factor(m, ubar, e.abar) * diamond_factor(m, ubar, e.bbar)
}

#[derive(Clone, Debug)]
pub struct ExponentialField {
    pub x0: usize,
    pub ubar: f64,
    pub values: Vec<f64>,
    /// per directed edge of the grid
    pub edge_factor: Vec<f64>,
}

/// λᵘ(x) = e_(x₀,x)(u−2K−2iK′|k), by products along a BFS tree from x₀.
pub fn discrete_exponential(grid: &IsoradialGrid, m: &EllipticModulus, x0: usize, ubar: f64) -> ExponentialField {
    let edge_factor: Vec<f64> = grid.edges.iter().map(|e| exponential_edge_factor(m, ubar, e)).collect();
    let mut values = vec![f64::NAN; grid.n()];
    values[x0] = 1.0;
    let mut queue = VecDeque::from([x0]);
    while let Some(x) = queue.pop_front() {
        for &e in &grid.out[x] {
            let y = grid.edges[e].to;
            if values[y].is_nan() {
                values[y] = values[x] * edge_factor[e];
                queue.push_back(y);
            }
        }
    }
    ExponentialField { x0, ubar, values, edge_factor }
}

impl ExponentialField {
    /// max over faces of |∏ factors around the face − 1|.
    pub fn face_defect(&self, grid: &IsoradialGrid) -> f64 {
        let mut worst: f64 = 0.0;
        for f in grid.faces() {
            let mut p = 1.0;
            for k in 0..4 {
                let e = grid.edge_between(f[k], f[(k + 1) % 4]).expect("face edge");
                p *= self.edge_factor[e];
            }
            worst = worst.max((p - 1.0).abs());
        }
        worst
    }

    /// max over edges of |λ(y) − λ(x)·factor| / λ(y).
    pub fn edge_defect(&self, grid: &IsoradialGrid) -> f64 {
        grid.edges
            .iter()
            .enumerate()
            .map(|(k, e)| ((self.values[e.to] - self.values[e.from] * self.edge_factor[k]) / self.values[e.to]).abs())
            .fold(0.0, f64::max)
    }

    /// λ* on a dual corner u adjacent to x through ray β̄: 1/(λ(x) f(β̄)).
    /// With this choice λ(x)λ(y)λ*(left)λ*(right) = 1 on every edge.
    pub fn dual_value(&self, m: &EllipticModulus, x: usize, ray: f64) -> f64 {
        1.0 / (self.values[x] * diamond_factor(m, self.ubar, ray))
    }
}

/// max over bulk x of |(Δᵏλ)(x)| / (cᵏ(x)λ(x)).
pub fn harmonicity_residual(grid: &IsoradialGrid, g: &WeightedGraph<f64>, lambda: &[f64]) -> f64 {
    (0..grid.n())
        .filter(|&x| grid.is_bulk(x))
        .map(|x| crate::doob::apply_laplacian(g, lambda, x).abs() / (g.c_kill(x) * lambda[x]))
        .fold(0.0, f64::max)
}

/// Doob-tilted conductances sc(θ)λ(y)/λ(x) on the whole grid (no mass).
pub fn drift_conductances(g: &WeightedGraph<f64>, field: &ExponentialField) -> WeightedGraph<f64> {
    crate::doob::doob_conductances(g, &field.values).expect("positive exponential")
}

/// First-order prediction (1+2Mδ) tan θ̄ (1 + 4Mδ cos θ̄ cos(ū − (ᾱ+β̄)/2)).
pub fn drift_conductance_first_order(mass: f64, delta: f64, ubar: f64, e: &GridEdge) -> f64 {
    let t = e.half_angle();
    let md = mass * delta;
    (1.0 + 2.0 * md) * t.tan() * (1.0 + 4.0 * md * t.cos() * (ubar - 0.5 * (e.abar + e.bbar)).cos())
}

/// Loop conductances l(x) = ((T_δ(x) − T)/T) Σ sc(θ|k), T = min over the given vertices.
pub fn lazy_loops(grid: &IsoradialGrid, g: &WeightedGraph<f64>, vertices: &[usize]) -> Result<Vec<f64>, GridError> {
    let t = vertices.iter().map(|&x| grid.t_delta(x)).fold(f64::INFINITY, f64::min);
    if t <= 0.0 || !t.is_finite() {
        return Err(GridError::AngleBound(t));
    }
    let mut loops = vec![0.0; grid.n()];
    for &x in vertices {
        loops[x] = (grid.t_delta(x) - t) / t * g.c_out(x);
    }
    Ok(loops)
}

/// Train-track angles jittered around the square lattice, deterministic in `seed`.
pub fn random_angles(w: usize, h: usize, jitter: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    use rand::Rng;
    let mut rng = crate::par::task_rng(seed, 0);
    let a = (0..w).map(|_| -FRAC_PI_4 + jitter * (2.0 * rng.random::<f64>() - 1.0)).collect();
    let b = (0..h).map(|_| FRAC_PI_4 + jitter * (2.0 * rng.random::<f64>() - 1.0)).collect();
    (a, b)
}

/// Largest connected component of the vertices satisfying `inside`.
pub fn largest_component(g: &WeightedGraph<f64>, inside: impl Fn(usize) -> bool) -> Vec<usize> {
    let n = g.n();
    let mut comp = vec![usize::MAX; n];
    let mut best: Vec<usize> = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX || !inside(s) {
            continue;
        }
        let mut members = vec![s];
        comp[s] = s;
        let mut i = 0;
        while i < members.len() {
            let x = members[i];
            for &e in g.out_edges(x) {
                let y = g.edge(e).to;
                if comp[y] == usize::MAX && inside(y) {
                    comp[y] = s;
                    members.push(y);
                }
            }
            i += 1;
        }
        if members.len() > best.len() {
            best = members;
        }
    }
    best.sort_unstable();
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_geometry() {
        let g = IsoradialGrid::square(1.0, 4, 4).unwrap();
        for e in &g.edges {
            assert!((e.bbar - e.abar - PI / 2.0).abs() < 1e-15);
            let (p, q) = (g.pos[e.from], g.pos[e.to]);
            let d = [
                e.abar.cos() + e.bbar.cos(),
                e.abar.sin() + e.bbar.sin(),
            ];
            assert!((q[0] - p[0] - d[0]).abs() < 1e-12 && (q[1] - p[1] - d[1]).abs() < 1e-12);
            assert!((dist2(p, q).sqrt() - 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn one_rhombus() {
        let g = IsoradialGrid::square(1.0, 1, 1).unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.edges.len(), 2);
    }

    #[test]
    fn random_rhombic_invariants() {
        let (a, b) = random_angles(12, 10, 0.3, 9);
        let g = IsoradialGrid::rhombic(0.5, a, b, 0.2).unwrap();
        for e in &g.edges {
            let t = e.half_angle();
            assert!(t > 0.2 && t < PI / 2.0 - 0.2);
            let (p, q) = (g.pos[e.from], g.pos[e.to]);
            let d = [0.5 * (e.abar.cos() + e.bbar.cos()), 0.5 * (e.abar.sin() + e.bbar.sin())];
            assert!((q[0] - p[0] - d[0]).abs() < 1e-12 && (q[1] - p[1] - d[1]).abs() < 1e-12);
            let rev = g.edge_between(e.to, e.from).unwrap();
            assert!((g.edges[rev].half_angle() - t).abs() < 1e-14);
        }
        assert!(IsoradialGrid::rhombic(1.0, vec![0.0], vec![3.0], 0.1).is_err());
    }

    #[test]
    fn critical_weights() {
        let m = EllipticModulus::new(0.0).unwrap();
        let grid = IsoradialGrid::square(1.0, 4, 4).unwrap();
        let g = z_invariant_weights(&grid, &m).unwrap();
        assert!(g.edges().iter().all(|e| (e.c - 1.0).abs() < 1e-15));
        assert!(g.mass().iter().all(|&v| v == 0.0));
        let f = discrete_exponential(&grid, &m, 0, 0.7);
        assert!(f.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn exponential_is_harmonic_and_path_independent() {
        let (a, b) = random_angles(10, 10, 0.3, 4);
        let grid = IsoradialGrid::rhombic(0.1, a, b, 0.2).unwrap();
        let m = EllipticModulus::new(0.3).unwrap();
        let g = z_invariant_weights(&grid, &m).unwrap();
        for &u in &[0.0, 1.0, 2.5] {
            let f = discrete_exponential(&grid, &m, 0, u);
            assert!(f.values.iter().all(|&v| v > 0.0));
            assert!(f.face_defect(&grid) < 1e-12);
            assert!(f.edge_defect(&grid) < 1e-12);
            assert!(harmonicity_residual(&grid, &g, &f.values) < 1e-10);
        }
    }

    #[test]
    fn dual_values_satisfy_self_duality() {
        let grid = IsoradialGrid::square(0.2, 6, 6).unwrap();
        let m = EllipticModulus::new(0.4).unwrap();
        let f = discrete_exponential(&grid, &m, 0, 0.3);
        for e in &grid.edges {
            let left = f.dual_value(&m, e.from, e.bbar);
            let right = f.dual_value(&m, e.from, e.abar);
            let prod = f.values[e.from] * f.values[e.to] * left * right;
            assert!((prod - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn square_lattice_is_not_lazy() {
        let grid = IsoradialGrid::square(0.1, 6, 6).unwrap();
        let m = EllipticModulus::new(0.0).unwrap();
        let g = z_invariant_weights(&grid, &m).unwrap();
        let bulk: Vec<usize> = (0..grid.n()).filter(|&x| grid.is_bulk(x)).collect();
        assert!(lazy_loops(&grid, &g, &bulk).unwrap().iter().all(|&l| l.abs() < 1e-14));
    }
}

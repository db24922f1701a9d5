//! Z²-periodic graphs: Bloch matrices Δᵏ(z,w), the characteristic polynomial,
//! periodic massive harmonic functions and the translation identity.

use crate::graph::{GraphError, GraphFile};
use crate::matrix::Matrix;
use crate::par::{map_tasks, task_rng, Exec};
use crate::scalar::C64;
use rand::Rng;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PeriodicError {
    #[error("Bloch variables must be non-zero")]
    ZeroArgument,
    #[error("edge ({0},{1}) with offset {2:?} has no reverse")]
    MissingReverse(usize, usize, [i64; 2]),
    #[error("conductance of edge {0} must be positive")]
    NonPositive(usize),
    #[error("vertex {0} out of range")]
    BadVertex(usize),
    #[error("mass vanishes identically; constants are already harmonic")]
    Massless,
    #[error("no bracket for β = 1 below z = 2^20")]
    Bracket,
    #[error("coefficient recovery is ill-conditioned (refit residual {0:e})")]
    IllConditioned(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicEdge {
    pub from: usize,
    pub to: usize,
    /// the edge goes from (from, 0) to (to, offset)
    pub offset: [i64; 2],
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicGraph {
    pub n0: usize,
    pub edges: Vec<PeriodicEdge>,
    pub mass: Vec<f64>,
}

impl PeriodicGraph {
    pub fn new(n0: usize, edges: Vec<PeriodicEdge>, mass: Vec<f64>) -> Result<Self, PeriodicError> {
        if mass.len() != n0 {
            return Err(PeriodicError::BadVertex(mass.len()));
        }
        for (k, e) in edges.iter().enumerate() {
            if e.from >= n0 || e.to >= n0 {
                return Err(PeriodicError::BadVertex(e.from.max(e.to)));
            }
            if !(e.c > 0.0) {
                return Err(PeriodicError::NonPositive(k));
            }
            let neg = [-e.offset[0], -e.offset[1]];
            if !edges.iter().any(|f| f.from == e.to && f.to == e.from && f.offset == neg) {
                return Err(PeriodicError::MissingReverse(e.from, e.to, e.offset));
            }
        }
        Ok(PeriodicGraph { n0, edges, mass })
    }

    /// Both orientations of each (x, y, offset, c).
    pub fn symmetric(n0: usize, pairs: &[(usize, usize, [i64; 2], f64)], mass: Vec<f64>) -> Result<Self, PeriodicError> {
        let mut edges = Vec::new();
        for &(x, y, o, c) in pairs {
            edges.push(PeriodicEdge { from: x, to: y, offset: o, c });
            edges.push(PeriodicEdge { from: y, to: x, offset: [-o[0], -o[1]], c });
        }
        PeriodicGraph::new(n0, edges, mass)
    }

    /// Z² with constant conductance and mass.
    pub fn square_lattice(c: f64, m: f64) -> Self {
        PeriodicGraph::symmetric(1, &[(0, 0, [1, 0], c), (0, 0, [0, 1], c)], vec![m]).expect("valid lattice")
    }

    /// Every edge record must carry an offset.
    pub fn from_file(f: &GraphFile) -> Result<Self, PeriodicError> {
        let ids = f.id_map()?;
        let look = |id: i64| ids.get(&id).copied().ok_or_else(|| GraphError::Parse(format!("unknown vertex id {id}")));
        let mut edges = Vec::new();
        for e in &f.edges {
            let offset = e.offset.ok_or_else(|| GraphError::Parse(format!("edge {}→{} has no offset", e.from, e.to)))?;
            edges.push(PeriodicEdge {
                from: look(e.from)?,
                to: look(e.to)?,
                offset,
                c: crate::scalar::q_to_f64(&e.conductance.to_q()?),
            });
        }
        let mass = f
            .vertices
            .iter()
            .map(|v| v.mass.as_ref().map_or(Ok(0.0), |m| m.to_q().map(|q| crate::scalar::q_to_f64(&q))))
            .collect::<Result<Vec<_>, _>>()?;
        PeriodicGraph::new(f.vertices.len(), edges, mass)
    }

    pub fn c_kill(&self, x: usize) -> f64 {
        self.mass[x] + self.edges.iter().filter(|e| e.from == x).map(|e| e.c).sum::<f64>()
    }

    pub fn max_offset(&self) -> [i64; 2] {
        let mut out = [0, 0];
        for e in &self.edges {
            out[0] = out[0].max(e.offset[0].abs());
            out[1] = out[1].max(e.offset[1].abs());
        }
        out
    }

    /// c̃ = c λ(y₀) z₀ʲ / λ(x₀) with no mass.
    pub fn tilt(&self, lambda: &[f64], z0: [f64; 2]) -> PeriodicGraph {
        let edges = self
            .edges
            .iter()
            .map(|e| PeriodicEdge { c: e.c * lambda[e.to] * monomial_re(z0, e.offset) / lambda[e.from], ..e.clone() })
            .collect();
        PeriodicGraph { n0: self.n0, edges, mass: vec![0.0; self.n0] }
    }
}

fn monomial(z: C64, w: C64, j: [i64; 2]) -> C64 {
    z.powi(j[0] as i32) * w.powi(j[1] as i32)
}

fn monomial_re(z: [f64; 2], j: [i64; 2]) -> f64 {
    z[0].powi(j[0] as i32) * z[1].powi(j[1] as i32)
}

/// Δᵏ(z,w) on V₀.
pub fn assemble_bloch(pg: &PeriodicGraph, z: C64, w: C64) -> Result<Matrix<C64>, PeriodicError> {
    if z == C64::new(0.0, 0.0) || w == C64::new(0.0, 0.0) {
        return Err(PeriodicError::ZeroArgument);
    }
    let mut a = Matrix::zeros(pg.n0, pg.n0);
    for x in 0..pg.n0 {
        a[(x, x)] = C64::new(pg.c_kill(x), 0.0);
    }
    for e in &pg.edges {
        a[(e.from, e.to)] -= e.c * monomial(z, w, e.offset);
    }
    Ok(a)
}

pub fn eval_charpoly(pg: &PeriodicGraph, z: C64, w: C64) -> Result<C64, PeriodicError> {
    Ok(assemble_bloch(pg, z, w)?.det())
}

/// Qᵏ(z) = I − D(cᵏ)⁻¹Δᵏ(z) at a real positive point.
pub fn transition_bloch(pg: &PeriodicGraph, z: [f64; 2]) -> Matrix<f64> {
    let mut q = Matrix::zeros(pg.n0, pg.n0);
    for e in &pg.edges {
        q[(e.from, e.to)] += e.c * monomial_re(z, e.offset) / pg.c_kill(e.from);
    }
    q
}

/// Perron eigenvalue and positive eigenvector (max entry 1) of an irreducible
/// non-negative matrix, by power iteration on Q + I with Collatz–Wielandt bounds.
pub fn perron(q: &Matrix<f64>) -> (f64, Vec<f64>) {
    let n = q.rows();
    let mut v = vec![1.0; n];
    let mut est = 0.0;
    for _ in 0..1_000_000 {
        let av: Vec<f64> = (0..n).map(|i| v[i] + (0..n).map(|j| q[(i, j)] * v[j]).sum::<f64>()).collect();
        let ratios = (0..n).map(|i| av[i] / v[i]);
        let (lo, hi) = ratios.fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r), b.max(r)));
        let top = av.iter().cloned().fold(0.0, f64::max);
        v = av.iter().map(|x| x / top).collect();
        est = 0.5 * (lo + hi);
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    (est - 1.0, v)
}

#[derive(Clone, Debug)]
pub struct PerronSolution {
    pub z0: [f64; 2],
    /// positive z₀-periodic massive harmonic function on V₀ (λ[0] = 1)
    pub lambda: Vec<f64>,
    pub beta: f64,
    /// (z, β(z)) along the bisection
    pub log: Vec<(f64, f64)>,
}

/// Solves β(Qᵏ(z)) = 1 along one axis, the other variable fixed to 1.
pub fn perron_search(pg: &PeriodicGraph, axis: usize) -> Result<PerronSolution, PeriodicError> {
    if pg.mass.iter().all(|&m| m == 0.0) {
        return Err(PeriodicError::Massless);
    }
    let point = |t: f64| {
        let mut z = [1.0, 1.0];
        z[axis] = t.exp();
        z
    };
    let beta = |t: f64| perron(&transition_bloch(pg, point(t))).0;
    let mut log = Vec::new();
    let (mut lo, mut hi) = (0.0, 2f64.ln());
    loop {
        let b = beta(hi);
        log.push((hi.exp(), b));
        if b > 1.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 20.0 * 2f64.ln() {
            return Err(PeriodicError::Bracket);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let b = beta(mid);
        log.push((mid.exp(), b));
        if b > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let (b, v) = perron(&transition_bloch(pg, point(t)));
    let lambda = v.iter().map(|x| x / v[0]).collect();
    Ok(PerronSolution { z0: point(t), lambda, beta: b, log })
}

/// max relative |Δᵏλ| over the unrolled window [−r, r]² of z₀-periodic λ.
pub fn lattice_residual(pg: &PeriodicGraph, z0: [f64; 2], lambda: &[f64], r: i64) -> f64 {
    let value = |x: usize, i: [i64; 2]| lambda[x] * monomial_re(z0, i);
    let mut worst: f64 = 0.0;
    for a in -r..=r {
        for b in -r..=r {
            for x in 0..pg.n0 {
                let mut s = pg.c_kill(x) * value(x, [a, b]);
                for e in pg.edges.iter().filter(|e| e.from == x) {
                    s -= e.c * value(e.to, [a + e.offset[0], b + e.offset[1]]);
                }
                worst = worst.max(s.abs() / (pg.c_kill(x) * value(x, [a, b])));
            }
        }
    }
    worst
}

/// Laurent coefficients of P(z,w) = det Δᵏ(z,w).
#[derive(Clone, Debug)]
pub struct CharPoly {
    pub coeffs: BTreeMap<(i64, i64), f64>,
    /// exponents lie in [−box[0], box[0]] × [−box[1], box[1]]
    pub exp_box: [i64; 2],
    /// max relative refit error at fresh points
    pub refit_residual: f64,
}

impl CharPoly {
    pub fn eval(&self, z: C64, w: C64) -> C64 {
        self.coeffs.iter().map(|(&(a, b), &c)| c * monomial(z, w, [a, b])).sum()
    }

    /// Vertices of the Newton polygon, counterclockwise.
    pub fn newton_polygon(&self) -> Vec<(i64, i64)> {
        let pts: Vec<(i64, i64)> = self.coeffs.keys().copied().collect();
        convex_hull(pts)
    }
}

fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Recovers the coefficients by a 2-D DFT on roots of unity of radius ρ;
/// ρ is retried at 1, 0.8, 1.25 before giving up.
pub fn charpoly(pg: &PeriodicGraph, exec: Exec) -> Result<CharPoly, PeriodicError> {
    let mo = pg.max_offset();
    let d = [mo[0] * pg.n0 as i64, mo[1] * pg.n0 as i64];
    let mut best = f64::INFINITY;
    for rho in [1.0, 0.8, 1.25] {
        let cp = dft_recover(pg, d, rho, exec)?;
        if cp.refit_residual <= 1e-9 {
            return Ok(cp);
        }
        best = best.min(cp.refit_residual);
    }
    Err(PeriodicError::IllConditioned(best))
}

fn dft_recover(pg: &PeriodicGraph, d: [i64; 2], rho: f64, exec: Exec) -> Result<CharPoly, PeriodicError> {
    let n = [(2 * d[0] + 1) as usize, (2 * d[1] + 1) as usize];
    let root = |k: usize, m: usize| C64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64);
    let vals: Vec<C64> = map_tasks(n[0] * n[1], exec, |t| {
        let (a, b) = (t / n[1], t % n[1]);
        eval_charpoly(pg, rho * root(a, n[0]), rho * root(b, n[1])).expect("non-zero point")
    });
    let mut coeffs = BTreeMap::new();
    let mut scale: f64 = 0.0;
    for ka in -d[0]..=d[0] {
        for kb in -d[1]..=d[1] {
            let mut s = C64::new(0.0, 0.0);
            for a in 0..n[0] {
                for b in 0..n[1] {
                    let phase = C64::from_polar(
                        1.0,
                        -2.0 * PI * (a as f64 * ka as f64 / n[0] as f64 + b as f64 * kb as f64 / n[1] as f64),
                    );
                    s += vals[a * n[1] + b] * phase;
                }
            }
            let c = (s / (n[0] * n[1]) as f64 / rho.powi((ka + kb) as i32)).re;
            scale = scale.max(c.abs());
            coeffs.insert((ka, kb), c);
        }
    }
    coeffs.retain(|_, c| c.abs() > 1e-11 * scale.max(1.0));
    for c in coeffs.values_mut() {
        let r = c.round();
        if (*c - r).abs() < 1e-11 * scale.max(1.0) {
            *c = r;
        }
    }
    let mut cp = CharPoly { coeffs, exp_box: d, refit_residual: 0.0 };
    let mut rng = task_rng(0x5eed, 7);
    for _ in 0..8 {
        let z = C64::from_polar(0.6 + 0.8 * rng.random::<f64>(), 2.0 * PI * rng.random::<f64>());
        let w = C64::from_polar(0.6 + 0.8 * rng.random::<f64>(), 2.0 * PI * rng.random::<f64>());
        let exact = eval_charpoly(pg, z, w)?;
        cp.refit_residual = cp.refit_residual.max((cp.eval(z, w) - exact).norm() / exact.norm().max(1.0));
    }
    Ok(cp)
}

/// Random points with moduli in [1/2, 2] and uniform arguments.
pub fn random_points(n: usize, seed: u64) -> Vec<(C64, C64)> {
    let mut rng = task_rng(seed, 0);
    let mut draw = || C64::from_polar(2f64.powf(2.0 * rng.random::<f64>() - 1.0), 2.0 * PI * rng.random::<f64>());
    (0..n).map(|_| (draw(), draw())).collect()
}

/// max over points of |P̃(z/z₀, w/w₀) − Pᵏ(z, w)| / |Pᵏ(z, w)|.
pub fn verify_translation(pg: &PeriodicGraph, sol: &PerronSolution, points: &[(C64, C64)]) -> Result<f64, PeriodicError> {
    let tilde = pg.tilt(&sol.lambda, sol.z0);
    let mut worst: f64 = 0.0;
    for &(z, w) in points {
        let p = eval_charpoly(pg, z, w)?;
        let pt = eval_charpoly(&tilde, z / sol.z0[0], w / sol.z0[1])?;
        worst = worst.max((pt - p).norm() / p.norm().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct SpectralProbe {
    pub p_at_one: f64,
    /// max |Im P| / |P| over sampled positive points
    pub max_imag_ratio: f64,
    /// (t, sign of P(t, t)) along the diagonal ray
    pub diagonal_signs: Vec<(f64, i8)>,
    pub min_on_positive: f64,
}

pub fn spectral_probe(pg: &PeriodicGraph) -> Result<SpectralProbe, PeriodicError> {
    let re = |x: f64, y: f64| eval_charpoly(pg, C64::new(x, 0.0), C64::new(y, 0.0));
    let p1 = re(1.0, 1.0)?;
    let mut imag: f64 = 0.0;
    let mut min = f64::INFINITY;
    let ts: Vec<f64> = (-8..=8).map(|k| 2f64.powf(k as f64 / 4.0)).collect();
    for &x in &ts {
        for &y in &ts {
            let p = re(x, y)?;
            imag = imag.max(p.im.abs() / p.norm().max(f64::MIN_POSITIVE));
            min = min.min(p.re);
        }
    }
    let diagonal_signs = ts
        .iter()
        .map(|&t| re(t, t).map(|p| (t, if p.re > 0.0 { 1 } else if p.re < 0.0 { -1 } else { 0 })))
        .collect::<Result<_, _>>()?;
    Ok(SpectralProbe { p_at_one: p1.re, max_imag_ratio: imag, diagonal_signs, min_on_positive: min })
}

/// Connected random periodic graph on n₀ ≤ 3 vertices with offsets in {−1,0,1}².
pub fn random_periodic(n0: usize, seed: u64) -> PeriodicGraph {
    let mut rng = task_rng(seed, 0);
    let mut c = || 0.25 + 1.75 * rng.random::<f64>();
    let mut pairs = vec![(0, 0, [1, 0], c()), (0, 0, [0, 1], c())];
    for x in 1..n0 {
        pairs.push((x - 1, x, [0, 0], c()));
    }
    let mut rng = task_rng(seed, 1);
    let extra = 1 + rng.random_range(0..3);
    for _ in 0..extra {
        let x = rng.random_range(0..n0);
        let y = rng.random_range(0..n0);
        let o = [rng.random_range(-1..=1), rng.random_range(-1..=1)];
        if x == y && o == [0, 0] {
            continue;
        }
        pairs.push((x, y, o, 0.25 + 1.75 * rng.random::<f64>()));
    }
    let mut mass: Vec<f64> = (0..n0).map(|_| rng.random::<f64>()).collect();
    mass[0] += 0.1;
    PeriodicGraph::symmetric(n0, &pairs, mass).expect("symmetric by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_lattice_bloch_entry() {
        let pg = PeriodicGraph::square_lattice(1.0, 0.3);
        let (z, w) = (C64::new(0.7, 0.2), C64::new(-1.1, 0.5));
        let a = assemble_bloch(&pg, z, w).unwrap();
        let direct = 4.3 - z - 1.0 / z - w - 1.0 / w;
        assert!((a[(0, 0)] - direct).norm() < 1e-14);
        assert_eq!(assemble_bloch(&pg, C64::new(0.0, 0.0), w), Err(PeriodicError::ZeroArgument));
    }

    #[test]
    fn square_lattice_coefficients_and_polygon() {
        let cp = charpoly(&PeriodicGraph::square_lattice(1.0, 1.0), Exec::default()).unwrap();
        let expect: BTreeMap<(i64, i64), f64> =
            [((0, 0), 5.0), ((1, 0), -1.0), ((-1, 0), -1.0), ((0, 1), -1.0), ((0, -1), -1.0)].into_iter().collect();
        assert_eq!(cp.coeffs, expect);
        assert_eq!(cp.newton_polygon(), vec![(-1, 0), (0, -1), (1, 0), (0, 1)]);
        let massless = PeriodicGraph::square_lattice(1.0, 0.0);
        assert!(eval_charpoly(&massless, C64::new(1.0, 0.0), C64::new(1.0, 0.0)).unwrap().norm() < 1e-14);
    }

    #[test]
    fn perron_recovers_two() {
        let pg = PeriodicGraph::square_lattice(1.0, 0.5);
        let sol = perron_search(&pg, 0).unwrap();
        assert!((sol.z0[0] - 2.0).abs() < 1e-10, "{:?}", sol.z0);
        assert!((sol.beta - 1.0).abs() < 1e-10);
        assert_eq!(sol.z0[1], 1.0);
        assert_eq!(perron_search(&PeriodicGraph::square_lattice(1.0, 0.0), 0).unwrap_err(), PeriodicError::Massless);
    }

    #[test]
    fn random_graphs_translate() {
        for seed in 0..12 {
            let pg = random_periodic(1 + (seed as usize % 3), seed);
            let sol = perron_search(&pg, 0).unwrap();
            assert!(sol.lambda.iter().all(|&l| l > 0.0));
            assert!((sol.beta - 1.0).abs() < 1e-10);
            assert!(lattice_residual(&pg, sol.z0, &sol.lambda, 2) < 1e-10);
            let gap = verify_translation(&pg, &sol, &random_points(20, seed)).unwrap();
            assert!(gap < 1e-8, "seed {seed}: {gap}");
            let cp = charpoly(&pg, Exec::Sequential).unwrap();
            assert!(cp.refit_residual < 1e-9);
        }
    }

    #[test]
    fn tilde_kills_constants_at_z0() {
        let pg = random_periodic(2, 3);
        let sol = perron_search(&pg, 1).unwrap();
        let t = pg.tilt(&sol.lambda, sol.z0);
        let p = eval_charpoly(&t, C64::new(1.0, 0.0), C64::new(1.0, 0.0)).unwrap();
        assert!(p.norm() < 1e-8);
    }

    #[test]
    fn probe_on_square_lattice() {
        let s = spectral_probe(&PeriodicGraph::square_lattice(1.0, 1.0)).unwrap();
        assert!((s.p_at_one - 1.0).abs() < 1e-14);
        assert!(s.max_imag_ratio < 1e-14);
    }
}

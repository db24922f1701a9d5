//! Near-critical experiments on isoradial grids with q = Mδ/2: Girsanov ratios,
//! loop-erased walk statistics, crossing estimates, exit laws, the
//! approximation property and dimer height fields.

use crate::dimers::{sample_matchings, DimerError, DimerWindow, HeightGraph};
use crate::doob::doob_conductances;
use crate::elliptic::{near_critical, EllipticError, EllipticModulus};
use crate::graph::WeightedGraph;
use crate::isoradial::{
    discrete_exponential, largest_component, random_angles, z_invariant_weights, ExponentialField, GridError,
    IsoradialGrid,
};
use crate::matrix::{Csr, Matrix};
use crate::par::{run_chunked, Exec};
use crate::walks::{loop_erase, Step, WalkTable};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const ARCS: usize = 16;
const WALK_CAP: usize = 100_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum NearCritError {
    #[error("q = Mδ/2 = {0} must lie in [0, 1)")]
    Nome(f64),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("path is not simple or leaves the window")]
    BadPath,
    #[error("no sample matched the target path")]
    ZeroCount,
    #[error("acceptance rate {0:e} below 1e-4; enlarge the target arc or lower M")]
    Acceptance(f64),
    #[error("linear solve did not converge")]
    Solve,
    #[error("walk exceeded the step cap")]
    StepCap,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Elliptic(#[from] EllipticError),
    #[error(transparent)]
    Dimer(#[from] DimerError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Disk { center: [f64; 2], radius: f64 },
    Rectangle { min: [f64; 2], max: [f64; 2] },
    Polygon { points: Vec<[f64; 2]> },
}

impl Domain {
    pub fn unit_disk() -> Self {
        Domain::Disk { center: [0.0, 0.0], radius: 1.0 }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Domain::Disk { center, radius } => (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) <= radius * radius,
            Domain::Rectangle { min, max } => p[0] >= min[0] && p[0] <= max[0] && p[1] >= min[1] && p[1] <= max[1],
            Domain::Polygon { points } => {
                // even-odd rule
                let mut inside = false;
                let n = points.len();
                for i in 0..n {
                    let (a, b) = (points[i], points[(i + n - 1) % n]);
                    if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Domain::Disk { center, radius } => {
                ([center[0] - radius, center[1] - radius], [center[0] + radius, center[1] + radius])
            }
            Domain::Rectangle { min, max } => (*min, *max),
            Domain::Polygon { points } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for p in points {
                    for k in 0..2 {
                        lo[k] = lo[k].min(p[k]);
                        hi[k] = hi[k].max(p[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    pub fn center(&self) -> [f64; 2] {
        match self {
            Domain::Disk { center, .. } => *center,
            _ => {
                let (lo, hi) = self.bbox();
                [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])]
            }
        }
    }

    /// Point where the segment from `a` (inside) to `b` (outside) first meets the boundary, by bisection.
    pub fn crossing(&self, a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
        let (mut lo, mut hi) = (0.0, 1.0);
        let at = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.contains(at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    }

    pub fn scaled(&self, r: f64) -> Self {
        let s = |p: [f64; 2]| [r * p[0], r * p[1]];
        match self {
            Domain::Disk { center, radius } => Domain::Disk { center: s(*center), radius: r * radius },
            Domain::Rectangle { min, max } => Domain::Rectangle { min: s(*min), max: s(*max) },
            Domain::Polygon { points } => Domain::Polygon { points: points.iter().map(|&p| s(p)).collect() },
        }
    }

    fn validate(&self) -> Result<(), NearCritError> {
        let (lo, hi) = self.bbox();
        if !(hi[0] > lo[0] && hi[1] > lo[1]) || !lo.iter().chain(&hi).all(|v| v.is_finite()) {
            return Err(NearCritError::Geometry(format!("empty domain {self:?}")));
        }
        if let Domain::Polygon { points } = self {
            if points.len() < 3 {
                return Err(NearCritError::Geometry("polygon needs three points".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Lattice {
    #[default]
    Square,
    Rhombic { jitter: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub delta: f64,
    pub mass: f64,
    #[serde(default)]
    pub ubar: f64,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lattice: Lattice,
    /// start point, defaults to the centre of the domain
    #[serde(default)]
    pub start: Option<[f64; 2]>,
}

impl ExperimentConfig {
    pub fn nome(&self) -> f64 {
        0.5 * self.mass * self.delta
    }

    pub fn validate(&self) -> Result<(), NearCritError> {
        let q = self.nome();
        if !(0.0..1.0).contains(&q) || !(self.delta > 0.0) {
            return Err(NearCritError::Nome(q));
        }
        self.domain.validate()
    }

    /// Same experiment on rΩ with mesh rδ and mass M/r.
    pub fn rescaled(&self, r: f64) -> Self {
        ExperimentConfig {
            domain: self.domain.scaled(r),
            delta: r * self.delta,
            mass: self.mass / r,
            start: self.start.map(|p| [r * p[0], r * p[1]]),
            ..self.clone()
        }
    }
}

/// An isoradial grid covering a domain, with Z-invariant weights and λᵘ.
#[derive(Clone, Debug)]
pub struct NearCritGrid {
    pub grid: IsoradialGrid,
    /// grid position − domain coordinate
    pub origin: [f64; 2],
    pub modulus: EllipticModulus,
    pub g: WeightedGraph<f64>,
    pub field: ExponentialField,
    pub mass: f64,
    pub delta: f64,
    pub ubar: f64,
}

impl NearCritGrid {
    /// Grid around `bbox` with a margin of 4δ; its central primal vertex sits at the point of δ√2·Z² nearest the centre.
    pub fn covering(bbox: ([f64; 2], [f64; 2]), lattice: &Lattice, delta: f64, mass: f64, ubar: f64) -> Result<Self, NearCritError> {
        let q = 0.5 * mass * delta;
        if !(0.0..1.0).contains(&q) || !(delta > 0.0) {
            return Err(NearCritError::Nome(q));
        }
        let (lo, hi) = bbox;
        let half = 0.5 * ((hi[0] - lo[0]) + (hi[1] - lo[1]));
        let stretch = match lattice {
            Lattice::Square => 1.0,
            Lattice::Rhombic { .. } => 1.6,
        };
        let n = (2.0 * stretch * (half + 4.0 * delta) * std::f64::consts::SQRT_2 / delta).ceil() as usize + 2;
        let n = n + n % 2;
        let grid = match lattice {
            Lattice::Square => IsoradialGrid::square(delta, n, n)?,
            Lattice::Rhombic { jitter, seed } => {
                let (a, b) = random_angles(n, n, *jitter, *seed);
                IsoradialGrid::rhombic(delta, a, b, 0.1)?
            }
        };
        let modulus = near_critical(mass, delta)?;
        let g = z_invariant_weights(&grid, &modulus)?;
        let mid = grid.corner_pos(n / 2, n / 2);
        // anchor the central primal vertex on δ√2·Z² so translated domains see the lattice differently
        let step = delta * std::f64::consts::SQRT_2;
        let centre = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])].map(|c| step * (c / step).round());
        let origin = [mid[0] - centre[0], mid[1] - centre[1]];
        let x0 = grid.nearest(mid);
        let field = discrete_exponential(&grid, &modulus, x0, ubar);
        Ok(NearCritGrid { grid, origin, modulus, g, field, mass, delta, ubar })
    }

    pub fn for_config(cfg: &ExperimentConfig) -> Result<Self, NearCritError> {
        cfg.validate()?;
        NearCritGrid::covering(cfg.domain.bbox(), &cfg.lattice, cfg.delta, cfg.mass, cfg.ubar)
    }

    /// Domain coordinates of a vertex.
    pub fn point(&self, x: usize) -> [f64; 2] {
        let p = self.grid.pos[x];
        [p[0] - self.origin[0], p[1] - self.origin[1]]
    }

    pub fn nearest(&self, p: [f64; 2]) -> usize {
        self.grid.nearest([p[0] + self.origin[0], p[1] + self.origin[1]])
    }

    /// Largest connected component of the vertices inside the domain.
    pub fn window(&self, domain: &Domain) -> Result<Window, NearCritError> {
        let vertices = largest_component(&self.g, |x| domain.contains(self.point(x)));
        if vertices.is_empty() {
            return Err(NearCritError::Geometry("domain contains no vertex".into()));
        }
        let mut inside = vec![false; self.g.n()];
        for &v in &vertices {
            inside[v] = true;
        }
        Ok(Window { vertices, inside })
    }

    pub fn killed_table(&self) -> WalkTable {
        WalkTable::new(&self.g)
    }

    pub fn tilde_graph(&self) -> WeightedGraph<f64> {
        doob_conductances(&self.g, &self.field.values).expect("positive exponential")
    }

    pub fn tilde_table(&self) -> WalkTable {
        WalkTable::new(&self.tilde_graph())
    }

    /// exp(2M⟨e^{iū}, y − x⟩)
    pub fn girsanov_target(&self, x: usize, y: usize) -> f64 {
        let (a, b) = (self.point(x), self.point(y));
        (2.0 * self.mass * (self.ubar.cos() * (b[0] - a[0]) + self.ubar.sin() * (b[1] - a[1]))).exp()
    }
}

#[derive(Clone, Debug)]
pub struct Window {
    pub vertices: Vec<usize>,
    pub inside: Vec<bool>,
}

impl Window {
    pub fn is_boundary(&self, g: &WeightedGraph<f64>, x: usize) -> bool {
        self.inside[x] && g.out_edges(x).iter().any(|&e| !self.inside[g.edge(e).to])
    }
}

fn transition(g: &WeightedGraph<f64>, x: usize, y: usize) -> f64 {
    let c: f64 = g.out_edges(x).iter().map(|&e| g.edge(e)).filter(|e| e.to == y).map(|e| e.c).sum();
    c / g.c_kill(x)
}

// ---------------------------------------------------------------------------
// Girsanov

#[derive(Clone, Debug)]
pub struct GirsanovRow {
    pub delta: f64,
    pub ubar: f64,
    pub ratio: f64,
    pub target: f64,
    pub error: f64,
    pub length: usize,
}

/// Straight path from the vertex nearest `from` in direction `dir` until the first boundary vertex.
pub fn straight_path(ng: &NearCritGrid, w: &Window, from: [f64; 2], dir: f64) -> Result<Vec<usize>, NearCritError> {
    let (ux, uy) = (dir.cos(), dir.sin());
    let mut path = vec![ng.nearest(from)];
    if !w.inside[path[0]] {
        return Err(NearCritError::BadPath);
    }
    let p0 = ng.point(path[0]);
    while !w.is_boundary(&ng.g, *path.last().unwrap()) {
        let x = *path.last().unwrap();
        let px = ng.point(x);
        let best = ng
            .g
            .out_edges(x)
            .iter()
            .map(|&e| ng.g.edge(e).to)
            .filter(|y| !path.contains(y))
            .map(|y| {
                let p = ng.point(y);
                let along = (p[0] - px[0]) * ux + (p[1] - px[1]) * uy;
                let off = ((p[0] - p0[0]) * uy - (p[1] - p0[1]) * ux).abs();
                (y, along - 2.0 * off)
            })
            .filter(|t| t.1.is_finite())
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        match best {
            Some((y, s)) if s > 0.0 || path.len() < 2 => path.push(y),
            _ => return Err(NearCritError::BadPath),
        }
    }
    Ok(path)
}

/// P(S̃ follows γ then leaves V) / P(Sᵏ follows γ then leaves V or dies), as a product of transition probabilities.
pub fn girsanov_product(ng: &NearCritGrid, w: &Window, path: &[usize]) -> Result<f64, NearCritError> {
    let tilde = ng.tilde_graph();
    let mut seen = std::collections::HashSet::new();
    if path.is_empty() || !path.iter().all(|&x| w.inside[x] && seen.insert(x)) {
        return Err(NearCritError::BadPath);
    }
    let mut ratio = 1.0;
    for k in 1..path.len() {
        let (a, b) = (path[k - 1], path[k]);
        let pk = transition(&ng.g, a, b);
        if pk == 0.0 {
            return Err(NearCritError::BadPath);
        }
        ratio *= transition(&tilde, a, b) / pk;
    }
    let y = *path.last().unwrap();
    let out = |g: &WeightedGraph<f64>| -> f64 {
        g.out_edges(y).iter().map(|&e| g.edge(e)).filter(|e| !w.inside[e.to]).map(|e| e.c).sum::<f64>() / g.c_kill(y)
    };
    let leave_tilde = out(&tilde);
    let leave_killed = out(&ng.g) + ng.g.mass()[y] / ng.g.c_kill(y);
    Ok(ratio * leave_tilde / leave_killed)
}

/// Straight-path Girsanov table on `domain` from its centre in direction 0.
pub fn girsanov_ratio_check(domain: &Domain, lattice: &Lattice, deltas: &[f64], ubars: &[f64], mass: f64) -> Result<Vec<GirsanovRow>, NearCritError> {
    let mut rows = Vec::new();
    for &delta in deltas {
        for &ubar in ubars {
            let ng = NearCritGrid::covering(domain.bbox(), lattice, delta, mass, ubar)?;
            let w = ng.window(domain)?;
            let path = straight_path(&ng, &w, domain.center(), 0.0)?;
            let ratio = girsanov_product(&ng, &w, &path)?;
            let target = ng.girsanov_target(path[0], *path.last().unwrap());
            rows.push(GirsanovRow { delta, ubar, ratio, target, error: (ratio - target).abs(), length: path.len() });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Loop-erased walks

/// Walk until death or until leaving the window; returns the trajectory
/// (including the outside vertex when it exits) and whether it exited.
pub fn run_to_exit<R: Rng + ?Sized>(t: &WalkTable, inside: &[bool], start: usize, rng: &mut R) -> Result<(Vec<usize>, bool), NearCritError> {
    let mut path = vec![start];
    let mut x = start;
    for _ in 0..WALK_CAP {
        match t.step_killed(x, rng) {
            Step::Die => return Ok((path, false)),
            Step::Move { to, .. } => {
                x = to;
                path.push(x);
                if !inside[x] {
                    return Ok((path, true));
                }
            }
        }
    }
    Err(NearCritError::StepCap)
}

/// Exact P(LE = γ) for a walk on `g` stopped outside the window, γ ending at an outside vertex:
/// ∏ p(γᵢ, γᵢ₊₁) · det G[γ_in] with G the Green function of the walk killed outside.
pub fn lerw_path_probability(g: &WeightedGraph<f64>, w: &Window, gamma: &[usize]) -> Result<f64, NearCritError> {
    let k = gamma.len() - 1;
    if gamma.len() < 2 || w.inside[gamma[k]] || !gamma[..k].iter().all(|&x| w.inside[x]) {
        return Err(NearCritError::BadPath);
    }
    let idx: std::collections::HashMap<usize, usize> = w.vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let n = w.vertices.len();
    let mut lap = Matrix::zeros(n, n);
    for (i, &v) in w.vertices.iter().enumerate() {
        lap[(i, i)] = g.c_kill(v);
        for &e in g.out_edges(v) {
            if let Some(&j) = idx.get(&g.edge(e).to) {
                lap[(i, j)] -= g.edge(e).c;
            }
        }
    }
    let inv = lap.inverse().ok_or(NearCritError::Solve)?;
    let rows: Vec<usize> = gamma[..k].iter().map(|v| idx[v]).collect();
    let green = Matrix::from_fn(k, k, |a, b| inv[(rows[a], rows[b])] * g.c_kill(gamma[b]));
    let steps: f64 = gamma.windows(2).map(|p| transition(g, p[0], p[1])).product();
    Ok(steps * green.det())
}

#[derive(Clone, Debug)]
pub struct LerwRatio {
    /// Monte-Carlo P̂(LE(S̃) = γ) / P(LE(Sᵏ) = γ)
    pub ratio: f64,
    pub sigma: f64,
    /// the same ratio computed exactly
    pub exact: f64,
    pub girsanov: f64,
    pub hits: usize,
    pub samples: usize,
}

/// Empirical LERW path-probability ratio with an exact denominator.
pub fn lerw_ratio_check(ng: &NearCritGrid, w: &Window, gamma: &[usize], n: usize, seed: u64, exec: Exec) -> Result<LerwRatio, NearCritError> {
    let tilde = ng.tilde_graph();
    let pk = lerw_path_probability(&ng.g, w, gamma)?;
    let pt = lerw_path_probability(&tilde, w, gamma)?;
    let table = WalkTable::new(&tilde);
    let hits: usize = run_chunked(n, seed, exec, |rng, _, count| -> Result<usize, NearCritError> {
        let mut h = 0;
        for _ in 0..count {
            let (path, exited) = run_to_exit(&table, &w.inside, gamma[0], rng)?;
            if exited && loop_erase(&path) == gamma {
                h += 1;
            }
        }
        Ok(h)
    })
    .into_iter()
    .sum::<Result<usize, _>>()?;
    if hits == 0 {
        return Err(NearCritError::ZeroCount);
    }
    let p = hits as f64 / n as f64;
    Ok(LerwRatio {
        ratio: p / pk,
        sigma: (p * (1.0 - p) / n as f64).sqrt() / pk,
        exact: pt / pk,
        girsanov: ng.girsanov_target(gamma[0], *gamma.last().unwrap()),
        hits,
        samples: n,
    })
}

#[derive(Clone, Debug)]
pub struct BranchSamples {
    pub paths: Vec<Vec<[f64; 2]>>,
    pub attempts: usize,
    pub acceptance: f64,
}

/// Loop-erased killed walks from `start`, conditioned to leave the window
/// before dying through an exit whose angle about the domain centre lies in `arc`.
pub fn conditioned_branch_sampler(
    ng: &NearCritGrid,
    domain: &Domain,
    start: [f64; 2],
    arc: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<BranchSamples, NearCritError> {
    let w = ng.window(domain)?;
    let t = ng.killed_table();
    let x0 = ng.nearest(start);
    if !w.inside[x0] {
        return Err(NearCritError::Geometry("start outside the window".into()));
    }
    let c = domain.center();
    let mut rng = crate::par::task_rng(seed, 0);
    let mut paths = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while paths.len() < n {
        attempts += 1;
        if attempts >= 10_000 && (paths.len() as f64) < 1e-4 * attempts as f64 {
            return Err(NearCritError::Acceptance(paths.len() as f64 / attempts as f64));
        }
        let (path, exited) = run_to_exit(&t, &w.inside, x0, &mut rng)?;
        if !exited {
            continue;
        }
        let p = ng.point(*path.last().unwrap());
        let a = (p[1] - c[1]).atan2(p[0] - c[0]).rem_euclid(2.0 * PI);
        let (a0, a1) = (arc.0.rem_euclid(2.0 * PI), arc.1.rem_euclid(2.0 * PI));
        let hit = if a0 <= a1 { a >= a0 && a < a1 } else { a >= a0 || a < a1 };
        if hit {
            paths.push(loop_erase(&path).into_iter().map(|v| ng.point(v)).collect());
        }
    }
    Ok(BranchSamples { paths, attempts, acceptance: n as f64 / attempts as f64 })
}

// ---------------------------------------------------------------------------
// Crossing

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingSpec {
    pub r: f64,
    pub z: [f64; 2],
    #[serde(default)]
    pub vertical: bool,
}

impl CrossingSpec {
    pub fn rectangle(&self) -> Domain {
        let (w, h) = if self.vertical { (1.0, 3.0) } else { (3.0, 1.0) };
        Domain::Rectangle { min: self.z, max: [self.z[0] + w * self.r, self.z[1] + h * self.r] }
    }

    pub fn start(&self) -> [f64; 2] {
        [self.z[0] + 0.5 * self.r, self.z[1] + 0.5 * self.r]
    }

    pub fn target(&self) -> [f64; 2] {
        if self.vertical {
            [self.z[0] + 0.5 * self.r, self.z[1] + 2.5 * self.r]
        } else {
            [self.z[0] + 2.5 * self.r, self.z[1] + 0.5 * self.r]
        }
    }

    pub fn ball_radius(&self) -> f64 {
        0.25 * self.r
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Estimate {
    pub p: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Vertex classes for a crossing: 0 outside R, 1 in R ∖ Bᵗ, 2 in Bᵗ.
fn crossing_classes(ng: &NearCritGrid, spec: &CrossingSpec) -> Vec<u8> {
    let rect = spec.rectangle();
    let (t, rad) = (spec.target(), spec.ball_radius());
    (0..ng.g.n())
        .map(|x| {
            let p = ng.point(x);
            if (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) <= rad * rad {
                2
            } else if rect.contains(p) {
                1
            } else {
                0
            }
        })
        .collect()
}

fn check_spec(spec: &CrossingSpec, delta: f64) -> Result<(), NearCritError> {
    if !(spec.r >= 4.0 * delta) {
        return Err(NearCritError::Geometry(format!("r = {} is below 4δ = {}", spec.r, 4.0 * delta)));
    }
    Ok(())
}

fn crossing_grid(spec: &CrossingSpec, lattice: &Lattice, delta: f64, mass: f64) -> Result<NearCritGrid, NearCritError> {
    check_spec(spec, delta)?;
    NearCritGrid::covering(spec.rectangle().bbox(), lattice, delta, mass, 0.0)
}

/// Monte-Carlo P(killed walk from the centre of Bˢ enters Bᵗ before leaving R or dying).
pub fn crossing_probability(spec: &CrossingSpec, lattice: &Lattice, delta: f64, mass: f64, n: usize, seed: u64, exec: Exec) -> Result<Estimate, NearCritError> {
    let ng = crossing_grid(spec, lattice, delta, mass)?;
    let class = crossing_classes(&ng, spec);
    let t = ng.killed_table();
    let x0 = ng.nearest(spec.start());
    let hits: usize = run_chunked(n, seed, exec, |rng, _, count| -> Result<usize, NearCritError> {
        let mut h = 0;
        'sample: for _ in 0..count {
            let mut x = x0;
            for _ in 0..WALK_CAP {
                match t.step_killed(x, rng) {
                    Step::Die => continue 'sample,
                    Step::Move { to, .. } => {
                        x = to;
                        match class[x] {
                            0 => continue 'sample,
                            2 => {
                                h += 1;
                                continue 'sample;
                            }
                            _ => {}
                        }
                    }
                }
            }
            return Err(NearCritError::StepCap);
        }
        Ok(h)
    })
    .into_iter()
    .sum::<Result<usize, _>>()?;
    let p = hits as f64 / n as f64;
    Ok(Estimate { p, stderr: (p * (1.0 - p) / n as f64).sqrt(), n })
}

/// Exact crossing probabilities by a linear solve: (value at the start vertex, min over Bˢ).
pub fn crossing_probability_exact(spec: &CrossingSpec, lattice: &Lattice, delta: f64, mass: f64) -> Result<(f64, f64), NearCritError> {
    let ng = crossing_grid(spec, lattice, delta, mass)?;
    let class = crossing_classes(&ng, spec);
    let free: Vec<usize> = (0..ng.g.n()).filter(|&x| class[x] == 1).collect();
    let mut idx = vec![usize::MAX; ng.g.n()];
    for (i, &x) in free.iter().enumerate() {
        idx[x] = i;
    }
    let mut trip = Vec::new();
    let mut b = vec![0.0; free.len()];
    for (i, &x) in free.iter().enumerate() {
        trip.push((i, i, ng.g.c_kill(x)));
        for &e in ng.g.out_edges(x) {
            let ed = ng.g.edge(e);
            match class[ed.to] {
                1 => trip.push((i, idx[ed.to], -ed.c)),
                2 => b[i] += ed.c,
                _ => {}
            }
        }
    }
    let h = Csr::from_triplets(free.len(), trip).bicgstab(&b, 1e-12, 100_000).ok_or(NearCritError::Solve)?;
    let x0 = ng.nearest(spec.start());
    let s = spec.start();
    let rad = spec.ball_radius();
    let min = free
        .iter()
        .filter(|&&x| {
            let p = ng.point(x);
            (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2) <= rad * rad
        })
        .map(|&x| h[idx[x]])
        .fold(f64::INFINITY, f64::min);
    let at = if class[x0] == 1 { h[idx[x0]] } else { 0.0 };
    Ok((at, min))
}

// ---------------------------------------------------------------------------
// Exit law

#[derive(Clone, Debug)]
pub struct ExitLaw {
    /// exit frequencies of the tilted walk per arc
    pub discrete: Vec<f64>,
    /// exit frequencies of the drifted Brownian motion per arc
    pub brownian: Vec<f64>,
    pub tv: f64,
    pub samples: usize,
}

pub fn arc_of(p: [f64; 2], c: [f64; 2]) -> usize {
    let a = (p[1] - c[1]).atan2(p[0] - c[0]).rem_euclid(2.0 * PI);
    ((a / (2.0 * PI) * ARCS as f64) as usize).min(ARCS - 1)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn normalise(counts: Vec<usize>) -> Vec<f64> {
    let n: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / n.max(1) as f64).collect()
}

/// Arc counts of the point where the tilted walk's exit edge crosses the boundary.
pub fn discrete_exit_counts(ng: &NearCritGrid, domain: &Domain, start: [f64; 2], n: usize, seed: u64, exec: Exec) -> Result<Vec<usize>, NearCritError> {
    let w = ng.window(domain)?;
    let t = ng.tilde_table();
    let x0 = ng.nearest(start);
    let c = domain.center();
    let chunks = run_chunked(n, seed, exec, |rng, _, count| -> Result<Vec<usize>, NearCritError> {
        let mut h = vec![0usize; ARCS];
        for _ in 0..count {
            let (path, exited) = run_to_exit(&t, &w.inside, x0, rng)?;
            debug_assert!(exited);
            let k = path.len();
            h[arc_of(domain.crossing(ng.point(path[k - 2]), ng.point(path[k - 1])), c)] += 1;
        }
        Ok(h)
    });
    let mut out = vec![0usize; ARCS];
    for ch in chunks {
        for (o, v) in out.iter_mut().zip(ch?) {
            *o += v;
        }
    }
    Ok(out)
}

/// Exact arc probabilities of the tilted walk's exit.
pub fn discrete_exit_exact(ng: &NearCritGrid, domain: &Domain, start: [f64; 2]) -> Result<Vec<f64>, NearCritError> {
    let w = ng.window(domain)?;
    let tilde = ng.tilde_graph();
    let nv = w.vertices.len();
    let mut idx = vec![usize::MAX; tilde.n()];
    for (i, &v) in w.vertices.iter().enumerate() {
        idx[v] = i;
    }
    // row x₀ of the inverse: solve Δ̃ᵀ v = e_{x₀}
    let mut trip = Vec::new();
    for (i, &v) in w.vertices.iter().enumerate() {
        trip.push((i, i, tilde.c_kill(v)));
        for &e in tilde.out_edges(v) {
            let ed = tilde.edge(e);
            if w.inside[ed.to] {
                trip.push((idx[ed.to], i, -ed.c));
            }
        }
    }
    let x0 = ng.nearest(start);
    let mut b = vec![0.0; nv];
    b[idx[x0]] = 1.0;
    let v = Csr::from_triplets(nv, trip).bicgstab(&b, 1e-13, 200_000).ok_or(NearCritError::Solve)?;
    let c = domain.center();
    let mut out = vec![0.0; ARCS];
    for (i, &x) in w.vertices.iter().enumerate() {
        for &e in tilde.out_edges(x) {
            let ed = tilde.edge(e);
            if !w.inside[ed.to] {
                out[arc_of(domain.crossing(ng.point(x), ng.point(ed.to)), c)] += v[i] * ed.c;
            }
        }
    }
    Ok(out)
}

/// Euler scheme for dX = 2M e^{iū} dt + dB with step h; arc where the last step crosses the boundary.
pub fn brownian_exit_counts(domain: &Domain, start: [f64; 2], mass: f64, ubar: f64, h: f64, n: usize, seed: u64, exec: Exec) -> Vec<usize> {
    let drift = [2.0 * mass * ubar.cos() * h, 2.0 * mass * ubar.sin() * h];
    let s = h.sqrt();
    let c = domain.center();
    let chunks = run_chunked(n, seed, exec, |rng, _, count| {
        let mut hist = vec![0usize; ARCS];
        for _ in 0..count {
            let mut p = start;
            let mut prev = start;
            while domain.contains(p) {
                let (gx, gy): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                prev = p;
                p = [p[0] + drift[0] + s * gx, p[1] + drift[1] + s * gy];
            }
            hist[arc_of(domain.crossing(prev, p), c)] += 1;
        }
        hist
    });
    let mut out = vec![0usize; ARCS];
    for ch in chunks {
        for (o, v) in out.iter_mut().zip(ch) {
            *o += v;
        }
    }
    out
}

/// Tilted-walk exit histogram against the drifted Brownian motion (step δ/4).
pub fn exit_law_experiment(cfg: &ExperimentConfig, exec: Exec) -> Result<ExitLaw, NearCritError> {
    let ng = NearCritGrid::for_config(cfg)?;
    let start = cfg.start.unwrap_or(cfg.domain.center());
    let discrete = normalise(discrete_exit_counts(&ng, &cfg.domain, start, cfg.samples, cfg.seed, exec)?);
    let brownian = normalise(brownian_exit_counts(
        &cfg.domain,
        start,
        cfg.mass,
        cfg.ubar,
        cfg.delta / 4.0,
        cfg.samples,
        cfg.seed ^ 0xb0b,
        exec,
    ));
    let tv = total_variation(&discrete, &brownian);
    Ok(ExitLaw { discrete, brownian, tv, samples: cfg.samples })
}

// ---------------------------------------------------------------------------
// Approximation property

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFunction {
    Constant,
    /// x² − y²
    Saddle,
    /// exp(2M⟨e^{iū}, p⟩)
    PlaneExp,
    /// sin(x + 2y)
    Wave,
}

impl TestFunction {
    fn eval(self, p: [f64; 2], mass: f64, ubar: f64) -> (f64, f64) {
        match self {
            TestFunction::Constant => (1.0, 0.0),
            TestFunction::Saddle => (p[0] * p[0] - p[1] * p[1], 0.0),
            TestFunction::PlaneExp => {
                let v = (2.0 * mass * (ubar.cos() * p[0] + ubar.sin() * p[1])).exp();
                (v, 4.0 * mass * mass * v)
            }
            TestFunction::Wave => {
                let v = (p[0] + 2.0 * p[1]).sin();
                (v, -5.0 * v)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ApproxRow {
    pub delta: f64,
    pub function: TestFunction,
    pub residual: f64,
    pub scaled: f64,
}

/// |Δᵏ_δ f(x) + δ²μ(x)(Δf − 4M²f)(x)| / δ³ at the central vertex, μ = ½Σ sin 2θ̄.
pub fn approximation_property_check(lattice: &Lattice, deltas: &[f64], functions: &[TestFunction], mass: f64, ubar: f64) -> Result<Vec<ApproxRow>, NearCritError> {
    let at = [0.3, 0.2];
    let mut rows = Vec::new();
    for &delta in deltas {
        let box_ = ([at[0] - 4.0 * delta, at[1] - 4.0 * delta], [at[0] + 4.0 * delta, at[1] + 4.0 * delta]);
        let ng = NearCritGrid::covering(box_, lattice, delta, mass, ubar)?;
        let x = ng.nearest(at);
        let mu = 0.5 * ng.grid.half_angles(x).iter().map(|t| (2.0 * t).sin()).sum::<f64>();
        for &f in functions {
            let (fx, lapf) = f.eval(ng.point(x), mass, ubar);
            let mut lk = ng.g.mass()[x] * fx;
            for &e in ng.g.out_edges(x) {
                let ed = ng.g.edge(e);
                lk += ed.c * (fx - f.eval(ng.point(ed.to), mass, ubar).0);
            }
            let residual = (lk + delta * delta * mu * (lapf - 4.0 * mass * mass * fx)).abs();
            rows.push(ApproxRow { delta, function: f, residual, scaled: residual / delta.powi(3) });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Heights

#[derive(Clone, Debug)]
pub struct HeightStats {
    /// one entry per face of the double graph: position, mean, variance
    pub positions: Vec<[f64; 2]>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// mean variance on a 3×3 partition of the bounding box
    pub cells: [[f64; 3]; 3],
    pub samples: usize,
}

/// Drifted-dimer heights on the window of `cfg.domain` (reference: BFS matching).
pub fn height_field_stats(cfg: &ExperimentConfig, exec: Exec) -> Result<HeightStats, NearCritError> {
    let ng = NearCritGrid::for_config(cfg)?;
    let w = ng.window(&cfg.domain)?;
    let mut subset = w.vertices.clone();
    subset.sort();
    let win = DimerWindow::new(&ng.g, &subset, &ng.field.values)?;
    let ms = sample_matchings(&win, cfg.samples, cfg.seed, exec)?;
    let hg = HeightGraph::new(&win.planar);
    let m0 = crate::dimers::reference_matching(&win);
    let p = &win.planar;
    let vpos: Vec<[f64; 2]> = subset.iter().map(|&v| ng.point(v)).collect();
    let corners: Vec<usize> = (0..p.corners.len()).filter(|&i| hg.active[i]).collect();
    let positions: Vec<[f64; 2]> = corners
        .iter()
        .map(|&i| {
            let c = &p.corners[i];
            let ds = &p.faces[c.face].darts;
            let mut f = [0.0, 0.0];
            for &(wh, _) in ds {
                let q = vpos[p.whites[wh].x];
                f[0] += q[0] / ds.len() as f64;
                f[1] += q[1] / ds.len() as f64;
            }
            [0.5 * (vpos[c.x][0] + f[0]), 0.5 * (vpos[c.x][1] + f[1])]
        })
        .collect();
    let mut sum = vec![0.0; corners.len()];
    let mut sq = vec![0.0; corners.len()];
    for m in &ms {
        let h = hg.height(m, &m0);
        for (k, &i) in corners.iter().enumerate() {
            sum[k] += h[i];
            sq[k] += h[i] * h[i];
        }
    }
    let n = ms.len().max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let variance: Vec<f64> = sq.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0)).collect();
    let (lo, hi) = cfg.domain.bbox();
    let mut acc = [[0.0; 3]; 3];
    let mut cnt = [[0usize; 3]; 3];
    for (k, q) in positions.iter().enumerate() {
        let i = (((q[0] - lo[0]) / (hi[0] - lo[0]) * 3.0) as usize).min(2);
        let j = (((q[1] - lo[1]) / (hi[1] - lo[1]) * 3.0) as usize).min(2);
        acc[i][j] += variance[k];
        cnt[i][j] += 1;
    }
    let mut cells = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cells[i][j] = if cnt[i][j] > 0 { acc[i][j] / cnt[i][j] as f64 } else { f64::NAN };
        }
    }
    Ok(HeightStats { positions, mean, variance, cells, samples: ms.len() })
}

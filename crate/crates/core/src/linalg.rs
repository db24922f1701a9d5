//! Massive Laplacian, potential and transfer current.

use crate::graph::{CemeteryGraph, WeightedGraph, Weight};
use crate::matrix::{Csr, Matrix};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("mass vanishes identically: the walk is recurrent and the Laplacian is singular")]
    Recurrent,
    #[error("singular matrix")]
    Singular,
    #[error("iterative solver did not converge")]
    NoConvergence,
    #[error("duplicate edge {0} in edge list")]
    DuplicateEdge(usize),
}

/// Δᵏ as a dense matrix: diagonal m + c(x) − c_xx, off-diagonal −c_xy.
pub fn massive_laplacian<W: Weight>(g: &WeightedGraph<W>) -> Matrix<W> {
    let n = g.n();
    let mut l = Matrix::zeros(n, n);
    for x in 0..n {
        l[(x, x)] = g.mass()[x].clone();
    }
    for e in g.edges() {
        if !e.is_loop() {
            l[(e.from, e.from)] = l[(e.from, e.from)].clone() + e.c.clone();
            l[(e.from, e.to)] = l[(e.from, e.to)].clone() - e.c.clone();
        }
    }
    l
}

pub fn massive_laplacian_sparse(g: &WeightedGraph<f64>) -> Csr {
    let mut trip: Vec<(usize, usize, f64)> = (0..g.n()).map(|x| (x, x, g.mass()[x])).collect();
    for e in g.edges() {
        if !e.is_loop() {
            trip.push((e.from, e.from, e.c));
            trip.push((e.from, e.to, -e.c));
        }
    }
    Csr::from_triplets(g.n(), trip)
}

/// Z_RSF = det Δᵏ.
pub fn partition_function<W: Weight>(g: &WeightedGraph<W>) -> W {
    massive_laplacian(g).det()
}

pub const DENSE_LIMIT: usize = 4000;

/// Vᵏ(x,y): expected number of visits to y by the killed walk from x.
#[derive(Clone, Debug)]
pub struct Potential<W = f64> {
    pub v: Matrix<W>,
    /// cᵏ per vertex
    pub ck: Vec<W>,
    pub from_walk_sum: bool,
}

impl<W: Weight> Potential<W> {
    pub fn n(&self) -> usize {
        self.ck.len()
    }

    /// Vᵏ(x,y)/cᵏ(y), with Vᵏ(·,ρ) = Vᵏ(ρ,·) = 0 (`None` is ρ).
    pub fn green(&self, x: Option<usize>, y: Option<usize>) -> W {
        match (x, y) {
            (Some(x), Some(y)) => self.v[(x, y)].clone() / self.ck[y].clone(),
            _ => W::zero(),
        }
    }
}

/// Vᵏ = (Δᵏ)⁻¹ D(cᵏ), dense.
pub fn potential<W: Weight>(g: &WeightedGraph<W>) -> Result<Potential<W>, LinalgError> {
    if !g.has_mass() {
        return Err(LinalgError::Recurrent);
    }
    let n = g.n();
    let ck: Vec<W> = (0..n).map(|x| g.c_kill(x)).collect();
    let l = massive_laplacian(g);
    let mut d = Matrix::zeros(n, n);
    for x in 0..n {
        d[(x, x)] = ck[x].clone();
    }
    let v = l.solve(&d).ok_or(LinalgError::Singular)?;
    Ok(Potential { v, ck, from_walk_sum: false })
}

/// Float potential; sparse iterative column solves above the dense limit.
pub fn potential_f64(g: &WeightedGraph<f64>) -> Result<Potential<f64>, LinalgError> {
    if g.n() <= DENSE_LIMIT {
        return potential(g);
    }
    if !g.has_mass() {
        return Err(LinalgError::Recurrent);
    }
    let n = g.n();
    let ck: Vec<f64> = (0..n).map(|x| g.c_kill(x)).collect();
    let mut v = Matrix::zeros(n, n);
    for y in 0..n {
        let col = potential_column(g, y)?;
        for x in 0..n {
            v[(x, y)] = col[x];
        }
    }
    Ok(Potential { v, ck, from_walk_sum: false })
}

/// One column Vᵏ(·,z) via a sparse solve of Δᵏ v = cᵏ(z) e_z.
pub fn potential_column(g: &WeightedGraph<f64>, z: usize) -> Result<Vec<f64>, LinalgError> {
    if !g.has_mass() {
        return Err(LinalgError::Recurrent);
    }
    let mut b = vec![0.0; g.n()];
    b[z] = g.c_kill(z);
    if g.n() <= DENSE_LIMIT {
        let l = massive_laplacian(g);
        let bm = Matrix::from_fn(g.n(), 1, |i, _| b[i]);
        let s = l.solve(&bm).ok_or(LinalgError::Singular)?;
        return Ok((0..g.n()).map(|i| s[(i, 0)]).collect());
    }
    massive_laplacian_sparse(g).bicgstab(&b, 1e-12, 20 * g.n()).ok_or(LinalgError::NoConvergence)
}

/// Truncated walk-sum Σ_{n≤N} Qⁿ, an independent route to Vᵏ.
pub fn potential_walk_sum(g: &WeightedGraph<f64>, steps: usize) -> Potential<f64> {
    let n = g.n();
    let ck: Vec<f64> = (0..n).map(|x| g.c_kill(x)).collect();
    let mut q: Matrix<f64> = Matrix::zeros(n, n);
    for e in g.edges() {
        q[(e.from, e.to)] += e.c / ck[e.from];
    }
    let mut term = Matrix::identity(n);
    let mut sum = Matrix::identity(n);
    for _ in 0..steps {
        term = term.mul(&q);
        for i in 0..n {
            for j in 0..n {
                sum[(i, j)] += term[(i, j)];
            }
        }
    }
    Potential { v: sum, ck, from_walk_sum: true }
}

/// A directed edge of Gᵖ; `to == None` is the cemetery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DirEdge {
    pub from: usize,
    pub to: Option<usize>,
}

impl DirEdge {
    pub fn new(from: usize, to: usize) -> Self {
        DirEdge { from, to: Some(to) }
    }

    pub fn to_rho(from: usize) -> Self {
        DirEdge { from, to: None }
    }

    pub fn is_loop(&self) -> bool {
        self.to == Some(self.from)
    }
}

/// Hᵏ_{e,f} for e = (w,x), f = (y,z).
pub fn transfer_entry<W: Weight>(p: &Potential<W>, e: DirEdge, f: DirEdge) -> W {
    if e.is_loop() {
        return W::zero();
    }
    let y = Some(f.from);
    p.green(Some(e.from), y) - p.green(e.to, y)
}

/// The transfer current matrix over a list of directed edges.
pub fn transfer_current<W: Weight>(p: &Potential<W>, edges: &[DirEdge]) -> Matrix<W> {
    Matrix::from_fn(edges.len(), edges.len(), |i, j| transfer_entry(p, edges[i], edges[j]))
}

/// All directed edges of Gᵖ in its edge order.
pub fn cemetery_dir_edges<W: Weight>(gp: &CemeteryGraph<W>) -> Vec<DirEdge> {
    gp.edges
        .iter()
        .map(|e| DirEdge { from: e.from, to: if e.to == gp.rho { None } else { Some(e.to) } })
        .collect()
}

/// P(e₁,…,e_k ∈ F) = det[Hᵏ_{eᵢ,eⱼ}] ∏ c_{eᵢ}, for edge ids of Gᵖ.
pub fn edge_probability<W: Weight>(
    gp: &CemeteryGraph<W>,
    p: &Potential<W>,
    edge_ids: &[usize],
) -> Result<W, LinalgError> {
    for (i, a) in edge_ids.iter().enumerate() {
        if edge_ids[..i].contains(a) {
            return Err(LinalgError::DuplicateEdge(*a));
        }
    }
    let all = cemetery_dir_edges(gp);
    let sel: Vec<DirEdge> = edge_ids.iter().map(|&i| all[i]).collect();
    let h = transfer_current(p, &sel);
    let prod = edge_ids.iter().fold(W::one(), |a, &i| a * gp.edges[i].c.clone());
    Ok(h.det() * prod)
}

/// ‖Δᵏ Vᵏ − D(cᵏ)‖∞.
pub fn potential_residual(g: &WeightedGraph<f64>, p: &Potential<f64>) -> f64 {
    let lv = massive_laplacian(g).mul(&p.v);
    let mut worst: f64 = 0.0;
    for i in 0..g.n() {
        for j in 0..g.n() {
            let d = if i == j { p.ck[i] } else { 0.0 };
            worst = worst.max((lv[(i, j)] - d).abs());
        }
    }
    worst
}

/// Dense CSV `row,col,value`.
pub fn matrix_csv(m: &Matrix<f64>) -> String {
    let mut s = String::from("row,col,value\n");
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            s.push_str(&format!("{},{},{:e}\n", i, j, m[(i, j)]));
        }
    }
    s
}

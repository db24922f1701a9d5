//! Doob transforms of killed walks by positive massive harmonic functions.

use crate::graph::{collapse_boundary, enumerate_forests, wired_restriction, CollapsedGraph, GraphError, Weight, WeightedGraph};
use crate::linalg::{massive_laplacian, potential, DirEdge, LinalgError, Potential};
use crate::matrix::Matrix;
use crate::walks::{wilson, WalkError, WalkTable};
use rand::Rng;
use thiserror::Error;

pub const HARMONIC_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum DoobError {
    #[error("λ must be positive (vertex {0})")]
    NonPositive(usize),
    #[error("λ is not massive harmonic on the window: residual {0:e}")]
    NotHarmonic(f64),
    #[error("loops are not allowed in Doob verification inputs")]
    Loop,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Walk(#[from] WalkError),
}

/// c̃_(x,y) = λ(y)/λ(x) c_(x,y) on the whole ambient graph; the tilted graph has no mass.
pub fn doob_conductances<W: Weight>(g: &WeightedGraph<W>, lambda: &[W]) -> Result<WeightedGraph<W>, DoobError> {
    check_positive(lambda)?;
    let t = g.map_conductances(|_, e| lambda[e.to].clone() / lambda[e.from].clone() * e.c.clone());
    Ok(t.with_mass(vec![W::zero(); g.n()]))
}

fn check_positive<W: Weight>(lambda: &[W]) -> Result<(), DoobError> {
    match lambda.iter().position(|l| *l <= W::zero()) {
        Some(i) => Err(DoobError::NonPositive(i)),
        None => Ok(()),
    }
}

/// (Δᵏλ)(x) on the ambient graph.
pub fn apply_laplacian<W: Weight>(g: &WeightedGraph<W>, f: &[W], x: usize) -> W {
    let mut s = g.mass()[x].clone() * f[x].clone();
    for &e in g.out_edges(x) {
        let e = g.edge(e);
        s = s + e.c.clone() * (f[x].clone() - f[e.to].clone());
    }
    s
}

#[derive(Clone, Debug)]
pub struct HarmonicReport {
    /// |Δᵏλ(x)| / (cᵏ(x)λ(x)) per vertex of the subset
    pub residuals: Vec<f64>,
    pub max: f64,
}

pub fn check_massive_harmonic<W: Weight>(g: &WeightedGraph<W>, lambda: &[W], subset: &[usize]) -> HarmonicReport {
    let residuals: Vec<f64> = subset
        .iter()
        .map(|&x| {
            let r = apply_laplacian(g, lambda, x).to_f64().abs();
            r / (g.c_kill(x).to_f64() * lambda[x].to_f64())
        })
        .collect();
    let max = residuals.iter().cloned().fold(0.0, f64::max);
    HarmonicReport { residuals, max }
}

/// λ(·) = V^{∞,k}(·,z): massive harmonic everywhere except at z.
pub fn potential_column_field<W: Weight>(g: &WeightedGraph<W>, z: usize) -> Result<Vec<W>, DoobError> {
    let n = g.n();
    let mut b = Matrix::zeros(n, 1);
    b[(z, 0)] = g.c_kill(z);
    let col = massive_laplacian(g).solve(&b).ok_or(LinalgError::Singular)?;
    Ok((0..n).map(|i| col[(i, 0)].clone()).collect())
}

/// A window V of an ambient graph with a harmonic λ, seen from both sides.
#[derive(Clone, Debug)]
pub struct DoobWindow<W = f64> {
    /// (c, m) with wired boundary conditions
    pub wired: WeightedGraph<W>,
    /// Gᵒ with the tilted conductances (inner mass is zero)
    pub tilde: CollapsedGraph<W>,
    /// λ on V, local indexing
    pub lambda: Vec<W>,
    /// λ at the outside endpoint of every stub
    pub lambda_stub: Vec<W>,
    pub subset: Vec<usize>,
    pub harmonic_residual: f64,
}

impl<W: Weight> DoobWindow<W> {
    pub fn new(ambient: &WeightedGraph<W>, subset: &[usize], lambda: &[W]) -> Result<Self, DoobError> {
        if ambient.edges().iter().any(|e| e.is_loop()) {
            return Err(DoobError::Loop);
        }
        check_positive(lambda)?;
        let report = check_massive_harmonic(ambient, lambda, subset);
        if report.max > HARMONIC_TOL {
            return Err(DoobError::NotHarmonic(report.max));
        }
        let wired = wired_restriction(ambient, subset)?.graph;
        let tilted = doob_conductances(ambient, lambda)?;
        let tilde = collapse_boundary(&tilted, subset)?;
        let lambda_stub = tilde.stubs.iter().map(|s| lambda[s.outside].clone()).collect();
        Ok(DoobWindow {
            wired,
            tilde,
            lambda: subset.iter().map(|&v| lambda[v].clone()).collect(),
            lambda_stub,
            subset: subset.to_vec(),
            harmonic_residual: report.max,
        })
    }

    /// (c̃, m̃) on V: the tilted walk killed when it exits.
    pub fn tilde_wired(&self) -> WeightedGraph<W> {
        self.tilde.wired()
    }

    /// max |Δ̃_V − Λ⁻¹ Δᵏ_V Λ|.
    pub fn gauge_deviation(&self) -> f64 {
        let a = massive_laplacian(&self.tilde_wired());
        let l = massive_laplacian(&self.wired);
        let n = self.lambda.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let g = l[(i, j)].clone() * self.lambda[j].clone() / self.lambda[i].clone();
                worst = worst.max((a[(i, j)].clone() - g).to_f64().abs());
            }
        }
        worst
    }

    /// max |Q̃(x,y) − λ(y)/λ(x) Qᵏ(x,y)| over V.
    pub fn kernel_deviation(&self) -> f64 {
        let tw = self.tilde_wired();
        let n = self.lambda.len();
        let kernel = |g: &WeightedGraph<W>| {
            let mut q: Matrix<W> = Matrix::zeros(n, n);
            for e in g.edges() {
                q[(e.from, e.to)] = q[(e.from, e.to)].clone() + e.c.clone() / g.c_kill(e.from);
            }
            q
        };
        let (qt, qk) = (kernel(&tw), kernel(&self.wired));
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let g = qk[(i, j)].clone() * self.lambda[j].clone() / self.lambda[i].clone();
                worst = worst.max((qt[(i, j)].clone() - g).to_f64().abs());
            }
        }
        worst
    }

    /// (Z_RSF(G,c,m), Z_RST^o(Gᵒ,c̃)) as determinants.
    pub fn partition_functions(&self) -> (W, W) {
        (massive_laplacian(&self.wired).det(), massive_laplacian(&self.tilde_wired()).det())
    }

    /// Directed edges of Gᵒ: inner edges in order, then the stubs (to = None is o).
    pub fn o_edges(&self) -> Vec<DirEdge> {
        let mut out: Vec<DirEdge> = self.tilde.inner.edges().iter().map(|e| DirEdge::new(e.from, e.to)).collect();
        out.extend(self.tilde.stubs.iter().map(|s| DirEdge::to_rho(s.from)));
        out
    }

    /// Conductance c̃ of each element of `o_edges`.
    pub fn o_conductances(&self) -> Vec<W> {
        let mut out: Vec<W> = self.tilde.inner.edges().iter().map(|e| e.c.clone()).collect();
        out.extend(self.tilde.stubs.iter().map(|s| s.c.clone()));
        out
    }

    /// H̃ from the killed potential Vᵏ of the wired window.
    pub fn tilted_transfer(&self, pk: &Potential<W>, edges: &[DirEdge]) -> Matrix<W> {
        let l = &self.lambda;
        Matrix::from_fn(edges.len(), edges.len(), |i, j| {
            let (e, f) = (edges[i], edges[j]);
            if e.is_loop() {
                return W::zero();
            }
            let y = f.from;
            let first = l[y].clone() / l[e.from].clone() * pk.green(Some(e.from), Some(y));
            match e.to {
                Some(x) => first - l[y].clone() / l[x].clone() * pk.green(Some(x), Some(y)),
                None => first,
            }
        })
    }

    /// P̃(edges ⊂ T) for edges of Gᵒ given as indices into `o_edges`.
    pub fn tilde_edge_probability(&self, pk: &Potential<W>, ids: &[usize]) -> W {
        let all = self.o_edges();
        let cs = self.o_conductances();
        let sel: Vec<DirEdge> = ids.iter().map(|&i| all[i]).collect();
        let h = self.tilted_transfer(pk, &sel);
        ids.iter().fold(h.det(), |a, &i| a * cs[i].clone())
    }

    pub fn killed_potential(&self) -> Result<Potential<W>, DoobError> {
        Ok(potential(&self.wired)?)
    }

    pub fn tilde_potential(&self) -> Result<Potential<W>, DoobError> {
        Ok(potential(&self.tilde_wired())?)
    }
}

#[derive(Clone, Debug)]
pub struct PartitionCheck<W> {
    pub z_rsf: W,
    pub z_rst_o: W,
    pub rel_gap: f64,
}

pub fn verify_partition_equality<W: Weight>(
    ambient: &WeightedGraph<W>,
    subset: &[usize],
    lambda: &[W],
) -> Result<PartitionCheck<W>, DoobError> {
    let w = DoobWindow::new(ambient, subset, lambda)?;
    let (a, b) = w.partition_functions();
    let gap = (a.clone() - b.clone()).to_f64().abs() / a.to_f64().abs().max(f64::MIN_POSITIVE);
    Ok(PartitionCheck { z_rsf: a, z_rst_o: b, rel_gap: gap })
}

/// max |H̃(formula) − H̃(direct tilde potential)| over all pairs of Gᵒ edges.
pub fn tilted_transfer_gap(w: &DoobWindow<f64>) -> Result<f64, DoobError> {
    let pk = w.killed_potential()?;
    let pt = w.tilde_potential()?;
    let edges = w.o_edges();
    let a = w.tilted_transfer(&pk, &edges);
    let b = crate::linalg::transfer_current(&pt, &edges);
    Ok(a.sub(&b).max_abs())
}

/// Outgoing choice of a vertex in a spanning tree of Gᵒ rooted at o.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OChoice {
    Edge(usize),
    Stub(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OTree {
    pub out: Vec<OChoice>,
}

impl OTree {
    pub fn weight<W: Weight>(&self, g: &CollapsedGraph<W>) -> W {
        self.out.iter().fold(W::one(), |a, c| {
            a * match c {
                OChoice::Edge(e) => g.inner.edge(*e).c.clone(),
                OChoice::Stub(s) => g.stubs[*s].c.clone(),
            }
        })
    }

    /// Index into the Gᵒ edge list (inner edges then stubs).
    pub fn o_edge_ids<W: Weight>(&self, g: &CollapsedGraph<W>) -> Vec<usize> {
        let m = g.inner.edges().len();
        self.out
            .iter()
            .map(|c| match c {
                OChoice::Edge(e) => *e,
                OChoice::Stub(s) => m + s,
            })
            .collect()
    }
}

/// All spanning trees of Gᵒ rooted at o with their weights (inner mass is ignored).
pub fn enumerate_o_trees<W: Weight>(g: &CollapsedGraph<W>, cap: usize) -> Result<Vec<(OTree, W)>, GraphError> {
    let b = g.boundary_conductance();
    let wired = g.inner.with_mass(b);
    let mut out = Vec::new();
    for (f, _) in enumerate_forests(&wired, cap)? {
        let roots = f.roots();
        let choices: Vec<Vec<usize>> =
            roots.iter().map(|&r| (0..g.stubs.len()).filter(|&s| g.stubs[s].from == r).collect()).collect();
        let mut idx = vec![0usize; roots.len()];
        loop {
            let mut t = OTree { out: f.out.iter().map(|e| OChoice::Edge(e.unwrap_or(usize::MAX))).collect() };
            for (k, &r) in roots.iter().enumerate() {
                t.out[r] = OChoice::Stub(choices[k][idx[k]]);
            }
            let w = t.weight(g);
            out.push((t, w));
            let mut k = 0;
            while k < idx.len() {
                idx[k] += 1;
                if idx[k] < choices[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == idx.len() {
                break;
            }
        }
    }
    Ok(out)
}

/// Wilson sample of a spanning tree of Gᵒ rooted at o: Wilson on the wired
/// window, then each root picks a stub in proportion to its conductance.
pub fn sample_o_tree<R: Rng + ?Sized>(
    g: &CollapsedGraph<f64>,
    table: &WalkTable,
    order: &[usize],
    rng: &mut R,
) -> Result<OTree, WalkError> {
    let f = wilson(table, order, rng)?;
    let b = g.boundary_conductance();
    let mut out = Vec::with_capacity(f.out.len());
    for (x, e) in f.out.iter().enumerate() {
        out.push(match e {
            Some(e) => OChoice::Edge(*e),
            None => {
                let mut r = rng.random::<f64>() * b[x];
                let mut pick = None;
                for (i, s) in g.stubs.iter().enumerate() {
                    if s.from == x {
                        pick = Some(i);
                        if r < s.c {
                            break;
                        }
                        r -= s.c;
                    }
                }
                OChoice::Stub(pick.expect("root without stub"))
            }
        });
    }
    Ok(OTree { out })
}

/// Walk table of the wired tilted window (for `sample_o_tree`).
pub fn o_walk_table(g: &CollapsedGraph<f64>) -> WalkTable {
    WalkTable::new(&g.wired())
}

/// Vᵏ(x,z)/Vᵏ(x0,z) for each z.
pub fn martin_kernel_ratio(g: &WeightedGraph<f64>, x: usize, x0: usize, zs: &[usize]) -> Result<Vec<f64>, DoobError> {
    zs.iter()
        .map(|&z| {
            let col = crate::linalg::potential_column(g, z)?;
            Ok(col[x] / col[x0])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{q, Q};

    /// Z-line on {-1,0,1,2} (ambient indices 0..4), c ≡ 1, m ≡ 1/2, λ = 2ˣ.
    fn z_line() -> (WeightedGraph<Q>, Vec<Q>) {
        let g = WeightedGraph::symmetric(4, &[(0, 1, q(1, 1)), (1, 2, q(1, 1)), (2, 3, q(1, 1))], vec![q(1, 2); 4]).unwrap();
        (g, vec![q(1, 2), q(1, 1), q(2, 1), q(4, 1)])
    }

    #[test]
    fn tilted_conductances_on_line() {
        let (g, l) = z_line();
        let t = doob_conductances(&g, &l).unwrap();
        assert_eq!(t.edge(2).c, q(2, 1));
        assert_eq!(t.edge(3).c, q(1, 2));
        let w = DoobWindow::new(&g, &[1, 2], &l).unwrap();
        let tw = w.tilde_wired();
        for x in 0..2 {
            assert_eq!(tw.c_kill(x), w.wired.c_kill(x));
        }
    }

    #[test]
    fn z_line_partition_is_21_over_4() {
        let (g, l) = z_line();
        let c = verify_partition_equality(&g, &[1, 2], &l).unwrap();
        assert_eq!(c.z_rsf, q(21, 4));
        assert_eq!(c.z_rst_o, q(21, 4));
        let w = DoobWindow::new(&g, &[1, 2], &l).unwrap();
        let mut weights: Vec<Q> = enumerate_o_trees(&w.tilde, 8).unwrap().into_iter().map(|(_, w)| w).collect();
        weights.sort();
        assert_eq!(weights, vec![q(1, 4), q(1, 1), q(4, 1)]);
        assert_eq!(w.gauge_deviation(), 0.0);
        assert_eq!(w.kernel_deviation(), 0.0);
    }

    #[test]
    fn harmonic_residuals() {
        let (g, l) = z_line();
        assert_eq!(check_massive_harmonic(&g, &l, &[1, 2]).max, 0.0);
        let ones = vec![q(1, 1); 4];
        let r = check_massive_harmonic(&g, &ones, &[1, 2]);
        assert!(r.max > 0.0);
        assert!(matches!(DoobWindow::new(&g, &[1, 2], &ones), Err(DoobError::NotHarmonic(_))));
    }

    #[test]
    fn constant_lambda_without_mass_is_identity() {
        let g = WeightedGraph::symmetric(3, &[(0, 1, q(1, 1)), (1, 2, q(3, 1))], vec![q(0, 1); 3]).unwrap();
        let l = vec![q(1, 1); 3];
        let t = doob_conductances(&g, &l).unwrap();
        assert_eq!(t.edges(), g.edges());
        let w = DoobWindow::new(&g, &[1], &l).unwrap();
        assert_eq!(w.gauge_deviation(), 0.0);
    }

    #[test]
    fn single_vertex_window() {
        let (g, l) = z_line();
        let c = verify_partition_equality(&g, &[1], &l).unwrap();
        assert_eq!(c.z_rsf, q(5, 2));
        assert_eq!(c.z_rst_o, q(5, 2));
    }

    #[test]
    fn tilted_transfer_matches_direct() {
        let (g, l) = z_line();
        let gf = g.to_f64();
        let lf: Vec<f64> = l.iter().map(|v| v.to_f64()).collect();
        let w = DoobWindow::new(&gf, &[1, 2], &lf).unwrap();
        assert!(tilted_transfer_gap(&w).unwrap() < 1e-12);
        let w = DoobWindow::new(&g, &[1, 2], &l).unwrap();
        let pk = w.killed_potential().unwrap();
        let pt = w.tilde_potential().unwrap();
        let e = w.o_edges();
        assert_eq!(w.tilted_transfer(&pk, &e), crate::linalg::transfer_current(&pt, &e));
    }

    #[test]
    fn potential_column_is_harmonic_off_source() {
        let g = WeightedGraph::symmetric(
            4,
            &[(0, 1, q(1, 1)), (1, 2, q(2, 3)), (2, 3, q(1, 1)), (3, 0, q(5, 2))],
            vec![q(1, 3), q(0, 1), q(1, 7), q(0, 1)],
        )
        .unwrap();
        let l = potential_column_field(&g, 3).unwrap();
        for x in 0..3 {
            assert_eq!(apply_laplacian(&g, &l, x), q(0, 1));
        }
        let c = verify_partition_equality(&g, &[0, 1, 2], &l).unwrap();
        assert_eq!(c.z_rsf, c.z_rst_o);
    }

    #[test]
    fn martin_ratio_trivia() {
        let g = WeightedGraph::symmetric(3, &[(0, 1, 1.0), (1, 2, 1.0)], vec![0.1; 3]).unwrap();
        let a = martin_kernel_ratio(&g, 0, 0, &[2]).unwrap();
        assert_eq!(a, vec![1.0]);
        let b = martin_kernel_ratio(&g, 0, 1, &[2]).unwrap()[0];
        let c = martin_kernel_ratio(&g, 1, 0, &[2]).unwrap()[0];
        assert!((b * c - 1.0).abs() < 1e-12);
    }
}

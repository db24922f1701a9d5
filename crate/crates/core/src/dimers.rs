//! Temperleyan dimers on the double graph: Kasteleyn matrices for the drifted
//! and killed weights, Temperley's bijection, local statistics and heights.

use crate::elliptic::EllipticModulus;
use crate::isoradial::{ExponentialField, IsoradialGrid};
use crate::doob::{doob_conductances, o_walk_table, sample_o_tree, DoobError, OChoice, OTree};
use crate::graph::{collapse_boundary, wired_restriction, CollapsedGraph, GraphError, Weight, WeightedGraph};
use crate::linalg::massive_laplacian;
use crate::matrix::Matrix;
use crate::par::{run_chunked, Exec};
use crate::planar::{Black, PlanarError, PlanarWindow};
use crate::scalar::{Scalar, C64};
use crate::walks::WalkError;
use num_complex::Complex;
use std::collections::{HashMap, VecDeque};
use thiserror::Error;

pub const MATCHING_CAP: usize = 14;

#[derive(Debug, Error, PartialEq)]
pub enum DimerError {
    #[error(transparent)]
    Planar(#[from] PlanarError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Doob(#[from] DoobError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error("conductances must be symmetric (white {0})")]
    NotSymmetric(usize),
    #[error("matching enumeration cap exceeded: {0} whites > {1}")]
    CapExceeded(usize, usize),
    #[error("input is not a spanning tree rooted at o")]
    NotATree,
    #[error("input is not a perfect matching")]
    NotPerfect,
    #[error("Kasteleyn phases fail on corner {0}")]
    Phases(usize),
    #[error("Kasteleyn matrix is singular")]
    Singular,
    #[error("λ* needs one value per face ({0} given, {1} faces)")]
    DualSize(usize, usize),
}

/// A window of a planar ambient graph with λ on the ambient vertices and λ* on the faces of Gᵒ.
#[derive(Clone, Debug)]
pub struct DimerWindow<W = f64> {
    pub planar: PlanarWindow,
    /// Gᵒ with the original conductances
    pub collapsed: CollapsedGraph<W>,
    /// Gᵒ with the tilted conductances
    pub tilde: CollapsedGraph<W>,
    /// (c, m) with wired boundary conditions
    pub wired: WeightedGraph<W>,
    pub subset: Vec<usize>,
    /// symmetric conductance of each white
    pub c: Vec<W>,
    /// λ(x), λ(y) of each white; λ(y) is read at the outside vertex for stubs
    pub lam_x: Vec<W>,
    pub lam_y: Vec<W>,
    pub lambda: Vec<W>,
    pub lam_star: Vec<W>,
    /// Δᵏλ on V divided by cᵏλ
    pub harmonic_residual: f64,
}

impl<W: Weight> DimerWindow<W> {
    pub fn new(ambient: &WeightedGraph<W>, subset: &[usize], lambda: &[W]) -> Result<Self, DimerError> {
        let collapsed = collapse_boundary(ambient, subset)?;
        let planar = PlanarWindow::new(&collapsed)?;
        let tilde = collapse_boundary(&doob_conductances(ambient, lambda)?, subset)?;
        let wired = wired_restriction(ambient, subset)?.graph;
        let inner = &collapsed.inner;
        let mut c = Vec::with_capacity(planar.whites.len());
        let mut lam_x = Vec::new();
        let mut lam_y = Vec::new();
        for (k, w) in planar.whites.iter().enumerate() {
            let (cv, ly) = match (w.xy, w.yx) {
                (OChoice::Edge(e), Some(r)) => {
                    if inner.edge(e).c != inner.edge(r).c {
                        return Err(DimerError::NotSymmetric(k));
                    }
                    (inner.edge(e).c.clone(), lambda[subset[inner.edge(e).to]].clone())
                }
                (OChoice::Stub(s), _) => {
                    let st = &collapsed.stubs[s];
                    if st.c_rev.as_ref() != Some(&st.c) {
                        return Err(DimerError::NotSymmetric(k));
                    }
                    (st.c.clone(), lambda[st.outside].clone())
                }
                _ => unreachable!(),
            };
            c.push(cv);
            lam_x.push(lambda[subset[w.x]].clone());
            lam_y.push(ly);
        }
        let report = crate::doob::check_massive_harmonic(ambient, lambda, subset);
        let faces = planar.faces.len();
        Ok(DimerWindow {
            planar,
            collapsed,
            tilde,
            wired,
            subset: subset.to_vec(),
            c,
            lam_x,
            lam_y,
            lambda: subset.iter().map(|&v| lambda[v].clone()).collect(),
            lam_star: vec![W::one(); faces],
            harmonic_residual: report.max,
        })
    }

    pub fn with_lambda_star(mut self, lam_star: Vec<W>) -> Result<Self, DimerError> {
        if lam_star.len() != self.planar.faces.len() {
            return Err(DimerError::DualSize(lam_star.len(), self.planar.faces.len()));
        }
        self.lam_star = lam_star;
        Ok(self)
    }

    /// ν^d: c̃ on primal half-edges, 1 on dual ones.
    pub fn drifted_weights(&self) -> DimerWeights<W> {
        let p = &self.planar;
        let nu = (0..p.whites.len())
            .map(|k| {
                let (cxy, cyx) = (
                    self.c[k].clone() * self.lam_y[k].clone() / self.lam_x[k].clone(),
                    self.c[k].clone() * self.lam_x[k].clone() / self.lam_y[k].clone(),
                );
                p.neighbours(k)
                    .into_iter()
                    .map(|(b, ph)| {
                        let v = match ph {
                            0 => cxy.clone(),
                            2 => cyx.clone(),
                            _ => W::one(),
                        };
                        (b, ph, v)
                    })
                    .collect()
            })
            .collect();
        DimerWeights { nu }
    }

    /// Δᵏ_V with wired boundary conditions.
    pub fn laplacian(&self) -> Matrix<W> {
        massive_laplacian(&self.wired)
    }

    /// Gauge functions φ² on whites and ψ on blacks (λ on V, 1/λ* on duals).
    pub fn gauge_squared(&self) -> (Vec<W>, Vec<W>) {
        let phi2 = (0..self.c.len())
            .map(|k| W::one() / (self.c[k].clone() * self.lam_x[k].clone() * self.lam_y[k].clone()))
            .collect();
        let p = &self.planar;
        let psi = (0..p.n_blacks())
            .map(|col| match p.black_of_col(col) {
                Black::Primal(x) => self.lambda[x].clone(),
                Black::Dual(f) => W::one() / self.lam_star[f].clone(),
            })
            .collect();
        (phi2, psi)
    }

    /// C(c,λ,λ*)² as an exact product (λ* enters with exponent −1, matching ψ).
    pub fn det_constant_squared(&self) -> W {
        let mut out = W::one();
        for k in 0..self.c.len() {
            out = out / self.c[k].clone();
            if self.planar.whites[k].is_stub() {
                out = out / self.lam_y[k].clone();
            }
        }
        let mut deg = vec![0i64; self.planar.n];
        for w in &self.planar.whites {
            deg[w.x] += 1;
            if let Some(y) = w.y {
                deg[y] += 1;
            }
        }
        for (x, l) in self.lambda.iter().enumerate() {
            out = out * pow_i(l, 2 - deg[x]);
        }
        for &f in &self.planar.duals {
            out = out / (self.lam_star[f].clone() * self.lam_star[f].clone());
        }
        out
    }
}

fn pow_i<W: Weight>(x: &W, e: i64) -> W {
    let mut out = W::one();
    for _ in 0..e.unsigned_abs() {
        out = out * x.clone();
    }
    if e < 0 {
        W::one() / out
    } else {
        out
    }
}

/// Weights per white, aligned with `PlanarWindow::neighbours` (black, phase exponent, ν).
#[derive(Clone, Debug)]
pub struct DimerWeights<W = f64> {
    pub nu: Vec<Vec<(Black, u8, W)>>,
}

impl<W: Weight> DimerWeights<W> {
    pub fn get(&self, w: usize, b: Black) -> Option<&W> {
        self.nu[w].iter().find(|t| t.0 == b).map(|t| &t.2)
    }

    pub fn to_f64(&self) -> DimerWeights<f64> {
        DimerWeights { nu: self.nu.iter().map(|r| r.iter().map(|(b, p, v)| (*b, *p, v.to_f64())).collect()).collect() }
    }
}

impl DimerWindow<f64> {
    /// ν^k from λ and λ*.
    pub fn killed_weights(&self) -> DimerWeights<f64> {
        let p = &self.planar;
        let nu = (0..p.whites.len())
            .map(|k| {
                let (c, lx, ly) = (self.c[k], self.lam_x[k], self.lam_y[k]);
                p.neighbours(k)
                    .into_iter()
                    .map(|(b, ph)| {
                        let v = match b {
                            Black::Primal(_) if ph == 0 => (c * ly / lx).sqrt(),
                            Black::Primal(_) => (c * lx / ly).sqrt(),
                            Black::Dual(f) => 1.0 / (self.lam_star[f] * (c * lx * ly).sqrt()),
                        };
                        (b, ph, v)
                    })
                    .collect()
            })
            .collect();
        DimerWeights { nu }
    }

    /// max relative deviation of ν^k from φ(w)ψ(b)ν^d.
    pub fn gauge_deviation(&self) -> f64 {
        let (d, k) = (self.drifted_weights(), self.killed_weights());
        let (phi2, psi) = self.gauge_squared();
        let mut worst: f64 = 0.0;
        for w in 0..d.nu.len() {
            for (i, &(b, _, vd)) in d.nu[w].iter().enumerate() {
                let col = self.planar.col(b).unwrap();
                let pred = phi2[w].sqrt() * psi[col] * vd;
                worst = worst.max((k.nu[w][i].2 - pred).abs() / pred);
            }
        }
        worst
    }

    /// Δ̃* on the kept dual vertices; r only contributes to diagonals.
    pub fn dual_tilde_laplacian(&self) -> Matrix<f64> {
        let p = &self.planar;
        let nd = p.duals.len();
        let mut out = Matrix::zeros(nd, nd);
        for (k, w) in p.whites.iter().enumerate() {
            let cs = 1.0 / (self.c[k] * self.lam_x[k] * self.lam_y[k]);
            let (u, v) = (w.left, w.right);
            for (a, b) in [(u, v), (v, u)] {
                if let Some(i) = p.dual_col[a] {
                    out[(i, i)] += cs / (self.lam_star[a] * self.lam_star[a]);
                    if let Some(j) = p.dual_col[b] {
                        out[(i, j)] -= cs / (self.lam_star[a] * self.lam_star[b]);
                    }
                }
            }
        }
        out
    }

    /// λ(x)λ(y)λ*(left)λ*(right) − 1 for every white.
    pub fn self_duality_residuals(&self) -> Vec<f64> {
        self.planar
            .whites
            .iter()
            .enumerate()
            .map(|(k, w)| self.lam_x[k] * self.lam_y[k] * self.lam_star[w.left] * self.lam_star[w.right] - 1.0)
            .collect()
    }

    pub fn tilde_table(&self) -> crate::walks::WalkTable {
        o_walk_table(&self.tilde)
    }
}

fn phased<W: Weight>(k: u8, v: W) -> Complex<W> {
    match k % 4 {
        0 => Complex::new(v, W::zero()),
        1 => Complex::new(W::zero(), v),
        2 => Complex::new(-v, W::zero()),
        _ => Complex::new(W::zero(), -v),
    }
}

/// K_{w,b} = ζ_{wb} ν_{wb}, rows whites, columns blacks (V then kept duals).
pub fn kasteleyn_matrix<W: Weight>(p: &PlanarWindow, nu: &DimerWeights<W>) -> Matrix<Complex<W>>
where
    Complex<W>: Scalar,
{
    let mut k = Matrix::zeros(p.whites.len(), p.n_blacks());
    for (w, row) in nu.nu.iter().enumerate() {
        for (b, ph, v) in row {
            k[(w, p.col(*b).unwrap())] = phased(*ph, v.clone());
        }
    }
    k
}

/// Corners where ζ_{w₁x}ζ_{w₂u}/(ζ_{w₂x}ζ_{w₁u}) ≠ −1 for the given phase exponents.
pub fn kasteleyn_defects(p: &PlanarWindow, phase: &dyn Fn(usize, Black) -> Option<u8>) -> Vec<usize> {
    let mut bad = Vec::new();
    for (i, c) in p.inner_corners() {
        let (x, u) = (Black::Primal(c.x), Black::Dual(c.face));
        let e = [phase(c.w_in, x), phase(c.w_out, u), phase(c.w_out, x), phase(c.w_in, u)];
        let ok = match e {
            [Some(a), Some(b), Some(cc), Some(d)] => (a as i32 + b as i32 - cc as i32 - d as i32).rem_euclid(4) == 2,
            _ => false,
        };
        if !ok {
            bad.push(i);
        }
    }
    bad
}

pub fn check_phases(p: &PlanarWindow) -> Result<(), DimerError> {
    match kasteleyn_defects(p, &|w, b| p.phase_exponent(w, b)).first() {
        Some(&i) => Err(DimerError::Phases(i)),
        None => Ok(()),
    }
}

/// A perfect matching: the black matched to each white.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Matching {
    pub black_of: Vec<Black>,
}

impl Matching {
    pub fn weight<W: Weight>(&self, nu: &DimerWeights<W>) -> W {
        self.black_of
            .iter()
            .enumerate()
            .fold(W::one(), |a, (w, b)| a * nu.get(w, *b).expect("edge of the double graph").clone())
    }

    pub fn contains(&self, w: usize, b: Black) -> bool {
        self.black_of[w] == b
    }

    pub fn is_perfect(&self, p: &PlanarWindow) -> bool {
        let mut used = vec![false; p.n_blacks()];
        for (w, &b) in self.black_of.iter().enumerate() {
            if p.phase_exponent(w, b).is_none() {
                return false;
            }
            match p.col(b) {
                Some(c) if !used[c] => used[c] = true,
                _ => return false,
            }
        }
        used.iter().all(|&u| u)
    }
}

/// All perfect matchings with exact weights, whites matched in index order.
pub fn enumerate_matchings<W: Weight>(
    p: &PlanarWindow,
    nu: &DimerWeights<W>,
    cap: usize,
) -> Result<Vec<(Matching, W)>, DimerError> {
    let nw = p.whites.len();
    if nw > cap {
        return Err(DimerError::CapExceeded(nw, cap));
    }
    let mut out = Vec::new();
    let mut used = vec![false; p.n_blacks()];
    let mut cur: Vec<Black> = Vec::with_capacity(nw);
    // blacks whose every neighbour is already taken cannot be covered: prune
    let mut black_whites: Vec<Vec<usize>> = vec![Vec::new(); p.n_blacks()];
    for w in 0..nw {
        for (b, _) in p.neighbours(w) {
            black_whites[p.col(b).unwrap()].push(w);
        }
    }
    fn rec<W: Weight>(
        p: &PlanarWindow,
        nu: &DimerWeights<W>,
        bw: &[Vec<usize>],
        used: &mut Vec<bool>,
        cur: &mut Vec<Black>,
        out: &mut Vec<(Matching, W)>,
    ) {
        let w = cur.len();
        if w == p.whites.len() {
            let m = Matching { black_of: cur.clone() };
            let wt = m.weight(nu);
            out.push((m, wt));
            return;
        }
        for (b, _) in p.neighbours(w) {
            let c = p.col(b).unwrap();
            if used[c] {
                continue;
            }
            used[c] = true;
            cur.push(b);
            let dead = (0..used.len()).any(|k| !used[k] && bw[k].iter().all(|&v| v <= w));
            if !dead {
                rec(p, nu, bw, used, cur, out);
            }
            cur.pop();
            used[c] = false;
        }
    }
    rec(p, nu, &black_whites, &mut used, &mut cur, &mut out);
    Ok(out)
}

/// Dual tree rooted at r: for each face the white it leaves through.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualTree {
    pub out: Vec<Option<usize>>,
}

/// Tree of Gᵒ ↦ matching: primal edges plus the dual tree of the complement.
pub fn temperley_forward(p: &PlanarWindow, t: &OTree) -> Result<Matching, DimerError> {
    if t.out.len() != p.n {
        return Err(DimerError::NotATree);
    }
    let mut black_of: Vec<Option<Black>> = vec![None; p.whites.len()];
    for (x, &c) in t.out.iter().enumerate() {
        let w = p.white_of(c);
        if black_of[w].is_some() {
            return Err(DimerError::NotATree);
        }
        black_of[w] = Some(Black::Primal(x));
    }
    // BFS from r over dual edges not crossed by the tree
    let mut seen = vec![false; p.faces.len()];
    seen[p.r] = true;
    let mut queue = VecDeque::from([p.r]);
    let mut reached = 1;
    while let Some(f) = queue.pop_front() {
        for (w, g) in p.dual_neighbours(f) {
            if black_of[w].is_none() && !seen[g] {
                seen[g] = true;
                black_of[w] = Some(Black::Dual(g));
                queue.push_back(g);
                reached += 1;
            }
        }
    }
    if reached != p.faces.len() || black_of.iter().any(|b| b.is_none()) {
        return Err(DimerError::NotATree);
    }
    Ok(Matching { black_of: black_of.into_iter().map(|b| b.unwrap()).collect() })
}

/// Matching ↦ (tree of Gᵒ rooted at o, dual tree rooted at r).
pub fn temperley_inverse(p: &PlanarWindow, m: &Matching) -> Result<(OTree, DualTree), DimerError> {
    if !m.is_perfect(p) {
        return Err(DimerError::NotPerfect);
    }
    let mut out: Vec<Option<OChoice>> = vec![None; p.n];
    let mut dual: Vec<Option<usize>> = vec![None; p.faces.len()];
    for (w, &b) in m.black_of.iter().enumerate() {
        let wh = &p.whites[w];
        match b {
            Black::Primal(x) if x == wh.x => out[x] = Some(wh.xy),
            Black::Primal(y) => out[y] = Some(OChoice::Edge(wh.yx.expect("inner white"))),
            Black::Dual(f) => dual[f] = Some(w),
        }
    }
    let t = OTree { out: out.into_iter().map(|c| c.expect("perfect")).collect() };
    // acyclicity of both trees
    let next_primal = |x: usize| -> Option<usize> {
        let w = p.white_of(t.out[x]);
        let wh = &p.whites[w];
        match t.out[x] {
            OChoice::Stub(_) => None,
            OChoice::Edge(_) => Some(if wh.x == x { wh.y.unwrap() } else { wh.x }),
        }
    };
    for s in 0..p.n {
        let (mut x, mut steps) = (s, 0);
        while let Some(y) = next_primal(x) {
            x = y;
            steps += 1;
            if steps > p.n {
                return Err(DimerError::NotATree);
            }
        }
    }
    for s in 0..p.faces.len() {
        let (mut f, mut steps) = (s, 0);
        while f != p.r {
            f = p.whites[dual[f].ok_or(DimerError::NotATree)?].other_face(f);
            steps += 1;
            if steps > p.faces.len() {
                return Err(DimerError::NotATree);
            }
        }
    }
    Ok((t, DualTree { out: dual }))
}

/// ∏K_{wᵢbᵢ} det[K⁻¹_{bᵢwⱼ}] for half-edges given as (white, column).
pub fn local_statistics(k: &Matrix<C64>, kinv: &Matrix<C64>, edges: &[(usize, usize)]) -> C64 {
    let sub = Matrix::from_fn(edges.len(), edges.len(), |i, j| kinv[(edges[i].1, edges[j].0)]);
    edges.iter().fold(sub.det(), |a, &(w, b)| a * k[(w, b)])
}

pub fn conj_transpose(k: &Matrix<C64>) -> Matrix<C64> {
    k.transpose().map(|z| z.conj())
}

#[derive(Clone, Debug)]
pub struct BlockReport {
    /// max |entry| of K†K outside the two diagonal blocks
    pub off_block: f64,
    /// max |(K†K)_VV − Δᵏ_V|
    pub primal_block: f64,
    /// max |(K†K)_V*V* − Δ̃*|
    pub dual_block: f64,
    /// max |entry| of K†K
    pub scale: f64,
}

/// (Kᵏ)†Kᵏ against diag(Δᵏ_V, Δ̃*).
pub fn verify_block_identity(win: &DimerWindow<f64>) -> BlockReport {
    let k = kasteleyn_matrix(&win.planar, &win.killed_weights());
    let kk = conj_transpose(&k).mul(&k);
    let n = win.planar.n;
    let lap = win.laplacian();
    let dual = win.dual_tilde_laplacian();
    let mut r = BlockReport { off_block: 0.0, primal_block: 0.0, dual_block: 0.0, scale: 0.0 };
    for i in 0..kk.rows() {
        for j in 0..kk.cols() {
            let z = kk[(i, j)];
            r.scale = r.scale.max(z.norm());
            match (i < n, j < n) {
                (true, true) => r.primal_block = r.primal_block.max((z - lap[(i, j)]).norm()),
                (false, false) => r.dual_block = r.dual_block.max((z - dual[(i - n, j - n)]).norm()),
                _ => r.off_block = r.off_block.max(z.norm()),
            }
        }
    }
    r
}

#[derive(Clone, Debug)]
pub struct DetReport {
    pub det_k: C64,
    pub constant: f64,
    pub det_laplacian: f64,
    pub det_dual: f64,
    /// ||det Kᵏ| − C det Δᵏ_V| / (C det Δᵏ_V)
    pub rel_gap: f64,
    /// ||det Kᵏ| − det Δ̃*/C| / (det Δ̃*/C)
    pub rel_gap_dual: f64,
}

pub fn verify_det_relation(win: &DimerWindow<f64>) -> DetReport {
    let k = kasteleyn_matrix(&win.planar, &win.killed_weights());
    let det_k = k.det();
    let constant = win.det_constant_squared().sqrt();
    let det_laplacian = win.laplacian().det();
    let det_dual = win.dual_tilde_laplacian().det();
    let a = constant * det_laplacian;
    let b = det_dual / constant;
    DetReport {
        det_k,
        constant,
        det_laplacian,
        det_dual,
        rel_gap: (det_k.norm() - a).abs() / a,
        rel_gap_dual: (det_k.norm() - b).abs() / b,
    }
}

/// Exact check of |det Kᵏ|² = C² (det Δᵏ_V)² through the gauge:
/// |det Kᵏ|² = ∏φ² ∏ψ² |det Kᵈ|².
pub fn det_relation_squared<W: Weight>(win: &DimerWindow<W>) -> (W, W)
where
    Complex<W>: Scalar,
{
    let kd = kasteleyn_matrix(&win.planar, &win.drifted_weights()).det();
    let norm2 = kd.re.clone() * kd.re.clone() + kd.im.clone() * kd.im.clone();
    let (phi2, psi) = win.gauge_squared();
    let gauge = phi2.into_iter().fold(W::one(), |a, v| a * v);
    let gauge = psi.into_iter().fold(gauge, |a, v| a * v.clone() * v);
    let d = win.laplacian().det();
    (gauge * norm2, win.det_constant_squared() * d.clone() * d)
}

/// Reconstruct (λ on V, λ at stub outsides, λ* on kept duals) from killed-type weights
/// and the conductances, with λ fixed to `lambda0` at vertex 0.
pub fn recover_fields(win: &DimerWindow<f64>, nu: &DimerWeights<f64>, lambda0: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = &win.planar;
    let mut lambda = vec![f64::NAN; p.n];
    lambda[0] = lambda0;
    let mut queue = VecDeque::from([0usize]);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); p.n];
    for (k, w) in p.whites.iter().enumerate() {
        if let Some(y) = w.y {
            adj[w.x].push(k);
            adj[y].push(k);
        }
    }
    while let Some(x) = queue.pop_front() {
        for &k in &adj[x] {
            let w = &p.whites[k];
            let (a, b) = (nu.get(k, Black::Primal(w.x)).unwrap(), nu.get(k, Black::Primal(w.y.unwrap())).unwrap());
            // ν_wx/ν_wy = λ(y)/λ(x)
            let (other, val) = if w.x == x { (w.y.unwrap(), lambda[x] * a / b) } else { (w.x, lambda[x] * b / a) };
            if lambda[other].is_nan() {
                lambda[other] = val;
                queue.push_back(other);
            }
        }
    }
    let mut stub = Vec::new();
    for &k in &p.stub_white {
        let x = p.whites[k].x;
        let a = nu.get(k, Black::Primal(x)).unwrap();
        stub.push(a * a * lambda[x] / win.c[k]);
    }
    let mut star = vec![f64::NAN; p.duals.len()];
    for (k, w) in p.whites.iter().enumerate() {
        let ly = match w.y {
            Some(y) => lambda[y],
            None => stub[p.stub_white.iter().position(|&s| s == k).unwrap()],
        };
        for f in [w.left, w.right] {
            if let (Some(i), Some(v)) = (p.dual_col[f], nu.get(k, Black::Dual(f))) {
                star[i] = 1.0 / (v * (win.c[k] * lambda[w.x] * ly).sqrt());
            }
        }
    }
    (lambda, stub, star)
}

/// λ* on every face of Gᵒ from the diamond exponential, and the grid corner of each face.
pub fn isoradial_lambda_star(
    win: &DimerWindow<f64>,
    grid: &IsoradialGrid,
    field: &ExponentialField,
    m: &EllipticModulus,
) -> (Vec<f64>, Vec<(usize, usize)>) {
    let p = &win.planar;
    p.faces
        .iter()
        .map(|f| {
            let (w, fwd) = f.darts[0];
            let wh = &p.whites[w];
            let a = win.subset[wh.x];
            let b = match (wh.y, wh.xy) {
                (Some(y), _) => win.subset[y],
                (None, OChoice::Stub(s)) => win.collapsed.stubs[s].outside,
                _ => unreachable!(),
            };
            let (from, to) = if fwd { (a, b) } else { (b, a) };
            let e = &grid.edges[grid.edge_between(from, to).expect("grid edge")];
            (field.dual_value(m, from, e.bbar), e.left)
        })
        .unzip()
}

// ---------------------------------------------------------------------------
// Heights

/// Faces of the double graph (inner corners) and their adjacency across edges wb.
#[derive(Clone, Debug)]
pub struct HeightGraph {
    /// per corner: (neighbour corner, white, black, sign of w→b in this corner's ccw boundary)
    pub adj: Vec<Vec<(usize, usize, Black, i8)>>,
    pub active: Vec<bool>,
    /// reference corner: first corner lying in a face that touches o
    pub reference: usize,
}

impl HeightGraph {
    pub fn new(p: &PlanarWindow) -> Self {
        let nc = p.corners.len();
        let mut sides: HashMap<(usize, Black), Vec<(usize, i8)>> = HashMap::new();
        let mut active = vec![false; nc];
        for (i, c) in p.inner_corners() {
            active[i] = true;
            let (x, u) = (Black::Primal(c.x), Black::Dual(c.face));
            for (w, b, s) in [(c.w_in, x, 1i8), (c.w_out, x, -1), (c.w_out, u, 1), (c.w_in, u, -1)] {
                sides.entry((w, b)).or_default().push((i, s));
            }
        }
        let mut adj = vec![Vec::new(); nc];
        for ((w, b), v) in &sides {
            if v.len() == 2 {
                let ((a, sa), (c, sc)) = (v[0], v[1]);
                adj[a].push((c, *w, *b, sa));
                adj[c].push((a, *w, *b, sc));
            }
        }
        for a in adj.iter_mut() {
            a.sort_by_key(|t| (t.0, t.1));
        }
        let reference = p
            .inner_corners()
            .find(|(_, c)| p.faces[c.face].touches_o)
            .map(|(i, _)| i)
            .unwrap_or(0);
        HeightGraph { adj, active, reference }
    }

    /// h(F') = h(F) + s·(1{e∈M} − 1{e∈M₀}) across e, zero at the reference corner.
    pub fn height(&self, m: &Matching, m0: &Matching) -> Vec<f64> {
        let mut h = vec![f64::NAN; self.adj.len()];
        h[self.reference] = 0.0;
        let mut queue = VecDeque::from([self.reference]);
        while let Some(a) = queue.pop_front() {
            for &(b, w, blk, s) in &self.adj[a] {
                if h[b].is_nan() {
                    h[b] = h[a] + s as f64 * flow(m, m0, w, blk);
                    queue.push_back(b);
                }
            }
        }
        h
    }

    /// max over adjacent corners of the mismatch of the height rule (0 iff curl-free).
    pub fn curl_defect(&self, m: &Matching, m0: &Matching, h: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, nb) in self.adj.iter().enumerate() {
            for &(b, w, blk, s) in nb {
                worst = worst.max((h[b] - h[a] - s as f64 * flow(m, m0, w, blk)).abs());
            }
        }
        worst
    }

    /// Expected height from edge probabilities P(w,b): the same rule with 1{e∈M} replaced by P.
    pub fn mean_height(&self, prob: &dyn Fn(usize, Black) -> f64, m0: &Matching) -> Vec<f64> {
        let mut h = vec![f64::NAN; self.adj.len()];
        h[self.reference] = 0.0;
        let mut queue = VecDeque::from([self.reference]);
        while let Some(a) = queue.pop_front() {
            for &(b, w, blk, s) in &self.adj[a] {
                if h[b].is_nan() {
                    let r = if m0.contains(w, blk) { 1.0 } else { 0.0 };
                    h[b] = h[a] + s as f64 * (prob(w, blk) - r);
                    queue.push_back(b);
                }
            }
        }
        h
    }
}

fn flow(m: &Matching, m0: &Matching, w: usize, b: Black) -> f64 {
    let i = |mm: &Matching| if mm.contains(w, b) { 1.0 } else { 0.0 };
    i(m) - i(m0)
}

/// Reference matching: Temperley image of the breadth-first tree towards o.
pub fn reference_matching<W: Weight>(win: &DimerWindow<W>) -> Matching {
    let p = &win.planar;
    let g = &win.collapsed;
    let mut out: Vec<Option<OChoice>> = vec![None; p.n];
    let mut queue = VecDeque::new();
    for (s, st) in g.stubs.iter().enumerate() {
        if out[st.from].is_none() {
            out[st.from] = Some(OChoice::Stub(s));
            queue.push_back(st.from);
        }
    }
    while let Some(y) = queue.pop_front() {
        for &e in g.inner.out_edges(y) {
            let x = g.inner.edge(e).to;
            if out[x].is_none() {
                let back = g.inner.out_edges(x).iter().copied().find(|&f| g.inner.edge(f).to == y).unwrap();
                out[x] = Some(OChoice::Edge(back));
                queue.push_back(x);
            }
        }
    }
    let t = OTree { out: out.into_iter().map(|c| c.expect("connected window")).collect() };
    temperley_forward(p, &t).expect("breadth-first tree")
}

/// Drifted-dimer samples: Wilson trees of (Gᵒ, c̃) pushed through Temperley's bijection.
pub fn sample_matchings(win: &DimerWindow<f64>, n: usize, seed: u64, exec: Exec) -> Result<Vec<Matching>, DimerError> {
    let table = win.tilde_table();
    let order: Vec<usize> = (0..win.planar.n).collect();
    let chunks = run_chunked(n, seed, exec, |rng, _, count| -> Result<Vec<Matching>, DimerError> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let t = sample_o_tree(&win.tilde, &table, &order, rng)?;
            out.push(temperley_forward(&win.planar, &t)?);
        }
        Ok(out)
    });
    let mut all = Vec::with_capacity(n);
    for c in chunks {
        all.extend(c?);
    }
    Ok(all)
}

/// Complex identity check helper: max |A − B|.
pub fn max_dev(a: &Matrix<C64>, b: &Matrix<C64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    worst
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::doob::{enumerate_o_trees, potential_column_field, DoobWindow};
    use crate::elliptic::mass_value;
    use crate::isoradial::{discrete_exponential, z_invariant_weights};
    use crate::scalar::{q, Q};

    fn line_q() -> DimerWindow<Q> {
        let g = WeightedGraph::symmetric(4, &[(0, 1, q(1, 1)), (1, 2, q(1, 1)), (2, 3, q(1, 1))], vec![q(1, 2); 4])
            .unwrap()
            .with_positions(vec![[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let lambda = potential_column_field(&g, 3).unwrap();
        DimerWindow::new(&g, &[1, 2], &lambda).unwrap()
    }

    struct GridCase {
        grid: IsoradialGrid,
        m: EllipticModulus,
        g: WeightedGraph<f64>,
        field: ExponentialField,
        win: DimerWindow<f64>,
    }

    fn grid_case(radius: usize) -> GridCase {
        let grid = IsoradialGrid::square(1.0, 14, 14).unwrap();
        let m = EllipticModulus::new(0.4).unwrap();
        let g = z_invariant_weights(&grid, &m).unwrap();
        let field = discrete_exponential(&grid, &m, grid.vertex_at(7, 7).unwrap(), 0.7);
        // (2r+2)×(2r+2) block of primal vertices around the dual corner (7, 6)
        let mut subset: Vec<usize> =
            (0..grid.n()).filter(|&x| grid.vertices[x].0.abs_diff(7) + grid.vertices[x].1.abs_diff(6) <= 2 * radius + 1).collect();
        subset.sort();
        let win = DimerWindow::new(&g, &subset, &field.values).unwrap();
        let (star, _) = isoradial_lambda_star(&win, &grid, &field, &m);
        let win = win.with_lambda_star(star).unwrap();
        GridCase { grid, m, g, field, win }
    }

    fn probs(k: &Matrix<C64>) -> impl Fn(usize, usize) -> f64 + '_ {
        let kinv = k.inverse().unwrap();
        move |w, col| (k[(w, col)] * kinv[(col, w)]).re
    }

    #[test]
    fn line_window_exact_partition() {
        let win = line_q();
        check_phases(&win.planar).unwrap();
        let nu = win.drifted_weights();
        let ms = enumerate_matchings(&win.planar, &nu, MATCHING_CAP).unwrap();
        let z: Q = ms.iter().fold(q(0, 1), |a, (_, w)| a + w.clone());
        let trees: Q = enumerate_o_trees(&win.tilde, 100).unwrap().into_iter().fold(q(0, 1), |a, (_, w)| a + w);
        assert_eq!(z, trees);
        let d = kasteleyn_matrix(&win.planar, &nu).det();
        assert_eq!(d.re.clone() * d.re.clone() + d.im.clone() * d.im.clone(), z.clone() * z);
        let (lhs, rhs) = det_relation_squared(&win);
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn small_block_bijection_and_statistics() {
        let case = grid_case(0);
        let win = &case.win;
        let p = &win.planar;
        assert_eq!(p.n, 4);
        check_phases(p).unwrap();
        let nu = win.drifted_weights();
        let ms = enumerate_matchings(p, &nu, MATCHING_CAP).unwrap();
        let trees = enumerate_o_trees(&win.tilde, 1000).unwrap();
        assert_eq!(ms.len(), trees.len());
        let mut seen = std::collections::HashSet::new();
        for (t, w) in &trees {
            let m = temperley_forward(p, t).unwrap();
            assert!((m.weight(&nu) - w).abs() < 1e-12 * w);
            let (back, _) = temperley_inverse(p, &m).unwrap();
            assert_eq!(&back, t);
            assert!(seen.insert(m));
        }
        let z: f64 = ms.iter().map(|t| t.1).sum();
        let k = kasteleyn_matrix(p, &nu);
        assert!((k.det().norm() - z).abs() < 1e-10 * z);
        let pr = probs(&k);
        for w in 0..p.whites.len() {
            for (b, _) in p.neighbours(w) {
                let exact: f64 = ms.iter().filter(|(m, _)| m.contains(w, b)).map(|t| t.1).sum::<f64>() / z;
                assert!((pr(w, p.col(b).unwrap()) - exact).abs() < 1e-10);
            }
        }
        // primal half-edges against the tilted transfer current
        let dw = DoobWindow::new(&case.g, &win.subset, &case.field.values).unwrap();
        let pk = dw.killed_potential().unwrap();
        for (e, &w) in p.edge_white.iter().enumerate() {
            let x = win.tilde.inner.edge(e).from;
            let tree = dw.tilde_edge_probability(&pk, &[e]);
            assert!((pr(w, x) - tree).abs() < 1e-10, "{} vs {}", pr(w, x), tree);
        }
        // two-edge local statistics
        let e1 = (0, p.col(ms[0].0.black_of[0]).unwrap());
        let e2 = (5, p.col(ms[0].0.black_of[5]).unwrap());
        let exact: f64 = ms
            .iter()
            .filter(|(m, _)| m.black_of[0] == ms[0].0.black_of[0] && m.black_of[5] == ms[0].0.black_of[5])
            .map(|t| t.1)
            .sum::<f64>()
            / z;
        let kinv = k.inverse().unwrap();
        assert!((local_statistics(&k, &kinv, &[e1, e2]).re - exact).abs() < 1e-10);
    }

    #[test]
    fn gauge_block_and_det_identities() {
        let case = grid_case(2);
        let win = &case.win;
        assert_eq!(win.planar.n, 36);
        assert!(win.harmonic_residual < 1e-10);
        assert!(win.gauge_deviation() < 1e-12);
        let dual = win.self_duality_residuals();
        assert!(dual.iter().all(|r| r.abs() < 1e-10), "{dual:?}");
        let r = verify_block_identity(win);
        assert!(r.off_block < 1e-10 * r.scale, "{r:?}");
        assert!(r.primal_block < 1e-10 * r.scale, "{r:?}");
        let d = verify_det_relation(win);
        assert!(d.rel_gap < 1e-8, "{d:?}");
        assert!(d.rel_gap_dual < 1e-8, "{d:?}");
        // the dual block is the Z-invariant Laplacian of the dual with mass k′m²
        let (_, corners) = isoradial_lambda_star(win, &case.grid, &case.field, &case.m);
        let lap = win.dual_tilde_laplacian();
        let p = &win.planar;
        let mut checked = 0;
        for (f, face) in p.faces.iter().enumerate() {
            if face.touches_o {
                continue;
            }
            let i = p.dual_col[f].unwrap();
            let cstar: f64 = face.darts.iter().map(|&(w, _)| 1.0 / win.c[w]).sum();
            let (a, b) = corners[f];
            let mass = case.m.kp * mass_value(&case.m, &case.grid.corner_half_angles(a, b)).unwrap();
            assert!((lap[(i, i)] - cstar - mass).abs() < 1e-9, "{} vs {}", lap[(i, i)] - cstar, mass);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn recovery_from_killed_weights() {
        let case = grid_case(1);
        let win = &case.win;
        let (lambda, stub, star) = recover_fields(win, &win.killed_weights(), win.lambda[0]);
        for (a, b) in lambda.iter().zip(&win.lambda) {
            assert!((a - b).abs() < 1e-10 * b);
        }
        for (k, &w) in win.planar.stub_white.iter().enumerate() {
            assert!((stub[k] - win.lam_y[w]).abs() < 1e-10 * stub[k]);
        }
        for (i, &f) in win.planar.duals.iter().enumerate() {
            assert!((star[i] - win.lam_star[f]).abs() < 1e-10 * star[i]);
        }
    }

    #[test]
    fn perturbed_phases_are_detected() {
        let case = grid_case(1);
        let p = &case.win.planar;
        assert!(kasteleyn_defects(p, &|w, b| p.phase_exponent(w, b)).is_empty());
        let w0 = p.corners.iter().find(|c| c.face != p.r).unwrap().w_in;
        let bad = kasteleyn_defects(p, &|w, b| p.phase_exponent(w, b).map(|k| if w == w0 && matches!(b, Black::Primal(_)) { (k + 1) % 4 } else { k }));
        assert!(!bad.is_empty());
    }

    #[test]
    fn sampled_matchings_round_trip_with_flat_heights() {
        let case = grid_case(1);
        let win = &case.win;
        let ms = sample_matchings(win, 1000, 11, Exec::default()).unwrap();
        let hg = HeightGraph::new(&win.planar);
        let m0 = reference_matching(win);
        for m in &ms {
            assert!(m.is_perfect(&win.planar));
            let (t, _) = temperley_inverse(&win.planar, m).unwrap();
            assert_eq!(&temperley_forward(&win.planar, &t).unwrap(), m);
            let h = hg.height(m, &m0);
            assert_eq!(hg.curl_defect(m, &m0, &h), 0.0);
        }
        let seq = sample_matchings(win, 1000, 11, Exec::Sequential).unwrap();
        assert_eq!(ms, seq);
    }

    #[test]
    fn bijection_rejects_cycles() {
        let case = grid_case(0);
        let p = &case.win.planar;
        let t = &enumerate_o_trees(&case.win.tilde, 1000).unwrap()[0].0;
        let mut bad = t.clone();
        // point two neighbours at each other
        let e = case.win.tilde.inner.out_edges(0)[0];
        let y = case.win.tilde.inner.edge(e).to;
        let back = case.win.tilde.inner.out_edges(y).iter().copied().find(|&f| case.win.tilde.inner.edge(f).to == 0).unwrap();
        bad.out[0] = OChoice::Edge(e);
        bad.out[y] = OChoice::Edge(back);
        assert!(temperley_forward(p, &bad).is_err());
    }
}

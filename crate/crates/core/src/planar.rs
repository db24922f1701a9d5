//! Faces of Gᵒ, its restricted dual and the double graph.
//!
//! Gᵒ is embedded with o at infinity: every stub leaves the window radially,
//! so the outer face of the window plus stubs splits into one face per gap
//! between consecutive stubs.

use crate::doob::OChoice;
use crate::graph::{CollapsedGraph, Weight};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlanarError {
    #[error("vertex positions are required")]
    NoPositions,
    #[error("edge ({0},{1}) has no reverse")]
    Unpaired(usize, usize),
    #[error("window is not simply connected (stubs inside a bounded face)")]
    NotSimplyConnected,
    #[error("the window has no edge to the outside")]
    NoStubs,
    #[error("edge {0} is a bridge of Gᵒ")]
    Bridge(usize),
    #[error("Euler count failed: {0} whites, {1} blacks")]
    Euler(usize, usize),
}

/// One undirected edge of Gᵒ, i.e. one white vertex of the double graph.
#[derive(Clone, Debug, PartialEq)]
pub struct White {
    /// endpoint carrying phase 1 (the smaller index; o counts as largest)
    pub x: usize,
    /// other endpoint, None for o
    pub y: Option<usize>,
    /// the directed edge x→y of Gᵒ
    pub xy: OChoice,
    /// inner edge id of y→x
    pub yx: Option<usize>,
    /// face on the left of x→y
    pub left: usize,
    pub right: usize,
}

impl White {
    pub fn is_stub(&self) -> bool {
        self.y.is_none()
    }

    pub fn other_face(&self, f: usize) -> usize {
        if f == self.left {
            self.right
        } else {
            self.left
        }
    }
}

/// Dart = (white, forward) where forward is x→y.
pub type Dart = (usize, bool);

#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    /// boundary darts with the face on the left
    pub darts: Vec<Dart>,
    pub touches_o: bool,
}

/// A face of the double graph: the corner of face `face` at primal vertex `x`,
/// bounded by w_in → x → w_out → face counterclockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Corner {
    pub x: usize,
    pub face: usize,
    pub w_in: usize,
    pub w_out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Black {
    Primal(usize),
    Dual(usize),
}

#[derive(Clone, Debug)]
pub struct PlanarWindow {
    /// |V|
    pub n: usize,
    pub whites: Vec<White>,
    pub faces: Vec<Face>,
    /// removed dual vertex: the first face touching o
    pub r: usize,
    /// face → index among the kept dual vertices
    pub dual_col: Vec<Option<usize>>,
    /// kept dual vertex → face
    pub duals: Vec<usize>,
    pub corners: Vec<Corner>,
    /// white of each inner directed edge
    pub edge_white: Vec<usize>,
    /// white of each stub
    pub stub_white: Vec<usize>,
}

impl PlanarWindow {
    pub fn new<W: Weight>(g: &CollapsedGraph<W>) -> Result<Self, PlanarError> {
        let n = g.inner.n();
        let pos = g.inner.positions().ok_or(PlanarError::NoPositions)?;
        let stub_pos = g.stub_pos.as_ref().ok_or(PlanarError::NoPositions)?;
        if g.stubs.is_empty() {
            return Err(PlanarError::NoStubs);
        }
        let edges = g.inner.edges();
        let mut edge_white = vec![usize::MAX; edges.len()];
        let mut whites = Vec::new();
        for (id, e) in edges.iter().enumerate() {
            if edge_white[id] != usize::MAX || e.is_loop() {
                continue;
            }
            let rev = g
                .inner
                .out_edges(e.to)
                .iter()
                .copied()
                .find(|&f| edges[f].to == e.from && edge_white[f] == usize::MAX)
                .ok_or(PlanarError::Unpaired(e.from, e.to))?;
            let (fwd, back) = if e.from < e.to { (id, rev) } else { (rev, id) };
            edge_white[id] = whites.len();
            edge_white[rev] = whites.len();
            whites.push(White {
                x: edges[fwd].from,
                y: Some(edges[fwd].to),
                xy: OChoice::Edge(fwd),
                yx: Some(back),
                left: usize::MAX,
                right: usize::MAX,
            });
        }
        let mut stub_white = Vec::with_capacity(g.stubs.len());
        for (s, st) in g.stubs.iter().enumerate() {
            stub_white.push(whites.len());
            whites.push(White { x: st.from, y: None, xy: OChoice::Stub(s), yx: None, left: usize::MAX, right: usize::MAX });
        }
        // vertices 0..n are primal, n + s is the leaf of stub s
        let head = |d: Dart| -> usize {
            let w = &whites[d.0];
            match (d.1, w.y, w.xy) {
                (true, Some(y), _) => y,
                (true, None, OChoice::Stub(s)) => n + s,
                (false, _, _) => w.x,
                _ => unreachable!(),
            }
        };
        let point = |v: usize| if v < n { pos[v] } else { stub_pos[v - n] };
        let mut rotation: Vec<Vec<(f64, Dart)>> = vec![Vec::new(); n];
        for (k, w) in whites.iter().enumerate() {
            let (a, b) = (w.x, head((k, true)));
            let (pa, pb) = (point(a), point(b));
            rotation[a].push(((pb[1] - pa[1]).atan2(pb[0] - pa[0]), (k, true)));
            if b < n {
                rotation[b].push(((pa[1] - pb[1]).atan2(pa[0] - pb[0]), (k, false)));
            }
        }
        for r in rotation.iter_mut() {
            r.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        }
        let slot = |d: Dart| -> (usize, usize) {
            let tail = head((d.0, !d.1));
            let i = rotation[tail].iter().position(|&(_, e)| e == d).expect("dart in rotation");
            (tail, i)
        };
        let next = |d: Dart| -> Dart {
            let v = head(d);
            let rev = (d.0, !d.1);
            if v >= n {
                return rev;
            }
            let (_, i) = slot(rev);
            let k = rotation[v].len();
            rotation[v][(i + k - 1) % k].1
        };
        let idx = |d: Dart| 2 * d.0 + usize::from(!d.1);
        let mut seen = vec![false; 2 * whites.len()];
        let mut cycles: Vec<Vec<Dart>> = Vec::new();
        for k in 0..whites.len() {
            for dir in [true, false] {
                let start = (k, dir);
                if seen[idx(start)] {
                    continue;
                }
                let mut cyc = Vec::new();
                let mut d = start;
                while !seen[idx(d)] {
                    seen[idx(d)] = true;
                    cyc.push(d);
                    d = next(d);
                }
                cycles.push(cyc);
            }
        }
        let is_stub_dart = |d: Dart| whites[d.0].is_stub();
        let mut faces: Vec<Face> = Vec::new();
        let mut outer_found = false;
        for cyc in cycles {
            let stub_fwd: Vec<usize> = (0..cyc.len()).filter(|&i| is_stub_dart(cyc[i]) && cyc[i].1).collect();
            if stub_fwd.is_empty() {
                let area: f64 = cyc
                    .iter()
                    .map(|&d| {
                        let (a, b) = (point(head((d.0, !d.1))), point(head(d)));
                        a[0] * b[1] - a[1] * b[0]
                    })
                    .sum();
                if area <= 0.0 {
                    return Err(PlanarError::NotSimplyConnected);
                }
                faces.push(Face { darts: cyc, touches_o: false });
                continue;
            }
            if outer_found {
                return Err(PlanarError::NotSimplyConnected);
            }
            outer_found = true;
            // cut after each forward stub dart; the bounce back starts the next face
            let m = cyc.len();
            for (j, &i) in stub_fwd.iter().enumerate() {
                let end = stub_fwd[(j + 1) % stub_fwd.len()];
                let mut darts = Vec::new();
                let mut t = (i + 1) % m;
                loop {
                    darts.push(cyc[t]);
                    if t == end {
                        break;
                    }
                    t = (t + 1) % m;
                }
                faces.push(Face { darts, touches_o: true });
            }
        }
        let mut sides = vec![[usize::MAX; 2]; whites.len()];
        for (f, face) in faces.iter().enumerate() {
            for &(k, fwd) in &face.darts {
                sides[k][usize::from(!fwd)] = f;
            }
        }
        if let Some(k) = sides.iter().position(|s| s[0] == s[1]) {
            return Err(PlanarError::Bridge(k));
        }
        let r = faces.iter().position(|f| f.touches_o).expect("outer faces");
        let mut dual_col = vec![None; faces.len()];
        let mut duals = Vec::new();
        for f in 0..faces.len() {
            if f != r {
                dual_col[f] = Some(duals.len());
                duals.push(f);
            }
        }
        if whites.len() != n + duals.len() {
            return Err(PlanarError::Euler(whites.len(), n + duals.len()));
        }
        let mut corners = Vec::new();
        for (f, face) in faces.iter().enumerate() {
            let m = face.darts.len();
            for i in 0..m {
                let (din, dout) = (face.darts[i], face.darts[(i + 1) % m]);
                let v = head(din);
                if v < n && din.0 != dout.0 {
                    corners.push(Corner { x: v, face: f, w_in: din.0, w_out: dout.0 });
                }
            }
        }
        for (w, s) in whites.iter_mut().zip(&sides) {
            w.left = s[0];
            w.right = s[1];
        }
        Ok(PlanarWindow { n, whites, faces, r, dual_col, duals, corners, edge_white, stub_white })
    }

    pub fn n_blacks(&self) -> usize {
        self.n + self.duals.len()
    }

    /// Column of a black vertex; None for o and r.
    pub fn col(&self, b: Black) -> Option<usize> {
        match b {
            Black::Primal(x) => Some(x),
            Black::Dual(f) => self.dual_col[f].map(|c| self.n + c),
        }
    }

    pub fn black_of_col(&self, c: usize) -> Black {
        if c < self.n {
            Black::Primal(c)
        } else {
            Black::Dual(self.duals[c - self.n])
        }
    }

    /// Black neighbours of a white in the double graph with o and r removed,
    /// with the exponent k of the phase iᵏ (1, i, −1, −i clockwise from x).
    pub fn neighbours(&self, w: usize) -> Vec<(Black, u8)> {
        let wh = &self.whites[w];
        let mut out = vec![(Black::Primal(wh.x), 0)];
        if wh.left != self.r {
            out.push((Black::Dual(wh.left), 1));
        }
        if let Some(y) = wh.y {
            out.push((Black::Primal(y), 2));
        }
        if wh.right != self.r {
            out.push((Black::Dual(wh.right), 3));
        }
        out
    }

    pub fn phase_exponent(&self, w: usize, b: Black) -> Option<u8> {
        self.neighbours(w).into_iter().find(|&(c, _)| c == b).map(|(_, k)| k)
    }

    /// White of the tree edge chosen by a vertex.
    pub fn white_of(&self, c: OChoice) -> usize {
        match c {
            OChoice::Edge(e) => self.edge_white[e],
            OChoice::Stub(s) => self.stub_white[s],
        }
    }

    /// Corners that are faces of the double graph (r removed).
    pub fn inner_corners(&self) -> impl Iterator<Item = (usize, &Corner)> {
        self.corners.iter().enumerate().filter(move |(_, c)| c.face != self.r)
    }

    /// Faces of Gᵒ adjacent to a face, through the whites on its boundary.
    pub fn dual_neighbours(&self, f: usize) -> Vec<(usize, usize)> {
        self.faces[f].darts.iter().map(|&(w, _)| (w, self.whites[w].other_face(f))).collect()
    }

}

//! Weighted directed graphs with masses, cemetery and wired constructions,
//! and brute-force forest enumeration.

use crate::scalar::{f64_to_q, q_to_f64, Scalar, Q};
use num_bigint::BigInt;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge {0} references unknown vertex")]
    UnknownVertex(usize),
    #[error("edge ({0},{1}) has no reverse edge")]
    MissingReverse(usize, usize),
    #[error("edge ({0},{1}) has nonpositive conductance")]
    NonPositiveConductance(usize, usize),
    #[error("vertex {0} has negative mass")]
    NegativeMass(usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("enumeration cap exceeded: {0} vertices > {1}")]
    CapExceeded(usize, usize),
    #[error("empty vertex set")]
    Empty,
    #[error("{0}")]
    Parse(String),
}

/// Real weights: floats or exact rationals.
pub trait Weight: Scalar + PartialOrd {
    fn to_f64(&self) -> f64;
}

impl Weight for f64 {
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Weight for Q {
    fn to_f64(&self) -> f64 {
        q_to_f64(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge<W> {
    pub from: usize,
    pub to: usize,
    pub c: W,
}

impl<W> Edge<W> {
    pub fn is_loop(&self) -> bool {
        self.from == self.to
    }
}

#[derive(Clone, Debug)]
pub struct WeightedGraph<W = f64> {
    n: usize,
    edges: Vec<Edge<W>>,
    mass: Vec<W>,
    pos: Option<Vec<[f64; 2]>>,
    out: Vec<Vec<usize>>,
}

impl<W: Weight> WeightedGraph<W> {
    /// Validated constructor.
    pub fn new(
        n: usize,
        edges: Vec<Edge<W>>,
        mass: Vec<W>,
        pos: Option<Vec<[f64; 2]>>,
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        assert_eq!(mass.len(), n, "mass vector length");
        for (i, e) in edges.iter().enumerate() {
            if e.from >= n || e.to >= n {
                return Err(GraphError::UnknownVertex(i));
            }
            if e.c <= W::zero() {
                return Err(GraphError::NonPositiveConductance(e.from, e.to));
            }
        }
        for (x, m) in mass.iter().enumerate() {
            if *m < W::zero() {
                return Err(GraphError::NegativeMass(x));
            }
        }
        let g = Self::new_unchecked(n, edges, mass, pos);
        let mut pairs = std::collections::HashSet::new();
        for e in &g.edges {
            pairs.insert((e.from, e.to));
        }
        for e in &g.edges {
            if !pairs.contains(&(e.to, e.from)) {
                return Err(GraphError::MissingReverse(e.from, e.to));
            }
        }
        if !g.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(g)
    }

    /// Constructor without invariant checks, for derived graphs.
    pub fn new_unchecked(
        n: usize,
        edges: Vec<Edge<W>>,
        mass: Vec<W>,
        pos: Option<Vec<[f64; 2]>>,
    ) -> Self {
        let mut out = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            out[e.from].push(i);
        }
        WeightedGraph { n, edges, mass, pos, out }
    }

    /// Convenience: symmetric conductances from undirected pairs.
    pub fn symmetric(n: usize, pairs: &[(usize, usize, W)], mass: Vec<W>) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for (a, b, c) in pairs {
            edges.push(Edge { from: *a, to: *b, c: c.clone() });
            if a != b {
                edges.push(Edge { from: *b, to: *a, c: c.clone() });
            }
        }
        Self::new(n, edges, mass, None)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge<W>] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &Edge<W> {
        &self.edges[id]
    }

    pub fn mass(&self) -> &[W] {
        &self.mass
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.pos.as_deref()
    }

    pub fn out_edges(&self, x: usize) -> &[usize] {
        &self.out[x]
    }

    pub fn with_positions(mut self, pos: Vec<[f64; 2]>) -> Self {
        assert_eq!(pos.len(), self.n);
        self.pos = Some(pos);
        self
    }

    /// c(x): total outgoing conductance, loops included.
    pub fn c_out(&self, x: usize) -> W {
        self.out[x].iter().fold(W::zero(), |s, &e| s + self.edges[e].c.clone())
    }

    pub fn c_loop(&self, x: usize) -> W {
        self.out[x]
            .iter()
            .filter(|&&e| self.edges[e].is_loop())
            .fold(W::zero(), |s, &e| s + self.edges[e].c.clone())
    }

    /// cᵏ(x) = c(x) + m(x).
    pub fn c_kill(&self, x: usize) -> W {
        self.c_out(x) + self.mass[x].clone()
    }

    pub fn has_mass(&self) -> bool {
        self.mass.iter().any(|m| !m.is_zero())
    }

    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.from].push(e.to);
            adj[e.to].push(e.from);
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(x) = queue.pop_front() {
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    pub fn to_f64(&self) -> WeightedGraph<f64> {
        WeightedGraph::new_unchecked(
            self.n,
            self.edges.iter().map(|e| Edge { from: e.from, to: e.to, c: e.c.to_f64() }).collect(),
            self.mass.iter().map(|m| m.to_f64()).collect(),
            self.pos.clone(),
        )
    }

    pub fn map_conductances(&self, f: impl Fn(usize, &Edge<W>) -> W) -> WeightedGraph<W> {
        WeightedGraph::new_unchecked(
            self.n,
            self.edges
                .iter()
                .enumerate()
                .map(|(i, e)| Edge { from: e.from, to: e.to, c: f(i, e) })
                .collect(),
            self.mass.clone(),
            self.pos.clone(),
        )
    }

    pub fn with_mass(&self, mass: Vec<W>) -> WeightedGraph<W> {
        assert_eq!(mass.len(), self.n);
        WeightedGraph::new_unchecked(self.n, self.edges.clone(), mass, self.pos.clone())
    }

    /// Appends a loop (x,x) with conductance `c` at every x with `c > 0`.
    pub fn with_loops(&self, loops: &[W]) -> WeightedGraph<W> {
        let mut edges = self.edges.clone();
        for (x, c) in loops.iter().enumerate() {
            if *c > W::zero() {
                edges.push(Edge { from: x, to: x, c: c.clone() });
            }
        }
        WeightedGraph::new_unchecked(self.n, edges, self.mass.clone(), self.pos.clone())
    }
}

impl WeightedGraph<Q> {
    pub fn from_f64(g: &WeightedGraph<f64>) -> WeightedGraph<Q> {
        WeightedGraph::new_unchecked(
            g.n,
            g.edges.iter().map(|e| Edge { from: e.from, to: e.to, c: f64_to_q(e.c) }).collect(),
            g.mass.iter().map(|&m| f64_to_q(m)).collect(),
            g.pos.clone(),
        )
    }
}

/// Gᵖ: the base graph plus a cemetery vertex ρ = n receiving edges (x,ρ) of
/// conductance m(x) wherever m(x) > 0.
#[derive(Clone, Debug)]
pub struct CemeteryGraph<W = f64> {
    pub base: WeightedGraph<W>,
    pub rho: usize,
    /// Edge list of Gᵖ: base edges first, then the cemetery edges.
    pub edges: Vec<Edge<W>>,
    /// `rho_edge[x]` = index in `edges` of (x,ρ), if present.
    pub rho_edge: Vec<Option<usize>>,
}

pub fn cemetery_extension<W: Weight>(g: &WeightedGraph<W>) -> CemeteryGraph<W> {
    let rho = g.n();
    let mut edges = g.edges().to_vec();
    let mut rho_edge = vec![None; g.n()];
    for x in 0..g.n() {
        if g.mass()[x] > W::zero() {
            rho_edge[x] = Some(edges.len());
            edges.push(Edge { from: x, to: rho, c: g.mass()[x].clone() });
        }
    }
    CemeteryGraph { base: g.clone(), rho, edges, rho_edge }
}

impl<W: Weight> CemeteryGraph<W> {
    /// Forest on G → spanning tree of Gᵖ rooted at ρ (one edge choice per base vertex).
    pub fn forest_to_tree(&self, f: &RootedForest) -> Vec<usize> {
        f.out
            .iter()
            .enumerate()
            .map(|(x, e)| match e {
                Some(e) => *e,
                None => self.rho_edge[x].expect("root without mass"),
            })
            .collect()
    }

    pub fn tree_to_forest(&self, tree: &[usize]) -> RootedForest {
        RootedForest {
            out: tree.iter().map(|&e| if self.edges[e].to == self.rho { None } else { Some(e) }).collect(),
        }
    }

    pub fn tree_weight(&self, tree: &[usize]) -> W {
        tree.iter().fold(W::one(), |w, &e| w * self.edges[e].c.clone())
    }
}

/// Each vertex carries at most one outgoing edge id; `None` marks a root.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RootedForest {
    pub out: Vec<Option<usize>>,
}

impl RootedForest {
    pub fn roots(&self) -> Vec<usize> {
        (0..self.out.len()).filter(|&x| self.out[x].is_none()).collect()
    }

    /// Follows outgoing edges from every vertex; true iff every path ends at a root.
    pub fn is_acyclic<W>(&self, g: &WeightedGraph<W>) -> bool {
        let n = self.out.len();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n];
        for start in 0..n {
            let mut path = Vec::new();
            let mut x = start;
            loop {
                match state[x] {
                    2 => break,
                    1 => return false,
                    _ => {}
                }
                state[x] = 1;
                path.push(x);
                match self.out[x] {
                    None => break,
                    Some(e) => {
                        let edge = &g.edges[e];
                        if edge.from != x || edge.is_loop() {
                            return false;
                        }
                        x = edge.to;
                    }
                }
            }
            for v in path {
                state[v] = 2;
            }
        }
        true
    }

    /// ∏ c over chosen edges × ∏ m over roots.
    pub fn weight<W: Weight>(&self, g: &WeightedGraph<W>) -> W {
        self.out.iter().enumerate().fold(W::one(), |w, (x, e)| match e {
            Some(e) => w * g.edges[*e].c.clone(),
            None => w * g.mass[x].clone(),
        })
    }

    /// Undirected-ish view: set of (from, to) pairs of chosen edges.
    pub fn edge_ids(&self) -> Vec<usize> {
        self.out.iter().flatten().copied().collect()
    }
}

pub const DEFAULT_ENUM_CAP: usize = 8;

/// All rooted spanning forests with nonzero weight, with their weights.
pub fn enumerate_forests<W: Weight>(
    g: &WeightedGraph<W>,
    cap: usize,
) -> Result<Vec<(RootedForest, W)>, GraphError> {
    if g.n() > cap {
        return Err(GraphError::CapExceeded(g.n(), cap));
    }
    let options: Vec<Vec<Option<usize>>> = (0..g.n())
        .map(|x| {
            let mut opts = Vec::new();
            if g.mass()[x] > W::zero() {
                opts.push(None);
            }
            for &e in g.out_edges(x) {
                if !g.edge(e).is_loop() {
                    opts.push(Some(e));
                }
            }
            opts
        })
        .collect();
    let mut out = Vec::new();
    let mut cur = RootedForest { out: vec![None; g.n()] };
    enumerate_rec(g, &options, 0, &mut cur, &mut out);
    Ok(out)
}

fn enumerate_rec<W: Weight>(
    g: &WeightedGraph<W>,
    options: &[Vec<Option<usize>>],
    x: usize,
    cur: &mut RootedForest,
    out: &mut Vec<(RootedForest, W)>,
) {
    if x == options.len() {
        if cur.is_acyclic(g) {
            out.push((cur.clone(), cur.weight(g)));
        }
        return;
    }
    for opt in &options[x] {
        cur.out[x] = *opt;
        // prune: following pointers from x must not return to x
        if let Some(e) = opt {
            let mut y = g.edge(*e).to;
            let mut steps = 0;
            let mut cyc = false;
            while y < x && steps <= x {
                match cur.out[y] {
                    Some(f) => y = g.edge(f).to,
                    None => break,
                }
                if y == x {
                    cyc = true;
                    break;
                }
                steps += 1;
            }
            if cyc {
                continue;
            }
        }
        enumerate_rec(g, options, x + 1, cur, out);
    }
    cur.out[x] = None;
}

/// Result of restricting an ambient graph to a vertex subset.
#[derive(Clone, Debug)]
pub struct Restriction<W = f64> {
    pub graph: WeightedGraph<W>,
    /// local index → ambient index
    pub to_ambient: Vec<usize>,
    /// ambient index → local index
    pub from_ambient: HashMap<usize, usize>,
}

fn induced<W: Weight>(
    ambient: &WeightedGraph<W>,
    subset: &[usize],
) -> Result<(Vec<Edge<W>>, HashMap<usize, usize>), GraphError> {
    if subset.is_empty() {
        return Err(GraphError::Empty);
    }
    let mut from_ambient = HashMap::new();
    for (i, &v) in subset.iter().enumerate() {
        from_ambient.insert(v, i);
    }
    let mut edges = Vec::new();
    for e in ambient.edges() {
        if let (Some(&a), Some(&b)) = (from_ambient.get(&e.from), from_ambient.get(&e.to)) {
            edges.push(Edge { from: a, to: b, c: e.c.clone() });
        }
    }
    Ok((edges, from_ambient))
}

/// Wired restriction: conductances restricted, leaving conductance added to the mass.
pub fn wired_restriction<W: Weight>(
    ambient: &WeightedGraph<W>,
    subset: &[usize],
) -> Result<Restriction<W>, GraphError> {
    let (edges, from_ambient) = induced(ambient, subset)?;
    let mut mass: Vec<W> = subset.iter().map(|&v| ambient.mass()[v].clone()).collect();
    for e in ambient.edges() {
        if let Some(&a) = from_ambient.get(&e.from) {
            if !from_ambient.contains_key(&e.to) {
                mass[a] = mass[a].clone() + e.c.clone();
            }
        }
    }
    let pos = ambient.positions().map(|p| subset.iter().map(|&v| p[v]).collect());
    let graph = WeightedGraph::new_unchecked(subset.len(), edges, mass, pos);
    if !graph.is_connected() {
        return Err(GraphError::Disconnected);
    }
    Ok(Restriction { graph, to_ambient: subset.to_vec(), from_ambient })
}

/// One ambient edge leaving the subset, kept as a separate edge to o.
#[derive(Clone, Debug, PartialEq)]
pub struct Stub<W = f64> {
    /// local index of the inside endpoint
    pub from: usize,
    /// ambient index of the outside endpoint
    pub outside: usize,
    /// conductance of (inside, outside)
    pub c: W,
    /// conductance of (outside, inside), if the ambient has it
    pub c_rev: Option<W>,
    /// ambient edge id of (inside, outside)
    pub ambient_edge: usize,
}

/// Gᵒ: the induced subgraph plus a vertex o = n gathering every leaving edge.
#[derive(Clone, Debug)]
pub struct CollapsedGraph<W = f64> {
    /// Induced subgraph with ambient masses (not wired).
    pub inner: WeightedGraph<W>,
    pub stubs: Vec<Stub<W>>,
    pub o: usize,
    pub to_ambient: Vec<usize>,
    /// ambient positions of stub outside endpoints
    pub stub_pos: Option<Vec<[f64; 2]>>,
}

pub fn collapse_boundary<W: Weight>(
    ambient: &WeightedGraph<W>,
    subset: &[usize],
) -> Result<CollapsedGraph<W>, GraphError> {
    let (edges, from_ambient) = induced(ambient, subset)?;
    let mass: Vec<W> = subset.iter().map(|&v| ambient.mass()[v].clone()).collect();
    let pos = ambient.positions().map(|p| subset.iter().map(|&v| p[v]).collect::<Vec<_>>());
    let inner = WeightedGraph::new_unchecked(subset.len(), edges, mass, pos);
    if !inner.is_connected() {
        return Err(GraphError::Disconnected);
    }
    let mut stubs = Vec::new();
    for (id, e) in ambient.edges().iter().enumerate() {
        if let Some(&a) = from_ambient.get(&e.from) {
            if !from_ambient.contains_key(&e.to) {
                let c_rev = ambient
                    .out_edges(e.to)
                    .iter()
                    .map(|&f| ambient.edge(f))
                    .find(|f| f.to == e.from)
                    .map(|f| f.c.clone());
                stubs.push(Stub { from: a, outside: e.to, c: e.c.clone(), c_rev, ambient_edge: id });
            }
        }
    }
    let stub_pos = ambient.positions().map(|p| stubs.iter().map(|s| p[s.outside]).collect());
    Ok(CollapsedGraph { o: subset.len(), inner, stubs, to_ambient: subset.to_vec(), stub_pos })
}

impl<W: Weight> CollapsedGraph<W> {
    /// Σ of stub conductances at each inner vertex: the conductance of (x,o).
    pub fn boundary_conductance(&self) -> Vec<W> {
        let mut b = vec![W::zero(); self.inner.n()];
        for s in &self.stubs {
            b[s.from] = b[s.from].clone() + s.c.clone();
        }
        b
    }

    /// The wired graph: same inner edges, mass = ambient mass + boundary conductance.
    pub fn wired(&self) -> WeightedGraph<W> {
        let b = self.boundary_conductance();
        let mass = self.inner.mass().iter().zip(b).map(|(m, b)| m.clone() + b).collect();
        self.inner.with_mass(mass)
    }
}

// ---------------------------------------------------------------------------
// File format

/// Number written either as a JSON number or as a "p/q" string.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumField {
    Float(f64),
    Text(String),
}

impl NumField {
    pub fn to_q(&self) -> Result<Q, GraphError> {
        match self {
            NumField::Float(v) if v.is_finite() => Ok(f64_to_q(*v)),
            NumField::Float(v) => Err(GraphError::Parse(format!("non-finite number {v}"))),
            NumField::Text(s) => parse_rational(s),
        }
    }
}

pub fn parse_rational(s: &str) -> Result<Q, GraphError> {
    let s = s.trim();
    let bad = || GraphError::Parse(format!("cannot parse number '{s}'"));
    if let Some((a, b)) = s.split_once('/') {
        let a: BigInt = a.trim().parse().map_err(|_| bad())?;
        let b: BigInt = b.trim().parse().map_err(|_| bad())?;
        if b.is_zero() {
            return Err(bad());
        }
        Ok(Q::new(a, b))
    } else if let Ok(i) = s.parse::<BigInt>() {
        Ok(Q::from_integer(i))
    } else {
        let v: f64 = s.parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        Ok(f64_to_q(v))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: i64,
    #[serde(default)]
    pub x: Option<f64>,
    #[serde(default)]
    pub y: Option<f64>,
    #[serde(default)]
    pub mass: Option<NumField>,
    /// membership of the window V for Doob and dimer commands
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<NumField>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: i64,
    pub to: i64,
    pub conductance: NumField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphFile {
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
}

impl GraphFile {
    /// Parses JSON; errors carry the line and column reported by the parser.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text)
            .map_err(|e| GraphError::Parse(format!("line {}, column {}: {}", e.line(), e.column(), e)))
    }

    pub fn id_map(&self) -> Result<HashMap<i64, usize>, GraphError> {
        let mut ids = HashMap::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if ids.insert(v.id, i).is_some() {
                return Err(GraphError::Parse(format!("duplicate vertex id {}", v.id)));
            }
        }
        Ok(ids)
    }

    /// Exact graph; masses default to 0.
    pub fn to_graph_q(&self) -> Result<WeightedGraph<Q>, GraphError> {
        let ids = self.id_map()?;
        let lookup = |id: i64| {
            ids.get(&id).copied().ok_or_else(|| GraphError::Parse(format!("edge references unknown vertex id {id}")))
        };
        let mut edges = Vec::new();
        for e in &self.edges {
            edges.push(Edge { from: lookup(e.from)?, to: lookup(e.to)?, c: e.conductance.to_q()? });
        }
        let mass = self
            .vertices
            .iter()
            .map(|v| v.mass.as_ref().map_or(Ok(Q::zero()), |m| m.to_q()))
            .collect::<Result<Vec<_>, _>>()?;
        let pos = if self.vertices.iter().all(|v| v.x.is_some() && v.y.is_some()) {
            Some(self.vertices.iter().map(|v| [v.x.unwrap(), v.y.unwrap()]).collect())
        } else {
            None
        };
        WeightedGraph::new(self.vertices.len(), edges, mass, pos)
    }

    pub fn to_graph(&self) -> Result<WeightedGraph<f64>, GraphError> {
        Ok(self.to_graph_q()?.to_f64())
    }

    /// Vertices flagged `window: true`, in file order.
    pub fn window(&self) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&i| self.vertices[i].window == Some(true)).collect()
    }

    /// Per-vertex λ when every vertex carries one.
    pub fn lambda_q(&self) -> Result<Option<Vec<Q>>, GraphError> {
        if self.vertices.iter().any(|v| v.lambda.is_none()) {
            return Ok(None);
        }
        self.vertices.iter().map(|v| v.lambda.as_ref().unwrap().to_q()).collect::<Result<Vec<_>, _>>().map(Some)
    }

    pub fn from_graph(g: &WeightedGraph<f64>) -> Self {
        let pos = g.positions();
        GraphFile {
            vertices: (0..g.n())
                .map(|x| VertexRecord {
                    id: x as i64,
                    x: pos.map(|p| p[x][0]),
                    y: pos.map(|p| p[x][1]),
                    mass: Some(NumField::Float(g.mass()[x])),
                    window: None,
                    lambda: None,
                })
                .collect(),
            edges: g
                .edges()
                .iter()
                .map(|e| EdgeRecord {
                    from: e.from as i64,
                    to: e.to as i64,
                    conductance: NumField::Float(e.c),
                    offset: None,
                    alpha: None,
                    beta: None,
                })
                .collect(),
        }
    }
}

/// Product of a list of weights.
pub fn product<W: Weight>(it: impl IntoIterator<Item = W>) -> W {
    it.into_iter().fold(W::one(), |a, b| a * b)
}

pub fn one<W: Weight>() -> W {
    W::one()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::q;

    fn path_ab() -> WeightedGraph<Q> {
        WeightedGraph::symmetric(2, &[(0, 1, q(1, 1))], vec![q(1, 1), q(1, 1)]).unwrap()
    }

    #[test]
    fn cemetery_single_vertex() {
        let g = WeightedGraph::<Q>::new(1, vec![], vec![q(2, 1)], None).unwrap();
        let gp = cemetery_extension(&g);
        assert_eq!(gp.edges.len(), 1);
        assert_eq!(gp.edges[0], Edge { from: 0, to: 1, c: q(2, 1) });
    }

    #[test]
    fn cemetery_massless_adds_nothing() {
        let g = WeightedGraph::symmetric(2, &[(0, 1, 1.0)], vec![0.0, 0.0]).unwrap();
        let gp = cemetery_extension(&g);
        assert_eq!(gp.edges.len(), g.edges().len());
        assert!(gp.rho_edge.iter().all(|e| e.is_none()));
    }

    #[test]
    fn forest_tree_bijection_on_path() {
        let g = path_ab();
        let gp = cemetery_extension(&g);
        let forests = enumerate_forests(&g, 8).unwrap();
        assert_eq!(forests.len(), 3);
        for (f, w) in &forests {
            assert_eq!(*w, q(1, 1));
            let t = gp.forest_to_tree(f);
            assert_eq!(gp.tree_weight(&t), *w);
            assert_eq!(&gp.tree_to_forest(&t), f);
        }
    }

    #[test]
    fn triangle_spanning_trees() {
        // triangle, m = 0 except a root mass 1 at vertex 0 to force roots there
        let g = WeightedGraph::symmetric(3, &[(0, 1, q(1, 1)), (1, 2, q(1, 1)), (0, 2, q(1, 1))], vec![q(1, 1), q(0, 1), q(0, 1)])
            .unwrap();
        let forests = enumerate_forests(&g, 8).unwrap();
        assert_eq!(forests.len(), 3);
        assert!(forests.iter().all(|(f, _)| f.roots() == vec![0]));
    }

    #[test]
    fn single_vertex_forest() {
        let g = WeightedGraph::<Q>::new(1, vec![], vec![q(2, 1)], None).unwrap();
        let forests = enumerate_forests(&g, 8).unwrap();
        assert_eq!(forests, vec![(RootedForest { out: vec![None] }, q(2, 1))]);
    }

    fn z_line(lo: i64, hi: i64, m: Q) -> WeightedGraph<Q> {
        let n = (hi - lo + 1) as usize;
        let pairs: Vec<_> = (0..n - 1).map(|i| (i, i + 1, q(1, 1))).collect();
        WeightedGraph::symmetric(n, &pairs, vec![m; n]).unwrap()
    }

    #[test]
    fn wired_z_line() {
        let amb = z_line(-3, 4, q(0, 1));
        // ambient index of integer v is v + 3
        let r = wired_restriction(&amb, &[3, 4]).unwrap();
        assert_eq!(r.graph.mass(), &[q(1, 1), q(1, 1)]);
        let c = collapse_boundary(&amb, &[3, 4]).unwrap();
        assert_eq!(c.boundary_conductance(), vec![q(1, 1), q(1, 1)]);
        assert_eq!(c.stubs.len(), 2);
    }

    #[test]
    fn wired_full_subset_is_identity() {
        let amb = z_line(0, 3, q(1, 2));
        let all: Vec<usize> = (0..4).collect();
        let r = wired_restriction(&amb, &all).unwrap();
        assert_eq!(r.graph.mass(), amb.mass());
        assert!(collapse_boundary(&amb, &all).unwrap().stubs.is_empty());
    }

    fn grid(w: usize, h: usize) -> WeightedGraph<Q> {
        let mut pairs = Vec::new();
        for j in 0..h {
            for i in 0..w {
                let v = j * w + i;
                if i + 1 < w {
                    pairs.push((v, v + 1, q(1, 1)));
                }
                if j + 1 < h {
                    pairs.push((v, v + w, q(1, 1)));
                }
            }
        }
        WeightedGraph::symmetric(w * h, &pairs, vec![q(0, 1); w * h]).unwrap()
    }

    #[test]
    fn wired_three_by_three_in_grid() {
        let amb = grid(5, 5);
        let subset: Vec<usize> = (1..4).flat_map(|j| (1..4).map(move |i| j * 5 + i)).collect();
        let r = wired_restriction(&amb, &subset).unwrap();
        let m: Vec<i64> = r.graph.mass().iter().map(|m| m.to_integer().try_into().unwrap()).collect();
        assert_eq!(m, vec![2, 1, 2, 1, 0, 1, 2, 1, 2]);
    }

    #[test]
    fn collapse_two_by_two() {
        let amb = grid(4, 4);
        let c = collapse_boundary(&amb, &[5, 6, 9, 10]).unwrap();
        assert_eq!(c.boundary_conductance(), vec![q(2, 1); 4]);
    }

    #[test]
    fn disconnected_subset_rejected() {
        let amb = z_line(0, 4, q(0, 1));
        assert_eq!(wired_restriction(&amb, &[0, 2]).unwrap_err(), GraphError::Disconnected);
    }

    #[test]
    fn missing_reverse_rejected() {
        let e = vec![Edge { from: 0, to: 1, c: 1.0 }];
        assert_eq!(WeightedGraph::new(2, e, vec![1.0, 1.0], None).unwrap_err(), GraphError::MissingReverse(0, 1));
    }

    #[test]
    fn parse_file_and_errors() {
        let text = r#"{"vertices":[{"id":7,"mass":"3/2"},{"id":9,"mass":1}],
            "edges":[{"from":7,"to":9,"conductance":2},{"from":9,"to":7,"conductance":"1/2"}]}"#;
        let g = GraphFile::parse(text).unwrap().to_graph_q().unwrap();
        assert_eq!(g.mass(), &[q(3, 2), q(1, 1)]);
        assert_eq!(g.edge(1).c, q(1, 2));
        let err = GraphFile::parse("{\n\"vertices\": [\n  {\"id\": }").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}

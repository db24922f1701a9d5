//! Killed random walks, loop-erasure and Wilson's algorithm rooted at the cemetery.

use crate::graph::{RootedForest, WeightedGraph};
use crate::par::{run_chunked, Exec};
use rand::Rng;
use std::collections::HashMap;
use thiserror::Error;

pub const STEP_CAP: u64 = 1_000_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum WalkError {
    #[error("step cap of {0} exceeded: the walk does not die (zero mass?)")]
    StepCap(u64),
}

/// Precomputed transition data for fast sampling.
#[derive(Clone, Debug)]
pub struct WalkTable {
    /// per vertex: (edge id, target) in out-edge order
    targets: Vec<Vec<(usize, usize)>>,
    /// per vertex: cumulative conductances aligned with `targets`
    cumul: Vec<Vec<f64>>,
    c: Vec<f64>,
    ck: Vec<f64>,
    edge_to: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Move { edge: usize, to: usize },
    Die,
}

impl WalkTable {
    pub fn new(g: &WeightedGraph<f64>) -> Self {
        let n = g.n();
        let mut targets = Vec::with_capacity(n);
        let mut cumul = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        let mut ck = Vec::with_capacity(n);
        for x in 0..n {
            let mut t = Vec::new();
            let mut cu = Vec::new();
            let mut s = 0.0;
            for &e in g.out_edges(x) {
                s += g.edge(e).c;
                t.push((e, g.edge(e).to));
                cu.push(s);
            }
            targets.push(t);
            cumul.push(cu);
            c.push(s);
            ck.push(s + g.mass()[x]);
        }
        WalkTable { targets, cumul, c, ck, edge_to: g.edges().iter().map(|e| e.to).collect() }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn c(&self, x: usize) -> f64 {
        self.c[x]
    }

    pub fn ck(&self, x: usize) -> f64 {
        self.ck[x]
    }

    /// Edge whose cumulative interval contains `r ∈ [0, c(x))`.
    fn pick(&self, x: usize, r: f64) -> (usize, usize) {
        let cu = &self.cumul[x];
        let i = cu.partition_point(|&v| v <= r).min(cu.len() - 1);
        self.targets[x][i]
    }

    /// Killed step from a single uniform `u ∈ [0,1)`.
    pub fn step_killed_u(&self, x: usize, u: f64) -> Step {
        let r = u * self.ck[x];
        if r >= self.c[x] {
            return Step::Die;
        }
        let (edge, to) = self.pick(x, r);
        Step::Move { edge, to }
    }

    pub fn step_killed<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Step {
        self.step_killed_u(x, rng.random::<f64>())
    }

    /// Step of the walk without killing.
    pub fn step_unkilled<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> (usize, usize) {
        self.pick(x, rng.random::<f64>() * self.c[x])
    }

    /// One uniform drives both copies; while the killed copy is alive it
    /// takes the same step as the unkilled one.
    pub fn coupled_step_u(&self, x: usize, killed_alive: bool, u: f64) -> (usize, bool) {
        if self.c[x] == 0.0 {
            return (x, false);
        }
        if !killed_alive {
            return (self.pick(x, u * self.c[x]).1, false);
        }
        let p = self.c[x] / self.ck[x];
        if u < p {
            (self.pick(x, (u / p) * self.c[x]).1, true)
        } else {
            let u2 = (u - p) / (1.0 - p);
            (self.pick(x, u2 * self.c[x]).1, false)
        }
    }
}

/// Runs the pair (unkilled, killed) for `steps` steps from `x`.
/// Returns the unkilled trajectory and the death time of the killed copy.
pub fn coupled_pair<R: Rng + ?Sized>(t: &WalkTable, x: usize, steps: usize, rng: &mut R) -> (Vec<usize>, Option<usize>) {
    let mut path = vec![x];
    let mut alive = true;
    let mut death = None;
    let mut cur = x;
    for n in 0..steps {
        let (y, a) = t.coupled_step_u(cur, alive, rng.random::<f64>());
        if alive && !a {
            death = Some(n + 1);
        }
        alive = a;
        cur = y;
        path.push(y);
    }
    (path, death)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terminal {
    HitTarget,
    Died,
    Exited,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LerwPath {
    pub vertices: Vec<usize>,
    pub status: Terminal,
}

/// Chronological loop-erasure.
pub fn loop_erase(path: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(path.len());
    let mut pos: HashMap<usize, usize> = HashMap::new();
    for &v in path {
        if let Some(&i) = pos.get(&v) {
            for w in out.drain(i + 1..) {
                pos.remove(&w);
            }
        } else {
            pos.insert(v, out.len());
            out.push(v);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WalkEnd {
    Died,
    Stopped(usize),
}

/// Killed walk from `start` until death or until `stop(vertex)` holds.
pub fn walk_until<R: Rng + ?Sized>(
    t: &WalkTable,
    start: usize,
    stop: impl Fn(usize) -> bool,
    rng: &mut R,
    cap: u64,
) -> Result<(Vec<usize>, WalkEnd), WalkError> {
    let mut path = vec![start];
    let mut x = start;
    if stop(x) {
        return Ok((path, WalkEnd::Stopped(x)));
    }
    for _ in 0..cap {
        match t.step_killed(x, rng) {
            Step::Die => return Ok((path, WalkEnd::Died)),
            Step::Move { to, .. } => {
                x = to;
                path.push(x);
                if stop(x) {
                    return Ok((path, WalkEnd::Stopped(x)));
                }
            }
        }
    }
    Err(WalkError::StepCap(cap))
}

/// Wilson's algorithm rooted at the cemetery: the walk from each unvisited
/// vertex runs until it dies or hits the current tree; the loop-erasure is
/// kept through the last-exit pointers.
pub fn wilson<R: Rng + ?Sized>(t: &WalkTable, order: &[usize], rng: &mut R) -> Result<RootedForest, WalkError> {
    wilson_with_cap(t, order, rng, STEP_CAP)
}

pub fn wilson_with_cap<R: Rng + ?Sized>(
    t: &WalkTable,
    order: &[usize],
    rng: &mut R,
    cap: u64,
) -> Result<RootedForest, WalkError> {
    let n = t.n();
    let mut in_tree = vec![false; n];
    let mut next: Vec<Option<usize>> = vec![None; n];
    let mut steps = 0u64;
    for &start in order {
        if in_tree[start] {
            continue;
        }
        let mut x = start;
        while !in_tree[x] {
            steps += 1;
            if steps > cap {
                return Err(WalkError::StepCap(cap));
            }
            match t.step_killed(x, rng) {
                Step::Die => {
                    next[x] = None;
                    in_tree[x] = true;
                }
                Step::Move { edge, to } => {
                    if to != x {
                        next[x] = Some(edge);
                        x = to;
                    }
                }
            }
        }
        let mut x = start;
        while !in_tree[x] {
            in_tree[x] = true;
            let e = next[x].expect("pointer set");
            x = t.edge_to[e];
        }
    }
    Ok(RootedForest { out: next })
}

/// Wilson forests in parallel chunks: how often each edge is used and how often
/// each vertex is a root (counts over edge ids, then vertices).
pub fn forest_counts(g: &WeightedGraph<f64>, n: usize, seed: u64, exec: Exec) -> Result<(Vec<u64>, Vec<u64>), WalkError> {
    let t = WalkTable::new(g);
    let order: Vec<usize> = (0..g.n()).collect();
    let chunks = run_chunked(n, seed, exec, |rng, _, count| -> Result<(Vec<u64>, Vec<u64>), WalkError> {
        let mut edges = vec![0u64; g.edges().len()];
        let mut roots = vec![0u64; g.n()];
        for _ in 0..count {
            let f = wilson(&t, &order, rng)?;
            for (x, e) in f.out.iter().enumerate() {
                match e {
                    Some(e) => edges[*e] += 1,
                    None => roots[x] += 1,
                }
            }
        }
        Ok((edges, roots))
    });
    let mut edges = vec![0u64; g.edges().len()];
    let mut roots = vec![0u64; g.n()];
    for c in chunks {
        let (e, r) = c?;
        edges.iter_mut().zip(e).for_each(|(a, b)| *a += b);
        roots.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    Ok((edges, roots))
}

/// Removes consecutive repeats: the trajectory seen at jump times.
pub fn jump_chain(path: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(path.len());
    for &v in path {
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

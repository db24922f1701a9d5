use crate::manifest::Run;
use crate::{usage, Cli, Command, GridKind, VerifyCommand};
use anyhow::{Context, Result};
use std::path::{Path, PathBuf};
use temperley::dimers::{reference_matching, sample_matchings, DimerWindow, HeightGraph};
use temperley::doob::{o_walk_table, potential_column_field, sample_o_tree, DoobWindow};
use temperley::elliptic::near_critical;
use temperley::graph::{cemetery_extension, GraphFile, NumField};
use temperley::isoradial::{random_angles, z_invariant_weights, IsoradialGrid};
use temperley::linalg::{edge_probability, massive_laplacian, matrix_csv, potential, potential_f64};
use temperley::nearcrit::{Domain, Lattice, NearCritGrid};
use temperley::par::{run_chunked, Exec};
use temperley::periodic::{charpoly, PeriodicGraph};
use temperley::planar::Black;
use temperley::scalar::Q;
use temperley::walks::forest_counts;
use temperley::WeightedGraph;

pub struct Ctx<'a> {
    pub cli: &'a Cli,
    pub run: Run,
    pub exec: Exec,
}

impl Ctx<'_> {
    pub fn graph_file(&mut self, path: &Path) -> Result<GraphFile> {
        let text = self.run.read_input(path)?;
        GraphFile::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    /// Writes CSV rows (header first) to --out or stdout.
    pub fn emit_csv(&mut self, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner()?;
        self.emit_bytes(&bytes)
    }

    pub fn emit_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        match &self.cli.out {
            Some(p) => self.run.write_output(p, bytes),
            None => {
                use std::io::Write;
                std::io::stdout().write_all(bytes)?;
                Ok(())
            }
        }
    }

    pub fn dump(&mut self, m: &temperley::Matrix<f64>) -> Result<()> {
        if let Some(p) = self.cli.dump_matrix.clone() {
            self.run.write_output(&p, matrix_csv(m).as_bytes())?;
        }
        Ok(())
    }
}

pub fn run(cli: &Cli, line: &[String]) -> Result<()> {
    let mut ctx = Ctx { cli, run: Run::new(line, cli.seed), exec: Exec::default() };
    match &cli.cmd {
        Command::Grid { kind, delta, window, mass, jitter } => grid(&mut ctx, *kind, *delta, *window, *mass, *jitter)?,
        Command::SampleForest { graph, n } => sample_forest(&mut ctx, graph, *n)?,
        Command::SampleTree { graph, n, lambda } => sample_tree(&mut ctx, graph, *n, lambda.as_deref())?,
        Command::SampleDimers { graph, lambda, ubar, mass, delta, n } => {
            sample_dimers(&mut ctx, graph.as_deref(), lambda.as_deref(), *ubar, *mass, *delta, *n)?
        }
        Command::EdgeProb { graph, edges, exact } => edge_prob(&mut ctx, graph, edges, *exact)?,
        Command::Verify { what } => match what {
            VerifyCommand::Doob { graph, lambda, exact } => crate::verify::doob(&mut ctx, graph, lambda.as_deref(), *exact)?,
            VerifyCommand::Dimers => crate::verify::dimers(&mut ctx)?,
            VerifyCommand::Elliptic => crate::verify::elliptic(&mut ctx)?,
            VerifyCommand::Periodic { periodic_graph } => crate::verify::periodic(&mut ctx, periodic_graph.as_deref())?,
        },
        Command::Charpoly { periodic_graph } => charpoly_cmd(&mut ctx, periodic_graph)?,
        Command::Experiment { kind, config } => crate::experiment::run(&mut ctx, *kind, config)?,
    }
    let manifest = match (&cli.manifest, &cli.out) {
        (Some(m), _) => Some(m.clone()),
        (None, Some(o)) => Some(PathBuf::from(format!("{}.manifest.json", o.display()))),
        _ => None,
    };
    if let Some(m) = manifest {
        ctx.run.finish(line, &m)?;
    }
    Ok(())
}

fn grid(ctx: &mut Ctx, kind: GridKind, delta: f64, window: usize, mass: f64, jitter: f64) -> Result<()> {
    if !(delta > 0.0) || window == 0 {
        return Err(usage("--delta must be positive and --window at least 1"));
    }
    let grid = match kind {
        GridKind::Square => IsoradialGrid::square(delta, window, window),
        GridKind::Rhombic => {
            let (a, b) = random_angles(window, window, jitter, ctx.cli.seed);
            IsoradialGrid::rhombic(delta, a, b, 0.1)
        }
    }
    .map_err(|e| usage(e.to_string()))?;
    let m = near_critical(mass, delta).map_err(|e| usage(e.to_string()))?;
    let g = z_invariant_weights(&grid, &m)?;
    ctx.dump(&massive_laplacian(&g))?;
    let mut file = GraphFile::from_graph(&g);
    for (rec, e) in file.edges.iter_mut().zip(&grid.edges) {
        rec.alpha = Some(e.abar);
        rec.beta = Some(e.bbar);
    }
    let text = serde_json::to_string_pretty(&file)? + "\n";
    ctx.emit_bytes(text.as_bytes())
}

fn sample_forest(ctx: &mut Ctx, path: &Path, n: usize) -> Result<()> {
    let g = ctx.graph_file(path)?.to_graph().map_err(|e| usage(e.to_string()))?;
    if !g.has_mass() {
        return Err(usage("graph has no mass: Wilson's algorithm would not terminate"));
    }
    ctx.dump(&massive_laplacian(&g))?;
    let (edges, roots) = forest_counts(&g, n, ctx.cli.seed, ctx.exec)?;
    let mut rows = Vec::new();
    for (i, e) in g.edges().iter().enumerate() {
        rows.push(vec![i.to_string(), e.from.to_string(), e.to.to_string(), edges[i].to_string(), freq(edges[i], n)]);
    }
    for (x, &r) in roots.iter().enumerate() {
        rows.push(vec![format!("rho{x}"), x.to_string(), "rho".into(), r.to_string(), freq(r, n)]);
    }
    ctx.emit_csv(&["edge", "from", "to", "count", "frequency"], rows)
}

fn freq(c: u64, n: usize) -> String {
    format!("{}", c as f64 / n.max(1) as f64)
}

/// λ from `--lambda` (JSON array or `builtin`), else from the file, else builtin:
/// the potential column at the first vertex outside the window.
pub fn resolve_lambda(ctx: &mut Ctx, file: &GraphFile, g: &WeightedGraph<Q>, window: &[usize], spec: Option<&str>) -> Result<Vec<Q>> {
    let builtin = |g: &WeightedGraph<Q>| -> Result<Vec<Q>> {
        let z = (0..g.n()).find(|x| !window.contains(x)).ok_or_else(|| usage("window covers every vertex"))?;
        Ok(potential_column_field(g, z)?)
    };
    match spec {
        Some("builtin") => builtin(g),
        Some(p) => {
            let text = ctx.run.read_input(Path::new(p))?;
            let vals: Vec<NumField> = serde_json::from_str(&text).map_err(|e| usage(format!("{p}: {e}")))?;
            if vals.len() != g.n() {
                return Err(usage(format!("{p}: {} values for {} vertices", vals.len(), g.n())));
            }
            vals.iter().map(|v| v.to_q().map_err(|e| usage(e.to_string()))).collect()
        }
        None => match file.lambda_q().map_err(|e| usage(e.to_string()))? {
            Some(l) => Ok(l),
            None => builtin(g),
        },
    }
}

pub fn window_of(file: &GraphFile) -> Result<Vec<usize>> {
    let w = file.window();
    if w.is_empty() {
        return Err(usage("graph file marks no vertex with \"window\": true"));
    }
    Ok(w)
}

fn sample_tree(ctx: &mut Ctx, path: &Path, n: usize, lambda: Option<&str>) -> Result<()> {
    let file = ctx.graph_file(path)?;
    let gq = file.to_graph_q().map_err(|e| usage(e.to_string()))?;
    let window = window_of(&file)?;
    let l = resolve_lambda(ctx, &file, &gq, &window, lambda)?;
    let lf: Vec<f64> = l.iter().map(temperley::scalar::q_to_f64).collect();
    let w = DoobWindow::new(&gq.to_f64(), &window, &lf)?;
    ctx.dump(&massive_laplacian(&w.tilde_wired()))?;
    let table = o_walk_table(&w.tilde);
    let order: Vec<usize> = (0..window.len()).collect();
    let m = w.tilde.inner.edges().len();
    let total = m + w.tilde.stubs.len();
    let chunks = run_chunked(n, ctx.cli.seed, ctx.exec, |rng, _, count| -> Result<Vec<u64>> {
        let mut c = vec![0u64; total];
        for _ in 0..count {
            for id in sample_o_tree(&w.tilde, &table, &order, rng)?.o_edge_ids(&w.tilde) {
                c[id] += 1;
            }
        }
        Ok(c)
    });
    let mut counts = vec![0u64; total];
    for ch in chunks {
        counts.iter_mut().zip(ch?).for_each(|(a, b)| *a += b);
    }
    let mut rows = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        let (from, to, cond) = if i < m {
            let e = w.tilde.inner.edge(i);
            (window[e.from].to_string(), window[e.to].to_string(), e.c)
        } else {
            let s = &w.tilde.stubs[i - m];
            (window[s.from].to_string(), "o".to_string(), s.c)
        };
        rows.push(vec![i.to_string(), from, to, cond.to_string(), c.to_string(), freq(c, n)]);
    }
    ctx.emit_csv(&["edge", "from", "to", "conductance", "count", "frequency"], rows)
}

fn sample_dimers(ctx: &mut Ctx, graph: Option<&Path>, lambda: Option<&str>, ubar: f64, mass: f64, delta: f64, n: usize) -> Result<()> {
    let win = match graph {
        Some(path) => {
            let file = ctx.graph_file(path)?;
            let gq = file.to_graph_q().map_err(|e| usage(e.to_string()))?;
            let window = window_of(&file)?;
            let l = resolve_lambda(ctx, &file, &gq, &window, lambda)?;
            let lf: Vec<f64> = l.iter().map(temperley::scalar::q_to_f64).collect();
            DimerWindow::new(&gq.to_f64(), &window, &lf)?
        }
        None => {
            let domain = Domain::Rectangle { min: [0.0, 0.0], max: [1.0, 1.0] };
            let ng = NearCritGrid::covering(domain.bbox(), &Lattice::Square, delta, mass, ubar)
                .map_err(|e| usage(e.to_string()))?;
            let mut subset = ng.window(&domain)?.vertices;
            subset.sort();
            DimerWindow::new(&ng.g, &subset, &ng.field.values)?
        }
    };
    let ms = sample_matchings(&win, n, ctx.cli.seed, ctx.exec)?;
    let hg = HeightGraph::new(&win.planar);
    let m0 = reference_matching(&win);
    let nv = win.planar.n;
    let mut rows = Vec::new();
    for (s, m) in ms.iter().enumerate() {
        for (w, b) in m.black_of.iter().enumerate() {
            let b = match b {
                Black::Primal(x) => *x,
                Black::Dual(f) => nv + f,
            };
            rows.push(vec![s.to_string(), "half_edge".into(), w.to_string(), b.to_string(), "1".into()]);
        }
        let h = hg.height(m, &m0);
        for (c, v) in h.iter().enumerate() {
            if hg.active[c] {
                rows.push(vec![s.to_string(), "height".into(), c.to_string(), String::new(), v.to_string()]);
            }
        }
    }
    ctx.emit_csv(&["sample", "kind", "index", "black", "value"], rows)
}

fn edge_prob(ctx: &mut Ctx, path: &Path, edges: &[usize], exact: bool) -> Result<()> {
    let file = ctx.graph_file(path)?;
    let gq = file.to_graph_q().map_err(|e| usage(e.to_string()))?;
    let gp = cemetery_extension(&gq);
    if let Some(&bad) = edges.iter().find(|&&e| e >= gp.edges.len()) {
        return Err(usage(format!("edge id {bad} out of range (Gᵖ has {} edges)", gp.edges.len())));
    }
    let g = gq.to_f64();
    let pf = potential_f64(&g).context("potential")?;
    ctx.dump(&pf.v)?;
    let value = if exact {
        let p = potential(&gq).context("potential")?;
        edge_probability(&gp, &p, edges)?.to_string()
    } else {
        let gpf = cemetery_extension(&g);
        edge_probability(&gpf, &pf, edges)?.to_string()
    };
    let ids: Vec<String> = edges.iter().map(|e| e.to_string()).collect();
    ctx.emit_csv(&["edges", "probability"], vec![vec![ids.join(" "), value]])
}

fn charpoly_cmd(ctx: &mut Ctx, path: &Path) -> Result<()> {
    let file = ctx.graph_file(path)?;
    let pg = PeriodicGraph::from_file(&file).map_err(|e| usage(e.to_string()))?;
    let cp = charpoly(&pg, ctx.exec)?;
    eprintln!("refit residual {:e}", cp.refit_residual);
    let rows = cp.coeffs.iter().map(|(&(i, j), &c)| vec![i.to_string(), j.to_string(), format!("{c:e}")]).collect();
    ctx.emit_csv(&["i", "j", "coefficient"], rows)
}

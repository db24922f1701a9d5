use crate::commands::{resolve_lambda, window_of, Ctx};
use crate::{usage, VerificationFailed};
use anyhow::Result;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use temperley::dimers::{
    check_phases, enumerate_matchings, isoradial_lambda_star, temperley_forward, temperley_inverse,
    verify_block_identity, verify_det_relation, DimerWindow, MATCHING_CAP,
};
use temperley::doob::{sample_o_tree, tilted_transfer_gap, verify_partition_equality, DoobWindow};
use temperley::elliptic::{agm_ke, near_critical_residuals, EllipticModulus};
use temperley::isoradial::{discrete_exponential, z_invariant_weights, IsoradialGrid};
use temperley::linalg::massive_laplacian;
use temperley::par::task_rng;
use temperley::periodic::{perron, perron_search, random_periodic, random_points, transition_bloch, verify_translation, PeriodicGraph};
use temperley::scalar::q_to_f64;

pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, tol }
    }

    pub fn pass(&self) -> bool {
        self.value.abs() <= self.tol
    }
}

fn report(ctx: &mut Ctx, checks: Vec<Check>) -> Result<()> {
    let mut failed = Vec::new();
    for c in &checks {
        println!("{:<44} {:>12.3e}  (tol {:.0e})  {}", c.name, c.value, c.tol, if c.pass() { "ok" } else { "FAIL" });
        if !c.pass() {
            failed.push(c.name.clone());
        }
    }
    if ctx.cli.out.is_some() {
        let rows = checks
            .iter()
            .map(|c| vec![c.name.clone(), format!("{:e}", c.value), format!("{:e}", c.tol), c.pass().to_string()])
            .collect();
        ctx.emit_csv(&["check", "value", "tolerance", "pass"], rows)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(VerificationFailed(failed).into())
    }
}

pub fn doob(ctx: &mut Ctx, path: &Path, lambda: Option<&str>, exact: bool) -> Result<()> {
    let file = ctx.graph_file(path)?;
    let gq = file.to_graph_q().map_err(|e| usage(e.to_string()))?;
    let window = window_of(&file)?;
    let lq = resolve_lambda(ctx, &file, &gq, &window, lambda)?;
    let g = gq.to_f64();
    let l: Vec<f64> = lq.iter().map(q_to_f64).collect();
    let mut checks = Vec::new();
    if exact {
        let c = verify_partition_equality(&gq, &window, &lq)?;
        println!("Z_RSF = {}", c.z_rsf);
        println!("Z_RST_o = {}", c.z_rst_o);
        let eq = if c.z_rsf == c.z_rst_o { "=" } else { "!=" };
        println!("{} {eq} {}", c.z_rsf, c.z_rst_o);
        checks.push(Check::new("partition gap (exact)", (c.z_rsf - c.z_rst_o).to_f64_lossy(), 0.0));
    } else {
        let c = verify_partition_equality(&g, &window, &l)?;
        println!("Z_RSF = {}", c.z_rsf);
        println!("Z_RST_o = {}", c.z_rst_o);
        checks.push(Check::new("partition relative gap", c.rel_gap, 1e-10));
    }
    let w = DoobWindow::new(&g, &window, &l)?;
    ctx.dump(&massive_laplacian(&w.wired))?;
    checks.push(Check::new("harmonicity residual", w.harmonic_residual, 1e-8));
    checks.push(Check::new("gauge deviation", w.gauge_deviation(), 1e-12));
    checks.push(Check::new("tilted transfer gap", tilted_transfer_gap(&w)?, 1e-12));
    report(ctx, checks)
}

trait Lossy {
    fn to_f64_lossy(&self) -> f64;
}

impl Lossy for temperley::scalar::Q {
    fn to_f64_lossy(&self) -> f64 {
        q_to_f64(self)
    }
}

/// Square grid with k = 0.4 and the discrete exponential; window of (2r+2)² vertices.
pub fn grid_window(radius: usize) -> Result<DimerWindow<f64>> {
    let grid = IsoradialGrid::square(1.0, 14, 14)?;
    let m = EllipticModulus::new(0.4)?;
    let g = z_invariant_weights(&grid, &m)?;
    let field = discrete_exponential(&grid, &m, grid.vertex_at(7, 7).expect("corner (7,7) is primal"), 0.7);
    let mut subset: Vec<usize> = (0..grid.n())
        .filter(|&x| grid.vertices[x].0.abs_diff(7) + grid.vertices[x].1.abs_diff(6) <= 2 * radius + 1)
        .collect();
    subset.sort();
    let win = DimerWindow::new(&g, &subset, &field.values)?;
    let (star, _) = isoradial_lambda_star(&win, &grid, &field, &m);
    Ok(win.with_lambda_star(star)?)
}

pub fn dimers(ctx: &mut Ctx) -> Result<()> {
    let mut checks = Vec::new();
    let small = grid_window(0)?;
    check_phases(&small.planar)?;
    let nu = small.drifted_weights();
    let z: f64 = enumerate_matchings(&small.planar, &nu, MATCHING_CAP)?.iter().map(|(_, w)| *w).sum();
    let d = verify_det_relation(&small);
    let k = temperley::dimers::kasteleyn_matrix(&small.planar, &nu);
    checks.push(Check::new("|det K^d| vs matching sum (rel)", (k.det().norm() - z) / z, 1e-12));
    checks.push(Check::new("det K^k = C det Δ (4 vertices, rel)", d.rel_gap, 1e-8));

    let win = grid_window(2)?;
    check_phases(&win.planar)?;
    ctx.dump(&massive_laplacian(&win.wired))?;
    checks.push(Check::new("harmonicity residual", win.harmonic_residual, 1e-10));
    checks.push(Check::new("gauge deviation", win.gauge_deviation(), 1e-12));
    let dual = win.self_duality_residuals().into_iter().fold(0.0f64, |a, r| a.max(r.abs()));
    checks.push(Check::new("dual harmonicity of λ*", dual, 1e-10));
    let b = verify_block_identity(&win);
    checks.push(Check::new("(K^k)†K^k off-block / scale", b.off_block / b.scale, 1e-12));
    checks.push(Check::new("(K^k)†K^k primal block / scale", b.primal_block / b.scale, 1e-10));
    let d = verify_det_relation(&win);
    checks.push(Check::new("det K^k = C det Δ (rel)", d.rel_gap, 1e-8));
    checks.push(Check::new("det K^k = det Δ* / C (rel)", d.rel_gap_dual, 1e-8));

    let nu_big = win.drifted_weights();
    let table = win.tilde_table();
    let order: Vec<usize> = (0..win.planar.n).collect();
    let mut rng = task_rng(ctx.cli.seed, 0);
    let mut worst: f64 = 0.0;
    let mut mismatched = 0usize;
    for _ in 0..200 {
        let t = sample_o_tree(&win.tilde, &table, &order, &mut rng)?;
        let m = temperley_forward(&win.planar, &t)?;
        let (back, _) = temperley_inverse(&win.planar, &m)?;
        if back != t {
            mismatched += 1;
        }
        let (wt, wm) = (t.weight(&win.tilde), m.weight(&nu_big));
        worst = worst.max((wt - wm).abs() / wt);
    }
    checks.push(Check::new("Temperley round trips failing (of 200)", mismatched as f64, 0.0));
    checks.push(Check::new("Temperley weight gap (rel)", worst, 1e-12));
    report(ctx, checks)
}

pub fn elliptic(ctx: &mut Ctx) -> Result<()> {
    let mut checks = Vec::new();
    let (k0, e0) = agm_ke(0.0, 1.0);
    checks.push(Check::new("K(0) − π/2", k0 - FRAC_PI_2, 1e-14));
    checks.push(Check::new("E(0) − π/2", e0 - FRAC_PI_2, 1e-14));
    let mut legendre: f64 = 0.0;
    for i in 1..=9 {
        legendre = legendre.max(EllipticModulus::new(0.1 * i as f64)?.legendre_defect().abs());
    }
    checks.push(Check::new("Legendre relation, k = 0.1..0.9", legendre, 1e-12));
    let deltas = [1e-2, 1e-3, 1e-4];
    let r: Vec<_> = deltas.iter().map(|&d| near_critical_residuals(1.0, d)).collect();
    let spread = |f: &dyn Fn(usize) -> f64| {
        let v: Vec<f64> = (0..3).map(f).collect();
        let hi = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let lo = v.iter().fold(f64::INFINITY, |a, b| a.min(b.abs()));
        (hi / lo).log(4.0)
    };
    // log₄(max/min) of residual/δᵖ: within a factor 4 when ≤ 1
    checks.push(Check::new("k² expansion: log₄ spread of residual/δ³", spread(&|i| r[i].k2 / deltas[i].powi(3)), 1.0));
    checks.push(Check::new("θ/θ̄ expansion: log₄ spread of residual/δ⁴", spread(&|i| r[i].angle / deltas[i].powi(4)), 1.0));
    checks.push(Check::new("sc/tan expansion: log₄ spread of residual/δ²", spread(&|i| r[i].sc / deltas[i].powi(2)), 1.0));
    report(ctx, checks)
}

pub fn periodic(ctx: &mut Ctx, path: Option<&Path>) -> Result<()> {
    let mut checks = Vec::new();
    let graphs: Vec<PeriodicGraph> = match path {
        Some(p) => {
            let file = ctx.graph_file(p)?;
            vec![PeriodicGraph::from_file(&file).map_err(|e| usage(e.to_string()))?]
        }
        None => {
            let sq = PeriodicGraph::square_lattice(1.0, 0.5);
            let sol = perron_search(&sq, 0)?;
            checks.push(Check::new("Z² m = 1/2: z₀ − 2", sol.z0[0] - 2.0, 1e-10));
            checks.push(Check::new("Z² m = 1/2: s + 1/s − 5/2", sol.z0[0] + 1.0 / sol.z0[0] - 2.5, 1e-10));
            (0..10).map(|i| random_periodic(1 + i % 3, ctx.cli.seed.wrapping_add(i as u64))).collect()
        }
    };
    let mut beta: f64 = 0.0;
    let mut trans: f64 = 0.0;
    for (i, pg) in graphs.iter().enumerate() {
        let sol = perron_search(pg, i % 2)?;
        beta = beta.max((perron(&transition_bloch(pg, sol.z0)).0 - 1.0).abs());
        trans = trans.max(verify_translation(pg, &sol, &random_points(20, ctx.cli.seed ^ i as u64))?);
    }
    checks.push(Check::new("β(z₀) − 1", beta, 1e-10));
    checks.push(Check::new("translation identity (rel)", trans, 1e-8));
    report(ctx, checks)
}

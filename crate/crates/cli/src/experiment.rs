use crate::commands::Ctx;
use crate::{usage, ExperimentKind};
use anyhow::Result;
use serde::Deserialize;
use std::path::Path;
use temperley::nearcrit::{
    conditioned_branch_sampler, crossing_probability, crossing_probability_exact, exit_law_experiment,
    girsanov_ratio_check, height_field_stats, CrossingSpec, ExperimentConfig, NearCritGrid, ARCS,
};

/// Config file: the shared experiment fields plus per-experiment extras.
#[derive(Debug, Deserialize)]
pub struct ExperimentFile {
    #[serde(flatten)]
    pub base: ExperimentConfig,
    /// girsanov: mesh sizes (default δ and δ/2)
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// girsanov: directions (default ū)
    #[serde(default)]
    pub ubars: Vec<f64>,
    /// crossing: rectangles
    #[serde(default)]
    pub crossings: Vec<CrossingSpec>,
    /// crossing: mesh as a fraction of r, overriding δ
    #[serde(default)]
    pub relative_mesh: Option<f64>,
    /// branch: exit arc [from, to) in radians
    #[serde(default)]
    pub arc: Option<[f64; 2]>,
}

fn f(v: f64) -> String {
    format!("{v}")
}

pub fn run(ctx: &mut Ctx, kind: ExperimentKind, path: &Path) -> Result<()> {
    let text = ctx.run.read_input(path)?;
    let cfg: ExperimentFile = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))?;
    let mut base = cfg.base.clone();
    base.seed = ctx.cli.seed;
    base.validate().map_err(|e| usage(e.to_string()))?;
    let (m, u) = (base.mass, base.ubar);
    match kind {
        ExperimentKind::Girsanov => {
            let deltas = if cfg.deltas.is_empty() { vec![base.delta, base.delta / 2.0] } else { cfg.deltas.clone() };
            let ubars = if cfg.ubars.is_empty() { vec![u] } else { cfg.ubars.clone() };
            let rows = girsanov_ratio_check(&base.domain, &base.lattice, &deltas, &ubars, m)?
                .into_iter()
                .map(|r| vec![f(r.delta), f(m), f(r.ubar), f(r.ratio), f(r.target), f(r.error), r.length.to_string()])
                .collect();
            ctx.emit_csv(&["delta", "M", "ubar", "ratio", "target", "error", "length"], rows)
        }
        ExperimentKind::Crossing => {
            if cfg.crossings.is_empty() {
                return Err(usage("crossing experiment needs a non-empty \"crossings\" list"));
            }
            let mut rows = Vec::new();
            for (i, spec) in cfg.crossings.iter().enumerate() {
                let delta = cfg.relative_mesh.map_or(base.delta, |s| s * spec.r);
                let seed = base.seed.wrapping_add(i as u64);
                let est = crossing_probability(spec, &base.lattice, delta, m, base.samples, seed, ctx.exec)
                    .map_err(|e| usage(e.to_string()))?;
                let (exact, _) = crossing_probability_exact(spec, &base.lattice, delta, m)?;
                rows.push(vec![
                    f(delta),
                    f(m),
                    f(spec.r),
                    f(spec.z[0]),
                    f(spec.z[1]),
                    spec.vertical.to_string(),
                    f(est.p),
                    f(est.stderr),
                    est.n.to_string(),
                    f(exact),
                ]);
            }
            ctx.emit_csv(&["delta", "M", "r", "z_x", "z_y", "vertical", "p", "stderr", "n", "exact"], rows)
        }
        ExperimentKind::Exitlaw => {
            let law = exit_law_experiment(&base, ctx.exec)?;
            eprintln!("total variation {:.4}", law.tv);
            let rows = (0..ARCS)
                .map(|a| vec![f(base.delta), f(m), f(u), a.to_string(), f(law.discrete[a]), f(law.brownian[a]), f(law.tv)])
                .collect();
            ctx.emit_csv(&["delta", "M", "ubar", "arc", "discrete", "brownian", "tv"], rows)
        }
        ExperimentKind::Branch => {
            let arc = cfg.arc.ok_or_else(|| usage("branch experiment needs \"arc\": [from, to]"))?;
            let ng = NearCritGrid::for_config(&base)?;
            let start = base.start.unwrap_or(base.domain.center());
            let b = conditioned_branch_sampler(&ng, &base.domain, start, (arc[0], arc[1]), base.samples, base.seed)?;
            eprintln!("acceptance {:.4} ({} attempts)", b.acceptance, b.attempts);
            let mut rows = Vec::new();
            for (s, p) in b.paths.iter().enumerate() {
                for (k, q) in p.iter().enumerate() {
                    rows.push(vec![f(base.delta), f(m), f(u), s.to_string(), k.to_string(), f(q[0]), f(q[1])]);
                }
            }
            ctx.emit_csv(&["delta", "M", "ubar", "sample", "step", "x", "y"], rows)
        }
        ExperimentKind::Height => {
            let s = height_field_stats(&base, ctx.exec)?;
            let rows = (0..s.positions.len())
                .map(|i| {
                    let p = s.positions[i];
                    vec![f(base.delta), f(m), f(u), f(p[0]), f(p[1]), f(s.mean[i]), f(s.variance[i])]
                })
                .collect();
            ctx.emit_csv(&["delta", "M", "ubar", "x", "y", "mean", "variance"], rows)
        }
    }
}

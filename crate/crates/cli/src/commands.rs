//! The commands: each returns the checks it ran, a JSON result block and the
//! artifact files it wrote.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use lagsel::dynamics::{
    maximal_invariant_set, verify_theorem_1_5, verify_theorem_6_3, SampleSet, Theorem63Options, TrimOptions,
};
use lagsel::fourier::{PeriodicFunction, SymbolicFn};
use lagsel::front::Front;
use lagsel::lagrangian::verify_exactness;
use lagsel::lagrangian::io::{read_lagrangian, write_lagrangian};
use lagsel::lagrangian::{ExactLagrangian, FlowOptions};
use lagsel::persistence::essential_value_bfs;
use lagsel::selector::{build_discrete_action, level_selector, verify_selector};
use lagsel::weakkam::{
    critical_value, critical_value_infmax, subsolution_check, sublevel_momentum_bound, weak_kam, CriticalOptions,
    GraphFamily, WeakKamOptions,
};
use lagsel::{CotangentPoint, HamiltonianSpec};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, Kind, Level, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown suite '{0}': expected selector, 1.3, 1.5 or 6.3")]
    Suite(String),
    #[error(transparent)]
    Module(#[from] lagsel::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Suite(_) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, RunError>;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub tol: f64,
}

fn at_most(name: &str, value: f64, tol: f64) -> Check {
    Check { name: name.into(), pass: value <= tol, value, tol }
}

fn holds(name: &str, pass: bool) -> Check {
    Check { name: name.into(), pass, value: pass as u8 as f64, tol: 1.0 }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub results: Value,
    pub artifacts: Vec<String>,
}

struct Context<'a> {
    cfg: &'a RunConfig,
    h: HamiltonianSpec,
}

impl Context<'_> {
    fn create(&self, name: &str, out: &mut Outcome) -> Result<BufWriter<File>> {
        let path = self.cfg.out.join(name);
        let f = File::create(&path).map_err(|e| RunError::Io { path: path.display().to_string(), source: e })?;
        out.artifacts.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn generator(&self) -> Result<PeriodicFunction> {
        let v = SymbolicFn::parse(&self.cfg.lagrangian.v, self.cfg.dim)
            .map_err(|e| ConfigError::Field { field: "lagrangian.v".into(), message: e.to_string() })?;
        Ok(PeriodicFunction::Symbolic(v))
    }

    fn flow_hamiltonian(&self) -> Result<HamiltonianSpec> {
        match &self.cfg.lagrangian.flow {
            None => Ok(self.h.clone()),
            Some(src) => Ok(HamiltonianSpec::parse(src, self.cfg.dim)
                .map_err(|e| ConfigError::Field { field: "lagrangian.flow".into(), message: e.to_string() })?),
        }
    }

    fn lagrangian(&self) -> Result<ExactLagrangian> {
        let c = &self.cfg.lagrangian;
        let samples = if self.cfg.dim == 1 { self.cfg.grids.base } else { 64 };
        match c.kind {
            Kind::Graph => Ok(ExactLagrangian::from_function(self.generator()?, samples)?),
            Kind::Flow => Ok(ExactLagrangian::from_flow(
                self.generator()?,
                &self.flow_hamiltonian()?,
                c.time,
                c.steps,
                &FlowOptions::default(),
            )?),
            Kind::File => {
                let path = c.file.as_ref().expect("validated");
                let f = File::open(path).map_err(|e| RunError::Io { path: path.display().to_string(), source: e })?;
                Ok(read_lagrangian(BufReader::new(f))?)
            }
        }
    }

    fn critical(&self) -> Result<lagsel::weakkam::CriticalValue> {
        Ok(critical_value(&self.h, &self.critical_options())?)
    }

    fn critical_options(&self) -> CriticalOptions {
        CriticalOptions {
            n: self.cfg.grids.velocity,
            dt: self.cfg.tolerances.dt,
            fp_tol: self.cfg.tolerances.fp_tol,
            ..Default::default()
        }
    }

    fn level(&self) -> Result<f64> {
        match self.cfg.level {
            Level::Value(a) => Ok(a),
            Level::Alpha => Ok(self.critical()?.alpha),
        }
    }

    fn trim(&self, default_horizon: f64) -> TrimOptions {
        TrimOptions {
            horizon: self.cfg.tolerances.horizon.unwrap_or(default_horizon),
            tube_factor: self.cfg.tolerances.tube_factor,
            e_tol: self.cfg.tolerances.e_tol,
            ..Default::default()
        }
    }
}

fn context(cfg: &RunConfig) -> Result<Context<'_>> {
    let h = HamiltonianSpec::parse(&cfg.hamiltonian, cfg.dim)
        .map_err(|e| ConfigError::Field { field: "hamiltonian.expr".into(), message: e.to_string() })?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| RunError::Io { path: cfg.out.display().to_string(), source: e })?;
    Ok(Context { cfg, h })
}

fn write_points(w: &mut impl Write, dim: usize, pts: &[CotangentPoint]) -> std::io::Result<()> {
    if dim == 1 {
        writeln!(w, "# q p")?;
    } else {
        writeln!(w, "# q1 q2 p1 p2")?;
    }
    for x in pts {
        if dim == 1 {
            writeln!(w, "{:.17e} {:.17e}", x.q[0], x.p[0])?;
        } else {
            writeln!(w, "{:.17e} {:.17e} {:.17e} {:.17e}", x.q[0], x.q[1], x.p[0], x.p[1])?;
        }
    }
    Ok(())
}

fn io(path: &str) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io { path: path.to_string(), source: e }
}

fn selector_checks(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let l = ctx.lagrangian()?;
    let f = level_selector(&l, ctx.cfg.grids.base)?;
    let rep = verify_selector(&f, &l)?;
    let ex = verify_exactness(&l);
    if ctx.cfg.wants("table") {
        let mut w = ctx.create("selector.txt", out)?;
        f.write_table(&mut w)?;
    }
    if ctx.cfg.wants("jsonl") {
        let mut w = ctx.create("selector.jsonl", out)?;
        f.write_jsonl(&mut w, Some(&rep))?;
    }
    let mut w = ctx.create("lagrangian.txt", out)?;
    write_lagrangian(&l, &mut w)?;
    out.checks.extend([
        at_most("lagrangian.exactness", ex.max_interval_residual.max(ex.loop_residual), ex.tol),
        at_most("selector.lipschitz", rep.lipschitz_const, rep.lipschitz_bound),
        at_most("selector.distance_to_L", rep.max_distance, rep.tol),
        at_most("selector.value_residual", rep.max_value_residual, rep.tol),
        at_most("selector.sheet_residual", rep.max_sheet_residual, rep.tol),
    ]);
    out.results = json!({ "selector": rep, "exactness": ex, "grid": f.n });
    Ok(())
}

pub fn selector(cfg: &RunConfig) -> Result<Outcome> {
    let ctx = context(cfg)?;
    let mut out = Outcome::default();
    selector_checks(&ctx, &mut out)?;
    Ok(out)
}

pub fn front(cfg: &RunConfig) -> Result<Outcome> {
    let ctx = context(cfg)?;
    let mut out = Outcome::default();
    let l = ctx.lagrangian()?;
    let front = Front::new(&l)?;
    let grid = if cfg.dim == 1 { cfg.grids.base } else { 64 };
    let dump = front.dump(grid)?;
    let mut w = ctx.create("front.txt", &mut out)?;
    w.write_all(dump.as_bytes()).map_err(io("front.txt"))?;
    let folds = front.folds().len();
    if cfg.dim == 1 {
        out.checks.push(holds("front.folds_paired", folds % 2 == 0));
    }
    out.results = json!({
        "folds": folds,
        "caustic_points": front.caustic_points().len(),
        "arcs": front.arc_count(),
        "grid": grid,
    });
    Ok(out)
}

pub fn weakkam(cfg: &RunConfig) -> Result<Outcome> {
    let ctx = context(cfg)?;
    let mut out = Outcome::default();
    let opts = WeakKamOptions {
        critical: ctx.critical_options(),
        inits: cfg.inits,
        seed: cfg.seed,
        num_tol: cfg.tolerances.num_tol,
        trim: ctx.trim(50.0),
    };
    let s = weak_kam(&ctx.h, &opts)?;
    {
        let mut w = ctx.create("weakkam.txt", &mut out)?;
        s.write_table(&ctx.h, &mut w)?;
        let mut w = ctx.create("aubry.txt", &mut out)?;
        write_points(&mut w, cfg.dim, &s.aubry_pts).map_err(io("aubry.txt"))?;
        let mut w = ctx.create("mane.txt", &mut out)?;
        write_points(&mut w, cfg.dim, &s.mane_pts).map_err(io("mane.txt"))?;
    }
    let n = s.n;
    let lip = lagsel::weakkam::grid_gradient(cfg.dim, n, &s.u)
        .iter()
        .map(|g| g[0].hypot(g[1]))
        .fold(0.0, f64::max);
    let bound = sublevel_momentum_bound(&ctx.h, s.alpha + 1.0);
    let band = s.mane_pts.iter().map(|x| (ctx.h.at(x) - s.alpha).abs()).fold(0.0, f64::max);
    let kinks = lagsel::weakkam::smooth_mask(cfg.dim, n, &s.u, 20.0 * (1.0 + bound) / n as f64);
    let exclude: Vec<bool> = kinks.iter().map(|&smooth| !smooth).collect();
    let sub = subsolution_check(cfg.dim, n, &s.u, &ctx.h, s.alpha, cfg.tolerances.sub_tol, Some(&exclude));
    out.checks.extend([
        at_most("weakkam.alpha_spread", s.alpha_spread, 1e-3),
        at_most("weakkam.lipschitz", lip, bound),
        at_most("weakkam.subsolution", sub.max_excess, sub.tol),
        holds("weakkam.aubry_in_mane", s.aubry_pts.iter().all(|x| s.mane_pts.contains(x))),
        at_most("weakkam.mane_energy", band, cfg.tolerances.num_tol),
    ]);
    out.results = json!({
        "alpha": s.alpha,
        "residual": s.residual,
        "iterations": s.iterations,
        "alpha_spread": s.alpha_spread,
        "subsolutions": s.subsolutions,
        "single_subsolution": s.single_subsolution,
        "aubry_points": s.aubry_pts.len(),
        "aubry_components": s.aubry_components,
        "mane_points": s.mane_pts.len(),
        "horizon": s.horizon,
        "converged": s.converged,
    });
    Ok(out)
}

pub fn invariant(cfg: &RunConfig) -> Result<Outcome> {
    let ctx = context(cfg)?;
    let mut out = Outcome::default();
    let l = ctx.lagrangian()?;
    let a = ctx.level()?;
    let est = maximal_invariant_set(&SampleSet::from_lagrangian(&l), &ctx.h, a, &ctx.trim(100.0))?;
    {
        let mut w = ctx.create("invariant.txt", &mut out)?;
        est.write_table(&mut w)?;
    }
    let half = est.survivors_at(0.5 * est.horizon);
    let band = est.samples.iter().map(|x| (ctx.h.at(x) - a).abs()).fold(0.0, f64::max);
    out.checks.extend([
        holds("invariant.converged", est.converged),
        at_most("invariant.energy_band", band, est.e_tol),
        holds("invariant.monotone_in_horizon", est.samples.iter().all(|x| half.contains(x))),
    ]);
    out.results = json!({
        "level": a,
        "seeds": est.seeds.len(),
        "survivors": est.samples.len(),
        "horizon": est.horizon,
        "tube_radius": est.tube_radius,
        "e_tol": est.e_tol,
    });
    Ok(out)
}

pub fn verify(cfg: &RunConfig, suite: &str) -> Result<Outcome> {
    let ctx = context(cfg)?;
    let mut out = Outcome::default();
    match suite {
        "selector" => selector_checks(&ctx, &mut out)?,
        "1.3" => {
            let c = ctx.critical()?;
            let n = if cfg.dim == 1 { cfg.grids.velocity } else { cfg.grids.base.min(128) };
            let inf = critical_value_infmax(&ctx.h, &GraphFamily::standard(cfg.dim), n, cfg.restarts, cfg.seed);
            out.checks.push(at_most("critical.infmax_below", c.alpha - inf.alpha_hat, 1e-3));
            out.checks.push(at_most("critical.infmax_above", inf.alpha_hat - c.alpha, 1e-2));
            let mut max_v = None;
            if ctx.h.is_mechanical() {
                let m = if cfg.dim == 1 { 1 << 14 } else { 256 };
                let len = if cfg.dim == 1 { m } else { m * m };
                let v = (0..len)
                    .map(|k| ctx.h.potential(&[(k % m) as f64 / m as f64, (k / m) as f64 / m as f64]))
                    .fold(f64::NEG_INFINITY, f64::max);
                out.checks.push(at_most("critical.max_potential", (c.alpha - v).abs(), 1e-3));
                max_v = Some(v);
            }
            out.results = json!({
                "alpha": c.alpha,
                "residual": c.residual,
                "iterations": c.iterations,
                "alpha_infmax": inf.alpha_hat,
                "infmax_coefficients": inf.coefficients,
                "max_potential": max_v,
            });
        }
        "1.5" => {
            let l = ctx.lagrangian()?;
            let horizon = cfg.tolerances.horizon.unwrap_or(2.0);
            let r = verify_theorem_1_5(&l, &ctx.h, horizon, cfg.bins)?;
            out.checks.push(holds("theorem_1_5.invariant_implies_graph_on_level", r.pass));
            out.results = serde_json::to_value(&r).expect("report serializes");
        }
        "6.3" => {
            let l = ctx.lagrangian()?;
            let a = ctx.level()?;
            let opts = Theorem63Options {
                n: cfg.grids.base,
                trim: ctx.trim(100.0),
                smooth_time: cfg.tolerances.smooth_time,
                sub_tol: cfg.tolerances.sub_tol,
            };
            let r = verify_theorem_6_3(&l, &ctx.h, a, &opts)?;
            {
                let mut w = ctx.create("invariant_gamma.txt", &mut out)?;
                r.gamma_set.write_table(&mut w)?;
                let mut w = ctx.create("invariant_l.txt", &mut out)?;
                r.l_set.write_table(&mut w)?;
            }
            out.checks.extend([
                at_most("theorem_6_3.subsolution", r.subsolution.max_excess, r.subsolution.tol),
                holds("theorem_6_3.gamma_converged", r.gamma_set.converged),
                holds("theorem_6_3.l_converged", r.l_set.converged),
                at_most("theorem_6_3.hausdorff", r.hausdorff, 2.0 * r.grid_step),
            ]);
            out.results = json!({
                "level": a,
                "grid_step": r.grid_step,
                "hausdorff": r.hausdorff,
                "gamma_survivors": r.gamma_set.samples.len(),
                "l_survivors": r.l_set.samples.len(),
            });
        }
        other => return Err(RunError::Suite(other.to_string())),
    }
    Ok(out)
}

/// Re-parses every artifact in the output directory, then compares the
/// lattice persistence value with the exhaustive sublevel-connectivity
/// oracle on seeded fibers.
pub fn oracle(cfg: &RunConfig) -> Result<Outcome> {
    let ctx = context(cfg)?;
    let mut out = Outcome::default();
    let mut names: Vec<String> = std::fs::read_dir(&cfg.out)
        .map_err(io(&cfg.out.display().to_string()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut parsed = Vec::new();
    for name in &names {
        let ok = reparse(&cfg.out.join(name));
        out.checks.push(holds(&format!("roundtrip.{name}"), ok));
        parsed.push(json!({ "file": name, "ok": ok }));
    }

    let mut rows = Vec::new();
    let lattice = cfg.lagrangian.kind != Kind::File && ctx.flow_hamiltonian()?.is_mechanical();
    if lattice {
        let hf = ctx.flow_hamiltonian()?;
        let v = ctx.generator()?;
        let time = if cfg.lagrangian.time > 0.0 { cfg.lagrangian.time } else { 1.0 };
        let steps = (3 / cfg.dim).max(1);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
        for _ in 0..cfg.fibers {
            let q = [rand::Rng::gen::<f64>(&mut rng), if cfg.dim == 2 { rand::Rng::gen::<f64>(&mut rng) } else { 0.0 }];
            let da = build_discrete_action(&hf, &v, time, steps, q)?;
            let m = if da.nvars() == 3 { cfg.grids.xi / 2 + 1 } else { cfg.grids.xi + 1 };
            let (lat, vals, diag) = da.persistence(m);
            let brute = essential_value_bfs(&lat, &vals);
            rows.push((q, diag.essential_birth, brute));
        }
        let mut w = ctx.create("oracle.txt", &mut out)?;
        if cfg.dim == 1 {
            writeln!(w, "# q persistence_value oracle_value equal").map_err(io("oracle.txt"))?;
        } else {
            writeln!(w, "# q1 q2 persistence_value oracle_value equal").map_err(io("oracle.txt"))?;
        }
        for (q, a, b) in &rows {
            let qs = if cfg.dim == 1 { format!("{:.17e}", q[0]) } else { format!("{:.17e} {:.17e}", q[0], q[1]) };
            writeln!(w, "{qs} {a:.17e} {b:.17e} {}", (a == b) as u8).map_err(io("oracle.txt"))?;
        }
        let mismatches = rows.iter().filter(|(_, a, b)| a != b).count();
        out.checks.push(at_most("oracle.minimax_mismatches", mismatches as f64, 0.0));
    }
    out.results = json!({
        "artifacts": parsed,
        "minimax_fibers": rows.len(),
        "minimax_skipped": !lattice,
    });
    Ok(out)
}

/// Structural re-read of one artifact: Lagrangian files through the
/// Lagrangian reader, tables by column count and numeric fields, JSON by
/// the JSON parser.
fn reparse(path: &Path) -> bool {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let Ok(f) = File::open(path) else { return false };
    let r = BufReader::new(f);
    if name == "lagrangian.txt" {
        return read_lagrangian(r).is_ok();
    }
    if name.ends_with(".jsonl") {
        return r.lines().all(|l| l.is_ok_and(|l| serde_json::from_str::<Value>(&l).is_ok()));
    }
    if name.ends_with(".json") {
        return serde_json::from_reader::<_, Value>(r).is_ok();
    }
    let mut cols: Option<Vec<String>> = None;
    for line in r.lines() {
        let Ok(line) = line else { return false };
        if let Some(h) = line.strip_prefix('#') {
            if cols.is_none() {
                cols = Some(h.split_whitespace().map(str::to_string).collect());
            }
            continue;
        }
        let Some(c) = &cols else { return false };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != c.len() {
            return false;
        }
        let numeric = toks.iter().zip(c).all(|(t, name)| name == "provenance" || t.parse::<f64>().is_ok());
        if !numeric {
            return false;
        }
    }
    cols.is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_reparse_checks_columns() {
        let dir = std::env::temp_dir().join(format!("lagsel-reparse-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let good = dir.join("good.txt");
        std::fs::write(&good, "# q f provenance lip_local\n0.0 1.0 sheet:0:0 2.0\n").unwrap();
        assert!(reparse(&good));
        let bad = dir.join("bad.txt");
        std::fs::write(&bad, "# q f\n0.0 x\n").unwrap();
        assert!(!reparse(&bad));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

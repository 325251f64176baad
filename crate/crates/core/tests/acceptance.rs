//! Acceptance run: one pass/fail line per criterion.

use std::f64::consts::TAU;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lagsel::dynamics::{
    base_hausdorff, energy_level_check, graph_test, hausdorff, maximal_invariant_set, verify_theorem_1_5,
    verify_theorem_6_3, SampleSet, Theorem63Options, TrimOptions,
};
use lagsel::fourier::{PeriodicFunction, SymbolicFn, TrigSeries};
use lagsel::lagrangian::{line_integral_check, mollify_sequence, ExactLagrangian, FlowOptions, LipschitzCurve, MollifyOptions};
use lagsel::persistence::essential_value_bfs;
use lagsel::selector::build_discrete_action;
use lagsel::selector::generalized_selector;
use lagsel::selector::{graph_selector, verify_selector, C_TOL, LIP_MARGIN, SNAP_TOL};
use lagsel::weakkam::{critical_value, critical_value_infmax, weak_kam, CriticalOptions, GraphFamily, WeakKamOptions};
use lagsel::{CotangentPoint, HamiltonianSpec};

const SEED: u64 = 20240611;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn signed(x: f64) -> String {
    if x < 0.0 {
        format!(" - {}", -x)
    } else {
        format!(" + {x}")
    }
}

/// `V = Σ a·cos + b·sin` over modes 1..=2 with `Σ |a| + |b| ≤ 1`.
fn random_potential(rng: &mut ChaCha8Rng) -> (String, Vec<(i32, f64, f64)>) {
    let modes = rng.gen_range(1..=2);
    let mut terms: Vec<(i32, f64, f64)> = (1..=modes).map(|k| (k, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let total: f64 = terms.iter().map(|t| t.1.abs() + t.2.abs()).sum();
    let scale = rng.gen_range(0.3..1.0) / total;
    for t in &mut terms {
        t.1 *= scale;
        t.2 *= scale;
    }
    let mut src = "p^2/2".to_string();
    for &(k, a, b) in &terms {
        src += &format!("{}*cos(2*pi*{k}*q){}*sin(2*pi*{k}*q)", signed(a), signed(b));
    }
    (src, terms)
}

fn random_generator(rng: &mut ChaCha8Rng, amplitude: f64) -> PeriodicFunction {
    let modes = rng.gen_range(1..=3);
    let terms: Vec<(i32, f64, f64)> = (1..=modes)
        .map(|k| {
            let a = amplitude / k as f64;
            (k, rng.gen_range(-a..a), rng.gen_range(-a..a))
        })
        .collect();
    PeriodicFunction::Trig(TrigSeries::from_modes_1d(0.0, &terms))
}

fn pendulum() -> HamiltonianSpec {
    HamiltonianSpec::parse("p^2/2 + cos(2*pi*q)", 1).unwrap()
}

fn whorl() -> ExactLagrangian {
    ExactLagrangian::from_flow(PeriodicFunction::zero(1), &pendulum(), 3.0, 3000, &FlowOptions::default()).unwrap()
}

fn zero_section(n: usize) -> ExactLagrangian {
    ExactLagrangian::from_function(PeriodicFunction::zero(1), n).unwrap()
}

fn selector_validity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let times = [0.0, 0.5, 1.5, 3.0];
    let mut failures = Vec::new();
    let (mut worst_dist, mut worst_value, mut worst_tight, mut worst_lip) = (0.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY);
    for case in 0..10 {
        let (src, _) = random_potential(&mut rng);
        let h = HamiltonianSpec::parse(&src, 1).unwrap();
        let v = random_generator(&mut rng, 0.1);
        let time = times[case % times.len()];
        let steps = ((time * 1000.0) as usize).max(1);
        let l = match ExactLagrangian::from_flow(v, &h, time, steps, &FlowOptions::default()) {
            Ok(l) => l,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let rep = graph_selector(&l, 512).and_then(|f| Ok((f.tightness(), verify_selector(&f, &l)?)));
        match rep {
            Ok((tight, r)) => {
                worst_dist = worst_dist.max(r.max_distance);
                worst_value = worst_value.max(r.max_value_residual);
                worst_tight = worst_tight.max(tight);
                worst_lip = worst_lip.max(r.lipschitz_const - r.lipschitz_bound + LIP_MARGIN);
                let ok = r.lipschitz_const <= r.lipschitz_bound
                    && tight <= SNAP_TOL
                    && r.max_distance <= C_TOL
                    && r.max_value_residual <= C_TOL;
                if !ok {
                    failures.push(format!("case {case} (T = {time}, {src})"));
                }
            }
            Err(e) => failures.push(format!("case {case}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && secs <= 600.0,
        format!(
            "10 cases, max dist {worst_dist:.2e}, max |f - h(q,df)| {worst_value:.2e}, spectrum gap {worst_tight:.2e}, \
             Lip - max|p| {worst_lip:.2e}, {secs:.0} s{}",
            if failures.is_empty() { String::new() } else { format!(", failed: {failures:?}") }
        ),
    )
}

fn minimax_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut fibers = 0;
    let mut mismatches = 0;
    let mut max_points = 0;
    for case in 0..20 {
        let (h, v, steps, m, dim) = if case % 2 == 0 {
            let (src, _) = random_potential(&mut rng);
            (HamiltonianSpec::parse(&src, 1).unwrap(), random_generator(&mut rng, 0.1), 3, 40, 1)
        } else {
            let a: f64 = rng.gen_range(-0.5..0.5);
            let b: f64 = rng.gen_range(-0.5..0.5);
            let src = format!("p1^2/2 + p2^2/2{}*cos(2*pi*q1){}*cos(2*pi*(q1 + q2))", signed(a), signed(b));
            let c: f64 = rng.gen_range(-0.1..0.1);
            let v = SymbolicFn::parse(&format!("{c}*sin(2*pi*q1)*cos(2*pi*q2)"), 2).unwrap();
            (HamiltonianSpec::parse(&src, 2).unwrap(), PeriodicFunction::Symbolic(v), 1, 64, 2)
        };
        let time = rng.gen_range(0.3..1.5);
        for _ in 0..10 {
            let q = [rng.gen::<f64>(), if dim == 2 { rng.gen::<f64>() } else { 0.0 }];
            let da = build_discrete_action(&h, &v, time, steps, q).unwrap();
            let (lat, vals, diag) = da.persistence(m);
            max_points = max_points.max(lat.len());
            if diag.essential_birth != essential_value_bfs(&lat, &vals) {
                mismatches += 1;
            }
            fibers += 1;
        }
    }
    outcome(
        fibers >= 200 && mismatches == 0 && max_points <= 64 * 64 * 64,
        format!("{fibers} fibers, {mismatches} mismatches, largest lattice {max_points} points"),
    )
}

fn action_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut samples = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (src, _) = random_potential(&mut rng);
        let h = HamiltonianSpec::parse(&src, 1).unwrap();
        let v = random_generator(&mut rng, 0.15);
        let time = rng.gen_range(0.2..3.0);
        let steps = rng.gen_range(1..=8);
        for _ in 0..10 {
            let q = [rng.gen::<f64>(), 0.0];
            let da = build_discrete_action(&h, &v, time, steps, q).unwrap();
            let xi: Vec<f64> = (0..da.nvars()).map(|_| q[0] + rng.gen_range(-0.5..0.5)).collect();
            let g = da.gradient(&xi);
            let e = 1e-5;
            for j in 0..xi.len() {
                let mut a = xi.clone();
                let mut b = xi.clone();
                a[j] += e;
                b[j] -= e;
                let fd = (da.value(&a) - da.value(&b)) / (2.0 * e);
                worst = worst.max((fd - g[j]).abs() / g[j].abs().max(1.0));
            }
            samples += 1;
        }
    }
    outcome(worst <= 1e-6, format!("{samples} samples, max relative error {worst:.2e}"))
}

fn critical_values() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut cases = vec![("p^2/2 + cos(2*pi*q)".to_string(), vec![(1, 1.0, 0.0)])];
    while cases.len() < 5 {
        cases.push(random_potential(&mut rng));
    }
    let mut ok = true;
    let mut worst_lo = 0.0f64;
    let mut worst_infmax = (f64::INFINITY, f64::NEG_INFINITY);
    for (src, terms) in &cases {
        let h = HamiltonianSpec::parse(src, 1).unwrap();
        let max_v = (0..200_000)
            .map(|k| {
                let q = k as f64 / 200_000.0;
                terms.iter().map(|&(m, a, b)| a * (TAU * m as f64 * q).cos() + b * (TAU * m as f64 * q).sin()).sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let c = critical_value(&h, &CriticalOptions { n: 1024, ..Default::default() }).unwrap();
        let im = critical_value_infmax(&h, &GraphFamily::standard(1), 1024, 2, SEED);
        worst_lo = worst_lo.max((c.alpha - max_v).abs());
        worst_infmax = (worst_infmax.0.min(im.alpha_hat - c.alpha), worst_infmax.1.max(im.alpha_hat - c.alpha));
        ok &= (c.alpha - max_v).abs() <= 1e-3 && im.alpha_hat >= c.alpha - 1e-3 && im.alpha_hat <= c.alpha + 1e-2;
    }
    outcome(
        ok,
        format!(
            "5 Hamiltonians, max |alpha - max V| {worst_lo:.2e}, infmax - alpha in [{:.2e}, {:.2e}]",
            worst_infmax.0, worst_infmax.1
        ),
    )
}

fn aubry_mane() -> Outcome {
    let band = 1e-3;
    let runs = [
        ("p^2/2 + cos(2*pi*q)", 1024),
        ("p^2/2 + cos(4*pi*q)", 1024),
        ("p^2/2", 256),
        ("p^2/2 + 0.5*cos(2*pi*q) + 0.3*sin(4*pi*q)", 1024),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, (src, n)) in runs.iter().enumerate() {
        let h = HamiltonianSpec::parse(src, 1).unwrap();
        let opts = WeakKamOptions { critical: CriticalOptions { n: *n, ..Default::default() }, ..Default::default() };
        let s = weak_kam(&h, &opts).unwrap();
        let nested = s.aubry_pts.iter().all(|x| s.mane_pts.contains(x))
            && s.mane_pts.iter().all(|x| (h.at(x) - s.alpha).abs() <= band)
            && !s.aubry_pts.is_empty();
        ok &= nested;
        match i {
            0 => {
                let d = base_hausdorff(&s.aubry_pts, &[CotangentPoint::new_1d(0.0, 0.0)]);
                ok &= d <= 2.0 / *n as f64;
                notes.push(format!("pendulum Aubry within {d:.1e} of the equilibrium"));
            }
            1 => {
                ok &= s.aubry_components == 2;
                notes.push(format!("double well {} Aubry points ({} samples)", s.aubry_components, s.aubry_pts.len()));
            }
            _ => {}
        }
    }
    notes.push(format!("Aubry in Mane in band on {} runs", runs.len()));
    outcome(ok, notes.join(", "))
}

fn invariant_pipeline() -> Outcome {
    let l = whorl();
    let r = verify_theorem_6_3(&l, &pendulum(), 1.0, &Theorem63Options::default()).unwrap();
    let stabilized = r.gamma_set.converged && r.l_set.converged && r.l_set.horizon == 100.0;
    outcome(
        r.pass && stabilized && r.hausdorff <= 2.0 * r.grid_step,
        format!(
            "Hausdorff {:.2e} (2 steps = {:.2e}), {} / {} survivors, stable under horizon doubling: {stabilized}",
            r.hausdorff,
            2.0 * r.grid_step,
            r.gamma_set.samples.len(),
            r.l_set.samples.len()
        ),
    )
}

fn invariance_implies_graph() -> Outcome {
    let free = HamiltonianSpec::parse("p^2/2", 1).unwrap();
    let w_src = "0.05*sin(2*pi*q) + 0.02*cos(4*pi*q)";
    let w = lagsel::expr::parse(w_src, 1).unwrap();
    let w_fn = PeriodicFunction::Symbolic(SymbolicFn::parse(w_src, 1).unwrap());
    let free2 = HamiltonianSpec::parse("p1^2/2 + p2^2/2", 2).unwrap();
    let zero2 = ExactLagrangian::from_function(PeriodicFunction::zero(2), 64).unwrap();
    let sine = PeriodicFunction::Trig(TrigSeries::from_modes_1d(0.0, &[(1, 0.1, 0.0)]));
    let cases: Vec<(&str, ExactLagrangian, HamiltonianSpec)> = vec![
        ("zero section, free", zero_section(512), free.clone()),
        ("graph of dw, shifted free", ExactLagrangian::from_function(w_fn, 512).unwrap(), free.momentum_shifted(&w)),
        ("zero section 2-d, free", zero2, free2),
        ("graph of sine, free", ExactLagrangian::from_function(sine, 512).unwrap(), free.clone()),
        ("zero section, pendulum", zero_section(512), pendulum()),
        ("whorl, pendulum", whorl(), pendulum()),
    ];
    let mut ok = true;
    let mut invariant = 0;
    let mut whorl_flagged = false;
    for (name, l, h) in &cases {
        let r = verify_theorem_1_5(l, h, 2.0, 64).unwrap();
        if r.invariant {
            invariant += 1;
            let set = SampleSet::from_lagrangian(l);
            ok &= energy_level_check(&set, h, 10.0 * r.inv_tol).e.is_some() && graph_test(&set, 64).is_graph;
        }
        ok &= r.pass;
        if *name == "whorl, pendulum" {
            whorl_flagged = !r.invariant;
        }
    }
    ok &= whorl_flagged && invariant == 3;
    outcome(
        ok,
        format!("{} inputs, {invariant} invariant and all graphs on a level, whorl non-invariant: {whorl_flagged}", cases.len()),
    )
}

fn lipschitz_machinery() -> Outcome {
    let a = 0.3;
    let tent = LipschitzCurve::from_points(&[(0.0, -a), (0.0, a), (0.25, a), (0.5, a), (0.5, -a), (0.75, -a)]).unwrap();
    let whorl_target = LipschitzCurve::from_lagrangian(&whorl()).unwrap();
    let runs = [
        ("tent", mollify_sequence(&tent, 6, &MollifyOptions::default()).unwrap()),
        ("whorl", mollify_sequence(&whorl_target, 4, &MollifyOptions { resolution: 1 << 14, first_exponent: 8 }).unwrap()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let mut ok = true;
    let mut worst_line = 0.0f64;
    let mut worst_hull = 0.0f64;
    let mut worst_gap = 0.0f64;
    let mut levels = 0;
    for (_, seq) in &runs {
        ok &= seq.equilip_const.is_finite() && seq.lipschitz.iter().all(|&c| c <= seq.equilip_const);
        for l in &seq.entries {
            levels += 1;
            for _ in 0..100 {
                let vertices = rng.gen_range(2..=5);
                let path: Vec<[f64; 2]> = (0..vertices).map(|_| [rng.gen_range(0.0..2.0), 0.0]).collect();
                worst_line = worst_line.max(line_integral_check(l, &path).unwrap());
            }
        }
        let g = generalized_selector(seq, 512).unwrap();
        worst_hull = worst_hull.max(g.report.max_hull_distance);
        worst_gap = worst_gap.max(g.report.max_extremal_gap);
        ok &= g.report.pass && g.report.differentiable_points > 0;
    }
    ok &= worst_line <= 1e-6 && worst_hull <= 1e-3 && worst_gap <= 1e-3;
    outcome(
        ok,
        format!(
            "2 sequences ({levels} levels), equi-Lipschitz certified, line integral residual {worst_line:.2e}, \
             hull distance {worst_hull:.2e}, extremal gap {worst_gap:.2e}"
        ),
    )
}

/// Samples at arc spacing at most `1/(2n)`, as in the invariant-set pipeline.
fn uniform_samples(l: &ExactLagrangian, n: usize) -> SampleSet {
    let arc = l.curve().unwrap().arc_length();
    let m = 2 * n * (arc - 1e-9).ceil().max(1.0) as usize;
    SampleSet::from_lagrangian(&l.resampled_uniform_speed(m).unwrap())
}

fn equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);
    let cases = [
        ("pendulum zero section", zero_section(512), pendulum()),
        ("double well zero section", zero_section(512), HamiltonianSpec::parse("p^2/2 + cos(4*pi*q)", 1).unwrap()),
        ("whorl", whorl(), pendulum()),
    ];
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut per_case = Vec::new();
    for (name, l, h) in &cases {
        let (b1, b2): (f64, f64) = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
        let w_src = format!("{b1}*sin(2*pi*q){}*cos(4*pi*q)", signed(b2));
        let w = lagsel::expr::parse(&w_src, 1).unwrap();
        let dw = |q: &[f64; 2]| [b1 * TAU * (TAU * q[0]).cos() - b2 * 2.0 * TAU * (2.0 * TAU * q[0]).sin(), 0.0];
        let set = uniform_samples(l, 512);
        let trim = TrimOptions::default();
        let before = maximal_invariant_set(&set, h, 1.0, &trim).unwrap();
        let after = maximal_invariant_set(&set.momentum_shifted(dw), &h.momentum_shifted(&w), 1.0, &trim).unwrap();
        let moved: Vec<CotangentPoint> = before
            .samples
            .iter()
            .map(|x| {
                let g = dw(&x.q);
                CotangentPoint::new(1, x.q, [x.p[0] + g[0], 0.0])
            })
            .collect();
        let d = hausdorff(&moved, &after.samples);
        per_case.push(format!("{name} {d:.1e} ({} / {})", before.samples.len(), after.samples.len()));
        worst = worst.max(d);
        ok &= !before.samples.is_empty() && d <= 2.0 / 512.0;
    }
    outcome(ok, format!("max Hausdorff {worst:.2e} (2 steps = {:.2e}): {}", 2.0 / 512.0, per_case.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("selector validity", selector_validity),
        ("minimax oracle equivalence", minimax_oracle),
        ("action gradient", action_gradient),
        ("critical value consistency", critical_values),
        ("Aubry and Mane structure", aubry_mane),
        ("invariant set pipeline", invariant_pipeline),
        ("invariance implies graph on a level", invariance_implies_graph),
        ("Lipschitz-exact machinery", lipschitz_machinery),
        ("momentum-shift equivariance", equivariance),
    ];
    let mut failed = 0;
    let mut ran = 0;
    // ACCEPTANCE_ONLY=k runs criterion k alone
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        ran += 1;
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} [{name}] {} ({:.1} s)",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria pass", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

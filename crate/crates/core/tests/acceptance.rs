//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr and
//! then asserts its criterion at the stated tolerance.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use iree_core::analysis::{check_bounds, optimality_gap_bound, required_power};
use iree_core::config::ScenarioConfig;
use iree_core::dinkelbach::{capacity_scale, solve_objective, DinkelbachConfig, SolveOutcome, MONOTONE_SLACK};
use iree_core::gradients::{LossProblem, Objective, ParamVector};
use iree_core::harness::{self, region_label, RegionLabel, RunConfig, SweepAxis};
use iree_core::metrics::{given_iree_utility, js_divergence, network_utility, Scenario};
use iree_core::propagation::{dbw_to_w, BaseStation, NetworkDesign, Point2D};
use iree_core::traffic::{Rect, SampleGrid, ScalarField};
use iree_core::trainer::{classify_relation, trace_pairs, RelationClass, StageSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn verdict(criterion: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "{status} {criterion}: {detail}");
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Preset {
    Rural,
    Urban,
}

fn preset(p: Preset) -> ScenarioConfig {
    match p {
        Preset::Rural => ScenarioConfig::rural(),
        Preset::Urban => ScenarioConfig::urban(),
    }
}

fn scenario(p: Preset, p_max_dbw: f64, seed: u64) -> Scenario {
    preset(p).build(seed).unwrap().with_p_max(dbw_to_w(p_max_dbw))
}

type RunKey = (Preset, u64, u64, Objective);

/// Desk-scale solves shared between criteria; each key is solved once.
fn solved(p: Preset, p_max_dbw: f64, seed: u64, objective: Objective) -> Arc<SolveOutcome> {
    static CACHE: OnceLock<Mutex<HashMap<RunKey, Arc<OnceLock<Arc<SolveOutcome>>>>>> = OnceLock::new();
    let cell = {
        let mut map = CACHE.get_or_init(Default::default).lock().unwrap();
        map.entry((p, p_max_dbw.to_bits(), seed, objective)).or_default().clone()
    };
    cell.get_or_init(|| {
        let s = scenario(p, p_max_dbw, seed);
        let config = preset(p).solver.dinkelbach();
        Arc::new(solve_objective(&s, objective, &config, seed).unwrap())
    })
    .clone()
}

// Criterion 1 ---------------------------------------------------------------

fn scales(s: &Scenario, n_bs: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(4 * n_bs);
    for _ in 0..n_bs {
        v.push(s.grid.bounds.width());
        v.push(s.grid.bounds.height());
    }
    v.extend(std::iter::repeat(s.b_max / n_bs as f64).take(n_bs));
    v.extend(std::iter::repeat(s.p_max / n_bs as f64).take(n_bs));
    v
}

fn central_difference(problem: &LossProblem<'_>, params: &ParamVector, scale: &[f64], step: f64) -> Vec<f64> {
    (0..params.values.len())
        .map(|i| {
            let u = params.values[i] / scale[i];
            let h = step * (1.0 + u.abs());
            let at = |v: f64| {
                let mut p = params.clone();
                p.values[i] = v * scale[i];
                problem.loss(&p).unwrap().total
            };
            (at(u + h) - at(u - h)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn criterion_01_gradient_matches_finite_differences() {
    let mut cfg = ScenarioConfig::rural();
    cfg.area.samples_per_side = 7;
    cfg.network.n_bs = 5;
    let s = cfg.build(11).unwrap();
    let n = s.n_bs;
    let scale = scales(&s, n);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut tried, mut worst) = (0, 0, 0.0f64);
    while checked < 24 && tried < 500 {
        tried += 1;
        let mut values = Vec::with_capacity(4 * n);
        for _ in 0..n {
            values.push(rng.gen_range(0.0..s.grid.bounds.width()));
            values.push(rng.gen_range(0.0..s.grid.bounds.height()));
        }
        let b_total = s.b_max * rng.gen_range(0.5..1.5);
        let p_total = s.p_max * rng.gen_range(0.01..1.5);
        let wb: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let wp: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let (sb, sp): (f64, f64) = (wb.iter().sum(), wp.iter().sum());
        values.extend(wb.iter().map(|w| b_total * w / sb));
        values.extend(wp.iter().map(|w| p_total * w / sp));
        let params = ParamVector {
            values,
            layout: iree_core::gradients::Layout { n_bs: n },
        };
        let design = params.to_design(&s);
        let objective = Objective::ALL[tried % 3];
        let r = iree_core::metrics::evaluate(&design, &s, iree_core::propagation::CapacityModel::LowerBound).unwrap();
        let eta = rng.gen_range(0.0..2.0) * if objective == Objective::Ee { r.ee } else { r.iree };
        let omega = if rng.gen_bool(0.5) { 0.0 } else { 100.0 };
        let cap_scale = capacity_scale(objective, &s, &design).unwrap();
        let problem = LossProblem::new(&s, objective, eta, omega, cap_scale).unwrap();
        let eval = problem.evaluate(&params, true).unwrap();
        if eval.detail.kink_gap < 1e-3 {
            continue;
        }
        let analytic = eval.grad.unwrap();
        let coarse = central_difference(&problem, &params, &scale, 2e-5);
        let fine = central_difference(&problem, &params, &scale, 1e-5);
        for i in 0..analytic.len() {
            let a = analytic[i] * scale[i];
            let f = (4.0 * fine[i] - coarse[i]) / 3.0;
            let err = (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
            worst = worst.max(err);
        }
        checked += 1;
    }
    let pass = checked >= 20 && worst <= 1e-5;
    verdict(
        "criterion 1 (gradient vs finite differences)",
        pass,
        &format!("{checked} configurations, worst relative error {worst:.3e} (tol 1e-5)"),
    );
    assert!(pass);
}

// Criterion 2 ---------------------------------------------------------------

fn line_grid(m: usize) -> Arc<SampleGrid> {
    Arc::new(SampleGrid {
        points: (0..m).map(|i| Point2D::new(i as f64 + 0.5, 0.5)).collect(),
        weight: 1.0,
        bounds: Rect {
            x_min: 0.0,
            y_min: 0.0,
            x_max: m as f64,
            y_max: 1.0,
        },
        per_side: m,
    })
}

/// `½ KL(p‖m) + ½ KL(q‖m)` in bits with `m = (p+q)/2`.
fn js_oracle(c: &[f64], d: &[f64]) -> f64 {
    let sc: f64 = c.iter().sum();
    let sd: f64 = d.iter().sum();
    let mut acc = 0.0;
    for (&x, &y) in c.iter().zip(d) {
        let (p, q) = (x / sc, y / sd);
        let m = 0.5 * (p + q);
        if p > 0.0 {
            acc += 0.5 * p * (p / m).log2();
        }
        if q > 0.0 {
            acc += 0.5 * q * (q / m).log2();
        }
    }
    acc
}

#[test]
fn criterion_02_js_divergence_contract() {
    let grid = line_grid(10);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut worst_oracle, mut worst_sym, mut worst_scaled, mut in_range) = (0.0f64, 0.0f64, 0.0f64, true);
    for _ in 0..100 {
        let mut draw = || -> Vec<f64> {
            (0..10)
                .map(|_| if rng.gen_bool(0.15) { 0.0 } else { rng.gen_range(0.0..1e3) })
                .collect()
        };
        let (mut a, b) = (draw(), draw());
        if a.iter().all(|&v| v == 0.0) {
            a[0] = 1.0;
        }
        let b = if b.iter().all(|&v| v == 0.0) { vec![1.0; 10] } else { b };
        let fa = ScalarField::new(grid.clone(), a.clone()).unwrap();
        let fb = ScalarField::new(grid.clone(), b.clone()).unwrap();
        let xi = js_divergence(&fa, &fb).unwrap();
        in_range &= (0.0..=1.0).contains(&xi);
        worst_sym = worst_sym.max((xi - js_divergence(&fb, &fa).unwrap()).abs());
        worst_oracle = worst_oracle.max((xi - js_oracle(&a, &b)).abs());
        let k = rng.gen_range(1e-3..1e3);
        let scaled = ScalarField::new(grid.clone(), a.iter().map(|v| v * k).collect()).unwrap();
        worst_scaled = worst_scaled.max(js_divergence(&fa, &scaled).unwrap());
    }
    let pass = in_range && worst_sym <= 1e-12 && worst_scaled <= 1e-12 && worst_oracle <= 1e-12;
    verdict(
        "criterion 2 (JS divergence contract)",
        pass,
        &format!(
            "100 pairs, range ok {in_range}, symmetry {worst_sym:.2e}, scaled copy {worst_scaled:.2e}, oracle {worst_oracle:.2e}"
        ),
    );
    assert!(pass);
}

// Criterion 3 ---------------------------------------------------------------

#[test]
fn criterion_03_dinkelbach_monotone_with_fixed_point_identity() {
    let mut pass = true;
    let mut details = Vec::new();
    for seed in SEEDS {
        let s = scenario(Preset::Rural, 30.0, seed);
        let out = solved(Preset::Rural, 30.0, seed, Objective::Iree);
        let mut eta = out.trace.eta_initial;
        let (mut drops, mut worst_identity) = (0, 0.0f64);
        for r in &out.trace.records {
            if r.eta_next < eta * (1.0 - MONOTONE_SLACK) {
                drops += 1;
            }
            eta = r.eta_next;
            let design = r.params.to_design(&s);
            let f = given_iree_utility(&design, &s, r.eta_next).unwrap();
            let scale = network_utility(r.report.c_tot, r.report.d_tot, r.report.xi);
            worst_identity = worst_identity.max(f.abs() / scale);
        }
        pass &= drops == 0 && worst_identity <= 1e-9;
        details.push(format!(
            "seed {seed}: {} iterations, {drops} drops, identity {worst_identity:.1e}",
            out.trace.records.len()
        ));
    }
    verdict("criterion 3 (monotone eta, fixed-point identity)", pass, &details.join("; "));
    assert!(pass);
}

// Criterion 4 ---------------------------------------------------------------

#[test]
fn criterion_04_iree_bounds_contain_converged_runs() {
    let mut pass = true;
    let mut details = Vec::new();
    for p in [Preset::Rural, Preset::Urban] {
        for seed in SEEDS {
            let s = scenario(p, 30.0, seed);
            let out = solved(p, 30.0, seed, Objective::Iree);
            let r = out.report;
            if !out.trace.converged || r.c_tot < r.d_tot {
                continue;
            }
            let b = check_bounds(r.iree, r.xi, r.c_tot, &s).unwrap();
            pass &= b.pass;
            details.push(format!(
                "{}{seed}: {:.3e} in [{:.3e}, {:.3e}] {}",
                if p == Preset::Rural { "rural" } else { "urban" },
                r.iree,
                b.bounds.lower,
                b.bounds.upper,
                if b.pass { "ok" } else { "OUTSIDE" }
            ));
        }
    }
    // Independent root solve of V·B_max·log2(1 + P/(σ² B_max L̄)) = D_Tot.
    let mut worst_rel = 0.0f64;
    for p in [Preset::Rural, Preset::Urban] {
        let s = scenario(p, 30.0, 1);
        let c = s.grid.bounds.center();
        let (g, a, b) = (s.loss_defaults.gamma, s.loss_defaults.alpha, s.loss_defaults.beta);
        let mean_l = s
            .grid
            .points
            .iter()
            .map(|q| g * ((q.x - c.x).powi(2) + (q.y - c.y).powi(2)).powf(a / 2.0) + b)
            .sum::<f64>()
            / s.grid.len() as f64;
        let cap = |pw: f64| s.grid.area() * s.b_max * (1.0 + pw / (s.noise_psd * s.b_max * mean_l)).log2() - s.d_tot();
        let (mut lo, mut hi) = (0.0, 1.0);
        while cap(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cap(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        worst_rel = worst_rel.max((required_power(&s).unwrap() / (0.5 * (lo + hi)) - 1.0).abs());
    }
    pass &= worst_rel <= 1e-3 && !details.is_empty();
    details.push(format!("required power vs bisection {worst_rel:.2e}"));
    verdict("criterion 4 (IREE bound containment)", pass, &details.join("; "));
    assert!(pass);
}

// Criterion 5 ---------------------------------------------------------------

#[test]
fn criterion_05_gap_bound_on_random_designs() {
    let s = scenario(Preset::Rural, 30.0, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    let (mut violations, mut worst_ratio) = (0, 0.0f64);
    for _ in 0..100 {
        let wb: Vec<f64> = (0..s.n_bs).map(|_| rng.gen_range(0.01..1.0)).collect();
        let wp: Vec<f64> = (0..s.n_bs).map(|_| rng.gen_range(0.01..1.0)).collect();
        let (sb, sp): (f64, f64) = (wb.iter().sum(), wp.iter().sum());
        let power = s.p_max * rng.gen_range(0.001..1.0);
        let stations = (0..s.n_bs)
            .map(|n| BaseStation {
                location: Point2D::new(
                    rng.gen_range(0.0..s.grid.bounds.width()),
                    rng.gen_range(0.0..s.grid.bounds.height()),
                ),
                bandwidth: s.b_max * wb[n] / sb,
                tx_power: power * wp[n] / sp,
                loss: s.loss_defaults,
            })
            .collect();
        let g = optimality_gap_bound(&NetworkDesign::new(stations).unwrap(), &s).unwrap();
        if !g.holds() {
            violations += 1;
        }
        worst_ratio = worst_ratio.max(g.measured / g.bound);
    }
    let pass = violations == 0;
    verdict(
        "criterion 5 (optimality gap bound)",
        pass,
        &format!("100 random designs, {violations} violations, worst measured/bound {worst_ratio:.3}"),
    );
    assert!(pass);
}

// Criterion 6 ---------------------------------------------------------------

#[test]
fn criterion_06_two_stage_converges_where_one_shot_does_not() {
    let seed = 1;
    let s = scenario(Preset::Rural, 30.0, seed);
    let mut base = ScenarioConfig::rural().solver.dinkelbach();
    base.options.diagnostic_every = Some(20);
    base.keep_epochs = true;
    let one_shot = DinkelbachConfig {
        schedule: StageSchedule::one_shot(base.schedule.omega_stage2),
        ..base.clone()
    };
    let run = |cfg: &DinkelbachConfig| {
        let out = solve_objective(&s, Objective::Iree, cfg, seed).unwrap();
        let pairs: Vec<(f64, f64)> = out.trace.records.iter().flat_map(|r| trace_pairs(&r.epochs)).collect();
        let report = classify_relation(&pairs).unwrap();
        let final_loss = out.trace.records.last().map_or(f64::INFINITY, |r| r.loss_k.total.abs());
        (out.trace.converged, final_loss, report)
    };
    let (two_conv, two_loss, two_rep) = run(&base);
    let (one_conv, one_loss, one_rep) = run(&one_shot);
    let pass = two_conv
        && two_loss <= base.epsilon
        && !(one_conv && one_loss <= base.epsilon)
        && one_rep.class == RelationClass::ExponentialLike
        && two_rep.class == RelationClass::PiecewiseLinear;
    verdict(
        "criterion 6 (two-stage vs one-shot)",
        pass,
        &format!(
            "two-stage: converged {two_conv}, |loss| {two_loss:.2e}, {:?} (R2 exp {:.3}, pw {:.3}); one-shot: converged {one_conv}, |loss| {one_loss:.2e}, {:?} (R2 exp {:.3}, pw {:.3})",
            two_rep.class, two_rep.r2_exponential, two_rep.r2_piecewise, one_rep.class, one_rep.r2_exponential, one_rep.r2_piecewise
        ),
    );
    assert!(pass);
}

// Criterion 7 ---------------------------------------------------------------

#[test]
fn criterion_07_iree_designs_beat_ee_designs_on_their_own_terms() {
    let mut failures = Vec::new();
    let mut points = 0;
    for p_dbw in [10.0, 20.0, 30.0] {
        for seed in SEEDS {
            let iree = solved(Preset::Rural, p_dbw, seed, Objective::Iree).report;
            let ee = solved(Preset::Rural, p_dbw, seed, Objective::Ee).report;
            points += 1;
            if !(iree.xi < ee.xi) {
                failures.push(format!("{p_dbw} dBW seed {seed}: xi {:.4} vs {:.4}", iree.xi, ee.xi));
            }
            if !(iree.iree > ee.iree) {
                failures.push(format!("{p_dbw} dBW seed {seed}: iree {:.4e} vs {:.4e}", iree.iree, ee.iree));
            }
            if !(ee.ee >= iree.ee) {
                failures.push(format!("{p_dbw} dBW seed {seed}: ee {:.4e} vs {:.4e}", ee.ee, iree.ee));
            }
        }
    }
    let pass = failures.is_empty();
    verdict(
        "criterion 7 (IREE vs EE baseline direction)",
        pass,
        &if pass {
            format!("{points} points, all orderings hold")
        } else {
            failures.join("; ")
        },
    );
    assert!(pass);
}

// Criterion 8 ---------------------------------------------------------------

#[test]
fn criterion_08_region_identities_along_power_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ScenarioConfig::rural(), dir.path());
    cfg.sweep = Some(SweepAxis::PMaxDbw((-4..=6).map(|k| 5.0 * k as f64).collect()));
    cfg.shadowing = None;
    let rows = harness::sweep_rows(&cfg).unwrap();
    let js: Vec<_> = rows.iter().filter(|r| r.region == RegionLabel::JsConstrained).collect();
    let identity = js.iter().all(|r| r.report.zeta == 1.0 - r.report.xi);
    let labels_ok = rows
        .iter()
        .all(|r| (r.region == RegionLabel::JsConstrained) == (r.report.c_tot >= r.report.d_tot));
    let (se_min, se_max) = js
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.report.se), b.max(r.report.se)));
    let se_spread = se_max / se_min - 1.0;
    let xi_decreasing = js.windows(2).all(|w| w[1].report.xi < w[0].report.xi);
    let pass = js.len() >= 2 && identity && labels_ok && se_spread <= 1e-3 && xi_decreasing;
    let listing: Vec<String> = rows
        .iter()
        .map(|r| format!("{}dBW {} se {:.4} xi {:.4}", r.value, r.region.name(), r.report.se, r.report.xi))
        .collect();
    verdict(
        "criterion 8 (region identities)",
        pass,
        &format!(
            "{} js points, zeta identity {identity}, labels {labels_ok}, SE spread {se_spread:.2e}, xi decreasing {xi_decreasing} [{}]",
            js.len(),
            listing.join(", ")
        ),
    );
    assert!(pass);
}

// Criterion 9 ---------------------------------------------------------------

#[test]
fn criterion_09_urban_below_rural() {
    let best = |p: Preset| {
        SEEDS
            .iter()
            .map(|&seed| solved(p, 30.0, seed, Objective::Iree).report)
            .max_by(|a, b| a.iree.total_cmp(&b.iree))
            .unwrap()
    };
    let (rural, urban) = (best(Preset::Rural), best(Preset::Urban));
    let pass = urban.iree < rural.iree && urban.se < rural.se;
    verdict(
        "criterion 9 (urban vs rural direction)",
        pass,
        &format!(
            "max IREE rural {:.4e} urban {:.4e} ({:+.1}%), SE rural {:.3} urban {:.3} ({:+.1}%)",
            rural.iree,
            urban.iree,
            100.0 * (urban.iree / rural.iree - 1.0),
            rural.se,
            urban.se,
            100.0 * (urban.se / rural.se - 1.0)
        ),
    );
    assert!(pass);
}

// Criterion 10 --------------------------------------------------------------

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_outputs_are_byte_identical() {
    let mut scenario_cfg = ScenarioConfig::rural();
    scenario_cfg.area.samples_per_side = 12;
    scenario_cfg.network.n_bs = 6;
    scenario_cfg.solver.n_epoch = 300;
    scenario_cfg.solver.max_iterations = 3;
    type Step = fn(&RunConfig) -> iree_core::Result<()>;
    let commands: [(&str, Step); 6] = [
        ("optimize", |c| harness::run_optimize(c).map(|_| ())),
        ("compare", |c| harness::run_compare(c).map(|_| ())),
        ("sweep", |c| harness::run_sweep(c).map(|_| ())),
        ("tradeoff", |c| harness::run_tradeoff(c).map(|_| ())),
        ("gen-traffic", |c| harness::run_gen_traffic(c).map(|_| ())),
        ("validate", |c| harness::run_validate(c).map(|_| ())),
    ];
    let mut mismatched = Vec::new();
    let mut files = 0;
    for (name, step) in commands {
        let trees: Vec<_> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let mut cfg = RunConfig::new(scenario_cfg.clone(), dir.path());
                cfg.seeds = vec![3, 4];
                if matches!(name, "compare" | "sweep" | "tradeoff") {
                    cfg.sweep = Some(SweepAxis::PMaxDbw(vec![10.0, 30.0]));
                }
                cfg.shadowing = Some(harness::ShadowingSpec { sigma_db: 4.0, draws: 3 });
                step(&cfg).unwrap();
                read_tree(dir.path())
            })
            .collect();
        files += trees[0].len();
        if trees[0].is_empty() || trees[0] != trees[1] {
            mismatched.push(name);
        }
    }
    let pass = mismatched.is_empty();
    verdict(
        "criterion 10 (determinism)",
        pass,
        &format!("6 subcommands, {files} files compared, mismatches {mismatched:?}"),
    );
    assert!(pass);
}

#[test]
fn region_labels_follow_capacity_versus_traffic() {
    for seed in SEEDS {
        let s = scenario(Preset::Rural, 30.0, seed);
        let out = solved(Preset::Rural, 30.0, seed, Objective::Iree);
        let label = region_label(&out.report, &out.design, &s);
        assert_eq!(label == RegionLabel::JsConstrained, out.report.c_tot >= out.report.d_tot);
    }
}

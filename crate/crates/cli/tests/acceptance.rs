//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Seeds are fixed per criterion (criterion k draws from seed k or from
//! `1000 k + i`). A FAIL line is a genuine miss and is printed, not hidden;
//! the process exits nonzero on a FAIL only when `ACCEPTANCE_STRICT` is
//! set, so that the workspace test run reports the outcome without
//! aborting. Panics and errors always fail the run.

#[allow(dead_code)]
#[path = "../../core/tests/common/checks.rs"]
mod checks;
#[allow(dead_code)]
#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use checks::{
    enumerate_patterns, frozen_except, grid_min, l1_objective_2d, random_spd2, tiny_grid, tiny_model_chain, truth_state,
};
use jumpcov::bench::{run_benchmark, BenchConfig, Estimator, GridCell};
use jumpcov::default_hyperparameters;
use jumpcov::gibbs::{residual_scatter, run_chain, GibbsConfig};
use jumpcov::kecm::calibrate::{calibrate_lambda_prior, CalibrationPriors};
use jumpcov::kecm::laplace::{l1_objective, run_kecm_laplace, solve_l1_jump};
use jumpcov::kecm::spikeslab::{coordinate_descent_jumps, run_kecm_spikeslab, spike_objective};
use jumpcov::kecm::{ascent_violations, KecmRunConfig};
use jumpcov::random::seeded_rng;
use jumpcov::simulate::{simulate, SimConfig};
use jumpcov::theory::verify_theory;
use nalgebra::DVector;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn smoother_oracle() -> Outcome {
    let start = Instant::now();
    let worst = (0..100).map(|i| oracle::smoother_discrepancy(1000 + i)).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-8 && secs < 10.0,
        format!("max abs deviation {worst:.2e} over 100 instances (limit 1e-8), {secs:.2} s (limit 10 s)"),
    )
}

fn ecm_ascent() -> Outcome {
    let cfg = SimConfig { n_assets: 5, n_times: 500, zeta: 0.999, slab_var: 1e-4, ..SimConfig::default() };
    let h = default_hyperparameters(5);
    let run = KecmRunConfig::default();
    let (mut steps, mut bad) = (0, Vec::new());
    for i in 0..10 {
        let sim = simulate(&cfg, 2000 + i).unwrap();
        for r in [run_kecm_laplace(&sim.panel, &h, &run).unwrap(), run_kecm_spikeslab(&sim.panel, &h, &run).unwrap()] {
            steps += r.trace.windows(2).filter(|w| w[1].smoothed).count();
            for v in ascent_violations(&r.trace, 1e-8) {
                bad.push(format!("{} panel {} iter {}", r.method, i + 1, r.trace[v + 1].iter));
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("{} decreases in {steps} smoothed steps over 10 panels x 2 drivers {bad:?}", bad.len()),
    )
}

fn jump_m_steps() -> Outcome {
    let mut rng = seeded_rng(3, 0);
    let mut grid_ok = 0;
    let mut worst_gap: f64 = f64::NEG_INFINITY;
    for _ in 0..50 {
        let g = random_spd2(&mut rng);
        let d = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let l = DVector::from_fn(2, |_, _| rng.random_range(0.0..1.5));
        let j = solve_l1_jump(&g, &d, &l, &DVector::zeros(2), 500).unwrap();
        let gap = l1_objective(&g, &d, &l, &j).unwrap() - grid_min(l1_objective_2d(&g, &d, &l), 2.5, 1e-2);
        worst_gap = worst_gap.max(gap);
        grid_ok += (gap <= 2e-4) as usize;
    }
    let mut rng = seeded_rng(3, 1);
    let (mut worse_than_warm, mut global) = (0, 0);
    for _ in 0..100 {
        let g = random_spd2(&mut rng);
        let zeta = rng.random_range(0.5..0.999);
        let s = DVector::from_fn(2, |_, _| rng.random_range(0.5..20.0));
        let d = DVector::from_fn(2, |_, _| rng.random_range(-6.0..6.0));
        let warm = DVector::from_fn(2, |_, _| if rng.random_bool(0.5) { rng.random_range(-3.0..3.0) } else { 0.0 });
        let warm_z: Vec<bool> = warm.iter().map(|v| *v != 0.0).collect();
        let start = spike_objective(&g, &d, zeta, &s, &warm_z, &warm).unwrap();
        let sol = coordinate_descent_jumps(&g, &d, zeta, &s, &[true, true], &warm, 1000).unwrap();
        let f = spike_objective(&g, &d, zeta, &s, &sol.indicator, &sol.jumps).unwrap();
        worse_than_warm += (f > start + 1e-12 * start.abs().max(1.0)) as usize;
        global += (f <= enumerate_patterns(&g, &d, zeta, &s) + 1e-9) as usize;
    }
    outcome(
        grid_ok == 50 && worse_than_warm == 0 && global >= 95,
        format!(
            "(a) {grid_ok}/50 within 2e-4 of grid search (worst gap {worst_gap:.1e}); \
             (b) {worse_than_warm} worse than warm start, {global}/100 at the enumerated optimum (need 95)"
        ),
    )
}

fn theory() -> Outcome {
    let rows = verify_theory(100, 10_000, 4).unwrap();
    let mut families: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &rows {
        let key = match r.quantity.as_str() {
            "fixed_point_residual" => "fixed point",
            "slab_decay_ratio" => "slab decay",
            _ => "erf bound",
        };
        let e = families.entry(key).or_default();
        e.0 += r.pass as usize;
        e.1 += 1;
    }
    let misses: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} #{}: {:.4} < {:.4}", r.quantity, r.instance, r.empirical, r.bound))
        .collect();
    let summary: Vec<String> = families.iter().map(|(k, (p, n))| format!("{k} {p}/{n}")).collect();
    outcome(misses.is_empty(), format!("{}; misses {misses:?}", summary.join(", ")))
}

fn gibbs() -> Outcome {
    let (panel, state, h) = truth_state(3, 50, 5);
    let scatter = residual_scatter(&state.x, &state.params.drift, &state.jumps);
    let want = (&h.wishart_scale + &scatter) / (h.wishart_dof + 49.0 - 3.0 - 1.0);
    let cfg = GibbsConfig {
        n_samples: 100_001,
        burn_in: 1,
        seed: 5,
        freeze: frozen_except(|f| f.gamma = false),
        ..GibbsConfig::default()
    };
    let chain = run_chain(&panel, &h, &cfg, state).unwrap();
    let k = chain.rows.len() as f64;
    let worst_z =
        (0..9).map(|i| (chain.sample_mean[i] - want[i]).abs() / (chain.sample_var[i] / k).sqrt()).fold(0.0, f64::max);
    let edges: Vec<f64> = (0..=40).map(|k| -2.0 + 0.25 * k as f64).collect();
    let (grid, _) = tiny_grid(&edges);
    let (freq, _) = tiny_model_chain(&edges, 1_000_000, 5);
    let tv = 0.5 * freq.iter().zip(&grid).map(|(f, g)| (f - g).abs()).sum::<f64>();
    outcome(
        worst_z < 4.0 && tv < 0.05,
        format!(
            "inverse-Wishart mean worst |z| {worst_z:.2} over {} draws (limit 4); tiny-model TV {tv:.4} (limit 0.05)",
            chain.rows.len()
        ),
    )
}

fn desk_bench(cell: GridCell, estimators: Vec<Estimator>, seed: u64) -> (jumpcov::bench::BenchReport, f64) {
    let cfg = BenchConfig {
        grid: vec![cell],
        reps: 10,
        estimators,
        sim: SimConfig { n_assets: 10, n_times: 900, ..SimConfig::default() },
        ..BenchConfig::default()
    };
    let start = Instant::now();
    let report = run_benchmark(&cfg, seed).unwrap();
    (report, start.elapsed().as_secs_f64())
}

fn headline() -> Outcome {
    let ests = vec![Estimator::Kem, Estimator::KecmLaplace, Estimator::KecmSpikeslab, Estimator::Refresh];
    let (report, secs) = desk_bench(GridCell { zeta: 0.999, slab_var: 1e-4 }, ests, 6);
    let med = |e| report.median_error(0, e).unwrap();
    let (kem, lap, ss, refresh) =
        (med(Estimator::Kem), med(Estimator::KecmLaplace), med(Estimator::KecmSpikeslab), med(Estimator::Refresh));
    let pass = ss <= 0.5 * kem && ss <= 0.5 * refresh && lap <= 1.5 * ss && secs < 900.0;
    outcome(
        pass,
        format!(
            "median errors spike-slab {ss:.3}, laplace {lap:.3}, kem {kem:.3}, refresh {refresh:.3}; \
             ss/kem {:.3}, ss/refresh {:.3} (limit 0.5), laplace/ss {:.3} (limit 1.5); {secs:.0} s",
            ss / kem,
            ss / refresh,
            lap / ss
        ),
    )
}

fn no_jump_sanity() -> Outcome {
    let ests = vec![Estimator::Kem, Estimator::KecmLaplace, Estimator::KecmSpikeslab];
    let (report, _) = desk_bench(GridCell { zeta: 1.0, slab_var: 1e-4 }, ests, 7);
    let kem = report.median_error(0, Estimator::Kem).unwrap();
    let ratios: Vec<(Estimator, f64)> = [Estimator::KecmLaplace, Estimator::KecmSpikeslab]
        .into_iter()
        .map(|e| (e, report.median_error(0, e).unwrap() / kem))
        .collect();
    // "within 1.3x" read both ways: no variant more than 1.3x worse or better
    let pass = ratios.iter().all(|(_, r)| *r <= 1.3 && *r >= 1.0 / 1.3);
    let parts: Vec<String> = ratios.iter().map(|(e, r)| format!("{}/kem {r:.3}", e.name())).collect();
    outcome(pass, format!("kem median error {kem:.3}; {} (band [0.769, 1.3])", parts.join(", ")))
}

fn calibration() -> Outcome {
    let r = calibrate_lambda_prior(&CalibrationPriors::default(), 2000, 2000, 8).unwrap();
    let (da, db) = (r.lambda_shape / 5.6 - 1.0, r.lambda_rate / 5e-4 - 1.0);
    outcome(
        da.abs() <= 0.3 && db.abs() <= 0.3,
        format!(
            "fitted (shape, rate) = ({:.3}, {:.3e}) vs reference (5.6, 5e-4): relative deviations ({da:+.2}, {db:+.2}), limit 0.3",
            r.lambda_shape, r.lambda_rate
        ),
    )
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_jumpcov")).args(args).output().unwrap();
    assert!(out.status.success(), "jumpcov {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    std::fs::write(p("sim.json"), r#"{"n_assets": 4, "n_times": 300, "zeta": 0.995}"#).unwrap();
    std::fs::write(p("est.json"), r#"{"gibbs": {"n_samples": 300, "burn_in": 100}}"#).unwrap();
    std::fs::write(
        p("grid.json"),
        r#"{"grid": [{"zeta": 1.0, "slab_var": 1e-4}, {"zeta": 0.995, "slab_var": 1e-4}], "reps": 2,
            "estimators": ["kem", "kecm-laplace", "kecm-spikeslab", "gibbs", "refresh"],
            "sim": {"n_assets": 3, "n_times": 200}, "gibbs": {"n_samples": 100, "burn_in": 50}}"#,
    )
    .unwrap();
    let mut compared = 0;
    let mut differing = Vec::new();
    for run in ["a", "b"] {
        // the second run also changes the worker cap, which must not matter
        let threads = if run == "a" { "1" } else { "3" };
        let d = |s: &str| p(&format!("{run}/{s}"));
        let common = ["--seed", "9", "--no-timing", "--threads", threads];
        let with = |args: &[&str]| run_cli(&[args, &common[..]].concat());
        with(&["simulate", "--config", &p("sim.json"), "--out", &d("simulate")]);
        for m in ["kem", "kecm-laplace", "kecm-spikeslab", "gibbs"] {
            let panel = p("a/simulate/panel.csv");
            with(&["estimate", "--method", m, "--panel", &panel, "--config", &p("est.json"), "--out", &d(m)]);
        }
        with(&["benchmark", "--config", &p("grid.json"), "--out", &d("benchmark")]);
        with(&["calibrate-lambda", "--outer", "200", "--inner", "200", "--out", &d("calibrate")]);
        std::fs::create_dir_all(d("theory")).unwrap();
        with(&["verify-theory", "--instances", "20", "--trials", "1000", "--out", &d("theory/theory.csv")]);
    }
    for sub in ["simulate", "kem", "kecm-laplace", "kecm-spikeslab", "gibbs", "benchmark", "calibrate", "theory"] {
        let a = dir_bytes(&tmp.path().join("a").join(sub));
        let b = dir_bytes(&tmp.path().join("b").join(sub));
        if a.keys().ne(b.keys()) {
            differing.push(format!("{sub}: file sets differ"));
        }
        for (name, bytes) in &a {
            compared += 1;
            if b.get(name) != Some(bytes) {
                differing.push(format!("{sub}/{name}"));
            }
        }
    }
    outcome(
        differing.is_empty(),
        format!("{compared} artifacts from 8 command runs compared byte for byte; differing {differing:?}"),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("smoother oracle equivalence", smoother_oracle),
        ("ECM ascent after the filter phase", ecm_ascent),
        ("jump M-step oracles", jump_m_steps),
        ("oracle-recovery theory checks", theory),
        ("Gibbs correctness", gibbs),
        ("headline ordering at desk scale", headline),
        ("no-jump sanity", no_jump_sanity),
        ("Laplace rate-prior calibration", calibration),
        ("CLI determinism", determinism),
    ];
    let mut passed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        passed += o.pass as usize;
        println!(
            "criterion {} ({name}): {} | {} [{:.1} s]",
            k + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{} criteria pass", criteria.len());
    if passed < criteria.len() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}

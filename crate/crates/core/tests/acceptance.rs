//! Acceptance criteria A1-A10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfl_mpc::controller::{preview_yaw_rates, Controller};
use rfl_mpc::dynamics::{error_state, ErrorState, PlantState};
use rfl_mpc::harness::{
    self, compare_on_eval_paths, run_closed_loop, split_chronological, split_metrics, Comparison, ExperimentConfig,
    FitReport, SimLog, Termination, Variant, TRAIN_FRACTION,
};
use rfl_mpc::prediction::{
    build_augmented, build_nominal_with_disturbances, condense_qp, AugmentedEvolution, Bounds, HorizonConfig,
    QpWeights, ResidueMode, NX, NY,
};
use rfl_mpc::qp::{solve, QpProblem, QpSettings, QpStatus};
use rfl_mpc::residual::{apply_coefficients, fit_forest, ForestConfig, ResidualForest, ResidualSample};

use common::{max_abs_diff, random_ltv, random_spd, random_thetas, random_vec5, row_window};

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, pass, detail }
}

struct Pipeline {
    cfg: ExperimentConfig,
    samples: Vec<ResidualSample>,
    fit: FitReport,
    comparison: Comparison,
    elapsed: Duration,
}

fn run_pipeline() -> Pipeline {
    let cfg = ExperimentConfig::default();
    let started = Instant::now();
    let (samples, _) = harness::collect(&cfg).expect("collect");
    let (forest, fit) = harness::train(&cfg, &samples).expect("train");
    let comparison = compare_on_eval_paths(&cfg, &forest).expect("compare");
    Pipeline { cfg, samples, fit, comparison, elapsed: started.elapsed() }
}

fn a1(p: &Pipeline) -> Verdict {
    let pe = p.comparison.report.pe_percent.unwrap_or(f64::NEG_INFINITY);
    let completed = p
        .comparison
        .nominal
        .iter()
        .chain(&p.comparison.residual)
        .all(|o| o.termination == Termination::Completed);
    let secs = p.elapsed.as_secs_f64();
    verdict(
        "A1",
        pe >= 10.0 && completed && secs < 300.0,
        format!(
            "pooled lateral MAE nominal {:.5} m, RFL {:.5} m, PE {pe:.2}% (need >= 10%); all runs completed: {completed}; pipeline {secs:.1} s",
            p.comparison.baseline.e1.mae, p.comparison.report.e1.mae
        ),
    )
}

fn a2(p: &Pipeline) -> Verdict {
    let lin = p.fit.test.leaf_linear[0].rmse;
    let mean = p.fit.test.leaf_mean[0].rmse;
    let ratio = lin / mean;
    verdict(
        "A2",
        ratio <= 0.5,
        format!(
            "held-out e1 residue RMSE leaf-linear {lin:.3e}, leaf-mean {mean:.3e}, ratio {ratio:.3} (need <= 0.5) on {} test samples",
            p.fit.test.samples
        ),
    )
}

fn a3(p: &Pipeline) -> Verdict {
    let (train, test) = split_chronological(&p.samples, TRAIN_FRACTION);
    let base = p.cfg.forest_config();
    let single = ForestConfig { n_trees: 1, feature_fraction: 1.0, bootstrap: false, ..base };
    let tree = fit_forest(train, &single).expect("single tree");
    let tree_rmse = split_metrics(&tree, test).expect("metrics").leaf_linear[0].rmse;
    let mut wins = 0;
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let forest = fit_forest(train, &ForestConfig { n_trees: 20, seed, ..base }).expect("forest");
        let rmse = split_metrics(&forest, test).expect("metrics").leaf_linear[0].rmse;
        worst = worst.max(rmse);
        if rmse <= tree_rmse {
            wins += 1;
        }
    }
    verdict(
        "A3",
        wins >= 8,
        format!(
            "forest (T=20) beats single tree in {wins}/10 forest seeds (need >= 8); tree e1 test RMSE {tree_rmse:.3e}, worst forest {worst:.3e}"
        ),
    )
}

/// Error states and preview yaw rates along a recorded run, for replaying the
/// controller on identical inputs.
fn replay_inputs(cfg: &ExperimentConfig, spec: &str, log: &SimLog) -> Vec<(ErrorState, Vec<f64>)> {
    let path = cfg.build_path(spec).expect("path");
    let mut hint = Some(0);
    log.records
        .iter()
        .map(|r| {
            let state = PlantState { x: r.x, y: r.y, psi: r.psi, vy: r.vy, r: r.r, vx: cfg.vehicle.vx, ..PlantState::default() };
            let proj = error_state(&state, &path, cfg.sim.corridor, hint).expect("projection");
            hint = Some(proj.index);
            (r.error, preview_yaw_rates(&path, proj.s, cfg.vehicle.vx, &cfg.horizon))
        })
        .collect()
}

/// Keeps the fastest time seen for each step; the replay is deterministic, so
/// repeats differ only by scheduler noise.
fn time_steps(cfg: &ExperimentConfig, inputs: &[(ErrorState, Vec<f64>)], forest: &ResidualForest, best: &mut [f64]) {
    let ctrl = Controller::new(cfg.controller_config()).expect("controller");
    let mut state = ctrl.new_state(0.0);
    for ((e, preview), b) in inputs.iter().zip(best.iter_mut()) {
        let started = Instant::now();
        ctrl.control_step(e, preview, Some(forest), &mut state).expect("control step");
        *b = b.min(started.elapsed().as_secs_f64() * 1e3);
    }
}

fn a4(p: &Pipeline) -> Verdict {
    let (train, _) = split_chronological(&p.samples, TRAIN_FRACTION);
    let small: Vec<ResidualSample> = train.iter().step_by(8).cloned().collect();
    let cfg = &p.cfg;
    let small_forest = fit_forest(&small, &cfg.forest_config()).expect("small forest");
    let large_forest = fit_forest(train, &cfg.forest_config()).expect("large forest");

    let spec = &cfg.paths.eval[2];
    let inputs = replay_inputs(cfg, spec, &p.comparison.nominal[2].log);
    let mut small_ms = vec![f64::INFINITY; inputs.len()];
    let mut large_ms = small_ms.clone();
    for _ in 0..7 {
        time_steps(cfg, &inputs, &small_forest, &mut small_ms);
        time_steps(cfg, &inputs, &large_forest, &mut large_ms);
    }
    let t_small = small_ms.iter().sum::<f64>() / inputs.len() as f64;
    let t_large = large_ms.iter().sum::<f64>() / inputs.len() as f64;
    let change = (t_large / t_small - 1.0).abs();
    verdict(
        "A4",
        change < 0.2,
        format!(
            "mean control_step {t_small:.3} ms with {} samples vs {t_large:.3} ms with {} (8x); change {:.1}% (need < 20%)",
            small.len(),
            train.len(),
            100.0 * change
        ),
    )
}

fn a5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let ltv = random_ltv(&mut rng);
        let n = rng.gen_range(1..=8);
        let hz = HorizonConfig { n, nc: rng.gen_range(1..=n), ts: 0.02 };
        let dd: Vec<_> = (0..n).map(|_| random_vec5(&mut rng, 0.1)).collect();
        let nominal = build_nominal_with_disturbances(&ltv, &dd, &hz).expect("nominal");
        let thetas = random_thetas(&mut rng, n, 1.0);
        let past: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let du = DVector::from_fn(hz.nc, |_, _| rng.gen_range(-0.05..0.05));
        let xi = random_vec5(&mut rng, 1.0);
        let aug = build_augmented(&nominal, &thetas, &past, ResidueMode::PerRow).expect("augmented");
        let diff = aug.predict(&xi, &du) - nominal.predict(&xi, &du);
        let plan = hz.expand_increments(du.as_slice());
        for j in 0..n {
            let eps = apply_coefficients(&thetas[j], &row_window(j, n, &past, &plan));
            for o in 0..NY {
                worst = worst.max((diff[NX * j + o] - eps[o]).abs());
            }
            worst = worst.max(diff[NX * j + NY].abs());
        }
    }
    verdict("A5", worst <= 1e-12, format!("max |augmented - nominal - per-row residue| = {worst:.2e} over 100 instances (need <= 1e-12)"))
}

fn a6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let ltv = random_ltv(&mut rng);
        let n = rng.gen_range(1..=20);
        let hz = HorizonConfig { n, nc: rng.gen_range(1..=n), ts: 0.02 };
        let dd: Vec<_> = (0..n).map(|_| random_vec5(&mut rng, 0.1)).collect();
        let nominal = build_nominal_with_disturbances(&ltv, &dd, &hz).expect("nominal");
        let du = DVector::from_fn(hz.nc, |_, _| rng.gen_range(-0.1..0.1));
        let xi = random_vec5(&mut rng, 1.0);
        let stacked = nominal.predict(&xi, &du);
        let plan = hz.expand_increments(du.as_slice());
        let mut x = xi;
        for j in 0..n {
            x = ltv.with_disturbance(dd[j]).step(&x, plan[j]);
            for r in 0..NX {
                worst = worst.max((stacked[NX * j + r] - x[r]).abs());
            }
        }
    }
    verdict("A6", worst <= 1e-12, format!("max |stacked - rollout| = {worst:.2e} over 100 instances (need <= 1e-12)"))
}

/// Minimum of a box QP by enumerating every lower/upper/free assignment.
fn enumerate_box_qp(h: &DMatrix<f64>, f: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    let n = f.len();
    let objective = |z: &DVector<f64>| 0.5 * z.dot(&(h * z)) + f.dot(z);
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut z = DVector::zeros(n);
        let mut free = Vec::new();
        let mut c = code;
        for i in 0..n {
            match c % 3 {
                0 => z[i] = lo[i],
                1 => z[i] = hi[i],
                _ => free.push(i),
            }
            c /= 3;
        }
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| {
                -f[free[a]] - (0..n).filter(|j| !free.contains(j)).map(|j| h[(free[a], j)] * z[j]).sum::<f64>()
            });
            let Some(sol) = hff.cholesky().map(|ch| ch.solve(&rhs)) else { continue };
            for (a, &i) in free.iter().enumerate() {
                z[i] = sol[a];
            }
        }
        if (0..n).all(|i| z[i] >= lo[i] - 1e-12 && z[i] <= hi[i] + 1e-12) {
            best = best.min(objective(&z));
        }
    }
    best
}

fn a7(p: &Pipeline) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = 0.0f64;
    let mut unsolved = 0;
    for _ in 0..100 {
        let h = random_spd(&mut rng, 6);
        let f = DVector::from_fn(6, |_, _| rng.gen_range(-3.0..3.0));
        let lo = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..-0.05));
        let hi = DVector::from_fn(6, |_, _| rng.gen_range(0.05..1.0));
        let oracle = enumerate_box_qp(&h, &f, &lo, &hi);
        let qp = QpProblem::boxed(h, f, lo, hi).expect("qp");
        let sol = solve(&qp, &QpSettings::default()).expect("solve");
        if sol.status != QpStatus::Solved {
            unsolved += 1;
        }
        worst = worst.max((qp.objective(&sol.z) - oracle).abs() / oracle.abs().max(1.0));
    }
    let runs = p.comparison.nominal.iter().chain(&p.comparison.residual);
    let kkt = runs.clone().map(|o| o.max_kkt_solved).fold(0.0, f64::max);
    let all_solved = runs.clone().all(|o| o.all_solved());
    let steps: usize = runs.map(|o| o.log.len()).sum();
    verdict(
        "A7",
        worst <= 1e-6 && unsolved == 0 && kkt <= 1e-6 && all_solved,
        format!(
            "box QPs: max objective gap {worst:.2e} vs 3^6 enumeration, {unsolved} unsolved; closed loop: max KKT residual {kkt:.2e} over {steps} steps, every step solved: {all_solved}"
        ),
    )
}

fn a8(p: &Pipeline) -> Verdict {
    let cfg = &p.cfg;
    let n = cfg.horizon.n;
    let zero = ResidualForest::constant(n, DMatrix::zeros(n + 1, NY)).expect("zero forest");
    let mut worst = 0.0f64;
    let mut same_length = true;
    for spec in &cfg.paths.eval {
        let path = cfg.build_path(spec).expect("path");
        let a = run_closed_loop(cfg, &path, Variant::Nominal).expect("nominal run");
        let b = run_closed_loop(cfg, &path, Variant::Residual(&zero)).expect("zero-forest run");
        same_length &= a.log.len() == b.log.len();
        for (x, y) in a.log.records.iter().zip(&b.log.records) {
            let fields = [
                (x.x, y.x),
                (x.y, y.y),
                (x.psi, y.psi),
                (x.vy, y.vy),
                (x.r, y.r),
                (x.error.e1, y.error.e1),
                (x.error.e1_dot, y.error.e1_dot),
                (x.error.e2, y.error.e2),
                (x.error.e2_dot, y.error.e2_dot),
                (x.du, y.du),
                (x.u, y.u),
                (x.sigma, y.sigma),
            ];
            for (u, v) in fields {
                worst = worst.max((u - v).abs());
            }
        }
    }
    verdict(
        "A8",
        same_length && worst <= 1e-12,
        format!("zero-coefficient RFL vs nominal on {} paths: max per-step difference {worst:.2e} (need <= 1e-12), equal lengths: {same_length}", cfg.paths.eval.len()),
    )
}

/// Expanded tracking objective evaluated from the stacked prediction.
fn expanded_objective(aug: &AugmentedEvolution, xi: &nalgebra::Vector5<f64>, w: &QpWeights, eta_ref: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let nc = aug.horizon.nc;
    let du = z.rows(0, nc).into_owned();
    let x = aug.predict(xi, &du);
    let mut j = 0.0;
    for step in 0..aug.horizon.n {
        for o in 0..NY {
            let e = x[NX * step + o] - eta_ref[NY * step + o];
            j += w.q1[o] * e * e;
        }
    }
    j + w.q2 * du.norm_squared() + w.lambda * z[nc] * z[nc]
}

fn a9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let ltv = random_ltv(&mut rng);
        let n = rng.gen_range(1..=10);
        let hz = HorizonConfig { n, nc: rng.gen_range(1..=n), ts: 0.02 };
        let dd: Vec<_> = (0..n).map(|_| random_vec5(&mut rng, 0.1)).collect();
        let nominal = build_nominal_with_disturbances(&ltv, &dd, &hz).expect("nominal");
        let thetas = random_thetas(&mut rng, n, 0.5);
        let past: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let mode = if rng.gen_bool(0.5) { ResidueMode::PerRow } else { ResidueMode::Propagated };
        let aug = build_augmented(&nominal, &thetas, &past, mode).expect("augmented");
        let w = QpWeights {
            q1: [rng.gen_range(0.1..50.0), rng.gen_range(0.1..5.0), rng.gen_range(0.1..20.0), rng.gen_range(0.1..5.0)],
            q2: rng.gen_range(0.1..500.0),
            lambda: rng.gen_range(1.0..1000.0),
        };
        let xi = random_vec5(&mut rng, 0.5);
        let eta_ref = DVector::from_fn(NY * n, |_, _| rng.gen_range(-0.1..0.1));
        let qp = condense_qp(&aug, &xi, &w, &Bounds::default(), &eta_ref).expect("condense");
        let z = DVector::from_fn(hz.nc + 1, |_, _| rng.gen_range(-0.1..0.1));
        let grad = &qp.h * &z + &qp.f;
        let step = 1e-5;
        let fd = DVector::from_fn(z.len(), |i, _| {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += step;
            zm[i] -= step;
            (expanded_objective(&aug, &xi, &w, &eta_ref, &zp) - expanded_objective(&aug, &xi, &w, &eta_ref, &zm)) / (2.0 * step)
        });
        worst = worst.max(max_abs_diff(&grad, &fd) / grad.amax().max(1.0));
    }
    verdict("A9", worst <= 1e-6, format!("max relative gradient error {worst:.2e} over 50 instances (need <= 1e-6)"))
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_rfl-mpc"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn cli_pipeline(dir: &Path) -> Option<[Vec<u8>; 3]> {
    let f = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let ok = cli(&["collect", "--out", &f("data.csv")])
        && cli(&["train", "--data", &f("data.csv"), "--out", &f("model.json"), "--report", &f("fit.json")])
        && cli(&["run", "--model", &f("model.json"), "--out", &f("run.csv")]);
    if !ok {
        return None;
    }
    let read = |name: &str| std::fs::read(dir.join(name)).ok();
    Some([read("data.csv")?, read("model.json")?, read("run.csv")?])
}

fn a10() -> Verdict {
    let (a, b) = (tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir"));
    match (cli_pipeline(a.path()), cli_pipeline(b.path())) {
        (Some(x), Some(y)) => {
            let same = [x[0] == y[0], x[1] == y[1], x[2] == y[2]];
            verdict(
                "A10",
                same.iter().all(|s| *s),
                format!(
                    "byte-identical across two CLI runs: dataset {} ({} B), model {} ({} B), log {} ({} B)",
                    same[0],
                    x[0].len(),
                    same[1],
                    x[1].len(),
                    same[2],
                    x[2].len()
                ),
            )
        }
        _ => verdict("A10", false, "CLI pipeline failed".into()),
    }
}

fn main() {
    let pipeline = run_pipeline();
    let verdicts = [
        a1(&pipeline),
        a2(&pipeline),
        a3(&pipeline),
        a4(&pipeline),
        a5(),
        a6(),
        a7(&pipeline),
        a8(&pipeline),
        a9(),
        a10(),
    ];
    for v in &verdicts {
        println!("{} {}: {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

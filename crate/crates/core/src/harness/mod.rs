//! Closed-loop simulation, data collection, training and evaluation.

mod config;
mod log;
mod report;

pub use config::{ControllerSection, ExperimentConfig, ForestSection, PathsSection, PlantSection, SimSection};
pub use log::{SimLog, StepRecord, LOG_COLUMNS};
pub use report::{compare_table, evaluate, evaluate_many, percentage_improvement, MetricsReport, Timing};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{preview_yaw_rates, Controller};
use crate::dynamics::{error_state, LtvMatrices, PlantState};
use crate::error::{Error, Result};
use crate::path::ReferencePath;
use crate::qp::QpStatus;
use crate::residual::{build_samples, fit_forest, fit_metrics, FitMetrics, ResidualForest, ResidualSample, NUM_OUTPUTS};

/// Runs stop this close (m) to the end of the reference.
const END_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
pub enum Variant<'a> {
    Nominal,
    Residual(&'a ResidualForest),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Completed,
    CorridorExit { t: f64, offset: f64 },
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub log: SimLog,
    /// Nominal one-step model used at each step.
    pub models: Vec<LtvMatrices>,
    pub termination: Termination,
    /// Largest KKT residual over the steps the solver reported as solved.
    pub max_kkt_solved: f64,
}

impl SimOutcome {
    pub fn all_solved(&self) -> bool {
        self.log.records.iter().all(|r| r.qp_status == QpStatus::Solved)
    }
}

/// Start on the path origin, displaced by the configured offsets.
pub fn initial_state(cfg: &ExperimentConfig, path: &ReferencePath) -> PlantState {
    let p0 = &path.points[0];
    let d = cfg.sim.initial_offset;
    PlantState {
        x: p0.x - d * p0.psi.sin(),
        y: p0.y + d * p0.psi.cos(),
        psi: p0.psi + cfg.sim.initial_heading,
        vx: cfg.vehicle.vx,
        ..PlantState::default()
    }
}

/// Drive `path` with the plant in the loop until the end, a corridor exit, or
/// the step limit.
pub fn run_closed_loop(cfg: &ExperimentConfig, path: &ReferencePath, variant: Variant<'_>) -> Result<SimOutcome> {
    simulate(cfg, path, variant, None)
}

fn simulate(
    cfg: &ExperimentConfig,
    path: &ReferencePath,
    variant: Variant<'_>,
    mut dither: Option<(f64, ChaCha8Rng)>,
) -> Result<SimOutcome> {
    let ctrl = Controller::new(cfg.controller_config())?;
    let plant = cfg.plant_model();
    let hz = cfg.horizon;
    let forest = match variant {
        Variant::Nominal => None,
        Variant::Residual(f) => Some(f),
    };

    let mut state = initial_state(cfg, path);
    let mut ctrl_state = ctrl.new_state(0.0);
    let mut log = SimLog::new(hz.ts);
    let mut models = Vec::new();
    let mut hint = Some(0);
    let mut max_kkt_solved = 0.0f64;
    let end = path.total_length() - END_MARGIN;

    let termination = loop {
        let t = log.len() as f64 * hz.ts;
        if log.len() >= cfg.sim.max_steps {
            break Termination::MaxSteps;
        }
        let proj = match error_state(&state, path, cfg.sim.corridor, hint) {
            Ok(p) => p,
            Err(Error::CorridorExit { offset, .. }) => break Termination::CorridorExit { t, offset },
            Err(e) => return Err(e),
        };
        if proj.s >= end {
            break Termination::Completed;
        }
        hint = Some(proj.index);

        let preview = preview_yaw_rates(path, proj.s, state.vx, &hz);
        let started = Instant::now();
        let (mut u, mut diag) = ctrl.control_step(&proj.error, &preview, forest, &mut ctrl_state)?;
        if let Some((amp, rng)) = dither.as_mut() {
            let b = &cfg.bounds;
            let du = (diag.du + rng.gen_range(-*amp..=*amp)).clamp(b.du_lo, b.du_hi);
            u = (ctrl_state.u_prev - diag.du + du).clamp(b.u_lo, b.u_hi);
            diag.du = u - (ctrl_state.u_prev - diag.du);
            ctrl_state.override_command(u);
        }
        let step_ms = if cfg.sim.record_timing { started.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        if diag.status == QpStatus::Solved {
            max_kkt_solved = max_kkt_solved.max(diag.residuals.max());
        }

        log.records.push(StepRecord {
            t,
            x: state.x,
            y: state.y,
            psi: state.psi,
            vy: state.vy,
            r: state.r,
            error: proj.error,
            du: diag.du,
            u,
            sigma: diag.sigma,
            qp_status: diag.status,
            qp_iters: diag.iterations,
            step_ms,
            eps_pred: diag.predicted_residues[0],
        });
        models.push(diag.model);
        state = plant.step(&state, u, hz.ts)?;
    };
    Ok(SimOutcome { log, models, termination, max_kkt_solved })
}

/// Run nominal MPC on every training path and turn the logs into samples.
/// Steering increments get the configured dither, seeded per path.
pub fn collect(cfg: &ExperimentConfig) -> Result<(Vec<ResidualSample>, Vec<SimOutcome>)> {
    let mut samples = Vec::new();
    let mut outcomes = Vec::new();
    for (i, spec) in cfg.paths.train.iter().enumerate() {
        let path = cfg.build_path(spec)?;
        let dither = (cfg.sim.collect_dither > 0.0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            (cfg.sim.collect_dither, rng)
        });
        let out = simulate(cfg, &path, Variant::Nominal, dither)?;
        samples.extend(build_samples(&out.log, &out.models, cfg.horizon.n)?);
        outcomes.push(out);
    }
    Ok((samples, outcomes))
}

/// Chronological split: the first `train_fraction` of the samples train.
pub fn split_chronological(samples: &[ResidualSample], train_fraction: f64) -> (&[ResidualSample], &[ResidualSample]) {
    let cut = ((samples.len() as f64) * train_fraction).round() as usize;
    samples.split_at(cut.min(samples.len()))
}

/// Per-channel metrics of the leaf-linear and leaf-mean predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub samples: usize,
    pub leaf_linear: Vec<FitMetrics>,
    pub leaf_mean: Vec<FitMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train: SplitMetrics,
    pub test: SplitMetrics,
}

pub fn split_metrics(forest: &ResidualForest, samples: &[ResidualSample]) -> Result<SplitMetrics> {
    let mut linear = vec![Vec::with_capacity(samples.len()); NUM_OUTPUTS];
    let mut mean = vec![Vec::with_capacity(samples.len()); NUM_OUTPUTS];
    for s in samples {
        let q = forest.predict_leaf(&s.window.zn)?;
        let lin = crate::residual::apply_coefficients(&q.theta, &s.window.zc);
        for o in 0..NUM_OUTPUTS {
            linear[o].push(lin[o]);
            mean[o].push(q.mean[o]);
        }
    }
    let per_channel = |pred: &Vec<Vec<f64>>| -> Result<Vec<FitMetrics>> {
        (0..NUM_OUTPUTS)
            .map(|o| fit_metrics(&samples.iter().map(|s| s.eps[o]).collect::<Vec<_>>(), &pred[o]))
            .collect()
    };
    Ok(SplitMetrics { samples: samples.len(), leaf_linear: per_channel(&linear)?, leaf_mean: per_channel(&mean)? })
}

pub const TRAIN_FRACTION: f64 = 0.8;

/// Fit on the first 80% of the samples and report on both parts.
pub fn train(cfg: &ExperimentConfig, samples: &[ResidualSample]) -> Result<(ResidualForest, FitReport)> {
    let (train, test) = split_chronological(samples, TRAIN_FRACTION);
    if test.is_empty() {
        return Err(Error::InsufficientData("dataset too small for a held-out split".into()));
    }
    let forest = fit_forest(train, &cfg.forest_config())?;
    let report = FitReport { train: split_metrics(&forest, train)?, test: split_metrics(&forest, test)? };
    Ok((forest, report))
}

/// Nominal and residual runs on every evaluation path.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub nominal: Vec<SimOutcome>,
    pub residual: Vec<SimOutcome>,
    /// Pooled over all paths; `pe_percent` is relative to the nominal runs.
    pub report: MetricsReport,
    pub baseline: MetricsReport,
}

pub fn compare_on_eval_paths(cfg: &ExperimentConfig, forest: &ResidualForest) -> Result<Comparison> {
    let mut nominal = Vec::new();
    let mut residual = Vec::new();
    for spec in &cfg.paths.eval {
        let path = cfg.build_path(spec)?;
        nominal.push(run_closed_loop(cfg, &path, Variant::Nominal)?);
        residual.push(run_closed_loop(cfg, &path, Variant::Residual(forest))?);
    }
    let base: Vec<&SimLog> = nominal.iter().map(|o| &o.log).collect();
    let cand: Vec<&SimLog> = residual.iter().map(|o| &o.log).collect();
    let report = evaluate_many(&cand, Some(&base))?;
    let baseline = evaluate_many(&base, None)?;
    Ok(Comparison { nominal, residual, report, baseline })
}

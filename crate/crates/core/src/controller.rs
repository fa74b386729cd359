//! One receding-horizon step: warm start, optional residual correction,
//! condensed QP, first increment.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector5};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    continuous_matrices, discretize_and_augment, AugmentedState, Discretization, ErrorState, LtvMatrices,
    VehicleParams,
};
use crate::error::{Error, Result};
use crate::path::ReferencePath;
use crate::prediction::{
    build_augmented, build_nominal_with_disturbances, condense_qp, AugmentedEvolution, Bounds, EvolutionMatrices,
    HorizonConfig, QpWeights, ResidueMode, NX, NY,
};
use crate::qp::{solve, KktResiduals, QpSettings, QpStatus};
use crate::residual::{FeatureWindow, ResidualForest, NUM_OUTPUTS};

/// Solver knobs exposed through configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub alpha: f64,
    pub polish: bool,
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = QpSettings::default();
        Self {
            eps_abs: s.eps_abs,
            eps_rel: s.eps_rel,
            max_iter: s.max_iter,
            rho: s.rho,
            alpha: s.alpha,
            polish: s.polish,
            warm_start: true,
        }
    }
}

impl SolverConfig {
    fn settings(&self) -> QpSettings {
        QpSettings {
            eps_abs: self.eps_abs,
            eps_rel: self.eps_rel,
            max_iter: self.max_iter,
            rho: self.rho,
            alpha: self.alpha,
            polish: self.polish,
            ..QpSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerConfig {
    pub vehicle: VehicleParams,
    pub horizon: HorizonConfig,
    pub weights: QpWeights,
    pub bounds: Bounds,
    pub solver: SolverConfig,
    pub discretization: Discretization,
    pub residue_mode: ResidueMode,
}

/// Mutable run-time state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    n: usize,
    states: VecDeque<ErrorState>,
    increments: VecDeque<f64>,
    prev_plan: Option<Vec<f64>>,
    prev_z: Option<DVector<f64>>,
    prev_duals: Option<DVector<f64>>,
    /// Steering angle applied at the previous step.
    pub u_prev: f64,
}

impl ControllerState {
    pub fn new(horizon: &HorizonConfig, u_prev: f64) -> Self {
        Self {
            n: horizon.n,
            states: VecDeque::with_capacity(horizon.n + 1),
            increments: VecDeque::with_capacity(horizon.n),
            prev_plan: None,
            prev_z: None,
            prev_duals: None,
            u_prev,
        }
    }

    /// Enough history to fill every feature window.
    pub fn is_warm(&self) -> bool {
        self.states.len() >= self.n && self.increments.len() + 1 >= self.n
    }

    pub fn push_state(&mut self, e: ErrorState) {
        if self.states.len() == self.n {
            self.states.pop_front();
        }
        self.states.push_back(e);
    }

    pub fn push_increment(&mut self, du: f64) {
        // only the N-1 most recent are ever read
        if self.increments.len() + 1 >= self.n.max(1) {
            self.increments.pop_front();
        }
        if self.n > 1 {
            self.increments.push_back(du);
        }
    }

    pub fn states(&self) -> &VecDeque<ErrorState> {
        &self.states
    }

    pub fn increments(&self) -> &VecDeque<f64> {
        &self.increments
    }

    /// Replace the last applied command by `command`, e.g. after adding an
    /// exploration perturbation.
    pub fn override_command(&mut self, command: f64) {
        let delta = command - self.u_prev;
        if let Some(last) = self.increments.back_mut() {
            *last += delta;
        }
        self.u_prev = command;
    }

    /// Increment plan from the previous step, if any.
    pub fn previous_plan(&self) -> Option<&[f64]> {
        self.prev_plan.as_deref()
    }
}

/// Telemetry from one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDiagnostics {
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub solve_ms: f64,
    /// Increment actually applied (after clamping and fallbacks).
    pub du: f64,
    pub sigma: f64,
    /// Predicted residue per horizon row at the chosen plan (zero without a forest).
    pub predicted_residues: Vec<[f64; NUM_OUTPUTS]>,
    /// Leaf path codes per row and tree.
    pub leaf_ids: Vec<Vec<u64>>,
    pub nodes_visited: usize,
    pub forest_active: bool,
    /// Nominal one-step model used for the current step.
    pub model: LtvMatrices,
}

/// Drop the first planned increment and repeat the last one; zeros on cold start.
pub fn warm_start_shift(prev: Option<&[f64]>, nc: usize) -> Vec<f64> {
    match prev {
        Some(p) if p.len() == nc && nc > 0 => {
            let mut out = p[1..].to_vec();
            out.push(p[nc - 1]);
            out
        }
        _ => vec![0.0; nc],
    }
}

/// Feature windows for the `N` horizon rows.
///
/// Row `j` (1-based) uses the states and increments of steps `k+j-N ..= k+j-1`.
/// Steps up to `k` come from the recorded history (the newest recorded state is
/// the current one); later states come from the nominal rollout under
/// `init_controls`, and increments from step `k` on are the expanded
/// `init_controls`.
pub fn estimate_future_windows(
    xi: &Vector5<f64>,
    nominal: &EvolutionMatrices,
    init_controls: &[f64],
    state: &ControllerState,
) -> Result<Vec<FeatureWindow>> {
    let hz = nominal.horizon;
    let n = hz.n;
    if init_controls.len() != hz.nc {
        return Err(Error::Dimension(format!("expected {} initial controls", hz.nc)));
    }
    if state.states.len() < n || state.increments.len() + 1 < n {
        return Err(Error::InsufficientData(format!(
            "need {n} recorded states and {} increments, have {} and {}",
            n - 1,
            state.states.len(),
            state.increments.len()
        )));
    }
    let pred = nominal.predict(xi, &DVector::from_column_slice(init_controls));
    let expanded = hz.expand_increments(init_controls);
    let ns = state.states.len() as isize;
    let ni = state.increments.len() as isize;

    let state_at = |r: isize| -> [f64; 4] {
        if r <= 0 {
            state.states[(ns - 1 + r) as usize].as_array()
        } else {
            let row = NX * (r as usize - 1);
            [pred[row], pred[row + 1], pred[row + 2], pred[row + 3]]
        }
    };
    let increment_at = |r: isize| -> f64 {
        if r < 0 {
            state.increments[(ni + r) as usize]
        } else {
            expanded[r as usize]
        }
    };

    (1..=n as isize)
        .map(|j| {
            let steps = (j - n as isize)..j;
            let zn = steps.clone().flat_map(state_at).collect();
            let zc = steps.map(increment_at).collect();
            FeatureWindow::new(zn, zc)
        })
        .collect()
}

/// Desired yaw rate at the arc lengths reached over the horizon at constant speed.
pub fn preview_yaw_rates(path: &ReferencePath, s: f64, vx: f64, horizon: &HorizonConfig) -> Vec<f64> {
    (0..horizon.n).map(|j| path.psi_dot_des(s + vx * horizon.ts * j as f64, vx)).collect()
}

/// The model-dependent pieces that stay fixed across steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub config: ControllerConfig,
    /// Discretized model with unit desired yaw rate.
    unit: LtvMatrices,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.horizon.validate()?;
        config.weights.validate()?;
        config.bounds.validate()?;
        let model = continuous_matrices(&config.vehicle)?;
        let unit = discretize_and_augment(&model, config.horizon.ts, 1.0, config.discretization)?;
        Ok(Self { config, unit })
    }

    /// One-step model for desired yaw rate `w` (the curvature term is linear in it).
    pub fn model_at(&self, w: f64) -> LtvMatrices {
        self.unit.with_disturbance(self.unit.dd * w)
    }

    pub fn new_state(&self, u_prev: f64) -> ControllerState {
        ControllerState::new(&self.config.horizon, u_prev)
    }

    /// Compute the steering command for the current error state.
    ///
    /// `preview[j]` is the desired yaw rate for horizon row `j`.
    pub fn control_step(
        &self,
        error: &ErrorState,
        preview: &[f64],
        forest: Option<&ResidualForest>,
        state: &mut ControllerState,
    ) -> Result<(f64, ControlDiagnostics)> {
        let cfg = &self.config;
        let hz = cfg.horizon;
        let (n, nc) = (hz.n, hz.nc);
        if !error.is_valid() {
            return Err(Error::NonFinite("error state"));
        }
        if preview.len() != n || preview.iter().any(|w| !w.is_finite()) {
            return Err(Error::Dimension(format!("need {n} finite preview yaw rates")));
        }
        if let Some(f) = forest {
            if f.window() != n {
                return Err(Error::Dimension(format!("forest window {} differs from horizon {n}", f.window())));
            }
        }

        state.push_state(*error);
        let init = warm_start_shift(state.previous_plan(), nc);
        let xi = AugmentedState::new(*error, state.u_prev).to_vector();

        let dd: Vec<Vector5<f64>> = preview.iter().map(|w| self.unit.dd * *w).collect();
        let nominal = build_nominal_with_disturbances(&self.unit, &dd, &hz)?;

        let mut leaf_ids = Vec::new();
        let mut nodes_visited = 0;
        let forest_active = forest.is_some() && state.is_warm();
        let evolution: AugmentedEvolution = match forest {
            Some(f) if forest_active => {
                let windows = estimate_future_windows(&xi, &nominal, &init, state)?;
                let mut thetas: Vec<DMatrix<f64>> = Vec::with_capacity(n);
                for w in &windows {
                    let q = f.predict_leaf(&w.zn)?;
                    nodes_visited += q.nodes_visited;
                    leaf_ids.push(q.leaf_ids);
                    thetas.push(q.theta);
                }
                let past: Vec<f64> = state.increments.iter().skip(state.increments.len() + 1 - n).copied().collect();
                build_augmented(&nominal, &thetas, &past, cfg.residue_mode)?
            }
            _ => nominal.clone().into(),
        };

        let eta_ref = DVector::zeros(NY * n);
        let qp = condense_qp(&evolution, &xi, &cfg.weights, &cfg.bounds, &eta_ref)?;
        let mut settings = cfg.solver.settings();
        if cfg.solver.warm_start {
            let mut z0 = DVector::zeros(nc + 1);
            z0.rows_mut(0, nc).copy_from_slice(&init);
            z0[nc] = state.prev_z.as_ref().map_or(0.0, |z| z[nc]);
            settings.warm_z = Some(z0);
            settings.warm_duals = state.prev_duals.clone().filter(|d| d.len() == qp.num_constraints());
        }
        let started = Instant::now();
        let sol = solve(&qp, &settings)?;
        let solve_ms = started.elapsed().as_secs_f64() * 1e3;

        let (plan, sigma) = match sol.status {
            QpStatus::Solved => (sol.z.rows(0, nc).iter().copied().collect::<Vec<_>>(), sol.z[nc]),
            QpStatus::MaxIter => (init.clone(), 0.0),
            QpStatus::PrimalInfeasible => (vec![0.0; nc], 0.0),
        };
        let b = &cfg.bounds;
        let du_req = if plan[0].is_finite() { plan[0].clamp(b.du_lo, b.du_hi) } else { 0.0 };
        let command = (state.u_prev + du_req).clamp(b.u_lo, b.u_hi);
        let du = command - state.u_prev;

        let plan_vec = DVector::from_column_slice(&plan);
        let corrected = evolution.predict(&xi, &plan_vec);
        let base = nominal.predict(&xi, &plan_vec);
        let predicted_residues = (0..n)
            .map(|j| std::array::from_fn(|o| corrected[NX * j + o] - base[NX * j + o]))
            .collect();

        if sol.status == QpStatus::Solved {
            state.prev_z = Some(sol.z.clone());
            state.prev_duals = Some(sol.duals.clone());
        } else {
            state.prev_z = None;
            state.prev_duals = None;
        }
        state.prev_plan = Some(plan);
        state.push_increment(du);
        state.u_prev = command;

        let diag = ControlDiagnostics {
            status: sol.status,
            iterations: sol.iterations,
            residuals: sol.residuals,
            solve_ms,
            du,
            sigma,
            predicted_residues,
            leaf_ids,
            nodes_visited,
            forest_active,
            model: self.model_at(preview[0]),
        };
        Ok((command, diag))
    }
}

//! Stacked N-step prediction and condensation of the MPC problem into a QP.
//!
//! The horizon prediction is `X = Psi xi + Phi dU + gamma` with `X` stacking
//! the augmented states `x_{k+1} .. x_{k+N}` (five entries per step) and `dU`
//! the `Nc` free steering increments. Beyond the control horizon the last
//! increment is repeated.
//!
//! The learned residual model adds, to the error-state rows of each
//! prediction step, a term that is affine in the increments of its window.
//! Those terms split into a part multiplying the free increments (`dPhi`) and
//! a part fixed by already-applied increments plus the intercept (`dgamma`).

use nalgebra::{DMatrix, DVector, Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::dynamics::LtvMatrices;
use crate::error::{Error, Result};
use crate::qp::QpProblem;

/// Augmented state size: four error states plus the previous steering angle.
pub const NX: usize = 5;
/// Tracked outputs: the four error states.
pub const NY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonConfig {
    /// Prediction horizon (steps).
    pub n: usize,
    /// Control horizon (steps).
    pub nc: usize,
    /// Sampling time (s).
    pub ts: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self { n: 16, nc: 16, ts: 0.02 }
    }
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.nc == 0 || self.nc > self.n {
            return Err(Error::InvalidParameter(format!(
                "horizon needs 1 <= nc <= n, got n = {}, nc = {}",
                self.n, self.nc
            )));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::InvalidParameter(format!("sampling time must be positive, got {}", self.ts)));
        }
        Ok(())
    }

    /// Column of the free-increment vector driving prediction step `step` (0-based).
    pub fn increment_column(&self, step: usize) -> usize {
        step.min(self.nc - 1)
    }

    /// Expand `nc` free increments to the `n` increments actually applied.
    pub fn expand_increments(&self, du: &[f64]) -> Vec<f64> {
        (0..self.n).map(|j| du[self.increment_column(j)]).collect()
    }
}

/// Nominal stacked evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionMatrices {
    pub horizon: HorizonConfig,
    /// `5N x 5`, block `j` is `Ad^(j+1)`.
    pub psi: DMatrix<f64>,
    /// `5N x Nc`, block lower triangular.
    pub phi: DMatrix<f64>,
    /// `5N`
    pub gamma: DVector<f64>,
    /// `4N x 5N` output selector.
    pub c: DMatrix<f64>,
}

/// Evolution corrected by leaf-linear residual coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEvolution {
    pub horizon: HorizonConfig,
    pub psi: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub c: DMatrix<f64>,
}

fn predict(
    psi: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    gamma: &DVector<f64>,
    xi: &Vector5<f64>,
    du: &DVector<f64>,
) -> DVector<f64> {
    let xi = DVector::from_column_slice(xi.as_slice());
    psi * xi + phi * du + gamma
}

impl EvolutionMatrices {
    pub fn predict(&self, xi: &Vector5<f64>, du: &DVector<f64>) -> DVector<f64> {
        predict(&self.psi, &self.phi, &self.gamma, xi, du)
    }
}

impl AugmentedEvolution {
    pub fn predict(&self, xi: &Vector5<f64>, du: &DVector<f64>) -> DVector<f64> {
        predict(&self.psi, &self.phi, &self.gamma, xi, du)
    }
}

impl From<EvolutionMatrices> for AugmentedEvolution {
    fn from(nom: EvolutionMatrices) -> Self {
        Self { horizon: nom.horizon, psi: nom.psi, phi: nom.phi, gamma: nom.gamma, c: nom.c }
    }
}

fn output_selector(n: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(NY * n, NX * n);
    for j in 0..n {
        for o in 0..NY {
            c[(NY * j + o, NX * j + o)] = 1.0;
        }
    }
    c
}

/// Stack a time-invariant model over the horizon.
pub fn build_nominal(ltv: &LtvMatrices, horizon: &HorizonConfig) -> Result<EvolutionMatrices> {
    horizon.validate()?;
    let dd = vec![ltv.dd; horizon.n];
    build_nominal_with_disturbances(ltv, &dd, horizon)
}

/// Stack the model with a per-step curvature term `dd[j]` entering `x_{k+j+1}`.
pub fn build_nominal_with_disturbances(
    ltv: &LtvMatrices,
    dd: &[Vector5<f64>],
    horizon: &HorizonConfig,
) -> Result<EvolutionMatrices> {
    horizon.validate()?;
    let n = horizon.n;
    if dd.len() != n {
        return Err(Error::Dimension(format!("expected {n} disturbance vectors, got {}", dd.len())));
    }

    // powers[i] = Ad^i, i = 0..=n
    let mut powers: Vec<Matrix5<f64>> = Vec::with_capacity(n + 1);
    powers.push(Matrix5::identity());
    for i in 1..=n {
        powers.push(powers[i - 1] * ltv.ad);
    }

    let mut psi = DMatrix::zeros(NX * n, NX);
    let mut phi = DMatrix::zeros(NX * n, horizon.nc);
    let mut gamma = DVector::zeros(NX * n);
    let mut g = Vector5::zeros();
    for j in 0..n {
        psi.view_mut((NX * j, 0), (NX, NX)).copy_from(&powers[j + 1]);
        for i in 0..=j {
            let col = horizon.increment_column(i);
            let block = powers[j - i] * ltv.bd;
            let mut dst = phi.view_mut((NX * j, col), (NX, 1));
            dst += block;
        }
        g = ltv.ad * g + dd[j];
        gamma.rows_mut(NX * j, NX).copy_from(&g);
    }
    Ok(EvolutionMatrices { horizon: *horizon, psi, phi, gamma, c: output_selector(n) })
}

/// How predicted residues enter the stacked prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidueMode {
    /// Each residue is added to its own prediction step only.
    PerRow,
    /// Each residue is a one-step disturbance and is carried to later steps
    /// through `Ad`, as in `x_{j+1} = Ad x_j + Bd du_j + Dd_j + eps_j`.
    #[default]
    Propagated,
}

/// Correct the nominal evolution with one leaf coefficient matrix per step.
///
/// `thetas[j]` is `(N+1) x 4`: an intercept row followed by one row per
/// increment of the window `k+j+1-N ..= k+j` (oldest first), one column per
/// error state. `past_increments` holds the `N-1` applied increments
/// `du_{k-N+1} ..= du_{k-1}`, oldest first.
pub fn build_augmented(
    nom: &EvolutionMatrices,
    thetas: &[DMatrix<f64>],
    past_increments: &[f64],
    mode: ResidueMode,
) -> Result<AugmentedEvolution> {
    let hz = nom.horizon;
    let n = hz.n;
    if thetas.len() != n {
        return Err(Error::Dimension(format!("expected {n} coefficient matrices, got {}", thetas.len())));
    }
    if past_increments.len() != n - 1 {
        return Err(Error::Dimension(format!(
            "expected {} past increments, got {}",
            n - 1,
            past_increments.len()
        )));
    }
    let mut phi = nom.phi.clone();
    let mut gamma = nom.gamma.clone();
    let mut dphi = DMatrix::<f64>::zeros(NX * n, hz.nc);
    let mut dgamma = DVector::<f64>::zeros(NX * n);
    for (j, theta) in thetas.iter().enumerate() {
        if theta.nrows() != n + 1 || theta.ncols() != NY {
            return Err(Error::Dimension(format!(
                "coefficient matrix {j} is {}x{}, expected {}x{NY}",
                theta.nrows(),
                theta.ncols(),
                n + 1
            )));
        }
        let row0 = NX * j;
        for o in 0..NY {
            dgamma[row0 + o] += theta[(0, o)];
        }
        // window position m covers step k + j + 1 - n + m
        for m in 0..n {
            let step = j as isize + 1 - n as isize + m as isize;
            for o in 0..NY {
                let beta = theta[(m + 1, o)];
                if step >= 0 {
                    dphi[(row0 + o, hz.increment_column(step as usize))] += beta;
                } else {
                    let past = past_increments[(n as isize - 1 + step) as usize];
                    dgamma[row0 + o] += beta * past;
                }
            }
        }
    }
    if mode == ResidueMode::Propagated {
        // block j accumulates Ad * block (j-1)
        let ad = nom.psi.view((0, 0), (NX, NX)).into_owned();
        for j in 1..n {
            let prev_phi = dphi.rows(NX * (j - 1), NX).into_owned();
            let prev_gamma = dgamma.rows(NX * (j - 1), NX).into_owned();
            let mut cur = dphi.rows_mut(NX * j, NX);
            cur += &ad * prev_phi;
            let mut cur = dgamma.rows_mut(NX * j, NX);
            cur += &ad * prev_gamma;
        }
    }
    phi += dphi;
    gamma += dgamma;
    Ok(AugmentedEvolution { horizon: hz, psi: nom.psi.clone(), phi, gamma, c: nom.c.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpWeights {
    /// Per-output weights on `[e1, e1_dot, e2, e2_dot]`, every step.
    pub q1: [f64; NY],
    /// Weight on each steering increment.
    pub q2: f64,
    /// Quadratic slack penalty.
    pub lambda: f64,
}

impl Default for QpWeights {
    fn default() -> Self {
        Self { q1: [50.0, 1.0, 10.0, 1.0], q2: 500.0, lambda: 1000.0 }
    }
}

impl QpWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self.q1.iter().chain([&self.q2, &self.lambda]);
        if all.clone().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bounds {
    /// Steering increment limits (rad per step).
    pub du_lo: f64,
    pub du_hi: f64,
    /// Absolute steering limits (rad).
    pub u_lo: f64,
    pub u_hi: f64,
    /// Per-output limits, softened by the slack. Infinite entries are dropped.
    pub eta_lo: [f64; NY],
    pub eta_hi: [f64; NY],
}

impl Default for Bounds {
    fn default() -> Self {
        let inf = f64::INFINITY;
        Self {
            du_lo: -0.02,
            du_hi: 0.02,
            u_lo: -0.5,
            u_hi: 0.5,
            eta_lo: [-0.8, -inf, -0.3, -inf],
            eta_hi: [0.8, inf, 0.3, inf],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let pairs = [(self.du_lo, self.du_hi), (self.u_lo, self.u_hi)]
            .into_iter()
            .chain(self.eta_lo.iter().copied().zip(self.eta_hi.iter().copied()));
        for (lo, hi) in pairs {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidParameter(format!("bound lower {lo} exceeds upper {hi}")));
            }
        }
        if !(self.du_lo.is_finite() && self.du_hi.is_finite() && self.u_lo.is_finite() && self.u_hi.is_finite()) {
            return Err(Error::InvalidParameter("steering bounds must be finite".into()));
        }
        Ok(())
    }
}

/// Condense the tracking problem into `min 1/2 z'Hz + f'z, lb <= Gz <= ub`
/// over `z = [dU; sigma]`.
///
/// `1/2 z'Hz + f'z` equals `||CX - eta_ref||^2_Q1 + ||dU||^2_Q2 + lambda sigma^2`
/// up to a constant.
pub fn condense_qp(
    aug: &AugmentedEvolution,
    xi: &Vector5<f64>,
    w: &QpWeights,
    b: &Bounds,
    eta_ref: &DVector<f64>,
) -> Result<QpProblem> {
    let hz = aug.horizon;
    let (n, nc) = (hz.n, hz.nc);
    let nz = nc + 1;
    if eta_ref.len() != NY * n {
        return Err(Error::Dimension(format!("reference must have {} entries", NY * n)));
    }

    let free = aug.predict(xi, &DVector::zeros(nc));
    let mut cphi = DMatrix::<f64>::zeros(NY * n, nc);
    let mut resid = DVector::<f64>::zeros(NY * n);
    let mut qbar = DVector::<f64>::zeros(NY * n);
    for j in 0..n {
        for o in 0..NY {
            let (r, src) = (NY * j + o, NX * j + o);
            cphi.row_mut(r).copy_from(&aug.phi.row(src));
            resid[r] = free[src] - eta_ref[r];
            qbar[r] = w.q1[o];
        }
    }

    let weighted = DMatrix::from_fn(NY * n, nc, |r, c| qbar[r] * cphi[(r, c)]);
    let mut h = DMatrix::<f64>::zeros(nz, nz);
    let mut quad = cphi.transpose() * &weighted;
    for i in 0..nc {
        quad[(i, i)] += w.q2;
    }
    h.view_mut((0, 0), (nc, nc)).copy_from(&(quad * 2.0));
    h[(nc, nc)] = 2.0 * w.lambda;
    let h = (&h + h.transpose()) * 0.5;

    let mut f = DVector::<f64>::zeros(nz);
    f.rows_mut(0, nc).copy_from(&(weighted.transpose() * &resid * 2.0));

    let mut rows: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    for i in 0..nc {
        let mut g = vec![0.0; nz];
        g[i] = 1.0;
        rows.push((g, b.du_lo, b.du_hi));
    }
    // absolute steering: u_{k+j} = u_{k-1} + sum of expanded increments up to j
    let u_prev = xi[4];
    let mut cum = vec![0.0; nz];
    for j in 0..n {
        cum[hz.increment_column(j)] += 1.0;
        rows.push((cum.clone(), b.u_lo - u_prev, b.u_hi - u_prev));
    }
    for j in 0..n {
        for o in 0..NY {
            let r = NY * j + o;
            let offset = free[NX * j + o];
            if b.eta_lo[o].is_finite() {
                let mut g: Vec<f64> = cphi.row(r).iter().copied().collect();
                g.push(1.0);
                rows.push((g, b.eta_lo[o] - offset, f64::INFINITY));
            }
            if b.eta_hi[o].is_finite() {
                let mut g: Vec<f64> = cphi.row(r).iter().copied().collect();
                g.push(-1.0);
                rows.push((g, f64::NEG_INFINITY, b.eta_hi[o] - offset));
            }
        }
    }
    let mut sigma_row = vec![0.0; nz];
    sigma_row[nc] = 1.0;
    rows.push((sigma_row, 0.0, f64::INFINITY));

    let m = rows.len();
    let mut g = DMatrix::zeros(m, nz);
    let mut lb = DVector::zeros(m);
    let mut ub = DVector::zeros(m);
    for (i, (row, lo, hi)) in rows.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            g[(i, c)] = v;
        }
        lb[i] = lo;
        ub[i] = hi;
    }
    QpProblem::new(h, f, g, lb, ub)
}

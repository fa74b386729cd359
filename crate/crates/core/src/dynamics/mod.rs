//! Nominal error-state bicycle model and the nonlinear plant standing in for
//! the real vehicle.
//!
//! The nominal model lives in error coordinates relative to the reference
//! path: `x = [e1, e1_dot, e2, e2_dot]`, with linear tire forces and constant
//! longitudinal speed. It is discretized once per control step and augmented
//! with the previous steering angle so that the optimizer decides steering
//! increments.

mod plant;
mod projection;

pub use plant::{PlantModel, PlantState, TireModel};
pub use projection::{error_state, Projection};

use nalgebra::{Matrix4, Matrix5, SMatrix, Vector4, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slowest longitudinal speed accepted by the model (it contains `1/vx`).
pub const MIN_SPEED: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Mass (kg).
    pub mass: f64,
    /// Yaw inertia (kg m^2).
    pub iz: f64,
    /// CG to front axle (m).
    pub lf: f64,
    /// CG to rear axle (m).
    pub lr: f64,
    /// Front cornering stiffness per tire (N/rad).
    pub caf: f64,
    /// Rear cornering stiffness per tire (N/rad).
    pub car: f64,
    /// Longitudinal speed (m/s).
    pub vx: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1723.0,
            iz: 4175.0,
            lf: 1.232,
            lr: 1.468,
            caf: 66900.0,
            car: 66900.0,
            vx: 10.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("iz", self.iz),
            ("lf", self.lf),
            ("lr", self.lr),
            ("caf", self.caf),
            ("car", self.car),
            ("vx", self.vx),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "vehicle.{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.vx < MIN_SPEED {
            return Err(Error::InvalidParameter(format!(
                "vehicle.vx = {} is below the minimum of {MIN_SPEED} m/s",
                self.vx
            )));
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }
}

/// Tracking errors with respect to the reference path.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorState {
    /// Lateral offset (m), left of the path positive.
    pub e1: f64,
    pub e1_dot: f64,
    /// Heading error (rad), wrapped to (-pi, pi].
    pub e2: f64,
    pub e2_dot: f64,
}

impl ErrorState {
    pub fn new(e1: f64, e1_dot: f64, e2: f64, e2_dot: f64) -> Self {
        Self {
            e1,
            e1_dot,
            e2,
            e2_dot,
        }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.e1, self.e1_dot, self.e2, self.e2_dot)
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.e1, self.e1_dot, self.e2, self.e2_dot]
    }

    pub fn is_valid(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite()) && self.e2.abs() < std::f64::consts::PI
    }
}

/// Error state plus the steering angle applied during the previous step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentedState {
    pub error: ErrorState,
    pub u_prev: f64,
}

impl AugmentedState {
    pub fn new(error: ErrorState, u_prev: f64) -> Self {
        Self { error, u_prev }
    }

    pub fn to_vector(&self) -> Vector5<f64> {
        let e = &self.error;
        Vector5::new(e.e1, e.e1_dot, e.e2, e.e2_dot, self.u_prev)
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        Self::new(ErrorState::new(v[0], v[1], v[2], v[3]), v[4])
    }
}

/// Continuous-time error dynamics `x_dot = Ac x + Bc delta + Dc psi_dot_des`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousModel {
    pub ac: Matrix4<f64>,
    pub bc: Vector4<f64>,
    pub dc: Vector4<f64>,
}

/// Discrete, increment-augmented model for one control step:
/// `x+ = Ad x + Bd du + Dd` with `x = [e1, e1_dot, e2, e2_dot, u_prev]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtvMatrices {
    pub ad: Matrix5<f64>,
    pub bd: Vector5<f64>,
    pub dd: Vector5<f64>,
}

impl LtvMatrices {
    pub fn step(&self, x: &Vector5<f64>, du: f64) -> Vector5<f64> {
        self.ad * x + self.bd * du + self.dd
    }

    /// Same model with the path-curvature term replaced.
    pub fn with_disturbance(&self, dd: Vector5<f64>) -> Self {
        Self { dd, ..*self }
    }
}

/// How the continuous model is turned into a discrete one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Exact for piecewise-constant inputs.
    #[default]
    ZeroOrderHold,
    ForwardEuler,
}

/// Linear-tire error dynamics of a bicycle model at constant speed.
pub fn continuous_matrices(p: &VehicleParams) -> Result<ContinuousModel> {
    p.validate()?;
    let (m, iz, lf, lr, vx) = (p.mass, p.iz, p.lf, p.lr, p.vx);
    let cf = 2.0 * p.caf;
    let cr = 2.0 * p.car;

    let a22 = -(cf + cr) / (m * vx);
    let a23 = (cf + cr) / m;
    let a24 = (-cf * lf + cr * lr) / (m * vx);
    let a42 = -(cf * lf - cr * lr) / (iz * vx);
    let a43 = (cf * lf - cr * lr) / iz;
    let a44 = -(cf * lf * lf + cr * lr * lr) / (iz * vx);

    #[rustfmt::skip]
    let ac = Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        0.0, a22, a23, a24,
        0.0, 0.0, 0.0, 1.0,
        0.0, a42, a43, a44,
    );
    let bc = Vector4::new(0.0, cf / m, 0.0, cf * lf / iz);
    let dc = Vector4::new(0.0, a24 - vx, 0.0, a44);
    Ok(ContinuousModel { ac, bc, dc })
}

/// Discretize with sample time `ts` and append the previous-steering state.
pub fn discretize_and_augment(
    model: &ContinuousModel,
    ts: f64,
    psi_dot_des: f64,
    method: Discretization,
) -> Result<LtvMatrices> {
    if !(ts.is_finite() && ts >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sample time must be non-negative, got {ts}"
        )));
    }
    if !psi_dot_des.is_finite() {
        return Err(Error::NonFinite("desired yaw rate"));
    }

    let (a4, b4, d4) = match method {
        Discretization::ForwardEuler => (
            Matrix4::identity() + model.ac * ts,
            model.bc * ts,
            model.dc * (ts * psi_dot_des),
        ),
        Discretization::ZeroOrderHold => {
            // exp([[Ac, Bc, Dc w], [0, 0, 0], [0, 0, 0]] * ts) carries all three blocks.
            let mut big = SMatrix::<f64, 6, 6>::zeros();
            big.fixed_view_mut::<4, 4>(0, 0).copy_from(&model.ac);
            big.fixed_view_mut::<4, 1>(0, 4).copy_from(&model.bc);
            big.fixed_view_mut::<4, 1>(0, 5)
                .copy_from(&(model.dc * psi_dot_des));
            let e = (big * ts).exp();
            (
                e.fixed_view::<4, 4>(0, 0).into_owned(),
                e.fixed_view::<4, 1>(0, 4).into_owned(),
                e.fixed_view::<4, 1>(0, 5).into_owned(),
            )
        }
    };

    let mut ad = Matrix5::zeros();
    ad.fixed_view_mut::<4, 4>(0, 0).copy_from(&a4);
    ad.fixed_view_mut::<4, 1>(0, 4).copy_from(&b4);
    ad[(4, 4)] = 1.0;
    let bd = Vector5::new(b4[0], b4[1], b4[2], b4[3], 1.0);
    let dd = Vector5::new(d4[0], d4[1], d4[2], d4[3], 0.0);
    Ok(LtvMatrices { ad, bd, dd })
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

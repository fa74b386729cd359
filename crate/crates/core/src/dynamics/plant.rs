use serde::{Deserialize, Serialize};

use super::VehicleParams;
use crate::error::{Error, Result};

const GRAVITY: f64 = 9.81;

/// Global-frame state of the simulated vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    /// Lateral velocity in the body frame (m/s).
    pub vy: f64,
    /// Yaw rate (rad/s).
    pub r: f64,
    pub vx: f64,
    /// Front wheel angle actually reached by the actuator (rad).
    pub steer: f64,
}

impl PlantState {
    fn to_array(self) -> [f64; 7] {
        [self.x, self.y, self.psi, self.vy, self.r, self.vx, self.steer]
    }

    fn from_array(a: [f64; 7]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            psi: a[2],
            vy: a[3],
            r: a[4],
            vx: a[5],
            steer: a[6],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TireModel {
    /// Multiplier applied to the nominal cornering stiffness.
    pub stiffness_scale: f64,
    /// Saturate lateral force at `mu * Fz` with a tanh law.
    pub saturation: bool,
    pub mu: f64,
}

impl Default for TireModel {
    fn default() -> Self {
        Self {
            stiffness_scale: 1.0,
            saturation: false,
            mu: 0.9,
        }
    }
}

impl TireModel {
    /// Axle lateral force for slip angle `alpha`; `stiffness` is per tire.
    pub fn force(&self, stiffness: f64, fy_max: f64, alpha: f64) -> f64 {
        let c = 2.0 * stiffness * self.stiffness_scale;
        if self.saturation {
            fy_max * (c * alpha / fy_max).tanh()
        } else {
            c * alpha
        }
    }
}

/// Nonlinear single-track vehicle used as the "true" system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantModel {
    pub vehicle: VehicleParams,
    pub tire: TireModel,
    /// First-order steering actuator time constant (s); zero means ideal.
    pub steer_lag: f64,
    /// Constant external yaw moment (N m).
    pub yaw_moment: f64,
    /// Physical steering limit (rad).
    pub max_steer: f64,
}

impl PlantModel {
    /// Plant whose small-slip behaviour coincides with the nominal model.
    pub fn ideal(vehicle: VehicleParams) -> Self {
        Self {
            vehicle,
            tire: TireModel::default(),
            steer_lag: 0.0,
            yaw_moment: 0.0,
            max_steer: 0.6,
        }
    }

    /// Per-axle saturation force `(front, rear)`.
    pub fn max_forces(&self) -> (f64, f64) {
        let v = &self.vehicle;
        let weight = v.mass * GRAVITY;
        let l = v.wheelbase();
        (
            self.tire.mu * weight * v.lr / l,
            self.tire.mu * weight * v.lf / l,
        )
    }

    /// Axle lateral forces `(front, rear)` at the given body velocities and wheel angle.
    pub fn lateral_forces(&self, vx: f64, vy: f64, r: f64, steer: f64) -> (f64, f64) {
        let v = &self.vehicle;
        let alpha_f = steer - (vy + v.lf * r) / vx;
        let alpha_r = -(vy - v.lr * r) / vx;
        let (fmax_f, fmax_r) = self.max_forces();
        (
            self.tire.force(v.caf, fmax_f, alpha_f),
            self.tire.force(v.car, fmax_r, alpha_r),
        )
    }

    /// Time derivative of the state for steering command `delta`.
    pub fn derivatives(&self, s: &PlantState, delta: f64) -> PlantState {
        let v = &self.vehicle;
        let steer = if self.steer_lag > 0.0 { s.steer } else { delta };
        let (fyf, fyr) = self.lateral_forces(s.vx, s.vy, s.r, steer);
        let (sin_psi, cos_psi) = s.psi.sin_cos();
        PlantState {
            x: s.vx * cos_psi - s.vy * sin_psi,
            y: s.vx * sin_psi + s.vy * cos_psi,
            psi: s.r,
            vy: (fyf * steer.cos() + fyr) / v.mass - s.vx * s.r,
            r: (v.lf * fyf * steer.cos() - v.lr * fyr + self.yaw_moment) / v.iz,
            vx: 0.0,
            steer: if self.steer_lag > 0.0 {
                (delta - s.steer) / self.steer_lag
            } else {
                0.0
            },
        }
    }

    /// One RK4 step of length `ts` holding the command `delta`.
    pub fn step(&self, state: &PlantState, delta: f64, ts: f64) -> Result<PlantState> {
        if !state.is_finite() {
            return Err(Error::NonFinite("plant state"));
        }
        if !delta.is_finite() {
            return Err(Error::NonFinite("steering command"));
        }
        if delta.abs() > self.max_steer {
            return Err(Error::InvalidParameter(format!(
                "steering command {delta} exceeds the physical limit {}",
                self.max_steer
            )));
        }
        let mut s0 = *state;
        if self.steer_lag <= 0.0 {
            s0.steer = delta;
        }
        let x0 = s0.to_array();
        let eval = |x: [f64; 7]| self.derivatives(&PlantState::from_array(x), delta).to_array();
        let offset = |h: f64, k: &[f64; 7]| {
            let mut out = x0;
            for (o, d) in out.iter_mut().zip(k) {
                *o += h * d;
            }
            out
        };
        let k1 = eval(x0);
        let k2 = eval(offset(0.5 * ts, &k1));
        let k3 = eval(offset(0.5 * ts, &k2));
        let k4 = eval(offset(ts, &k3));
        let mut next = x0;
        for i in 0..7 {
            next[i] += ts / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let next = PlantState::from_array(next);
        if !next.is_finite() {
            return Err(Error::NonFinite("plant state"));
        }
        Ok(next)
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, SolverConfig};
use crate::dynamics::{Discretization, PlantModel, TireModel, VehicleParams};
use crate::error::{Error, Result};
use crate::path::{generate_path, PathSpec, ReferencePath};
use crate::prediction::{Bounds, HorizonConfig, QpWeights, ResidueMode};
use crate::residual::ForestConfig;

/// Forest settings; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestSection {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_fraction: f64,
    pub bootstrap: bool,
    pub ridge: f64,
}

impl Default for ForestSection {
    fn default() -> Self {
        let d = ForestConfig::default();
        Self {
            n_trees: d.n_trees,
            max_depth: d.max_depth,
            min_leaf: d.min_leaf,
            feature_fraction: d.feature_fraction,
            bootstrap: d.bootstrap,
            ridge: d.ridge,
        }
    }
}

/// Differences between the simulated vehicle and the nominal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    /// True cornering stiffness as a multiple of the nominal one.
    pub stiffness_scale: f64,
    pub saturation: bool,
    pub mu: f64,
    /// Steering actuator time constant (s); 0 disables the lag.
    pub steer_lag: f64,
    /// Constant external yaw moment (N m).
    pub yaw_moment: f64,
    pub max_steer: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self { stiffness_scale: 0.8, saturation: true, mu: 0.9, steer_lag: 0.05, yaw_moment: 0.0, max_steer: 0.6 }
    }
}

impl PlantSection {
    /// No mismatch at all.
    pub fn ideal() -> Self {
        Self { stiffness_scale: 1.0, saturation: false, steer_lag: 0.0, yaw_moment: 0.0, ..Self::default() }
    }

    pub fn model(&self, vehicle: VehicleParams) -> PlantModel {
        PlantModel {
            vehicle,
            tire: TireModel { stiffness_scale: self.stiffness_scale, saturation: self.saturation, mu: self.mu },
            steer_lag: self.steer_lag,
            yaw_moment: self.yaw_moment,
            max_steer: self.max_steer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Lateral offset of the vehicle at the start (m, left positive).
    pub initial_offset: f64,
    /// Heading offset at the start (rad).
    pub initial_heading: f64,
    /// Runs end when |e1| exceeds this (m).
    pub corridor: f64,
    /// Reference path sample spacing (m).
    pub ds: f64,
    pub kappa_max: f64,
    pub max_steps: usize,
    pub discretization: Discretization,
    /// Record wall-clock step times in logs (makes logs non-reproducible).
    pub record_timing: bool,
    /// Half-width (rad) of the uniform steering increment added during
    /// data collection; 0 disables it. Without it the increments are a
    /// function of the state and their coefficients cannot be identified.
    pub collect_dither: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            initial_offset: 0.0,
            initial_heading: 0.0,
            corridor: 2.0,
            ds: 0.1,
            kappa_max: 0.2,
            max_steps: 50_000,
            discretization: Discretization::ZeroOrderHold,
            record_timing: false,
            collect_dither: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Paths driven to collect training data.
    pub train: Vec<String>,
    /// Held-out evaluation paths.
    pub eval: Vec<String>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            train: vec![
                "S20 L30:90 S15 R35:120 S10 L40:150 S20 R50:60 L30:100 S15 R35:170 S10 L45:80 R40:90 S20 L60:120 R30:90 S25".into(),
                "S15 R40:100 S10 L35:140 S20 R30:80 L50:90 S10 R45:150 S15 L30:70 R60:110 S20".into(),
                "S25 L45:60 R35:90 S10 L30:120 S15 R40:160 L55:100 S10 R30:70 S20 L35:130 S15".into(),
                "S20 R30:120 S10 L40:80 R50:140 S15 L35:100 R45:60 S20 L30:160 S10 R35:90 S20".into(),
            ],
            eval: vec![
                "S40 L35:90 S40".into(),
                "S30 R30:180 S30".into(),
                "S20 L40:60 S10 R35:120 S10 L45:90 S20".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub residue_mode: ResidueMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub vehicle: VehicleParams,
    pub horizon: HorizonConfig,
    pub weights: QpWeights,
    pub bounds: Bounds,
    pub forest: ForestSection,
    pub plant: PlantSection,
    pub sim: SimSection,
    pub paths: PathsSection,
    pub qp: SolverConfig,
    pub controller: ControllerSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.vehicle.validate().map_err(wrap)?;
        self.horizon.validate().map_err(wrap)?;
        self.weights.validate().map_err(wrap)?;
        self.bounds.validate().map_err(wrap)?;
        self.forest_config().validate().map_err(wrap)?;
        let p = &self.plant;
        if !(p.stiffness_scale > 0.0 && p.mu > 0.0 && p.steer_lag >= 0.0 && p.max_steer > 0.0 && p.yaw_moment.is_finite()) {
            return Err(Error::Config("plant parameters out of range".into()));
        }
        let s = &self.sim;
        if !(s.corridor > 0.0 && s.ds > 0.0 && s.kappa_max > 0.0 && s.initial_offset.is_finite() && s.initial_heading.is_finite() && s.collect_dither >= 0.0) {
            return Err(Error::Config("sim parameters out of range".into()));
        }
        for spec in self.paths.train.iter().chain(&self.paths.eval) {
            spec.parse::<PathSpec>().map_err(wrap)?;
        }
        Ok(())
    }

    pub fn forest_config(&self) -> ForestConfig {
        let f = &self.forest;
        ForestConfig {
            n_trees: f.n_trees,
            max_depth: f.max_depth,
            min_leaf: f.min_leaf,
            feature_fraction: f.feature_fraction,
            bootstrap: f.bootstrap,
            ridge: f.ridge,
            seed: self.seed,
        }
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            vehicle: self.vehicle,
            horizon: self.horizon,
            weights: self.weights,
            bounds: self.bounds,
            solver: self.qp,
            discretization: self.sim.discretization,
            residue_mode: self.controller.residue_mode,
        }
    }

    pub fn plant_model(&self) -> PlantModel {
        self.plant.model(self.vehicle)
    }

    pub fn build_path(&self, spec: &str) -> Result<ReferencePath> {
        generate_path(&spec.parse()?, self.sim.ds, self.sim.kappa_max)
    }
}

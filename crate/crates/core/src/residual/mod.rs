//! Residual model: regression trees route on past error states, and each leaf
//! carries a linear model in the steering increments of the same window.
//!
//! Because the leaf models are affine in the increments, a forest query for a
//! given (estimated) state window yields coefficients that slot straight into
//! the condensed QP.

mod dataset;
mod forest;
mod leaf;
mod metrics;
mod samples;
mod tree;

pub use dataset::{dataset_from_csv, dataset_to_csv, read_dataset, write_dataset};
pub use forest::{fit_forest, ForestConfig, LeafQuery, ResidualForest, Standardization};
pub use leaf::fit_leaf_linear;
pub use metrics::{fit_metrics, FitMetrics};
pub use samples::build_samples;
pub use tree::{fit_tree, Leaf, TreeNode, TreeParams};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Number of residual outputs (one per error state).
pub const NUM_OUTPUTS: usize = 4;

/// Per-leaf coefficients, `(N+1) x 4`: intercept row, then one row per window
/// increment (oldest first).
pub type LeafCoefficients = DMatrix<f64>;

/// Regression input split into routing features and control features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    /// `N` error states, flattened `[e1, e1_dot, e2, e2_dot]`, oldest first.
    pub zn: Vec<f64>,
    /// `N` steering increments, oldest first.
    pub zc: Vec<f64>,
}

impl FeatureWindow {
    pub fn new(zn: Vec<f64>, zc: Vec<f64>) -> Result<Self> {
        if zn.len() != NUM_OUTPUTS * zc.len() || zc.is_empty() {
            return Err(Error::Dimension(format!(
                "window needs 4N state features and N increments, got {} and {}",
                zn.len(),
                zc.len()
            )));
        }
        if zn.iter().chain(&zc).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature window"));
        }
        Ok(Self { zn, zc })
    }

    /// Window length `N`.
    pub fn len(&self) -> usize {
        self.zc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zc.is_empty()
    }
}

/// One training pair: a window and the one-step residue that followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    /// Step index in the originating log.
    pub k: usize,
    pub window: FeatureWindow,
    pub eps: [f64; NUM_OUTPUTS],
}

/// Evaluate `theta' [1; zc]`.
pub fn apply_coefficients(theta: &LeafCoefficients, zc: &[f64]) -> [f64; NUM_OUTPUTS] {
    let mut out = [0.0; NUM_OUTPUTS];
    for (o, v) in out.iter_mut().enumerate() {
        let mut acc = theta[(0, o)];
        for (m, z) in zc.iter().enumerate() {
            acc += theta[(m + 1, o)] * z;
        }
        *v = acc;
    }
    out
}

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, TrainView};
use super::{apply_coefficients, FeatureWindow, LeafCoefficients, ResidualSample, TreeNode, TreeParams, NUM_OUTPUTS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_fraction: f64,
    pub bootstrap: bool,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 20,
            max_depth: 6,
            min_leaf: 34,
            feature_fraction: 0.125,
            bootstrap: true,
            ridge: 1e-3,
            seed: 42,
        }
    }
}

impl ForestConfig {
    /// Checks that do not depend on the window length.
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParameter("forest needs at least one tree".into()));
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!("feature_fraction {} not in (0, 1]", self.feature_fraction)));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::InvalidParameter(format!("ridge {} must be finite and nonnegative", self.ridge)));
        }
        Ok(())
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            feature_fraction: self.feature_fraction,
            ridge: self.ridge,
        }
    }
}

/// Per-coordinate affine map applied to `zn` before routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Population mean and standard deviation; constant coordinates get scale 1.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let n = rows.clone().count().max(1) as f64;
        let dim = rows.clone().next().map_or(0, <[f64]>::len);
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let scale = var.into_iter().map(|s| (s / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, zn: &[f64]) -> Vec<f64> {
        zn.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Result of routing one window through every tree.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafQuery {
    /// Mean of the per-tree leaf coefficients.
    pub theta: LeafCoefficients,
    /// Mean of the per-tree leaf label means.
    pub mean: [f64; NUM_OUTPUTS],
    /// Split nodes traversed over all trees.
    pub nodes_visited: usize,
    /// Leaf path code per tree.
    pub leaf_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualForest {
    pub config: ForestConfig,
    pub standardization: Standardization,
    pub trees: Vec<TreeNode>,
}

/// Fit `config.n_trees` trees, in parallel, each on its own rng stream.
pub fn fit_forest(samples: &[ResidualSample], config: &ForestConfig) -> Result<ResidualForest> {
    config.validate()?;
    let Some(first) = samples.first() else {
        return Err(Error::InsufficientData("cannot fit a forest on zero samples".into()));
    };
    let n = first.window.len();
    if samples.iter().any(|s| s.window.len() != n) {
        return Err(Error::Dimension("samples have mixed window lengths".into()));
    }
    if config.min_leaf < n + 2 {
        return Err(Error::InvalidParameter(format!("min_leaf {} must be at least N + 2 = {}", config.min_leaf, n + 2)));
    }
    if samples.len() < config.min_leaf {
        return Err(Error::InsufficientData(format!(
            "{} samples is fewer than min_leaf {}",
            samples.len(),
            config.min_leaf
        )));
    }

    let standardization = Standardization::fit(samples.iter().map(|s| s.window.zn.as_slice()));
    let zn: Vec<Vec<f64>> = samples.iter().map(|s| standardization.apply(&s.window.zn)).collect();
    let view = TrainView::new(
        zn.iter().map(Vec::as_slice).collect(),
        samples.iter().map(|s| s.window.zc.as_slice()).collect(),
        samples.iter().map(|s| s.eps).collect(),
    );
    let params = config.tree_params();
    let m = samples.len();

    let fit_one = |t: usize| -> Result<TreeNode> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(t as u64);
        let mut idx: Vec<usize> = if config.bootstrap {
            let mut v: Vec<usize> = (0..m).map(|_| rng.gen_range(0..m)).collect();
            v.sort_unstable();
            v
        } else {
            (0..m).collect()
        };
        grow_tree(&view, &mut idx, &params, &mut rng)
    };

    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(config.n_trees);
    let mut slots: Vec<Option<Result<TreeNode>>> = (0..config.n_trees).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in slots.chunks_mut(config.n_trees.div_ceil(workers)).enumerate() {
            let base = w * config.n_trees.div_ceil(workers);
            let fit_one = &fit_one;
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(fit_one(base + i));
                }
            });
        }
    });
    let trees = slots.into_iter().map(|s| s.expect("every tree slot is filled")).collect::<Result<Vec<_>>>()?;
    Ok(ResidualForest { config: *config, standardization, trees })
}

impl ResidualForest {
    /// A single-leaf forest returning `theta` everywhere.
    pub fn constant(window: usize, theta: LeafCoefficients) -> Result<Self> {
        if theta.nrows() != window + 1 || theta.ncols() != NUM_OUTPUTS {
            return Err(Error::Dimension(format!("theta must be {}x4", window + 1)));
        }
        let leaf = super::Leaf { theta, n_samples: 0, mean: [0.0; NUM_OUTPUTS] };
        Ok(Self {
            config: ForestConfig { n_trees: 1, ..ForestConfig::default() },
            standardization: Standardization::identity(NUM_OUTPUTS * window),
            trees: vec![TreeNode::Leaf(leaf)],
        })
    }

    /// Window length `N` the forest was trained on.
    pub fn window(&self) -> usize {
        self.standardization.mean.len() / NUM_OUTPUTS
    }

    pub fn predict_leaf(&self, zn: &[f64]) -> Result<LeafQuery> {
        if zn.len() != self.standardization.mean.len() {
            return Err(Error::Dimension(format!(
                "query has {} state features, forest expects {}",
                zn.len(),
                self.standardization.mean.len()
            )));
        }
        let x = self.standardization.apply(zn);
        let n = self.window();
        let mut theta = LeafCoefficients::zeros(n + 1, NUM_OUTPUTS);
        let mut mean = [0.0; NUM_OUTPUTS];
        let mut nodes_visited = 0;
        let mut leaf_ids = Vec::with_capacity(self.trees.len());
        for tree in &self.trees {
            let route = tree.route(&x);
            theta += &route.leaf.theta;
            for o in 0..NUM_OUTPUTS {
                mean[o] += route.leaf.mean[o];
            }
            nodes_visited += route.visited;
            leaf_ids.push(route.code);
        }
        let count = self.trees.len() as f64;
        theta /= count;
        mean.iter_mut().for_each(|m| *m /= count);
        Ok(LeafQuery { theta, mean, nodes_visited, leaf_ids })
    }

    /// Leaf-linear residue prediction for one window.
    pub fn predict_residue(&self, window: &FeatureWindow) -> Result<[f64; NUM_OUTPUTS]> {
        let q = self.predict_leaf(&window.zn)?;
        Ok(apply_coefficients(&q.theta, &window.zc))
    }

    /// Leaf-mean prediction (ignores the increments).
    pub fn predict_leaf_mean(&self, window: &FeatureWindow) -> Result<[f64; NUM_OUTPUTS]> {
        Ok(self.predict_leaf(&window.zn)?.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let forest: Self = serde_json::from_str(text)?;
        forest.check()?;
        Ok(forest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        let dim = self.standardization.mean.len();
        if dim == 0 || dim % NUM_OUTPUTS != 0 || self.standardization.scale.len() != dim {
            return Err(Error::Parse("model standardization has inconsistent lengths".into()));
        }
        if self.trees.is_empty() {
            return Err(Error::Parse("model has no trees".into()));
        }
        let n = self.window();
        for tree in &self.trees {
            if tree.max_feature().is_some_and(|f| f >= dim) {
                return Err(Error::Parse("split feature out of range".into()));
            }
            if tree.leaves().iter().any(|l| l.theta.nrows() != n + 1) {
                return Err(Error::Parse(format!("leaf coefficients must have {} rows", n + 1)));
            }
        }
        Ok(())
    }
}

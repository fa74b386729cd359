use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{fit_leaf_linear, LeafCoefficients, ResidualSample, NUM_OUTPUTS};
use crate::error::{Error, Result};

/// Growth controls shared by single trees and forests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of routing features drawn at each split.
    pub feature_fraction: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    #[serde(serialize_with = "ser_theta", deserialize_with = "de_theta")]
    pub theta: LeafCoefficients,
    #[serde(rename = "n")]
    pub n_samples: usize,
    pub mean: [f64; NUM_OUTPUTS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        #[serde(rename = "f")]
        feature: usize,
        #[serde(rename = "t")]
        threshold: f64,
        #[serde(rename = "l")]
        left: Box<TreeNode>,
        #[serde(rename = "r")]
        right: Box<TreeNode>,
    },
    Leaf(Leaf),
}

fn ser_theta<S: Serializer>(theta: &LeafCoefficients, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = theta.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

fn de_theta<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<LeafCoefficients, D::Error> {
    let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
    let ncols = rows.first().map_or(0, Vec::len);
    if ncols != NUM_OUTPUTS || rows.iter().any(|r| r.len() != ncols) {
        return Err(serde::de::Error::custom("theta must be a list of rows with 4 entries each"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Where a query ended up in one tree.
#[derive(Debug, Clone, Copy)]
pub struct Route<'a> {
    pub leaf: &'a Leaf,
    /// Split nodes traversed.
    pub visited: usize,
    /// Heap-style path code, unique per leaf (root = 1, left child = 2c, right = 2c+1).
    pub code: u64,
}

impl TreeNode {
    pub fn route(&self, x: &[f64]) -> Route<'_> {
        let mut node = self;
        let mut visited = 0;
        let mut code = 1u64;
        loop {
            match node {
                TreeNode::Leaf(leaf) => return Route { leaf, visited, code },
                TreeNode::Split { feature, threshold, left, right } => {
                    let go_right = x[*feature] > *threshold;
                    node = if go_right { right } else { left };
                    code = 2 * code + go_right as u64;
                    visited += 1;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<&Leaf> {
        match self {
            TreeNode::Leaf(l) => vec![l],
            TreeNode::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }

    pub(crate) fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf(_) => None,
            TreeNode::Split { feature, left, right, .. } => {
                Some((*feature).max(left.max_feature().unwrap_or(0)).max(right.max_feature().unwrap_or(0)))
            }
        }
    }
}

/// Training data seen by the tree grower.
pub(crate) struct TrainView<'a> {
    pub zn: Vec<&'a [f64]>,
    pub zc: Vec<&'a [f64]>,
    pub eps: Vec<[f64; NUM_OUTPUTS]>,
    /// Labels centred and scaled to unit variance per output (zero-variance outputs dropped).
    pub scaled: Vec<[f64; NUM_OUTPUTS]>,
}

impl<'a> TrainView<'a> {
    pub fn new(zn: Vec<&'a [f64]>, zc: Vec<&'a [f64]>, eps: Vec<[f64; NUM_OUTPUTS]>) -> Self {
        let n = eps.len().max(1) as f64;
        let mut mean = [0.0; NUM_OUTPUTS];
        for e in &eps {
            for o in 0..NUM_OUTPUTS {
                mean[o] += e[o] / n;
            }
        }
        let mut var = [0.0; NUM_OUTPUTS];
        for e in &eps {
            for o in 0..NUM_OUTPUTS {
                var[o] += (e[o] - mean[o]).powi(2) / n;
            }
        }
        let scaled = eps
            .iter()
            .map(|e| {
                let mut s = [0.0; NUM_OUTPUTS];
                for o in 0..NUM_OUTPUTS {
                    if var[o] > 0.0 {
                        s[o] = (e[o] - mean[o]) / var[o].sqrt();
                    }
                }
                s
            })
            .collect();
        Self { zn, zc, eps, scaled }
    }

    pub fn num_features(&self) -> usize {
        self.zn.first().map_or(0, |z| z.len())
    }
}

/// Grow one CART tree on `samples`, routing on the raw `zn` features.
pub fn fit_tree<R: Rng>(samples: &[ResidualSample], params: &TreeParams, rng: &mut R) -> Result<TreeNode> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("cannot fit a tree on zero samples".into()));
    }
    let view = TrainView::new(
        samples.iter().map(|s| s.window.zn.as_slice()).collect(),
        samples.iter().map(|s| s.window.zc.as_slice()).collect(),
        samples.iter().map(|s| s.eps).collect(),
    );
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    grow_tree(&view, &mut idx, params, rng)
}

pub(crate) fn grow_tree<R: Rng>(view: &TrainView<'_>, idx: &mut [usize], params: &TreeParams, rng: &mut R) -> Result<TreeNode> {
    if idx.is_empty() {
        return Err(Error::InsufficientData("cannot fit a tree on zero samples".into()));
    }
    if params.min_leaf == 0 || !(params.feature_fraction > 0.0 && params.feature_fraction <= 1.0) {
        return Err(Error::InvalidParameter("min_leaf must be positive and feature_fraction in (0, 1]".into()));
    }
    Ok(grow(view, idx, 0, params, rng))
}

fn make_leaf(view: &TrainView<'_>, idx: &[usize], ridge: f64) -> TreeNode {
    let zc: Vec<&[f64]> = idx.iter().map(|&i| view.zc[i]).collect();
    let eps: Vec<[f64; NUM_OUTPUTS]> = idx.iter().map(|&i| view.eps[i]).collect();
    let mut mean = [0.0; NUM_OUTPUTS];
    for e in &eps {
        for o in 0..NUM_OUTPUTS {
            mean[o] += e[o];
        }
    }
    for m in &mut mean {
        *m /= eps.len() as f64;
    }
    TreeNode::Leaf(Leaf { theta: fit_leaf_linear(&zc, &eps, ridge), n_samples: idx.len(), mean })
}

fn constant_labels(view: &TrainView<'_>, idx: &[usize]) -> bool {
    let first = view.eps[idx[0]];
    idx.iter().all(|&i| view.eps[i] == first)
}

fn sse_of(sum: &[f64; NUM_OUTPUTS], sum_sq: f64, count: f64) -> f64 {
    sum_sq - sum.iter().map(|s| s * s).sum::<f64>() / count
}

struct Split {
    feature: usize,
    threshold: f64,
    sse: f64,
}

fn best_split(view: &TrainView<'_>, idx: &[usize], features: &[usize], min_leaf: usize) -> Option<Split> {
    let m = idx.len();
    let mut best: Option<Split> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(m);
    for &f in features {
        order.clear();
        order.extend(idx.iter().map(|&i| (view.zn[i][f], i)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut total = [0.0; NUM_OUTPUTS];
        let mut total_sq = 0.0;
        for &(_, i) in &order {
            for o in 0..NUM_OUTPUTS {
                let y = view.scaled[i][o];
                total[o] += y;
                total_sq += y * y;
            }
        }
        let mut left = [0.0; NUM_OUTPUTS];
        let mut left_sq = 0.0;
        for pos in 1..m {
            let i = order[pos - 1].1;
            for o in 0..NUM_OUTPUTS {
                let y = view.scaled[i][o];
                left[o] += y;
                left_sq += y * y;
            }
            if pos < min_leaf || m - pos < min_leaf {
                continue;
            }
            let (lo, hi) = (order[pos - 1].0, order[pos].0);
            if lo >= hi {
                continue;
            }
            let mut right = [0.0; NUM_OUTPUTS];
            for o in 0..NUM_OUTPUTS {
                right[o] = total[o] - left[o];
            }
            let sse = sse_of(&left, left_sq, pos as f64) + sse_of(&right, total_sq - left_sq, (m - pos) as f64);
            if best.as_ref().is_none_or(|b| sse < b.sse) {
                let mid = 0.5 * (lo + hi);
                let threshold = if mid < hi { mid } else { lo };
                best = Some(Split { feature: f, threshold, sse });
            }
        }
    }
    best
}

fn grow<R: Rng>(view: &TrainView<'_>, idx: &mut [usize], depth: usize, params: &TreeParams, rng: &mut R) -> TreeNode {
    let m = idx.len();
    if depth >= params.max_depth || m < 2 * params.min_leaf || constant_labels(view, idx) {
        return make_leaf(view, idx, params.ridge);
    }
    let nf = view.num_features();
    let k = ((params.feature_fraction * nf as f64).ceil() as usize).clamp(1, nf);
    let mut features: Vec<usize> = if k == nf { (0..nf).collect() } else { sample(rng, nf, k).into_vec() };
    features.sort_unstable();

    let Some(split) = best_split(view, idx, &features, params.min_leaf) else {
        return make_leaf(view, idx, params.ridge);
    };
    let mut parent = [0.0; NUM_OUTPUTS];
    let mut parent_sq = 0.0;
    for &i in idx.iter() {
        for o in 0..NUM_OUTPUTS {
            parent[o] += view.scaled[i][o];
            parent_sq += view.scaled[i][o].powi(2);
        }
    }
    if !(split.sse < sse_of(&parent, parent_sq, m as f64)) {
        return make_leaf(view, idx, params.ridge);
    }

    // stable partition keeps sample order deterministic
    let (mut l, mut r): (Vec<usize>, Vec<usize>) =
        idx.iter().partition(|&&i| view.zn[i][split.feature] <= split.threshold);
    let left = grow(view, &mut l, depth + 1, params, rng);
    let right = grow(view, &mut r, depth + 1, params, rng);
    TreeNode::Split { feature: split.feature, threshold: split.threshold, left: Box::new(left), right: Box::new(right) }
}

use nalgebra::{DMatrix, DVector};

use super::{LeafCoefficients, NUM_OUTPUTS};

/// Least-squares fit of `eps ~ theta' [1; zc]` on the samples of one leaf.
///
/// The intercept is unpenalized. Slopes are shrunk by `ridge` times the mean
/// centred energy of the control features in this leaf, which makes the
/// shrinkage independent of the units of the increments. The centred normal
/// equations are solved by Cholesky.
pub fn fit_leaf_linear(zc: &[&[f64]], eps: &[[f64; NUM_OUTPUTS]], ridge: f64) -> LeafCoefficients {
    let m = zc.len();
    assert!(m > 0 && m == eps.len(), "leaf fit needs matching, nonempty inputs");
    let p = zc[0].len();
    let inv = 1.0 / m as f64;

    let mut xbar = DVector::<f64>::zeros(p);
    let mut ybar = [0.0; NUM_OUTPUTS];
    for (x, y) in zc.iter().zip(eps) {
        for j in 0..p {
            xbar[j] += x[j];
        }
        for o in 0..NUM_OUTPUTS {
            ybar[o] += y[o];
        }
    }
    xbar *= inv;
    for v in &mut ybar {
        *v *= inv;
    }

    let xc = DMatrix::from_fn(m, p, |i, j| zc[i][j] - xbar[j]);
    let yc = DMatrix::from_fn(m, NUM_OUTPUTS, |i, o| eps[i][o] - ybar[o]);
    let mut gram = xc.transpose() * &xc;
    let energy = gram.trace() / p as f64;

    let mut theta = DMatrix::zeros(p + 1, NUM_OUTPUTS);
    let slopes = if energy > 0.0 {
        let shrink = ridge.max(f64::MIN_POSITIVE) * energy;
        for j in 0..p {
            gram[(j, j)] += shrink;
        }
        let rhs = xc.transpose() * &yc;
        match gram.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            // Only reachable with a vanishing ridge on collinear features.
            None => gram.svd(true, true).solve(&rhs, 1e-14).unwrap_or_else(|_| DMatrix::zeros(p, NUM_OUTPUTS)),
        }
    } else {
        DMatrix::zeros(p, NUM_OUTPUTS)
    };

    for o in 0..NUM_OUTPUTS {
        let mut intercept = ybar[o];
        for j in 0..p {
            intercept -= xbar[j] * slopes[(j, o)];
            theta[(j + 1, o)] = slopes[(j, o)];
        }
        theta[(0, o)] = intercept;
    }
    theta
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Largest absolute error.
    pub me: f64,
}

pub fn fit_metrics(y: &[f64], y_hat: &[f64]) -> Result<FitMetrics> {
    if y.is_empty() {
        return Err(Error::InsufficientData("metrics need at least one value".into()));
    }
    if y.len() != y_hat.len() {
        return Err(Error::Dimension(format!("{} targets vs {} predictions", y.len(), y_hat.len())));
    }
    let n = y.len() as f64;
    let (mut abs, mut sq, mut me) = (0.0, 0.0, 0.0f64);
    for (a, b) in y.iter().zip(y_hat) {
        let e = (a - b).abs();
        abs += e;
        sq += e * e;
        me = me.max(e);
    }
    Ok(FitMetrics { mae: abs / n, rmse: (sq / n).sqrt(), me })
}

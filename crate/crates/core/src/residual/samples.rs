use super::{FeatureWindow, ResidualSample, NUM_OUTPUTS};
use crate::dynamics::{AugmentedState, LtvMatrices};
use crate::error::{Error, Result};
use crate::harness::SimLog;

/// Turn a closed-loop log into (window, one-step residue) pairs.
///
/// `ltvs[k]` is the nominal model used at step `k`. The residue at step `k`
/// is the measured `x_{k+1}` minus the nominal prediction from `x_k` and the
/// increment applied at `k`, restricted to the error states; its window holds
/// the `n` states and increments ending at `k`.
pub fn build_samples(log: &SimLog, ltvs: &[LtvMatrices], n: usize) -> Result<Vec<ResidualSample>> {
    let steps = &log.records;
    if n == 0 {
        return Err(Error::InvalidParameter("window length must be positive".into()));
    }
    if steps.len() < n + 1 {
        return Err(Error::InsufficientData(format!(
            "log has {} steps, need at least {}",
            steps.len(),
            n + 1
        )));
    }
    if ltvs.len() + 1 < steps.len() {
        return Err(Error::Dimension(format!(
            "need a model for each of the first {} steps, got {}",
            steps.len() - 1,
            ltvs.len()
        )));
    }

    let mut out = Vec::with_capacity(steps.len() - n);
    for k in (n - 1)..(steps.len() - 1) {
        let u_prev = if k == 0 { log.initial_steer } else { steps[k - 1].u };
        let x = AugmentedState::new(steps[k].error, u_prev).to_vector();
        let pred = ltvs[k].step(&x, steps[k].du);
        let meas = steps[k + 1].error.as_array();
        let mut eps = [0.0; NUM_OUTPUTS];
        for o in 0..NUM_OUTPUTS {
            eps[o] = meas[o] - pred[o];
        }
        if eps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("residual label"));
        }
        let first = k + 1 - n;
        let zn = steps[first..=k].iter().flat_map(|r| r.error.as_array()).collect();
        let zc = steps[first..=k].iter().map(|r| r.du).collect();
        out.push(ResidualSample { k, window: FeatureWindow::new(zn, zc)?, eps });
    }
    Ok(out)
}

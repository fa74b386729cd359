use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SimLog;
use crate::error::{Error, Result};
use crate::residual::{fit_metrics, FitMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub e1: FitMetrics,
    pub e2: FitMetrics,
    /// Reduction of e1 MAE against a baseline, in percent.
    pub pe_percent: Option<f64>,
    pub timing: Timing,
}

/// `100 (base - value) / base`.
pub fn percentage_improvement(base: f64, value: f64) -> f64 {
    if base == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        100.0 * (base - value) / base
    }
}

fn channel(logs: &[&SimLog], pick: impl Fn(&super::StepRecord) -> f64) -> Result<FitMetrics> {
    let y: Vec<f64> = logs.iter().flat_map(|l| l.records.iter().map(&pick)).collect();
    fit_metrics(&y, &vec![0.0; y.len()])
}

/// Tracking metrics pooled over several logs.
pub fn evaluate_many(logs: &[&SimLog], baseline: Option<&[&SimLog]>) -> Result<MetricsReport> {
    if logs.iter().all(|l| l.is_empty()) {
        return Err(Error::InsufficientData("log has no steps".into()));
    }
    let e1 = channel(logs, |r| r.error.e1)?;
    let e2 = channel(logs, |r| r.error.e2)?;
    let pe_percent = match baseline {
        Some(base) => {
            if base.iter().all(|l| l.is_empty()) {
                return Err(Error::InsufficientData("baseline log has no steps".into()));
            }
            Some(percentage_improvement(channel(base, |r| r.error.e1)?.mae, e1.mae))
        }
        None => None,
    };
    let times: Vec<f64> = logs.iter().flat_map(|l| l.records.iter().map(|r| r.step_ms)).collect();
    let timing = Timing {
        mean_ms: times.iter().sum::<f64>() / times.len() as f64,
        max_ms: times.iter().copied().fold(0.0, f64::max),
    };
    Ok(MetricsReport { e1, e2, pe_percent, timing })
}

pub fn evaluate(log: &SimLog, baseline: Option<&SimLog>) -> Result<MetricsReport> {
    match baseline {
        Some(b) => evaluate_many(&[log], Some(&[b])),
        None => evaluate_many(&[log], None),
    }
}

/// Side-by-side table of a baseline and a candidate run.
pub fn compare_table(baseline: &SimLog, candidate: &SimLog) -> Result<String> {
    let base = evaluate(baseline, None)?;
    let cand = evaluate(candidate, Some(baseline))?;
    let mut out = String::from("metric,baseline,candidate\n");
    for (name, b, c) in [("e1", base.e1, cand.e1), ("e2", base.e2, cand.e2)] {
        writeln!(out, "{name}_mae,{:.6e},{:.6e}", b.mae, c.mae).unwrap();
        writeln!(out, "{name}_rmse,{:.6e},{:.6e}", b.rmse, c.rmse).unwrap();
        writeln!(out, "{name}_me,{:.6e},{:.6e}", b.me, c.me).unwrap();
    }
    writeln!(out, "pe_percent,,{:.4}", cand.pe_percent.unwrap_or(0.0)).unwrap();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ErrorState;
    use crate::harness::StepRecord;

    fn log_with_e1(values: &[f64]) -> SimLog {
        let mut log = SimLog::new(0.02);
        for (k, v) in values.iter().enumerate() {
            log.records.push(StepRecord::with_error(k as f64 * 0.02, ErrorState::new(*v, 0.0, 0.0, 0.0)));
        }
        log
    }

    #[test]
    fn zero_error_log() {
        let r = evaluate(&log_with_e1(&[0.0; 10]), None).unwrap();
        assert_eq!((r.e1.mae, r.e1.rmse, r.e1.me), (0.0, 0.0, 0.0));
        assert_eq!(r.pe_percent, None);
    }

    #[test]
    fn self_comparison_is_zero_percent() {
        let log = log_with_e1(&[0.1, -0.2, 0.05]);
        assert_eq!(evaluate(&log, Some(&log)).unwrap().pe_percent, Some(0.0));
    }

    #[test]
    fn three_row_example() {
        let r = evaluate(&log_with_e1(&[0.01, -0.02, 0.03]), None).unwrap();
        assert!((r.e1.mae - 0.02).abs() < 1e-15);
        assert!((r.e1.me - 0.03).abs() < 1e-15);
        assert!((r.e1.rmse - (0.0014f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn improvement_and_table() {
        let base = log_with_e1(&[0.2, -0.2]);
        let better = log_with_e1(&[0.1, -0.05]);
        let r = evaluate(&better, Some(&base)).unwrap();
        assert!((r.pe_percent.unwrap() - 62.5).abs() < 1e-12);
        let table = compare_table(&base, &better).unwrap();
        assert!(table.ends_with("pe_percent,,62.5000\n"), "{table}");
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(evaluate(&SimLog::new(0.02), None).is_err());
        let log = log_with_e1(&[0.1]);
        assert!(evaluate(&log, Some(&SimLog::new(0.02))).is_err());
    }

    #[test]
    fn json_shape() {
        let r = evaluate(&log_with_e1(&[0.1]), None).unwrap();
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        assert!(v["e1"]["mae"].is_number() && v["timing"]["max_ms"].is_number());
        assert!(v["pe_percent"].is_null());
    }
}

use std::fmt::Write as _;
use std::path::Path;

use crate::dynamics::ErrorState;
use crate::error::{Error, Result};
use crate::qp::QpStatus;

pub const LOG_COLUMNS: [&str; 20] = [
    "t", "X", "Y", "psi", "vy", "r", "e1", "e1d", "e2", "e2d", "du", "u", "sigma", "qp_status", "qp_iters", "step_ms",
    "eps_pred_0", "eps_pred_1", "eps_pred_2", "eps_pred_3",
];

/// One control step of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub vy: f64,
    pub r: f64,
    pub error: ErrorState,
    /// Applied steering increment.
    pub du: f64,
    /// Applied steering angle.
    pub u: f64,
    pub sigma: f64,
    pub qp_status: QpStatus,
    pub qp_iters: usize,
    pub step_ms: f64,
    /// Residue predicted for the first horizon row.
    pub eps_pred: [f64; 4],
}

impl StepRecord {
    pub fn with_error(t: f64, error: ErrorState) -> Self {
        Self {
            t,
            x: 0.0,
            y: 0.0,
            psi: 0.0,
            vy: 0.0,
            r: 0.0,
            error,
            du: 0.0,
            u: 0.0,
            sigma: 0.0,
            qp_status: QpStatus::Solved,
            qp_iters: 0,
            step_ms: 0.0,
            eps_pred: [0.0; 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub ts: f64,
    /// Steering angle before the first step.
    pub initial_steer: f64,
    pub records: Vec<StepRecord>,
}

impl SimLog {
    pub fn new(ts: f64) -> Self {
        Self { ts, initial_steer: 0.0, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = LOG_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let e = &r.error;
            let floats = [r.t, r.x, r.y, r.psi, r.vy, r.r, e.e1, e.e1_dot, e.e2, e.e2_dot, r.du, r.u, r.sigma];
            let row: Vec<String> = floats.iter().map(|v| format!("{v:?}")).collect();
            write!(out, "{},{},{},{:?}", row.join(","), r.qp_status.code(), r.qp_iters, r.step_ms).unwrap();
            for v in r.eps_pred {
                write!(out, ",{v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parse a log; `ts` and the initial steering are recovered from the rows.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head = lines.next().ok_or_else(|| Error::Parse("log is empty".into()))?;
        let cols: Vec<&str> = head.split(',').map(str::trim).collect();
        if cols != LOG_COLUMNS {
            return Err(Error::Parse("unexpected log header".into()));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let bad = |what: &str| Error::Parse(format!("log row {}: {what}", i + 2));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != LOG_COLUMNS.len() {
                return Err(bad("wrong field count"));
            }
            let num = |j: usize| f[j].parse::<f64>().map_err(|e| bad(&e.to_string()));
            let code: u8 = f[13].parse().map_err(|_| bad("bad qp_status"))?;
            records.push(StepRecord {
                t: num(0)?,
                x: num(1)?,
                y: num(2)?,
                psi: num(3)?,
                vy: num(4)?,
                r: num(5)?,
                error: ErrorState::new(num(6)?, num(7)?, num(8)?, num(9)?),
                du: num(10)?,
                u: num(11)?,
                sigma: num(12)?,
                qp_status: QpStatus::from_code(code).ok_or_else(|| bad("bad qp_status"))?,
                qp_iters: f[14].parse().map_err(|_| bad("bad qp_iters"))?,
                step_ms: num(15)?,
                eps_pred: [num(16)?, num(17)?, num(18)?, num(19)?],
            });
        }
        let ts = if records.len() > 1 { records[1].t - records[0].t } else { 0.0 };
        let initial_steer = records.first().map_or(0.0, |r| r.u - r.du);
        Ok(Self { ts, initial_steer, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

use std::fmt::Write as _;
use std::path::Path;

use super::{FeatureWindow, ResidualSample, NUM_OUTPUTS};
use crate::error::{Error, Result};

fn header(n: usize) -> String {
    let mut cols = vec!["k".to_string()];
    cols.extend((0..NUM_OUTPUTS * n).map(|i| format!("zn_{i}")));
    cols.extend((0..n).map(|i| format!("zc_{i}")));
    cols.extend((0..NUM_OUTPUTS).map(|i| format!("eps_{i}")));
    cols.join(",")
}

/// CSV text for a sample set; floats use shortest round-trip formatting.
pub fn dataset_to_csv(samples: &[ResidualSample]) -> Result<String> {
    let n = samples.first().map_or(0, |s| s.window.len());
    if n == 0 {
        return Err(Error::InsufficientData("no samples to write".into()));
    }
    let mut out = header(n);
    out.push('\n');
    for s in samples {
        if s.window.len() != n {
            return Err(Error::Dimension("samples have mixed window lengths".into()));
        }
        write!(out, "{}", s.k).unwrap();
        for v in s.window.zn.iter().chain(&s.window.zc).chain(&s.eps) {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn dataset_from_csv(text: &str) -> Result<Vec<ResidualSample>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().ok_or_else(|| Error::Parse("dataset is empty".into()))?;
    let cols = head.split(',').count();
    // k + 4N + N + 4 columns
    if cols < 1 + 5 + NUM_OUTPUTS || (cols - 1 - NUM_OUTPUTS) % 5 != 0 {
        return Err(Error::Parse(format!("dataset header has {cols} columns")));
    }
    let n = (cols - 1 - NUM_OUTPUTS) / 5;
    if head.trim() != header(n) {
        return Err(Error::Parse("unexpected dataset header".into()));
    }
    let mut samples = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::Parse(format!("row {} has {} fields, expected {cols}", line_no + 2, fields.len())));
        }
        let k = fields[0].trim().parse::<usize>().map_err(|e| Error::Parse(format!("row {}: {e}", line_no + 2)))?;
        let vals = fields[1..]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("row {}: {e}", line_no + 2)))?;
        let (zn, rest) = vals.split_at(NUM_OUTPUTS * n);
        let (zc, eps) = rest.split_at(n);
        let eps: [f64; NUM_OUTPUTS] = eps.try_into().expect("column count checked");
        if eps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset label"));
        }
        samples.push(ResidualSample { k, window: FeatureWindow::new(zn.to_vec(), zc.to_vec())?, eps });
    }
    Ok(samples)
}

pub fn write_dataset(path: &Path, samples: &[ResidualSample]) -> Result<()> {
    std::fs::write(path, dataset_to_csv(samples)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<ResidualSample>> {
    dataset_from_csv(&std::fs::read_to_string(path)?)
}

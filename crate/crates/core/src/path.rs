//! Synthetic reference paths built from straight and circular segments.
//!
//! Paths are written compactly as whitespace-separated tokens: `S<len>` for a
//! straight of `len` metres, `L<radius>:<deg>` / `R<radius>:<deg>` for a left
//! or right arc. For example `S40 L25:90 S30 R20:180 S40`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Finest accepted sampling interval is unconstrained; this is the coarsest.
pub const MAX_DS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Turn {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Straight { length: f64 },
    /// `angle` in radians, always positive; `direction` picks the side.
    Arc { radius: f64, angle: f64, direction: Turn },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::Arc { radius, angle, .. } => radius * angle,
        }
    }

    /// Signed curvature, left turns positive.
    pub fn curvature(&self) -> f64 {
        match *self {
            Segment::Straight { .. } => 0.0,
            Segment::Arc { radius, direction: Turn::Left, .. } => 1.0 / radius,
            Segment::Arc { radius, direction: Turn::Right, .. } => -1.0 / radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSpec {
    pub segments: Vec<Segment>,
}

impl PathSpec {
    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }
}

impl FromStr for PathSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str, tok: &str| -> Result<f64> {
            t.parse::<f64>()
                .map_err(|_| Error::Path(format!("bad number in segment `{tok}`")))
        };
        let mut segments = Vec::new();
        for tok in s.split_whitespace() {
            let (kind, rest) = tok.split_at(1);
            let seg = match kind {
                "S" | "s" => Segment::Straight { length: num(rest, tok)? },
                "L" | "l" | "R" | "r" => {
                    let (rad, deg) = rest
                        .split_once(':')
                        .ok_or_else(|| Error::Path(format!("arc `{tok}` needs <radius>:<degrees>")))?;
                    Segment::Arc {
                        radius: num(rad, tok)?,
                        angle: num(deg, tok)?.to_radians(),
                        direction: if kind.eq_ignore_ascii_case("L") { Turn::Left } else { Turn::Right },
                    }
                }
                _ => return Err(Error::Path(format!("unknown segment `{tok}`"))),
            };
            segments.push(seg);
        }
        if segments.is_empty() {
            return Err(Error::Path("empty path".into()));
        }
        Ok(Self { segments })
    }
}

impl fmt::Display for PathSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.segments.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match *seg {
                Segment::Straight { length } => write!(f, "S{length}")?,
                Segment::Arc { radius, angle, direction } => {
                    let c = if direction == Turn::Left { 'L' } else { 'R' };
                    write!(f, "{c}{radius}:{}", angle.to_degrees())?
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    /// Curvature of the interval starting at this point.
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub points: Vec<ReferencePoint>,
}

impl ReferencePath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.s)
    }

    /// Index of the interval containing arc length `s` (clamped to the path).
    pub fn interval_at(&self, s: f64) -> usize {
        let n = self.points.len();
        if n < 2 {
            return 0;
        }
        let idx = self.points.partition_point(|p| p.s <= s);
        idx.saturating_sub(1).min(n - 2)
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        self.points[self.interval_at(s)].kappa
    }

    /// Desired yaw rate at arc length `s` when driving at `vx`.
    pub fn psi_dot_des(&self, s: f64, vx: f64) -> f64 {
        vx * self.curvature_at(s)
    }
}

/// Sample `spec` at spacing at most `ds`, starting at the origin heading +X.
///
/// Segment joints always land on samples so that each interval has a single
/// exact curvature.
pub fn generate_path(spec: &PathSpec, ds: f64, kappa_max: f64) -> Result<ReferencePath> {
    if !(ds > 0.0 && ds <= MAX_DS) {
        return Err(Error::Path(format!("sampling interval must be in (0, {MAX_DS}], got {ds}")));
    }
    if spec.segments.is_empty() {
        return Err(Error::Path("empty path".into()));
    }
    let mut points = vec![ReferencePoint { s: 0.0, x: 0.0, y: 0.0, psi: 0.0, kappa: 0.0 }];
    for seg in &spec.segments {
        match *seg {
            Segment::Straight { length } if !(length > 0.0 && length.is_finite()) => {
                return Err(Error::Path(format!("straight length must be positive, got {length}")));
            }
            Segment::Arc { radius, angle, .. } => {
                if !(radius.is_finite() && radius > 0.0 && 1.0 / radius <= kappa_max) {
                    return Err(Error::Path(format!(
                        "arc radius {radius} m is below the minimum {} m",
                        1.0 / kappa_max
                    )));
                }
                if !(angle > 0.0 && angle.is_finite()) {
                    return Err(Error::Path(format!("arc angle must be positive, got {angle}")));
                }
            }
            _ => {}
        }
        let kappa = seg.curvature();
        let length = seg.length();
        let n = (length / ds).ceil().max(1.0) as usize;
        let start = *points.last().expect("path starts with a point");
        points.last_mut().expect("nonempty").kappa = kappa;
        for i in 1..=n {
            let t = length * i as f64 / n as f64;
            let psi = start.psi + kappa * t;
            let (x, y) = if kappa == 0.0 {
                (start.x + t * start.psi.cos(), start.y + t * start.psi.sin())
            } else {
                (
                    start.x + (psi.sin() - start.psi.sin()) / kappa,
                    start.y - (psi.cos() - start.psi.cos()) / kappa,
                )
            };
            points.push(ReferencePoint { s: start.s + t, x, y, psi, kappa });
        }
    }

    for w in points.windows(2) {
        let h = w[1].s - w[0].s;
        if !(h > 0.0) {
            return Err(Error::Path("arc length must be strictly increasing".into()));
        }
        if (w[1].psi - w[0].psi - w[0].kappa * h).abs() > 1e-9 {
            return Err(Error::Path(format!("discontinuous tangent at s = {:.3}", w[0].s)));
        }
    }
    Ok(ReferencePath { points })
}

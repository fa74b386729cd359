use super::{wrap_angle, ErrorState, PlantState};
use crate::error::{Error, Result};
use crate::path::ReferencePath;

/// Arc length searched on either side of the hint index.
const SEARCH_HALF_WINDOW: f64 = 30.0;

/// Result of projecting the vehicle onto the reference path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub error: ErrorState,
    /// Start index of the path interval holding the foot point.
    pub index: usize,
    /// Arc length of the foot point.
    pub s: f64,
    pub kappa: f64,
}

/// Foot point on the constant-curvature interval starting at `i`:
/// returns `(ds along the interval, signed lateral offset)`.
fn local_projection(path: &ReferencePath, i: usize, px: f64, py: f64) -> (f64, f64) {
    let p = &path.points[i];
    let (sin_p, cos_p) = p.psi.sin_cos();
    let (dx, dy) = (px - p.x, py - p.y);
    let along = dx * cos_p + dy * sin_p;
    let lat = -dx * sin_p + dy * cos_p;
    let k = p.kappa;
    if k == 0.0 {
        return (along, lat);
    }
    let radius = 1.0 / k;
    let (a, b) = (along, lat - radius);
    let dist = a.hypot(b);
    let phi = (k * a).atan2(-k * b);
    (phi / k, radius - radius.signum() * dist)
}

/// Tracking errors of `plant` relative to `path`.
///
/// `hint` restricts the nearest-point search to a window around a previous
/// index. Fails when the vehicle is outside `corridor` or when the path passes
/// within the corridor twice (self-intersection inside the search window).
pub fn error_state(
    plant: &PlantState,
    path: &ReferencePath,
    corridor: f64,
    hint: Option<usize>,
) -> Result<Projection> {
    let n = path.len();
    if n < 2 {
        return Err(Error::Path("reference path needs at least two points".into()));
    }
    let (lo, hi) = match hint {
        Some(h) => {
            let h = h.min(n - 1);
            let s0 = path.points[h].s;
            let lo = path.points.partition_point(|p| p.s < s0 - SEARCH_HALF_WINDOW);
            let hi = path.points.partition_point(|p| p.s <= s0 + SEARCH_HALF_WINDOW);
            (lo, hi.max(lo + 1).min(n))
        }
        None => (0, n),
    };

    let mut nearest = lo;
    let mut best = f64::INFINITY;
    let corridor_sq = corridor * corridor;
    let mut last_inside: Option<usize> = None;
    let mut ambiguous = false;
    for (i, p) in path.points[lo..hi].iter().enumerate() {
        let i = i + lo;
        let d = (plant.x - p.x).powi(2) + (plant.y - p.y).powi(2);
        if d < best {
            best = d;
            nearest = i;
        }
        if d < corridor_sq {
            if let Some(prev) = last_inside {
                if i > prev + 1 {
                    ambiguous = true;
                }
            }
            last_inside = Some(i);
        }
    }
    if ambiguous {
        return Err(Error::AmbiguousProjection(path.points[nearest].s));
    }

    let mut chosen: Option<(usize, f64, f64)> = None;
    let candidates = [nearest.checked_sub(1), (nearest + 1 < n).then_some(nearest)];
    for i in candidates.into_iter().flatten() {
        let (ds, e1) = local_projection(path, i, plant.x, plant.y);
        let h = path.points[i + 1].s - path.points[i].s;
        let tol = 1e-9 * h.max(1.0);
        if ds >= -tol && ds <= h + tol && chosen.is_none_or(|(_, _, e)| e1.abs() < e.abs()) {
            chosen = Some((i, ds, e1));
        }
    }
    let (index, ds, e1) = chosen.unwrap_or_else(|| {
        // Before the start or past the end: extrapolate the end interval.
        let i = nearest.min(n - 2);
        let (ds, e1) = local_projection(path, i, plant.x, plant.y);
        (i, ds, e1)
    });

    if !(e1.abs() < corridor) {
        return Err(Error::CorridorExit { offset: e1.abs(), corridor });
    }

    let p = &path.points[index];
    let psi_des = p.psi + p.kappa * ds;
    let e2 = wrap_angle(plant.psi - psi_des);
    let error = ErrorState {
        e1,
        e1_dot: plant.vy + plant.vx * e2,
        e2,
        e2_dot: plant.r - plant.vx * p.kappa,
    };
    Ok(Projection { error, index, s: p.s + ds, kappa: p.kappa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::generate_path;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn on_path_state(path: &ReferencePath, i: usize, vx: f64) -> PlantState {
        let p = path.points[i];
        PlantState { x: p.x, y: p.y, psi: p.psi, vy: 0.0, r: vx * p.kappa, vx, steer: 0.0 }
    }

    #[test]
    fn aligned_on_straight_is_zero() {
        let path = generate_path(&"S50".parse().unwrap(), 0.1, 0.2).unwrap();
        let proj = error_state(&on_path_state(&path, 123, 10.0), &path, 2.0, None).unwrap();
        assert_eq!(proj.error, ErrorState::default());
    }

    #[test]
    fn pure_left_offset() {
        let path = generate_path(&"S50".parse().unwrap(), 0.1, 0.2).unwrap();
        let mut s = on_path_state(&path, 200, 10.0);
        s.y += 0.5;
        s.x += 0.037;
        let proj = error_state(&s, &path, 2.0, Some(190)).unwrap();
        assert!((proj.error.e1 - 0.5).abs() < 1e-12);
        assert_eq!((proj.error.e1_dot, proj.error.e2, proj.error.e2_dot), (0.0, 0.0, 0.0));
        assert!((proj.s - 20.037).abs() < 1e-9);
    }

    #[test]
    fn on_arc_between_samples_is_near_zero() {
        let path = generate_path(&"S5 L20:120 R15:90 S5".parse().unwrap(), 0.1, 0.2).unwrap();
        let vx = 10.0;
        for i in 1..path.len() - 1 {
            // exact point half-way along the interval
            let p = path.points[i];
            let h = path.points[i + 1].s - p.s;
            let t = 0.5 * h;
            let psi = p.psi + p.kappa * t;
            let (x, y) = if p.kappa == 0.0 {
                (p.x + t * p.psi.cos(), p.y + t * p.psi.sin())
            } else {
                (p.x + (psi.sin() - p.psi.sin()) / p.kappa, p.y - (psi.cos() - p.psi.cos()) / p.kappa)
            };
            let s = PlantState { x, y, psi, vy: 0.0, r: vx * p.kappa, vx, steer: 0.0 };
            let e = error_state(&s, &path, 2.0, Some(i)).unwrap().error;
            for v in e.as_array() {
                assert!(v.abs() <= 1e-6, "index {i}: {e:?}");
            }
        }
    }

    #[test]
    fn matches_dense_resampling_oracle_on_arc() {
        let path = generate_path(&"L25:180".parse().unwrap(), 0.1, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let s0 = rng.gen_range(5.0..70.0);
            let i = path.interval_at(s0);
            let p = path.points[i];
            let off = rng.gen_range(-1.5..1.5);
            let x = p.x - off * p.psi.sin() + rng.gen_range(-0.05..0.05);
            let y = p.y + off * p.psi.cos() + rng.gen_range(-0.05..0.05);
            let st = PlantState { x, y, psi: p.psi + rng.gen_range(-0.1..0.1), vy: 0.0, r: 0.0, vx: 10.0, steer: 0.0 };
            let got = error_state(&st, &path, 2.0, None).unwrap().error.e1;

            // brute force: resample the circle at 1 mm and take the closest point
            let radius = 25.0;
            let mut best = f64::INFINITY;
            let mut k = 0.0;
            while k <= radius * std::f64::consts::PI {
                let th = k / radius;
                let (cx, cy) = (radius * th.sin(), radius * (1.0 - th.cos()));
                best = best.min((x - cx).hypot(y - cy));
                k += 0.001;
            }
            let inside = x.hypot(y - radius) < radius;
            let oracle = if inside { best } else { -best };
            assert!((got - oracle).abs() <= 1e-3, "{got} vs {oracle}");
        }
    }

    #[test]
    fn corridor_exit_reported() {
        let path = generate_path(&"S50".parse().unwrap(), 0.1, 0.2).unwrap();
        let mut s = on_path_state(&path, 100, 10.0);
        s.y = -2.5;
        assert!(matches!(error_state(&s, &path, 2.0, None), Err(Error::CorridorExit { .. })));
    }

    #[test]
    fn self_intersection_is_ambiguous() {
        // A tight U-turn brings the return leg within the corridor of the outbound leg.
        let path = generate_path(&"S30 L1.5:180 S30".parse().unwrap(), 0.1, 1.0).unwrap();
        let st = PlantState { x: 15.0, y: 1.5, psi: 0.0, vy: 0.0, r: 0.0, vx: 10.0, steer: 0.0 };
        assert!(matches!(error_state(&st, &path, 2.0, None), Err(Error::AmbiguousProjection(_))));
    }

    #[test]
    fn heading_error_wraps() {
        let path = generate_path(&"S50".parse().unwrap(), 0.1, 0.2).unwrap();
        let mut s = on_path_state(&path, 100, 10.0);
        s.psi = 2.0 * std::f64::consts::PI + 0.1;
        let e = error_state(&s, &path, 2.0, None).unwrap().error;
        assert!((e.e2 - 0.1).abs() < 1e-12);
        assert!((e.e1_dot - 10.0 * e.e2).abs() < 1e-12);
    }
}

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix5, RowVector5, Vector5};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rfl_mpc::dynamics::LtvMatrices;

/// Random increment-augmented model with a stable-ish error block.
pub fn random_ltv(rng: &mut ChaCha8Rng) -> LtvMatrices {
    let mut ad = Matrix5::from_fn(|_, _| rng.gen_range(-0.3..0.3));
    for i in 0..4 {
        ad[(i, i)] += 0.6;
    }
    ad.fixed_view_mut::<1, 5>(4, 0).copy_from(&RowVector5::new(0.0, 0.0, 0.0, 0.0, 1.0));
    let mut bd = Vector5::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    bd[4] = 1.0;
    let mut dd = Vector5::from_fn(|_, _| rng.gen_range(-0.1..0.1));
    dd[4] = 0.0;
    LtvMatrices { ad, bd, dd }
}

pub fn random_vec5(rng: &mut ChaCha8Rng, scale: f64) -> Vector5<f64> {
    Vector5::from_fn(|_, _| rng.gen_range(-scale..scale))
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
    (&h + h.transpose()) * 0.5
}

pub fn random_thetas(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<DMatrix<f64>> {
    (0..n).map(|_| DMatrix::from_fn(n + 1, 4, |_, _| rng.gen_range(-scale..scale))).collect()
}

/// Increments seen by horizon row `j` (0-based): `past` for steps before `k`,
/// the expanded plan from `k` on.
pub fn row_window(j: usize, n: usize, past: &[f64], plan: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let step = j as isize + 1 - n as isize + m as isize;
            if step < 0 {
                past[(n as isize - 1 + step) as usize]
            } else {
                plan[step as usize]
            }
        })
        .collect()
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
